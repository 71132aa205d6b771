// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "../common.hpp"
#include "rng.hpp"

namespace wmmon::nnkit {

inline int64_t numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

// Dense row-major f32 tensor.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
        if (int64_t(data.size()) != numel(shape)) throw_invalid("tensor data size does not match shape");
    }

    static Tensor zeros(std::vector<int> s) {
        Tensor t;
        t.shape = std::move(s);
        t.data.assign(size_t(numel(t.shape)), 0.0f);
        return t;
    }

    static Tensor full(std::vector<int> s, float v) {
        Tensor t = zeros(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor scalar(float v) { return Tensor({1}, {v}); }

    static Tensor randn(std::vector<int> s, Rng& rng, float scale = 1.0f) {
        Tensor t = zeros(std::move(s));
        for (float& x : t.data) x = float(rng.normal()) * scale;
        return t;
    }

    int64_t size() const { return int64_t(data.size()); }

    int dim(int i) const { return shape[size_t(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (float x : data)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

// Named parameter collection. std::map gives deterministic (lexicographic)
// iteration order, which optimizer traversal and checkpoints rely on.
struct ParamSet {
    std::map<std::string, Tensor> tensors;

    bool contains(const std::string& name) const { return tensors.count(name) != 0; }

    Tensor& at(const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw_invalid("no parameter named '" + name + "'");
        return it->second;
    }

    const Tensor& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw_invalid("no parameter named '" + name + "'");
        return it->second;
    }

    void add(const std::string& name, Tensor t) {
        if (contains(name)) throw_invalid("duplicate parameter name '" + name + "'");
        tensors.emplace(name, std::move(t));
    }

    int64_t total_elements() const {
        int64_t n = 0;
        for (const auto& [_, t] : tensors) n += t.size();
        return n;
    }

    // FNV-1a over the raw little-endian bytes of every tensor, in name order.
    uint64_t checksum() const;
};

} // namespace wmmon::nnkit
