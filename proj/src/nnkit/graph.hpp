// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <functional>
#include <limits>
#include <vector>

#include "tensor.hpp"

namespace wmmon::nnkit {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Nodes are appended in evaluation order, so reverse
// creation order is a topological order and backward() is a single sweep.
class Graph {
public:
    // Leaf that never receives a gradient (data, masks, noise).
    Var input(Tensor value);
    // Leaf that accumulates a gradient during backward().
    Var param(Tensor value);

    Var op(Tensor value, std::initializer_list<Var> parents,
           std::function<void(Graph&, int)> backward_fn);

    const Tensor& value(Var v) const { return nodes_[size_t(v.id)].val; }
    Tensor& mutable_value(Var v) { return nodes_[size_t(v.id)].val; }

    // Gradient of the most recent backward() w.r.t. v (zeros if untouched).
    const Tensor& grad(Var v);
    Tensor& grad_buffer(int id);

    // Scalar value of a single-element node. Reduction ops stash a
    // double-precision accumulator which this prefers over the f32 payload;
    // finite-difference checks need that extra headroom.
    double scalar(Var v) const;
    void set_scalar_acc(Var v, double acc) { nodes_[size_t(v.id)].scalar_acc = acc; }

    bool needs_grad(Var v) const { return nodes_[size_t(v.id)].needs_grad; }

    void backward(Var root);

    size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        Tensor val;
        Tensor grad;
        bool needs_grad = false;
        bool grad_alloc = false;
        std::array<int, 4> parents{-1, -1, -1, -1};
        std::function<void(Graph&, int)> backward_fn;
        double scalar_acc = std::numeric_limits<double>::quiet_NaN();
    };
    std::vector<Node> nodes_;

    friend struct OpAccess;
    Node& node(int id) { return nodes_[size_t(id)]; }
};

// ---- differentiable op set ----
// Binary elementwise ops broadcast the second operand when its shape is a
// suffix of the first's (or a single element).

Var matmul(Graph& g, Var a, Var b); // [n,k] x [k,m] -> [n,m]
Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, float s);

Var vexp(Graph& g, Var a);
Var vlog(Graph& g, Var a);
Var vtanh(Graph& g, Var a);
Var softplus(Graph& g, Var a);
Var square(Graph& g, Var a);
Var clamp01(Graph& g, Var a); // pass-through gradient inside [0,1]

Var sum_all(Graph& g, Var a);  // -> [1]
Var mean_all(Graph& g, Var a); // -> [1]
Var mean_axis(Graph& g, Var a, int axis);

Var reshape(Graph& g, Var a, std::vector<int> shape);
Var slice(Graph& g, Var a, int axis, int start, int len);
Var concat(Graph& g, const std::vector<Var>& parts, int axis);

Var softmax_lastdim(Graph& g, Var a);
Var layernorm_lastdim(Graph& g, Var a, float eps = 1e-5f);

// Multi-head scaled-dot-product attention with a causal mask.
// q, k, v: [B, T, D]; D divisible by n_heads.
Var sdpa_causal(Graph& g, Var q, Var k, Var v, int n_heads);

// z = mu + sigma (.) eps with eps held constant; gradients flow to mu, sigma.
Var reparam_sample(Graph& g, Var mu, Var sigma, const Tensor& eps);

// Mean of squared differences over all elements -> [1].
Var mse(Graph& g, Var a, Var b);

} // namespace wmmon::nnkit
