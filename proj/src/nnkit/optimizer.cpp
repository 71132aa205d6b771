// SPDX-License-Identifier: Apache-2.0
#include "optimizer.hpp"

#include <cmath>

namespace wmmon::nnkit {

void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(double(state.beta1), double(state.step));
    const double bc2 = 1.0 - std::pow(double(state.beta2), double(state.step));
    for (auto& [name, p] : params.tensors) {
        const Tensor& g = grads.at(name);
        if (!g.same_shape(p)) throw_invalid("adam_step: gradient shape mismatch for '" + name + "'");
        auto mit = state.m.find(name);
        if (mit == state.m.end()) {
            mit = state.m.emplace(name, Tensor::zeros(p.shape)).first;
            state.v.emplace(name, Tensor::zeros(p.shape));
        }
        Tensor& m = mit->second;
        Tensor& v = state.v.at(name);
        for (size_t i = 0; i < p.data.size(); ++i) {
            m.data[i] = state.beta1 * m.data[i] + (1.0f - state.beta1) * g.data[i];
            v.data[i] = state.beta2 * v.data[i] + (1.0f - state.beta2) * g.data[i] * g.data[i];
            const double mh = double(m.data[i]) / bc1;
            const double vh = double(v.data[i]) / bc2;
            p.data[i] -= float(double(state.lr) * mh / (std::sqrt(vh) + double(state.eps)));
        }
    }
}

} // namespace wmmon::nnkit
