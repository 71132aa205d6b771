// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tensor.hpp"

namespace wmmon::nnkit {

// Bias-corrected adaptive-moment optimizer state.
struct AdamState {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    int64_t step = 0;
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
};

void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state);

} // namespace wmmon::nnkit
