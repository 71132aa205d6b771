// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "tensor.hpp"

namespace wmmon::nnkit {

// Scalar objective over a ParamSet. When grads_out is non-null the callee must
// also produce the reverse-mode gradient for every parameter.
using Objective = std::function<double(const ParamSet& params, ParamSet* grads_out)>;

struct GradCheckReport {
    double max_rel_err = 0.0;
    int compared = 0;
};

// Central-difference check of the reverse-mode gradient. Compares up to
// max_elements per run (all elements when the set is small, otherwise a
// seeded subsample of at least that many), and returns
// max |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
GradCheckReport grad_check(const Objective& fn, const ParamSet& at, double eps,
                           int max_elements = 200, uint64_t seed = 0);

} // namespace wmmon::nnkit
