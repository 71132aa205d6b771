// SPDX-License-Identifier: Apache-2.0
#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "rng.hpp"

namespace wmmon::nnkit {

GradCheckReport grad_check(const Objective& fn, const ParamSet& at, double eps,
                           int max_elements, uint64_t seed) {
    if (eps < 1e-5 || eps > 1e-2) throw_invalid("grad_check: eps outside [1e-5, 1e-2]");

    ParamSet grads;
    const double f0 = fn(at, &grads);
    if (!std::isfinite(f0)) throw_numeric("grad_check: objective is non-finite");
    for (const auto& [name, g] : grads.tensors)
        if (!g.all_finite()) throw_numeric("grad_check: non-finite gradient in '" + name + "'");

    // enumerate (tensor, element) coordinates
    std::vector<std::pair<const std::string*, int64_t>> coords;
    for (const auto& [name, t] : at.tensors)
        for (int64_t i = 0; i < t.size(); ++i) coords.emplace_back(&name, i);

    Rng rng(mix_seed(seed, 0xabcdefULL));
    if (int64_t(coords.size()) > max_elements) {
        rng.shuffle(coords);
        coords.resize(size_t(max_elements));
    }

    GradCheckReport report;
    ParamSet work = at;
    for (const auto& [namep, idx] : coords) {
        const std::string& name = *namep;
        float& slot = work.at(name).data[size_t(idx)];
        const float orig = slot;

        slot = float(double(orig) + eps);
        const double actual_plus = double(slot);
        const double f_plus = fn(work, nullptr);
        slot = float(double(orig) - eps);
        const double actual_minus = double(slot);
        const double f_minus = fn(work, nullptr);
        slot = orig;

        if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
            throw_numeric("grad_check: perturbed objective is non-finite");

        const double g_fd = (f_plus - f_minus) / (actual_plus - actual_minus);
        const double g_ad = double(grads.at(name).data[size_t(idx)]);
        const double rel = std::abs(g_ad - g_fd) / std::max(1e-8, std::abs(g_ad) + std::abs(g_fd));
        report.max_rel_err = std::max(report.max_rel_err, rel);
        report.compared += 1;
    }
    return report;
}

} // namespace wmmon::nnkit
