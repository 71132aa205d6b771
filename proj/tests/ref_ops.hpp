// SPDX-License-Identifier: Apache-2.0
// Double-precision reference implementations used as independent oracles for
// the f32 autodiff kernel. Deliberately written as plain loops with no code
// shared with src/nnkit.
#pragma once

#include <cmath>
#include <functional>
#include <vector>

namespace refops {

struct DTensor {
    std::vector<int> shape;
    std::vector<double> data;

    static DTensor zeros(std::vector<int> s) {
        DTensor t;
        t.shape = std::move(s);
        size_t n = 1;
        for (int d : t.shape) n *= size_t(d);
        t.data.assign(n, 0.0);
        return t;
    }
};

inline DTensor matmul(const DTensor& a, const DTensor& b) {
    const int n = a.shape[0], k = a.shape[1], m = b.shape[1];
    DTensor c = DTensor::zeros({n, m});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
            double acc = 0.0;
            for (int l = 0; l < k; ++l) acc += a.data[size_t(i * k + l)] * b.data[size_t(l * m + j)];
            c.data[size_t(i * m + j)] = acc;
        }
    return c;
}

inline DTensor broadcast_binop(const DTensor& a, const DTensor& b,
                               const std::function<double(double, double)>& f) {
    DTensor out = a;
    for (size_t i = 0; i < a.data.size(); ++i)
        out.data[i] = f(a.data[i], b.data[i % b.data.size()]);
    return out;
}

inline DTensor unary(const DTensor& a, const std::function<double(double)>& f) {
    DTensor out = a;
    for (double& x : out.data) x = f(x);
    return out;
}

inline DTensor softmax_last(const DTensor& a) {
    const int last = a.shape.back();
    const int rows = int(a.data.size()) / last;
    DTensor out = a;
    for (int r = 0; r < rows; ++r) {
        double mx = out.data[size_t(r * last)];
        for (int i = 1; i < last; ++i) mx = std::max(mx, out.data[size_t(r * last + i)]);
        double sum = 0.0;
        for (int i = 0; i < last; ++i) {
            out.data[size_t(r * last + i)] = std::exp(out.data[size_t(r * last + i)] - mx);
            sum += out.data[size_t(r * last + i)];
        }
        for (int i = 0; i < last; ++i) out.data[size_t(r * last + i)] /= sum;
    }
    return out;
}

inline DTensor layernorm_last(const DTensor& a, double eps = 1e-5) {
    const int last = a.shape.back();
    const int rows = int(a.data.size()) / last;
    DTensor out = a;
    for (int r = 0; r < rows; ++r) {
        double m = 0.0;
        for (int i = 0; i < last; ++i) m += a.data[size_t(r * last + i)];
        m /= last;
        double v = 0.0;
        for (int i = 0; i < last; ++i) {
            const double d = a.data[size_t(r * last + i)] - m;
            v += d * d;
        }
        v /= last;
        const double is = 1.0 / std::sqrt(v + eps);
        for (int i = 0; i < last; ++i) out.data[size_t(r * last + i)] = (a.data[size_t(r * last + i)] - m) * is;
    }
    return out;
}

inline DTensor mean_axis(const DTensor& a, int axis) {
    int outer = 1, inner = 1;
    const int an = a.shape[size_t(axis)];
    for (int i = 0; i < axis; ++i) outer *= a.shape[size_t(i)];
    for (int i = axis + 1; i < int(a.shape.size()); ++i) inner *= a.shape[size_t(i)];
    std::vector<int> shape;
    for (int i = 0; i < int(a.shape.size()); ++i)
        if (i != axis) shape.push_back(a.shape[size_t(i)]);
    if (shape.empty()) shape.push_back(1);
    DTensor out = DTensor::zeros(shape);
    for (int o = 0; o < outer; ++o)
        for (int in = 0; in < inner; ++in) {
            double acc = 0.0;
            for (int x = 0; x < an; ++x) acc += a.data[size_t((o * an + x) * inner + in)];
            out.data[size_t(o * inner + in)] = acc / an;
        }
    return out;
}

// Multi-head causal attention, straight from the definition.
inline DTensor sdpa_causal(const DTensor& q, const DTensor& k, const DTensor& v, int heads) {
    const int B = q.shape[0], T = q.shape[1], D = q.shape[2];
    const int hd = D / heads;
    DTensor out = DTensor::zeros({B, T, D});
    for (int b = 0; b < B; ++b)
        for (int h = 0; h < heads; ++h)
            for (int i = 0; i < T; ++i) {
                std::vector<double> scores(size_t(i) + 1);
                for (int j = 0; j <= i; ++j) {
                    double s = 0.0;
                    for (int d = 0; d < hd; ++d)
                        s += q.data[size_t((b * T + i) * D + h * hd + d)] *
                             k.data[size_t((b * T + j) * D + h * hd + d)];
                    scores[size_t(j)] = s / std::sqrt(double(hd));
                }
                double mx = scores[0];
                for (double s : scores) mx = std::max(mx, s);
                double sum = 0.0;
                for (double& s : scores) {
                    s = std::exp(s - mx);
                    sum += s;
                }
                for (double& s : scores) s /= sum;
                for (int j = 0; j <= i; ++j)
                    for (int d = 0; d < hd; ++d)
                        out.data[size_t((b * T + i) * D + h * hd + d)] +=
                            scores[size_t(j)] * v.data[size_t((b * T + j) * D + h * hd + d)];
            }
    return out;
}

// Central finite difference of a scalar functional of several inputs.
inline double fd_grad(const std::function<double(const std::vector<DTensor>&)>& f,
                      std::vector<DTensor> inputs, size_t which, size_t idx,
                      double eps = 1e-6) {
    inputs[which].data[idx] += eps;
    const double fp = f(inputs);
    inputs[which].data[idx] -= 2 * eps;
    const double fm = f(inputs);
    return (fp - fm) / (2 * eps);
}

} // namespace refops
