// SPDX-License-Identifier: Apache-2.0
#include "graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

namespace wmmon::nnkit {

uint64_t ParamSet::checksum() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* p, size_t n) {
        const unsigned char* b = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& [name, t] : tensors) {
        feed(name.data(), name.size());
        feed(t.data.data(), t.data.size() * sizeof(float));
    }
    return h;
}

Var Graph::input(Tensor value) {
    Node n;
    n.val = std::move(value);
    n.needs_grad = false;
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
}

Var Graph::param(Tensor value) {
    Node n;
    n.val = std::move(value);
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
}

Var Graph::op(Tensor value, std::initializer_list<Var> parents,
              std::function<void(Graph&, int)> backward_fn) {
    Node n;
    n.val = std::move(value);
    int i = 0;
    for (Var p : parents) {
        if (i >= 4) throw_invalid("op supports at most 4 parents");
        n.parents[size_t(i++)] = p.id;
        if (p.valid() && nodes_[size_t(p.id)].needs_grad) n.needs_grad = true;
    }
    if (n.needs_grad) n.backward_fn = std::move(backward_fn);
    nodes_.push_back(std::move(n));
    return Var{int(nodes_.size()) - 1};
}

Tensor& Graph::grad_buffer(int id) {
    Node& n = nodes_[size_t(id)];
    if (!n.grad_alloc) {
        n.grad = Tensor::zeros(n.val.shape);
        n.grad_alloc = true;
    }
    return n.grad;
}

const Tensor& Graph::grad(Var v) { return grad_buffer(v.id); }

double Graph::scalar(Var v) const {
    const Node& n = nodes_[size_t(v.id)];
    if (n.val.size() != 1) throw_invalid("scalar() requires a single-element tensor");
    if (!std::isnan(n.scalar_acc)) return n.scalar_acc;
    return double(n.val.data[0]);
}

void Graph::backward(Var root) {
    if (value(root).size() != 1) throw_invalid("backward() requires a scalar root");
    grad_buffer(root.id).data[0] = 1.0f;
    for (int id = root.id; id >= 0; --id) {
        Node& n = nodes_[size_t(id)];
        if (!n.backward_fn || !n.grad_alloc) continue;
        n.backward_fn(*this, id);
    }
}

namespace {

// Broadcast contract for binary elementwise ops: shapes equal, or the second
// operand's shape is a suffix of the first's, or the second is one element.
void check_broadcast(const Tensor& a, const Tensor& b) {
    if (a.shape == b.shape) return;
    if (b.size() == 1) return;
    if (b.shape.size() <= a.shape.size()) {
        size_t off = a.shape.size() - b.shape.size();
        bool suffix = true;
        for (size_t i = 0; i < b.shape.size(); ++i)
            if (a.shape[off + i] != b.shape[i]) suffix = false;
        if (suffix) return;
    }
    throw_invalid("elementwise op: shape mismatch and not suffix-broadcastable");
}

struct Parents {
    int a, b;
};

Parents parents_of(Graph& g, int id);

} // namespace

struct OpAccess {
    static std::array<int, 4> parents(Graph& g, int id) { return g.node(id).parents; }
    static const Tensor& val(Graph& g, int id) { return g.node(id).val; }
    static const Tensor& grad_of(Graph& g, int id) { return g.grad_buffer(id); }
};

namespace {

Parents parents_of(Graph& g, int id) {
    auto p = OpAccess::parents(g, id);
    return Parents{p[0], p[1]};
}

const Tensor& val_of(Graph& g, int id) { return OpAccess::val(g, id); }

} // namespace

Var add(Graph& g, Var a, Var b) {
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    check_broadcast(ta, tb);
    Tensor out = ta;
    const size_t bn = tb.data.size();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i % bn];
    return g.op(std::move(out), {a, b}, [](Graph& gg, int id) {
        auto [pa, pb] = parents_of(gg, id);
        const Tensor& go = OpAccess::grad_of(gg, id);
        if (gg.needs_grad(Var{pa})) {
            Tensor& da = gg.grad_buffer(pa);
            for (size_t i = 0; i < go.data.size(); ++i) da.data[i] += go.data[i];
        }
        if (gg.needs_grad(Var{pb})) {
            Tensor& db = gg.grad_buffer(pb);
            const size_t bn = db.data.size();
            for (size_t i = 0; i < go.data.size(); ++i) db.data[i % bn] += go.data[i];
        }
    });
}

Var sub(Graph& g, Var a, Var b) {
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    check_broadcast(ta, tb);
    Tensor out = ta;
    const size_t bn = tb.data.size();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= tb.data[i % bn];
    return g.op(std::move(out), {a, b}, [](Graph& gg, int id) {
        auto [pa, pb] = parents_of(gg, id);
        const Tensor& go = OpAccess::grad_of(gg, id);
        if (gg.needs_grad(Var{pa})) {
            Tensor& da = gg.grad_buffer(pa);
            for (size_t i = 0; i < go.data.size(); ++i) da.data[i] += go.data[i];
        }
        if (gg.needs_grad(Var{pb})) {
            Tensor& db = gg.grad_buffer(pb);
            const size_t bn = db.data.size();
            for (size_t i = 0; i < go.data.size(); ++i) db.data[i % bn] -= go.data[i];
        }
    });
}

Var mul(Graph& g, Var a, Var b) {
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    check_broadcast(ta, tb);
    Tensor out = ta;
    const size_t bn = tb.data.size();
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i % bn];
    return g.op(std::move(out), {a, b}, [](Graph& gg, int id) {
        auto [pa, pb] = parents_of(gg, id);
        const Tensor& go = OpAccess::grad_of(gg, id);
        const Tensor& va = val_of(gg, pa);
        const Tensor& vb = val_of(gg, pb);
        const size_t bn = vb.data.size();
        if (gg.needs_grad(Var{pa})) {
            Tensor& da = gg.grad_buffer(pa);
            for (size_t i = 0; i < go.data.size(); ++i) da.data[i] += go.data[i] * vb.data[i % bn];
        }
        if (gg.needs_grad(Var{pb})) {
            Tensor& db = gg.grad_buffer(pb);
            for (size_t i = 0; i < go.data.size(); ++i) db.data[i % bn] += go.data[i] * va.data[i];
        }
    });
}

Var scale(Graph& g, Var a, float s) {
    Tensor out = g.value(a);
    for (float& x : out.data) x *= s;
    return g.op(std::move(out), {a}, [s](Graph& gg, int id) {
        auto [pa, pb] = parents_of(gg, id);
        (void)pb;
        if (!gg.needs_grad(Var{pa})) return;
        const Tensor& go = OpAccess::grad_of(gg, id);
        Tensor& da = gg.grad_buffer(pa);
        for (size_t i = 0; i < go.data.size(); ++i) da.data[i] += s * go.data[i];
    });
}

Var matmul(Graph& g, Var a, Var b) {
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    if (ta.shape.size() != 2 || tb.shape.size() != 2 || ta.shape[1] != tb.shape[0])
        throw_invalid("matmul expects [n,k] x [k,m]");
    const int n = ta.shape[0], k = ta.shape[1], m = tb.shape[1];
    Tensor out = Tensor::zeros({n, m});
    const float* A = ta.data.data();
    const float* B = tb.data.data();
    float* C = out.data.data();
    for (int i = 0; i < n; ++i) {
        const float* Ai = A + size_t(i) * k;
        float* Ci = C + size_t(i) * m;
        for (int l = 0; l < k; ++l) {
            const float av = Ai[l];
            const float* Bl = B + size_t(l) * m;
            for (int j = 0; j < m; ++j) Ci[j] += av * Bl[j];
        }
    }
    return g.op(std::move(out), {a, b}, [n, k, m](Graph& gg, int id) {
        auto [pa, pb] = parents_of(gg, id);
        const Tensor& go = OpAccess::grad_of(gg, id);
        const float* G = go.data.data();
        if (gg.needs_grad(Var{pa})) {
            const float* B = val_of(gg, pb).data.data();
            float* dA = gg.grad_buffer(pa).data.data();
            for (int i = 0; i < n; ++i) {
                const float* Gi = G + size_t(i) * m;
                float* dAi = dA + size_t(i) * k;
                for (int l = 0; l < k; ++l) {
                    const float* Bl = B + size_t(l) * m;
                    float acc = 0.0f;
                    for (int j = 0; j < m; ++j) acc += Gi[j] * Bl[j];
                    dAi[l] += acc;
                }
            }
        }
        if (gg.needs_grad(Var{pb})) {
            const float* A = val_of(gg, pa).data.data();
            float* dB = gg.grad_buffer(pb).data.data();
            for (int i = 0; i < n; ++i) {
                const float* Ai = A + size_t(i) * k;
                const float* Gi = G + size_t(i) * m;
                for (int l = 0; l < k; ++l) {
                    const float av = Ai[l];
                    float* dBl = dB + size_t(l) * m;
                    for (int j = 0; j < m; ++j) dBl[j] += av * Gi[j];
                }
            }
        }
    });
}

namespace {

template <typename Fwd, typename Bwd>
Var unary_op(Graph& g, Var a, Fwd fwd, Bwd bwd) {
    Tensor out = g.value(a);
    for (float& x : out.data) x = fwd(x);
    return g.op(std::move(out), {a}, [bwd](Graph& gg, int id) {
        auto [pa, pb] = parents_of(gg, id);
        (void)pb;
        if (!gg.needs_grad(Var{pa})) return;
        const Tensor& go = OpAccess::grad_of(gg, id);
        const Tensor& x = val_of(gg, pa);
        const Tensor& y = val_of(gg, id);
        Tensor& da = gg.grad_buffer(pa);
        for (size_t i = 0; i < go.data.size(); ++i)
            da.data[i] += go.data[i] * bwd(x.data[i], y.data[i]);
    });
}

} // namespace

Var vexp(Graph& g, Var a) {
    return unary_op(
        g, a, [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

Var vlog(Graph& g, Var a) {
    return unary_op(
        g, a, [](float x) { return std::log(x); }, [](float x, float) { return 1.0f / x; });
}

Var vtanh(Graph& g, Var a) {
    return unary_op(
        g, a, [](float x) { return std::tanh(x); },
        [](float, float y) { return 1.0f - y * y; });
}

Var softplus(Graph& g, Var a) {
    return unary_op(
        g, a,
        [](float x) {
            if (x > 20.0f) return x;
            if (x < -20.0f) return std::exp(x);
            return std::log1p(std::exp(x));
        },
        [](float x, float) { return 1.0f / (1.0f + std::exp(-x)); });
}

Var square(Graph& g, Var a) {
    return unary_op(
        g, a, [](float x) { return x * x; }, [](float x, float) { return 2.0f * x; });
}

Var clamp01(Graph& g, Var a) {
    return unary_op(
        g, a, [](float x) { return std::min(1.0f, std::max(0.0f, x)); },
        [](float x, float) { return (x >= 0.0f && x <= 1.0f) ? 1.0f : 0.0f; });
}

Var sum_all(Graph& g, Var a) {
    const Tensor& ta = g.value(a);
    double acc = 0.0;
    for (float x : ta.data) acc += double(x);
    Var out = g.op(Tensor::scalar(float(acc)), {a}, [](Graph& gg, int id) {
        auto [pa, pb] = parents_of(gg, id);
        (void)pb;
        if (!gg.needs_grad(Var{pa})) return;
        const float go = OpAccess::grad_of(gg, id).data[0];
        Tensor& da = gg.grad_buffer(pa);
        for (float& x : da.data) x += go;
    });
    g.set_scalar_acc(out, acc);
    return out;
}

Var mean_all(Graph& g, Var a) {
    const Tensor& ta = g.value(a);
    const double n = double(ta.size());
    double acc = 0.0;
    for (float x : ta.data) acc += double(x);
    acc /= n;
    Var out = g.op(Tensor::scalar(float(acc)), {a}, [n](Graph& gg, int id) {
        auto [pa, pb] = parents_of(gg, id);
        (void)pb;
        if (!gg.needs_grad(Var{pa})) return;
        const float go = OpAccess::grad_of(gg, id).data[0];
        const float w = float(double(go) / n);
        Tensor& da = gg.grad_buffer(pa);
        for (float& x : da.data) x += w;
    });
    g.set_scalar_acc(out, acc);
    return out;
}

Var mean_axis(Graph& g, Var a, int axis) {
    const Tensor& ta = g.value(a);
    const int nd = int(ta.shape.size());
    if (axis < 0 || axis >= nd) throw_invalid("mean_axis: axis out of range");
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= ta.shape[size_t(i)];
    for (int i = axis + 1; i < nd; ++i) inner *= ta.shape[size_t(i)];
    const int64_t an = ta.shape[size_t(axis)];
    std::vector<int> out_shape;
    for (int i = 0; i < nd; ++i)
        if (i != axis) out_shape.push_back(ta.shape[size_t(i)]);
    if (out_shape.empty()) out_shape.push_back(1);
    Tensor out = Tensor::zeros(out_shape);
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
            double acc = 0.0;
            for (int64_t x = 0; x < an; ++x) acc += double(ta.data[size_t((o * an + x) * inner + in)]);
            out.data[size_t(o * inner + in)] = float(acc / double(an));
        }
    return g.op(std::move(out), {a}, [outer, inner, an](Graph& gg, int id) {
        auto [pa, pb] = parents_of(gg, id);
        (void)pb;
        if (!gg.needs_grad(Var{pa})) return;
        const Tensor& go = OpAccess::grad_of(gg, id);
        Tensor& da = gg.grad_buffer(pa);
        const float inv = 1.0f / float(an);
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t in = 0; in < inner; ++in) {
                const float w = go.data[size_t(o * inner + in)] * inv;
                for (int64_t x = 0; x < an; ++x) da.data[size_t((o * an + x) * inner + in)] += w;
            }
    });
}

Var reshape(Graph& g, Var a, std::vector<int> shape) {
    const Tensor& ta = g.value(a);
    if (numel(shape) != ta.size()) throw_invalid("reshape: element count mismatch");
    Tensor out(std::move(shape), ta.data);
    return g.op(std::move(out), {a}, [](Graph& gg, int id) {
        auto [pa, pb] = parents_of(gg, id);
        (void)pb;
        if (!gg.needs_grad(Var{pa})) return;
        const Tensor& go = OpAccess::grad_of(gg, id);
        Tensor& da = gg.grad_buffer(pa);
        for (size_t i = 0; i < go.data.size(); ++i) da.data[i] += go.data[i];
    });
}

Var slice(Graph& g, Var a, int axis, int start, int len) {
    const Tensor& ta = g.value(a);
    const int nd = int(ta.shape.size());
    if (axis < 0 || axis >= nd) throw_invalid("slice: axis out of range");
    const int an = ta.shape[size_t(axis)];
    if (start < 0 || len <= 0 || start + len > an) throw_invalid("slice: range out of bounds");
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= ta.shape[size_t(i)];
    for (int i = axis + 1; i < nd; ++i) inner *= ta.shape[size_t(i)];
    std::vector<int> out_shape = ta.shape;
    out_shape[size_t(axis)] = len;
    Tensor out = Tensor::zeros(out_shape);
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t x = 0; x < len; ++x)
            std::memcpy(out.data.data() + (o * len + x) * inner,
                        ta.data.data() + (o * an + (start + x)) * inner, size_t(inner) * sizeof(float));
    return g.op(std::move(out), {a}, [outer, inner, an, start, len](Graph& gg, int id) {
        auto [pa, pb] = parents_of(gg, id);
        (void)pb;
        if (!gg.needs_grad(Var{pa})) return;
        const Tensor& go = OpAccess::grad_of(gg, id);
        Tensor& da = gg.grad_buffer(pa);
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t x = 0; x < len; ++x) {
                const float* src = go.data.data() + (o * len + x) * inner;
                float* dst = da.data.data() + (o * int64_t(an) + (start + x)) * inner;
                for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
            }
    });
}

Var concat(Graph& g, const std::vector<Var>& parts, int axis) {
    if (parts.empty()) throw_invalid("concat: no inputs");
    if (parts.size() > 4) {
        // tree-reduce to respect the 4-parent limit
        std::vector<Var> tier;
        for (size_t i = 0; i < parts.size(); i += 4) {
            std::vector<Var> chunk(parts.begin() + long(i),
                                   parts.begin() + long(std::min(i + 4, parts.size())));
            tier.push_back(chunk.size() == 1 ? chunk[0] : concat(g, chunk, axis));
        }
        return concat(g, tier, axis);
    }
    const Tensor& t0 = g.value(parts[0]);
    const int nd = int(t0.shape.size());
    if (axis < 0 || axis >= nd) throw_invalid("concat: axis out of range");
    int total = 0;
    std::vector<int> lens;
    for (Var p : parts) {
        const Tensor& tp = g.value(p);
        if (int(tp.shape.size()) != nd) throw_invalid("concat: rank mismatch");
        for (int i = 0; i < nd; ++i)
            if (i != axis && tp.shape[size_t(i)] != t0.shape[size_t(i)])
                throw_invalid("concat: shape mismatch off-axis");
        lens.push_back(tp.shape[size_t(axis)]);
        total += tp.shape[size_t(axis)];
    }
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= t0.shape[size_t(i)];
    for (int i = axis + 1; i < nd; ++i) inner *= t0.shape[size_t(i)];
    std::vector<int> out_shape = t0.shape;
    out_shape[size_t(axis)] = total;
    Tensor out = Tensor::zeros(out_shape);
    int off = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        const Tensor& tp = g.value(parts[pi]);
        const int ln = lens[pi];
        for (int64_t o = 0; o < outer; ++o)
            std::memcpy(out.data.data() + (o * total + off) * inner,
                        tp.data.data() + o * int64_t(ln) * inner, size_t(int64_t(ln) * inner) * sizeof(float));
        off += ln;
    }
    std::initializer_list<Var> pl;
    Var pv[4] = {parts[0], parts.size() > 1 ? parts[1] : Var{}, parts.size() > 2 ? parts[2] : Var{},
                 parts.size() > 3 ? parts[3] : Var{}};
    (void)pl;
    auto back = [outer, inner, lens, total](Graph& gg, int id) {
        auto ps = OpAccess::parents(gg, id);
        const Tensor& go = OpAccess::grad_of(gg, id);
        int off = 0;
        for (size_t pi = 0; pi < lens.size(); ++pi) {
            const int ln = lens[pi];
            const int pid = ps[pi];
            if (pid >= 0 && gg.needs_grad(Var{pid})) {
                Tensor& dp = gg.grad_buffer(pid);
                for (int64_t o = 0; o < outer; ++o) {
                    const float* src = go.data.data() + (o * total + off) * inner;
                    float* dst = dp.data.data() + o * int64_t(ln) * inner;
                    for (int64_t i = 0; i < int64_t(ln) * inner; ++i) dst[i] += src[i];
                }
            }
            off += ln;
        }
    };
    switch (parts.size()) {
        case 1: return g.op(std::move(out), {pv[0]}, back);
        case 2: return g.op(std::move(out), {pv[0], pv[1]}, back);
        case 3: return g.op(std::move(out), {pv[0], pv[1], pv[2]}, back);
        default: return g.op(std::move(out), {pv[0], pv[1], pv[2], pv[3]}, back);
    }
}

Var softmax_lastdim(Graph& g, Var a) {
    const Tensor& ta = g.value(a);
    const int64_t last = ta.shape.back();
    const int64_t rows = ta.size() / last;
    Tensor out = ta;
    for (int64_t r = 0; r < rows; ++r) {
        float* x = out.data.data() + r * last;
        float mx = x[0];
        for (int64_t i = 1; i < last; ++i) mx = std::max(mx, x[i]);
        double sum = 0.0;
        for (int64_t i = 0; i < last; ++i) {
            x[i] = std::exp(x[i] - mx);
            sum += double(x[i]);
        }
        const float inv = float(1.0 / sum);
        for (int64_t i = 0; i < last; ++i) x[i] *= inv;
    }
    return g.op(std::move(out), {a}, [rows, last](Graph& gg, int id) {
        auto [pa, pb] = parents_of(gg, id);
        (void)pb;
        if (!gg.needs_grad(Var{pa})) return;
        const Tensor& go = OpAccess::grad_of(gg, id);
        const Tensor& y = val_of(gg, id);
        Tensor& da = gg.grad_buffer(pa);
        for (int64_t r = 0; r < rows; ++r) {
            const float* yr = y.data.data() + r * last;
            const float* gr = go.data.data() + r * last;
            float* dr = da.data.data() + r * last;
            double dot = 0.0;
            for (int64_t i = 0; i < last; ++i) dot += double(gr[i]) * double(yr[i]);
            for (int64_t i = 0; i < last; ++i) dr[i] += yr[i] * (gr[i] - float(dot));
        }
    });
}

Var layernorm_lastdim(Graph& g, Var a, float eps) {
    const Tensor& ta = g.value(a);
    const int64_t last = ta.shape.back();
    const int64_t rows = ta.size() / last;
    Tensor out = ta;
    std::vector<float> inv_std(size_t(rows), 0.0f);
    for (int64_t r = 0; r < rows; ++r) {
        float* x = out.data.data() + r * last;
        double m = 0.0;
        for (int64_t i = 0; i < last; ++i) m += double(x[i]);
        m /= double(last);
        double v = 0.0;
        for (int64_t i = 0; i < last; ++i) {
            const double d = double(x[i]) - m;
            v += d * d;
        }
        v /= double(last);
        const float is = float(1.0 / std::sqrt(v + double(eps)));
        inv_std[size_t(r)] = is;
        for (int64_t i = 0; i < last; ++i) x[i] = (x[i] - float(m)) * is;
    }
    return g.op(std::move(out), {a}, [rows, last, inv_std](Graph& gg, int id) {
        auto [pa, pb] = parents_of(gg, id);
        (void)pb;
        if (!gg.needs_grad(Var{pa})) return;
        const Tensor& go = OpAccess::grad_of(gg, id);
        const Tensor& y = val_of(gg, id); // normalized output
        Tensor& da = gg.grad_buffer(pa);
        for (int64_t r = 0; r < rows; ++r) {
            const float* yr = y.data.data() + r * last;
            const float* gr = go.data.data() + r * last;
            float* dr = da.data.data() + r * last;
            double gmean = 0.0, gymean = 0.0;
            for (int64_t i = 0; i < last; ++i) {
                gmean += double(gr[i]);
                gymean += double(gr[i]) * double(yr[i]);
            }
            gmean /= double(last);
            gymean /= double(last);
            const float is = inv_std[size_t(r)];
            for (int64_t i = 0; i < last; ++i)
                dr[i] += is * (gr[i] - float(gmean) - yr[i] * float(gymean));
        }
    });
}

Var sdpa_causal(Graph& g, Var q, Var k, Var v, int n_heads) {
    const Tensor& tq = g.value(q);
    const Tensor& tk = g.value(k);
    const Tensor& tv = g.value(v);
    if (tq.shape.size() != 3 || tq.shape != tk.shape || tq.shape != tv.shape)
        throw_invalid("sdpa_causal expects equal [B,T,D] inputs");
    const int B = tq.shape[0], T = tq.shape[1], D = tq.shape[2];
    if (D % n_heads != 0) throw_invalid("sdpa_causal: D not divisible by n_heads");
    const int hd = D / n_heads;
    const float sc = 1.0f / std::sqrt(float(hd));

    // attention weights kept for backward: [B, heads, T, T], causal rows
    auto attn = std::make_shared<std::vector<float>>(size_t(B) * n_heads * T * T, 0.0f);
    Tensor out = Tensor::zeros(tq.shape);
    for (int b = 0; b < B; ++b) {
        for (int h = 0; h < n_heads; ++h) {
            float* A = attn->data() + ((size_t(b) * n_heads + h) * T) * T;
            for (int i = 0; i < T; ++i) {
                const float* qi = tq.data.data() + (size_t(b) * T + i) * D + h * hd;
                float* Ai = A + size_t(i) * T;
                float mx = -std::numeric_limits<float>::infinity();
                for (int j = 0; j <= i; ++j) {
                    const float* kj = tk.data.data() + (size_t(b) * T + j) * D + h * hd;
                    float s = 0.0f;
                    for (int d = 0; d < hd; ++d) s += qi[d] * kj[d];
                    Ai[j] = s * sc;
                    mx = std::max(mx, Ai[j]);
                }
                double sum = 0.0;
                for (int j = 0; j <= i; ++j) {
                    Ai[j] = std::exp(Ai[j] - mx);
                    sum += double(Ai[j]);
                }
                const float inv = float(1.0 / sum);
                float* oi = out.data.data() + (size_t(b) * T + i) * D + h * hd;
                for (int j = 0; j <= i; ++j) {
                    Ai[j] *= inv;
                    const float* vj = tv.data.data() + (size_t(b) * T + j) * D + h * hd;
                    for (int d = 0; d < hd; ++d) oi[d] += Ai[j] * vj[d];
                }
            }
        }
    }
    return g.op(std::move(out), {q, k, v}, [B, T, D, n_heads, hd, sc, attn](Graph& gg, int id) {
        auto ps = OpAccess::parents(gg, id);
        const int pq = ps[0], pk = ps[1], pv = ps[2];
        const Tensor& go = OpAccess::grad_of(gg, id);
        const Tensor& tq = val_of(gg, pq);
        const Tensor& tk = val_of(gg, pk);
        const Tensor& tv = val_of(gg, pv);
        Tensor& dq = gg.grad_buffer(pq);
        Tensor& dk = gg.grad_buffer(pk);
        Tensor& dv = gg.grad_buffer(pv);
        std::vector<float> dS(size_t(T), 0.0f);
        for (int b = 0; b < B; ++b) {
            for (int h = 0; h < n_heads; ++h) {
                const float* A = attn->data() + ((size_t(b) * n_heads + h) * T) * T;
                for (int i = 0; i < T; ++i) {
                    const float* gi = go.data.data() + (size_t(b) * T + i) * D + h * hd;
                    const float* Ai = A + size_t(i) * T;
                    // dA_ij = g_i . v_j ; softmax backward over the causal row
                    double dot = 0.0;
                    for (int j = 0; j <= i; ++j) {
                        const float* vj = tv.data.data() + (size_t(b) * T + j) * D + h * hd;
                        float da = 0.0f;
                        for (int d = 0; d < hd; ++d) da += gi[d] * vj[d];
                        dS[size_t(j)] = da;
                        dot += double(da) * double(Ai[j]);
                        // dV_j += A_ij * g_i
                        float* dvj = dv.data.data() + (size_t(b) * T + j) * D + h * hd;
                        for (int d = 0; d < hd; ++d) dvj[d] += Ai[j] * gi[d];
                    }
                    const float* qi = tq.data.data() + (size_t(b) * T + i) * D + h * hd;
                    float* dqi = dq.data.data() + (size_t(b) * T + i) * D + h * hd;
                    for (int j = 0; j <= i; ++j) {
                        const float ds = Ai[j] * (dS[size_t(j)] - float(dot)) * sc;
                        const float* kj = tk.data.data() + (size_t(b) * T + j) * D + h * hd;
                        float* dkj = dk.data.data() + (size_t(b) * T + j) * D + h * hd;
                        for (int d = 0; d < hd; ++d) {
                            dqi[d] += ds * kj[d];
                            dkj[d] += ds * qi[d];
                        }
                    }
                }
            }
        }
    });
}

Var reparam_sample(Graph& g, Var mu, Var sigma, const Tensor& eps) {
    const Tensor& tm = g.value(mu);
    const Tensor& ts = g.value(sigma);
    if (!tm.same_shape(ts) || !tm.same_shape(eps))
        throw_invalid("reparam_sample: mu/sigma/eps shape mismatch");
    Tensor out = tm;
    auto ep = std::make_shared<std::vector<float>>(eps.data);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += ts.data[i] * eps.data[i];
    return g.op(std::move(out), {mu, sigma}, [ep](Graph& gg, int id) {
        auto [pm, psig] = parents_of(gg, id);
        const Tensor& go = OpAccess::grad_of(gg, id);
        if (gg.needs_grad(Var{pm})) {
            Tensor& dm = gg.grad_buffer(pm);
            for (size_t i = 0; i < go.data.size(); ++i) dm.data[i] += go.data[i];
        }
        if (gg.needs_grad(Var{psig})) {
            Tensor& ds = gg.grad_buffer(psig);
            for (size_t i = 0; i < go.data.size(); ++i) ds.data[i] += go.data[i] * (*ep)[i];
        }
    });
}

Var mse(Graph& g, Var a, Var b) {
    const Tensor& ta = g.value(a);
    const Tensor& tb = g.value(b);
    if (!ta.same_shape(tb)) throw_invalid("mse: shape mismatch");
    const double n = double(ta.size());
    double acc = 0.0;
    for (size_t i = 0; i < ta.data.size(); ++i) {
        const double d = double(ta.data[i]) - double(tb.data[i]);
        acc += d * d;
    }
    acc /= n;
    Var out = g.op(Tensor::scalar(float(acc)), {a, b}, [n](Graph& gg, int id) {
        auto [pa, pb] = parents_of(gg, id);
        const float go = OpAccess::grad_of(gg, id).data[0];
        const Tensor& va = val_of(gg, pa);
        const Tensor& vb = val_of(gg, pb);
        const float w = float(2.0 * double(go) / n);
        if (gg.needs_grad(Var{pa})) {
            Tensor& da = gg.grad_buffer(pa);
            for (size_t i = 0; i < va.data.size(); ++i)
                da.data[i] += w * (va.data[i] - vb.data[i]);
        }
        if (gg.needs_grad(Var{pb})) {
            Tensor& db = gg.grad_buffer(pb);
            for (size_t i = 0; i < va.data.size(); ++i)
                db.data[i] -= w * (va.data[i] - vb.data[i]);
        }
    });
    g.set_scalar_acc(out, acc);
    return out;
}

} // namespace wmmon::nnkit
