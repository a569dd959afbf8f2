#include "poselift/ops.hpp"

#include <algorithm>
#include <atomic>

#include "poselift/blas.hpp"
#include "poselift/errors.hpp"

namespace poselift::ag {
namespace {

std::atomic<std::uint64_t> g_macs{0};

std::string pair_shapes(const Shape& a, const Shape& b) { return to_string(a) + " and " + to_string(b); }

// Index maps from an output element to each broadcast input.
struct BroadcastPlan {
    Shape out;
    std::vector<std::size_t> a_index, b_index;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
    BroadcastPlan plan;
    plan.out = broadcast_shape(a, b);
    const std::size_t rank = plan.out.size();
    const std::size_t n = numel(plan.out);
    auto strides_for = [&](const Shape& s) {
        std::vector<std::size_t> st(rank, 0);
        std::size_t acc = 1;
        for (std::size_t i = 0; i < s.size(); ++i) {
            const std::size_t axis = rank - 1 - i;
            const std::size_t d = s[s.size() - 1 - i];
            st[axis] = d == 1 ? 0 : acc;
            acc *= d;
        }
        return st;
    };
    const auto sa = strides_for(a);
    const auto sb = strides_for(b);
    plan.a_index.resize(n);
    plan.b_index.resize(n);
    std::vector<std::size_t> counter(rank, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t o = 0; o < n; ++o) {
        plan.a_index[o] = ia;
        plan.b_index[o] = ib;
        for (std::size_t axis = rank; axis-- > 0;) {
            ++counter[axis];
            ia += sa[axis];
            ib += sb[axis];
            if (counter[axis] < plan.out[axis]) break;
            ia -= sa[axis] * counter[axis];
            ib -= sb[axis] * counter[axis];
            counter[axis] = 0;
        }
    }
    return plan;
}

template <typename F>
Tensor elementwise(const Tensor& x, F f) {
    Tensor out(x.shape());
    const long n = static_cast<long>(x.size());
#pragma omp parallel for schedule(static) if (n > 65536)
    for (long i = 0; i < n; ++i) out[i] = f(x[i]);
    return out;
}

enum class BinaryKind { kAdd, kSub, kMul };

Var binary(const Var& a, const Var& b, BinaryKind kind) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    auto apply = [kind](double x, double y) {
        switch (kind) {
            case BinaryKind::kAdd: return x + y;
            case BinaryKind::kSub: return x - y;
            case BinaryKind::kMul: return x * y;
        }
        return 0.0;
    };

    if (av.shape() == bv.shape()) {
        Tensor out(av.shape());
        const long n = static_cast<long>(av.size());
#pragma omp parallel for schedule(static) if (n > 65536)
        for (long i = 0; i < n; ++i) out[i] = apply(av[i], bv[i]);
        return make_result(std::move(out), {a, b}, [kind](Node& self) {
            const Tensor& g = self.grad;
            Node& na = *self.inputs[0];
            Node& nb = *self.inputs[1];
            if (na.requires_grad) {
                Tensor& ga = na.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += kind == BinaryKind::kMul ? g[i] * nb.value[i] : g[i];
            }
            if (nb.requires_grad) {
                Tensor& gb = nb.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    double d = 1.0;
                    if (kind == BinaryKind::kSub) d = -1.0;
                    if (kind == BinaryKind::kMul) d = na.value[i];
                    gb[i] += g[i] * d;
                }
            }
        });
    }

    auto plan = std::make_shared<BroadcastPlan>(plan_broadcast(av.shape(), bv.shape()));
    Tensor out(plan->out);
    for (std::size_t o = 0; o < out.size(); ++o) out[o] = apply(av[plan->a_index[o]], bv[plan->b_index[o]]);
    return make_result(std::move(out), {a, b}, [kind, plan](Node& self) {
        const Tensor& g = self.grad;
        Node& na = *self.inputs[0];
        Node& nb = *self.inputs[1];
        if (na.requires_grad) {
            Tensor& ga = na.grad_buffer();
            for (std::size_t o = 0; o < g.size(); ++o)
                ga[plan->a_index[o]] += kind == BinaryKind::kMul ? g[o] * nb.value[plan->b_index[o]] : g[o];
        }
        if (nb.requires_grad) {
            Tensor& gb = nb.grad_buffer();
            for (std::size_t o = 0; o < g.size(); ++o) {
                double d = 1.0;
                if (kind == BinaryKind::kSub) d = -1.0;
                if (kind == BinaryKind::kMul) d = na.value[plan->a_index[o]];
                gb[plan->b_index[o]] += g[o] * d;
            }
        }
    });
}

Shape leading(const Shape& s) { return Shape(s.begin(), s.end() - 2); }

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
        const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1) throw ShapeError("cannot broadcast shapes " + pair_shapes(a, b));
        out[rank - 1 - i] = std::max(da, db);
    }
    return out;
}

Var constant(Tensor value) { return Var(std::move(value), false); }

Var matmul(const Var& a, const Var& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2 || sa.back() != sb[sb.size() - 2])
        throw ShapeError("matmul: incompatible shapes " + pair_shapes(sa, sb));
    const std::size_t m = sa[sa.size() - 2];
    const std::size_t k = sa.back();
    const std::size_t n = sb.back();

    blas::GemmShape fwd{.m = m, .n = n, .k = k};
    Shape out_shape;
    enum class Mode { kFlatLeft, kSharedLeft, kBatched } mode;
    if (sb.size() == 2) {
        // [..., m, k] x [k, n]: fold the batch into rows.
        mode = Mode::kFlatLeft;
        fwd.m = numel(sa) / k;
        out_shape = sa;
        out_shape.back() = n;
    } else if (sa.size() == 2) {
        mode = Mode::kSharedLeft;
        fwd.batch = numel(leading(sb));
        fwd.stride_b = k * n;
        fwd.stride_c = m * n;
        out_shape = leading(sb);
        out_shape.push_back(m);
        out_shape.push_back(n);
    } else {
        if (leading(sa) != leading(sb)) throw ShapeError("matmul: batch axes differ in " + pair_shapes(sa, sb));
        mode = Mode::kBatched;
        fwd.batch = numel(leading(sa));
        fwd.stride_a = m * k;
        fwd.stride_b = k * n;
        fwd.stride_c = m * n;
        out_shape = leading(sa);
        out_shape.push_back(m);
        out_shape.push_back(n);
    }

    Tensor out(out_shape);
    blas::gemm(fwd, a.value().data().data(), b.value().data().data(), out.data().data());
    g_macs += fwd.batch * fwd.m * fwd.n * fwd.k;

    return make_result(std::move(out), {a, b}, [fwd, mode](Node& self) {
        Node& na = *self.inputs[0];
        Node& nb = *self.inputs[1];
        const double* g = self.grad.data().data();
        const double* av = na.value.data().data();
        const double* bv = nb.value.data().data();
        if (na.requires_grad) {
            // dA = dC * B^T
            blas::GemmShape s{.batch = fwd.batch, .m = fwd.m, .n = fwd.k, .k = fwd.n, .trans_b = true,
                              .stride_a = fwd.stride_c, .stride_b = fwd.stride_b,
                              .stride_c = mode == Mode::kSharedLeft ? 0 : fwd.stride_a, .accumulate = true};
            blas::gemm(s, g, bv, na.grad_buffer().data().data());
        }
        if (nb.requires_grad) {
            // dB = A^T * dC
            blas::GemmShape s{.batch = fwd.batch, .m = fwd.k, .n = fwd.n, .k = fwd.m, .trans_a = true,
                              .stride_a = fwd.stride_a, .stride_b = fwd.stride_c,
                              .stride_c = fwd.stride_b, .accumulate = true};
            blas::gemm(s, av, g, nb.grad_buffer().data().data());
        }
    });
}

Var add(const Var& a, const Var& b) { return binary(a, b, BinaryKind::kAdd); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinaryKind::kSub); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinaryKind::kMul); }

Var scale(const Var& a, double s) {
    return make_result(elementwise(a.value(), [s](double x) { return x * s; }), {a}, [s](Node& self) {
        Tensor& ga = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * self.grad[i];
    });
}

Var relu(const Var& a) {
    return make_result(elementwise(a.value(), [](double x) { return x > 0.0 ? x : 0.0; }), {a}, [](Node& self) {
        Node& in = *self.inputs[0];
        Tensor& ga = in.grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i)
            if (in.value[i] > 0.0) ga[i] += self.grad[i];
    });
}

Var concat_last(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_last: no inputs");
    Shape lead = parts.front().shape();
    lead.pop_back();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const Var& p : parts) {
        Shape l = p.shape();
        widths.push_back(l.back());
        total += l.back();
        l.pop_back();
        if (l != lead)
            throw ShapeError("concat_last: leading axes differ in " + pair_shapes(parts.front().shape(), p.shape()));
    }
    Shape out_shape = lead;
    out_shape.push_back(total);
    Tensor out(out_shape);
    const std::size_t rows = numel(lead);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const Tensor& v = parts[p].value();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(v.data().data() + r * widths[p], widths[p], out.data().data() + r * total + offset);
        offset += widths[p];
    }
    return make_result(std::move(out), parts, [widths, rows, total](Node& self) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < self.inputs.size(); ++p) {
            Node& in = *self.inputs[p];
            if (in.requires_grad) {
                Tensor& gi = in.grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < widths[p]; ++j) gi[r * widths[p] + j] += self.grad[r * total + off + j];
            }
            off += widths[p];
        }
    });
}

Var reshape(const Var& a, Shape shape) {
    return make_result(a.value().reshaped(std::move(shape)), {a}, [](Node& self) {
        Tensor& ga = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    });
}

Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return make_result(Tensor::scalar(s), {a}, [](Node& self) {
        Tensor& ga = self.inputs[0]->grad_buffer();
        const double g = self.grad[0];
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
}

Var sum(const Var& a, std::size_t axis) {
    const Shape& s = a.shape();
    if (axis >= s.size()) throw ShapeError("sum: axis " + std::to_string(axis) + " out of range for " + to_string(s));
    const std::size_t outer = numel(Shape(s.begin(), s.begin() + axis));
    const std::size_t len = s[axis];
    const std::size_t inner = numel(Shape(s.begin() + axis + 1, s.end()));
    Shape out_shape = s;
    out_shape.erase(out_shape.begin() + axis);
    if (out_shape.empty()) out_shape.push_back(1);
    Tensor out(out_shape);
    const Tensor& v = a.value();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += v[(o * len + l) * inner + i];
    return make_result(std::move(out), {a}, [outer, len, inner](Node& self) {
        Tensor& ga = self.inputs[0]->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t l = 0; l < len; ++l)
                for (std::size_t i = 0; i < inner; ++i) ga[(o * len + l) * inner + i] += self.grad[o * inner + i];
    });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var mean(const Var& a, std::size_t axis) {
    if (axis >= a.shape().size()) throw ShapeError("mean: axis out of range for " + to_string(a.shape()));
    return scale(sum(a, axis), 1.0 / static_cast<double>(a.shape()[axis]));
}

Var mse_loss(const Var& pred, const Var& target) {
    if (pred.shape() != target.shape()) throw ShapeError("mse_loss: shapes " + pair_shapes(pred.shape(), target.shape()));
    Var diff = sub(pred, target);
    return mean(mul(diff, diff));
}

std::uint64_t mac_count() { return g_macs.load(); }
void reset_mac_count() { g_macs = 0; }

}  // namespace poselift::ag
