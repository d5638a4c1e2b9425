#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "eegattn/rng.hpp"

namespace eegattn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

class TensorError : public std::runtime_error {
public:
    explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

// Reverse-mode autodiff tensor. Value semantics over a shared impl: copies
// alias the same storage and graph node. Row-major doubles throughout.
class Tensor {
public:
    struct Impl;

    struct Node {
        std::vector<std::shared_ptr<Impl>> parents;
        // Accumulates into the parents' grad buffers; reads out->grad via the
        // raw pointer captured at construction (the node lives inside out).
        std::function<void()> backprop;
    };

    struct Impl {
        Shape shape;
        std::vector<double> data;
        std::vector<double> grad;  // empty until first accumulation
        bool requires_grad = false;
        std::shared_ptr<Node> node;

        std::vector<double>& grad_buf() {
            if (grad.empty()) grad.assign(data.size(), 0.0);
            return grad;
        }
    };

    Tensor() = default;

    static Tensor zeros(const Shape& s, bool requires_grad = false) {
        return filled(s, 0.0, requires_grad);
    }
    static Tensor ones(const Shape& s, bool requires_grad = false) {
        return filled(s, 1.0, requires_grad);
    }
    static Tensor filled(const Shape& s, double v, bool requires_grad = false) {
        Tensor t;
        t.impl_ = std::make_shared<Impl>();
        t.impl_->shape = s;
        t.impl_->data.assign(numel(s), v);
        t.impl_->requires_grad = requires_grad;
        return t;
    }
    static Tensor from_data(const Shape& s, std::vector<double> d,
                            bool requires_grad = false) {
        if (numel(s) != d.size())
            throw TensorError("from_data: shape " + shape_str(s) +
                              " does not match data length " +
                              std::to_string(d.size()));
        Tensor t;
        t.impl_ = std::make_shared<Impl>();
        t.impl_->shape = s;
        t.impl_->data = std::move(d);
        t.impl_->requires_grad = requires_grad;
        return t;
    }
    static Tensor scalar(double v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }
    static Tensor randn(const Shape& s, Rng& rng, double stddev = 1.0,
                        bool requires_grad = false) {
        Tensor t = zeros(s, requires_grad);
        for (double& v : t.data()) v = stddev * rng.gaussian();
        return t;
    }
    // Glorot-uniform for a weight with the given fan-in/fan-out.
    static Tensor glorot(const Shape& s, std::size_t fan_in, std::size_t fan_out,
                         Rng& rng) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Tensor t = zeros(s, true);
        for (double& v : t.data()) v = rng.uniform(-limit, limit);
        return t;
    }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t size() const { return impl_->data.size(); }
    std::vector<double>& data() { return impl_->data; }
    const std::vector<double>& data() const { return impl_->data; }
    std::vector<double>& grad() { return impl_->grad_buf(); }
    bool has_grad() const { return !impl_->grad.empty(); }
    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool b) { impl_->requires_grad = b; }
    double item() const {
        if (size() != 1)
            throw TensorError("item: tensor " + shape_str(shape()) + " is not scalar");
        return impl_->data[0];
    }

    void zero_grad() { impl_->grad.clear(); }
    // Drops the backward graph hanging off this tensor.
    void clear_graph() { impl_->node.reset(); }
    Tensor detached() const {
        Tensor t;
        t.impl_ = std::make_shared<Impl>();
        t.impl_->shape = impl_->shape;
        t.impl_->data = impl_->data;
        return t;
    }

    std::shared_ptr<Impl> impl() const { return impl_; }

    // Builds an op result that participates in the graph when any input
    // requires grad. `backprop` must accumulate (+=) into parent grad buffers.
    static Tensor make_op(const Shape& out_shape,
                          std::vector<double> out_data,
                          const std::vector<Tensor>& inputs,
                          std::function<void(Impl* out)> backprop) {
        Tensor out = from_data(out_shape, std::move(out_data));
        bool needs = false;
        for (const Tensor& in : inputs)
            if (in.requires_grad()) needs = true;
        if (needs) {
            out.impl_->requires_grad = true;
            auto node = std::make_shared<Node>();
            for (const Tensor& in : inputs) node->parents.push_back(in.impl_);
            Impl* raw = out.impl_.get();
            node->backprop = [raw, fn = std::move(backprop)]() { fn(raw); };
            out.impl_->node = node;
        }
        return out;
    }

private:
    std::shared_ptr<Impl> impl_;
};

struct GradCheckReport {
    std::string op_name;
    double max_rel_error = 0.0;
    bool passed = false;
};

// ---------------------------------------------------------------------------
// Broadcasting helpers (size-1 axes only, numpy trailing alignment)
// ---------------------------------------------------------------------------

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw TensorError(std::string(op) + ": shapes " + shape_str(a) +
                              " and " + shape_str(b) + " do not broadcast");
        out[i] = std::max(da, db);
    }
    return out;
}

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

// Strides for reading `s` as if broadcast to rank r shape `out`; broadcast
// axes get stride 0.
inline std::vector<std::size_t> bcast_strides(const Shape& s, const Shape& out) {
    const std::size_t r = out.size();
    auto own = row_major_strides(s);
    std::vector<std::size_t> st(r, 0);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const std::size_t oi = r - s.size() + i;
        st[oi] = (s[i] == 1 && out[oi] != 1) ? 0 : own[i];
    }
    return st;
}

// Walks every multi-index of `out`, giving flat offsets into out/a/b.
template <typename F>
void for_each_bcast(const Shape& out, const std::vector<std::size_t>& sa,
                    const std::vector<std::size_t>& sb, F&& f) {
    const std::size_t n = numel(out);
    const std::size_t r = out.size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t io = 0; io < n; ++io) {
        f(io, ia, ib);
        for (std::size_t d = r; d-- > 0;) {
            if (++idx[d] < out[d]) {
                ia += sa[d];
                ib += sb[d];
                break;
            }
            idx[d] = 0;
            ia -= sa[d] * (out[d] - 1);
            ib -= sb[d] * (out[d] - 1);
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename Fwd, typename BwdA, typename BwdB>
Tensor binary_bcast(const char* name, const Tensor& a, const Tensor& b, Fwd fwd,
                    BwdA dfa, BwdB dfb) {
    const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
    const auto sa = bcast_strides(a.shape(), out_shape);
    const auto sb = bcast_strides(b.shape(), out_shape);
    std::vector<double> out(numel(out_shape));
    const auto& ad = a.data();
    const auto& bd = b.data();
    for_each_bcast(out_shape, sa, sb, [&](std::size_t io, std::size_t ia, std::size_t ib) {
        out[io] = fwd(ad[ia], bd[ib]);
    });
    return Tensor::make_op(
        out_shape, std::move(out), {a, b},
        [a, b, out_shape, sa, sb, dfa, dfb](Tensor::Impl* o) {
            const auto& g = o->grad;
            const auto& ad = a.impl()->data;
            const auto& bd = b.impl()->data;
            std::vector<double>* ga = a.requires_grad() ? &a.impl()->grad_buf() : nullptr;
            std::vector<double>* gb = b.requires_grad() ? &b.impl()->grad_buf() : nullptr;
            for_each_bcast(out_shape, sa, sb,
                           [&](std::size_t io, std::size_t ia, std::size_t ib) {
                               if (ga) (*ga)[ia] += g[io] * dfa(ad[ia], bd[ib]);
                               if (gb) (*gb)[ib] += g[io] * dfb(ad[ia], bd[ib]);
                           });
        });
}

template <typename Fwd, typename Bwd>
Tensor unary(const Tensor& x, Fwd fwd, Bwd dfdx) {
    std::vector<double> out(x.size());
    const auto& xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xd[i]);
    return Tensor::make_op(x.shape(), std::move(out), {x},
                           [x, dfdx](Tensor::Impl* o) {
                               if (!x.requires_grad()) return;
                               auto& g = x.impl()->grad_buf();
                               const auto& xd = x.impl()->data;
                               const auto& yd = o->data;
                               for (std::size_t i = 0; i < g.size(); ++i)
                                   g[i] += o->grad[i] * dfdx(xd[i], yd[i]);
                           });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_bcast(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_bcast(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_bcast(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

inline Tensor neg(const Tensor& x) {
    return detail::unary(x, [](double v) { return -v; },
                         [](double, double) { return -1.0; });
}

inline Tensor scale(const Tensor& x, double c) {
    return detail::unary(x, [c](double v) { return c * v; },
                         [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
    return detail::unary(x, [c](double v) { return v + c; },
                         [](double, double) { return 1.0; });
}

inline Tensor relu(const Tensor& x) {
    return detail::unary(x, [](double v) { return v > 0.0 ? v : 0.0; },
                         [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor elu(const Tensor& x) {
    return detail::unary(
        x, [](double v) { return v > 0.0 ? v : std::expm1(v); },
        [](double v, double y) { return v > 0.0 ? 1.0 : y + 1.0; });
}

inline Tensor square(const Tensor& x) {
    return detail::unary(x, [](double v) { return v * v; },
                         [](double v, double) { return 2.0 * v; });
}

// ---------------------------------------------------------------------------
// Reductions / reshaping
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return Tensor::make_op({1}, {s}, {x}, [x](Tensor::Impl* o) {
        if (!x.requires_grad()) return;
        auto& g = x.impl()->grad_buf();
        for (double& v : g) v += o->grad[0];
    });
}

inline Tensor mean(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.size());
    double s = 0.0;
    for (double v : x.data()) s += v;
    return Tensor::make_op({1}, {s * inv}, {x}, [x, inv](Tensor::Impl* o) {
        if (!x.requires_grad()) return;
        auto& g = x.impl()->grad_buf();
        for (double& v : g) v += o->grad[0] * inv;
    });
}

inline Tensor reshape(const Tensor& x, const Shape& s) {
    if (numel(s) != x.size())
        throw TensorError("reshape: " + shape_str(x.shape()) + " -> " +
                          shape_str(s) + " changes element count");
    return Tensor::make_op(s, x.data(), {x}, [x](Tensor::Impl* o) {
        if (!x.requires_grad()) return;
        auto& g = x.impl()->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
    });
}

inline Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
    if (axes.size() != x.rank())
        throw TensorError("permute: axes rank mismatch");
    const Shape& in = x.shape();
    Shape out_shape(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = in[axes[i]];
    const auto in_st = detail::row_major_strides(in);
    const auto out_st = detail::row_major_strides(out_shape);
    // map[out flat] = in flat
    std::vector<std::size_t> map(x.size());
    std::vector<std::size_t> idx(axes.size(), 0);
    for (std::size_t io = 0; io < map.size(); ++io) {
        std::size_t ii = 0;
        for (std::size_t d = 0; d < axes.size(); ++d) ii += idx[d] * in_st[axes[d]];
        map[io] = ii;
        for (std::size_t d = axes.size(); d-- > 0;) {
            if (++idx[d] < out_shape[d]) break;
            idx[d] = 0;
        }
    }
    std::vector<double> out(x.size());
    const auto& xd = x.data();
    for (std::size_t io = 0; io < out.size(); ++io) out[io] = xd[map[io]];
    return Tensor::make_op(out_shape, std::move(out), {x},
                           [x, map = std::move(map)](Tensor::Impl* o) {
                               if (!x.requires_grad()) return;
                               auto& g = x.impl()->grad_buf();
                               for (std::size_t io = 0; io < map.size(); ++io)
                                   g[map[io]] += o->grad[io];
                           });
}

inline Tensor transpose_last(const Tensor& x) {
    std::vector<std::size_t> axes(x.rank());
    std::iota(axes.begin(), axes.end(), 0);
    if (axes.size() < 2) throw TensorError("transpose_last: rank < 2");
    std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
    return permute(x, axes);
}

inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t start,
                    std::size_t len) {
    if (axis >= x.rank() || start + len > x.shape()[axis])
        throw TensorError("slice: out of range on " + shape_str(x.shape()));
    const Shape& in = x.shape();
    Shape out_shape = in;
    out_shape[axis] = len;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
    for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
    std::vector<double> out(numel(out_shape));
    const auto& xd = x.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < len; ++j)
            std::copy_n(&xd[(o * in[axis] + start + j) * inner], inner,
                        &out[(o * len + j) * inner]);
    return Tensor::make_op(
        out_shape, std::move(out), {x},
        [x, axis, start, len, outer, inner](Tensor::Impl* o) {
            if (!x.requires_grad()) return;
            auto& g = x.impl()->grad_buf();
            const std::size_t da = x.impl()->shape[axis];
            for (std::size_t ou = 0; ou < outer; ++ou)
                for (std::size_t j = 0; j < len; ++j) {
                    const double* src = &o->grad[(ou * len + j) * inner];
                    double* dst = &g[(ou * da + start + j) * inner];
                    for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
                }
        });
}

inline Tensor concat(std::size_t axis, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw TensorError("concat: empty input list");
    Shape out_shape = parts[0].shape();
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != out_shape.size())
            throw TensorError("concat: rank mismatch");
        for (std::size_t d = 0; d < out_shape.size(); ++d)
            if (d != axis && p.shape()[d] != out_shape[d])
                throw TensorError("concat: shape mismatch " +
                                  shape_str(p.shape()) + " vs " +
                                  shape_str(out_shape));
        total += p.shape()[axis];
    }
    out_shape[axis] = total;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= out_shape[i];
    for (std::size_t i = axis + 1; i < out_shape.size(); ++i) inner *= out_shape[i];
    std::vector<double> out(numel(out_shape));
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        const std::size_t la = p.shape()[axis];
        const auto& pd = p.data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(&pd[o * la * inner], la * inner,
                        &out[(o * total + off) * inner]);
        off += la;
    }
    return Tensor::make_op(
        out_shape, std::move(out), parts,
        [parts, axis, outer, inner, total](Tensor::Impl* o) {
            std::size_t off = 0;
            for (const Tensor& p : parts) {
                const std::size_t la = p.impl()->shape[axis];
                if (p.requires_grad()) {
                    auto& g = p.impl()->grad_buf();
                    for (std::size_t ou = 0; ou < outer; ++ou) {
                        const double* src = &o->grad[(ou * total + off) * inner];
                        double* dst = &g[ou * la * inner];
                        for (std::size_t i = 0; i < la * inner; ++i) dst[i] += src[i];
                    }
                }
                off += la;
            }
        });
}

// ---------------------------------------------------------------------------
// matmul (batched, leading dims broadcast)
// ---------------------------------------------------------------------------

namespace detail {

inline void mm(const double* A, const double* B, double* C, std::size_t m,
               std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* c = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double a = A[i * k + p];
            const double* b = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
        }
    }
}

// C[m,n] -> accumulate A-grad: dA = dC * B^T
inline void mm_dA(const double* dC, const double* B, double* dA, std::size_t m,
                  std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double* b = B + p * n;
            const double* c = dC + i * n;
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += c[j] * b[j];
            dA[i * k + p] += s;
        }
}

// dB = A^T * dC
inline void mm_dB(const double* A, const double* dC, double* dB, std::size_t m,
                  std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double a = A[i * k + p];
            const double* c = dC + i * n;
            double* b = dB + p * n;
            for (std::size_t j = 0; j < n; ++j) b[j] += a * c[j];
        }
}

struct MatmulPlan {
    Shape out_shape;
    Shape batch_shape;
    std::vector<std::size_t> sa, sb;  // broadcast strides over batch dims
    std::size_t m, k, n;
};

inline MatmulPlan matmul_plan(const Shape& a, const Shape& b) {
    if (a.size() < 2 || b.size() < 2)
        throw TensorError("matmul: both operands need rank >= 2, got " +
                          shape_str(a) + " and " + shape_str(b));
    MatmulPlan p;
    p.m = a[a.size() - 2];
    p.k = a[a.size() - 1];
    p.n = b[b.size() - 1];
    if (b[b.size() - 2] != p.k)
        throw TensorError("matmul: inner dimensions of " + shape_str(a) +
                          " and " + shape_str(b) + " do not match");
    Shape la(a.begin(), a.end() - 2), lb(b.begin(), b.end() - 2);
    p.batch_shape = broadcast_shape(la, lb, "matmul");
    p.out_shape = p.batch_shape;
    p.out_shape.push_back(p.m);
    p.out_shape.push_back(p.n);
    // Strides in units of whole matrices.
    auto sa_el = bcast_strides(la, p.batch_shape);
    auto sb_el = bcast_strides(lb, p.batch_shape);
    p.sa = sa_el;
    p.sb = sb_el;
    return p;
}

template <typename F>
void for_each_batch(const Shape& batch, const std::vector<std::size_t>& sa,
                    const std::vector<std::size_t>& sb, F&& f) {
    const std::size_t n = numel(batch);
    std::vector<std::size_t> idx(batch.size(), 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t io = 0; io < n; ++io) {
        f(io, ia, ib);
        for (std::size_t d = batch.size(); d-- > 0;) {
            if (++idx[d] < batch[d]) {
                ia += sa[d];
                ib += sb[d];
                break;
            }
            idx[d] = 0;
            ia -= sa[d] * (batch[d] - 1);
            ib -= sb[d] * (batch[d] - 1);
        }
    }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto plan = detail::matmul_plan(a.shape(), b.shape());
    std::vector<double> out(numel(plan.out_shape), 0.0);
    const std::size_t asz = plan.m * plan.k, bsz = plan.k * plan.n,
                      csz = plan.m * plan.n;
    detail::for_each_batch(plan.batch_shape, plan.sa, plan.sb,
                           [&](std::size_t io, std::size_t ia, std::size_t ib) {
                               detail::mm(&a.data()[ia * asz], &b.data()[ib * bsz],
                                          &out[io * csz], plan.m, plan.k, plan.n);
                           });
    return Tensor::make_op(
        plan.out_shape, std::move(out), {a, b}, [a, b, plan, asz, bsz, csz](Tensor::Impl* o) {
            std::vector<double>* ga = a.requires_grad() ? &a.impl()->grad_buf() : nullptr;
            std::vector<double>* gb = b.requires_grad() ? &b.impl()->grad_buf() : nullptr;
            detail::for_each_batch(
                plan.batch_shape, plan.sa, plan.sb,
                [&](std::size_t io, std::size_t ia, std::size_t ib) {
                    const double* dC = &o->grad[io * csz];
                    if (ga)
                        detail::mm_dA(dC, &b.impl()->data[ib * bsz], &(*ga)[ia * asz],
                                      plan.m, plan.k, plan.n);
                    if (gb)
                        detail::mm_dB(&a.impl()->data[ia * asz], dC, &(*gb)[ib * bsz],
                                      plan.m, plan.k, plan.n);
                });
        });
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& x, std::size_t axis) {
    if (axis >= x.rank())
        throw TensorError("softmax: axis " + std::to_string(axis) +
                          " out of range for " + shape_str(x.shape()));
    const Shape& s = x.shape();
    std::size_t outer = 1, inner = 1;
    const std::size_t da = s[axis];
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    std::vector<double> out(x.size());
    const auto& xd = x.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * da * inner + in;
            double mx = -HUGE_VAL;
            for (std::size_t j = 0; j < da; ++j)
                mx = std::max(mx, xd[base + j * inner]);
            double z = 0.0;
            for (std::size_t j = 0; j < da; ++j) {
                const double e = std::exp(xd[base + j * inner] - mx);
                out[base + j * inner] = e;
                z += e;
            }
            const double invz = 1.0 / z;
            for (std::size_t j = 0; j < da; ++j) out[base + j * inner] *= invz;
        }
    return Tensor::make_op(
        x.shape(), std::move(out), {x}, [x, outer, inner, da](Tensor::Impl* o) {
            if (!x.requires_grad()) return;
            auto& g = x.impl()->grad_buf();
            const auto& y = o->data;
            const auto& gy = o->grad;
            for (std::size_t ou = 0; ou < outer; ++ou)
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = ou * da * inner + in;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < da; ++j)
                        dot += gy[base + j * inner] * y[base + j * inner];
                    for (std::size_t j = 0; j < da; ++j)
                        g[base + j * inner] +=
                            y[base + j * inner] * (gy[base + j * inner] - dot);
                }
        });
}

// ---------------------------------------------------------------------------
// Convolution / pooling / normalization
// ---------------------------------------------------------------------------

// 2-D convolution (cross-correlation), stride 1, explicit padding, grouped.
// x: [B, Cin, H, W], w: [Cout, Cin/groups, KH, KW], bias: [Cout] or undefined.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                     std::size_t ph0, std::size_t ph1, std::size_t pw0,
                     std::size_t pw1, std::size_t groups) {
    if (x.rank() != 4 || w.rank() != 4)
        throw TensorError("conv2d: expected rank-4 input/weight, got " +
                          shape_str(x.shape()) + " and " + shape_str(w.shape()));
    const std::size_t B = x.shape()[0], Cin = x.shape()[1], H = x.shape()[2],
                      W = x.shape()[3];
    const std::size_t Cout = w.shape()[0], Cin_g = w.shape()[1],
                      KH = w.shape()[2], KW = w.shape()[3];
    if (Cin % groups || Cout % groups || Cin_g != Cin / groups)
        throw TensorError("conv2d: group/channel mismatch for input " +
                          shape_str(x.shape()) + ", weight " + shape_str(w.shape()) +
                          ", groups " + std::to_string(groups));
    if (H + ph0 + ph1 < KH || W + pw0 + pw1 < KW)
        throw TensorError("conv2d: kernel larger than padded input");
    const std::size_t OH = H + ph0 + ph1 - KH + 1, OW = W + pw0 + pw1 - KW + 1;
    const std::size_t co_g = Cout / groups;
    std::vector<double> out(B * Cout * OH * OW, 0.0);
    const auto& xd = x.data();
    const auto& wd = w.data();

    auto conv_fwd = [&](const double* in, const double* ker, double* dst) {
        // in: H*W plane, ker: KH*KW, dst: OH*OW; accumulate.
        for (std::size_t kh = 0; kh < KH; ++kh)
            for (std::size_t oh = 0; oh < OH; ++oh) {
                const long ih = static_cast<long>(oh + kh) - static_cast<long>(ph0);
                if (ih < 0 || ih >= static_cast<long>(H)) continue;
                const double* row = in + static_cast<std::size_t>(ih) * W;
                double* orow = dst + oh * OW;
                for (std::size_t kw = 0; kw < KW; ++kw) {
                    const double kv = ker[kh * KW + kw];
                    if (kv == 0.0) continue;
                    // ow such that iw = ow + kw - pw0 in [0, W)
                    const long lo = std::max<long>(0, static_cast<long>(pw0) -
                                                          static_cast<long>(kw));
                    const long hi = std::min<long>(
                        static_cast<long>(OW),
                        static_cast<long>(W) + static_cast<long>(pw0) -
                            static_cast<long>(kw));
                    const long shift = static_cast<long>(kw) - static_cast<long>(pw0);
                    for (long ow = lo; ow < hi; ++ow)
                        orow[ow] += kv * row[ow + shift];
                }
            }
    };

    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t g = 0; g < groups; ++g)
            for (std::size_t oc = 0; oc < co_g; ++oc) {
                const std::size_t co = g * co_g + oc;
                double* dst = &out[(b * Cout + co) * OH * OW];
                for (std::size_t ic = 0; ic < Cin_g; ++ic) {
                    const std::size_t ci = g * Cin_g + ic;
                    conv_fwd(&xd[(b * Cin + ci) * H * W],
                             &wd[(co * Cin_g + ic) * KH * KW], dst);
                }
            }
    std::vector<Tensor> inputs{x, w};
    if (bias.defined()) {
        if (bias.size() != Cout)
            throw TensorError("conv2d: bias shape " + shape_str(bias.shape()) +
                              " != Cout " + std::to_string(Cout));
        const auto& bd = bias.data();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t co = 0; co < Cout; ++co) {
                double* dst = &out[(b * Cout + co) * OH * OW];
                for (std::size_t i = 0; i < OH * OW; ++i) dst[i] += bd[co];
            }
        inputs.push_back(bias);
    }

    Shape out_shape{B, Cout, OH, OW};
    return Tensor::make_op(
        out_shape, std::move(out), inputs,
        [x, w, bias, B, Cin, H, W, Cout, Cin_g, KH, KW, OH, OW, ph0, pw0, groups,
         co_g](Tensor::Impl* o) {
            const auto& gy = o->grad;
            const auto& xd = x.impl()->data;
            const auto& wd = w.impl()->data;
            std::vector<double>* gx = x.requires_grad() ? &x.impl()->grad_buf() : nullptr;
            std::vector<double>* gw = w.requires_grad() ? &w.impl()->grad_buf() : nullptr;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t g = 0; g < groups; ++g)
                    for (std::size_t oc = 0; oc < co_g; ++oc) {
                        const std::size_t co = g * co_g + oc;
                        const double* dy = &gy[(b * Cout + co) * OH * OW];
                        for (std::size_t ic = 0; ic < Cin_g; ++ic) {
                            const std::size_t ci = g * Cin_g + ic;
                            const double* in = &xd[(b * Cin + ci) * H * W];
                            const double* ker = &wd[(co * Cin_g + ic) * KH * KW];
                            double* din = gx ? &(*gx)[(b * Cin + ci) * H * W] : nullptr;
                            double* dker =
                                gw ? &(*gw)[(co * Cin_g + ic) * KH * KW] : nullptr;
                            for (std::size_t kh = 0; kh < KH; ++kh)
                                for (std::size_t oh = 0; oh < OH; ++oh) {
                                    const long ih = static_cast<long>(oh + kh) -
                                                    static_cast<long>(ph0);
                                    if (ih < 0 || ih >= static_cast<long>(H)) continue;
                                    const std::size_t ihz = static_cast<std::size_t>(ih);
                                    const double* dyrow = dy + oh * OW;
                                    for (std::size_t kw = 0; kw < KW; ++kw) {
                                        const long lo = std::max<long>(
                                            0, static_cast<long>(pw0) -
                                                   static_cast<long>(kw));
                                        const long hi = std::min<long>(
                                            static_cast<long>(OW),
                                            static_cast<long>(W) +
                                                static_cast<long>(pw0) -
                                                static_cast<long>(kw));
                                        const long shift = static_cast<long>(kw) -
                                                           static_cast<long>(pw0);
                                        if (din) {
                                            const double kv = ker[kh * KW + kw];
                                            double* dirow = din + ihz * W;
                                            for (long ow = lo; ow < hi; ++ow)
                                                dirow[ow + shift] += kv * dyrow[ow];
                                        }
                                        if (dker) {
                                            const double* irow = in + ihz * W;
                                            double s = 0.0;
                                            for (long ow = lo; ow < hi; ++ow)
                                                s += dyrow[ow] * irow[ow + shift];
                                            dker[kh * KW + kw] += s;
                                        }
                                    }
                                }
                        }
                        if (bias.defined() && bias.requires_grad()) {
                            auto& gb = bias.impl()->grad_buf();
                            double s = 0.0;
                            for (std::size_t i = 0; i < OH * OW; ++i) s += dy[i];
                            gb[co] += s;
                        }
                    }
        });
}

// Average pool along the width axis with non-overlapping windows of size p;
// trailing remainder samples are dropped (floor semantics).
inline Tensor avg_pool_w(const Tensor& x, std::size_t p) {
    if (x.rank() != 4) throw TensorError("avg_pool_w: expected rank-4 input");
    if (p == 0) throw TensorError("avg_pool_w: zero pool size");
    const std::size_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2],
                      W = x.shape()[3];
    if (W < p)
        throw TensorError("avg_pool_w: pool " + std::to_string(p) +
                          " exceeds width " + std::to_string(W));
    const std::size_t OW = W / p;
    const double inv = 1.0 / static_cast<double>(p);
    std::vector<double> out(B * C * H * OW);
    const auto& xd = x.data();
    for (std::size_t r = 0; r < B * C * H; ++r)
        for (std::size_t ow = 0; ow < OW; ++ow) {
            double s = 0.0;
            for (std::size_t j = 0; j < p; ++j) s += xd[r * W + ow * p + j];
            out[r * OW + ow] = s * inv;
        }
    return Tensor::make_op(
        {B, C, H, OW}, std::move(out), {x},
        [x, B, C, H, W, OW, p, inv](Tensor::Impl* o) {
            if (!x.requires_grad()) return;
            auto& g = x.impl()->grad_buf();
            for (std::size_t r = 0; r < B * C * H; ++r)
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    const double d = o->grad[r * OW + ow] * inv;
                    for (std::size_t j = 0; j < p; ++j) g[r * W + ow * p + j] += d;
                }
        });
}

// Batch normalization over (B, H, W) per channel for rank-4 input.
// In training mode, normalizes with batch statistics and updates the running
// buffers in place (running buffers carry no grad). In inference mode uses
// the running statistics.
inline Tensor batch_norm2d(const Tensor& x, const Tensor& gamma,
                           const Tensor& beta, Tensor& running_mean,
                           Tensor& running_var, bool training,
                           double momentum = 0.1, double eps = 1e-5) {
    if (x.rank() != 4) throw TensorError("batch_norm2d: expected rank-4 input");
    const std::size_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2],
                      W = x.shape()[3];
    if (gamma.size() != C || beta.size() != C || running_mean.size() != C ||
        running_var.size() != C)
        throw TensorError("batch_norm2d: parameter size != channels");
    const std::size_t m = B * H * W;
    std::vector<double> mu(C), var(C);
    const auto& xd = x.data();
    if (training) {
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const double* p = &xd[(b * C + c) * H * W];
                for (std::size_t i = 0; i < H * W; ++i) s += p[i];
            }
            mu[c] = s / static_cast<double>(m);
            double v = 0.0;
            for (std::size_t b = 0; b < B; ++b) {
                const double* p = &xd[(b * C + c) * H * W];
                for (std::size_t i = 0; i < H * W; ++i) {
                    const double d = p[i] - mu[c];
                    v += d * d;
                }
            }
            var[c] = v / static_cast<double>(m);
            running_mean.data()[c] =
                (1.0 - momentum) * running_mean.data()[c] + momentum * mu[c];
            running_var.data()[c] =
                (1.0 - momentum) * running_var.data()[c] + momentum * var[c];
        }
    } else {
        mu.assign(running_mean.data().begin(), running_mean.data().end());
        var.assign(running_var.data().begin(), running_var.data().end());
    }
    std::vector<double> inv_sd(C), xhat(x.size());
    for (std::size_t c = 0; c < C; ++c) inv_sd[c] = 1.0 / std::sqrt(var[c] + eps);
    std::vector<double> out(x.size());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const double g = gamma.data()[c], be = beta.data()[c];
            const std::size_t base = (b * C + c) * H * W;
            for (std::size_t i = 0; i < H * W; ++i) {
                const double xh = (xd[base + i] - mu[c]) * inv_sd[c];
                xhat[base + i] = xh;
                out[base + i] = g * xh + be;
            }
        }
    return Tensor::make_op(
        x.shape(), std::move(out), {x, gamma, beta},
        [x, gamma, beta, B, C, H, W, m, training, inv_sd = std::move(inv_sd),
         xhat = std::move(xhat)](Tensor::Impl* o) {
            const auto& gy = o->grad;
            std::vector<double>* gx = x.requires_grad() ? &x.impl()->grad_buf() : nullptr;
            std::vector<double>* gg =
                gamma.requires_grad() ? &gamma.impl()->grad_buf() : nullptr;
            std::vector<double>* gb =
                beta.requires_grad() ? &beta.impl()->grad_buf() : nullptr;
            for (std::size_t c = 0; c < C; ++c) {
                double sum_dy = 0.0, sum_dy_xh = 0.0;
                for (std::size_t b = 0; b < B; ++b) {
                    const std::size_t base = (b * C + c) * H * W;
                    for (std::size_t i = 0; i < H * W; ++i) {
                        sum_dy += gy[base + i];
                        sum_dy_xh += gy[base + i] * xhat[base + i];
                    }
                }
                if (gg) (*gg)[c] += sum_dy_xh;
                if (gb) (*gb)[c] += sum_dy;
                if (gx) {
                    const double g = gamma.impl()->data[c];
                    const double inv_m = 1.0 / static_cast<double>(m);
                    for (std::size_t b = 0; b < B; ++b) {
                        const std::size_t base = (b * C + c) * H * W;
                        for (std::size_t i = 0; i < H * W; ++i) {
                            double d;
                            if (training) {
                                d = g * inv_sd[c] *
                                    (gy[base + i] - sum_dy * inv_m -
                                     xhat[base + i] * sum_dy_xh * inv_m);
                            } else {
                                d = g * inv_sd[c] * gy[base + i];
                            }
                            (*gx)[base + i] += d;
                        }
                    }
                }
            }
        });
}

// Layer normalization over the last axis with affine parameters.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
    const std::size_t d = x.shape().back();
    if (gamma.size() != d || beta.size() != d)
        throw TensorError("layer_norm: affine parameter size != last dim");
    const std::size_t rows = x.size() / d;
    std::vector<double> out(x.size()), xhat(x.size()), inv_sd(rows);
    const auto& xd = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* p = &xd[r * d];
        double mu = 0.0;
        for (std::size_t i = 0; i < d; ++i) mu += p[i];
        mu /= static_cast<double>(d);
        double v = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double dd = p[i] - mu;
            v += dd * dd;
        }
        v /= static_cast<double>(d);
        inv_sd[r] = 1.0 / std::sqrt(v + eps);
        for (std::size_t i = 0; i < d; ++i) {
            const double xh = (p[i] - mu) * inv_sd[r];
            xhat[r * d + i] = xh;
            out[r * d + i] = gamma.data()[i] * xh + beta.data()[i];
        }
    }
    return Tensor::make_op(
        x.shape(), std::move(out), {x, gamma, beta},
        [x, gamma, beta, rows, d, inv_sd = std::move(inv_sd),
         xhat = std::move(xhat)](Tensor::Impl* o) {
            const auto& gy = o->grad;
            std::vector<double>* gx = x.requires_grad() ? &x.impl()->grad_buf() : nullptr;
            std::vector<double>* gg =
                gamma.requires_grad() ? &gamma.impl()->grad_buf() : nullptr;
            std::vector<double>* gb =
                beta.requires_grad() ? &beta.impl()->grad_buf() : nullptr;
            for (std::size_t r = 0; r < rows; ++r) {
                double sum_dyg = 0.0, sum_dyg_xh = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    const double dyg = gy[r * d + i] * gamma.impl()->data[i];
                    sum_dyg += dyg;
                    sum_dyg_xh += dyg * xhat[r * d + i];
                }
                const double inv_d = 1.0 / static_cast<double>(d);
                for (std::size_t i = 0; i < d; ++i) {
                    const double dyg = gy[r * d + i] * gamma.impl()->data[i];
                    if (gx)
                        (*gx)[r * d + i] += inv_sd[r] * (dyg - sum_dyg * inv_d -
                                                         xhat[r * d + i] *
                                                             sum_dyg_xh * inv_d);
                    if (gg) (*gg)[i] += gy[r * d + i] * xhat[r * d + i];
                    if (gb) (*gb)[i] += gy[r * d + i];
                }
            }
        });
}

// Inverted dropout; identity when not training or p == 0.
inline Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
    if (!training || p <= 0.0) return x;
    if (p >= 1.0) throw TensorError("dropout: p must be < 1");
    Tensor mask = Tensor::zeros(x.shape());
    const double keep = 1.0 / (1.0 - p);
    for (double& v : mask.data()) v = rng.uniform() < p ? 0.0 : keep;
    return mul(x, mask);
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

inline void backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw TensorError("backward: loss must be scalar, got " +
                          shape_str(loss.shape()));
    // Topological order over the graph reachable from loss.
    std::vector<Tensor::Impl*> order;
    std::unordered_set<Tensor::Impl*> seen;
    std::vector<std::pair<Tensor::Impl*, std::size_t>> stack;
    stack.emplace_back(loss.impl().get(), 0);
    seen.insert(loss.impl().get());
    while (!stack.empty()) {
        auto& [node, child] = stack.back();
        const auto& parents =
            node->node ? node->node->parents
                       : std::vector<std::shared_ptr<Tensor::Impl>>{};
        if (child < parents.size()) {
            Tensor::Impl* p = parents[child++].get();
            if (!seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // Each backward pass propagates independently of grads accumulated by
    // earlier passes: stash existing buffers, propagate from a unit seed,
    // then add the stash back.
    std::vector<std::pair<Tensor::Impl*, std::vector<double>>> stash;
    for (Tensor::Impl* n : order)
        if (!n->grad.empty()) stash.emplace_back(n, std::move(n->grad));
    loss.impl()->grad_buf()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor::Impl* n = *it;
        if (n->node && !n->grad.empty()) n->node->backprop();
    }
    for (auto& [n, old] : stash) {
        auto& g = n->grad_buf();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += old[i];
    }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

// Central-difference check of d f / d input for a scalar-valued f.
inline GradCheckReport finite_diff_check(
    const std::string& op_name, const std::function<Tensor(const Tensor&)>& f,
    Tensor input, double eps = 1e-5, double tol = 1e-4) {
    if (eps <= 0.0) throw TensorError("finite_diff_check: eps must be positive");
    input.set_requires_grad(true);
    input.zero_grad();
    Tensor loss = f(input);
    if (loss.size() != 1)
        throw TensorError("finite_diff_check: op is not scalar-valued after reduction");
    backward(loss);
    const std::vector<double> analytic = input.grad();
    GradCheckReport rep;
    rep.op_name = op_name;
    Tensor probe = input.detached();
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double orig = probe.data()[i];
        probe.data()[i] = orig + eps;
        const double fp = f(probe).item();
        probe.data()[i] = orig - eps;
        const double fm = f(probe).item();
        probe.data()[i] = orig;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double err =
            std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
        rep.max_rel_error = std::max(rep.max_rel_error, err);
    }
    rep.passed = rep.max_rel_error < tol;
    return rep;
}

}  // namespace eegattn
