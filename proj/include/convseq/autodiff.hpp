#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "convseq/kernels.hpp"
#include "convseq/tensor.hpp"

namespace convseq {

class Tape;

// Handle to a value recorded on a tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Tensor& grad() const;
};

// Reverse-mode tape. Nodes are appended in forward order; backward() replays
// them in exact reverse order, which is a reverse topological order by
// construction. Gradients accumulate additively across consumers.
class Tape {
public:
    struct Node {
        Tensor value;
        Tensor grad;  // allocated lazily on first accumulation
        std::function<void(Tape&)> backward;
    };

    // deque keeps references to earlier nodes stable while new ones are pushed
    std::deque<Node> nodes;

    Var leaf(Tensor v) { return push(std::move(v), nullptr); }
    Var constant(Tensor v) { return push(std::move(v), nullptr); }

    Var push(Tensor v, std::function<void(Tape&)> bw) {
        nodes.push_back(Node{std::move(v), Tensor{}, std::move(bw)});
        return Var{this, nodes.size() - 1};
    }

    const Tensor& value(std::size_t id) const { return nodes[id].value; }
    Tensor& grad(std::size_t id) { return nodes[id].grad; }

    // Gradient of a node, as zeros if nothing flowed into it.
    Tensor grad_or_zeros(const Var& v) {
        Node& n = nodes[v.id];
        if (n.grad.numel() == 0) return Tensor(n.value.shape);
        return n.grad;
    }

    void accumulate(std::size_t id, const Tensor& g) {
        Node& n = nodes[id];
        if (n.grad.numel() == 0) {
            n.grad = g;
            return;
        }
        require(n.grad.same_shape(g), "gradient accumulation shape mismatch");
        for (std::size_t i = 0; i < g.numel(); ++i) n.grad.data[i] += g.data[i];
    }

    void backward(const Var& loss) {
        require(loss.tape == this, "backward: loss from a different tape");
        require(nodes[loss.id].value.numel() == 1, "backward: loss must be scalar, got shape " +
                                                       shape_str(nodes[loss.id].value.shape));
        accumulate(loss.id, Tensor::full(nodes[loss.id].value.shape, 1.0));
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes[i];
            if (n.backward && n.grad.numel() != 0) n.backward(*this);
        }
    }
};

inline const Tensor& Var::value() const { return tape->nodes[id].value; }
inline const Tensor& Var::grad() const { return tape->nodes[id].grad; }

namespace detail {

inline Tensor permute_tensor(const Tensor& a, const std::vector<std::size_t>& axes) {
    std::size_t r = a.rank();
    require(axes.size() == r, "permute: axes rank mismatch");
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = a.shape[axes[i]];
    Tensor out(out_shape);
    std::vector<std::size_t> in_strides(r, 1), out_of_in(r, 0);
    for (std::size_t i = r - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * a.shape[i + 1];
    // stride in the input for each output axis
    for (std::size_t i = 0; i < r; ++i) out_of_in[i] = in_strides[axes[i]];
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t lin = 0; lin < out.numel(); ++lin) {
        out.data[lin] = a.data[src];
        for (std::size_t ax = r; ax-- > 0;) {
            if (++idx[ax] < out_shape[ax]) {
                src += out_of_in[ax];
                break;
            }
            src -= out_of_in[ax] * (out_shape[ax] - 1);
            idx[ax] = 0;
        }
    }
    return out;
}

inline std::vector<std::size_t> inverse_axes(const std::vector<std::size_t>& axes) {
    std::vector<std::size_t> inv(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) inv[axes[i]] = i;
    return inv;
}

// (outer, n, inner) decomposition around `axis`.
struct AxisView {
    std::size_t outer = 1, n = 1, inner = 1;
};
inline AxisView axis_view(const Shape& s, std::size_t axis) {
    require(axis < s.size(), "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    AxisView v;
    for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
    v.n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// primitive operations
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
    Tape& t = *a.tape;
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    bool a_big = broadcasts_to(bv.shape, av.shape);
    bool b_big = !a_big && broadcasts_to(av.shape, bv.shape);
    require(a_big || b_big, "add: incompatible shapes " + shape_str(av.shape) + " vs " +
                                shape_str(bv.shape));
    const Tensor& big = a_big ? av : bv;
    const Tensor& small = a_big ? bv : av;
    Tensor out(big.shape);
    std::size_t m = small.numel();
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = big.data[i] + small.data[i % m];
    std::size_t aid = a.id, bid = b.id, self = t.nodes.size();
    return t.push(std::move(out), [aid, bid, self](Tape& tp) {
        const Tensor& g = tp.grad(self);
        const Shape& sa = tp.value(aid).shape;
        const Shape& sb = tp.value(bid).shape;
        tp.accumulate(aid, sa == g.shape ? g : reduce_to_suffix(g, sa));
        tp.accumulate(bid, sb == g.shape ? g : reduce_to_suffix(g, sb));
    });
}

inline Var mul(Var a, Var b) {
    Tape& t = *a.tape;
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    bool a_big = broadcasts_to(bv.shape, av.shape);
    bool b_big = !a_big && broadcasts_to(av.shape, bv.shape);
    require(a_big || b_big, "mul: incompatible shapes " + shape_str(av.shape) + " vs " +
                                shape_str(bv.shape));
    const Tensor& big = a_big ? av : bv;
    const Tensor& small = a_big ? bv : av;
    Tensor out(big.shape);
    std::size_t m = small.numel();
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = big.data[i] * small.data[i % m];
    std::size_t aid = a.id, bid = b.id, self = t.nodes.size();
    return t.push(std::move(out), [aid, bid, self](Tape& tp) {
        const Tensor& g = tp.grad(self);
        const Tensor& av2 = tp.value(aid);
        const Tensor& bv2 = tp.value(bid);
        auto side = [&](std::size_t target, const Tensor& other) {
            const Shape& ts = tp.value(target).shape;
            Tensor gi(g.shape);
            std::size_t m2 = other.numel();
            if (other.shape == g.shape)
                for (std::size_t i = 0; i < g.numel(); ++i) gi.data[i] = g.data[i] * other.data[i];
            else
                for (std::size_t i = 0; i < g.numel(); ++i)
                    gi.data[i] = g.data[i] * other.data[i % m2];
            tp.accumulate(target, ts == g.shape ? gi : reduce_to_suffix(gi, ts));
        };
        side(aid, bv2);
        side(bid, av2);
    });
}

inline Var scale(Var a, double c) {
    Tape& t = *a.tape;
    Tensor out(a.value().shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a.value().data[i] * c;
    std::size_t aid = a.id, self = t.nodes.size();
    return t.push(std::move(out), [aid, self, c](Tape& tp) {
        const Tensor& g = tp.grad(self);
        Tensor gi(g.shape);
        for (std::size_t i = 0; i < g.numel(); ++i) gi.data[i] = g.data[i] * c;
        tp.accumulate(aid, gi);
    });
}

inline Var add_scalar(Var a, double c) {
    Tape& t = *a.tape;
    Tensor out(a.value().shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a.value().data[i] + c;
    std::size_t aid = a.id, self = t.nodes.size();
    return t.push(std::move(out),
                  [aid, self](Tape& tp) { tp.accumulate(aid, tp.grad(self)); });
}

inline Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

namespace detail {
// Elementwise unary helper. dfun receives (input, output) and returns dy/dx.
inline Var unary(Var a, double (*fun)(double), double (*dfun)(double, double)) {
    Tape& t = *a.tape;
    Tensor out(a.value().shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = fun(a.value().data[i]);
    std::size_t aid = a.id, self = t.nodes.size();
    return t.push(std::move(out), [aid, self, dfun](Tape& tp) {
        const Tensor& g = tp.grad(self);
        const Tensor& x = tp.value(aid);
        const Tensor& y = tp.value(self);
        Tensor gi(g.shape);
        for (std::size_t i = 0; i < g.numel(); ++i)
            gi.data[i] = g.data[i] * dfun(x.data[i], y.data[i]);
        tp.accumulate(aid, gi);
    });
}
}  // namespace detail

inline Var sigmoid(Var a) {
    return detail::unary(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh_op(Var a) {
    return detail::unary(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var relu(Var a) {
    // subgradient at 0 is 0
    return detail::unary(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var abs_op(Var a) {
    return detail::unary(
        a, [](double x) { return std::abs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var square(Var a) {
    return detail::unary(
        a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var sqrt_op(Var a) {
    return detail::unary(
        a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

inline Var sum(Var a) {
    Tape& t = *a.tape;
    double s = 0.0;
    for (double v : a.value().data) s += v;
    std::size_t aid = a.id, self = t.nodes.size();
    return t.push(Tensor::scalar(s), [aid, self](Tape& tp) {
        double g = tp.grad(self).data[0];
        tp.accumulate(aid, Tensor::full(tp.value(aid).shape, g));
    });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / double(a.value().numel())); }

// Reduce along `axis`, dropping it from the shape.
inline Var sum_axis(Var a, std::size_t axis) {
    Tape& t = *a.tape;
    const Tensor& av = a.value();
    auto v = detail::axis_view(av.shape, axis);
    Shape out_shape;
    for (std::size_t i = 0; i < av.rank(); ++i)
        if (i != axis) out_shape.push_back(av.shape[i]);
    if (out_shape.empty()) out_shape = {1};
    Tensor out(out_shape);
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t j = 0; j < v.n; ++j)
            for (std::size_t in = 0; in < v.inner; ++in)
                out.data[o * v.inner + in] += av.data[(o * v.n + j) * v.inner + in];
    std::size_t aid = a.id, self = t.nodes.size();
    return t.push(std::move(out), [aid, self, v](Tape& tp) {
        const Tensor& g = tp.grad(self);
        Tensor gi(tp.value(aid).shape);
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t j = 0; j < v.n; ++j)
                for (std::size_t in = 0; in < v.inner; ++in)
                    gi.data[(o * v.n + j) * v.inner + in] = g.data[o * v.inner + in];
        tp.accumulate(aid, gi);
    });
}

inline Var mean_axis(Var a, std::size_t axis) {
    double n = double(a.value().shape.at(axis));
    return scale(sum_axis(a, axis), 1.0 / n);
}

inline Var softmax(Var a, std::size_t axis) {
    Tape& t = *a.tape;
    const Tensor& av = a.value();
    auto v = detail::axis_view(av.shape, axis);
    Tensor out(av.shape);
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t in = 0; in < v.inner; ++in) {
            std::size_t base = o * v.n * v.inner + in;
            double mx = av.data[base];
            for (std::size_t j = 1; j < v.n; ++j)
                mx = std::max(mx, av.data[base + j * v.inner]);
            double s = 0.0;
            for (std::size_t j = 0; j < v.n; ++j) {
                double e = std::exp(av.data[base + j * v.inner] - mx);
                out.data[base + j * v.inner] = e;
                s += e;
            }
            double inv = 1.0 / s;
            for (std::size_t j = 0; j < v.n; ++j) out.data[base + j * v.inner] *= inv;
        }
    std::size_t aid = a.id, self = t.nodes.size();
    return t.push(std::move(out), [aid, self, v](Tape& tp) {
        const Tensor& g = tp.grad(self);
        const Tensor& y = tp.value(self);
        Tensor gi(g.shape);
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t in = 0; in < v.inner; ++in) {
                std::size_t base = o * v.n * v.inner + in;
                double dot = 0.0;
                for (std::size_t j = 0; j < v.n; ++j) {
                    std::size_t idx = base + j * v.inner;
                    dot += g.data[idx] * y.data[idx];
                }
                for (std::size_t j = 0; j < v.n; ++j) {
                    std::size_t idx = base + j * v.inner;
                    gi.data[idx] = y.data[idx] * (g.data[idx] - dot);
                }
            }
        tp.accumulate(aid, gi);
    });
}

inline Var log_softmax(Var a, std::size_t axis) {
    Tape& t = *a.tape;
    const Tensor& av = a.value();
    auto v = detail::axis_view(av.shape, axis);
    Tensor out(av.shape);
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t in = 0; in < v.inner; ++in) {
            std::size_t base = o * v.n * v.inner + in;
            double mx = av.data[base];
            for (std::size_t j = 1; j < v.n; ++j)
                mx = std::max(mx, av.data[base + j * v.inner]);
            double s = 0.0;
            for (std::size_t j = 0; j < v.n; ++j) s += std::exp(av.data[base + j * v.inner] - mx);
            double lse = mx + std::log(s);
            for (std::size_t j = 0; j < v.n; ++j)
                out.data[base + j * v.inner] = av.data[base + j * v.inner] - lse;
        }
    std::size_t aid = a.id, self = t.nodes.size();
    return t.push(std::move(out), [aid, self, v](Tape& tp) {
        const Tensor& g = tp.grad(self);
        const Tensor& y = tp.value(self);
        Tensor gi(g.shape);
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t in = 0; in < v.inner; ++in) {
                std::size_t base = o * v.n * v.inner + in;
                double gsum = 0.0;
                for (std::size_t j = 0; j < v.n; ++j) gsum += g.data[base + j * v.inner];
                for (std::size_t j = 0; j < v.n; ++j) {
                    std::size_t idx = base + j * v.inner;
                    gi.data[idx] = g.data[idx] - std::exp(y.data[idx]) * gsum;
                }
            }
        tp.accumulate(aid, gi);
    });
}

inline constexpr double kLayerNormEps = 1e-5;

// Per-position normalization over the last axis, then affine gain/bias.
inline Var layer_norm(Var x, Var gain, Var bias) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    std::size_t d = xv.shape.back();
    require(gain.value().shape == Shape{d} && bias.value().shape == Shape{d},
            "layer_norm: gain/bias must have shape [d]");
    std::size_t rows = xv.numel() / d;
    Tensor out(xv.shape), xhat(xv.shape), rstd({rows});
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= double(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= double(d);
        double rs = 1.0 / std::sqrt(var + kLayerNormEps);
        rstd.data[r] = rs;
        for (std::size_t j = 0; j < d; ++j) {
            double xh = (xr[j] - mu) * rs;
            xhat.data[r * d + j] = xh;
            out.data[r * d + j] = xh * gain.value().data[j] + bias.value().data[j];
        }
    }
    std::size_t xid = x.id, gid = gain.id, bid = bias.id, self = t.nodes.size();
    return t.push(std::move(out), [xid, gid, bid, self, xhat, rstd, d, rows](Tape& tp) {
        const Tensor& g = tp.grad(self);
        const Tensor& gn = tp.value(gid);
        Tensor gx(tp.value(xid).shape), gg({d}), gb({d});
        for (std::size_t r = 0; r < rows; ++r) {
            const double* gr = g.data.data() + r * d;
            const double* xh = xhat.data.data() + r * d;
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                double dxh = gr[j] * gn.data[j];
                m1 += dxh;
                m2 += dxh * xh[j];
                gg.data[j] += gr[j] * xh[j];
                gb.data[j] += gr[j];
            }
            m1 /= double(d);
            m2 /= double(d);
            double rs = rstd.data[r];
            for (std::size_t j = 0; j < d; ++j) {
                double dxh = gr[j] * gn.data[j];
                gx.data[r * d + j] = rs * (dxh - m1 - xh[j] * m2);
            }
        }
        tp.accumulate(xid, gx);
        tp.accumulate(gid, gg);
        tp.accumulate(bid, gb);
    });
}

// Batched matrix product. Leading batch dims must agree, or one operand may
// carry none (it is then shared across batches).
inline Var matmul(Var a, Var b) {
    Tape& t = *a.tape;
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require(av.rank() >= 2 && bv.rank() >= 2, "matmul: operands must have rank >= 2");
    std::size_t m = av.shape[av.rank() - 2], p = av.shape[av.rank() - 1];
    std::size_t p2 = bv.shape[bv.rank() - 2], q = bv.shape[bv.rank() - 1];
    require(p == p2, "matmul: inner dimensions disagree, " + shape_str(av.shape) + " vs " +
                         shape_str(bv.shape));
    Shape ba(av.shape.begin(), av.shape.end() - 2);
    Shape bb(bv.shape.begin(), bv.shape.end() - 2);
    std::size_t na = Tensor::numel_of(ba), nb = Tensor::numel_of(bb);
    require(ba == bb || na == 1 || nb == 1,
            "matmul: batch dimensions disagree, " + shape_str(av.shape) + " vs " +
                shape_str(bv.shape));
    std::size_t batches = std::max(na, nb);
    Shape out_shape = na >= nb ? ba : bb;
    out_shape.push_back(m);
    out_shape.push_back(q);
    Tensor out(out_shape);
    for (std::size_t bi = 0; bi < batches; ++bi)
        kernels::gemm_nn(av.data.data() + (na == 1 ? 0 : bi * m * p),
                         bv.data.data() + (nb == 1 ? 0 : bi * p * q), out.data.data() + bi * m * q,
                         m, p, q);
    std::size_t aid = a.id, bid = b.id, self = t.nodes.size();
    return t.push(std::move(out), [aid, bid, self, m, p, q, na, nb, batches](Tape& tp) {
        const Tensor& g = tp.grad(self);
        const Tensor& av2 = tp.value(aid);
        const Tensor& bv2 = tp.value(bid);
        Tensor ga(av2.shape), gb(bv2.shape);
        for (std::size_t bi = 0; bi < batches; ++bi) {
            const double* gB = g.data.data() + bi * m * q;
            kernels::gemm_nt(gB, bv2.data.data() + (nb == 1 ? 0 : bi * p * q),
                             ga.data.data() + (na == 1 ? 0 : bi * m * p), m, q, p);
            kernels::gemm_tn(av2.data.data() + (na == 1 ? 0 : bi * m * p), gB,
                             gb.data.data() + (nb == 1 ? 0 : bi * p * q), m, p, q);
        }
        tp.accumulate(aid, ga);
        tp.accumulate(bid, gb);
    });
}

inline Var permute(Var a, std::vector<std::size_t> axes) {
    Tape& t = *a.tape;
    Tensor out = detail::permute_tensor(a.value(), axes);
    std::size_t aid = a.id, self = t.nodes.size();
    return t.push(std::move(out), [aid, self, axes](Tape& tp) {
        tp.accumulate(aid, detail::permute_tensor(tp.grad(self), detail::inverse_axes(axes)));
    });
}

inline Var reshape(Var a, Shape s) {
    Tape& t = *a.tape;
    require(Tensor::numel_of(s) == a.value().numel(),
            "reshape: cannot reshape " + shape_str(a.value().shape) + " to " + shape_str(s));
    Tensor out(s, a.value().data);
    std::size_t aid = a.id, self = t.nodes.size();
    return t.push(std::move(out), [aid, self](Tape& tp) {
        Tensor g(tp.value(aid).shape, tp.grad(self).data);
        tp.accumulate(aid, g);
    });
}

// Slice [start, end) of the last axis.
inline Var slice_last(Var a, std::size_t start, std::size_t end) {
    Tape& t = *a.tape;
    const Tensor& av = a.value();
    std::size_t d = av.shape.back();
    require(start < end && end <= d, "slice_last: bad range");
    Shape out_shape = av.shape;
    out_shape.back() = end - start;
    Tensor out(out_shape);
    std::size_t rows = av.numel() / d, w = end - start;
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) out.data[r * w + j] = av.data[r * d + start + j];
    std::size_t aid = a.id, self = t.nodes.size();
    return t.push(std::move(out), [aid, self, start, d, rows, w](Tape& tp) {
        const Tensor& g = tp.grad(self);
        Tensor gi(tp.value(aid).shape);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) gi.data[r * d + start + j] = g.data[r * w + j];
        tp.accumulate(aid, gi);
    });
}

// y[..., j] = a[..., j] / s[...] where s has a's shape minus the last axis.
inline Var div_rowwise(Var a, Var s) {
    Tape& t = *a.tape;
    const Tensor& av = a.value();
    const Tensor& sv = s.value();
    Shape expect(av.shape.begin(), av.shape.end() - 1);
    if (expect.empty()) expect = {1};
    require(sv.shape == expect, "div_rowwise: divisor shape " + shape_str(sv.shape) +
                                    " does not match row shape " + shape_str(expect));
    std::size_t d = av.shape.back(), rows = av.numel() / d;
    Tensor out(av.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        double inv = 1.0 / sv.data[r];
        for (std::size_t j = 0; j < d; ++j) out.data[r * d + j] = av.data[r * d + j] * inv;
    }
    std::size_t aid = a.id, sid = s.id, self = t.nodes.size();
    return t.push(std::move(out), [aid, sid, self, d, rows](Tape& tp) {
        const Tensor& g = tp.grad(self);
        const Tensor& av2 = tp.value(aid);
        const Tensor& sv2 = tp.value(sid);
        Tensor ga(av2.shape), gs(sv2.shape);
        for (std::size_t r = 0; r < rows; ++r) {
            double sval = sv2.data[r], inv = 1.0 / sval;
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                ga.data[r * d + j] = g.data[r * d + j] * inv;
                dot += g.data[r * d + j] * av2.data[r * d + j];
            }
            gs.data[r] = -dot / (sval * sval);
        }
        tp.accumulate(aid, ga);
        tp.accumulate(sid, gs);
    });
}

// Row lookup into a [V, d] table. Gradient flows back into the selected rows;
// rows equal to frozen_id receive no gradient (used to pin the pad embedding).
inline Var gather_rows(Var w, const std::vector<long long>& ids, long long frozen_id = -1) {
    Tape& t = *w.tape;
    const Tensor& wv = w.value();
    require(wv.rank() == 2, "gather_rows: table must be rank 2");
    std::size_t V = wv.shape[0], d = wv.shape[1];
    for (long long id : ids)
        require(id >= 0 && (std::size_t)id < V,
                "gather_rows: id " + std::to_string(id) + " out of range [0," + std::to_string(V) +
                    ")");
    Tensor out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] = wv.data[(std::size_t)ids[i] * d + j];
    std::size_t wid = w.id, self = t.nodes.size();
    return t.push(std::move(out), [wid, self, ids, frozen_id, d](Tape& tp) {
        const Tensor& g = tp.grad(self);
        Tensor gw(tp.value(wid).shape);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] == frozen_id) continue;
            for (std::size_t j = 0; j < d; ++j)
                gw.data[(std::size_t)ids[i] * d + j] += g.data[i * d + j];
        }
        tp.accumulate(wid, gw);
    });
}

namespace detail {
// Accepts [n,d] or [B,n,d]; reports the canonical (B,n,d) and whether a batch
// axis was implied.
struct SeqDims {
    std::size_t B, n, d;
    bool batched;
};
inline SeqDims seq_dims(const Tensor& x) {
    require(x.rank() == 2 || x.rank() == 3, "expected [n,d] or [B,n,d], got " +
                                                shape_str(x.shape));
    if (x.rank() == 2) return {1, x.shape[0], x.shape[1], false};
    return {x.shape[0], x.shape[1], x.shape[2], true};
}
}  // namespace detail

// Depthwise convolution with one kernel row per channel; zero padding at the
// sequence boundaries. Centered mode requires odd k.
inline Var depthwise_conv(Var x, Var w, bool causal) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    auto dims = detail::seq_dims(xv);
    require(wv.rank() == 2 && wv.shape[0] == dims.d,
            "depthwise_conv: weights " + shape_str(wv.shape) + " do not match channels d=" +
                std::to_string(dims.d));
    std::size_t k = wv.shape[1];
    require(causal || k % 2 == 1, "depthwise_conv: centered mode requires odd kernel width, got " +
                                      std::to_string(k));
    Tensor out(xv.shape);
    kernels::depthwise_conv_raw(xv.data.data(), wv.data.data(), out.data.data(), dims.B, dims.n,
                                dims.d, k, causal);
    std::size_t xid = x.id, wid = w.id, self = t.nodes.size();
    return t.push(std::move(out), [xid, wid, self, dims, k, causal](Tape& tp) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv2 = tp.value(xid);
        const Tensor& wv2 = tp.value(wid);
        Tensor gx(xv2.shape), gw(wv2.shape);
        std::size_t B = dims.B, n = dims.n, d = dims.d;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < k; ++j) {
                    long long src = kernels::conv_src((long long)i, (long long)j, (long long)k,
                                                      causal);
                    if (src < 0 || src >= (long long)n) continue;
                    std::size_t xo = (b * n + (std::size_t)src) * d;
                    std::size_t go = (b * n + i) * d;
                    for (std::size_t c = 0; c < d; ++c) {
                        gx.data[xo + c] += wv2.data[c * k + j] * g.data[go + c];
                        gw.data[c * k + j] += xv2.data[xo + c] * g.data[go + c];
                    }
                }
        tp.accumulate(xid, gx);
        tp.accumulate(wid, gw);
    });
}

// Depthwise convolution with a separate kernel per position; channels are
// partitioned into H contiguous groups. kern is [B,n,H,k] (or [n,H,k]).
inline Var dynamic_depthwise_conv(Var x, Var kern, bool causal) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    const Tensor& kv = kern.value();
    auto dims = detail::seq_dims(xv);
    require(kv.rank() == xv.rank() + 1, "dynamic_depthwise_conv: kernel rank mismatch");
    std::size_t H = kv.shape[kv.rank() - 2], k = kv.shape[kv.rank() - 1];
    require(kv.shape[kv.rank() - 3] == dims.n && (!dims.batched || kv.shape[0] == dims.B),
            "dynamic_depthwise_conv: kernels " + shape_str(kv.shape) + " do not match input " +
                shape_str(xv.shape));
    require(dims.d % H == 0, "dynamic_depthwise_conv: H must divide d");
    require(causal || k % 2 == 1, "dynamic_depthwise_conv: centered mode requires odd k");
    Tensor out(xv.shape);
    kernels::dynamic_depthwise_conv_raw(xv.data.data(), kv.data.data(), out.data.data(), dims.B,
                                        dims.n, dims.d, H, k, causal);
    std::size_t xid = x.id, kid = kern.id, self = t.nodes.size();
    return t.push(std::move(out), [xid, kid, self, dims, H, k, causal](Tape& tp) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv2 = tp.value(xid);
        const Tensor& kv2 = tp.value(kid);
        Tensor gx(xv2.shape), gk(kv2.shape);
        std::size_t B = dims.B, n = dims.n, d = dims.d, group = d / H;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < k; ++j) {
                    long long src = kernels::conv_src((long long)i, (long long)j, (long long)k,
                                                      causal);
                    if (src < 0 || src >= (long long)n) continue;
                    std::size_t xo = (b * n + (std::size_t)src) * d;
                    std::size_t go = (b * n + i) * d;
                    std::size_t ko = (b * n + i) * H * k;
                    for (std::size_t c = 0; c < d; ++c) {
                        std::size_t kidx = ko + (c / group) * k + j;
                        gx.data[xo + c] += kv2.data[kidx] * g.data[go + c];
                        gk.data[kidx] += xv2.data[xo + c] * g.data[go + c];
                    }
                }
        tp.accumulate(xid, gx);
        tp.accumulate(kid, gk);
    });
}

// Non-separable convolution with weights [d_out, d_in, k].
inline Var conv_full(Var x, Var w, bool causal) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    auto dims = detail::seq_dims(xv);
    require(wv.rank() == 3 && wv.shape[1] == dims.d,
            "conv_full: weights " + shape_str(wv.shape) + " do not match input channels");
    std::size_t dout = wv.shape[0], k = wv.shape[2];
    require(causal || k % 2 == 1, "conv_full: centered mode requires odd k");
    Shape out_shape = xv.shape;
    out_shape.back() = dout;
    Tensor out(out_shape);
    kernels::conv_full_raw(xv.data.data(), wv.data.data(), out.data.data(), dims.B, dims.n, dims.d,
                           dout, k, causal);
    std::size_t xid = x.id, wid = w.id, self = t.nodes.size();
    return t.push(std::move(out), [xid, wid, self, dims, dout, k, causal](Tape& tp) {
        const Tensor& g = tp.grad(self);
        const Tensor& xv2 = tp.value(xid);
        const Tensor& wv2 = tp.value(wid);
        Tensor gx(xv2.shape), gw(wv2.shape);
        std::size_t B = dims.B, n = dims.n, din = dims.d;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < k; ++j) {
                    long long src = kernels::conv_src((long long)i, (long long)j, (long long)k,
                                                      causal);
                    if (src < 0 || src >= (long long)n) continue;
                    std::size_t xo = (b * n + (std::size_t)src) * din;
                    std::size_t go = (b * n + i) * dout;
                    for (std::size_t co = 0; co < dout; ++co) {
                        double gv = g.data[go + co];
                        if (gv == 0.0) continue;
                        for (std::size_t ci = 0; ci < din; ++ci) {
                            gx.data[xo + ci] += wv2.data[(co * din + ci) * k + j] * gv;
                            gw.data[(co * din + ci) * k + j] += xv2.data[xo + ci] * gv;
                        }
                    }
                }
        tp.accumulate(xid, gx);
        tp.accumulate(wid, gw);
    });
}

}  // namespace convseq
