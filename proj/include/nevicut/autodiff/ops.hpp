#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "nevicut/autodiff/tape.hpp"

namespace nevicut::ad {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline ConstMap map(const Tensor& t) { return ConstMap(t.data().data(), t.rows(), t.cols()); }
inline MutMap map(Tensor& t) { return MutMap(t.data().data(), t.rows(), t.cols()); }

inline Tape& same_tape(const char* op, Var a, Var b) {
    if (a.tape != b.tape) throw Error(std::string(op) + ": operands live on different tapes");
    return *a.tape;
}

inline void require_same_shape(const char* op, Var a, Var b) {
    if (!a.value().same_shape(b.value())) {
        throw ShapeError(a.tape->next_id(), op, a.value().shape_string() + " vs " + b.value().shape_string());
    }
}

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

/// Elementwise map with derivative dy/dx = df(x, y).
template <class F, class DF>
Var unary(const char* op, Var x, F f, DF df) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    Tensor y(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
    std::size_t xi = x.id;
    return t.record(op, std::move(y), {xi}, [xi, df](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.node(self).grad;
        const Tensor& xv = tp.value(xi);
        const Tensor& yv = tp.value(self);
        Tensor& gx = tp.grad(xi);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * df(xv[i], yv[i]);
    });
}

}  // namespace detail

inline double leaky_relu_slope() { return 0.01; }

// ---- elementwise arithmetic -------------------------------------------------

inline Var add(Var a, Var b) {
    Tape& t = detail::same_tape("add", a, b);
    detail::require_same_shape("add", a, b);
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
    std::size_t ai = a.id, bi = b.id;
    return t.record("add", std::move(y), {ai, bi}, [ai, bi](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.node(self).grad;
        if (tp.requires_grad(ai)) {
            Tensor& g = tp.grad(ai);
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
        }
        if (tp.requires_grad(bi)) {
            Tensor& g = tp.grad(bi);
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
        }
    });
}

inline Var sub(Var a, Var b) {
    Tape& t = detail::same_tape("sub", a, b);
    detail::require_same_shape("sub", a, b);
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
    std::size_t ai = a.id, bi = b.id;
    return t.record("sub", std::move(y), {ai, bi}, [ai, bi](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.node(self).grad;
        if (tp.requires_grad(ai)) {
            Tensor& g = tp.grad(ai);
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
        }
        if (tp.requires_grad(bi)) {
            Tensor& g = tp.grad(bi);
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] -= gy[i];
        }
    });
}

inline Var mul(Var a, Var b) {
    Tape& t = detail::same_tape("mul", a, b);
    detail::require_same_shape("mul", a, b);
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
    std::size_t ai = a.id, bi = b.id;
    return t.record("mul", std::move(y), {ai, bi}, [ai, bi](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.node(self).grad;
        if (tp.requires_grad(ai)) {
            Tensor& g = tp.grad(ai);
            const Tensor& bv = tp.value(bi);
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * bv[i];
        }
        if (tp.requires_grad(bi)) {
            Tensor& g = tp.grad(bi);
            const Tensor& av = tp.value(ai);
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * av[i];
        }
    });
}

inline Var div(Var a, Var b) {
    Tape& t = detail::same_tape("div", a, b);
    detail::require_same_shape("div", a, b);
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] /= b.value()[i];
    std::size_t ai = a.id, bi = b.id;
    return t.record("div", std::move(y), {ai, bi}, [ai, bi](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.node(self).grad;
        const Tensor& bv = tp.value(bi);
        if (tp.requires_grad(ai)) {
            Tensor& g = tp.grad(ai);
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] / bv[i];
        }
        if (tp.requires_grad(bi)) {
            Tensor& g = tp.grad(bi);
            const Tensor& yv = tp.value(self);
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] -= gy[i] * yv[i] / bv[i];
        }
    });
}

inline Var scale(Var x, double c) {
    return detail::unary("scale", x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Var add_scalar(Var x, double c) {
    return detail::unary("add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Var neg(Var x) { return scale(x, -1.0); }

inline Var square(Var x) {
    return detail::unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

/// Elementwise product with a constant tensor of the same shape.
inline Var mul_const(Var x, const Tensor& c) {
    Tape& t = *x.tape;
    if (!x.value().same_shape(c)) {
        throw ShapeError(t.next_id(), "mul_const", x.value().shape_string() + " vs " + c.shape_string());
    }
    Tensor y = x.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= c[i];
    std::size_t xi = x.id;
    return t.record("mul_const", std::move(y), {xi}, [xi, c](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.node(self).grad;
        Tensor& g = tp.grad(xi);
        for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i] * c[i];
    });
}

/// Adds a 1 x cols row vector to every row of x.
inline Var add_row(Var x, Var r) {
    Tape& t = detail::same_tape("add_row", x, r);
    const Tensor& xv = x.value();
    const Tensor& rv = r.value();
    if (rv.rows() != 1 || rv.cols() != xv.cols()) {
        throw ShapeError(t.next_id(), "add_row", xv.shape_string() + " + row " + rv.shape_string());
    }
    Tensor y = xv;
    for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += rv(0, j);
    std::size_t xi = x.id, ri = r.id;
    return t.record("add_row", std::move(y), {xi, ri}, [xi, ri](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.node(self).grad;
        if (tp.requires_grad(xi)) {
            Tensor& g = tp.grad(xi);
            for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
        }
        if (tp.requires_grad(ri)) {
            Tensor& g = tp.grad(ri);
            for (std::size_t i = 0; i < gy.rows(); ++i)
                for (std::size_t j = 0; j < gy.cols(); ++j) g(0, j) += gy(i, j);
        }
    });
}

// ---- activations -----------------------------------------------------------

inline Var relu(Var x) {
    return detail::unary(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(Var x) {
    const double a = leaky_relu_slope();
    return detail::unary(
        "leaky_relu", x, [a](double v) { return v > 0.0 ? v : a * v; },
        [a](double v, double) { return v > 0.0 ? 1.0 : a; });
}

inline Var tanh(Var x) {
    return detail::unary(
        "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var x) {
    return detail::unary(
        "sigmoid", x, [](double v) { return detail::sigmoid(v); }, [](double, double y) { return y * (1.0 - y); });
}

inline Var softplus(Var x) {
    return detail::unary(
        "softplus", x, [](double v) { return detail::softplus(v); },
        [](double v, double) { return detail::sigmoid(v); });
}

inline Var exp(Var x) {
    return detail::unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(Var x) {
    return detail::unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var abs(Var x) {
    return detail::unary(
        "abs", x, [](double v) { return std::fabs(v); }, [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

/// Clamp to constant bounds; the gradient is zero where clamping is active.
inline Var clip(Var x, double lo, double hi) {
    return detail::unary(
        "clip", x, [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
        [lo, hi](double v, double) { return (v < lo || v > hi) ? 0.0 : 1.0; });
}

/// Clamp to elementwise bounds that are themselves differentiable.
inline Var clip(Var x, Var lo, Var hi) {
    Tape& t = detail::same_tape("clip", x, lo);
    detail::require_same_shape("clip", x, lo);
    detail::require_same_shape("clip", x, hi);
    const Tensor& xv = x.value();
    const Tensor& lv = lo.value();
    const Tensor& hv = hi.value();
    Tensor y(xv.rows(), xv.cols());
    // 0 = passthrough, 1 = lower bound active, 2 = upper bound active
    std::vector<unsigned char> which(xv.size(), 0);
    for (std::size_t i = 0; i < xv.size(); ++i) {
        if (lv[i] > hv[i]) throw ShapeError(t.next_id(), "clip", "lower bound exceeds upper bound");
        if (xv[i] < lv[i]) {
            y[i] = lv[i];
            which[i] = 1;
        } else if (xv[i] > hv[i]) {
            y[i] = hv[i];
            which[i] = 2;
        } else {
            y[i] = xv[i];
        }
    }
    std::size_t xi = x.id, li = lo.id, hi_id = hi.id;
    return t.record("clip", std::move(y), {xi, li, hi_id},
                    [xi, li, hi_id, which = std::move(which)](Tape& tp, std::size_t self) {
                        const Tensor& gy = tp.node(self).grad;
                        std::size_t targets[3] = {xi, li, hi_id};
                        for (int k = 0; k < 3; ++k) {
                            if (!tp.requires_grad(targets[k])) continue;
                            Tensor& g = tp.grad(targets[k]);
                            for (std::size_t i = 0; i < gy.size(); ++i)
                                if (which[i] == k) g[i] += gy[i];
                        }
                    });
}

// ---- reductions and linear algebra -----------------------------------------

inline Var sum(Var x) {
    Tape& t = *x.tape;
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    std::size_t xi = x.id;
    return t.record("sum", Tensor::scalar(s), {xi}, [xi](Tape& tp, std::size_t self) {
        double g0 = tp.node(self).grad[0];
        Tensor& g = tp.grad(xi);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += g0;
    });
}

inline Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

/// Row sums: N x k -> N x 1.
inline Var sum_cols(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    Tensor y(xv.rows(), 1);
    for (std::size_t i = 0; i < xv.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < xv.cols(); ++j) s += xv(i, j);
        y[i] = s;
    }
    std::size_t xi = x.id;
    return t.record("sum_cols", std::move(y), {xi}, [xi](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.node(self).grad;
        Tensor& g = tp.grad(xi);
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) += gy[i];
    });
}

inline Var matmul(Var a, Var b) {
    Tape& t = detail::same_tape("matmul", a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.cols() != bv.rows()) {
        throw ShapeError(t.next_id(), "matmul", av.shape_string() + " * " + bv.shape_string());
    }
    Tensor y(av.rows(), bv.cols());
    detail::map(y).noalias() = detail::map(av) * detail::map(bv);
    std::size_t ai = a.id, bi = b.id;
    return t.record("matmul", std::move(y), {ai, bi}, [ai, bi](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.node(self).grad;
        if (tp.requires_grad(ai)) {
            detail::map(tp.grad(ai)).noalias() += detail::map(gy) * detail::map(tp.value(bi)).transpose();
        }
        if (tp.requires_grad(bi)) {
            detail::map(tp.grad(bi)).noalias() += detail::map(tp.value(ai)).transpose() * detail::map(gy);
        }
    });
}

/// x W + b with x: N x in, W: in x out, b: 1 x out.
inline Var affine(Var x, Var w, Var b) {
    Tape& t = detail::same_tape("affine", x, w);
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const Tensor& bv = b.value();
    if (xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols()) {
        throw ShapeError(t.next_id(), "affine",
                         xv.shape_string() + " * " + wv.shape_string() + " + " + bv.shape_string());
    }
    Tensor y(xv.rows(), wv.cols());
    auto ym = detail::map(y);
    ym.noalias() = detail::map(xv) * detail::map(wv);
    ym.rowwise() += detail::map(bv).row(0);
    std::size_t xi = x.id, wi = w.id, bi = b.id;
    return t.record("affine", std::move(y), {xi, wi, bi}, [xi, wi, bi](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.node(self).grad;
        auto gym = detail::map(gy);
        if (tp.requires_grad(xi)) {
            detail::map(tp.grad(xi)).noalias() += gym * detail::map(tp.value(wi)).transpose();
        }
        if (tp.requires_grad(wi)) {
            detail::map(tp.grad(wi)).noalias() += detail::map(tp.value(xi)).transpose() * gym;
        }
        if (tp.requires_grad(bi)) {
            detail::map(tp.grad(bi)).row(0) += gym.colwise().sum();
        }
    });
}

inline Var transpose(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    Tensor y(xv.cols(), xv.rows());
    detail::map(y) = detail::map(xv).transpose();
    std::size_t xi = x.id;
    return t.record("transpose", std::move(y), {xi}, [xi](Tape& tp, std::size_t self) {
        detail::map(tp.grad(xi)) += detail::map(tp.node(self).grad).transpose();
    });
}

/// 1 x d row -> d x d diagonal matrix.
inline Var diag(Var r) {
    Tape& t = *r.tape;
    const Tensor& rv = r.value();
    if (rv.rows() != 1) throw ShapeError(t.next_id(), "diag", "expected a row vector, got " + rv.shape_string());
    std::size_t d = rv.cols();
    Tensor y(d, d, 0.0);
    for (std::size_t j = 0; j < d; ++j) y(j, j) = rv(0, j);
    std::size_t ri = r.id;
    return t.record("diag", std::move(y), {ri}, [ri, d](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.node(self).grad;
        Tensor& g = tp.grad(ri);
        for (std::size_t j = 0; j < d; ++j) g(0, j) += gy(j, j);
    });
}

/// Row-wise softmax.
inline Var softmax(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    Tensor y(xv.rows(), xv.cols());
    for (std::size_t i = 0; i < xv.rows(); ++i) {
        double m = xv(i, 0);
        for (std::size_t j = 1; j < xv.cols(); ++j) m = std::max(m, xv(i, j));
        double s = 0.0;
        for (std::size_t j = 0; j < xv.cols(); ++j) {
            y(i, j) = std::exp(xv(i, j) - m);
            s += y(i, j);
        }
        for (std::size_t j = 0; j < xv.cols(); ++j) y(i, j) /= s;
    }
    std::size_t xi = x.id;
    return t.record("softmax", std::move(y), {xi}, [xi](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.node(self).grad;
        const Tensor& yv = tp.value(self);
        Tensor& g = tp.grad(xi);
        for (std::size_t i = 0; i < yv.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < yv.cols(); ++j) dot += gy(i, j) * yv(i, j);
            for (std::size_t j = 0; j < yv.cols(); ++j) g(i, j) += yv(i, j) * (gy(i, j) - dot);
        }
    });
}

// ---- structural ------------------------------------------------------------

inline Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw Error("concat_cols: no operands");
    Tape& t = *parts.front().tape;
    std::size_t rows = parts.front().rows();
    std::size_t cols = 0;
    for (const auto& p : parts) {
        if (p.tape != &t) throw Error("concat_cols: operands live on different tapes");
        if (p.rows() != rows) {
            throw ShapeError(t.next_id(), "concat_cols", "row count " + std::to_string(p.rows()) + " vs " +
                                                             std::to_string(rows));
        }
        cols += p.cols();
    }
    Tensor y(rows, cols);
    std::vector<std::size_t> ids, offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        const Tensor& pv = p.value();
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < pv.cols(); ++j) y(i, off + j) = pv(i, j);
        ids.push_back(p.id);
        offsets.push_back(off);
        off += pv.cols();
    }
    return t.record("concat_cols", std::move(y), ids, [ids, offsets](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.node(self).grad;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!tp.requires_grad(ids[k])) continue;
            Tensor& g = tp.grad(ids[k]);
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) += gy(i, offsets[k] + j);
        }
    });
}

/// Columns [begin, end).
inline Var slice_cols(Var x, std::size_t begin, std::size_t end) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    if (begin > end || end > xv.cols()) {
        throw ShapeError(t.next_id(), "slice_cols",
                         "range [" + std::to_string(begin) + "," + std::to_string(end) + ") of " + xv.shape_string());
    }
    Tensor y(xv.rows(), end - begin);
    for (std::size_t i = 0; i < xv.rows(); ++i)
        for (std::size_t j = begin; j < end; ++j) y(i, j - begin) = xv(i, j);
    std::size_t xi = x.id;
    return t.record("slice_cols", std::move(y), {xi}, [xi, begin](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.node(self).grad;
        Tensor& g = tp.grad(xi);
        for (std::size_t i = 0; i < gy.rows(); ++i)
            for (std::size_t j = 0; j < gy.cols(); ++j) g(i, begin + j) += gy(i, j);
    });
}

/// Reverses the column order.
inline Var reverse_cols(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    std::size_t c = xv.cols();
    Tensor y(xv.rows(), c);
    for (std::size_t i = 0; i < xv.rows(); ++i)
        for (std::size_t j = 0; j < c; ++j) y(i, j) = xv(i, c - 1 - j);
    std::size_t xi = x.id;
    return t.record("reverse_cols", std::move(y), {xi}, [xi, c](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.node(self).grad;
        Tensor& g = tp.grad(xi);
        for (std::size_t i = 0; i < gy.rows(); ++i)
            for (std::size_t j = 0; j < c; ++j) g(i, c - 1 - j) += gy(i, j);
    });
}

/// Each row repeated `times` times consecutively: N x k -> (N*times) x k.
inline Var repeat_rows(Var x, std::size_t times) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    Tensor y(xv.rows() * times, xv.cols());
    for (std::size_t i = 0; i < xv.rows(); ++i)
        for (std::size_t r = 0; r < times; ++r)
            for (std::size_t j = 0; j < xv.cols(); ++j) y(i * times + r, j) = xv(i, j);
    std::size_t xi = x.id;
    return t.record("repeat_rows", std::move(y), {xi}, [xi, times](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.node(self).grad;
        Tensor& g = tp.grad(xi);
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t r = 0; r < times; ++r)
                for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) += gy(i * times + r, j);
    });
}

/// Sums consecutive groups of `group` rows: (N*group) x k -> N x k.
inline Var group_sum_rows(Var x, std::size_t group) {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    if (group == 0 || xv.rows() % group != 0) {
        throw ShapeError(t.next_id(), "group_sum_rows",
                         xv.shape_string() + " not divisible into groups of " + std::to_string(group));
    }
    std::size_t n = xv.rows() / group;
    Tensor y(n, xv.cols(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < group; ++r)
            for (std::size_t j = 0; j < xv.cols(); ++j) y(i, j) += xv(i * group + r, j);
    std::size_t xi = x.id;
    return t.record("group_sum_rows", std::move(y), {xi}, [xi, group](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.node(self).grad;
        Tensor& g = tp.grad(xi);
        for (std::size_t i = 0; i < gy.rows(); ++i)
            for (std::size_t r = 0; r < group; ++r)
                for (std::size_t j = 0; j < gy.cols(); ++j) g(i * group + r, j) += gy(i, j);
    });
}

/// Row-wise scalar function evaluated outside the tape: `values` (N x 1) are
/// f(x_i) and `grads` (N x k) hold df/dx_i.
inline Var rowwise_external(Var x, Tensor values, Tensor grads, const char* op = "external") {
    Tape& t = *x.tape;
    const Tensor& xv = x.value();
    if (values.rows() != xv.rows() || values.cols() != 1 || !grads.same_shape(xv)) {
        throw ShapeError(t.next_id(), op,
                         "values " + values.shape_string() + ", grads " + grads.shape_string() + " for input " +
                             xv.shape_string());
    }
    std::size_t xi = x.id;
    return t.record(op, std::move(values), {xi}, [xi, grads = std::move(grads)](Tape& tp, std::size_t self) {
        const Tensor& gy = tp.node(self).grad;
        Tensor& g = tp.grad(xi);
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) += gy[i] * grads(i, j);
    });
}

}  // namespace nevicut::ad
