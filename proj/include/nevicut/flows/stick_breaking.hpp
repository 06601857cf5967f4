#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "nevicut/autodiff/ops.hpp"
#include "nevicut/error.hpp"

namespace nevicut::flows {

struct SimplexResult {
    std::vector<double> p;
    double logdet;
};

namespace detail {

// One row: y has C-1 entries, p receives C entries. Returns the log-Jacobian.
inline double stick_row(std::span<const double> y, std::span<double> p) {
    const std::size_t C = y.size() + 1;
    double rem = 1.0;
    double ld = 0.0;
    for (std::size_t k = 0; k + 1 < C; ++k) {
        const double a = y[k] - std::log(static_cast<double>(C - k - 1));
        const double v = ad::detail::sigmoid(a);
        p[k] = v * rem;
        rem *= 1.0 - v;
        // log v + (C-k') log(1-v) with 1-based k' = k+1
        ld += -ad::detail::softplus(-a) - static_cast<double>(C - k - 1) * ad::detail::softplus(a);
    }
    p[C - 1] = rem;
    return ld;
}

}  // namespace detail

/// Stick-breaking map from R^{C-1} onto the open C-simplex.
inline SimplexResult stick_breaking(std::span<const double> y) {
    if (y.empty()) throw InvalidArgument("stick_breaking: need at least one coordinate");
    for (double v : y)
        if (!std::isfinite(v)) throw InvalidArgument("stick_breaking: non-finite input");
    SimplexResult r{std::vector<double>(y.size() + 1), 0.0};
    r.logdet = detail::stick_row(y, r.p);
    return r;
}

/// Inverse of stick_breaking on the first C-1 simplex coordinates.
/// Returns the unconstrained vector and the forward log-Jacobian there.
inline SimplexResult stick_breaking_inverse(std::span<const double> p) {
    const std::size_t C = p.size();
    if (C < 2) throw InvalidArgument("stick_breaking_inverse: need at least two components");
    SimplexResult r{std::vector<double>(C - 1), 0.0};
    double rem = 1.0;
    for (std::size_t k = 0; k + 1 < C; ++k) {
        if (!(p[k] > 0.0) || !(rem > p[k])) throw InvalidArgument("stick_breaking_inverse: point not in the open simplex");
        const double v = p[k] / rem;
        r.p[k] = std::log(v) - std::log1p(-v) + std::log(static_cast<double>(C - k - 1));
        rem -= p[k];
    }
    std::vector<double> tmp(C);
    r.logdet = detail::stick_row(r.p, tmp);
    return r;
}

/// Tape primitive: y (N x (C-1)) -> N x (C+1) holding p_1..p_C and the
/// log-Jacobian in the last column.
inline ad::Var stick_breaking(ad::Var y) {
    ad::Tape& t = *y.tape;
    const ad::Tensor& yv = y.value();
    const std::size_t C = yv.cols() + 1;
    ad::Tensor out(yv.rows(), C + 1);
    for (std::size_t i = 0; i < yv.rows(); ++i) {
        auto o = out.row_span(i);
        o[C] = detail::stick_row(yv.row_span(i), o.subspan(0, C));
    }
    std::size_t yi = y.id;
    return t.record("stick_breaking", std::move(out), {yi}, [yi, C](ad::Tape& tp, std::size_t self) {
        const ad::Tensor& g = tp.node(self).grad;
        const ad::Tensor& yv = tp.value(yi);
        ad::Tensor& gy = tp.grad(yi);
        std::vector<double> v(C - 1), rem(C);
        for (std::size_t i = 0; i < yv.rows(); ++i) {
            rem[0] = 1.0;
            for (std::size_t k = 0; k + 1 < C; ++k) {
                v[k] = ad::detail::sigmoid(yv(i, k) - std::log(static_cast<double>(C - k - 1)));
                rem[k + 1] = rem[k] * (1.0 - v[k]);
            }
            const double gl = g(i, C);
            double grem = g(i, C - 1);
            for (std::size_t k = C - 1; k-- > 0;) {
                const double gp = g(i, k);
                const double gv = gp * rem[k] - grem * rem[k];
                grem = gp * v[k] + grem * (1.0 - v[k]);
                const double dld = (1.0 - v[k]) - static_cast<double>(C - k - 1) * v[k];
                gy(i, k) += gv * v[k] * (1.0 - v[k]) + gl * dld;
            }
        }
    });
}

}  // namespace nevicut::flows
