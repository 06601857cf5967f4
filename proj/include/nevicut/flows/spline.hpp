#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "nevicut/autodiff/ops.hpp"
#include "nevicut/error.hpp"

namespace nevicut::flows {

/// Shape of a monotone rational-quadratic spline on [-B, B] with identity
/// tails outside. Raw conditioner output per coordinate is laid out as
/// K width logits, K height logits, K-1 interior slope logits.
struct SplineShape {
    std::size_t bins = 8;
    double half_width = 6.0;
    double min_bin_fraction = 1e-3;
    double min_slope = 1e-3;

    std::size_t raw_size() const { return 3 * bins - 1; }
    double min_bin() const { return min_bin_fraction * 2.0 * half_width / static_cast<double>(bins); }

    /// Offset that makes a zero slope logit map to slope 1.
    double slope_offset() const { return std::log(std::expm1(1.0 - min_slope)); }

    void validate() const {
        if (bins < 2) throw InvalidArgument("spline: need at least 2 bins");
        if (!(half_width > 0.0)) throw InvalidArgument("spline: half-width must be positive");
        if (!(min_bin_fraction > 0.0) || min_bin_fraction * static_cast<double>(bins) >= 1.0) {
            throw InvalidArgument("spline: minimum bin fraction out of range");
        }
        if (!(min_slope > 0.0) || min_slope >= 1.0) throw InvalidArgument("spline: minimum slope out of range");
    }
};

/// Knot grid of one spline: K+1 input knots, K+1 output knots and K+1 knot
/// slopes (the two boundary slopes are 1).
struct ActivatedSpline {
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> slope;
    double half_width = 0.0;

    std::size_t bins() const { return x.size() - 1; }

    /// Checks strictly increasing knots spanning [-B, B] and positive slopes.
    void validate() const {
        if (x.size() < 3 || y.size() != x.size() || slope.size() != x.size()) {
            throw InvalidArgument("spline: inconsistent knot arrays");
        }
        for (std::size_t k = 0; k + 1 < x.size(); ++k) {
            if (!(x[k + 1] > x[k]) || !(y[k + 1] > y[k])) throw InvalidArgument("spline: knots not increasing");
        }
        for (double s : slope)
            if (!(s > 0.0)) throw InvalidArgument("spline: non-positive slope");
    }
};

struct SplineResult {
    double value;
    double log_deriv;
};

namespace detail {

inline void softmax_into(std::span<const double> u, std::span<double> out) {
    double m = u[0];
    for (double v : u) m = std::max(m, v);
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        out[i] = std::exp(u[i] - m);
        s += out[i];
    }
    for (double& v : out) v /= s;
}

struct Activation {
    std::vector<double> pw, ph;  // softmax probabilities
    std::vector<double> w, h;    // bin widths and heights
    std::vector<double> s;       // K+1 knot slopes
    std::vector<double> x, y;    // K+1 knots
};

inline void activate(std::span<const double> raw, const SplineShape& shape, Activation& a) {
    const std::size_t K = shape.bins;
    const double B = shape.half_width;
    const double mb = shape.min_bin();
    const double c = 2.0 * B - static_cast<double>(K) * mb;
    a.pw.resize(K);
    a.ph.resize(K);
    a.w.resize(K);
    a.h.resize(K);
    a.s.assign(K + 1, 1.0);
    a.x.resize(K + 1);
    a.y.resize(K + 1);
    softmax_into(raw.subspan(0, K), a.pw);
    softmax_into(raw.subspan(K, K), a.ph);
    const double off = shape.slope_offset();
    for (std::size_t k = 0; k < K; ++k) {
        a.w[k] = mb + c * a.pw[k];
        a.h[k] = mb + c * a.ph[k];
    }
    for (std::size_t j = 1; j < K; ++j) a.s[j] = shape.min_slope + ad::detail::softplus(raw[2 * K + j - 1] + off);
    a.x[0] = -B;
    a.y[0] = -B;
    for (std::size_t k = 0; k < K; ++k) {
        a.x[k + 1] = a.x[k] + a.w[k];
        a.y[k + 1] = a.y[k] + a.h[k];
    }
}

inline std::size_t find_bin(const std::vector<double>& knots, double v) {
    auto it = std::upper_bound(knots.begin(), knots.end(), v);
    std::size_t k = it == knots.begin() ? 0 : static_cast<std::size_t>(it - knots.begin()) - 1;
    return std::min(k, knots.size() - 2);
}

/// Forward map on bin k from bin geometry.
inline SplineResult rq_bin(double z, double xk, double yk, double w, double h, double sa, double sb) {
    const double t = (z - xk) / w;
    const double delta = h / w;
    const double tau = t * (1.0 - t);
    const double num = delta * t * t + sa * tau;
    const double den = delta + (sa + sb - 2.0 * delta) * tau;
    const double m = sb * t * t + 2.0 * delta * tau + sa * (1.0 - t) * (1.0 - t);
    return {yk + h * num / den, 2.0 * std::log(delta) + std::log(m) - 2.0 * std::log(den)};
}

/// Inverse on bin k via the quadratic root that lies in [0, 1].
inline double rq_bin_inverse(double v, double xk, double yk, double w, double h, double sa, double sb) {
    const double delta = h / w;
    const double dy = v - yk;
    const double sum = sa + sb - 2.0 * delta;
    const double a = h * (delta - sa) + dy * sum;
    const double b = h * sa - dy * sum;
    const double c = -delta * dy;
    const double disc = std::max(b * b - 4.0 * a * c, 0.0);
    double t = (2.0 * c) / (-b - std::sqrt(disc));
    if (!std::isfinite(t)) t = 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return xk + t * w;
}

}  // namespace detail

/// Converts raw conditioner outputs (3K-1 values) into a knot grid.
inline ActivatedSpline activate_spline(std::span<const double> raw, const SplineShape& shape) {
    if (raw.size() != shape.raw_size()) throw InvalidArgument("spline: raw parameter length mismatch");
    detail::Activation a;
    detail::activate(raw, shape, a);
    return ActivatedSpline{a.x, a.y, a.s, shape.half_width};
}

/// Forward map. Identity outside [-B, B].
inline SplineResult rqs_forward(double z, const ActivatedSpline& sp) {
    if (std::isnan(z)) throw InvalidArgument("rqs_forward: NaN input");
    const double B = sp.half_width;
    if (z <= -B || z >= B) {
        if (z == -B) return {sp.y.front(), std::log(sp.slope.front())};
        if (z == B) return {sp.y.back(), std::log(sp.slope.back())};
        return {z, 0.0};
    }
    std::size_t k = detail::find_bin(sp.x, z);
    return detail::rq_bin(z, sp.x[k], sp.y[k], sp.x[k + 1] - sp.x[k], sp.y[k + 1] - sp.y[k], sp.slope[k],
                          sp.slope[k + 1]);
}

/// Inverse map by per-bin quadratic root. Returns the log-derivative of the
/// inverse, i.e. minus the forward log-derivative at the recovered point.
inline SplineResult rqs_inverse(double v, const ActivatedSpline& sp) {
    if (std::isnan(v)) throw InvalidArgument("rqs_inverse: NaN input");
    const double B = sp.half_width;
    if (v < -B || v > B) return {v, 0.0};
    std::size_t k = detail::find_bin(sp.y, v);
    double z = detail::rq_bin_inverse(v, sp.x[k], sp.y[k], sp.x[k + 1] - sp.x[k], sp.y[k + 1] - sp.y[k],
                                      sp.slope[k], sp.slope[k + 1]);
    double ld = detail::rq_bin(z, sp.x[k], sp.y[k], sp.x[k + 1] - sp.x[k], sp.y[k + 1] - sp.y[k], sp.slope[k],
                               sp.slope[k + 1])
                    .log_deriv;
    return {z, -ld};
}

namespace detail {

/// Value, log-derivative and reverse-mode partials of one spline row.
/// Accumulates d/dz into *gz and d/draw into graw.
inline void rqs_row_backward(double z, std::span<const double> raw, const SplineShape& shape, double gy, double gl,
                             double* gz, std::span<double> graw, Activation& a) {
    const std::size_t K = shape.bins;
    const double B = shape.half_width;
    if (z < -B || z >= B) {
        *gz += gy;
        return;
    }
    activate(raw, shape, a);
    const std::size_t k = find_bin(a.x, z);
    const double w = a.w[k], h = a.h[k], xk = a.x[k], sa = a.s[k], sb = a.s[k + 1];
    const double t = (z - xk) / w;
    const double delta = h / w;
    const double tau = t * (1.0 - t);
    const double num = delta * t * t + sa * tau;
    const double den = delta + (sa + sb - 2.0 * delta) * tau;
    const double m = sb * t * t + 2.0 * delta * tau + sa * (1.0 - t) * (1.0 - t);

    double d_y0 = gy;
    double d_h = gy * num / den;
    double d_num = gy * h / den;
    double d_den = -gy * h * num / (den * den) - 2.0 * gl / den;
    double d_m = gl / m;
    double d_delta = 2.0 * gl / delta;
    double d_t = 0.0, d_sa = 0.0, d_sb = 0.0;

    d_delta += d_num * t * t;
    d_t += d_num * (2.0 * delta * t + sa * (1.0 - 2.0 * t));
    d_sa += d_num * tau;

    d_delta += d_den * (1.0 - 2.0 * tau);
    d_t += d_den * (sa + sb - 2.0 * delta) * (1.0 - 2.0 * t);
    d_sa += d_den * tau;
    d_sb += d_den * tau;

    d_sb += d_m * t * t;
    d_delta += d_m * 2.0 * tau;
    d_sa += d_m * (1.0 - t) * (1.0 - t);
    d_t += d_m * (2.0 * sb * t + 2.0 * delta * (1.0 - 2.0 * t) - 2.0 * sa * (1.0 - t));

    d_h += d_delta / w;
    double d_w = -d_delta * delta / w;
    *gz += d_t / w;
    double d_x0 = -d_t / w;
    d_w += -d_t * t / w;

    // Bin widths/heights: own bin plus cumulative knot offsets.
    std::vector<double> dw(K, 0.0), dh(K, 0.0);
    dw[k] += d_w;
    dh[k] += d_h;
    for (std::size_t i = 0; i < k; ++i) {
        dw[i] += d_x0;
        dh[i] += d_y0;
    }
    const double c = 2.0 * B - static_cast<double>(K) * shape.min_bin();
    double dotw = 0.0, doth = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
        dotw += a.pw[i] * dw[i];
        doth += a.ph[i] * dh[i];
    }
    for (std::size_t i = 0; i < K; ++i) {
        graw[i] += c * a.pw[i] * (dw[i] - dotw);
        graw[K + i] += c * a.ph[i] * (dh[i] - doth);
    }
    const double off = shape.slope_offset();
    auto add_slope = [&](std::size_t j, double g) {
        if (j == 0 || j == K) return;
        graw[2 * K + j - 1] += g * ad::detail::sigmoid(raw[2 * K + j - 1] + off);
    };
    add_slope(k, d_sa);
    add_slope(k + 1, d_sb);
}

}  // namespace detail

/// Spline transform as a tape primitive. x: N x 1, raw: N x (3K-1).
/// Returns N x 2 with columns (value, log-derivative).
inline ad::Var rqs_transform(ad::Var x, ad::Var raw, const SplineShape& shape) {
    ad::Tape& t = *x.tape;
    const ad::Tensor& xv = x.value();
    const ad::Tensor& rv = raw.value();
    if (xv.cols() != 1 || rv.rows() != xv.rows() || rv.cols() != shape.raw_size()) {
        throw ad::ShapeError(t.next_id(), "rqs", "input " + xv.shape_string() + ", raw " + rv.shape_string() +
                                                     ", expected raw width " + std::to_string(shape.raw_size()));
    }
    ad::Tensor y(xv.rows(), 2);
    detail::Activation a;
    const double B = shape.half_width;
    for (std::size_t i = 0; i < xv.rows(); ++i) {
        const double z = xv[i];
        if (std::isnan(z)) throw ad::NonFiniteError(t.next_id(), "rqs");
        if (z < -B || z >= B) {
            y(i, 0) = z;
            y(i, 1) = 0.0;
            continue;
        }
        detail::activate(rv.row_span(i), shape, a);
        std::size_t k = detail::find_bin(a.x, z);
        SplineResult r = detail::rq_bin(z, a.x[k], a.y[k], a.w[k], a.h[k], a.s[k], a.s[k + 1]);
        y(i, 0) = r.value;
        y(i, 1) = r.log_deriv;
    }
    std::size_t xi = x.id, ri = raw.id;
    return t.record("rqs", std::move(y), {xi, ri}, [xi, ri, shape](ad::Tape& tp, std::size_t self) {
        const ad::Tensor& gy = tp.node(self).grad;
        const ad::Tensor& xv = tp.value(xi);
        const ad::Tensor& rv = tp.value(ri);
        const bool need_x = tp.requires_grad(xi);
        const bool need_r = tp.requires_grad(ri);
        ad::Tensor gx_local(xv.rows(), 1, 0.0);
        ad::Tensor gr_local(rv.rows(), rv.cols(), 0.0);
        detail::Activation a;
        for (std::size_t i = 0; i < xv.rows(); ++i) {
            detail::rqs_row_backward(xv[i], rv.row_span(i), shape, gy(i, 0), gy(i, 1), &gx_local[i],
                                     gr_local.row_span(i), a);
        }
        if (need_x) {
            ad::Tensor& gx = tp.grad(xi);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gx_local[i];
        }
        if (need_r) {
            ad::Tensor& gr = tp.grad(ri);
            for (std::size_t i = 0; i < gr.size(); ++i) gr[i] += gr_local[i];
        }
    });
}

}  // namespace nevicut::flows
