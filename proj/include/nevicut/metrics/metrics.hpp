#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "nevicut/error.hpp"

namespace nevicut::metrics {

namespace detail {

inline void require_nonempty(std::span<const double> x, const char* what) {
    if (x.empty()) throw InvalidArgument(std::string(what) + ": empty sample");
}

inline std::vector<double> sorted(std::span<const double> x) {
    std::vector<double> s(x.begin(), x.end());
    std::sort(s.begin(), s.end());
    return s;
}

/// Type-7 quantile of sorted values.
inline double q7(const std::vector<double>& s, double p) {
    const double h = (static_cast<double>(s.size()) - 1.0) * p;
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

}  // namespace detail

/// Type-7 (linear interpolation) sample quantile.
inline double quantile(std::span<const double> x, double p) {
    detail::require_nonempty(x, "quantile");
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("quantile: probability must be in [0, 1]");
    return detail::q7(detail::sorted(x), p);
}

/// Empirical CRPS: mean |x - y| - mean |x_j - x_k| / 2, the pair term in
/// O(m log m) via sorted ranks.
inline double crps(std::span<const double> x, double y) {
    detail::require_nonempty(x, "crps");
    const double m = static_cast<double>(x.size());
    auto s = detail::sorted(x);
    double a = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        a += std::abs(s[i] - y);
        pairs += (2.0 * static_cast<double>(i) + 1.0 - m) * s[i];  // sum_{j,k} |x_j - x_k| / 2
    }
    return a / m - pairs / (m * m);
}

/// Interval score from given bounds.
inline double interval_score(double l, double u, double y, double alpha) {
    return (u - l) + (2.0 / alpha) * std::max(0.0, l - y) + (2.0 / alpha) * std::max(0.0, y - u);
}

/// Central (1 - alpha) interval score with empirical type-7 bounds.
inline double interval_score(std::span<const double> x, double y, double alpha = 0.05) {
    detail::require_nonempty(x, "interval_score");
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("interval_score: alpha must be in (0, 1)");
    auto s = detail::sorted(x);
    return interval_score(detail::q7(s, alpha / 2.0), detail::q7(s, 1.0 - alpha / 2.0), y, alpha);
}

/// Weighted interval score for the single central interval: (alpha / 2) * IS.
inline double weighted_interval_score(std::span<const double> x, double y, double alpha = 0.05) {
    return 0.5 * alpha * interval_score(x, y, alpha);
}

struct PointMetrics {
    double mse;
    bool covered;
};

inline PointMetrics point_metrics(std::span<const double> x, double y, double alpha = 0.05) {
    detail::require_nonempty(x, "point_metrics");
    double m = 0.0;
    for (double v : x) m += v;
    m /= static_cast<double>(x.size());
    auto s = detail::sorted(x);
    const double l = detail::q7(s, alpha / 2.0), u = detail::q7(s, 1.0 - alpha / 2.0);
    return {(m - y) * (m - y), l <= y && y <= u};
}

namespace detail {

/// Order statistics of both samples at a common size (the smaller), the
/// larger one resampled at the plotting positions i / (n - 1).
inline std::pair<std::vector<double>, std::vector<double>> matched(std::span<const double> a,
                                                                  std::span<const double> b) {
    require_nonempty(a, "wasserstein");
    require_nonempty(b, "wasserstein");
    auto sa = sorted(a), sb = sorted(b);
    if (sa.size() == sb.size()) return {std::move(sa), std::move(sb)};
    auto& big = sa.size() > sb.size() ? sa : sb;
    const std::size_t n = std::min(sa.size(), sb.size());
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = n == 1 ? q7(big, 0.5) : q7(big, static_cast<double>(i) / static_cast<double>(n - 1));
    big = std::move(r);
    return {std::move(sa), std::move(sb)};
}

}  // namespace detail

inline double wasserstein2_1d(std::span<const double> a, std::span<const double> b) {
    auto [x, y] = detail::matched(a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    return std::sqrt(s / static_cast<double>(x.size()));
}

inline double wasserstein1_1d(std::span<const double> a, std::span<const double> b) {
    auto [x, y] = detail::matched(a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(x[i] - y[i]);
    return s / static_cast<double>(x.size());
}

/// Centered log-ratio transform of a strictly positive composition.
inline std::vector<double> clr(std::span<const double> p) {
    detail::require_nonempty(p, "clr");
    std::vector<double> out(p.size());
    double m = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) {
        if (!(p[c] > 0.0)) throw InvalidArgument("clr: component " + std::to_string(c + 1) + " is not positive");
        out[c] = std::log(p[c]);
        m += out[c];
    }
    m /= static_cast<double>(p.size());
    for (double& v : out) v -= m;
    return out;
}

/// Raised when q puts mass where p has none.
class SupportError : public InvalidArgument {
public:
    explicit SupportError(std::size_t index)
        : InvalidArgument("grid_kl: p is zero where q is positive at grid index " + std::to_string(index)),
          index_(index) {}
    std::size_t index() const { return index_; }

private:
    std::size_t index_;
};

/// KL(q || p) on a uniform grid: both densities renormalized to unit
/// trapezoid mass, then the trapezoid rule on q log(q / p).
inline double grid_kl(std::span<const double> q, std::span<const double> p, double spacing) {
    if (q.size() != p.size()) throw InvalidArgument("grid_kl: grids differ in length");
    if (q.size() < 2) throw InvalidArgument("grid_kl: need at least two grid points");
    if (!(spacing > 0.0)) throw InvalidArgument("grid_kl: spacing must be positive");
    auto mass = [&](std::span<const double> f) {
        double s = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i) {
            if (!(f[i] >= 0.0) || !std::isfinite(f[i])) {
                throw InvalidArgument("grid_kl: invalid density value at grid index " + std::to_string(i));
            }
            s += (i == 0 || i + 1 == f.size() ? 0.5 : 1.0) * f[i];
        }
        return s * spacing;
    };
    const double mq = mass(q), mp = mass(p);
    if (!(mq > 0.0) || !(mp > 0.0)) throw InvalidArgument("grid_kl: a density has zero mass on the grid");
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i] == 0.0) continue;
        if (p[i] == 0.0) throw SupportError(i);
        const double qi = q[i] / mq, pi = p[i] / mp;
        s += (i == 0 || i + 1 == q.size() ? 0.5 : 1.0) * qi * std::log(qi / pi);
    }
    return s * spacing;
}

}  // namespace nevicut::metrics
