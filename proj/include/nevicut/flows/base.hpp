#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>

#include "nevicut/autodiff/tensor.hpp"
#include "nevicut/error.hpp"

namespace nevicut::flows {

enum class BaseKind { standard_normal, student_t };

struct BaseDist {
    BaseKind kind = BaseKind::standard_normal;
    double df = 5.0;

    void validate() const {
        if (kind == BaseKind::student_t && !(df > 0.0)) throw InvalidArgument("base: Student-t needs df > 0");
    }
};

inline BaseKind parse_base_kind(const std::string& s) {
    if (s == "standard-normal" || s == "normal") return BaseKind::standard_normal;
    if (s == "student-t") return BaseKind::student_t;
    throw InvalidArgument("unknown base distribution '" + s + "'");
}

inline std::string to_string(BaseKind k) { return k == BaseKind::standard_normal ? "standard-normal" : "student-t"; }

/// n x d matrix of i.i.d. base draws.
inline ad::Tensor base_sample(std::size_t n, std::size_t d, const BaseDist& base, std::mt19937_64& rng) {
    if (n == 0 || d == 0) throw InvalidArgument("base_sample: need n >= 1 and d >= 1");
    base.validate();
    ad::Tensor z(n, d);
    if (base.kind == BaseKind::standard_normal) {
        std::normal_distribution<double> nd;
        for (double& v : z.data()) v = nd(rng);
    } else {
        std::student_t_distribution<double> td(base.df);
        for (double& v : z.data()) v = td(rng);
    }
    return z;
}

inline ad::Tensor base_sample(std::size_t n, std::size_t d, const BaseDist& base, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return base_sample(n, d, base, rng);
}

/// Joint log-density of one base vector (independent coordinates).
inline double base_logpdf(std::span<const double> z, const BaseDist& base) {
    double lp = 0.0;
    if (base.kind == BaseKind::standard_normal) {
        const double c = -0.5 * std::log(2.0 * std::numbers::pi);
        for (double v : z) lp += c - 0.5 * v * v;
    } else {
        const double nu = base.df;
        const double c = std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * std::numbers::pi);
        for (double v : z) lp += c - 0.5 * (nu + 1.0) * std::log1p(v * v / nu);
    }
    return lp;
}

}  // namespace nevicut::flows
