#pragma once

#include "nevicut/models/common.hpp"
#include "nevicut/util/seed.hpp"

namespace nevicut::models {

struct MixtureParts {
    double pi, mu1, mu2;
};

inline MixtureParts mixture_parts(double eta) {
    return {0.2 + 0.5 * sigmoid(4.0 * (eta - 2.0)), 4.0 * std::tanh(eta - 1.0), -4.0 * std::tanh(eta + 1.0)};
}

inline constexpr double kMixtureVar = 1.5;

/// log of pi N(mu1, 1.5) + (1 - pi) N(mu2, 1.5) at theta, with the
/// component constants depending on eta. Optional d/dtheta in `grad`.
inline double mixture_conditional_logpdf(double theta, double eta, double* grad = nullptr) {
    const MixtureParts m = mixture_parts(eta);
    const double a = std::log(m.pi) + normal_logpdf(theta, m.mu1, kMixtureVar);
    const double b = std::log1p(-m.pi) + normal_logpdf(theta, m.mu2, kMixtureVar);
    const double hi = std::max(a, b);
    const double wa = std::exp(a - hi), wb = std::exp(b - hi);
    if (grad) *grad = (wa * (m.mu1 - theta) + wb * (m.mu2 - theta)) / ((wa + wb) * kMixtureVar);
    return hi + std::log(wa + wb);
}

/// The target itself plays the role of the model: log_lik = the mixture
/// log-density, log_prior = 0.
class MixtureModel : public cut::DownstreamModel {
public:
    std::string name() const override { return "mixture"; }
    std::size_t theta_dim() const override { return 1; }
    std::size_t eta_dim() const override { return 1; }
    double log_lik(std::span<const double> th, std::span<const double> eta, std::span<double> g) const override {
        return mixture_conditional_logpdf(th[0], eta[0], g.empty() ? nullptr : &g[0]);
    }
    double log_prior(std::span<const double>, std::span<const double>, std::span<double> g) const override {
        if (!g.empty()) g[0] = 0.0;
        return 0.0;
    }
};

inline std::map<std::string, double> mixture_defaults() { return {{"gamma_shape", 2.0}, {"gamma_rate", 1.0}}; }

inline Dataset simulate_mixture(const ExperimentSpec& s) {
    Dataset d;
    d.model = "mixture";
    d.seed = s.seed;
    d.params = s.params;
    return d;
}

inline Experiment make_mixture_experiment(const Dataset& d) {
    Experiment e;
    e.data = d;
    e.model = std::make_shared<MixtureModel>();
    const double shape = d.param("gamma_shape"), rate = d.param("gamma_rate");
    if (!(shape > 0.0) || !(rate > 0.0)) throw InvalidArgument("mixture: gamma_shape and gamma_rate must be positive");
    e.upstream = [shape, rate](std::size_t n, std::uint64_t seed) {
        std::mt19937_64 rng(derive_seed(seed, {streams::upstream}));
        std::gamma_distribution<double> g(shape, 1.0 / rate);
        cut::UpstreamSamples u;
        u.eta = ad::Tensor(n, 1);
        for (std::size_t i = 0; i < n; ++i) u.eta[i] = g(rng);
        return u;
    };
    return e;
}

}  // namespace nevicut::models
