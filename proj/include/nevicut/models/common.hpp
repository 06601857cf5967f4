#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nevicut/baselines/mcmc.hpp"
#include "nevicut/cut/model.hpp"
#include "nevicut/models/dataset.hpp"

namespace nevicut::models {

inline constexpr double kLog2Pi = 1.8378770664093454836;

inline double normal_logpdf(double x, double mean, double var) {
    const double r = x - mean;
    return -0.5 * (kLog2Pi + std::log(var) + r * r / var);
}

/// log(1 + exp(x)) without overflow.
inline double log1pexp(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Dirichlet draw via normalized gammas; components floored away from 0.
inline std::vector<double> dirichlet_draw(std::span<const double> alpha, std::mt19937_64& rng) {
    std::vector<double> p(alpha.size());
    double s = 0.0;
    for (std::size_t c = 0; c < alpha.size(); ++c) {
        std::gamma_distribution<double> g(alpha[c], 1.0);
        p[c] = std::max(g(rng), 1e-300);
        s += p[c];
    }
    for (double& v : p) v /= s;
    return p;
}

/// Everything a benchmark needs to know about one built-in experiment.
struct Experiment {
    Dataset data;
    std::shared_ptr<const cut::DownstreamModel> model;
    /// N draws from p(eta | D1).
    std::function<cut::UpstreamSamples(std::size_t n, std::uint64_t seed)> upstream;
    /// log p(D1 | eta) + log p(eta); empty when full Bayes is not defined.
    baselines::LogPdf upstream_logpdf;
    std::vector<double> eta_init;  // full-Bayes start for eta
    /// (theta index, true value) pairs scored by the benchmarks.
    std::vector<std::pair<std::size_t, double>> scored;
};

/// Full-Bayes joint over the concatenation (theta, eta).
inline baselines::LogPdf joint_logpdf(const Experiment& e) {
    if (!e.upstream_logpdf) throw InvalidArgument("experiment '" + e.data.model + "' has no full-Bayes joint");
    const std::size_t d = e.model->theta_dim();
    auto model = e.model;
    auto up = e.upstream_logpdf;
    return [model, up, d](std::span<const double> x) {
        auto th = x.first(d);
        auto eta = x.subspan(d);
        double v = up(eta);
        if (!std::isfinite(v)) return cut::neg_inf;
        v += model->log_lik(th, eta, {}) + model->log_prior(th, eta, {});
        return std::isfinite(v) ? v : cut::neg_inf;
    };
}

}  // namespace nevicut::models
