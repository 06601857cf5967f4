#pragma once

#include "nevicut/baselines/analytic.hpp"
#include "nevicut/models/common.hpp"
#include "nevicut/util/seed.hpp"

namespace nevicut::models {

/// Downstream half of the two-sample bias model. theta = bias, eta = phi:
/// w_j ~ N(phi + bias, 1), bias ~ N(0, 1/delta2). Decomposable over the w_j.
class GaussianBiasModel : public cut::DownstreamModel {
public:
    GaussianBiasModel(std::vector<double> w, double delta2) : w_(std::move(w)), delta2_(delta2) {
        if (w_.empty()) throw InvalidArgument("gaussian_bias: empty w");
        if (!(delta2 > 0.0)) throw InvalidArgument("gaussian_bias: delta2 must be positive");
        for (double v : w_) {
            s_ += v;
            ss_ += v * v;
        }
    }
    std::string name() const override { return "gaussian_bias"; }
    std::size_t theta_dim() const override { return 1; }
    std::size_t eta_dim() const override { return 1; }
    std::size_t units() const override { return w_.size(); }

    double log_lik(std::span<const double> th, std::span<const double> eta, std::span<double> g) const override {
        const double m = th[0] + eta[0], n = static_cast<double>(w_.size());
        if (!g.empty()) g[0] = s_ - n * m;
        return -0.5 * n * kLog2Pi - 0.5 * (ss_ - 2.0 * m * s_ + n * m * m);
    }
    double log_lik_units(std::span<const double> th, std::span<const double> eta, std::span<const std::size_t> u,
                         std::span<double> g) const override {
        const double m = th[0] + eta[0];
        double v = 0.0, d = 0.0;
        for (std::size_t i : u) {
            const double r = w_.at(i) - m;
            v += -0.5 * (kLog2Pi + r * r);
            d += r;
        }
        if (!g.empty()) g[0] = d;
        return v;
    }
    double log_prior(std::span<const double> th, std::span<const double>, std::span<double> g) const override {
        if (!g.empty()) g[0] = -delta2_ * th[0];
        return normal_logpdf(th[0], 0.0, 1.0 / delta2_);
    }
    std::vector<double> initial_theta(std::span<const double> eta) const override {
        const double n = static_cast<double>(w_.size());
        return {(s_ - n * eta[0]) / (n + delta2_)};
    }

private:
    std::vector<double> w_;
    double delta2_, s_ = 0.0, ss_ = 0.0;
};

inline std::map<std::string, double> gaussian_bias_defaults() {
    return {{"n1", 100}, {"n2", 1000}, {"phi", 0.0}, {"bias", 1.0}, {"delta1", 1.0}, {"delta2", 100.0}};
}

inline Dataset simulate_gaussian_bias(const ExperimentSpec& s) {
    Dataset d;
    d.model = "gaussian_bias";
    d.seed = s.seed;
    d.params = s.params;
    const std::size_t n1 = d.count("n1"), n2 = d.count("n2");
    const double phi = d.param("phi"), bias = d.param("bias");
    std::mt19937_64 rng(derive_seed(s.seed, {streams::simulate}));
    std::normal_distribution<double> nd(0.0, 1.0);
    auto& z = d.arrays["z"];
    auto& w = d.arrays["w"];
    for (std::size_t i = 0; i < n1; ++i) z.push_back(phi + nd(rng));
    for (std::size_t j = 0; j < n2; ++j) w.push_back(phi + bias + nd(rng));
    d.truth["phi"] = {phi};
    d.truth["bias"] = {bias};
    return d;
}

inline baselines::GaussianBiasData gaussian_bias_stats(const Dataset& d) {
    baselines::GaussianBiasData x;
    for (double v : d.array("z")) x.s_z += v;
    for (double v : d.array("w")) x.s_w += v;
    x.n1 = static_cast<double>(d.array("z").size());
    x.n2 = static_cast<double>(d.array("w").size());
    return x;
}

inline Experiment make_gaussian_bias_experiment(const Dataset& d) {
    Experiment e;
    e.data = d;
    const double delta1 = d.param("delta1"), delta2 = d.param("delta2");
    if (!(delta1 > 0.0)) throw InvalidArgument("gaussian_bias: delta1 must be positive");
    e.model = std::make_shared<GaussianBiasModel>(d.array("w"), delta2);
    const auto x = gaussian_bias_stats(d);
    const double prec = x.n1 + delta1, mean = x.s_z / prec;
    // phi | z is conjugate normal, so upstream draws are exact.
    e.upstream = [mean, prec](std::size_t n, std::uint64_t seed) {
        std::mt19937_64 rng(derive_seed(seed, {streams::upstream}));
        std::normal_distribution<double> nd(mean, 1.0 / std::sqrt(prec));
        cut::UpstreamSamples u;
        u.eta = ad::Tensor(n, 1);
        for (std::size_t i = 0; i < n; ++i) u.eta[i] = nd(rng);
        return u;
    };
    const double sz = x.s_z, n1 = x.n1;
    double szz = 0.0;
    for (double v : d.array("z")) szz += v * v;
    e.upstream_logpdf = [sz, szz, n1, delta1](std::span<const double> eta) {
        const double p = eta[0];
        return -0.5 * n1 * kLog2Pi - 0.5 * (szz - 2.0 * p * sz + n1 * p * p) + normal_logpdf(p, 0.0, 1.0 / delta1);
    };
    e.eta_init = {mean};
    e.scored = {{0, d.truth.at("bias").at(0)}};
    return e;
}

}  // namespace nevicut::models
