#pragma once

#include "nevicut/models/common.hpp"
#include "nevicut/util/seed.hpp"

namespace nevicut::models {

/// Cancer incidence given prevalence: w_i ~ Poisson(T_i exp(t1 + t2 gamma_i)),
/// theta = (t1, t2) ~ N(0, prior_var I), eta = gamma (one prevalence per row).
class HpvModel : public cut::DownstreamModel {
public:
    HpvModel(std::vector<double> w, std::vector<double> T, double prior_var)
        : w_(std::move(w)), T_(std::move(T)), var_(prior_var) {
        if (w_.empty() || w_.size() != T_.size()) throw InvalidArgument("hpv: w and T must be nonempty and equal length");
        for (double t : T_)
            if (!(t > 0.0)) throw InvalidArgument("hpv: exposures T must be positive");
        for (double v : w_) lfact_ += std::lgamma(v + 1.0);
    }
    std::string name() const override { return "hpv"; }
    std::size_t theta_dim() const override { return 2; }
    std::size_t eta_dim() const override { return w_.size(); }
    std::size_t units() const override { return w_.size(); }

    double log_lik(std::span<const double> th, std::span<const double> eta, std::span<double> g) const override {
        double v = 0.0, g0 = 0.0, g1 = 0.0;
        for (std::size_t i = 0; i < w_.size(); ++i) term(i, th, eta, v, g0, g1);
        if (!g.empty()) g[0] = g0, g[1] = g1;
        return v - lfact_;
    }
    double log_lik_units(std::span<const double> th, std::span<const double> eta, std::span<const std::size_t> u,
                         std::span<double> g) const override {
        double v = 0.0, g0 = 0.0, g1 = 0.0;
        for (std::size_t i : u) {
            term(i, th, eta, v, g0, g1);
            v -= std::lgamma(w_.at(i) + 1.0);
        }
        if (!g.empty()) g[0] = g0, g[1] = g1;
        return v;
    }
    double log_prior(std::span<const double> th, std::span<const double>, std::span<double> g) const override {
        if (!g.empty()) g[0] = -th[0] / var_, g[1] = -th[1] / var_;
        return normal_logpdf(th[0], 0.0, var_) + normal_logpdf(th[1], 0.0, var_);
    }
    std::vector<double> initial_theta(std::span<const double>) const override {
        double sw = 0.0, st = 0.0;
        for (std::size_t i = 0; i < w_.size(); ++i) sw += w_[i], st += T_[i];
        return {std::log((sw + 0.5) / st), 0.0};
    }

private:
    void term(std::size_t i, std::span<const double> th, std::span<const double> eta, double& v, double& g0,
              double& g1) const {
        const double lr = th[0] + th[1] * eta[i];
        const double mu = T_[i] * std::exp(lr);
        v += w_[i] * (std::log(T_[i]) + lr) - mu;
        g0 += w_[i] - mu;
        g1 += (w_[i] - mu) * eta[i];
    }

    std::vector<double> w_, T_;
    double var_, lfact_ = 0.0;
};

/// Synthetic 13-row table with the structure of the cervical-cancer study
/// (z of n infected; w cases over T thousand person-years). The numbers are
/// simulated, not real data: gamma ~ U(0.05, 0.35), w ~ Poisson(T exp(-2.5 + 12 gamma)).
struct HpvRow {
    double z, n, w, T;
};
inline constexpr HpvRow kHpvSynthetic[13] = {
    {349, 1108, 325, 92.6}, {24, 212, 127, 394.0},  {87, 578, 219, 372.5},  {214, 1276, 91, 128.3},
    {130, 641, 168, 180.7}, {91, 457, 71, 86.5},    {280, 1050, 504, 263.1}, {113, 787, 121, 275.7},
    {254, 1170, 285, 296.5}, {160, 865, 28, 35.3},  {228, 602, 853, 208.4}, {92, 407, 441, 375.2},
    {175, 1260, 57, 139.9},
};

inline std::map<std::string, double> hpv_defaults() { return {{"prior_var", 1000.0}}; }

inline Dataset simulate_hpv(const ExperimentSpec& s) {
    Dataset d;
    d.model = "hpv";
    d.seed = s.seed;
    d.params = s.params;
    for (const HpvRow& r : kHpvSynthetic) {
        d.arrays["z"].push_back(r.z);
        d.arrays["n"].push_back(r.n);
        d.arrays["w"].push_back(r.w);
        d.arrays["T"].push_back(r.T);
    }
    d.truth["theta"] = {-2.5, 12.0};
    return d;
}

inline Experiment make_hpv_experiment(const Dataset& d) {
    Experiment e;
    e.data = d;
    const double var = d.param("prior_var");
    if (!(var > 0.0)) throw InvalidArgument("hpv: prior_var must be positive");
    e.model = std::make_shared<HpvModel>(d.array("w"), d.array("T"), var);
    std::vector<double> z = d.array("z"), n = d.array("n");
    if (z.size() != n.size() || z.size() != d.array("w").size()) throw InvalidArgument("hpv: table columns differ in length");
    for (std::size_t i = 0; i < z.size(); ++i)
        if (!(z[i] >= 0.0 && z[i] <= n[i])) throw InvalidArgument("hpv: need 0 <= z <= n in row " + std::to_string(i + 1));
    // gamma_i | z_i ~ Beta(1 + z_i, 1 + n_i - z_i), independently.
    e.upstream = [z, n](std::size_t N, std::uint64_t seed) {
        std::mt19937_64 rng(derive_seed(seed, {streams::upstream}));
        cut::UpstreamSamples u;
        u.eta = ad::Tensor(N, z.size());
        for (std::size_t r = 0; r < N; ++r)
            for (std::size_t i = 0; i < z.size(); ++i) {
                std::gamma_distribution<double> ga(1.0 + z[i], 1.0), gb(1.0 + n[i] - z[i], 1.0);
                const double a = ga(rng), b = gb(rng);
                u.eta(r, i) = a / (a + b);
            }
        return u;
    };
    e.upstream_logpdf = [z, n](std::span<const double> g) {
        double v = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            if (!(g[i] > 0.0 && g[i] < 1.0)) return cut::neg_inf;
            v += z[i] * std::log(g[i]) + (n[i] - z[i]) * std::log1p(-g[i]);
        }
        return v;
    };
    for (std::size_t i = 0; i < z.size(); ++i) e.eta_init.push_back((z[i] + 1.0) / (n[i] + 2.0));
    return e;
}

}  // namespace nevicut::models
