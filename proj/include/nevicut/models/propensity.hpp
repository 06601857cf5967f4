#pragma once

#include <algorithm>
#include <bit>
#include <mutex>
#include <unordered_map>

#include "nevicut/baselines/mcmc.hpp"
#include "nevicut/models/common.hpp"
#include "nevicut/util/seed.hpp"

namespace nevicut::models {

inline constexpr std::size_t kConfounders = 6;

/// Type-7 quantile of sorted data.
inline double sorted_quantile(const std::vector<double>& s, double p) {
    const double h = (static_cast<double>(s.size()) - 1.0) * p;
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

/// Stratum (0-based) of each subject's propensity score under coefficients eta:
/// e_i = logistic(eta_0 + sum_j eta_j C_ij), cut at the k/K empirical quantiles.
inline std::vector<std::uint8_t> propensity_strata(const std::vector<double>& C, std::size_t n,
                                                   std::span<const double> eta, std::size_t K) {
    const std::size_t p = eta.size() - 1;
    std::vector<double> e(n);
    for (std::size_t i = 0; i < n; ++i) {
        double lin = eta[0];
        for (std::size_t j = 0; j < p; ++j) lin += eta[j + 1] * C[i * p + j];
        e[i] = sigmoid(lin);
    }
    std::vector<double> s = e;
    std::sort(s.begin(), s.end());
    std::vector<double> cuts(K - 1);
    for (std::size_t k = 1; k < K; ++k) cuts[k - 1] = sorted_quantile(s, static_cast<double>(k) / static_cast<double>(K));
    std::vector<std::uint8_t> out(n);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = static_cast<std::uint8_t>(std::lower_bound(cuts.begin(), cuts.end(), e[i]) - cuts.begin());
    return out;
}

/// Outcome model logit P(Z=1) = t0 + t1 X + sum_{k>=2} t_k 1[stratum = k],
/// theta = (t0, t1, t2..tK), eta = propensity coefficients (intercept first).
/// Strata depend on eta only and are cached for the most recent eta.
class PropensityModel : public cut::DownstreamModel {
public:
    PropensityModel(std::vector<double> C, std::vector<double> X, std::vector<double> Z, std::size_t strata,
                    double var_intercept, double var_slope)
        : C_(std::move(C)), X_(std::move(X)), Z_(std::move(Z)), K_(strata), v0_(var_intercept), v1_(var_slope) {
        if (X_.empty() || X_.size() != Z_.size() || C_.size() != X_.size() * kConfounders) {
            throw InvalidArgument("propensity: inconsistent data shapes");
        }
        if (K_ < 2 || K_ > 255) throw InvalidArgument("propensity: strata must be in [2, 255]");
        if (!(v0_ > 0.0) || !(v1_ > 0.0)) throw InvalidArgument("propensity: prior variances must be positive");
    }
    std::string name() const override { return "propensity"; }
    std::size_t theta_dim() const override { return K_ + 1; }
    std::size_t eta_dim() const override { return kConfounders + 1; }
    std::size_t units() const override { return X_.size(); }

    double log_lik(std::span<const double> th, std::span<const double> eta, std::span<double> g) const override {
        return accumulate(th, eta, nullptr, g);
    }
    double log_lik_units(std::span<const double> th, std::span<const double> eta, std::span<const std::size_t> u,
                         std::span<double> g) const override {
        return accumulate(th, eta, &u, g);
    }
    double log_prior(std::span<const double> th, std::span<const double>, std::span<double> g) const override {
        double v = 0.0;
        for (std::size_t k = 0; k < th.size(); ++k) {
            const double var = k == 0 ? v0_ : v1_;
            v += normal_logpdf(th[k], 0.0, var);
            if (!g.empty()) g[k] = -th[k] / var;
        }
        return v;
    }

    std::vector<std::uint8_t> strata(std::span<const double> eta) const { return *cached(eta); }

private:
    using Strata = std::shared_ptr<const std::vector<std::uint8_t>>;

    // Keyed by the bit pattern of eta; cleared when it grows past kCacheCap
    // (full-Bayes chains visit a new eta at every step).
    Strata cached(std::span<const double> eta) const {
        std::uint64_t h = 1469598103934665603ULL;
        for (double v : eta) h = mix64(h ^ std::bit_cast<std::uint64_t>(v));
        std::lock_guard<std::mutex> lock(mu_);
        auto it = cache_.find(h);
        if (it != cache_.end() && std::equal(eta.begin(), eta.end(), it->second.first.begin(), it->second.first.end())) {
            return it->second.second;
        }
        if (cache_.size() >= kCacheCap) cache_.clear();
        auto s = std::make_shared<const std::vector<std::uint8_t>>(propensity_strata(C_, X_.size(), eta, K_));
        cache_[h] = {std::vector<double>(eta.begin(), eta.end()), s};
        return s;
    }

    static constexpr std::size_t kCacheCap = 1 << 14;

    double accumulate(std::span<const double> th, std::span<const double> eta, const std::span<const std::size_t>* u,
                      std::span<double> g) const {
        auto s = cached(eta);
        if (!g.empty()) std::fill(g.begin(), g.end(), 0.0);
        double v = 0.0;
        auto one = [&](std::size_t i) {
            const std::uint8_t k = (*s)[i];
            const double lin = th[0] + th[1] * X_[i] + (k > 0 ? th[k + 1] : 0.0);
            // One exp serves both log(1 + e^lin) and the logistic.
            const double ex = std::exp(-std::abs(lin));
            v += Z_[i] * lin - (std::max(lin, 0.0) + std::log1p(ex));
            if (!g.empty()) {
                const double r = Z_[i] - (lin >= 0.0 ? 1.0 / (1.0 + ex) : ex / (1.0 + ex));
                g[0] += r;
                g[1] += r * X_[i];
                if (k > 0) g[k + 1] += r;
            }
        };
        if (u) {
            for (std::size_t i : *u) one(i);
        } else {
            for (std::size_t i = 0; i < X_.size(); ++i) one(i);
        }
        return v;
    }

    std::vector<double> C_, X_, Z_;
    std::size_t K_;
    double v0_, v1_;
    mutable std::mutex mu_;
    mutable std::unordered_map<std::uint64_t, std::pair<std::vector<double>, Strata>> cache_;
};

/// Treatment-model log posterior (up to a constant) over eta.
class TreatmentPosterior {
public:
    TreatmentPosterior(std::vector<double> C, std::vector<double> X, double var_intercept, double var_slope)
        : C_(std::move(C)), X_(std::move(X)), v0_(var_intercept), v1_(var_slope) {}
    double operator()(std::span<const double> eta) const {
        double v = 0.0;
        for (std::size_t k = 0; k < eta.size(); ++k) v += normal_logpdf(eta[k], 0.0, k == 0 ? v0_ : v1_);
        for (std::size_t i = 0; i < X_.size(); ++i) {
            double lin = eta[0];
            for (std::size_t j = 0; j < kConfounders; ++j) lin += eta[j + 1] * C_[i * kConfounders + j];
            v += X_[i] * lin - log1pexp(lin);
        }
        return v;
    }

private:
    std::vector<double> C_, X_;
    double v0_, v1_;
};

inline std::map<std::string, double> propensity_defaults() {
    return {{"n", 500},
            {"theta1_scale", 1.0},
            {"strata", 5},
            {"prior_var_intercept", 800.0},
            {"prior_var_slope", 50.0},
            {"upstream_warmup", 2000},
            {"upstream_thin", 5}};
}

inline Dataset simulate_propensity(const ExperimentSpec& s) {
    Dataset d;
    d.model = "propensity";
    d.seed = s.seed;
    d.params = s.params;
    const std::size_t n = d.count("n");
    const double scale = d.param("theta1_scale");
    std::vector<double> theta1{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    for (double& t : theta1) t *= scale;
    const std::vector<double> gamma{0.0, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1};
    std::mt19937_64 rng(derive_seed(s.seed, {streams::simulate}));
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    auto& C = d.arrays["C"];
    auto& X = d.arrays["X"];
    auto& Z = d.arrays["Z"];
    for (std::size_t i = 0; i < n; ++i) {
        double c[kConfounders];
        for (double& v : c) {
            v = nd(rng);
            C.push_back(v);
        }
        double lt = theta1[0];
        for (std::size_t j = 0; j < kConfounders; ++j) lt += theta1[j + 1] * c[j];
        const double x = ud(rng) < sigmoid(lt) ? 1.0 : 0.0;
        // Outcome depends on the confounders nonlinearly; the treatment effect is null.
        const double lo = gamma[0] * x + gamma[1] * c[0] + gamma[2] * std::exp(c[1] - 1.0) + gamma[3] * c[2] +
                          gamma[4] * std::exp(c[3] - 1.0) + gamma[5] * std::abs(c[4]) + gamma[6] * std::abs(c[5]);
        X.push_back(x);
        Z.push_back(ud(rng) < sigmoid(lo) ? 1.0 : 0.0);
    }
    d.truth["theta1"] = theta1;
    d.truth["gamma"] = gamma;
    return d;
}

inline Experiment make_propensity_experiment(const Dataset& d) {
    Experiment e;
    e.data = d;
    const double v0 = d.param("prior_var_intercept"), v1 = d.param("prior_var_slope");
    const std::size_t K = d.count("strata");
    e.model = std::make_shared<PropensityModel>(d.array("C"), d.array("X"), d.array("Z"), K, v0, v1);
    auto post = std::make_shared<TreatmentPosterior>(d.array("C"), d.array("X"), v0, v1);
    const std::size_t warmup = static_cast<std::size_t>(d.param("upstream_warmup"));
    const std::size_t thin = d.count("upstream_thin");
    e.upstream = [post, warmup, thin](std::size_t n, std::uint64_t seed) {
        baselines::MCMCConfig c;
        c.warmup = warmup;
        c.kept = n;
        c.thin = thin;
        c.seed = derive_seed(seed, {streams::upstream});
        std::vector<double> init(kConfounders + 1, 0.0);
        auto ch = baselines::rw_metropolis(std::cref(*post), init, c);
        cut::UpstreamSamples u;
        u.eta = std::move(ch.draws);
        return u;
    };
    e.upstream_logpdf = [post](std::span<const double> eta) { return (*post)(eta); };
    e.eta_init.assign(kConfounders + 1, 0.0);
    e.scored = {{1, d.truth.at("gamma").at(0)}};
    return e;
}

}  // namespace nevicut::models
