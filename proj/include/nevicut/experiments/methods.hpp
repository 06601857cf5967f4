#pragma once

#include <bit>
#include <chrono>
#include <numeric>
#include <string>

#include "nevicut/baselines/analytic.hpp"
#include "nevicut/baselines/gaussian_va.hpp"
#include "nevicut/baselines/nested.hpp"
#include "nevicut/cut/checkpoint.hpp"
#include "nevicut/cut/sample.hpp"
#include "nevicut/experiments/settings.hpp"
#include "nevicut/models/common.hpp"

namespace nevicut::experiments {

/// Draws from one method plus what it cost.
struct MethodRun {
    std::string method;
    cut::CutPosteriorDraws draws;
    double seconds = 0.0;
    bool cut = true;  // eta column must reproduce the upstream rows
    std::size_t failed = 0;
    double acceptance = -1.0;
    std::size_t train_steps = 0;
};

namespace detail {

class Stopwatch {
public:
    Stopwatch() : t0_(std::chrono::steady_clock::now()) {}
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

private:
    std::chrono::steady_clock::time_point t0_;
};

/// Concatenates equal-width draw sets row-wise.
inline cut::CutPosteriorDraws stack(const std::vector<cut::CutPosteriorDraws>& parts) {
    cut::CutPosteriorDraws out = parts.front();
    if (parts.size() == 1) return out;
    std::size_t rows = 0;
    for (const auto& p : parts) rows += p.theta.rows();
    out.eta = ad::Tensor(rows, parts.front().eta.cols());
    out.theta = ad::Tensor(rows, parts.front().theta.cols());
    std::size_t r = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < p.theta.rows(); ++i, ++r) {
            for (std::size_t j = 0; j < p.eta.cols(); ++j) out.eta(r, j) = p.eta(i, j);
            for (std::size_t j = 0; j < p.theta.cols(); ++j) out.theta(r, j) = p.theta(i, j);
        }
    }
    return out;
}

}  // namespace detail

/// Trains a flow and draws `passes` sets of paired samples.
inline MethodRun run_nevi(const models::Experiment& e, const cut::UpstreamSamples& up, const flows::FlowConfig& base,
                          const cut::TrainConfig& tc, std::uint64_t seed, std::size_t passes = 1,
                          flows::ConditionalFlow* trained = nullptr) {
    MethodRun r;
    r.method = "nevi";
    detail::Stopwatch sw;
    flows::ConditionalFlow flow(flow_for(base, *e.model), derive_seed(seed, {streams::init}));
    flow.standardize_from(up.eta);
    cut::TrainConfig t = tc;
    t.seed = derive_seed(seed, {streams::train});
    cut::TrainResult tr = cut::train(flow, *e.model, up, t);
    r.train_steps = tr.steps;
    const std::string id = cut::checkpoint_id(cut::checkpoint_text(flow));
    std::vector<cut::CutPosteriorDraws> parts;
    for (std::size_t k = 0; k < passes; ++k) {
        parts.push_back(cut::sample_cut_posterior(flow, up, derive_seed(seed, {streams::sample, k}), id));
    }
    r.draws = detail::stack(parts);
    r.draws.seed = seed;
    r.seconds = sw.seconds();
    if (trained) *trained = std::move(flow);
    return r;
}

inline MethodRun run_nested(const models::Experiment& e, const cut::UpstreamSamples& up, baselines::MCMCConfig mc,
                            std::uint64_t seed) {
    MethodRun r;
    r.method = "nested";
    mc.seed = derive_seed(seed, {streams::mcmc});
    detail::Stopwatch sw;
    baselines::NestedResult nr = baselines::nested_mcmc_cut(*e.model, up, mc);
    r.seconds = sw.seconds();
    r.draws = std::move(nr.draws);
    r.failed = nr.failed.size();
    r.acceptance = nr.mean_acceptance;
    return r;
}

/// Joint chain over (theta, eta); eta is not the upstream sample here.
inline MethodRun run_fullbayes(const models::Experiment& e, baselines::MCMCConfig mc, std::uint64_t seed) {
    MethodRun r;
    r.method = "full_bayes";
    r.cut = false;
    mc.seed = derive_seed(seed, {streams::mcmc, 1});
    const std::size_t d = e.model->theta_dim(), de = e.model->eta_dim();
    std::vector<double> init = e.model->initial_theta(e.eta_init);
    init.insert(init.end(), e.eta_init.begin(), e.eta_init.end());
    detail::Stopwatch sw;
    baselines::Chain ch = baselines::full_bayes_mcmc(models::joint_logpdf(e), init, mc);
    r.seconds = sw.seconds();
    r.acceptance = ch.acceptance;
    auto& out = r.draws;
    out.theta = ad::Tensor(ch.draws.rows(), d);
    out.eta = ad::Tensor(ch.draws.rows(), de);
    for (std::size_t i = 0; i < ch.draws.rows(); ++i) {
        for (std::size_t j = 0; j < d; ++j) out.theta(i, j) = ch.draws(i, j);
        for (std::size_t j = 0; j < de; ++j) out.eta(i, j) = ch.draws(i, d + j);
    }
    for (std::size_t j = 0; j < de; ++j) out.eta_names.push_back("eta_" + std::to_string(j + 1));
    out.seed = mc.seed;
    out.checkpoint_id = "full-bayes";
    return r;
}

/// Gaussian VA-cut. `constant_mean` gives the mean-field family whose theta
/// factor does not depend on eta.
inline MethodRun run_gaussian_va(const models::Experiment& e, const cut::UpstreamSamples& up, const cut::TrainConfig& tc,
                                 std::uint64_t seed, bool constant_mean) {
    MethodRun r;
    r.method = "gaussian_va";
    detail::Stopwatch sw;
    baselines::GaussianVAFamily fam(e.model->theta_dim(), up.dim(), constant_mean, -1.0);
    std::vector<double> eta_bar(up.dim(), 0.0);
    for (std::size_t i = 0; i < up.size(); ++i)
        for (std::size_t j = 0; j < up.dim(); ++j) eta_bar[j] += up.eta(i, j) / static_cast<double>(up.size());
    fam.set_mean(e.model->initial_theta(eta_bar));
    cut::TrainConfig t = tc;
    t.seed = derive_seed(seed, {streams::train, 1});
    baselines::VAResult vr = baselines::gaussian_va_cut(fam, *e.model, up, t, derive_seed(seed, {streams::sample, 1000}));
    r.train_steps = vr.train.steps;
    r.draws = std::move(vr.draws);
    r.seconds = sw.seconds();
    return r;
}

/// Dirichlet VA-cut for the calibration model, with M(eta) the confusion matrix.
inline MethodRun run_dirichlet_va(const models::Experiment& e, const cut::UpstreamSamples& up, const cut::TrainConfig& tc,
                                  std::size_t per_eta, std::uint64_t seed) {
    MethodRun r;
    r.method = "dirichlet_va";
    const std::size_t C = e.model->theta_dim();
    detail::Stopwatch sw;
    baselines::DirichletVA va(C, [C](std::span<const double> eta) { return models::phi_from_eta(eta, C); });
    cut::TrainConfig t = tc;
    t.seed = derive_seed(seed, {streams::train, 2});
    cut::TrainResult tr = va.fit(*e.model, up, t, per_eta);
    r.train_steps = tr.steps;
    r.draws = va.draw(up, derive_seed(seed, {streams::sample, 2000}));
    r.seconds = sw.seconds();
    return r;
}

/// Closed-form cut conditional of the Gaussian bias model, one draw per upstream phi.
inline MethodRun run_analytic_cut(const models::Experiment& e, const cut::UpstreamSamples& up, std::uint64_t seed) {
    MethodRun r;
    r.method = "analytic_cut";
    detail::Stopwatch sw;
    const auto st = models::gaussian_bias_stats(e.data);
    const double delta2 = e.data.param("delta2");
    const double prec = st.n2 + delta2;
    std::mt19937_64 rng(derive_seed(seed, {streams::sample, 3000}));
    std::normal_distribution<double> nd(0.0, 1.0);
    auto& out = r.draws;
    out.eta = up.eta;
    out.eta_names = up.column_names();
    out.theta = ad::Tensor(up.size(), 1);
    for (std::size_t i = 0; i < up.size(); ++i) {
        const double m = (st.s_w - st.n2 * up.eta(i, 0)) / prec;
        out.theta(i, 0) = m + nd(rng) / std::sqrt(prec);
    }
    out.seed = seed;
    out.checkpoint_id = "analytic-cut";
    r.seconds = sw.seconds();
    return r;
}

/// True when the eta block of `d` repeats the upstream rows exactly (bitwise),
/// each row appearing in a contiguous or cyclic pattern of whole passes/blocks.
inline bool eta_passthrough(const cut::CutPosteriorDraws& d, const cut::UpstreamSamples& up, std::size_t kept_per_eta = 0) {
    const std::size_t n = up.size(), de = up.dim();
    if (d.eta.cols() != de || n == 0) return false;
    for (std::size_t r = 0; r < d.eta.rows(); ++r) {
        const std::size_t i = kept_per_eta ? r / kept_per_eta : r % n;
        if (i >= n) return false;
        for (std::size_t j = 0; j < de; ++j)
            if (std::bit_cast<std::uint64_t>(d.eta(r, j)) != std::bit_cast<std::uint64_t>(up.eta(i, j))) return false;
    }
    return d.eta.rows() % n == 0;
}

}  // namespace nevicut::experiments
