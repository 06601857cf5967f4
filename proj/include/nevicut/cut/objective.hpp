#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <vector>

#include "nevicut/cut/model.hpp"
#include "nevicut/flows/family.hpp"
#include "nevicut/util/seed.hpp"

namespace nevicut::cut {

/// Objective value substituted for an out-of-support draw.
inline constexpr double out_of_support_sentinel = -1e10;

/// More than half of a batch fell outside the model's support.
class OutOfSupportError : public Error {
public:
    OutOfSupportError(std::size_t bad, std::size_t batch)
        : Error("objective: " + std::to_string(bad) + " of " + std::to_string(batch) +
                " draws fell outside the model support (flow image left the support)"),
          bad_(bad),
          batch_(batch) {}
    std::size_t bad() const { return bad_; }
    std::size_t batch() const { return batch_; }

private:
    std::size_t bad_, batch_;
};

/// One stochastic ELBO estimate with the tape it was recorded on.
struct ElboEstimate {
    double value = 0.0;
    std::unique_ptr<ad::Tape> tape;
    ad::Var output;
    std::size_t batch = 0;
    std::size_t out_of_support = 0;

    /// Reverse pass; valid once per estimate.
    ad::GradMap gradient() {
        tape->backward(output, ad::Tensor::scalar(1.0));
        return tape->leaf_grads(ad::LeafKind::param);
    }
};

/// Minibatch plan: upstream rows, base draws per row and likelihood units.
struct BatchPlan {
    std::vector<std::size_t> rows;
    std::size_t n_z = 1;
    std::vector<std::size_t> units;  // empty: full likelihood
};

/// Mean over the plan of logdet + log_lik + log_prior at theta = T(eta, z).
inline ElboEstimate elbo_on_plan(const flows::VariationalFamily& family, const DownstreamModel& model,
                                 const UpstreamSamples& upstream, const BatchPlan& plan, std::mt19937_64& z_rng,
                                 bool record = true) {
    if (family.eta_dim() != upstream.dim() || model.eta_dim() != upstream.dim()) {
        throw InvalidArgument("objective: eta dimension mismatch between family, model and upstream samples");
    }
    if (family.output_dim() != model.theta_dim()) {
        throw InvalidArgument("objective: family output dimension " + std::to_string(family.output_dim()) +
                              " does not match model theta dimension " + std::to_string(model.theta_dim()));
    }
    const std::size_t de = upstream.dim(), m = plan.rows.size() * plan.n_z;
    ad::Tensor eta(m, de);
    for (std::size_t r = 0; r < plan.rows.size(); ++r)
        for (std::size_t k = 0; k < plan.n_z; ++k)
            for (std::size_t j = 0; j < de; ++j) eta(r * plan.n_z + k, j) = upstream.eta(plan.rows[r], j);
    ad::Tensor z = flows::base_sample(m, family.base_dim(), family.base(), z_rng);

    ElboEstimate est;
    est.tape = std::make_unique<ad::Tape>(record);
    ad::Tape& t = *est.tape;
    ad::VarMap p = family.params().bind(t);
    flows::FlowVars fv = family.forward(p, t.constant(eta), t.constant(z));

    const std::size_t d = model.theta_dim();
    const ad::Tensor& th = fv.theta.value();
    ad::Tensor vals(m, 1), grads(m, d, 0.0);
    const double scale = plan.units.empty() ? 1.0
                                            : static_cast<double>(model.units()) / static_cast<double>(plan.units.size());
    std::vector<double> gl(d), gp(d);
    std::size_t bad = 0;
    for (std::size_t i = 0; i < m; ++i) {
        auto th_i = th.row_span(i);
        auto eta_i = eta.row_span(i);
        std::span<double> gls = record ? std::span<double>(gl) : std::span<double>();
        std::span<double> gps = record ? std::span<double>(gp) : std::span<double>();
        std::fill(gl.begin(), gl.end(), 0.0);
        std::fill(gp.begin(), gp.end(), 0.0);
        double ll = plan.units.empty() ? model.log_lik(th_i, eta_i, gls)
                                       : scale * model.log_lik_units(th_i, eta_i, plan.units, gls);
        double lp = model.log_prior(th_i, eta_i, gps);
        double v = ll + lp;
        bool finite = std::isfinite(v);
        for (std::size_t j = 0; finite && j < d; ++j) finite = std::isfinite(gl[j]) && std::isfinite(gp[j]);
        if (!finite) {
            ++bad;
            vals[i] = out_of_support_sentinel;
            continue;
        }
        vals[i] = v;
        if (record)
            for (std::size_t j = 0; j < d; ++j) grads(i, j) = scale * gl[j] + gp[j];
    }
    est.batch = m;
    est.out_of_support = bad;
    if (2 * bad > m) throw OutOfSupportError(bad, m);
    ad::Var ext = ad::rowwise_external(fv.theta, std::move(vals), std::move(grads), "model");
    est.output = ad::mean(ad::add(fv.logdet, ext));
    est.value = est.output.value().item();
    return est;
}

/// Algorithm-1 estimate: every upstream draw once, one fresh z each.
inline ElboEstimate elbo_hat_z(const flows::VariationalFamily& family, const DownstreamModel& model,
                               const UpstreamSamples& upstream, std::uint64_t seed, bool record = true) {
    BatchPlan plan;
    plan.rows.resize(upstream.size());
    std::iota(plan.rows.begin(), plan.rows.end(), std::size_t{0});
    std::mt19937_64 z_rng(derive_seed(seed, {streams::base_z}));
    return elbo_on_plan(family, model, upstream, plan, z_rng, record);
}

/// Minibatch sizes for the triply stochastic estimator (0 = all / one z).
struct MinibatchSizes {
    std::size_t n_eta = 0;
    std::size_t n_z = 1;
    std::size_t n_d = 0;
};

/// k distinct indices from [0, n), in draw order.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> u(i, n - 1);
        std::swap(idx[i], idx[u(rng)]);
    }
    idx.resize(k);
    return idx;
}

inline BatchPlan make_plan(const DownstreamModel& model, const UpstreamSamples& upstream, const MinibatchSizes& mb,
                           std::uint64_t seed) {
    const std::size_t n = upstream.size();
    BatchPlan plan;
    plan.n_z = std::max<std::size_t>(1, mb.n_z);
    if (mb.n_eta == 0 || mb.n_eta >= n) {
        plan.rows.resize(n);
        std::iota(plan.rows.begin(), plan.rows.end(), std::size_t{0});
    } else {
        std::mt19937_64 rng(derive_seed(seed, {streams::eta_batch}));
        plan.rows = sample_without_replacement(n, mb.n_eta, rng);
    }
    if (mb.n_d > 0) {
        if (model.units() == 0) throw InvalidArgument("objective: likelihood minibatching needs a decomposable model");
        if (mb.n_d < model.units()) {
            std::mt19937_64 rng(derive_seed(seed, {streams::units}));
            plan.units = sample_without_replacement(model.units(), mb.n_d, rng);
            std::sort(plan.units.begin(), plan.units.end());
        }
    }
    return plan;
}

/// Triply stochastic estimate: eta minibatch, n_z draws per eta and a
/// likelihood minibatch rescaled by n / N_D.
inline ElboEstimate elbo_triple(const flows::VariationalFamily& family, const DownstreamModel& model,
                                const UpstreamSamples& upstream, const MinibatchSizes& mb, std::uint64_t seed,
                                bool record = true) {
    BatchPlan plan = make_plan(model, upstream, mb, seed);
    std::mt19937_64 z_rng(derive_seed(seed, {streams::base_z}));
    return elbo_on_plan(family, model, upstream, plan, z_rng, record);
}

}  // namespace nevicut::cut
