#pragma once

#include <string>
#include <vector>

#include "nevicut/baselines/mcmc.hpp"
#include "nevicut/cut/model.hpp"
#include "nevicut/cut/sample.hpp"
#include "nevicut/flows/stick_breaking.hpp"
#include "nevicut/util/seed.hpp"

namespace nevicut::baselines {

struct NestedResult {
    cut::CutPosteriorDraws draws;     // kept rows per surviving eta, pooled in eta order
    std::vector<std::size_t> failed;  // upstream rows whose chain could not run
    double mean_acceptance = 0.0;
};

/// Conditional target log p(D2 | theta, eta) + log p(theta | eta) in sampler
/// coordinates: theta itself, or stick-breaking logits for simplex models.
class ConditionalTarget {
public:
    ConditionalTarget(const cut::DownstreamModel& model, std::span<const double> eta)
        : model_(model), eta_(eta.begin(), eta.end()), simplex_(model.support() == cut::Support::simplex) {}

    std::size_t dim() const { return simplex_ ? model_.theta_dim() - 1 : model_.theta_dim(); }

    std::vector<double> to_theta(std::span<const double> x) const {
        if (!simplex_) return {x.begin(), x.end()};
        return flows::stick_breaking(x).p;
    }

    std::vector<double> from_theta(std::span<const double> th) const {
        if (!simplex_) return {th.begin(), th.end()};
        return flows::stick_breaking_inverse(th).p;
    }

    double operator()(std::span<const double> x) const {
        double extra = 0.0;
        std::vector<double> th;
        if (simplex_) {
            flows::SimplexResult r = flows::stick_breaking(x);
            th = std::move(r.p);
            extra = r.logdet;
        } else {
            th.assign(x.begin(), x.end());
        }
        double v = model_.log_lik(th, eta_, {}) + model_.log_prior(th, eta_, {}) + extra;
        return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
    }

private:
    const cut::DownstreamModel& model_;
    std::vector<double> eta_;
    bool simplex_;
};

/// Multiple-imputation nested MCMC: one downstream chain per upstream draw.
///
/// A pilot chain (4x warmup, at the first upstream draw) supplies the start
/// state and proposal shape for every per-eta chain; each chain then adapts
/// during its own warmup with its own derived seed, so chains are mutually
/// independent given the pilot.
inline NestedResult nested_mcmc_cut(const cut::DownstreamModel& model, const cut::UpstreamSamples& upstream,
                                    const MCMCConfig& cfg) {
    cfg.validate();
    upstream.validate();
    if (model.eta_dim() != upstream.dim()) throw InvalidArgument("nested mcmc: eta dimension mismatch");
    const std::size_t n = upstream.size(), d = model.theta_dim();

    Proposal pilot_prop;
    std::vector<double> start;
    {
        ConditionalTarget tgt(model, upstream.eta.row_span(0));
        MCMCConfig pc = cfg;
        pc.warmup = std::max<std::size_t>(4 * cfg.warmup, 200);
        pc.kept = 1;
        pc.seed = derive_seed(cfg.seed, {streams::mcmc, 0xffffffffULL});
        std::vector<double> x0 = tgt.from_theta(model.initial_theta(upstream.eta.row_span(0)));
        Chain pilot = rw_metropolis(std::cref(tgt), x0, pc);
        pilot_prop = pilot.proposal;
        start = pilot.last;
    }

    NestedResult res;
    std::vector<ad::Tensor> kept(n);
    double acc = 0.0;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ConditionalTarget tgt(model, upstream.eta.row_span(i));
        MCMCConfig ci = cfg;
        ci.seed = derive_seed(cfg.seed, {streams::mcmc, i});
        try {
            Chain ch = rw_metropolis(std::cref(tgt), start, ci, &pilot_prop);
            kept[i] = std::move(ch.draws);
            acc += ch.acceptance;
            ++ok;
        } catch (const InvalidArgument&) {
            res.failed.push_back(i);
        }
    }
    if (ok == 0) throw Error("nested mcmc: every per-eta chain failed");
    res.mean_acceptance = acc / static_cast<double>(ok);

    auto& out = res.draws;
    out.eta = ad::Tensor(ok * cfg.kept, upstream.dim());
    out.theta = ad::Tensor(ok * cfg.kept, d);
    out.eta_names = upstream.column_names();
    out.seed = cfg.seed;
    out.checkpoint_id = "nested-mcmc";
    std::size_t row = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (kept[i].rows() == 0) continue;
        ConditionalTarget tgt(model, upstream.eta.row_span(i));
        for (std::size_t k = 0; k < cfg.kept; ++k, ++row) {
            for (std::size_t j = 0; j < upstream.dim(); ++j) out.eta(row, j) = upstream.eta(i, j);
            std::vector<double> th = tgt.to_theta(kept[i].row_span(k));
            for (std::size_t j = 0; j < d; ++j) out.theta(row, j) = th[j];
        }
    }
    return res;
}

}  // namespace nevicut::baselines
