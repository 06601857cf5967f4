#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nevicut/cut/model.hpp"
#include "nevicut/flows/conditional_flow.hpp"
#include "nevicut/util/seed.hpp"

namespace nevicut::cut {

/// Paired rows (eta_i, theta_i) from the fitted cut posterior.
struct CutPosteriorDraws {
    ad::Tensor eta;    // N x d_eta, the upstream rows unchanged
    ad::Tensor theta;  // N x d
    std::vector<std::string> eta_names;
    std::string checkpoint_id;
    std::uint64_t seed = 0;
    bool trained = true;
};

/// One fresh base draw per upstream row pushed through T(eta_i, .).
/// Evaluated in chunks to bound tape memory.
inline CutPosteriorDraws sample_cut_posterior(const flows::VariationalFamily& family, const UpstreamSamples& upstream,
                                              std::uint64_t seed, std::string checkpoint_id = {},
                                              std::size_t chunk = 4096) {
    upstream.validate();
    if (family.eta_dim() != upstream.dim()) throw InvalidArgument("sample: eta dimension mismatch");
    const std::size_t n = upstream.size(), de = upstream.dim(), d = family.output_dim();
    CutPosteriorDraws out;
    out.eta = upstream.eta;
    out.eta_names = upstream.column_names();
    out.theta = ad::Tensor(n, d);
    out.checkpoint_id = std::move(checkpoint_id);
    out.seed = seed;
    std::mt19937_64 rng(derive_seed(seed, {streams::sample}));
    for (std::size_t lo = 0; lo < n; lo += chunk) {
        const std::size_t m = std::min(chunk, n - lo);
        ad::Tensor eta(m, de);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < de; ++j) eta(i, j) = upstream.eta(lo + i, j);
        ad::Tensor z = flows::base_sample(m, family.base_dim(), family.base(), rng);
        ad::Tape t(false);
        ad::VarMap p = family.params().bind(t);
        flows::FlowVars v = family.forward(p, t.constant(eta), t.constant(z));
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) out.theta(lo + i, j) = v.theta.value()(i, j);
    }
    return out;
}

/// q(theta | eta0) on an increasing grid by inversion and change of variables.
/// Grid points outside the flow's image get density 0.
inline std::vector<double> conditional_density_grid(const flows::ConditionalFlow& flow, std::span<const double> eta0,
                                                    std::span<const double> grid) {
    if (flow.output_dim() != 1) throw InvalidArgument("density grid: needs a one-dimensional theta");
    if (eta0.size() != flow.eta_dim()) {
        throw InvalidArgument("density grid: eta0 has " + std::to_string(eta0.size()) + " entries, flow expects " +
                              std::to_string(flow.eta_dim()));
    }
    if (grid.empty()) throw InvalidArgument("density grid: empty grid");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!std::isfinite(grid[i])) throw InvalidArgument("density grid: non-finite grid value at index " + std::to_string(i));
        if (i > 0 && !(grid[i] > grid[i - 1])) {
            throw InvalidArgument("density grid: grid not strictly increasing at index " + std::to_string(i));
        }
    }
    for (double e : eta0)
        if (!std::isfinite(e)) throw InvalidArgument("density grid: non-finite eta0");
    ad::Tensor eta(grid.size(), eta0.size()), th(grid.size(), 1);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        for (std::size_t j = 0; j < eta0.size(); ++j) eta(i, j) = eta0[j];
        th[i] = grid[i];
    }
    std::vector<double> lq = flow.log_density(eta, th);
    for (double& v : lq) v = std::isfinite(v) ? std::exp(v) : 0.0;
    return lq;
}

}  // namespace nevicut::cut
