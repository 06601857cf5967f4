#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "nevicut/autodiff/tensor.hpp"
#include "nevicut/error.hpp"

namespace nevicut::baselines {

struct MCMCConfig {
    std::size_t warmup = 500;
    std::size_t kept = 100;
    std::size_t thin = 1;
    double init_scale = 0.1;
    double target_accept = 0.35;
    bool adapt_covariance = true;
    std::uint64_t seed = 0;

    void validate() const {
        if (kept < 1) throw InvalidArgument("mcmc: kept must be at least 1");
        if (thin < 1) throw InvalidArgument("mcmc: thin must be at least 1");
        if (!(init_scale > 0.0)) throw InvalidArgument("mcmc: init_scale must be positive");
        if (!(target_accept > 0.0 && target_accept < 1.0)) throw InvalidArgument("mcmc: target_accept must be in (0, 1)");
    }
};

using LogPdf = std::function<double(std::span<const double>)>;

/// Random-walk proposal x' = x + exp(log_scale) * L eps.
struct Proposal {
    Eigen::MatrixXd chol;  // lower triangular
    double log_scale = 0.0;
};

struct Chain {
    ad::Tensor draws;  // kept x d
    double acceptance = 0.0;         // after warmup
    double warmup_acceptance = 0.0;
    std::vector<double> last;        // final state
    Proposal proposal;               // as frozen at the end of warmup
};

namespace detail {

inline Eigen::MatrixXd covariance(const std::vector<std::vector<double>>& xs, std::size_t from, std::size_t to) {
    const std::size_t d = xs[from].size();
    const double n = static_cast<double>(to - from);
    Eigen::VectorXd m = Eigen::VectorXd::Zero(d);
    for (std::size_t t = from; t < to; ++t) m += Eigen::Map<const Eigen::VectorXd>(xs[t].data(), d);
    m /= n;
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t t = from; t < to; ++t) {
        Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(xs[t].data(), d) - m;
        c += v * v.transpose();
    }
    return c / std::max(1.0, n - 1.0);
}

}  // namespace detail

/// Adaptive random-walk Metropolis.
///
/// During warmup the log proposal scale follows a Robbins-Monro recursion
/// toward `target_accept` and (optionally) the proposal shape is refit to the
/// warmup chain at 1/4, 1/2 and 3/4 of warmup. Both are frozen afterwards,
/// so the kept chain is a plain Metropolis chain.
inline Chain rw_metropolis(const LogPdf& logpdf, std::span<const double> init, const MCMCConfig& cfg,
                           const Proposal* start = nullptr) {
    cfg.validate();
    const std::size_t d = init.size();
    if (d == 0) throw InvalidArgument("mcmc: empty initial state");
    std::vector<double> x(init.begin(), init.end());
    double lp = logpdf(x);
    if (!std::isfinite(lp)) throw InvalidArgument("mcmc: log density is not finite at the initial state");

    Proposal prop;
    if (start) {
        if (start->chol.rows() != static_cast<Eigen::Index>(d)) throw InvalidArgument("mcmc: proposal dimension mismatch");
        prop = *start;
    } else {
        prop.chol = Eigen::MatrixXd::Identity(d, d);
        prop.log_scale = std::log(cfg.init_scale);
    }

    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    std::vector<double> y(d);
    Eigen::VectorXd eps(d);

    auto step = [&]() {
        for (std::size_t j = 0; j < d; ++j) eps[j] = nd(rng);
        Eigen::VectorXd delta = prop.chol * eps;
        const double s = std::exp(prop.log_scale);
        for (std::size_t j = 0; j < d; ++j) y[j] = x[j] + s * delta[j];
        double u = ud(rng);
        double ly = logpdf(y);
        if (std::isnan(ly)) ly = -std::numeric_limits<double>::infinity();
        double a = ly - lp;
        bool accept = a >= 0.0 || std::log(u) < a;
        if (accept) {
            x = y;
            lp = ly;
        }
        return std::make_pair(accept, std::min(1.0, std::exp(std::min(a, 0.0))));
    };

    Chain ch;
    std::vector<std::vector<double>> hist;
    if (cfg.adapt_covariance) hist.reserve(cfg.warmup);
    std::size_t acc = 0;
    const std::size_t refits[3] = {cfg.warmup / 4, cfg.warmup / 2, 3 * cfg.warmup / 4};
    for (std::size_t t = 0; t < cfg.warmup; ++t) {
        auto [ok, prob] = step();
        acc += ok;
        prop.log_scale += (prob - cfg.target_accept) / std::pow(static_cast<double>(t) + 1.0, 0.6);
        prop.log_scale = std::clamp(prop.log_scale, -30.0, 10.0);
        if (cfg.adapt_covariance) {
            hist.push_back(x);
            for (std::size_t r : refits) {
                if (t + 1 != r || r < 20 + d) continue;
                Eigen::MatrixXd c = detail::covariance(hist, r / 2, r);
                c += 1e-10 * (c.diagonal().cwiseAbs().maxCoeff() + 1e-300) * Eigen::MatrixXd::Identity(d, d);
                Eigen::LLT<Eigen::MatrixXd> llt(c);
                if (llt.info() != Eigen::Success || !c.allFinite() || c.diagonal().minCoeff() <= 0.0) continue;
                // Scale by the usual 2.38 / sqrt(d); log_scale keeps adapting around it.
                prop.chol = llt.matrixL().toDenseMatrix() * (2.38 / std::sqrt(static_cast<double>(d)));
                prop.log_scale = 0.0;
            }
        }
    }
    ch.warmup_acceptance = cfg.warmup ? static_cast<double>(acc) / static_cast<double>(cfg.warmup) : 0.0;
    ch.proposal = prop;

    ch.draws = ad::Tensor(cfg.kept, d);
    acc = 0;
    for (std::size_t k = 0; k < cfg.kept; ++k) {
        for (std::size_t t = 0; t < cfg.thin; ++t) acc += step().first;
        for (std::size_t j = 0; j < d; ++j) ch.draws(k, j) = x[j];
    }
    ch.acceptance = static_cast<double>(acc) / static_cast<double>(cfg.kept * cfg.thin);
    ch.last = x;
    return ch;
}

/// Full-Bayes sampler: random-walk Metropolis on the concatenated (theta, eta).
inline Chain full_bayes_mcmc(const LogPdf& joint_logpdf, std::span<const double> init, const MCMCConfig& cfg) {
    return rw_metropolis(joint_logpdf, init, cfg);
}

}  // namespace nevicut::baselines
