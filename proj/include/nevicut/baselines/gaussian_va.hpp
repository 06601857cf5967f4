#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>

#include "nevicut/cut/sample.hpp"
#include "nevicut/cut/train.hpp"
#include "nevicut/flows/family.hpp"

namespace nevicut::baselines {

/// Mean-field Gaussian q(theta | eta) = N(b + W eta, diag(sigma^2)).
/// With `constant_mean` the W block is absent and q does not depend on eta.
class GaussianVAFamily : public flows::VariationalFamily {
public:
    GaussianVAFamily(std::size_t d, std::size_t d_eta, bool constant_mean = false, double init_log_sigma = 0.0)
        : d_(d), de_(d_eta), constant_(constant_mean) {
        if (d == 0 || d_eta == 0) throw InvalidArgument("gaussian va: dimensions must be positive");
        ps_.add("va.b", ad::Tensor(1, d, 0.0));
        if (!constant_) ps_.add("va.W", ad::Tensor(d_eta, d, 0.0));
        ps_.add("va.logsigma", ad::Tensor(1, d, init_log_sigma));
    }

    std::size_t base_dim() const override { return d_; }
    std::size_t eta_dim() const override { return de_; }
    std::size_t output_dim() const override { return d_; }
    const flows::BaseDist& base() const override { return base_; }
    ad::ParamStore& params() override { return ps_; }
    const ad::ParamStore& params() const override { return ps_; }
    bool constant_mean() const { return constant_; }

    flows::FlowVars forward(const ad::VarMap& p, ad::Var eta, ad::Var z) const override {
        ad::Var ls = p.at("va.logsigma");
        ad::Var th = ad::add_row(ad::mul(z, ad::repeat_rows(ad::exp(ls), z.rows())), p.at("va.b"));
        if (!constant_) th = ad::add(th, ad::matmul(eta, p.at("va.W")));
        ad::Var ld = ad::repeat_rows(ad::sum_cols(ls), z.rows());
        return {th, ld};
    }

    /// Moves b to a starting point (e.g. the prior mean or a pilot estimate).
    void set_mean(std::span<const double> b) {
        ad::Tensor t(1, d_);
        for (std::size_t j = 0; j < d_; ++j) t[j] = b[j];
        ps_.set("va.b", t);
    }

private:
    std::size_t d_, de_;
    bool constant_;
    ad::ParamStore ps_;
    flows::BaseDist base_;
};

struct VAResult {
    cut::TrainResult train;
    cut::CutPosteriorDraws draws;
};

/// Fits the Gaussian family with the shared objective and emits paired draws.
inline VAResult gaussian_va_cut(GaussianVAFamily& family, const cut::DownstreamModel& model,
                                const cut::UpstreamSamples& upstream, const cut::TrainConfig& cfg,
                                std::uint64_t sample_seed) {
    if (model.support() != cut::Support::unconstrained) {
        throw InvalidArgument("gaussian va: needs an unconstrained theta (use the Dirichlet family on the simplex)");
    }
    VAResult r;
    r.train = cut::train(family, model, upstream, cfg);
    r.draws = cut::sample_cut_posterior(family, upstream, sample_seed, "gaussian-va");
    return r;
}

namespace detail {

inline double digamma(double x) {
    double r = 0.0;
    while (x < 6.0) {
        r -= 1.0 / x;
        x += 1.0;
    }
    const double f = 1.0 / (x * x);
    return r + std::log(x) - 0.5 / x -
           f * (1.0 / 12.0 - f * (1.0 / 120.0 - f * (1.0 / 252.0 - f * (1.0 / 240.0 - f / 132.0))));
}

inline double dirichlet_logpdf(std::span<const double> p, std::span<const double> beta) {
    double s = 0.0, v = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) {
        s += beta[c];
        v += (beta[c] - 1.0) * std::log(p[c]) - std::lgamma(beta[c]);
    }
    return v + std::lgamma(s);
}

}  // namespace detail

/// Parametric simplex family q(p | eta) = Dirichlet(M(eta)^T alpha), alpha > 0,
/// with M(eta) a C x C nonnegative matrix (the confusion matrix for VA data).
class DirichletVA {
public:
    using MatrixOf = std::function<Eigen::MatrixXd(std::span<const double>)>;

    DirichletVA(std::size_t C, MatrixOf m, double init_alpha = 1.0) : C_(C), m_(std::move(m)) {
        if (C < 2) throw InvalidArgument("dirichlet va: need at least two categories");
        if (!(init_alpha > 0.0)) throw InvalidArgument("dirichlet va: alpha must be positive");
        ps_.add("dir.logalpha", ad::Tensor(1, C, std::log(init_alpha)));
    }

    ad::ParamStore& params() { return ps_; }
    const ad::ParamStore& params() const { return ps_; }

    Eigen::VectorXd concentration(std::span<const double> eta) const {
        Eigen::MatrixXd M = m_(eta);
        Eigen::VectorXd a(C_);
        for (std::size_t c = 0; c < C_; ++c) a[c] = std::exp(ps_.get("dir.logalpha")[c]);
        Eigen::VectorXd beta = M.transpose() * a;
        for (std::size_t c = 0; c < C_; ++c) beta[c] = std::max(beta[c], 1e-8);
        return beta;
    }

    std::vector<double> sample(std::span<const double> eta, std::mt19937_64& rng) const {
        Eigen::VectorXd beta = concentration(eta);
        std::vector<double> p(C_);
        double s = 0.0;
        for (std::size_t c = 0; c < C_; ++c) {
            std::gamma_distribution<double> g(beta[c], 1.0);
            p[c] = std::max(g(rng), 1e-300);
            s += p[c];
        }
        for (double& v : p) v /= s;
        return p;
    }

    /// Score-function estimate of the ELBO and its gradient in log alpha,
    /// with `per_eta` >= 2 draws per eta and a leave-one-out baseline within
    /// each eta (the normalizing constant varies strongly across eta).
    std::pair<double, ad::GradMap> elbo(const cut::DownstreamModel& model, const cut::UpstreamSamples& up,
                                        std::size_t per_eta, std::mt19937_64& rng) const {
        if (per_eta < 2) throw InvalidArgument("dirichlet va: need at least two draws per eta");
        Eigen::VectorXd a(C_);
        for (std::size_t c = 0; c < C_; ++c) a[c] = std::exp(ps_.get("dir.logalpha")[c]);
        Eigen::VectorXd g = Eigen::VectorXd::Zero(C_);
        double total = 0.0;
        std::size_t used = 0;
        std::vector<double> f(per_eta);
        std::vector<Eigen::VectorXd> score(per_eta);
        for (std::size_t i = 0; i < up.size(); ++i) {
            auto eta = up.eta.row_span(i);
            Eigen::MatrixXd M = m_(eta);
            Eigen::VectorXd beta = concentration(eta);
            const double dsum = detail::digamma(beta.sum());
            bool finite = true;
            for (std::size_t k = 0; k < per_eta; ++k) {
                std::vector<double> p = sample(eta, rng);
                double lq = detail::dirichlet_logpdf(p, std::span<const double>(beta.data(), C_));
                f[k] = model.log_lik(p, eta, {}) + model.log_prior(p, eta, {}) - lq;
                finite = finite && std::isfinite(f[k]);
                Eigen::VectorXd dbeta(C_);
                for (std::size_t c = 0; c < C_; ++c) dbeta[c] = dsum - detail::digamma(beta[c]) + std::log(p[c]);
                score[k] = (M * dbeta).cwiseProduct(a);
            }
            if (!finite) continue;
            double m = 0.0;
            for (double v : f) m += v;
            m /= static_cast<double>(per_eta);
            const double loo = static_cast<double>(per_eta) / static_cast<double>(per_eta - 1);
            for (std::size_t k = 0; k < per_eta; ++k) g += loo * (f[k] - m) * score[k] / static_cast<double>(per_eta);
            total += m;
            ++used;
        }
        if (2 * used <= up.size()) throw cut::AbortedIteration("dirichlet va: most draws fell outside the support");
        g /= static_cast<double>(used);
        ad::Tensor gt(1, C_);
        for (std::size_t c = 0; c < C_; ++c) gt[c] = g[c];
        return {total / static_cast<double>(used), ad::GradMap{{"dir.logalpha", gt}}};
    }

    cut::TrainResult fit(const cut::DownstreamModel& model, const cut::UpstreamSamples& up, const cut::TrainConfig& cfg,
                         std::size_t per_eta = 4) {
        if (model.support() != cut::Support::simplex || model.theta_dim() != C_) {
            throw InvalidArgument("dirichlet va: model must live on the " + std::to_string(C_) + "-simplex");
        }
        cut::ObjectiveFn obj = [&](std::size_t step) {
            std::mt19937_64 rng(derive_seed(cfg.seed, {streams::train, step}));
            auto [v, g] = elbo(model, up, per_eta, rng);
            return cut::StepResult{v, std::move(g)};
        };
        return cut::train_loop(ps_, obj, cfg);
    }

    cut::CutPosteriorDraws draw(const cut::UpstreamSamples& up, std::uint64_t seed) const {
        cut::CutPosteriorDraws out;
        out.eta = up.eta;
        out.eta_names = up.column_names();
        out.theta = ad::Tensor(up.size(), C_);
        out.seed = seed;
        out.checkpoint_id = "dirichlet-va";
        std::mt19937_64 rng(derive_seed(seed, {streams::sample}));
        for (std::size_t i = 0; i < up.size(); ++i) {
            auto p = sample(up.eta.row_span(i), rng);
            for (std::size_t c = 0; c < C_; ++c) out.theta(i, c) = p[c];
        }
        return out;
    }

private:
    std::size_t C_;
    MatrixOf m_;
    ad::ParamStore ps_;
};

}  // namespace nevicut::baselines
