#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "nevicut/baselines/analytic.hpp"
#include "nevicut/baselines/gaussian_va.hpp"
#include "nevicut/baselines/mcmc.hpp"
#include "nevicut/baselines/nested.hpp"
#include "nevicut/cut/objective.hpp"
#include "nevicut/flows/conditional_flow.hpp"

using namespace nevicut;
using namespace nevicut::baselines;

namespace {

double sq(double x) { return x * x; }

double mean_col(const ad::Tensor& t, std::size_t j) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.rows(); ++i) s += t(i, j);
    return s / static_cast<double>(t.rows());
}

double var_col(const ad::Tensor& t, std::size_t j) {
    const double m = mean_col(t, j);
    double s = 0.0;
    for (std::size_t i = 0; i < t.rows(); ++i) s += sq(t(i, j) - m);
    return s / static_cast<double>(t.rows() - 1);
}

double cov_cols(const ad::Tensor& t, std::size_t a, std::size_t b) {
    const double ma = mean_col(t, a), mb = mean_col(t, b);
    double s = 0.0;
    for (std::size_t i = 0; i < t.rows(); ++i) s += (t(i, a) - ma) * (t(i, b) - mb);
    return s / static_cast<double>(t.rows() - 1);
}

/// Downstream half of the two-sample bias model, written directly from the
/// sufficient statistics: theta = bias, eta = phi; w ~ N(phi + theta, 1).
class BiasDownstream : public cut::DownstreamModel {
public:
    BiasDownstream(double s_w, double n2, double delta2) : s_w_(s_w), n2_(n2), d2_(delta2) {}
    std::string name() const override { return "bias-downstream"; }
    std::size_t theta_dim() const override { return 1; }
    std::size_t eta_dim() const override { return 1; }
    double log_lik(std::span<const double> th, std::span<const double> eta, std::span<double> g) const override {
        // Up to a constant in theta: -0.5 * sum (w - phi - theta)^2.
        const double m = th[0] + eta[0];
        if (!g.empty()) g[0] = s_w_ - n2_ * m;
        return s_w_ * m - 0.5 * n2_ * m * m;
    }
    double log_prior(std::span<const double> th, std::span<const double>, std::span<double> g) const override {
        if (!g.empty()) g[0] = -d2_ * th[0];
        return -0.5 * d2_ * th[0] * th[0];
    }

private:
    double s_w_, n2_, d2_;
};

/// Flat likelihood, standard normal prior on a d-vector.
class PriorOnly : public cut::DownstreamModel {
public:
    explicit PriorOnly(std::size_t d) : d_(d) {}
    std::string name() const override { return "prior-only"; }
    std::size_t theta_dim() const override { return d_; }
    std::size_t eta_dim() const override { return 1; }
    double log_lik(std::span<const double>, std::span<const double>, std::span<double> g) const override {
        std::fill(g.begin(), g.end(), 0.0);
        return 0.0;
    }
    double log_prior(std::span<const double> th, std::span<const double>, std::span<double> g) const override {
        double v = 0.0;
        for (std::size_t j = 0; j < d_; ++j) {
            v -= 0.5 * th[j] * th[j];
            if (!g.empty()) g[j] = -th[j];
        }
        return v;
    }

private:
    std::size_t d_;
};

/// y_i ~ N(theta - 2 eta, 1) with prior N(0, 100): conditional is nearly N(2 eta + ybar, 1/n).
class LinearShift : public cut::DownstreamModel {
public:
    LinearShift(double ybar, double n) : ybar_(ybar), n_(n) {}
    std::string name() const override { return "linear-shift"; }
    std::size_t theta_dim() const override { return 1; }
    std::size_t eta_dim() const override { return 1; }
    double log_lik(std::span<const double> th, std::span<const double> eta, std::span<double> g) const override {
        const double r = ybar_ - (th[0] - 2.0 * eta[0]);
        if (!g.empty()) g[0] = n_ * r;
        return -0.5 * n_ * r * r;
    }
    double log_prior(std::span<const double> th, std::span<const double>, std::span<double> g) const override {
        if (!g.empty()) g[0] = -th[0] / 100.0;
        return -0.5 * th[0] * th[0] / 100.0;
    }

private:
    double ybar_, n_;
};

/// Categorical counts with a flat Dirichlet prior; eta is ignored.
class Categorical : public cut::DownstreamModel {
public:
    explicit Categorical(std::vector<double> counts) : v_(std::move(counts)) {}
    std::string name() const override { return "categorical"; }
    std::size_t theta_dim() const override { return v_.size(); }
    std::size_t eta_dim() const override { return 1; }
    cut::Support support() const override { return cut::Support::simplex; }
    double log_lik(std::span<const double> p, std::span<const double>, std::span<double>) const override {
        double s = 0.0;
        for (std::size_t c = 0; c < v_.size(); ++c) {
            if (!(p[c] > 0.0)) return cut::neg_inf;
            s += v_[c] * std::log(p[c]);
        }
        return s;
    }
    double log_prior(std::span<const double>, std::span<const double>, std::span<double>) const override { return 0.0; }

private:
    std::vector<double> v_;
};

cut::UpstreamSamples draws_from(double m, double sd, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(m, sd);
    cut::UpstreamSamples u;
    u.eta = ad::Tensor(n, 1);
    for (std::size_t i = 0; i < n; ++i) u.eta[i] = nd(rng);
    return u;
}

double std_normal_logpdf(std::span<const double> x) {
    double v = 0.0;
    for (double xi : x) v -= 0.5 * xi * xi;
    return v;
}

}  // namespace

TEST(Mcmc, StandardNormalMoments) {
    MCMCConfig c;
    c.warmup = 2000;
    c.kept = 50000;
    c.seed = 11;
    std::vector<double> x0{3.0};
    Chain ch = rw_metropolis(std_normal_logpdf, x0, c);
    EXPECT_LT(std::abs(mean_col(ch.draws, 0)), 0.05);
    EXPECT_LT(std::abs(var_col(ch.draws, 0) - 1.0), 0.05);
    EXPECT_GT(ch.acceptance, 0.2);
    EXPECT_LT(ch.acceptance, 0.6);
}

TEST(Mcmc, AlwaysAcceptsUphillMoves) {
    // Monotone increasing density on a line: every proposal to the right is accepted.
    MCMCConfig c;
    c.warmup = 0;
    c.kept = 2000;
    c.seed = 3;
    c.init_scale = 0.5;
    std::vector<double> x0{0.0};
    Chain ch = rw_metropolis([](std::span<const double> x) { return 1e6 * x[0]; }, x0, c);
    for (std::size_t k = 1; k < ch.draws.rows(); ++k) EXPECT_GE(ch.draws[k], ch.draws[k - 1]);
    EXPECT_GT(ch.acceptance, 0.45);
    EXPECT_LT(ch.acceptance, 0.55);
}

TEST(Mcmc, DeterministicGivenSeed) {
    MCMCConfig c;
    c.warmup = 300;
    c.kept = 500;
    c.seed = 42;
    std::vector<double> x0{0.5, -0.5};
    Chain a = rw_metropolis(std_normal_logpdf, x0, c);
    Chain b = rw_metropolis(std_normal_logpdf, x0, c);
    for (std::size_t i = 0; i < a.draws.size(); ++i) ASSERT_EQ(a.draws[i], b.draws[i]);
    c.seed = 43;
    Chain d = rw_metropolis(std_normal_logpdf, x0, c);
    EXPECT_NE(a.draws[a.draws.size() - 1], d.draws[d.draws.size() - 1]);
}

TEST(Mcmc, RejectsNonFiniteStart) {
    MCMCConfig c;
    std::vector<double> x0{-1.0};
    auto half = [](std::span<const double> x) { return x[0] > 0.0 ? -x[0] : -std::numeric_limits<double>::infinity(); };
    EXPECT_THROW(rw_metropolis(half, x0, c), InvalidArgument);
    c.kept = 0;
    std::vector<double> ok{1.0};
    EXPECT_THROW(rw_metropolis(half, ok, c), InvalidArgument);
}

TEST(Mcmc, UniformOnBoxKs) {
    MCMCConfig c;
    c.warmup = 1000;
    c.kept = 20000;
    c.thin = 5;
    c.seed = 7;
    std::vector<double> x0{0.5};
    auto box = [](std::span<const double> x) {
        return (x[0] > 0.0 && x[0] < 1.0) ? 0.0 : -std::numeric_limits<double>::infinity();
    };
    Chain ch = rw_metropolis(box, x0, c);
    std::vector<double> v(ch.draws.data().begin(), ch.draws.data().end());
    std::sort(v.begin(), v.end());
    double ks = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        double n = static_cast<double>(v.size());
        ks = std::max({ks, std::abs(v[i] - i / n), std::abs(v[i] - (i + 1) / n)});
    }
    EXPECT_LT(ks, 0.05);
}

TEST(Mcmc, CorrelatedTargetAdaptsShape) {
    // rho = 0.95 bivariate normal; covariance adaptation should recover it.
    const double rho = 0.95;
    auto lp = [rho](std::span<const double> x) {
        return -0.5 * (x[0] * x[0] - 2 * rho * x[0] * x[1] + x[1] * x[1]) / (1 - rho * rho);
    };
    MCMCConfig c;
    c.warmup = 4000;
    c.kept = 40000;
    c.seed = 5;
    std::vector<double> x0{0.0, 0.0};
    Chain ch = rw_metropolis(lp, x0, c);
    EXPECT_NEAR(cov_cols(ch.draws, 0, 1), rho, 0.08);
    EXPECT_NEAR(var_col(ch.draws, 0), 1.0, 0.1);
}

TEST(Analytic, ClosedFormsMatchHandComputation) {
    GaussianBiasData x{0.0, 1000.0, 100.0, 1000.0};
    auto p = analytic_gaussian_bias(x, {});
    // Cut: phi | z ~ N(0, 1/101); eta | phi, w ~ N((1000 - 1000 phi)/1100, 1/1100).
    EXPECT_NEAR(p.cut_mean_phi, 0.0, 1e-15);
    EXPECT_NEAR(p.cut_var_phi, 1.0 / 101.0, 1e-15);
    EXPECT_NEAR(p.cut_mean_eta, 1000.0 / 1100.0, 1e-12);
    EXPECT_NEAR(p.cut_var_eta, 1.0 / 1100.0 + sq(1000.0 / 1100.0) / 101.0, 1e-12);
    // Full Bayes: invert [[1101, 1000], [1000, 1100]].
    const double D = 1101.0 * 1100.0 - 1e6;
    EXPECT_NEAR(p.fb_var_eta, 1101.0 / D, 1e-12);
    EXPECT_NEAR(p.fb_var_phi, 1100.0 / D, 1e-12);
    EXPECT_NEAR(p.fb_mean_eta, (1101.0 * 1000.0 - 1000.0 * 1000.0) / D, 1e-12);
    EXPECT_NEAR(p.cut_mean_eta, 0.909091, 1e-6);
    EXPECT_NEAR(p.cut_var_eta, 0.0090917, 1e-7);
    EXPECT_THROW(analytic_gaussian_bias(x, {0.0, 1.0}), InvalidArgument);
}

TEST(Nested, GaussianBiasMatchesClosedForm) {
    GaussianBiasData x{4.0, 1030.0, 100.0, 1000.0};
    GaussianBiasHyper h;
    auto p = analytic_gaussian_bias(x, h);
    auto up = draws_from(p.cut_mean_phi, std::sqrt(p.cut_var_phi), 400, 1);
    BiasDownstream m(x.s_w, x.n2, h.delta2);
    MCMCConfig c;
    c.warmup = 200;
    c.kept = 50;
    c.seed = 9;
    NestedResult r = nested_mcmc_cut(m, up, c);
    ASSERT_EQ(r.draws.theta.rows(), 400u * 50u);
    EXPECT_TRUE(r.failed.empty());
    EXPECT_NEAR(mean_col(r.draws.theta, 0), p.cut_mean_eta, 4.0 * std::sqrt(p.cut_var_eta / 400.0));
    EXPECT_NEAR(var_col(r.draws.theta, 0) / p.cut_var_eta, 1.0, 0.15);
    // eta is passed through unchanged, each draw repeated `kept` times.
    for (std::size_t i = 0; i < 400; ++i) ASSERT_EQ(r.draws.eta(i * 50 + 17, 0), up.eta[i]);
}

TEST(Nested, FlatLikelihoodReturnsPrior) {
    PriorOnly m(2);
    auto up = draws_from(0.0, 1.0, 50, 2);
    MCMCConfig c;
    c.warmup = 200;
    c.kept = 400;
    c.seed = 4;
    NestedResult r = nested_mcmc_cut(m, up, c);
    EXPECT_NEAR(mean_col(r.draws.theta, 1), 0.0, 0.05);
    EXPECT_NEAR(var_col(r.draws.theta, 0), 1.0, 0.06);
}

TEST(Nested, SimplexDrawsStayOnSimplex) {
    Categorical m({30.0, 10.0, 60.0});
    auto up = draws_from(0.0, 1.0, 20, 3);
    MCMCConfig c;
    c.warmup = 300;
    c.kept = 500;
    c.seed = 8;
    NestedResult r = nested_mcmc_cut(m, up, c);
    for (std::size_t i = 0; i < r.draws.theta.rows(); ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
            ASSERT_GT(r.draws.theta(i, k), 0.0);
            s += r.draws.theta(i, k);
        }
        ASSERT_NEAR(s, 1.0, 1e-12);
    }
    // Posterior Dirichlet(31, 11, 61): mean 31/103.
    EXPECT_NEAR(mean_col(r.draws.theta, 0), 31.0 / 103.0, 0.01);
}

TEST(FullBayes, BivariateNormalMatchesClosedForm) {
    GaussianBiasData x{4.0, 1030.0, 100.0, 1000.0};
    GaussianBiasHyper h;
    auto p = analytic_gaussian_bias(x, h);
    auto joint = [&](std::span<const double> v) {
        const double phi = v[0], eta = v[1];
        return x.s_z * phi - 0.5 * x.n1 * phi * phi + x.s_w * (phi + eta) - 0.5 * x.n2 * sq(phi + eta) -
               0.5 * h.delta1 * phi * phi - 0.5 * h.delta2 * eta * eta;
    };
    MCMCConfig c;
    c.warmup = 3000;
    c.kept = 40000;
    c.seed = 21;
    std::vector<double> x0{0.0, 0.0};
    Chain ch = full_bayes_mcmc(joint, x0, c);
    EXPECT_NEAR(mean_col(ch.draws, 1), p.fb_mean_eta, 0.1 * std::sqrt(p.fb_var_eta));
    EXPECT_NEAR(var_col(ch.draws, 1) / p.fb_var_eta, 1.0, 0.1);
    EXPECT_NEAR(cov_cols(ch.draws, 0, 1) / p.fb_cov, 1.0, 0.1);
}

TEST(GaussianVA, RecoversLinearConditional) {
    LinearShift m(0.5, 1.0);
    auto up = draws_from(0.0, 1.0, 256, 6);
    GaussianVAFamily f(1, 1);
    cut::TrainConfig tc;
    tc.max_iters = 3000;
    tc.patience = 3000;
    tc.lr = 0.02;
    tc.minibatch.n_eta = 64;
    tc.minibatch.n_z = 4;
    tc.seed = 13;
    VAResult r = gaussian_va_cut(f, m, up, tc, 1);
    // Exact conditional: N((0.5 + 2 eta) * 100/101, 100/101).
    EXPECT_NEAR(f.params().get("va.W")[0], 2.0 * 100.0 / 101.0, 0.05);
    EXPECT_NEAR(f.params().get("va.b")[0], 0.5 * 100.0 / 101.0, 0.05);
    EXPECT_NEAR(std::exp(f.params().get("va.logsigma")[0]), std::sqrt(100.0 / 101.0), 0.05);
    EXPECT_EQ(r.draws.theta.rows(), 256u);
}

TEST(GaussianVA, ConstantMeanHasNoEtaWeights) {
    GaussianVAFamily f(2, 3, true);
    EXPECT_FALSE(f.params().contains("va.W"));
    cut::TrainConfig tc;
    tc.max_iters = 0;
    PriorOnly m(2);
    auto up = draws_from(0.0, 1.0, 10, 1);
    EXPECT_THROW(gaussian_va_cut(f, m, up, tc, 1), InvalidArgument);  // eta dimension 3 vs 1
    GaussianVAFamily g(2, 1, true);
    VAResult r = gaussian_va_cut(g, m, up, tc, 1);
    EXPECT_EQ(r.train.steps, 0u);
}

TEST(GaussianVA, SharesObjectiveWithFlows) {
    // At initialization both families are the identity map theta = z, so the
    // shared estimator must return the same value from the same base draws.
    GaussianVAFamily va(1, 1);
    flows::FlowConfig fc;
    fc.kind = flows::FlowKind::rqnsf_ar;
    fc.layers = 2;
    fc.hidden = {4};
    fc.dim = 1;
    flows::ConditionalFlow flow(fc, 3);
    PriorOnly m(1);
    auto up = draws_from(0.0, 1.0, 64, 1);
    auto a = cut::elbo_hat_z(va, m, up, 5, false);
    auto b = cut::elbo_hat_z(flow, m, up, 5, false);
    EXPECT_NEAR(a.value, b.value, 1e-12);
    EXPECT_LT(a.value, 0.0);
}

TEST(DirichletVA, FitsCategoricalPosterior) {
    Categorical m({30.0, 10.0, 60.0});
    auto up = draws_from(0.0, 1.0, 32, 3);
    DirichletVA q(3, [](std::span<const double>) { return Eigen::MatrixXd::Identity(3, 3); });
    cut::TrainConfig tc;
    tc.max_iters = 1500;
    tc.patience = 1500;
    tc.lr = 0.05;
    tc.seed = 2;
    q.fit(m, up, tc, 4);
    // Exact posterior Dirichlet(31, 11, 61).
    std::vector<double> eta{0.0};
    Eigen::VectorXd beta = q.concentration(eta);
    EXPECT_NEAR(beta[0] / beta.sum(), 31.0 / 103.0, 0.02);
    EXPECT_NEAR(beta[2] / beta.sum(), 61.0 / 103.0, 0.02);
    EXPECT_NEAR(beta.sum() / 103.0, 1.0, 0.25);
    auto d = q.draw(up, 4);
    for (std::size_t i = 0; i < d.theta.rows(); ++i) {
        ASSERT_NEAR(d.theta(i, 0) + d.theta(i, 1) + d.theta(i, 2), 1.0, 1e-12);
        ASSERT_EQ(d.eta(i, 0), up.eta[i]);
    }
}
