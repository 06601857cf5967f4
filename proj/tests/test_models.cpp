#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "nevicut/baselines/analytic.hpp"
#include "nevicut/baselines/gaussian_va.hpp"
#include "nevicut/cut/objective.hpp"
#include "nevicut/cut/sample.hpp"
#include "nevicut/cut/train.hpp"
#include "nevicut/flows/conditional_flow.hpp"
#include "nevicut/metrics/metrics.hpp"
#include "nevicut/models/registry.hpp"

using namespace nevicut;
using namespace nevicut::models;

namespace {

double fd_check(const cut::DownstreamModel& m, std::vector<double> th, std::span<const double> eta, bool prior) {
    const std::size_t d = th.size();
    std::vector<double> g(d);
    if (prior)
        m.log_prior(th, eta, g);
    else
        m.log_lik(th, eta, g);
    double worst = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(th[j]));
        auto tp = th, tm = th;
        tp[j] += h;
        tm[j] -= h;
        const double num = prior ? (m.log_prior(tp, eta, {}) - m.log_prior(tm, eta, {})) / (2 * h)
                                 : (m.log_lik(tp, eta, {}) - m.log_lik(tm, eta, {})) / (2 * h);
        worst = std::max(worst, std::abs(num - g[j]) / std::max(1.0, std::abs(num)));
    }
    return worst;
}

Experiment build(const std::string& name, std::map<std::string, double> p = {}, std::uint64_t seed = 0) {
    return make_experiment(simulate({name, std::move(p), seed}));
}

/// log p(w | phi) with bias integrated out: w ~ N(phi 1, I + 11^T / delta2).
double gaussian_bias_evidence(const std::vector<double>& w, double phi, double delta2) {
    const double n = static_cast<double>(w.size());
    double s = 0.0, ss = 0.0;
    for (double v : w) {
        s += v - phi;
        ss += (v - phi) * (v - phi);
    }
    return -0.5 * n * std::log(2.0 * std::numbers::pi) - 0.5 * std::log1p(n / delta2) - 0.5 * (ss - s * s / (delta2 + n));
}

}  // namespace

TEST(Mixture, ExampleValues) {
    EXPECT_NEAR(mixture_parts(2.0).pi, 0.45, 1e-15);
    EXPECT_EQ(mixture_parts(1.0).mu1, 0.0);
    // Straight-line oracle at theta = 0, eta = 2.
    const double pi = 0.45, m1 = 4 * std::tanh(1.0), m2 = -4 * std::tanh(3.0), v = 1.5;
    const double c = 1.0 / std::sqrt(2 * std::numbers::pi * v);
    const double direct = pi * c * std::exp(-m1 * m1 / (2 * v)) + (1 - pi) * c * std::exp(-m2 * m2 / (2 * v));
    EXPECT_NEAR(mixture_conditional_logpdf(0.0, 2.0), std::log(direct), 1e-13);
}

TEST(Mixture, IntegratesToOne) {
    for (double eta : {0.2, 0.99, 2.09, 3.05, 6.0}) {
        double s = 0.0;
        const double h = 1e-3;
        for (int i = -20000; i <= 20000; ++i) s += std::exp(mixture_conditional_logpdf(i * h, eta)) * h;
        EXPECT_NEAR(s, 1.0, 1e-9) << eta;
    }
}

TEST(GaussianBias, SimulateAndPrior) {
    Dataset d = simulate({"gaussian_bias", {}, 0});
    ASSERT_EQ(d.array("z").size(), 100u);
    ASSERT_EQ(d.array("w").size(), 1000u);
    double m = 0.0;
    for (double v : d.array("w")) m += v;
    EXPECT_NEAR(m / 1000.0, 1.0, 0.15);
    Experiment e = make_experiment(d);
    std::vector<double> th{0.0}, eta{0.0};
    EXPECT_NEAR(e.model->log_prior(th, eta, {}), 1.383646559789373, 1e-9);
}

TEST(GaussianBias, IntegratesOverThetaByQuadrature) {
    Experiment e = build("gaussian_bias");
    std::vector<double> eta{0.05};
    // exp(log_lik) is a Gaussian in theta with mode mean(w) - phi and precision n2.
    double mode = 0.0;
    for (double v : e.data.array("w")) mode += v / 1000.0;
    mode -= eta[0];
    std::vector<double> at{mode};
    const double peak = e.model->log_lik(at, eta, {});
    double s = 0.0;
    const double h = 1e-4;
    for (int i = -20000; i <= 20000; ++i) {
        std::vector<double> th{mode + i * h};
        s += std::exp(e.model->log_lik(th, eta, {}) - peak) * h;
    }
    EXPECT_TRUE(std::isfinite(s));
    EXPECT_NEAR(s, std::sqrt(2 * std::numbers::pi / 1000.0), 1e-3);
}

TEST(GaussianBias, JointMatchesBivariateNormal) {
    Experiment e = build("gaussian_bias", {}, 3);
    auto x = gaussian_bias_stats(e.data);
    auto p = baselines::analytic_gaussian_bias(x, {});
    auto joint = joint_logpdf(e);
    // Joint over (bias, phi) minus the closed-form Gaussian must be constant.
    const double det = p.fb_var_phi * p.fb_var_eta - p.fb_cov * p.fb_cov;
    auto gauss = [&](double b, double ph) {
        const double dp = ph - p.fb_mean_phi, db = b - p.fb_mean_eta;
        return -0.5 * (p.fb_var_eta * dp * dp - 2 * p.fb_cov * dp * db + p.fb_var_phi * db * db) / det;
    };
    std::vector<double> a{0.9, 0.01}, b{1.1, -0.05}, c{0.7, 0.2};
    const double k = joint(a) - gauss(a[0], a[1]);
    EXPECT_NEAR(joint(b) - gauss(b[0], b[1]), k, 1e-6);
    EXPECT_NEAR(joint(c) - gauss(c[0], c[1]), k, 1e-6);
}

TEST(GaussianBias, UpstreamMatchesConjugatePosterior) {
    Experiment e = build("gaussian_bias", {}, 1);
    auto p = baselines::analytic_gaussian_bias(gaussian_bias_stats(e.data), {});
    auto up = e.upstream(20000, 5);
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < up.size(); ++i) m += up.eta[i];
    m /= up.size();
    for (std::size_t i = 0; i < up.size(); ++i) v += (up.eta[i] - m) * (up.eta[i] - m);
    v /= up.size() - 1;
    EXPECT_NEAR(m, p.cut_mean_phi, 4 * std::sqrt(p.cut_var_phi / 20000));
    EXPECT_NEAR(v / p.cut_var_phi, 1.0, 0.05);
}

TEST(GaussianBias, ElboAtOptimumMatchesEvidence) {
    Experiment e = build("gaussian_bias");
    const auto& w = e.data.array("w");
    const double n2 = 1000.0, d2 = 100.0;
    double sw = 0.0;
    for (double v : w) sw += v;
    baselines::GaussianVAFamily q(1, 1);
    q.params().set("va.b", ad::Tensor::scalar(sw / (n2 + d2)));
    q.params().set("va.W", ad::Tensor::scalar(-n2 / (n2 + d2)));
    q.params().set("va.logsigma", ad::Tensor::scalar(-0.5 * std::log(n2 + d2)));
    auto up = e.upstream(10000, 2);
    auto est = cut::elbo_hat_z(q, *e.model, up, 8, false);
    double oracle = 0.0;
    for (std::size_t i = 0; i < up.size(); ++i) oracle += gaussian_bias_evidence(w, up.eta[i], d2);
    oracle = oracle / up.size() - 0.5 * (1.0 + std::log(2 * std::numbers::pi));
    EXPECT_NEAR(est.value, oracle, 3.0 * std::sqrt(0.5 / 10000.0));
}

TEST(GaussianBias, TrainedFlowMatchesCutClosedForm) {
    Experiment e = build("gaussian_bias");
    auto p = baselines::analytic_gaussian_bias(gaussian_bias_stats(e.data), {});
    auto up = e.upstream(1000, 0);
    flows::FlowConfig fc;
    fc.layers = 2;
    fc.hidden = {16, 16};
    flows::ConditionalFlow flow(fc, 0);
    flow.standardize_from(up.eta);
    cut::TrainConfig tc;
    tc.max_iters = 1500;
    tc.lr = 5e-3;
    tc.warm_start_iters = 300;
    tc.seed = 0;
    cut::train(flow, *e.model, up, tc);
    auto draws = cut::sample_cut_posterior(flow, up, 1, "t");
    std::vector<double> th(draws.theta.data().begin(), draws.theta.data().end());
    double m = 0.0, v = 0.0;
    for (double x : th) m += x;
    m /= th.size();
    for (double x : th) v += (x - m) * (x - m);
    const double sd = std::sqrt(v / (th.size() - 1));
    EXPECT_NEAR(m, p.cut_mean_eta, 0.03);
    EXPECT_NEAR(sd / std::sqrt(p.cut_var_eta), 1.0, 0.10);
}

TEST(GaussianBias, KlFallsAcrossCheckpoints) {
    // Maximizing the ELBO should shrink the conditional KL to the analytic cut conditional.
    Experiment e = build("gaussian_bias");
    auto up = e.upstream(256, 0);
    const auto& w = e.data.array("w");
    double sw = 0.0;
    for (double v : w) sw += v;
    const double prec = 1100.0, sd = 1.0 / std::sqrt(prec);
    flows::FlowConfig fc;
    fc.layers = 1;
    fc.hidden = {8};
    flows::ConditionalFlow flow(fc, 0);
    flow.standardize_from(up.eta);
    const std::vector<double> probes{-0.15, -0.05, 0.05, 0.15};
    std::vector<std::vector<double>> kl(probes.size());
    cut::TrainConfig tc;
    tc.max_iters = 400;
    tc.patience = 400;
    tc.lr = 2e-2;
    tc.checkpoint_every = 80;
    tc.on_checkpoint = [&](std::size_t, const ad::ParamStore& ps) {
        flows::ConditionalFlow probe = flow;
        probe.params().restore(ps.snapshot());
        for (std::size_t k = 0; k < probes.size(); ++k) {
            const double mean = (sw - 1000.0 * probes[k]) / prec;
            std::vector<double> grid, pd;
            for (int i = -2000; i <= 2000; ++i) {
                grid.push_back(mean + 12.0 * sd * i / 2000.0);
                const double r = (grid.back() - mean) / sd;
                pd.push_back(std::exp(-0.5 * r * r));
            }
            std::vector<double> eta0{probes[k]};
            auto qd = cut::conditional_density_grid(probe, eta0, grid);
            // Keep q's support inside p's (p is positive everywhere on the grid).
            kl[k].push_back(metrics::grid_kl(qd, pd, grid[1] - grid[0]));
        }
    };
    cut::train(flow, *e.model, up, tc);
    int monotone = 0;
    for (const auto& series : kl) {
        ASSERT_GE(series.size(), 4u);
        bool ok = true;
        for (std::size_t i = 1; i < series.size(); ++i) ok = ok && series[i] < series[i - 1];
        monotone += ok;
    }
    EXPECT_GE(monotone, 3);
}

TEST(Hpv, ZeroCountRecordsContributeMinusOne) {
    HpvModel m({0, 0, 0}, {1, 1, 1}, 1000.0);
    std::vector<double> th{0.0, 0.0}, eta{0.2, 0.5, 0.9};
    EXPECT_NEAR(m.log_lik(th, eta, {}), -3.0, 1e-14);
    std::vector<std::size_t> one{1};
    EXPECT_NEAR(m.log_lik_units(th, eta, one, {}), -1.0, 1e-14);
}

TEST(Hpv, SyntheticTableAndUpstream) {
    Experiment e = build("hpv");
    EXPECT_EQ(e.data.array("z").size(), 13u);
    EXPECT_EQ(e.model->eta_dim(), 13u);
    auto up = e.upstream(5000, 1);
    const auto& z = e.data.array("z");
    const auto& n = e.data.array("n");
    for (std::size_t i = 0; i < 13; ++i) {
        double m = 0.0;
        for (std::size_t r = 0; r < up.size(); ++r) m += up.eta(r, i);
        m /= up.size();
        const double a = 1 + z[i], b = 1 + n[i] - z[i];
        const double sd = std::sqrt(a * b / ((a + b) * (a + b) * (a + b + 1)));
        EXPECT_NEAR(m, a / (a + b), 4 * sd / std::sqrt(5000.0));
    }
    std::vector<double> bad(13, 0.2);
    bad[4] = 1.2;
    EXPECT_EQ(e.upstream_logpdf(bad), cut::neg_inf);
}

TEST(VaCalibration, IdentityPhiGivesPlainMultinomial) {
    Experiment e = build("va_calibration", {{"phi_identity", 1}, {"n", 20000}}, 4);
    const auto& v = e.data.array("v");
    const auto& p = e.data.truth.at("p");
    double n = 0.0;
    for (double x : v) n += x;
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(v[c] / n, p[c], 4 * std::sqrt(p[c] * (1 - p[c]) / n));
    auto eta = eta_from_phi(Eigen::MatrixXd::Identity(3, 3));
    std::vector<double> q{0.2, 0.3, 0.5};
    double direct = std::lgamma(n + 1);
    for (std::size_t c = 0; c < 3; ++c) direct += v[c] * std::log(q[c]) - std::lgamma(v[c] + 1);
    EXPECT_NEAR(e.model->log_lik(q, eta, {}), direct, 1e-8);
}

TEST(VaCalibration, SimplexGeometry) {
    Experiment e = build("va_calibration", {}, 2);
    EXPECT_EQ(e.model->support(), cut::Support::simplex);
    auto up = e.upstream(200, 3);
    for (std::size_t r = 0; r < up.size(); ++r) {
        auto P = phi_from_eta(up.eta.row_span(r), 3);
        EXPECT_GT(P.minCoeff(), 0.0);
        for (int i = 0; i < 3; ++i) EXPECT_NEAR(P.row(i).sum(), 1.0, 1e-12);
    }
    auto eta = up.eta.row_span(0);
    EXPECT_EQ(e.model->log_lik(std::vector<double>{0.5, 0.6, -0.1}, eta, {}), cut::neg_inf);
    EXPECT_EQ(e.model->log_lik(std::vector<double>{0.5, 0.6, 0.1}, eta, {}), cut::neg_inf);
    EXPECT_EQ(e.model->log_prior(std::vector<double>{0.0, 0.5, 0.5}, eta, {}), cut::neg_inf);
    EXPECT_TRUE(std::isfinite(e.model->log_lik(std::vector<double>{0.2, 0.3, 0.5}, eta, {})));
    // Round trip of the column-major layout without the last column.
    Eigen::MatrixXd P(3, 3);
    P << 0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.3, 0.3, 0.4;
    auto back = phi_from_eta(eta_from_phi(P), 3);
    EXPECT_NEAR((back - P).cwiseAbs().maxCoeff(), 0.0, 1e-15);
    EXPECT_EQ(eta_from_phi(P)[1], 0.1);  // Phi(1, 0)
}

TEST(Propensity, NullTreatmentModelGivesHalfRate) {
    Dataset d = simulate({"propensity", {{"theta1_scale", 0.0}}, 9});
    double t = 0.0;
    for (double x : d.array("X")) t += x;
    EXPECT_NEAR(t / 500.0, 0.5, 0.05);
    EXPECT_EQ(d.array("C").size(), 500u * 6u);
}

TEST(Propensity, StrataAreQuintiles) {
    Experiment e = build("propensity", {}, 1);
    const auto& pm = dynamic_cast<const PropensityModel&>(*e.model);
    std::vector<double> eta{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    auto s = pm.strata(eta);
    std::vector<int> counts(5, 0);
    for (auto k : s) counts[k]++;
    for (int c : counts) EXPECT_NEAR(c, 100, 1);
    EXPECT_EQ(e.model->theta_dim(), 6u);
    EXPECT_EQ(e.model->eta_dim(), 7u);
    // The cache must not leak strata between different eta.
    std::vector<double> flip{0.0, -0.1, -0.2, -0.3, -0.4, -0.5, -0.6};
    auto s2 = pm.strata(flip);
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(s2[i], 4 - s[i]);
}

TEST(Propensity, UpstreamCentresOnTruth) {
    Experiment e = build("propensity", {{"n", 2000}, {"upstream_warmup", 1000}}, 5);
    auto up = e.upstream(400, 1);
    ASSERT_EQ(up.dim(), 7u);
    const auto& t = e.data.truth.at("theta1");
    for (std::size_t j = 1; j < 7; ++j) {
        double m = 0.0;
        for (std::size_t r = 0; r < up.size(); ++r) m += up.eta(r, j);
        EXPECT_NEAR(m / up.size(), t[j], 0.2) << j;
    }
}

TEST(Models, GradientsMatchFiniteDifferences) {
    for (const auto& name : builtin_names()) {
        Experiment e = build(name, name == "propensity" ? std::map<std::string, double>{{"upstream_warmup", 200}}
                                                        : std::map<std::string, double>{},
                             7);
        auto up = e.upstream(3, 1);
        for (std::size_t r = 0; r < up.size(); ++r) {
            auto eta = up.eta.row_span(r);
            std::vector<double> th = e.model->initial_theta(eta);
            if (e.model->support() == cut::Support::simplex) th = {0.25, 0.35, 0.4};
            else
                for (std::size_t j = 0; j < th.size(); ++j) th[j] += 0.01 * (j + 1);
            EXPECT_LT(fd_check(*e.model, th, eta, false), 1e-5) << name;
            EXPECT_LT(fd_check(*e.model, th, eta, true), 1e-5) << name;
        }
    }
}

TEST(Models, UnitSumsEqualFullLikelihood) {
    for (const std::string name : {"gaussian_bias", "propensity", "hpv"}) {
        Experiment e = build(name, name == "propensity" ? std::map<std::string, double>{{"upstream_warmup", 100}}
                                                        : std::map<std::string, double>{});
        auto up = e.upstream(1, 2);
        auto eta = up.eta.row_span(0);
        auto th = e.model->initial_theta(eta);
        std::vector<std::size_t> all(e.model->units());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        std::vector<double> g1(th.size()), g2(th.size());
        const double a = e.model->log_lik(th, eta, g1), b = e.model->log_lik_units(th, eta, all, g2);
        EXPECT_NEAR(a, b, 1e-9 * std::abs(a)) << name;
        for (std::size_t j = 0; j < th.size(); ++j) EXPECT_NEAR(g1[j], g2[j], 1e-8 * (1 + std::abs(g1[j]))) << name;
    }
}

TEST(Models, SimulateIsDeterministicAndValidated) {
    for (const auto& name : builtin_names()) {
        Dataset a = simulate({name, {}, 11}), b = simulate({name, {}, 11});
        EXPECT_EQ(dataset_csv(a), dataset_csv(b)) << name;
        EXPECT_EQ(dataset_meta(a).dump(), dataset_meta(b).dump()) << name;
    }
    EXPECT_THROW(simulate({"nope", {}, 0}), InvalidArgument);
    EXPECT_THROW(simulate({"gaussian_bias", {{"n3", 5}}, 0}), InvalidArgument);
    EXPECT_THROW(simulate({"gaussian_bias", {{"n1", 0}}, 0}), InvalidArgument);
    EXPECT_THROW(simulate({"propensity", {{"n", -5}}, 0}), InvalidArgument);
    EXPECT_THROW(make_builtin_model("hpv", simulate({"gaussian_bias", {}, 0})), InvalidArgument);
}

TEST(Models, DatasetRoundTripsThroughFiles) {
    auto dir = std::filesystem::temp_directory_path() / "nevicut_test_models";
    std::filesystem::create_directories(dir);
    Dataset a = simulate({"propensity", {{"n", 50}}, 3});
    save_dataset(a, dir / "prop.csv");
    Dataset b = load_dataset(dir / "prop.csv");
    EXPECT_EQ(a.model, b.model);
    EXPECT_EQ(a.seed, b.seed);
    EXPECT_EQ(a.params, b.params);
    EXPECT_EQ(a.arrays, b.arrays);
    EXPECT_EQ(a.truth, b.truth);
    io::write_atomic(dir / "bad.csv", "array,index,value\nX,0,1\nX,2,1\n");
    io::write_atomic(dir / "bad.json", dataset_meta(a).dump());
    EXPECT_THROW(load_dataset(dir / "bad.csv"), InvalidArgument);
    std::filesystem::remove_all(dir);
}
