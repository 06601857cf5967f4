#pragma once

#include <Eigen/Dense>

#include "nevicut/models/common.hpp"
#include "nevicut/util/seed.hpp"

namespace nevicut::models {

/// Rebuilds the row-stochastic C x C confusion matrix from its first C-1
/// columns, stored column-major in eta; the last column is 1 - row sum.
inline Eigen::MatrixXd phi_from_eta(std::span<const double> eta, std::size_t C) {
    if (eta.size() != C * (C - 1)) throw InvalidArgument("va_calibration: eta must hold C(C-1) entries");
    Eigen::MatrixXd P(C, C);
    for (std::size_t i = 0; i < C; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j + 1 < C; ++j) {
            P(i, j) = eta[j * C + i];
            s += P(i, j);
        }
        P(i, C - 1) = 1.0 - s;
    }
    return P;
}

inline std::vector<double> eta_from_phi(const Eigen::MatrixXd& P) {
    const std::size_t C = static_cast<std::size_t>(P.rows());
    std::vector<double> eta(C * (C - 1));
    for (std::size_t j = 0; j + 1 < C; ++j)
        for (std::size_t i = 0; i < C; ++i) eta[j * C + i] = P(i, j);
    return eta;
}

/// Predicted-cause counts v ~ Multinomial(n, Phi^T p) with p on the simplex
/// and prior Dirichlet(1 + 4 C v / n).
class VACalibrationModel : public cut::DownstreamModel {
public:
    explicit VACalibrationModel(std::vector<double> v) : v_(std::move(v)), C_(v_.size()) {
        if (C_ < 2) throw InvalidArgument("va_calibration: need at least two causes");
        double n = 0.0;
        for (double x : v_) {
            if (!(x >= 0.0)) throw InvalidArgument("va_calibration: counts must be nonnegative");
            n += x;
            lconst_ -= std::lgamma(x + 1.0);
        }
        if (!(n > 0.0)) throw InvalidArgument("va_calibration: need at least one count");
        lconst_ += std::lgamma(n + 1.0);
        double asum = 0.0;
        for (double x : v_) {
            alpha_.push_back(1.0 + 4.0 * static_cast<double>(C_) * x / n);
            asum += alpha_.back();
            pconst_ -= std::lgamma(alpha_.back());
        }
        pconst_ += std::lgamma(asum);
    }
    std::string name() const override { return "va_calibration"; }
    std::size_t theta_dim() const override { return C_; }
    std::size_t eta_dim() const override { return C_ * (C_ - 1); }
    cut::Support support() const override { return cut::Support::simplex; }
    const std::vector<double>& prior_alpha() const { return alpha_; }

    double log_lik(std::span<const double> p, std::span<const double> eta, std::span<double> g) const override {
        if (!on_simplex(p)) return cut::neg_inf;
        Eigen::MatrixXd P = phi_from_eta(eta, C_);
        if (P.minCoeff() < 0.0) return cut::neg_inf;
        Eigen::Map<const Eigen::VectorXd> pv(p.data(), static_cast<Eigen::Index>(C_));
        Eigen::VectorXd q = P.transpose() * pv;
        double v = lconst_;
        Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(C_));
        for (std::size_t k = 0; k < C_; ++k) {
            if (v_[k] == 0.0) continue;
            if (!(q[k] > 0.0)) return cut::neg_inf;
            v += v_[k] * std::log(q[k]);
            r[k] = v_[k] / q[k];
        }
        if (!g.empty()) {
            Eigen::VectorXd d = P * r;
            for (std::size_t c = 0; c < C_; ++c) g[c] = d[c];
        }
        return v;
    }
    double log_prior(std::span<const double> p, std::span<const double>, std::span<double> g) const override {
        if (!on_simplex(p)) return cut::neg_inf;
        double v = pconst_;
        for (std::size_t c = 0; c < C_; ++c) {
            v += (alpha_[c] - 1.0) * std::log(p[c]);
            if (!g.empty()) g[c] = (alpha_[c] - 1.0) / p[c];
        }
        return v;
    }

private:
    bool on_simplex(std::span<const double> p) const {
        if (p.size() != C_) return false;
        double s = 0.0;
        for (double x : p) {
            if (!(x > 0.0)) return false;
            s += x;
        }
        return std::abs(s - 1.0) <= 1e-9;
    }

    std::vector<double> v_;
    std::size_t C_;
    std::vector<double> alpha_;
    double lconst_ = 0.0, pconst_ = 0.0;
};

inline std::map<std::string, double> va_calibration_defaults() {
    return {{"C", 3}, {"n", 500}, {"labeled", 100}, {"diag_boost", 6.0}, {"phi_identity", 0}};
}

/// Random diagonal-dominant Phi (rows ~ Dirichlet(1 + boost e_i)), true p ~
/// Dirichlet(1), v ~ Multinomial(n, Phi^T p), and `labeled` deaths per true
/// cause classified through Phi; the latter are the upstream data.
inline Dataset simulate_va_calibration(const ExperimentSpec& s) {
    Dataset d;
    d.model = "va_calibration";
    d.seed = s.seed;
    d.params = s.params;
    const std::size_t C = d.count("C"), n = d.count("n"), m = d.count("labeled");
    if (C < 2) throw InvalidArgument("va_calibration: C must be at least 2");
    const bool identity = d.param("phi_identity") != 0.0;
    const double boost = d.param("diag_boost");
    if (!(boost >= 0.0)) throw InvalidArgument("va_calibration: diag_boost must be nonnegative");
    std::mt19937_64 rng(derive_seed(s.seed, {streams::simulate}));
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(C, C);
    if (!identity) {
        for (std::size_t i = 0; i < C; ++i) {
            std::vector<double> a(C, 1.0);
            a[i] += boost;
            auto row = dirichlet_draw(a, rng);
            for (std::size_t j = 0; j < C; ++j) P(i, j) = row[j];
        }
    }
    std::vector<double> ones(C, 1.0);
    std::vector<double> p = dirichlet_draw(ones, rng);
    Eigen::VectorXd q = P.transpose() * Eigen::Map<Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(C));
    auto multinomial = [&](std::size_t N, std::vector<double> probs) {
        std::vector<double> out(probs.size(), 0.0);
        std::discrete_distribution<std::size_t> dd(probs.begin(), probs.end());
        for (std::size_t k = 0; k < N; ++k) out[dd(rng)] += 1.0;
        return out;
    };
    d.arrays["v"] = multinomial(n, std::vector<double>(q.data(), q.data() + C));
    auto& L = d.arrays["labeled"];
    for (std::size_t i = 0; i < C; ++i) {
        std::vector<double> pr(C);
        for (std::size_t j = 0; j < C; ++j) pr[j] = P(i, j);
        auto row = multinomial(m, pr);
        L.insert(L.end(), row.begin(), row.end());
    }
    d.truth["p"] = p;
    std::vector<double> flat;
    for (std::size_t i = 0; i < C; ++i)
        for (std::size_t j = 0; j < C; ++j) flat.push_back(P(i, j));
    d.truth["phi"] = flat;
    return d;
}

inline Experiment make_va_calibration_experiment(const Dataset& d) {
    Experiment e;
    e.data = d;
    const std::vector<double>& v = d.array("v");
    const std::size_t C = v.size();
    e.model = std::make_shared<VACalibrationModel>(v);
    std::vector<double> L = d.array("labeled");
    if (L.size() != C * C) throw InvalidArgument("va_calibration: labeled counts must be C x C");
    // Phi_i | labeled ~ Dirichlet(1 + labeled_i), rows independent.
    e.upstream = [L, C](std::size_t N, std::uint64_t seed) {
        std::mt19937_64 rng(derive_seed(seed, {streams::upstream}));
        cut::UpstreamSamples u;
        u.eta = ad::Tensor(N, C * (C - 1));
        std::vector<double> a(C);
        Eigen::MatrixXd P(C, C);
        for (std::size_t r = 0; r < N; ++r) {
            for (std::size_t i = 0; i < C; ++i) {
                for (std::size_t j = 0; j < C; ++j) a[j] = 1.0 + L[i * C + j];
                auto row = dirichlet_draw(a, rng);
                for (std::size_t j = 0; j < C; ++j) P(i, j) = row[j];
            }
            auto eta = eta_from_phi(P);
            for (std::size_t k = 0; k < eta.size(); ++k) u.eta(r, k) = eta[k];
        }
        return u;
    };
    const auto& p = d.truth.at("p");
    for (std::size_t c = 0; c < C; ++c) e.scored.push_back({c, p.at(c)});
    return e;
}

}  // namespace nevicut::models
