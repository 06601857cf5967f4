#pragma once

#include "nevicut/error.hpp"

namespace nevicut::baselines {

/// Sufficient statistics of the two-sample Gaussian bias model:
/// z_i ~ N(phi, 1), i <= n1; w_j ~ N(phi + eta, 1), j <= n2;
/// phi ~ N(0, 1/delta1), eta ~ N(0, 1/delta2).
struct GaussianBiasData {
    double s_z = 0.0;
    double s_w = 0.0;
    double n1 = 0.0;
    double n2 = 0.0;
};

struct GaussianBiasHyper {
    double delta1 = 1.0;
    double delta2 = 100.0;
};

struct GaussianBiasPosteriors {
    // Full Bayes: joint normal over (phi, eta).
    double fb_mean_phi, fb_mean_eta;
    double fb_var_phi, fb_var_eta, fb_cov;
    // Cut: phi | z, then eta | phi, w.
    double cut_mean_phi, cut_var_phi;
    double cut_mean_eta, cut_var_eta;
};

inline GaussianBiasPosteriors analytic_gaussian_bias(const GaussianBiasData& x, const GaussianBiasHyper& h) {
    if (x.n1 < 0.0 || x.n2 < 0.0) throw InvalidArgument("gaussian bias: sample sizes must be non-negative");
    if (!(h.delta1 > 0.0) || !(h.delta2 > 0.0)) throw InvalidArgument("gaussian bias: prior precisions must be positive");
    const double a = x.n1 + x.n2 + h.delta1;  // precision of phi
    const double b = x.n2 + h.delta2;         // precision of eta
    const double D = a * b - x.n2 * x.n2;
    if (!(D > 0.0)) throw InvalidArgument("gaussian bias: joint precision is not positive definite");
    GaussianBiasPosteriors p{};
    // Precision [[a, n2], [n2, b]], linear term (S_z + S_w, S_w).
    p.fb_var_phi = b / D;
    p.fb_var_eta = a / D;
    p.fb_cov = -x.n2 / D;
    p.fb_mean_phi = (b * (x.s_z + x.s_w) - x.n2 * x.s_w) / D;
    p.fb_mean_eta = ((x.n1 + h.delta1) * x.s_w - x.n2 * x.s_z) / D;
    p.cut_mean_phi = x.s_z / (x.n1 + h.delta1);
    p.cut_var_phi = 1.0 / (x.n1 + h.delta1);
    p.cut_mean_eta = ((x.n1 + h.delta1) * x.s_w - x.n2 * x.s_z) / ((x.n1 + h.delta1) * b);
    p.cut_var_eta = 1.0 / b + x.n2 * x.n2 / (b * b * (x.n1 + h.delta1));
    return p;
}

}  // namespace nevicut::baselines
