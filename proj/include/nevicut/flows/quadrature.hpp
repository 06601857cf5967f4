#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "nevicut/error.hpp"

namespace nevicut::flows {

struct GaussLegendre {
    std::vector<double> nodes;    // on [-1, 1]
    std::vector<double> weights;  // sum to 2
};

/// Nodes and weights by Newton iteration on P_Q, starting from the
/// Chebyshev-like guesses cos(pi (i - 1/4) / (Q + 1/2)), i = 1..Q.
inline GaussLegendre gauss_legendre(std::size_t q) {
    if (q < 1) throw InvalidArgument("gauss_legendre: order must be positive");
    GaussLegendre g{std::vector<double>(q), std::vector<double>(q)};
    if (q == 1) {
        g.weights[0] = 2.0;
        return g;
    }
    const double n = static_cast<double>(q);
    for (std::size_t i = 0; i < (q + 1) / 2; ++i) {
        double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (std::size_t k = 2; k <= q; ++k) {
                double kk = static_cast<double>(k);
                double p2 = ((2.0 * kk - 1.0) * x * p1 - (kk - 1.0) * p0) / kk;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            double dx = p1 / dp;
            x -= dx;
            if (std::fabs(dx) < 1e-16) break;
        }
        double p0 = 1.0, p1 = x;
        for (std::size_t k = 2; k <= q; ++k) {
            double kk = static_cast<double>(k);
            double p2 = ((2.0 * kk - 1.0) * x * p1 - (kk - 1.0) * p0) / kk;
            p0 = p1;
            p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        double w = 2.0 / ((1.0 - x * x) * dp * dp);
        g.nodes[i] = -x;
        g.nodes[q - 1 - i] = x;
        g.weights[i] = w;
        g.weights[q - 1 - i] = w;
    }
    return g;
}

}  // namespace nevicut::flows
