#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "nevicut/autodiff/tensor.hpp"
#include "nevicut/error.hpp"

namespace nevicut::cut {

/// Pre-drawn samples eta_1..eta_N from the upstream posterior.
struct UpstreamSamples {
    ad::Tensor eta;  // N x d_eta
    std::vector<std::string> names;

    std::size_t size() const { return eta.rows(); }
    std::size_t dim() const { return eta.cols(); }

    void validate() const {
        if (eta.rows() == 0 || eta.cols() == 0) throw InvalidArgument("upstream: need at least one draw and one column");
        for (std::size_t i = 0; i < eta.rows(); ++i)
            for (std::size_t j = 0; j < eta.cols(); ++j)
                if (!std::isfinite(eta(i, j))) {
                    throw InvalidArgument("upstream: non-finite value at row " + std::to_string(i + 1) + ", column " +
                                          std::to_string(j + 1));
                }
        if (!names.empty() && names.size() != eta.cols()) throw InvalidArgument("upstream: column name count mismatch");
    }

    std::vector<std::string> column_names() const {
        if (!names.empty()) return names;
        std::vector<std::string> out;
        for (std::size_t j = 0; j < eta.cols(); ++j) out.push_back("eta_" + std::to_string(j + 1));
        return out;
    }
};

enum class Support { unconstrained, simplex };

inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();

/// Downstream log-density evaluators. Gradients are with respect to theta;
/// an empty `grad` span means the caller does not need them. Out-of-support
/// points return -inf.
class DownstreamModel {
public:
    virtual ~DownstreamModel() = default;

    virtual std::string name() const = 0;
    virtual std::size_t theta_dim() const = 0;
    virtual std::size_t eta_dim() const = 0;
    virtual Support support() const { return Support::unconstrained; }

    /// Number of i.i.d. likelihood units; 0 when the likelihood is not decomposable.
    virtual std::size_t units() const { return 0; }

    virtual double log_lik(std::span<const double> theta, std::span<const double> eta, std::span<double> grad) const = 0;
    virtual double log_prior(std::span<const double> theta, std::span<const double> eta,
                             std::span<double> grad) const = 0;

    /// Starting point for samplers; a reasonable guess, not necessarily the mode.
    virtual std::vector<double> initial_theta(std::span<const double>) const {
        if (support() == Support::simplex) return std::vector<double>(theta_dim(), 1.0 / static_cast<double>(theta_dim()));
        return std::vector<double>(theta_dim(), 0.0);
    }

    /// Sum of the log-likelihood over the listed units.
    virtual double log_lik_units(std::span<const double>, std::span<const double>, std::span<const std::size_t>,
                                 std::span<double>) const {
        throw InvalidArgument("model '" + name() + "' is not decomposable over units");
    }
};

}  // namespace nevicut::cut
