#pragma once

#include <string>
#include <vector>

#include "nevicut/autodiff/engine.hpp"
#include "nevicut/flows/base.hpp"

namespace nevicut::flows {

/// Raised when a layer produces a non-finite value.
class FlowError : public Error {
public:
    FlowError(std::size_t layer, const std::string& what)
        : Error("flow layer " + std::to_string(layer) + ": " + what), layer_(layer) {}
    std::size_t layer() const { return layer_; }

private:
    std::size_t layer_;
};

struct FlowVars {
    ad::Var theta;   // N x output_dim
    ad::Var logdet;  // N x 1
};

/// Reparameterized conditional family q(theta | eta): theta = T(eta, z),
/// z ~ base. Both the neural flows and the parametric baselines implement
/// it, so they are trained by the same objective code.
class VariationalFamily {
public:
    virtual ~VariationalFamily() = default;

    virtual std::size_t base_dim() const = 0;
    virtual std::size_t eta_dim() const = 0;
    virtual std::size_t output_dim() const = 0;
    virtual const BaseDist& base() const = 0;
    virtual ad::ParamStore& params() = 0;
    virtual const ad::ParamStore& params() const = 0;
    virtual FlowVars forward(const ad::VarMap& p, ad::Var eta, ad::Var z) const = 0;

    /// Parameters trained alone during an optional warm-start phase.
    virtual std::vector<std::string> warm_start_params() const { return {}; }
};

}  // namespace nevicut::flows
