#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "nevicut/autodiff/engine.hpp"

namespace nevicut::flows {

enum class Activation { relu, leaky_relu, tanh };

inline Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "leaky-relu" || s == "leaky_relu") return Activation::leaky_relu;
    if (s == "tanh") return Activation::tanh;
    throw InvalidArgument("unknown activation '" + s + "'");
}

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::leaky_relu: return "leaky-relu";
        case Activation::tanh: return "tanh";
    }
    return "?";
}

struct MlpSpec {
    std::size_t in = 1;
    std::vector<std::size_t> hidden;
    std::size_t out = 1;
    Activation act = Activation::leaky_relu;
};

/// Registers `prefix.W{k}` / `prefix.b{k}`. He-uniform for ReLU-type layers,
/// Xavier-uniform for tanh; biases zero. The last layer starts at zero when
/// `zero_last` so that conditioners initially emit all-zero parameters.
inline void init_mlp(ad::ParamStore& ps, const std::string& prefix, const MlpSpec& spec, std::mt19937_64& rng,
                     bool zero_last = true) {
    std::vector<std::size_t> dims{spec.in};
    dims.insert(dims.end(), spec.hidden.begin(), spec.hidden.end());
    dims.push_back(spec.out);
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
        const std::size_t fi = dims[k], fo = dims[k + 1];
        ad::Tensor w(fi, fo, 0.0);
        const bool last = k + 2 == dims.size();
        if (!(last && zero_last)) {
            double lim = spec.act == Activation::tanh ? std::sqrt(6.0 / static_cast<double>(fi + fo))
                                                      : std::sqrt(6.0 / static_cast<double>(fi));
            std::uniform_real_distribution<double> u(-lim, lim);
            for (double& v : w.data()) v = u(rng);
        }
        ps.add(prefix + ".W" + std::to_string(k), std::move(w));
        ps.add(prefix + ".b" + std::to_string(k), ad::Tensor(1, fo, 0.0));
    }
}

inline ad::Var activate(ad::Var x, Activation a) {
    switch (a) {
        case Activation::relu: return ad::relu(x);
        case Activation::leaky_relu: return ad::leaky_relu(x);
        case Activation::tanh: return ad::tanh(x);
    }
    return x;
}

inline ad::Var mlp_forward(const ad::VarMap& params, const std::string& prefix, const MlpSpec& spec, ad::Var x) {
    const std::size_t layers = spec.hidden.size() + 1;
    for (std::size_t k = 0; k < layers; ++k) {
        const std::string n = std::to_string(k);
        x = ad::affine(x, params.at(prefix + ".W" + n), params.at(prefix + ".b" + n));
        if (k + 1 < layers) x = activate(x, spec.act);
    }
    return x;
}

}  // namespace nevicut::flows
