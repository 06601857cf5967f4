#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>

#include "nevicut/autodiff/ops.hpp"
#include "nevicut/autodiff/params.hpp"

namespace nevicut::ad {

using VarMap = std::unordered_map<std::string, Var>;
using TensorMap = std::map<std::string, Tensor>;

/// A computation recorded against named inputs and parameters.
using Graph = std::function<Var(Tape&, const VarMap& inputs, const VarMap& params)>;

struct Evaluation {
    Tensor value;
    Tape tape;
    Var output;
};

struct Gradients {
    GradMap params;
    TensorMap inputs;
};

/// Builds a fresh tape, binds inputs and parameters as leaves and runs `graph`.
inline Evaluation forward_eval(const Graph& graph, const TensorMap& inputs, const ParamStore& params) {
    Evaluation ev{Tensor{}, Tape(true), Var{}};
    VarMap in;
    for (const auto& [name, t] : inputs) in.emplace(name, ev.tape.input(t, name));
    VarMap ps = params.bind(ev.tape);
    ev.output = graph(ev.tape, in, ps);
    ev.output.tape = &ev.tape;
    ev.value = ev.output.value();
    return ev;
}

/// Reverse pass over a single-use tape: d(seed . output)/d leaf for every
/// named parameter and input.
inline Gradients backward(Tape& tape, Var output, const Tensor& seed) {
    tape.backward(output, seed);
    return Gradients{tape.leaf_grads(LeafKind::param), tape.leaf_grads(LeafKind::input)};
}

inline Gradients backward(Evaluation& ev, const Tensor& seed) {
    ev.output.tape = &ev.tape;
    return backward(ev.tape, ev.output, seed);
}

/// Scalar function of a flat point with a reverse-mode gradient.
struct DifferentiableFn {
    std::function<double(std::span<const double>)> value;
    std::function<std::vector<double>(std::span<const double>)> gradient;
};

/// Max over coordinates of |g_ad - g_fd| / max(1, |g_fd|) using central
/// differences with the given step.
inline double grad_check(const DifferentiableFn& fn, std::span<const double> point, double step) {
    if (!(step > 0.0)) throw InvalidArgument("grad_check: step must be positive");
    std::vector<double> ad = fn.gradient(point);
    if (ad.size() != point.size()) throw InvalidArgument("grad_check: gradient length mismatch");
    std::vector<double> x(point.begin(), point.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double orig = x[i];
        x[i] = orig + step;
        double fp = fn.value(x);
        x[i] = orig - step;
        double fm = fn.value(x);
        x[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(ad[i])) {
            throw NonFiniteError(i, "grad_check");
        }
        double fd = (fp - fm) / (2.0 * step);
        worst = std::max(worst, std::fabs(ad[i] - fd) / std::max(1.0, std::fabs(fd)));
    }
    return worst;
}

/// Wraps a scalar-valued graph over one parameter store so that grad_check
/// can perturb its flattened parameters.
inline DifferentiableFn params_as_function(const Graph& graph, const TensorMap& inputs, const ParamStore& base) {
    auto unflatten = [base](std::span<const double> flat) {
        ParamStore p = base;
        std::size_t off = 0;
        for (auto& e : p.entries()) {
            for (std::size_t i = 0; i < e.value.size(); ++i) e.value[i] = flat[off++];
        }
        return p;
    };
    DifferentiableFn fn;
    fn.value = [graph, inputs, unflatten](std::span<const double> flat) {
        ParamStore p = unflatten(flat);
        return forward_eval(graph, inputs, p).value.item();
    };
    fn.gradient = [graph, inputs, unflatten](std::span<const double> flat) {
        ParamStore p = unflatten(flat);
        Evaluation ev = forward_eval(graph, inputs, p);
        Gradients g = backward(ev, Tensor::scalar(1.0));
        std::vector<double> out;
        for (const auto& e : p.entries()) {
            const Tensor& gt = g.params.at(e.name);
            out.insert(out.end(), gt.data().begin(), gt.data().end());
        }
        return out;
    };
    return fn;
}

inline std::vector<double> flatten(const ParamStore& p) {
    std::vector<double> out;
    for (const auto& e : p.entries()) out.insert(out.end(), e.value.data().begin(), e.value.data().end());
    return out;
}

}  // namespace nevicut::ad
