#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "nevicut/autodiff/tape.hpp"
#include "nevicut/error.hpp"

namespace nevicut::ad {

using GradMap = std::map<std::string, Tensor>;

/// Named parameter tensors in insertion order, with Adam moment buffers.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor value;
        Tensor m;  // first moment
        Tensor v;  // second moment
    };

    /// Adds a parameter; names must be unique.
    void add(const std::string& name, Tensor value) {
        if (index_.count(name)) throw InvalidArgument("ParamStore: duplicate parameter '" + name + "'");
        index_[name] = entries_.size();
        Entry e{name, value, Tensor(value.rows(), value.cols(), 0.0), Tensor(value.rows(), value.cols(), 0.0)};
        entries_.push_back(std::move(e));
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const Tensor& get(const std::string& name) const { return entries_.at(lookup(name)).value; }
    Tensor& get(const std::string& name) { return entries_.at(lookup(name)).value; }

    void set(const std::string& name, const Tensor& value) {
        Entry& e = entries_.at(lookup(name));
        if (!value.same_shape(e.value)) {
            throw InvalidArgument("ParamStore: shape mismatch for '" + name + "': " + value.shape_string() +
                                  " vs " + e.value.shape_string());
        }
        e.value = value;
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }
    std::size_t size() const { return entries_.size(); }
    std::size_t step() const { return step_; }

    std::size_t num_scalars() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.value.size();
        return n;
    }

    /// Registers every parameter as a leaf on the tape.
    std::unordered_map<std::string, Var> bind(Tape& tape) const {
        std::unordered_map<std::string, Var> out;
        for (const auto& e : entries_) out.emplace(e.name, tape.param(e.value, e.name));
        return out;
    }

    /// Parameter values only, used for checkpointing the best iterate.
    std::vector<Tensor> snapshot() const {
        std::vector<Tensor> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.value);
        return out;
    }

    void restore(const std::vector<Tensor>& values) {
        if (values.size() != entries_.size()) throw InvalidArgument("ParamStore::restore: size mismatch");
        for (std::size_t i = 0; i < values.size(); ++i) entries_[i].value = values[i];
    }

    void reset_optimizer() {
        step_ = 0;
        for (auto& e : entries_) {
            e.m.fill(0.0);
            e.v.fill(0.0);
        }
    }

    /// Advances the shared optimizer step counter and returns the new value.
    std::size_t advance_step() { return ++step_; }

private:
    std::size_t lookup(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw InvalidArgument("ParamStore: unknown parameter '" + name + "'");
        return it->second;
    }

    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
    std::size_t step_ = 0;
};

struct AdamHyper {
    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;
};

/// One Adam ascent step: value += lr * mhat / (sqrt(vhat) + eps).
///
/// Returns false (and leaves everything untouched) when any gradient is
/// non-finite. Parameters missing from `grads` are treated as having zero
/// gradient. When `only` is given, only those parameters move.
inline bool adam_step(ParamStore& params, const GradMap& grads, double lr,
                      const std::vector<std::string>* only = nullptr) {
    if (!(lr > 0.0)) throw InvalidArgument("adam_step: learning rate must be positive");
    for (const auto& [name, g] : grads) {
        if (!params.contains(name)) throw InvalidArgument("adam_step: gradient for unknown parameter '" + name + "'");
        if (!g.same_shape(params.get(name))) {
            throw InvalidArgument("adam_step: gradient shape mismatch for '" + name + "'");
        }
        if (!g.all_finite()) return false;
    }
    const double t = static_cast<double>(params.advance_step());
    const double bc1 = 1.0 - std::pow(AdamHyper::beta1, t);
    const double bc2 = 1.0 - std::pow(AdamHyper::beta2, t);
    for (auto& e : params.entries()) {
        if (only) {
            bool keep = false;
            for (const auto& n : *only) keep = keep || n == e.name;
            if (!keep) continue;
        }
        auto it = grads.find(e.name);
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            double g = it == grads.end() ? 0.0 : it->second[i];
            e.m[i] = AdamHyper::beta1 * e.m[i] + (1.0 - AdamHyper::beta1) * g;
            e.v[i] = AdamHyper::beta2 * e.v[i] + (1.0 - AdamHyper::beta2) * g * g;
            double mhat = e.m[i] / bc1;
            double vhat = e.v[i] / bc2;
            e.value[i] += lr * mhat / (std::sqrt(vhat) + AdamHyper::eps);
        }
    }
    return true;
}

/// Global L2 norm of a gradient map.
inline double grad_norm(const GradMap& grads) {
    double s = 0.0;
    for (const auto& [_, g] : grads)
        for (double v : g.data()) s += v * v;
    return std::sqrt(s);
}

/// Rescales gradients in place so their global norm is at most `max_norm`.
inline void clip_grad_norm(GradMap& grads, double max_norm) {
    double n = grad_norm(grads);
    if (!(n > max_norm) || !std::isfinite(n)) return;
    double f = max_norm / n;
    for (auto& [_, g] : grads)
        for (double& v : g.data()) v *= f;
}

}  // namespace nevicut::ad
