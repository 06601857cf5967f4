#pragma once

#include "nevicut/models/gaussian_bias.hpp"
#include "nevicut/models/hpv.hpp"
#include "nevicut/models/mixture.hpp"
#include "nevicut/models/propensity.hpp"
#include "nevicut/models/va_calibration.hpp"

namespace nevicut::models {

inline const std::vector<std::string>& builtin_names() {
    static const std::vector<std::string> names{"mixture", "gaussian_bias", "propensity", "hpv", "va_calibration"};
    return names;
}

/// Documented parameters (with defaults) of a built-in experiment.
inline std::map<std::string, double> builtin_defaults(const std::string& name) {
    if (name == "mixture") return mixture_defaults();
    if (name == "gaussian_bias") return gaussian_bias_defaults();
    if (name == "propensity") return propensity_defaults();
    if (name == "hpv") return hpv_defaults();
    if (name == "va_calibration") return va_calibration_defaults();
    std::string known;
    for (const auto& n : builtin_names()) known += (known.empty() ? "" : ", ") + n;
    throw InvalidArgument("unknown experiment '" + name + "' (known: " + known + ")");
}

/// Fills defaults and rejects unknown keys and non-positive sizes.
inline ExperimentSpec resolve_spec(const ExperimentSpec& s) {
    ExperimentSpec r = s;
    r.params = builtin_defaults(s.name);
    for (const auto& [k, v] : s.params) {
        if (!r.params.count(k)) throw InvalidArgument("experiment '" + s.name + "': unknown parameter '" + k + "'");
        if (!std::isfinite(v)) throw InvalidArgument("experiment '" + s.name + "': parameter '" + k + "' is not finite");
        r.params[k] = v;
    }
    static const char* sizes[] = {"n", "n1", "n2", "C", "labeled", "strata", "upstream_thin"};
    for (const char* k : sizes) {
        auto it = r.params.find(k);
        if (it == r.params.end()) continue;
        if (!(it->second >= 1.0) || std::floor(it->second) != it->second) {
            throw InvalidArgument("experiment '" + s.name + "': size '" + std::string(k) + "' must be a positive integer");
        }
    }
    return r;
}

inline Dataset simulate(const ExperimentSpec& spec) {
    ExperimentSpec s = resolve_spec(spec);
    if (s.name == "mixture") return simulate_mixture(s);
    if (s.name == "gaussian_bias") return simulate_gaussian_bias(s);
    if (s.name == "propensity") return simulate_propensity(s);
    if (s.name == "hpv") return simulate_hpv(s);
    return simulate_va_calibration(s);
}

inline Experiment make_experiment(const Dataset& d) {
    if (d.model == "mixture") return make_mixture_experiment(d);
    if (d.model == "gaussian_bias") return make_gaussian_bias_experiment(d);
    if (d.model == "propensity") return make_propensity_experiment(d);
    if (d.model == "hpv") return make_hpv_experiment(d);
    if (d.model == "va_calibration") return make_va_calibration_experiment(d);
    builtin_defaults(d.model);  // throws with the list of known names
    return {};
}

inline std::shared_ptr<const cut::DownstreamModel> make_builtin_model(const std::string& name, const Dataset& d) {
    if (name != d.model) throw InvalidArgument("model '" + name + "' does not match dataset of '" + d.model + "'");
    return make_experiment(d).model;
}

}  // namespace nevicut::models
