#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nevicut/baselines/mcmc.hpp"
#include "nevicut/cut/train.hpp"
#include "nevicut/flows/config_io.hpp"
#include "nevicut/io/config.hpp"
#include "nevicut/models/registry.hpp"

namespace nevicut::experiments {

/// Everything a benchmark or training run needs besides the seed.
/// `flow.dim`, `flow.eta_dim` and `flow.head` are filled from the model.
struct RunSettings {
    std::string experiment;
    std::map<std::string, double> params;  // overrides of the experiment defaults
    std::size_t n_upstream = 1000;
    flows::FlowConfig flow;
    cut::TrainConfig train;
    baselines::MCMCConfig nested;
    baselines::MCMCConfig fullbayes;
    cut::TrainConfig va;
    std::size_t va_per_eta = 4;     // Dirichlet VA score-function draws per eta
    std::size_t sample_passes = 1;  // NeVI draws per upstream row when comparing distributions
    std::vector<std::string> methods;
    std::vector<flows::FlowKind> flow_kinds;  // mixture only: one fit per kind
    std::size_t mixture_eta_nodes = 60;
    double mixture_grid_step = 0.02;
    double alpha = 0.05;
};

inline const std::vector<std::string>& known_methods(const std::string& experiment) {
    static const std::map<std::string, std::vector<std::string>> m{
        {"gaussian_bias", {"nevi", "analytic_cut", "full_bayes", "gaussian_va"}},
        {"propensity", {"nevi", "nested", "full_bayes"}},
        {"hpv", {"nevi", "nested", "gaussian_va"}},
        {"va_calibration", {"nevi", "nested", "dirichlet_va"}},
        {"mixture", {"nevi"}},
    };
    auto it = m.find(experiment);
    if (it == m.end()) models::builtin_defaults(experiment);  // throws with the known names
    return it->second;
}

/// Desk-scale defaults per experiment, sized so each benchmark fits its time budget.
inline RunSettings default_settings(const std::string& experiment) {
    RunSettings s;
    s.experiment = experiment;
    s.methods = known_methods(experiment);
    auto& f = s.flow;
    auto& t = s.train;
    t.seed = 0;
    s.va.max_iters = 2000;
    s.va.patience = 200;
    s.va.lr = 1e-2;
    if (experiment == "gaussian_bias") {
        s.n_upstream = 1000;
        f.layers = 2;
        f.hidden = {16, 16};
        t.max_iters = 1500;
        t.patience = 300;
        t.lr = 5e-3;
        t.warm_start_iters = 300;
        s.fullbayes.warmup = 2000;
        s.fullbayes.kept = 4000;
        s.fullbayes.thin = 2;
    } else if (experiment == "mixture") {
        s.n_upstream = 4000;
        f.layers = 3;
        f.hidden = {32, 32};
        f.bins = 16;
        f.half_width = 8.0;
        f.umnn_width = 32;
        f.umnn_median_layers = 2;
        f.umnn_deriv_layers = 3;
        f.quadrature = 24;
        t.max_iters = 2000;
        t.patience = 2000;
        t.lr = 5e-3;
        t.minibatch.n_eta = 256;
        s.flow_kinds = {flows::FlowKind::rqnsf_ar, flows::FlowKind::umnn};
    } else if (experiment == "propensity") {
        s.n_upstream = 2000;
        f.layers = 1;
        f.hidden = {32, 32};
        t.max_iters = 2000;
        t.patience = 400;
        t.lr = 3e-3;
        t.minibatch.n_eta = 32;
        t.minibatch.n_d = 0;  // all 500 subjects: subsampling noise swamps the stopping rule
        t.warm_start_iters = 200;
        s.nested.warmup = 500;
        s.nested.kept = 100;
        s.fullbayes.warmup = 5000;
        s.fullbayes.kept = 4000;
        s.fullbayes.thin = 5;
    } else if (experiment == "hpv") {
        s.n_upstream = 2000;
        f.layers = 1;
        f.hidden = {32, 32};
        t.max_iters = 2000;
        t.patience = 400;
        t.lr = 3e-3;
        t.minibatch.n_eta = 64;
        t.warm_start_iters = 200;
        s.nested.warmup = 500;
        s.nested.kept = 50;
        s.sample_passes = 10;
    } else if (experiment == "va_calibration") {
        s.n_upstream = 2000;
        f.layers = 2;
        f.hidden = {32, 32};
        t.max_iters = 2000;
        t.patience = 400;
        t.lr = 3e-3;
        t.minibatch.n_eta = 64;
        t.warm_start_iters = 200;
        s.nested.warmup = 500;
        s.nested.kept = 50;
        s.sample_passes = 10;
        s.va.lr = 2e-2;
        s.va.max_iters = 600;
        s.va.patience = 150;
        s.va.minibatch.n_eta = 200;
    }
    return s;
}

namespace detail {

inline std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok.erase(0, tok.find_first_not_of(" \t"));
        tok.erase(tok.find_last_not_of(" \t") + 1);
        if (!tok.empty()) out.push_back(tok);
    }
    return out;
}

inline void apply_train(cut::TrainConfig& t, const std::string& key, const io::Config& c, const std::string& full) {
    if (key == "max_iters") t.max_iters = c.get_uint(full, t.max_iters);
    else if (key == "patience") t.patience = c.get_uint(full, t.patience);
    else if (key == "lr") t.lr = c.get_double(full, t.lr);
    else if (key == "n_eta") t.minibatch.n_eta = c.get_uint(full, t.minibatch.n_eta);
    else if (key == "n_z") t.minibatch.n_z = c.get_uint(full, t.minibatch.n_z);
    else if (key == "n_d") t.minibatch.n_d = c.get_uint(full, t.minibatch.n_d);
    else if (key == "window") t.window = c.get_uint(full, t.window);
    else if (key == "clip_norm") t.clip_norm = c.get_double(full, t.clip_norm);
    else if (key == "warm_start_iters") t.warm_start_iters = c.get_uint(full, t.warm_start_iters);
    else if (key == "warm_start_lr") t.warm_start_lr = c.get_double(full, t.warm_start_lr);
    else if (key == "checkpoint_every") t.checkpoint_every = c.get_uint(full, t.checkpoint_every);
    else throw io::ConfigError(c.source(), c.line_of(full), "unknown key '" + full + "'");
}

inline void apply_mcmc(baselines::MCMCConfig& m, const std::string& key, const io::Config& c, const std::string& full) {
    if (key == "warmup") m.warmup = c.get_uint(full, m.warmup);
    else if (key == "kept") m.kept = c.get_uint(full, m.kept);
    else if (key == "thin") m.thin = c.get_uint(full, m.thin);
    else if (key == "init_scale") m.init_scale = c.get_double(full, m.init_scale);
    else if (key == "target_accept") m.target_accept = c.get_double(full, m.target_accept);
    else if (key == "adapt_covariance") m.adapt_covariance = c.get_bool(full, m.adapt_covariance);
    else throw io::ConfigError(c.source(), c.line_of(full), "unknown key '" + full + "'");
}

}  // namespace detail

/// Overlays `[flow]`, `[train]`, `[nested]`, `[fullbayes]`, `[va]`,
/// `[experiment]` and `[run]` entries. Other sections are the caller's
/// (`[paths]`, `seed`); anything else is rejected with its line.
inline void apply_config(RunSettings& s, const io::Config& c) {
    for (const auto& full : c.keys()) {
        const auto dot = full.find('.');
        if (dot == std::string::npos) continue;
        const std::string sec = full.substr(0, dot), key = full.substr(dot + 1);
        const std::string val = c.get_string(full, "");
        try {
            if (sec == "flow") {
                if (key == "dim" || key == "eta_dim" || key == "head") {
                    throw InvalidArgument("'" + full + "' is set from the model");
                }
                if (!flows::set_flow_config_item(s.flow, key, val)) throw InvalidArgument("unknown key '" + full + "'");
            } else if (sec == "train") {
                detail::apply_train(s.train, key, c, full);
            } else if (sec == "va") {
                if (key == "per_eta") s.va_per_eta = c.get_uint(full, s.va_per_eta);
                else detail::apply_train(s.va, key, c, full);
            } else if (sec == "nested") {
                detail::apply_mcmc(s.nested, key, c, full);
            } else if (sec == "fullbayes") {
                detail::apply_mcmc(s.fullbayes, key, c, full);
            } else if (sec == "experiment") {
                s.params[key] = c.get_double(full, 0.0);
            } else if (sec == "run") {
                if (key == "n_upstream") s.n_upstream = c.get_uint(full, s.n_upstream);
                else if (key == "sample_passes") s.sample_passes = c.get_uint(full, s.sample_passes);
                else if (key == "alpha") s.alpha = c.get_double(full, s.alpha);
                else if (key == "mixture_eta_nodes") s.mixture_eta_nodes = c.get_uint(full, s.mixture_eta_nodes);
                else if (key == "mixture_grid_step") s.mixture_grid_step = c.get_double(full, s.mixture_grid_step);
                else if (key == "methods") {
                    s.methods = detail::split_list(val);
                    const auto& ok = known_methods(s.experiment);
                    for (const auto& m : s.methods) {
                        if (std::find(ok.begin(), ok.end(), m) == ok.end()) {
                            throw InvalidArgument("method '" + m + "' is not defined for " + s.experiment);
                        }
                    }
                } else if (key == "flows") {
                    s.flow_kinds.clear();
                    for (const auto& k : detail::split_list(val)) s.flow_kinds.push_back(flows::parse_flow_kind(k));
                } else throw InvalidArgument("unknown key '" + full + "'");
            }
        } catch (const io::ConfigError&) {
            throw;
        } catch (const InvalidArgument& e) {
            throw io::ConfigError(c.source(), c.line_of(full), e.what());
        }
    }
    if (s.n_upstream < 2) throw io::ConfigError(c.source(), c.line_of("run.n_upstream"), "run.n_upstream must be at least 2");
    if (s.sample_passes < 1) throw io::ConfigError(c.source(), c.line_of("run.sample_passes"), "run.sample_passes must be at least 1");
    if (!(s.alpha > 0.0 && s.alpha < 1.0)) throw io::ConfigError(c.source(), c.line_of("run.alpha"), "run.alpha must be in (0, 1)");
}

/// Fills the model-determined flow fields.
inline flows::FlowConfig flow_for(const flows::FlowConfig& base, const cut::DownstreamModel& model) {
    flows::FlowConfig f = base;
    f.eta_dim = model.eta_dim();
    if (model.support() == cut::Support::simplex) {
        f.head = flows::OutputHead::stick_breaking;
        f.dim = model.theta_dim() - 1;
    } else {
        f.head = flows::OutputHead::identity;
        f.dim = model.theta_dim();
    }
    return f;
}

}  // namespace nevicut::experiments
