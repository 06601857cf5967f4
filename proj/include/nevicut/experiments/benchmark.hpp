#pragma once

#include <json.hpp>

#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "nevicut/experiments/methods.hpp"
#include "nevicut/metrics/report.hpp"

namespace nevicut::experiments {

struct ReplicateOutcome {
    std::map<std::string, double> diagnostics;  // deterministic given the seed
    std::map<std::string, double> seconds;      // wall-clock, per method
};

struct BenchmarkResult {
    std::string experiment;
    std::uint64_t seed = 0;
    std::map<std::string, metrics::ReplicateReport> reports;  // one per scored theta coordinate
    std::vector<ReplicateOutcome> replicates;

    /// Diagnostic `key` across replicates (NaN where absent).
    std::vector<double> column(const std::string& key) const {
        std::vector<double> v;
        for (const auto& r : replicates) {
            auto it = r.diagnostics.find(key);
            v.push_back(it == r.diagnostics.end() ? std::numeric_limits<double>::quiet_NaN() : it->second);
        }
        return v;
    }

    std::vector<double> times(const std::string& method) const {
        std::vector<double> v;
        for (const auto& r : replicates) {
            auto it = r.seconds.find(method);
            if (it != r.seconds.end()) v.push_back(it->second);
        }
        return v;
    }

    /// Deterministic report: scores and diagnostics, no wall-clock numbers.
    nlohmann::ordered_json report_json() const {
        nlohmann::ordered_json j;
        j["experiment"] = experiment;
        j["seed"] = seed;
        j["replicates"] = replicates.size();
        for (const auto& [k, r] : reports) j["scores"][k] = r.to_json(false);
        nlohmann::ordered_json per = nlohmann::ordered_json::array();
        std::map<std::string, std::vector<double>> cols;
        for (const auto& r : replicates) {
            per.push_back(r.diagnostics);
            for (const auto& [k, v] : r.diagnostics) cols[k].push_back(v);
        }
        for (const auto& [k, v] : cols) {
            auto s = metrics::summarize(v);
            j["diagnostics"][k] = {{"median", s.median}, {"q25", s.q25}, {"q75", s.q75}};
        }
        j["per_replicate"] = per;
        return j;
    }

    nlohmann::ordered_json timings_json() const {
        nlohmann::ordered_json j;
        j["experiment"] = experiment;
        std::map<std::string, std::vector<double>> cols;
        nlohmann::ordered_json per = nlohmann::ordered_json::array();
        for (const auto& r : replicates) {
            per.push_back(r.seconds);
            for (const auto& [k, v] : r.seconds) cols[k].push_back(v);
        }
        for (const auto& [k, v] : cols) {
            auto s = metrics::summarize(v);
            double tot = 0.0;
            for (double x : v) tot += x;
            j["seconds"][k] = {{"median", s.median}, {"q25", s.q25}, {"q75", s.q75}, {"total", tot}};
        }
        j["per_replicate"] = per;
        return j;
    }
};

/// Called once per method run, e.g. to save the draws of the first replicate.
using RunHook = std::function<void(std::size_t replicate, const MethodRun&)>;

namespace detail {

inline std::vector<double> column_of(const ad::Tensor& t, std::size_t j) {
    std::vector<double> v(t.rows());
    for (std::size_t i = 0; i < t.rows(); ++i) v[i] = t(i, j);
    return v;
}

inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return {m, std::sqrt(s / static_cast<double>(v.size() > 1 ? v.size() - 1 : 1))};
}

inline std::string theta_key(std::size_t j) { return "theta_" + std::to_string(j + 1); }

inline std::string fmt(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.2f", v);
    return b;
}

/// Grid KL of the fitted conditional against the exact mixture conditional at
/// fixed eta slices, and of the eta-marginals under the upstream Gamma.
inline void mixture_kls(const flows::ConditionalFlow& flow, const cut::UpstreamSamples& up, const RunSettings& s,
                        const std::string& tag, std::map<std::string, double>& diag) {
    const double h = s.mixture_grid_step, half = 12.0;
    std::vector<double> grid;
    for (long i = -static_cast<long>(half / h + 0.5); i <= static_cast<long>(half / h + 0.5); ++i) grid.push_back(h * i);
    auto exact = [&](double eta) {
        std::vector<double> p(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) p[i] = std::exp(models::mixture_conditional_logpdf(grid[i], eta));
        return p;
    };
    for (double eta0 : {0.99, 1.39, 2.09, 3.05}) {
        std::vector<double> e0{eta0};
        diag["kl." + tag + ".eta0_" + fmt(eta0)] = metrics::grid_kl(cut::conditional_density_grid(flow, e0, grid), exact(eta0), h);
    }
    // Marginal: equal-weight mixture over the upstream mid-quantiles, i.e. the
    // eta values the cut posterior is actually formed from.
    std::vector<double> etas(up.size());
    for (std::size_t i = 0; i < up.size(); ++i) etas[i] = up.eta(i, 0);
    std::sort(etas.begin(), etas.end());
    const std::size_t M = s.mixture_eta_nodes;
    if (M < 1 || etas.empty()) throw InvalidArgument("mixture: need at least one eta node and one upstream draw");
    std::vector<double> qm(grid.size(), 0.0), pm(grid.size(), 0.0);
    for (std::size_t k = 0; k < M; ++k) {
        const double eta = metrics::detail::q7(etas, (static_cast<double>(k) + 0.5) / static_cast<double>(M));
        std::vector<double> e0{eta};
        auto q = cut::conditional_density_grid(flow, e0, grid);
        auto p = exact(eta);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            qm[i] += q[i];
            pm[i] += p[i];
        }
    }
    diag["kl." + tag + ".marginal"] = metrics::grid_kl(qm, pm, h);
}

inline double simplex_error(const ad::Tensor& th) {
    double worst = 0.0;
    for (std::size_t i = 0; i < th.rows(); ++i) {
        double sum = 0.0;
        bool pos = true;
        for (std::size_t j = 0; j < th.cols(); ++j) {
            sum += th(i, j);
            pos = pos && th(i, j) > 0.0;
        }
        worst = std::max(worst, pos ? std::abs(sum - 1.0) : 1.0);
    }
    return worst;
}

inline std::vector<std::vector<double>> clr_columns(const ad::Tensor& th) {
    std::vector<std::vector<double>> cols(th.cols(), std::vector<double>(th.rows()));
    std::vector<double> p(th.cols());
    for (std::size_t i = 0; i < th.rows(); ++i) {
        for (std::size_t j = 0; j < th.cols(); ++j) p[j] = th(i, j);
        auto c = metrics::clr(p);
        for (std::size_t j = 0; j < th.cols(); ++j) cols[j][i] = c[j];
    }
    return cols;
}

}  // namespace detail

/// Runs `replicates` independent simulate -> upstream -> fit rounds.
/// Replicate r uses data seed derive(seed, simulate, r), upstream seed
/// derive(seed, upstream, r) and method seeds derived from derive(seed, r).
inline BenchmarkResult run_benchmark(const RunSettings& s, std::size_t replicates, std::uint64_t seed,
                                     const RunHook& hook = {}, std::ostream* log = nullptr) {
    if (replicates < 1) throw InvalidArgument("benchmark: need at least one replicate");
    BenchmarkResult res;
    res.experiment = s.experiment;
    res.seed = seed;
    known_methods(s.experiment);
    auto has = [&](const std::string& m) { return std::find(s.methods.begin(), s.methods.end(), m) != s.methods.end(); };

    for (std::size_t r = 0; r < replicates; ++r) {
        models::ExperimentSpec spec{s.experiment, s.params, derive_seed(seed, {streams::simulate, r})};
        models::Experiment e = models::make_experiment(models::simulate(spec));
        cut::UpstreamSamples up = e.upstream(s.n_upstream, derive_seed(seed, {streams::upstream, r}));
        const std::uint64_t ms = derive_seed(seed, {r});
        ReplicateOutcome out;
        auto& diag = out.diagnostics;

        if (s.experiment == "mixture") {
            for (flows::FlowKind k : s.flow_kinds) {
                flows::FlowConfig fc = s.flow;
                fc.kind = k;
                flows::ConditionalFlow flow(flow_for(fc, *e.model), 0);
                MethodRun run = run_nevi(e, up, fc, s.train, derive_seed(ms, {static_cast<std::uint64_t>(k)}), 1, &flow);
                const std::string tag = flows::to_string(k);
                run.method = "nevi_" + tag;
                detail::Stopwatch sw;
                detail::mixture_kls(flow, up, s, tag, diag);
                out.seconds[run.method] = run.seconds;
                out.seconds["kl_eval_" + tag] = sw.seconds();
                diag["passthrough." + run.method] = eta_passthrough(run.draws, up) ? 1.0 : 0.0;
                diag["train_steps." + run.method] = static_cast<double>(run.train_steps);
                if (hook) hook(r, run);
                if (log) *log << "[" << s.experiment << " " << r + 1 << "/" << replicates << "] " << run.method << " "
                              << run.seconds << "s" << std::endl;
            }
            res.replicates.push_back(std::move(out));
            continue;
        }

        std::vector<MethodRun> runs;
        auto record = [&](MethodRun run) {
            if (log) *log << "[" << s.experiment << " " << r + 1 << "/" << replicates << "] " << run.method << " "
                          << run.seconds << "s" << std::endl;
            out.seconds[run.method] = run.seconds;
            if (run.cut) {
                const std::size_t per = run.method == "nested" ? s.nested.kept : 0;
                diag["passthrough." + run.method] = eta_passthrough(run.draws, up, per) ? 1.0 : 0.0;
            }
            if (run.acceptance >= 0.0) diag["acceptance." + run.method] = run.acceptance;
            if (run.method == "nested") diag["failed.nested"] = static_cast<double>(run.failed);
            if (run.train_steps) diag["train_steps." + run.method] = static_cast<double>(run.train_steps);
            for (std::size_t j = 0; j < run.draws.theta.cols(); ++j) {
                auto [m, sd] = detail::mean_sd(detail::column_of(run.draws.theta, j));
                diag["mean." + run.method + "." + detail::theta_key(j)] = m;
                diag["sd." + run.method + "." + detail::theta_key(j)] = sd;
            }
            if (hook) hook(r, run);
            runs.push_back(std::move(run));
        };

        if (has("nevi")) record(run_nevi(e, up, s.flow, s.train, ms, s.sample_passes));
        if (has("analytic_cut")) record(run_analytic_cut(e, up, ms));
        if (has("nested")) record(run_nested(e, up, s.nested, ms));
        if (has("full_bayes")) record(run_fullbayes(e, s.fullbayes, ms));
        if (has("gaussian_va")) {
            // Gaussian bias: the eta-linear family contains the exact conditional,
            // so the benchmark uses the mean-field (eta-free) theta factor.
            record(run_gaussian_va(e, up, s.va, ms, s.experiment == "gaussian_bias"));
        }
        if (has("dirichlet_va")) record(run_dirichlet_va(e, up, s.va, s.va_per_eta, ms));

        for (const auto& [idx, truth] : e.scored) {
            auto [it, _] = res.reports.try_emplace(detail::theta_key(idx), s.experiment + ":" + detail::theta_key(idx), s.alpha);
            for (const auto& run : runs) {
                auto x = detail::column_of(run.draws.theta, idx);
                it->second.add(run.method, metrics::score_draws(x, truth, run.seconds, s.alpha));
            }
        }

        if (s.experiment == "gaussian_bias") {
            auto p = baselines::analytic_gaussian_bias(models::gaussian_bias_stats(e.data),
                                                       {e.data.param("delta1"), e.data.param("delta2")});
            diag["closed_form.cut.mean"] = p.cut_mean_eta;
            diag["closed_form.cut.sd"] = std::sqrt(p.cut_var_eta);
            diag["closed_form.full_bayes.mean"] = p.fb_mean_eta;
            diag["closed_form.full_bayes.sd"] = std::sqrt(p.fb_var_eta);
        }

        const MethodRun* nevi = nullptr;
        const MethodRun* nested = nullptr;
        for (const auto& run : runs) {
            if (run.method == "nevi") nevi = &run;
            if (run.method == "nested") nested = &run;
        }
        if (nested) {
            const bool simplex = e.model->support() == cut::Support::simplex;
            for (const auto& run : runs) {
                if (&run == nested || !run.cut) continue;
                if (simplex) {
                    auto a = detail::clr_columns(run.draws.theta), b = detail::clr_columns(nested->draws.theta);
                    for (std::size_t j = 0; j < a.size(); ++j) {
                        diag["clr_w2." + run.method + "_nested.cause_" + std::to_string(j + 1)] =
                            metrics::wasserstein2_1d(a[j], b[j]);
                    }
                } else {
                    for (std::size_t j = 0; j < run.draws.theta.cols(); ++j) {
                        auto a = detail::column_of(run.draws.theta, j), b = detail::column_of(nested->draws.theta, j);
                        const double w1 = metrics::wasserstein1_1d(a, b);
                        diag["w1." + run.method + "_nested." + detail::theta_key(j)] = w1;
                        diag["w1_over_sd." + run.method + "_nested." + detail::theta_key(j)] = w1 / detail::mean_sd(b).second;
                    }
                }
            }
        }
        if (nevi && e.model->support() == cut::Support::simplex) diag["simplex_error.nevi"] = detail::simplex_error(nevi->draws.theta);
        res.replicates.push_back(std::move(out));
    }
    return res;
}

}  // namespace nevicut::experiments
