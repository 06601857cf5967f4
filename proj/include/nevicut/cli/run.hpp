#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "nevicut/cut/checkpoint.hpp"
#include "nevicut/experiments/benchmark.hpp"
#include "nevicut/io/csv.hpp"
#include "nevicut/io/manifest.hpp"

namespace nevicut::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_config = 2;
inline constexpr int exit_runtime = 3;

namespace fs = std::filesystem;

namespace detail {

inline io::Config load_config(const std::string& path) {
    if (path.empty()) return io::Config::parse("", "<defaults>");
    if (!fs::exists(path)) throw io::ConfigError(path, 0, "config file does not exist");
    return io::Config::parse(io::read_file(path), path);
}

inline void require_file(const std::string& what, const std::string& path) {
    if (path.empty()) throw io::ConfigError("arguments", 0, what + " is required");
    if (!fs::is_regular_file(path)) throw io::ConfigError("arguments", 0, what + " '" + path + "' does not exist");
}

/// `--set section.key=value` overrides, applied on top of the config file.
inline void apply_sets(io::Config& c, const std::vector<std::string>& sets) {
    for (const auto& kv : sets) {
        auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) throw io::ConfigError("--set", 0, "expected key=value, got '" + kv + "'");
        c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
}

inline const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> k{"flow.*",       "train.*", "va.*",          "nested.*",     "fullbayes.*",
                                            "experiment.*", "run.*",   "paths.upstream", "paths.dataset", "paths.output",
                                            "seed"};
    return k;
}

inline std::string manifest_name(const fs::path& file) { return file.filename().string() + ".manifest.json"; }

/// Manifest beside a single output file.
inline void file_manifest(const fs::path& file, const nlohmann::ordered_json& m) {
    io::write_atomic(file.parent_path() / manifest_name(file), m.dump(2) + "\n");
}

inline std::vector<double> parse_numbers(const std::string& what, const std::string& v) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        double x = 0.0;
        auto r = std::from_chars(tok.data(), tok.data() + tok.size(), x);
        if (r.ec != std::errc() || r.ptr != tok.data() + tok.size() || !std::isfinite(x)) {
            throw io::ConfigError("arguments", 0, what + ": '" + tok + "' is not a finite number");
        }
        out.push_back(x);
    }
    if (out.empty()) throw io::ConfigError("arguments", 0, what + ": no values");
    return out;
}

inline std::string trace_csv(const cut::TrainResult& r) {
    std::string s = "step,elbo,smoothed\n";
    for (const auto& p : r.trace) {
        s += std::to_string(p.step) + ",";
        io::detail::append_number(s, p.elbo);
        s += ",";
        io::detail::append_number(s, p.smoothed);
        s += "\n";
    }
    return s;
}

/// Marks a directory whose command failed part-way.
inline void mark_failed(const std::string& dir, const std::string& why) {
    if (dir.empty() || !fs::is_directory(dir)) return;
    try {
        io::write_atomic(fs::path(dir) / "FAILED", why + "\n");
    } catch (...) {
    }
}

}  // namespace detail

/// Parses argv, runs one subcommand and maps failures to exit codes:
/// 0 success, 2 usage or configuration error, 3 runtime failure.
inline int run_command(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Cut-posterior estimation with conditional normalizing flows", "nevicut"};
    app.require_subcommand(1);
    app.set_version_flag("--version", io::kVersion);
    std::vector<std::string> args(argv, argv + argc);

    std::string config_path, out_path, upstream_path, dataset_path, checkpoint_path, experiment, eta0_s, grid_s;
    std::vector<std::string> sets, files;
    std::uint64_t seed = 0;
    std::size_t replicates = 1, n_upstream = 0;
    bool clr_mode = false, save_draws = false, quiet = false;
    std::string failure_dir;

    auto* train = app.add_subcommand("train", "Fit a conditional flow: upstream CSV + dataset -> checkpoint, trace, draws");
    train->add_option("-c,--config", config_path, "Config file (key = value sections)");
    train->add_option("-u,--upstream", upstream_path, "Upstream samples CSV (overrides paths.upstream)");
    train->add_option("-d,--dataset", dataset_path, "Dataset CSV from `simulate` (overrides paths.dataset)");
    train->add_option("-o,--out", out_path, "Output directory (overrides paths.output)");
    auto* train_seed = train->add_option("-s,--seed", seed, "Global seed (overrides `seed`)");
    train->add_option("--set", sets, "Override a config entry, e.g. --set train.lr=0.01");

    auto* sample = app.add_subcommand("sample", "Draw paired (eta, theta) samples from a checkpoint");
    sample->add_option("-k,--checkpoint", checkpoint_path, "Checkpoint file")->required();
    sample->add_option("-u,--upstream", upstream_path, "Upstream samples CSV")->required();
    sample->add_option("-o,--out", out_path, "Output samples CSV")->required();
    sample->add_option("-s,--seed", seed, "Sampling seed");

    auto* density = app.add_subcommand("density", "Conditional density q(theta | eta0) on a grid");
    density->add_option("-k,--checkpoint", checkpoint_path, "Checkpoint file")->required();
    density->add_option("--eta0", eta0_s, "Comma-separated eta0")->required();
    density->add_option("--grid", grid_s, "lo:hi:points")->required();
    density->add_option("-o,--out", out_path, "Output CSV")->required();

    auto* bench = app.add_subcommand("benchmark", "Run an experiment against the baselines and write a report");
    bench->add_option("experiment", experiment, "gaussian_bias | mixture | propensity | hpv | va_calibration")->required();
    bench->add_option("-r,--replicates", replicates, "Number of replicates")->check(CLI::PositiveNumber);
    bench->add_option("-s,--seed", seed, "Global seed");
    bench->add_option("-c,--config", config_path, "Config file overriding the experiment defaults");
    bench->add_option("--set", sets, "Override a config entry");
    bench->add_option("-o,--out", out_path, "Output directory")->required();
    bench->add_flag("--save-draws", save_draws, "Also write every method's draws for the first replicate");
    bench->add_flag("-q,--quiet", quiet, "No progress lines");

    auto* compare = app.add_subcommand("compare", "Per-dimension W1/W2 between two sample CSVs");
    compare->add_option("files", files, "Two sample CSVs")->required()->expected(2);
    compare->add_flag("--clr", clr_mode, "Compare theta columns in CLR space (simplex draws)");
    compare->add_option("-o,--out", out_path, "Write the JSON report here instead of stdout");

    auto* simulate = app.add_subcommand("simulate", "Simulate a dataset and its upstream samples");
    simulate->add_option("experiment", experiment, "Built-in experiment name")->required();
    simulate->add_option("-s,--seed", seed, "Seed");
    simulate->add_option("-n,--n-upstream", n_upstream, "Upstream draws (default: the benchmark setting)");
    simulate->add_option("--set", sets, "Experiment parameter, e.g. --set n2=500");
    simulate->add_option("-o,--out", out_path, "Output directory")->required();

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return exit_ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return exit_ok;
    } catch (const CLI::CallForVersion&) {
        out << io::kVersion << "\n";
        return exit_ok;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return exit_config;
    }

    try {
        if (*train) {
            io::Config cfg = detail::load_config(config_path);
            detail::apply_sets(cfg, sets);
            cfg.require_known(detail::known_keys());
            if (upstream_path.empty()) upstream_path = cfg.get_string("paths.upstream", "");
            if (dataset_path.empty()) dataset_path = cfg.get_string("paths.dataset", "");
            if (out_path.empty()) out_path = cfg.get_string("paths.output", "");
            if (!train_seed->count()) seed = cfg.get_uint("seed", 0);
            detail::require_file("upstream CSV", upstream_path);
            detail::require_file("dataset CSV", dataset_path);
            if (out_path.empty()) throw io::ConfigError(cfg.source(), 0, "an output directory is required (--out or paths.output)");
            cfg.set("paths.upstream", upstream_path);
            cfg.set("paths.dataset", dataset_path);
            cfg.set("paths.output", out_path);
            cfg.set("seed", std::to_string(seed));

            models::Dataset data = models::load_dataset(dataset_path);
            experiments::RunSettings s = experiments::default_settings(data.model);
            experiments::apply_config(s, cfg);
            models::Experiment e = models::make_experiment(data);
            cut::UpstreamSamples up = io::load_upstream_csv(upstream_path);
            if (up.dim() != e.model->eta_dim()) {
                throw io::ConfigError(upstream_path, 1, "upstream has " + std::to_string(up.dim()) + " columns, model '" +
                                                            data.model + "' expects " + std::to_string(e.model->eta_dim()));
            }

            fs::create_directories(out_path);
            failure_dir = out_path;
            fs::remove(fs::path(out_path) / "FAILED");
            const fs::path dir(out_path);
            flows::ConditionalFlow flow(experiments::flow_for(s.flow, *e.model), derive_seed(seed, {streams::init}));
            flow.standardize_from(up.eta);
            cut::TrainConfig tc = s.train;
            tc.seed = derive_seed(seed, {streams::train});
            if (tc.checkpoint_every) {
                tc.on_checkpoint = [&](std::size_t step, const ad::ParamStore& p) {
                    flows::ConditionalFlow snap = flow;
                    snap.params() = p;
                    io::write_atomic(dir / ("checkpoint_" + std::to_string(step) + ".txt"), cut::checkpoint_text(snap));
                };
            }
            cut::TrainResult tr = cut::train(flow, *e.model, up, tc);
            const std::string text = cut::checkpoint_text(flow);
            const std::string id = cut::checkpoint_id(text);
            cut::CutPosteriorDraws d = cut::sample_cut_posterior(flow, up, derive_seed(seed, {streams::sample}), id);
            io::write_atomic(dir / "checkpoint.txt", text);
            io::write_atomic(dir / "trace.csv", detail::trace_csv(tr));
            io::save_samples_csv(dir / "samples.csv", d);
            auto m = io::make_manifest("train", args, cfg.canonical(), seed, {"checkpoint.txt", "trace.csv", "samples.csv"});
            m["checkpoint_id"] = id;
            m["steps"] = tr.steps;
            m["best_step"] = tr.best_step;
            m["best_smoothed"] = tr.best_smoothed;
            m["stop_reason"] = cut::to_string(tr.stop_reason);
            m["aborted_iterations"] = tr.aborted;
            io::write_manifest(dir, m);
            out << "trained " << tr.steps << " steps (best " << tr.best_step << ", " << cut::to_string(tr.stop_reason)
                << "), wrote " << out_path << "\n";
        } else if (*sample) {
            detail::require_file("checkpoint", checkpoint_path);
            detail::require_file("upstream CSV", upstream_path);
            std::string id;
            flows::ConditionalFlow flow = cut::load_checkpoint(checkpoint_path, &id);
            cut::UpstreamSamples up = io::load_upstream_csv(upstream_path);
            cut::CutPosteriorDraws d = cut::sample_cut_posterior(flow, up, seed, id);
            io::save_samples_csv(out_path, d);
            auto m = io::make_manifest("sample", args, "checkpoint=" + id + "\nupstream=" + upstream_path + "\n", seed,
                                       {fs::path(out_path).filename().string()});
            m["checkpoint_id"] = id;
            detail::file_manifest(out_path, m);
            out << "wrote " << d.theta.rows() << " draws to " << out_path << "\n";
        } else if (*density) {
            detail::require_file("checkpoint", checkpoint_path);
            std::string id;
            flows::ConditionalFlow flow = cut::load_checkpoint(checkpoint_path, &id);
            std::vector<double> eta0 = detail::parse_numbers("--eta0", eta0_s);
            std::string g = grid_s;
            std::replace(g.begin(), g.end(), ':', ',');
            std::vector<double> spec = detail::parse_numbers("--grid", g);
            if (spec.size() != 3 || !(spec[1] > spec[0]) || spec[2] < 2 || spec[2] != std::floor(spec[2])) {
                throw io::ConfigError("arguments", 0, "--grid: expected lo:hi:points with lo < hi and points >= 2");
            }
            const std::size_t n = static_cast<std::size_t>(spec[2]);
            std::vector<double> grid(n);
            for (std::size_t i = 0; i < n; ++i) grid[i] = spec[0] + (spec[1] - spec[0]) * static_cast<double>(i) / static_cast<double>(n - 1);
            std::vector<double> q = cut::conditional_density_grid(flow, eta0, grid);
            ad::Tensor t(n, 2);
            for (std::size_t i = 0; i < n; ++i) {
                t(i, 0) = grid[i];
                t(i, 1) = q[i];
            }
            io::write_atomic(out_path, io::table_csv({"theta", "density"}, t));
            auto m = io::make_manifest("density", args, "checkpoint=" + id + "\neta0=" + eta0_s + "\ngrid=" + grid_s + "\n", 0,
                                       {fs::path(out_path).filename().string()});
            m["checkpoint_id"] = id;
            detail::file_manifest(out_path, m);
            out << "wrote " << n << " grid points to " << out_path << "\n";
        } else if (*bench) {
            io::Config cfg = detail::load_config(config_path);
            detail::apply_sets(cfg, sets);
            cfg.require_known(detail::known_keys());
            experiments::RunSettings s = experiments::default_settings(experiment);
            experiments::apply_config(s, cfg);
            cfg.set("experiment", experiment);
            cfg.set("replicates", std::to_string(replicates));
            fs::create_directories(out_path);
            failure_dir = out_path;
            fs::remove(fs::path(out_path) / "FAILED");
            const fs::path dir(out_path);
            std::vector<std::string> written{"report.json", "timings.json"};
            experiments::RunHook hook;
            if (save_draws) {
                hook = [&](std::size_t r, const experiments::MethodRun& run) {
                    if (r != 0) return;
                    const std::string name = "draws_" + run.method + ".csv";
                    io::save_samples_csv(dir / name, run.draws);
                    written.push_back(name);
                };
            }
            experiments::BenchmarkResult res = experiments::run_benchmark(s, replicates, seed, hook, quiet ? nullptr : &err);
            io::write_atomic(dir / "report.json", res.report_json().dump(2) + "\n");
            io::write_atomic(dir / "timings.json", res.timings_json().dump(2) + "\n");
            io::write_manifest(dir, io::make_manifest("benchmark", args, cfg.canonical(), seed, written));
            out << "wrote " << (dir / "report.json").string() << "\n";
        } else if (*compare) {
            for (const auto& f : files) detail::require_file("samples CSV", f);
            cut::CutPosteriorDraws a = io::load_samples_csv(files[0]), b = io::load_samples_csv(files[1]);
            if (a.theta.cols() != b.theta.cols()) {
                throw io::ConfigError("arguments", 0, "theta dimensions differ: " + std::to_string(a.theta.cols()) + " vs " +
                                                          std::to_string(b.theta.cols()));
            }
            nlohmann::ordered_json j;
            j["a"] = files[0];
            j["b"] = files[1];
            j["mode"] = clr_mode ? "clr" : "raw";
            auto cols = [&](const ad::Tensor& t) {
                return clr_mode ? experiments::detail::clr_columns(t)
                                : [&] {
                                      std::vector<std::vector<double>> c;
                                      for (std::size_t k = 0; k < t.cols(); ++k) c.push_back(experiments::detail::column_of(t, k));
                                      return c;
                                  }();
            };
            auto ca = cols(a.theta), cb = cols(b.theta);
            for (std::size_t k = 0; k < ca.size(); ++k) {
                j["theta"]["theta_" + std::to_string(k + 1)] = {{"w1", metrics::wasserstein1_1d(ca[k], cb[k])},
                                                                {"w2", metrics::wasserstein2_1d(ca[k], cb[k])}};
            }
            if (a.eta.cols() == b.eta.cols()) {
                for (std::size_t k = 0; k < a.eta.cols(); ++k) {
                    auto x = experiments::detail::column_of(a.eta, k), y = experiments::detail::column_of(b.eta, k);
                    j["eta"]["eta_" + std::to_string(k + 1)] = {{"w1", metrics::wasserstein1_1d(x, y)},
                                                                {"w2", metrics::wasserstein2_1d(x, y)}};
                }
            }
            if (out_path.empty()) {
                out << j.dump(2) << "\n";
            } else {
                io::write_atomic(out_path, j.dump(2) + "\n");
                detail::file_manifest(out_path, io::make_manifest("compare", args, "a=" + files[0] + "\nb=" + files[1] + "\n", 0,
                                                                  {fs::path(out_path).filename().string()}));
            }
        } else if (*simulate) {
            io::Config cfg = io::Config::parse("", "--set");
            for (const auto& kv : sets) {
                auto eq = kv.find('=');
                if (eq == std::string::npos || eq == 0) throw io::ConfigError("--set", 0, "expected key=value, got '" + kv + "'");
                cfg.set("experiment." + kv.substr(0, eq), kv.substr(eq + 1));
            }
            experiments::RunSettings s = experiments::default_settings(experiment);
            experiments::apply_config(s, cfg);
            if (n_upstream == 0) n_upstream = s.n_upstream;
            models::Dataset d = models::simulate({experiment, s.params, derive_seed(seed, {streams::simulate, 0})});
            models::Experiment e = models::make_experiment(d);
            cut::UpstreamSamples up = e.upstream(n_upstream, derive_seed(seed, {streams::upstream, 0}));
            fs::create_directories(out_path);
            const fs::path dir(out_path);
            models::save_dataset(d, dir / "data.csv");
            io::save_upstream_csv(dir / "upstream.csv", up);
            cfg.set("experiment", experiment);
            cfg.set("n_upstream", std::to_string(n_upstream));
            io::write_manifest(dir, io::make_manifest("simulate", args, cfg.canonical(), seed, {"data.csv", "data.json", "upstream.csv"}));
            out << "wrote " << d.model << " dataset and " << up.size() << " upstream draws to " << out_path << "\n";
        }
    } catch (const InvalidArgument& e) {
        err << "error: " << e.what() << "\n";
        detail::mark_failed(failure_dir, e.what());
        return exit_config;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        detail::mark_failed(failure_dir, e.what());
        return exit_runtime;
    }
    return exit_ok;
}

}  // namespace nevicut::cli
