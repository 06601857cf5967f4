#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "nevicut/cut/objective.hpp"

namespace nevicut::cut {

class TrainingError : public Error {
public:
    using Error::Error;
};

/// Thrown by an objective to skip the current iteration.
class AbortedIteration : public Error {
public:
    using Error::Error;
};

struct TrainConfig {
    std::size_t max_iters = 5000;
    std::size_t patience = 200;
    double lr = 1e-3;
    MinibatchSizes minibatch;
    std::uint64_t seed = 0;
    std::size_t window = 25;  // moving average for the early-stop statistic
    double clip_norm = 0.0;   // 0 = no clipping
    std::size_t max_consecutive_aborts = 10;

    // Optional head-only phase before the main loop (see VariationalFamily).
    std::size_t warm_start_iters = 0;
    double warm_start_lr = 0.05;

    // Called with (step, params) every `checkpoint_every` steps when set.
    std::size_t checkpoint_every = 0;
    std::function<void(std::size_t, const ad::ParamStore&)> on_checkpoint;

    void validate() const {
        if (patience < 1) throw InvalidArgument("train: patience must be at least 1");
        if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidArgument("train: learning rate must be positive");
        if (window < 1) throw InvalidArgument("train: smoothing window must be at least 1");
        if (clip_norm < 0.0) throw InvalidArgument("train: clip_norm must be non-negative");
        if (warm_start_iters > 0 && !(warm_start_lr > 0.0)) throw InvalidArgument("train: warm_start_lr must be positive");
    }
};

enum class StopReason { max_iters, patience };

inline std::string to_string(StopReason r) { return r == StopReason::patience ? "patience" : "max_iters"; }

struct TracePoint {
    std::size_t step;
    double elbo;
    double smoothed;
};

struct TrainResult {
    std::vector<TracePoint> trace;  // step 0 is the initial parameters
    StopReason stop_reason = StopReason::max_iters;
    std::size_t steps = 0;  // optimizer steps taken
    std::size_t best_step = 0;
    double best_smoothed = -std::numeric_limits<double>::infinity();
    std::size_t aborted = 0;
    std::string last_abort;
};

struct StepResult {
    double value;
    ad::GradMap grads;
};

/// Objective evaluated at the current parameters for a given step.
using ObjectiveFn = std::function<StepResult(std::size_t step)>;

namespace detail {

inline bool try_eval(const ObjectiveFn& obj, std::size_t step, StepResult& out, std::string& why) {
    try {
        out = obj(step);
        if (!std::isfinite(out.value)) {
            why = "non-finite objective";
            return false;
        }
        return true;
    } catch (const AbortedIteration& e) {
        why = e.what();
    } catch (const OutOfSupportError& e) {
        why = e.what();
    } catch (const flows::FlowError& e) {
        why = e.what();
    } catch (const ad::NonFiniteError& e) {
        why = e.what();
    }
    return false;
}

}  // namespace detail

/// Adam ascent with smoothed early stopping; restores the best checkpoint.
///
/// Each step updates with the gradient of the previous evaluation and then
/// evaluates the new parameters, so step 0 is a baseline at initialization.
inline TrainResult train_loop(ad::ParamStore& params, const ObjectiveFn& objective, const TrainConfig& cfg) {
    cfg.validate();
    TrainResult res;
    std::deque<double> recent;
    std::vector<ad::Tensor> best = params.snapshot();
    StepResult cur;
    bool have_grad = false;
    std::size_t since_best = 0, aborts = 0;
    bool had_full = false;

    auto fail = [&](std::size_t step) {
        ++res.aborted;
        if (++aborts > cfg.max_consecutive_aborts) {
            throw TrainingError("train: " + std::to_string(aborts) + " consecutive aborted iterations at step " +
                                std::to_string(step) + "; last: " + res.last_abort);
        }
    };

    for (std::size_t s = 0; s <= cfg.max_iters; ++s) {
        std::vector<ad::Tensor> before;
        if (s > 0) {
            ++res.steps;
            if (have_grad) {
                before = params.snapshot();
                if (cfg.clip_norm > 0.0) ad::clip_grad_norm(cur.grads, cfg.clip_norm);
                if (!ad::adam_step(params, cur.grads, cfg.lr)) {
                    res.last_abort = "non-finite gradient";
                    have_grad = false;
                    fail(s);
                    continue;
                }
            }
        }
        StepResult next;
        if (!detail::try_eval(objective, s, next, res.last_abort)) {
            if (!before.empty()) params.restore(before);
            have_grad = false;
            fail(s);
            continue;
        }
        aborts = 0;
        cur = std::move(next);
        have_grad = true;

        recent.push_back(cur.value);
        if (recent.size() > cfg.window) recent.pop_front();
        double smoothed = 0.0;
        for (double v : recent) smoothed += v;
        smoothed /= static_cast<double>(recent.size());
        res.trace.push_back({s, cur.value, smoothed});

        if (cfg.on_checkpoint && cfg.checkpoint_every > 0 && s % cfg.checkpoint_every == 0) cfg.on_checkpoint(s, params);

        // Partial-window means are noisier than full ones, so the first full
        // window replaces whatever partial best came before it (without
        // counting as an improvement for patience).
        const bool full = recent.size() == cfg.window;
        const bool first_full = full && !had_full;
        had_full = had_full || full;
        if (smoothed > res.best_smoothed || first_full) {
            const bool improved = smoothed > res.best_smoothed;
            res.best_smoothed = smoothed;
            res.best_step = s;
            best = params.snapshot();
            if (improved) {
                since_best = 0;
            } else if (s > 0 && ++since_best >= cfg.patience) {
                res.stop_reason = StopReason::patience;
                break;
            }
        } else if (s > 0 && ++since_best >= cfg.patience) {
            res.stop_reason = StopReason::patience;
            break;
        }
    }
    params.restore(best);
    return res;
}

/// Objective for a variational family: a fresh minibatch/Z per step.
inline ObjectiveFn make_objective(const flows::VariationalFamily& family, const DownstreamModel& model,
                                  const UpstreamSamples& upstream, const MinibatchSizes& mb, std::uint64_t seed,
                                  std::uint64_t stream = streams::train) {
    return [&family, &model, &upstream, mb, seed, stream](std::size_t step) {
        ElboEstimate est = elbo_triple(family, model, upstream, mb, derive_seed(seed, {stream, step}));
        double v = est.value;
        return StepResult{v, est.gradient()};
    };
}

/// Head-only ascent at a larger learning rate, then a fresh optimizer.
inline void warm_start(flows::VariationalFamily& family, const DownstreamModel& model, const UpstreamSamples& upstream,
                       const TrainConfig& cfg) {
    std::vector<std::string> names = family.warm_start_params();
    if (cfg.warm_start_iters == 0 || cfg.max_iters == 0 || names.empty()) return;
    ObjectiveFn obj = make_objective(family, model, upstream, cfg.minibatch, cfg.seed, streams::warm_start);
    std::size_t aborts = 0;
    std::string why;
    for (std::size_t s = 0; s < cfg.warm_start_iters; ++s) {
        StepResult r;
        if (!detail::try_eval(obj, s, r, why) || !ad::adam_step(family.params(), r.grads, cfg.warm_start_lr, &names)) {
            if (++aborts > cfg.max_consecutive_aborts) throw TrainingError("train: warm start failed; last: " + why);
            continue;
        }
        aborts = 0;
    }
    family.params().reset_optimizer();
}

/// Fits q(theta | eta) by maximizing the average conditional ELBO.
inline TrainResult train(flows::VariationalFamily& family, const DownstreamModel& model, const UpstreamSamples& upstream,
                         const TrainConfig& cfg) {
    cfg.validate();
    upstream.validate();
    if (cfg.minibatch.n_d > 0 && model.units() == 0) {
        throw InvalidArgument("train: n_d > 0 requires a model decomposable over units");
    }
    warm_start(family, model, upstream, cfg);
    return train_loop(family.params(), make_objective(family, model, upstream, cfg.minibatch, cfg.seed), cfg);
}

}  // namespace nevicut::cut
