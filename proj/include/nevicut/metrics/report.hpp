#pragma once

#include <json.hpp>

#include <map>
#include <string>
#include <vector>

#include "nevicut/metrics/metrics.hpp"

namespace nevicut::metrics {

struct MethodScore {
    double interval_score = 0.0;
    double crps = 0.0;
    double mse = 0.0;
    bool covered = false;
    double seconds = 0.0;
};

/// Scores a draw set against the truth with the metrics used in the tables.
inline MethodScore score_draws(std::span<const double> x, double truth, double seconds, double alpha = 0.05) {
    MethodScore s;
    s.interval_score = interval_score(x, truth, alpha);
    s.crps = crps(x, truth);
    auto pm = point_metrics(x, truth, alpha);
    s.mse = pm.mse;
    s.covered = pm.covered;
    s.seconds = seconds;
    return s;
}

struct Summary {
    double median, q25, q75;
};

inline Summary summarize(std::span<const double> v) {
    auto s = detail::sorted(v);
    return {detail::q7(s, 0.5), detail::q7(s, 0.25), detail::q7(s, 0.75)};
}

/// Per-replicate, per-method scores with Table-style aggregation:
/// median (q25, q75) for each metric and the coverage rate.
class ReplicateReport {
public:
    explicit ReplicateReport(std::string experiment, double alpha = 0.05) : experiment_(std::move(experiment)), alpha_(alpha) {}

    void add(const std::string& method, const MethodScore& s) {
        if (!(s.seconds >= 0.0)) throw InvalidArgument("report: negative wall time for " + method);
        if (!rows_.count(method)) order_.push_back(method);
        rows_[method].push_back(s);
    }

    const std::vector<std::string>& methods() const { return order_; }
    const std::vector<MethodScore>& scores(const std::string& method) const { return rows_.at(method); }

    double coverage(const std::string& method) const {
        const auto& r = rows_.at(method);
        double c = 0.0;
        for (const auto& s : r) c += s.covered ? 1.0 : 0.0;
        return c / static_cast<double>(r.size());
    }

    Summary summary(const std::string& method, double MethodScore::*field) const {
        std::vector<double> v;
        for (const auto& s : rows_.at(method)) v.push_back(s.*field);
        return summarize(v);
    }

    /// Attach free-form numbers (e.g. distances between methods) to the report.
    void note(const std::string& key, double value) { notes_[key] = value; }

    /// With `with_times` false the wall-clock columns are left out, so the
    /// report is a pure function of the seed.
    nlohmann::ordered_json to_json(bool with_times = false) const {
        nlohmann::ordered_json j;
        j["experiment"] = experiment_;
        j["alpha"] = alpha_;
        j["replicates"] = order_.empty() ? 0 : rows_.at(order_.front()).size();
        auto sum = [](const Summary& s) { return nlohmann::ordered_json{{"median", s.median}, {"q25", s.q25}, {"q75", s.q75}}; };
        for (const auto& m : order_) {
            nlohmann::ordered_json mj;
            mj["interval_score"] = sum(summary(m, &MethodScore::interval_score));
            mj["weighted_interval_score"] = nlohmann::ordered_json{{"median", 0.5 * alpha_ * summary(m, &MethodScore::interval_score).median}};
            mj["crps"] = sum(summary(m, &MethodScore::crps));
            mj["mse"] = sum(summary(m, &MethodScore::mse));
            mj["coverage"] = coverage(m);
            if (with_times) mj["seconds"] = sum(summary(m, &MethodScore::seconds));
            nlohmann::ordered_json per = nlohmann::ordered_json::array();
            for (const auto& s : rows_.at(m)) {
                nlohmann::ordered_json r{{"interval_score", s.interval_score}, {"crps", s.crps}, {"mse", s.mse}, {"covered", s.covered}};
                if (with_times) r["seconds"] = s.seconds;
                per.push_back(r);
            }
            mj["per_replicate"] = per;
            j["methods"][m] = mj;
        }
        if (!notes_.empty()) j["notes"] = notes_;
        return j;
    }

private:
    std::string experiment_;
    double alpha_;
    std::vector<std::string> order_;
    std::map<std::string, std::vector<MethodScore>> rows_;
    std::map<std::string, double> notes_;
};

}  // namespace nevicut::metrics
