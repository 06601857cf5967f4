#pragma once

#include <json.hpp>

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nevicut/error.hpp"
#include "nevicut/io/atomic.hpp"

namespace nevicut::models {

/// What to simulate: a registered model name, overrides of its documented
/// parameters, and a seed.
struct ExperimentSpec {
    std::string name;
    std::map<std::string, double> params;
    std::uint64_t seed = 0;
};

/// Observed data (D1 and D2) plus the generating values used for scoring.
/// Matrices are stored row-major in `arrays`; their shapes follow from `params`.
struct Dataset {
    std::string model;
    std::uint64_t seed = 0;
    std::map<std::string, double> params;
    std::map<std::string, std::vector<double>> arrays;
    std::map<std::string, std::vector<double>> truth;

    const std::vector<double>& array(const std::string& key) const {
        auto it = arrays.find(key);
        if (it == arrays.end()) throw InvalidArgument("dataset '" + model + "': missing array '" + key + "'");
        return it->second;
    }

    double param(const std::string& key) const {
        auto it = params.find(key);
        if (it == params.end()) throw InvalidArgument("dataset '" + model + "': missing parameter '" + key + "'");
        return it->second;
    }

    std::size_t count(const std::string& key) const {
        double v = param(key);
        if (!(v >= 1.0) || v != static_cast<double>(static_cast<std::size_t>(v))) {
            throw InvalidArgument("dataset '" + model + "': parameter '" + key + "' must be a positive integer");
        }
        return static_cast<std::size_t>(v);
    }
};

namespace detail {

inline std::string num(double v) {
    char buf[32];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

}  // namespace detail

/// Long-format CSV body: `array,index,value`, one cell per line.
inline std::string dataset_csv(const Dataset& d) {
    std::string out = "array,index,value\n";
    for (const auto& [k, v] : d.arrays)
        for (std::size_t i = 0; i < v.size(); ++i) out += k + "," + std::to_string(i) + "," + detail::num(v[i]) + "\n";
    return out;
}

inline nlohmann::ordered_json dataset_meta(const Dataset& d) {
    nlohmann::ordered_json j;
    j["model"] = d.model;
    j["seed"] = d.seed;
    j["params"] = d.params;
    j["truth"] = d.truth;
    return j;
}

/// Writes `<stem>.csv` and its `<stem>.json` sidecar (spec and truth).
inline void save_dataset(const Dataset& d, const std::filesystem::path& csv_path) {
    io::write_atomic(csv_path, dataset_csv(d));
    std::filesystem::path meta = csv_path;
    meta.replace_extension(".json");
    io::write_atomic(meta, dataset_meta(d).dump(2) + "\n");
}

inline Dataset load_dataset(const std::filesystem::path& csv_path) {
    std::filesystem::path meta = csv_path;
    meta.replace_extension(".json");
    Dataset d;
    try {
        auto j = nlohmann::json::parse(io::read_file(meta));
        d.model = j.at("model").get<std::string>();
        d.seed = j.at("seed").get<std::uint64_t>();
        d.params = j.at("params").get<std::map<std::string, double>>();
        d.truth = j.at("truth").get<std::map<std::string, std::vector<double>>>();
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument("dataset metadata '" + meta.string() + "': " + e.what());
    }
    std::istringstream in(io::read_file(csv_path));
    std::string line;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& why) {
        throw InvalidArgument(csv_path.string() + ":" + std::to_string(lineno) + ": " + why);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1) {
            if (line != "array,index,value") fail("expected header 'array,index,value'");
            continue;
        }
        if (line.empty()) continue;
        auto c1 = line.find(','), c2 = line.rfind(',');
        if (c1 == std::string::npos || c1 == c2) fail("expected three fields");
        std::string key = line.substr(0, c1);
        std::size_t idx = 0;
        double v = 0.0;
        auto r1 = std::from_chars(line.data() + c1 + 1, line.data() + c2, idx);
        auto r2 = std::from_chars(line.data() + c2 + 1, line.data() + line.size(), v);
        if (r1.ec != std::errc() || r1.ptr != line.data() + c2) fail("bad index");
        if (r2.ec != std::errc() || r2.ptr != line.data() + line.size()) fail("bad value");
        auto& arr = d.arrays[key];
        if (idx != arr.size()) fail("indices of '" + key + "' must be consecutive from 0");
        arr.push_back(v);
    }
    return d;
}

}  // namespace nevicut::models
