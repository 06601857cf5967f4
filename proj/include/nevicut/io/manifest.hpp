#pragma once

#include <Eigen/Core>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "nevicut/io/atomic.hpp"
#include "nevicut/util/seed.hpp"

namespace nevicut::io {

inline constexpr const char* kVersion = "0.1.0";

inline std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline nlohmann::ordered_json versions() {
    return {{"nevicut", kVersion},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)},
            {"compiler", __VERSION__},
            {"cxx", __cplusplus}};
}

/// Everything needed to re-run a command: the command line, the canonical
/// config and its hash, the seed, library versions and the outputs written.
inline nlohmann::ordered_json make_manifest(const std::string& command, const std::vector<std::string>& argv,
                                           const std::string& canonical_config, std::uint64_t seed,
                                           const std::vector<std::string>& outputs) {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["argv"] = argv;
    j["config_hash"] = hex64(fnv1a(canonical_config));
    j["config"] = canonical_config;
    j["seed"] = seed;
    j["versions"] = versions();
    j["outputs"] = outputs;
    return j;
}

inline void write_manifest(const std::filesystem::path& dir, const nlohmann::ordered_json& m) {
    write_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

}  // namespace nevicut::io
