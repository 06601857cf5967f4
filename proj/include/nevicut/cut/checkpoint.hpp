#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "nevicut/flows/config_io.hpp"
#include "nevicut/util/seed.hpp"

namespace nevicut::cut {

inline constexpr const char* checkpoint_magic = "nevicut-checkpoint";
inline constexpr int checkpoint_version = 1;

/// Text dump of a flow: versioned header, config, eta standardization and
/// every named parameter tensor with its shape.
inline std::string checkpoint_text(const flows::ConditionalFlow& flow) {
    std::ostringstream os;
    os << checkpoint_magic << ' ' << checkpoint_version << '\n';
    for (const auto& [k, v] : flows::flow_config_items(flow.config())) os << "config " << k << ' ' << v << '\n';
    auto vec = [&](const char* tag, const std::vector<double>& xs) {
        os << tag;
        for (double x : xs) os << ' ' << flows::detail::fmt(x);
        os << '\n';
    };
    vec("eta_shift", flow.eta_shift());
    vec("eta_scale", flow.eta_scale());
    for (const auto& e : flow.params().entries()) {
        os << "param " << e.name << ' ' << e.value.rows() << ' ' << e.value.cols() << '\n';
        for (std::size_t i = 0; i < e.value.size(); ++i) os << (i ? " " : "") << flows::detail::fmt(e.value[i]);
        os << '\n';
    }
    os << "end\n";
    return os.str();
}

/// Hex id of a checkpoint's content.
inline std::string checkpoint_id(const std::string& text) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
    return buf;
}

inline flows::ConditionalFlow parse_checkpoint(const std::string& text) {
    std::istringstream is(text);
    std::string magic;
    int version = 0;
    if (!(is >> magic >> version) || magic != checkpoint_magic) throw InvalidArgument("checkpoint: missing header");
    if (version != checkpoint_version) {
        throw InvalidArgument("checkpoint: unsupported version " + std::to_string(version));
    }
    flows::FlowConfig cfg;
    std::vector<double> shift, scale;
    std::vector<std::pair<std::string, ad::Tensor>> params;
    std::string tag;
    bool ended = false;
    while (is >> tag) {
        if (tag == "config") {
            std::string k, v;
            is >> k >> v;
            if (!flows::set_flow_config_item(cfg, k, v)) throw InvalidArgument("checkpoint: unknown config key '" + k + "'");
        } else if (tag == "eta_shift" || tag == "eta_scale") {
            std::string line;
            std::getline(is, line);
            std::istringstream ls(line);
            std::vector<double>& dst = tag == "eta_shift" ? shift : scale;
            double x;
            while (ls >> x) dst.push_back(x);
        } else if (tag == "param") {
            std::string name;
            std::size_t r = 0, c = 0;
            if (!(is >> name >> r >> c)) throw InvalidArgument("checkpoint: malformed param line");
            ad::Tensor t(r, c);
            for (std::size_t i = 0; i < t.size(); ++i)
                if (!(is >> t[i])) throw InvalidArgument("checkpoint: truncated values for '" + name + "'");
            params.emplace_back(name, std::move(t));
        } else if (tag == "end") {
            ended = true;
            break;
        } else {
            throw InvalidArgument("checkpoint: unexpected record '" + tag + "'");
        }
    }
    if (!ended) throw InvalidArgument("checkpoint: missing end marker");
    flows::ConditionalFlow flow(cfg, 0);
    flow.set_eta_standardization(shift, scale);
    if (params.size() != flow.params().entries().size()) {
        throw InvalidArgument("checkpoint: expected " + std::to_string(flow.params().entries().size()) +
                              " parameter tensors, found " + std::to_string(params.size()));
    }
    for (auto& [name, t] : params) {
        if (!flow.params().contains(name)) throw InvalidArgument("checkpoint: unknown parameter '" + name + "'");
        if (!t.same_shape(flow.params().get(name))) throw InvalidArgument("checkpoint: shape mismatch for '" + name + "'");
        flow.params().set(name, t);
    }
    return flow;
}

inline flows::ConditionalFlow load_checkpoint(const std::string& path, std::string* id = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("checkpoint: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    if (id) *id = checkpoint_id(ss.str());
    return parse_checkpoint(ss.str());
}

}  // namespace nevicut::cut
