#pragma once

#include <charconv>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "nevicut/flows/conditional_flow.hpp"

namespace nevicut::flows {

namespace detail {

inline std::size_t parse_count(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw InvalidArgument(key + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw InvalidArgument(key + ": expected a number, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw InvalidArgument(key + ": expected true/false, got '" + v + "'");
}

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

/// Flow settings as ordered key/value pairs (the `flow.` keys of a config).
inline std::vector<std::pair<std::string, std::string>> flow_config_items(const FlowConfig& c) {
    std::string hidden;
    for (std::size_t i = 0; i < c.hidden.size(); ++i) hidden += (i ? "," : "") + std::to_string(c.hidden[i]);
    std::vector<std::pair<std::string, std::string>> out{
        {"kind", to_string(c.kind)},
        {"layers", std::to_string(c.layers)},
        {"bins", std::to_string(c.bins)},
        {"half_width", detail::fmt(c.half_width)},
        {"hidden", hidden},
        {"activation", to_string(c.activation)},
        {"base", to_string(c.base.kind)},
        {"base_df", detail::fmt(c.base.df)},
        {"dim", std::to_string(c.dim)},
        {"eta_dim", std::to_string(c.eta_dim)},
        {"head", to_string(c.head)},
        {"affine_head", c.affine_head ? "true" : "false"},
        {"envelope", c.envelope ? "true" : "false"},
        {"umnn_median_layers", std::to_string(c.umnn_median_layers)},
        {"umnn_deriv_layers", std::to_string(c.umnn_deriv_layers)},
        {"umnn_width", std::to_string(c.umnn_width)},
        {"quadrature", std::to_string(c.quadrature)},
    };
    if (c.envelope) {
        out.emplace_back("m_star", detail::fmt(c.envelope->m_star));
        out.emplace_back("a_star", detail::fmt(c.envelope->a_star));
        out.emplace_back("b_star", detail::fmt(c.envelope->b_star));
    }
    return out;
}

/// Applies one flow setting; returns false for an unknown key.
inline bool set_flow_config_item(FlowConfig& c, const std::string& key, const std::string& v) {
    using namespace detail;
    auto env = [&]() -> Envelope& {
        if (!c.envelope) c.envelope = Envelope{};
        return *c.envelope;
    };
    if (key == "kind") c.kind = parse_flow_kind(v);
    else if (key == "layers") c.layers = parse_count(key, v);
    else if (key == "bins") c.bins = parse_count(key, v);
    else if (key == "half_width") c.half_width = parse_real(key, v);
    else if (key == "hidden") {
        c.hidden.clear();
        std::stringstream ss(v);
        std::string tok;
        while (std::getline(ss, tok, ',')) c.hidden.push_back(parse_count(key, tok));
        if (c.hidden.empty()) throw InvalidArgument("hidden: need at least one width");
    } else if (key == "activation") c.activation = parse_activation(v);
    else if (key == "base") c.base.kind = parse_base_kind(v);
    else if (key == "base_df") c.base.df = parse_real(key, v);
    else if (key == "dim") c.dim = parse_count(key, v);
    else if (key == "eta_dim") c.eta_dim = parse_count(key, v);
    else if (key == "head") c.head = parse_output_head(v);
    else if (key == "affine_head") c.affine_head = parse_bool(key, v);
    else if (key == "envelope") {
        if (parse_bool(key, v)) env();
        else c.envelope.reset();
    } else if (key == "umnn_median_layers") c.umnn_median_layers = parse_count(key, v);
    else if (key == "umnn_deriv_layers") c.umnn_deriv_layers = parse_count(key, v);
    else if (key == "umnn_width") c.umnn_width = parse_count(key, v);
    else if (key == "quadrature") c.quadrature = parse_count(key, v);
    else if (key == "m_star") env().m_star = parse_real(key, v);
    else if (key == "a_star") env().a_star = parse_real(key, v);
    else if (key == "b_star") env().b_star = parse_real(key, v);
    else return false;
    return true;
}

}  // namespace nevicut::flows
