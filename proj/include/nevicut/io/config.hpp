#pragma once

#include <charconv>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nevicut/error.hpp"

namespace nevicut::io {

/// Raised for malformed or unknown configuration entries; carries the line.
class ConfigError : public InvalidArgument {
public:
    ConfigError(const std::string& source, std::size_t line, const std::string& msg)
        : InvalidArgument(source + (line ? ":" + std::to_string(line) : std::string()) + ": " + msg), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

struct ConfigEntry {
    std::string value;
    std::size_t line = 0;
};

/// `key = value` lines grouped by `[section]` headers; `#` and `;` start
/// comments. Keys are stored as "section.key".
class Config {
public:
    static Config parse(const std::string& text, const std::string& source = "config") {
        Config c;
        c.source_ = source;
        std::istringstream in(text);
        std::string line, section;
        std::size_t n = 0;
        auto trim = [](std::string s) {
            const char* ws = " \t\r";
            s.erase(0, s.find_first_not_of(ws));
            s.erase(s.find_last_not_of(ws) + 1);
            return s;
        };
        while (std::getline(in, line)) {
            ++n;
            auto hash = line.find_first_of("#;");
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') throw ConfigError(source, n, "unterminated section header");
                section = trim(line.substr(1, line.size() - 2));
                if (section.empty()) throw ConfigError(source, n, "empty section name");
                continue;
            }
            auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError(source, n, "expected 'key = value'");
            std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
            if (key.empty()) throw ConfigError(source, n, "empty key");
            std::string full = section.empty() ? key : section + "." + key;
            if (c.entries_.count(full)) {
                throw ConfigError(source, n, "duplicate key '" + full + "' (first set on line " +
                                                 std::to_string(c.entries_[full].line) + ")");
            }
            c.entries_[full] = {val, n};
            c.order_.push_back(full);
        }
        return c;
    }

    void set(const std::string& key, const std::string& value) {
        if (!entries_.count(key)) order_.push_back(key);
        entries_[key] = {value, 0};
    }

    bool has(const std::string& key) const { return entries_.count(key) > 0; }
    const std::map<std::string, ConfigEntry>& entries() const { return entries_; }
    const std::vector<std::string>& keys() const { return order_; }
    const std::string& source() const { return source_; }

    /// Rejects the first key not in `known`, citing its line.
    void require_known(const std::vector<std::string>& known) const {
        for (const auto& k : order_) {
            bool ok = false;
            for (const auto& p : known) {
                if (p == k || (p.size() > 2 && p.ends_with(".*") && k.rfind(p.substr(0, p.size() - 1), 0) == 0)) {
                    ok = true;
                    break;
                }
            }
            if (!ok) throw ConfigError(source_, entries_.at(k).line, "unknown key '" + k + "'");
        }
    }

    std::string get_string(const std::string& key, const std::string& def) const {
        auto it = entries_.find(key);
        return it == entries_.end() ? def : it->second.value;
    }

    double get_double(const std::string& key, double def) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) return def;
        double v = 0.0;
        const auto& s = it->second.value;
        auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
            throw ConfigError(source_, it->second.line, "'" + key + "' must be a number, got '" + s + "'");
        }
        return v;
    }

    std::uint64_t get_uint(const std::string& key, std::uint64_t def) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) return def;
        std::uint64_t v = 0;
        const auto& s = it->second.value;
        auto r = std::from_chars(s.data(), s.data() + s.size(), v);
        if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
            throw ConfigError(source_, it->second.line, "'" + key + "' must be a nonnegative integer, got '" + s + "'");
        }
        return v;
    }

    bool get_bool(const std::string& key, bool def) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) return def;
        const auto& s = it->second.value;
        if (s == "true" || s == "1" || s == "yes") return true;
        if (s == "false" || s == "0" || s == "no") return false;
        throw ConfigError(source_, it->second.line, "'" + key + "' must be true or false, got '" + s + "'");
    }

    std::size_t line_of(const std::string& key) const {
        auto it = entries_.find(key);
        return it == entries_.end() ? 0 : it->second.line;
    }

    /// Canonical text (sorted keys), used for hashing.
    std::string canonical() const {
        std::string s;
        for (const auto& [k, e] : entries_) s += k + "=" + e.value + "\n";
        return s;
    }

private:
    std::string source_;
    std::map<std::string, ConfigEntry> entries_;
    std::vector<std::string> order_;
};

}  // namespace nevicut::io
