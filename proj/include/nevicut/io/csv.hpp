#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "nevicut/cut/model.hpp"
#include "nevicut/cut/sample.hpp"
#include "nevicut/io/atomic.hpp"

namespace nevicut::io {

/// A numeric table with a header row.
struct Table {
    std::vector<std::string> header;
    ad::Tensor values;  // rows x header.size()
};

namespace detail {

inline void append_number(std::string& out, double v) {
    char buf[32];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, r.ptr);
}

}  // namespace detail

/// Shortest round-trip formatting, so write -> read is exact.
inline std::string table_csv(const std::vector<std::string>& header, const ad::Tensor& t) {
    if (header.size() != t.cols()) throw InvalidArgument("csv: header has " + std::to_string(header.size()) + " names for " + std::to_string(t.cols()) + " columns");
    std::string out;
    out.reserve(t.size() * 20 + 64);
    for (std::size_t j = 0; j < header.size(); ++j) out += (j ? "," : "") + header[j];
    out += '\n';
    for (std::size_t i = 0; i < t.rows(); ++i) {
        for (std::size_t j = 0; j < t.cols(); ++j) {
            if (j) out += ',';
            detail::append_number(out, t(i, j));
        }
        out += '\n';
    }
    return out;
}

/// Parses a header + numeric body. Cells must be finite numbers; errors name
/// the 1-based data row and column.
inline Table parse_table(std::string_view text, const std::string& source) {
    Table t;
    std::vector<double> data;
    std::size_t pos = 0, row = 0;
    auto next_line = [&](std::string_view& line) {
        if (pos >= text.size()) return false;
        std::size_t e = text.find('\n', pos);
        if (e == std::string_view::npos) e = text.size();
        line = text.substr(pos, e - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos = e + 1;
        return true;
    };
    std::string_view line;
    if (!next_line(line) || line.empty()) throw InvalidArgument(source + ": missing header row");
    for (std::size_t s = 0;;) {
        std::size_t c = line.find(',', s);
        std::string name(line.substr(s, c == std::string_view::npos ? std::string_view::npos : c - s));
        if (name.empty()) throw InvalidArgument(source + ": empty column name in header");
        t.header.push_back(std::move(name));
        if (c == std::string_view::npos) break;
        s = c + 1;
    }
    const std::size_t k = t.header.size();
    while (next_line(line)) {
        if (line.empty()) continue;
        ++row;
        std::size_t col = 0;
        const char* p = line.data();
        const char* end = line.data() + line.size();
        while (true) {
            const char* comma = std::find(p, end, ',');
            ++col;
            if (col > k) throw InvalidArgument(source + ": row " + std::to_string(row) + " has more than " + std::to_string(k) + " columns");
            double v = 0.0;
            const char* q = p;
            while (q < comma && *q == ' ') ++q;
            auto r = std::from_chars(q, comma, v);
            const char* tail = r.ptr;
            while (tail < comma && *tail == ' ') ++tail;
            if (r.ec != std::errc() || tail != comma || q == comma) {
                throw InvalidArgument(source + ": non-numeric cell at row " + std::to_string(row) + ", column " + std::to_string(col) +
                                      " ('" + std::string(p, comma) + "')");
            }
            if (!std::isfinite(v)) {
                throw InvalidArgument(source + ": non-finite value at row " + std::to_string(row) + ", column " + std::to_string(col));
            }
            data.push_back(v);
            if (comma == end) break;
            p = comma + 1;
        }
        if (col != k) {
            throw InvalidArgument(source + ": row " + std::to_string(row) + " has " + std::to_string(col) + " columns, expected " + std::to_string(k));
        }
    }
    if (row == 0) throw InvalidArgument(source + ": no data rows");
    t.values = ad::Tensor(row, k, std::move(data));
    return t;
}

inline Table load_table(const std::filesystem::path& path) { return parse_table(read_file(path), path.string()); }

inline cut::UpstreamSamples load_upstream_csv(const std::filesystem::path& path) {
    Table t = load_table(path);
    cut::UpstreamSamples u;
    u.eta = std::move(t.values);
    u.names = std::move(t.header);
    return u;
}

inline void save_upstream_csv(const std::filesystem::path& path, const cut::UpstreamSamples& u) {
    write_atomic(path, table_csv(u.column_names(), u.eta));
}

/// Draw file shared by every method: eta_1..eta_k, theta_1..theta_d.
inline std::string samples_csv(const cut::CutPosteriorDraws& d) {
    const std::size_t k = d.eta.cols(), m = d.theta.cols();
    if (d.eta.rows() != d.theta.rows()) throw InvalidArgument("samples: eta and theta row counts differ");
    std::vector<std::string> h;
    for (std::size_t j = 0; j < k; ++j) h.push_back("eta_" + std::to_string(j + 1));
    for (std::size_t j = 0; j < m; ++j) h.push_back("theta_" + std::to_string(j + 1));
    ad::Tensor all(d.eta.rows(), k + m);
    for (std::size_t i = 0; i < d.eta.rows(); ++i) {
        for (std::size_t j = 0; j < k; ++j) all(i, j) = d.eta(i, j);
        for (std::size_t j = 0; j < m; ++j) all(i, k + j) = d.theta(i, j);
    }
    return table_csv(h, all);
}

inline void save_samples_csv(const std::filesystem::path& path, const cut::CutPosteriorDraws& d) {
    write_atomic(path, samples_csv(d));
}

/// Splits a sample file back into eta and theta blocks by column prefix.
inline cut::CutPosteriorDraws load_samples_csv(const std::filesystem::path& path) {
    Table t = load_table(path);
    std::vector<std::size_t> e, th;
    for (std::size_t j = 0; j < t.header.size(); ++j) {
        const auto& h = t.header[j];
        if (h.rfind("eta_", 0) == 0) e.push_back(j);
        else if (h.rfind("theta_", 0) == 0) th.push_back(j);
        else throw InvalidArgument(path.string() + ": column '" + h + "' is neither eta_* nor theta_*");
    }
    if (th.empty()) throw InvalidArgument(path.string() + ": no theta_* columns");
    cut::CutPosteriorDraws d;
    d.eta = ad::Tensor(t.values.rows(), e.size());
    d.theta = ad::Tensor(t.values.rows(), th.size());
    for (std::size_t i = 0; i < t.values.rows(); ++i) {
        for (std::size_t j = 0; j < e.size(); ++j) d.eta(i, j) = t.values(i, e[j]);
        for (std::size_t j = 0; j < th.size(); ++j) d.theta(i, j) = t.values(i, th[j]);
    }
    for (std::size_t j : e) d.eta_names.push_back(t.header[j]);
    return d;
}

}  // namespace nevicut::io
