#pragma once

#include "fedsim/errors.hpp"

#include <charconv>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace fedsim::csv {

// Shortest representation that parses back to the same double.
inline std::string format_double(double x) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
    if (ec != std::errc{}) throw error("cannot format number");
    return {buf, end};
}

inline double parse_double(std::string_view s) {
    double x = 0.0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc{} || end != s.data() + s.size()) throw error("bad number '" + std::string(s) + "'");
    return x;
}

inline std::size_t parse_size(std::string_view s) {
    std::size_t x = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc{} || end != s.data() + s.size()) throw error("bad integer '" + std::string(s) + "'");
    return x;
}

// Space-separated list inside one field.
template <typename T, typename Fmt>
std::string join(const std::vector<T>& xs, Fmt fmt) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ' ';
        out += fmt(xs[i]);
    }
    return out;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::vector<std::size_t> parse_size_list(std::string_view s) {
    std::vector<std::size_t> out;
    if (s.empty()) return out;
    for (auto part : split(s, ' ')) out.push_back(parse_size(part));
    return out;
}

inline std::vector<double> parse_double_list(std::string_view s) {
    std::vector<double> out;
    if (s.empty()) return out;
    for (auto part : split(s, ' ')) out.push_back(parse_double(part));
    return out;
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw error("missing CSV column '" + std::string(name) + "'");
    }
};

// Fields never contain commas or newlines, so no quoting is needed.
inline std::string to_string(const Table& t) {
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (fields[i].find_first_of(",\n") != std::string::npos)
                throw error("CSV field contains a separator: '" + fields[i] + "'");
            os << (i ? "," : "") << fields[i];
        }
        os << '\n';
    };
    line(t.header);
    for (const auto& r : t.rows) line(r);
    return os.str();
}

inline Table parse(std::string_view text) {
    Table t;
    bool first = true;
    for (auto raw : split(text, '\n')) {
        if (raw.empty()) continue;
        std::vector<std::string> fields;
        for (auto f : split(raw, ',')) fields.emplace_back(f);
        if (first) {
            t.header = std::move(fields);
            first = false;
        } else {
            if (fields.size() != t.header.size()) throw error("CSV row has the wrong number of fields");
            t.rows.push_back(std::move(fields));
        }
    }
    if (first) throw error("CSV input has no header");
    return t;
}

inline void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw error("cannot write '" + path + "'");
    out << contents;
    if (!out) throw error("failed writing '" + path + "'");
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw error("cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace fedsim::csv
