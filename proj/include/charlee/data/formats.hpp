#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "charlee/data/dataset.hpp"
#include "charlee/errors.hpp"

namespace charlee {

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

inline std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.push_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

/// Parses a finite double; "?" and "NaN" count as missing values.
inline double parse_value(std::string_view tok, std::size_t line) {
    tok = trim(tok);
    if (tok == "?" || lower(tok) == "nan") throw UnsupportedFormatError("missing values are not supported (line " + std::to_string(line) + ")");
    if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || tok.empty())
        throw ParseError("invalid number '" + std::string(tok) + "'", line);
    if (!std::isfinite(v)) throw ParseError("non-finite value", line);
    return v;
}

inline std::size_t parse_count(std::string_view tok, std::size_t line) {
    tok = trim(tok);
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || tok.empty())
        throw ParseError("invalid integer '" + std::string(tok) + "'", line);
    return v;
}

inline bool parse_bool(std::string_view tok, std::size_t line) {
    const auto t = lower(trim(tok));
    if (t == "true") return true;
    if (t == "false") return false;
    throw ParseError("expected true/false, got '" + std::string(tok) + "'", line);
}

/// Shortest representation that reparses to the identical double.
inline std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline std::size_t intern(std::vector<std::string>& names, std::string_view s) {
    auto it = std::find(names.begin(), names.end(), s);
    if (it != names.end()) return static_cast<std::size_t>(it - names.begin());
    names.emplace_back(s);
    return names.size() - 1;
}

} // namespace detail

// ---- UEA .ts ---------------------------------------------------------------

/// Parses the UEA/sktime `.ts` text format (equal-length, no missing values).
/// Class indices follow first appearance: the @classLabel list when present,
/// otherwise the data rows.
inline Dataset parse_ts(std::string_view text, std::string name = {}) {
    using namespace detail;
    Dataset d;
    d.name = std::move(name);
    std::size_t dims = 0, series_length = 0;
    bool have_dims = false, have_len = false, equal_length = true, in_data = false, has_labels = true;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        const auto line = trim(text.substr(pos, nl - pos));
        pos = nl + 1;
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        if (!in_data) {
            if (line.front() != '@') throw ParseError("expected a header tag", line_no);
            const auto parts = split_ws(line);
            const auto tag = lower(parts[0]);
            auto arg = [&](std::size_t i) -> std::string_view {
                if (parts.size() <= i) throw ParseError("missing value for " + std::string(parts[0]), line_no);
                return parts[i];
            };
            if (tag == "@problemname") {
                if (d.name.empty()) d.name = std::string(arg(1));
            } else if (tag == "@dimensions") {
                dims = parse_count(arg(1), line_no);
                have_dims = true;
            } else if (tag == "@serieslength") {
                series_length = parse_count(arg(1), line_no);
                have_len = true;
            } else if (tag == "@equallength") {
                equal_length = parse_bool(arg(1), line_no);
            } else if (tag == "@missing") {
                if (parse_bool(arg(1), line_no)) throw UnsupportedFormatError("missing values are not supported");
            } else if (tag == "@classlabel") {
                has_labels = parse_bool(arg(1), line_no);
                for (std::size_t i = 2; i < parts.size(); ++i) intern(d.class_names, parts[i]);
            } else if (tag == "@timestamps") {
                if (parse_bool(arg(1), line_no)) throw UnsupportedFormatError("timestamped series are not supported");
            } else if (tag == "@data") {
                in_data = true;
                if (!equal_length) throw UnsupportedFormatError("variable-length series are not supported");
                if (!has_labels) throw UnsupportedFormatError("unlabelled .ts files are not supported");
            } else if (tag == "@univariate" || tag == "@targetlabel") {
                // informational
            } else {
                throw ParseError("unknown header tag " + std::string(parts[0]), line_no);
            }
        } else {
            auto fields = split(line, ':');
            if (fields.size() < 2) throw ParseError("data row needs dimensions and a class label", line_no);
            const auto label = trim(fields.back());
            fields.pop_back();
            if (have_dims && fields.size() != dims)
                throw ParseError("expected " + std::to_string(dims) + " dimensions, found " + std::to_string(fields.size()),
                                 line_no);
            if (d.n_channels == 0) d.n_channels = fields.size();
            if (fields.size() != d.n_channels) throw UnsupportedFormatError("inconsistent dimension count");
            std::vector<double> sample;
            for (auto f : fields) {
                const auto toks = split(f, ',');
                if (d.length == 0) d.length = toks.size();
                if (have_len && toks.size() != series_length)
                    throw ParseError("series length " + std::to_string(toks.size()) + " does not match @seriesLength " +
                                     std::to_string(series_length), line_no);
                if (toks.size() != d.length) throw UnsupportedFormatError("ragged series lengths are not supported");
                for (auto tok : toks) sample.push_back(parse_value(tok, line_no));
            }
            d.values.insert(d.values.end(), sample.begin(), sample.end());
            d.labels.push_back(intern(d.class_names, label));
        }
    }
    if (!in_data) throw ParseError("missing @data section", line_no);
    if (d.labels.empty()) throw ParseError("no data rows", line_no);
    d.channel_names = default_channel_names(d.n_channels);
    d.validate();
    return d;
}

inline Dataset load_ts(const std::string& path) { return parse_ts(detail::read_file(path)); }

inline std::string format_ts(const Dataset& d) {
    using detail::format_double;
    std::ostringstream out;
    out << "@problemName " << (d.name.empty() ? std::string("dataset") : d.name) << "\n";
    out << "@timeStamps false\n@missing false\n";
    out << "@univariate " << (d.n_channels == 1 ? "true" : "false") << "\n";
    out << "@dimensions " << d.n_channels << "\n";
    out << "@equalLength true\n@seriesLength " << d.length << "\n";
    out << "@classLabel true";
    for (const auto& c : d.class_names) out << ' ' << c;
    out << "\n@data\n";
    for (std::size_t i = 0; i < d.n_samples(); ++i) {
        for (std::size_t c = 0; c < d.n_channels; ++c) {
            for (std::size_t t = 0; t < d.length; ++t) {
                if (t) out << ',';
                out << format_double(d.at(i, c, t));
            }
            out << ':';
        }
        out << d.class_names[d.labels[i]] << "\n";
    }
    return out.str();
}

inline void write_ts(const Dataset& d, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot write " + path);
    f << format_ts(d);
}

// ---- long-format CSV -------------------------------------------------------

/// Header `sample_id,channel_id,label,t0,...,t{T-1}`, one row per (sample, channel).
inline Dataset parse_csv(std::string_view text, std::string name = {}) {
    using namespace detail;
    Dataset d;
    d.name = std::move(name);
    struct Pending {
        std::size_t label;
        std::map<std::size_t, std::vector<double>> channels;
        std::size_t first_line;
    };
    std::vector<std::string> sample_ids;
    std::vector<Pending> pending;
    std::size_t line_no = 0;
    bool header = false;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        const auto line = trim(text.substr(pos, nl - pos));
        pos = nl + 1;
        ++line_no;
        if (line.empty()) continue;
        const auto cols = split(line, ',');
        if (!header) {
            if (cols.size() < 4 || trim(cols[0]) != "sample_id" || trim(cols[1]) != "channel_id" || trim(cols[2]) != "label")
                throw ParseError("expected header sample_id,channel_id,label,t0,...", line_no);
            d.length = cols.size() - 3;
            header = true;
            continue;
        }
        if (cols.size() != d.length + 3)
            throw ParseError("expected " + std::to_string(d.length + 3) + " columns, found " + std::to_string(cols.size()),
                             line_no);
        const auto sid = trim(cols[0]);
        const auto cid = trim(cols[1]);
        const auto lab = trim(cols[2]);
        if (sid.empty() || cid.empty() || lab.empty()) throw ParseError("empty identifier", line_no);
        const std::size_t s = intern(sample_ids, sid);
        const std::size_t c = intern(d.channel_names, cid);
        const std::size_t l = intern(d.class_names, lab);
        if (s == pending.size()) pending.push_back({l, {}, line_no});
        auto& p = pending[s];
        if (p.label != l) throw ParseError("inconsistent label for sample " + std::string(sid), line_no);
        if (p.channels.count(c)) throw ParseError("duplicate channel row for sample " + std::string(sid), line_no);
        std::vector<double> row;
        row.reserve(d.length);
        for (std::size_t t = 0; t < d.length; ++t) row.push_back(parse_value(cols[3 + t], line_no));
        p.channels[c] = std::move(row);
    }
    if (!header) throw ParseError("empty CSV", line_no);
    d.n_channels = d.channel_names.size();
    for (std::size_t s = 0; s < pending.size(); ++s) {
        const auto& p = pending[s];
        if (p.channels.size() != d.n_channels)
            throw ParseError("sample " + sample_ids[s] + " is missing channel rows", p.first_line);
        for (std::size_t c = 0; c < d.n_channels; ++c) {
            const auto& row = p.channels.at(c);
            d.values.insert(d.values.end(), row.begin(), row.end());
        }
        d.labels.push_back(p.label);
    }
    if (d.labels.empty()) throw ParseError("no data rows", line_no);
    d.validate();
    return d;
}

inline Dataset load_csv(const std::string& path) { return parse_csv(detail::read_file(path)); }

inline std::string format_csv(const Dataset& d) {
    using detail::format_double;
    const auto channels = d.channel_names.empty() ? default_channel_names(d.n_channels) : d.channel_names;
    std::ostringstream out;
    out << "sample_id,channel_id,label";
    for (std::size_t t = 0; t < d.length; ++t) out << ",t" << t;
    out << "\n";
    for (std::size_t i = 0; i < d.n_samples(); ++i)
        for (std::size_t c = 0; c < d.n_channels; ++c) {
            out << i << ',' << channels[c] << ',' << d.class_names[d.labels[i]];
            for (std::size_t t = 0; t < d.length; ++t) out << ',' << format_double(d.at(i, c, t));
            out << "\n";
        }
    return out.str();
}

inline void write_csv(const Dataset& d, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot write " + path);
    f << format_csv(d);
}

/// Picks the reader by extension (.ts or .csv).
inline Dataset load_dataset(const std::string& path) {
    const auto dot = path.rfind('.');
    const auto ext = dot == std::string::npos ? std::string{} : detail::lower(path.substr(dot));
    if (ext == ".ts") return load_ts(path);
    if (ext == ".csv") return load_csv(path);
    throw ConfigError("unrecognized dataset extension: " + path);
}

} // namespace charlee
