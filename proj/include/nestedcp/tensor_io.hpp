#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nestedcp/error.hpp"
#include "nestedcp/sparse_tensor.hpp"
#include "nestedcp/subgroups.hpp"

namespace nestedcp {

/// How to read a delimited tensor file. Dims given here must agree with a
/// "dims:" header when both are present; with neither, dims are the largest
/// index seen per mode.
struct TensorSchema {
    std::optional<std::vector<std::size_t>> dims;
    bool one_based = true;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

/// Splits on tabs if the line has any, otherwise on commas.
inline std::vector<std::string_view> split_fields(std::string_view line) {
    const char delim = line.find('\t') != std::string_view::npos ? '\t' : ',';
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(delim, start);
        out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

inline bool skippable(std::string_view line) {
    line = trim(line);
    return line.empty() || line.front() == '#';
}

inline std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    return in;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

/// Decimal text that reads back to the same double.
inline std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::vector<std::size_t> parse_dims(std::string_view text, std::size_t line_no) {
    std::vector<std::size_t> dims;
    for (auto f : split_fields(text)) {
        std::size_t n = 0;
        if (!parse_number(f, n) || n == 0) throw DataError("malformed dims header", line_no);
        dims.push_back(n);
    }
    return dims;
}

}  // namespace detail

/// Reads "dims: n1,...,nd" (optional) followed by one "i1,...,id,value"
/// record per line. Comma or tab delimited; '#' lines and blank lines are
/// ignored. Errors carry the offending line number.
inline SparseTensor read_sparse_tensor(std::istream& in, const TensorSchema& schema = {}) {
    std::optional<std::vector<std::size_t>> dims = schema.dims;
    std::optional<std::size_t> order = dims ? std::optional(dims->size()) : std::nullopt;
    std::vector<index_t> coords;
    std::vector<double> values;
    std::vector<std::size_t> lines;
    std::vector<std::size_t> seen_max;

    std::string line;
    std::size_t line_no = 0;
    bool first_content = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::skippable(line)) continue;
        auto text = detail::trim(line);
        if (first_content && text.starts_with("dims:")) {
            auto header = detail::parse_dims(detail::trim(text.substr(5)), line_no);
            if (dims && *dims != header) throw DataError("dims header disagrees with declared dims", line_no);
            dims = std::move(header);
            order = dims->size();
            first_content = false;
            continue;
        }
        first_content = false;

        auto fields = detail::split_fields(text);
        if (!order) order = fields.size() - 1;
        if (fields.size() != *order + 1 || *order < 2)
            throw DataError("malformed record: expected " + std::to_string(order.value_or(0) + 1) + " fields", line_no);
        if (seen_max.empty()) seen_max.assign(*order, 0);
        for (std::size_t k = 0; k < *order; ++k) {
            long long raw = 0;
            if (!detail::parse_number(fields[k], raw)) throw DataError("malformed record: bad index", line_no);
            const long long idx = schema.one_based ? raw - 1 : raw;
            if (idx < 0 || (dims && static_cast<std::size_t>(idx) >= (*dims)[k]))
                throw DataError("index out of bounds in mode " + std::to_string(k + 1), line_no);
            if (idx > static_cast<long long>(std::numeric_limits<index_t>::max()))
                throw DataError("index out of bounds in mode " + std::to_string(k + 1), line_no);
            coords.push_back(static_cast<index_t>(idx));
            seen_max[k] = std::max(seen_max[k], static_cast<std::size_t>(idx) + 1);
        }
        double v = 0.0;
        if (!detail::parse_number(fields[*order], v) || !std::isfinite(v))
            throw DataError("malformed record: bad value", line_no);
        values.push_back(v);
        lines.push_back(line_no);
    }
    if (!order) throw DataError("no records and no dims header");
    if (!dims) dims = seen_max;

    if (auto dup = find_duplicate(coords, *order)) throw DataError("duplicate index tuple", lines[dup->second]);
    return SparseTensor(std::move(*dims), std::move(coords), std::move(values));
}

inline SparseTensor load_sparse_tensor(const std::filesystem::path& path, const TensorSchema& schema = {}) {
    auto in = detail::open_in(path);
    try {
        return read_sparse_tensor(in, schema);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

inline void write_sparse_tensor(std::ostream& out, const SparseTensor& t, char delim = '\t') {
    out << "dims:";
    for (std::size_t k = 0; k < t.order(); ++k) out << (k ? "," : " ") << t.dim(k);
    out << '\n';
    for (std::size_t e = 0; e < t.nnz(); ++e) {
        for (index_t i : t.index(e)) out << i + 1 << delim;
        out << detail::format_real(t.value(e)) << '\n';
    }
}

inline void save_sparse_tensor(const std::filesystem::path& path, const SparseTensor& t, char delim = '\t') {
    auto out = detail::open_out(path);
    write_sparse_tensor(out, t, delim);
    if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Label files: two columns (1-based subject index, integer label).

/// Reads a two-column label file into a vector of length n. Subjects not
/// listed stay unlabeled.
inline CategoryLabels read_labels(std::istream& in, std::size_t n) {
    CategoryLabels labels(n);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::skippable(line)) continue;
        auto fields = detail::split_fields(detail::trim(line));
        long long subject = 0;
        std::int64_t label = 0;
        if (fields.size() != 2 || !detail::parse_number(fields[0], subject) || !detail::parse_number(fields[1], label))
            throw DataError("malformed label record", line_no);
        if (subject < 1 || static_cast<std::size_t>(subject) > n) throw DataError("subject index out of bounds", line_no);
        if (labels[subject - 1]) throw DataError("subject labelled twice", line_no);
        labels[subject - 1] = label;
    }
    return labels;
}

inline CategoryLabels load_labels(const std::filesystem::path& path, std::size_t n) {
    auto in = detail::open_in(path);
    return read_labels(in, n);
}

inline void save_labels(const std::filesystem::path& path, const CategoryLabels& labels) {
    auto out = detail::open_out(path);
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i]) out << i + 1 << '\t' << *labels[i] << '\n';
}

/// Subgroup files hold one section per mode: a "mode: k" line followed by
/// two-column (subject, subgroup) records, subgroups numbered 1..m_k. Every
/// subject of every mode must be listed. m_k is the largest label.
inline SubgroupMap read_subgroups(std::istream& in, std::span<const std::size_t> dims) {
    std::vector<std::vector<index_t>> assignment(dims.size());
    std::vector<std::vector<bool>> seen(dims.size());
    for (std::size_t k = 0; k < dims.size(); ++k) {
        assignment[k].assign(dims[k], 0);
        seen[k].assign(dims[k], false);
    }
    std::vector<std::size_t> counts(dims.size(), 0);
    std::optional<std::size_t> mode;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::skippable(line)) continue;
        auto text = detail::trim(line);
        if (text.starts_with("mode:")) {
            std::size_t k = 0;
            if (!detail::parse_number(detail::trim(text.substr(5)), k) || k < 1 || k > dims.size())
                throw DataError("bad mode header", line_no);
            mode = k - 1;
            continue;
        }
        if (!mode) throw DataError("subgroup record before any mode header", line_no);
        auto fields = detail::split_fields(text);
        long long subject = 0;
        long long group = 0;
        if (fields.size() != 2 || !detail::parse_number(fields[0], subject) || !detail::parse_number(fields[1], group))
            throw DataError("malformed subgroup record", line_no);
        if (subject < 1 || static_cast<std::size_t>(subject) > dims[*mode])
            throw DataError("subject index out of bounds", line_no);
        if (group < 1) throw DataError("subgroup labels start at 1", line_no);
        if (seen[*mode][subject - 1]) throw DataError("subject assigned twice", line_no);
        seen[*mode][subject - 1] = true;
        assignment[*mode][subject - 1] = static_cast<index_t>(group - 1);
        counts[*mode] = std::max(counts[*mode], static_cast<std::size_t>(group));
    }
    for (std::size_t k = 0; k < dims.size(); ++k)
        for (std::size_t i = 0; i < dims[k]; ++i)
            if (!seen[k][i])
                throw DataError("subject " + std::to_string(i + 1) + " of mode " + std::to_string(k + 1) +
                                " has no subgroup");
    return SubgroupMap(std::move(assignment), std::move(counts));
}

inline SubgroupMap load_subgroups(const std::filesystem::path& path, std::span<const std::size_t> dims) {
    auto in = detail::open_in(path);
    try {
        return read_subgroups(in, dims);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

inline void write_subgroups(std::ostream& out, const SubgroupMap& groups) {
    for (std::size_t k = 0; k < groups.order(); ++k) {
        out << "mode: " << k + 1 << '\n';
        for (std::size_t i = 0; i < groups.subjects(k); ++i)
            out << i + 1 << '\t' << groups.group_of(k, static_cast<index_t>(i)) + 1 << '\n';
    }
}

inline void save_subgroups(const std::filesystem::path& path, const SubgroupMap& groups) {
    auto out = detail::open_out(path);
    write_subgroups(out, groups);
}

}  // namespace nestedcp
