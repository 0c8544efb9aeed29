#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nestedcp/error.hpp"

namespace nestedcp {

/// Subject index within one mode. 0-based inside the library; files and the
/// command line use 1-based indices.
using index_t = std::uint32_t;

/// The entries of one tensor with a fixed k-th index (the observation set of
/// subject i_k in mode k). Holds entry ids into the owning tensor.
struct ObservationSet {
    std::size_t mode = 0;
    index_t subject = 0;
    std::span<const std::size_t> entries;

    std::size_t size() const noexcept { return entries.size(); }
    bool empty() const noexcept { return entries.empty(); }
};

/// First pair of entries (earlier, later) sharing an index tuple, if any.
inline std::optional<std::pair<std::size_t, std::size_t>> find_duplicate(std::span<const index_t> coords,
                                                                         std::size_t d) {
    const std::size_t n = coords.size() / d;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    auto less = [&](std::size_t a, std::size_t b) {
        return std::lexicographical_compare(coords.begin() + a * d, coords.begin() + (a + 1) * d,
                                            coords.begin() + b * d, coords.begin() + (b + 1) * d);
    };
    std::sort(perm.begin(), perm.end(), less);
    for (std::size_t i = 1; i < n; ++i)
        if (!less(perm[i - 1], perm[i]))
            return std::pair{std::min(perm[i - 1], perm[i]), std::max(perm[i - 1], perm[i])};
    return std::nullopt;
}

/// Order-d tensor stored as its observed (index tuple, value) entries, with a
/// per-mode inverted index built once at construction. Immutable afterwards.
class SparseTensor {
public:
    SparseTensor() = default;

    /// coords is entry-major: entry e occupies coords[e*d, (e+1)*d).
    /// Throws DataError on out-of-range indices or duplicate tuples.
    SparseTensor(std::vector<std::size_t> dims, std::vector<index_t> coords,
                 std::vector<double> values)
        : dims_(std::move(dims)), coords_(std::move(coords)), values_(std::move(values)) {
        if (dims_.size() < 2) throw DataError("tensor order must be at least 2");
        for (std::size_t n : dims_)
            if (n == 0 || n > std::numeric_limits<index_t>::max())
                throw DataError("mode size out of range");
        const std::size_t d = dims_.size();
        if (coords_.size() != values_.size() * d)
            throw DataError("coordinate count does not match order times entry count");
        for (std::size_t e = 0; e < values_.size(); ++e)
            for (std::size_t k = 0; k < d; ++k)
                if (coords_[e * d + k] >= dims_[k])
                    throw DataError("index out of bounds in mode " + std::to_string(k + 1) +
                                    " at entry " + std::to_string(e + 1));
        check_duplicates();
        build_index();
    }

    std::size_t order() const noexcept { return dims_.size(); }
    std::span<const std::size_t> dims() const noexcept { return dims_; }
    std::size_t dim(std::size_t k) const { return dims_.at(k); }
    std::size_t nnz() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    std::span<const index_t> index(std::size_t e) const noexcept {
        return {coords_.data() + e * dims_.size(), dims_.size()};
    }
    double value(std::size_t e) const noexcept { return values_[e]; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<const index_t> coords() const noexcept { return coords_; }

    /// Entry ids whose k-th index equals subject, in ascending entry order.
    std::span<const std::size_t> mode_entries(std::size_t k, index_t subject) const noexcept {
        const auto& off = offsets_[k];
        return {entry_ids_[k].data() + off[subject], off[subject + 1] - off[subject]};
    }

    std::size_t count(std::size_t k, index_t subject) const noexcept {
        return offsets_[k][subject + 1] - offsets_[k][subject];
    }

    /// Observation set of subject i in mode k; empty for cold subjects.
    ObservationSet observations(std::size_t k, index_t subject) const {
        if (k >= order()) throw std::out_of_range("mode index out of range");
        if (subject >= dims_[k]) throw std::out_of_range("subject index out of range");
        return {k, subject, mode_entries(k, subject)};
    }

    /// New tensor holding the listed entries, in the order given.
    SparseTensor subset(std::span<const std::size_t> entry_ids) const {
        const std::size_t d = order();
        std::vector<index_t> coords;
        std::vector<double> values;
        coords.reserve(entry_ids.size() * d);
        values.reserve(entry_ids.size());
        for (std::size_t e : entry_ids) {
            auto idx = index(e);
            coords.insert(coords.end(), idx.begin(), idx.end());
            values.push_back(values_[e]);
        }
        return SparseTensor(dims_, std::move(coords), std::move(values));
    }

    /// Same index set with replaced values.
    SparseTensor with_values(std::vector<double> values) const {
        if (values.size() != nnz()) throw DataError("value count mismatch");
        SparseTensor out = *this;
        out.values_ = std::move(values);
        return out;
    }

    double mean() const {
        if (empty()) throw DataError("mean of an empty tensor");
        return std::accumulate(values_.begin(), values_.end(), 0.0) / static_cast<double>(nnz());
    }

private:
    void check_duplicates() const {
        if (auto dup = find_duplicate(coords_, order()))
            throw DataError("duplicate index tuple at entry " + std::to_string(dup->second + 1));
    }

    void build_index() {
        const std::size_t d = order();
        offsets_.assign(d, {});
        entry_ids_.assign(d, {});
        for (std::size_t k = 0; k < d; ++k) {
            auto& off = offsets_[k];
            off.assign(dims_[k] + 1, 0);
            for (std::size_t e = 0; e < nnz(); ++e) ++off[coords_[e * d + k] + 1];
            std::partial_sum(off.begin(), off.end(), off.begin());
            auto cursor = off;
            auto& ids = entry_ids_[k];
            ids.resize(nnz());
            for (std::size_t e = 0; e < nnz(); ++e) ids[cursor[coords_[e * d + k]]++] = e;
        }
    }

    std::vector<std::size_t> dims_;
    std::vector<index_t> coords_;
    std::vector<double> values_;
    std::vector<std::vector<std::size_t>> offsets_;
    std::vector<std::vector<std::size_t>> entry_ids_;
};

inline ObservationSet mode_observations(const SparseTensor& tensor, std::size_t k, index_t subject) {
    return tensor.observations(k, subject);
}

// ---------------------------------------------------------------------------
// Per-category standardization

/// Category label of each subject in the standardized mode; nullopt means
/// unlabeled.
using CategoryLabels = std::vector<std::optional<std::int64_t>>;

struct GroupScale {
    double mean = 0.0;
    double sd = 1.0;
};

/// Location/scale per category, enough to apply or invert the transform on
/// any tensor sharing the labelled mode.
struct ScalingInfo {
    std::size_t mode = 1;
    CategoryLabels labels;
    std::map<std::int64_t, GroupScale> groups;

    const GroupScale& scale_of(index_t subject) const {
        if (subject >= labels.size() || !labels[subject])
            throw DataError("unlabeled subject " + std::to_string(subject + 1));
        auto it = groups.find(*labels[subject]);
        if (it == groups.end())
            throw DataError("no scaling recorded for category " + std::to_string(*labels[subject]));
        return it->second;
    }

    SparseTensor apply(const SparseTensor& t) const {
        std::vector<double> v(t.nnz());
        for (std::size_t e = 0; e < t.nnz(); ++e) {
            const auto& g = scale_of(t.index(e)[mode]);
            v[e] = (t.value(e) - g.mean) / g.sd;
        }
        return t.with_values(std::move(v));
    }

    SparseTensor invert(const SparseTensor& t) const {
        std::vector<double> v(t.nnz());
        for (std::size_t e = 0; e < t.nnz(); ++e) {
            const auto& g = scale_of(t.index(e)[mode]);
            v[e] = t.value(e) * g.sd + g.mean;
        }
        return t.with_values(std::move(v));
    }
};

/// Sample mean and n-1 standard deviation of the values in each category.
inline ScalingInfo fit_group_scaling(const SparseTensor& t, std::size_t mode, CategoryLabels labels) {
    if (mode >= t.order()) throw std::out_of_range("mode index out of range");
    if (labels.size() != t.dim(mode)) throw DataError("label count does not match mode size");

    struct Acc {
        std::size_t n = 0;
        double sum = 0.0;
        double ss = 0.0;
    };
    std::map<std::int64_t, Acc> acc;
    for (std::size_t e = 0; e < t.nnz(); ++e) {
        const index_t s = t.index(e)[mode];
        if (!labels[s]) throw DataError("unlabeled subject " + std::to_string(s + 1));
        auto& a = acc[*labels[s]];
        ++a.n;
        a.sum += t.value(e);
    }
    for (std::size_t e = 0; e < t.nnz(); ++e) {
        auto& a = acc[*labels[t.index(e)[mode]]];
        const double dev = t.value(e) - a.sum / static_cast<double>(a.n);
        a.ss += dev * dev;
    }

    ScalingInfo info;
    info.mode = mode;
    info.labels = std::move(labels);
    for (const auto& [label, a] : acc) {
        if (a.n < 2) throw DataError("category " + std::to_string(label) + " has fewer than 2 observations");
        const double sd = std::sqrt(a.ss / static_cast<double>(a.n - 1));
        if (!(sd > 0.0)) throw DataError("category " + std::to_string(label) + " has zero variance");
        info.groups[label] = {a.sum / static_cast<double>(a.n), sd};
    }
    return info;
}

inline std::pair<SparseTensor, ScalingInfo> standardize_by_group(const SparseTensor& t, std::size_t mode,
                                                                 CategoryLabels labels) {
    ScalingInfo info = fit_group_scaling(t, mode, std::move(labels));
    SparseTensor out = info.apply(t);
    return {std::move(out), std::move(info)};
}

// ---------------------------------------------------------------------------
// Train / validation / test split

struct DatasetSplit {
    SparseTensor train;
    SparseTensor validation;
    SparseTensor test;
    std::uint64_t seed = 0;
};

/// Uniformly random partition of the entries. Part sizes are the rounded
/// train and validation shares with the remainder going to test. Each part
/// keeps the parent's entry order.
inline DatasetSplit split_dataset(const SparseTensor& t, std::array<double, 3> ratios, std::uint64_t seed) {
    for (double r : ratios)
        if (!(r > 0.0)) throw std::invalid_argument("split ratios must be positive");
    if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
        throw std::invalid_argument("split ratios must sum to 1");

    const std::size_t n = t.nnz();
    const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(n)));
    if (n_train == 0 || n_val == 0 || n_train + n_val >= n)
        throw std::invalid_argument("a split part would be empty");

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);

    auto part = [&](std::size_t begin, std::size_t end) {
        std::vector<std::size_t> ids(perm.begin() + static_cast<std::ptrdiff_t>(begin),
                                     perm.begin() + static_cast<std::ptrdiff_t>(end));
        std::sort(ids.begin(), ids.end());
        return t.subset(ids);
    };
    return {part(0, n_train), part(n_train, n_train + n_val), part(n_train + n_val, n), seed};
}

}  // namespace nestedcp
