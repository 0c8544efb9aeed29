#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nestedcp/error.hpp"
#include "nestedcp/sparse_tensor.hpp"

namespace nestedcp {

/// Per-mode assignment of every subject to exactly one subgroup, together
/// with the member list of each subgroup.
class SubgroupMap {
public:
    SubgroupMap() = default;

    /// assignment[k][i] is the 0-based subgroup of subject i in mode k;
    /// group_counts[k] is m_k. Groups may be empty.
    SubgroupMap(std::vector<std::vector<index_t>> assignment, std::vector<std::size_t> group_counts)
        : assignment_(std::move(assignment)), counts_(std::move(group_counts)) {
        if (assignment_.size() != counts_.size()) throw DataError("subgroup map: mode count mismatch");
        members_.resize(order());
        for (std::size_t k = 0; k < order(); ++k) {
            if (counts_[k] == 0) throw DataError("subgroup map: mode " + std::to_string(k + 1) + " has no groups");
            members_[k].resize(counts_[k]);
            for (std::size_t i = 0; i < assignment_[k].size(); ++i) {
                const index_t u = assignment_[k][i];
                if (u >= counts_[k])
                    throw DataError("subgroup map: label out of range for subject " + std::to_string(i + 1) +
                                    " in mode " + std::to_string(k + 1));
                members_[k][u].push_back(static_cast<index_t>(i));
            }
        }
    }

    /// Group counts inferred as max label + 1.
    explicit SubgroupMap(std::vector<std::vector<index_t>> assignment)
        : SubgroupMap(assignment, infer_counts(assignment)) {}

    /// One subgroup per mode holding every subject.
    static SubgroupMap single(std::span<const std::size_t> dims) {
        std::vector<std::vector<index_t>> a;
        for (std::size_t n : dims) a.emplace_back(n, 0);
        return SubgroupMap(std::move(a), std::vector<std::size_t>(dims.size(), 1));
    }

    /// Contiguous, as-even-as-possible assignment: subject i of n goes to
    /// group floor(i*m/n).
    static SubgroupMap even(std::span<const std::size_t> dims, std::span<const std::size_t> groups) {
        if (dims.size() != groups.size()) throw DataError("subgroup map: mode count mismatch");
        std::vector<std::vector<index_t>> a(dims.size());
        for (std::size_t k = 0; k < dims.size(); ++k) {
            if (groups[k] == 0 || groups[k] > dims[k]) throw DataError("subgroup map: invalid group count");
            a[k].resize(dims[k]);
            for (std::size_t i = 0; i < dims[k]; ++i) a[k][i] = static_cast<index_t>(i * groups[k] / dims[k]);
        }
        return SubgroupMap(std::move(a), {groups.begin(), groups.end()});
    }

    std::size_t order() const noexcept { return assignment_.size(); }
    std::size_t subjects(std::size_t k) const { return assignment_.at(k).size(); }
    std::size_t groups(std::size_t k) const { return counts_.at(k); }
    index_t group_of(std::size_t k, index_t subject) const noexcept { return assignment_[k][subject]; }
    std::span<const index_t> assignment(std::size_t k) const { return assignment_.at(k); }
    std::span<const index_t> members(std::size_t k, index_t group) const { return members_.at(k).at(group); }

    /// Keeps only the listed modes, in the order given.
    SubgroupMap restrict_to(std::span<const std::size_t> modes) const {
        std::vector<std::vector<index_t>> a;
        std::vector<std::size_t> c;
        for (std::size_t k : modes) {
            a.push_back(assignment_.at(k));
            c.push_back(counts_.at(k));
        }
        return SubgroupMap(std::move(a), std::move(c));
    }

    bool matches(std::span<const std::size_t> dims) const {
        if (dims.size() != order()) return false;
        for (std::size_t k = 0; k < order(); ++k)
            if (assignment_[k].size() != dims[k]) return false;
        return true;
    }

    /// Throws unless every subgroup has at least min_size members.
    void require_min_members(std::size_t min_size) const {
        for (std::size_t k = 0; k < order(); ++k)
            for (std::size_t u = 0; u < counts_[k]; ++u)
                if (members_[k][u].size() < min_size)
                    throw DataError("subgroup " + std::to_string(u + 1) + " of mode " + std::to_string(k + 1) +
                                    " has " + std::to_string(members_[k][u].size()) + " members, need at least " +
                                    std::to_string(min_size));
    }

    friend bool operator==(const SubgroupMap& a, const SubgroupMap& b) {
        return a.assignment_ == b.assignment_ && a.counts_ == b.counts_;
    }

private:
    static std::vector<std::size_t> infer_counts(const std::vector<std::vector<index_t>>& a) {
        std::vector<std::size_t> c;
        for (const auto& mode : a) c.push_back(mode.empty() ? 0 : *std::max_element(mode.begin(), mode.end()) + 1);
        return c;
    }

    std::vector<std::vector<index_t>> assignment_;
    std::vector<std::size_t> counts_;
    std::vector<std::vector<std::vector<index_t>>> members_;
};

}  // namespace nestedcp
