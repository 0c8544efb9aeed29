#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <numeric>
#include <vector>

#include "nestedcp/factor_model.hpp"

namespace nestedcp {

namespace detail {

/// Rank of the selected columns, counting singular values above rel_tol times
/// the largest one.
inline std::size_t column_subset_rank(const Eigen::MatrixXd& a, const std::vector<std::size_t>& cols, double rel_tol) {
    Eigen::MatrixXd sub(a.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) sub.col(static_cast<Eigen::Index>(c)) = a.col(static_cast<Eigen::Index>(cols[c]));
    const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(sub).singularValues();
    if (sv.size() == 0 || sv(0) == 0.0) return 0;
    std::size_t rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > rel_tol * sv(0)) ++rank;
    return rank;
}

/// Calls fn(subset) for each k-subset of {0..n-1} in lexicographic order
/// until fn returns false. Returns false if stopped early.
template <class Fn>
bool for_each_subset(std::size_t n, std::size_t k, Fn&& fn) {
    std::vector<std::size_t> s(k);
    std::iota(s.begin(), s.end(), std::size_t{0});
    while (true) {
        if (!fn(s)) return false;
        std::size_t i = k;
        while (i > 0 && s[i - 1] == n - k + i - 1) --i;
        if (i == 0) return true;
        ++s[i - 1];
        for (std::size_t j = i; j < k; ++j) s[j] = s[j - 1] + 1;
    }
}

}  // namespace detail

/// Kruskal rank: the largest k such that every k columns are linearly
/// independent. Brute-force over column subsets, so limited to 12 columns.
inline std::size_t kruskal_rank(const Eigen::MatrixXd& a, double rel_tol = 1e-10) {
    if (a.rows() == 0 || a.cols() == 0) throw std::invalid_argument("kruskal_rank: empty matrix");
    if (a.cols() > 12) throw std::invalid_argument("kruskal_rank: at most 12 columns supported");
    const auto r = static_cast<std::size_t>(a.cols());
    const Eigen::VectorXd norms = a.colwise().norm();
    if ((norms.array() <= rel_tol * norms.maxCoeff()).any() || norms.maxCoeff() == 0.0) return 0;
    for (std::size_t k = 2; k <= r; ++k) {
        const bool all_independent = detail::for_each_subset(r, k, [&](const std::vector<std::size_t>& cols) {
            return detail::column_subset_rank(a, cols, rel_tol) == k;
        });
        if (!all_independent) return k - 1;
    }
    return r;
}

struct IdentifiabilityReport {
    std::vector<std::size_t> k_ranks;  ///< per mode, of B^k = P^k + Q^k
    std::size_t k_rank_sum = 0;
    std::size_t required = 0;  ///< 2r + d - 1
    bool identifiable = false;
};

/// Checks the sufficient uniqueness condition sum_k krank(B^k) >= 2r + d - 1.
inline IdentifiabilityReport identifiability_check(const FactorModel& model) {
    IdentifiabilityReport rep;
    for (std::size_t k = 0; k < model.order(); ++k) {
        const Eigen::MatrixXd b = model.effective(k);
        rep.k_ranks.push_back(kruskal_rank(b));
        rep.k_rank_sum += rep.k_ranks.back();
    }
    rep.required = 2 * model.rank + model.order() - 1;
    rep.identifiable = rep.k_rank_sum >= rep.required;
    return rep;
}

}  // namespace nestedcp
