#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "nestedcp/error.hpp"
#include "nestedcp/sparse_tensor.hpp"
#include "nestedcp/subgroups.hpp"

namespace nestedcp {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Multilayer CP model. Every subject i of mode k carries a latent row
/// p^k_i and shares the nested row q^k_u of its subgroup u; the effective
/// factor is b^k_i = p^k_i + q^k_u and
///
///     y(i_1..i_d) = sum_j prod_k b^k_{i_k j}.
///
/// Nested rows are stored once per subgroup, so members of a subgroup share
/// them structurally. Cold subjects (no training data) keep a zero latent
/// row and predict through their subgroup's nested row alone.
struct FactorModel {
    std::size_t rank = 0;
    std::vector<Matrix> latent;  ///< n_k x r per mode
    std::vector<Matrix> nested;  ///< m_k x r per mode, one row per subgroup
    SubgroupMap subgroups;
    std::vector<std::vector<std::uint8_t>> cold;  ///< per mode, per subject

    FactorModel() = default;

    /// All-zero model with the given shape.
    FactorModel(std::span<const std::size_t> dims, std::size_t r, SubgroupMap groups)
        : rank(r), subgroups(std::move(groups)) {
        if (r == 0) throw std::invalid_argument("rank must be at least 1");
        if (!subgroups.matches(dims)) throw DataError("subgroup map does not match tensor dims");
        for (std::size_t k = 0; k < dims.size(); ++k) {
            latent.push_back(Matrix::Zero(static_cast<Eigen::Index>(dims[k]), static_cast<Eigen::Index>(r)));
            nested.push_back(Matrix::Zero(static_cast<Eigen::Index>(subgroups.groups(k)), static_cast<Eigen::Index>(r)));
            cold.emplace_back(dims[k], std::uint8_t{0});
        }
    }

    FactorModel(const std::vector<std::size_t>& dims, std::size_t r, SubgroupMap groups)
        : FactorModel(std::span<const std::size_t>(dims), r, std::move(groups)) {}

    std::size_t order() const noexcept { return latent.size(); }
    std::size_t dim(std::size_t k) const { return static_cast<std::size_t>(latent.at(k).rows()); }
    std::vector<std::size_t> dims() const {
        std::vector<std::size_t> out;
        for (const auto& p : latent) out.push_back(static_cast<std::size_t>(p.rows()));
        return out;
    }

    /// B^k = P^k + Q^k with Q^k expanded to one row per subject.
    Matrix effective(std::size_t k) const {
        Matrix b = latent.at(k);
        for (Eigen::Index i = 0; i < b.rows(); ++i)
            b.row(i) += nested[k].row(subgroups.group_of(k, static_cast<index_t>(i)));
        return b;
    }

    /// Q^k expanded to n_k rows.
    Matrix expanded_nested(std::size_t k) const {
        Matrix q(latent.at(k).rows(), static_cast<Eigen::Index>(rank));
        for (Eigen::Index i = 0; i < q.rows(); ++i) q.row(i) = nested[k].row(subgroups.group_of(k, static_cast<index_t>(i)));
        return q;
    }

    /// Throws if shapes are inconsistent or a cold subject has a nonzero
    /// latent row.
    void validate() const {
        const std::size_t d = order();
        if (nested.size() != d || cold.size() != d || subgroups.order() != d)
            throw DataError("model: inconsistent mode count");
        for (std::size_t k = 0; k < d; ++k) {
            if (static_cast<std::size_t>(latent[k].cols()) != rank || static_cast<std::size_t>(nested[k].cols()) != rank)
                throw DataError("model: factor column count differs from rank");
            if (subgroups.subjects(k) != dim(k) || cold[k].size() != dim(k))
                throw DataError("model: subject count mismatch in mode " + std::to_string(k + 1));
            if (static_cast<std::size_t>(nested[k].rows()) != subgroups.groups(k))
                throw DataError("model: nested row count differs from subgroup count");
            for (std::size_t i = 0; i < dim(k); ++i)
                if (cold[k][i] && !latent[k].row(static_cast<Eigen::Index>(i)).isZero(0.0))
                    throw DataError("model: cold subject with nonzero latent row");
        }
    }

    double predict(std::span<const index_t> idx) const {
        if (idx.size() != order()) throw std::out_of_range("index tuple length differs from model order");
        for (std::size_t k = 0; k < order(); ++k)
            if (idx[k] >= dim(k)) throw std::out_of_range("index out of range in mode " + std::to_string(k + 1));
        double sum = 0.0;
        for (std::size_t j = 0; j < rank; ++j) {
            double prod = 1.0;
            for (std::size_t k = 0; k < order(); ++k) {
                const auto jj = static_cast<Eigen::Index>(j);
                prod *= latent[k](idx[k], jj) + nested[k](subgroups.group_of(k, idx[k]), jj);
            }
            sum += prod;
        }
        return sum;
    }

    double predict(std::initializer_list<index_t> idx) const {
        return predict(std::span<const index_t>(idx.begin(), idx.size()));
    }
};

inline double predict_entry(const FactorModel& model, std::span<const index_t> idx) { return model.predict(idx); }

/// ||P||_F^2 + sum over modes and subgroups of ||q_u||^2 (each nested row
/// counted once).
inline double penalty_norm(const FactorModel& model) {
    double s = 0.0;
    for (const auto& p : model.latent) s += p.squaredNorm();
    for (const auto& q : model.nested) s += q.squaredNorm();
    return s;
}

/// Sum of squared residuals over the tensor's entries.
inline double residual_sum_of_squares(const FactorModel& model, const SparseTensor& t) {
    double s = 0.0;
    for (std::size_t e = 0; e < t.nnz(); ++e) {
        const double r = t.value(e) - model.predict(t.index(e));
        s += r * r;
    }
    return s;
}

/// Penalized least-squares criterion. The nested penalty weights each
/// member's copy of q_u by lambda/|I_u|, which equals lambda on the unique
/// row.
inline double penalized_loss(const FactorModel& model, const SparseTensor& t, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("lambda must be non-negative");
    if (t.order() != model.order()) throw DataError("tensor order differs from model order");
    return residual_sum_of_squares(model, t) + lambda * penalty_norm(model);
}

/// Reorders columns of every P^k and q^k with one common permutation.
/// order[j] is the old column placed at position j.
inline FactorModel permute_columns(const FactorModel& model, std::span<const std::size_t> order) {
    FactorModel out = model;
    for (std::size_t k = 0; k < model.order(); ++k)
        for (std::size_t j = 0; j < model.rank; ++j) {
            out.latent[k].col(static_cast<Eigen::Index>(j)) = model.latent[k].col(static_cast<Eigen::Index>(order[j]));
            out.nested[k].col(static_cast<Eigen::Index>(j)) = model.nested[k].col(static_cast<Eigen::Index>(order[j]));
        }
    return out;
}

/// Column energies sum_k ||p^k_.j + q^k_.j||^2.
inline Eigen::VectorXd column_energy(const FactorModel& model) {
    Eigen::VectorXd energy = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.rank));
    for (std::size_t k = 0; k < model.order(); ++k) energy += model.effective(k).colwise().squaredNorm().transpose();
    return energy;
}

/// Sorts columns by non-increasing energy; ties keep the original order.
inline FactorModel rearrange_columns(const FactorModel& model) {
    const Eigen::VectorXd energy = column_energy(model);
    std::vector<std::size_t> order(model.rank);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return energy(static_cast<Eigen::Index>(a)) > energy(static_cast<Eigen::Index>(b));
    });
    return permute_columns(model, order);
}

// ---------------------------------------------------------------------------
// Elementary indeterminacies

/// b^k_.j -> gamma^k_j b^k_.j with prod_k gamma^k_j = 1 for every j.
struct ScalingTransform {
    std::vector<Eigen::VectorXd> gamma;
};

/// Same column permutation on every mode; order[j] is the old column moved
/// to position j.
struct PermutationTransform {
    std::vector<std::size_t> order;
};

/// P^k -> P^k + Delta^k, Q^k -> Q^k - Delta^k. Delta^k (n_k x r) must be
/// constant within each subgroup so the nested rows stay shared.
struct AdditionTransform {
    std::vector<Matrix> delta;
};

using IndeterminacyTransform = std::variant<ScalingTransform, PermutationTransform, AdditionTransform>;

inline FactorModel apply_indeterminacy(const FactorModel& model, const ScalingTransform& t) {
    if (t.gamma.size() != model.order()) throw std::invalid_argument("scaling: one diagonal per mode required");
    Eigen::VectorXd prod = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(model.rank));
    for (const auto& g : t.gamma) {
        if (static_cast<std::size_t>(g.size()) != model.rank) throw std::invalid_argument("scaling: diagonal length differs from rank");
        prod = prod.cwiseProduct(g);
    }
    if (((prod.array() - 1.0).abs() > 1e-9).any())
        throw std::invalid_argument("scaling: per-column product of diagonals must equal 1");
    FactorModel out = model;
    for (std::size_t k = 0; k < model.order(); ++k) {
        out.latent[k] = model.latent[k] * t.gamma[k].asDiagonal();
        out.nested[k] = model.nested[k] * t.gamma[k].asDiagonal();
    }
    return out;
}

inline FactorModel apply_indeterminacy(const FactorModel& model, const PermutationTransform& t) {
    if (t.order.size() != model.rank) throw std::invalid_argument("permutation: length differs from rank");
    std::vector<bool> hit(model.rank, false);
    for (std::size_t j : t.order) {
        if (j >= model.rank || hit[j]) throw std::invalid_argument("permutation: not a permutation of columns");
        hit[j] = true;
    }
    return permute_columns(model, t.order);
}

inline FactorModel apply_indeterminacy(const FactorModel& model, const AdditionTransform& t) {
    if (t.delta.size() != model.order()) throw std::invalid_argument("addition: one offset matrix per mode required");
    FactorModel out = model;
    for (std::size_t k = 0; k < model.order(); ++k) {
        const Matrix& delta = t.delta[k];
        if (static_cast<std::size_t>(delta.rows()) != model.dim(k) || static_cast<std::size_t>(delta.cols()) != model.rank)
            throw std::invalid_argument("addition: offset shape mismatch in mode " + std::to_string(k + 1));
        for (std::size_t u = 0; u < model.subgroups.groups(k); ++u) {
            auto members = model.subgroups.members(k, static_cast<index_t>(u));
            if (members.empty()) continue;
            const auto ref = delta.row(members.front());
            for (index_t i : members)
                if (delta.row(i) != ref)
                    throw std::invalid_argument("addition: offsets must be constant within each subgroup");
            out.nested[k].row(static_cast<Eigen::Index>(u)) -= ref;
        }
        out.latent[k] += delta;
        for (std::size_t i = 0; i < model.dim(k); ++i)
            if (!out.latent[k].row(static_cast<Eigen::Index>(i)).isZero(0.0)) out.cold[k][i] = 0;
    }
    return out;
}

inline FactorModel apply_indeterminacy(const FactorModel& model, const IndeterminacyTransform& t) {
    return std::visit([&](const auto& x) { return apply_indeterminacy(model, x); }, t);
}

}  // namespace nestedcp
