#include <gtest/gtest.h>

#include <random>

#include "nestedcp/factor_model.hpp"
#include "oracles.hpp"

using namespace nestedcp;

namespace {

FactorModel rank_one_234() {
    const std::vector<std::size_t> dims{2, 2, 2};
    FactorModel m(dims, 1, SubgroupMap::single(dims));
    // b rows (2), (3), (4) at index (1,1,1), split between latent and nested
    m.latent[0](0, 0) = 1.5;
    m.nested[0](0, 0) = 0.5;
    m.latent[1](0, 0) = 3.0;
    m.nested[2](0, 0) = 4.0;
    return m;
}

}  // namespace

TEST(Predict, ZeroModel) {
    const std::vector<std::size_t> dims{3, 4, 2};
    const FactorModel m(dims, 2, SubgroupMap::single(dims));
    EXPECT_EQ(m.predict({2, 3, 1}), 0.0);
    EXPECT_EQ(m.predict({0, 0, 0}), 0.0);
}

TEST(Predict, SingleProductTerm) { EXPECT_DOUBLE_EQ(rank_one_234().predict({0, 0, 0}), 24.0); }

TEST(Predict, MatchesDirectSummationOracle) {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const auto m = oracle::random_model({4, 5, 3}, {2, 2, 1}, 2, rng);
        for (int s = 0; s < 20; ++s) {
            const auto idx = oracle::random_index({4, 5, 3}, rng);
            EXPECT_NEAR(predict_entry(m, idx), oracle::predict(m, idx), 1e-12);
        }
    }
}

TEST(Predict, ColdSubjectUsesNestedRow) {
    std::mt19937_64 rng(4);
    auto m = oracle::random_model({4, 4, 2}, {2, 2, 1}, 2, rng);
    m.latent[1].row(3).setZero();
    m.cold[1][3] = 1;
    m.validate();
    FactorModel structural = m;
    structural.latent[1].row(3) = Eigen::RowVectorXd::Zero(2);
    const std::vector<index_t> idx{1, 3, 0};
    EXPECT_EQ(m.predict(idx), structural.predict(idx));
    EXPECT_NE(m.predict(idx), 0.0);
}

TEST(Predict, OutOfRange) {
    const auto m = rank_one_234();
    EXPECT_THROW(m.predict({2, 0, 0}), std::out_of_range);
    EXPECT_THROW(m.predict({0, 0}), std::out_of_range);
}

TEST(Loss, PerfectFitNoPenalty) {
    const auto m = rank_one_234();
    SparseTensor t({2, 2, 2}, {0, 0, 0, 1, 1, 1}, {24.0, 0.0});
    EXPECT_DOUBLE_EQ(penalized_loss(m, t, 0.0), 0.0);
}

TEST(Loss, PenaltyOnly) {
    const std::vector<std::size_t> dims{2, 2};
    FactorModel m(dims, 2, SubgroupMap::single(dims));
    m.latent[0].row(0) << 1.0, 1.0;
    SparseTensor empty(dims, {}, {});
    EXPECT_DOUBLE_EQ(penalized_loss(m, empty, 2.0), 4.0);
    EXPECT_THROW(penalized_loss(m, empty, -1.0), std::invalid_argument);
}

TEST(Loss, MatchesNaiveOracle) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        const auto m = oracle::random_model({5, 4, 3}, {2, 2, 3}, 3, rng);
        const auto t = oracle::random_tensor({5, 4, 3}, 30, rng);
        const double lam = 0.5 + trial;
        EXPECT_NEAR(penalized_loss(m, t, lam), oracle::loss(m, t, lam), 1e-10 * oracle::loss(m, t, lam));
    }
}

TEST(Loss, NonNegativeAndZeroOnlyAtZero) {
    std::mt19937_64 rng(10);
    const auto t = oracle::random_tensor({4, 4, 2}, 10, rng);
    const auto m = oracle::random_model({4, 4, 2}, {2, 2, 1}, 2, rng);
    EXPECT_GT(penalized_loss(m, t, 1.0), 0.0);
    const FactorModel zero({4, 4, 2}, 2, m.subgroups);
    SparseTensor zeros = t.with_values(std::vector<double>(t.nnz(), 0.0));
    EXPECT_EQ(penalized_loss(zero, zeros, 1.0), 0.0);
}

TEST(Rearrange, SwapsTwoColumns) {
    const std::vector<std::size_t> dims{1, 1};
    FactorModel m(dims, 2, SubgroupMap::single(dims));
    // column energies: col 0 = 1 + 4 = 5, col 1 = 9 + 0 = 9
    m.latent[0](0, 0) = 1.0;
    m.latent[1](0, 0) = 2.0;
    m.latent[0](0, 1) = 3.0;
    const auto out = rearrange_columns(m);
    const auto energy = column_energy(out);
    EXPECT_DOUBLE_EQ(energy(0), 9.0);
    EXPECT_DOUBLE_EQ(energy(1), 5.0);
    EXPECT_DOUBLE_EQ(out.latent[0](0, 0), 3.0);
}

TEST(Rearrange, SortedModelUnchanged) {
    std::mt19937_64 rng(3);
    const auto m = rearrange_columns(oracle::random_model({4, 3, 2}, {2, 1, 1}, 3, rng));
    const auto again = rearrange_columns(m);
    for (std::size_t k = 0; k < m.order(); ++k) {
        EXPECT_EQ(again.latent[k], m.latent[k]);
        EXPECT_EQ(again.nested[k], m.nested[k]);
    }
}

TEST(Rearrange, PreservesPredictionsAndLoss) {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        const auto m = oracle::random_model({6, 5, 4}, {3, 1, 2}, 3, rng);
        const auto out = rearrange_columns(m);
        const auto energy = column_energy(out);
        for (Eigen::Index j = 1; j < energy.size(); ++j) EXPECT_GE(energy(j - 1), energy(j));
        for (int s = 0; s < 100; ++s) {
            const auto idx = oracle::random_index({6, 5, 4}, rng);
            EXPECT_NEAR(out.predict(idx), oracle::predict(m, idx), 1e-12);
        }
        const auto t = oracle::random_tensor({6, 5, 4}, 40, rng);
        EXPECT_NEAR(penalized_loss(out, t, 3.0), penalized_loss(m, t, 3.0), 1e-12 * penalized_loss(m, t, 3.0));
    }
}

TEST(Indeterminacy, ScalingWithUnitProduct) {
    const auto m = rank_one_234();
    ScalingTransform s{{Eigen::VectorXd::Constant(1, 2.0), Eigen::VectorXd::Constant(1, 0.5), Eigen::VectorXd::Constant(1, 1.0)}};
    const auto out = apply_indeterminacy(m, IndeterminacyTransform{s});
    for (index_t a = 0; a < 2; ++a)
        for (index_t b = 0; b < 2; ++b)
            for (index_t c = 0; c < 2; ++c) EXPECT_NEAR(out.predict({a, b, c}), m.predict({a, b, c}), 1e-10);
    ScalingTransform bad{{Eigen::VectorXd::Constant(1, 2.0), Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, 1.0)}};
    EXPECT_THROW(apply_indeterminacy(m, IndeterminacyTransform{bad}), std::invalid_argument);
}

TEST(Indeterminacy, PermutationSwap) {
    std::mt19937_64 rng(12);
    const auto m = oracle::random_model({4, 3, 2}, {2, 1, 1}, 2, rng);
    const auto out = apply_indeterminacy(m, IndeterminacyTransform{PermutationTransform{{1, 0}}});
    for (int s = 0; s < 50; ++s) {
        const auto idx = oracle::random_index({4, 3, 2}, rng);
        EXPECT_NEAR(out.predict(idx), m.predict(idx), 1e-12);
    }
    EXPECT_THROW(apply_indeterminacy(m, IndeterminacyTransform{PermutationTransform{{0, 0}}}), std::invalid_argument);
}

TEST(Indeterminacy, SubgroupConstantAddition) {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> n(0.0, 1.0);
    const auto m = oracle::random_model({6, 4, 3}, {3, 2, 1}, 2, rng);
    AdditionTransform add;
    for (std::size_t k = 0; k < m.order(); ++k) {
        Matrix per_group(static_cast<Eigen::Index>(m.subgroups.groups(k)), 2);
        for (Eigen::Index i = 0; i < per_group.size(); ++i) per_group.data()[i] = n(rng);
        Matrix delta(static_cast<Eigen::Index>(m.dim(k)), 2);
        for (std::size_t i = 0; i < m.dim(k); ++i)
            delta.row(static_cast<Eigen::Index>(i)) = per_group.row(m.subgroups.group_of(k, static_cast<index_t>(i)));
        add.delta.push_back(delta);
    }
    const auto out = apply_indeterminacy(m, IndeterminacyTransform{add});
    for (int s = 0; s < 100; ++s) {
        const auto idx = oracle::random_index({6, 4, 3}, rng);
        EXPECT_NEAR(out.predict(idx), oracle::predict(m, idx), 1e-10);
    }
    add.delta[0](0, 0) += 1.0;  // no longer constant within subgroup 1
    EXPECT_THROW(apply_indeterminacy(m, IndeterminacyTransform{add}), std::invalid_argument);
}

TEST(FactorModel, ExpandedNestedHasAtMostGroupCountDistinctRows) {
    std::mt19937_64 rng(14);
    const auto m = oracle::random_model({9, 7, 4}, {3, 2, 4}, 2, rng);
    for (std::size_t k = 0; k < m.order(); ++k) {
        const Matrix q = m.expanded_nested(k);
        std::vector<std::vector<double>> distinct;
        for (Eigen::Index i = 0; i < q.rows(); ++i) {
            std::vector<double> row(q.row(i).data(), q.row(i).data() + q.cols());
            if (std::find(distinct.begin(), distinct.end(), row) == distinct.end()) distinct.push_back(row);
        }
        EXPECT_LE(distinct.size(), m.subgroups.groups(k));
    }
}

TEST(FactorModel, ValidateRejectsNonzeroColdRow) {
    std::mt19937_64 rng(15);
    auto m = oracle::random_model({3, 3}, {1, 1}, 1, rng);
    m.cold[0][1] = 1;
    EXPECT_THROW(m.validate(), DataError);
}
