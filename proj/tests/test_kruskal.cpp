#include <gtest/gtest.h>

#include <random>

#include "nestedcp/kruskal.hpp"
#include "oracles.hpp"

using namespace nestedcp;

TEST(KruskalRank, Identity) { EXPECT_EQ(kruskal_rank(Eigen::MatrixXd::Identity(3, 3)), 3u); }

TEST(KruskalRank, DuplicateColumns) {
    Eigen::MatrixXd a(3, 3);
    a << 1, 1, 0,
         2, 2, 1,
         3, 3, 0;
    EXPECT_EQ(kruskal_rank(a), 1u);
}

TEST(KruskalRank, ZeroColumn) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(3, 3);
    a.col(1).setZero();
    EXPECT_EQ(kruskal_rank(a), 0u);
}

TEST(KruskalRank, MoreColumnsThanRows) {
    Eigen::MatrixXd a(2, 3);
    a << 1, 0, 1,
         0, 1, 1;
    EXPECT_EQ(kruskal_rank(a), 2u);
}

TEST(KruskalRank, ThreeDependentButPairsIndependent) {
    Eigen::MatrixXd a(3, 3);
    a << 1, 0, 1,
         0, 1, 1,
         0, 0, 0;
    EXPECT_EQ(kruskal_rank(a), 2u);
    EXPECT_EQ(oracle::kruskal_rank(a), 2u);
}

TEST(KruskalRank, RandomMatchesExhaustiveOracle) {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        Eigen::MatrixXd a(6, 4);
        for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = n(rng);
        EXPECT_EQ(kruskal_rank(a), 4u);
        EXPECT_EQ(oracle::kruskal_rank(a), 4u);
        // plant a dependency among columns 0, 1, 2
        a.col(2) = a.col(0) - 2.0 * a.col(1);
        EXPECT_EQ(kruskal_rank(a), oracle::kruskal_rank(a));
        EXPECT_EQ(kruskal_rank(a), 2u);
    }
}

TEST(KruskalRank, Errors) {
    EXPECT_THROW(kruskal_rank(Eigen::MatrixXd(0, 0)), std::invalid_argument);
    EXPECT_THROW(kruskal_rank(Eigen::MatrixXd::Identity(13, 13)), std::invalid_argument);
}

TEST(Identifiability, GenericRankThree) {
    std::mt19937_64 rng(19);
    const auto m = oracle::random_model({8, 7, 6}, {2, 2, 2}, 3, rng);
    const auto rep = identifiability_check(m);
    EXPECT_EQ(rep.k_ranks, (std::vector<std::size_t>{3, 3, 3}));
    EXPECT_EQ(rep.required, 8u);
    EXPECT_TRUE(rep.identifiable);
}

TEST(Identifiability, RankOneFailsCondition) {
    std::mt19937_64 rng(20);
    const auto m = oracle::random_model({4, 4, 4}, {1, 1, 1}, 1, rng);
    const auto rep = identifiability_check(m);
    EXPECT_EQ(rep.k_rank_sum, 3u);
    EXPECT_EQ(rep.required, 4u);
    EXPECT_FALSE(rep.identifiable);
}

TEST(Identifiability, ZeroColumnFails) {
    std::mt19937_64 rng(22);
    auto m = oracle::random_model({5, 5, 5}, {1, 1, 1}, 3, rng);
    m.latent[0].col(1).setZero();
    m.nested[0].col(1).setZero();
    const auto rep = identifiability_check(m);
    EXPECT_EQ(rep.k_ranks[0], 0u);
    EXPECT_FALSE(rep.identifiable);
}
