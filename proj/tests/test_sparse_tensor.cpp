#include <gtest/gtest.h>

#include <numeric>
#include <random>
#include <set>

#include "nestedcp/sparse_tensor.hpp"
#include "oracles.hpp"

using namespace nestedcp;

namespace {

SparseTensor small_tensor() {
    // {(1,1,1)->5, (1,2,1)->3, (2,1,1)->7} in 1-based terms
    return SparseTensor({3, 2, 1}, {0, 0, 0, 0, 1, 0, 1, 0, 0}, {5.0, 3.0, 7.0});
}

}  // namespace

TEST(SparseTensor, RejectsOutOfBoundsAndDuplicates) {
    EXPECT_THROW(SparseTensor({2, 2}, {0, 2}, {1.0}), DataError);
    EXPECT_THROW(SparseTensor({2, 2}, {0, 1, 0, 1}, {1.0, 2.0}), DataError);
    EXPECT_THROW(SparseTensor({2}, {0}, {1.0}), DataError);
    EXPECT_NO_THROW(SparseTensor({2, 2}, {0, 1, 1, 0}, {1.0, 2.0}));
}

TEST(SparseTensor, ModeObservationsOfSubject) {
    const auto t = small_tensor();
    EXPECT_EQ(mode_observations(t, 0, 0).size(), 2u);
    EXPECT_EQ(mode_observations(t, 1, 0).size(), 2u);
    EXPECT_EQ(mode_observations(t, 2, 0).size(), 3u);
    for (std::size_t e : mode_observations(t, 0, 0).entries) EXPECT_EQ(t.index(e)[0], 0u);
}

TEST(SparseTensor, ColdSubjectHasEmptySet) {
    const auto t = small_tensor();
    EXPECT_TRUE(mode_observations(t, 0, 2).empty());
}

TEST(SparseTensor, ModeObservationsRangeChecks) {
    const auto t = small_tensor();
    EXPECT_THROW(mode_observations(t, 3, 0), std::out_of_range);
    EXPECT_THROW(mode_observations(t, 0, 3), std::out_of_range);
}

TEST(SparseTensor, ObservationSetsPartitionEntriesInEveryMode) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const auto t = oracle::random_tensor({5, 4, 3}, 50, rng);
        for (std::size_t k = 0; k < t.order(); ++k) {
            std::vector<int> hits(t.nnz(), 0);
            for (std::size_t i = 0; i < t.dim(k); ++i) {
                const auto obs = mode_observations(t, k, static_cast<index_t>(i));
                const auto scan = oracle::scan_entries(t, k, static_cast<index_t>(i));
                ASSERT_EQ(std::vector<std::size_t>(obs.entries.begin(), obs.entries.end()), scan);
                for (std::size_t e : obs.entries) ++hits[e];
            }
            for (int h : hits) EXPECT_EQ(h, 1);
        }
    }
}

TEST(Standardize, TwoPointCategory) {
    SparseTensor t({1, 2}, {0, 0, 0, 1}, {1.0, 3.0});
    auto [out, info] = standardize_by_group(t, 1, {7, 7});
    EXPECT_NEAR(out.value(0), -std::sqrt(0.5), 1e-15);
    EXPECT_NEAR(out.value(1), std::sqrt(0.5), 1e-15);
    EXPECT_DOUBLE_EQ(info.groups.at(7).mean, 2.0);
    EXPECT_DOUBLE_EQ(info.groups.at(7).sd, std::sqrt(2.0));
}

TEST(Standardize, IdempotentOnStandardizedInput) {
    // category 1: items 1-2, category 2: items 3-4; each already mean 0, sd 1
    const double a = std::sqrt(0.5);
    SparseTensor t({1, 4}, {0, 0, 0, 1, 0, 2, 0, 3}, {-a, a, a, -a});
    auto [out, info] = standardize_by_group(t, 1, {1, 1, 2, 2});
    for (std::size_t e = 0; e < t.nnz(); ++e) EXPECT_NEAR(out.value(e), t.value(e), 1e-12);
    for (const auto& [label, g] : info.groups) {
        EXPECT_NEAR(g.mean, 0.0, 1e-12);
        EXPECT_NEAR(g.sd, 1.0, 1e-12);
    }
}

TEST(Standardize, MomentsAfterTransformAndInverse) {
    std::mt19937_64 rng(5);
    auto base = oracle::random_tensor({6, 9, 2}, 80, rng);
    std::vector<double> v(base.values().begin(), base.values().end());
    CategoryLabels labels(9);
    for (std::size_t i = 0; i < 9; ++i) labels[i] = static_cast<std::int64_t>(i % 3);
    for (std::size_t e = 0; e < v.size(); ++e) v[e] = 40.0 * v[e] + 100.0 * static_cast<double>(*labels[base.index(e)[1]]);
    const auto t = base.with_values(v);

    auto [out, info] = standardize_by_group(t, 1, labels);
    for (std::int64_t c = 0; c < 3; ++c) {
        double sum = 0.0, n = 0.0;
        for (std::size_t e = 0; e < out.nnz(); ++e)
            if (*labels[out.index(e)[1]] == c) sum += out.value(e), n += 1.0;
        const double mean = sum / n;
        double ss = 0.0;
        for (std::size_t e = 0; e < out.nnz(); ++e)
            if (*labels[out.index(e)[1]] == c) ss += (out.value(e) - mean) * (out.value(e) - mean);
        EXPECT_LT(std::abs(mean), 1e-12);
        EXPECT_NEAR(std::sqrt(ss / (n - 1.0)), 1.0, 1e-12);
    }
    const auto back = info.invert(out);
    for (std::size_t e = 0; e < t.nnz(); ++e) EXPECT_NEAR(back.value(e), t.value(e), 1e-12 * std::abs(t.value(e)) + 1e-300);
}

TEST(Standardize, Errors) {
    SparseTensor t({1, 3}, {0, 0, 0, 1, 0, 2}, {1.0, 1.0, 2.0});
    EXPECT_THROW(standardize_by_group(t, 1, {1, 1, 2}), DataError);          // category 2 has one value
    EXPECT_THROW(standardize_by_group(t, 1, {1, 1, std::nullopt}), DataError);  // unlabeled
    SparseTensor flat({1, 2}, {0, 0, 0, 1}, {4.0, 4.0});
    EXPECT_THROW(standardize_by_group(flat, 1, {1, 1}), DataError);           // zero variance
}

TEST(Standardize, TrainingStatisticsApplyToHeldOut) {
    SparseTensor train({1, 2}, {0, 0, 0, 1}, {1.0, 3.0});
    SparseTensor test({2, 2}, {1, 0}, {4.0});
    const auto info = fit_group_scaling(train, 1, {1, 1});
    EXPECT_NEAR(info.apply(test).value(0), 2.0 / std::sqrt(2.0), 1e-15);
}

TEST(Split, ExactSizes) {
    std::mt19937_64 rng(1);
    const auto t = oracle::random_tensor({10, 10, 2}, 100, rng);
    const auto s = split_dataset(t, {0.5, 0.25, 0.25}, 7);
    EXPECT_EQ(s.train.nnz(), 50u);
    EXPECT_EQ(s.validation.nnz(), 25u);
    EXPECT_EQ(s.test.nnz(), 25u);
}

TEST(Split, DeterministicForSeed) {
    std::mt19937_64 rng(1);
    const auto t = oracle::random_tensor({10, 10, 2}, 100, rng);
    const auto a = split_dataset(t, {0.5, 0.25, 0.25}, 7);
    const auto b = split_dataset(t, {0.5, 0.25, 0.25}, 7);
    EXPECT_TRUE(std::equal(a.train.coords().begin(), a.train.coords().end(), b.train.coords().begin()));
    EXPECT_TRUE(std::equal(a.test.coords().begin(), a.test.coords().end(), b.test.coords().begin()));
}

TEST(Split, PartitionPropertyForAnyRatiosAndSeed) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t n = 20 + trial * 7;
        const auto t = oracle::random_tensor({9, 8, 7}, n, rng);
        std::uniform_real_distribution<double> u(0.1, 1.0);
        double a = u(rng), b = u(rng), c = u(rng);
        const double s = a + b + c;
        const std::array<double, 3> ratios{a / s, b / s, c / s};
        const auto sp = split_dataset(t, ratios, static_cast<std::uint64_t>(trial));
        std::multiset<std::vector<index_t>> parent, parts;
        for (std::size_t e = 0; e < t.nnz(); ++e) parent.insert({t.index(e).begin(), t.index(e).end()});
        for (const auto* part : {&sp.train, &sp.validation, &sp.test})
            for (std::size_t e = 0; e < part->nnz(); ++e) parts.insert({part->index(e).begin(), part->index(e).end()});
        EXPECT_EQ(parent, parts);
        EXPECT_LE(std::abs(static_cast<double>(sp.train.nnz()) - ratios[0] * n), 1.0);
        EXPECT_LE(std::abs(static_cast<double>(sp.validation.nnz()) - ratios[1] * n), 1.0);
        EXPECT_LE(std::abs(static_cast<double>(sp.test.nnz()) - ratios[2] * n), 1.0);
    }
}

TEST(Split, OddCountWithinOneEntry) {
    std::mt19937_64 rng(2);
    const auto t = oracle::random_tensor({10, 11, 2}, 101, rng);
    const auto s = split_dataset(t, {0.5, 0.25, 0.25}, 7);
    EXPECT_LE(std::abs(static_cast<double>(s.train.nnz()) - 50.5), 1.0);
    EXPECT_LE(std::abs(static_cast<double>(s.validation.nnz()) - 25.25), 1.0);
    EXPECT_LE(std::abs(static_cast<double>(s.test.nnz()) - 25.25), 1.0);
    EXPECT_EQ(s.train.nnz() + s.validation.nnz() + s.test.nnz(), 101u);
}

TEST(Split, Errors) {
    std::mt19937_64 rng(2);
    const auto t = oracle::random_tensor({3, 3}, 3, rng);
    EXPECT_THROW(split_dataset(t, {0.5, 0.5, 0.0}, 1), std::invalid_argument);
    EXPECT_THROW(split_dataset(t, {0.5, 0.3, 0.3}, 1), std::invalid_argument);
    EXPECT_THROW(split_dataset(t, {0.8, 0.1, 0.1}, 1), std::invalid_argument);  // validation rounds to 0
}
