#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "nestedcp/error.hpp"
#include "nestedcp/factor_model.hpp"
#include "nestedcp/sparse_tensor.hpp"
#include "nestedcp/subgroups.hpp"

namespace nestedcp {

/// Model used to generate a synthetic tensor. Observed values are
/// truth.predict(idx) / divisor + N(0, noise_sd^2).
struct GroundTruth {
    FactorModel model;
    double divisor = 1.0;
    double noise_sd = 1.0;

    double signal(std::span<const index_t> idx) const { return model.predict(idx) / divisor; }
};

struct SimulatedData {
    SparseTensor tensor;
    SubgroupMap groups;
    GroundTruth truth;
};

/// Generic generator: subjects evenly assigned to subgroups, latent rows iid
/// N(0, I_r), nested row u of mode k equal to nested_level[k][u] * 1_r.
struct SimulationDesign {
    std::vector<std::size_t> dims;
    std::vector<std::size_t> groups;
    std::vector<std::vector<double>> nested_level;
    std::size_t rank = 3;
    double divisor = 1.0;
    double pi0 = 0.8;  ///< missing fraction of the full grid
    double noise_sd = 1.0;
    std::uint64_t seed = 0;

    std::size_t total_cells() const {
        std::size_t c = 1;
        for (auto n : dims) c *= n;
        return c;
    }

    /// Number of observed cells, N = prod(n_k) * (1 - pi0), rounded.
    std::size_t observed_cells() const {
        return static_cast<std::size_t>(std::llround(static_cast<double>(total_cells()) * (1.0 - pi0)));
    }

    void validate() const {
        if (dims.size() < 2) throw std::invalid_argument("simulation: order must be at least 2");
        if (groups.size() != dims.size() || nested_level.size() != dims.size())
            throw std::invalid_argument("simulation: one subgroup count and nested level list per mode required");
        for (std::size_t k = 0; k < dims.size(); ++k) {
            if (dims[k] == 0 || groups[k] == 0 || groups[k] > dims[k])
                throw std::invalid_argument("simulation: bad dims or subgroup count in mode " + std::to_string(k + 1));
            if (nested_level[k].size() != groups[k])
                throw std::invalid_argument("simulation: nested levels do not match subgroup count");
        }
        if (rank == 0) throw std::invalid_argument("simulation: rank must be at least 1");
        if (!(divisor > 0.0)) throw std::invalid_argument("simulation: divisor must be positive");
        if (!(pi0 >= 0.0 && pi0 < 1.0)) throw std::invalid_argument("simulation: pi0 must lie in [0, 1)");
        if (!(noise_sd >= 0.0)) throw std::invalid_argument("simulation: noise sd must be non-negative");
        if (observed_cells() == 0) throw std::invalid_argument("simulation: no observed cells");
        if (observed_cells() > total_cells()) throw std::invalid_argument("simulation: N exceeds the number of cells");
    }
};

/// Draws the truth model, then N distinct cells uniformly without
/// replacement (sequential selection, so entries come out in row-major
/// order), then one noise draw per cell.
inline SimulatedData simulate(const SimulationDesign& design) {
    design.validate();
    const std::size_t d = design.dims.size();
    std::mt19937_64 rng(design.seed);
    std::normal_distribution<double> normal(0.0, 1.0);

    SubgroupMap groups = SubgroupMap::even(design.dims, design.groups);
    FactorModel truth(design.dims, design.rank, groups);
    for (std::size_t k = 0; k < d; ++k) {
        Matrix& p = truth.latent[k];
        for (Eigen::Index i = 0; i < p.rows(); ++i)
            for (Eigen::Index j = 0; j < p.cols(); ++j) p(i, j) = normal(rng);
        for (std::size_t u = 0; u < design.groups[k]; ++u)
            truth.nested[k].row(static_cast<Eigen::Index>(u)).setConstant(design.nested_level[k][u]);
    }

    const std::size_t total = design.total_cells();
    const std::size_t want = design.observed_cells();
    std::vector<index_t> coords;
    coords.reserve(want * d);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<index_t> idx(d, 0);
    std::size_t chosen = 0;
    for (std::size_t cell = 0; cell < total && chosen < want; ++cell) {
        if (static_cast<double>(total - cell) * unif(rng) < static_cast<double>(want - chosen)) {
            coords.insert(coords.end(), idx.begin(), idx.end());
            ++chosen;
        }
        for (std::size_t k = d; k-- > 0;) {
            if (++idx[k] < design.dims[k]) break;
            idx[k] = 0;
        }
    }

    std::vector<double> values(want);
    GroundTruth gt{std::move(truth), design.divisor, design.noise_sd};
    for (std::size_t e = 0; e < want; ++e) {
        const std::span<const index_t> cell(coords.data() + e * d, d);
        values[e] = gt.signal(cell) + design.noise_sd * normal(rng);
    }
    SparseTensor tensor(design.dims, std::move(coords), std::move(values));
    return {std::move(tensor), std::move(groups), std::move(gt)};
}

/// Third-order design with a cold-start sweep over items.
struct Sim1Params {
    std::size_t n1 = 400, n2 = 1100, n3 = 9;
    std::size_t m1 = 10, m2 = 11, m3 = 3;
    std::size_t rank = 3;
    double pi0 = 0.80;
    double phi_cs = 0.30;
    double noise_sd = 1.0;
    std::uint64_t seed = 0;
};

/// Fourth-order design: users, items and two binary-subgrouped contexts.
struct Sim2Params {
    std::size_t n = 500;  ///< users and items
    std::size_t contexts = 4;
    std::size_t user_groups = 10, context_groups = 2;
    std::size_t rank = 3;
    double pi0 = 0.95;
    double phi_cs = 0.30;
    double noise_sd = 1.0;
    std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<double> linear_levels(std::size_t m, double offset, double step) {
    std::vector<double> out(m);
    for (std::size_t u = 0; u < m; ++u) out[u] = offset + step * static_cast<double>(u + 1);
    return out;
}

}  // namespace detail

inline SimulationDesign simulation1_design(const Sim1Params& p) {
    SimulationDesign d;
    d.dims = {p.n1, p.n2, p.n3};
    d.groups = {p.m1, p.m2, p.m3};
    d.nested_level = {detail::linear_levels(p.m1, -5.5, 1.0), detail::linear_levels(p.m2, -3.6, 0.6),
                      detail::linear_levels(p.m3, -4.0, 2.0)};
    d.rank = p.rank;
    d.divisor = 3.0;
    d.pi0 = p.pi0;
    d.noise_sd = p.noise_sd;
    d.seed = p.seed;
    return d;
}

inline SimulationDesign simulation2_design(const Sim2Params& p) {
    if (p.context_groups != 2) throw std::invalid_argument("simulation 2: contexts use two subgroups");
    SimulationDesign d;
    d.dims = {p.n, p.n, p.contexts, p.contexts};
    d.groups = {p.user_groups, p.user_groups, p.context_groups, p.context_groups};
    const auto users = detail::linear_levels(p.user_groups, -5.5, 1.0);
    d.nested_level = {users, users, {-0.25, 0.25}, {-0.25, 0.25}};
    d.rank = p.rank;
    d.divisor = 4.0;
    d.pi0 = p.pi0;
    d.noise_sd = p.noise_sd;
    d.seed = p.seed;
    return d;
}

inline SimulatedData generate_simulation1(const Sim1Params& p) { return simulate(simulation1_design(p)); }
inline SimulatedData generate_simulation2(const Sim2Params& p) { return simulate(simulation2_design(p)); }

/// Store x product x promotion sales-like tensor: products belong to
/// categories with their own scale and offset, so raw values need
/// per-category standardization before fitting.
struct IriLikeParams {
    std::size_t stores = 2447, products = 1000, weeks = 30;
    std::size_t store_groups = 9, categories = 31, week_groups = 2;
    std::size_t rank = 3;
    double density = 0.01;
    double noise_sd = 2.5;
    std::uint64_t seed = 0;
};

struct IriLikeData {
    SimulatedData data;             ///< raw (category-scaled) values
    CategoryLabels product_category;  ///< category label per product
};

inline IriLikeData generate_iri_like(const IriLikeParams& p) {
    SimulationDesign d;
    d.dims = {p.stores, p.products, p.weeks};
    d.groups = {p.store_groups, p.categories, p.week_groups};
    std::mt19937_64 level_rng(p.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> level(0.0, 1.0);
    d.nested_level.resize(3);
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t u = 0; u < d.groups[k]; ++u) d.nested_level[k].push_back(level(level_rng));
    d.rank = p.rank;
    d.divisor = 1.0;
    d.pi0 = 1.0 - p.density;
    d.noise_sd = p.noise_sd;
    d.seed = p.seed;
    SimulatedData sim = simulate(d);

    std::vector<double> scale(p.categories), offset(p.categories);
    std::uniform_real_distribution<double> s(1.0, 50.0), o(10.0, 500.0);
    for (std::size_t c = 0; c < p.categories; ++c) {
        scale[c] = s(level_rng);
        offset[c] = o(level_rng);
    }
    CategoryLabels labels(p.products);
    for (std::size_t i = 0; i < p.products; ++i)
        labels[i] = static_cast<std::int64_t>(sim.groups.group_of(1, static_cast<index_t>(i)) + 1);
    std::vector<double> raw(sim.tensor.values().begin(), sim.tensor.values().end());
    for (std::size_t e = 0; e < raw.size(); ++e) {
        const auto c = sim.groups.group_of(1, sim.tensor.index(e)[1]);
        raw[e] = offset[c] + scale[c] * raw[e];
    }
    sim.tensor = sim.tensor.with_values(std::move(raw));
    return {std::move(sim), std::move(labels)};
}

// ---------------------------------------------------------------------------
// Cold start

/// Fraction of test entries whose item has no training entry.
inline double cold_fraction(const DatasetSplit& split, std::size_t item_mode = 1) {
    if (split.test.empty()) return 0.0;
    std::size_t cold = 0;
    for (std::size_t e = 0; e < split.test.nnz(); ++e)
        if (split.train.count(item_mode, split.test.index(e)[item_mode]) == 0) ++cold;
    return static_cast<double>(cold) / static_cast<double>(split.test.nnz());
}

/// Removes every training entry of a randomly chosen item set so that about
/// phi of the test entries reference items absent from training (within one
/// percentage point). Validation entries are kept, so validation may touch
/// cold items as well.
inline DatasetSplit inject_cold_start(const DatasetSplit& split, double phi, std::uint64_t seed, std::size_t item_mode = 1) {
    if (!(phi >= 0.0 && phi <= 1.0)) throw std::invalid_argument("cold-start fraction must lie in [0, 1]");
    if (item_mode >= split.train.order()) throw std::invalid_argument("cold-start item mode out of range");
    if (phi == 0.0) return split;
    if (split.test.empty()) throw DataError("cold start: empty test set");

    const std::size_t n_items = split.train.dim(item_mode);
    const double total = static_cast<double>(split.test.nnz());
    std::vector<std::size_t> test_count(n_items, 0);
    for (std::size_t e = 0; e < split.test.nnz(); ++e) ++test_count[split.test.index(e)[item_mode]];

    std::vector<std::uint8_t> excluded(n_items, 0);
    double cold = 0.0;
    for (std::size_t i = 0; i < n_items; ++i)
        if (split.train.count(item_mode, static_cast<index_t>(i)) == 0) cold += static_cast<double>(test_count[i]);

    const double target = phi * total;
    const double ceiling = target + 0.005 * total;
    std::vector<std::size_t> order(n_items);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
        if (cold >= target) break;
        if (test_count[i] == 0 || split.train.count(item_mode, static_cast<index_t>(i)) == 0) continue;
        if (cold + static_cast<double>(test_count[i]) > ceiling) continue;
        excluded[i] = 1;
        cold += static_cast<double>(test_count[i]);
    }
    if (std::abs(cold / total - phi) > 0.01)
        throw DataError("cold start: cannot reach fraction " + std::to_string(phi) + " (reached " +
                        std::to_string(cold / total) + ")");

    std::vector<std::size_t> keep;
    keep.reserve(split.train.nnz());
    for (std::size_t e = 0; e < split.train.nnz(); ++e)
        if (!excluded[split.train.index(e)[item_mode]]) keep.push_back(e);
    DatasetSplit out{split.train.subset(keep), split.validation, split.test, split.seed};
    return out;
}

}  // namespace nestedcp
