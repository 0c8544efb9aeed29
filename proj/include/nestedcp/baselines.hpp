#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "nestedcp/error.hpp"
#include "nestedcp/factor_model.hpp"
#include "nestedcp/parallel.hpp"
#include "nestedcp/solver.hpp"
#include "nestedcp/sparse_tensor.hpp"
#include "nestedcp/subgroups.hpp"

namespace nestedcp {

enum class Method { REM, CPD, GCPD, MF, GMI };

inline std::string method_name(Method m) {
    switch (m) {
        case Method::REM: return "REM";
        case Method::CPD: return "CPD";
        case Method::GCPD: return "GCPD";
        case Method::MF: return "MF";
        case Method::GMI: return "GMI";
    }
    return "?";
}

/// Case-insensitive lookup of a method name.
inline std::optional<Method> parse_method(std::string_view s) {
    std::string up(s);
    for (auto& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    for (Method m : {Method::REM, Method::CPD, Method::GCPD, Method::MF, Method::GMI})
        if (method_name(m) == up) return m;
    return std::nullopt;
}

/// Penalized CP without the nested layer: the MBI solver over latent blocks
/// only, with every nested row frozen at zero.
inline FitResult fit_cpd(const SparseTensor& t, const FitConfig& cfg) {
    FitConfig c = cfg;
    c.fit_nested = false;
    return fit_rem(t, SubgroupMap::single(t.dims()), c);
}

// ---------------------------------------------------------------------------
// Groupwise CPD

enum class GcpdCells {
    CrossProduct,   ///< one cell per combination of per-mode subgroups
    FirstModeOnly,  ///< one cell per subgroup of the first mode
};

/// Independent CP models on the cells of a subgroup partition. Each cell
/// model uses local subject indices (position within the subgroup's member
/// list for sliced modes).
struct GcpdModel {
    SubgroupMap groups;
    GcpdCells cells = GcpdCells::CrossProduct;
    std::vector<std::optional<FactorModel>> cell_models;
    double grand_mean = 0.0;

    std::size_t order() const noexcept { return groups.order(); }
    bool sliced(std::size_t k) const noexcept { return cells == GcpdCells::CrossProduct || k == 0; }

    std::size_t cell_count() const {
        std::size_t c = 1;
        for (std::size_t k = 0; k < order(); ++k)
            if (sliced(k)) c *= groups.groups(k);
        return c;
    }

    /// Mixed-radix ordinal of the cell holding idx, first mode most
    /// significant.
    std::size_t cell_of(std::span<const index_t> idx) const {
        std::size_t c = 0;
        for (std::size_t k = 0; k < order(); ++k)
            if (sliced(k)) c = c * groups.groups(k) + groups.group_of(k, idx[k]);
        return c;
    }

    /// Local index of subject i of mode k inside its cell.
    index_t local_index(std::size_t k, index_t i) const {
        if (!sliced(k)) return i;
        const auto members = groups.members(k, groups.group_of(k, i));
        return static_cast<index_t>(std::lower_bound(members.begin(), members.end(), i) - members.begin());
    }

    std::vector<std::size_t> cell_dims(std::size_t cell) const {
        std::vector<std::size_t> dims(order());
        std::vector<index_t> label(order(), 0);
        for (std::size_t k = order(); k-- > 0;)
            if (sliced(k)) {
                label[k] = static_cast<index_t>(cell % groups.groups(k));
                cell /= groups.groups(k);
            }
        for (std::size_t k = 0; k < order(); ++k)
            dims[k] = sliced(k) ? groups.members(k, label[k]).size() : groups.subjects(k);
        return dims;
    }

    double predict(std::span<const index_t> idx) const {
        if (idx.size() != order()) throw std::out_of_range("index tuple length differs from model order");
        for (std::size_t k = 0; k < order(); ++k)
            if (idx[k] >= groups.subjects(k)) throw std::out_of_range("index out of range in mode " + std::to_string(k + 1));
        const auto& cell = cell_models[cell_of(idx)];
        if (!cell) return grand_mean;
        std::vector<index_t> local(order());
        for (std::size_t k = 0; k < order(); ++k) local[k] = local_index(k, idx[k]);
        return cell->predict(local);
    }
};

struct GcpdCellReport {
    std::size_t cell = 0;
    std::size_t entries = 0;
    std::size_t iterations_used = 0;
    bool converged = false;
    double final_loss = 0.0;
};

struct GcpdFit {
    GcpdModel model;
    std::vector<GcpdCellReport> cells;  ///< fitted (nonempty) cells only
    std::vector<std::string> warnings;
};

/// Splits the training entries by cell and fits a penalized CP per nonempty
/// cell (seed offset by the cell ordinal). Empty cells predict the training
/// grand mean.
inline GcpdFit fit_gcpd(const SparseTensor& t, const SubgroupMap& groups, const FitConfig& cfg,
                        GcpdCells mode = GcpdCells::CrossProduct) {
    cfg.validate();
    if (t.empty()) throw DataError("cannot fit an empty tensor");
    if (!groups.matches(t.dims())) throw DataError("subgroup map does not match tensor dims");

    GcpdFit out;
    out.model.groups = groups;
    out.model.cells = mode;
    out.model.grand_mean = t.mean();
    const std::size_t cells = out.model.cell_count();
    const std::size_t d = t.order();
    out.model.cell_models.resize(cells);

    std::vector<std::vector<index_t>> coords(cells);
    std::vector<std::vector<double>> values(cells);
    std::vector<index_t> local(d);
    for (std::size_t e = 0; e < t.nnz(); ++e) {
        const auto idx = t.index(e);
        const std::size_t c = out.model.cell_of(idx);
        for (std::size_t k = 0; k < d; ++k) local[k] = out.model.local_index(k, idx[k]);
        coords[c].insert(coords[c].end(), local.begin(), local.end());
        values[c].push_back(t.value(e));
    }

    std::vector<std::optional<FitResult>> fits(cells);
    std::vector<std::size_t> entries(cells);
    parallel_for(cells, cfg.threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t c = begin; c < end; ++c) {
            entries[c] = values[c].size();
            if (values[c].empty()) continue;
            SparseTensor cell(out.model.cell_dims(c), std::move(coords[c]), std::move(values[c]));
            FitConfig cc = cfg;
            cc.threads = 1;
            cc.seed = cfg.seed + c;
            fits[c] = fit_cpd(cell, cc);
        }
    });
    std::size_t empty_cells = 0;
    for (std::size_t c = 0; c < cells; ++c) {
        if (!fits[c]) {
            ++empty_cells;
            continue;
        }
        out.cells.push_back({c, entries[c], fits[c]->iterations_used,
                             fits[c]->converged, fits[c]->final_loss()});
        out.model.cell_models[c] = std::move(fits[c]->model);
    }
    if (empty_cells > 0)
        out.warnings.push_back(std::to_string(empty_cells) + " of " + std::to_string(cells) +
                               " cells have no training entries and predict the grand mean");
    return out;
}

// ---------------------------------------------------------------------------
// Matrix factorization on the first two modes

/// Averages all values sharing the first two indices. Pairs appear in order
/// of first occurrence.
inline SparseTensor collapse_to_matrix(const SparseTensor& t) {
    std::map<std::pair<index_t, index_t>, std::size_t> slot;
    std::vector<index_t> coords;
    std::vector<double> sums;
    std::vector<std::size_t> counts;
    for (std::size_t e = 0; e < t.nnz(); ++e) {
        const auto idx = t.index(e);
        const auto [it, fresh] = slot.try_emplace({idx[0], idx[1]}, sums.size());
        if (fresh) {
            coords.push_back(idx[0]);
            coords.push_back(idx[1]);
            sums.push_back(0.0);
            counts.push_back(0);
        }
        sums[it->second] += t.value(e);
        ++counts[it->second];
    }
    for (std::size_t s = 0; s < sums.size(); ++s) sums[s] /= static_cast<double>(counts[s]);
    return SparseTensor({t.dim(0), t.dim(1)}, std::move(coords), std::move(sums));
}

/// Order-2 model applied to higher-order indices by ignoring every mode
/// past the second.
struct MfModel {
    FactorModel matrix;

    double predict(std::span<const index_t> idx) const {
        if (idx.size() < 2) throw std::out_of_range("index tuple needs at least two modes");
        return matrix.predict(idx.first(2));
    }
};

/// Collapses to user x item and fits the two-mode model, with the user and
/// item subgroups when use_subgroups is set and plain CP otherwise.
inline FitResult fit_mf(const SparseTensor& t, const SubgroupMap& groups, const FitConfig& cfg,
                        bool use_subgroups = true) {
    if (!groups.matches(t.dims())) throw DataError("subgroup map does not match tensor dims");
    const SparseTensor m = t.order() == 2 ? t : collapse_to_matrix(t);
    if (!use_subgroups) return fit_cpd(m, cfg);
    const std::vector<std::size_t> first_two{0, 1};
    return fit_rem(m, groups.restrict_to(first_two), cfg);
}

// ---------------------------------------------------------------------------
// Grand mean

struct GrandMeanModel {
    double mean = 0.0;
    double predict(std::span<const index_t>) const noexcept { return mean; }
};

inline GrandMeanModel grand_mean_baseline(const SparseTensor& train) {
    if (train.empty()) throw DataError("grand mean of an empty training set");
    return {train.mean()};
}

// ---------------------------------------------------------------------------
// Uniform handle over the fitted models

using TrainedModel = std::variant<FactorModel, GcpdModel, MfModel, GrandMeanModel>;

inline double predict(const TrainedModel& m, std::span<const index_t> idx) {
    return std::visit([&](const auto& x) { return x.predict(idx); }, m);
}

inline std::vector<double> predict_all(const TrainedModel& m, const SparseTensor& t) {
    std::vector<double> out(t.nnz());
    for (std::size_t e = 0; e < t.nnz(); ++e) out[e] = predict(m, t.index(e));
    return out;
}

struct BaselineOptions {
    GcpdCells gcpd_cells = GcpdCells::CrossProduct;
    bool mf_subgroups = true;
};

struct MethodFit {
    Method method = Method::REM;
    TrainedModel model;
    std::size_t iterations_used = 0;
    bool converged = true;
    std::optional<FitResult> solver;  ///< REM, CPD and MF runs
    std::vector<std::string> warnings;
};

/// Fits any of the methods on a training tensor.
inline MethodFit fit_method(Method method, const SparseTensor& train, const SubgroupMap& groups, const FitConfig& cfg,
                            const BaselineOptions& opt = {}) {
    MethodFit out;
    out.method = method;
    auto take = [&](FitResult&& r, auto wrap) {
        out.iterations_used = r.iterations_used;
        out.converged = r.converged;
        out.warnings = r.warnings;
        out.model = wrap(r.model);
        out.solver = std::move(r);
    };
    switch (method) {
        case Method::REM: take(fit_rem(train, groups, cfg), [](const FactorModel& m) { return TrainedModel(m); }); break;
        case Method::CPD: take(fit_cpd(train, cfg), [](const FactorModel& m) { return TrainedModel(m); }); break;
        case Method::MF:
            take(fit_mf(train, groups, cfg, opt.mf_subgroups), [](const FactorModel& m) { return TrainedModel(MfModel{m}); });
            break;
        case Method::GCPD: {
            auto g = fit_gcpd(train, groups, cfg, opt.gcpd_cells);
            for (const auto& c : g.cells) {
                out.iterations_used = std::max(out.iterations_used, c.iterations_used);
                out.converged = out.converged && c.converged;
            }
            out.warnings = std::move(g.warnings);
            out.model = std::move(g.model);
            break;
        }
        case Method::GMI: out.model = grand_mean_baseline(train); break;
    }
    return out;
}

}  // namespace nestedcp
