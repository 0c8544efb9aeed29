#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "nestedcp/error.hpp"
#include "nestedcp/factor_model.hpp"
#include "nestedcp/parallel.hpp"
#include "nestedcp/sparse_tensor.hpp"
#include "nestedcp/subgroups.hpp"
#include "nestedcp/tensor_io.hpp"

namespace nestedcp {

struct FitConfig {
    std::size_t rank = 3;
    double lambda = 1.0;
    double tolerance = 1e-4;
    std::size_t max_iterations = 1000;
    std::uint64_t seed = 0;
    double init_scale = 0.1;
    /// Worker threads for the per-row ridge solves. Results do not depend on
    /// this value.
    std::size_t threads = 1;
    /// false freezes every nested row at zero (plain penalized CP).
    bool fit_nested = true;
    /// Minimum members per subgroup, checked when nested rows are fitted.
    std::size_t min_group_size = 2;

    void validate() const {
        if (rank < 1) throw std::invalid_argument("rank must be at least 1");
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("lambda must be finite and non-negative");
        if (!(tolerance > 0.0)) throw std::invalid_argument("tolerance must be positive");
        if (max_iterations < 1) throw std::invalid_argument("max_iterations must be at least 1");
        if (!(init_scale >= 0.0)) throw std::invalid_argument("init_scale must be non-negative");
    }
};

/// Ridge design for one subject: row e holds prod_{l != k} b^l_{i_l j} for
/// every entry of the subject's observation set, and response the entry
/// values.
struct BlockSystem {
    Eigen::MatrixXd design;
    Eigen::VectorXd response;
};

inline BlockSystem assemble_block_system(const FactorModel& model, const SparseTensor& t, std::size_t k, index_t subject) {
    if (t.order() != model.order() || !std::equal(t.dims().begin(), t.dims().end(), model.dims().begin()))
        throw DataError("tensor dims differ from model dims");
    const auto obs = t.observations(k, subject);
    const auto r = static_cast<Eigen::Index>(model.rank);
    BlockSystem sys{Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(obs.size()), r),
                    Eigen::VectorXd(static_cast<Eigen::Index>(obs.size()))};
    for (std::size_t row = 0; row < obs.size(); ++row) {
        const auto idx = t.index(obs.entries[row]);
        const auto rr = static_cast<Eigen::Index>(row);
        for (std::size_t l = 0; l < model.order(); ++l) {
            if (l == k) continue;
            const index_t g = model.subgroups.group_of(l, idx[l]);
            for (Eigen::Index j = 0; j < r; ++j) sys.design(rr, j) *= model.latent[l](idx[l], j) + model.nested[l](g, j);
        }
        sys.response(rr) = t.value(obs.entries[row]);
    }
    return sys;
}

/// Relative decrease 1 - after/before of the criterion.
inline double block_improvement(double loss_before, double loss_after) {
    if (!(loss_before > 0.0)) throw std::invalid_argument("block_improvement: loss_before must be positive");
    return 1.0 - loss_after / loss_before;
}

enum class BlockKind { Latent, Nested };

/// "P<k>" for a latent block, "Q<k>" for a nested block, 1-based mode.
inline std::string block_label(BlockKind kind, std::size_t mode) {
    return (kind == BlockKind::Latent ? "P" : "Q") + std::to_string(mode + 1);
}

struct IterationRecord {
    std::size_t iteration = 0;
    /// Mode of the committed latent block; nullopt when no latent candidate
    /// improved the criterion.
    std::optional<std::size_t> latent_mode;
    double latent_improvement = 0.0;  ///< best latent ratio of the iteration
    std::optional<std::size_t> nested_mode;
    double nested_improvement = 0.0;
    double loss = 0.0;  ///< criterion after both steps
};

struct FitResult {
    FactorModel model;
    double initial_loss = 0.0;
    std::vector<double> loss_trajectory;  ///< one value per iteration
    std::vector<IterationRecord> iterations;
    std::size_t iterations_used = 0;
    bool converged = false;
    std::vector<std::string> warnings;

    double final_loss() const { return loss_trajectory.empty() ? initial_loss : loss_trajectory.back(); }
};

/// One line per iteration: iteration, latent block, its ratio, nested
/// block, its ratio, loss. "-" marks a step that committed nothing.
inline void write_run_log(std::ostream& out, const FitResult& fit) {
    out << "iteration\tlatent_block\tlatent_improvement\tnested_block\tnested_improvement\tloss\n";
    out << "0\t-\t-\t-\t-\t" << detail::format_real(fit.initial_loss) << '\n';
    for (const auto& it : fit.iterations) {
        out << it.iteration << '\t' << (it.latent_mode ? block_label(BlockKind::Latent, *it.latent_mode) : "-") << '\t'
            << detail::format_real(it.latent_improvement) << '\t'
            << (it.nested_mode ? block_label(BlockKind::Nested, *it.nested_mode) : "-") << '\t'
            << detail::format_real(it.nested_improvement) << '\t' << detail::format_real(it.loss) << '\n';
    }
}

namespace detail {

/// Holds the current model and produces exact block minimizers for one
/// latent or nested block at a time.
///
/// For mode k and subject i the engine caches G_i = Z_i'Z_i, g_i = Z_i'res_i
/// and s_i = res_i'res_i, where Z_i is the design of the subject's entries
/// and res_i the current residuals. Both candidate blocks of mode k and
/// their residual sums follow from these: moving b_i by delta changes s_i to
/// s_i - 2 delta'g_i + delta'G_i delta. G_i depends only on the other modes,
/// so committing a block of mode k keeps the statistics of mode k (updated
/// in closed form) and invalidates the rest.
class BlockEngine {
public:
    struct Candidate {
        BlockKind kind = BlockKind::Latent;
        std::size_t mode = 0;
        Matrix rows;
        double sse = 0.0;
        double loss = 0.0;
        std::vector<index_t> empty;  ///< rows with no observations (set to zero)
    };

    BlockEngine(const SparseTensor& t, FactorModel model, double lambda, std::size_t threads)
        : m_(std::move(model)), lambda_(lambda), threads_(threads) {
        if (t.order() != m_.order() || !std::equal(t.dims().begin(), t.dims().end(), m_.dims().begin()))
            throw DataError("tensor dims differ from model dims");
        const std::size_t d = t.order();
        for (std::size_t k = 0; k < d; ++k) {
            eff_.push_back(m_.effective(k));
            ModeLayout lay;
            lay.offsets.reserve(t.dim(k) + 1);
            lay.offsets.push_back(0);
            lay.coords.reserve(t.nnz() * d);
            lay.values.reserve(t.nnz());
            for (std::size_t i = 0; i < t.dim(k); ++i) {
                for (std::size_t e : t.mode_entries(k, static_cast<index_t>(i))) {
                    const auto idx = t.index(e);
                    lay.coords.insert(lay.coords.end(), idx.begin(), idx.end());
                    lay.values.push_back(t.value(e));
                }
                lay.offsets.push_back(lay.values.size());
            }
            layout_.push_back(std::move(lay));
            stats_.emplace_back();
        }
        for (const auto& b : eff_) eff_ptr_.push_back(b.data());
        sse_ = 0.0;
        const ModeLayout& lay = layout_[0];
        for (std::size_t pos = 0; pos < lay.values.size(); ++pos) {
            const double res = lay.values[pos] - predict_effective(lay.coords.data() + pos * d);
            sse_ += res * res;
        }
        for (std::size_t k = 0; k < d; ++k) {
            latent_norm2_.push_back(m_.latent[k].squaredNorm());
            nested_norm2_.push_back(m_.nested[k].squaredNorm());
        }
    }

    const FactorModel& model() const noexcept { return m_; }
    FactorModel release() && { return std::move(m_); }
    double loss() const noexcept { return sse_ + lambda_ * penalty(); }

    /// Per-subject ridge solves for P^k with everything else fixed:
    /// (G_i + lambda I) p = g_i + G_i p_cur.
    Candidate latent_candidate(std::size_t k) {
        const ModeStats& st = stats(k);
        const std::size_t r = m_.rank;
        const std::size_t n = m_.dim(k);
        const ModeLayout& lay = layout_[k];
        Candidate c{BlockKind::Latent, k, Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(r)), 0.0, 0.0, {}};
        std::vector<double> row_sse(n, 0.0);
        parallel_for(n, threads_, [&](std::size_t begin, std::size_t end) {
            Eigen::MatrixXd a(r, r);
            Eigen::VectorXd rhs(r), delta(r);
            for (std::size_t i = begin; i < end; ++i) {
                if (lay.offsets[i] == lay.offsets[i + 1]) continue;
                const auto g = st.grad(i, r);
                const auto gram = st.gram_of(i, r);
                const Eigen::VectorXd p = m_.latent[k].row(static_cast<Eigen::Index>(i)).transpose();
                a = gram;
                a.diagonal().array() += lambda_;
                rhs = g + gram * p;
                const Eigen::VectorXd x = solve_spd(a, rhs, "P", k, i);
                c.rows.row(static_cast<Eigen::Index>(i)) = x.transpose();
                delta = x - p;
                row_sse[i] = st.sse[i] - 2.0 * delta.dot(g) + delta.dot(gram * delta);
            }
        });
        for (std::size_t i = 0; i < n; ++i) {
            if (lay.offsets[i] == lay.offsets[i + 1]) c.empty.push_back(static_cast<index_t>(i));
            c.sse += row_sse[i];
        }
        const double pen = penalty() - latent_norm2_[k] + c.rows.squaredNorm();
        c.loss = c.sse + lambda_ * pen;
        return c;
    }

    /// Per-subgroup ridge solves for the unique nested rows of mode k,
    /// stacking the observation sets of all members:
    /// (sum G_i + lambda I) q = sum (g_i + G_i q_cur).
    Candidate nested_candidate(std::size_t k) {
        const ModeStats& st = stats(k);
        const std::size_t r = m_.rank;
        const std::size_t groups = m_.subgroups.groups(k);
        const ModeLayout& lay = layout_[k];
        Candidate c{BlockKind::Nested, k, Matrix::Zero(static_cast<Eigen::Index>(groups), static_cast<Eigen::Index>(r)), 0.0, 0.0, {}};
        std::vector<double> group_sse(groups, 0.0);
        std::vector<std::uint8_t> no_data(groups, 0);
        parallel_for(groups, threads_, [&](std::size_t begin, std::size_t end) {
            Eigen::MatrixXd gram(r, r);
            Eigen::VectorXd g(r), delta(r);
            for (std::size_t u = begin; u < end; ++u) {
                gram.setZero();
                g.setZero();
                double s = 0.0;
                std::size_t total = 0;
                for (index_t i : m_.subgroups.members(k, static_cast<index_t>(u))) {
                    if (lay.offsets[i] == lay.offsets[i + 1]) continue;
                    total += lay.offsets[i + 1] - lay.offsets[i];
                    gram += st.gram_of(i, r);
                    g += st.grad(i, r);
                    s += st.sse[i];
                }
                if (total == 0) {
                    no_data[u] = 1;
                    continue;
                }
                const Eigen::VectorXd q = m_.nested[k].row(static_cast<Eigen::Index>(u)).transpose();
                Eigen::MatrixXd a = gram;
                a.diagonal().array() += lambda_;
                const Eigen::VectorXd rhs = g + gram * q;
                const Eigen::VectorXd x = solve_spd(a, rhs, "Q", k, u);
                c.rows.row(static_cast<Eigen::Index>(u)) = x.transpose();
                delta = x - q;
                group_sse[u] = s - 2.0 * delta.dot(g) + delta.dot(gram * delta);
            }
        });
        for (std::size_t u = 0; u < groups; ++u) {
            if (no_data[u]) c.empty.push_back(static_cast<index_t>(u));
            c.sse += group_sse[u];
        }
        const double pen = penalty() - nested_norm2_[k] + c.rows.squaredNorm();
        c.loss = c.sse + lambda_ * pen;
        return c;
    }

    void commit(Candidate&& c) {
        const std::size_t k = c.mode;
        const std::size_t r = m_.rank;
        ModeStats& st = stats(k);
        const ModeLayout& lay = layout_[k];
        parallel_for(m_.dim(k), threads_, [&](std::size_t begin, std::size_t end) {
            Eigen::VectorXd delta(r);
            for (std::size_t i = begin; i < end; ++i) {
                if (lay.offsets[i] == lay.offsets[i + 1]) continue;
                const auto ii = static_cast<Eigen::Index>(i);
                if (c.kind == BlockKind::Latent) {
                    delta = (c.rows.row(ii) - m_.latent[k].row(ii)).transpose();
                } else {
                    const auto u = static_cast<Eigen::Index>(m_.subgroups.group_of(k, static_cast<index_t>(i)));
                    delta = (c.rows.row(u) - m_.nested[k].row(u)).transpose();
                }
                auto g = st.grad(i, r);
                const auto gram = st.gram_of(i, r);
                st.sse[i] += -2.0 * delta.dot(g) + delta.dot(gram * delta);
                g -= gram * delta;
            }
        });
        if (c.kind == BlockKind::Latent) {
            m_.latent[k] = std::move(c.rows);
            latent_norm2_[k] = m_.latent[k].squaredNorm();
        } else {
            m_.nested[k] = std::move(c.rows);
            nested_norm2_[k] = m_.nested[k].squaredNorm();
        }
        eff_[k] = m_.effective(k);
        eff_ptr_[k] = eff_[k].data();
        sse_ = c.sse;
        for (std::size_t l = 0; l < stats_.size(); ++l)
            if (l != k) stats_[l].valid = false;
    }

private:
    struct ModeLayout {
        std::vector<std::size_t> offsets;  ///< n_k + 1 subject boundaries
        std::vector<index_t> coords;       ///< entry-major, subject order
        std::vector<double> values;
    };

    struct ModeStats {
        bool valid = false;
        std::vector<double> gram;  ///< n_k blocks of r x r, row-major, full
        std::vector<double> g;     ///< n_k x r
        std::vector<double> sse;   ///< n_k

        Eigen::Map<const Eigen::MatrixXd> gram_of(std::size_t i, std::size_t r) const {
            return {gram.data() + i * r * r, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r)};
        }
        Eigen::Map<Eigen::VectorXd> grad(std::size_t i, std::size_t r) {
            return {g.data() + i * r, static_cast<Eigen::Index>(r)};
        }
        Eigen::Map<const Eigen::VectorXd> grad(std::size_t i, std::size_t r) const {
            return {g.data() + i * r, static_cast<Eigen::Index>(r)};
        }
    };

    /// Statistics of mode k, recomputed with one pass over its entries when
    /// a block of another mode was committed since the last pass.
    ModeStats& stats(std::size_t k) {
        ModeStats& st = stats_[k];
        if (st.valid) return st;
        const std::size_t r = m_.rank;
        const std::size_t n = m_.dim(k);
        st.gram.assign(n * r * r, 0.0);
        st.g.assign(n * r, 0.0);
        st.sse.assign(n, 0.0);
        with_rank([&](auto fixed) { stats_pass<decltype(fixed)::value>(k, st); });
        st.valid = true;
        return st;
    }

    /// Calls fn(std::integral_constant<std::size_t, R>) with R the rank when
    /// it is small, else R = 0 (rank read at run time).
    template <class Fn>
    void with_rank(Fn&& fn) const {
        switch (m_.rank) {
            case 1: return fn(std::integral_constant<std::size_t, 1>{});
            case 2: return fn(std::integral_constant<std::size_t, 2>{});
            case 3: return fn(std::integral_constant<std::size_t, 3>{});
            case 4: return fn(std::integral_constant<std::size_t, 4>{});
            case 5: return fn(std::integral_constant<std::size_t, 5>{});
            case 6: return fn(std::integral_constant<std::size_t, 6>{});
            default: return fn(std::integral_constant<std::size_t, 0>{});
        }
    }

    template <std::size_t R>
    void stats_pass(std::size_t k, ModeStats& st) const {
        const std::size_t r = R > 0 ? R : m_.rank;
        const std::size_t d = m_.order();
        const ModeLayout& lay = layout_[k];
        using Buf = std::conditional_t<(R > 0), std::array<double, R>, std::vector<double>>;
        using Gram = std::conditional_t<(R > 0), std::array<double, R * R>, std::vector<double>>;
        parallel_for(m_.dim(k), threads_, [&](std::size_t begin, std::size_t end) {
            Buf z{}, h{};
            Gram gram{};
            if constexpr (R == 0) {
                z.resize(r);
                h.resize(r);
                gram.resize(r * r);
            }
            for (std::size_t i = begin; i < end; ++i) {
                const std::size_t first = lay.offsets[i], last = lay.offsets[i + 1];
                if (first == last) continue;
                const double* b = eff_ptr_[k] + i * r;
                std::fill(gram.begin(), gram.end(), 0.0);
                std::fill(h.begin(), h.end(), 0.0);
                double s = 0.0;
                for (std::size_t pos = first; pos < last; ++pos) {
                    const index_t* idx = lay.coords.data() + pos * d;
                    for (std::size_t j = 0; j < r; ++j) z[j] = 1.0;
                    for (std::size_t l = 0; l < d; ++l) {
                        if (l == k) continue;
                        const double* bl = eff_ptr_[l] + static_cast<std::size_t>(idx[l]) * r;
                        for (std::size_t j = 0; j < r; ++j) z[j] *= bl[j];
                    }
                    double fit = 0.0;
                    for (std::size_t j = 0; j < r; ++j) fit += z[j] * b[j];
                    const double res = lay.values[pos] - fit;
                    s += res * res;
                    for (std::size_t a = 0; a < r; ++a) {
                        h[a] += z[a] * res;
                        for (std::size_t c = 0; c <= a; ++c) gram[a * r + c] += z[a] * z[c];
                    }
                }
                double* out = st.gram.data() + i * r * r;
                for (std::size_t a = 0; a < r; ++a)
                    for (std::size_t c = 0; c <= a; ++c) out[a * r + c] = out[c * r + a] = gram[a * r + c];
                std::copy(h.begin(), h.end(), st.g.begin() + static_cast<std::ptrdiff_t>(i * r));
                st.sse[i] = s;
            }
        });
    }

    /// Cholesky solve of a symmetric positive definite system.
    static Eigen::VectorXd solve_spd(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const char* tag, std::size_t mode,
                                     std::size_t which) {
        if (!a.allFinite() || !b.allFinite())
            throw NumericalError(std::string("non-finite block system for ") + tag + std::to_string(mode + 1) + " row " +
                                 std::to_string(which + 1));
        Eigen::LLT<Eigen::MatrixXd> llt(a);
        if (llt.info() != Eigen::Success)
            throw NumericalError(std::string("block system not positive definite for ") + tag + std::to_string(mode + 1) +
                                 " row " + std::to_string(which + 1));
        return llt.solve(b);
    }

    double predict_effective(const index_t* idx) const {
        const std::size_t r = m_.rank;
        double s = 0.0;
        for (std::size_t j = 0; j < r; ++j) {
            double p = 1.0;
            for (std::size_t l = 0; l < eff_ptr_.size(); ++l) p *= eff_ptr_[l][static_cast<std::size_t>(idx[l]) * r + j];
            s += p;
        }
        return s;
    }

    double penalty() const {
        double s = 0.0;
        for (double v : latent_norm2_) s += v;
        for (double v : nested_norm2_) s += v;
        return s;
    }

    FactorModel m_;
    double lambda_;
    std::size_t threads_;
    std::vector<Matrix> eff_;
    std::vector<const double*> eff_ptr_;
    std::vector<ModeLayout> layout_;
    std::vector<ModeStats> stats_;
    double sse_ = 0.0;
    std::vector<double> latent_norm2_;
    std::vector<double> nested_norm2_;
};

}  // namespace detail

/// Candidate P^k: for each subject, argmin_p ||y - Z(p + q)||^2 + lambda||p||^2.
/// Subjects without observations get a zero row.
inline Matrix update_latent_block(const FactorModel& model, const SparseTensor& t, std::size_t k, double lambda,
                                  std::size_t threads = 1) {
    if (!(lambda > 0.0)) throw std::invalid_argument("update_latent_block: lambda must be positive");
    if (k >= model.order()) throw std::out_of_range("mode index out of range");
    detail::BlockEngine engine(t, model, lambda, threads);
    return engine.latent_candidate(k).rows;
}

struct NestedBlockUpdate {
    Matrix rows;                      ///< m_k x r
    std::vector<index_t> empty_groups;  ///< subgroups with no observations, left at zero
};

/// Candidate unique nested rows of mode k: for each subgroup,
/// argmin_q sum over members ||y - Z(p_i + q)||^2 + lambda||q||^2.
inline NestedBlockUpdate update_nested_block(const FactorModel& model, const SparseTensor& t, std::size_t k,
                                             double lambda, std::size_t threads = 1) {
    if (!(lambda > 0.0)) throw std::invalid_argument("update_nested_block: lambda must be positive");
    if (k >= model.order()) throw std::out_of_range("mode index out of range");
    detail::BlockEngine engine(t, model, lambda, threads);
    auto c = engine.nested_candidate(k);
    return {std::move(c.rows), std::move(c.empty)};
}

/// Random starting model: latent and nested entries iid N(0, init_scale^2),
/// latent rows of subjects without observations zeroed and flagged cold.
/// With fit_nested off the nested rows stay zero and are not drawn.
inline FactorModel initial_model(const SparseTensor& t, const SubgroupMap& groups, const FitConfig& cfg) {
    FactorModel m(t.dims(), cfg.rank, groups);
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t k = 0; k < m.order(); ++k)
        for (Eigen::Index i = 0; i < m.latent[k].rows(); ++i) {
            const bool cold = t.count(k, static_cast<index_t>(i)) == 0;
            m.cold[k][static_cast<std::size_t>(i)] = cold;
            for (Eigen::Index j = 0; j < m.latent[k].cols(); ++j) {
                const double v = cfg.init_scale * normal(rng);
                m.latent[k](i, j) = cold ? 0.0 : v;
            }
        }
    if (cfg.fit_nested)
        for (auto& q : m.nested)
            for (Eigen::Index u = 0; u < q.rows(); ++u)
                for (Eigen::Index j = 0; j < q.cols(); ++j) q(u, j) = cfg.init_scale * normal(rng);
    return m;
}

/// Two-step maximum block improvement. Each iteration computes the latent
/// candidate of every mode and commits only the one with the largest
/// relative decrease, then does the same for the nested blocks (ratios taken
/// against the loss after the latent commit). Stops once the largest ratio of
/// the iteration falls below the tolerance. A step whose best ratio is not
/// positive commits nothing, so the loss never increases.
inline FitResult fit_rem(const SparseTensor& t, const SubgroupMap& groups, const FitConfig& cfg) {
    cfg.validate();
    if (t.empty()) throw DataError("cannot fit an empty tensor");
    if (!groups.matches(t.dims())) throw DataError("subgroup map does not match tensor dims");
    if (cfg.fit_nested) groups.require_min_members(cfg.min_group_size);

    FitResult res;
    detail::BlockEngine engine(t, initial_model(t, groups, cfg), cfg.lambda, cfg.threads);
    res.initial_loss = engine.loss();
    const std::size_t d = t.order();

    for (std::size_t k = 0; k < d; ++k) {
        std::size_t cold = 0;
        for (auto c : engine.model().cold[k]) cold += c;
        if (cold > 0)
            res.warnings.push_back("mode " + std::to_string(k + 1) + ": " + std::to_string(cold) +
                                   " subjects without observations keep zero latent rows");
    }
    bool warned_empty_groups = false;

    auto best_of = [&](BlockKind kind, double before, std::size_t iter) {
        std::optional<detail::BlockEngine::Candidate> best;
        double best_ratio = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < d; ++k) {
            auto c = kind == BlockKind::Latent ? engine.latent_candidate(k) : engine.nested_candidate(k);
            if (!std::isfinite(c.loss))
                throw NumericalError("non-finite loss at iteration " + std::to_string(iter) + ", block " +
                                     block_label(kind, k));
            if (kind == BlockKind::Nested && !c.empty.empty() && !warned_empty_groups) {
                res.warnings.push_back("mode " + std::to_string(k + 1) + ": " + std::to_string(c.empty.size()) +
                                       " subgroups without observations keep zero nested rows");
                warned_empty_groups = true;
            }
            const double ratio = block_improvement(before, c.loss);
            if (ratio > best_ratio) {
                best_ratio = ratio;
                best = std::move(c);
            }
        }
        return std::pair{std::move(best), best_ratio};
    };

    for (std::size_t s = 1; s <= cfg.max_iterations; ++s) {
        IterationRecord rec;
        rec.iteration = s;
        double max_ratio = -std::numeric_limits<double>::infinity();

        const double before = engine.loss();
        if (!(before > 0.0)) {
            res.converged = true;
            break;
        }
        auto [latent, latent_ratio] = best_of(BlockKind::Latent, before, s);
        rec.latent_improvement = latent_ratio;
        max_ratio = std::max(max_ratio, latent_ratio);
        if (latent_ratio > 0.0) {
            rec.latent_mode = latent->mode;
            engine.commit(std::move(*latent));
        }

        if (cfg.fit_nested) {
            const double mid = engine.loss();
            if (mid > 0.0) {
                auto [nested, nested_ratio] = best_of(BlockKind::Nested, mid, s);
                rec.nested_improvement = nested_ratio;
                max_ratio = std::max(max_ratio, nested_ratio);
                if (nested_ratio > 0.0) {
                    rec.nested_mode = nested->mode;
                    engine.commit(std::move(*nested));
                }
            }
        }

        rec.loss = engine.loss();
        res.loss_trajectory.push_back(rec.loss);
        res.iterations.push_back(rec);
        res.iterations_used = s;
        if (max_ratio < cfg.tolerance) {
            res.converged = true;
            break;
        }
    }
    res.model = rearrange_columns(std::move(engine).release());
    return res;
}

}  // namespace nestedcp
