#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "nestedcp/baselines.hpp"
#include "nestedcp/error.hpp"
#include "nestedcp/metrics.hpp"
#include "nestedcp/parallel.hpp"
#include "nestedcp/simulate.hpp"
#include "nestedcp/tensor_io.hpp"

namespace nestedcp {

/// Independent seed for stream `stream` of a replication (SplitMix64 mix).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

enum class Generator { Sim1, Sim2 };

inline std::string generator_name(Generator g) { return g == Generator::Sim1 ? "sim1" : "sim2"; }

struct BenchmarkSpec {
    Generator generator = Generator::Sim1;
    Sim1Params sim1;
    Sim2Params sim2;
    std::vector<Method> methods{Method::REM, Method::GCPD, Method::MF};
    std::vector<double> lambda_grid{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
    std::size_t rank = 3;
    std::size_t replications = 10;
    std::uint64_t base_seed = 0;
    std::array<double, 3> split{0.5, 0.25, 0.25};
    FitConfig fit;  ///< rank, lambda and seed are overridden per run
    BaselineOptions options;
    /// Replications run concurrently on this many threads.
    std::size_t threads = 1;

    double phi() const { return generator == Generator::Sim1 ? sim1.phi_cs : sim2.phi_cs; }

    void validate() const {
        if (replications < 1) throw std::invalid_argument("benchmark: replications must be at least 1");
        if (lambda_grid.empty()) throw std::invalid_argument("benchmark: lambda grid is empty");
        if (methods.empty()) throw std::invalid_argument("benchmark: no methods");
        if (rank < 1) throw std::invalid_argument("benchmark: rank must be at least 1");
    }
};

/// One method in one replication.
struct RunRecord {
    std::size_t replication = 0;
    std::uint64_t seed = 0;
    Method method = Method::REM;
    bool ok = false;
    std::string error;
    double lambda = 0.0;
    double validation_rmse = 0.0;
    double rmse = 0.0;
    double mae = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    double cold_fraction = 0.0;
    double seconds = 0.0;
};

struct Summary {
    double mean = 0.0;
    std::optional<double> sd;  ///< n-1 convention, absent for one value
    std::optional<double> se;  ///< sd / sqrt(n)
};

inline Summary summarize(const std::vector<double>& xs) {
    if (xs.empty()) throw std::invalid_argument("summary of no values");
    Summary s;
    for (double x : xs) s.mean += x;
    s.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - s.mean) * (x - s.mean);
        s.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
        s.se = *s.sd / std::sqrt(static_cast<double>(xs.size()));
    }
    return s;
}

struct MethodSummary {
    Method method = Method::REM;
    std::size_t runs = 0;
    std::size_t failures = 0;
    Summary rmse;
    Summary mae;
    double seconds = 0.0;  ///< total wall time over replications
};

struct BenchmarkReport {
    BenchmarkSpec spec;
    std::vector<MethodSummary> methods;
    std::vector<RunRecord> runs;
    std::vector<std::string> warnings;

    const MethodSummary& of(Method m) const {
        for (const auto& s : methods)
            if (s.method == m) return s;
        throw std::out_of_range("method not in report: " + method_name(m));
    }
};

struct Replication {
    SimulatedData data;
    DatasetSplit split;  ///< after cold-start injection
};

/// Generates, splits and cold-starts the data of replication rep.
inline Replication prepare_replication(const BenchmarkSpec& spec, std::size_t rep) {
    const std::uint64_t seed = spec.base_seed + rep;
    SimulatedData data;
    if (spec.generator == Generator::Sim1) {
        Sim1Params p = spec.sim1;
        p.seed = seed;
        data = generate_simulation1(p);
    } else {
        Sim2Params p = spec.sim2;
        p.seed = seed;
        data = generate_simulation2(p);
    }
    DatasetSplit split = split_dataset(data.tensor, spec.split, derive_seed(seed, 1));
    split = inject_cold_start(split, spec.phi(), derive_seed(seed, 2));
    return {std::move(data), std::move(split)};
}

/// Tunes lambda on validation (GMI untuned), then scores the selected fit
/// on test.
inline RunRecord run_method(const BenchmarkSpec& spec, const Replication& r, std::size_t rep, Method method,
                            std::size_t fit_threads) {
    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    RunRecord rec;
    rec.replication = rep;
    rec.seed = spec.base_seed + rep;
    rec.method = method;
    rec.cold_fraction = cold_fraction(r.split);
    FitConfig cfg = spec.fit;
    cfg.rank = spec.rank;
    cfg.seed = derive_seed(rec.seed, 3);
    cfg.threads = fit_threads;
    try {
        MethodFit fit;
        if (method == Method::GMI) {
            fit = fit_method(method, r.split.train, r.data.groups, cfg, spec.options);
            rec.validation_rmse = evaluate(fit.model, r.split.validation).rmse;
        } else {
            auto tuned = tune_lambda(method, spec.lambda_grid, r.split.train, r.split.validation, r.data.groups, cfg,
                                     spec.options);
            rec.lambda = tuned.best_lambda;
            rec.validation_rmse = tuned.best_rmse;
            fit = std::move(tuned.best_fit);
        }
        const Evaluation ev = evaluate(fit.model, r.split.test);
        rec.rmse = ev.rmse;
        rec.mae = ev.mae;
        rec.iterations = fit.iterations_used;
        rec.converged = fit.converged;
        rec.ok = std::isfinite(ev.rmse) && std::isfinite(ev.mae);
        if (!rec.ok) rec.error = "non-finite test metric";
    } catch (const NumericalError& e) {
        rec.error = e.what();
    } catch (const DataError& e) {
        rec.error = e.what();
    }
    rec.seconds = std::chrono::duration<double>(clock::now() - start).count();
    return rec;
}

/// Replication protocol: data from seed base+rep, 50/25/25 split, cold-start
/// injection, per-method lambda tuning, test RMSE and MAE. Failed runs are
/// dropped with a warning while they stay under 20% of the replications of a
/// method; more failures abort the benchmark.
inline BenchmarkReport run_benchmark(const BenchmarkSpec& spec) {
    spec.validate();
    const std::size_t reps = spec.replications;
    const std::size_t nm = spec.methods.size();
    std::vector<RunRecord> records(reps * nm);
    const std::size_t fit_threads = spec.threads > 1 ? 1 : std::max<std::size_t>(1, spec.fit.threads);
    parallel_for(reps, spec.threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t rep = begin; rep < end; ++rep) {
            const Replication r = prepare_replication(spec, rep);
            for (std::size_t m = 0; m < nm; ++m) records[rep * nm + m] = run_method(spec, r, rep, spec.methods[m], fit_threads);
        }
    });

    BenchmarkReport report;
    report.spec = spec;
    report.runs = records;
    for (std::size_t m = 0; m < nm; ++m) {
        MethodSummary s;
        s.method = spec.methods[m];
        std::vector<double> rm, ma;
        for (std::size_t rep = 0; rep < reps; ++rep) {
            const RunRecord& rec = records[rep * nm + m];
            s.seconds += rec.seconds;
            if (rec.ok) {
                rm.push_back(rec.rmse);
                ma.push_back(rec.mae);
            } else {
                ++s.failures;
                report.warnings.push_back(method_name(s.method) + " replication " + std::to_string(rep) +
                                          " failed: " + rec.error);
            }
        }
        s.runs = rm.size();
        if (rm.empty() || static_cast<double>(s.failures) >= 0.2 * static_cast<double>(reps))
            throw NumericalError(method_name(s.method) + ": " + std::to_string(s.failures) + " of " +
                                 std::to_string(reps) + " replications failed");
        s.rmse = summarize(rm);
        s.mae = summarize(ma);
        report.methods.push_back(s);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Output

namespace detail {

inline std::string opt_real(const std::optional<double>& v) { return v ? format_real(*v) : "NA"; }

inline std::string fixed3(double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(3) << v;
    return s.str();
}

}  // namespace detail

/// Tab-separated summary, one line per method.
inline void write_report_tsv(std::ostream& out, const BenchmarkReport& rep) {
    out << "method\truns\tfailures\trmse_mean\trmse_sd\trmse_se\tmae_mean\tmae_sd\tmae_se\tseconds\n";
    for (const auto& s : rep.methods)
        out << method_name(s.method) << '\t' << s.runs << '\t' << s.failures << '\t' << detail::format_real(s.rmse.mean)
            << '\t' << detail::opt_real(s.rmse.sd) << '\t' << detail::opt_real(s.rmse.se) << '\t'
            << detail::format_real(s.mae.mean) << '\t' << detail::opt_real(s.mae.sd) << '\t'
            << detail::opt_real(s.mae.se) << '\t' << detail::format_real(s.seconds) << '\n';
}

/// Tab-separated per-run records.
inline void write_runs_tsv(std::ostream& out, const BenchmarkReport& rep) {
    out << "replication\tseed\tmethod\tok\tlambda\tvalidation_rmse\trmse\tmae\titerations\tconverged\tcold_fraction\tseconds\terror\n";
    for (const auto& r : rep.runs)
        out << r.replication << '\t' << r.seed << '\t' << method_name(r.method) << '\t' << int(r.ok) << '\t'
            << detail::format_real(r.lambda) << '\t' << detail::format_real(r.validation_rmse) << '\t'
            << detail::format_real(r.rmse) << '\t' << detail::format_real(r.mae) << '\t' << r.iterations << '\t'
            << int(r.converged) << '\t' << detail::format_real(r.cold_fraction) << '\t'
            << detail::format_real(r.seconds) << '\t' << r.error << '\n';
}

/// Aligned table with "mean (sd)" cells.
inline void write_report_table(std::ostream& out, const BenchmarkReport& rep) {
    auto cell = [](const Summary& s) {
        return detail::fixed3(s.mean) + (s.sd ? " (" + detail::fixed3(*s.sd) + ")" : "");
    };
    out << std::left << std::setw(8) << "method" << std::setw(20) << "RMSE (sd)" << std::setw(20) << "MAE (sd)"
        << std::setw(6) << "runs" << "seconds\n";
    for (const auto& s : rep.methods)
        out << std::left << std::setw(8) << method_name(s.method) << std::setw(20) << cell(s.rmse) << std::setw(20)
            << cell(s.mae) << std::setw(6) << s.runs << detail::fixed3(s.seconds) << '\n';
}

/// key=value description of the benchmark inputs.
inline void write_manifest(std::ostream& out, const BenchmarkSpec& spec) {
    out << "generator=" << generator_name(spec.generator) << '\n';
    if (spec.generator == Generator::Sim1) {
        const auto& p = spec.sim1;
        out << "dims=" << p.n1 << ',' << p.n2 << ',' << p.n3 << "\ngroups=" << p.m1 << ',' << p.m2 << ',' << p.m3
            << "\npi0=" << detail::format_real(p.pi0) << "\nphi=" << detail::format_real(p.phi_cs)
            << "\nnoise_sd=" << detail::format_real(p.noise_sd) << '\n';
    } else {
        const auto& p = spec.sim2;
        out << "dims=" << p.n << ',' << p.n << ',' << p.contexts << ',' << p.contexts << "\ngroups=" << p.user_groups
            << ',' << p.user_groups << ',' << p.context_groups << ',' << p.context_groups
            << "\npi0=" << detail::format_real(p.pi0) << "\nphi=" << detail::format_real(p.phi_cs)
            << "\nnoise_sd=" << detail::format_real(p.noise_sd) << '\n';
    }
    out << "methods=";
    for (std::size_t i = 0; i < spec.methods.size(); ++i) out << (i ? "," : "") << method_name(spec.methods[i]);
    out << "\nlambda_grid=";
    for (std::size_t i = 0; i < spec.lambda_grid.size(); ++i) out << (i ? "," : "") << detail::format_real(spec.lambda_grid[i]);
    out << "\nrank=" << spec.rank << "\nreplications=" << spec.replications << "\nbase_seed=" << spec.base_seed
        << "\nsplit=" << detail::format_real(spec.split[0]) << ',' << detail::format_real(spec.split[1]) << ','
        << detail::format_real(spec.split[2]) << "\ntolerance=" << detail::format_real(spec.fit.tolerance)
        << "\nmax_iterations=" << spec.fit.max_iterations << "\ninit_scale=" << detail::format_real(spec.fit.init_scale)
        << "\ngcpd_cells=" << (spec.options.gcpd_cells == GcpdCells::CrossProduct ? "cross" : "first-mode")
        << "\nmf_subgroups=" << (spec.options.mf_subgroups ? "true" : "false") << '\n';
}

}  // namespace nestedcp
