#pragma once

// Command-line front end. Needs CLI11.hpp on the include path.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nestedcp/baselines.hpp"
#include "nestedcp/benchmark.hpp"
#include "nestedcp/error.hpp"
#include "nestedcp/kruskal.hpp"
#include "nestedcp/metrics.hpp"
#include "nestedcp/model_io.hpp"
#include "nestedcp/simulate.hpp"
#include "nestedcp/tensor_io.hpp"

namespace nestedcp::cli {

namespace fs = std::filesystem;

enum ExitCode : int { Ok = 0, IoFailure = 1, Usage = 2, Numerical = 3 };

// ---------------------------------------------------------------------------
// key=value files

using KeyValues = std::map<std::string, std::string>;

inline KeyValues read_key_values(const fs::path& path) {
    auto in = detail::open_in(path);
    KeyValues kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::skippable(line)) continue;
        const auto text = detail::trim(line);
        const auto eq = text.find('=');
        if (eq == std::string_view::npos) throw DataError(path.string() + ": expected key=value", line_no);
        kv[std::string(detail::trim(text.substr(0, eq)))] = std::string(detail::trim(text.substr(eq + 1)));
    }
    return kv;
}

inline void write_key_values(const fs::path& path, const std::vector<std::pair<std::string, std::string>>& kv) {
    auto out = detail::open_out(path);
    for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

inline const std::string& require_key(const KeyValues& kv, const std::string& key, const fs::path& where) {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError(where.string() + ": missing key '" + key + "'");
    return it->second;
}

inline std::string join_sizes(std::span<const std::size_t> xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
    return s;
}

inline std::string join_reals(std::span<const double> xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + detail::format_real(xs[i]);
    return s;
}

inline std::vector<std::size_t> parse_sizes(const std::string& text) {
    std::vector<std::size_t> out;
    for (auto f : detail::split_fields(text)) {
        std::size_t v = 0;
        if (!detail::parse_number(f, v)) throw std::invalid_argument("not a list of integers: " + text);
        out.push_back(v);
    }
    return out;
}

inline std::vector<double> parse_reals(const std::string& text) {
    std::vector<double> out;
    for (auto f : detail::split_fields(text)) {
        double v = 0.0;
        if (!detail::parse_number(f, v) || !std::isfinite(v)) throw std::invalid_argument("not a list of reals: " + text);
        out.push_back(v);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Standardization files

inline void save_scaling(const fs::path& path, const ScalingInfo& s) {
    auto out = detail::open_out(path);
    out << "mode\t" << s.mode + 1 << '\n';
    for (const auto& [label, g] : s.groups)
        out << label << '\t' << detail::format_real(g.mean) << '\t' << detail::format_real(g.sd) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

/// Reads the mode and per-category scales; labels are left empty.
inline ScalingInfo load_scaling(const fs::path& path) {
    auto in = detail::open_in(path);
    ScalingInfo s;
    std::string line;
    std::size_t line_no = 0;
    bool header = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::skippable(line)) continue;
        const auto f = detail::split_fields(detail::trim(line));
        if (header) {
            std::size_t mode = 0;
            if (f.size() != 2 || f[0] != "mode" || !detail::parse_number(f[1], mode) || mode == 0)
                throw DataError(path.string() + ": expected 'mode k' header", line_no);
            s.mode = mode - 1;
            header = false;
            continue;
        }
        std::int64_t label = 0;
        GroupScale g;
        if (f.size() != 3 || !detail::parse_number(f[0], label) || !detail::parse_number(f[1], g.mean) ||
            !detail::parse_number(f[2], g.sd) || !(g.sd > 0.0))
            throw DataError(path.string() + ": malformed scaling record", line_no);
        s.groups[label] = g;
    }
    if (header) throw DataError(path.string() + ": empty scaling file");
    return s;
}

// ---------------------------------------------------------------------------
// Model directories

/// A fitted model as stored on disk: manifest.txt plus method-specific
/// files (model.txt, or groups.tsv and cell_<c>.txt for GCPD).
struct StoredModel {
    Method method = Method::REM;
    std::vector<std::size_t> dims;
    TrainedModel model;
    std::optional<ScalingInfo> scaling;
    KeyValues manifest;

    void check_index(std::span<const index_t> idx) const {
        if (idx.size() != dims.size()) throw DataError("index tuple length differs from model order");
        for (std::size_t k = 0; k < dims.size(); ++k)
            if (idx[k] >= dims[k]) throw DataError("index out of range in mode " + std::to_string(k + 1));
    }

    /// Prediction on the fitting scale (standardized when scaling is set).
    double predict_fitted(std::span<const index_t> idx) const {
        check_index(idx);
        return predict(model, idx);
    }

    /// Prediction on the scale of the original data.
    double predict_raw(std::span<const index_t> idx) const {
        const double v = predict_fitted(idx);
        if (!scaling) return v;
        const auto& g = scaling->scale_of(idx[scaling->mode]);
        return v * g.sd + g.mean;
    }
};

inline std::string gcpd_cells_name(GcpdCells c) { return c == GcpdCells::CrossProduct ? "cross" : "first"; }

inline GcpdCells parse_gcpd_cells(const std::string& s) {
    if (s == "cross") return GcpdCells::CrossProduct;
    if (s == "first") return GcpdCells::FirstModeOnly;
    throw std::invalid_argument("gcpd cells must be 'cross' or 'first', got '" + s + "'");
}

inline void save_trained_model(const fs::path& dir, const TrainedModel& m) {
    if (const auto* f = std::get_if<FactorModel>(&m)) save_model(dir / "model.txt", *f);
    else if (const auto* mf = std::get_if<MfModel>(&m)) save_model(dir / "model.txt", mf->matrix);
    else if (const auto* g = std::get_if<GcpdModel>(&m)) {
        save_subgroups(dir / "groups.tsv", g->groups);
        for (std::size_t c = 0; c < g->cell_models.size(); ++c)
            if (g->cell_models[c]) save_model(dir / ("cell_" + std::to_string(c + 1) + ".txt"), *g->cell_models[c]);
    }
}

inline StoredModel load_stored_model(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("model directory not found: " + dir.string());
    StoredModel s;
    const fs::path mpath = dir / "manifest.txt";
    s.manifest = read_key_values(mpath);
    if (s.manifest.count("status") && s.manifest.at("status") != "ok")
        throw DataError(dir.string() + ": model directory holds a failed fit");
    const auto method = parse_method(require_key(s.manifest, "method", mpath));
    if (!method) throw DataError(mpath.string() + ": unknown method");
    s.method = *method;
    s.dims = parse_sizes(require_key(s.manifest, "dims", mpath));
    switch (s.method) {
        case Method::REM:
        case Method::CPD: s.model = load_model(dir / "model.txt"); break;
        case Method::MF: s.model = MfModel{load_model(dir / "model.txt")}; break;
        case Method::GMI: {
            double mean = 0.0;
            if (!detail::parse_number(require_key(s.manifest, "grand_mean", mpath), mean))
                throw DataError(mpath.string() + ": bad grand_mean");
            s.model = GrandMeanModel{mean};
            break;
        }
        case Method::GCPD: {
            GcpdModel g;
            g.groups = load_subgroups(dir / "groups.tsv", s.dims);
            g.cells = parse_gcpd_cells(require_key(s.manifest, "gcpd_cells", mpath));
            if (!detail::parse_number(require_key(s.manifest, "grand_mean", mpath), g.grand_mean))
                throw DataError(mpath.string() + ": bad grand_mean");
            g.cell_models.resize(g.cell_count());
            for (std::size_t c = 0; c < g.cell_models.size(); ++c) {
                const fs::path cp = dir / ("cell_" + std::to_string(c + 1) + ".txt");
                if (fs::exists(cp)) g.cell_models[c] = load_model(cp);
            }
            s.model = std::move(g);
            break;
        }
    }
    if (fs::exists(dir / "scaling.tsv")) {
        ScalingInfo sc = load_scaling(dir / "scaling.tsv");
        if (sc.mode >= s.dims.size()) throw DataError((dir / "scaling.tsv").string() + ": mode out of range");
        sc.labels = load_labels(dir / "labels.tsv", s.dims[sc.mode]);
        s.scaling = std::move(sc);
    }
    return s;
}

/// Index records: d indices (1-based), optionally followed by a value that
/// is ignored. A leading "dims:" line is skipped.
inline std::vector<std::vector<index_t>> read_index_list(const fs::path& path, std::size_t order) {
    auto in = detail::open_in(path);
    std::vector<std::vector<index_t>> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::skippable(line)) continue;
        const auto text = detail::trim(line);
        if (text.starts_with("dims:")) continue;
        const auto f = detail::split_fields(text);
        if (f.size() != order && f.size() != order + 1)
            throw DataError(path.string() + ": expected " + std::to_string(order) + " indices", line_no);
        std::vector<index_t> idx(order);
        for (std::size_t k = 0; k < order; ++k) {
            long long v = 0;
            if (!detail::parse_number(f[k], v) || v < 1 || v > static_cast<long long>(std::numeric_limits<index_t>::max()))
                throw DataError(path.string() + ": bad index", line_no);
            idx[k] = static_cast<index_t>(v - 1);
        }
        out.push_back(std::move(idx));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Verbs

struct Common {
    std::size_t threads = 1;
    std::uint64_t seed = 0;
};

struct SimulateArgs {
    std::string design = "sim1";
    double pi0 = -1.0;  ///< negative: design default
    double phi = -1.0;
    double noise = -1.0;  ///< negative: design default
    double density = 0.01;
    std::string dims, groups;
    std::size_t n = 500, contexts = 4;
    std::string out;
};

inline int do_simulate(const SimulateArgs& a, const Common& c, std::ostream& out) {
    SimulatedData data;
    std::optional<CategoryLabels> labels;
    std::vector<std::pair<std::string, std::string>> manifest{{"design", a.design}, {"seed", std::to_string(c.seed)}};
    double phi = a.phi;
    if (a.design == "sim1" || a.design == "sim2") {
        BenchmarkSpec spec;
        spec.base_seed = c.seed;
        if (a.design == "sim1") {
            auto& p = spec.sim1;
            if (!a.dims.empty()) {
                const auto d = parse_sizes(a.dims);
                if (d.size() != 3) throw std::invalid_argument("sim1 needs three dims");
                p.n1 = d[0], p.n2 = d[1], p.n3 = d[2];
            }
            if (!a.groups.empty()) {
                const auto g = parse_sizes(a.groups);
                if (g.size() != 3) throw std::invalid_argument("sim1 needs three subgroup counts");
                p.m1 = g[0], p.m2 = g[1], p.m3 = g[2];
            }
            if (a.pi0 >= 0.0) p.pi0 = a.pi0;
            if (phi >= 0.0) p.phi_cs = phi;
            if (a.noise >= 0.0) p.noise_sd = a.noise;
            manifest.push_back({"pi0", detail::format_real(p.pi0)});
            phi = p.phi_cs;
        } else {
            spec.generator = Generator::Sim2;
            auto& p = spec.sim2;
            p.n = a.n;
            p.contexts = a.contexts;
            if (!a.groups.empty()) {
                const auto g = parse_sizes(a.groups);
                if (g.size() != 2) throw std::invalid_argument("sim2 takes user and context subgroup counts");
                p.user_groups = g[0], p.context_groups = g[1];
            }
            if (a.pi0 >= 0.0) p.pi0 = a.pi0;
            if (phi >= 0.0) p.phi_cs = phi;
            if (a.noise >= 0.0) p.noise_sd = a.noise;
            manifest.push_back({"pi0", detail::format_real(p.pi0)});
            phi = p.phi_cs;
        }
        Replication r = prepare_replication(spec, 0);
        data = std::move(r.data);
        const fs::path dir(a.out);
        fs::create_directories(dir);
        save_sparse_tensor(dir / "train.tsv", r.split.train);
        save_sparse_tensor(dir / "validation.tsv", r.split.validation);
        save_sparse_tensor(dir / "test.tsv", r.split.test);
        manifest.push_back({"cold_fraction", detail::format_real(cold_fraction(r.split))});
    } else if (a.design == "iri") {
        IriLikeParams p;
        if (!a.dims.empty()) {
            const auto d = parse_sizes(a.dims);
            if (d.size() != 3) throw std::invalid_argument("iri needs three dims");
            p.stores = d[0], p.products = d[1], p.weeks = d[2];
        }
        if (!a.groups.empty()) {
            const auto g = parse_sizes(a.groups);
            if (g.size() != 3) throw std::invalid_argument("iri needs three subgroup counts");
            p.store_groups = g[0], p.categories = g[1], p.week_groups = g[2];
        }
        p.density = a.density;
        if (a.noise >= 0.0) p.noise_sd = a.noise;
        p.seed = c.seed;
        auto iri = generate_iri_like(p);
        data = std::move(iri.data);
        labels = std::move(iri.product_category);
        if (phi < 0.0) phi = 0.0;
        DatasetSplit split = split_dataset(data.tensor, {0.5, 0.25, 0.25}, derive_seed(c.seed, 1));
        split = inject_cold_start(split, phi, derive_seed(c.seed, 2));
        const fs::path dir(a.out);
        fs::create_directories(dir);
        save_sparse_tensor(dir / "train.tsv", split.train);
        save_sparse_tensor(dir / "validation.tsv", split.validation);
        save_sparse_tensor(dir / "test.tsv", split.test);
        save_labels(dir / "labels.tsv", *labels);
        manifest.push_back({"density", detail::format_real(p.density)});
        manifest.push_back({"cold_fraction", detail::format_real(cold_fraction(split))});
    } else {
        throw std::invalid_argument("unknown design '" + a.design + "' (sim1, sim2, iri)");
    }
    const fs::path dir(a.out);
    save_sparse_tensor(dir / "data.tsv", data.tensor);
    save_subgroups(dir / "groups.tsv", data.groups);
    save_model(dir / "truth.txt", data.truth.model);
    manifest.push_back({"dims", join_sizes(data.tensor.dims())});
    manifest.push_back({"entries", std::to_string(data.tensor.nnz())});
    manifest.push_back({"phi", detail::format_real(phi)});
    manifest.push_back({"noise_sd", detail::format_real(data.truth.noise_sd)});
    manifest.push_back({"divisor", detail::format_real(data.truth.divisor)});
    manifest.push_back({"split", "0.5,0.25,0.25"});
    write_key_values(dir / "manifest.txt", manifest);
    out << "wrote " << data.tensor.nnz() << " entries to " << dir.string() << '\n';
    return Ok;
}

struct FitArgs {
    std::string method = "rem";
    std::size_t rank = 3;
    double lambda = 1.0;
    std::string grid;
    std::string train, validation, groups, labels, out;
    std::size_t label_mode = 2;
    double tol = 1e-4;
    std::size_t max_iter = 1000;
    double init_scale = 0.1;
    std::string gcpd_cells = "cross";
    bool mf_plain = false;
};

inline int do_fit(const FitArgs& a, const Common& c, std::ostream& out, std::ostream& err) {
    const auto method = parse_method(a.method);
    if (!method) throw std::invalid_argument("unknown method '" + a.method + "' (rem, cpd, gcpd, mf, gmi)");
    FitConfig cfg;
    cfg.rank = a.rank;
    cfg.lambda = a.lambda;
    cfg.tolerance = a.tol;
    cfg.max_iterations = a.max_iter;
    cfg.seed = c.seed;
    cfg.init_scale = a.init_scale;
    cfg.threads = c.threads;
    cfg.validate();
    BaselineOptions opt{parse_gcpd_cells(a.gcpd_cells), !a.mf_plain};
    std::optional<std::vector<double>> grid;
    if (!a.grid.empty()) {
        grid = parse_reals(a.grid);
        if (a.validation.empty()) throw std::invalid_argument("--lambda-grid needs --validation");
    }

    SparseTensor train = load_sparse_tensor(a.train);
    const std::vector<std::size_t> dims(train.dims().begin(), train.dims().end());
    SubgroupMap groups = a.groups.empty() ? SubgroupMap::single(dims) : load_subgroups(a.groups, dims);
    if (a.groups.empty() && (*method == Method::REM || *method == Method::GCPD || *method == Method::MF))
        err << "warning: no --groups given, using one subgroup per mode\n";
    std::optional<SparseTensor> validation;
    if (!a.validation.empty()) validation = load_sparse_tensor(a.validation, TensorSchema{dims, true});

    std::optional<ScalingInfo> scaling;
    if (!a.labels.empty()) {
        if (a.label_mode < 1 || a.label_mode > dims.size()) throw std::invalid_argument("--label-mode out of range");
        const std::size_t mode = a.label_mode - 1;
        scaling = fit_group_scaling(train, mode, load_labels(a.labels, dims[mode]));
        train = scaling->apply(train);
        if (validation) validation = scaling->apply(*validation);
    }

    const fs::path dir(a.out);
    fs::create_directories(dir);
    std::vector<std::pair<std::string, std::string>> manifest{
        {"method", method_name(*method)}, {"dims", join_sizes(dims)}, {"rank", std::to_string(cfg.rank)},
        {"seed", std::to_string(cfg.seed)}, {"tolerance", detail::format_real(cfg.tolerance)},
        {"max_iterations", std::to_string(cfg.max_iterations)}, {"init_scale", detail::format_real(cfg.init_scale)},
        {"train_entries", std::to_string(train.nnz())}};

    MethodFit fit;
    try {
        if (grid) {
            auto tuned = tune_lambda(*method, *grid, train, *validation, groups, cfg, opt);
            auto tout = detail::open_out(dir / "tuning.tsv");
            tout << "lambda\tvalidation_rmse\terror\n";
            for (const auto& p : tuned.table)
                tout << detail::format_real(p.lambda) << '\t'
                     << (p.validation_rmse ? detail::format_real(*p.validation_rmse) : "NA") << '\t' << p.error << '\n';
            cfg.lambda = tuned.best_lambda;
            fit = std::move(tuned.best_fit);
        } else {
            fit = fit_method(*method, train, groups, cfg, opt);
        }
    } catch (const NumericalError& e) {
        manifest.push_back({"status", "failed"});
        manifest.push_back({"error", e.what()});
        write_key_values(dir / "manifest.txt", manifest);
        err << "fit failed: " << e.what() << '\n';
        return Numerical;
    }

    manifest.push_back({"lambda", detail::format_real(cfg.lambda)});
    manifest.push_back({"iterations", std::to_string(fit.iterations_used)});
    manifest.push_back({"converged", fit.converged ? "1" : "0"});
    if (const auto* g = std::get_if<GcpdModel>(&fit.model)) {
        manifest.push_back({"gcpd_cells", gcpd_cells_name(g->cells)});
        manifest.push_back({"grand_mean", detail::format_real(g->grand_mean)});
    }
    if (const auto* g = std::get_if<GrandMeanModel>(&fit.model))
        manifest.push_back({"grand_mean", detail::format_real(g->mean)});
    if (*method == Method::MF) manifest.push_back({"mf_subgroups", a.mf_plain ? "0" : "1"});
    if (fit.solver) {
        manifest.push_back({"final_loss", detail::format_real(fit.solver->final_loss())});
        auto log = detail::open_out(dir / "run_log.tsv");
        write_run_log(log, *fit.solver);
    }
    manifest.push_back({"standardized", scaling ? "1" : "0"});
    manifest.push_back({"status", "ok"});
    save_trained_model(dir, fit.model);
    if (scaling) {
        save_scaling(dir / "scaling.tsv", *scaling);
        save_labels(dir / "labels.tsv", scaling->labels);
    }
    write_key_values(dir / "manifest.txt", manifest);
    for (const auto& w : fit.warnings) err << "warning: " << w << '\n';
    out << method_name(*method) << " lambda=" << detail::format_real(cfg.lambda)
        << " iterations=" << fit.iterations_used << " converged=" << (fit.converged ? 1 : 0) << '\n';
    return Ok;
}

struct PredictArgs {
    std::string model, indices, out;
    bool fitted_scale = false;
};

inline int do_predict(const PredictArgs& a, std::ostream& out) {
    const StoredModel m = load_stored_model(a.model);
    const auto idx = read_index_list(a.indices, m.dims.size());
    std::ofstream file;
    if (!a.out.empty()) file = detail::open_out(a.out);
    std::ostream& dst = a.out.empty() ? out : file;
    for (const auto& i : idx) {
        for (index_t v : i) dst << v + 1 << '\t';
        dst << detail::format_real(a.fitted_scale ? m.predict_fitted(i) : m.predict_raw(i)) << '\n';
    }
    if (!dst) throw IoError("write failed: " + (a.out.empty() ? std::string("stdout") : a.out));
    return Ok;
}

struct EvaluateArgs {
    std::string model, test;
    bool raw = false;
};

inline std::string format_metric(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// RMSE and MAE of a stored model on a test tensor. Standardized models are
/// scored on the standardized scale unless raw is set.
inline Evaluation evaluate_stored(const StoredModel& m, const SparseTensor& test, bool raw) {
    if (test.order() != m.dims.size()) throw DataError("test tensor order differs from model order");
    if (!m.scaling) return evaluate(m.model, test);
    if (!raw) return evaluate(m.model, m.scaling->apply(test));
    std::vector<double> pred(test.nnz());
    for (std::size_t e = 0; e < test.nnz(); ++e) pred[e] = m.predict_raw(test.index(e));
    return {rmse(pred, test.values()), mae(pred, test.values()), test.nnz()};
}

inline int do_evaluate(const EvaluateArgs& a, std::ostream& out) {
    const StoredModel m = load_stored_model(a.model);
    const SparseTensor test = load_sparse_tensor(a.test, TensorSchema{m.dims, true});
    const Evaluation ev = evaluate_stored(m, test, a.raw);
    out << "rmse=" << format_metric(ev.rmse) << "\nmae=" << format_metric(ev.mae) << '\n';
    return Ok;
}

struct BenchmarkArgs {
    std::string design = "sim1";
    std::string methods = "rem,gcpd,mf";
    std::string grid = "1,2,3,4,5,6,7,8,9,10,11";
    std::size_t reps = 10;
    std::size_t rank = 3;
    double pi0 = -1.0, phi = -1.0;
    std::size_t n = 500;
    std::string dims, groups;
    double tol = 1e-4;
    std::size_t max_iter = 1000;
    double init_scale = 0.1;
    std::string gcpd_cells = "cross";
    bool mf_plain = false;
    std::string out;
};

inline BenchmarkSpec benchmark_spec(const BenchmarkArgs& a, const Common& c) {
    BenchmarkSpec s;
    if (a.design == "sim2") s.generator = Generator::Sim2;
    else if (a.design != "sim1") throw std::invalid_argument("unknown design '" + a.design + "' (sim1, sim2)");
    s.methods.clear();
    for (auto f : detail::split_fields(a.methods)) {
        const auto m = parse_method(f);
        if (!m) throw std::invalid_argument("unknown method '" + std::string(f) + "'");
        s.methods.push_back(*m);
    }
    s.lambda_grid = parse_reals(a.grid);
    s.replications = a.reps;
    s.rank = a.rank;
    s.base_seed = c.seed;
    s.threads = c.threads;
    s.fit.tolerance = a.tol;
    s.fit.max_iterations = a.max_iter;
    s.fit.init_scale = a.init_scale;
    s.options = {parse_gcpd_cells(a.gcpd_cells), !a.mf_plain};
    if (s.generator == Generator::Sim1) {
        if (!a.dims.empty()) {
            const auto d = parse_sizes(a.dims);
            if (d.size() != 3) throw std::invalid_argument("sim1 needs three dims");
            s.sim1.n1 = d[0], s.sim1.n2 = d[1], s.sim1.n3 = d[2];
        }
        if (!a.groups.empty()) {
            const auto g = parse_sizes(a.groups);
            if (g.size() != 3) throw std::invalid_argument("sim1 needs three subgroup counts");
            s.sim1.m1 = g[0], s.sim1.m2 = g[1], s.sim1.m3 = g[2];
        }
        if (a.pi0 >= 0.0) s.sim1.pi0 = a.pi0;
        if (a.phi >= 0.0) s.sim1.phi_cs = a.phi;
    } else {
        s.sim2.n = a.n;
        if (a.pi0 >= 0.0) s.sim2.pi0 = a.pi0;
        if (a.phi >= 0.0) s.sim2.phi_cs = a.phi;
    }
    s.validate();
    return s;
}

inline int do_benchmark(const BenchmarkArgs& a, const Common& c, std::ostream& out, std::ostream& err) {
    const BenchmarkSpec spec = benchmark_spec(a, c);
    const BenchmarkReport rep = run_benchmark(spec);
    for (const auto& w : rep.warnings) err << "warning: " << w << '\n';
    write_report_table(out, rep);
    if (!a.out.empty()) {
        const fs::path dir(a.out);
        fs::create_directories(dir);
        auto t = detail::open_out(dir / "report.tsv");
        write_report_tsv(t, rep);
        auto r = detail::open_out(dir / "runs.tsv");
        write_runs_tsv(r, rep);
        auto h = detail::open_out(dir / "report.txt");
        write_report_table(h, rep);
        auto m = detail::open_out(dir / "manifest.txt");
        write_manifest(m, spec);
    }
    return Ok;
}

struct InspectArgs {
    std::string tensor, model;
};

inline int do_inspect(const InspectArgs& a, std::ostream& out) {
    if (a.tensor.empty() == a.model.empty()) throw std::invalid_argument("inspect takes exactly one of --tensor, --model");
    if (!a.tensor.empty()) {
        const SparseTensor t = load_sparse_tensor(a.tensor);
        double cells = 1.0;
        for (auto n : t.dims()) cells *= static_cast<double>(n);
        out << "order=" << t.order() << "\ndims=" << join_sizes(t.dims()) << "\nentries=" << t.nnz()
            << "\ndensity=" << detail::format_real(static_cast<double>(t.nnz()) / cells);
        if (!t.empty()) {
            double ss = 0.0;
            const double mean = t.mean();
            for (double v : t.values()) ss += (v - mean) * (v - mean);
            out << "\nmean=" << detail::format_real(mean)
                << "\nsd=" << detail::format_real(t.nnz() > 1 ? std::sqrt(ss / static_cast<double>(t.nnz() - 1)) : 0.0);
        }
        for (std::size_t k = 0; k < t.order(); ++k) {
            std::size_t empty = 0;
            for (std::size_t i = 0; i < t.dim(k); ++i) empty += t.count(k, static_cast<index_t>(i)) == 0;
            out << "\nunobserved_subjects_mode" << k + 1 << '=' << empty;
        }
        out << '\n';
        return Ok;
    }
    const StoredModel m = load_stored_model(a.model);
    out << "method=" << method_name(m.method) << "\ndims=" << join_sizes(m.dims);
    for (const char* key : {"rank", "lambda", "iterations", "converged", "standardized"})
        if (m.manifest.count(key)) out << '\n' << key << '=' << m.manifest.at(key);
    auto factor = [&](const FactorModel& f) {
        const auto id = identifiability_check(f);
        out << "\nk_ranks=" << join_sizes(id.k_ranks) << "\nk_rank_sum=" << id.k_rank_sum << "\nrequired=" << id.required
            << "\nidentifiable=" << (id.identifiable ? 1 : 0);
        for (std::size_t k = 0; k < f.order(); ++k) {
            std::size_t cold = 0;
            for (auto flag : f.cold[k]) cold += flag;
            out << "\ncold_subjects_mode" << k + 1 << '=' << cold;
        }
    };
    if (const auto* f = std::get_if<FactorModel>(&m.model)) factor(*f);
    else if (const auto* mf = std::get_if<MfModel>(&m.model)) factor(mf->matrix);
    else if (const auto* g = std::get_if<GcpdModel>(&m.model)) {
        std::size_t fitted = 0;
        for (const auto& c : g->cell_models) fitted += c.has_value();
        out << "\ncells=" << g->cell_count() << "\nfitted_cells=" << fitted;
    }
    out << '\n';
    return Ok;
}

// ---------------------------------------------------------------------------
// Dispatch

/// Expands "--config FILE" into "--key=value" arguments placed right after
/// the verb, so flags given on the command line override the file.
inline std::vector<std::string> expand_config(std::vector<std::string> args) {
    for (std::size_t i = 1; i < args.size(); ++i) {
        std::string path;
        std::size_t span = 0;
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            span = 2;
        } else if (args[i].starts_with("--config=")) {
            path = args[i].substr(9);
            span = 1;
        } else {
            continue;
        }
        args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + span));
        std::vector<std::string> injected;
        for (const auto& [k, v] : read_key_values(path)) injected.push_back("--" + k + "=" + v);
        const std::size_t at = args.size() > 1 ? 2 : 1;
        args.insert(args.begin() + static_cast<std::ptrdiff_t>(at), injected.begin(), injected.end());
        break;
    }
    return args;
}

inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multilayer tensor factorization with nested subgroups"};
    app.name("nestedcp");
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--threads", common.threads, "Worker threads (1 = sequential)")->check(CLI::PositiveNumber);
        sub->add_option("--seed", common.seed, "Seed for all randomness");
        sub->add_option("--config", "key=value file supplying defaults for this command's flags");
    };

    SimulateArgs sa;
    auto* sim = app.add_subcommand("simulate", "Generate a synthetic dataset with train/validation/test split");
    sim->add_option("--design", sa.design, "sim1, sim2 or iri")->capture_default_str();
    sim->add_option("--pi0", sa.pi0, "Missing fraction (design default if omitted)");
    sim->add_option("--phi", sa.phi, "Fraction of test entries on items absent from training");
    sim->add_option("--noise", sa.noise, "Noise standard deviation (design default if omitted)");
    sim->add_option("--density", sa.density, "Observed fraction for the iri design")->capture_default_str();
    sim->add_option("--dims", sa.dims, "Comma-separated mode sizes (sim1, iri)");
    sim->add_option("--groups", sa.groups, "Comma-separated subgroup counts");
    sim->add_option("--n", sa.n, "Users and items for sim2")->capture_default_str();
    sim->add_option("--contexts", sa.contexts, "Context levels for sim2")->capture_default_str();
    sim->add_option("--out", sa.out, "Output directory")->required();
    add_common(sim);

    FitArgs fa;
    auto* fit = app.add_subcommand("fit", "Fit a model and write a model directory");
    fit->add_option("--method", fa.method, "rem, cpd, gcpd, mf or gmi")->capture_default_str();
    fit->add_option("--rank", fa.rank, "CP rank")->capture_default_str();
    fit->add_option("--lambda", fa.lambda, "Ridge penalty")->capture_default_str();
    fit->add_option("--lambda-grid", fa.grid, "Comma-separated penalties tuned on --validation");
    fit->add_option("--train", fa.train, "Training tensor file")->required();
    fit->add_option("--validation", fa.validation, "Validation tensor file");
    fit->add_option("--groups", fa.groups, "Subgroup file");
    fit->add_option("--labels", fa.labels, "Category labels; standardizes values per category");
    fit->add_option("--label-mode", fa.label_mode, "Mode the labels refer to (1-based)")->capture_default_str();
    fit->add_option("--tol", fa.tol, "Stopping tolerance")->capture_default_str();
    fit->add_option("--max-iter", fa.max_iter, "Iteration cap")->capture_default_str();
    fit->add_option("--init-scale", fa.init_scale, "Standard deviation of the random start")->capture_default_str();
    fit->add_option("--gcpd-cells", fa.gcpd_cells, "cross or first")->capture_default_str();
    fit->add_flag("--mf-plain", fa.mf_plain, "MF without subgroups");
    fit->add_option("--out", fa.out, "Model directory")->required();
    add_common(fit);

    PredictArgs pa;
    auto* pred = app.add_subcommand("predict", "Predict entries listed in an index file");
    pred->add_option("--model", pa.model, "Model directory")->required();
    pred->add_option("--indices", pa.indices, "Index file (1-based)")->required();
    pred->add_option("--out", pa.out, "Output file (stdout if omitted)");
    pred->add_flag("--fitted-scale", pa.fitted_scale, "Keep standardized predictions");
    add_common(pred);

    EvaluateArgs ea;
    auto* eval = app.add_subcommand("evaluate", "RMSE and MAE of a model on a test tensor");
    eval->add_option("--model", ea.model, "Model directory")->required();
    eval->add_option("--test", ea.test, "Test tensor file")->required();
    eval->add_flag("--raw", ea.raw, "Score standardized models on the original scale");
    add_common(eval);

    BenchmarkArgs ba;
    auto* bench = app.add_subcommand("benchmark", "Replicated simulation benchmark");
    bench->add_option("--design", ba.design, "sim1 or sim2")->capture_default_str();
    bench->add_option("--methods", ba.methods, "Comma-separated methods")->capture_default_str();
    bench->add_option("--lambda-grid", ba.grid, "Comma-separated penalties")->capture_default_str();
    bench->add_option("--reps", ba.reps, "Replications")->capture_default_str();
    bench->add_option("--rank", ba.rank, "CP rank")->capture_default_str();
    bench->add_option("--pi0", ba.pi0, "Missing fraction");
    bench->add_option("--phi", ba.phi, "Cold-start fraction");
    bench->add_option("--n", ba.n, "Users and items for sim2")->capture_default_str();
    bench->add_option("--dims", ba.dims, "Comma-separated mode sizes (sim1)");
    bench->add_option("--groups", ba.groups, "Comma-separated subgroup counts (sim1)");
    bench->add_option("--tol", ba.tol, "Stopping tolerance")->capture_default_str();
    bench->add_option("--max-iter", ba.max_iter, "Iteration cap")->capture_default_str();
    bench->add_option("--init-scale", ba.init_scale, "Standard deviation of the random start")->capture_default_str();
    bench->add_option("--gcpd-cells", ba.gcpd_cells, "cross or first")->capture_default_str();
    bench->add_flag("--mf-plain", ba.mf_plain, "MF without subgroups");
    bench->add_option("--out", ba.out, "Report directory");
    add_common(bench);

    InspectArgs ia;
    auto* insp = app.add_subcommand("inspect", "Summarize a tensor file or a model directory");
    insp->add_option("--tensor", ia.tensor, "Tensor file");
    insp->add_option("--model", ia.model, "Model directory");
    add_common(insp);

    try {
        args = expand_config(std::move(args));
    } catch (const IoError& e) {
        err << e.what() << '\n';
        return IoFailure;
    } catch (const DataError& e) {
        err << e.what() << '\n';
        return Usage;
    }

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return Ok;
    } catch (const CLI::ParseError& e) {
        err << e.what() << '\n';
        CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << sub->help();
        return Usage;
    }

    try {
        if (sim->parsed()) return do_simulate(sa, common, out);
        if (fit->parsed()) return do_fit(fa, common, out, err);
        if (pred->parsed()) return do_predict(pa, out);
        if (eval->parsed()) return do_evaluate(ea, out);
        if (bench->parsed()) return do_benchmark(ba, common, out, err);
        if (insp->parsed()) return do_inspect(ia, out);
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return IoFailure;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return IoFailure;
    } catch (const DataError& e) {
        err << "error: " << e.what() << '\n';
        return IoFailure;
    } catch (const NumericalError& e) {
        err << "error: " << e.what() << '\n';
        return Numerical;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return Usage;
    } catch (const std::out_of_range& e) {
        err << "error: " << e.what() << '\n';
        return Usage;
    }
    return Usage;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    return run(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace nestedcp::cli
