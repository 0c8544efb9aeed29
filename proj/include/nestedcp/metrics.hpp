#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "nestedcp/baselines.hpp"
#include "nestedcp/error.hpp"
#include "nestedcp/solver.hpp"
#include "nestedcp/sparse_tensor.hpp"

namespace nestedcp {

namespace detail {

inline void check_lengths(std::span<const double> predictions, std::span<const double> actuals) {
    if (predictions.empty()) throw std::invalid_argument("metric of an empty sequence");
    if (predictions.size() != actuals.size()) throw std::invalid_argument("prediction and actual lengths differ");
}

}  // namespace detail

inline double sum_squared_error(std::span<const double> predictions, std::span<const double> actuals) {
    detail::check_lengths(predictions, actuals);
    double s = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double r = actuals[i] - predictions[i];
        s += r * r;
    }
    return s;
}

/// sqrt(mean((y - yhat)^2))
inline double rmse(std::span<const double> predictions, std::span<const double> actuals) {
    return std::sqrt(sum_squared_error(predictions, actuals) / static_cast<double>(predictions.size()));
}

/// mean(|y - yhat|)
inline double mae(std::span<const double> predictions, std::span<const double> actuals) {
    detail::check_lengths(predictions, actuals);
    double s = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i) s += std::abs(actuals[i] - predictions[i]);
    return s / static_cast<double>(predictions.size());
}

struct Evaluation {
    double rmse = 0.0;
    double mae = 0.0;
    std::size_t count = 0;
};

inline Evaluation evaluate(const TrainedModel& model, const SparseTensor& data) {
    if (data.empty()) throw DataError("evaluation set is empty");
    const auto pred = predict_all(model, data);
    return {rmse(pred, data.values()), mae(pred, data.values()), data.nnz()};
}

inline Evaluation evaluate(const FactorModel& model, const SparseTensor& data) {
    return evaluate(TrainedModel(model), data);
}

// ---------------------------------------------------------------------------
// Tuning

struct TuningPoint {
    double lambda = 0.0;
    std::optional<double> validation_rmse;  ///< absent when the fit failed
    std::string error;
};

struct TuningResult {
    double best_lambda = 0.0;
    double best_rmse = 0.0;
    std::vector<TuningPoint> table;  ///< ascending lambda
    MethodFit best_fit;              ///< fit at best_lambda, reused for testing
};

/// Fits on train at every grid point (ascending) and keeps the lambda with
/// the smallest validation RMSE. A later lambda must beat the incumbent by
/// more than 1e-12 to replace it, so near ties go to the smaller lambda.
inline TuningResult tune_lambda(Method method, std::vector<double> grid, const SparseTensor& train,
                                const SparseTensor& validation, const SubgroupMap& groups, const FitConfig& cfg,
                                const BaselineOptions& opt = {}) {
    if (grid.empty()) throw std::invalid_argument("lambda grid is empty");
    if (validation.empty()) throw DataError("validation set is empty");
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    TuningResult res;
    bool found = false;
    for (double lambda : grid) {
        TuningPoint pt{lambda, std::nullopt, {}};
        FitConfig c = cfg;
        c.lambda = lambda;
        try {
            MethodFit fit = fit_method(method, train, groups, c, opt);
            const double v = evaluate(fit.model, validation).rmse;
            if (!std::isfinite(v)) throw NumericalError("non-finite validation RMSE");
            pt.validation_rmse = v;
            if (!found || v < res.best_rmse - 1e-12) {
                res.best_lambda = lambda;
                res.best_rmse = v;
                res.best_fit = std::move(fit);
                found = true;
            }
        } catch (const NumericalError& e) {
            pt.error = e.what();
        }
        res.table.push_back(std::move(pt));
    }
    if (!found) throw NumericalError("every fit in the lambda grid failed");
    return res;
}

}  // namespace nestedcp
