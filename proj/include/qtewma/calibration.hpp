#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qtewma/threshold_table.hpp"

namespace qtewma {

inline constexpr std::size_t kMinReplicates = 10000;
inline constexpr std::size_t kRecommendedReplicates = 100000;

using WarningSink = std::function<void(const std::string&)>;

// Writes "warning: ..." to stderr.
void default_warning_sink(const std::string& message);

/// Replicate-major statistic paths: values[r * length + (t - 1)] = T_t of replicate r.
struct StatisticPaths {
    std::size_t replicates = 0;
    std::size_t length = 0;
    std::vector<double> values;

    std::span<const double> path(std::size_t r) const { return {values.data() + r * length, length}; }
    double at(std::size_t r, std::size_t t) const { return values[r * length + (t - 1)]; }
};

/// Sees every simulated step of the serial reference: replicate, t, the
/// EWMA vector after the step and the drawn bin.
using PathObserver = std::function<void(std::size_t, std::size_t, std::span<const double>, std::size_t)>;

struct CalibrationOptions {
    // 0 = OpenMP default.
    int workers = 0;
    std::size_t memory_budget_bytes = std::size_t{2} << 30;
    WarningSink warn = default_warning_sink;
    PathObserver observer;
};

/// Simulates R stationary statistic paths without building any partition:
/// each replicate draws bin probabilities from the Dirichlet law, then one
/// categorical bin per step, and runs the detector recursion. Serial; kept as
/// the reference for the time-major parallel calibrator.
StatisticPaths simulate_statistic_paths(const CalibrationMeta& meta, const CalibrationOptions& options = {});

/// Per-step (1 - alpha) quantiles of T_t among replicates that never exceeded
/// an earlier threshold. Stops (truncated = true) once fewer than
/// `survivor_floor` replicates remain.
struct QuantileSeries {
    std::vector<ThresholdPoint> points;
    bool truncated = false;
};

QuantileSeries conditional_quantile_thresholds(const StatisticPaths& paths, double alpha,
                                               std::size_t survivor_floor = 20, const WarningSink& warn = {});

/// Empirical (1 - alpha)-quantile, linearly interpolated between order
/// statistics (Hyndman-Fan type 7). Reorders `values`.
double upper_quantile(std::span<double> values, double alpha);

struct PolynomialFit {
    std::vector<double> coeffs;
    double rms = 0.0;
};

/// Weighted least squares of h_t on {1, 1/t, ..., 1/t^degree}, weights = survivors.
PolynomialFit fit_threshold_polynomial(std::span<const ThresholdPoint> raw, int degree);

/// End-to-end calibration. Runs the time-major parallel simulation: every
/// surviving replicate advances one step, the quantile is taken, and
/// replicates above it are retired. The result does not depend on the worker
/// count.
ThresholdTable calibrate(const CalibrationMeta& meta, const CalibrationOptions& options = {});

/// Constant threshold for the batch Pearson monitor, with per-batch level
/// alpha = batch_size / arl0_target.
ThresholdTable calibrate_batch(const CalibrationMeta& meta, const CalibrationOptions& options = {});

/// Fills derived meta fields (alpha, variant) and validates the tuple.
CalibrationMeta normalized(CalibrationMeta meta);

}  // namespace qtewma
