#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "qtewma/ewma_kernel.hpp"
#include "qtewma/quanttree.hpp"
#include "qtewma/threshold_table.hpp"

namespace qtewma {

struct DetectorConfig {
    double lambda = 0.03;
    // +inf selects plain QT-EWMA.
    double beta = std::numeric_limits<double>::infinity();
    std::optional<std::size_t> stop_at;

    DetectorVariant variant() const noexcept {
        return beta < std::numeric_limits<double>::infinity() ? DetectorVariant::qt_ewma_update
                                                              : DetectorVariant::qt_ewma;
    }
    void validate() const;
};

/// Throws CalibrationMismatchError unless `meta` calibrates exactly the
/// statistic produced by (partition, config).
void check_compatible(const CalibrationMeta& meta, const QuantTreePartition& partition, const DetectorConfig& config);

struct DetectorState {
    std::vector<double> z;
    std::vector<double> p_hat;
    std::vector<double> inv_p;
    std::size_t t = 0;
    std::optional<std::size_t> detected_at;
};

struct StepResult {
    double statistic = 0.0;
    double threshold = 0.0;
    bool detected = false;
};

/// QT-EWMA and QT-EWMA-update over a fitted partition.
///
/// Holds a reference to the partition, which must outlive the detector.
/// Monitoring stops at the first detection; further steps throw
/// MonitoringHaltedError until reset().
class QtEwmaDetector {
public:
    // Statistic-only monitor: the threshold is +inf and nothing is ever detected.
    QtEwmaDetector(const QuantTreePartition& partition, const DetectorConfig& config);
    QtEwmaDetector(const QuantTreePartition& partition, const DetectorConfig& config, const ThresholdTable& table);
    QtEwmaDetector(const QuantTreePartition& partition, const DetectorConfig& config, ThresholdCurve thresholds);

    StepResult step(std::span<const double> x);
    StepResult step_bin(std::size_t bin);

    // Restarts monitoring from the initial state.
    void reset();

    const DetectorState& state() const noexcept { return state_; }
    const DetectorConfig& config() const noexcept { return config_; }
    const QuantTreePartition& partition() const noexcept { return *partition_; }

    // Statistic of the current state, without stepping.
    double current_statistic() const noexcept;

private:
    const QuantTreePartition* partition_;
    DetectorConfig config_;
    EwmaParams params_;
    ThresholdCurve thresholds_;
    DetectorState state_;
};

struct BatchState {
    std::vector<std::size_t> counts;
    std::size_t filled = 0;
    std::size_t batches = 0;
    std::optional<std::size_t> detected_at;
};

struct BatchResult {
    double statistic = 0.0;
    bool detected = false;
    // Sample index closing the batch (batch count times batch size).
    std::size_t t = 0;
};

/// Pearson statistic sum_j (n_j - nu pi_j)^2 / (nu pi_j) over a batch of nu bin counts.
double batch_pearson_statistic(std::span<const std::size_t> counts, std::span<const double> pi_tilde);

/// Batch-wise QuantTree monitor: one Pearson test per non-overlapping batch
/// of `batch_size` samples against a constant threshold.
class BatchPearsonDetector {
public:
    BatchPearsonDetector(const QuantTreePartition& partition, std::size_t batch_size, double threshold);
    BatchPearsonDetector(const QuantTreePartition& partition, const ThresholdTable& table);

    std::optional<BatchResult> step(std::span<const double> x);
    std::optional<BatchResult> step_bin(std::size_t bin);
    void reset();

    const BatchState& state() const noexcept { return state_; }
    std::size_t batch_size() const noexcept { return batch_size_; }
    double threshold() const noexcept { return threshold_; }

private:
    const QuantTreePartition* partition_;
    std::size_t batch_size_;
    double threshold_;
    BatchState state_;
};

struct TraceRow {
    std::size_t t = 0;
    double statistic = 0.0;
    double threshold = 0.0;
    bool detected = false;
};

struct RunResult {
    bool detected = false;
    std::optional<std::size_t> t_star;
    std::size_t consumed = 0;
    std::vector<TraceRow> trace;
};

/// Feeds `next(buffer)` into the detector until detection or until `next`
/// returns false. `next` writes one d-vector into the buffer.
template <class Detector, class Source>
RunResult run_stream(Detector& detector, Source&& next, bool capture_trace = false) {
    RunResult result;
    std::vector<double> x(detector.partition().dim);
    while (next(std::span<double>(x))) {
        ++result.consumed;
        const StepResult r = detector.step(x);
        if (capture_trace) {
            result.trace.push_back({result.consumed, r.statistic, r.threshold, r.detected});
        }
        if (r.detected) {
            result.detected = true;
            result.t_star = result.consumed;
            break;
        }
    }
    return result;
}

RunResult run_stream_batch(BatchPearsonDetector& detector, const SampleMatrix& stream);

}  // namespace qtewma
