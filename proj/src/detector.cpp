#include "qtewma/detector.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "qtewma/errors.hpp"

namespace qtewma {

namespace {

EwmaParams make_params(const DetectorConfig& c, std::size_t n_train) {
    return {c.lambda, c.beta, n_train, c.stop_at.value_or(0)};
}

}  // namespace

void DetectorConfig::validate() const {
    if (!(lambda > 0.0 && lambda < 1.0)) {
        throw InvalidArgumentError("lambda must lie in (0, 1)");
    }
    if (!(beta >= 1.0)) {
        throw InvalidArgumentError("beta must be >= 1 (or inf)");
    }
    if (stop_at && *stop_at == 0) {
        throw InvalidArgumentError("stop_at must be positive");
    }
}

void check_compatible(const CalibrationMeta& meta, const QuantTreePartition& partition, const DetectorConfig& config) {
    auto fail = [](const std::string& what) { throw CalibrationMismatchError("threshold table mismatch: " + what); };
    if (meta.variant != config.variant()) {
        fail("table calibrates " + to_string(meta.variant) + ", detector runs " + to_string(config.variant()));
    }
    if (meta.lambda != config.lambda) {
        fail("lambda");
    }
    if (meta.bins() != partition.bins()) {
        fail("K = " + std::to_string(meta.bins()) + " vs " + std::to_string(partition.bins()));
    }
    if (meta.n_train != partition.n_train) {
        fail("N = " + std::to_string(meta.n_train) + " vs " + std::to_string(partition.n_train));
    }
    if (allocate_bin_counts(meta.target_probs, meta.n_train) != partition.bin_counts) {
        fail("target probabilities");
    }
    if (meta.variant == DetectorVariant::qt_ewma_update) {
        if (meta.beta != config.beta) {
            fail("beta");
        }
        if (meta.stop_at != config.stop_at) {
            fail("stop_at");
        }
    }
}

QtEwmaDetector::QtEwmaDetector(const QuantTreePartition& partition, const DetectorConfig& config)
    : QtEwmaDetector(partition, config, ThresholdCurve{}) {}

QtEwmaDetector::QtEwmaDetector(const QuantTreePartition& partition, const DetectorConfig& config,
                               const ThresholdTable& table)
    : QtEwmaDetector(partition, config, ThresholdCurve{}) {
    check_compatible(table.meta, partition, config);
    thresholds_ = table.curve();
}

QtEwmaDetector::QtEwmaDetector(const QuantTreePartition& partition, const DetectorConfig& config,
                               ThresholdCurve thresholds)
    : partition_(&partition),
      config_(config),
      params_(make_params(config, partition.n_train)),
      thresholds_(std::move(thresholds)) {
    config_.validate();
    reset();
}

void QtEwmaDetector::reset() {
    const std::size_t k = partition_->bins();
    state_.z.resize(k);
    state_.p_hat.resize(k);
    state_.inv_p.resize(k);
    ewma_reset(state_.z, state_.p_hat, state_.inv_p, partition_->pi_tilde);
    state_.t = 0;
    state_.detected_at.reset();
}

StepResult QtEwmaDetector::step(std::span<const double> x) {
    return step_bin(partition_->lookup(x));
}

StepResult QtEwmaDetector::step_bin(std::size_t bin) {
    if (state_.detected_at) {
        throw MonitoringHaltedError("change already detected at t=" + std::to_string(*state_.detected_at));
    }
    if (bin >= partition_->bins()) {
        throw ShapeError("bin index out of range");
    }
    ++state_.t;
    StepResult r;
    r.statistic = ewma_step(state_.z, state_.p_hat, state_.inv_p, bin, state_.t, params_);
    r.threshold = thresholds_.at(state_.t);
    r.detected = r.statistic > r.threshold;
    if (r.detected) {
        state_.detected_at = state_.t;
    }
    return r;
}

double QtEwmaDetector::current_statistic() const noexcept {
    double stat = 0.0;
    for (std::size_t j = 0; j < state_.z.size(); ++j) {
        const double d = state_.z[j] - state_.p_hat[j];
        stat += d * d * state_.inv_p[j];
    }
    return stat;
}

double batch_pearson_statistic(std::span<const std::size_t> counts, std::span<const double> pi_tilde) {
    double nu = 0.0;
    for (std::size_t c : counts) {
        nu += static_cast<double>(c);
    }
    double stat = 0.0;
    for (std::size_t j = 0; j < counts.size(); ++j) {
        const double expected = nu * pi_tilde[j];
        const double d = static_cast<double>(counts[j]) - expected;
        stat += d * d / expected;
    }
    return stat;
}

BatchPearsonDetector::BatchPearsonDetector(const QuantTreePartition& partition, std::size_t batch_size,
                                           double threshold)
    : partition_(&partition), batch_size_(batch_size), threshold_(threshold) {
    if (batch_size_ == 0) {
        throw InvalidArgumentError("batch size must be positive");
    }
    reset();
}

BatchPearsonDetector::BatchPearsonDetector(const QuantTreePartition& partition, const ThresholdTable& table)
    : BatchPearsonDetector(partition, table.meta.batch_size, table.raw.empty() ? 0.0 : table.raw.front().h) {
    const auto& meta = table.meta;
    if (meta.variant != DetectorVariant::batch_pearson) {
        throw CalibrationMismatchError("threshold table mismatch: table calibrates " + to_string(meta.variant) +
                                       ", detector runs batch-pearson");
    }
    if (meta.n_train != partition.n_train ||
        allocate_bin_counts(meta.target_probs, meta.n_train) != partition.bin_counts) {
        throw CalibrationMismatchError("threshold table mismatch: partition (K, N, pi)");
    }
}

void BatchPearsonDetector::reset() {
    state_.counts.assign(partition_->bins(), 0);
    state_.filled = 0;
    state_.batches = 0;
    state_.detected_at.reset();
}

std::optional<BatchResult> BatchPearsonDetector::step(std::span<const double> x) {
    return step_bin(partition_->lookup(x));
}

std::optional<BatchResult> BatchPearsonDetector::step_bin(std::size_t bin) {
    if (state_.detected_at) {
        throw MonitoringHaltedError("change already detected at t=" + std::to_string(*state_.detected_at));
    }
    ++state_.counts[bin];
    if (++state_.filled < batch_size_) {
        return std::nullopt;
    }
    ++state_.batches;
    BatchResult r;
    r.statistic = batch_pearson_statistic(state_.counts, partition_->pi_tilde);
    r.detected = r.statistic > threshold_;
    r.t = state_.batches * batch_size_;
    if (r.detected) {
        state_.detected_at = r.t;
    }
    std::fill(state_.counts.begin(), state_.counts.end(), 0);
    state_.filled = 0;
    return r;
}

RunResult run_stream_batch(BatchPearsonDetector& detector, const SampleMatrix& stream) {
    RunResult result;
    for (std::size_t i = 0; i < stream.rows(); ++i) {
        ++result.consumed;
        if (auto r = detector.step(stream.row(i)); r && r->detected) {
            result.detected = true;
            result.t_star = r->t;
            break;
        }
    }
    return result;
}

}  // namespace qtewma
