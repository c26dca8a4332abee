#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qtewma/datagen.hpp"
#include "qtewma/detector.hpp"
#include "qtewma/threshold_table.hpp"

namespace qtewma {

/// Which monitor to run and how, plus the histogram it is built on.
struct MonitorSetup {
    std::string label = "qt-ewma";
    DetectorVariant variant = DetectorVariant::qt_ewma;
    DetectorConfig ewma;
    std::size_t batch_size = 32;
    std::vector<double> target_probs;
    std::size_t n_train = 0;

    CalibrationMeta calibration_meta(double arl0_target) const;
};

struct RunRecord {
    std::size_t run = 0;
    std::uint64_t seed = 0;
    std::optional<std::size_t> t_star;
    std::optional<std::size_t> tau;
    std::size_t consumed = 0;
    bool false_alarm = false;
};

/// Runs `runs` independent (training set, partition, stream) triples in
/// parallel. Records come back ordered by run index whatever the worker count.
std::vector<RunRecord> simulate_runs(const MonitorSetup& setup, const ThresholdTable& table,
                                     const StreamFactory& streams, std::size_t runs, std::uint64_t seed,
                                     int workers = 0);

struct Arl0Estimate {
    // Censored-geometric estimate: total exposure / number of detections.
    double arl0 = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    // Plain average of t* over runs that detected.
    double mean_detected = 0.0;
    std::size_t runs = 0;
    std::size_t detected = 0;
    std::size_t censored = 0;
};

Arl0Estimate aggregate_arl0(std::span<const RunRecord> records);

/// Empirical ARL0 on a stationary stream family. Refuses fewer than 100 runs.
Arl0Estimate measure_arl0(const MonitorSetup& setup, const ThresholdTable& table, const StreamFactory& streams,
                          std::size_t runs, std::uint64_t seed, int workers = 0,
                          std::vector<RunRecord>* records_out = nullptr);

struct DelayFarEstimate {
    // Mean t* - tau over runs detecting at or after tau; absent when none did.
    std::optional<double> arl1;
    double arl1_sd = 0.0;
    double false_alarm_rate = 0.0;
    // 1 - (1 - alpha)^(tau - 1): probability of an alarm strictly before tau.
    double target_false_alarm_rate = 0.0;
    std::size_t runs = 0;
    std::size_t false_alarms = 0;
    std::size_t delayed = 0;
    std::size_t censored = 0;
};

DelayFarEstimate aggregate_delay_far(std::span<const RunRecord> records, double alpha);

DelayFarEstimate measure_delay_far(const MonitorSetup& setup, const ThresholdTable& table,
                                   const StreamFactory& streams, std::size_t runs, std::uint64_t seed,
                                   int workers = 0, std::vector<RunRecord>* records_out = nullptr);

/// Mann-Whitney AUC with midranks: P(pos > neg) + P(pos == neg) / 2.
double mann_whitney_auc(std::span<const double> positives, std::span<const double> negatives);

/// Statistic values T_{tau + lag} for several monitors over the same runs.
struct AucStudy {
    std::vector<std::string> labels;
    std::vector<std::size_t> lags;
    // [monitor][lag][run]
    std::vector<std::vector<std::vector<double>>> changed;
    std::vector<std::vector<std::vector<double>>> stationary;
    std::vector<std::string> notes;

    double auc(std::size_t monitor, std::size_t lag_index) const;
};

/// Every setup must share target_probs and n_train: each run fits one
/// partition and feeds the same stream to all monitors. Lags beyond the
/// stream length are skipped with a note.
AucStudy collect_auc_statistics(std::span<const MonitorSetup> setups, const StreamFactory& stationary,
                                const StreamFactory& changed, std::span<const std::size_t> lags,
                                std::size_t runs, std::uint64_t seed, int workers = 0);

struct AucPoint {
    std::size_t lag = 0;
    double auc = 0.0;
};

std::vector<std::vector<AucPoint>> auc_by_lag(const AucStudy& study);

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

/// Percentile bootstrap (95%) of AUC(a) - AUC(b) at one lag, resampling runs
/// within each class and keeping the monitors paired.
Interval bootstrap_auc_difference(const AucStudy& study, std::size_t a, std::size_t b, std::size_t lag_index,
                                  std::size_t resamples, std::uint64_t seed);

/// Percentile bootstrap (95%) of mean(x) - mean(y) for independent samples.
Interval bootstrap_mean_difference(std::span<const double> x, std::span<const double> y, std::size_t resamples,
                                   std::uint64_t seed);

}  // namespace qtewma
