#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qtewma/bench.hpp"
#include "qtewma/calibration.hpp"
#include "qtewma/datagen.hpp"

namespace qtewma {

inline constexpr int kReportSchemaVersion = 1;
inline constexpr const char* kTableCacheEnv = "QTEWMA_TABLE_CACHE";

/// Where a bench run gets its thresholds: an explicit file, or a calibration
/// (cached under the table cache directory when one is configured).
struct TableSource {
    std::optional<std::filesystem::path> path;
    std::size_t replicates = kRecommendedReplicates;
    std::size_t length = 5000;
    std::uint64_t seed = 1;
    int degree = 7;
};

enum class ExperimentKind { arl0, delay_far, auc_by_lag };

struct ExperimentConfig {
    std::string name = "experiment";
    ExperimentKind kind = ExperimentKind::arl0;
    StreamSpec stream;
    // AUC only: defaults to `stream` without its change block.
    std::optional<StreamSpec> stationary;
    std::vector<MonitorSetup> monitors;
    double arl0_target = 500.0;
    TableSource table;
    std::size_t runs = 2000;
    std::uint64_t seed = 0;
    std::vector<std::size_t> lags;
    int workers = 0;
};

StreamSpec stream_spec_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const StreamSpec& spec);
ExperimentConfig experiment_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const ExperimentConfig& config);

std::string to_string(ExperimentKind kind);

/// Loads, or calibrates and caches, the table for `meta`.
ThresholdTable resolve_table(const CalibrationMeta& meta, const TableSource& source,
                             const std::optional<std::filesystem::path>& cache_dir,
                             const CalibrationOptions& options = {});

// Value of QTEWMA_TABLE_CACHE, if set and non-empty.
std::optional<std::filesystem::path> default_table_cache();

struct ExperimentReport {
    nlohmann::ordered_json config;
    std::vector<RunRecord> records;
    std::optional<Arl0Estimate> arl0;
    std::optional<DelayFarEstimate> delay_far;
    std::vector<std::string> auc_labels;
    std::vector<std::vector<AucPoint>> auc;
    std::vector<std::string> deviations;
    std::vector<std::string> notes;
};

ExperimentReport run_experiment(const ExperimentConfig& config,
                                const std::optional<std::filesystem::path>& cache_dir = default_table_cache(),
                                const CalibrationOptions& options = {});

nlohmann::ordered_json to_json(const ExperimentReport& report);

/// Throws ParseError naming the first field that violates the report schema.
void validate_report(const nlohmann::json& report);

}  // namespace qtewma
