#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace qtewma {

enum class DetectorVariant { qt_ewma, qt_ewma_update, batch_pearson };

std::string to_string(DetectorVariant v);
DetectorVariant variant_from_string(const std::string& s);

/// Everything that determines a threshold table. Two tables with equal meta
/// (minus the fit diagnostics) have identical raw thresholds.
struct CalibrationMeta {
    DetectorVariant variant = DetectorVariant::qt_ewma;
    double lambda = 0.03;
    std::vector<double> target_probs;
    std::size_t n_train = 0;
    double beta = std::numeric_limits<double>::infinity();
    std::optional<std::size_t> stop_at;
    double arl0_target = 500.0;
    double alpha = 1.0 / 500.0;
    std::size_t replicates = 100000;
    std::size_t length = 5000;
    std::uint64_t seed = 0;
    int degree = 7;
    std::size_t batch_size = 0;
    std::size_t reservoir_cap = 200000;
    std::size_t survivor_floor = 20;

    std::size_t bins() const noexcept { return target_probs.size(); }
};

struct ThresholdPoint {
    std::size_t t = 0;
    double h = 0.0;
    std::size_t survivors = 0;

    friend bool operator==(const ThresholdPoint&, const ThresholdPoint&) = default;
};

enum class ThresholdEvaluation {
    // Raw Monte Carlo quantile while t is inside the simulated horizon, polynomial beyond it.
    hybrid,
    // Polynomial for every t.
    polynomial,
};

/// Threshold schedule h(t). The polynomial part is sum_m c_m t^{-m}, clamped
/// to the range of the raw Monte Carlo quantiles.
class ThresholdCurve {
public:
    ThresholdCurve() = default;  // never fires
    ThresholdCurve(std::vector<double> coeffs, double lo, double hi, std::vector<double> raw = {})
        : coeffs_(std::move(coeffs)), raw_(std::move(raw)), lo_(lo), hi_(hi) {}

    static ThresholdCurve constant(double h) { return ThresholdCurve({h}, h, h); }

    double at(std::size_t t) const noexcept {
        if (t >= 1 && t <= raw_.size()) {
            return raw_[t - 1];
        }
        return polynomial(t);
    }

    double polynomial(std::size_t t) const noexcept {
        if (coeffs_.empty()) {
            return std::numeric_limits<double>::infinity();
        }
        const double x = 1.0 / static_cast<double>(t);
        double acc = 0.0;
        for (auto it = coeffs_.rbegin(); it != coeffs_.rend(); ++it) {
            acc = acc * x + *it;
        }
        return acc < lo_ ? lo_ : (acc > hi_ ? hi_ : acc);
    }

private:
    std::vector<double> coeffs_;
    std::vector<double> raw_;
    double lo_ = 0.0;
    double hi_ = 0.0;
};

struct ThresholdTable {
    CalibrationMeta meta;
    std::vector<ThresholdPoint> raw;
    std::vector<double> poly_coeffs;
    double fit_rms = 0.0;
    // Set when the survivor count dropped below the floor before meta.length.
    bool truncated = false;

    ThresholdCurve curve(ThresholdEvaluation mode = ThresholdEvaluation::hybrid) const;
    double at(std::size_t t) const { return curve().at(t); }
};

std::string to_text(const ThresholdTable& table);
ThresholdTable table_from_text(const std::string& text);
void save_table(const ThresholdTable& table, const std::filesystem::path& path);
ThresholdTable load_table(const std::filesystem::path& path);

}  // namespace qtewma
