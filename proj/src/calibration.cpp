#include "qtewma/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include <Eigen/Dense>

#include "qtewma/errors.hpp"
#include "qtewma/detector.hpp"
#include "qtewma/ewma_kernel.hpp"
#include "qtewma/parallel.hpp"
#include "qtewma/quanttree.hpp"
#include "qtewma/rng.hpp"

namespace qtewma {

namespace {

// Struct-of-arrays state of R independent replicates.
class ReplicateBank {
public:
    ReplicateBank(const CalibrationMeta& meta, std::size_t replicates)
        : k_(meta.bins()),
          params_{meta.lambda, meta.beta, meta.n_train, meta.stop_at.value_or(0)},
          z_(replicates * k_),
          p_hat_(replicates * k_),
          inv_p_(replicates * k_),
          cdf_(replicates * k_),
          counts_(allocate_bin_counts(meta.target_probs, meta.n_train)),
          pi_tilde_(compute_pi_tilde(counts_, meta.n_train)),
          seed_(meta.seed) {
        rngs_.reserve(replicates);
        for (std::size_t r = 0; r < replicates; ++r) {
            rngs_.push_back(Rng::substream(seed_, r));
        }
    }

    static std::size_t bytes_per_replicate(std::size_t k) { return 4 * k * sizeof(double) + sizeof(Rng); }

    void init(std::size_t r) {
        auto probs = slice(cdf_, r);
        draw_bin_probabilities(counts_, BinSampler::dirichlet, rngs_[r], probs);
        double acc = 0.0;
        for (double& p : probs) {
            acc += p;
            p = acc;
        }
        probs.back() = 1.0;
        ewma_reset(slice(z_, r), slice(p_hat_, r), slice(inv_p_, r), pi_tilde_);
    }

    double step(std::size_t r, std::size_t t, std::size_t* drawn = nullptr) {
        const auto cdf = slice(cdf_, r);
        const double u = rngs_[r].uniform();
        const auto pos = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        const std::size_t bin = std::min(pos, k_ - 1);
        if (drawn != nullptr) {
            *drawn = bin;
        }
        return ewma_step(slice(z_, r), slice(p_hat_, r), slice(inv_p_, r), bin, t, params_);
    }

    std::span<const double> z(std::size_t r) { return slice(z_, r); }

private:
    std::span<double> slice(std::vector<double>& v, std::size_t r) { return {v.data() + r * k_, k_}; }

    std::size_t k_;
    EwmaParams params_;
    std::vector<double> z_;
    std::vector<double> p_hat_;
    std::vector<double> inv_p_;
    std::vector<double> cdf_;
    std::vector<std::size_t> counts_;
    std::vector<double> pi_tilde_;
    std::vector<Rng> rngs_;
    std::uint64_t seed_;
};

void check_replicates(const CalibrationMeta& meta, const WarningSink& warn) {
    if (meta.replicates < kMinReplicates) {
        throw InvalidArgumentError("calibration needs at least " + std::to_string(kMinReplicates) + " replicates");
    }
    if (meta.replicates < kRecommendedReplicates && warn) {
        warn("only " + std::to_string(meta.replicates) + " replicates; thresholds far in the tail will be noisy");
    }
}

}  // namespace

void default_warning_sink(const std::string& message) {
    std::cerr << "warning: " << message << '\n';
}

CalibrationMeta normalized(CalibrationMeta meta) {
    validate_target_probs(meta.target_probs);
    if (!(meta.lambda > 0.0 && meta.lambda < 1.0)) {
        throw InvalidArgumentError("lambda must lie in (0, 1)");
    }
    if (!(meta.beta >= 1.0)) {
        throw InvalidArgumentError("beta must be >= 1 (or inf)");
    }
    if (meta.n_train < meta.bins()) {
        throw InvalidArgumentError("N must be at least K");
    }
    if (!(meta.arl0_target > 1.0)) {
        throw InvalidArgumentError("target ARL0 must exceed 1");
    }
    if (meta.variant == DetectorVariant::batch_pearson) {
        if (meta.batch_size == 0) {
            throw InvalidArgumentError("batch calibration needs a batch size");
        }
        meta.alpha = static_cast<double>(meta.batch_size) / meta.arl0_target;
        meta.degree = 0;
        meta.length = meta.batch_size;
    } else {
        meta.variant = meta.beta < std::numeric_limits<double>::infinity() ? DetectorVariant::qt_ewma_update
                                                                           : DetectorVariant::qt_ewma;
        if (meta.variant == DetectorVariant::qt_ewma) {
            meta.stop_at.reset();
        }
        meta.alpha = 1.0 / meta.arl0_target;
        meta.batch_size = 0;
        if (meta.degree < 1) {
            throw FitError("polynomial degree must be at least 1");
        }
        if (meta.length < 1) {
            throw InvalidArgumentError("simulation length must be positive");
        }
    }
    if (!(meta.alpha > 0.0 && meta.alpha <= 0.5)) {
        throw InvalidArgumentError("per-step false alarm probability must lie in (0, 0.5]");
    }
    if (meta.stop_at && *meta.stop_at == 0) {
        throw InvalidArgumentError("stop_at must be positive");
    }
    return meta;
}

double upper_quantile(std::span<double> values, double alpha) {
    if (values.empty()) {
        throw InvalidArgumentError("quantile of an empty sample");
    }
    // Linear interpolation between order statistics at (1 - alpha)(n - 1).
    const std::size_t n = values.size();
    const double pos = (1.0 - alpha) * static_cast<double>(n - 1);
    const auto i = std::min(static_cast<std::size_t>(std::floor(pos)), n - 1);
    const double frac = pos - static_cast<double>(i);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(i), values.end());
    const double lo = values[i];
    if (i + 1 >= n || frac == 0.0) {
        return lo;
    }
    const double hi = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(i) + 1, values.end());
    return lo + frac * (hi - lo);
}

StatisticPaths simulate_statistic_paths(const CalibrationMeta& meta_in, const CalibrationOptions& options) {
    const CalibrationMeta meta = normalized(meta_in);
    check_replicates(meta, options.warn);
    const std::size_t cells = meta.replicates * meta.length;
    if (cells > options.memory_budget_bytes / sizeof(double)) {
        throw BudgetExceededError("materializing " + std::to_string(meta.replicates) + " x " +
                                  std::to_string(meta.length) +
                                  " statistic paths exceeds the memory budget; use streaming calibration");
    }
    StatisticPaths paths;
    paths.replicates = meta.replicates;
    paths.length = meta.length;
    paths.values.resize(cells);
    // One replicate at a time keeps the reference path independent of the bank layout.
    ReplicateBank bank(meta, meta.replicates);
    for (std::size_t r = 0; r < meta.replicates; ++r) {
        bank.init(r);
        double* out = paths.values.data() + r * meta.length;
        for (std::size_t t = 1; t <= meta.length; ++t) {
            std::size_t bin = 0;
            out[t - 1] = bank.step(r, t, &bin);
            if (options.observer) {
                options.observer(r, t, bank.z(r), bin);
            }
        }
    }
    return paths;
}

QuantileSeries conditional_quantile_thresholds(const StatisticPaths& paths, double alpha, std::size_t survivor_floor,
                                               const WarningSink& warn) {
    if (!(alpha > 0.0 && alpha <= 0.5)) {
        throw InvalidArgumentError("alpha must lie in (0, 0.5]");
    }
    QuantileSeries series;
    std::vector<std::size_t> alive(paths.replicates);
    std::iota(alive.begin(), alive.end(), 0);
    std::vector<double> values;
    for (std::size_t t = 1; t <= paths.length; ++t) {
        if (alive.size() < std::max<std::size_t>(survivor_floor, 1)) {
            series.truncated = true;
            if (warn) {
                warn("only " + std::to_string(alive.size()) + " surviving replicates at t=" + std::to_string(t) +
                     "; raw thresholds truncated");
            }
            break;
        }
        values.resize(alive.size());
        for (std::size_t i = 0; i < alive.size(); ++i) {
            values[i] = paths.at(alive[i], t);
        }
        const double h = upper_quantile(values, alpha);
        series.points.push_back({t, h, alive.size()});
        std::erase_if(alive, [&](std::size_t r) { return paths.at(r, t) > h; });
    }
    return series;
}

PolynomialFit fit_threshold_polynomial(std::span<const ThresholdPoint> raw, int degree) {
    if (degree < 1) {
        throw FitError("polynomial degree must be at least 1");
    }
    const auto cols = static_cast<Eigen::Index>(degree) + 1;
    const auto rows = static_cast<Eigen::Index>(raw.size());
    if (rows < cols) {
        throw FitError("need at least " + std::to_string(cols) + " thresholds to fit degree " +
                       std::to_string(degree));
    }
    Eigen::MatrixXd a(rows, cols);
    Eigen::VectorXd b(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const auto& p = raw[static_cast<std::size_t>(i)];
        const double w = std::sqrt(static_cast<double>(std::max<std::size_t>(p.survivors, 1)));
        const double x = 1.0 / static_cast<double>(p.t);
        double power = 1.0;
        for (Eigen::Index m = 0; m < cols; ++m) {
            a(i, m) = w * power;
            power *= x;
        }
        b(i) = w * p.h;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    if (qr.rank() < cols) {
        throw FitError("rank-deficient threshold design (distinct t values < degree + 1)");
    }
    const Eigen::VectorXd c = qr.solve(b);
    PolynomialFit fit;
    fit.coeffs.assign(c.data(), c.data() + c.size());
    double sq = 0.0;
    for (const auto& p : raw) {
        const double x = 1.0 / static_cast<double>(p.t);
        double v = 0.0;
        for (auto it = fit.coeffs.rbegin(); it != fit.coeffs.rend(); ++it) {
            v = v * x + *it;
        }
        sq += (v - p.h) * (v - p.h);
    }
    fit.rms = std::sqrt(sq / static_cast<double>(raw.size()));
    return fit;
}

ThresholdTable calibrate(const CalibrationMeta& meta_in, const CalibrationOptions& options) {
    const CalibrationMeta meta = normalized(meta_in);
    if (meta.variant == DetectorVariant::batch_pearson) {
        return calibrate_batch(meta, options);
    }
    check_replicates(meta, options.warn);
    const std::size_t r_total = meta.replicates;
    if (r_total > options.memory_budget_bytes / ReplicateBank::bytes_per_replicate(meta.bins())) {
        throw BudgetExceededError("replicate state for " + std::to_string(r_total) +
                                  " replicates exceeds the memory budget");
    }
    const int threads = resolve_workers(options.workers);

    ReplicateBank bank(meta, r_total);
    const auto n_total = static_cast<std::ptrdiff_t>(r_total);
#pragma omp parallel for schedule(static) num_threads(threads)
    for (std::ptrdiff_t r = 0; r < n_total; ++r) {
        bank.init(static_cast<std::size_t>(r));
    }

    ThresholdTable table;
    table.meta = meta;
    std::vector<std::size_t> alive(r_total);
    std::iota(alive.begin(), alive.end(), 0);
    std::vector<double> stats(r_total);
    std::vector<double> scratch;
    std::vector<std::pair<std::uint64_t, double>> reservoir;

    for (std::size_t t = 1; t <= meta.length; ++t) {
        const std::size_t n = alive.size();
        if (n < std::max<std::size_t>(meta.survivor_floor, 1)) {
            table.truncated = true;
            if (options.warn) {
                options.warn("only " + std::to_string(n) + " surviving replicates at t=" + std::to_string(t) +
                             "; raw thresholds truncated, polynomial covers the tail");
            }
            break;
        }
        const auto n_alive = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) num_threads(threads)
        for (std::ptrdiff_t i = 0; i < n_alive; ++i) {
            stats[static_cast<std::size_t>(i)] = bank.step(alive[static_cast<std::size_t>(i)], t);
        }

        double h;
        if (meta.reservoir_cap > 0 && n > meta.reservoir_cap) {
            // Deterministic uniform subsample: keep the cap smallest hash keys.
            reservoir.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                reservoir[i] = {mix_seed(meta.seed ^ (t * 0x9e3779b97f4a7c15ULL), alive[i]), stats[i]};
            }
            const auto cap = static_cast<std::ptrdiff_t>(meta.reservoir_cap);
            std::nth_element(reservoir.begin(), reservoir.begin() + cap, reservoir.end());
            scratch.resize(meta.reservoir_cap);
            for (std::size_t i = 0; i < meta.reservoir_cap; ++i) {
                scratch[i] = reservoir[i].second;
            }
        } else {
            scratch.assign(stats.begin(), stats.begin() + n_alive);
        }
        h = upper_quantile(scratch, meta.alpha);
        table.raw.push_back({t, h, n});

        std::size_t kept = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (stats[i] <= h) {
                alive[kept++] = alive[i];
            }
        }
        alive.resize(kept);
    }

    const PolynomialFit fit = fit_threshold_polynomial(table.raw, meta.degree);
    table.poly_coeffs = fit.coeffs;
    table.fit_rms = fit.rms;
    return table;
}

ThresholdTable calibrate_batch(const CalibrationMeta& meta_in, const CalibrationOptions& options) {
    CalibrationMeta meta = meta_in;
    meta.variant = DetectorVariant::batch_pearson;
    meta = normalized(meta);
    check_replicates(meta, options.warn);
    const int threads = resolve_workers(options.workers);
    const std::size_t k = meta.bins();
    const auto counts = allocate_bin_counts(meta.target_probs, meta.n_train);
    const auto pi_tilde = compute_pi_tilde(counts, meta.n_train);

    std::vector<double> stats(meta.replicates);
    const auto n_total = static_cast<std::ptrdiff_t>(meta.replicates);
#pragma omp parallel for schedule(static) num_threads(threads)
    for (std::ptrdiff_t r = 0; r < n_total; ++r) {
        Rng rng = Rng::substream(meta.seed, static_cast<std::uint64_t>(r));
        std::vector<double> cdf(k);
        draw_bin_probabilities(counts, BinSampler::dirichlet, rng, cdf);
        std::partial_sum(cdf.begin(), cdf.end(), cdf.begin());
        cdf.back() = 1.0;
        std::vector<std::size_t> batch(k, 0);
        for (std::size_t i = 0; i < meta.batch_size; ++i) {
            const auto bin = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), rng.uniform()) -
                                                      cdf.begin());
            ++batch[std::min(bin, k - 1)];
        }
        stats[static_cast<std::size_t>(r)] = batch_pearson_statistic(batch, pi_tilde);
    }

    ThresholdTable table;
    table.meta = meta;
    const double h = upper_quantile(stats, meta.alpha);
    table.raw.push_back({meta.batch_size, h, meta.replicates});
    table.poly_coeffs = {h};
    return table;
}

}  // namespace qtewma
