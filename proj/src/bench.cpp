#include "qtewma/bench.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qtewma/errors.hpp"
#include "qtewma/parallel.hpp"
#include "qtewma/quanttree.hpp"
#include "qtewma/rng.hpp"

namespace qtewma {

namespace {

constexpr std::uint64_t kPartitionStream = 5;

std::uint64_t run_seed(std::uint64_t seed, std::size_t run) { return mix_seed(seed, run); }

RunRecord run_once(const MonitorSetup& setup, const ThresholdTable& table, const StreamFactory& streams,
                   std::size_t run, std::uint64_t seed) {
    RunRecord rec;
    rec.run = run;
    rec.seed = run_seed(seed, run);
    if (streams.spec().change) {
        rec.tau = streams.spec().change->tau;
    }
    auto [train, stream] = streams.make_run(rec.seed, setup.n_train);
    const auto partition = build_partition(train, setup.target_probs, mix_seed(rec.seed, kPartitionStream));
    RunResult result;
    if (setup.variant == DetectorVariant::batch_pearson) {
        BatchPearsonDetector det(partition, table);
        result = run_stream_batch(det, collect(std::move(stream)));
    } else {
        QtEwmaDetector det(partition, setup.ewma, table);
        result = run_stream(det, stream);
    }
    rec.t_star = result.t_star;
    rec.consumed = result.consumed;
    rec.false_alarm = rec.t_star && rec.tau && *rec.t_star < *rec.tau;
    return rec;
}

double percentile(std::vector<double>& v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(i);
    return i + 1 < v.size() ? v[i] * (1.0 - frac) + v[i + 1] * frac : v[i];
}

}  // namespace

CalibrationMeta MonitorSetup::calibration_meta(double arl0_target) const {
    CalibrationMeta m;
    m.variant = variant;
    m.lambda = ewma.lambda;
    m.beta = ewma.beta;
    m.stop_at = ewma.stop_at;
    m.target_probs = target_probs;
    m.n_train = n_train;
    m.arl0_target = arl0_target;
    m.batch_size = variant == DetectorVariant::batch_pearson ? batch_size : 0;
    return m;
}

std::vector<RunRecord> simulate_runs(const MonitorSetup& setup, const ThresholdTable& table,
                                     const StreamFactory& streams, std::size_t runs, std::uint64_t seed,
                                     int workers) {
    std::vector<RunRecord> records(runs);
    std::vector<std::string> errors(runs);
    const int threads = resolve_workers(workers);
    const auto n = static_cast<std::ptrdiff_t>(runs);
#pragma omp parallel for schedule(dynamic) num_threads(threads)
    for (std::ptrdiff_t r = 0; r < n; ++r) {
        try {
            records[static_cast<std::size_t>(r)] = run_once(setup, table, streams, static_cast<std::size_t>(r), seed);
        } catch (const std::exception& e) {
            errors[static_cast<std::size_t>(r)] = e.what();
        }
    }
    for (const auto& e : errors) {
        if (!e.empty()) {
            throw Error("run failed: " + e);
        }
    }
    return records;
}

Arl0Estimate aggregate_arl0(std::span<const RunRecord> records) {
    Arl0Estimate est;
    est.runs = records.size();
    double exposure = 0.0;
    double detected_sum = 0.0;
    for (const auto& r : records) {
        if (r.t_star) {
            ++est.detected;
            exposure += static_cast<double>(*r.t_star);
            detected_sum += static_cast<double>(*r.t_star);
        } else {
            ++est.censored;
            exposure += static_cast<double>(r.consumed);
        }
    }
    if (est.detected == 0) {
        est.arl0 = std::numeric_limits<double>::infinity();
        est.ci_low = exposure;
        est.ci_high = std::numeric_limits<double>::infinity();
        return est;
    }
    est.arl0 = exposure / static_cast<double>(est.detected);
    est.mean_detected = detected_sum / static_cast<double>(est.detected);
    // Geometric run lengths: sd(mean) ~ mean / sqrt(detections).
    const double half = 1.96 * est.arl0 / std::sqrt(static_cast<double>(est.detected));
    est.ci_low = est.arl0 - half;
    est.ci_high = est.arl0 + half;
    return est;
}

Arl0Estimate measure_arl0(const MonitorSetup& setup, const ThresholdTable& table, const StreamFactory& streams,
                          std::size_t runs, std::uint64_t seed, int workers, std::vector<RunRecord>* records_out) {
    if (runs < 100) {
        throw InvalidArgumentError("ARL0 estimation needs at least 100 runs");
    }
    if (streams.spec().change) {
        throw InvalidArgumentError("ARL0 is measured on stationary streams; remove the change block");
    }
    if (streams.spec().length == 0) {
        throw InvalidArgumentError("stream length must be positive");
    }
    auto records = simulate_runs(setup, table, streams, runs, seed, workers);
    const auto est = aggregate_arl0(records);
    if (records_out) {
        *records_out = std::move(records);
    }
    return est;
}

DelayFarEstimate aggregate_delay_far(std::span<const RunRecord> records, double alpha) {
    DelayFarEstimate est;
    est.runs = records.size();
    double sum = 0.0;
    double sq = 0.0;
    std::optional<std::size_t> tau;
    for (const auto& r : records) {
        tau = r.tau;
        if (!r.t_star) {
            ++est.censored;
            continue;
        }
        if (r.false_alarm) {
            ++est.false_alarms;
            continue;
        }
        const double delay = static_cast<double>(*r.t_star - *r.tau);
        ++est.delayed;
        sum += delay;
        sq += delay * delay;
    }
    est.false_alarm_rate = est.runs ? static_cast<double>(est.false_alarms) / static_cast<double>(est.runs) : 0.0;
    if (tau) {
        est.target_false_alarm_rate = 1.0 - std::pow(1.0 - alpha, static_cast<double>(*tau - 1));
    }
    if (est.delayed > 0) {
        const auto n = static_cast<double>(est.delayed);
        est.arl1 = sum / n;
        est.arl1_sd = est.delayed > 1 ? std::sqrt(std::max(0.0, (sq - sum * sum / n) / (n - 1.0))) : 0.0;
    }
    return est;
}

DelayFarEstimate measure_delay_far(const MonitorSetup& setup, const ThresholdTable& table,
                                   const StreamFactory& streams, std::size_t runs, std::uint64_t seed, int workers,
                                   std::vector<RunRecord>* records_out) {
    if (!streams.spec().change) {
        throw InvalidArgumentError("delay measurement needs a stream family with a change point");
    }
    auto records = simulate_runs(setup, table, streams, runs, seed, workers);
    const auto est = aggregate_delay_far(records, table.meta.alpha);
    if (records_out) {
        *records_out = std::move(records);
    }
    return est;
}

double mann_whitney_auc(std::span<const double> positives, std::span<const double> negatives) {
    if (positives.empty() || negatives.empty()) {
        throw InvalidArgumentError("AUC needs samples from both classes");
    }
    struct Item {
        double value;
        bool positive;
    };
    std::vector<Item> all;
    all.reserve(positives.size() + negatives.size());
    for (double v : positives) {
        all.push_back({v, true});
    }
    for (double v : negatives) {
        all.push_back({v, false});
    }
    std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.value < b.value; });
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        std::size_t pos = 0;
        while (j < all.size() && all[j].value == all[i].value) {
            pos += all[j].positive ? 1 : 0;
            ++j;
        }
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        rank_sum += midrank * static_cast<double>(pos);
        i = j;
    }
    const auto np = static_cast<double>(positives.size());
    const auto nn = static_cast<double>(negatives.size());
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double AucStudy::auc(std::size_t monitor, std::size_t lag_index) const {
    return mann_whitney_auc(changed[monitor][lag_index], stationary[monitor][lag_index]);
}

AucStudy collect_auc_statistics(std::span<const MonitorSetup> setups, const StreamFactory& stationary,
                                const StreamFactory& changed, std::span<const std::size_t> lags, std::size_t runs,
                                std::uint64_t seed, int workers) {
    if (setups.empty()) {
        throw InvalidArgumentError("AUC study needs at least one monitor");
    }
    if (!changed.spec().change) {
        throw InvalidArgumentError("the changed stream family has no change point");
    }
    for (const auto& s : setups) {
        if (s.target_probs != setups.front().target_probs || s.n_train != setups.front().n_train) {
            throw InvalidArgumentError("AUC monitors must share the histogram configuration");
        }
        if (s.variant == DetectorVariant::batch_pearson) {
            throw InvalidArgumentError("AUC by lag is defined for per-sample statistics only");
        }
    }
    const std::size_t tau = changed.spec().change->tau;
    const std::size_t length = std::min(changed.spec().length, stationary.spec().length);

    AucStudy study;
    for (const auto& s : setups) {
        study.labels.push_back(s.label);
    }
    for (std::size_t lag : lags) {
        if (tau + lag > length) {
            study.notes.push_back("lag " + std::to_string(lag) + " skipped: tau + lag exceeds stream length " +
                                  std::to_string(length));
        } else {
            study.lags.push_back(lag);
        }
    }
    const std::size_t m = setups.size();
    const std::size_t nl = study.lags.size();
    auto shape = std::vector<std::vector<std::vector<double>>>(m, std::vector<std::vector<double>>(nl,
                                                                std::vector<double>(runs)));
    study.changed = shape;
    study.stationary = std::move(shape);
    if (nl == 0) {
        return study;
    }
    const std::size_t horizon = tau + study.lags.back();
    const auto& probs = setups.front().target_probs;
    const std::size_t n_train = setups.front().n_train;

    const int threads = resolve_workers(workers);
    const auto total = static_cast<std::ptrdiff_t>(2 * runs);
#pragma omp parallel for schedule(dynamic) num_threads(threads)
    for (std::ptrdiff_t job = 0; job < total; ++job) {
        const bool is_changed = static_cast<std::size_t>(job) >= runs;
        const std::size_t run = static_cast<std::size_t>(job) % runs;
        const StreamFactory& family = is_changed ? changed : stationary;
        const std::uint64_t rs = run_seed(mix_seed(seed, is_changed ? 1 : 0), run);
        auto [train, stream] = family.make_run(rs, n_train);
        const auto partition = build_partition(train, probs, mix_seed(rs, kPartitionStream));
        std::vector<std::size_t> bins;
        bins.reserve(horizon);
        std::vector<double> x(partition.dim);
        while (bins.size() < horizon && stream.next(x)) {
            bins.push_back(partition.lookup_unchecked(x));
        }
        auto& out = is_changed ? study.changed : study.stationary;
        for (std::size_t s = 0; s < m; ++s) {
            QtEwmaDetector det(partition, setups[s].ewma);
            std::size_t li = 0;
            for (std::size_t t = 1; t <= bins.size() && li < nl; ++t) {
                const double stat = det.step_bin(bins[t - 1]).statistic;
                while (li < nl && tau + study.lags[li] == t) {
                    out[s][li][run] = stat;
                    ++li;
                }
            }
        }
    }
    return study;
}

std::vector<std::vector<AucPoint>> auc_by_lag(const AucStudy& study) {
    std::vector<std::vector<AucPoint>> out(study.labels.size());
    for (std::size_t s = 0; s < study.labels.size(); ++s) {
        for (std::size_t l = 0; l < study.lags.size(); ++l) {
            out[s].push_back({study.lags[l], study.auc(s, l)});
        }
    }
    return out;
}

Interval bootstrap_auc_difference(const AucStudy& study, std::size_t a, std::size_t b, std::size_t lag_index,
                                  std::size_t resamples, std::uint64_t seed) {
    const auto& ca = study.changed[a][lag_index];
    const auto& sa = study.stationary[a][lag_index];
    const auto& cb = study.changed[b][lag_index];
    const auto& sb = study.stationary[b][lag_index];
    Rng rng(seed);
    std::vector<double> diffs(resamples);
    std::vector<double> ra(ca.size()), rb(cb.size()), qa(sa.size()), qb(sb.size());
    for (std::size_t i = 0; i < resamples; ++i) {
        for (std::size_t k = 0; k < ca.size(); ++k) {
            const auto idx = rng.below(ca.size());
            ra[k] = ca[idx];
            rb[k] = cb[idx];
        }
        for (std::size_t k = 0; k < sa.size(); ++k) {
            const auto idx = rng.below(sa.size());
            qa[k] = sa[idx];
            qb[k] = sb[idx];
        }
        diffs[i] = mann_whitney_auc(ra, qa) - mann_whitney_auc(rb, qb);
    }
    return {percentile(diffs, 0.025), percentile(diffs, 0.975)};
}

Interval bootstrap_mean_difference(std::span<const double> x, std::span<const double> y, std::size_t resamples,
                                   std::uint64_t seed) {
    if (x.empty() || y.empty()) {
        throw InvalidArgumentError("bootstrap needs non-empty samples");
    }
    Rng rng(seed);
    std::vector<double> diffs(resamples);
    for (std::size_t i = 0; i < resamples; ++i) {
        double sx = 0.0;
        double sy = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) {
            sx += x[rng.below(x.size())];
        }
        for (std::size_t k = 0; k < y.size(); ++k) {
            sy += y[rng.below(y.size())];
        }
        diffs[i] = sx / static_cast<double>(x.size()) - sy / static_cast<double>(y.size());
    }
    return {percentile(diffs, 0.025), percentile(diffs, 0.975)};
}

}  // namespace qtewma
