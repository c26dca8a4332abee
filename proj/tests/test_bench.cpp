#include <doctest.h>

#include <cmath>
#include <numeric>

#include "qtewma/bench.hpp"
#include "qtewma/calibration.hpp"
#include "qtewma/errors.hpp"
#include "qtewma/rng.hpp"

using namespace qtewma;

namespace {

std::size_t geometric(Rng& rng, double alpha) {
    // Inversion: P(T > t) = (1 - alpha)^t.
    return 1 + static_cast<std::size_t>(std::floor(std::log(rng.uniform_open()) / std::log1p(-alpha)));
}

StreamSpec uniform_stream(std::size_t d, std::size_t length) {
    StreamSpec spec;
    spec.dim = d;
    spec.phi0 = UniformLaw::unit_cube(d);
    spec.length = length;
    return spec;
}

MonitorSetup setup_for(std::size_t k, std::size_t n, double beta = std::numeric_limits<double>::infinity()) {
    MonitorSetup s;
    s.target_probs = uniform_probs(k);
    s.n_train = n;
    s.ewma.beta = beta;
    s.variant = s.ewma.variant();
    s.label = to_string(s.variant);
    return s;
}

ThresholdTable quick_table(const MonitorSetup& s, double arl0, std::size_t length, std::uint64_t seed) {
    auto meta = s.calibration_meta(arl0);
    meta.replicates = 10000;
    meta.length = length;
    meta.seed = seed;
    CalibrationOptions o;
    o.warn = [](const std::string&) {};
    return calibrate(meta, o);
}

}  // namespace

TEST_CASE("ARL0 aggregator on geometric run lengths") {
    Rng rng(1);
    const double alpha = 1.0 / 500.0;
    std::vector<RunRecord> records(5000);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const std::size_t t = geometric(rng, alpha);
        records[i].run = i;
        if (t <= 1500) {
            records[i].t_star = t;
            records[i].consumed = t;
        } else {
            records[i].consumed = 1500;
        }
    }
    const auto est = aggregate_arl0(records);
    CHECK(est.runs == 5000);
    CHECK(est.detected + est.censored == 5000);
    CHECK(est.censored > 0);
    // Censored-geometric MLE; relative sd ~ 1 / sqrt(detections).
    const double sd = 500.0 / std::sqrt(static_cast<double>(est.detected));
    CHECK(std::abs(est.arl0 - 500.0) < 3.0 * sd);
    CHECK(est.ci_low < 500.0);
    CHECK(est.ci_high > 500.0);
    // The naive mean over detected runs is biased low under censoring.
    CHECK(est.mean_detected < est.arl0);
}

TEST_CASE("false alarm aggregator on geometric run lengths") {
    for (double arl0 : {500.0, 1000.0, 2000.0, 5000.0}) {
        const double alpha = 1.0 / arl0;
        Rng rng(static_cast<std::uint64_t>(arl0));
        std::vector<RunRecord> records(4000);
        for (auto& r : records) {
            const std::size_t t = geometric(rng, alpha);
            r.tau = 500;
            r.t_star = t < 500 ? t : 500 + (t % 40);
            r.false_alarm = *r.t_star < 500;
        }
        const auto est = aggregate_delay_far(records, alpha);
        const double target = 1.0 - std::pow(1.0 - alpha, 499.0);
        CHECK(est.target_false_alarm_rate == doctest::Approx(target));
        const double sd = std::sqrt(target * (1 - target) / 4000.0);
        CHECK(std::abs(est.false_alarm_rate - target) < 3.0 * sd);
        REQUIRE(est.arl1.has_value());
        CHECK(*est.arl1 < 40.0);
    }
    // Published targets for tau = 500.
    CHECK(1.0 - std::pow(1.0 - 1.0 / 500.0, 500.0) == doctest::Approx(0.632).epsilon(0.002));
    CHECK(1.0 - std::pow(1.0 - 1.0 / 5000.0, 500.0) == doctest::Approx(0.095).epsilon(0.01));
}

TEST_CASE("a detector that never fires") {
    std::vector<RunRecord> records(10);
    for (auto& r : records) {
        r.tau = 100;
        r.consumed = 1000;
    }
    const auto est = aggregate_delay_far(records, 0.01);
    CHECK(est.false_alarm_rate == 0.0);
    CHECK_FALSE(est.arl1.has_value());
    CHECK(est.censored == 10);
    const auto a = aggregate_arl0(records);
    CHECK(std::isinf(a.arl0));
}

TEST_CASE("all runs false alarm") {
    std::vector<RunRecord> records(5);
    for (auto& r : records) {
        r.tau = 100;
        r.t_star = 10;
        r.false_alarm = true;
    }
    const auto est = aggregate_delay_far(records, 0.01);
    CHECK(est.false_alarm_rate == 1.0);
    CHECK_FALSE(est.arl1.has_value());
    CHECK(est.false_alarms == 5);
}

TEST_CASE("mann whitney auc") {
    const std::vector<double> a{1, 2, 3, 4};
    const std::vector<double> b{5, 6, 7};
    CHECK(mann_whitney_auc(b, a) == 1.0);
    CHECK(mann_whitney_auc(a, b) == 0.0);
    const std::vector<double> t1{1, 2, 2};
    const std::vector<double> t2{2, 0};
    // Pairs: (1,2) 0, (1,0) 1, (2,2) .5, (2,0) 1, (2,2) .5, (2,0) 1 -> 4 / 6.
    CHECK(mann_whitney_auc(t1, t2) == doctest::Approx(4.0 / 6.0));

    Rng rng(3);
    std::vector<double> x(2000), y(2000);
    for (auto& v : x) {
        v = rng.normal();
    }
    for (auto& v : y) {
        v = rng.normal();
    }
    // sd of AUC under exchangeability: sqrt((n + m + 1) / (12 n m)).
    CHECK(std::abs(mann_whitney_auc(x, y) - 0.5) < 3.0 * std::sqrt(4001.0 / (12.0 * 2000.0 * 2000.0)));
}

TEST_CASE("bootstrap intervals") {
    Rng rng(5);
    std::vector<double> x(400), y(400);
    for (auto& v : x) {
        v = rng.normal() + 1.0;
    }
    for (auto& v : y) {
        v = rng.normal();
    }
    const auto ci = bootstrap_mean_difference(x, y, 2000, 9);
    CHECK(ci.lo < ci.hi);
    CHECK(ci.lo > 0.7);
    CHECK(ci.hi < 1.3);
    const auto same = bootstrap_mean_difference(x, y, 2000, 9);
    CHECK(same.lo == ci.lo);
    CHECK(same.hi == ci.hi);
}

TEST_CASE("measure_arl0 contract") {
    const auto setup = setup_for(8, 64);
    const auto table = quick_table(setup, 50, 300, 1);
    const StreamFactory streams(uniform_stream(2, 300));
    CHECK_THROWS_AS(measure_arl0(setup, table, streams, 99, 1), InvalidArgumentError);

    StreamSpec changed = uniform_stream(2, 300);
    changed.phi0 = GaussianLaw::standard(2);
    changed.change = ChangeSpec{100, MeanShift{1.0}};
    CHECK_THROWS_AS(measure_arl0(setup, table, StreamFactory(changed), 200, 1), InvalidArgumentError);
    CHECK_THROWS_AS(measure_arl0(setup, table, StreamFactory(uniform_stream(2, 0)), 200, 1),
                    InvalidArgumentError);

    std::vector<RunRecord> records;
    const auto est = measure_arl0(setup, table, streams, 400, 7, 0, &records);
    CHECK(records.size() == 400);
    CHECK(est.runs == 400);
    // 300 steps at a target of 50: nearly every run alarms.
    CHECK(est.detected > 390);
    CHECK(est.arl0 > 30.0);
    CHECK(est.arl0 < 75.0);
}

TEST_CASE("runs are independent of worker count") {
    const auto setup = setup_for(8, 64, 5.0);
    const auto table = quick_table(setup, 100, 400, 2);
    StreamSpec spec;
    spec.dim = 3;
    spec.phi0 = GaussianLaw::standard(3);
    spec.change = ChangeSpec{150, MeanShift{2.0}};
    spec.length = 600;
    const StreamFactory streams(spec);
    const auto a = simulate_runs(setup, table, streams, 300, 11, 1);
    const auto b = simulate_runs(setup, table, streams, 300, 11, 4);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].run == i);
        CHECK(a[i].seed == b[i].seed);
        CHECK(a[i].t_star == b[i].t_star);
        CHECK(a[i].false_alarm == b[i].false_alarm);
        CHECK(a[i].tau == std::optional<std::size_t>{150});
    }
    const auto est = aggregate_delay_far(a, table.meta.alpha);
    CHECK(est.runs == 300);
    CHECK(est.false_alarms + est.delayed + est.censored == 300);
}

TEST_CASE("batch monitor runs") {
    auto setup = setup_for(8, 64);
    setup.variant = DetectorVariant::batch_pearson;
    setup.batch_size = 16;
    setup.label = "batch";
    const auto table = quick_table(setup, 400, 0, 3);
    const StreamFactory streams(uniform_stream(2, 4000));
    const auto records = simulate_runs(setup, table, streams, 200, 3);
    for (const auto& r : records) {
        if (r.t_star) {
            CHECK(*r.t_star % 16 == 0);
        }
    }
}

TEST_CASE("auc by lag") {
    const auto plain = setup_for(8, 64);
    const auto upd = setup_for(8, 64, 5.0);
    const std::vector<MonitorSetup> setups{plain, upd};
    StreamSpec stat;
    stat.dim = 1;
    stat.phi0 = GaussianLaw::standard(1);
    stat.length = 300;
    StreamSpec changed = stat;
    changed.change = ChangeSpec{100, MeanShift{4.0}};
    const std::vector<std::size_t> lags{1, 100, 250, 500};

    const auto study = collect_auc_statistics(setups, StreamFactory(stat), StreamFactory(changed), lags, 300, 5);
    REQUIRE(study.lags == std::vector<std::size_t>{1, 100});
    CHECK(study.notes.size() == 2);
    const auto series = auc_by_lag(study);
    REQUIRE(series.size() == 2);
    CHECK(series[0][1].lag == 100);
    CHECK(series[0][1].auc > 0.9);

    // Identical families: exchangeable classes.
    StreamSpec same = stat;
    same.change = ChangeSpec{100, Law{GaussianLaw::standard(1)}};
    const auto null_study = collect_auc_statistics(setups, StreamFactory(stat), StreamFactory(same),
                                                   std::vector<std::size_t>{50}, 300, 6);
    CHECK(std::abs(null_study.auc(0, 0) - 0.5) < 3.0 * std::sqrt(601.0 / (12.0 * 300.0 * 300.0)));

    const auto ci = bootstrap_auc_difference(study, 0, 0, 1, 500, 1);
    CHECK(ci.lo == 0.0);
    CHECK(ci.hi == 0.0);

    auto batch = plain;
    batch.variant = DetectorVariant::batch_pearson;
    const std::vector<MonitorSetup> bad{plain, batch};
    CHECK_THROWS_AS(collect_auc_statistics(bad, StreamFactory(stat), StreamFactory(changed), lags, 10, 5),
                    InvalidArgumentError);
}
