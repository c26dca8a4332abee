// Serial replicate-major reference vs the OpenMP time-major calibrator, plus
// the per-sample monitoring cost.

#include <benchmark/benchmark.h>

#include <limits>
#include <string>

#include "qtewma/calibration.hpp"
#include "qtewma/detector.hpp"
#include "qtewma/quanttree.hpp"
#include "qtewma/rng.hpp"

namespace {

using namespace qtewma;

CalibrationMeta meta_for(std::size_t replicates, std::size_t length) {
    CalibrationMeta m;
    m.target_probs = uniform_probs(32);
    m.n_train = 256;
    m.arl0_target = 500;
    m.replicates = replicates;
    m.length = length;
    m.seed = 1;
    m.reservoir_cap = 0;
    return m;
}

CalibrationOptions quiet(int workers) {
    CalibrationOptions o;
    o.workers = workers;
    o.warn = [](const std::string&) {};
    return o;
}

void BM_SerialReference(benchmark::State& state) {
    const auto meta = meta_for(10000, static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) {
        const auto paths = simulate_statistic_paths(meta, quiet(1));
        auto series = conditional_quantile_thresholds(paths, 1.0 / meta.arl0_target, meta.survivor_floor);
        benchmark::DoNotOptimize(series.points.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(meta.replicates * meta.length));
}
BENCHMARK(BM_SerialReference)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_ParallelCalibrate(benchmark::State& state) {
    const auto meta = meta_for(10000, static_cast<std::size_t>(state.range(0)));
    const auto workers = static_cast<int>(state.range(1));
    for (auto _ : state) {
        auto table = calibrate(meta, quiet(workers));
        benchmark::DoNotOptimize(table.raw.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(meta.replicates * meta.length));
}
BENCHMARK(BM_ParallelCalibrate)
    ->ArgsProduct({{500, 2000}, {1, 2, 4}})
    ->ArgNames({"length", "workers"})
    ->Unit(benchmark::kMillisecond);

void BM_DetectorStep(benchmark::State& state) {
    const auto d = static_cast<std::size_t>(state.range(0));
    Rng rng(3);
    SampleMatrix train(256, d);
    for (std::size_t i = 0; i < train.rows(); ++i) {
        for (std::size_t k = 0; k < d; ++k) {
            train(i, k) = rng.normal();
        }
    }
    const auto part = build_partition(train, uniform_probs(32), 4);
    QtEwmaDetector det(part, DetectorConfig{0.03, 5.0, {}});
    SampleMatrix stream(4096, d);
    for (std::size_t i = 0; i < stream.rows(); ++i) {
        for (std::size_t k = 0; k < d; ++k) {
            stream(i, k) = rng.normal();
        }
    }
    std::size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(det.step(stream.row(i)).statistic);
        if (++i == stream.rows()) {
            i = 0;
            det.reset();
        }
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_DetectorStep)->Arg(1)->Arg(8)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
