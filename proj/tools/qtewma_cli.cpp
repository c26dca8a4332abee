// qtewma: command line front end for calibration, partition fitting, online
// monitoring, stream simulation and benchmark experiments.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "qtewma/calibration.hpp"
#include "qtewma/datagen.hpp"
#include "qtewma/detector.hpp"
#include "qtewma/errors.hpp"
#include "qtewma/experiment.hpp"
#include "qtewma/quanttree.hpp"

namespace {

using namespace qtewma;

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kUsage = 2,
    kIo = 3,
    kMismatch = 4,
    kData = 5,
    kMonitoring = 6,
};

std::string read_all(std::istream& in) {
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read " + path);
    }
    return read_all(in);
}

void write_output(const std::string& path, const std::string& body) {
    if (path.empty() || path == "-") {
        std::cout << body;
        return;
    }
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out << body;
}

struct CalibrateArgs {
    double arl0 = 0;
    double lambda = 0.03;
    std::size_t k = 32;
    std::size_t n = 0;
    std::optional<double> beta;
    std::optional<std::size_t> stop_at;
    std::size_t replicates = kRecommendedReplicates;
    std::size_t length = 5000;
    std::uint64_t seed = 0;
    int degree = 7;
    std::size_t batch_size = 0;
    int workers = 0;
    std::string out;
};

int run_calibrate(const CalibrateArgs& a) {
    CalibrationMeta meta;
    meta.lambda = a.lambda;
    meta.target_probs = uniform_probs(a.k);
    meta.n_train = a.n;
    meta.beta = a.beta.value_or(std::numeric_limits<double>::infinity());
    meta.stop_at = a.stop_at;
    meta.arl0_target = a.arl0;
    meta.replicates = a.replicates;
    meta.length = a.length;
    meta.seed = a.seed;
    meta.degree = a.degree;
    if (a.batch_size > 0) {
        meta.variant = DetectorVariant::batch_pearson;
        meta.batch_size = a.batch_size;
    }
    CalibrationOptions options;
    options.workers = a.workers;
    const auto table = calibrate(meta, options);
    write_output(a.out, to_text(table));
    std::cerr << "calibrated " << table.raw.size() << " thresholds (" << to_string(table.meta.variant)
              << ", alpha=" << table.meta.alpha << ")\n";
    return kOk;
}

struct PartitionArgs {
    std::string train;
    std::size_t k = 32;
    std::uint64_t seed = 0;
    bool standardize = false;
    double jitter = 0.0;
    std::string out;
};

int run_partition(const PartitionArgs& a) {
    const auto data = ingest_csv(a.train, a.standardize, a.jitter, a.seed);
    const auto part = build_partition(data.data, uniform_probs(a.k), a.seed);
    write_output(a.out, to_text(part));
    return kOk;
}

struct MonitorArgs {
    std::string table;
    std::string partition;
    std::string input;
    bool polynomial_only = false;
};

int run_monitor(const MonitorArgs& a) {
    const auto table = load_table(a.table);
    const auto part = load_partition(a.partition);
    const std::string text = a.input.empty() || a.input == "-" ? read_all(std::cin) : read_file(a.input);

    std::istringstream lines(text);
    std::string line;
    std::vector<double> x(part.dim);
    std::size_t t = 0;
    std::size_t line_no = 0;
    auto parse_row = [&](const std::string& l) {
        std::istringstream cells(l);
        std::string cell;
        std::size_t c = 0;
        while (std::getline(cells, cell, ',')) {
            if (c >= part.dim) {
                throw ShapeError("row " + std::to_string(line_no) + " has more than " + std::to_string(part.dim) +
                                 " columns");
            }
            char* end = nullptr;
            x[c] = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str()) {
                return false;
            }
            ++c;
        }
        if (c != part.dim) {
            throw ShapeError("row " + std::to_string(line_no) + " has " + std::to_string(c) + " columns, expected " +
                             std::to_string(part.dim));
        }
        return true;
    };

    auto emit = [&](std::size_t step, double stat, double h, bool flag) {
        std::printf("%zu,%.17g,%.17g,%d\n", step, stat, h, flag ? 1 : 0);
    };

    if (table.meta.variant == DetectorVariant::batch_pearson) {
        BatchPearsonDetector det(part, table);
        while (std::getline(lines, line)) {
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos) {
                continue;
            }
            if (!parse_row(line)) {
                if (t == 0 && line_no == 1) {
                    continue;
                }
                throw ParseError("non-numeric value at row " + std::to_string(line_no));
            }
            ++t;
            if (auto r = det.step(x)) {
                emit(r->t, r->statistic, det.threshold(), r->detected);
                if (r->detected) {
                    std::printf("DETECTED t*=%zu\n", r->t);
                    return kOk;
                }
            }
        }
        return kOk;
    }

    DetectorConfig config;
    config.lambda = table.meta.lambda;
    config.beta = table.meta.beta;
    config.stop_at = table.meta.stop_at;
    QtEwmaDetector det(part, config, table);
    if (a.polynomial_only) {
        det = QtEwmaDetector(part, config, table.curve(ThresholdEvaluation::polynomial));
    }
    while (std::getline(lines, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        if (!parse_row(line)) {
            if (t == 0 && line_no == 1) {
                continue;  // header
            }
            throw ParseError("non-numeric value at row " + std::to_string(line_no));
        }
        ++t;
        const auto r = det.step(x);
        emit(t, r.statistic, r.threshold, r.detected);
        if (r.detected) {
            std::printf("DETECTED t*=%zu\n", t);
            return kOk;
        }
    }
    return kOk;
}

struct SimulateArgs {
    std::string spec;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::size_t n_train = 0;
    std::string train_out;
};

int run_simulate(const SimulateArgs& a) {
    auto spec = stream_spec_from_json(nlohmann::json::parse(read_file(a.spec)));
    if (a.seed) {
        spec.seed = *a.seed;
    }
    const StreamFactory factory(spec);
    auto format = [](const SampleMatrix& m) {
        std::string body;
        char buf[40];
        for (std::size_t i = 0; i < m.rows(); ++i) {
            for (std::size_t k = 0; k < m.dim(); ++k) {
                std::snprintf(buf, sizeof buf, k == 0 ? "%.17g" : ",%.17g", m(i, k));
                body += buf;
            }
            body += '\n';
        }
        return body;
    };
    if (a.n_train > 0) {
        auto run = factory.make_run(spec.seed, a.n_train);
        if (!a.train_out.empty()) {
            write_output(a.train_out, format(run.train));
        }
        write_output(a.out, format(collect(std::move(run.stream))));
    } else {
        write_output(a.out, format(collect(factory.stream())));
    }
    return kOk;
}

struct BenchArgs {
    std::string config;
    std::string out;
    std::optional<int> workers;
};

int run_bench(const BenchArgs& a) {
    auto config = experiment_from_json(nlohmann::json::parse(read_file(a.config)));
    if (a.workers) {
        config.workers = *a.workers;
    }
    const auto report = run_experiment(config);
    const auto body = to_json(report);
    validate_report(nlohmann::json::parse(body.dump()));
    write_output(a.out, body.dump(2) + "\n");
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"QT-EWMA change detection toolkit"};
    app.require_subcommand(1);

    CalibrateArgs cal;
    auto* calibrate_cmd = app.add_subcommand("calibrate", "Monte Carlo thresholds for a target ARL0");
    calibrate_cmd->add_option("--arl0", cal.arl0, "target average run length")->required();
    calibrate_cmd->add_option("--lambda", cal.lambda, "EWMA forgetting factor")->required();
    calibrate_cmd->add_option("--k", cal.k, "number of bins")->required();
    calibrate_cmd->add_option("--n", cal.n, "training set size")->required();
    calibrate_cmd->add_option("--beta", cal.beta, "updating speed divisor (omit for QT-EWMA)");
    calibrate_cmd->add_option("--stop-at", cal.stop_at, "stop updating when N + t reaches this");
    calibrate_cmd->add_option("--replicates", cal.replicates, "Monte Carlo replicates")->required();
    calibrate_cmd->add_option("--length", cal.length, "simulated stream length")->required();
    calibrate_cmd->add_option("--seed", cal.seed, "random seed")->required();
    calibrate_cmd->add_option("--out", cal.out, "output table path")->required();
    calibrate_cmd->add_option("--degree", cal.degree, "degree of the 1/t polynomial");
    calibrate_cmd->add_option("--batch-size", cal.batch_size, "calibrate the batch Pearson monitor instead");
    calibrate_cmd->add_option("--workers", cal.workers, "worker threads (0 = all)");

    PartitionArgs part;
    auto* partition_cmd = app.add_subcommand("partition", "fit a QuantTree partition on a training CSV");
    partition_cmd->add_option("--train", part.train, "training CSV")->required();
    partition_cmd->add_option("--k", part.k, "number of bins")->required();
    partition_cmd->add_option("--seed", part.seed, "random seed")->required();
    partition_cmd->add_option("--out", part.out, "output partition path")->required();
    partition_cmd->add_flag("--standardize", part.standardize, "standardize columns first");
    partition_cmd->add_option("--jitter", part.jitter, "Gaussian jitter, relative to column std");

    MonitorArgs mon;
    auto* monitor_cmd = app.add_subcommand("monitor", "monitor a CSV stream, one verdict per sample");
    monitor_cmd->add_option("--table", mon.table, "threshold table")->required();
    monitor_cmd->add_option("--partition", mon.partition, "partition file")->required();
    monitor_cmd->add_option("--input", mon.input, "stream CSV (default stdin)");
    monitor_cmd->add_flag("--polynomial-only", mon.polynomial_only, "use the fitted polynomial for every t");

    SimulateArgs sim;
    auto* simulate_cmd = app.add_subcommand("simulate", "write a synthetic stream as CSV");
    simulate_cmd->add_option("--spec", sim.spec, "stream spec (JSON)")->required();
    simulate_cmd->add_option("--out", sim.out, "output CSV (default stdout)");
    simulate_cmd->add_option("--seed", sim.seed, "override the spec seed");
    simulate_cmd->add_option("--n-train", sim.n_train, "also draw a training set of this size");
    simulate_cmd->add_option("--train-out", sim.train_out, "training set CSV");

    BenchArgs bench;
    auto* bench_cmd = app.add_subcommand("bench", "run an experiment and write its report");
    bench_cmd->add_option("--config", bench.config, "experiment config (JSON)")->required();
    bench_cmd->add_option("--out", bench.out, "report path (default stdout)");
    bench_cmd->add_option("--workers", bench.workers, "worker threads (0 = all)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*calibrate_cmd) {
            return run_calibrate(cal);
        }
        if (*partition_cmd) {
            return run_partition(part);
        }
        if (*monitor_cmd) {
            return run_monitor(mon);
        }
        if (*simulate_cmd) {
            return run_simulate(sim);
        }
        if (*bench_cmd) {
            return run_bench(bench);
        }
    } catch (const CalibrationMismatchError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kMismatch;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kIo;
    } catch (const MonitoringHaltedError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kMonitoring;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kData;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: malformed JSON: " << e.what() << '\n';
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailure;
    }
    return kFailure;
}
