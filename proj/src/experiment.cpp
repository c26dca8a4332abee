#include "qtewma/experiment.hpp"

#include <cmath>
#include <cstdlib>
#include <functional>

#include "qtewma/errors.hpp"
#include "qtewma/quanttree.hpp"

namespace qtewma {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::vector<double> real_vector(const json& j, const char* what) {
    if (!j.is_array()) {
        throw ParseError(std::string(what) + " must be an array of numbers");
    }
    return j.get<std::vector<double>>();
}

Law law_from_json(const json& j, std::size_t d) {
    const auto type = j.at("type").get<std::string>();
    if (type == "uniform") {
        if (!j.contains("lower")) {
            return UniformLaw::unit_cube(d);
        }
        return UniformLaw{real_vector(j.at("lower"), "lower"), real_vector(j.at("upper"), "upper")};
    }
    if (type == "gaussian") {
        GaussianLaw g = GaussianLaw::standard(d);
        if (j.contains("mean")) {
            g.mean = real_vector(j.at("mean"), "mean");
        }
        if (j.contains("covariance")) {
            const auto& c = j.at("covariance");
            if (c.is_string() && c.get<std::string>() == "identity") {
                // already identity
            } else if (c.is_object() && c.contains("equicorrelated")) {
                g.covariance = GaussianLaw::equicorrelated(d, c.at("equicorrelated").get<double>()).covariance;
            } else {
                g.covariance.clear();
                for (const auto& row : c) {
                    const auto r = row.get<std::vector<double>>();
                    g.covariance.insert(g.covariance.end(), r.begin(), r.end());
                }
            }
        }
        return g;
    }
    if (type == "csv") {
        CsvLaw c;
        c.path = j.at("path").get<std::string>();
        c.standardize = j.value("standardize", true);
        c.jitter = j.value("jitter", 1e-6);
        return c;
    }
    throw ParseError("unknown law type '" + type + "'");
}

ojson law_to_json(const Law& law) {
    if (const auto* g = std::get_if<GaussianLaw>(&law)) {
        const std::size_t d = g->mean.size();
        auto cov = ojson::array();
        for (std::size_t i = 0; i < d; ++i) {
            cov.push_back(std::vector<double>(g->covariance.begin() + static_cast<std::ptrdiff_t>(i * d),
                                              g->covariance.begin() + static_cast<std::ptrdiff_t>((i + 1) * d)));
        }
        return {{"type", "gaussian"}, {"mean", g->mean}, {"covariance", cov}};
    }
    if (const auto* u = std::get_if<UniformLaw>(&law)) {
        return {{"type", "uniform"}, {"lower", u->lower}, {"upper", u->upper}};
    }
    const auto& c = std::get<CsvLaw>(law);
    return {{"type", "csv"}, {"path", c.path.string()}, {"standardize", c.standardize}, {"jitter", c.jitter}};
}

DetectorVariant monitor_variant(const std::string& s) { return variant_from_string(s); }

std::string table_cache_key(const CalibrationMeta& meta) {
    ThresholdTable stub;
    stub.meta = meta;
    const auto text = to_text(stub);
    // FNV-1a over the meta block.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h = (h ^ c) * 0x100000001b3ULL;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

bool same_meta(const CalibrationMeta& a, const CalibrationMeta& b) {
    ThresholdTable ta;
    ta.meta = a;
    ThresholdTable tb;
    tb.meta = b;
    return to_text(ta) == to_text(tb);
}

ojson optional_number(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

ojson finite_or_null(double v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

}  // namespace

std::string to_string(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::arl0:
            return "arl0";
        case ExperimentKind::delay_far:
            return "delay_far";
        case ExperimentKind::auc_by_lag:
            return "auc_by_lag";
    }
    return "unknown";
}

StreamSpec stream_spec_from_json(const json& j) {
    try {
        StreamSpec s;
        s.dim = j.at("dim").get<std::size_t>();
        s.length = j.at("length").get<std::size_t>();
        s.seed = j.value("seed", std::uint64_t{0});
        s.phi0 = law_from_json(j.at("phi0"), s.dim);
        if (j.contains("change") && !j.at("change").is_null()) {
            const auto& c = j.at("change");
            ChangeSpec change;
            change.tau = c.at("tau").get<std::size_t>();
            const auto& post = c.at("post");
            const auto type = post.at("type").get<std::string>();
            if (type == "mean_shift") {
                change.post = MeanShift{post.at("skl").get<double>()};
            } else if (type == "random_shift") {
                change.post = RandomShift{post.value("scale", 1.0)};
            } else if (type == "law") {
                change.post = law_from_json(post.at("law"), s.dim);
            } else {
                throw ParseError("unknown change type '" + type + "'");
            }
            s.change = change;
        }
        s.validate();
        return s;
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed stream spec: ") + e.what());
    }
}

ojson to_json(const StreamSpec& s) {
    ojson j;
    j["dim"] = s.dim;
    j["length"] = s.length;
    j["seed"] = s.seed;
    j["phi0"] = law_to_json(s.phi0);
    if (s.change) {
        ojson post;
        if (const auto* ms = std::get_if<MeanShift>(&s.change->post)) {
            post = {{"type", "mean_shift"}, {"skl", ms->skl}};
        } else if (const auto* rs = std::get_if<RandomShift>(&s.change->post)) {
            post = {{"type", "random_shift"}, {"scale", rs->scale}};
        } else {
            post = {{"type", "law"}, {"law", law_to_json(std::get<Law>(s.change->post))}};
        }
        j["change"] = {{"tau", s.change->tau}, {"post", post}};
    } else {
        j["change"] = nullptr;
    }
    return j;
}

ExperimentConfig experiment_from_json(const json& j) {
    try {
        ExperimentConfig c;
        c.name = j.value("name", std::string("experiment"));
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "arl0") {
            c.kind = ExperimentKind::arl0;
        } else if (kind == "delay_far") {
            c.kind = ExperimentKind::delay_far;
        } else if (kind == "auc_by_lag") {
            c.kind = ExperimentKind::auc_by_lag;
        } else {
            throw ParseError("unknown experiment kind '" + kind + "'");
        }
        c.stream = stream_spec_from_json(j.at("stream"));
        if (j.contains("stationary")) {
            c.stationary = stream_spec_from_json(j.at("stationary"));
        }
        const auto& hist = j.at("histogram");
        const auto bins = hist.at("bins").get<std::size_t>();
        const auto n_train = hist.at("n_train").get<std::size_t>();
        const auto probs = hist.contains("target_probs") ? hist.at("target_probs").get<std::vector<double>>()
                                                         : uniform_probs(bins);
        for (const auto& m : j.at("monitors")) {
            MonitorSetup s;
            s.variant = monitor_variant(m.value("variant", std::string("qt-ewma")));
            s.label = m.value("label", to_string(s.variant));
            s.ewma.lambda = m.value("lambda", 0.03);
            if (m.contains("beta") && !m.at("beta").is_null()) {
                s.ewma.beta = m.at("beta").get<double>();
            }
            if (m.contains("stop_at") && !m.at("stop_at").is_null()) {
                s.ewma.stop_at = m.at("stop_at").get<std::size_t>();
            }
            s.batch_size = m.value("batch_size", std::size_t{32});
            s.target_probs = probs;
            s.n_train = n_train;
            if (s.variant != DetectorVariant::batch_pearson && s.ewma.variant() != s.variant) {
                throw ParseError("monitor '" + s.label + "': variant and beta disagree");
            }
            c.monitors.push_back(std::move(s));
        }
        if (c.monitors.empty()) {
            throw ParseError("experiment needs at least one monitor");
        }
        c.arl0_target = j.value("arl0", 500.0);
        if (j.contains("table")) {
            const auto& t = j.at("table");
            if (t.contains("path")) {
                c.table.path = t.at("path").get<std::string>();
            }
            c.table.replicates = t.value("replicates", c.table.replicates);
            c.table.length = t.value("length", c.table.length);
            c.table.seed = t.value("seed", c.table.seed);
            c.table.degree = t.value("degree", c.table.degree);
        }
        c.runs = j.value("runs", c.runs);
        c.seed = j.value("seed", c.seed);
        c.lags = j.value("lags", std::vector<std::size_t>{});
        c.workers = j.value("workers", 0);
        return c;
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed experiment config: ") + e.what());
    }
}

ojson to_json(const ExperimentConfig& c) {
    ojson j;
    j["name"] = c.name;
    j["kind"] = to_string(c.kind);
    j["stream"] = to_json(c.stream);
    if (c.stationary) {
        j["stationary"] = to_json(*c.stationary);
    }
    j["histogram"] = {{"bins", c.monitors.front().target_probs.size()},
                      {"n_train", c.monitors.front().n_train},
                      {"target_probs", c.monitors.front().target_probs}};
    auto monitors = ojson::array();
    for (const auto& m : c.monitors) {
        monitors.push_back({{"label", m.label},
                            {"variant", to_string(m.variant)},
                            {"lambda", m.ewma.lambda},
                            {"beta", finite_or_null(m.ewma.beta)},
                            {"stop_at", m.ewma.stop_at ? ojson(*m.ewma.stop_at) : ojson(nullptr)},
                            {"batch_size", m.batch_size}});
    }
    j["monitors"] = monitors;
    j["arl0"] = c.arl0_target;
    ojson table;
    if (c.table.path) {
        table["path"] = c.table.path->string();
    }
    table["replicates"] = c.table.replicates;
    table["length"] = c.table.length;
    table["seed"] = c.table.seed;
    table["degree"] = c.table.degree;
    j["table"] = table;
    j["runs"] = c.runs;
    j["seed"] = c.seed;
    j["lags"] = c.lags;
    return j;
}

std::optional<std::filesystem::path> default_table_cache() {
    const char* env = std::getenv(kTableCacheEnv);
    if (env == nullptr || *env == '\0') {
        return std::nullopt;
    }
    return std::filesystem::path(env);
}

ThresholdTable resolve_table(const CalibrationMeta& meta_in, const TableSource& source,
                             const std::optional<std::filesystem::path>& cache_dir,
                             const CalibrationOptions& options) {
    if (source.path) {
        auto p = *source.path;
        if (!std::filesystem::exists(p) && p.is_relative() && cache_dir) {
            p = *cache_dir / p;
        }
        return load_table(p);
    }
    CalibrationMeta meta = meta_in;
    meta.replicates = source.replicates;
    meta.length = source.length;
    meta.seed = source.seed;
    meta.degree = source.degree;
    meta = normalized(meta);
    std::optional<std::filesystem::path> cached;
    if (cache_dir) {
        cached = *cache_dir / ("table-" + table_cache_key(meta) + ".json");
        if (std::filesystem::exists(*cached)) {
            auto table = load_table(*cached);
            if (same_meta(table.meta, meta)) {
                return table;
            }
        }
    }
    auto table = calibrate(meta, options);
    if (cached) {
        std::filesystem::create_directories(*cache_dir);
        save_table(table, *cached);
    }
    return table;
}

ExperimentReport run_experiment(const ExperimentConfig& config, const std::optional<std::filesystem::path>& cache_dir,
                                const CalibrationOptions& options) {
    ExperimentReport report;
    report.config = to_json(config);
    if (config.stream.change && std::holds_alternative<MeanShift>(config.stream.change->post)) {
        report.deviations.push_back(
            "post-change laws use a closed-form Gaussian mean shift with exact sKL instead of CCM roto-translation");
    }
    if (config.runs < 5000) {
        report.deviations.push_back("desk scale: " + std::to_string(config.runs) + " runs instead of 5000");
    }
    if (config.kind != ExperimentKind::auc_by_lag && !config.table.path && config.table.replicates < 1000000) {
        report.deviations.push_back("desk scale: thresholds calibrated with " +
                                    std::to_string(config.table.replicates) + " replicates instead of 1e6");
    }

    const StreamFactory streams(config.stream);
    switch (config.kind) {
        case ExperimentKind::arl0:
        case ExperimentKind::delay_far: {
            const auto& setup = config.monitors.front();
            if (config.monitors.size() > 1) {
                report.notes.push_back("only the first monitor is evaluated for " + to_string(config.kind));
            }
            const auto table = resolve_table(setup.calibration_meta(config.arl0_target), config.table, cache_dir,
                                             options);
            if (config.kind == ExperimentKind::arl0) {
                report.arl0 = measure_arl0(setup, table, streams, config.runs, config.seed, config.workers,
                                           &report.records);
                if (report.arl0->censored > 0) {
                    report.notes.push_back(std::to_string(report.arl0->censored) +
                                           " runs reached the end of the stream without an alarm (right-censored)");
                }
            } else {
                report.delay_far = measure_delay_far(setup, table, streams, config.runs, config.seed, config.workers,
                                                     &report.records);
                if (!report.delay_far->arl1) {
                    report.notes.push_back("ARL1 undefined: no run detected at or after tau (" +
                                           std::to_string(report.delay_far->false_alarms) + " false alarms)");
                }
            }
            break;
        }
        case ExperimentKind::auc_by_lag: {
            StreamSpec stationary_spec = config.stationary.value_or(config.stream);
            if (!config.stationary) {
                stationary_spec.change.reset();
            }
            const StreamFactory stationary(stationary_spec);
            const auto study = collect_auc_statistics(config.monitors, stationary, streams, config.lags, config.runs,
                                                      config.seed, config.workers);
            report.auc_labels = study.labels;
            report.auc = auc_by_lag(study);
            report.notes.insert(report.notes.end(), study.notes.begin(), study.notes.end());
            break;
        }
    }
    return report;
}

ojson to_json(const ExperimentReport& r) {
    ojson j;
    j["schema"] = "qtewma-report";
    j["schema_version"] = kReportSchemaVersion;
    j["experiment"] = r.config.value("kind", std::string("unknown"));
    j["name"] = r.config.value("name", std::string("experiment"));
    j["config"] = r.config;
    j["deviations"] = r.deviations;
    j["notes"] = r.notes;

    ojson agg;
    if (r.arl0) {
        agg["empirical_arl0"] = finite_or_null(r.arl0->arl0);
        agg["arl0_ci"] = {finite_or_null(r.arl0->ci_low), finite_or_null(r.arl0->ci_high)};
        agg["mean_detected"] = r.arl0->mean_detected;
        agg["detected"] = r.arl0->detected;
        agg["censored"] = r.arl0->censored;
    } else {
        agg["empirical_arl0"] = nullptr;
        agg["arl0_ci"] = nullptr;
        agg["mean_detected"] = nullptr;
        agg["detected"] = nullptr;
        agg["censored"] = nullptr;
    }
    if (r.delay_far) {
        agg["empirical_arl1"] = r.delay_far->arl1 ? optional_number(r.delay_far->arl1) : ojson(nullptr);
        agg["arl1_sd"] = r.delay_far->arl1_sd;
        agg["false_alarm_rate"] = r.delay_far->false_alarm_rate;
        agg["target_false_alarm_rate"] = r.delay_far->target_false_alarm_rate;
        agg["false_alarms"] = r.delay_far->false_alarms;
        agg["delayed"] = r.delay_far->delayed;
        if (!r.arl0) {
            agg["censored"] = r.delay_far->censored;
        }
    } else {
        agg["empirical_arl1"] = nullptr;
        agg["arl1_sd"] = nullptr;
        agg["false_alarm_rate"] = nullptr;
        agg["target_false_alarm_rate"] = nullptr;
        agg["false_alarms"] = nullptr;
        agg["delayed"] = nullptr;
    }
    auto auc = ojson::array();
    for (std::size_t s = 0; s < r.auc.size(); ++s) {
        auto series = ojson::array();
        for (const auto& p : r.auc[s]) {
            series.push_back({p.lag, p.auc});
        }
        auc.push_back({{"monitor", r.auc_labels[s]}, {"series", series}});
    }
    agg["auc_by_lag"] = auc;
    j["aggregates"] = agg;

    auto runs = ojson::array();
    for (const auto& rec : r.records) {
        runs.push_back({{"run", rec.run},
                        {"seed", rec.seed},
                        {"t_star", rec.t_star ? ojson(*rec.t_star) : ojson(nullptr)},
                        {"tau", rec.tau ? ojson(*rec.tau) : ojson(nullptr)},
                        {"false_alarm", rec.false_alarm}});
    }
    j["runs"] = runs;
    return j;
}

void validate_report(const json& j) {
    auto require = [&](const json& obj, const char* key, auto&& check, const char* type) {
        if (!obj.is_object() || !obj.contains(key) || !check(obj.at(key))) {
            throw ParseError(std::string("report field '") + key + "' missing or not " + type);
        }
    };
    auto is_string = [](const json& v) { return v.is_string(); };
    auto is_object = [](const json& v) { return v.is_object(); };
    auto is_array = [](const json& v) { return v.is_array(); };
    auto number_or_null = [](const json& v) { return v.is_number() || v.is_null(); };
    auto count_or_null = [](const json& v) { return v.is_number_unsigned() || v.is_null(); };

    require(j, "schema", is_string, "a string");
    if (j.at("schema") != "qtewma-report") {
        throw ParseError("not a qtewma report");
    }
    require(j, "schema_version", [](const json& v) { return v.is_number_integer(); }, "an integer");
    if (j.at("schema_version").get<int>() != kReportSchemaVersion) {
        throw ParseError("unsupported report schema version");
    }
    require(j, "experiment", is_string, "a string");
    require(j, "name", is_string, "a string");
    require(j, "config", is_object, "an object");
    require(j, "deviations", is_array, "an array");
    require(j, "notes", is_array, "an array");
    require(j, "aggregates", is_object, "an object");
    require(j, "runs", is_array, "an array");
    const auto& a = j.at("aggregates");
    for (const char* key : {"empirical_arl0", "mean_detected", "empirical_arl1", "arl1_sd", "false_alarm_rate",
                            "target_false_alarm_rate"}) {
        require(a, key, number_or_null, "a number or null");
    }
    for (const char* key : {"detected", "censored", "false_alarms", "delayed"}) {
        require(a, key, count_or_null, "a count or null");
    }
    require(a, "arl0_ci", [](const json& v) { return v.is_null() || (v.is_array() && v.size() == 2); },
            "a pair or null");
    require(a, "auc_by_lag", is_array, "an array");
    for (const auto& s : a.at("auc_by_lag")) {
        require(s, "monitor", is_string, "a string");
        require(s, "series", is_array, "an array");
        for (const auto& p : s.at("series")) {
            if (!p.is_array() || p.size() != 2 || !p[0].is_number_unsigned() || !p[1].is_number()) {
                throw ParseError("auc series entries must be [lag, auc]");
            }
        }
    }
    for (const auto& rec : j.at("runs")) {
        require(rec, "run", [](const json& v) { return v.is_number_unsigned(); }, "a count");
        require(rec, "seed", [](const json& v) { return v.is_number_unsigned(); }, "a count");
        require(rec, "t_star", count_or_null, "a count or null");
        require(rec, "tau", count_or_null, "a count or null");
        require(rec, "false_alarm", [](const json& v) { return v.is_boolean(); }, "a boolean");
    }
}

}  // namespace qtewma
