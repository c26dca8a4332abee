#include "qtewma/threshold_table.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "qtewma/errors.hpp"
#include "qtewma/hexfloat.hpp"

namespace qtewma {

namespace {

constexpr int kTableFormatVersion = 1;

using ojson = nlohmann::ordered_json;

std::string real_to_text(double v) {
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    return to_hexfloat(v);
}

double real_from_text(const std::string& s) {
    if (s == "inf") {
        return std::numeric_limits<double>::infinity();
    }
    return from_hexfloat(s);
}

}  // namespace

std::string to_string(DetectorVariant v) {
    switch (v) {
        case DetectorVariant::qt_ewma:
            return "qt-ewma";
        case DetectorVariant::qt_ewma_update:
            return "qt-ewma-update";
        case DetectorVariant::batch_pearson:
            return "batch-pearson";
    }
    return "unknown";
}

DetectorVariant variant_from_string(const std::string& s) {
    if (s == "qt-ewma") {
        return DetectorVariant::qt_ewma;
    }
    if (s == "qt-ewma-update") {
        return DetectorVariant::qt_ewma_update;
    }
    if (s == "batch-pearson") {
        return DetectorVariant::batch_pearson;
    }
    throw ParseError("unknown detector variant '" + s + "'");
}

ThresholdCurve ThresholdTable::curve(ThresholdEvaluation mode) const {
    if (raw.empty() || poly_coeffs.empty()) {
        return {};
    }
    const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end(),
                                              [](const auto& a, const auto& b) { return a.h < b.h; });
    std::vector<double> values;
    if (mode == ThresholdEvaluation::hybrid && meta.variant != DetectorVariant::batch_pearson) {
        values.reserve(raw.size());
        for (const auto& p : raw) {
            values.push_back(p.h);
        }
    }
    return ThresholdCurve(poly_coeffs, lo->h, hi->h, std::move(values));
}

std::string to_text(const ThresholdTable& table) {
    const auto& m = table.meta;
    ojson j;
    j["format"] = "qtewma-threshold-table";
    j["version"] = kTableFormatVersion;
    ojson meta;
    meta["variant"] = to_string(m.variant);
    meta["lambda"] = real_to_text(m.lambda);
    meta["bins"] = m.bins();
    auto probs = ojson::array();
    for (double p : m.target_probs) {
        probs.push_back(real_to_text(p));
    }
    meta["target_probs"] = std::move(probs);
    meta["n_train"] = m.n_train;
    meta["beta"] = real_to_text(m.beta);
    meta["stop_at"] = m.stop_at ? ojson(*m.stop_at) : ojson(nullptr);
    meta["arl0_target"] = real_to_text(m.arl0_target);
    meta["alpha"] = real_to_text(m.alpha);
    meta["replicates"] = m.replicates;
    meta["length"] = m.length;
    meta["seed"] = m.seed;
    meta["degree"] = m.degree;
    meta["batch_size"] = m.batch_size;
    meta["reservoir_cap"] = m.reservoir_cap;
    meta["survivor_floor"] = m.survivor_floor;
    j["meta"] = std::move(meta);

    auto raw = ojson::array();
    for (const auto& p : table.raw) {
        raw.push_back(ojson::array({p.t, real_to_text(p.h), p.survivors}));
    }
    j["raw"] = std::move(raw);

    ojson poly;
    poly["degree"] = table.poly_coeffs.empty() ? 0 : table.poly_coeffs.size() - 1;
    auto coeffs = ojson::array();
    for (double c : table.poly_coeffs) {
        coeffs.push_back(real_to_text(c));
    }
    poly["coefficients"] = std::move(coeffs);
    j["poly"] = std::move(poly);

    ojson diag;
    diag["fit_rms"] = real_to_text(table.fit_rms);
    diag["fit_rms_decimal"] = table.fit_rms;
    diag["truncated"] = table.truncated;
    j["diagnostics"] = std::move(diag);
    return j.dump(1) + "\n";
}

ThresholdTable table_from_text(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.at("format").get<std::string>() != "qtewma-threshold-table") {
            throw ParseError("not a threshold table");
        }
        if (j.at("version").get<int>() != kTableFormatVersion) {
            throw ParseError("unsupported threshold table version " + j.at("version").dump());
        }
        ThresholdTable t;
        const auto& meta = j.at("meta");
        auto& m = t.meta;
        m.variant = variant_from_string(meta.at("variant").get<std::string>());
        m.lambda = real_from_text(meta.at("lambda").get<std::string>());
        for (const auto& p : meta.at("target_probs")) {
            m.target_probs.push_back(real_from_text(p.get<std::string>()));
        }
        if (m.target_probs.size() != meta.at("bins").get<std::size_t>()) {
            throw ParseError("bins does not match target_probs length");
        }
        m.n_train = meta.at("n_train").get<std::size_t>();
        m.beta = real_from_text(meta.at("beta").get<std::string>());
        if (!meta.at("stop_at").is_null()) {
            m.stop_at = meta.at("stop_at").get<std::size_t>();
        }
        m.arl0_target = real_from_text(meta.at("arl0_target").get<std::string>());
        m.alpha = real_from_text(meta.at("alpha").get<std::string>());
        m.replicates = meta.at("replicates").get<std::size_t>();
        m.length = meta.at("length").get<std::size_t>();
        m.seed = meta.at("seed").get<std::uint64_t>();
        m.degree = meta.at("degree").get<int>();
        m.batch_size = meta.at("batch_size").get<std::size_t>();
        m.reservoir_cap = meta.at("reservoir_cap").get<std::size_t>();
        m.survivor_floor = meta.at("survivor_floor").get<std::size_t>();
        for (const auto& row : j.at("raw")) {
            t.raw.push_back({row.at(0).get<std::size_t>(), real_from_text(row.at(1).get<std::string>()),
                             row.at(2).get<std::size_t>()});
        }
        for (const auto& c : j.at("poly").at("coefficients")) {
            t.poly_coeffs.push_back(real_from_text(c.get<std::string>()));
        }
        t.fit_rms = real_from_text(j.at("diagnostics").at("fit_rms").get<std::string>());
        t.truncated = j.at("diagnostics").at("truncated").get<bool>();
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed threshold table: ") + e.what());
    }
}

void save_table(const ThresholdTable& table, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << to_text(table);
}

ThresholdTable load_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read threshold table " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return table_from_text(buf.str());
}

}  // namespace qtewma
