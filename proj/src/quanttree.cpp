#include "qtewma/quanttree.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "qtewma/errors.hpp"
#include "qtewma/hexfloat.hpp"

namespace qtewma {

namespace {

constexpr int kPartitionFormatVersion = 1;

}  // namespace

std::size_t QuantTreePartition::lookup(std::span<const double> x) const {
    if (x.size() != dim) {
        throw ShapeError("sample has dimension " + std::to_string(x.size()) + ", partition expects " +
                         std::to_string(dim));
    }
    return lookup_unchecked(x);
}

void validate_target_probs(std::span<const double> target_probs) {
    if (target_probs.size() < 2) {
        throw InvalidArgumentError("a partition needs at least 2 bins");
    }
    double total = 0.0;
    for (double p : target_probs) {
        if (!(p > 0.0) || !std::isfinite(p)) {
            throw InvalidArgumentError("target probabilities must be positive");
        }
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw InvalidArgumentError("target probabilities must sum to 1");
    }
}

std::vector<double> uniform_probs(std::size_t bins) {
    return std::vector<double>(bins, 1.0 / static_cast<double>(bins));
}

std::vector<std::size_t> allocate_bin_counts(std::span<const double> target_probs, std::size_t n_train) {
    validate_target_probs(target_probs);
    const std::size_t k = target_probs.size();
    std::vector<std::size_t> counts(k);
    std::vector<double> remainder(k);
    std::size_t assigned = 0;
    for (std::size_t j = 0; j < k; ++j) {
        const double quota = target_probs[j] * static_cast<double>(n_train);
        // Snap quotas within rounding noise of an integer so uniform pi with N = mK stays exact.
        const double nearest = std::round(quota);
        const double q = std::abs(quota - nearest) < 1e-9 ? nearest : quota;
        counts[j] = static_cast<std::size_t>(std::floor(q));
        remainder[j] = q - std::floor(q);
        assigned += counts[j];
    }
    if (assigned > n_train) {
        throw InvalidArgumentError("target probabilities over-allocate the training set");
    }
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (remainder[a] != remainder[b]) {
            return remainder[a] > remainder[b];
        }
        return a > b;
    });
    for (std::size_t i = 0; assigned < n_train; ++i) {
        ++counts[order[i % k]];
        ++assigned;
    }
    return counts;
}

std::vector<double> compute_pi_tilde(std::span<const std::size_t> bin_counts, std::size_t n_train) {
    const double denom = static_cast<double>(n_train) + 1.0;
    std::vector<double> pi(bin_counts.size());
    double head = 0.0;
    for (std::size_t j = 0; j + 1 < bin_counts.size(); ++j) {
        pi[j] = static_cast<double>(bin_counts[j]) / denom;
        head += pi[j];
    }
    // Last bin takes the complement so the vector sums to one.
    pi.back() = 1.0 - head;
    return pi;
}

std::vector<double> dirichlet_parameters(std::span<const std::size_t> bin_counts) {
    std::vector<double> alpha(bin_counts.begin(), bin_counts.end());
    alpha.back() += 1.0;
    return alpha;
}

QuantTreePartition build_partition(const SampleMatrix& train, std::span<const double> target_probs,
                                   std::uint64_t seed) {
    validate_target_probs(target_probs);
    const std::size_t n = train.rows();
    const std::size_t k = target_probs.size();
    const std::size_t d = train.dim();
    if (n < k) {
        throw InvalidTrainingError("training set has " + std::to_string(n) + " points but " + std::to_string(k) +
                                   " bins were requested");
    }
    if (d == 0) {
        throw InvalidTrainingError("training set has zero dimension");
    }

    QuantTreePartition part;
    part.bin_counts = allocate_bin_counts(target_probs, n);
    if (std::find(part.bin_counts.begin(), part.bin_counts.end(), 0U) != part.bin_counts.end()) {
        throw InvalidTrainingError("a bin would receive no training points; increase N");
    }
    part.target_probs.assign(target_probs.begin(), target_probs.end());
    part.pi_tilde = compute_pi_tilde(part.bin_counts, n);
    part.n_train = n;
    part.dim = d;
    part.seed = seed;
    part.cuts.reserve(k - 1);

    Rng rng(seed);
    std::vector<std::size_t> alive(n);
    std::iota(alive.begin(), alive.end(), 0);

    for (std::size_t j = 0; j + 1 < k; ++j) {
        const std::size_t dim = static_cast<std::size_t>(rng.below(d));
        const auto direction = rng.below(2) == 0 ? CutDirection::lower : CutDirection::upper;
        std::sort(alive.begin(), alive.end(),
                  [&](std::size_t a, std::size_t b) { return train(a, dim) < train(b, dim); });
        for (std::size_t i = 1; i < alive.size(); ++i) {
            if (train(alive[i - 1], dim) == train(alive[i], dim)) {
                throw DegenerateCutError(dim, "repeated coordinate value along dimension " + std::to_string(dim) +
                                                  "; add jitter to the training data");
            }
        }
        const std::size_t take = part.bin_counts[j];
        const std::size_t m = alive.size();
        // Threshold sits on the take-th order statistic of the chosen tail, which
        // makes each conditional bin mass Beta(take, m - take + 1).
        if (direction == CutDirection::lower) {
            part.cuts.push_back({dim, direction, train(alive[take - 1], dim)});
            alive.erase(alive.begin(), alive.begin() + static_cast<std::ptrdiff_t>(take));
        } else {
            part.cuts.push_back({dim, direction, train(alive[m - take], dim)});
            alive.resize(m - take);
        }
    }
    return part;
}

std::vector<double> uniform_bin_masses(const QuantTreePartition& partition, std::span<const double> lower,
                                       std::span<const double> upper) {
    if (lower.size() != partition.dim || upper.size() != partition.dim) {
        throw ShapeError("box bounds do not match the partition dimension");
    }
    std::vector<double> lo(lower.begin(), lower.end());
    std::vector<double> hi(upper.begin(), upper.end());
    double total = 1.0;
    for (std::size_t k = 0; k < lo.size(); ++k) {
        total *= hi[k] - lo[k];
    }
    auto volume = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double v = 1.0;
        for (std::size_t k = 0; k < a.size(); ++k) {
            v *= std::max(0.0, b[k] - a[k]);
        }
        return v;
    };
    std::vector<double> masses;
    masses.reserve(partition.bins());
    for (const Cut& cut : partition.cuts) {
        const std::size_t k = cut.dimension;
        const double t = std::clamp(cut.threshold, lo[k], hi[k]);
        auto bin_lo = lo;
        auto bin_hi = hi;
        if (cut.direction == CutDirection::lower) {
            bin_hi[k] = t;
            lo[k] = t;
        } else {
            bin_lo[k] = t;
            hi[k] = t;
        }
        masses.push_back(volume(bin_lo, bin_hi) / total);
    }
    masses.push_back(volume(lo, hi) / total);
    return masses;
}

void draw_bin_probabilities(std::span<const std::size_t> bin_counts, BinSampler method, Rng& rng,
                            std::span<double> out) {
    const std::size_t k = bin_counts.size();
    if (method == BinSampler::dirichlet) {
        double total = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double shape = static_cast<double>(bin_counts[j]) + (j + 1 == k ? 1.0 : 0.0);
            out[j] = rng.gamma(shape);
            total += out[j];
        }
        for (std::size_t j = 0; j < k; ++j) {
            out[j] /= total;
        }
        return;
    }
    // Stick-breaking: p_j = prod_{i<j}(1 - b_i) * b_j with b_j ~ Beta(L_j, remaining + 1).
    std::size_t remaining = std::accumulate(bin_counts.begin(), bin_counts.end(), std::size_t{0});
    double stick = 1.0;
    for (std::size_t j = 0; j + 1 < k; ++j) {
        remaining -= bin_counts[j];
        const double b = rng.beta(static_cast<double>(bin_counts[j]), static_cast<double>(remaining) + 1.0);
        out[j] = stick * b;
        stick *= 1.0 - b;
    }
    out[k - 1] = stick;
}

BinProbabilityVector sample_bin_probabilities(std::span<const double> target_probs, std::size_t n_train,
                                              BinSampler method, std::uint64_t seed) {
    if (n_train < 1) {
        throw InvalidArgumentError("training set size must be at least 1");
    }
    const auto counts = allocate_bin_counts(target_probs, n_train);
    if (std::find(counts.begin(), counts.end(), 0U) != counts.end()) {
        throw InvalidArgumentError("a bin would receive no training points; increase N");
    }
    Rng rng(seed);
    BinProbabilityVector v;
    v.probs.resize(counts.size());
    draw_bin_probabilities(counts, method, rng, v.probs);
    return v;
}

std::string to_text(const QuantTreePartition& p) {
    nlohmann::ordered_json j;
    j["format"] = "qtewma-partition";
    j["version"] = kPartitionFormatVersion;
    j["dim"] = p.dim;
    j["n_train"] = p.n_train;
    j["seed"] = p.seed;
    j["bin_counts"] = p.bin_counts;
    auto hex_list = [](const std::vector<double>& v) {
        auto arr = nlohmann::ordered_json::array();
        for (double x : v) {
            arr.push_back(to_hexfloat(x));
        }
        return arr;
    };
    j["target_probs"] = hex_list(p.target_probs);
    j["pi_tilde"] = hex_list(p.pi_tilde);
    auto cuts = nlohmann::ordered_json::array();
    for (const Cut& c : p.cuts) {
        cuts.push_back({{"dimension", c.dimension},
                        {"direction", c.direction == CutDirection::lower ? "lower" : "upper"},
                        {"threshold", to_hexfloat(c.threshold)}});
    }
    j["cuts"] = std::move(cuts);
    return j.dump(2) + "\n";
}

QuantTreePartition partition_from_text(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.at("format").get<std::string>() != "qtewma-partition") {
            throw ParseError("not a partition file");
        }
        if (j.at("version").get<int>() != kPartitionFormatVersion) {
            throw ParseError("unsupported partition format version " + j.at("version").dump());
        }
        QuantTreePartition p;
        p.dim = j.at("dim").get<std::size_t>();
        p.n_train = j.at("n_train").get<std::size_t>();
        p.seed = j.at("seed").get<std::uint64_t>();
        p.bin_counts = j.at("bin_counts").get<std::vector<std::size_t>>();
        for (const auto& x : j.at("target_probs")) {
            p.target_probs.push_back(from_hexfloat(x.get<std::string>()));
        }
        for (const auto& x : j.at("pi_tilde")) {
            p.pi_tilde.push_back(from_hexfloat(x.get<std::string>()));
        }
        for (const auto& c : j.at("cuts")) {
            const auto dir = c.at("direction").get<std::string>();
            if (dir != "lower" && dir != "upper") {
                throw ParseError("unknown cut direction '" + dir + "'");
            }
            p.cuts.push_back({c.at("dimension").get<std::size_t>(),
                              dir == "lower" ? CutDirection::lower : CutDirection::upper,
                              from_hexfloat(c.at("threshold").get<std::string>())});
        }
        const std::size_t k = p.bin_counts.size();
        if (k < 2 || p.cuts.size() + 1 != k || p.target_probs.size() != k || p.pi_tilde.size() != k) {
            throw ParseError("partition file has inconsistent bin counts");
        }
        for (const Cut& c : p.cuts) {
            if (c.dimension >= p.dim) {
                throw ParseError("cut dimension out of range");
            }
        }
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed partition file: ") + e.what());
    }
}

void save_partition(const QuantTreePartition& partition, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << to_text(partition);
}

QuantTreePartition load_partition(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read partition " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    return partition_from_text(buf.str());
}

}  // namespace qtewma
