#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "qtewma/rng.hpp"
#include "qtewma/samples.hpp"

namespace qtewma {

struct GaussianLaw {
    std::vector<double> mean;
    // Row-major d x d, symmetric positive definite.
    std::vector<double> covariance;

    static GaussianLaw standard(std::size_t d);
    // Equicorrelated: unit variances, off-diagonal rho.
    static GaussianLaw equicorrelated(std::size_t d, double rho);
};

struct UniformLaw {
    std::vector<double> lower;
    std::vector<double> upper;

    static UniformLaw unit_cube(std::size_t d);
};

struct CsvLaw {
    std::filesystem::path path;
    bool standardize = true;
    // Jitter scale relative to each column's standard deviation.
    double jitter = 1e-6;
};

using Law = std::variant<GaussianLaw, UniformLaw, CsvLaw>;

/// Post-change Gaussian with the same covariance and a mean moved along a
/// random direction so that the symmetric KL divergence equals `skl`.
struct MeanShift {
    double skl = 1.0;
};

/// Adds a standard-Gaussian vector times `scale` times the total variance of phi0.
struct RandomShift {
    double scale = 1.0;
};

struct ChangeSpec {
    std::size_t tau = 1;
    std::variant<Law, MeanShift, RandomShift> post;
};

struct StreamSpec {
    std::size_t dim = 1;
    Law phi0;
    std::optional<ChangeSpec> change;
    std::size_t length = 0;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Symmetric KL divergence KL(a||b) + KL(b||a) between two Gaussians.
double gaussian_symmetric_kl(const GaussianLaw& a, const GaussianLaw& b);

/// Returns mean + v with v = c u, u a uniformly random unit vector and c such
/// that v' inv(cov) v = skl_target.
std::vector<double> gaussian_change_mean_shift(std::span<const double> mean, std::span<const double> covariance,
                                               double skl_target, std::uint64_t seed);

/// Numeric dataset loaded from CSV.
struct Dataset {
    SampleMatrix data;
    std::vector<std::string> header;
    std::vector<double> column_mean;
    std::vector<double> column_std;

    struct Split {
        std::vector<std::size_t> train;
        std::vector<std::size_t> test;
    };
    // Disjoint random split with n_train training rows; the rest are test rows.
    Split split(std::size_t n_train, std::uint64_t seed) const;
    SampleMatrix rows(std::span<const std::size_t> indices) const;
};

/// Parses a rectangular numeric CSV (header row auto-detected). Optionally
/// standardizes every column, then adds Gaussian jitter of scale
/// jitter_sigma * column std to break ties.
Dataset ingest_csv(const std::filesystem::path& path, bool standardize, double jitter_sigma, std::uint64_t seed);
Dataset parse_csv(const std::string& text, bool standardize, double jitter_sigma, std::uint64_t seed);

/// A resolved law ready for sampling (Cholesky factor computed, CSV loaded).
class LawSampler {
public:
    explicit LawSampler(const Law& law, std::size_t dim);

    std::size_t dim() const noexcept { return dim_; }
    void sample(Rng& rng, std::span<double> out) const;
    double total_variance() const noexcept { return total_variance_; }
    const Law& law() const noexcept { return law_; }
    // Non-null for CSV laws.
    const Dataset* dataset() const noexcept { return dataset_.get(); }

private:
    Law law_;
    std::size_t dim_;
    std::vector<double> chol_;
    double total_variance_ = 0.0;
    std::shared_ptr<const Dataset> dataset_;
};

/// Source of x_1..x_L: phi0 before tau, phi1 from tau on. Deterministic given
/// the spec seed. CSV laws are consumed without replacement from `rows`.
class StreamGenerator {
public:
    StreamGenerator(const StreamSpec& spec, std::shared_ptr<const LawSampler> pre,
                    std::shared_ptr<const LawSampler> post, std::vector<double> shift,
                    std::vector<std::size_t> csv_rows = {});

    // Writes the next sample; false once `length` samples were produced.
    bool next(std::span<double> out);
    bool operator()(std::span<double> out) { return next(out); }

    std::size_t produced() const noexcept { return t_; }
    std::size_t dim() const noexcept { return dim_; }
    const std::vector<double>& shift() const noexcept { return shift_; }

private:
    std::size_t dim_;
    std::size_t length_;
    std::size_t tau_;
    bool has_change_;
    std::shared_ptr<const LawSampler> pre_;
    std::shared_ptr<const LawSampler> post_;
    std::vector<double> shift_;
    std::vector<std::size_t> csv_rows_;
    Rng rng_;
    std::size_t t_ = 0;
};

/// Resolves a StreamSpec once and hands out per-run training sets and streams.
class StreamFactory {
public:
    explicit StreamFactory(StreamSpec spec);

    const StreamSpec& spec() const noexcept { return spec_; }

    // Stream with the spec's own seed.
    StreamGenerator stream() const { return stream_for(spec_.seed, {}); }

    struct Run {
        SampleMatrix train;
        StreamGenerator stream;
    };
    /// Training set of n_train points from phi0 plus a stream, both derived from
    /// run_seed. For CSV laws the training and stream rows are disjoint.
    Run make_run(std::uint64_t run_seed, std::size_t n_train) const;

private:
    StreamGenerator stream_for(std::uint64_t seed, std::vector<std::size_t> csv_rows) const;

    StreamSpec spec_;
    std::shared_ptr<const LawSampler> pre_;
    std::shared_ptr<const LawSampler> post_;
};

/// Materializes a whole stream.
SampleMatrix collect(StreamGenerator stream);

}  // namespace qtewma
