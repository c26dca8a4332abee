#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "qtewma/rng.hpp"
#include "qtewma/samples.hpp"

namespace qtewma {

enum class CutDirection { lower, upper };

/// Half-space test isolating one bin from the points that survived earlier cuts.
/// Lower cuts claim x[dimension] <= threshold, upper cuts claim x[dimension] >= threshold.
struct Cut {
    std::size_t dimension = 0;
    CutDirection direction = CutDirection::lower;
    double threshold = 0.0;

    bool contains(std::span<const double> x) const noexcept {
        const double v = x[dimension];
        return direction == CutDirection::lower ? v <= threshold : v >= threshold;
    }

    friend bool operator==(const Cut&, const Cut&) = default;
};

/// A fitted QuantTree histogram: K-1 ordered cuts define K bins, the last bin
/// being whatever no cut claims.
struct QuantTreePartition {
    std::vector<Cut> cuts;
    std::vector<std::size_t> bin_counts;
    std::vector<double> target_probs;
    std::vector<double> pi_tilde;
    std::size_t n_train = 0;
    std::size_t dim = 0;
    std::uint64_t seed = 0;

    std::size_t bins() const noexcept { return bin_counts.size(); }

    /// Bin index of x. Throws ShapeError when x.size() != dim.
    std::size_t lookup(std::span<const double> x) const;

    // Hot-path variant; caller guarantees x.size() == dim.
    std::size_t lookup_unchecked(std::span<const double> x) const noexcept {
        const std::size_t n = cuts.size();
        for (std::size_t j = 0; j < n; ++j) {
            if (cuts[j].contains(x)) {
                return j;
            }
        }
        return n;
    }

    friend bool operator==(const QuantTreePartition&, const QuantTreePartition&) = default;
};

/// Largest-remainder allocation of N points to bins with target probabilities
/// pi. Ties in the remainder go to the higher bin index, so the last bin
/// absorbs residue first.
std::vector<std::size_t> allocate_bin_counts(std::span<const double> target_probs, std::size_t n_train);

/// pi_tilde_j = L_j / (N + 1) for j < K and (L_K + 1) / (N + 1) for the last bin.
std::vector<double> compute_pi_tilde(std::span<const std::size_t> bin_counts, std::size_t n_train);

/// Dirichlet parameters (L_1, ..., L_{K-1}, L_K + 1) of the bin-probability law.
std::vector<double> dirichlet_parameters(std::span<const std::size_t> bin_counts);

std::vector<double> uniform_probs(std::size_t bins);

void validate_target_probs(std::span<const double> target_probs);

QuantTreePartition build_partition(const SampleMatrix& train, std::span<const double> target_probs,
                                   std::uint64_t seed);

/// Exact probability mass of every bin under the uniform law on the box
/// [lower, upper] (all bins are boxes because cuts are axis-aligned tails).
std::vector<double> uniform_bin_masses(const QuantTreePartition& partition, std::span<const double> lower,
                                       std::span<const double> upper);

enum class BinSampler { dirichlet, stick_breaking };

struct BinProbabilityVector {
    std::vector<double> probs;
};

/// Draws the bin probabilities of a QuantTree fitted on N points from any
/// continuous law. Both samplers target the same Dirichlet distribution.
BinProbabilityVector sample_bin_probabilities(std::span<const double> target_probs, std::size_t n_train,
                                              BinSampler method, std::uint64_t seed);

// Same draw from precomputed counts, advancing the caller's generator.
void draw_bin_probabilities(std::span<const std::size_t> bin_counts, BinSampler method, Rng& rng,
                            std::span<double> out);

std::string to_text(const QuantTreePartition& partition);
QuantTreePartition partition_from_text(const std::string& text);
void save_partition(const QuantTreePartition& partition, const std::filesystem::path& path);
QuantTreePartition load_partition(const std::filesystem::path& path);

}  // namespace qtewma
