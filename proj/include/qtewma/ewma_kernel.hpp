#pragma once

#include <cstddef>
#include <limits>
#include <span>

namespace qtewma {

inline constexpr double kProbabilityFloor = 1e-9;

/// Fixed parameters of one QT-EWMA recursion. beta = +inf disables the
/// bin-probability update; stop_at = 0 means the update never stops.
struct EwmaParams {
    double lambda = 0.03;
    double beta = std::numeric_limits<double>::infinity();
    std::size_t n_train = 0;
    std::size_t stop_at = 0;

    bool updates_at(std::size_t t) const noexcept {
        if (!(beta < std::numeric_limits<double>::infinity())) {
            return false;
        }
        return stop_at == 0 || n_train + t < stop_at;
    }
};

/// One step of the recursion shared by the online detector and the Monte
/// Carlo calibration, so both compute bit-identical statistics.
///
/// `t` is the counter after this sample (first sample: t = 1). `inv_p` caches
/// 1 / max(p_hat, floor) and is refreshed whenever p_hat moves.
inline double ewma_step(std::span<double> z, std::span<double> p_hat, std::span<double> inv_p, std::size_t bin,
                        std::size_t t, const EwmaParams& params) noexcept {
    const std::size_t k = z.size();
    const double keep = 1.0 - params.lambda;
    for (std::size_t j = 0; j < k; ++j) {
        z[j] *= keep;
    }
    z[bin] += params.lambda;

    if (params.updates_at(t)) {
        const double omega = 1.0 / (params.beta * static_cast<double>(params.n_train + t));
        const double stay = 1.0 - omega;
        for (std::size_t j = 0; j < k; ++j) {
            p_hat[j] *= stay;
        }
        p_hat[bin] += omega;
        for (std::size_t j = 0; j < k; ++j) {
            inv_p[j] = 1.0 / (p_hat[j] > kProbabilityFloor ? p_hat[j] : kProbabilityFloor);
        }
    }

    double stat = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
        const double d = z[j] - p_hat[j];
        stat += d * d * inv_p[j];
    }
    return stat;
}

inline void ewma_reset(std::span<double> z, std::span<double> p_hat, std::span<double> inv_p,
                       std::span<const double> reference) noexcept {
    for (std::size_t j = 0; j < reference.size(); ++j) {
        z[j] = reference[j];
        p_hat[j] = reference[j];
        inv_p[j] = 1.0 / (reference[j] > kProbabilityFloor ? reference[j] : kProbabilityFloor);
    }
}

}  // namespace qtewma
