#pragma once

// Differential privacy for client payloads: L2 clipping, calibrated Gaussian
// noise, and a Gaussian-mechanism accountant under basic composition.

#include <cstdint>
#include <span>

#include "sepsisfl/numcore.hpp"
#include "sepsisfl/params.hpp"

namespace sepsisfl::privacy {

struct DpConfig {
    bool enabled = true;
    double clip_norm = 1.0;         // C > 0
    double noise_multiplier = 1.0;  // sigma >= 0; 0 disables noise
    double delta = 1e-5;            // target delta in (0, 1)

    void validate() const;  // throws ConfigError on out-of-range fields
};

struct PrivacySpent {
    double epsilon = 0.0;
    double delta = 0.0;
    int rounds_composed = 0;
};

// Scales x in place by min(1, C/||x||2). Returns the pre-clip norm.
double clip_l2(std::span<double> x, double clip_norm);

// Adds iid N(0, (sigma*C)^2) to every coordinate. No-op when sigma == 0.
void add_gaussian_noise(std::span<double> x, const DpConfig& cfg, numcore::Rng& rng);

// Per-release epsilon of the Gaussian mechanism at noise level sigma:
//   eps = sqrt(2 ln(1.25/delta)) / sigma.
// sigma == 0 reports an unbounded budget (+infinity).
double gaussian_epsilon(double noise_multiplier, double delta);

// Basic composition over `rounds` identical releases: eps_total = rounds * eps_1
// and delta_total = rounds * delta. rounds == 0 spends nothing even at sigma 0.
PrivacySpent epsilon_spent(double noise_multiplier, double delta, int rounds);

// ParamVector conveniences used by the federation layer.
double clip_l2(model::ParamVector& v, double clip_norm);
void add_gaussian_noise(model::ParamVector& v, const DpConfig& cfg, numcore::Rng& rng);

}  // namespace sepsisfl::privacy
