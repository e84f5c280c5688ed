#include "sepsisfl/privacy.hpp"

#include <cmath>
#include <limits>

#include "sepsisfl/common.hpp"

namespace sepsisfl::privacy {

void DpConfig::validate() const {
    if (clip_norm <= 0.0) throw ConfigError("dp: clip_norm must be positive");
    if (noise_multiplier < 0.0) throw ConfigError("dp: noise_multiplier must be >= 0");
    if (delta <= 0.0 || delta >= 1.0) throw ConfigError("dp: delta must lie in (0, 1)");
}

double clip_l2(std::span<double> x, double clip_norm) {
    if (clip_norm <= 0.0) throw ConfigError("clip_norm must be positive");
    double norm = numcore::l2_norm(x);
    if (norm > clip_norm) {
        double s = clip_norm / norm;
        for (double& v : x) v *= s;
    }
    return norm;
}

void add_gaussian_noise(std::span<double> x, const DpConfig& cfg, numcore::Rng& rng) {
    if (cfg.noise_multiplier < 0.0) throw ConfigError("noise_multiplier must be >= 0");
    if (cfg.noise_multiplier == 0.0) return;
    double sd = cfg.noise_multiplier * cfg.clip_norm;
    for (double& v : x) v += sd * rng.normal();
}

double gaussian_epsilon(double noise_multiplier, double delta) {
    if (noise_multiplier < 0.0) throw ConfigError("noise_multiplier must be >= 0");
    if (delta <= 0.0 || delta >= 1.0) throw ConfigError("delta must lie in (0, 1)");
    if (noise_multiplier == 0.0) return std::numeric_limits<double>::infinity();
    return std::sqrt(2.0 * std::log(1.25 / delta)) / noise_multiplier;
}

PrivacySpent epsilon_spent(double noise_multiplier, double delta, int rounds) {
    if (rounds < 0) throw ConfigError("rounds must be >= 0");
    PrivacySpent spent;
    spent.rounds_composed = rounds;
    spent.delta = rounds * delta;
    spent.epsilon = rounds == 0 ? 0.0 : rounds * gaussian_epsilon(noise_multiplier, delta);
    return spent;
}

double clip_l2(model::ParamVector& v, double clip_norm) {
    return clip_l2(std::span<double>(v.flat().data(), v.flat().size()), clip_norm);
}

void add_gaussian_noise(model::ParamVector& v, const DpConfig& cfg, numcore::Rng& rng) {
    add_gaussian_noise(std::span<double>(v.flat().data(), v.flat().size()), cfg, rng);
}

}  // namespace sepsisfl::privacy
