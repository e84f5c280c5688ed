#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "sepsisfl/common.hpp"
#include "sepsisfl/privacy.hpp"
#include "support.hpp"

using namespace sepsisfl;
using numcore::Rng;

TEST_SUITE_BEGIN("privacy");

TEST_CASE("clip_l2 trivial cases") {
    std::vector<double> x{0.3, 0.4};  // norm 0.5, below threshold
    double pre = privacy::clip_l2(x, 1.0);
    CHECK(pre == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(x[0] == 0.3);
    CHECK(x[1] == 0.4);

    std::vector<double> y{3.0, 4.0};  // norm 5, clipped to C = 1
    pre = privacy::clip_l2(y, 1.0);
    CHECK(pre == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(y[0] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(0.8).epsilon(1e-12));

    std::vector<double> z{0.0, 0.0, 0.0};
    privacy::clip_l2(z, 1.0);
    for (double v : z) CHECK(v == 0.0);
}

TEST_CASE("clip_l2 norm cap, direction preservation, idempotence") {
    Rng rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        int n = 1 + static_cast<int>(rng.uniform_int(20));
        std::vector<double> x(static_cast<std::size_t>(n));
        for (auto& v : x) v = 10.0 * rng.normal();
        double c = 0.1 + 2.0 * rng.uniform01();
        std::vector<double> orig = x;

        privacy::clip_l2(x, c);

        double norm = 0.0, dot = 0.0, onorm = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            norm += x[i] * x[i];
            dot += x[i] * orig[i];
            onorm += orig[i] * orig[i];
        }
        norm = std::sqrt(norm);
        onorm = std::sqrt(onorm);
        CHECK(norm <= c * (1.0 + 1e-12));
        if (onorm > 1e-9) {  // cosine 1: clipping only rescales
            double cosine = dot / (norm * onorm);
            CHECK(cosine == doctest::Approx(1.0).epsilon(1e-9));
        }
        if (onorm <= c) {
            for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i] == orig[i]);
        }

        std::vector<double> again = x;
        privacy::clip_l2(again, c);
        for (std::size_t i = 0; i < x.size(); ++i)
            CHECK(again[i] == doctest::Approx(x[i]).epsilon(1e-12));
    }
}

TEST_CASE("add_gaussian_noise: sigma 0 is the identity") {
    privacy::DpConfig cfg;
    cfg.clip_norm = 1.0;
    cfg.noise_multiplier = 0.0;
    std::vector<double> x{1.0, -2.0, 3.5};
    std::vector<double> orig = x;
    Rng rng(3);
    privacy::add_gaussian_noise(x, cfg, rng);
    CHECK(x == orig);
}

TEST_CASE("add_gaussian_noise matches N(0, (sigma C)^2) statistics") {
    privacy::DpConfig cfg;
    cfg.clip_norm = 2.0;
    cfg.noise_multiplier = 1.5;
    const std::size_t n = 100000;
    std::vector<double> x(n, 0.0);
    Rng rng(71);
    privacy::add_gaussian_noise(x, cfg, rng);

    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n - 1);
    double sd = std::sqrt(var);

    double target_sd = cfg.noise_multiplier * cfg.clip_norm;        // 3.0
    double se_mean = target_sd / std::sqrt(static_cast<double>(n)); // ~0.0095
    CHECK(std::abs(mean) < 3.0 * se_mean);
    CHECK(std::abs(sd - target_sd) / target_sd < 0.05);
}

TEST_CASE("accountant: zero rounds, doubling, closed form") {
    CHECK(privacy::epsilon_spent(1.0, 1e-5, 0).epsilon == 0.0);
    CHECK(privacy::epsilon_spent(0.0, 1e-5, 0).epsilon == 0.0);

    auto one = privacy::epsilon_spent(1.2, 1e-5, 1);
    auto two = privacy::epsilon_spent(1.2, 1e-5, 2);
    CHECK(two.epsilon == doctest::Approx(2.0 * one.epsilon).epsilon(1e-12));
    CHECK(two.delta == doctest::Approx(2.0 * one.delta).epsilon(1e-12));
    CHECK(two.rounds_composed == 2);

    // closed form: eps_1 = sqrt(2 ln(1.25/1e-5)) / 4.8414 = 1.000 within 1e-3
    CHECK(std::abs(privacy::gaussian_epsilon(4.8414, 1e-5) - 1.0) < 1e-3);

    CHECK(privacy::gaussian_epsilon(0.0, 1e-5) ==
          std::numeric_limits<double>::infinity());
    CHECK(privacy::epsilon_spent(0.0, 1e-5, 3).epsilon ==
          std::numeric_limits<double>::infinity());

    // monotonicity: epsilon decreases as sigma grows, increases with rounds
    double prev = privacy::gaussian_epsilon(0.5, 1e-5);
    for (double sigma : {1.0, 2.0, 4.0, 8.0}) {
        double cur = privacy::gaussian_epsilon(sigma, 1e-5);
        CHECK(cur < prev);
        prev = cur;
    }
    double acc = 0.0;
    for (int r = 1; r <= 6; ++r) {
        double cur = privacy::epsilon_spent(1.1, 1e-5, r).epsilon;
        CHECK(cur > acc);
        acc = cur;
    }
}

TEST_CASE("config validation") {
    privacy::DpConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.clip_norm = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.clip_norm = 1.0;
    cfg.noise_multiplier = -0.1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.noise_multiplier = 1.0;
    cfg.delta = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.delta = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_SUITE_END();
