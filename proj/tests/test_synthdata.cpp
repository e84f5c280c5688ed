#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "sepsisfl/synthdata.hpp"
#include "support.hpp"

using namespace sepsisfl;
using numcore::Rng;
using numcore::Tensor;
using synthdata::Cohort;
using synthdata::CohortConfig;
using synthdata::EpisodeWindow;

TEST_SUITE_BEGIN("synthdata");

namespace {

bool same_window(const EpisodeWindow& a, const EpisodeWindow& b) {
    if (a.patient_id != b.patient_id || a.label != b.label) return false;
    if (a.timestamps != b.timestamps || a.feature_entities != b.feature_entities) return false;
    if (a.values.size() != b.values.size()) return false;
    for (std::size_t i = 0; i < a.values.size(); ++i)
        if (a.values[i] != b.values[i] || a.observed_mask[i] != b.observed_mask[i]) return false;
    return true;
}

Cohort small_cohort(std::uint64_t seed, int n = 200, kgraph::KgStore* store_out = nullptr) {
    CohortConfig cfg;
    cfg.n_patients = n;
    cfg.prevalence = 0.2;
    cfg.seed = seed;
    kgraph::KgStore local;
    kgraph::KgStore& store = store_out ? *store_out : local;
    return synthdata::generate_cohort(cfg, store);
}

}  // namespace

TEST_CASE("ontology shape") {
    kgraph::KgStore store;
    auto onto = synthdata::build_ontology(store);
    CHECK(store.entity_count() == 60);
    CHECK(store.relation_count() == 5);
    CHECK(store.triples().size() >= 100);
    CHECK(onto.sepsis >= 0);
    CHECK(onto.comorbidities.size() == onto.comorbidity_weight.size());
    CHECK_FALSE(onto.findings.empty());
    CHECK_THROWS_AS(synthdata::build_ontology(store), InputError);  // store must be empty
}

TEST_CASE("generation is deterministic and windows are well-formed") {
    Cohort a = small_cohort(42);
    Cohort b = small_cohort(42);
    Cohort c = small_cohort(43);
    REQUIRE(a.windows.size() == b.windows.size());
    CHECK(a.risk_threshold == b.risk_threshold);
    bool all_same = true, any_diff_seed = false;
    for (std::size_t i = 0; i < a.windows.size(); ++i) {
        all_same = all_same && same_window(a.windows[i], b.windows[i]);
        if (!same_window(a.windows[i], c.windows[i])) any_diff_seed = true;
    }
    CHECK(all_same);
    CHECK(any_diff_seed);

    for (const auto& w : a.windows) {
        REQUIRE(w.values.shape()[1] == 7);
        REQUIRE(w.timestamps.size() == static_cast<std::size_t>(w.values.shape()[0]));
        CHECK(std::is_sorted(w.timestamps.begin(), w.timestamps.end()));
        CHECK(w.timestamps.front() >= 0.0);
        CHECK(w.timestamps.back() <= 48.0);
        int observed = 0;
        for (std::size_t i = 0; i < w.observed_mask.size(); ++i) {
            CHECK((w.observed_mask[i] == 0.0 || w.observed_mask[i] == 1.0));
            observed += w.observed_mask[i] == 1.0 ? 1 : 0;
            if (w.observed_mask[i] == 0.0) CHECK(w.values[i] == 0.0);
        }
        CHECK(observed >= 1);
        CHECK(std::is_sorted(w.feature_entities.begin(), w.feature_entities.end()));
    }
}

TEST_CASE("prevalence and the planted labeling rule") {
    CohortConfig cfg;
    cfg.n_patients = 10000;
    cfg.prevalence = 0.2;
    cfg.seed = 7;
    kgraph::KgStore store;
    Cohort c = synthdata::generate_cohort(cfg, store);

    int positives = 0;
    for (const auto& w : c.windows) positives += w.label;
    double rate = static_cast<double>(positives) / cfg.n_patients;
    CHECK(std::abs(rate - 0.2) <= 0.02);

    // every label re-derives from the stored latents through the fixed rule
    REQUIRE(c.latents.size() == c.windows.size());
    for (std::size_t i = 0; i < c.windows.size(); ++i) {
        const auto& l = c.latents[i];
        double load = std::min(1.0, l.comorbidity_load / 0.5);
        double risk = 0.55 * l.severity + 0.35 * load + 0.10 * l.noise;
        CHECK(risk == doctest::Approx(l.risk).epsilon(1e-12));
        CHECK(c.windows[i].label == (risk >= c.risk_threshold ? 1 : 0));
    }
}

TEST_CASE("config validation") {
    CohortConfig cfg;
    cfg.n_patients = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = CohortConfig{};
    cfg.prevalence = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = CohortConfig{};
    cfg.feature_count = 6;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = CohortConfig{};
    cfg.missingness = 1.2;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("preprocess: forward fill, leading-gap mean, z-scoring, idempotent stats") {
    // hand-built window: channel 0 observes [1, ., ., 4]
    EpisodeWindow w;
    w.timestamps = {1.0, 2.0, 3.0, 4.0};
    w.values = Tensor({4, 7});
    w.observed_mask = Tensor({4, 7});
    w.values.at(0, 0) = 1.0;
    w.observed_mask.at(0, 0) = 1.0;
    w.values.at(3, 0) = 4.0;
    w.observed_mask.at(3, 0) = 1.0;
    w.values.at(1, 1) = 10.0;  // channel 1 observed only at t=2
    w.observed_mask.at(1, 1) = 1.0;

    synthdata::NormStats ident;
    ident.mean.assign(7, 0.0);
    ident.stdev.assign(7, 1.0);
    EpisodeWindow out = synthdata::preprocess(w, ident);
    CHECK(out.values.at(0, 0) == 1.0);
    CHECK(out.values.at(1, 0) == 1.0);  // forward-filled
    CHECK(out.values.at(2, 0) == 1.0);
    CHECK(out.values.at(3, 0) == 4.0);
    CHECK(out.values.at(0, 1) == 0.0);  // leading gap takes the (zero) mean
    CHECK(out.values.at(1, 1) == 10.0);
    CHECK(out.values.at(3, 1) == 10.0);
    // mask is untouched
    for (std::size_t i = 0; i < w.observed_mask.size(); ++i)
        CHECK(out.observed_mask[i] == w.observed_mask[i]);

    synthdata::NormStats shifted;
    shifted.mean.assign(7, 2.0);
    shifted.stdev.assign(7, 4.0);
    EpisodeWindow z = synthdata::preprocess(w, shifted);
    CHECK(z.values.at(0, 0) == doctest::Approx((1.0 - 2.0) / 4.0));
    CHECK(z.values.at(3, 0) == doctest::Approx((4.0 - 2.0) / 4.0));
    CHECK(z.values.at(0, 1) == doctest::Approx(0.0));  // mean-imputed then centered

    synthdata::NormStats bad;
    bad.mean.assign(5, 0.0);
    bad.stdev.assign(5, 1.0);
    CHECK_THROWS_AS(synthdata::preprocess(w, bad), ConfigError);
}

TEST_CASE("train-split statistics normalize to zero mean and unit spread") {
    Cohort c = small_cohort(3, 300);
    std::vector<int> train_idx;
    for (int i = 0; i < 200; ++i) train_idx.push_back(i);
    auto stats = synthdata::observed_stats(c.windows, train_idx);
    REQUIRE(stats.mean.size() == 7);

    std::vector<EpisodeWindow> prepped;
    for (int i : train_idx) prepped.push_back(synthdata::preprocess(c.windows[i], stats));

    for (int ch = 0; ch < 7; ++ch) {
        double sum = 0.0, sum2 = 0.0;
        long n = 0;
        for (const auto& w : prepped)
            for (int t = 0; t < w.values.shape()[0]; ++t)
                if (w.observed_mask.at(t, ch) == 1.0) {
                    sum += w.values.at(t, ch);
                    ++n;
                }
        REQUIRE(n >= 2);
        double mean = sum / static_cast<double>(n);
        for (const auto& w : prepped)
            for (int t = 0; t < w.values.shape()[0]; ++t)
                if (w.observed_mask.at(t, ch) == 1.0)
                    sum2 += (w.values.at(t, ch) - mean) * (w.values.at(t, ch) - mean);
        double sd = std::sqrt(sum2 / static_cast<double>(n - 1));
        CHECK(std::abs(mean) < 1e-9);
        CHECK(std::abs(sd - 1.0) < 1e-9);
    }
}

TEST_CASE("observed_stats falls back on empty and constant channels") {
    EpisodeWindow w;
    w.timestamps = {1.0, 2.0};
    w.values = Tensor({2, 7});
    w.observed_mask = Tensor({2, 7});
    w.values.at(0, 0) = 5.0;  // constant channel, two observations
    w.values.at(1, 0) = 5.0;
    w.observed_mask.at(0, 0) = 1.0;
    w.observed_mask.at(1, 0) = 1.0;
    auto stats = synthdata::observed_stats({w}, {0});
    CHECK(stats.mean[0] == 5.0);
    CHECK(stats.stdev[0] == 1.0);  // zero variance falls back to 1
    CHECK(stats.mean[1] == 0.0);   // never observed
    CHECK(stats.stdev[1] == 1.0);
}

TEST_CASE("partition: exact split, labels drive skew, single node is pass-through") {
    Cohort c = small_cohort(11, 400);

    synthdata::PartitionSpec spec;
    spec.nodes = 5;
    spec.alpha_dir = 0.5;
    Rng rng(77);
    auto parts = synthdata::partition_noniid(c.windows, spec, rng);
    REQUIRE(parts.size() == 5);

    std::set<int> seen;
    std::size_t total = 0;
    for (const auto& part : parts) {
        total += part.size();
        CHECK_FALSE(part.empty());
        for (const auto& w : part) CHECK(seen.insert(w.patient_id).second);
    }
    CHECK(total == c.windows.size());

    // same split decisions are deterministic
    Rng rng2(77);
    auto parts2 = synthdata::partition_noniid(c.windows, spec, rng2);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        REQUIRE(parts[k].size() == parts2[k].size());
        for (std::size_t i = 0; i < parts[k].size(); ++i)
            CHECK(same_window(parts[k][i], parts2[k][i]));
    }

    synthdata::PartitionSpec one;
    one.nodes = 1;
    Rng rng3(5);
    auto whole = synthdata::partition_noniid(c.windows, one, rng3);
    REQUIRE(whole.size() == 1);
    REQUIRE(whole[0].size() == c.windows.size());
    for (std::size_t i = 0; i < c.windows.size(); ++i)
        CHECK(same_window(whole[0][i], c.windows[i]));  // unshifted single node
}

TEST_CASE("partition: concentration controls label skew") {
    Cohort c = small_cohort(19, 600);
    auto rate_spread = [&](double alpha, std::uint64_t seed) {
        synthdata::PartitionSpec spec;
        spec.nodes = 5;
        spec.alpha_dir = alpha;
        spec.shift_offset = 0.0;
        spec.shift_scale = 0.0;
        Rng rng(seed);
        auto parts = synthdata::partition_noniid(c.windows, spec, rng);
        double mn = 1.0, mx = 0.0;
        for (const auto& part : parts) {
            double pos = 0.0;
            for (const auto& w : part) pos += w.label;
            double r = part.empty() ? 0.0 : pos / static_cast<double>(part.size());
            mn = std::min(mn, r);
            mx = std::max(mx, r);
        }
        return mx - mn;
    };

    double uniform_total = 0.0, skewed_total = 0.0;
    for (std::uint64_t s = 1; s <= 5; ++s) {
        uniform_total += rate_spread(1000.0, s);
        skewed_total += rate_spread(0.1, s);
    }
    CHECK(uniform_total / 5.0 <= 0.03);  // near-uniform rates at high concentration
    CHECK(skewed_total / 5.0 > 0.10);    // visible skew at low concentration
}

TEST_CASE("partition: per-node shifts move what the nodes observe") {
    Cohort c = small_cohort(23, 300);
    synthdata::PartitionSpec spec;
    spec.nodes = 3;
    spec.alpha_dir = 1000.0;  // keep the label split stable
    spec.shift_offset = 0.5;
    spec.shift_scale = 0.1;
    Rng rng(9);
    auto parts = synthdata::partition_noniid(c.windows, spec, rng);

    std::vector<double> node_mean;
    for (const auto& part : parts) {
        double sum = 0.0;
        long n = 0;
        for (const auto& w : part)
            for (int t = 0; t < w.values.shape()[0]; ++t)
                if (w.observed_mask.at(t, 0) == 1.0) {
                    sum += w.values.at(t, 0);
                    ++n;
                }
        node_mean.push_back(sum / static_cast<double>(n));
    }
    double spread = *std::max_element(node_mean.begin(), node_mean.end()) -
                    *std::min_element(node_mean.begin(), node_mean.end());
    CHECK(spread > 1.0);  // offsets are half a channel sd (10 for heart rate)
}

TEST_CASE("trend features recover a planted slope") {
    EpisodeWindow w;
    w.timestamps = {40.0, 42.0, 44.0, 46.0, 48.0};
    w.values = Tensor({5, 7});
    w.observed_mask = Tensor({5, 7});
    for (int t = 0; t < 5; ++t) {
        w.values.at(t, 0) = 3.0 * w.timestamps[static_cast<std::size_t>(t)] - 2.0;
        w.observed_mask.at(t, 0) = 1.0;
    }
    w.observed_mask.at(2, 1) = 1.0;  // single point: slope falls back to 0
    w.values.at(2, 1) = 9.0;
    auto slopes = synthdata::trend_features(w, 12.0);
    REQUIRE(slopes.size() == 7);
    CHECK(slopes[0] == doctest::Approx(3.0).epsilon(1e-9));
    CHECK(slopes[1] == 0.0);
    CHECK(slopes[2] == 0.0);
}

TEST_CASE("cohort text round-trip is exact") {
    kgraph::KgStore store;
    Cohort c = small_cohort(31, 60, &store);
    std::ostringstream obs, lab;
    synthdata::save_cohort(c, store, obs, lab);

    std::istringstream obs_in(obs.str()), lab_in(lab.str());
    Cohort back = synthdata::load_cohort(obs_in, lab_in, store);
    REQUIRE(back.windows.size() == c.windows.size());
    CHECK(back.risk_threshold == c.risk_threshold);
    for (std::size_t i = 0; i < c.windows.size(); ++i) {
        const auto& a = c.windows[i];
        const auto& b = back.windows[i];
        CHECK(a.patient_id == b.patient_id);
        CHECK(a.label == b.label);
        CHECK(a.feature_entities == b.feature_entities);
        CHECK(a.timestamps == b.timestamps);  // %.17g survives the round trip
        REQUIRE(a.values.shape() == b.values.shape());
        for (std::size_t j = 0; j < a.values.size(); ++j) {
            CHECK(a.observed_mask[j] == b.observed_mask[j]);
            if (a.observed_mask[j] == 1.0) CHECK(a.values[j] == b.values[j]);
        }
        CHECK(c.latents[i].severity == back.latents[i].severity);
        CHECK(c.latents[i].risk == back.latents[i].risk);
    }

    std::istringstream bad_obs("0\tnot_a_number\theart_rate\t1.0\n"), empty_lab("");
    CHECK_THROWS_AS(synthdata::load_cohort(bad_obs, empty_lab, store), DataError);
}

TEST_SUITE_END();
