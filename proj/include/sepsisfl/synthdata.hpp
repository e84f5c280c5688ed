#pragma once

// Synthetic ICU cohort generator: irregularly sampled multichannel vitals/labs
// with a planted deterioration rule, a matching mini-ontology of diagnoses,
// findings, labs and drugs, local preprocessing, and non-IID partitioning
// across simulated hospital nodes.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sepsisfl/kgraph.hpp"
#include "sepsisfl/numcore.hpp"

namespace sepsisfl::synthdata {

// One patient's 48-hour observation window. `values` holds a T x F grid at the
// row timestamps; cells with observed_mask 0 are placeholders until preprocess
// fills them.
struct EpisodeWindow {
    int patient_id = 0;
    std::vector<double> timestamps;  // hours in [0, 48], non-decreasing
    numcore::Tensor values;          // T x F
    numcore::Tensor observed_mask;   // T x F in {0, 1}
    std::vector<int> feature_entities;  // ascending KG entity ids
    int label = 0;
};

// Inputs the labeling rule consumed, stored so the rule can be re-derived
// from first principles for any patient.
struct LatentRecord {
    double severity = 0.0;          // U[0,1] deterioration intensity
    double comorbidity_load = 0.0;  // sum of assigned diagnosis risk weights
    double noise = 0.0;             // U[0,1] idiosyncratic term
    double risk = 0.0;              // combined score; label = risk >= threshold
};

struct CohortConfig {
    int n_patients = 1000;
    double prevalence = 0.2;   // target positive rate, in (0,1)
    int feature_count = 7;     // fixed clinical panel; must equal 7
    double irregularity = 1.0; // scales the mean inter-observation gap
    double missingness = 0.35; // lab drop probability; vitals drop at 0.4x
    std::uint64_t seed = 1;

    void validate() const;
};

struct Cohort {
    std::vector<EpisodeWindow> windows;
    std::vector<LatentRecord> latents;  // index-aligned with windows
    double risk_threshold = 0.0;
};

// Handles into the KgStore the cohort generator populates.
struct Ontology {
    int sepsis = -1;
    std::vector<int> findings;               // abnormal-observation entities
    std::vector<int> comorbidities;          // risk-weighted diagnoses
    std::vector<double> comorbidity_weight;  // aligned with comorbidities
    std::vector<int> distractors;            // zero-weight diagnoses
};

// Fixed 7-channel panel metadata.
const std::vector<std::string>& channel_names();
const std::vector<double>& channel_baseline();  // population means
const std::vector<double>& channel_sd();

// Populates `store` with ~60 entities / 5 relations / ~150 triples and returns
// the handles. The store must be empty.
Ontology build_ontology(kgraph::KgStore& store);

// Generates raw (unnormalized) windows. Populates the store via build_ontology
// when it is empty, otherwise expects a store produced by build_ontology.
Cohort generate_cohort(const CohortConfig& cfg, kgraph::KgStore& store);

// The planted rule, exposed so callers can score hypothetical latents.
double risk_score(const LatentRecord& l);

// Per-channel moments over observed cells of the selected windows.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> stdev;  // zero-variance channels fall back to 1
};
NormStats observed_stats(const std::vector<EpisodeWindow>& windows,
                         const std::vector<int>& idx);

// Forward-fill per channel (leading gaps take the training mean), then z-score
// with the supplied training statistics. Mask is preserved.
EpisodeWindow preprocess(const EpisodeWindow& raw, const NormStats& stats);

struct PartitionSpec {
    int nodes = 5;
    double alpha_dir = 0.5;     // Dirichlet label-skew concentration
    double shift_offset = 0.25; // per-node additive shift, in channel-sd units
    double shift_scale = 0.08;  // per-node log-scale jitter

    void validate() const;
};

// Dirichlet label-skew split plus per-node deterministic channel shifts.
// Nodes partition the input exactly; an `events` sink (optional) records
// empty-node redistributions. A single node receives the cohort unshifted.
std::vector<std::vector<EpisodeWindow>> partition_noniid(
    const std::vector<EpisodeWindow>& cohort, const PartitionSpec& spec, numcore::Rng& rng,
    std::vector<std::string>* events = nullptr);

// Least-squares slope of each channel over the trailing `hours_back` hours
// (observed points only; fewer than two points gives slope 0).
std::vector<double> trend_features(const EpisodeWindow& w, double hours_back = 12.0);

// Columnar text round-trip. Observations: one observed cell per line,
// `patient_id TAB time TAB channel TAB value`. Labels: one patient per line,
// `patient_id TAB label TAB severity TAB load TAB noise TAB risk TAB entities`
// (comma-joined entity names, `-` when empty) preceded by a
// `# risk_threshold <v>` header.
void save_cohort(const Cohort& c, const kgraph::KgStore& store, std::ostream& obs_out,
                 std::ostream& label_out);
Cohort load_cohort(std::istream& obs_in, std::istream& label_in, const kgraph::KgStore& store);

}  // namespace sepsisfl::synthdata
