#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sepsisfl/federation.hpp"
#include "sepsisfl/kgraph.hpp"
#include "sepsisfl/model.hpp"
#include "sepsisfl/synthdata.hpp"

namespace sepsisfl::eval {

// Mann-Whitney AUC with average-rank tie handling. Throws UndefinedMetricError
// unless both classes are present.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct ClassificationMetrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    long tp = 0, fp = 0, fn = 0, tn = 0;
    bool precision_degenerate = false;  // no positive predictions
    bool recall_degenerate = false;     // no positive labels
};

ClassificationMetrics classification_metrics(const std::vector<double>& scores,
                                             const std::vector<int>& labels,
                                             double threshold = 0.5);

struct MetricsReport {
    double auc = 0.0;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double epsilon = 0.0;
    double delta = 0.0;
    std::uint64_t bytes = 0;             // summed over runs
    std::vector<double> node_auc;        // per-node validation AUC, final round means
    std::string privacy;                 // "None" or "(epsilon, delta)" text
    int runs = 0;
};

enum class BaselineId { centralized, standard_fl, kg_fl, temporal_fl, full };

std::string to_string(BaselineId b);
BaselineId baseline_from_string(const std::string& s);
const std::vector<BaselineId>& all_baselines();

struct ExperimentConfig {
    BaselineId baseline = BaselineId::full;
    synthdata::CohortConfig cohort;
    synthdata::PartitionSpec partition;
    model::ModelConfig model;
    federation::FederationConfig fed;
    kgraph::TranseConfig transe;
    int folds = 1;                       // 1 = single held-out split
    std::vector<std::uint64_t> seeds = {1};
    double val_fraction = 0.2;           // per-client validation share
    double test_fraction = 0.2;          // held-out share when folds == 1

    void validate() const;
};

// Parse/echo the structured-text (JSON) config format. Unknown keys are
// configuration errors so typos cannot silently fall back to defaults.
ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);

// Applies the baseline's component toggles to the embedded configs.
void apply_baseline(ExperimentConfig& cfg);

// Test/train indices for one fold of a shuffled n-element cohort. The same rng
// state enumerates complementary folds, so folds 0..folds-1 partition the
// cohort exactly; with folds == 1 the test share is test_fraction.
struct FoldSplit {
    std::vector<int> test_idx;
    std::vector<int> train_idx;
};
FoldSplit fold_split(int n, int folds, int fold, double test_fraction, numcore::Rng rng);

// Logistic regression on 12-hour trend slopes; the sanity floor the cohort
// generator must clear before the full model is worth training.
double trend_baseline_auc(const synthdata::Cohort& cohort, std::uint64_t seed,
                          double test_fraction = 0.2);

struct RunResult {
    MetricsReport metrics;               // single (seed, fold) run
    std::vector<federation::RoundReport> rounds;
    std::string round_csv;               // full per-round CSV text
    std::string ledger_text;             // serialized chain
    model::ParamVector final_global;
    std::vector<double> final_test_scores;
    std::vector<int> final_test_labels;
};

// A fully constructed single-run environment: ontology, cohort fold, trained
// entity embeddings, per-node client states and the held-out test set. Exposed
// so harnesses can drive rounds and adaptation steps directly.
struct RunSetup {
    ExperimentConfig cfg;  // baseline toggles already applied
    kgraph::KgStore store;
    kgraph::KgEmbeddings emb;  // empty when the KG path is off
    std::vector<federation::ClientState> clients;
    std::vector<synthdata::EpisodeWindow> test_windows;
    std::vector<kgraph::PatientSubgraph> test_graphs;  // parallel when KG is on
    std::vector<int> test_labels;
    model::ParamVector initial;

    const kgraph::KgEmbeddings* emb_ptr() const { return cfg.model.use_kg ? &emb : nullptr; }
    std::vector<model::Example> test_examples() const;
};

RunSetup build_run(const ExperimentConfig& cfg, std::uint64_t seed, int fold);

// One (seed, fold) training run for the configured baseline.
RunResult run_single(const ExperimentConfig& cfg, std::uint64_t seed, int fold);

// Full folds x seeds driver; writes per-round CSVs, ledgers, and a final
// report under out_dir (unless out_dir is empty).
MetricsReport run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

// Baseline grid with shared seeds/cohorts; writes one summary CSV plus the
// per-baseline artifacts. Returns reports keyed by baseline name.
std::map<std::string, MetricsReport> run_compare(const ExperimentConfig& cfg,
                                                 const std::string& out_dir);

std::string format_report(const ExperimentConfig& cfg, const MetricsReport& m);

}  // namespace sepsisfl::eval
