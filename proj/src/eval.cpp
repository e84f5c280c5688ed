#include "sepsisfl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "sepsisfl/common.hpp"

namespace sepsisfl::eval {

using json = nlohmann::ordered_json;
using model::Example;
using model::ParamVector;
using numcore::Rng;

namespace {

std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw InputError("auc: scores and labels differ in length");
    std::size_t n = scores.size();
    long n_pos = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw InputError("auc: labels must be 0 or 1");
        n_pos += y;
    }
    long n_neg = static_cast<long>(n) - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw UndefinedMetricError("auc: needs both classes present");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // average ranks across ties, 1-based
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

ClassificationMetrics classification_metrics(const std::vector<double>& scores,
                                             const std::vector<int>& labels, double threshold) {
    if (scores.empty() || scores.size() != labels.size())
        throw InputError("classification_metrics: needs nonempty matched scores/labels");
    ClassificationMetrics m;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        bool pred = scores[i] >= threshold;
        bool truth = labels[i] == 1;
        if (pred && truth)
            ++m.tp;
        else if (pred && !truth)
            ++m.fp;
        else if (!pred && truth)
            ++m.fn;
        else
            ++m.tn;
    }
    double n = static_cast<double>(scores.size());
    m.accuracy = static_cast<double>(m.tp + m.tn) / n;
    if (m.tp + m.fp > 0) {
        m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
    } else {
        m.precision_degenerate = true;
    }
    if (m.tp + m.fn > 0) {
        m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
    } else {
        m.recall_degenerate = true;
    }
    if (m.precision + m.recall > 0.0)
        m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    return m;
}

std::string to_string(BaselineId b) {
    switch (b) {
        case BaselineId::centralized: return "centralized";
        case BaselineId::standard_fl: return "standard_fl";
        case BaselineId::kg_fl: return "kg_fl";
        case BaselineId::temporal_fl: return "temporal_fl";
        case BaselineId::full: return "full";
    }
    throw ConfigError("unknown baseline id");
}

BaselineId baseline_from_string(const std::string& s) {
    for (BaselineId b : all_baselines())
        if (to_string(b) == s) return b;
    throw ConfigError("unknown baseline '" + s +
                      "'; valid: centralized, standard_fl, kg_fl, temporal_fl, full");
}

const std::vector<BaselineId>& all_baselines() {
    static const std::vector<BaselineId> ids = {BaselineId::centralized, BaselineId::standard_fl,
                                                BaselineId::kg_fl, BaselineId::temporal_fl,
                                                BaselineId::full};
    return ids;
}

void ExperimentConfig::validate() const {
    if (folds < 1) throw ConfigError("experiment: folds must be >= 1");
    if (seeds.empty()) throw ConfigError("experiment: at least one seed required");
    if (val_fraction < 0.0 || val_fraction >= 1.0)
        throw ConfigError("experiment: val_fraction must lie in [0, 1)");
    if (test_fraction <= 0.0 || test_fraction >= 1.0)
        throw ConfigError("experiment: test_fraction must lie in (0, 1)");
    cohort.validate();
    partition.validate();
}

void apply_baseline(ExperimentConfig& cfg) {
    switch (cfg.baseline) {
        case BaselineId::centralized:
            cfg.fed.clients = 1;
            cfg.fed.mode = federation::AggregationMode::fedavg_weights;
            cfg.fed.meta = federation::MetaLearning::off;
            cfg.fed.dp.enabled = false;
            cfg.model.use_kg = false;
            cfg.model.use_transformer = false;
            break;
        case BaselineId::standard_fl:
            cfg.fed.mode = federation::AggregationMode::fedavg_weights;
            cfg.fed.meta = federation::MetaLearning::off;
            cfg.fed.dp.enabled = true;
            cfg.model.use_kg = false;
            cfg.model.use_transformer = false;
            break;
        case BaselineId::kg_fl:
            cfg.fed.mode = federation::AggregationMode::fedavg_weights;
            cfg.fed.meta = federation::MetaLearning::off;
            cfg.fed.dp.enabled = true;
            cfg.model.use_kg = true;
            cfg.model.use_transformer = false;
            break;
        case BaselineId::temporal_fl:
            cfg.fed.mode = federation::AggregationMode::fedavg_weights;
            cfg.fed.meta = federation::MetaLearning::off;
            cfg.fed.dp.enabled = true;
            cfg.model.use_kg = false;
            cfg.model.use_transformer = true;
            break;
        case BaselineId::full:
            cfg.fed.mode = federation::AggregationMode::dp_quality_gradient;
            cfg.fed.meta = federation::MetaLearning::fomaml;
            cfg.fed.dp.enabled = true;
            cfg.model.use_kg = true;
            cfg.model.use_transformer = true;
            break;
    }
    cfg.model.feature_count = cfg.cohort.feature_count;
    cfg.model.kg_dim = cfg.transe.dim;
    cfg.partition.nodes = cfg.fed.clients;
}

namespace {

void check_keys(const json& obj, const char* where, std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) ok = true;
        if (!ok)
            throw ConfigError(std::string("config: unknown key '") + it.key() + "' in " + where);
    }
}

template <typename T>
void get_if(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    ExperimentConfig cfg;
    try {
        check_keys(root, "top level",
                   {"baseline", "seeds", "folds", "val_fraction", "test_fraction", "cohort",
                    "partition", "model", "federation", "transe"});
        if (root.contains("baseline"))
            cfg.baseline = baseline_from_string(root.at("baseline").get<std::string>());
        get_if(root, "seeds", cfg.seeds);
        get_if(root, "folds", cfg.folds);
        get_if(root, "val_fraction", cfg.val_fraction);
        get_if(root, "test_fraction", cfg.test_fraction);
        if (root.contains("cohort")) {
            const json& c = root.at("cohort");
            check_keys(c, "cohort",
                       {"n_patients", "prevalence", "irregularity", "missingness", "seed"});
            get_if(c, "n_patients", cfg.cohort.n_patients);
            get_if(c, "prevalence", cfg.cohort.prevalence);
            get_if(c, "irregularity", cfg.cohort.irregularity);
            get_if(c, "missingness", cfg.cohort.missingness);
            get_if(c, "seed", cfg.cohort.seed);
        }
        if (root.contains("partition")) {
            const json& p = root.at("partition");
            check_keys(p, "partition", {"alpha_dir", "shift_offset", "shift_scale"});
            get_if(p, "alpha_dir", cfg.partition.alpha_dir);
            get_if(p, "shift_offset", cfg.partition.shift_offset);
            get_if(p, "shift_scale", cfg.partition.shift_scale);
        }
        if (root.contains("model")) {
            const json& m = root.at("model");
            check_keys(m, "model",
                       {"d_model", "n_heads", "n_layers", "d_ff", "d_kg", "dropout_rate",
                        "gat_slope", "ffn_slope"});
            get_if(m, "d_model", cfg.model.d_model);
            get_if(m, "n_heads", cfg.model.n_heads);
            get_if(m, "n_layers", cfg.model.n_layers);
            get_if(m, "d_ff", cfg.model.d_ff);
            get_if(m, "d_kg", cfg.model.d_kg);
            get_if(m, "dropout_rate", cfg.model.dropout_rate);
            get_if(m, "gat_slope", cfg.model.gat_slope);
            get_if(m, "ffn_slope", cfg.model.ffn_slope);
        }
        if (root.contains("federation")) {
            const json& f = root.at("federation");
            check_keys(f, "federation",
                       {"clients", "rounds", "local_epochs", "batch_size", "local_lr", "meta_lr",
                        "global_lr", "clip_norm", "noise_multiplier", "dp_delta"});
            get_if(f, "clients", cfg.fed.clients);
            get_if(f, "rounds", cfg.fed.rounds);
            get_if(f, "local_epochs", cfg.fed.local_epochs);
            get_if(f, "batch_size", cfg.fed.batch_size);
            get_if(f, "local_lr", cfg.fed.local_lr);
            get_if(f, "meta_lr", cfg.fed.meta_lr);
            get_if(f, "global_lr", cfg.fed.global_lr);
            get_if(f, "clip_norm", cfg.fed.dp.clip_norm);
            get_if(f, "noise_multiplier", cfg.fed.dp.noise_multiplier);
            get_if(f, "dp_delta", cfg.fed.dp.delta);
        }
        if (root.contains("transe")) {
            const json& t = root.at("transe");
            check_keys(t, "transe", {"dim", "epochs", "lr", "margin"});
            get_if(t, "dim", cfg.transe.dim);
            get_if(t, "epochs", cfg.transe.epochs);
            get_if(t, "lr", cfg.transe.lr);
            get_if(t, "margin", cfg.transe.margin);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: bad field type: ") + e.what());
    }
    return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
    json root;
    root["baseline"] = to_string(cfg.baseline);
    root["seeds"] = cfg.seeds;
    root["folds"] = cfg.folds;
    root["val_fraction"] = cfg.val_fraction;
    root["test_fraction"] = cfg.test_fraction;
    root["cohort"] = {{"n_patients", cfg.cohort.n_patients},
                      {"prevalence", cfg.cohort.prevalence},
                      {"irregularity", cfg.cohort.irregularity},
                      {"missingness", cfg.cohort.missingness},
                      {"seed", cfg.cohort.seed}};
    root["partition"] = {{"alpha_dir", cfg.partition.alpha_dir},
                         {"shift_offset", cfg.partition.shift_offset},
                         {"shift_scale", cfg.partition.shift_scale}};
    root["model"] = {{"d_model", cfg.model.d_model},     {"n_heads", cfg.model.n_heads},
                     {"n_layers", cfg.model.n_layers},   {"d_ff", cfg.model.d_ff},
                     {"d_kg", cfg.model.d_kg},           {"dropout_rate", cfg.model.dropout_rate},
                     {"gat_slope", cfg.model.gat_slope}, {"ffn_slope", cfg.model.ffn_slope}};
    root["federation"] = {{"clients", cfg.fed.clients},
                          {"rounds", cfg.fed.rounds},
                          {"local_epochs", cfg.fed.local_epochs},
                          {"batch_size", cfg.fed.batch_size},
                          {"local_lr", cfg.fed.local_lr},
                          {"meta_lr", cfg.fed.meta_lr},
                          {"global_lr", cfg.fed.global_lr},
                          {"clip_norm", cfg.fed.dp.clip_norm},
                          {"noise_multiplier", cfg.fed.dp.noise_multiplier},
                          {"dp_delta", cfg.fed.dp.delta}};
    root["transe"] = {{"dim", cfg.transe.dim},
                      {"epochs", cfg.transe.epochs},
                      {"lr", cfg.transe.lr},
                      {"margin", cfg.transe.margin}};
    return root.dump(2);
}

double trend_baseline_auc(const synthdata::Cohort& cohort, std::uint64_t seed,
                          double test_fraction) {
    int n = static_cast<int>(cohort.windows.size());
    if (n < 4) throw InputError("trend baseline: cohort too small");
    int f_cnt = cohort.windows.front().values.cols();

    std::vector<std::vector<double>> feats(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        feats[static_cast<std::size_t>(i)] =
            synthdata::trend_features(cohort.windows[static_cast<std::size_t>(i)], 12.0);

    Rng rng(seed);
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    rng.fork("split").shuffle(idx);
    int n_test = std::max(1, static_cast<int>(std::lround(test_fraction * n)));
    std::vector<int> test_idx(idx.begin(), idx.begin() + n_test);
    std::vector<int> train_idx(idx.begin() + n_test, idx.end());

    // z-score slopes with training statistics
    std::vector<double> mean(static_cast<std::size_t>(f_cnt), 0.0);
    std::vector<double> sd(static_cast<std::size_t>(f_cnt), 0.0);
    for (int i : train_idx)
        for (int c = 0; c < f_cnt; ++c)
            mean[static_cast<std::size_t>(c)] +=
                feats[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
    for (double& v : mean) v /= static_cast<double>(train_idx.size());
    for (int i : train_idx)
        for (int c = 0; c < f_cnt; ++c) {
            double d = feats[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] -
                       mean[static_cast<std::size_t>(c)];
            sd[static_cast<std::size_t>(c)] += d * d;
        }
    for (double& v : sd) {
        v = std::sqrt(v / static_cast<double>(train_idx.size()));
        if (v < 1e-12) v = 1.0;
    }
    auto feature = [&](int i, int c) {
        return (feats[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] -
                mean[static_cast<std::size_t>(c)]) /
               sd[static_cast<std::size_t>(c)];
    };

    std::vector<double> w(static_cast<std::size_t>(f_cnt), 0.0);
    double b = 0.0;
    const int epochs = 500;
    const double lr = 0.5;
    for (int e = 0; e < epochs; ++e) {
        std::vector<double> gw(static_cast<std::size_t>(f_cnt), 0.0);
        double gb = 0.0;
        for (int i : train_idx) {
            double z = b;
            for (int c = 0; c < f_cnt; ++c) z += w[static_cast<std::size_t>(c)] * feature(i, c);
            double p = 1.0 / (1.0 + std::exp(-z));
            double d = p - cohort.windows[static_cast<std::size_t>(i)].label;
            for (int c = 0; c < f_cnt; ++c) gw[static_cast<std::size_t>(c)] += d * feature(i, c);
            gb += d;
        }
        double inv = 1.0 / static_cast<double>(train_idx.size());
        for (int c = 0; c < f_cnt; ++c) w[static_cast<std::size_t>(c)] -= lr * inv * gw[static_cast<std::size_t>(c)];
        b -= lr * inv * gb;
    }

    std::vector<double> scores;
    std::vector<int> labels;
    for (int i : test_idx) {
        double z = b;
        for (int c = 0; c < f_cnt; ++c) z += w[static_cast<std::size_t>(c)] * feature(i, c);
        scores.push_back(1.0 / (1.0 + std::exp(-z)));
        labels.push_back(cohort.windows[static_cast<std::size_t>(i)].label);
    }
    return auc(scores, labels);
}

namespace {

struct PreparedClient {
    federation::ClientState state;
};

kgraph::PatientSubgraph subgraph_for(const kgraph::KgStore& store,
                                     const synthdata::EpisodeWindow& w) {
    std::set<int> seeds(w.feature_entities.begin(), w.feature_entities.end());
    return kgraph::extract_subgraph(store, seeds, 2);
}

}  // namespace

FoldSplit fold_split(int n, int folds, int fold, double test_fraction, Rng rng) {
    if (n < 1) throw ConfigError("fold_split: empty cohort");
    if (folds < 1) throw ConfigError("fold_split: folds must be >= 1");
    if (fold < 0 || fold >= folds) throw ConfigError("fold_split: fold out of range");
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    int lo, hi;
    if (folds == 1) {
        lo = 0;
        hi = std::max(1, static_cast<int>(std::lround(test_fraction * n)));
    } else {
        lo = static_cast<int>(static_cast<long>(fold) * n / folds);
        hi = static_cast<int>(static_cast<long>(fold + 1) * n / folds);
    }
    FoldSplit split;
    split.test_idx.assign(idx.begin() + lo, idx.begin() + hi);
    split.train_idx.reserve(idx.size() - split.test_idx.size());
    for (int i = 0; i < n; ++i)
        if (i < lo || i >= hi) split.train_idx.push_back(idx[static_cast<std::size_t>(i)]);
    return split;
}

std::vector<Example> RunSetup::test_examples() const {
    std::vector<Example> out;
    out.reserve(test_windows.size());
    for (std::size_t i = 0; i < test_windows.size(); ++i)
        out.push_back({&test_windows[i], cfg.model.use_kg ? &test_graphs[i] : nullptr});
    return out;
}

RunSetup build_run(const ExperimentConfig& given, std::uint64_t seed, int fold) {
    RunSetup setup;
    ExperimentConfig& cfg = setup.cfg;
    cfg = given;
    apply_baseline(cfg);
    cfg.validate();
    cfg.fed.validate();
    cfg.model.validate();
    if (fold < 0 || fold >= cfg.folds) throw ConfigError("run_single: fold out of range");

    Rng root(seed);
    kgraph::KgStore& store = setup.store;
    synthdata::CohortConfig cohort_cfg = cfg.cohort;
    cohort_cfg.seed = seed;
    synthdata::Cohort cohort = synthdata::generate_cohort(cohort_cfg, store);
    int n = static_cast<int>(cohort.windows.size());

    if (cfg.model.use_kg) {
        Rng transe_rng = root.fork("transe");
        setup.emb = kgraph::train_transe(store, cfg.transe, transe_rng).embeddings;
    }
    model::Model m(cfg.model);

    // held-out split: with folds == 1 a single test share, otherwise fold f of
    // a seed-fixed shuffled partition (every patient tests exactly once)
    FoldSplit split = fold_split(n, cfg.folds, fold, cfg.test_fraction, root.fork("folds"));
    std::vector<int>& test_idx = split.test_idx;
    std::vector<int>& train_idx = split.train_idx;
    if (test_idx.empty() || train_idx.empty())
        throw ConfigError("run_single: degenerate train/test split");

    std::vector<synthdata::EpisodeWindow> train_windows;
    train_windows.reserve(train_idx.size());
    for (int i : train_idx) train_windows.push_back(cohort.windows[static_cast<std::size_t>(i)]);

    // deployment view of the test fold: pooled training statistics
    std::vector<int> all_train(train_windows.size());
    std::iota(all_train.begin(), all_train.end(), 0);
    synthdata::NormStats pooled = synthdata::observed_stats(train_windows, all_train);
    setup.test_windows.reserve(test_idx.size());
    for (int i : test_idx) {
        const synthdata::EpisodeWindow& raw = cohort.windows[static_cast<std::size_t>(i)];
        setup.test_windows.push_back(synthdata::preprocess(raw, pooled));
        if (cfg.model.use_kg) setup.test_graphs.push_back(subgraph_for(store, raw));
        setup.test_labels.push_back(raw.label);
    }

    Rng part_rng = root.fork("partition");
    std::vector<std::string> events;
    std::vector<std::vector<synthdata::EpisodeWindow>> shards =
        synthdata::partition_noniid(train_windows, cfg.partition, part_rng, &events);

    setup.clients.resize(shards.size());
    for (std::size_t k = 0; k < shards.size(); ++k) {
        std::vector<synthdata::EpisodeWindow>& shard = shards[k];
        Rng split_rng = root.fork("clientsplit").fork(static_cast<std::uint64_t>(k));
        std::vector<int> ord(shard.size());
        std::iota(ord.begin(), ord.end(), 0);
        split_rng.shuffle(ord);
        int n_val = shard.size() >= 5
                        ? std::max(1, static_cast<int>(std::floor(cfg.val_fraction *
                                                                  static_cast<double>(shard.size()))))
                        : 0;
        federation::ClientState& c = setup.clients[k];
        c.client_id = static_cast<int>(k);
        c.rng = root.fork("client").fork(static_cast<std::uint64_t>(k));
        std::vector<int> tr_ord(ord.begin() + n_val, ord.end());
        std::vector<int> va_ord(ord.begin(), ord.begin() + n_val);
        std::sort(tr_ord.begin(), tr_ord.end());
        std::sort(va_ord.begin(), va_ord.end());
        synthdata::NormStats node_stats;
        {
            // stats on the node's training part only
            std::vector<synthdata::EpisodeWindow> tmp;
            tmp.reserve(tr_ord.size());
            for (int i : tr_ord) tmp.push_back(shard[static_cast<std::size_t>(i)]);
            std::vector<int> tmp_idx(tmp.size());
            std::iota(tmp_idx.begin(), tmp_idx.end(), 0);
            node_stats = synthdata::observed_stats(tmp, tmp_idx);
        }
        for (int i : tr_ord) {
            const synthdata::EpisodeWindow& raw = shard[static_cast<std::size_t>(i)];
            c.data.train_windows.push_back(synthdata::preprocess(raw, node_stats));
            if (cfg.model.use_kg) c.data.train_graphs.push_back(subgraph_for(store, raw));
        }
        for (int i : va_ord) {
            const synthdata::EpisodeWindow& raw = shard[static_cast<std::size_t>(i)];
            c.data.val_windows.push_back(synthdata::preprocess(raw, node_stats));
            if (cfg.model.use_kg) c.data.val_graphs.push_back(subgraph_for(store, raw));
        }
        c.sample_count = static_cast<int>(c.data.train_windows.size());
    }

    Rng init_rng = root.fork("init");
    setup.initial = m.init_params(init_rng);
    return setup;
}

RunResult run_single(const ExperimentConfig& given, std::uint64_t seed, int fold) {
    RunSetup setup = build_run(given, seed, fold);
    const ExperimentConfig& cfg = setup.cfg;
    const kgraph::KgEmbeddings* emb_ptr = setup.emb_ptr();
    model::Model m(cfg.model);
    std::vector<federation::ClientState>& clients = setup.clients;
    std::vector<Example> test_examples = setup.test_examples();
    const std::vector<int>& test_labels = setup.test_labels;

    federation::ServerState server;
    federation::init_server(server, setup.initial, cfg.fed);

    std::ostringstream csv;
    csv << federation::round_csv_header(static_cast<int>(clients.size())) << '\n';

    RunResult rr;
    for (int r = 0; r < cfg.fed.rounds; ++r) {
        federation::RoundReport report = federation::run_round(server, clients, m, emb_ptr, cfg.fed);
        double test_auc = std::numeric_limits<double>::quiet_NaN();
        std::vector<double> scores;
        scores.reserve(test_examples.size());
        for (const Example& ex : test_examples)
            scores.push_back(m.predict(ex, emb_ptr, server.global).probability);
        try {
            test_auc = auc(scores, test_labels);
        } catch (const UndefinedMetricError&) {
        }
        csv << federation::round_csv_row(report, test_auc) << '\n';
        rr.rounds.push_back(std::move(report));
        if (r + 1 == cfg.fed.rounds) {
            rr.final_test_scores = std::move(scores);
            rr.final_test_labels = test_labels;
        }
    }

    rr.final_global = server.global;
    std::ostringstream ledger_ss;
    server.chain.save(ledger_ss);
    rr.ledger_text = ledger_ss.str();
    rr.round_csv = csv.str();

    MetricsReport& mr = rr.metrics;
    if (!rr.final_test_scores.empty()) {
        try {
            mr.auc = auc(rr.final_test_scores, rr.final_test_labels);
        } catch (const UndefinedMetricError&) {
            mr.auc = std::numeric_limits<double>::quiet_NaN();
        }
        ClassificationMetrics cm = classification_metrics(rr.final_test_scores, rr.final_test_labels);
        mr.accuracy = cm.accuracy;
        mr.precision = cm.precision;
        mr.recall = cm.recall;
        mr.f1 = cm.f1;
    }
    if (!rr.rounds.empty()) {
        mr.epsilon = rr.rounds.back().epsilon_spent;
        mr.bytes = rr.rounds.back().bytes_transferred;
        mr.node_auc = rr.rounds.back().node_val_auc;
    }
    mr.delta = cfg.fed.dp.enabled ? cfg.fed.dp.delta * cfg.fed.rounds : 0.0;
    mr.privacy = cfg.fed.dp.enabled
                     ? "(epsilon=" + g17(mr.epsilon) + ", delta=" + g17(mr.delta) + ")"
                     : "None";
    mr.runs = 1;
    return rr;
}

namespace {

MetricsReport aggregate_reports(const std::vector<MetricsReport>& runs) {
    if (runs.empty()) throw InputError("no runs to aggregate");
    MetricsReport out;
    std::size_t nodes = runs.front().node_auc.size();
    out.node_auc.assign(nodes, 0.0);
    for (const MetricsReport& r : runs) {
        out.auc += r.auc;
        out.accuracy += r.accuracy;
        out.precision += r.precision;
        out.recall += r.recall;
        out.epsilon = std::max(out.epsilon, r.epsilon);
        out.delta = std::max(out.delta, r.delta);
        out.bytes += r.bytes;
        if (r.node_auc.size() == nodes)
            for (std::size_t i = 0; i < nodes; ++i) out.node_auc[i] += r.node_auc[i];
    }
    double inv = 1.0 / static_cast<double>(runs.size());
    out.auc *= inv;
    out.accuracy *= inv;
    out.precision *= inv;
    out.recall *= inv;
    for (double& v : out.node_auc) v *= inv;
    // F1 recomputed so it stays the harmonic mean of the reported P/R
    out.f1 = out.precision + out.recall > 0.0
                 ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
                 : 0.0;
    out.privacy = runs.front().privacy;
    out.runs = static_cast<int>(runs.size());
    return out;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path);
    out << content;
}

}  // namespace

std::string format_report(const ExperimentConfig& cfg, const MetricsReport& m) {
    std::ostringstream out;
    out << "baseline = " << to_string(cfg.baseline) << '\n';
    out << "runs = " << m.runs << '\n';
    out << "auc = " << g17(m.auc) << '\n';
    out << "accuracy = " << g17(m.accuracy) << '\n';
    out << "precision = " << g17(m.precision) << '\n';
    out << "recall = " << g17(m.recall) << '\n';
    out << "f1 = " << g17(m.f1) << '\n';
    out << "privacy_guarantee = " << m.privacy << '\n';
    out << "epsilon = " << g17(m.epsilon) << '\n';
    out << "delta = " << g17(m.delta) << '\n';
    out << "bytes_transferred = " << m.bytes << '\n';
    for (std::size_t i = 0; i < m.node_auc.size(); ++i)
        out << "val_auc_node" << i << " = " << g17(m.node_auc[i]) << '\n';
    out << "config = " << '\n' << config_to_json(cfg) << '\n';
    return out.str();
}

MetricsReport run_experiment(const ExperimentConfig& given, const std::string& out_dir) {
    ExperimentConfig cfg = given;
    apply_baseline(cfg);
    cfg.validate();
    namespace fs = std::filesystem;
    if (!out_dir.empty()) fs::create_directories(out_dir);

    std::vector<MetricsReport> per_run;
    for (std::uint64_t seed : cfg.seeds) {
        for (int fold = 0; fold < cfg.folds; ++fold) {
            RunResult rr = run_single(cfg, seed, fold);
            per_run.push_back(rr.metrics);
            if (!out_dir.empty()) {
                std::string tag = to_string(cfg.baseline) + "_s" + std::to_string(seed) + "_f" +
                                  std::to_string(fold);
                write_file(out_dir + "/rounds_" + tag + ".csv", rr.round_csv);
                write_file(out_dir + "/ledger_" + tag + ".txt", rr.ledger_text);
            }
        }
    }
    MetricsReport agg = aggregate_reports(per_run);
    if (!out_dir.empty())
        write_file(out_dir + "/report_" + to_string(cfg.baseline) + ".txt",
                   format_report(cfg, agg));
    return agg;
}

std::map<std::string, MetricsReport> run_compare(const ExperimentConfig& given,
                                                 const std::string& out_dir) {
    std::map<std::string, MetricsReport> out;
    std::ostringstream csv;
    csv << "baseline,auc,accuracy,precision,recall,f1,epsilon,delta,bytes,runs\n";
    for (BaselineId b : all_baselines()) {
        ExperimentConfig cfg = given;
        cfg.baseline = b;
        MetricsReport m = run_experiment(cfg, out_dir);
        csv << to_string(b) << ',' << g17(m.auc) << ',' << g17(m.accuracy) << ','
            << g17(m.precision) << ',' << g17(m.recall) << ',' << g17(m.f1) << ','
            << g17(m.epsilon) << ',' << g17(m.delta) << ',' << m.bytes << ',' << m.runs << '\n';
        out[to_string(b)] = m;
    }
    if (!out_dir.empty()) write_file(out_dir + "/compare.csv", csv.str());
    return out;
}

}  // namespace sepsisfl::eval
