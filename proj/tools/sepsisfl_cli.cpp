// Command-line front end: cohort generation, experiment runs, the baseline
// comparison grid, ledger verification, and a quick gradient self-check.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sepsisfl/common.hpp"
#include "sepsisfl/eval.hpp"
#include "sepsisfl/federation.hpp"
#include "sepsisfl/kgraph.hpp"
#include "sepsisfl/ledger.hpp"
#include "sepsisfl/model.hpp"
#include "sepsisfl/synthdata.hpp"

namespace {

using namespace sepsisfl;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

eval::ExperimentConfig load_config(const std::string& path, std::uint64_t seed, bool seed_set) {
    eval::ExperimentConfig cfg;
    if (!path.empty()) cfg = eval::config_from_json(read_file(path));
    if (seed_set) cfg.seeds = {seed};
    return cfg;
}

int cmd_generate(const eval::ExperimentConfig& cfg, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    synthdata::CohortConfig cc = cfg.cohort;
    cc.seed = cfg.seeds.front();
    kgraph::KgStore store;
    synthdata::Cohort cohort = synthdata::generate_cohort(cc, store);

    std::ofstream obs(out_dir + "/observations.tsv", std::ios::binary);
    std::ofstream labels(out_dir + "/labels.tsv", std::ios::binary);
    if (!obs || !labels) throw InputError("cannot write cohort files under " + out_dir);
    synthdata::save_cohort(cohort, store, obs, labels);
    std::ofstream kg(out_dir + "/kg_triples.tsv", std::ios::binary);
    if (!kg) throw InputError("cannot write kg_triples.tsv under " + out_dir);
    store.save_tsv(kg);

    long positives = 0;
    for (const auto& w : cohort.windows) positives += w.label;
    std::cout << "patients " << cohort.windows.size() << ", positives " << positives
              << ", entities " << store.entity_count() << ", relations "
              << store.relation_count() << ", triples " << store.triples().size() << '\n';
    std::cout << "wrote " << out_dir << "/observations.tsv, labels.tsv, kg_triples.tsv\n";
    return 0;
}

int cmd_train(const eval::ExperimentConfig& cfg, const std::string& out_dir) {
    eval::MetricsReport m = eval::run_experiment(cfg, out_dir);
    eval::ExperimentConfig echoed = cfg;
    eval::apply_baseline(echoed);
    std::cout << eval::format_report(echoed, m);
    return 0;
}

int cmd_compare(const eval::ExperimentConfig& cfg, const std::string& out_dir) {
    auto grid = eval::run_compare(cfg, out_dir);
    std::cout << "baseline auc accuracy f1 privacy\n";
    for (const auto& [name, m] : grid)
        std::cout << name << ' ' << m.auc << ' ' << m.accuracy << ' ' << m.f1 << ' '
                  << m.privacy << '\n';
    std::cout << "artifacts under " << out_dir << '\n';
    return 0;
}

int cmd_verify_ledger(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read " + path);
    ledger::Chain chain = ledger::Chain::load(in);
    ledger::VerifyResult v = chain.verify();
    if (v.ok) {
        std::cout << "ok: " << chain.size() << " entries\n";
        return 0;
    }
    std::cout << "TAMPERED at entry " << v.first_bad_index << ": " << v.what << '\n';
    return 4;
}

// quick full-model finite-difference check on both encoder paths
int cmd_gradcheck(std::uint64_t seed, int instances) {
    synthdata::CohortConfig cc;
    cc.n_patients = 40;
    cc.prevalence = 0.3;
    cc.irregularity = 0.4;  // short gaps -> longer series still fine at tiny dims
    cc.seed = seed;
    kgraph::KgStore store;
    synthdata::Cohort cohort = synthdata::generate_cohort(cc, store);

    kgraph::TranseConfig tc;
    tc.dim = 8;
    tc.epochs = 30;
    numcore::Rng transe_rng = numcore::Rng(seed).fork("transe");
    kgraph::KgEmbeddings emb = kgraph::train_transe(store, tc, transe_rng).embeddings;

    std::vector<int> all_idx(cohort.windows.size());
    for (std::size_t i = 0; i < all_idx.size(); ++i) all_idx[i] = static_cast<int>(i);
    synthdata::NormStats stats = synthdata::observed_stats(cohort.windows, all_idx);
    std::vector<synthdata::EpisodeWindow> prepped;
    std::vector<kgraph::PatientSubgraph> graphs;
    for (const auto& w : cohort.windows) {
        prepped.push_back(synthdata::preprocess(w, stats));
        std::set<int> seeds(w.feature_entities.begin(), w.feature_entities.end());
        graphs.push_back(kgraph::extract_subgraph(store, seeds, 2));
    }

    double worst = 0.0;
    for (int variant = 0; variant < 2; ++variant) {
        model::ModelConfig mc;
        mc.d_model = 8;
        mc.n_heads = 2;
        mc.n_layers = 1;
        mc.d_ff = 16;
        mc.d_kg = 8;
        mc.kg_dim = 8;
        mc.dropout_rate = 0.0;
        mc.use_kg = true;
        mc.use_transformer = variant == 0;
        model::Model m(mc);
        numcore::Rng root(seed + static_cast<std::uint64_t>(variant));
        for (int i = 0; i < instances; ++i) {
            numcore::Rng r = root.fork("instance").fork(static_cast<std::uint64_t>(i));
            numcore::Rng init = r.fork("init");
            model::ParamVector theta = m.init_params(init);
            std::vector<model::Example> batch;
            for (int b = 0; b < 2; ++b) {
                std::size_t pick = r.uniform_int(cohort.windows.size());
                batch.push_back({&prepped[pick], &graphs[pick]});
            }
            model::ParamVector grad(theta.layout());
            m.loss_and_grad(batch, &emb, theta, grad);
            auto f = [&](std::span<const double> x) {
                model::ParamVector p(theta.layout(),
                                     std::vector<double>(x.begin(), x.end()));
                double s = 0.0;
                for (const auto& ex : batch) s += m.loss(ex, &emb, p);
                return s / static_cast<double>(batch.size());
            };
            numcore::GradCheckReport rep =
                numcore::grad_check(f, theta.flat(), grad.flat());
            worst = std::max(worst, rep.max_rel_err);
        }
    }
    std::cout << "max rel err " << worst << " over " << instances
              << " instances x 2 encoder variants\n";
    if (worst < 1e-4) {
        std::cout << "PASS\n";
        return 0;
    }
    std::cout << "FAIL (threshold 1e-4)\n";
    return 1;
}

int dispatch(int argc, char** argv) {
    CLI::App app{"federated sepsis-prediction simulator"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 1;
    std::string ledger_path;
    int instances = 25;

    CLI::App* gen = app.add_subcommand("generate", "synthesize a cohort and its knowledge graph");
    gen->add_option("--config", config_path, "experiment config (JSON)");
    CLI::Option* gen_seed = gen->add_option("--seed", seed, "override the config seed");
    gen->add_option("--out", out_dir, "output directory");

    CLI::App* train = app.add_subcommand("train", "run one baseline end to end");
    train->add_option("--config", config_path, "experiment config (JSON)");
    CLI::Option* train_seed = train->add_option("--seed", seed, "override the config seeds");
    train->add_option("--out", out_dir, "output directory");

    CLI::App* compare = app.add_subcommand("compare", "run the whole baseline grid");
    compare->add_option("--config", config_path, "experiment config (JSON)");
    CLI::Option* cmp_seed = compare->add_option("--seed", seed, "override the config seeds");
    compare->add_option("--out", out_dir, "output directory");

    CLI::App* verify = app.add_subcommand("verify-ledger", "check a saved ledger's hash chain");
    verify->add_option("ledger", ledger_path, "ledger file")->required();

    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of the full model");
    CLI::Option* gc_seed = gc->add_option("--seed", seed, "rng seed");
    gc->add_option("--instances", instances, "random instances per encoder variant");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    if (gen->parsed()) return cmd_generate(load_config(config_path, seed, !gen_seed->empty()), out_dir);
    if (train->parsed()) return cmd_train(load_config(config_path, seed, !train_seed->empty()), out_dir);
    if (compare->parsed())
        return cmd_compare(load_config(config_path, seed, !cmp_seed->empty()), out_dir);
    if (verify->parsed()) return cmd_verify_ledger(ledger_path);
    if (gc->parsed()) return cmd_gradcheck(!gc_seed->empty() ? seed : 1, instances);
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const ProtocolError& e) {
        std::cerr << "protocol error: " << e.what() << '\n';
        return 4;
    } catch (const UndefinedMetricError& e) {
        std::cerr << "undefined metric: " << e.what() << '\n';
        return 6;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return 5;
    } catch (const LookupError& e) {
        std::cerr << "lookup error: " << e.what() << '\n';
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
