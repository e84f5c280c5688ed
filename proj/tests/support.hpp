#pragma once

// Shared fixtures for unit and acceptance tests: random tensors, a tiny
// ready-to-train cohort with subgraphs, and small model instances.

#include <set>
#include <vector>

#include "sepsisfl/eval.hpp"
#include "sepsisfl/kgraph.hpp"
#include "sepsisfl/model.hpp"
#include "sepsisfl/numcore.hpp"
#include "sepsisfl/synthdata.hpp"

namespace testsupport {

using namespace sepsisfl;

inline numcore::Tensor random_tensor(std::vector<int> shape, numcore::Rng& rng,
                                     double scale = 1.0) {
    numcore::Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
    return t;
}

// A generated cohort with everything the model needs: preprocessed windows,
// per-patient 2-hop subgraphs, trained embeddings.
struct TinyWorld {
    kgraph::KgStore store;
    synthdata::Cohort cohort;
    kgraph::KgEmbeddings emb;
    std::vector<synthdata::EpisodeWindow> prepped;
    std::vector<kgraph::PatientSubgraph> graphs;

    std::vector<model::Example> examples() const {
        std::vector<model::Example> out;
        for (std::size_t i = 0; i < prepped.size(); ++i) out.push_back({&prepped[i], &graphs[i]});
        return out;
    }
};

inline TinyWorld make_tiny_world(std::uint64_t seed, int patients = 30,
                                 double irregularity = 0.4, int transe_dim = 8) {
    TinyWorld w;
    synthdata::CohortConfig cc;
    cc.n_patients = patients;
    cc.prevalence = 0.3;
    cc.irregularity = irregularity;
    cc.seed = seed;
    w.cohort = synthdata::generate_cohort(cc, w.store);

    kgraph::TranseConfig tc;
    tc.dim = transe_dim;
    tc.epochs = 25;
    numcore::Rng trng = numcore::Rng(seed).fork("transe");
    w.emb = kgraph::train_transe(w.store, tc, trng).embeddings;

    std::vector<int> idx(w.cohort.windows.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    synthdata::NormStats stats = synthdata::observed_stats(w.cohort.windows, idx);
    for (const auto& win : w.cohort.windows) {
        w.prepped.push_back(synthdata::preprocess(win, stats));
        std::set<int> seeds(win.feature_entities.begin(), win.feature_entities.end());
        w.graphs.push_back(kgraph::extract_subgraph(w.store, seeds, 2));
    }
    return w;
}

inline model::ModelConfig tiny_model_config(bool transformer = true, bool kg = true) {
    model::ModelConfig mc;
    mc.d_model = 8;
    mc.n_heads = 2;
    mc.n_layers = 1;
    mc.d_ff = 16;
    mc.d_kg = 8;
    mc.kg_dim = 8;
    mc.feature_count = 7;
    mc.dropout_rate = 0.0;
    mc.use_kg = kg;
    mc.use_transformer = transformer;
    return mc;
}

}  // namespace testsupport
