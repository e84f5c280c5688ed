#pragma once

#include <iosfwd>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "sepsisfl/numcore.hpp"

namespace sepsisfl::kgraph {

struct Triple {
    int head = 0;
    int relation = 0;
    int tail = 0;
    auto operator<=>(const Triple&) const = default;
};

// Medical knowledge graph: entities, relation types, factual triples, plus an
// undirected adjacency view. Build once, then treat as immutable.
class KgStore {
  public:
    int add_entity(const std::string& name);    // get-or-create
    int add_relation(const std::string& name);  // get-or-create
    bool add_triple(int head, int relation, int tail);  // false on duplicate
    bool add_triple(const std::string& head, const std::string& relation,
                    const std::string& tail);

    int entity_count() const { return static_cast<int>(entity_names_.size()); }
    int relation_count() const { return static_cast<int>(relation_names_.size()); }
    const std::vector<Triple>& triples() const { return triples_; }

    const std::string& entity_name(int id) const;
    const std::string& relation_name(int id) const;
    int entity_id(const std::string& name) const;  // throws LookupError
    int relation_id(const std::string& name) const;
    bool has_entity(const std::string& name) const;
    bool has_triple(const Triple& t) const { return triple_set_.count(t) > 0; }

    struct AdjEdge {
        int neighbor;
        int relation;
        bool outgoing;  // true when this endpoint is the head
    };
    const std::vector<AdjEdge>& adjacency(int entity) const;

    // One `head<TAB>relation<TAB>tail` per line, UTF-8 names, ids assigned in
    // first-seen order.
    static KgStore load_tsv(std::istream& in);
    void save_tsv(std::ostream& out) const;

  private:
    void check_entity(int id) const;
    void check_relation(int id) const;

    std::vector<std::string> entity_names_;
    std::vector<std::string> relation_names_;
    std::unordered_map<std::string, int> entity_ids_;
    std::unordered_map<std::string, int> relation_ids_;
    std::vector<Triple> triples_;
    std::set<Triple> triple_set_;
    std::vector<std::vector<AdjEdge>> adjacency_;
};

struct KgEmbeddings {
    numcore::Tensor entity_vecs;    // |E| x d
    numcore::Tensor relation_vecs;  // |R| x d
    int dim = 0;
};

struct PatientSubgraph {
    std::vector<int> node_ids;  // ascending entity ids
    struct Edge {
        int src;  // index into node_ids
        int dst;
        int relation;
    };
    std::vector<Edge> edges;
    std::vector<bool> seed_mask;
};

// ||e_h + e_r - e_t||^2; lower scores mean more plausible triples.
double transe_score(const KgStore& store, const KgEmbeddings& emb, int head, int relation,
                    int tail);

struct TranseConfig {
    int dim = 16;
    int epochs = 200;
    double lr = 0.05;
    double margin = 1.0;
};

struct TranseResult {
    KgEmbeddings embeddings;
    std::vector<double> epoch_loss;  // mean margin-ranking loss per epoch
};

// Margin-ranking training with one uniformly corrupted negative per positive
// per epoch; entity vectors are projected onto the unit ball after each epoch.
TranseResult train_transe(const KgStore& store, const TranseConfig& cfg, numcore::Rng& rng);

// All entities within `hops` undirected steps of any seed, with every store
// triple whose endpoints both landed in the node set.
PatientSubgraph extract_subgraph(const KgStore& store, const std::set<int>& seed_entities,
                                 int hops = 2);

}  // namespace sepsisfl::kgraph
