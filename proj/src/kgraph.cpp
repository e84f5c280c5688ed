#include "sepsisfl/kgraph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "sepsisfl/common.hpp"

namespace sepsisfl::kgraph {

using numcore::Rng;
using numcore::Tensor;

int KgStore::add_entity(const std::string& name) {
    auto it = entity_ids_.find(name);
    if (it != entity_ids_.end()) return it->second;
    int id = static_cast<int>(entity_names_.size());
    entity_names_.push_back(name);
    entity_ids_.emplace(name, id);
    adjacency_.emplace_back();
    return id;
}

int KgStore::add_relation(const std::string& name) {
    auto it = relation_ids_.find(name);
    if (it != relation_ids_.end()) return it->second;
    int id = static_cast<int>(relation_names_.size());
    relation_names_.push_back(name);
    relation_ids_.emplace(name, id);
    return id;
}

bool KgStore::add_triple(int head, int relation, int tail) {
    check_entity(head);
    check_entity(tail);
    check_relation(relation);
    Triple t{head, relation, tail};
    if (!triple_set_.insert(t).second) return false;
    triples_.push_back(t);
    adjacency_[static_cast<std::size_t>(head)].push_back({tail, relation, true});
    if (tail != head) adjacency_[static_cast<std::size_t>(tail)].push_back({head, relation, false});
    return true;
}

bool KgStore::add_triple(const std::string& head, const std::string& relation,
                         const std::string& tail) {
    return add_triple(add_entity(head), add_relation(relation), add_entity(tail));
}

const std::string& KgStore::entity_name(int id) const {
    check_entity(id);
    return entity_names_[static_cast<std::size_t>(id)];
}

const std::string& KgStore::relation_name(int id) const {
    check_relation(id);
    return relation_names_[static_cast<std::size_t>(id)];
}

int KgStore::entity_id(const std::string& name) const {
    auto it = entity_ids_.find(name);
    if (it == entity_ids_.end()) throw LookupError("unknown entity '" + name + "'");
    return it->second;
}

int KgStore::relation_id(const std::string& name) const {
    auto it = relation_ids_.find(name);
    if (it == relation_ids_.end()) throw LookupError("unknown relation '" + name + "'");
    return it->second;
}

bool KgStore::has_entity(const std::string& name) const {
    return entity_ids_.count(name) > 0;
}

const std::vector<KgStore::AdjEdge>& KgStore::adjacency(int entity) const {
    check_entity(entity);
    return adjacency_[static_cast<std::size_t>(entity)];
}

void KgStore::check_entity(int id) const {
    if (id < 0 || id >= entity_count())
        throw LookupError("unknown entity id " + std::to_string(id));
}

void KgStore::check_relation(int id) const {
    if (id < 0 || id >= relation_count())
        throw LookupError("unknown relation id " + std::to_string(id));
}

KgStore KgStore::load_tsv(std::istream& in) {
    KgStore store;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::size_t a = line.find('\t');
        std::size_t b = a == std::string::npos ? std::string::npos : line.find('\t', a + 1);
        if (a == std::string::npos || b == std::string::npos)
            throw DataError("triple file: malformed line " + std::to_string(lineno));
        store.add_triple(line.substr(0, a), line.substr(a + 1, b - a - 1), line.substr(b + 1));
    }
    return store;
}

void KgStore::save_tsv(std::ostream& out) const {
    for (const auto& t : triples_)
        out << entity_name(t.head) << '\t' << relation_name(t.relation) << '\t'
            << entity_name(t.tail) << '\n';
}

// ---------------------------------------------------------------------------

double transe_score(const KgStore& store, const KgEmbeddings& emb, int head, int relation,
                    int tail) {
    if (head < 0 || head >= store.entity_count())
        throw LookupError("transe_score: unknown entity id " + std::to_string(head));
    if (tail < 0 || tail >= store.entity_count())
        throw LookupError("transe_score: unknown entity id " + std::to_string(tail));
    if (relation < 0 || relation >= store.relation_count())
        throw LookupError("transe_score: unknown relation id " + std::to_string(relation));
    int d = emb.dim;
    const double* eh = emb.entity_vecs.data() + static_cast<std::size_t>(head) * d;
    const double* er = emb.relation_vecs.data() + static_cast<std::size_t>(relation) * d;
    const double* et = emb.entity_vecs.data() + static_cast<std::size_t>(tail) * d;
    double s = 0.0;
    for (int i = 0; i < d; ++i) {
        double diff = eh[i] + er[i] - et[i];
        s += diff * diff;
    }
    return s;
}

namespace {

void project_unit_ball(Tensor& vecs, int dim) {
    for (int i = 0; i < vecs.rows(); ++i) {
        double* v = vecs.data() + static_cast<std::size_t>(i) * dim;
        double n2 = 0.0;
        for (int j = 0; j < dim; ++j) n2 += v[j] * v[j];
        if (n2 > 1.0) {
            double inv = 1.0 / std::sqrt(n2);
            for (int j = 0; j < dim; ++j) v[j] *= inv;
        }
    }
}

}  // namespace

TranseResult train_transe(const KgStore& store, const TranseConfig& cfg, Rng& rng) {
    if (store.triples().empty()) throw ConfigError("train_transe: empty triple set");
    if (cfg.margin <= 0.0) throw ConfigError("train_transe: margin must be positive");
    if (cfg.dim <= 0) throw ConfigError("train_transe: dim must be positive");

    const int ne = store.entity_count();
    const int nr = store.relation_count();
    const int d = cfg.dim;

    KgEmbeddings emb;
    emb.dim = d;
    emb.entity_vecs = Tensor({ne, d});
    emb.relation_vecs = Tensor({nr, d});
    double bound = 6.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < emb.entity_vecs.size(); ++i)
        emb.entity_vecs[i] = rng.uniform(-bound, bound);
    for (std::size_t i = 0; i < emb.relation_vecs.size(); ++i)
        emb.relation_vecs[i] = rng.uniform(-bound, bound);
    project_unit_ball(emb.entity_vecs, d);

    TranseResult result;
    result.epoch_loss.reserve(static_cast<std::size_t>(std::max(cfg.epochs, 0)));

    std::vector<double> diff_pos(static_cast<std::size_t>(d));
    std::vector<double> diff_neg(static_cast<std::size_t>(d));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double epoch_loss = 0.0;
        for (const Triple& pos : store.triples()) {
            // corrupt head or tail with a fair coin; resample identical ids
            bool corrupt_tail = rng.uniform01() < 0.5;
            Triple neg = pos;
            if (corrupt_tail) {
                do {
                    neg.tail = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(ne)));
                } while (neg.tail == pos.tail);
            } else {
                do {
                    neg.head = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(ne)));
                } while (neg.head == pos.head);
            }

            double* eh = emb.entity_vecs.data() + static_cast<std::size_t>(pos.head) * d;
            double* er = emb.relation_vecs.data() + static_cast<std::size_t>(pos.relation) * d;
            double* et = emb.entity_vecs.data() + static_cast<std::size_t>(pos.tail) * d;
            double* nh = emb.entity_vecs.data() + static_cast<std::size_t>(neg.head) * d;
            double* nt = emb.entity_vecs.data() + static_cast<std::size_t>(neg.tail) * d;

            double f_pos = 0.0, f_neg = 0.0;
            for (int j = 0; j < d; ++j) {
                diff_pos[static_cast<std::size_t>(j)] = eh[j] + er[j] - et[j];
                diff_neg[static_cast<std::size_t>(j)] = nh[j] + er[j] - nt[j];
                f_pos += diff_pos[static_cast<std::size_t>(j)] * diff_pos[static_cast<std::size_t>(j)];
                f_neg += diff_neg[static_cast<std::size_t>(j)] * diff_neg[static_cast<std::size_t>(j)];
            }
            double loss = cfg.margin + f_pos - f_neg;
            if (loss <= 0.0) continue;
            epoch_loss += loss;

            // d loss = 2*diff_pos on the positive triple, -2*diff_neg on the negative
            double step = 2.0 * cfg.lr;
            for (int j = 0; j < d; ++j) {
                double gp = step * diff_pos[static_cast<std::size_t>(j)];
                double gn = step * diff_neg[static_cast<std::size_t>(j)];
                eh[j] -= gp;
                et[j] += gp;
                er[j] -= gp - gn;
                nh[j] += gn;
                nt[j] -= gn;
            }
        }
        project_unit_ball(emb.entity_vecs, d);
        result.epoch_loss.push_back(epoch_loss / static_cast<double>(store.triples().size()));
    }

    result.embeddings = std::move(emb);
    return result;
}

PatientSubgraph extract_subgraph(const KgStore& store, const std::set<int>& seed_entities,
                                 int hops) {
    if (hops < 0) throw ConfigError("extract_subgraph: hops must be >= 0");
    for (int s : seed_entities)
        if (s < 0 || s >= store.entity_count())
            throw LookupError("extract_subgraph: unknown seed entity id " + std::to_string(s));

    // breadth-first over the undirected adjacency, bounded by hop count
    std::map<int, int> dist;
    std::deque<int> frontier;
    for (int s : seed_entities) {
        dist[s] = 0;
        frontier.push_back(s);
    }
    while (!frontier.empty()) {
        int u = frontier.front();
        frontier.pop_front();
        int du = dist[u];
        if (du >= hops) continue;
        for (const auto& e : store.adjacency(u)) {
            if (dist.count(e.neighbor)) continue;
            dist[e.neighbor] = du + 1;
            frontier.push_back(e.neighbor);
        }
    }

    PatientSubgraph sg;
    sg.node_ids.reserve(dist.size());
    std::map<int, int> index_of;
    for (const auto& [id, _] : dist) {  // std::map iterates ascending
        index_of[id] = static_cast<int>(sg.node_ids.size());
        sg.node_ids.push_back(id);
    }
    sg.seed_mask.resize(sg.node_ids.size(), false);
    for (std::size_t i = 0; i < sg.node_ids.size(); ++i)
        if (seed_entities.count(sg.node_ids[i])) sg.seed_mask[i] = true;

    for (const auto& t : store.triples()) {
        auto hs = index_of.find(t.head);
        auto ts = index_of.find(t.tail);
        if (hs != index_of.end() && ts != index_of.end())
            sg.edges.push_back({hs->second, ts->second, t.relation});
    }
    return sg;
}

}  // namespace sepsisfl::kgraph
