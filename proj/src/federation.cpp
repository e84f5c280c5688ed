#include "sepsisfl/federation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "sepsisfl/common.hpp"
#include "sepsisfl/eval.hpp"

namespace sepsisfl::federation {

using model::Example;
using model::ParamVector;
using numcore::Rng;

namespace {

// serialized form: 32-byte layout digest then 8 bytes per parameter
std::uint64_t wire_bytes(const ParamVector& p) { return 32 + 8 * p.size(); }

void fmt_g(std::ostream& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
}

bool ranges_overlap(const double* a, std::size_t an, const double* b, std::size_t bn) {
    if (an == 0 || bn == 0) return false;
    return a < b + bn && b < a + an;
}

bool window_overlaps(const synthdata::EpisodeWindow& w, const double* p, std::size_t n) {
    return ranges_overlap(w.values.data(), w.values.size(), p, n) ||
           ranges_overlap(w.observed_mask.data(), w.observed_mask.size(), p, n);
}

}  // namespace

std::string to_string(AggregationMode m) {
    return m == AggregationMode::fedavg_weights ? "fedavg_weights" : "dp_quality_gradient";
}

std::string to_string(MetaLearning m) { return m == MetaLearning::off ? "off" : "fomaml"; }

AggregationMode aggregation_mode_from_string(const std::string& s) {
    if (s == "fedavg_weights") return AggregationMode::fedavg_weights;
    if (s == "dp_quality_gradient") return AggregationMode::dp_quality_gradient;
    throw ConfigError("unknown aggregation mode: " + s);
}

MetaLearning meta_learning_from_string(const std::string& s) {
    if (s == "off") return MetaLearning::off;
    if (s == "fomaml") return MetaLearning::fomaml;
    throw ConfigError("unknown meta-learning setting: " + s);
}

void FederationConfig::validate() const {
    if (clients < 1) throw ConfigError("federation: at least one client required");
    if (rounds < 0) throw ConfigError("federation: rounds must be nonnegative");
    if (local_epochs < 0) throw ConfigError("federation: local_epochs must be nonnegative");
    if (local_epochs > 0 && local_lr <= 0.0)
        throw ConfigError("federation: local_lr must be positive");
    if (meta == MetaLearning::fomaml && meta_lr <= 0.0)
        throw ConfigError("federation: meta_lr must be positive with fomaml");
    if (mode == AggregationMode::dp_quality_gradient && global_lr <= 0.0)
        throw ConfigError("federation: global_lr must be positive in gradient mode");
    dp.validate();
}

std::vector<Example> ClientState::train_examples() const {
    std::vector<Example> out;
    out.reserve(data.train_windows.size());
    for (std::size_t i = 0; i < data.train_windows.size(); ++i)
        out.push_back({&data.train_windows[i],
                       i < data.train_graphs.size() ? &data.train_graphs[i] : nullptr});
    return out;
}

std::vector<Example> ClientState::val_examples() const {
    std::vector<Example> out;
    out.reserve(data.val_windows.size());
    for (std::size_t i = 0; i < data.val_windows.size(); ++i)
        out.push_back({&data.val_windows[i],
                       i < data.val_graphs.size() ? &data.val_graphs[i] : nullptr});
    return out;
}

ParamVector adapt_step(const ParamVector& theta, const ParamVector& grad, double alpha) {
    if (!theta.same_layout(grad)) throw ProtocolError("adapt_step: layout mismatch");
    ParamVector out = theta;
    numcore::axpy(-alpha, grad.flat(), out.flat());
    return out;
}

ParamVector local_adapt(const model::Model& m, const kgraph::KgEmbeddings* emb,
                        const ParamVector& theta, const ClientState& client, double alpha) {
    std::vector<Example> support = client.train_examples();
    if (support.empty())
        throw InputError("client " + std::to_string(client.client_id) + " has no local data");
    ParamVector grad(theta.layout());
    m.loss_and_grad(support, emb, theta, grad);
    return adapt_step(theta, grad, alpha);
}

ClientUpdate local_train(const model::Model& m, const kgraph::KgEmbeddings* emb,
                         const ParamVector& theta, ClientState& client,
                         const FederationConfig& cfg, int round_index,
                         double* mean_train_loss) {
    std::vector<Example> train = client.train_examples();
    if (train.empty())
        throw InputError("client " + std::to_string(client.client_id) + " has no local data");

    client.bytes_received += wire_bytes(theta);
    Rng round_rng = client.rng.fork("round").fork(static_cast<std::uint64_t>(round_index));

    ParamVector theta_local =
        cfg.meta == MetaLearning::fomaml ? local_adapt(m, emb, theta, client, cfg.meta_lr)
                                         : theta;
    ParamVector grad(theta.layout());
    ParamVector cumulative(theta.layout());
    cumulative.fill(0.0);

    int n = static_cast<int>(train.size());
    int batch = cfg.batch_size <= 0 ? n : std::min(cfg.batch_size, n);
    double loss_sum = 0.0;
    long seen = 0;
    std::vector<int> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    bool dropout = m.config().dropout_rate > 0.0;

    for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        Rng shuffle_rng = round_rng.fork("shuffle").fork(static_cast<std::uint64_t>(epoch));
        shuffle_rng.shuffle(order);
        for (int start = 0; start < n; start += batch) {
            int stop = std::min(start + batch, n);
            std::vector<Example> chunk;
            chunk.reserve(static_cast<std::size_t>(stop - start));
            for (int i = start; i < stop; ++i)
                chunk.push_back(train[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
            Rng drop_rng = round_rng.fork("dropout")
                               .fork(static_cast<std::uint64_t>(epoch))
                               .fork(static_cast<std::uint64_t>(start));
            double loss =
                m.loss_and_grad(chunk, emb, theta_local, grad, dropout ? &drop_rng : nullptr);
            if (!std::isfinite(loss))
                throw DataError("client " + std::to_string(client.client_id) +
                                ": non-finite training loss in round " +
                                std::to_string(round_index));
            loss_sum += loss * static_cast<double>(chunk.size());
            seen += static_cast<long>(chunk.size());
            numcore::axpy(-cfg.local_lr, grad.flat(), theta_local.flat());
            numcore::axpy(1.0, grad.flat(), cumulative.flat());
        }
    }
    if (mean_train_loss != nullptr) {
        if (seen > 0) {
            *mean_train_loss = loss_sum / static_cast<double>(seen);
        } else {
            double s = 0.0;
            for (const Example& ex : train) s += m.loss(ex, emb, theta_local);
            *mean_train_loss = s / static_cast<double>(train.size());
        }
    }

    // quality refresh from held-out local AUC; undefined metric keeps the old value
    std::vector<Example> val = client.val_examples();
    if (!val.empty()) {
        std::vector<double> scores;
        std::vector<int> labels;
        scores.reserve(val.size());
        labels.reserve(val.size());
        for (const Example& ex : val) {
            scores.push_back(m.predict(ex, emb, theta_local).probability);
            labels.push_back(ex.window->label);
        }
        try {
            client.quality = std::clamp(eval::auc(scores, labels), 0.0, 1.0);
        } catch (const UndefinedMetricError&) {
        }
    }

    ClientUpdate update;
    update.client_id = client.client_id;
    update.sample_count = n;
    update.quality = client.quality;
    update.round_index = round_index;
    if (cfg.mode == AggregationMode::fedavg_weights) {
        if (cfg.dp.enabled) {
            ParamVector delta = theta_local;
            numcore::axpy(-1.0, theta.flat(), delta.flat());
            privacy::clip_l2(delta, cfg.dp.clip_norm);
            Rng noise_rng = round_rng.fork("dp");
            privacy::add_gaussian_noise(delta, cfg.dp, noise_rng);
            update.payload = theta;
            numcore::axpy(1.0, delta.flat(), update.payload.flat());
        } else {
            update.payload = theta_local;
        }
    } else {
        update.payload = cumulative;
        if (cfg.dp.enabled) {
            privacy::clip_l2(update.payload, cfg.dp.clip_norm);
            Rng noise_rng = round_rng.fork("dp");
            privacy::add_gaussian_noise(update.payload, cfg.dp, noise_rng);
        }
    }
    update.payload_bytes = wire_bytes(update.payload);
    client.bytes_sent += update.payload_bytes;
    return update;
}

ParamVector aggregate_fedavg(const std::vector<ClientUpdate>& updates) {
    if (updates.empty()) throw ProtocolError("aggregate_fedavg: no client updates");
    long total = 0;
    for (const ClientUpdate& u : updates) {
        if (!u.payload.same_layout(updates.front().payload))
            throw ProtocolError("aggregate_fedavg: client " + std::to_string(u.client_id) +
                                " payload layout mismatch");
        total += u.sample_count;
    }
    if (total <= 0) throw ProtocolError("aggregate_fedavg: total sample count is zero");
    ParamVector out(updates.front().payload.layout());
    out.fill(0.0);
    for (const ClientUpdate& u : updates)
        numcore::axpy(static_cast<double>(u.sample_count) / static_cast<double>(total),
                      u.payload.flat(), out.flat());
    return out;
}

std::optional<ParamVector> aggregate_quality_dp(const ParamVector& w,
                                                const std::vector<ClientUpdate>& updates,
                                                double eta) {
    if (updates.empty()) throw ProtocolError("aggregate_quality_dp: no client updates");
    double total = 0.0;
    for (const ClientUpdate& u : updates) {
        if (!u.payload.same_layout(w))
            throw ProtocolError("aggregate_quality_dp: client " + std::to_string(u.client_id) +
                                " payload layout mismatch");
        total += static_cast<double>(u.sample_count) * u.quality;
    }
    if (total <= 0.0) return std::nullopt;
    ParamVector out = w;
    for (const ClientUpdate& u : updates) {
        double coeff = -eta * static_cast<double>(u.sample_count) * u.quality / total;
        numcore::axpy(coeff, u.payload.flat(), out.flat());
    }
    return out;
}

bool update_aliases_client_data(const ClientUpdate& update, const ClientState& client) {
    const double* p = update.payload.size() ? update.payload.flat().data() : nullptr;
    std::size_t n = update.payload.size();
    for (const auto& w : client.data.train_windows)
        if (window_overlaps(w, p, n)) return true;
    for (const auto& w : client.data.val_windows)
        if (window_overlaps(w, p, n)) return true;
    return false;
}

void init_server(ServerState& server, const ParamVector& initial, const FederationConfig& cfg) {
    server.global = initial;
    server.round = 0;
    server.dp_rounds_composed = 0;
    server.total_bytes = 0;
    auto bytes = initial.serialize();
    Digest d = sha256(bytes);
    ledger::EntryMeta meta;
    meta.mode = to_string(cfg.mode);
    meta.client_count = 0;
    meta.epsilon = 0.0;
    server.chain.append(d, meta, 0);
}

RoundReport run_round(ServerState& server, std::vector<ClientState>& clients,
                      const model::Model& m, const kgraph::KgEmbeddings* emb,
                      const FederationConfig& cfg) {
    cfg.validate();
    if (clients.empty()) throw ConfigError("run_round: no clients registered");

    RoundReport report;
    report.round = server.round + 1;
    report.mode = to_string(cfg.mode);

    std::vector<ClientState*> order;
    order.reserve(clients.size());
    for (ClientState& c : clients) order.push_back(&c);
    std::sort(order.begin(), order.end(),
              [](const ClientState* a, const ClientState* b) { return a->client_id < b->client_id; });

    std::vector<ClientUpdate> updates;
    double loss_weighted = 0.0;
    long loss_samples = 0;
    for (ClientState* c : order) {
        try {
            double mean_loss = 0.0;
            ClientUpdate u = local_train(m, emb, server.global, *c, cfg, server.round, &mean_loss);
            if (update_aliases_client_data(u, *c))
                throw ProtocolError("client " + std::to_string(c->client_id) +
                                    " payload aliases raw local data");
            if (u.round_index != server.round)
                throw ProtocolError("client " + std::to_string(c->client_id) +
                                    " update for a stale round");
            loss_weighted += mean_loss * static_cast<double>(u.sample_count);
            loss_samples += u.sample_count;
            updates.push_back(std::move(u));
        } catch (const InputError& e) {
            report.events.push_back(std::string("client skipped: ") + e.what());
        } catch (const DataError& e) {
            report.events.push_back(std::string("client aborted: ") + e.what());
        }
    }

    if (updates.empty()) {
        report.events.emplace_back("round aborted: no surviving client updates");
        report.aggregated = false;
        server.events.insert(server.events.end(), report.events.begin(), report.events.end());
        return report;
    }

    report.participating = static_cast<int>(updates.size());
    report.train_loss = loss_weighted / static_cast<double>(loss_samples);
    for (const ClientUpdate& u : updates) report.node_val_auc.push_back(u.quality);

    if (cfg.mode == AggregationMode::fedavg_weights) {
        server.global = aggregate_fedavg(updates);
        report.aggregated = true;
    } else {
        auto next = aggregate_quality_dp(server.global, updates, cfg.global_lr);
        if (next.has_value()) {
            server.global = std::move(*next);
            report.aggregated = true;
        } else {
            report.events.emplace_back("round skipped: total quality weight is zero");
            report.aggregated = false;
        }
    }

    if (cfg.dp.enabled) server.dp_rounds_composed += 1;
    privacy::PrivacySpent spent =
        cfg.dp.enabled
            ? privacy::epsilon_spent(cfg.dp.noise_multiplier, cfg.dp.delta,
                                     server.dp_rounds_composed)
            : privacy::PrivacySpent{};
    report.epsilon_spent = spent.epsilon;

    std::uint64_t round_bytes = 0;
    for (const ClientUpdate& u : updates) round_bytes += u.payload_bytes;
    round_bytes += static_cast<std::uint64_t>(updates.size()) * wire_bytes(server.global);
    server.total_bytes += round_bytes;
    report.bytes_transferred = server.total_bytes;

    auto bytes = server.global.serialize();
    Digest d = sha256(bytes);
    ledger::EntryMeta meta;
    meta.mode = report.mode;
    meta.client_count = static_cast<std::uint32_t>(updates.size());
    meta.epsilon = spent.epsilon;
    std::int64_t ts = static_cast<std::int64_t>(server.chain.size()) * 60000;
    const ledger::LedgerEntry& entry = server.chain.append(d, meta, ts);
    report.ledger_hash_hex = digest_hex(entry.entry_hash);

    server.round += 1;
    server.events.insert(server.events.end(), report.events.begin(), report.events.end());
    return report;
}

std::string round_csv_header(int node_count) {
    std::ostringstream out;
    out << "round,mode,train_loss";
    for (int i = 0; i < node_count; ++i) out << ",val_auc_node" << i;
    out << ",test_auc,epsilon,bytes,ledger_hash";
    return out.str();
}

std::string round_csv_row(const RoundReport& report, double test_auc) {
    std::ostringstream out;
    out << report.round << ',' << report.mode << ',';
    fmt_g(out, report.train_loss);
    for (double a : report.node_val_auc) {
        out << ',';
        fmt_g(out, a);
    }
    out << ',';
    fmt_g(out, test_auc);
    out << ',';
    fmt_g(out, report.epsilon_spent);
    out << ',' << report.bytes_transferred << ',' << report.ledger_hash_hex;
    return out.str();
}

}  // namespace sepsisfl::federation
