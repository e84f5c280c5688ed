#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sepsisfl/kgraph.hpp"
#include "sepsisfl/ledger.hpp"
#include "sepsisfl/model.hpp"
#include "sepsisfl/params.hpp"
#include "sepsisfl/privacy.hpp"
#include "sepsisfl/synthdata.hpp"

namespace sepsisfl::federation {

enum class AggregationMode { fedavg_weights, dp_quality_gradient };
enum class MetaLearning { off, fomaml };

std::string to_string(AggregationMode m);
std::string to_string(MetaLearning m);
AggregationMode aggregation_mode_from_string(const std::string& s);
MetaLearning meta_learning_from_string(const std::string& s);

struct FederationConfig {
    int clients = 5;
    int rounds = 30;
    int local_epochs = 1;
    int batch_size = 32;  // <= 0 means full batch
    double local_lr = 0.05;
    double meta_lr = 0.02;    // FoMAML adaptation step
    double global_lr = 1.0;   // gradient-mode server step
    AggregationMode mode = AggregationMode::fedavg_weights;
    MetaLearning meta = MetaLearning::off;
    privacy::DpConfig dp;

    void validate() const;
};

// A client's local shard. Windows are preprocessed; graphs (when present) run
// parallel to windows. This object never crosses the client/server boundary.
struct ClientData {
    std::vector<synthdata::EpisodeWindow> train_windows;
    std::vector<synthdata::EpisodeWindow> val_windows;
    std::vector<kgraph::PatientSubgraph> train_graphs;  // empty when the model skips the KG
    std::vector<kgraph::PatientSubgraph> val_graphs;
};

struct ClientState {
    int client_id = 0;
    ClientData data;
    int sample_count = 0;     // n_k, training windows
    double quality = 1.0;     // Q_k, refreshed from local validation AUC
    numcore::Rng rng{0};
    std::uint64_t bytes_sent = 0;
    std::uint64_t bytes_received = 0;

    std::vector<model::Example> train_examples() const;
    std::vector<model::Example> val_examples() const;
};

// The only client-to-server message.
struct ClientUpdate {
    model::ParamVector payload;  // adapted weights or processed gradient, per mode
    int client_id = 0;
    int sample_count = 0;
    double quality = 1.0;
    int round_index = 0;
    std::uint64_t payload_bytes = 0;
};

struct RoundReport {
    int round = 0;
    std::string mode;
    double train_loss = 0.0;             // n_k-weighted mean of client training losses
    std::vector<double> node_val_auc;    // per surviving client, sorted by id; NaN if undefined
    int participating = 0;
    double epsilon_spent = 0.0;
    std::uint64_t bytes_transferred = 0; // cumulative over all rounds so far
    std::string ledger_hash_hex;
    std::vector<std::string> events;
    bool aggregated = false;
};

struct ServerState {
    model::ParamVector global;
    int round = 0;
    ledger::Chain chain;
    int dp_rounds_composed = 0;
    std::uint64_t total_bytes = 0;
    std::vector<std::string> events;
};

// theta - alpha * grad, the shared update rule.
model::ParamVector adapt_step(const model::ParamVector& theta,
                              const model::ParamVector& grad, double alpha);

// One full-support-batch first-order adaptation step at theta.
model::ParamVector local_adapt(const model::Model& m, const kgraph::KgEmbeddings* emb,
                               const model::ParamVector& theta, const ClientState& client,
                               double alpha);

// Local epochs of minibatch SGD (after adaptation when FoMAML is on); emits the
// mode-dependent payload and refreshes the client's quality score.
ClientUpdate local_train(const model::Model& m, const kgraph::KgEmbeddings* emb,
                         const model::ParamVector& theta, ClientState& client,
                         const FederationConfig& cfg, int round_index,
                         double* mean_train_loss = nullptr);

// Sample-count-weighted average of client weights.
model::ParamVector aggregate_fedavg(const std::vector<ClientUpdate>& updates);

// w - eta * sum_k (n_k Q_k / N) g_k with N = sum n_k Q_k; nullopt when N = 0
// (round must be skipped with the model unchanged).
std::optional<model::ParamVector> aggregate_quality_dp(const model::ParamVector& w,
                                                       const std::vector<ClientUpdate>& updates,
                                                       double eta);

// Privacy-by-design audit: true if the payload buffer aliases any client-held
// window storage (it never should).
bool update_aliases_client_data(const ClientUpdate& update, const ClientState& client);

// Writes the genesis ledger entry for the initial global parameters.
void init_server(ServerState& server, const model::ParamVector& initial,
                 const FederationConfig& cfg);

// One federated round: broadcast, local training on every client, aggregation,
// ledger append, privacy accounting.
RoundReport run_round(ServerState& server, std::vector<ClientState>& clients,
                      const model::Model& m, const kgraph::KgEmbeddings* emb,
                      const FederationConfig& cfg);

// Round reports as CSV. Columns: round, mode, train_loss, one val_auc_node<i>
// column per client, test_auc, epsilon, bytes, ledger_hash.
std::string round_csv_header(int node_count);
std::string round_csv_row(const RoundReport& report, double test_auc);

}  // namespace sepsisfl::federation
