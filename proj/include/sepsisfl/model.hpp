#pragma once

// Dual-path sepsis predictor: graph-attention encoding of the patient's
// knowledge-subgraph, a delta-t-aware transformer (or gated recurrent
// fallback) over the 48-hour observation window, concatenation fusion and a
// sigmoid head. Forward and analytic backward are hand-written; gradients are
// verified against finite differences in the tests.

#include <span>
#include <vector>

#include "sepsisfl/kgraph.hpp"
#include "sepsisfl/numcore.hpp"
#include "sepsisfl/params.hpp"
#include "sepsisfl/synthdata.hpp"

namespace sepsisfl::model {

struct ModelConfig {
    int d_model = 32;
    int n_heads = 4;
    int n_layers = 2;
    int d_ff = 64;
    int d_kg = 16;    // GAT output width
    int kg_dim = 16;  // entity embedding width (GAT input)
    int feature_count = 7;
    double dropout_rate = 0.1;
    bool use_kg = true;
    bool use_transformer = true;  // false selects the gated recurrent encoder
    double gat_slope = 0.2;       // leaky slope inside GAT attention logits
    double ffn_slope = 0.01;      // leaky slope in the feed-forward layer

    int head_dim() const { return d_model / n_heads; }
    int fused_dim() const { return (use_kg ? d_kg : 0) + d_model; }
    void validate() const;  // throws ConfigError
};

struct PredictionOutput {
    numcore::Tensor h_kg;     // d_kg; empty when the KG path is off
    numcore::Tensor h_ts;     // d_model
    numcore::Tensor h_final;  // exactly [h_kg; h_ts]
    double probability = 0.5;
};

// One training/evaluation instance. The subgraph may be null or empty (e.g. a
// patient with no linked entities); the KG path then contributes zeros.
struct Example {
    const synthdata::EpisodeWindow* window = nullptr;
    const kgraph::PatientSubgraph* subgraph = nullptr;
};

// scaled dot-product attention: softmax(Q K^T / sqrt(d_k)) V
numcore::Tensor attention(const numcore::Tensor& Q, const numcore::Tensor& K,
                          const numcore::Tensor& V);

// Raw sin/cos pattern of the inter-observation gaps (dt_0 := 0), before the
// learned map. Columns pair up as sin(dt*f_i), cos(dt*f_i) with geometric
// frequencies f_i = 10000^(-2i/d). Throws on decreasing timestamps.
numcore::Tensor delta_encoding_base(const std::vector<double>& times, int d);

// Introspection of a forward pass, for verification against naive formulas.
struct GatTrace {
    numcore::Tensor P;                       // N x d_kg rows, P_j = W h_j
    std::vector<std::vector<int>> nbhd;      // per node: ascending {i} u N(i)
    std::vector<std::vector<double>> alpha;  // attention rows aligned with nbhd
    numcore::Tensor node_out;                // N x d_kg
    std::vector<int> pooled_nodes;
};

struct AttnTrace {
    numcore::Tensor layer_in;                // T x d_model
    std::vector<numcore::Tensor> Q, K, V;    // per head, T x head_dim
    std::vector<numcore::Tensor> A;          // per head, T x T, row-stochastic
    std::vector<numcore::Tensor> head_out;   // per head, T x head_dim
    numcore::Tensor block_out;               // T x d_model
};

struct Trace {
    numcore::Tensor input_proj;  // T x d_model, before temporal encodings
    numcore::Tensor time_enc;    // T x d_model; empty for the recurrent path
    std::vector<AttnTrace> layers;
    GatTrace gat;
    std::vector<int> pooled_rows;  // window rows used by mean pooling
};

class Model {
  public:
    explicit Model(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    const LayoutPtr& layout() const { return layout_; }

    ParamVector init_params(numcore::Rng& rng) const;

    // Component encoders (evaluation mode: no dropout).
    numcore::Tensor gat_encode(const kgraph::PatientSubgraph& g,
                               const kgraph::KgEmbeddings& emb, const ParamVector& p,
                               GatTrace* trace = nullptr) const;
    numcore::Tensor temporal_encode(const std::vector<double>& times,
                                    const ParamVector& p) const;
    numcore::Tensor encode_window(const synthdata::EpisodeWindow& w, const ParamVector& p,
                                  Trace* trace = nullptr) const;
    PredictionOutput fuse_and_predict(const numcore::Tensor& h_kg,
                                      const numcore::Tensor& h_ts,
                                      const ParamVector& p) const;

    // Full forward in evaluation mode.
    PredictionOutput predict(const Example& ex, const kgraph::KgEmbeddings* emb,
                             const ParamVector& p, Trace* trace = nullptr) const;

    // Binary cross-entropy of one example against its window label
    // (evaluation mode).
    double loss(const Example& ex, const kgraph::KgEmbeddings* emb,
                const ParamVector& p) const;

    // Mean loss over the batch; `grad` is overwritten with the mean gradient.
    // Dropout is active only when dropout_rng is non-null and rate > 0.
    double loss_and_grad(std::span<const Example> batch, const kgraph::KgEmbeddings* emb,
                         const ParamVector& p, ParamVector& grad,
                         numcore::Rng* dropout_rng = nullptr) const;

  private:
    ModelConfig cfg_;
    LayoutPtr layout_;
};

}  // namespace sepsisfl::model
