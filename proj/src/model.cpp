#include "sepsisfl/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sepsisfl/common.hpp"

namespace sepsisfl::model {

using numcore::Rng;
using numcore::Tensor;

namespace {

constexpr double kLnEps = 1e-5;

void add_bias_rows(Tensor& x, const Tensor& b) {
    for (int i = 0; i < x.rows(); ++i)
        for (int j = 0; j < x.cols(); ++j) x.at(i, j) += b[static_cast<std::size_t>(j)];
}

void acc_colsum(const Tensor& dY, Tensor& db) {
    for (int i = 0; i < dY.rows(); ++i)
        for (int j = 0; j < dY.cols(); ++j) db[static_cast<std::size_t>(j)] += dY.at(i, j);
}

Tensor slice_cols(const Tensor& x, int c0, int n) {
    Tensor out({x.rows(), n});
    for (int i = 0; i < x.rows(); ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = x.at(i, c0 + j);
    return out;
}

void add_into_cols(Tensor& dst, const Tensor& src, int c0) {
    for (int i = 0; i < src.rows(); ++i)
        for (int j = 0; j < src.cols(); ++j) dst.at(i, c0 + j) += src.at(i, j);
}

void acc_into(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// g[i][j] += x[i] * y[j]
void acc_outer(Tensor& g, const Tensor& x, const Tensor& y) {
    for (int i = 0; i < g.rows(); ++i) {
        double xi = x[static_cast<std::size_t>(i)];
        if (xi == 0.0) continue;
        for (int j = 0; j < g.cols(); ++j) g.at(i, j) += xi * y[static_cast<std::size_t>(j)];
    }
}

// out[j] += sum_i x[i] * W[i][j]
void row_times_mat_acc(const Tensor& x, const Tensor& W, Tensor& out) {
    for (int i = 0; i < W.rows(); ++i) {
        double xi = x[static_cast<std::size_t>(i)];
        if (xi == 0.0) continue;
        for (int j = 0; j < W.cols(); ++j) out[static_cast<std::size_t>(j)] += xi * W.at(i, j);
    }
}

// out[i] += sum_j g[j] * W[i][j]   (right-multiply by W^T)
void row_times_matT_acc(const Tensor& g, const Tensor& W, Tensor& out) {
    for (int i = 0; i < W.rows(); ++i) {
        double acc = 0.0;
        for (int j = 0; j < W.cols(); ++j) acc += g[static_cast<std::size_t>(j)] * W.at(i, j);
        out[static_cast<std::size_t>(i)] += acc;
    }
}

double stable_sigmoid(double z) {
    if (z >= 0.0) {
        double e = std::exp(-z);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(z);
    return e / (1.0 + e);
}

double bce_from_logit(double logit, int label) {
    // max(z,0) - z*y + log(1 + exp(-|z|))
    return std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::abs(logit)));
}

// 0 (dropped) or 1/keep, one entry per coordinate.
Tensor draw_dropout_mask(int rows, int cols, double rate, Rng* rng) {
    if (rng == nullptr) throw InputError("dropout requested without an rng");
    Tensor m({rows, cols});
    double keep = 1.0 - rate;
    for (std::size_t i = 0; i < m.size(); ++i)
        m[i] = rng->uniform01() < rate ? 0.0 : 1.0 / keep;
    return m;
}

struct LayerW {
    Tensor Wq, bq, Wk, bk, Wv, bv, Wo, bo;
    Tensor g1, b1ln;
    Tensor W1, b1, W2, b2;
    Tensor g2, b2ln;
};

struct Wts {
    Tensor gatW, a_src, a_dst;
    Tensor Win, bin;
    Tensor Wtime;
    std::vector<LayerW> layer;
    Tensor Wz, Uz, bz, Wc, Uc, bc;
    Tensor head_w;
    double head_b = 0.0;
};

Wts unpack(const ParamVector& p, const ModelConfig& cfg) {
    Wts w;
    if (cfg.use_kg) {
        w.gatW = p.seg_tensor("kg.gat.W");
        w.a_src = p.seg_tensor("kg.gat.a_src");
        w.a_dst = p.seg_tensor("kg.gat.a_dst");
    }
    w.Win = p.seg_tensor("ts.in.W");
    w.bin = p.seg_tensor("ts.in.b");
    if (cfg.use_transformer) {
        w.Wtime = p.seg_tensor("ts.time.W");
        w.layer.resize(static_cast<std::size_t>(cfg.n_layers));
        for (int l = 0; l < cfg.n_layers; ++l) {
            std::string pre = "ts.l" + std::to_string(l) + ".";
            LayerW& lw = w.layer[static_cast<std::size_t>(l)];
            lw.Wq = p.seg_tensor(pre + "attn.Wq");
            lw.bq = p.seg_tensor(pre + "attn.bq");
            lw.Wk = p.seg_tensor(pre + "attn.Wk");
            lw.bk = p.seg_tensor(pre + "attn.bk");
            lw.Wv = p.seg_tensor(pre + "attn.Wv");
            lw.bv = p.seg_tensor(pre + "attn.bv");
            lw.Wo = p.seg_tensor(pre + "attn.Wo");
            lw.bo = p.seg_tensor(pre + "attn.bo");
            lw.g1 = p.seg_tensor(pre + "ln1.g");
            lw.b1ln = p.seg_tensor(pre + "ln1.b");
            lw.W1 = p.seg_tensor(pre + "ff.W1");
            lw.b1 = p.seg_tensor(pre + "ff.b1");
            lw.W2 = p.seg_tensor(pre + "ff.W2");
            lw.b2 = p.seg_tensor(pre + "ff.b2");
            lw.g2 = p.seg_tensor(pre + "ln2.g");
            lw.b2ln = p.seg_tensor(pre + "ln2.b");
        }
    } else {
        w.Wz = p.seg_tensor("ts.rnn.Wz");
        w.Uz = p.seg_tensor("ts.rnn.Uz");
        w.bz = p.seg_tensor("ts.rnn.bz");
        w.Wc = p.seg_tensor("ts.rnn.Wc");
        w.Uc = p.seg_tensor("ts.rnn.Uc");
        w.bc = p.seg_tensor("ts.rnn.bc");
    }
    w.head_w = p.seg_tensor("head.w");
    w.head_b = p.seg_tensor("head.b")[0];
    return w;
}

// Gradient accumulator with the same shapes as Wts.
struct Grads {
    Wts g;
    double head_b = 0.0;
};

Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

Grads zero_grads(const Wts& w, const ModelConfig& cfg) {
    Grads out;
    if (cfg.use_kg) {
        out.g.gatW = zeros_like(w.gatW);
        out.g.a_src = zeros_like(w.a_src);
        out.g.a_dst = zeros_like(w.a_dst);
    }
    out.g.Win = zeros_like(w.Win);
    out.g.bin = zeros_like(w.bin);
    if (cfg.use_transformer) {
        out.g.Wtime = zeros_like(w.Wtime);
        out.g.layer.resize(w.layer.size());
        for (std::size_t l = 0; l < w.layer.size(); ++l) {
            const LayerW& s = w.layer[l];
            LayerW& d = out.g.layer[l];
            d.Wq = zeros_like(s.Wq);
            d.bq = zeros_like(s.bq);
            d.Wk = zeros_like(s.Wk);
            d.bk = zeros_like(s.bk);
            d.Wv = zeros_like(s.Wv);
            d.bv = zeros_like(s.bv);
            d.Wo = zeros_like(s.Wo);
            d.bo = zeros_like(s.bo);
            d.g1 = zeros_like(s.g1);
            d.b1ln = zeros_like(s.b1ln);
            d.W1 = zeros_like(s.W1);
            d.b1 = zeros_like(s.b1);
            d.W2 = zeros_like(s.W2);
            d.b2 = zeros_like(s.b2);
            d.g2 = zeros_like(s.g2);
            d.b2ln = zeros_like(s.b2ln);
        }
    } else {
        out.g.Wz = zeros_like(w.Wz);
        out.g.Uz = zeros_like(w.Uz);
        out.g.bz = zeros_like(w.bz);
        out.g.Wc = zeros_like(w.Wc);
        out.g.Uc = zeros_like(w.Uc);
        out.g.bc = zeros_like(w.bc);
    }
    out.g.head_w = zeros_like(w.head_w);
    out.head_b = 0.0;
    return out;
}

void flush_seg(ParamVector& out, const std::string& name, const Tensor& t, double scale) {
    std::span<double> dst = out.seg(name);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = t[i] * scale;
}

void flush(const Grads& gr, double scale, const ModelConfig& cfg, ParamVector& out) {
    if (cfg.use_kg) {
        flush_seg(out, "kg.gat.W", gr.g.gatW, scale);
        flush_seg(out, "kg.gat.a_src", gr.g.a_src, scale);
        flush_seg(out, "kg.gat.a_dst", gr.g.a_dst, scale);
    }
    flush_seg(out, "ts.in.W", gr.g.Win, scale);
    flush_seg(out, "ts.in.b", gr.g.bin, scale);
    if (cfg.use_transformer) {
        flush_seg(out, "ts.time.W", gr.g.Wtime, scale);
        for (int l = 0; l < cfg.n_layers; ++l) {
            std::string pre = "ts.l" + std::to_string(l) + ".";
            const LayerW& d = gr.g.layer[static_cast<std::size_t>(l)];
            flush_seg(out, pre + "attn.Wq", d.Wq, scale);
            flush_seg(out, pre + "attn.bq", d.bq, scale);
            flush_seg(out, pre + "attn.Wk", d.Wk, scale);
            flush_seg(out, pre + "attn.bk", d.bk, scale);
            flush_seg(out, pre + "attn.Wv", d.Wv, scale);
            flush_seg(out, pre + "attn.bv", d.bv, scale);
            flush_seg(out, pre + "attn.Wo", d.Wo, scale);
            flush_seg(out, pre + "attn.bo", d.bo, scale);
            flush_seg(out, pre + "ln1.g", d.g1, scale);
            flush_seg(out, pre + "ln1.b", d.b1ln, scale);
            flush_seg(out, pre + "ff.W1", d.W1, scale);
            flush_seg(out, pre + "ff.b1", d.b1, scale);
            flush_seg(out, pre + "ff.W2", d.W2, scale);
            flush_seg(out, pre + "ff.b2", d.b2, scale);
            flush_seg(out, pre + "ln2.g", d.g2, scale);
            flush_seg(out, pre + "ln2.b", d.b2ln, scale);
        }
    } else {
        flush_seg(out, "ts.rnn.Wz", gr.g.Wz, scale);
        flush_seg(out, "ts.rnn.Uz", gr.g.Uz, scale);
        flush_seg(out, "ts.rnn.bz", gr.g.bz, scale);
        flush_seg(out, "ts.rnn.Wc", gr.g.Wc, scale);
        flush_seg(out, "ts.rnn.Uc", gr.g.Uc, scale);
        flush_seg(out, "ts.rnn.bc", gr.g.bc, scale);
    }
    flush_seg(out, "head.w", gr.g.head_w, scale);
    out.seg("head.b")[0] = gr.head_b * scale;
}

// ---------------------------------------------------------------- GAT ------

struct GatForward {
    bool active = false;
    Tensor H0;  // N x kg_dim
    Tensor P;   // N x d_kg
    Tensor s, t;  // length N
    std::vector<std::vector<int>> nbhd;
    std::vector<std::vector<double>> alpha;
    Tensor node_out;  // N x d_kg
    std::vector<int> pooled;
    Tensor h_kg;  // d_kg
};

GatForward gat_forward(const kgraph::PatientSubgraph& g, const kgraph::KgEmbeddings& emb,
                       const Wts& w, const ModelConfig& cfg) {
    if (g.node_ids.empty()) throw InputError("gat_encode: empty subgraph");
    int n = static_cast<int>(g.node_ids.size());
    GatForward f;
    f.active = true;
    f.H0 = numcore::gather_rows(emb.entity_vecs, g.node_ids);
    if (f.H0.cols() != cfg.kg_dim)
        throw ConfigError("gat_encode: embedding width does not match kg_dim");
    f.P = numcore::matmul(f.H0, w.gatW);
    f.s = Tensor({n});
    f.t = Tensor({n});
    for (int i = 0; i < n; ++i) {
        double si = 0.0, ti = 0.0;
        for (int j = 0; j < cfg.d_kg; ++j) {
            si += f.P.at(i, j) * w.a_src[static_cast<std::size_t>(j)];
            ti += f.P.at(i, j) * w.a_dst[static_cast<std::size_t>(j)];
        }
        f.s[static_cast<std::size_t>(i)] = si;
        f.t[static_cast<std::size_t>(i)] = ti;
    }
    f.nbhd.resize(static_cast<std::size_t>(n));
    for (const auto& e : g.edges) {
        f.nbhd[static_cast<std::size_t>(e.src)].push_back(e.dst);
        f.nbhd[static_cast<std::size_t>(e.dst)].push_back(e.src);
    }
    for (int i = 0; i < n; ++i) {
        auto& nb = f.nbhd[static_cast<std::size_t>(i)];
        nb.push_back(i);
        std::sort(nb.begin(), nb.end());
        nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    }
    f.alpha.resize(static_cast<std::size_t>(n));
    f.node_out = Tensor({n, cfg.d_kg});
    for (int i = 0; i < n; ++i) {
        const auto& nb = f.nbhd[static_cast<std::size_t>(i)];
        std::vector<double>& a = f.alpha[static_cast<std::size_t>(i)];
        a.resize(nb.size());
        double mx = -1e300;
        for (std::size_t k = 0; k < nb.size(); ++k) {
            double logit = f.s[static_cast<std::size_t>(i)] + f.t[static_cast<std::size_t>(nb[k])];
            if (logit < 0.0) logit *= cfg.gat_slope;
            a[k] = logit;
            mx = std::max(mx, logit);
        }
        double z = 0.0;
        for (double& v : a) {
            v = std::exp(v - mx);
            z += v;
        }
        for (double& v : a) v /= z;
        for (std::size_t k = 0; k < nb.size(); ++k)
            for (int j = 0; j < cfg.d_kg; ++j)
                f.node_out.at(i, j) += a[k] * f.P.at(nb[k], j);
    }
    for (int i = 0; i < n; ++i)
        if (i < static_cast<int>(g.seed_mask.size()) && g.seed_mask[static_cast<std::size_t>(i)])
            f.pooled.push_back(i);
    if (f.pooled.empty())
        for (int i = 0; i < n; ++i) f.pooled.push_back(i);
    f.h_kg = Tensor({cfg.d_kg});
    for (int i : f.pooled)
        for (int j = 0; j < cfg.d_kg; ++j) f.h_kg[static_cast<std::size_t>(j)] += f.node_out.at(i, j);
    for (int j = 0; j < cfg.d_kg; ++j)
        f.h_kg[static_cast<std::size_t>(j)] /= static_cast<double>(f.pooled.size());
    return f;
}

// dh_kg flows back into gatW / a_src / a_dst (entity embeddings stay frozen).
void gat_backward(const GatForward& f, const Tensor& dh_kg, const Wts& w,
                  const ModelConfig& cfg, Grads& gr) {
    int n = f.P.rows();
    Tensor dnode({n, cfg.d_kg});
    double inv = 1.0 / static_cast<double>(f.pooled.size());
    for (int i : f.pooled)
        for (int j = 0; j < cfg.d_kg; ++j)
            dnode.at(i, j) += dh_kg[static_cast<std::size_t>(j)] * inv;

    Tensor dP({n, cfg.d_kg});
    Tensor dS({n}), dT({n});
    for (int i = 0; i < n; ++i) {
        const auto& nb = f.nbhd[static_cast<std::size_t>(i)];
        const auto& a = f.alpha[static_cast<std::size_t>(i)];
        std::vector<double> dalpha(nb.size());
        for (std::size_t k = 0; k < nb.size(); ++k) {
            double d = 0.0;
            for (int j = 0; j < cfg.d_kg; ++j) d += dnode.at(i, j) * f.P.at(nb[k], j);
            dalpha[k] = d;
            for (int j = 0; j < cfg.d_kg; ++j) dP.at(nb[k], j) += a[k] * dnode.at(i, j);
        }
        double dotsum = 0.0;
        for (std::size_t k = 0; k < nb.size(); ++k) dotsum += a[k] * dalpha[k];
        for (std::size_t k = 0; k < nb.size(); ++k) {
            double dlogit = a[k] * (dalpha[k] - dotsum);
            double raw = f.s[static_cast<std::size_t>(i)] + f.t[static_cast<std::size_t>(nb[k])];
            if (raw < 0.0) dlogit *= cfg.gat_slope;
            dS[static_cast<std::size_t>(i)] += dlogit;
            dT[static_cast<std::size_t>(nb[k])] += dlogit;
        }
    }
    for (int i = 0; i < n; ++i) {
        double dsi = dS[static_cast<std::size_t>(i)];
        double dti = dT[static_cast<std::size_t>(i)];
        for (int j = 0; j < cfg.d_kg; ++j) {
            gr.g.a_src[static_cast<std::size_t>(j)] += dsi * f.P.at(i, j);
            gr.g.a_dst[static_cast<std::size_t>(j)] += dti * f.P.at(i, j);
            dP.at(i, j) += dsi * w.a_src[static_cast<std::size_t>(j)] +
                           dti * w.a_dst[static_cast<std::size_t>(j)];
        }
    }
    acc_into(gr.g.gatW, numcore::matmul_tn(f.H0, dP));
}

// ------------------------------------------------------------ encoders ----

struct LayerCache {
    Tensor x_in;
    Tensor Q, K, V;                 // packed T x d_model
    std::vector<Tensor> A;          // per head, post-softmax
    std::vector<Tensor> Amask;      // dropout masks (empty in eval mode)
    std::vector<Tensor> Ad;         // post-dropout attention (train mode)
    Tensor O;                       // concatenated head outputs
    Tensor attn_out;
    Tensor R1, L1;
    Tensor F1pre, F1, F2;
    Tensor Fmask;                   // dropout mask (empty in eval mode)
    Tensor F2d;
    Tensor R2, L2;
};

struct WindowCache {
    Tensor xraw;   // T x 2F
    Tensor base;   // T x d_model sin/cos pattern (transformer)
    Tensor x0;     // input projection (+ temporal encodings)
    std::vector<LayerCache> layers;
    Tensor H, Z, C;  // recurrent states/gates
    std::vector<int> pool_rows;
    Tensor h_ts;
};

std::vector<int> pooled_rows(const synthdata::EpisodeWindow& w) {
    std::vector<int> rows;
    for (int i = 0; i < w.observed_mask.rows(); ++i) {
        bool any = false;
        for (int j = 0; j < w.observed_mask.cols(); ++j)
            if (w.observed_mask.at(i, j) != 0.0) {
                any = true;
                break;
            }
        if (any) rows.push_back(i);
    }
    if (rows.empty())
        for (int i = 0; i < w.observed_mask.rows(); ++i) rows.push_back(i);
    return rows;
}

WindowCache window_forward(const synthdata::EpisodeWindow& win, const Wts& w,
                           const ModelConfig& cfg, double drop_rate, Rng* rng) {
    int t_len = win.values.rows();
    if (t_len < 1) throw InputError("encode_window: zero-length sequence");
    if (win.values.cols() != cfg.feature_count)
        throw ConfigError("encode_window: channel count does not match config");
    int f_cnt = cfg.feature_count;
    bool train = rng != nullptr && drop_rate > 0.0;

    WindowCache c;
    c.xraw = Tensor({t_len, 2 * f_cnt});
    for (int i = 0; i < t_len; ++i)
        for (int j = 0; j < f_cnt; ++j) {
            c.xraw.at(i, j) = win.values.at(i, j);
            c.xraw.at(i, f_cnt + j) = win.observed_mask.at(i, j);
        }
    c.x0 = numcore::matmul(c.xraw, w.Win);
    add_bias_rows(c.x0, w.bin);
    if (cfg.use_transformer) {
        c.base = delta_encoding_base(win.timestamps, cfg.d_model);
        acc_into(c.x0, numcore::matmul(c.base, w.Wtime));
    }

    if (cfg.use_transformer) {
        int dh = cfg.head_dim();
        double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        Tensor x = c.x0;
        c.layers.resize(static_cast<std::size_t>(cfg.n_layers));
        for (int l = 0; l < cfg.n_layers; ++l) {
            const LayerW& lw = w.layer[static_cast<std::size_t>(l)];
            LayerCache& lc = c.layers[static_cast<std::size_t>(l)];
            lc.x_in = x;
            lc.Q = numcore::matmul(x, lw.Wq);
            add_bias_rows(lc.Q, lw.bq);
            lc.K = numcore::matmul(x, lw.Wk);
            add_bias_rows(lc.K, lw.bk);
            lc.V = numcore::matmul(x, lw.Wv);
            add_bias_rows(lc.V, lw.bv);
            lc.O = Tensor({t_len, cfg.d_model});
            lc.A.resize(static_cast<std::size_t>(cfg.n_heads));
            if (train) {
                lc.Amask.resize(static_cast<std::size_t>(cfg.n_heads));
                lc.Ad.resize(static_cast<std::size_t>(cfg.n_heads));
            }
            for (int h = 0; h < cfg.n_heads; ++h) {
                Tensor qh = slice_cols(lc.Q, h * dh, dh);
                Tensor kh = slice_cols(lc.K, h * dh, dh);
                Tensor vh = slice_cols(lc.V, h * dh, dh);
                Tensor scores = numcore::matmul_nt(qh, kh);
                for (std::size_t i = 0; i < scores.size(); ++i) scores[i] *= inv_sqrt;
                Tensor a = numcore::softmax_rows(scores);
                lc.A[static_cast<std::size_t>(h)] = a;
                const Tensor* a_eff = &lc.A[static_cast<std::size_t>(h)];
                if (train) {
                    lc.Amask[static_cast<std::size_t>(h)] =
                        draw_dropout_mask(t_len, t_len, drop_rate, rng);
                    lc.Ad[static_cast<std::size_t>(h)] =
                        numcore::mul(a, lc.Amask[static_cast<std::size_t>(h)]);
                    a_eff = &lc.Ad[static_cast<std::size_t>(h)];
                }
                Tensor oh = numcore::matmul(*a_eff, vh);
                add_into_cols(lc.O, oh, h * dh);
            }
            lc.attn_out = numcore::matmul(lc.O, lw.Wo);
            add_bias_rows(lc.attn_out, lw.bo);
            lc.R1 = numcore::add(lc.x_in, lc.attn_out);
            lc.L1 = numcore::layer_norm_rows(lc.R1, lw.g1, lw.b1ln, kLnEps);
            lc.F1pre = numcore::matmul(lc.L1, lw.W1);
            add_bias_rows(lc.F1pre, lw.b1);
            lc.F1 = numcore::leaky_relu(lc.F1pre, cfg.ffn_slope);
            lc.F2 = numcore::matmul(lc.F1, lw.W2);
            add_bias_rows(lc.F2, lw.b2);
            if (train) {
                lc.Fmask = draw_dropout_mask(t_len, cfg.d_model, drop_rate, rng);
                lc.F2d = numcore::mul(lc.F2, lc.Fmask);
            } else {
                lc.F2d = lc.F2;
            }
            lc.R2 = numcore::add(lc.L1, lc.F2d);
            lc.L2 = numcore::layer_norm_rows(lc.R2, lw.g2, lw.b2ln, kLnEps);
            x = lc.L2;
        }
    } else {
        // minimal gated recurrence: z_t = sig(xW_z + hU_z + b_z),
        // c_t = tanh(xW_c + hU_c + b_c), h_t = (1-z)h + z*c, h_0 = 0
        c.H = Tensor({t_len, cfg.d_model});
        c.Z = Tensor({t_len, cfg.d_model});
        c.C = Tensor({t_len, cfg.d_model});
        Tensor h_prev({cfg.d_model});
        for (int t = 0; t < t_len; ++t) {
            Tensor x_t({cfg.d_model});
            for (int j = 0; j < cfg.d_model; ++j) x_t[static_cast<std::size_t>(j)] = c.x0.at(t, j);
            Tensor zpre = w.bz;
            row_times_mat_acc(x_t, w.Wz, zpre);
            row_times_mat_acc(h_prev, w.Uz, zpre);
            Tensor cpre = w.bc;
            row_times_mat_acc(x_t, w.Wc, cpre);
            row_times_mat_acc(h_prev, w.Uc, cpre);
            for (int j = 0; j < cfg.d_model; ++j) {
                double z = stable_sigmoid(zpre[static_cast<std::size_t>(j)]);
                double cc = std::tanh(cpre[static_cast<std::size_t>(j)]);
                double h = (1.0 - z) * h_prev[static_cast<std::size_t>(j)] + z * cc;
                c.Z.at(t, j) = z;
                c.C.at(t, j) = cc;
                c.H.at(t, j) = h;
            }
            for (int j = 0; j < cfg.d_model; ++j)
                h_prev[static_cast<std::size_t>(j)] = c.H.at(t, j);
        }
    }

    c.pool_rows = pooled_rows(win);
    const Tensor& seq = cfg.use_transformer
                            ? (cfg.n_layers > 0 ? c.layers.back().L2 : c.x0)
                            : c.H;
    c.h_ts = Tensor({cfg.d_model});
    for (int r : c.pool_rows)
        for (int j = 0; j < cfg.d_model; ++j)
            c.h_ts[static_cast<std::size_t>(j)] += seq.at(r, j);
    for (int j = 0; j < cfg.d_model; ++j)
        c.h_ts[static_cast<std::size_t>(j)] /= static_cast<double>(c.pool_rows.size());
    return c;
}

// Propagates dh_ts back through the window encoder, accumulating into gr.
void window_backward(const WindowCache& c, const Tensor& dh_ts, const Wts& w,
                     const ModelConfig& cfg, Grads& gr) {
    int t_len = c.x0.rows();
    double inv_pool = 1.0 / static_cast<double>(c.pool_rows.size());
    Tensor dx({t_len, cfg.d_model});
    for (int r : c.pool_rows)
        for (int j = 0; j < cfg.d_model; ++j)
            dx.at(r, j) += dh_ts[static_cast<std::size_t>(j)] * inv_pool;

    if (cfg.use_transformer) {
        int dh = cfg.head_dim();
        double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        for (int l = cfg.n_layers - 1; l >= 0; --l) {
            const LayerW& lw = w.layer[static_cast<std::size_t>(l)];
            const LayerCache& lc = c.layers[static_cast<std::size_t>(l)];
            LayerW& gl = gr.g.layer[static_cast<std::size_t>(l)];
            bool train = !lc.Amask.empty();

            Tensor dR2, dg2, db2;
            numcore::layer_norm_rows_backward(dx, lc.R2, lw.g2, dR2, dg2, db2, kLnEps);
            acc_into(gl.g2, dg2);
            acc_into(gl.b2ln, db2);

            Tensor dL1 = dR2;  // residual branch
            Tensor dF2 = train ? numcore::mul(dR2, lc.Fmask) : dR2;
            acc_into(gl.W2, numcore::matmul_tn(lc.F1, dF2));
            acc_colsum(dF2, gl.b2);
            Tensor dF1 = numcore::matmul_nt(dF2, lw.W2);
            Tensor dF1pre = numcore::leaky_relu_backward(dF1, lc.F1pre, cfg.ffn_slope);
            acc_into(gl.W1, numcore::matmul_tn(lc.L1, dF1pre));
            acc_colsum(dF1pre, gl.b1);
            acc_into(dL1, numcore::matmul_nt(dF1pre, lw.W1));

            Tensor dR1, dg1, db1;
            numcore::layer_norm_rows_backward(dL1, lc.R1, lw.g1, dR1, dg1, db1, kLnEps);
            acc_into(gl.g1, dg1);
            acc_into(gl.b1ln, db1);

            Tensor dx_in = dR1;  // residual branch
            const Tensor& dAttnOut = dR1;
            acc_into(gl.Wo, numcore::matmul_tn(lc.O, dAttnOut));
            acc_colsum(dAttnOut, gl.bo);
            Tensor dO = numcore::matmul_nt(dAttnOut, lw.Wo);

            Tensor dQ({t_len, cfg.d_model});
            Tensor dK({t_len, cfg.d_model});
            Tensor dV({t_len, cfg.d_model});
            for (int h = 0; h < cfg.n_heads; ++h) {
                Tensor doh = slice_cols(dO, h * dh, dh);
                Tensor qh = slice_cols(lc.Q, h * dh, dh);
                Tensor kh = slice_cols(lc.K, h * dh, dh);
                Tensor vh = slice_cols(lc.V, h * dh, dh);
                const Tensor& a_eff =
                    train ? lc.Ad[static_cast<std::size_t>(h)] : lc.A[static_cast<std::size_t>(h)];
                Tensor dAd = numcore::matmul_nt(doh, vh);
                Tensor dvh = numcore::matmul_tn(a_eff, doh);
                Tensor dA = train ? numcore::mul(dAd, lc.Amask[static_cast<std::size_t>(h)]) : dAd;
                Tensor dScore =
                    numcore::softmax_rows_backward(dA, lc.A[static_cast<std::size_t>(h)]);
                for (std::size_t i = 0; i < dScore.size(); ++i) dScore[i] *= inv_sqrt;
                Tensor dqh = numcore::matmul(dScore, kh);
                Tensor dkh = numcore::matmul_tn(dScore, qh);
                add_into_cols(dQ, dqh, h * dh);
                add_into_cols(dK, dkh, h * dh);
                add_into_cols(dV, dvh, h * dh);
            }
            acc_into(gl.Wq, numcore::matmul_tn(lc.x_in, dQ));
            acc_colsum(dQ, gl.bq);
            acc_into(dx_in, numcore::matmul_nt(dQ, lw.Wq));
            acc_into(gl.Wk, numcore::matmul_tn(lc.x_in, dK));
            acc_colsum(dK, gl.bk);
            acc_into(dx_in, numcore::matmul_nt(dK, lw.Wk));
            acc_into(gl.Wv, numcore::matmul_tn(lc.x_in, dV));
            acc_colsum(dV, gl.bv);
            acc_into(dx_in, numcore::matmul_nt(dV, lw.Wv));
            dx = dx_in;
        }
        acc_into(gr.g.Wtime, numcore::matmul_tn(c.base, dx));
    } else {
        Tensor dx0({t_len, cfg.d_model});
        Tensor carry({cfg.d_model});
        for (int t = t_len - 1; t >= 0; --t) {
            Tensor h_prev({cfg.d_model});
            if (t > 0)
                for (int j = 0; j < cfg.d_model; ++j)
                    h_prev[static_cast<std::size_t>(j)] = c.H.at(t - 1, j);
            Tensor x_t({cfg.d_model});
            for (int j = 0; j < cfg.d_model; ++j) x_t[static_cast<std::size_t>(j)] = c.x0.at(t, j);

            Tensor dzpre({cfg.d_model}), dcpre({cfg.d_model}), dh_prev({cfg.d_model});
            for (int j = 0; j < cfg.d_model; ++j) {
                double dht = dx.at(t, j) + carry[static_cast<std::size_t>(j)];
                double z = c.Z.at(t, j);
                double cc = c.C.at(t, j);
                double hp = h_prev[static_cast<std::size_t>(j)];
                double dz = dht * (cc - hp);
                double dc = dht * z;
                dh_prev[static_cast<std::size_t>(j)] = dht * (1.0 - z);
                dzpre[static_cast<std::size_t>(j)] = dz * z * (1.0 - z);
                dcpre[static_cast<std::size_t>(j)] = dc * (1.0 - cc * cc);
            }
            acc_outer(gr.g.Wz, x_t, dzpre);
            acc_outer(gr.g.Uz, h_prev, dzpre);
            acc_into(gr.g.bz, dzpre);
            acc_outer(gr.g.Wc, x_t, dcpre);
            acc_outer(gr.g.Uc, h_prev, dcpre);
            acc_into(gr.g.bc, dcpre);
            Tensor dxt({cfg.d_model});
            row_times_matT_acc(dzpre, w.Wz, dxt);
            row_times_matT_acc(dcpre, w.Wc, dxt);
            for (int j = 0; j < cfg.d_model; ++j) dx0.at(t, j) = dxt[static_cast<std::size_t>(j)];
            Tensor new_carry = dh_prev;
            row_times_matT_acc(dzpre, w.Uz, new_carry);
            row_times_matT_acc(dcpre, w.Uc, new_carry);
            carry = new_carry;
        }
        dx = dx0;
    }

    acc_into(gr.g.Win, numcore::matmul_tn(c.xraw, dx));
    acc_colsum(dx, gr.g.bin);
}

}  // namespace

// ------------------------------------------------------------- public ------

void ModelConfig::validate() const {
    if (d_model <= 0 || n_heads <= 0 || d_ff <= 0 || feature_count <= 0)
        throw ConfigError("model: dimensions must be positive");
    if (use_transformer && n_layers <= 0)
        throw ConfigError("model: n_layers must be positive");
    if (d_model % n_heads != 0)
        throw ConfigError("model: d_model must be divisible by n_heads");
    if (d_model % 2 != 0)
        throw ConfigError("model: d_model must be even for the sin/cos encoding");
    if (use_kg && (d_kg <= 0 || kg_dim <= 0))
        throw ConfigError("model: d_kg and kg_dim must be positive");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw ConfigError("model: dropout_rate must lie in [0, 1)");
    if (gat_slope < 0.0 || ffn_slope < 0.0)
        throw ConfigError("model: leaky slopes must be nonnegative");
}

Model::Model(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    std::vector<std::pair<std::string, std::vector<int>>> segs;
    if (cfg_.use_kg) {
        segs.emplace_back("kg.gat.W", std::vector<int>{cfg_.kg_dim, cfg_.d_kg});
        segs.emplace_back("kg.gat.a_src", std::vector<int>{cfg_.d_kg});
        segs.emplace_back("kg.gat.a_dst", std::vector<int>{cfg_.d_kg});
    }
    segs.emplace_back("ts.in.W", std::vector<int>{2 * cfg_.feature_count, cfg_.d_model});
    segs.emplace_back("ts.in.b", std::vector<int>{cfg_.d_model});
    if (cfg_.use_transformer) {
        segs.emplace_back("ts.time.W", std::vector<int>{cfg_.d_model, cfg_.d_model});
        for (int l = 0; l < cfg_.n_layers; ++l) {
            std::string pre = "ts.l" + std::to_string(l) + ".";
            for (const char* m : {"attn.Wq", "attn.Wk", "attn.Wv", "attn.Wo"}) {
                segs.emplace_back(pre + m, std::vector<int>{cfg_.d_model, cfg_.d_model});
                // bias name follows its matrix: Wq -> bq etc.
                std::string b = pre + std::string("attn.b") + m[6];
                segs.emplace_back(b, std::vector<int>{cfg_.d_model});
            }
            segs.emplace_back(pre + "ln1.g", std::vector<int>{cfg_.d_model});
            segs.emplace_back(pre + "ln1.b", std::vector<int>{cfg_.d_model});
            segs.emplace_back(pre + "ff.W1", std::vector<int>{cfg_.d_model, cfg_.d_ff});
            segs.emplace_back(pre + "ff.b1", std::vector<int>{cfg_.d_ff});
            segs.emplace_back(pre + "ff.W2", std::vector<int>{cfg_.d_ff, cfg_.d_model});
            segs.emplace_back(pre + "ff.b2", std::vector<int>{cfg_.d_model});
            segs.emplace_back(pre + "ln2.g", std::vector<int>{cfg_.d_model});
            segs.emplace_back(pre + "ln2.b", std::vector<int>{cfg_.d_model});
        }
    } else {
        for (const char* m : {"Wz", "Uz", "Wc", "Uc"})
            segs.emplace_back(std::string("ts.rnn.") + m,
                              std::vector<int>{cfg_.d_model, cfg_.d_model});
        segs.emplace_back("ts.rnn.bz", std::vector<int>{cfg_.d_model});
        segs.emplace_back("ts.rnn.bc", std::vector<int>{cfg_.d_model});
    }
    segs.emplace_back("head.w", std::vector<int>{cfg_.fused_dim()});
    segs.emplace_back("head.b", std::vector<int>{1});
    layout_ = ParamLayout::make(std::move(segs));
}

ParamVector Model::init_params(Rng& rng) const {
    ParamVector p(layout_);
    for (const auto& seg : layout_->segments()) {
        std::span<double> dst = p.seg(seg.name);
        std::string_view name = seg.name;
        auto last = name.substr(name.find_last_of('.') + 1);
        if (last == "g") {
            std::fill(dst.begin(), dst.end(), 1.0);
        } else if (last[0] == 'b') {
            std::fill(dst.begin(), dst.end(), 0.0);
        } else if (seg.shape.size() == 2) {
            double r = std::sqrt(6.0 / (seg.shape[0] + seg.shape[1]));
            for (double& v : dst) v = rng.uniform(-r, r);
        } else {
            double r = std::sqrt(6.0 / (static_cast<double>(dst.size()) + 1.0));
            for (double& v : dst) v = rng.uniform(-r, r);
        }
    }
    return p;
}

Tensor attention(const Tensor& Q, const Tensor& K, const Tensor& V) {
    if (Q.cols() != K.cols() || K.rows() != V.rows())
        throw InputError("attention: incompatible Q/K/V shapes");
    Tensor scores = numcore::matmul_nt(Q, K);
    double inv = 1.0 / std::sqrt(static_cast<double>(K.cols()));
    for (std::size_t i = 0; i < scores.size(); ++i) scores[i] *= inv;
    return numcore::matmul(numcore::softmax_rows(scores), V);
}

Tensor delta_encoding_base(const std::vector<double>& times, int d) {
    if (d <= 0 || d % 2 != 0) throw ConfigError("delta_encoding_base: width must be even");
    if (times.empty()) throw InputError("delta_encoding_base: empty timestamp list");
    int t_len = static_cast<int>(times.size());
    Tensor out({t_len, d});
    for (int t = 0; t < t_len; ++t) {
        double dt = t == 0 ? 0.0 : times[static_cast<std::size_t>(t)] -
                                       times[static_cast<std::size_t>(t - 1)];
        if (dt < 0.0) throw InputError("delta_encoding_base: timestamps must be non-decreasing");
        for (int i = 0; i < d / 2; ++i) {
            double freq = std::pow(10000.0, -2.0 * i / d);
            out.at(t, 2 * i) = std::sin(dt * freq);
            out.at(t, 2 * i + 1) = std::cos(dt * freq);
        }
    }
    return out;
}

Tensor Model::gat_encode(const kgraph::PatientSubgraph& g, const kgraph::KgEmbeddings& emb,
                         const ParamVector& p, GatTrace* trace) const {
    if (!cfg_.use_kg) throw ConfigError("gat_encode: the KG path is disabled");
    Wts w = unpack(p, cfg_);
    GatForward f = gat_forward(g, emb, w, cfg_);
    if (trace) {
        trace->P = f.P;
        trace->nbhd = f.nbhd;
        trace->alpha = f.alpha;
        trace->node_out = f.node_out;
        trace->pooled_nodes = f.pooled;
    }
    return f.h_kg;
}

Tensor Model::temporal_encode(const std::vector<double>& times, const ParamVector& p) const {
    if (!cfg_.use_transformer)
        throw ConfigError("temporal_encode: recurrent encoder takes no temporal encodings");
    Tensor base = delta_encoding_base(times, cfg_.d_model);
    return numcore::matmul(base, p.seg_tensor("ts.time.W"));
}

Tensor Model::encode_window(const synthdata::EpisodeWindow& win, const ParamVector& p,
                            Trace* trace) const {
    Wts w = unpack(p, cfg_);
    WindowCache c = window_forward(win, w, cfg_, 0.0, nullptr);
    if (trace) {
        trace->input_proj = numcore::matmul(c.xraw, w.Win);
        add_bias_rows(trace->input_proj, w.bin);
        if (cfg_.use_transformer) trace->time_enc = numcore::matmul(c.base, w.Wtime);
        trace->pooled_rows = c.pool_rows;
        trace->layers.clear();
        int dh = cfg_.head_dim();
        for (const LayerCache& lc : c.layers) {
            AttnTrace at;
            at.layer_in = lc.x_in;
            for (int h = 0; h < cfg_.n_heads; ++h) {
                at.Q.push_back(slice_cols(lc.Q, h * dh, dh));
                at.K.push_back(slice_cols(lc.K, h * dh, dh));
                at.V.push_back(slice_cols(lc.V, h * dh, dh));
                at.A.push_back(lc.A[static_cast<std::size_t>(h)]);
                at.head_out.push_back(numcore::matmul(lc.A[static_cast<std::size_t>(h)],
                                                      slice_cols(lc.V, h * dh, dh)));
            }
            at.block_out = lc.L2;
            trace->layers.push_back(std::move(at));
        }
    }
    return c.h_ts;
}

PredictionOutput Model::fuse_and_predict(const Tensor& h_kg, const Tensor& h_ts,
                                         const ParamVector& p) const {
    if (cfg_.use_kg && static_cast<int>(h_kg.size()) != cfg_.d_kg)
        throw ConfigError("fuse_and_predict: h_kg width does not match d_kg");
    if (!cfg_.use_kg && !h_kg.empty())
        throw ConfigError("fuse_and_predict: h_kg supplied but the KG path is disabled");
    if (static_cast<int>(h_ts.size()) != cfg_.d_model)
        throw ConfigError("fuse_and_predict: h_ts width does not match d_model");
    PredictionOutput out;
    out.h_kg = h_kg;
    out.h_ts = h_ts;
    out.h_final = cfg_.use_kg ? numcore::concat_vec(h_kg, h_ts) : h_ts;
    Tensor head_w = p.seg_tensor("head.w");
    double logit = p.seg("head.b")[0];
    for (std::size_t i = 0; i < out.h_final.size(); ++i) logit += head_w[i] * out.h_final[i];
    double prob = stable_sigmoid(logit);
    out.probability = std::min(std::max(prob, 1e-12), 1.0 - 1e-12);
    return out;
}

PredictionOutput Model::predict(const Example& ex, const kgraph::KgEmbeddings* emb,
                                const ParamVector& p, Trace* trace) const {
    if (ex.window == nullptr) throw InputError("predict: example has no window");
    Tensor h_kg;
    if (cfg_.use_kg) {
        if (ex.subgraph != nullptr && !ex.subgraph->node_ids.empty()) {
            if (emb == nullptr) throw InputError("predict: KG path needs entity embeddings");
            h_kg = gat_encode(*ex.subgraph, *emb, p, trace ? &trace->gat : nullptr);
        } else {
            h_kg = Tensor({cfg_.d_kg});
        }
    }
    Tensor h_ts = encode_window(*ex.window, p, trace);
    return fuse_and_predict(h_kg, h_ts, p);
}

double Model::loss(const Example& ex, const kgraph::KgEmbeddings* emb,
                   const ParamVector& p) const {
    Wts w = unpack(p, cfg_);
    Tensor h_kg;
    GatForward gf;
    if (cfg_.use_kg) {
        if (ex.subgraph != nullptr && !ex.subgraph->node_ids.empty()) {
            if (emb == nullptr) throw InputError("loss: KG path needs entity embeddings");
            gf = gat_forward(*ex.subgraph, *emb, w, cfg_);
            h_kg = gf.h_kg;
        } else {
            h_kg = Tensor({cfg_.d_kg});
        }
    }
    WindowCache c = window_forward(*ex.window, w, cfg_, 0.0, nullptr);
    Tensor h_final = cfg_.use_kg ? numcore::concat_vec(h_kg, c.h_ts) : c.h_ts;
    double logit = w.head_b;
    for (std::size_t i = 0; i < h_final.size(); ++i) logit += w.head_w[i] * h_final[i];
    return bce_from_logit(logit, ex.window->label);
}

double Model::loss_and_grad(std::span<const Example> batch, const kgraph::KgEmbeddings* emb,
                            const ParamVector& p, ParamVector& grad,
                            numcore::Rng* dropout_rng) const {
    if (batch.empty()) throw InputError("loss_and_grad: empty batch");
    if (!grad.layout() || grad.layout()->digest() != layout_->digest())
        grad = ParamVector(layout_);
    Wts w = unpack(p, cfg_);
    Grads gr = zero_grads(w, cfg_);
    double total_loss = 0.0;

    for (const Example& ex : batch) {
        if (ex.window == nullptr) throw InputError("loss_and_grad: example has no window");
        GatForward gf;
        Tensor h_kg;
        if (cfg_.use_kg) {
            if (ex.subgraph != nullptr && !ex.subgraph->node_ids.empty()) {
                if (emb == nullptr) throw InputError("loss_and_grad: KG path needs embeddings");
                gf = gat_forward(*ex.subgraph, *emb, w, cfg_);
                h_kg = gf.h_kg;
            } else {
                h_kg = Tensor({cfg_.d_kg});
            }
        }
        WindowCache c = window_forward(*ex.window, w, cfg_, cfg_.dropout_rate, dropout_rng);
        Tensor h_final = cfg_.use_kg ? numcore::concat_vec(h_kg, c.h_ts) : c.h_ts;
        double logit = w.head_b;
        for (std::size_t i = 0; i < h_final.size(); ++i) logit += w.head_w[i] * h_final[i];
        int y = ex.window->label;
        total_loss += bce_from_logit(logit, y);

        double dlogit = stable_sigmoid(logit) - y;
        gr.head_b += dlogit;
        for (std::size_t i = 0; i < h_final.size(); ++i)
            gr.g.head_w[i] += dlogit * h_final[i];

        int off = cfg_.use_kg ? cfg_.d_kg : 0;
        Tensor dh_ts({cfg_.d_model});
        for (int j = 0; j < cfg_.d_model; ++j)
            dh_ts[static_cast<std::size_t>(j)] =
                dlogit * w.head_w[static_cast<std::size_t>(off + j)];
        window_backward(c, dh_ts, w, cfg_, gr);

        if (cfg_.use_kg && gf.active) {
            Tensor dh_kg({cfg_.d_kg});
            for (int j = 0; j < cfg_.d_kg; ++j)
                dh_kg[static_cast<std::size_t>(j)] = dlogit * w.head_w[static_cast<std::size_t>(j)];
            gat_backward(gf, dh_kg, w, cfg_, gr);
        }
    }

    double inv = 1.0 / static_cast<double>(batch.size());
    flush(gr, inv, cfg_, grad);
    return total_loss * inv;
}

}  // namespace sepsisfl::model
