// SPDX-License-Identifier: Apache-2.0
#include "gptlab/model.hpp"

#include <algorithm>
#include <cmath>

namespace gptlab {

// ----------------------------- enum plumbing ------------------------------

std::string to_string(PositionScheme s) {
    switch (s) {
        case PositionScheme::Alibi: return "alibi";
        case PositionScheme::Rope: return "rope";
        case PositionScheme::Learned: return "learned";
    }
    return "?";
}
std::string to_string(Parameterization p) {
    return p == Parameterization::MuP ? "muP" : "SP";
}
std::string to_string(FfnKind k) { return k == FfnKind::Gelu ? "gelu" : "swiglu"; }
std::string to_string(Precision p) { return p == Precision::F64 ? "f64" : "f32"; }
std::string to_string(MupRole r) {
    switch (r) {
        case MupRole::Embedding: return "embedding";
        case MupRole::Hidden: return "hidden";
        case MupRole::Unembedding: return "unembedding";
    }
    return "?";
}

PositionScheme position_scheme_from_string(const std::string& s) {
    if (s == "alibi") return PositionScheme::Alibi;
    if (s == "rope") return PositionScheme::Rope;
    if (s == "learned") return PositionScheme::Learned;
    throw ConfigError("unknown position scheme: '" + s + "'");
}
Parameterization parameterization_from_string(const std::string& s) {
    if (s == "muP" || s == "mup") return Parameterization::MuP;
    if (s == "SP" || s == "sp") return Parameterization::SP;
    throw ConfigError("unknown parameterization: '" + s + "'");
}
FfnKind ffn_kind_from_string(const std::string& s) {
    if (s == "gelu") return FfnKind::Gelu;
    if (s == "swiglu") return FfnKind::Swiglu;
    throw ConfigError("unknown FFN activation: '" + s + "'");
}
Precision precision_from_string(const std::string& s) {
    if (s == "f64") return Precision::F64;
    if (s == "f32") return Precision::F32;
    throw ConfigError("unknown precision: '" + s + "'");
}
MupRole mup_role_from_string(const std::string& s) {
    if (s == "embedding") return MupRole::Embedding;
    if (s == "hidden") return MupRole::Hidden;
    if (s == "unembedding") return MupRole::Unembedding;
    throw ConfigError("unknown parameter role: '" + s + "'");
}

// ----------------------------- config -------------------------------------

std::int64_t ffn_width(std::int64_t d_model) {
    if (d_model < 3) throw ConfigError("ffn_width: d_model must be >= 3");
    return (8 * d_model) / 3;
}

void ModelConfig::validate() {
    if (d_model < 1 || d_head < 1 || n_layers < 1) {
        throw ConfigError("model dimensions must be positive");
    }
    if (d_model % d_head != 0) throw ConfigError("d_model must be divisible by d_head");
    if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
    if (d_ffn == 0) {
        d_ffn = activation == FfnKind::Swiglu ? ffn_width(d_model) : 4 * d_model;
    }
    if (d_ffn < 1) throw ConfigError("d_ffn must be >= 1");
    if (activation == FfnKind::Swiglu && d_ffn != ffn_width(d_model)) {
        throw ConfigError("swiglu requires d_ffn == floor(8*d_model/3) = " +
                          std::to_string(ffn_width(d_model)));
    }
    if (position_scheme == PositionScheme::Rope && d_head % 2 != 0) {
        throw ConfigError("rope requires an even d_head");
    }
    if (position_scheme == PositionScheme::Learned && max_learned_positions < 1) {
        throw ConfigError("learned positions require max_learned_positions >= 1");
    }
    if (base_width < 1) throw ConfigError("base_width must be positive");
    if (emb_multiplier <= 0.0 || out_multiplier <= 0.0) {
        throw ConfigError("multipliers must be positive");
    }
}

std::vector<double> alibi_slopes(std::int64_t n_heads) {
    if (n_heads < 1) throw ConfigError("alibi_slopes: n_heads must be >= 1");
    std::vector<double> slopes(static_cast<std::size_t>(n_heads));
    for (std::int64_t i = 1; i <= n_heads; ++i) {
        slopes[std::size_t(i - 1)] = std::exp2(-8.0 * double(i) / double(n_heads));
    }
    return slopes;
}

Tensor alibi_bias(std::int64_t q_len, std::int64_t k_len, double slope) {
    if (q_len < 1 || k_len < 1) throw ConfigError("alibi_bias: lengths must be >= 1");
    Tensor bias({q_len, k_len});
    const double neg_inf = -std::numeric_limits<double>::infinity();
    for (std::int64_t i = 0; i < q_len; ++i) {
        for (std::int64_t j = 0; j < k_len; ++j) {
            bias(i, j) = j <= i ? -slope * double(i - j) : neg_inf;
        }
    }
    return bias;
}

// ----------------------------- rope ----------------------------------------

template <class S>
static void rope_rows(S* x, std::int64_t n, std::int64_t d_head, std::int64_t stride,
                      const std::int64_t* positions, double theta_base, bool inverse) {
    const std::int64_t half = d_head / 2;
    for (std::int64_t i = 0; i < n; ++i) {
        S* row = x + i * stride;
        const double pos = double(positions[i]);
        for (std::int64_t j = 0; j < half; ++j) {
            const double freq = std::pow(theta_base, -2.0 * double(j) / double(d_head));
            double angle = pos * freq;
            if (inverse) angle = -angle;
            const S c = S(std::cos(angle)), s = S(std::sin(angle));
            const S a = row[2 * j], b = row[2 * j + 1];
            row[2 * j] = a * c - b * s;
            row[2 * j + 1] = a * s + b * c;
        }
    }
}

template <class S>
Tens<S> rope_rotate(const Tens<S>& x, const std::vector<std::int64_t>& positions,
                    double theta_base) {
    if (x.cols() % 2 != 0) throw ConfigError("rope_rotate: d_head must be even");
    if (std::int64_t(positions.size()) != x.rows()) {
        throw DimensionError("rope_rotate: position count mismatch");
    }
    Tens<S> y = x;
    rope_rows(y.data.data(), y.rows(), y.cols(), y.cols(), positions.data(), theta_base, false);
    return y;
}

// ----------------------------- parameter layout ----------------------------

template <class S>
ModelParams<S> ModelParams<S>::build(const ModelConfig& cfg) {
    ModelParams<S> p;
    auto add = [&p](const std::string& name, MupRole role, InitKind init,
                    std::vector<std::int64_t> shape, bool residual_output = false) {
        Param<S> t;
        t.name = name;
        t.role = role;
        t.init = init;
        t.residual_output = residual_output;
        t.value = Tens<S>(shape);
        t.grad = Tens<S>(shape);
        p.all.push_back(std::move(t));
        return int(p.all.size()) - 1;
    };

    const std::int64_t d = cfg.d_model, f = cfg.d_ffn, v = cfg.vocab_size;
    p.embedding = add("embedding", MupRole::Embedding, InitKind::Gauss, {v, d});
    if (cfg.position_scheme == PositionScheme::Learned) {
        p.pos_table = add("pos_embedding", MupRole::Embedding, InitKind::Gauss,
                          {cfg.max_learned_positions, d});
    }
    for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
        const std::string base = "layers." + std::to_string(l) + ".";
        LayerHandles<S> h{};
        h.ln1_gain = add(base + "ln1.gain", MupRole::Embedding, InitKind::One, {d});
        h.ln1_bias = add(base + "ln1.bias", MupRole::Embedding, InitKind::Zero, {d});
        h.wq = add(base + "attn.wq", MupRole::Hidden, InitKind::Gauss, {d, d});
        h.wk = add(base + "attn.wk", MupRole::Hidden, InitKind::Gauss, {d, d});
        h.wv = add(base + "attn.wv", MupRole::Hidden, InitKind::Gauss, {d, d});
        h.wo = add(base + "attn.wo", MupRole::Hidden, InitKind::Gauss, {d, d}, true);
        if (cfg.use_biases) {
            h.bq = add(base + "attn.bq", MupRole::Embedding, InitKind::Zero, {d});
            h.bk = add(base + "attn.bk", MupRole::Embedding, InitKind::Zero, {d});
            h.bv = add(base + "attn.bv", MupRole::Embedding, InitKind::Zero, {d});
            h.bo = add(base + "attn.bo", MupRole::Embedding, InitKind::Zero, {d});
        }
        h.ffn_w1 = add(base + "ffn.w_in1", MupRole::Hidden, InitKind::Gauss, {d, f});
        if (cfg.activation == FfnKind::Swiglu) {
            h.ffn_w2 = add(base + "ffn.w_in2", MupRole::Hidden, InitKind::Gauss, {d, f});
        }
        h.ffn_wo = add(base + "ffn.w_out", MupRole::Hidden, InitKind::Gauss, {f, d}, true);
        if (cfg.use_biases) {
            h.ffn_b1 = add(base + "ffn.b_in", MupRole::Embedding, InitKind::Zero, {f});
            h.ffn_bo = add(base + "ffn.b_out", MupRole::Embedding, InitKind::Zero, {d});
        }
        h.ln2_gain = add(base + "ln2.gain", MupRole::Embedding, InitKind::One, {d});
        h.ln2_bias = add(base + "ln2.bias", MupRole::Embedding, InitKind::Zero, {d});
        p.layers.push_back(h);
    }
    p.final_gain = add("final_norm.gain", MupRole::Embedding, InitKind::One, {d});
    p.final_bias = add("final_norm.bias", MupRole::Embedding, InitKind::Zero, {d});
    p.unembedding = add("unembedding", MupRole::Unembedding, InitKind::Zero, {d, v});
    return p;
}

std::int64_t reported_param_count(const ModelConfig& cfg) {
    const std::int64_t d = cfg.d_model, f = cfg.d_ffn, v = cfg.vocab_size, l = cfg.n_layers;
    std::int64_t per_layer = 4 * d * d + 4 * d;  // attn mats + two norms
    per_layer += (cfg.activation == FfnKind::Swiglu ? 3 : 2) * d * f;
    if (cfg.use_biases) per_layer += 4 * d + f + d;
    std::int64_t total = v * d + l * per_layer + 2 * d;
    if (cfg.position_scheme == PositionScheme::Learned) total += cfg.max_learned_positions * d;
    return total;
}

std::int64_t allocated_param_count(const ModelConfig& cfg) {
    return reported_param_count(cfg) + cfg.d_model * cfg.vocab_size;
}

// ----------------------------- forward ------------------------------------

template <class S>
struct Model<S>::Workspace {
    std::int64_t b_sz = 0, seq_len = 0, n = 0;
    bool retain = false;
    std::vector<Tens<S>> hs;  // hs[l]: input of layer l; hs[L]: final block output
    struct LayerWs {
        ops::LayerNormCtx<S> ln1_ctx;
        Tens<S> ln1_y, q, k, v, ctx;
        std::vector<S> probs;  // [b_sz, heads, T, T], lower-triangular
        Tens<S> h_mid;
        ops::LayerNormCtx<S> ln2_ctx;
        Tens<S> ln2_y, z1, z2, act;
    };
    std::vector<LayerWs> layers;
    ops::LayerNormCtx<S> lnf_ctx;
    Tens<S> lnf_y;
};

template <class S>
void Model<S>::check_capacity(std::int64_t seq_len) const {
    if (cfg.position_scheme == PositionScheme::Learned && seq_len > cfg.max_learned_positions) {
        throw CapacityError("sequence length " + std::to_string(seq_len) +
                            " exceeds learned position table of " +
                            std::to_string(cfg.max_learned_positions));
    }
}

// Causal attention for one sequence and one head; optionally records the
// softmax rows. Streams a score row at a time otherwise.
template <class S>
static void attn_head_forward(const S* q, const S* k, const S* v, S* ctx, std::int64_t t_len,
                              std::int64_t stride, std::int64_t dh, S scale, double slope,
                              S* probs_out) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < t_len; ++i) {
        std::vector<S> row(static_cast<std::size_t>(i + 1));
        const S* qi = q + i * stride;
        for (std::int64_t j = 0; j <= i; ++j) {
            const S* kj = k + j * stride;
            S dot = S(0);
#pragma omp simd reduction(+ : dot)
            for (std::int64_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
            row[std::size_t(j)] = dot * scale - S(slope) * S(double(i - j));
        }
        ops::softmax_row_into(row.data(), row.data(), i + 1);
        S* ci = ctx + i * stride;
        for (std::int64_t c = 0; c < dh; ++c) ci[c] = S(0);
        for (std::int64_t j = 0; j <= i; ++j) {
            const S p = row[std::size_t(j)];
            const S* vj = v + j * stride;
            for (std::int64_t c = 0; c < dh; ++c) ci[c] += p * vj[c];
        }
        if (probs_out != nullptr) {
            S* pr = probs_out + i * t_len;
            for (std::int64_t j = 0; j <= i; ++j) pr[j] = row[std::size_t(j)];
            for (std::int64_t j = i + 1; j < t_len; ++j) pr[j] = S(0);
        }
    }
}

template <class S>
void Model<S>::trunk_forward(const std::vector<std::int32_t>& tokens, std::int64_t b_sz,
                             std::int64_t seq_len, Workspace& ws) const {
    const std::int64_t d = cfg.d_model, n = b_sz * seq_len;
    if (std::int64_t(tokens.size()) != n) throw DimensionError("token count != b_sz * seq_len");
    check_capacity(seq_len);
    ws.b_sz = b_sz;
    ws.seq_len = seq_len;
    ws.n = n;

    const Tens<S>& emb = params.at(params.embedding).value;
    for (const auto t : tokens) {
        if (t < 0 || std::int64_t(t) >= cfg.vocab_size) {
            throw DataError("token id " + std::to_string(t) + " out of range");
        }
    }

    ws.hs.assign(std::size_t(cfg.n_layers + 1), Tens<S>());
    ws.layers.assign(std::size_t(cfg.n_layers), typename Workspace::LayerWs{});

    // h0 = emb_multiplier * E[tokens] (+ learned positions)
    Tens<S>& h0 = ws.hs[0];
    h0 = Tens<S>({n, d});
    const S emb_mult = S(cfg.emb_multiplier);
    for (std::int64_t i = 0; i < n; ++i) {
        const S* er = emb.data.data() + std::int64_t(tokens[std::size_t(i)]) * d;
        S* hr = h0.data.data() + i * d;
        for (std::int64_t c = 0; c < d; ++c) hr[c] = emb_mult * er[c];
    }
    if (cfg.position_scheme == PositionScheme::Learned) {
        const Tens<S>& pos = params.at(params.pos_table).value;
        for (std::int64_t i = 0; i < n; ++i) {
            const std::int64_t t = i % seq_len;
            const S* pr = pos.data.data() + t * d;
            S* hr = h0.data.data() + i * d;
            for (std::int64_t c = 0; c < d; ++c) hr[c] += pr[c];
        }
    }

    const std::int64_t heads = cfg.n_heads(), dh = cfg.d_head;
    const S scale = attn_scale();
    const std::vector<double> slopes =
        cfg.position_scheme == PositionScheme::Alibi ? alibi_slopes(heads)
                                                     : std::vector<double>(std::size_t(heads), 0.0);
    std::vector<std::int64_t> positions(static_cast<std::size_t>(seq_len));
    for (std::int64_t t = 0; t < seq_len; ++t) positions[std::size_t(t)] = t;

    const S eps = S(1e-5);
    for (std::int64_t l = 0; l < cfg.n_layers; ++l) {
        auto& lw = ws.layers[std::size_t(l)];
        const auto& h = params.layers[std::size_t(l)];
        const Tens<S>& x = ws.hs[std::size_t(l)];

        lw.ln1_y = ops::layer_norm(x, params.at(h.ln1_gain).value, params.at(h.ln1_bias).value,
                                   eps, &lw.ln1_ctx);
        const Tens<S>* bq = h.bq >= 0 ? &params.at(h.bq).value : nullptr;
        const Tens<S>* bk = h.bk >= 0 ? &params.at(h.bk).value : nullptr;
        const Tens<S>* bv = h.bv >= 0 ? &params.at(h.bv).value : nullptr;
        lw.q = ops::affine(lw.ln1_y, params.at(h.wq).value, bq);
        lw.k = ops::affine(lw.ln1_y, params.at(h.wk).value, bk);
        lw.v = ops::affine(lw.ln1_y, params.at(h.wv).value, bv);
        if (cfg.position_scheme == PositionScheme::Rope) {
            for (std::int64_t b = 0; b < b_sz; ++b) {
                for (std::int64_t head = 0; head < heads; ++head) {
                    const std::int64_t off = b * seq_len * d + head * dh;
                    rope_rows(lw.q.data.data() + off, seq_len, dh, d, positions.data(),
                              cfg.rope_theta, false);
                    rope_rows(lw.k.data.data() + off, seq_len, dh, d, positions.data(),
                              cfg.rope_theta, false);
                }
            }
        }

        lw.ctx = Tens<S>({n, d});
        if (ws.retain) lw.probs.assign(std::size_t(b_sz * heads * seq_len * seq_len), S(0));
        for (std::int64_t b = 0; b < b_sz; ++b) {
            for (std::int64_t head = 0; head < heads; ++head) {
                const std::int64_t off = b * seq_len * d + head * dh;
                S* probs = ws.retain ? lw.probs.data() +
                                           (b * heads + head) * seq_len * seq_len
                                     : nullptr;
                attn_head_forward(lw.q.data.data() + off, lw.k.data.data() + off,
                                  lw.v.data.data() + off, lw.ctx.data.data() + off, seq_len, d,
                                  dh, scale, slopes[std::size_t(head)], probs);
            }
        }

        const Tens<S>* bo = h.bo >= 0 ? &params.at(h.bo).value : nullptr;
        Tens<S> attn_out = ops::affine(lw.ctx, params.at(h.wo).value, bo);
        lw.h_mid = x;
        for (std::int64_t i = 0; i < n * d; ++i) lw.h_mid[i] += attn_out[i];

        lw.ln2_y = ops::layer_norm(lw.h_mid, params.at(h.ln2_gain).value,
                                   params.at(h.ln2_bias).value, eps, &lw.ln2_ctx);
        const Tens<S>* b1 = h.ffn_b1 >= 0 ? &params.at(h.ffn_b1).value : nullptr;
        lw.z1 = ops::affine(lw.ln2_y, params.at(h.ffn_w1).value, b1);
        if (cfg.activation == FfnKind::Swiglu) {
            lw.z2 = ops::matmul(lw.ln2_y, params.at(h.ffn_w2).value);
            lw.act = ops::activation(ActKind::Swish, lw.z1);
            for (std::int64_t i = 0; i < lw.act.numel(); ++i) lw.act[i] *= lw.z2[i];
        } else {
            lw.act = ops::activation(ActKind::Gelu, lw.z1);
        }
        const Tens<S>* b_out = h.ffn_bo >= 0 ? &params.at(h.ffn_bo).value : nullptr;
        Tens<S> ffn_out = ops::affine(lw.act, params.at(h.ffn_wo).value, b_out);
        ws.hs[std::size_t(l + 1)] = lw.h_mid;
        Tens<S>& out = ws.hs[std::size_t(l + 1)];
        for (std::int64_t i = 0; i < n * d; ++i) out[i] += ffn_out[i];

        if (!ws.retain) {
            // Inference: keep hs[] only.
            lw = typename Workspace::LayerWs{};
        }
    }

    ws.lnf_y = ops::layer_norm(ws.hs[std::size_t(cfg.n_layers)], params.at(params.final_gain).value,
                               params.at(params.final_bias).value, eps, &ws.lnf_ctx);
}

template <class S>
Tens<S> Model<S>::forward(const std::vector<std::int32_t>& tokens) const {
    Workspace ws;
    ws.retain = false;
    trunk_forward(tokens, 1, std::int64_t(tokens.size()), ws);
    Tens<S> logits = ops::matmul(ws.lnf_y, params.at(params.unembedding).value);
    const S mult = S(cfg.out_multiplier) * width_scale();
    for (auto& x : logits.data) x *= mult;
    return logits;
}

template <class S>
std::vector<S> Model<S>::next_logits(const std::vector<std::int32_t>& tokens) const {
    Workspace ws;
    ws.retain = false;
    trunk_forward(tokens, 1, std::int64_t(tokens.size()), ws);
    const std::int64_t d = cfg.d_model, v = cfg.vocab_size;
    const S* hr = ws.lnf_y.data.data() + (std::int64_t(tokens.size()) - 1) * d;
    const Tens<S>& u = params.at(params.unembedding).value;
    const S mult = S(cfg.out_multiplier) * width_scale();
    std::vector<S> out(std::size_t(v), S(0));
    for (std::int64_t c = 0; c < d; ++c) {
        const S a = hr[c];
        const S* ur = u.data.data() + c * v;
        for (std::int64_t j = 0; j < v; ++j) out[std::size_t(j)] += a * ur[j];
    }
    for (auto& x : out) x *= mult;
    return out;
}

template <class S>
std::vector<S> Model<S>::sequence_loss(const std::vector<std::int32_t>& tokens) const {
    const std::int64_t t_len = std::int64_t(tokens.size());
    if (t_len < 2) throw DataError("sequence_loss needs at least 2 tokens");
    Workspace ws;
    ws.retain = false;
    trunk_forward(tokens, 1, t_len, ws);
    const std::int64_t d = cfg.d_model, v = cfg.vocab_size;
    const Tens<S>& u = params.at(params.unembedding).value;
    const S mult = S(cfg.out_multiplier) * width_scale();
    std::vector<S> losses(std::size_t(t_len - 1), S(0));
    // One logits row at a time: vocab_size * t_len never materializes.
#pragma omp parallel for schedule(static)
    for (std::int64_t t = 0; t < t_len - 1; ++t) {
        const S* hr = ws.lnf_y.data.data() + t * d;
        std::vector<S> row(std::size_t(v), S(0));
        for (std::int64_t c = 0; c < d; ++c) {
            const S a = hr[c];
            const S* ur = u.data.data() + c * v;
            for (std::int64_t j = 0; j < v; ++j) row[std::size_t(j)] += a * ur[j];
        }
        S mx = row[0] * mult;
        for (std::int64_t j = 0; j < v; ++j) {
            row[std::size_t(j)] *= mult;
            mx = row[std::size_t(j)] > mx ? row[std::size_t(j)] : mx;
        }
        S denom = S(0);
        for (std::int64_t j = 0; j < v; ++j) denom += std::exp(row[std::size_t(j)] - mx);
        const std::int32_t target = tokens[std::size_t(t + 1)];
        losses[std::size_t(t)] = std::log(denom) + mx - row[std::size_t(target)];
    }
    return losses;
}

template <class S>
typename Model<S>::ActivationRms Model<S>::activation_rms(
    const std::vector<std::int32_t>& tokens) const {
    Workspace ws;
    ws.retain = false;
    trunk_forward(tokens, 1, std::int64_t(tokens.size()), ws);
    ActivationRms out;
    for (std::int64_t l = 1; l <= cfg.n_layers; ++l) {
        const Tens<S>& h = ws.hs[std::size_t(l)];
        double acc = 0.0;
        for (const S x : h.data) acc += double(x) * double(x);
        out.block_rms.push_back(S(std::sqrt(acc / double(h.numel()))));
    }
    Tens<S> logits = ops::matmul(ws.lnf_y, params.at(params.unembedding).value);
    const S mult = S(cfg.out_multiplier) * width_scale();
    double acc = 0.0;
    for (const S x : logits.data) acc += double(x * mult) * double(x * mult);
    out.logits_rms = S(std::sqrt(acc / double(logits.numel())));
    return out;
}

// ----------------------------- backward -----------------------------------

template <class S>
static void attn_head_backward(const S* q, const S* k, const S* v, const S* probs, const S* dctx,
                               S* dq, S* dk, S* dv, std::int64_t t_len, std::int64_t stride,
                               std::int64_t dh, S scale) {
    std::vector<S> dscore(static_cast<std::size_t>(t_len));
    for (std::int64_t i = 0; i < t_len; ++i) {
        const S* pi = probs + i * t_len;
        const S* dci = dctx + i * stride;
        // dv and dp
        S dot = S(0);
        for (std::int64_t j = 0; j <= i; ++j) {
            const S* vj = v + j * stride;
            S dp = S(0);
#pragma omp simd reduction(+ : dp)
            for (std::int64_t c = 0; c < dh; ++c) dp += dci[c] * vj[c];
            dscore[std::size_t(j)] = dp;
            dot += dp * pi[j];
            S* dvj = dv + j * stride;
            const S p = pi[j];
            for (std::int64_t c = 0; c < dh; ++c) dvj[c] += p * dci[c];
        }
        // softmax backward, then q/k chain
        S* dqi = dq + i * stride;
        const S* qi = q + i * stride;
        for (std::int64_t j = 0; j <= i; ++j) {
            const S ds = pi[j] * (dscore[std::size_t(j)] - dot) * scale;
            const S* kj = k + j * stride;
            S* dkj = dk + j * stride;
            for (std::int64_t c = 0; c < dh; ++c) {
                dqi[c] += ds * kj[c];
                dkj[c] += ds * qi[c];
            }
        }
    }
}

template <class S>
LossMatrix<S> Model<S>::forward_backward(const std::vector<std::int32_t>& tokens,
                                         std::int64_t b_sz, std::int64_t seq_len) {
    if (seq_len < 2) throw DataError("forward_backward needs seq_len >= 2");
    Workspace ws;
    ws.retain = true;
    trunk_forward(tokens, b_sz, seq_len, ws);

    const std::int64_t d = cfg.d_model, v = cfg.vocab_size, n = ws.n;
    const std::int64_t n_pos = b_sz * (seq_len - 1);
    const S out_mult = S(cfg.out_multiplier) * width_scale();

    Tens<S> logits = ops::matmul(ws.lnf_y, params.at(params.unembedding).value);
    for (auto& x : logits.data) x *= out_mult;

    // Per-position losses; batch sums per position, one final divide, so the
    // reported mean is bit-reproducible by the evaluation path.
    LossMatrix<S> lm;
    lm.losses.assign(std::size_t(b_sz), std::vector<S>(std::size_t(seq_len - 1), S(0)));
    std::vector<std::int32_t> flat_targets(std::size_t(n), 0);
    std::vector<char> valid(std::size_t(n), 0);
    for (std::int64_t b = 0; b < b_sz; ++b) {
        for (std::int64_t t = 0; t + 1 < seq_len; ++t) {
            const std::int64_t row = b * seq_len + t;
            flat_targets[std::size_t(row)] = tokens[std::size_t(row + 1)];
            valid[std::size_t(row)] = 1;
        }
    }
#pragma omp parallel for schedule(static)
    for (std::int64_t row = 0; row < n; ++row) {
        if (!valid[std::size_t(row)]) continue;
        const S* lr = logits.data.data() + row * v;
        const std::int32_t target = flat_targets[std::size_t(row)];
        if (target < 0 || std::int64_t(target) >= v) continue;  // checked in trunk
        S mx = lr[0];
        for (std::int64_t j = 1; j < v; ++j) mx = lr[j] > mx ? lr[j] : mx;
        S denom = S(0);
        for (std::int64_t j = 0; j < v; ++j) denom += std::exp(lr[j] - mx);
        const std::int64_t b = row / seq_len, t = row % seq_len;
        lm.losses[std::size_t(b)][std::size_t(t)] = std::log(denom) + mx - lr[target];
    }
    S total = S(0);
    for (std::int64_t t = 0; t + 1 < seq_len; ++t) {
        S pos_sum = S(0);
        for (std::int64_t b = 0; b < b_sz; ++b) pos_sum += lm.losses[std::size_t(b)][std::size_t(t)];
        total += pos_sum;
    }
    lm.mean = total / S(n_pos);

    // dlogits = (softmax - onehot) / n_pos on valid rows
    Tens<S> dlogits({n, v});
    const S inv_scale = S(1) / S(n_pos);
#pragma omp parallel for schedule(static)
    for (std::int64_t row = 0; row < n; ++row) {
        if (!valid[std::size_t(row)]) continue;
        const S* lr = logits.data.data() + row * v;
        S* dr = dlogits.data.data() + row * v;
        S mx = lr[0];
        for (std::int64_t j = 1; j < v; ++j) mx = lr[j] > mx ? lr[j] : mx;
        S denom = S(0);
        for (std::int64_t j = 0; j < v; ++j) denom += std::exp(lr[j] - mx);
        const S inv = inv_scale / denom;
        for (std::int64_t j = 0; j < v; ++j) dr[j] = std::exp(lr[j] - mx) * inv;
        dr[flat_targets[std::size_t(row)]] -= inv_scale;
    }
    for (auto& x : dlogits.data) x *= out_mult;  // chain through the logit multiplier

    Tens<S> dh({n, d});
    {
        Param<S>& u = params.at(params.unembedding);
        ops::matmul_bwd(ws.lnf_y.data.data(), u.value.data.data(), dlogits.data.data(),
                        dh.data.data(), u.grad.data.data(), n, d, v);
    }
    // final norm
    {
        Tens<S> dx({n, d});
        ops::layer_norm_bwd(ws.hs[std::size_t(cfg.n_layers)], params.at(params.final_gain).value,
                            ws.lnf_ctx, dh, &dx, &params.at(params.final_gain).grad,
                            &params.at(params.final_bias).grad);
        dh = std::move(dx);
    }

    const std::int64_t heads = cfg.n_heads(), dh_dim = cfg.d_head;
    const S scale = attn_scale();
    std::vector<std::int64_t> positions(static_cast<std::size_t>(seq_len));
    for (std::int64_t t = 0; t < seq_len; ++t) positions[std::size_t(t)] = t;

    for (std::int64_t l = cfg.n_layers - 1; l >= 0; --l) {
        auto& lw = ws.layers[std::size_t(l)];
        const auto& h = params.layers[std::size_t(l)];

        // FFN backward; dh holds d(hs[l+1])
        Tens<S> d_mid = dh;  // residual passthrough
        {
            Tens<S> dact({n, cfg.d_ffn});
            Param<S>& wo = params.at(h.ffn_wo);
            ops::matmul_bwd(lw.act.data.data(), wo.value.data.data(), dh.data.data(),
                            dact.data.data(), wo.grad.data.data(), n, cfg.d_ffn, d);
            if (h.ffn_bo >= 0) {
                Param<S>& bo = params.at(h.ffn_bo);
                for (std::int64_t j = 0; j < d; ++j) {
                    S acc = S(0);
                    for (std::int64_t i = 0; i < n; ++i) acc += dh(i, j);
                    bo.grad[j] += acc;
                }
            }
            Tens<S> dz1({n, cfg.d_ffn});
            Tens<S> d_ln2({n, d});
            if (cfg.activation == FfnKind::Swiglu) {
                Tens<S> dz2({n, cfg.d_ffn});
                for (std::int64_t i = 0; i < dact.numel(); ++i) {
                    const S g = ops::swish_scalar(lw.z1[i]);
                    dz2[i] = dact[i] * g;
                    dz1[i] = dact[i] * lw.z2[i] * ops::swish_grad_scalar(lw.z1[i]);
                }
                Param<S>& w2 = params.at(h.ffn_w2);
                ops::matmul_bwd(lw.ln2_y.data.data(), w2.value.data.data(), dz2.data.data(),
                                d_ln2.data.data(), w2.grad.data.data(), n, d, cfg.d_ffn);
            } else {
                for (std::int64_t i = 0; i < dact.numel(); ++i) {
                    dz1[i] = dact[i] * ops::gelu_grad_scalar(lw.z1[i]);
                }
            }
            Param<S>& w1 = params.at(h.ffn_w1);
            ops::matmul_bwd(lw.ln2_y.data.data(), w1.value.data.data(), dz1.data.data(),
                            d_ln2.data.data(), w1.grad.data.data(), n, d, cfg.d_ffn);
            if (h.ffn_b1 >= 0) {
                Param<S>& b1 = params.at(h.ffn_b1);
                for (std::int64_t j = 0; j < cfg.d_ffn; ++j) {
                    S acc = S(0);
                    for (std::int64_t i = 0; i < n; ++i) acc += dz1(i, j);
                    b1.grad[j] += acc;
                }
            }
            ops::layer_norm_bwd(lw.h_mid, params.at(h.ln2_gain).value, lw.ln2_ctx, d_ln2, &d_mid,
                                &params.at(h.ln2_gain).grad, &params.at(h.ln2_bias).grad);
        }

        // Attention backward; d_mid holds d(h_mid)
        Tens<S> dx = d_mid;  // residual passthrough to hs[l]
        {
            Tens<S> dctx({n, d});
            Param<S>& wo = params.at(h.wo);
            ops::matmul_bwd(lw.ctx.data.data(), wo.value.data.data(), d_mid.data.data(),
                            dctx.data.data(), wo.grad.data.data(), n, d, d);
            if (h.bo >= 0) {
                Param<S>& bo = params.at(h.bo);
                for (std::int64_t j = 0; j < d; ++j) {
                    S acc = S(0);
                    for (std::int64_t i = 0; i < n; ++i) acc += d_mid(i, j);
                    bo.grad[j] += acc;
                }
            }
            Tens<S> dq({n, d}), dk({n, d}), dv({n, d});
            const std::int64_t units = ws.b_sz * heads;
#pragma omp parallel for schedule(static)
            for (std::int64_t u = 0; u < units; ++u) {
                const std::int64_t b = u / heads, head = u % heads;
                const std::int64_t off = b * seq_len * d + head * dh_dim;
                attn_head_backward(lw.q.data.data() + off, lw.k.data.data() + off,
                                   lw.v.data.data() + off,
                                   lw.probs.data() + (b * heads + head) * seq_len * seq_len,
                                   dctx.data.data() + off, dq.data.data() + off,
                                   dk.data.data() + off, dv.data.data() + off, seq_len, d, dh_dim,
                                   scale);
            }
            if (cfg.position_scheme == PositionScheme::Rope) {
                for (std::int64_t b = 0; b < ws.b_sz; ++b) {
                    for (std::int64_t head = 0; head < heads; ++head) {
                        const std::int64_t off = b * seq_len * d + head * dh_dim;
                        rope_rows(dq.data.data() + off, seq_len, dh_dim, d, positions.data(),
                                  cfg.rope_theta, true);
                        rope_rows(dk.data.data() + off, seq_len, dh_dim, d, positions.data(),
                                  cfg.rope_theta, true);
                    }
                }
            }
            Tens<S> d_ln1({n, d});
            Param<S>& wq = params.at(h.wq);
            Param<S>& wk = params.at(h.wk);
            Param<S>& wv = params.at(h.wv);
            ops::matmul_bwd(lw.ln1_y.data.data(), wq.value.data.data(), dq.data.data(),
                            d_ln1.data.data(), wq.grad.data.data(), n, d, d);
            ops::matmul_bwd(lw.ln1_y.data.data(), wk.value.data.data(), dk.data.data(),
                            d_ln1.data.data(), wk.grad.data.data(), n, d, d);
            ops::matmul_bwd(lw.ln1_y.data.data(), wv.value.data.data(), dv.data.data(),
                            d_ln1.data.data(), wv.grad.data.data(), n, d, d);
            auto bias_grad = [&](int handle, const Tens<S>& dz) {
                if (handle < 0) return;
                Param<S>& bp = params.at(handle);
                for (std::int64_t j = 0; j < d; ++j) {
                    S acc = S(0);
                    for (std::int64_t i = 0; i < n; ++i) acc += dz(i, j);
                    bp.grad[j] += acc;
                }
            };
            bias_grad(h.bq, dq);
            bias_grad(h.bk, dk);
            bias_grad(h.bv, dv);
            ops::layer_norm_bwd(ws.hs[std::size_t(l)], params.at(h.ln1_gain).value, lw.ln1_ctx,
                                d_ln1, &dx, &params.at(h.ln1_gain).grad,
                                &params.at(h.ln1_bias).grad);
        }
        dh = std::move(dx);
    }

    // Embedding backward
    {
        Param<S>& emb = params.at(params.embedding);
        const S emb_mult = S(cfg.emb_multiplier);
        for (std::int64_t i = 0; i < n; ++i) {
            const std::int64_t tok = tokens[std::size_t(i)];
            S* gr = emb.grad.data.data() + tok * d;
            const S* dr = dh.data.data() + i * d;
            for (std::int64_t c = 0; c < d; ++c) gr[c] += emb_mult * dr[c];
        }
        if (cfg.position_scheme == PositionScheme::Learned) {
            Param<S>& pos = params.at(params.pos_table);
            for (std::int64_t i = 0; i < n; ++i) {
                const std::int64_t t = i % seq_len;
                S* gr = pos.grad.data.data() + t * d;
                const S* dr = dh.data.data() + i * d;
                for (std::int64_t c = 0; c < d; ++c) gr[c] += dr[c];
            }
        }
    }
    return lm;
}

template <class S>
Tens<S> Model<S>::attention_block(int layer, const Tens<S>& x) const {
    const std::int64_t t_len = x.rows(), d = cfg.d_model;
    if (x.cols() != d) throw DimensionError("attention_block: width mismatch");
    check_capacity(t_len);
    const auto& h = params.layers[std::size_t(layer)];
    const Tens<S>* bq = h.bq >= 0 ? &params.at(h.bq).value : nullptr;
    const Tens<S>* bk = h.bk >= 0 ? &params.at(h.bk).value : nullptr;
    const Tens<S>* bv = h.bv >= 0 ? &params.at(h.bv).value : nullptr;
    Tens<S> q = ops::affine(x, params.at(h.wq).value, bq);
    Tens<S> k = ops::affine(x, params.at(h.wk).value, bk);
    Tens<S> v = ops::affine(x, params.at(h.wv).value, bv);
    std::vector<std::int64_t> positions(static_cast<std::size_t>(t_len));
    for (std::int64_t t = 0; t < t_len; ++t) positions[std::size_t(t)] = t;
    const std::int64_t heads = cfg.n_heads(), dh = cfg.d_head;
    if (cfg.position_scheme == PositionScheme::Rope) {
        for (std::int64_t head = 0; head < heads; ++head) {
            rope_rows(q.data.data() + head * dh, t_len, dh, d, positions.data(),
                      cfg.rope_theta, false);
            rope_rows(k.data.data() + head * dh, t_len, dh, d, positions.data(),
                      cfg.rope_theta, false);
        }
    }
    const std::vector<double> slopes =
        cfg.position_scheme == PositionScheme::Alibi ? alibi_slopes(heads)
                                                     : std::vector<double>(std::size_t(heads), 0.0);
    Tens<S> ctx({t_len, d});
    for (std::int64_t head = 0; head < heads; ++head) {
        attn_head_forward(q.data.data() + head * dh, k.data.data() + head * dh,
                          v.data.data() + head * dh, ctx.data.data() + head * dh, t_len, d, dh,
                          attn_scale(), slopes[std::size_t(head)], static_cast<S*>(nullptr));
    }
    const Tens<S>* bo = h.bo >= 0 ? &params.at(h.bo).value : nullptr;
    return ops::affine(ctx, params.at(h.wo).value, bo);
}

template <class S>
Tens<S> swiglu_ffn(const Tens<S>& x, const Tens<S>& w_in1, const Tens<S>& w_in2,
                   const Tens<S>& w_out) {
    Tens<S> z1 = ops::matmul(x, w_in1);
    Tens<S> z2 = ops::matmul(x, w_in2);
    for (std::int64_t i = 0; i < z1.numel(); ++i) {
        z1[i] = ops::swish_scalar(z1[i]) * z2[i];
    }
    return ops::matmul(z1, w_out);
}

template class Model<double>;
template class Model<float>;
template struct ModelParams<double>;
template struct ModelParams<float>;
template Tens<double> rope_rotate(const Tens<double>&, const std::vector<std::int64_t>&, double);
template Tens<float> rope_rotate(const Tens<float>&, const std::vector<std::int64_t>&, double);
template Tens<double> swiglu_ffn(const Tens<double>&, const Tens<double>&, const Tens<double>&,
                                 const Tens<double>&);
template Tens<float> swiglu_ffn(const Tens<float>&, const Tens<float>&, const Tens<float>&,
                                const Tens<float>&);

}  // namespace gptlab
