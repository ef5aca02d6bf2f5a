// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gptlab/tensor.hpp"

namespace gptlab {

enum class PositionScheme { Alibi, Rope, Learned };
enum class Parameterization { MuP, SP };
enum class FfnKind { Gelu, Swiglu };
enum class Precision { F64, F32 };

// Learning-rate / initialization scaling class of a parameter tensor.
// `Embedding` covers all width-invariant ("vector-like") parameters:
// token/position embeddings, norm gains and biases, projection biases.
enum class MupRole { Embedding, Hidden, Unembedding };

std::string to_string(PositionScheme s);
std::string to_string(Parameterization p);
std::string to_string(FfnKind k);
std::string to_string(Precision p);
std::string to_string(MupRole r);
PositionScheme position_scheme_from_string(const std::string& s);
Parameterization parameterization_from_string(const std::string& s);
FfnKind ffn_kind_from_string(const std::string& s);
Precision precision_from_string(const std::string& s);
MupRole mup_role_from_string(const std::string& s);

// d_ffn = floor(8/3 * d_model), the SwiGLU width that keeps FLOPs comparable
// to a 4*d_model GELU FFN.
std::int64_t ffn_width(std::int64_t d_model);

struct ModelConfig {
    std::int64_t d_model = 64;
    std::int64_t n_layers = 2;
    std::int64_t d_head = 32;
    std::int64_t d_ffn = 0;  // 0: derived from activation kind at validate()
    std::int64_t vocab_size = 256;
    std::int64_t max_learned_positions = 1024;  // learned scheme only
    FfnKind activation = FfnKind::Swiglu;
    PositionScheme position_scheme = PositionScheme::Alibi;
    Parameterization parameterization = Parameterization::MuP;
    double emb_multiplier = 1.0;
    double out_multiplier = 1.0;
    std::int64_t base_width = 256;  // µP proxy width
    bool use_biases = false;        // attention/FFN projection biases
    bool residual_scaling = true;   // 1/sqrt(2*n_layers) init on residual outputs
    double rope_theta = 10000.0;
    Precision precision = Precision::F64;

    std::int64_t n_heads() const { return d_model / d_head; }

    // Fills derived fields and checks every cross-field invariant.
    void validate();
};

// ALiBi head slopes: slope_i = 2^(-8*i/n_heads), i = 1..n_heads.
std::vector<double> alibi_slopes(std::int64_t n_heads);

// bias[i][j] = -slope*(i-j) for j <= i; -inf above the diagonal (applied
// pre-softmax). Computable for any k_len: the scheme is length-agnostic.
Tensor alibi_bias(std::int64_t q_len, std::int64_t k_len, double slope);

// Pairwise rotation of frequency channels; positions are absolute indices.
template <class S>
Tens<S> rope_rotate(const Tens<S>& x, const std::vector<std::int64_t>& positions,
                    double theta_base);

enum class InitKind { Gauss, Zero, One };

template <class S>
struct Param {
    std::string name;
    MupRole role = MupRole::Hidden;
    InitKind init = InitKind::Gauss;
    bool residual_output = false;  // extra 1/sqrt(2*n_layers) init scaling
    Tens<S> value;
    Tens<S> grad;
};

template <class S>
struct LayerHandles {
    int ln1_gain, ln1_bias;
    int wq, wk, wv, wo;
    int bq = -1, bk = -1, bv = -1, bo = -1;
    int ffn_w1, ffn_w2 = -1, ffn_wo;  // ffn_w2 used by SwiGLU only
    int ffn_b1 = -1, ffn_bo = -1;
    int ln2_gain, ln2_bias;
};

template <class S>
struct ModelParams {
    std::vector<Param<S>> all;
    int embedding = -1;
    int pos_table = -1;  // learned scheme only
    std::vector<LayerHandles<S>> layers;
    int final_gain = -1, final_bias = -1;
    int unembedding = -1;

    static ModelParams build(const ModelConfig& cfg);

    Param<S>& at(int h) { return all[std::size_t(h)]; }
    const Param<S>& at(int h) const { return all[std::size_t(h)]; }

    std::int64_t allocated_elements() const {
        std::int64_t n = 0;
        for (const auto& p : all) n += p.value.numel();
        return n;
    }

    void zero_grads() {
        for (auto& p : all) p.grad.zero();
    }
};

// Parameter count in the usual reporting convention: the unembedding matrix
// is excluded (embeddings counted once, as with a tied readout).
std::int64_t reported_param_count(const ModelConfig& cfg);
// Every allocated element, matching ModelParams::allocated_elements().
std::int64_t allocated_param_count(const ModelConfig& cfg);

template <class S>
struct LossMatrix {
    // losses[b][t]: next-token loss of sequence b at position t (1-based
    // position t predicts token t given tokens [0, t)).
    std::vector<std::vector<S>> losses;
    S mean = S(0);  // sum over positions of batch sums, single final divide
};

template <class S>
class Model {
  public:
    ModelConfig cfg;
    ModelParams<S> params;

    explicit Model(const ModelConfig& config) : cfg(config), params(ModelParams<S>::build(cfg)) {}

    // Full logits [n, vocab]; no intermediate state retained.
    Tens<S> forward(const std::vector<std::int32_t>& tokens) const;

    // Logits of the final position only (decode step).
    std::vector<S> next_logits(const std::vector<std::int32_t>& tokens) const;

    // Per-position next-token losses [n-1]; forward only, streams the
    // unembedding row by row so vocab*length never materializes.
    std::vector<S> sequence_loss(const std::vector<std::int32_t>& tokens) const;

    // Training entry: batch of b_sz sequences of length seq_len, flattened
    // row-major. Accumulates parameter gradients; returns the loss matrix.
    LossMatrix<S> forward_backward(const std::vector<std::int32_t>& tokens, std::int64_t b_sz,
                                   std::int64_t seq_len);

    // Multi-head causal attention of one sequence (no norm, no residual);
    // exposed for direct verification.
    Tens<S> attention_block(int layer, const Tens<S>& x) const;

    // RMS of each block output plus the logits, for coordinate checks.
    struct ActivationRms {
        std::vector<S> block_rms;
        S logits_rms = S(0);
    };
    ActivationRms activation_rms(const std::vector<std::int32_t>& tokens) const;

    void zero_grads() { params.zero_grads(); }

    S attn_scale() const {
        return cfg.parameterization == Parameterization::MuP
                   ? S(1) / S(cfg.d_head)
                   : S(1) / std::sqrt(S(cfg.d_head));
    }
    S width_scale() const {
        return cfg.parameterization == Parameterization::MuP
                   ? S(double(cfg.base_width) / double(cfg.d_model))
                   : S(1);
    }

  private:
    struct Workspace;
    void trunk_forward(const std::vector<std::int32_t>& tokens, std::int64_t b_sz,
                       std::int64_t seq_len, Workspace& ws) const;
    void check_capacity(std::int64_t seq_len) const;
};

// out = (swish(x W1) .* (x W2)) W3
template <class S>
Tens<S> swiglu_ffn(const Tens<S>& x, const Tens<S>& w_in1, const Tens<S>& w_in2,
                   const Tens<S>& w_out);

extern template class Model<double>;
extern template class Model<float>;
extern template struct ModelParams<double>;
extern template struct ModelParams<float>;
extern template Tens<double> rope_rotate(const Tens<double>&, const std::vector<std::int64_t>&,
                                         double);
extern template Tens<float> rope_rotate(const Tens<float>&, const std::vector<std::int64_t>&,
                                        double);
extern template Tens<double> swiglu_ffn(const Tens<double>&, const Tens<double>&,
                                        const Tens<double>&, const Tens<double>&);
extern template Tens<float> swiglu_ffn(const Tens<float>&, const Tens<float>&, const Tens<float>&,
                                       const Tens<float>&);

}  // namespace gptlab
