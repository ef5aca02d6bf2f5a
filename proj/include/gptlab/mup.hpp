// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "gptlab/model.hpp"

namespace gptlab {

// Scaling rules, with m = d_model / base_width:
//   role embedding    lr = base_lr          init std = base_init_std
//   role hidden       lr = base_lr / m      init std = base_init_std / sqrt(m)
//   role unembedding  lr = base_lr / m      init zero
// Residual-output projections take an extra 1/sqrt(2*n_layers) on init.
// Logits are scaled by 1/m in the forward pass (Model::width_scale).

struct MupHyperparams {
    double base_lr = 6e-3;
    double base_init_std = 0.08;
    double emb_multiplier = 10.0;
    double out_multiplier = 1.0;

    void validate() const {
        if (base_lr <= 0 || base_init_std <= 0 || emb_multiplier <= 0 || out_multiplier <= 0) {
            throw ConfigError("µP hyperparameters must be positive");
        }
    }
};

double width_ratio(const ModelConfig& cfg);

double lr_for(MupRole role, double base_lr, double m);

// Fills a model's parameters in place; deterministic given seed.
template <class S>
void init_params(Model<S>& model, const MupHyperparams& hp, std::uint64_t seed);

template <class S>
Model<S> make_model(const ModelConfig& cfg, const MupHyperparams& hp, std::uint64_t seed);

// ----------------------------- coordinate check ---------------------------

struct CoordCheckRow {
    std::int64_t width = 0;
    std::vector<double> block_rms;  // per layer, final step
    double logits_rms = 0.0;
    bool diverged = false;
};

struct CoordCheckSettings {
    std::vector<std::int64_t> widths;
    std::int64_t depth = 4;
    std::int64_t d_head = 32;
    std::int64_t vocab_size = 257;
    std::int64_t seq_len = 64;
    std::int64_t batch_sequences = 8;
    std::int64_t steps = 50;
    Parameterization parameterization = Parameterization::MuP;
    MupHyperparams hp;
    std::uint64_t seed = 0;
};

// Trains each width for `steps` AdamW steps on the given token stream and
// records per-layer activation RMS at the final step.
std::vector<CoordCheckRow> coordinate_check(const CoordCheckSettings& settings,
                                            const std::vector<std::int32_t>& tokens);

// ----------------------------- random search ------------------------------

struct SearchRange {
    double lo = 0.0, hi = 0.0;  // log-uniform; lo == hi pins the value
};

struct SearchRanges {
    SearchRange base_lr{1e-3, 1e-1};
    SearchRange base_init_std{0.02, 0.2};
    SearchRange emb_multiplier{1.0, 32.0};
    SearchRange out_multiplier{0.5, 8.0};
};

struct SweepTrial {
    std::int64_t trial_id = 0;
    MupHyperparams hp;
    double final_loss = 0.0;
    bool diverged = false;
};

struct SweepResult {
    std::vector<SweepTrial> trials;     // by trial index
    std::optional<std::int64_t> best;   // lowest finite final_loss
};

// Samples hyperparameters per trial and scores each with `objective`
// (the production objective trains the proxy model; tests substitute
// closed-form stubs). Deterministic given seed; result order is by trial
// index regardless of evaluation order.
SweepResult random_search(const SearchRanges& ranges, std::int64_t n_trials, std::uint64_t seed,
                          const std::function<double(const MupHyperparams&)>& objective);

extern template void init_params(Model<double>&, const MupHyperparams&, std::uint64_t);
extern template void init_params(Model<float>&, const MupHyperparams&, std::uint64_t);
extern template Model<double> make_model(const ModelConfig&, const MupHyperparams&, std::uint64_t);
extern template Model<float> make_model(const ModelConfig&, const MupHyperparams&, std::uint64_t);

}  // namespace gptlab
