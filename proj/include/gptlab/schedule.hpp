// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gptlab/tensor.hpp"

namespace gptlab {

struct OptimizerHP {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.1;
    double clip_norm = 1.0;

    void validate() const {
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
            throw ConfigError("adam betas must be in [0,1)");
        }
        if (eps <= 0) throw ConfigError("adam eps must be positive");
        if (clip_norm <= 0) throw ConfigError("clip_norm must be positive");
        if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
    }
};

// Decay fraction heuristic: 0.1 * (20 / tpp), clamped to (0, 1].
double alpha_decay(double tokens_per_parameter);

struct LrSchedule {
    double max_base_lr = 0.0;
    std::int64_t warmup_tokens = 0;
    std::int64_t total_tokens = 0;
    double final_lr = 0.0;

    static LrSchedule from_final_lr(double max_lr, std::int64_t warmup, std::int64_t total,
                                    double final_lr);
    static LrSchedule from_alpha(double max_lr, std::int64_t warmup, std::int64_t total,
                                 double alpha);
    void validate() const;
};

// Linear 0 -> max over warmup, then linear max -> final_lr at total_tokens.
double lr_at(std::int64_t tokens_seen, const LrSchedule& sched);

// ----------------------------- train plan ---------------------------------

struct TrainPhase {
    std::int64_t tokens = 0;
    std::int64_t seq_len = 0;
    std::int64_t sequences_per_batch = 0;
};

struct TrainPlan {
    std::vector<TrainPhase> phases;
    std::int64_t tokens_per_batch = 0;

    std::int64_t total_tokens() const {
        std::int64_t n = 0;
        for (const auto& p : phases) n += p.tokens;
        return n;
    }
    void validate() const;
};

// Two-phase token-constant curriculum. Phase 1 rounds down to whole batches;
// the remainder goes to phase 2.
TrainPlan build_plan(std::int64_t total_tokens, double long_fraction, std::int64_t short_len,
                     std::int64_t long_len, std::int64_t tokens_per_batch);

// ----------------------------- optimizer ----------------------------------

template <class S>
struct AdamState {
    Tens<S> m;
    Tens<S> v;
};

// Returns the scale that was applied (1.0 when no clipping happened).
// Throws NumericError naming the offending tensor on non-finite gradients.
template <class S>
double clip_global_norm(std::vector<Tens<S>*> grads, const std::vector<std::string>& names,
                        double clip_norm);

// Decoupled AdamW with bias correction. `lr` drives the Adam update; the
// decay multiplier uses `wd_lr` (callers pass the unscaled base rate there
// so weight decay is uniform across µP roles).
template <class S>
void adamw_step(Tens<S>& param, const Tens<S>& grad, AdamState<S>& state, const OptimizerHP& hp,
                double lr, double wd_lr, std::int64_t step);

template <class S>
void adamw_step(Tens<S>& param, const Tens<S>& grad, AdamState<S>& state, const OptimizerHP& hp,
                double lr, std::int64_t step);

extern template struct AdamState<double>;
extern template struct AdamState<float>;
extern template double clip_global_norm(std::vector<Tens<double>*>,
                                        const std::vector<std::string>&, double);
extern template double clip_global_norm(std::vector<Tens<float>*>, const std::vector<std::string>&,
                                        double);
extern template void adamw_step(Tens<double>&, const Tens<double>&, AdamState<double>&,
                                const OptimizerHP&, double, double, std::int64_t);
extern template void adamw_step(Tens<float>&, const Tens<float>&, AdamState<float>&,
                                const OptimizerHP&, double, double, std::int64_t);
extern template void adamw_step(Tens<double>&, const Tens<double>&, AdamState<double>&,
                                const OptimizerHP&, double, std::int64_t);
extern template void adamw_step(Tens<float>&, const Tens<float>&, AdamState<float>&,
                                const OptimizerHP&, double, std::int64_t);

}  // namespace gptlab
