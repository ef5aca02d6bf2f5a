// SPDX-License-Identifier: Apache-2.0
#include "gptlab/schedule.hpp"

#include <algorithm>
#include <cmath>

namespace gptlab {

double alpha_decay(double tokens_per_parameter) {
    if (tokens_per_parameter <= 0.0) {
        throw DomainError("alpha_decay: tokens-per-parameter must be positive");
    }
    const double alpha = 0.1 * (20.0 / tokens_per_parameter);
    return std::min(alpha, 1.0);
}

LrSchedule LrSchedule::from_final_lr(double max_lr, std::int64_t warmup, std::int64_t total,
                                     double final_lr) {
    LrSchedule s{max_lr, warmup, total, final_lr};
    s.validate();
    return s;
}

LrSchedule LrSchedule::from_alpha(double max_lr, std::int64_t warmup, std::int64_t total,
                                  double alpha) {
    if (alpha <= 0.0 || alpha > 1.0) throw ConfigError("alpha_decay must be in (0,1]");
    LrSchedule s{max_lr, warmup, total, max_lr * alpha};
    s.validate();
    return s;
}

void LrSchedule::validate() const {
    if (max_base_lr <= 0.0) throw ConfigError("max_base_lr must be positive");
    if (warmup_tokens < 0 || total_tokens <= 0) throw ConfigError("token counts must be positive");
    if (warmup_tokens >= total_tokens) throw ConfigError("warmup_tokens must be < total_tokens");
    if (final_lr > max_base_lr) throw ConfigError("final_lr must be <= max_base_lr");
    if (final_lr < 0.0) throw ConfigError("final_lr must be >= 0");
}

double lr_at(std::int64_t tokens_seen, const LrSchedule& sched) {
    if (tokens_seen < 0 || tokens_seen > sched.total_tokens) {
        throw DomainError("lr_at: tokens_seen outside [0, total_tokens]");
    }
    if (tokens_seen <= sched.warmup_tokens) {
        if (sched.warmup_tokens == 0) return sched.max_base_lr;
        return sched.max_base_lr * double(tokens_seen) / double(sched.warmup_tokens);
    }
    const double span = double(sched.total_tokens - sched.warmup_tokens);
    const double frac = double(tokens_seen - sched.warmup_tokens) / span;
    return sched.max_base_lr + (sched.final_lr - sched.max_base_lr) * frac;
}

void TrainPlan::validate() const {
    if (phases.empty()) throw ConfigError("train plan has no phases");
    for (const auto& p : phases) {
        if (p.tokens <= 0 || p.seq_len < 2 || p.sequences_per_batch < 1) {
            throw ConfigError("train plan phase has invalid geometry");
        }
        if (p.seq_len * p.sequences_per_batch != tokens_per_batch) {
            throw ConfigError("train plan phases must hold tokens-per-batch constant");
        }
    }
}

TrainPlan build_plan(std::int64_t total_tokens, double long_fraction, std::int64_t short_len,
                     std::int64_t long_len, std::int64_t tokens_per_batch) {
    if (total_tokens <= 0 || tokens_per_batch <= 0) {
        throw ConfigError("build_plan: token counts must be positive");
    }
    if (long_fraction < 0.0 || long_fraction > 1.0) {
        throw ConfigError("build_plan: long_fraction must be in [0,1]");
    }
    if (tokens_per_batch % short_len != 0 || tokens_per_batch % long_len != 0) {
        throw ConfigError("build_plan: tokens_per_batch must be divisible by both sequence lengths");
    }
    TrainPlan plan;
    plan.tokens_per_batch = tokens_per_batch;
    const std::int64_t phase1_batches =
        std::int64_t(std::floor((1.0 - long_fraction) * double(total_tokens))) / tokens_per_batch;
    const std::int64_t phase1_tokens = phase1_batches * tokens_per_batch;
    const std::int64_t phase2_tokens = total_tokens - phase1_tokens;
    if (phase1_tokens > 0) {
        plan.phases.push_back({phase1_tokens, short_len, tokens_per_batch / short_len});
    }
    if (phase2_tokens > 0) {
        plan.phases.push_back({phase2_tokens, long_len, tokens_per_batch / long_len});
    }
    plan.validate();
    return plan;
}

template <class S>
double clip_global_norm(std::vector<Tens<S>*> grads, const std::vector<std::string>& names,
                        double clip_norm) {
    double sq = 0.0;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        for (const S g : grads[i]->data) {
            if (!std::isfinite(double(g))) {
                throw NumericError("non-finite gradient in tensor '" +
                                   (i < names.size() ? names[i] : std::to_string(i)) + "'");
            }
            sq += double(g) * double(g);
        }
    }
    const double norm = std::sqrt(sq);
    if (norm <= clip_norm) return 1.0;
    const double scale = clip_norm / norm;
    for (auto* g : grads) {
        for (auto& x : g->data) x = S(double(x) * scale);
    }
    return scale;
}

template <class S>
void adamw_step(Tens<S>& param, const Tens<S>& grad, AdamState<S>& state, const OptimizerHP& hp,
                double lr, double wd_lr, std::int64_t step) {
    if (!param.same_shape(grad)) throw DimensionError("adamw_step: grad shape mismatch");
    if (state.m.numel() == 0) {
        state.m = Tens<S>(param.shape);
        state.v = Tens<S>(param.shape);
    }
    if (!state.m.same_shape(param)) throw DimensionError("adamw_step: state shape mismatch");
    const double b1 = hp.beta1, b2 = hp.beta2;
    const double corr1 = 1.0 - std::pow(b1, double(step));
    const double corr2 = 1.0 - std::pow(b2, double(step));
    const double decay = 1.0 - wd_lr * hp.weight_decay;
    const std::int64_t n = param.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        const double g = double(grad[i]);
        const double m = b1 * double(state.m[i]) + (1.0 - b1) * g;
        const double v = b2 * double(state.v[i]) + (1.0 - b2) * g * g;
        state.m[i] = S(m);
        state.v[i] = S(v);
        const double m_hat = m / corr1;
        const double v_hat = v / corr2;
        double p = double(param[i]) * decay;
        p -= lr * m_hat / (std::sqrt(v_hat) + hp.eps);
        param[i] = S(p);
    }
}

template <class S>
void adamw_step(Tens<S>& param, const Tens<S>& grad, AdamState<S>& state, const OptimizerHP& hp,
                double lr, std::int64_t step) {
    adamw_step(param, grad, state, hp, lr, lr, step);
}

template struct AdamState<double>;
template struct AdamState<float>;
template double clip_global_norm(std::vector<Tens<double>*>, const std::vector<std::string>&,
                                 double);
template double clip_global_norm(std::vector<Tens<float>*>, const std::vector<std::string>&,
                                 double);
template void adamw_step(Tens<double>&, const Tens<double>&, AdamState<double>&, const OptimizerHP&,
                         double, double, std::int64_t);
template void adamw_step(Tens<float>&, const Tens<float>&, AdamState<float>&, const OptimizerHP&,
                         double, double, std::int64_t);
template void adamw_step(Tens<double>&, const Tens<double>&, AdamState<double>&, const OptimizerHP&,
                         double, std::int64_t);
template void adamw_step(Tens<float>&, const Tens<float>&, AdamState<float>&, const OptimizerHP&,
                         double, std::int64_t);

}  // namespace gptlab
