// SPDX-License-Identifier: Apache-2.0
#include "gptlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

namespace gptlab {

template <class S>
double global_grad_norm(const Model<S>& model) {
    double sq = 0.0;
    for (const auto& p : model.params.all) {
        for (const S g : p.grad.data) {
            if (!std::isfinite(double(g))) {
                throw NumericError("non-finite gradient in tensor '" + p.name + "'");
            }
            sq += double(g) * double(g);
        }
    }
    return std::sqrt(sq);
}

template <class S>
double optimizer_step(Model<S>& model, std::vector<AdamState<S>>& states, const OptimizerHP& hp,
                      double base_lr, std::int64_t step) {
    auto& params = model.params.all;
    if (states.size() != params.size()) states.assign(params.size(), AdamState<S>{});
    const double norm = global_grad_norm(model);
    if (norm > hp.clip_norm) {
        const double scale = hp.clip_norm / norm;
        for (auto& p : params) {
            for (auto& g : p.grad.data) g = S(double(g) * scale);
        }
    }
    const double m = model.cfg.parameterization == Parameterization::MuP
                         ? width_ratio(model.cfg)
                         : 1.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        const double lr = lr_for(p.role, base_lr, m);
        adamw_step(p.value, p.grad, states[i], hp, lr, base_lr, step);
    }
    return norm;
}

BatchOrder BatchOrder::make(std::int64_t n_sequences, std::uint64_t seed) {
    BatchOrder bo;
    bo.order.resize(std::size_t(n_sequences));
    std::iota(bo.order.begin(), bo.order.end(), 0);
    Rng rng(seed);
    // Fisher-Yates
    for (std::int64_t i = n_sequences - 1; i > 0; --i) {
        const std::int64_t j = rng.uniform_int(0, i);
        std::swap(bo.order[std::size_t(i)], bo.order[std::size_t(j)]);
    }
    return bo;
}

std::vector<std::int32_t> gather_batch(const PackedShard& shard, const BatchOrder& order,
                                       std::int64_t step, std::int64_t batch_sequences) {
    if (shard.count == 0) throw DataError("gather_batch: shard has no sequences");
    std::vector<std::int32_t> batch;
    batch.reserve(std::size_t(batch_sequences * shard.seq_len));
    for (std::int64_t j = 0; j < batch_sequences; ++j) {
        const std::int64_t s = order.pick(step, j, batch_sequences);
        const auto* begin = shard.tokens.data() + s * shard.seq_len;
        batch.insert(batch.end(), begin, begin + shard.seq_len);
    }
    return batch;
}

template <class S>
double shard_mean_loss(const Model<S>& model, const PackedShard& shard,
                       std::int64_t max_sequences) {
    const std::int64_t n = max_sequences > 0 ? std::min(max_sequences, shard.count) : shard.count;
    if (n == 0) throw DataError("shard_mean_loss: empty shard");
    double total = 0.0;
    std::int64_t count = 0;
    for (std::int64_t s = 0; s < n; ++s) {
        std::vector<std::int32_t> seq(shard.tokens.begin() + s * shard.seq_len,
                                      shard.tokens.begin() + (s + 1) * shard.seq_len);
        const auto losses = model.sequence_loss(seq);
        for (const auto l : losses) total += double(l);
        count += std::int64_t(losses.size());
    }
    return total / double(count);
}

template <class S>
MiniTrainResult mini_train(Model<S>& model, const PackedShard& train_shard,
                           const PackedShard* val_shard, std::int64_t batch_sequences,
                           std::int64_t steps, const OptimizerHP& opt, const LrSchedule& sched,
                           std::uint64_t data_seed) {
    MiniTrainResult result;
    const BatchOrder order = BatchOrder::make(train_shard.count, seed_fork(data_seed, "order"));
    std::vector<AdamState<S>> states;
    const std::int64_t tokens_per_step = batch_sequences * train_shard.seq_len;
    for (std::int64_t step = 0; step < steps; ++step) {
        const auto batch = gather_batch(train_shard, order, step, batch_sequences);
        model.zero_grads();
        const auto lm = model.forward_backward(batch, batch_sequences, train_shard.seq_len);
        result.final_train_loss = double(lm.mean);
        if (!std::isfinite(result.final_train_loss)) {
            result.diverged = true;
            result.val_loss = std::numeric_limits<double>::infinity();
            return result;
        }
        const std::int64_t tokens_seen = std::min((step + 1) * tokens_per_step, sched.total_tokens);
        try {
            optimizer_step(model, states, opt, lr_at(tokens_seen, sched), step + 1);
        } catch (const NumericError&) {
            result.diverged = true;
            result.val_loss = std::numeric_limits<double>::infinity();
            return result;
        }
    }
    if (val_shard != nullptr) {
        result.val_loss = shard_mean_loss(model, *val_shard);
        if (!std::isfinite(result.val_loss)) result.diverged = true;
    }
    return result;
}

// ----------------------------- full run -----------------------------------

namespace {

struct PhasePosition {
    std::int64_t phase = 0;
    std::int64_t step_in_phase = 0;
};

// Whole-batch phases only (validated); maps a global step to its phase.
PhasePosition locate(const TrainPlan& plan, std::int64_t global_step) {
    std::int64_t seen = 0;
    for (std::size_t i = 0; i < plan.phases.size(); ++i) {
        const auto& ph = plan.phases[i];
        const std::int64_t phase_steps = ph.tokens / plan.tokens_per_batch;
        if (global_step < seen + phase_steps) {
            return {std::int64_t(i), global_step - seen};
        }
        seen += phase_steps;
    }
    return {std::int64_t(plan.phases.size()), 0};
}

}  // namespace

template <class S>
TrainRunResult train_run(Model<S>& model, std::vector<AdamState<S>>& states,
                         const std::vector<PackedShard>& shards, const TrainerConfig& cfg,
                         const TrainState& start) {
    cfg.plan.validate();
    cfg.sched.validate();
    if (cfg.sched.total_tokens != cfg.plan.total_tokens()) {
        throw ConfigError("schedule total_tokens must equal the plan total");
    }
    std::int64_t total_steps = 0;
    for (const auto& ph : cfg.plan.phases) {
        if (ph.tokens % cfg.plan.tokens_per_batch != 0) {
            throw ConfigError("training requires whole-batch phases");
        }
        total_steps += ph.tokens / cfg.plan.tokens_per_batch;
    }

    auto shard_for = [&](std::int64_t seq_len) -> const PackedShard& {
        for (const auto& s : shards) {
            if (s.seq_len == seq_len) return s;
        }
        throw DataError("no token shard with seq_len " + std::to_string(seq_len));
    };

    std::filesystem::create_directories(cfg.out_dir);
    const auto log_path = cfg.out_dir / "train_log.csv";
    const bool fresh = start.step == 0;
    std::ofstream log(log_path, fresh ? std::ios::trunc : std::ios::app);
    if (!log) throw IoError("cannot open training log: " + log_path.string());
    if (fresh) log << "step,tokens_seen,seq_len,lr,train_loss,grad_norm\n" << std::flush;

    TrainRunResult result;
    result.steps_done = start.step;
    result.tokens_seen = start.tokens_seen;

    std::vector<BatchOrder> orders(cfg.plan.phases.size());
    for (std::size_t i = 0; i < cfg.plan.phases.size(); ++i) {
        const auto& shard = shard_for(cfg.plan.phases[i].seq_len);
        orders[i] = BatchOrder::make(
            shard.count, seed_fork(cfg.seed, "data_order.phase" + std::to_string(i)));
    }

    std::int64_t global_step = start.step;
    std::int64_t steps_this_call = 0;
    while (global_step < total_steps) {
        if (cfg.max_steps > 0 && steps_this_call >= cfg.max_steps) break;
        const PhasePosition pos = locate(cfg.plan, global_step);
        const auto& phase = cfg.plan.phases[std::size_t(pos.phase)];
        const auto& shard = shard_for(phase.seq_len);
        const auto batch =
            gather_batch(shard, orders[std::size_t(pos.phase)], pos.step_in_phase,
                         phase.sequences_per_batch);

        model.zero_grads();
        const auto lm = model.forward_backward(batch, phase.sequences_per_batch, phase.seq_len);
        if (!std::isfinite(double(lm.mean))) {
            // Params and optimizer state are still the previous step's.
            const TrainState ts{global_step, result.tokens_seen, pos.phase};
            save_checkpoint(cfg.out_dir / "last_good.ckpt", model, &states, &ts);
            throw NumericError("non-finite training loss at step " +
                               std::to_string(global_step + 1) + "; last_good.ckpt retained");
        }
        result.tokens_seen += cfg.plan.tokens_per_batch;
        const double base_lr = lr_at(std::min(result.tokens_seen, cfg.sched.total_tokens),
                                     cfg.sched);
        const double grad_norm = optimizer_step(model, states, cfg.opt, base_lr, global_step + 1);
        ++global_step;
        ++steps_this_call;
        result.final_loss = double(lm.mean);

        log << global_step << ',' << result.tokens_seen << ',' << phase.seq_len << ','
            << std::setprecision(10) << base_lr << ',' << double(lm.mean) << ',' << grad_norm
            << '\n'
            << std::flush;

        const PhasePosition next = locate(cfg.plan, global_step);
        if (next.phase != pos.phase) {
            const TrainState ts{global_step, result.tokens_seen, next.phase};
            save_checkpoint(cfg.out_dir /
                                ("phase" + std::to_string(pos.phase + 1) + ".ckpt"),
                            model, &states, &ts);
        }
    }

    result.steps_done = global_step;
    const TrainState ts{global_step, result.tokens_seen, locate(cfg.plan, global_step).phase};
    const auto final_path =
        cfg.out_dir / (global_step == total_steps ? "final.ckpt" : "partial.ckpt");
    save_checkpoint(final_path, model, &states, &ts);
    result.final_checkpoint = final_path;
    return result;
}

template double global_grad_norm(const Model<double>&);
template double global_grad_norm(const Model<float>&);
template double optimizer_step(Model<double>&, std::vector<AdamState<double>>&, const OptimizerHP&,
                               double, std::int64_t);
template double optimizer_step(Model<float>&, std::vector<AdamState<float>>&, const OptimizerHP&,
                               double, std::int64_t);
template MiniTrainResult mini_train(Model<double>&, const PackedShard&, const PackedShard*,
                                    std::int64_t, std::int64_t, const OptimizerHP&,
                                    const LrSchedule&, std::uint64_t);
template MiniTrainResult mini_train(Model<float>&, const PackedShard&, const PackedShard*,
                                    std::int64_t, std::int64_t, const OptimizerHP&,
                                    const LrSchedule&, std::uint64_t);
template double shard_mean_loss(const Model<double>&, const PackedShard&, std::int64_t);
template double shard_mean_loss(const Model<float>&, const PackedShard&, std::int64_t);
template TrainRunResult train_run(Model<double>&, std::vector<AdamState<double>>&,
                                  const std::vector<PackedShard>&, const TrainerConfig&,
                                  const TrainState&);
template TrainRunResult train_run(Model<float>&, std::vector<AdamState<float>>&,
                                  const std::vector<PackedShard>&, const TrainerConfig&,
                                  const TrainState&);

}  // namespace gptlab
