// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>

#include "gptlab/checkpoint.hpp"
#include "gptlab/datapipe.hpp"
#include "gptlab/model.hpp"
#include "gptlab/mup.hpp"
#include "gptlab/schedule.hpp"

namespace gptlab {

template <class S>
double global_grad_norm(const Model<S>& model);

// Clip + per-role learning rates + AdamW over every parameter. `base_lr` is
// the scheduled base rate; weight decay uses it unscaled for all roles.
// Returns the pre-clip global gradient norm.
template <class S>
double optimizer_step(Model<S>& model, std::vector<AdamState<S>>& states, const OptimizerHP& hp,
                      double base_lr, std::int64_t step);

// Deterministic batch order: a seeded shuffle of sequence indices, cycled.
struct BatchOrder {
    std::vector<std::int64_t> order;
    std::int64_t pick(std::int64_t step, std::int64_t j, std::int64_t batch) const {
        return order[std::size_t((step * batch + j) % std::int64_t(order.size()))];
    }
    static BatchOrder make(std::int64_t n_sequences, std::uint64_t seed);
};

std::vector<std::int32_t> gather_batch(const PackedShard& shard, const BatchOrder& order,
                                       std::int64_t step, std::int64_t batch_sequences);

struct MiniTrainResult {
    double final_train_loss = 0.0;
    double val_loss = 0.0;
    bool diverged = false;
};

// Lightweight in-memory loop for proxy sweeps, coordinate checks, and
// LR-transfer experiments. No artifacts.
template <class S>
MiniTrainResult mini_train(Model<S>& model, const PackedShard& train_shard,
                           const PackedShard* val_shard, std::int64_t batch_sequences,
                           std::int64_t steps, const OptimizerHP& opt, const LrSchedule& sched,
                           std::uint64_t data_seed);

// Mean next-token loss over every sequence of a shard.
template <class S>
double shard_mean_loss(const Model<S>& model, const PackedShard& shard,
                       std::int64_t max_sequences = 0);

// ----------------------------- full run -----------------------------------

struct TrainerConfig {
    OptimizerHP opt;
    LrSchedule sched;  // token-based; total must match the plan
    TrainPlan plan;
    std::uint64_t seed = 0;
    std::filesystem::path out_dir;
    std::int64_t max_steps = 0;  // 0: run the whole plan
};

struct TrainRunResult {
    std::int64_t steps_done = 0;
    std::int64_t tokens_seen = 0;
    double final_loss = 0.0;
    std::filesystem::path final_checkpoint;
};

// Executes the plan phase by phase over per-phase shards (matched by
// seq_len). Appends the training log CSV, checkpoints at phase boundaries
// and at the end, and resumes bit-identically from a saved TrainState.
template <class S>
TrainRunResult train_run(Model<S>& model, std::vector<AdamState<S>>& states,
                         const std::vector<PackedShard>& shards, const TrainerConfig& cfg,
                         const TrainState& start);

extern template double global_grad_norm(const Model<double>&);
extern template double global_grad_norm(const Model<float>&);
extern template double optimizer_step(Model<double>&, std::vector<AdamState<double>>&,
                                      const OptimizerHP&, double, std::int64_t);
extern template double optimizer_step(Model<float>&, std::vector<AdamState<float>>&,
                                      const OptimizerHP&, double, std::int64_t);
extern template MiniTrainResult mini_train(Model<double>&, const PackedShard&, const PackedShard*,
                                           std::int64_t, std::int64_t, const OptimizerHP&,
                                           const LrSchedule&, std::uint64_t);
extern template MiniTrainResult mini_train(Model<float>&, const PackedShard&, const PackedShard*,
                                           std::int64_t, std::int64_t, const OptimizerHP&,
                                           const LrSchedule&, std::uint64_t);
extern template double shard_mean_loss(const Model<double>&, const PackedShard&, std::int64_t);
extern template double shard_mean_loss(const Model<float>&, const PackedShard&, std::int64_t);
extern template TrainRunResult train_run(Model<double>&, std::vector<AdamState<double>>&,
                                         const std::vector<PackedShard>&, const TrainerConfig&,
                                         const TrainState&);
extern template TrainRunResult train_run(Model<float>&, std::vector<AdamState<float>>&,
                                         const std::vector<PackedShard>&, const TrainerConfig&,
                                         const TrainState&);

}  // namespace gptlab
