// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gptlab/datapipe.hpp"
#include "gptlab/model.hpp"
#include "gptlab/mup.hpp"
#include "gptlab/schedule.hpp"

namespace gptlab {

struct VocabConfig {
    std::string mode = "byte";  // byte | train | gpt2
    std::int64_t target_size = 512;
    std::filesystem::path vocab_json;
    std::filesystem::path merges_txt;
};

struct DataConfig {
    std::filesystem::path corpus;
    std::int64_t min_chars = 200;
    DedupParams dedup;
    VocabConfig vocab;
    double eval_fraction = 0.1;
};

struct ScheduleConfig {
    std::int64_t warmup_tokens = 0;
    double final_lr = 0.0;        // direct value wins when > 0
    double alpha = 0.0;           // else final = alpha * max
    double tokens_per_parameter = 0.0;  // else alpha from the decay heuristic
};

struct PlanConfig {
    std::int64_t total_tokens = 0;
    double long_fraction = 0.0;
    std::int64_t short_len = 64;
    std::int64_t long_len = 256;
    std::int64_t tokens_per_batch = 8192;
};

struct LongEvalConfig {
    std::vector<std::int64_t> distances{5, 10};
    std::int64_t n_samples = 20;
    std::int64_t max_new_tokens = 48;
};

struct EvalConfig {
    std::int64_t eval_len = 1024;
    std::int64_t smoothing_window = 100;
    std::int64_t max_sequences = 0;
    LongEvalConfig longeval;
};

struct SweepConfig {
    std::int64_t n_trials = 16;
    std::int64_t budget_tokens = 1 << 20;
    std::int64_t batch_sequences = 8;
    std::int64_t seq_len = 64;
    SearchRanges ranges;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "out";
    ModelConfig model;
    MupHyperparams mup;
    OptimizerHP optimizer;
    ScheduleConfig schedule;
    PlanConfig plan;
    DataConfig data;
    EvalConfig eval;
    SweepConfig sweep;

    static ExperimentConfig load(const std::filesystem::path& path);
    // Cross-field validation; throws ConfigError before any work starts.
    void validate();

    TrainPlan make_plan() const;
    LrSchedule make_schedule(std::int64_t reported_params) const;
};

}  // namespace gptlab
