// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>

#include "gptlab/config.hpp"
#include "gptlab/eval.hpp"
#include "gptlab/train.hpp"

namespace gptlab {

struct PreprocessResult {
    DedupReport report;
    std::vector<std::filesystem::path> shard_files;
    std::int64_t vocab_size = 0;
};

// filter -> dedup -> tokenize -> pack; writes the report, vocab files, and
// binary shards under out_dir.
PreprocessResult cmd_preprocess(const ExperimentConfig& cfg);

// Executes the train plan over the preprocessed shards. Resumes from a
// checkpoint when given. max_steps > 0 stops early (test hook).
TrainRunResult cmd_train(const ExperimentConfig& cfg,
                         const std::optional<std::filesystem::path>& resume = std::nullopt,
                         std::int64_t max_steps = 0);

// mode: position_loss | longeval_lines | longeval_topics
void cmd_eval(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
              const std::string& mode);

SweepResult cmd_sweep(const ExperimentConfig& cfg);

// Shared artifact path conventions.
std::filesystem::path train_shard_path(const ExperimentConfig& cfg, std::int64_t seq_len);
std::filesystem::path eval_shard_path(const ExperimentConfig& cfg, std::int64_t seq_len);

BpeVocab load_run_vocab(const ExperimentConfig& cfg);

}  // namespace gptlab
