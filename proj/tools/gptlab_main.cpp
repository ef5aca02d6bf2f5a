// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "gptlab/commands.hpp"

#include "CLI11.hpp"

namespace {

// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric error.
int run(int argc, char** argv) {
    CLI::App app{"desk-scale decoder pretraining laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed_override;
    std::optional<std::string> out_override;
    std::string checkpoint_path;
    std::string mode = "position_loss";

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config JSON")->required();
        cmd->add_option("--seed", seed_override, "override the config seed");
        cmd->add_option("--out", out_override, "override the output directory");
    };

    CLI::App* preprocess = app.add_subcommand("preprocess", "filter, dedup, tokenize, pack");
    add_common(preprocess);

    CLI::App* train = app.add_subcommand("train", "execute the training plan");
    add_common(train);
    train->add_option("--checkpoint", checkpoint_path, "resume from a checkpoint");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval);
    eval->add_option("--checkpoint", checkpoint_path, "checkpoint to evaluate")->required();
    eval->add_option("--mode", mode, "position_loss | longeval_lines | longeval_topics");

    CLI::App* sweep = app.add_subcommand("sweep", "random hyperparameter search");
    add_common(sweep);

    CLI11_PARSE(app, argc, argv);

    gptlab::ExperimentConfig cfg = gptlab::ExperimentConfig::load(config_path);
    if (seed_override.has_value()) cfg.seed = *seed_override;
    if (out_override.has_value()) cfg.out_dir = *out_override;
    cfg.validate();

    if (preprocess->parsed()) {
        const auto result = gptlab::cmd_preprocess(cfg);
        std::cout << "preprocess: " << result.report.docs_kept << "/" << result.report.docs_in
                  << " documents kept, vocab " << result.vocab_size << ", "
                  << result.shard_files.size() << " shards under " << cfg.out_dir.string()
                  << "\n";
    } else if (train->parsed()) {
        std::optional<std::filesystem::path> resume;
        if (!checkpoint_path.empty()) resume = checkpoint_path;
        const auto result = gptlab::cmd_train(cfg, resume);
        std::cout << "train: " << result.steps_done << " steps, " << result.tokens_seen
                  << " tokens, final loss " << result.final_loss << ", checkpoint "
                  << result.final_checkpoint.string() << "\n";
    } else if (eval->parsed()) {
        gptlab::cmd_eval(cfg, checkpoint_path, mode);
        std::cout << "eval: wrote " << mode << " results under " << cfg.out_dir.string() << "\n";
    } else if (sweep->parsed()) {
        const auto result = gptlab::cmd_sweep(cfg);
        if (result.best.has_value()) {
            const auto& b = result.trials[std::size_t(*result.best)];
            std::cout << "sweep: best trial " << b.trial_id << " (loss " << b.final_loss
                      << ", base_lr " << b.hp.base_lr << ")\n";
        } else {
            std::cout << "sweep: no winner, all trials diverged\n";
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const gptlab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const gptlab::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const gptlab::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
