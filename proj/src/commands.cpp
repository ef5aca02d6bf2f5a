// SPDX-License-Identifier: Apache-2.0
#include "gptlab/commands.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "json.hpp"

namespace gptlab {

using nlohmann::json;

std::filesystem::path train_shard_path(const ExperimentConfig& cfg, std::int64_t seq_len) {
    return cfg.out_dir / ("train_len" + std::to_string(seq_len) + ".bin");
}
std::filesystem::path eval_shard_path(const ExperimentConfig& cfg, std::int64_t seq_len) {
    return cfg.out_dir / ("eval_len" + std::to_string(seq_len) + ".bin");
}

BpeVocab load_run_vocab(const ExperimentConfig& cfg) {
    const auto vocab_json = cfg.out_dir / "vocab.json";
    const auto merges_txt = cfg.out_dir / "merges.txt";
    if (!std::filesystem::exists(vocab_json) || !std::filesystem::exists(merges_txt)) {
        throw IoError("missing vocab files under " + cfg.out_dir.string() +
                      "; run preprocess first");
    }
    return BpeVocab::load_gpt2(vocab_json, merges_txt);
}

PreprocessResult cmd_preprocess(const ExperimentConfig& cfg) {
    if (cfg.data.corpus.empty()) throw ConfigError("data.corpus is required for preprocess");
    std::filesystem::create_directories(cfg.out_dir);

    const Corpus raw = read_corpus_jsonl(cfg.data.corpus);

    // length filter, keeping pre-filter stats per source
    std::map<std::string, std::pair<std::int64_t, std::int64_t>> filter_stats;  // in, dropped
    Corpus filtered;
    for (const auto& doc : raw) {
        auto& fs = filter_stats[doc.source];
        fs.first += 1;
        if (filter_short(doc, cfg.data.min_chars)) {
            filtered.push_back(doc);
        } else {
            fs.second += 1;
        }
    }

    DedupParams dd = cfg.data.dedup;
    dd.seed = seed_fork(cfg.seed, "dedup");
    auto [kept, report] = dedup(filtered, dd);
    report.docs_in = std::int64_t(raw.size());
    for (const auto& [source, fs] : filter_stats) {
        auto& s = report.per_source[source];
        s.docs_in = fs.first;
        s.docs_filtered_short = fs.second;
    }

    // tokenizer
    BpeVocab vocab = [&] {
        if (cfg.data.vocab.mode == "gpt2") {
            return BpeVocab::load_gpt2(cfg.data.vocab.vocab_json, cfg.data.vocab.merges_txt);
        }
        if (cfg.data.vocab.mode == "train") {
            std::vector<std::string> texts;
            texts.reserve(kept.size());
            for (const auto& doc : kept) texts.push_back(doc.text);
            return BpeVocab::train(texts, cfg.data.vocab.target_size);
        }
        return BpeVocab::byte_level();
    }();
    vocab.save(cfg.out_dir / "vocab.json", cfg.out_dir / "merges.txt");
    if (vocab.eos_id() < 0) throw DataError("vocabulary has no end-of-text token");

    std::vector<std::vector<std::int32_t>> train_docs, eval_docs;
    const std::int64_t k = cfg.data.eval_fraction > 0.0
                               ? std::max<std::int64_t>(2, std::llround(1.0 / cfg.data.eval_fraction))
                               : 0;
    for (std::size_t i = 0; i < kept.size(); ++i) {
        auto ids = vocab.encode(kept[i].text);
        if (k > 0 && std::int64_t(i + 1) % k == 0) {
            eval_docs.push_back(std::move(ids));
        } else {
            train_docs.push_back(std::move(ids));
        }
    }

    std::set<std::int64_t> lens{cfg.plan.short_len};
    if (cfg.plan.long_fraction > 0.0) lens.insert(cfg.plan.long_len);
    lens.insert(cfg.sweep.seq_len);
    std::set<std::int64_t> eval_lens = lens;
    eval_lens.insert(cfg.eval.eval_len);

    PreprocessResult result;
    result.report = report;
    result.vocab_size = vocab.size();
    for (const auto len : lens) {
        const auto shard = pack_sequences(train_docs, len, vocab.eos_id());
        const auto path = train_shard_path(cfg, len);
        write_token_file(path, shard);
        result.shard_files.push_back(path);
    }
    for (const auto len : eval_lens) {
        const auto shard = pack_sequences(eval_docs, len, vocab.eos_id());
        const auto path = eval_shard_path(cfg, len);
        write_token_file(path, shard);
        result.shard_files.push_back(path);
    }

    std::ofstream os(cfg.out_dir / "dedup_report.json", std::ios::trunc);
    if (!os) throw IoError("cannot write dedup report");
    os << dedup_report_to_json(report).dump(2) << '\n';
    return result;
}

namespace {

template <class S>
TrainRunResult run_train(const ExperimentConfig& cfg,
                         const std::optional<std::filesystem::path>& resume,
                         std::int64_t max_steps) {
    const TrainPlan plan = cfg.make_plan();

    std::vector<PackedShard> shards;
    for (const auto& phase : plan.phases) {
        const auto path = train_shard_path(cfg, phase.seq_len);
        if (!std::filesystem::exists(path)) {
            throw IoError("missing token shard: " + path.string() + "; run preprocess first");
        }
        bool have = false;
        for (const auto& s : shards) have = have || s.seq_len == phase.seq_len;
        if (!have) shards.push_back(read_token_file(path));
    }

    TrainerConfig tc;
    tc.opt = cfg.optimizer;
    tc.plan = plan;
    tc.sched = cfg.make_schedule(reported_param_count(cfg.model));
    tc.seed = cfg.seed;
    tc.out_dir = cfg.out_dir;
    tc.max_steps = max_steps;

    Model<S> model(cfg.model);
    std::vector<AdamState<S>> states;
    TrainState start;
    if (resume.has_value()) {
        model = load_checkpoint<S>(*resume, &states, &start);
        if (model_config_to_json(model.cfg) != model_config_to_json(cfg.model)) {
            throw ConfigError("checkpoint model config does not match experiment config");
        }
    } else {
        init_params(model, cfg.mup, seed_fork(cfg.seed, "model_init"));
    }
    return train_run(model, states, shards, tc, start);
}

}  // namespace

TrainRunResult cmd_train(const ExperimentConfig& cfg,
                         const std::optional<std::filesystem::path>& resume,
                         std::int64_t max_steps) {
    ExperimentConfig c = cfg;
    c.validate();
    if (c.model.precision == Precision::F32) return run_train<float>(c, resume, max_steps);
    return run_train<double>(c, resume, max_steps);
}

namespace {

template <class S>
void run_eval(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
              const std::string& mode) {
    Model<S> model = load_checkpoint<S>(checkpoint);
    std::filesystem::create_directories(cfg.out_dir);

    if (mode == "position_loss") {
        const auto shard_path = eval_shard_path(cfg, cfg.eval.eval_len);
        if (!std::filesystem::exists(shard_path)) {
            throw IoError("missing eval shard: " + shard_path.string());
        }
        const PackedShard shard = read_token_file(shard_path);
        EvalSeries series =
            loss_vs_position(model, shard, cfg.eval.eval_len, cfg.eval.max_sequences);
        series.checkpoint_id = checkpoint.filename().string();
        write_eval_series_csv(cfg.out_dir / "loss_vs_position.csv", series,
                              cfg.eval.smoothing_window);
        return;
    }

    if (mode == "longeval_lines" || mode == "longeval_topics") {
        const bool lines = mode == "longeval_lines";
        const BpeVocab vocab = load_run_vocab(cfg);
        std::vector<LongEvalResult> results;
        for (const auto distance : cfg.eval.longeval.distances) {
            LongEvalResult r;
            r.distance = distance;
            r.n_samples = cfg.eval.longeval.n_samples;
            std::int64_t correct = 0;
            for (std::int64_t s = 0; s < cfg.eval.longeval.n_samples; ++s) {
                const std::uint64_t sample_seed = seed_fork(
                    cfg.seed, mode + "." + std::to_string(distance) + "." + std::to_string(s));
                const LongEvalSample sample = lines ? gen_longeval_lines(distance, sample_seed)
                                                    : gen_longeval_topics(distance, sample_seed);
                const auto prompt_ids = vocab.encode(sample.prompt);
                const std::string generation =
                    greedy_decode(model, vocab, prompt_ids, {"\n"},
                                  cfg.eval.longeval.max_new_tokens);
                const bool ok = lines ? score_longeval_lines(sample, generation)
                                      : score_longeval_topics(sample, generation);
                correct += ok ? 1 : 0;
            }
            r.accuracy = double(correct) / double(std::max<std::int64_t>(1, r.n_samples));
            results.push_back(r);
        }
        write_longeval_jsonl(cfg.out_dir / (mode + ".jsonl"), results);
        return;
    }
    throw ConfigError("unknown eval mode: '" + mode + "'");
}

}  // namespace

void cmd_eval(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
              const std::string& mode) {
    const ModelConfig ck_cfg = peek_checkpoint_config(checkpoint);
    if (ck_cfg.precision == Precision::F32) {
        run_eval<float>(cfg, checkpoint, mode);
    } else {
        run_eval<double>(cfg, checkpoint, mode);
    }
}

SweepResult cmd_sweep(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    c.validate();
    if (c.model.parameterization != Parameterization::MuP) {
        throw ConfigError("sweep requires a muP-parameterized proxy model");
    }
    const auto train_path = train_shard_path(c, c.sweep.seq_len);
    const auto val_path = eval_shard_path(c, c.sweep.seq_len);
    if (!std::filesystem::exists(train_path) || !std::filesystem::exists(val_path)) {
        throw IoError("missing sweep shards for seq_len " + std::to_string(c.sweep.seq_len) +
                      "; run preprocess first");
    }
    const PackedShard train_shard = read_token_file(train_path);
    const PackedShard val_shard = read_token_file(val_path);

    const std::int64_t tokens_per_step = c.sweep.batch_sequences * c.sweep.seq_len;
    const std::int64_t steps = std::max<std::int64_t>(1, c.sweep.budget_tokens / tokens_per_step);
    const std::int64_t budget = steps * tokens_per_step;
    const std::uint64_t init_seed = seed_fork(c.seed, "sweep_init");
    const std::uint64_t data_seed = seed_fork(c.seed, "sweep_data");

    auto objective = [&](const MupHyperparams& hp) -> double {
        Model<double> proxy = make_model<double>(c.model, hp, init_seed);
        LrSchedule sched = LrSchedule::from_alpha(hp.base_lr, std::max<std::int64_t>(
                                                      tokens_per_step, budget / 20),
                                                  budget, 0.1);
        const MiniTrainResult r = mini_train(proxy, train_shard, &val_shard,
                                             c.sweep.batch_sequences, steps, c.optimizer, sched,
                                             data_seed);
        return r.diverged ? std::numeric_limits<double>::quiet_NaN() : r.val_loss;
    };

    const SweepResult result = random_search(c.sweep.ranges, c.sweep.n_trials,
                                             seed_fork(c.seed, "sweep"), objective);

    std::filesystem::create_directories(c.out_dir);
    std::ofstream os(c.out_dir / "sweep.jsonl", std::ios::trunc);
    if (!os) throw IoError("cannot write sweep results");
    for (const auto& t : result.trials) {
        os << json{{"trial_id", t.trial_id},
                   {"hyperparams",
                    {{"base_lr", t.hp.base_lr},
                     {"base_init_std", t.hp.base_init_std},
                     {"emb_multiplier", t.hp.emb_multiplier},
                     {"out_multiplier", t.hp.out_multiplier}}},
                   {"final_loss", t.diverged ? json() : json(t.final_loss)},
                   {"diverged", t.diverged}}
                  .dump()
           << '\n';
    }
    json summary;
    if (result.best.has_value()) {
        const auto& b = result.trials[std::size_t(*result.best)];
        summary = {{"winner", b.trial_id},
                   {"hyperparams",
                    {{"base_lr", b.hp.base_lr},
                     {"base_init_std", b.hp.base_init_std},
                     {"emb_multiplier", b.hp.emb_multiplier},
                     {"out_multiplier", b.hp.out_multiplier}}},
                   {"final_loss", b.final_loss}};
    } else {
        summary = {{"winner", nullptr}, {"note", "all trials diverged"}};
    }
    std::ofstream ss(c.out_dir / "sweep_summary.json", std::ios::trunc);
    ss << summary.dump(2) << '\n';
    return result;
}

}  // namespace gptlab
