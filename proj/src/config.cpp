// SPDX-License-Identifier: Apache-2.0
#include "gptlab/config.hpp"

#include <fstream>

#include "gptlab/checkpoint.hpp"

#include "json.hpp"

namespace gptlab {

using nlohmann::json;

namespace {

SearchRange range_from_json(const json& j, const SearchRange& fallback) {
    if (j.is_null()) return fallback;
    if (!j.is_array() || j.size() != 2) throw ConfigError("sweep range must be [lo, hi]");
    return SearchRange{j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path.string());
    const json j = json::parse(is, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw ParseError("config " + path.string() + ": malformed JSON");
    }

    ExperimentConfig cfg;
    cfg.seed = j.value("seed", std::uint64_t(0));
    cfg.out_dir = j.value("out_dir", std::string("out"));

    if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"));

    if (j.contains("mup")) {
        const auto& m = j.at("mup");
        cfg.mup.base_lr = m.value("base_lr", cfg.mup.base_lr);
        cfg.mup.base_init_std = m.value("base_init_std", cfg.mup.base_init_std);
        cfg.mup.emb_multiplier = m.value("emb_multiplier", cfg.mup.emb_multiplier);
        cfg.mup.out_multiplier = m.value("out_multiplier", cfg.mup.out_multiplier);
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        cfg.optimizer.beta1 = o.value("beta1", cfg.optimizer.beta1);
        cfg.optimizer.beta2 = o.value("beta2", cfg.optimizer.beta2);
        cfg.optimizer.eps = o.value("eps", cfg.optimizer.eps);
        cfg.optimizer.weight_decay = o.value("weight_decay", cfg.optimizer.weight_decay);
        cfg.optimizer.clip_norm = o.value("clip_norm", cfg.optimizer.clip_norm);
    }
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        cfg.schedule.warmup_tokens = s.value("warmup_tokens", std::int64_t(0));
        cfg.schedule.final_lr = s.value("final_lr", 0.0);
        cfg.schedule.alpha = s.value("alpha", 0.0);
        cfg.schedule.tokens_per_parameter = s.value("tokens_per_parameter", 0.0);
    }
    if (j.contains("plan")) {
        const auto& p = j.at("plan");
        cfg.plan.total_tokens = p.value("total_tokens", std::int64_t(0));
        cfg.plan.long_fraction = p.value("long_fraction", 0.0);
        cfg.plan.short_len = p.value("short_len", std::int64_t(64));
        cfg.plan.long_len = p.value("long_len", std::int64_t(256));
        cfg.plan.tokens_per_batch = p.value("tokens_per_batch", std::int64_t(8192));
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        cfg.data.corpus = d.value("corpus", std::string());
        cfg.data.min_chars = d.value("min_chars", std::int64_t(200));
        cfg.data.eval_fraction = d.value("eval_fraction", 0.1);
        if (d.contains("dedup")) {
            const auto& dd = d.at("dedup");
            cfg.data.dedup.threshold = dd.value("threshold", 0.8);
            cfg.data.dedup.shingle_k = dd.value("shingle_k", std::int64_t(13));
            cfg.data.dedup.n_perm = dd.value("n_perm", std::int64_t(128));
            cfg.data.dedup.bands = dd.value("bands", std::int64_t(16));
            cfg.data.dedup.rows = dd.value("rows", std::int64_t(8));
        }
        if (d.contains("vocab")) {
            const auto& v = d.at("vocab");
            cfg.data.vocab.mode = v.value("mode", std::string("byte"));
            cfg.data.vocab.target_size = v.value("target_size", std::int64_t(512));
            cfg.data.vocab.vocab_json = v.value("vocab_json", std::string());
            cfg.data.vocab.merges_txt = v.value("merges_txt", std::string());
        }
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        cfg.eval.eval_len = e.value("eval_len", std::int64_t(1024));
        cfg.eval.smoothing_window = e.value("smoothing_window", std::int64_t(100));
        cfg.eval.max_sequences = e.value("max_sequences", std::int64_t(0));
        if (e.contains("longeval")) {
            const auto& le = e.at("longeval");
            if (le.contains("distances")) {
                cfg.eval.longeval.distances = le.at("distances").get<std::vector<std::int64_t>>();
            }
            cfg.eval.longeval.n_samples = le.value("n_samples", std::int64_t(20));
            cfg.eval.longeval.max_new_tokens = le.value("max_new_tokens", std::int64_t(48));
        }
    }
    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        cfg.sweep.n_trials = s.value("n_trials", std::int64_t(16));
        cfg.sweep.budget_tokens = s.value("budget_tokens", std::int64_t(1 << 20));
        cfg.sweep.batch_sequences = s.value("batch_sequences", std::int64_t(8));
        cfg.sweep.seq_len = s.value("seq_len", std::int64_t(64));
        if (s.contains("ranges")) {
            const auto& r = s.at("ranges");
            cfg.sweep.ranges.base_lr =
                range_from_json(r.value("base_lr", json()), cfg.sweep.ranges.base_lr);
            cfg.sweep.ranges.base_init_std =
                range_from_json(r.value("base_init_std", json()), cfg.sweep.ranges.base_init_std);
            cfg.sweep.ranges.emb_multiplier = range_from_json(r.value("emb_multiplier", json()),
                                                              cfg.sweep.ranges.emb_multiplier);
            cfg.sweep.ranges.out_multiplier = range_from_json(r.value("out_multiplier", json()),
                                                              cfg.sweep.ranges.out_multiplier);
        }
    }
    return cfg;
}

void ExperimentConfig::validate() {
    model.emb_multiplier = mup.emb_multiplier;
    model.out_multiplier = mup.out_multiplier;
    model.validate();
    mup.validate();
    optimizer.validate();
    if (plan.total_tokens > 0) {
        const TrainPlan p = make_plan();  // checks batch divisibility
        if (schedule.warmup_tokens >= p.total_tokens()) {
            throw ConfigError("warmup_tokens must be < total_tokens");
        }
    }
    if (data.eval_fraction < 0.0 || data.eval_fraction >= 1.0) {
        throw ConfigError("eval_fraction must be in [0, 1)");
    }
    if (data.vocab.mode != "byte" && data.vocab.mode != "train" && data.vocab.mode != "gpt2") {
        throw ConfigError("vocab mode must be byte, train, or gpt2");
    }
    if (schedule.final_lr < 0.0 || schedule.alpha < 0.0 || schedule.alpha > 1.0) {
        throw ConfigError("schedule: final_lr and alpha must be non-negative (alpha <= 1)");
    }
}

TrainPlan ExperimentConfig::make_plan() const {
    return build_plan(plan.total_tokens, plan.long_fraction, plan.short_len, plan.long_len,
                      plan.tokens_per_batch);
}

LrSchedule ExperimentConfig::make_schedule(std::int64_t reported_params) const {
    const double max_lr = mup.base_lr;
    const std::int64_t total = plan.total_tokens;
    double final_lr = schedule.final_lr;
    if (final_lr <= 0.0) {
        double a = schedule.alpha;
        if (a <= 0.0) {
            double tpp = schedule.tokens_per_parameter;
            if (tpp <= 0.0) {
                if (reported_params <= 0) throw ConfigError("cannot derive decay fraction");
                tpp = double(total) / double(reported_params);
            }
            a = alpha_decay(tpp);
        }
        final_lr = max_lr * a;
    }
    return LrSchedule::from_final_lr(max_lr, schedule.warmup_tokens, total, final_lr);
}

}  // namespace gptlab
