// SPDX-License-Identifier: Apache-2.0
#include "gptlab/mup.hpp"

#include <cmath>
#include <fstream>

#include "gptlab/train.hpp"

#include "json.hpp"

namespace gptlab {

double width_ratio(const ModelConfig& cfg) {
    if (cfg.base_width <= 0) throw ConfigError("width_ratio: base_width must be positive");
    return double(cfg.d_model) / double(cfg.base_width);
}

double lr_for(MupRole role, double base_lr, double m) {
    if (base_lr <= 0.0) throw ConfigError("lr_for: base_lr must be positive");
    switch (role) {
        case MupRole::Embedding: return base_lr;
        case MupRole::Hidden: return base_lr / m;
        case MupRole::Unembedding: return base_lr / m;
    }
    throw ConfigError("lr_for: unknown role");
}

template <class S>
void init_params(Model<S>& model, const MupHyperparams& hp, std::uint64_t seed) {
    hp.validate();
    const double m = model.cfg.parameterization == Parameterization::MuP
                         ? width_ratio(model.cfg)
                         : 1.0;
    const double hidden_std = hp.base_init_std / std::sqrt(m);
    const double resid_scale =
        model.cfg.residual_scaling ? 1.0 / std::sqrt(2.0 * double(model.cfg.n_layers)) : 1.0;
    Rng rng(seed_fork(seed, "init"));
    for (auto& p : model.params.all) {
        switch (p.init) {
            case InitKind::One:
                for (auto& x : p.value.data) x = S(1);
                break;
            case InitKind::Zero:
                p.value.zero();
                break;
            case InitKind::Gauss: {
                double std_dev = p.role == MupRole::Embedding ? hp.base_init_std : hidden_std;
                if (p.residual_output) std_dev *= resid_scale;
                for (auto& x : p.value.data) x = S(std_dev * rng.normal());
                break;
            }
        }
        p.grad.zero();
    }
    model.cfg.emb_multiplier = hp.emb_multiplier;
    model.cfg.out_multiplier = hp.out_multiplier;
}

template <class S>
Model<S> make_model(const ModelConfig& cfg, const MupHyperparams& hp, std::uint64_t seed) {
    ModelConfig c = cfg;
    c.emb_multiplier = hp.emb_multiplier;
    c.out_multiplier = hp.out_multiplier;
    c.validate();
    Model<S> model(c);
    init_params(model, hp, seed);
    return model;
}

// ----------------------------- coordinate check ---------------------------

std::vector<CoordCheckRow> coordinate_check(const CoordCheckSettings& settings,
                                            const std::vector<std::int32_t>& tokens) {
    if (settings.widths.size() < 1) throw ConfigError("coordinate_check: needs widths");
    std::vector<CoordCheckRow> rows;

    PackedShard shard;
    shard.seq_len = settings.seq_len;
    shard.count = std::int64_t(tokens.size()) / settings.seq_len;
    shard.tokens.assign(tokens.begin(), tokens.begin() + shard.count * settings.seq_len);
    if (shard.count < settings.batch_sequences) {
        throw DataError("coordinate_check: not enough token data");
    }

    for (const auto width : settings.widths) {
        ModelConfig cfg;
        cfg.d_model = width;
        cfg.n_layers = settings.depth;
        cfg.d_head = settings.d_head;
        cfg.vocab_size = settings.vocab_size;
        cfg.activation = FfnKind::Swiglu;
        cfg.position_scheme = PositionScheme::Alibi;
        cfg.parameterization = settings.parameterization;
        cfg.base_width = *std::min_element(settings.widths.begin(), settings.widths.end());
        cfg.precision = Precision::F64;
        cfg.validate();

        Model<double> model = make_model<double>(cfg, settings.hp, settings.seed);
        OptimizerHP opt;
        const std::int64_t tokens_per_step = settings.batch_sequences * settings.seq_len;
        // Constant base LR (tiny warmup) isolates the parameterization effect.
        LrSchedule sched = LrSchedule::from_final_lr(
            settings.hp.base_lr, 0, settings.steps * tokens_per_step, settings.hp.base_lr);
        const MiniTrainResult r =
            mini_train(model, shard, nullptr, settings.batch_sequences, settings.steps, opt,
                       sched, seed_fork(settings.seed, "coord_data"));

        CoordCheckRow row;
        row.width = width;
        row.diverged = r.diverged;
        if (!r.diverged) {
            // Probe on the first shard sequence after the final step.
            std::vector<std::int32_t> probe(shard.tokens.begin(),
                                            shard.tokens.begin() + settings.seq_len);
            const auto rms = model.activation_rms(probe);
            row.block_rms.assign(rms.block_rms.begin(), rms.block_rms.end());
            row.logits_rms = rms.logits_rms;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

// ----------------------------- random search ------------------------------

SweepResult random_search(const SearchRanges& ranges, std::int64_t n_trials, std::uint64_t seed,
                          const std::function<double(const MupHyperparams&)>& objective) {
    if (n_trials < 1) throw ConfigError("random_search: n_trials must be >= 1");
    auto check = [](const SearchRange& r, const char* name) {
        if (r.lo <= 0.0 || r.hi < r.lo) {
            throw ConfigError(std::string("random_search: bad range for ") + name);
        }
    };
    check(ranges.base_lr, "base_lr");
    check(ranges.base_init_std, "base_init_std");
    check(ranges.emb_multiplier, "emb_multiplier");
    check(ranges.out_multiplier, "out_multiplier");

    SweepResult result;
    for (std::int64_t t = 0; t < n_trials; ++t) {
        // Per-trial stream: merge order never depends on evaluation order.
        Rng rng(seed_fork(seed, "sweep.trial" + std::to_string(t)));
        auto draw = [&rng](const SearchRange& r) {
            return r.lo == r.hi ? r.lo : rng.log_uniform(r.lo, r.hi);
        };
        SweepTrial trial;
        trial.trial_id = t;
        trial.hp.base_lr = draw(ranges.base_lr);
        trial.hp.base_init_std = draw(ranges.base_init_std);
        trial.hp.emb_multiplier = draw(ranges.emb_multiplier);
        trial.hp.out_multiplier = draw(ranges.out_multiplier);
        const double loss = objective(trial.hp);
        trial.final_loss = loss;
        trial.diverged = !std::isfinite(loss);
        result.trials.push_back(trial);
    }
    for (const auto& trial : result.trials) {
        if (trial.diverged) continue;
        if (!result.best.has_value() ||
            trial.final_loss < result.trials[std::size_t(*result.best)].final_loss) {
            result.best = trial.trial_id;
        }
    }
    return result;
}

template void init_params(Model<double>&, const MupHyperparams&, std::uint64_t);
template void init_params(Model<float>&, const MupHyperparams&, std::uint64_t);
template Model<double> make_model(const ModelConfig&, const MupHyperparams&, std::uint64_t);
template Model<float> make_model(const ModelConfig&, const MupHyperparams&, std::uint64_t);

}  // namespace gptlab
