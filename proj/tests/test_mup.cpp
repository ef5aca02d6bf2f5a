// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "gptlab/mup.hpp"
#include "gptlab/train.hpp"
#include "toy_text.hpp"

using namespace gptlab;

namespace {

ModelConfig width_config(std::int64_t width, std::int64_t base_width) {
    ModelConfig cfg;
    cfg.d_model = width;
    cfg.n_layers = 2;
    cfg.d_head = 16;
    cfg.vocab_size = 257;
    cfg.activation = FfnKind::Swiglu;
    cfg.position_scheme = PositionScheme::Alibi;
    cfg.parameterization = Parameterization::MuP;
    cfg.base_width = base_width;
    cfg.validate();
    return cfg;
}

double sample_std(const std::vector<double>& xs) {
    double mean = 0.0;
    for (const auto x : xs) mean += x;
    mean /= double(xs.size());
    double var = 0.0;
    for (const auto x : xs) var += (x - mean) * (x - mean);
    return std::sqrt(var / double(xs.size() - 1));
}

}  // namespace

TEST_CASE("width_ratio arithmetic") {
    CHECK(width_ratio(width_config(2560, 256)) == doctest::Approx(10.0));
    CHECK(width_ratio(width_config(256, 256)) == doctest::Approx(1.0));
    CHECK(width_ratio(width_config(768, 256)) == doctest::Approx(3.0));
}

TEST_CASE("lr_for implements the role table") {
    CHECK(lr_for(MupRole::Hidden, 1.2e-2, 10.0) == doctest::Approx(1.2e-3).epsilon(1e-15));
    CHECK(lr_for(MupRole::Embedding, 1.2e-2, 10.0) == doctest::Approx(1.2e-2).epsilon(1e-15));
    CHECK(lr_for(MupRole::Unembedding, 1.2e-2, 10.0) == doctest::Approx(1.2e-3).epsilon(1e-15));
    for (const auto role : {MupRole::Embedding, MupRole::Hidden, MupRole::Unembedding}) {
        CHECK(lr_for(role, 6e-3, 1.0) == doctest::Approx(6e-3).epsilon(1e-15));
    }
    CHECK_THROWS_AS(mup_role_from_string("attention"), ConfigError);
}

TEST_CASE("init: proxy width keeps base std; m=4 halves hidden std within 1%") {
    MupHyperparams hp;
    hp.base_init_std = 0.08;

    // m = 1: hidden std equals base_init_std (statistically)
    {
        auto cfg = width_config(64, 64);
        Model<double> model = make_model<double>(cfg, hp, 7);
        std::vector<double> draws;
        for (const auto& p : model.params.all) {
            if (p.role == MupRole::Hidden && !p.residual_output) {
                draws.insert(draws.end(), p.value.data.begin(), p.value.data.end());
            }
        }
        CHECK(draws.size() > 10000);
        CHECK(sample_std(draws) == doctest::Approx(0.08).epsilon(0.02));
    }

    // m = 4: hidden std is half the base, measured over ~1e6 draws within 1%
    {
        ModelConfig cfg;
        cfg.d_model = 256;
        cfg.n_layers = 5;
        cfg.d_head = 16;
        cfg.vocab_size = 257;
        cfg.activation = FfnKind::Swiglu;
        cfg.base_width = 64;
        cfg.validate();
        Model<double> model = make_model<double>(cfg, hp, 9);
        std::vector<double> draws;
        for (const auto& p : model.params.all) {
            if (p.role == MupRole::Hidden && !p.residual_output) {
                draws.insert(draws.end(), p.value.data.begin(), p.value.data.end());
            }
        }
        CHECK(draws.size() > 1000000);
        CHECK(sample_std(draws) == doctest::Approx(0.04).epsilon(0.01));
    }
}

TEST_CASE("init scaling property: doubling width divides hidden std by sqrt(2)") {
    MupHyperparams hp;
    hp.base_init_std = 0.08;
    auto measure = [&](std::int64_t width) {
        ModelConfig cfg;
        cfg.d_model = width;
        cfg.n_layers = 6;
        cfg.d_head = 16;
        cfg.vocab_size = 257;
        cfg.activation = FfnKind::Swiglu;
        cfg.base_width = 64;
        cfg.validate();
        Model<double> model = make_model<double>(cfg, hp, 31);
        std::vector<double> draws;
        for (const auto& p : model.params.all) {
            if (p.role == MupRole::Hidden && !p.residual_output) {
                draws.insert(draws.end(), p.value.data.begin(), p.value.data.end());
            }
        }
        return sample_std(draws);
    };
    const double s128 = measure(128);
    const double s256 = measure(256);
    CHECK(s128 / s256 == doctest::Approx(std::sqrt(2.0)).epsilon(0.02));
}

TEST_CASE("init: unembedding zero, norm gains one, determinism") {
    auto cfg = width_config(64, 64);
    MupHyperparams hp;
    Model<double> a = make_model<double>(cfg, hp, 1234);
    Model<double> b = make_model<double>(cfg, hp, 1234);
    for (std::size_t i = 0; i < a.params.all.size(); ++i) {
        CHECK(a.params.all[i].value.data == b.params.all[i].value.data);
    }
    for (const auto v : a.params.at(a.params.unembedding).value.data) CHECK(v == 0.0);
    for (const auto v : a.params.at(a.params.layers[0].ln1_gain).value.data) CHECK(v == 1.0);

    Model<double> c = make_model<double>(cfg, hp, 1235);
    CHECK(a.params.at(a.params.embedding).value.data !=
          c.params.at(c.params.embedding).value.data);
}

TEST_CASE("residual-output projections carry the 1/sqrt(2L) factor") {
    MupHyperparams hp;
    hp.base_init_std = 0.08;
    ModelConfig cfg;
    cfg.d_model = 128;
    cfg.n_layers = 8;
    cfg.d_head = 16;
    cfg.vocab_size = 257;
    cfg.activation = FfnKind::Swiglu;
    cfg.base_width = 128;
    cfg.validate();
    Model<double> model = make_model<double>(cfg, hp, 3);
    std::vector<double> resid, plain;
    for (const auto& p : model.params.all) {
        if (p.role != MupRole::Hidden) continue;
        auto& dst = p.residual_output ? resid : plain;
        dst.insert(dst.end(), p.value.data.begin(), p.value.data.end());
    }
    const double want_ratio = 1.0 / std::sqrt(2.0 * 8.0);
    CHECK(sample_std(resid) / sample_std(plain) == doctest::Approx(want_ratio).epsilon(0.03));

    ModelConfig no_scale = cfg;
    no_scale.residual_scaling = false;
    Model<double> flat = make_model<double>(no_scale, hp, 3);
    std::vector<double> resid2, plain2;
    for (const auto& p : flat.params.all) {
        if (p.role != MupRole::Hidden) continue;
        auto& dst = p.residual_output ? resid2 : plain2;
        dst.insert(dst.end(), p.value.data.begin(), p.value.data.end());
    }
    CHECK(sample_std(resid2) / sample_std(plain2) == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("coordinate check: single width gives ratio exactly one") {
    const std::string text = testsupport::toy_text(40000, 5);
    CoordCheckSettings settings;
    settings.widths = {64};
    settings.depth = 2;
    settings.d_head = 16;
    settings.seq_len = 32;
    settings.batch_sequences = 4;
    settings.steps = 5;
    settings.hp.base_lr = 6e-3;
    settings.hp.base_init_std = 0.08;
    settings.hp.emb_multiplier = 10.0;
    settings.seed = 11;
    const auto rows = coordinate_check(settings, testsupport::byte_tokens(text));
    REQUIRE(rows.size() == 1);
    CHECK(!rows[0].diverged);
    for (std::size_t l = 0; l < rows[0].block_rms.size(); ++l) {
        const double ratio = rows[0].block_rms[l] / rows[0].block_rms[l];
        CHECK(ratio == 1.0);
    }
}

TEST_CASE("random_search: degenerate ranges, determinism, argmin vs brute force") {
    SearchRanges ranges;
    ranges.base_lr = {1e-2, 1e-2};
    ranges.base_init_std = {0.08, 0.08};
    ranges.emb_multiplier = {10.0, 10.0};
    ranges.out_multiplier = {1.0, 1.0};
    auto objective = [](const MupHyperparams& hp) { return hp.base_lr; };
    const auto pinned = random_search(ranges, 5, 42, objective);
    for (const auto& t : pinned.trials) {
        CHECK(t.hp.base_lr == 1e-2);
        CHECK(t.hp.base_init_std == 0.08);
        CHECK(t.hp.emb_multiplier == 10.0);
        CHECK(t.hp.out_multiplier == 1.0);
    }

    SearchRanges wide;  // defaults are log-uniform ranges
    // synthetic quadratic bowl in log space around (lr=6e-3, std=0.08)
    auto bowl = [](const MupHyperparams& hp) {
        const double dlr = std::log(hp.base_lr / 6e-3);
        const double dstd = std::log(hp.base_init_std / 0.08);
        return dlr * dlr + dstd * dstd;
    };
    const auto a = random_search(wide, 20, 7, bowl);
    const auto b = random_search(wide, 20, 7, bowl);
    REQUIRE(a.trials.size() == b.trials.size());
    for (std::size_t i = 0; i < a.trials.size(); ++i) {
        CHECK(a.trials[i].hp.base_lr == b.trials[i].hp.base_lr);
        CHECK(a.trials[i].final_loss == b.trials[i].final_loss);
    }
    // brute-force argmin over the sampled set
    std::int64_t want = 0;
    for (std::size_t i = 0; i < a.trials.size(); ++i) {
        if (a.trials[i].final_loss < a.trials[std::size_t(want)].final_loss) {
            want = std::int64_t(i);
        }
    }
    REQUIRE(a.best.has_value());
    CHECK(*a.best == want);
}

TEST_CASE("random_search reports all-diverged searches with no winner") {
    SearchRanges ranges;
    auto objective = [](const MupHyperparams&) { return std::nan(""); };
    const auto r = random_search(ranges, 4, 3, objective);
    CHECK(!r.best.has_value());
    for (const auto& t : r.trials) CHECK(t.diverged);
}
