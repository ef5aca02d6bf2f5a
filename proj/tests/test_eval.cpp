// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <regex>

#include "gptlab/eval.hpp"
#include "gptlab/mup.hpp"
#include "gptlab/train.hpp"
#include "toy_text.hpp"

using namespace gptlab;

namespace {

ModelConfig char_config(PositionScheme pos = PositionScheme::Alibi) {
    ModelConfig cfg;
    cfg.d_model = 32;
    cfg.n_layers = 2;
    cfg.d_head = 16;
    cfg.vocab_size = 257;
    cfg.activation = FfnKind::Swiglu;
    cfg.position_scheme = pos;
    cfg.base_width = 32;
    cfg.max_learned_positions = 64;
    cfg.validate();
    return cfg;
}

MupHyperparams char_hp() {
    MupHyperparams hp;
    hp.base_lr = 1e-2;
    hp.base_init_std = 0.08;
    hp.emb_multiplier = 10.0;
    hp.out_multiplier = 1.0;
    return hp;
}

const PackedShard& ts_char_shard_cached() {
    static const PackedShard shard =
        testsupport::char_shard(testsupport::toy_text(150000, 8080), 64);
    return shard;
}

}  // namespace

TEST_CASE("loss_vs_position: zero unembedding gives a flat ln(V) series") {
    auto cfg = char_config();
    Model<double> model = make_model<double>(cfg, char_hp(), 4);
    const auto shard = testsupport::char_shard(testsupport::toy_text(4000, 3), 64);
    const auto series = loss_vs_position(model, shard, 64, 8);
    REQUIRE(series.mean_loss.size() == 63);
    for (const auto l : series.mean_loss) {
        CHECK(l == doctest::Approx(std::log(257.0)).epsilon(1e-12));
    }
    for (const auto c : series.counts) CHECK(c == 8);
}

TEST_CASE("loss_vs_position: alibi evaluates beyond any training length") {
    auto cfg = char_config();
    Model<double> model = make_model<double>(cfg, char_hp(), 4);
    Rng rng(9);
    for (auto& v : model.params.at(model.params.unembedding).value.data) v = 0.02 * rng.normal();
    const auto shard = testsupport::char_shard(testsupport::toy_text(3000, 5), 256);
    const auto series = loss_vs_position(model, shard, 256);
    CHECK(series.mean_loss.size() == 255);
    for (const auto l : series.mean_loss) CHECK(std::isfinite(l));
}

TEST_CASE("loss_vs_position overall mean is bit-identical to the training loss") {
    auto cfg = char_config();
    Model<double> model = make_model<double>(cfg, char_hp(), 21);
    Rng rng(2);
    for (auto& v : model.params.at(model.params.unembedding).value.data) v = 0.05 * rng.normal();

    const auto shard = testsupport::char_shard(testsupport::toy_text(2500, 7), 32);
    const std::int64_t b_sz = shard.count;
    const auto lm = model.forward_backward(shard.tokens, b_sz, 32);
    const auto series = loss_vs_position(model, shard, 32);
    CHECK(series.overall_mean == double(lm.mean));  // exact, not approximate
}

TEST_CASE("moving_average: identity, hand example, constant invariance, bounds") {
    CHECK(moving_average({4.0, 2.0, 7.0}, 1) == std::vector<double>{4.0, 2.0, 7.0});
    const auto got = moving_average({1.0, 3.0, 5.0}, 2);
    REQUIRE(got.size() == 3);
    CHECK(got[0] == doctest::Approx(1.0));
    CHECK(got[1] == doctest::Approx(2.0));
    CHECK(got[2] == doctest::Approx(4.0));

    const std::vector<double> konst(40, 3.25);
    for (const auto w : {1, 3, 17, 100}) {
        CHECK(moving_average(konst, w) == konst);
    }

    Rng rng(5);
    std::vector<double> series(200);
    for (auto& x : series) x = rng.normal();
    const auto smoothed = moving_average(series, 10);
    for (std::size_t i = 0; i < series.size(); ++i) {
        double lo = series[i], hi = series[i];
        for (std::size_t j = i >= 9 ? i - 9 : 0; j <= i; ++j) {
            lo = std::min(lo, series[j]);
            hi = std::max(hi, series[j]);
        }
        CHECK(smoothed[i] >= lo - 1e-12);
        CHECK(smoothed[i] <= hi + 1e-12);
    }
    CHECK_THROWS_AS(moving_average(series, 0), ConfigError);
}

TEST_CASE("longeval lines: singleton answer, determinism, template shape") {
    const auto one = gen_longeval_lines(1, 9);
    CHECK(one.distance == 1);
    CHECK(one.prompt.find("<" + one.answer + ">") != std::string::npos);

    const auto a = gen_longeval_lines(25, 123);
    const auto b = gen_longeval_lines(25, 123);
    CHECK(a.prompt == b.prompt);
    CHECK(a.answer == b.answer);
    const auto c = gen_longeval_lines(25, 124);
    CHECK(a.prompt != c.prompt);

    // ends with the query cue, not the answer
    const std::string cue = "<REGISTER_CONTENT> is";
    CHECK(a.prompt.rfind(cue) == a.prompt.size() - cue.size());
}

TEST_CASE("longeval lines: 1000-sample parse-back property") {
    const std::regex value_re("<([0-9]+)>");
    for (std::uint64_t s = 0; s < 1000; ++s) {
        const auto sample = gen_longeval_lines(1 + std::int64_t(s % 40), s);
        // ground-truth construction always parses back: the answer appears as
        // <NNNNN> in the prompt, and scoring its own answer string succeeds
        CHECK(sample.prompt.find("<" + sample.answer + ">") != std::string::npos);
        CHECK(score_longeval_lines(sample, " <" + sample.answer + ">"));
        std::smatch m;
        CHECK(std::regex_search(sample.prompt, m, value_re));
    }
}

TEST_CASE("longeval topics: singleton, first-topic uniqueness, determinism") {
    const auto one = gen_longeval_topics(1, 3);
    CHECK(one.prompt.find(one.answer) != std::string::npos);
    CHECK(score_longeval_topics(one, " " + one.answer + " and more"));
    CHECK(!score_longeval_topics(one, "something else entirely"));

    const auto a = gen_longeval_topics(12, 55);
    const auto b = gen_longeval_topics(12, 55);
    CHECK(a.prompt == b.prompt);

    // the first topic appears only before the second topic turn
    const std::size_t second_turn = a.prompt.find("USER: I would like to discuss",
                                                  a.prompt.find("USER: I would like to discuss") + 1);
    REQUIRE(second_turn != std::string::npos);
    CHECK(a.prompt.find(a.answer, second_turn) == std::string::npos);
    CHECK(a.prompt.rfind("The first topic is") != std::string::npos);
}

TEST_CASE("parse_last_number picks the final digit run") {
    CHECK(parse_last_number("foo 12 bar 345 baz") == 345);
    CHECK(parse_last_number("<90210>") == 90210);
    CHECK(!parse_last_number("no digits here").has_value());
}

TEST_CASE("greedy_decode: zero budget, tie-breaking to the lowest id") {
    auto cfg = char_config();
    Model<double> model = make_model<double>(cfg, char_hp(), 6);
    const auto vocab = BpeVocab::byte_level();
    const auto prompt = vocab.encode("hi");
    CHECK(greedy_decode(model, vocab, prompt, {}, 0).empty());
    // zero unembedding: all logits tie, so every generated token is id 0
    const std::string out = greedy_decode(model, vocab, prompt, {}, 3);
    CHECK(out == std::string(3, '\0'));
}

TEST_CASE("greedy_decode echoes after overfitting on a constant token") {
    ModelConfig cfg = char_config();
    cfg.d_model = 16;
    cfg.d_head = 8;
    cfg.d_ffn = 0;
    cfg.base_width = 16;
    cfg.validate();
    Model<double> model = make_model<double>(cfg, char_hp(), 13);
    // overfit on runs of 'z'
    const std::string text(2048, 'z');
    const auto shard = testsupport::char_shard(text, 16);
    OptimizerHP opt;
    const LrSchedule sched = LrSchedule::from_final_lr(1e-2, 128, 200 * 8 * 16, 1e-3);
    const auto r = mini_train(model, shard, nullptr, 8, 200, opt, sched, 3);
    CHECK(!r.diverged);
    CHECK(r.final_train_loss < 0.1);  // memorization sanity run

    const auto vocab = BpeVocab::byte_level();
    const std::string out = greedy_decode(model, vocab, vocab.encode("zzzz"), {}, 8);
    CHECK(out == std::string(8, 'z'));
}

TEST_CASE("loss grows beyond the training length for a trained alibi model") {
    const PackedShard shard64 = ts_char_shard_cached();
    const PackedShard eval256 = testsupport::char_shard(testsupport::toy_text(40000, 9090), 256);
    auto cfg = char_config();
    Model<double> model = make_model<double>(cfg, char_hp(), 63);
    OptimizerHP opt;
    const std::int64_t steps = 300, budget = steps * 8 * 64;
    const LrSchedule sched = LrSchedule::from_alpha(1e-2, budget / 10, budget, 0.1);
    const auto r = mini_train(model, shard64, nullptr, 8, steps, opt, sched, 5);
    REQUIRE(!r.diverged);
    const auto series = loss_vs_position(model, eval256, 256, 32);
    auto mean_over = [&](int lo, int hi) {
        double acc = 0.0;
        for (int p = lo; p <= hi; ++p) acc += series.mean_loss[std::size_t(p - 1)];
        return acc / double(hi - lo + 1);
    };
    CHECK(mean_over(65, 256) > mean_over(33, 64));
}

TEST_CASE("eval series from disjoint shards agree within three standard errors") {
    auto cfg = char_config();
    Model<double> model = make_model<double>(cfg, char_hp(), 31);
    Rng rng(8);
    for (auto& v : model.params.at(model.params.unembedding).value.data) v = 0.05 * rng.normal();

    const std::int64_t t_len = 32, n_seq = 48;
    const auto shard_a = testsupport::char_shard(testsupport::toy_text(40000, 100), t_len);
    const auto shard_b = testsupport::char_shard(testsupport::toy_text(40000, 200), t_len);
    REQUIRE(shard_a.count >= n_seq);
    REQUIRE(shard_b.count >= n_seq);

    auto per_position = [&](const PackedShard& shard) {
        std::vector<std::vector<double>> losses(std::size_t(t_len - 1));
        for (std::int64_t s = 0; s < n_seq; ++s) {
            std::vector<std::int32_t> seq(shard.tokens.begin() + s * t_len,
                                          shard.tokens.begin() + (s + 1) * t_len);
            const auto l = model.sequence_loss(seq);
            for (std::size_t t = 0; t < l.size(); ++t) losses[t].push_back(l[t]);
        }
        return losses;
    };
    const auto la = per_position(shard_a);
    const auto lb = per_position(shard_b);
    for (std::size_t t = 0; t < la.size(); ++t) {
        auto stats = [](const std::vector<double>& xs) {
            double mean = 0.0;
            for (const auto x : xs) mean += x;
            mean /= double(xs.size());
            double var = 0.0;
            for (const auto x : xs) var += (x - mean) * (x - mean);
            var /= double(xs.size() - 1);
            return std::pair<double, double>{mean, std::sqrt(var / double(xs.size()))};
        };
        const auto [ma, sea] = stats(la[t]);
        const auto [mb, seb] = stats(lb[t]);
        const double se = std::sqrt(sea * sea + seb * seb);
        CHECK(std::abs(ma - mb) <= 3.0 * se);
    }
}

TEST_CASE("power law: noiseless recovery and on-curve iso-loss ratio") {
    std::vector<FitPoint> points;
    for (const double c : {1e18, 1e19, 1e20, 1e21, 1e22}) {
        points.push_back({c, 2.0 * std::pow(c, -0.1)});
    }
    const auto fit = fit_power_law(points);
    CHECK(std::abs(fit.a - 2.0) < 1e-6);
    CHECK(std::abs(fit.b - 0.1) < 1e-6);
    CHECK(std::abs(fit.c) < 1e-9);

    const FitPoint on_curve{3.7e20, power_law_loss_at(fit, 3.7e20)};
    CHECK(iso_loss_flop_ratio(fit, on_curve) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(iso_flop_loss_delta(fit, on_curve) == doctest::Approx(0.0).epsilon(1e-9));

    // two points pin c = 0
    const auto fit2 = fit_power_law({points[0], points[4]});
    CHECK(std::abs(fit2.b - 0.1) < 1e-9);
}

TEST_CASE("power law: 1% multiplicative noise still recovers b within 10%") {
    Rng rng(44);
    std::vector<FitPoint> points;
    for (int i = 0; i < 15; ++i) {
        const double c = std::pow(10.0, 3.0 + 0.4 * i);
        const double noise = 1.0 + 0.01 * rng.normal();
        points.push_back({c, (3.0 * std::pow(c, -0.25) + 0.4) * noise});
    }
    const auto fit = fit_power_law(points);
    CHECK(std::abs(fit.b - 0.25) / 0.25 < 0.10);
    CHECK(std::abs(fit.c - 0.4) < 0.1);
}

TEST_CASE("power law rejects non-positive inputs") {
    CHECK_THROWS_AS(fit_power_law({{1e18, 2.0}, {0.0, 1.0}, {1e20, 0.5}}), DomainError);
    CHECK_THROWS_AS(fit_power_law({{1e18, -2.0}, {1e19, 1.0}, {1e20, 0.5}}), DomainError);
    CHECK_THROWS_AS(fit_power_law({{1e18, 2.0}}), DomainError);
    const auto fit = fit_power_law({{1e18, 2.0}, {1e19, 1.5}, {1e20, 1.1}});
    CHECK_THROWS_AS(power_law_flops_at(fit, fit.c * 0.5), DomainError);
}
