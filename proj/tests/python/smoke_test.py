# SPDX-License-Identifier: Apache-2.0
"""Smoke tests for the python bindings."""

import json
import math
import pathlib
import sys
import tempfile

import gptlab


def test_recipe_formulas():
    assert gptlab.ffn_width(2560) == 6826
    assert gptlab.ffn_width(768) == 2048

    assert abs(gptlab.alpha_decay(20.0) - 0.1) < 1e-15
    assert abs(gptlab.alpha_decay(236.4) - 0.008460) < 1e-6
    assert abs(gptlab.alpha_decay(370.0) - 0.005405) < 1e-6

    slopes = gptlab.alibi_slopes(8)
    assert len(slopes) == 8
    for i, s in enumerate(slopes, start=1):
        assert abs(s - 2.0 ** (-i)) < 1e-15

    assert abs(gptlab.lr_for("hidden", 1.2e-2, 10.0) - 1.2e-3) < 1e-15
    assert abs(gptlab.lr_for("embedding", 1.2e-2, 10.0) - 1.2e-2) < 1e-15

    lr_end = gptlab.lr_at(627_000_000_000, 1.2e-2, 375_000_000, 627_000_000_000, 1.0198e-4)
    assert abs(lr_end - 1.0198e-4) < 1e-12

    plan = gptlab.build_plan(627_000_000_000, 0.25, 2048, 8192, 3_932_160)
    assert plan["phases"][0]["sequences_per_batch"] == 1920
    assert plan["phases"][1]["sequences_per_batch"] == 480


def test_data_helpers():
    assert not gptlab.filter_short("x" * 199)
    assert gptlab.filter_short("x" * 200)
    assert gptlab.count_scalar_values("abé") == 3

    assert gptlab.shingle("a b c", 2) == ["a b", "b c"]

    docs = [
        {"id": "a", "source": "web", "text": "the quick brown fox " * 40},
        {"id": "b", "source": "web", "text": "the quick brown fox " * 40},
        {"id": "c", "source": "web", "text": "a completely different document " * 40},
    ]
    kept, report = gptlab.dedup(docs, shingle_k=5)
    assert kept == ["a", "c"]
    assert report["docs_in"] == 3
    assert report["docs_kept"] == 2


def test_vocab_roundtrip():
    vocab = gptlab.Vocab.byte_level()
    assert vocab.size == 257
    text = "hello <world> € 42"
    assert vocab.decode(vocab.encode(text)) == text

    trained = gptlab.Vocab.train(["aaab" * 100], 258)
    ids = trained.encode("aaab")
    assert trained.decode(ids) == "aaab"


def test_eval_helpers():
    assert gptlab.moving_average([1.0, 3.0, 5.0], 2) == [1.0, 2.0, 4.0]

    sample = gptlab.gen_longeval_lines(5, seed=3)
    assert f"<{sample['answer']}>" in sample["prompt"]
    assert sample["distance"] == 5
    again = gptlab.gen_longeval_lines(5, seed=3)
    assert again["prompt"] == sample["prompt"]

    topics = gptlab.gen_longeval_topics(4, seed=9)
    assert topics["answer"] in topics["prompt"]
    assert topics["prompt"].endswith("The first topic is")

    fit = gptlab.fit_power_law([(c, 2.0 * c ** -0.1) for c in (1e18, 1e19, 1e20, 1e21)])
    assert abs(fit.a - 2.0) < 1e-6
    assert abs(fit.b - 0.1) < 1e-6
    on_curve_loss = fit.loss_at(3e19)
    assert abs(fit.iso_loss_flop_ratio(3e19, on_curve_loss) - 1.0) < 1e-9


def test_pipeline_commands():
    work = pathlib.Path(tempfile.mkdtemp(prefix="gptlab_py_smoke"))
    corpus = work / "corpus.jsonl"
    with corpus.open("w") as fh:
        for i in range(60):
            text = f"register r{i % 7} keeps {10000 + 13 * i}. " * 12
            fh.write(json.dumps({"id": f"doc{i:04d}", "source": "web", "text": text}) + "\n")

    config = {
        "seed": 5,
        "out_dir": str(work / "out"),
        "model": {
            "d_model": 16, "n_layers": 1, "d_head": 8, "vocab_size": 257,
            "activation": "swiglu", "position_scheme": "alibi",
            "parameterization": "muP", "base_width": 16,
        },
        "mup": {"base_lr": 0.01, "base_init_std": 0.08,
                "emb_multiplier": 10.0, "out_multiplier": 1.0},
        "schedule": {"warmup_tokens": 512, "alpha": 0.1},
        "plan": {"total_tokens": 8 * 512, "long_fraction": 0.0,
                 "short_len": 32, "long_len": 64, "tokens_per_batch": 512},
        "data": {"corpus": str(corpus), "vocab": {"mode": "byte"},
                 "eval_fraction": 0.2},
        "eval": {"eval_len": 64, "smoothing_window": 5},
    }
    config_path = work / "config.json"
    config_path.write_text(json.dumps(config))

    prep = gptlab.preprocess(config_path)
    assert prep["vocab_size"] == 257
    assert prep["docs_kept"] > 0

    result = gptlab.train(config_path)
    assert result["steps"] == 8
    assert math.isfinite(result["final_loss"])

    gptlab.evaluate(config_path, result["checkpoint"], "position_loss")
    csv_path = work / "out" / "loss_vs_position.csv"
    assert csv_path.exists()
    header = csv_path.read_text().splitlines()[0]
    assert header == "position,mean_loss,count,smoothed_loss"


def main() -> int:
    tests = [
        test_recipe_formulas,
        test_data_helpers,
        test_vocab_roundtrip,
        test_eval_helpers,
        test_pipeline_commands,
    ]
    for test in tests:
        test()
        print(f"{test.__name__} ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
