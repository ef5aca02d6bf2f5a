# SPDX-License-Identifier: Apache-2.0
"""Python bindings for the decoder pretraining laboratory."""

from ._core import (  # noqa: F401
    ConfigError,
    DataError,
    NumericError,
    PowerLawFit,
    Vocab,
    alibi_slopes,
    alpha_decay,
    build_plan,
    count_scalar_values,
    dedup,
    evaluate,
    ffn_width,
    filter_short,
    fit_power_law,
    gen_longeval_lines,
    gen_longeval_topics,
    lr_at,
    lr_for,
    moving_average,
    preprocess,
    shingle,
    sweep,
    train,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "PowerLawFit",
    "Vocab",
    "alibi_slopes",
    "alpha_decay",
    "build_plan",
    "count_scalar_values",
    "dedup",
    "evaluate",
    "ffn_width",
    "filter_short",
    "fit_power_law",
    "gen_longeval_lines",
    "gen_longeval_topics",
    "lr_at",
    "lr_for",
    "moving_average",
    "preprocess",
    "shingle",
    "sweep",
    "train",
]
