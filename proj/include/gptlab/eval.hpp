// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gptlab/bpe.hpp"
#include "gptlab/datapipe.hpp"
#include "gptlab/model.hpp"

namespace gptlab {

// Per-token-position mean loss. Position t (1-based, contiguous from 1)
// is the prediction of token t given the t preceding tokens.
struct EvalSeries {
    std::vector<double> mean_loss;  // index 0 <=> position 1
    std::vector<std::int64_t> counts;
    double overall_mean = 0.0;  // same accumulation order as training loss
    std::int64_t eval_len = 0;
    std::string checkpoint_id;
};

template <class S>
EvalSeries loss_vs_position(const Model<S>& model, const PackedShard& eval_set,
                            std::int64_t eval_len, std::int64_t max_sequences = 0);

// Trailing average over min(window, history) values.
std::vector<double> moving_average(const std::vector<double>& series, std::int64_t window);

// CSV contract: position,mean_loss,count,smoothed_loss
void write_eval_series_csv(const std::filesystem::path& path, const EvalSeries& series,
                           std::int64_t smoothing_window);

// ----------------------------- LongEval -----------------------------------

struct LongEvalSample {
    std::string prompt;
    std::string answer;         // recoverable from the prompt by construction
    std::int64_t distance = 0;  // lines count or topics count
};

LongEvalSample gen_longeval_lines(std::int64_t n_lines, std::uint64_t seed);
LongEvalSample gen_longeval_topics(std::int64_t n_topics, std::uint64_t seed);

std::optional<std::int64_t> parse_last_number(std::string_view text);

// Lines: exact match of the last parsed integer. Topics: case-insensitive
// prefix match of the topic string.
bool score_longeval_lines(const LongEvalSample& sample, std::string_view generation);
bool score_longeval_topics(const LongEvalSample& sample, std::string_view generation);

// Greedy argmax decoding (ties to the lowest token id); stops at any stop
// string or after max_new_tokens.
template <class S>
std::string greedy_decode(const Model<S>& model, const BpeVocab& vocab,
                          const std::vector<std::int32_t>& prompt_ids,
                          const std::vector<std::string>& stop_strings,
                          std::int64_t max_new_tokens);

struct LongEvalResult {
    std::int64_t distance = 0;
    std::int64_t n_samples = 0;
    double accuracy = 0.0;
};

// JSONL contract: {"distance","n_samples","accuracy"} per line.
void write_longeval_jsonl(const std::filesystem::path& path,
                          const std::vector<LongEvalResult>& results);

// ----------------------------- power-law fits ------------------------------

struct FitPoint {
    double flops = 0.0;
    double loss = 0.0;
};

// L = a * C^(-b) + c. Log-space least squares with c scanned on a grid
// (2 points pin c = 0).
struct PowerLawFit {
    double a = 0.0, b = 0.0, c = 0.0;
    double log_sse = 0.0;
    std::vector<double> residuals;  // log(L - c) - fit, per point
};

PowerLawFit fit_power_law(const std::vector<FitPoint>& points);

double power_law_loss_at(const PowerLawFit& fit, double flops);
double power_law_flops_at(const PowerLawFit& fit, double loss);

// Table-style queries between a fit and a measured point.
double iso_flop_loss_delta(const PowerLawFit& fit, const FitPoint& point);
double iso_loss_flop_ratio(const PowerLawFit& fit, const FitPoint& point);

extern template EvalSeries loss_vs_position(const Model<double>&, const PackedShard&, std::int64_t,
                                            std::int64_t);
extern template EvalSeries loss_vs_position(const Model<float>&, const PackedShard&, std::int64_t,
                                            std::int64_t);
extern template std::string greedy_decode(const Model<double>&, const BpeVocab&,
                                          const std::vector<std::int32_t>&,
                                          const std::vector<std::string>&, std::int64_t);
extern template std::string greedy_decode(const Model<float>&, const BpeVocab&,
                                          const std::vector<std::int32_t>&,
                                          const std::vector<std::string>&, std::int64_t);

}  // namespace gptlab
