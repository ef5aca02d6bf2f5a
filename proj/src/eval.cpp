// SPDX-License-Identifier: Apache-2.0
#include "gptlab/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "json.hpp"

namespace gptlab {

template <class S>
EvalSeries loss_vs_position(const Model<S>& model, const PackedShard& eval_set,
                            std::int64_t eval_len, std::int64_t max_sequences) {
    if (eval_len < 2) throw ConfigError("loss_vs_position: eval_len must be >= 2");
    if (eval_set.seq_len < eval_len) {
        throw DataError("loss_vs_position: eval set packed shorter than eval_len");
    }
    const std::int64_t n_seq =
        max_sequences > 0 ? std::min(max_sequences, eval_set.count) : eval_set.count;
    if (n_seq == 0) throw DataError("loss_vs_position: empty eval set");

    EvalSeries series;
    series.eval_len = eval_len;
    std::vector<double> pos_sum(std::size_t(eval_len - 1), 0.0);
    for (std::int64_t s = 0; s < n_seq; ++s) {
        const auto* begin = eval_set.tokens.data() + s * eval_set.seq_len;
        std::vector<std::int32_t> seq(begin, begin + eval_len);
        const auto losses = model.sequence_loss(seq);
        for (std::size_t t = 0; t < losses.size(); ++t) pos_sum[t] += double(losses[t]);
    }
    series.mean_loss.resize(pos_sum.size());
    series.counts.assign(pos_sum.size(), n_seq);
    double total = 0.0;
    for (std::size_t t = 0; t < pos_sum.size(); ++t) {
        series.mean_loss[t] = pos_sum[t] / double(n_seq);
        total += pos_sum[t];
    }
    series.overall_mean = total / double(n_seq * (eval_len - 1));
    return series;
}

std::vector<double> moving_average(const std::vector<double>& series, std::int64_t window) {
    if (window < 1) throw ConfigError("moving_average: window must be >= 1");
    std::vector<double> out(series.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < series.size(); ++i) {
        acc += series[i];
        if (std::int64_t(i) >= window) acc -= series[i - std::size_t(window)];
        const std::int64_t n = std::min<std::int64_t>(window, std::int64_t(i) + 1);
        out[i] = acc / double(n);
    }
    return out;
}

void write_eval_series_csv(const std::filesystem::path& path, const EvalSeries& series,
                           std::int64_t smoothing_window) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write eval series: " + path.string());
    const auto smoothed = moving_average(series.mean_loss, smoothing_window);
    os << "position,mean_loss,count,smoothed_loss\n";
    os << std::setprecision(12);
    for (std::size_t i = 0; i < series.mean_loss.size(); ++i) {
        os << (i + 1) << ',' << series.mean_loss[i] << ',' << series.counts[i] << ','
           << smoothed[i] << '\n';
    }
}

// ----------------------------- LongEval -----------------------------------

namespace {

constexpr std::array<const char*, 40> kAdjectives = {
    "torpid",  "moaning",  "tacit",    "brave",   "quiet",   "rapid",   "sullen",  "gentle",
    "crimson", "hollow",   "vivid",    "mellow",  "rugged",  "sleek",   "wary",    "zealous",
    "candid",  "dapper",   "earnest",  "fickle",  "grumpy",  "hasty",   "idle",    "jolly",
    "keen",    "limber",   "modest",   "nimble",  "opaque",  "placid",  "quaint",  "restless",
    "sturdy",  "tranquil", "uncommon", "valiant", "wistful", "youthful", "zesty",   "brisk"};

constexpr std::array<const char*, 40> kNouns = {
    "kid",      "conversation", "colonial", "lantern", "harbor",  "meadow",  "compass", "ribbon",
    "anvil",    "beacon",       "cistern",  "dormer",  "ember",   "fjord",   "garnet",  "hamlet",
    "ingot",    "jetty",        "kestrel",  "ledger",  "mortar",  "nectar",  "obelisk", "paddock",
    "quarry",   "rampart",      "saddle",   "thicket", "urn",     "vestry",  "wharf",   "yarrow",
    "zephyr",   "bastion",      "culvert",  "dynamo",  "estuary", "foundry", "gully",   "hearth"};

constexpr std::array<const char*, 40> kTopics = {
    "urban gardening",     "quantum computing",   "medieval architecture",
    "tidal energy",        "origami engineering", "coral reef restoration",
    "ancient trade routes", "fermented foods",     "glacier monitoring",
    "typeface design",     "beekeeping",          "radio astronomy",
    "canal locks",         "mushroom foraging",   "paper manufacturing",
    "mountain railways",   "weather balloons",    "tea ceremonies",
    "lighthouse keeping",  "soil chemistry",      "kite photography",
    "clockmaking",         "salt harvesting",     "river navigation",
    "textile dyeing",      "cave mapping",        "orchard grafting",
    "wind tunnel testing", "bridge acoustics",    "desert irrigation",
    "volcanic soils",      "harbor dredging",     "alpine botany",
    "steam engines",       "map projections",     "bird migration",
    "cheese aging",        "tidal pools",         "meteor showers",
    "timber framing"};

std::string line_name(std::int64_t index) {
    const std::int64_t n = std::int64_t(kAdjectives.size()) * std::int64_t(kNouns.size());
    const std::int64_t base = index % n;
    std::string name = std::string(kAdjectives[std::size_t(base / kNouns.size())]) + "-" +
                       kNouns[std::size_t(base % kNouns.size())];
    if (index >= n) name += "-" + std::to_string(index / n);
    return name;
}

std::string topic_name(std::int64_t index) {
    if (index < std::int64_t(kTopics.size())) return kTopics[std::size_t(index)];
    return std::string("assorted subject ") + std::to_string(index);
}

}  // namespace

LongEvalSample gen_longeval_lines(std::int64_t n_lines, std::uint64_t seed) {
    if (n_lines < 1) throw ConfigError("gen_longeval_lines: n_lines must be >= 1");
    Rng rng(seed_fork(seed, "longeval_lines"));
    // unique names over a shuffled index space
    std::vector<std::int64_t> ids(static_cast<std::size_t>(n_lines));
    std::iota(ids.begin(), ids.end(), 0);
    for (std::int64_t i = n_lines - 1; i > 0; --i) {
        const std::int64_t j = rng.uniform_int(0, i);
        std::swap(ids[std::size_t(i)], ids[std::size_t(j)]);
    }
    std::vector<std::int64_t> values(static_cast<std::size_t>(n_lines));
    for (auto& v : values) v = rng.uniform_int(10000, 99999);
    const std::int64_t target = rng.uniform_int(0, n_lines - 1);

    LongEvalSample sample;
    sample.distance = n_lines;
    sample.answer = std::to_string(values[std::size_t(target)]);
    std::string prompt =
        "Below is a record of lines I want you to remember. Each line begins with 'line "
        "<line name>' and ends with a numerical <REGISTER_CONTENT>.\n";
    for (std::int64_t i = 0; i < n_lines; ++i) {
        prompt += "line " + line_name(ids[std::size_t(i)]) + ": REGISTER_CONTENT is <" +
                  std::to_string(values[std::size_t(i)]) + ">\n";
    }
    const std::string target_name = line_name(ids[std::size_t(target)]);
    prompt += "What is the <REGISTER_CONTENT> in line " + target_name + "?\n";
    prompt += "Line " + target_name + ": <REGISTER_CONTENT> is";
    sample.prompt = std::move(prompt);
    return sample;
}

LongEvalSample gen_longeval_topics(std::int64_t n_topics, std::uint64_t seed) {
    if (n_topics < 1) throw ConfigError("gen_longeval_topics: n_topics must be >= 1");
    Rng rng(seed_fork(seed, "longeval_topics"));
    std::vector<std::int64_t> ids(static_cast<std::size_t>(std::max<std::int64_t>(n_topics,
                                                                     std::int64_t(kTopics.size()))));
    std::iota(ids.begin(), ids.end(), 0);
    for (std::int64_t i = std::int64_t(ids.size()) - 1; i > 0; --i) {
        const std::int64_t j = rng.uniform_int(0, i);
        std::swap(ids[std::size_t(i)], ids[std::size_t(j)]);
    }

    LongEvalSample sample;
    sample.distance = n_topics;
    sample.answer = topic_name(ids[0]);
    std::string prompt =
        "Below is a record of our previous conversation on " + std::to_string(n_topics) +
        " different topics. You are the ASSISTANT, and I am the USER. At the beginning of each "
        "topic, the USER will say 'I would like to discuss the topic of <TOPIC>'. Memorize each "
        "<TOPIC>. At the end of the record, I will ask you to retrieve the first topic.\n";
    for (std::int64_t i = 0; i < n_topics; ++i) {
        const std::string topic = topic_name(ids[std::size_t(i)]);
        prompt += "USER: I would like to discuss the topic of " + topic + "\n";
        prompt += "ASSISTANT: Sure! I am happy to go over " + topic +
                  " with you, including its history, common techniques, and why people find it "
                  "interesting.\n";
        prompt += "USER: That was a helpful overview, thank you.\n";
    }
    prompt += "USER: What is the first topic we discussed?\n";
    prompt += " ASSISTANT: The first topic is";
    sample.prompt = std::move(prompt);
    return sample;
}

std::optional<std::int64_t> parse_last_number(std::string_view text) {
    std::optional<std::int64_t> result;
    std::size_t i = 0;
    while (i < text.size()) {
        if (std::isdigit(static_cast<unsigned char>(text[i]))) {
            std::int64_t value = 0;
            while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
                value = value * 10 + (text[i] - '0');
                ++i;
            }
            result = value;
        } else {
            ++i;
        }
    }
    return result;
}

bool score_longeval_lines(const LongEvalSample& sample, std::string_view generation) {
    const auto parsed = parse_last_number(generation);
    if (!parsed.has_value()) return false;
    return *parsed == std::stoll(sample.answer);
}

static std::string lowercase(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return char(std::tolower(c)); });
    return out;
}

bool score_longeval_topics(const LongEvalSample& sample, std::string_view generation) {
    std::string g = lowercase(generation);
    const std::size_t start = g.find_first_not_of(" \t\n");
    if (start == std::string::npos) return false;
    g = g.substr(start);
    return g.rfind(lowercase(sample.answer), 0) == 0;
}

template <class S>
std::string greedy_decode(const Model<S>& model, const BpeVocab& vocab,
                          const std::vector<std::int32_t>& prompt_ids,
                          const std::vector<std::string>& stop_strings,
                          std::int64_t max_new_tokens) {
    std::vector<std::int32_t> ids = prompt_ids;
    std::string generated;
    for (std::int64_t n = 0; n < max_new_tokens; ++n) {
        const auto logits = model.next_logits(ids);
        std::int32_t best = 0;
        for (std::size_t j = 1; j < logits.size(); ++j) {
            if (logits[j] > logits[std::size_t(best)]) best = std::int32_t(j);  // ties: lowest id
        }
        ids.push_back(best);
        generated += vocab.token_bytes(best);
        for (const auto& stop : stop_strings) {
            const auto pos = generated.find(stop);
            if (pos != std::string::npos) return generated.substr(0, pos);
        }
    }
    return generated;
}

void write_longeval_jsonl(const std::filesystem::path& path,
                          const std::vector<LongEvalResult>& results) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write longeval results: " + path.string());
    for (const auto& r : results) {
        os << nlohmann::json{{"distance", r.distance},
                             {"n_samples", r.n_samples},
                             {"accuracy", r.accuracy}}
                  .dump()
           << '\n';
    }
}

// ----------------------------- power-law fits ------------------------------

namespace {

struct LinearFit {
    double intercept = 0.0, slope = 0.0, sse = 0.0;
};

LinearFit linear_lsq(const std::vector<double>& xs, const std::vector<double>& ys) {
    const double n = double(xs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    LinearFit fit;
    const double denom = n * sxx - sx * sx;
    if (denom == 0.0) throw DomainError("fit_power_law: degenerate flops values");
    fit.slope = (n * sxy - sx * sy) / denom;
    fit.intercept = (sy - fit.slope * sx) / n;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double r = ys[i] - (fit.intercept + fit.slope * xs[i]);
        fit.sse += r * r;
    }
    return fit;
}

}  // namespace

PowerLawFit fit_power_law(const std::vector<FitPoint>& points) {
    if (points.size() < 2) throw DomainError("fit_power_law: need at least 2 points");
    double min_loss = points[0].loss;
    for (const auto& p : points) {
        if (p.flops <= 0.0 || p.loss <= 0.0) {
            throw DomainError("fit_power_law: flops and losses must be positive");
        }
        min_loss = std::min(min_loss, p.loss);
    }
    std::vector<double> xs(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) xs[i] = std::log(points[i].flops);

    // c grid: 0 first, then a geometric sweep below the smallest loss.
    std::vector<double> c_grid{0.0};
    if (points.size() >= 3) {
        const int grid_n = 400;
        for (int g = 0; g < grid_n; ++g) {
            const double frac = std::pow(10.0, -6.0 + 6.0 * double(g) / double(grid_n - 1));
            c_grid.push_back(min_loss * frac * 0.999999);
        }
    }

    PowerLawFit best;
    bool have_best = false;
    double best_linear_sse = 0.0;
    std::vector<double> ys(points.size());
    for (const double c : c_grid) {
        bool valid = true;
        for (std::size_t i = 0; i < points.size(); ++i) {
            const double shifted = points[i].loss - c;
            if (shifted <= 0.0) {
                valid = false;
                break;
            }
            ys[i] = std::log(shifted);
        }
        if (!valid) continue;
        const LinearFit lin = linear_lsq(xs, ys);
        // (a, b) come from the log-space fit; c is selected by the
        // reconstructed curve's linear-space error, which stays well-behaved
        // as c approaches the smallest loss.
        const double a = std::exp(lin.intercept);
        const double b = -lin.slope;
        double linear_sse = 0.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            const double r = points[i].loss - (a * std::pow(points[i].flops, -b) + c);
            linear_sse += r * r;
        }
        if (!have_best || linear_sse < best_linear_sse) {
            best.a = a;
            best.b = b;
            best.c = c;
            best.log_sse = lin.sse;
            best_linear_sse = linear_sse;
            have_best = true;
        }
    }
    if (!have_best) throw DomainError("fit_power_law: no admissible irreducible-loss value");
    best.residuals.resize(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        best.residuals[i] = std::log(points[i].loss - best.c) -
                            (std::log(best.a) - best.b * xs[i]);
    }
    return best;
}

double power_law_loss_at(const PowerLawFit& fit, double flops) {
    if (flops <= 0.0) throw DomainError("power_law_loss_at: flops must be positive");
    return fit.a * std::pow(flops, -fit.b) + fit.c;
}

double power_law_flops_at(const PowerLawFit& fit, double loss) {
    if (loss <= fit.c) throw DomainError("power_law_flops_at: loss at or below irreducible term");
    if (fit.b == 0.0) throw DomainError("power_law_flops_at: flat fit");
    return std::pow((loss - fit.c) / fit.a, -1.0 / fit.b);
}

double iso_flop_loss_delta(const PowerLawFit& fit, const FitPoint& point) {
    return point.loss - power_law_loss_at(fit, point.flops);
}

double iso_loss_flop_ratio(const PowerLawFit& fit, const FitPoint& point) {
    if (point.flops <= 0.0) throw DomainError("iso_loss_flop_ratio: flops must be positive");
    return power_law_flops_at(fit, point.loss) / point.flops;
}

template EvalSeries loss_vs_position(const Model<double>&, const PackedShard&, std::int64_t,
                                     std::int64_t);
template EvalSeries loss_vs_position(const Model<float>&, const PackedShard&, std::int64_t,
                                     std::int64_t);
template std::string greedy_decode(const Model<double>&, const BpeVocab&,
                                   const std::vector<std::int32_t>&,
                                   const std::vector<std::string>&, std::int64_t);
template std::string greedy_decode(const Model<float>&, const BpeVocab&,
                                   const std::vector<std::int32_t>&,
                                   const std::vector<std::string>&, std::int64_t);

}  // namespace gptlab
