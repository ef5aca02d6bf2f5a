// SPDX-License-Identifier: Apache-2.0
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gptlab/commands.hpp"
#include "gptlab/eval.hpp"
#include "gptlab/train.hpp"

namespace py = pybind11;
using namespace gptlab;

namespace {

py::dict plan_to_dict(const TrainPlan& plan) {
    py::list phases;
    for (const auto& ph : plan.phases) {
        py::dict d;
        d["tokens"] = ph.tokens;
        d["seq_len"] = ph.seq_len;
        d["sequences_per_batch"] = ph.sequences_per_batch;
        phases.append(d);
    }
    py::dict out;
    out["phases"] = phases;
    out["tokens_per_batch"] = plan.tokens_per_batch;
    return out;
}

py::dict sample_to_dict(const LongEvalSample& s) {
    py::dict d;
    d["prompt"] = s.prompt;
    d["answer"] = s.answer;
    d["distance"] = s.distance;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "decoder pretraining laboratory core";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<DataError>(m, "DataError");
    py::register_exception<NumericError>(m, "NumericError");

    // recipe formulas
    m.def("ffn_width", &ffn_width, py::arg("d_model"));
    m.def("alibi_slopes", &alibi_slopes, py::arg("n_heads"));
    m.def("alpha_decay", &alpha_decay, py::arg("tokens_per_parameter"));
    m.def(
        "lr_at",
        [](std::int64_t tokens_seen, double max_base_lr, std::int64_t warmup_tokens,
           std::int64_t total_tokens, double final_lr) {
            return lr_at(tokens_seen,
                         LrSchedule::from_final_lr(max_base_lr, warmup_tokens, total_tokens,
                                                   final_lr));
        },
        py::arg("tokens_seen"), py::arg("max_base_lr"), py::arg("warmup_tokens"),
        py::arg("total_tokens"), py::arg("final_lr"));
    m.def(
        "lr_for",
        [](const std::string& role, double base_lr, double m_ratio) {
            return lr_for(mup_role_from_string(role), base_lr, m_ratio);
        },
        py::arg("role"), py::arg("base_lr"), py::arg("m"));
    m.def(
        "build_plan",
        [](std::int64_t total_tokens, double long_fraction, std::int64_t short_len,
           std::int64_t long_len, std::int64_t tokens_per_batch) {
            return plan_to_dict(
                build_plan(total_tokens, long_fraction, short_len, long_len, tokens_per_batch));
        },
        py::arg("total_tokens"), py::arg("long_fraction"), py::arg("short_len"),
        py::arg("long_len"), py::arg("tokens_per_batch"));

    // data pipeline
    m.def("count_scalar_values",
          [](const std::string& text) { return count_scalar_values(text); });
    m.def(
        "filter_short",
        [](const std::string& text, std::int64_t min_chars) {
            return filter_short(Document{"x", "x", text}, min_chars);
        },
        py::arg("text"), py::arg("min_chars") = 200);
    m.def(
        "shingle",
        [](const std::string& text, std::int64_t k) { return shingle(text, k); },
        py::arg("text"), py::arg("k"));
    m.def(
        "dedup",
        [](const std::vector<std::map<std::string, std::string>>& docs, double threshold,
           std::int64_t shingle_k, std::int64_t n_perm, std::int64_t bands, std::int64_t rows,
           std::uint64_t seed) {
            Corpus corpus;
            for (const auto& d : docs) {
                corpus.push_back(Document{d.at("id"),
                                          d.count("source") ? d.at("source") : "unknown",
                                          d.at("text")});
            }
            DedupParams params{threshold, shingle_k, n_perm, bands, rows, seed};
            auto [kept, report] = dedup(corpus, params);
            std::vector<std::string> kept_ids;
            for (const auto& doc : kept) kept_ids.push_back(doc.id);
            py::dict rep;
            rep["docs_in"] = report.docs_in;
            rep["docs_kept"] = report.docs_kept;
            rep["bytes_in"] = report.bytes_in;
            rep["duplicate_bytes"] = report.duplicate_bytes;
            return py::make_tuple(kept_ids, rep);
        },
        py::arg("docs"), py::arg("threshold") = 0.8, py::arg("shingle_k") = 13,
        py::arg("n_perm") = 128, py::arg("bands") = 16, py::arg("rows") = 8, py::arg("seed") = 0);

    py::class_<BpeVocab>(m, "Vocab")
        .def_static("byte_level", &BpeVocab::byte_level)
        .def_static("train", &BpeVocab::train, py::arg("texts"), py::arg("target_vocab_size"))
        .def_static("load_gpt2", &BpeVocab::load_gpt2, py::arg("vocab_json"),
                    py::arg("merges_txt"))
        .def("encode",
             [](const BpeVocab& v, const std::string& text) { return v.encode(text); })
        .def("decode", &BpeVocab::decode)
        .def("save", &BpeVocab::save, py::arg("vocab_json"), py::arg("merges_txt"))
        .def_property_readonly("size", &BpeVocab::size)
        .def_property_readonly("eos_id", &BpeVocab::eos_id);

    // evaluation helpers
    m.def("moving_average", &moving_average, py::arg("series"), py::arg("window"));
    m.def("gen_longeval_lines",
          [](std::int64_t n, std::uint64_t seed) { return sample_to_dict(gen_longeval_lines(n, seed)); },
          py::arg("n_lines"), py::arg("seed"));
    m.def("gen_longeval_topics",
          [](std::int64_t n, std::uint64_t seed) { return sample_to_dict(gen_longeval_topics(n, seed)); },
          py::arg("n_topics"), py::arg("seed"));

    py::class_<PowerLawFit>(m, "PowerLawFit")
        .def_readonly("a", &PowerLawFit::a)
        .def_readonly("b", &PowerLawFit::b)
        .def_readonly("c", &PowerLawFit::c)
        .def("loss_at", [](const PowerLawFit& f, double flops) { return power_law_loss_at(f, flops); })
        .def("flops_at", [](const PowerLawFit& f, double loss) { return power_law_flops_at(f, loss); })
        .def("iso_loss_flop_ratio",
             [](const PowerLawFit& f, double flops, double loss) {
                 return iso_loss_flop_ratio(f, FitPoint{flops, loss});
             })
        .def("iso_flop_loss_delta", [](const PowerLawFit& f, double flops, double loss) {
            return iso_flop_loss_delta(f, FitPoint{flops, loss});
        });
    m.def(
        "fit_power_law",
        [](const std::vector<std::pair<double, double>>& pts) {
            std::vector<FitPoint> points;
            for (const auto& [flops, loss] : pts) points.push_back({flops, loss});
            return fit_power_law(points);
        },
        py::arg("points"));

    // pipeline commands (config-file driven, same artifacts as the CLI)
    m.def(
        "preprocess",
        [](const std::filesystem::path& config) {
            auto cfg = ExperimentConfig::load(config);
            cfg.validate();
            const auto r = cmd_preprocess(cfg);
            py::dict d;
            d["docs_in"] = r.report.docs_in;
            d["docs_kept"] = r.report.docs_kept;
            d["vocab_size"] = r.vocab_size;
            return d;
        },
        py::arg("config"));
    m.def(
        "train",
        [](const std::filesystem::path& config, std::int64_t max_steps) {
            auto cfg = ExperimentConfig::load(config);
            cfg.validate();
            const auto r = cmd_train(cfg, std::nullopt, max_steps);
            py::dict d;
            d["steps"] = r.steps_done;
            d["tokens_seen"] = r.tokens_seen;
            d["final_loss"] = r.final_loss;
            d["checkpoint"] = r.final_checkpoint.string();
            return d;
        },
        py::arg("config"), py::arg("max_steps") = 0);
    m.def(
        "evaluate",
        [](const std::filesystem::path& config, const std::filesystem::path& checkpoint,
           const std::string& mode) {
            auto cfg = ExperimentConfig::load(config);
            cfg.validate();
            cmd_eval(cfg, checkpoint, mode);
        },
        py::arg("config"), py::arg("checkpoint"), py::arg("mode") = "position_loss");
    m.def(
        "sweep",
        [](const std::filesystem::path& config) {
            auto cfg = ExperimentConfig::load(config);
            cfg.validate();
            const auto r = cmd_sweep(cfg);
            py::list trials;
            for (const auto& t : r.trials) {
                py::dict d;
                d["trial_id"] = t.trial_id;
                d["base_lr"] = t.hp.base_lr;
                d["base_init_std"] = t.hp.base_init_std;
                d["emb_multiplier"] = t.hp.emb_multiplier;
                d["out_multiplier"] = t.hp.out_multiplier;
                d["final_loss"] = t.final_loss;
                d["diverged"] = t.diverged;
                trials.append(d);
            }
            py::dict out;
            out["trials"] = trials;
            out["best"] = r.best.has_value() ? py::cast(*r.best) : py::none();
            return out;
        },
        py::arg("config"));
}
