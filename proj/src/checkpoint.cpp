// SPDX-License-Identifier: Apache-2.0
#include "gptlab/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace gptlab {

using nlohmann::json;

json model_config_to_json(const ModelConfig& cfg) {
    return json{{"d_model", cfg.d_model},
                {"n_layers", cfg.n_layers},
                {"d_head", cfg.d_head},
                {"d_ffn", cfg.d_ffn},
                {"vocab_size", cfg.vocab_size},
                {"max_learned_positions", cfg.max_learned_positions},
                {"activation", to_string(cfg.activation)},
                {"position_scheme", to_string(cfg.position_scheme)},
                {"parameterization", to_string(cfg.parameterization)},
                {"emb_multiplier", cfg.emb_multiplier},
                {"out_multiplier", cfg.out_multiplier},
                {"base_width", cfg.base_width},
                {"use_biases", cfg.use_biases},
                {"residual_scaling", cfg.residual_scaling},
                {"rope_theta", cfg.rope_theta},
                {"precision", to_string(cfg.precision)}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.d_model = j.at("d_model").get<std::int64_t>();
    cfg.n_layers = j.at("n_layers").get<std::int64_t>();
    cfg.d_head = j.at("d_head").get<std::int64_t>();
    cfg.d_ffn = j.value("d_ffn", std::int64_t(0));
    cfg.vocab_size = j.at("vocab_size").get<std::int64_t>();
    cfg.max_learned_positions = j.value("max_learned_positions", std::int64_t(1024));
    cfg.activation = ffn_kind_from_string(j.value("activation", std::string("swiglu")));
    cfg.position_scheme = position_scheme_from_string(j.value("position_scheme", std::string("alibi")));
    cfg.parameterization =
        parameterization_from_string(j.value("parameterization", std::string("muP")));
    cfg.emb_multiplier = j.value("emb_multiplier", 1.0);
    cfg.out_multiplier = j.value("out_multiplier", 1.0);
    cfg.base_width = j.value("base_width", std::int64_t(256));
    cfg.use_biases = j.value("use_biases", false);
    cfg.residual_scaling = j.value("residual_scaling", true);
    cfg.rope_theta = j.value("rope_theta", 10000.0);
    cfg.precision = precision_from_string(j.value("precision", std::string("f64")));
    cfg.validate();
    return cfg;
}

namespace {

constexpr char kMagic[8] = {'G', 'L', 'A', 'B', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw DataError("checkpoint: truncated file");
    return v;
}

template <class S>
void write_tensor(std::ostream& os, const std::string& name, MupRole role, const Tens<S>& t) {
    write_pod<std::uint16_t>(os, std::uint16_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    write_pod<std::uint8_t>(os, std::uint8_t(role));
    write_pod<std::uint8_t>(os, sizeof(S) == 8 ? 0 : 1);
    write_pod<std::uint8_t>(os, std::uint8_t(t.shape.size()));
    for (const auto d : t.shape) write_pod<std::int64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             std::streamsize(t.data.size() * sizeof(S)));
}

struct TensorRecord {
    std::string name;
    MupRole role;
    std::uint8_t dtype;
    std::vector<std::int64_t> shape;
    std::vector<char> raw;
};

TensorRecord read_tensor(std::istream& is) {
    TensorRecord rec;
    const auto name_len = read_pod<std::uint16_t>(is);
    rec.name.resize(name_len);
    is.read(rec.name.data(), name_len);
    rec.role = MupRole(read_pod<std::uint8_t>(is));
    rec.dtype = read_pod<std::uint8_t>(is);
    const auto ndim = read_pod<std::uint8_t>(is);
    std::int64_t numel = 1;
    for (int i = 0; i < ndim; ++i) {
        rec.shape.push_back(read_pod<std::int64_t>(is));
        numel *= rec.shape.back();
    }
    const std::size_t elem = rec.dtype == 0 ? 8 : 4;
    rec.raw.resize(std::size_t(numel) * elem);
    is.read(rec.raw.data(), std::streamsize(rec.raw.size()));
    if (!is) throw DataError("checkpoint: truncated tensor data for '" + rec.name + "'");
    return rec;
}

}  // namespace

template <class S>
void save_checkpoint(const std::filesystem::path& path, const Model<S>& model,
                     const std::vector<AdamState<S>>* opt_state, const TrainState* train_state) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());

    json header;
    header["model"] = model_config_to_json(model.cfg);
    if (train_state != nullptr) {
        header["train_state"] = {{"step", train_state->step},
                                 {"tokens_seen", train_state->tokens_seen},
                                 {"phase_index", train_state->phase_index}};
    }
    const std::string header_str = header.dump();

    os.write(kMagic, 8);
    write_pod<std::uint32_t>(os, kVersion);
    write_pod<std::uint32_t>(os, std::uint32_t(header_str.size()));
    os.write(header_str.data(), std::streamsize(header_str.size()));

    const auto& params = model.params.all;
    std::uint64_t n_tensors = params.size();
    if (opt_state != nullptr) n_tensors += 2 * params.size();
    write_pod<std::uint64_t>(os, n_tensors);
    for (const auto& p : params) write_tensor(os, p.name, p.role, p.value);
    if (opt_state != nullptr) {
        if (opt_state->size() != params.size()) {
            throw DimensionError("checkpoint: optimizer state count mismatch");
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            const auto& st = (*opt_state)[i];
            Tens<S> empty(params[i].value.shape);
            write_tensor(os, "adam_m." + params[i].name, params[i].role,
                         st.m.numel() > 0 ? st.m : empty);
            write_tensor(os, "adam_v." + params[i].name, params[i].role,
                         st.v.numel() > 0 ? st.v : empty);
        }
    }
    if (!os) throw IoError("checkpoint write failed: " + path.string());
}

ModelConfig peek_checkpoint_config(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path.string());
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) {
        throw DataError("not a checkpoint file: " + path.string());
    }
    const auto version = read_pod<std::uint32_t>(is);
    if (version != kVersion) throw DataError("unsupported checkpoint version");
    const auto header_len = read_pod<std::uint32_t>(is);
    std::string header_str(header_len, '\0');
    is.read(header_str.data(), header_len);
    if (!is) throw DataError("checkpoint: truncated header");
    const json header = json::parse(header_str);
    return model_config_from_json(header.at("model"));
}

template <class S>
Model<S> load_checkpoint(const std::filesystem::path& path, std::vector<AdamState<S>>* opt_state,
                         TrainState* train_state) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path.string());
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) {
        throw DataError("not a checkpoint file: " + path.string());
    }
    const auto version = read_pod<std::uint32_t>(is);
    if (version != kVersion) throw DataError("unsupported checkpoint version");
    const auto header_len = read_pod<std::uint32_t>(is);
    std::string header_str(header_len, '\0');
    is.read(header_str.data(), header_len);
    if (!is) throw DataError("checkpoint: truncated header");
    const json header = json::parse(header_str, nullptr, false);
    if (header.is_discarded()) throw ParseError("checkpoint: malformed header JSON");

    const ModelConfig cfg = model_config_from_json(header.at("model"));
    const std::uint8_t want_dtype = sizeof(S) == 8 ? 0 : 1;
    if ((cfg.precision == Precision::F64) != (want_dtype == 0)) {
        throw ConfigError("checkpoint precision does not match requested scalar type");
    }
    Model<S> model(cfg);
    if (train_state != nullptr) {
        if (header.contains("train_state")) {
            const auto& ts = header.at("train_state");
            train_state->step = ts.at("step").get<std::int64_t>();
            train_state->tokens_seen = ts.at("tokens_seen").get<std::int64_t>();
            train_state->phase_index = ts.at("phase_index").get<std::int64_t>();
        } else {
            *train_state = TrainState{};
        }
    }

    const auto n_tensors = read_pod<std::uint64_t>(is);
    if (opt_state != nullptr) {
        opt_state->assign(model.params.all.size(), AdamState<S>{});
    }
    for (std::uint64_t i = 0; i < n_tensors; ++i) {
        TensorRecord rec = read_tensor(is);
        if (rec.dtype != want_dtype) throw DataError("checkpoint: tensor dtype mismatch");
        std::string target_name = rec.name;
        int kind = 0;  // 0 param, 1 adam m, 2 adam v
        if (target_name.rfind("adam_m.", 0) == 0) {
            kind = 1;
            target_name = target_name.substr(7);
        } else if (target_name.rfind("adam_v.", 0) == 0) {
            kind = 2;
            target_name = target_name.substr(7);
        }
        bool found = false;
        for (std::size_t p = 0; p < model.params.all.size(); ++p) {
            auto& param = model.params.all[p];
            if (param.name != target_name) continue;
            Tens<S> t(rec.shape);
            if (t.data.size() * sizeof(S) != rec.raw.size()) {
                throw DataError("checkpoint: size mismatch for '" + rec.name + "'");
            }
            std::memcpy(t.data.data(), rec.raw.data(), rec.raw.size());
            if (kind == 0) {
                if (t.shape != param.value.shape) {
                    throw DataError("checkpoint: shape mismatch for '" + rec.name + "'");
                }
                param.value = std::move(t);
                param.role = rec.role;
            } else if (opt_state != nullptr) {
                auto& st = (*opt_state)[p];
                (kind == 1 ? st.m : st.v) = std::move(t);
            }
            found = true;
            break;
        }
        if (!found && kind == 0) {
            throw DataError("checkpoint: unknown tensor '" + rec.name + "'");
        }
    }
    return model;
}

template void save_checkpoint(const std::filesystem::path&, const Model<double>&,
                              const std::vector<AdamState<double>>*, const TrainState*);
template void save_checkpoint(const std::filesystem::path&, const Model<float>&,
                              const std::vector<AdamState<float>>*, const TrainState*);
template Model<double> load_checkpoint(const std::filesystem::path&,
                                       std::vector<AdamState<double>>*, TrainState*);
template Model<float> load_checkpoint(const std::filesystem::path&, std::vector<AdamState<float>>*,
                                      TrainState*);

}  // namespace gptlab
