// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gptlab/model.hpp"
#include "gptlab/schedule.hpp"

#include "json.hpp"

namespace gptlab {

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct TrainState {
    std::int64_t step = 0;
    std::int64_t tokens_seen = 0;
    std::int64_t phase_index = 0;
};

// Container layout: magic, version, JSON header with every ModelConfig field
// (plus optional train state), then named tensors with shape, role tag, and
// raw little-endian data. Bit-exact across save/load.
template <class S>
void save_checkpoint(const std::filesystem::path& path, const Model<S>& model,
                     const std::vector<AdamState<S>>* opt_state = nullptr,
                     const TrainState* train_state = nullptr);

ModelConfig peek_checkpoint_config(const std::filesystem::path& path);

template <class S>
Model<S> load_checkpoint(const std::filesystem::path& path,
                         std::vector<AdamState<S>>* opt_state = nullptr,
                         TrainState* train_state = nullptr);

extern template void save_checkpoint(const std::filesystem::path&, const Model<double>&,
                                     const std::vector<AdamState<double>>*, const TrainState*);
extern template void save_checkpoint(const std::filesystem::path&, const Model<float>&,
                                     const std::vector<AdamState<float>>*, const TrainState*);
extern template Model<double> load_checkpoint(const std::filesystem::path&,
                                              std::vector<AdamState<double>>*, TrainState*);
extern template Model<float> load_checkpoint(const std::filesystem::path&,
                                             std::vector<AdamState<float>>*, TrainState*);

}  // namespace gptlab
