#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "tsadv/data.hpp"
#include "tsadv/model.hpp"

namespace tsadv {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  Classifier model;
  std::optional<NormalizationStats> normalization;
  std::string dataset_checksum;
};

nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Parameter tensors are stored as nested arrays following their shape; doubles
// are printed in shortest round-trip form so load(save(m)) is bit-exact.
nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json tensor_to_nested(const Tensor& t);
Tensor tensor_from_nested(const nlohmann::json& j, const Shape& shape);

}  // namespace tsadv
