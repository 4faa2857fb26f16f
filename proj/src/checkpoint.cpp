#include "tsadv/checkpoint.hpp"

#include <fstream>
#include <functional>
#include <iterator>

#include "tsadv/error.hpp"

namespace tsadv {

using nlohmann::json;

json model_config_to_json(const ModelConfig& config) {
  json blocks = json::array();
  for (const auto& b : config.conv_blocks) blocks.push_back({{"filters", b.filters}, {"kernel", b.kernel}});
  return {{"in_channels", config.in_channels}, {"num_classes", config.num_classes},
          {"conv_blocks", std::move(blocks)},  {"use_gnlm", config.use_gnlm},
          {"seed", config.seed},               {"pool_window", config.pool_window}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.in_channels = j.value("in_channels", c.in_channels);
  c.num_classes = j.value("num_classes", c.num_classes);
  if (j.contains("conv_blocks")) {
    c.conv_blocks.clear();
    for (const auto& b : j.at("conv_blocks"))
      c.conv_blocks.push_back({b.at("filters").get<std::size_t>(), b.at("kernel").get<std::size_t>()});
  }
  c.use_gnlm = j.value("use_gnlm", c.use_gnlm);
  c.seed = j.value("seed", c.seed);
  c.pool_window = j.value("pool_window", c.pool_window);
  c.validate();
  return c;
}

json tensor_to_nested(const Tensor& t) {
  std::function<json(std::size_t, std::size_t)> build = [&](std::size_t axis, std::size_t offset) -> json {
    if (t.rank() == 0) return t[0];
    json arr = json::array();
    std::size_t stride = 1;
    for (std::size_t a = axis + 1; a < t.rank(); ++a) stride *= t.shape()[a];
    for (std::size_t i = 0; i < t.shape()[axis]; ++i) {
      if (axis + 1 == t.rank())
        arr.push_back(t[offset + i]);
      else
        arr.push_back(build(axis + 1, offset + i * stride));
    }
    return arr;
  };
  return build(0, 0);
}

Tensor tensor_from_nested(const json& j, const Shape& shape) {
  std::vector<double> data;
  data.reserve(shape_size(shape));
  std::function<void(const json&, std::size_t)> walk = [&](const json& node, std::size_t axis) {
    if (axis == shape.size()) {
      data.push_back(node.get<double>());
      return;
    }
    if (!node.is_array() || node.size() != shape[axis])
      throw LoadError("checkpoint tensor does not match shape " + shape_string(shape));
    for (const auto& child : node) walk(child, axis + 1);
  };
  walk(j, 0);
  return Tensor(shape, std::move(data));
}

json checkpoint_to_json(const Checkpoint& ckpt) {
  json params = json::object();
  for (const auto& [name, t] : ckpt.model.parameters())
    params[name] = {{"shape", t.shape()}, {"data", tensor_to_nested(t)}};
  json j = {{"format_version", kCheckpointFormatVersion},
            {"kind", "tsadv-checkpoint"},
            {"config", model_config_to_json(ckpt.model.config())},
            {"dataset_checksum", ckpt.dataset_checksum},
            {"parameters", std::move(params)}};
  if (ckpt.normalization)
    j["normalization"] = {{"mean", ckpt.normalization->mean}, {"stddev", ckpt.normalization->stddev}};
  else
    j["normalization"] = nullptr;
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (j.at("format_version").get<int>() != kCheckpointFormatVersion)
      throw LoadError("unsupported checkpoint format_version " + j.at("format_version").dump());
    ModelConfig config = model_config_from_json(j.at("config"));
    std::map<std::string, Tensor> params;
    for (const auto& [name, entry] : j.at("parameters").items()) {
      const auto shape = entry.at("shape").get<Shape>();
      params[name] = tensor_from_nested(entry.at("data"), shape);
    }
    std::optional<NormalizationStats> norm;
    if (j.contains("normalization") && !j.at("normalization").is_null())
      norm = NormalizationStats{j["normalization"].at("mean").get<std::vector<double>>(),
                                j["normalization"].at("stddev").get<std::vector<double>>()};
    return Checkpoint{Classifier(std::move(config), std::move(params)), std::move(norm),
                      j.value("dataset_checksum", std::string{})};
  } catch (const json::exception& e) {
    throw LoadError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(ckpt).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw LoadError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace tsadv
