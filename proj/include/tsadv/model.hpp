#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "tsadv/autodiff.hpp"
#include "tsadv/tensor.hpp"

namespace tsadv {

// Both GNLM embeddings always project onto this many dimensions.
inline constexpr std::size_t kGnlmEmbedding = 64;

struct ConvBlockConfig {
  std::size_t filters = 32;
  std::size_t kernel = 5;
  friend bool operator==(const ConvBlockConfig&, const ConvBlockConfig&) = default;
};

// conv -> relu -> [gnlm] -> maxpool per block, then global average pool and a dense head.
struct ModelConfig {
  std::size_t in_channels = 3;
  std::size_t num_classes = 20;
  std::vector<ConvBlockConfig> conv_blocks = {{32, 5}, {64, 5}, {64, 5}};
  bool use_gnlm = false;
  std::uint64_t seed = 42;
  std::size_t pool_window = 2;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Prediction {
  Tensor logits;
  Tensor probs;
  std::size_t label = 0;
};

Prediction make_prediction(const Tensor& logits);

struct CrossEntropyTarget {
  std::size_t label = 0;
};

// KL(softmax(reference) || softmax(model(x))) with the reference held fixed.
struct KlTarget {
  Tensor reference_logits;
};

using LossTarget = std::variant<CrossEntropyTarget, KlTarget>;

struct LossAndGrad {
  double loss = 0.0;
  Tensor input_grad;
};

// What attacks are allowed to see of a model. Implemented by Classifier and by
// the small analytic models used in tests.
class DifferentiableModel {
 public:
  virtual ~DifferentiableModel() = default;
  virtual std::size_t num_classes() const = 0;
  virtual Tensor logits(const Tensor& x) const = 0;
  virtual LossAndGrad loss_and_input_grad(const Tensor& x, const LossTarget& target) const = 0;
};

// Names of the parameters in a model's parameter map.
namespace param {
std::string conv_weight(std::size_t block);
std::string conv_bias(std::size_t block);
std::string gnlm_theta(std::size_t block);
std::string gnlm_phi(std::size_t block);
inline const std::string head_weight = "head.weight";
inline const std::string head_bias = "head.bias";
}  // namespace param

class Classifier final : public DifferentiableModel {
 public:
  // Deterministic initialization from config.seed: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases.
  explicit Classifier(ModelConfig config);
  // Restores a classifier from explicit parameters (checkpoint loading). Shapes are validated.
  Classifier(ModelConfig config, std::map<std::string, Tensor> parameters);

  const ModelConfig& config() const noexcept { return config_; }
  const std::map<std::string, Tensor>& parameters() const noexcept { return params_; }
  const Tensor& parameter(const std::string& name) const;
  void set_parameter(const std::string& name, Tensor value);
  std::size_t parameter_count() const;

  std::size_t num_classes() const override { return config_.num_classes; }
  Tensor logits(const Tensor& x) const override;
  LossAndGrad loss_and_input_grad(const Tensor& x, const LossTarget& target) const override;

  using ParamVars = std::map<std::string, Var>;
  // Puts every parameter on the tape: as named differentiable leaves when
  // trainable, as constants otherwise. One binding may feed several forwards.
  ParamVars bind_parameters(Tape& tape, bool trainable) const;
  // Records the forward pass of `input` and returns the logits.
  Var forward(Tape& tape, Var input, const ParamVars& params) const;

 private:
  void check_input(const Tensor& x) const;

  ModelConfig config_;
  std::map<std::string, Tensor> params_;
};

Prediction predict(const Classifier& model, const Tensor& x);

// Shapes every parameter must have for a given config, keyed by parameter name.
std::map<std::string, Shape> expected_parameter_shapes(const ModelConfig& config);

}  // namespace tsadv
