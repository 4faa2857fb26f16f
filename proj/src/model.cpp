#include "tsadv/model.hpp"

#include <cmath>

#include "tsadv/error.hpp"
#include "tsadv/rng.hpp"

namespace tsadv {

namespace param {
std::string conv_weight(std::size_t block) { return "block" + std::to_string(block) + ".conv.weight"; }
std::string conv_bias(std::size_t block) { return "block" + std::to_string(block) + ".conv.bias"; }
std::string gnlm_theta(std::size_t block) { return "block" + std::to_string(block) + ".gnlm.theta"; }
std::string gnlm_phi(std::size_t block) { return "block" + std::to_string(block) + ".gnlm.phi"; }
}  // namespace param

void ModelConfig::validate() const {
  if (in_channels < 1) throw ConfigError("model: in_channels must be >= 1");
  if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
  if (conv_blocks.empty()) throw ConfigError("model: at least one conv block is required");
  if (pool_window < 1) throw ConfigError("model: pool_window must be >= 1");
  for (std::size_t i = 0; i < conv_blocks.size(); ++i) {
    if (conv_blocks[i].filters < 1) throw ConfigError("model: block " + std::to_string(i) + " has no filters");
    if (conv_blocks[i].kernel % 2 == 0)
      throw ConfigError("model: block " + std::to_string(i) + " kernel size must be odd");
  }
}

Prediction make_prediction(const Tensor& logits) {
  Prediction p;
  p.logits = logits;
  p.probs = Tensor(logits.shape(), softmax(logits.data()));
  p.label = argmax(logits.data());
  return p;
}

std::map<std::string, Shape> expected_parameter_shapes(const ModelConfig& config) {
  std::map<std::string, Shape> shapes;
  std::size_t channels = config.in_channels;
  for (std::size_t b = 0; b < config.conv_blocks.size(); ++b) {
    const auto& blk = config.conv_blocks[b];
    shapes[param::conv_weight(b)] = {blk.filters, channels, blk.kernel};
    shapes[param::conv_bias(b)] = {blk.filters};
    if (config.use_gnlm) {
      shapes[param::gnlm_theta(b)] = {blk.filters, kGnlmEmbedding};
      shapes[param::gnlm_phi(b)] = {blk.filters, kGnlmEmbedding};
    }
    channels = blk.filters;
  }
  shapes[param::head_weight] = {config.num_classes, channels};
  shapes[param::head_bias] = {config.num_classes};
  return shapes;
}

Classifier::Classifier(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.seed);
  auto uniform = [&](Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = dist(rng);
    return t;
  };

  std::size_t channels = config_.in_channels;
  for (std::size_t b = 0; b < config_.conv_blocks.size(); ++b) {
    const auto& blk = config_.conv_blocks[b];
    params_[param::conv_weight(b)] = uniform({blk.filters, channels, blk.kernel}, channels * blk.kernel);
    params_[param::conv_bias(b)] = Tensor({blk.filters}, 0.0);
    if (config_.use_gnlm) {
      params_[param::gnlm_theta(b)] = uniform({blk.filters, kGnlmEmbedding}, blk.filters);
      params_[param::gnlm_phi(b)] = uniform({blk.filters, kGnlmEmbedding}, blk.filters);
    }
    channels = blk.filters;
  }
  params_[param::head_weight] = uniform({config_.num_classes, channels}, channels);
  params_[param::head_bias] = Tensor({config_.num_classes}, 0.0);
}

Classifier::Classifier(ModelConfig config, std::map<std::string, Tensor> parameters)
    : config_(std::move(config)), params_(std::move(parameters)) {
  config_.validate();
  const auto shapes = expected_parameter_shapes(config_);
  if (shapes.size() != params_.size())
    throw ConfigError("classifier: expected " + std::to_string(shapes.size()) + " parameter tensors, got " +
                      std::to_string(params_.size()));
  for (const auto& [name, shape] : shapes) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("classifier: missing parameter '" + name + "'");
    if (it->second.shape() != shape)
      throw ConfigError("classifier: parameter '" + name + "' has shape " + shape_string(it->second.shape()) +
                        ", expected " + shape_string(shape));
    if (!all_finite(it->second)) throw ConfigError("classifier: parameter '" + name + "' is not finite");
  }
}

const Tensor& Classifier::parameter(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw UsageError("unknown parameter '" + name + "'");
  return it->second;
}

void Classifier::set_parameter(const std::string& name, Tensor value) {
  auto it = params_.find(name);
  if (it == params_.end()) throw UsageError("unknown parameter '" + name + "'");
  require_same_shape(it->second, value, "set_parameter");
  it->second = std::move(value);
}

std::size_t Classifier::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

void Classifier::check_input(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(0) != config_.in_channels)
    throw UsageError("classifier expects input [" + std::to_string(config_.in_channels) + " x T], got " +
                     shape_string(x.shape()));
}

Classifier::ParamVars Classifier::bind_parameters(Tape& tape, bool trainable) const {
  ParamVars vars;
  for (const auto& [name, value] : params_) vars[name] = trainable ? tape.input(value, name) : tape.constant(value);
  return vars;
}

Var Classifier::forward(Tape& tape, Var input, const ParamVars& params) const {
  check_input(tape.value(input));
  Var h = input;
  for (std::size_t b = 0; b < config_.conv_blocks.size(); ++b) {
    h = conv1d(tape, h, params.at(param::conv_weight(b)), params.at(param::conv_bias(b)));
    h = relu(tape, h);
    if (config_.use_gnlm)
      h = gnlm_denoise(tape, h, params.at(param::gnlm_theta(b)), params.at(param::gnlm_phi(b)));
    h = maxpool1d(tape, h, config_.pool_window);
  }
  h = global_avg_pool(tape, h);
  return dense(tape, h, params.at(param::head_weight), params.at(param::head_bias));
}

Tensor Classifier::logits(const Tensor& x) const {
  Tape tape;
  Var in = tape.constant(x);
  return tape.value(forward(tape, in, bind_parameters(tape, false)));
}

LossAndGrad Classifier::loss_and_input_grad(const Tensor& x, const LossTarget& target) const {
  Tape tape;
  Var in = tape.input(x);
  Var logits = forward(tape, in, bind_parameters(tape, false));
  Var loss = std::visit(
      [&](const auto& t) -> Var {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, CrossEntropyTarget>) {
          return softmax_cross_entropy(tape, logits, t.label);
        } else {
          Var ref = tape.constant(t.reference_logits);
          return kl_divergence(tape, ref, logits);
        }
      },
      target);
  LossAndGrad out;
  out.loss = tape.value(loss)[0];
  out.input_grad = tape.backward(loss)[in];
  return out;
}

Prediction predict(const Classifier& model, const Tensor& x) { return make_prediction(model.logits(x)); }

}  // namespace tsadv
