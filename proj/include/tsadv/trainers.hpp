#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tsadv/data.hpp"
#include "tsadv/model.hpp"

namespace tsadv {

enum class Regime { standard, adversarial, trades };
enum class LabelMode { ground_truth, model_prediction };

const char* regime_name(Regime r);
Regime parse_regime(const std::string& name);
const char* label_mode_name(LabelMode m);
LabelMode parse_label_mode(const std::string& name);

struct TrainConfig {
  Regime regime = Regime::standard;
  int epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 0.01;
  double train_epsilon = 0.3;
  int inner_steps = 7;
  int inner_restarts = 1;
  // Weight of the KL term (1 / lambda).
  double trades_beta = 1.0;
  // Half-width of the uniform start noise for the TRADES inner maximization.
  double trades_init_noise = 0.001;
  LabelMode at_label_mode = LabelMode::ground_truth;
  std::uint64_t seed = 42;

  void validate() const;
};

struct EpochStats {
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
};

struct TrainReport {
  Regime regime = Regime::standard;
  std::vector<EpochStats> epochs;
  double final_train_accuracy = 0.0;
  double final_test_accuracy = 0.0;
  bool converged = true;
  std::string note;
};

// Fraction of sequences whose predicted label equals the stored label.
double clean_accuracy(const Classifier& model, const std::vector<LabeledSequence>& sequences);

// Minibatch gradient descent on cross-entropy. Mutates `model`. A non-finite loss
// stops training and clears `converged`; so does finishing at or below
// chance-level train accuracy.
TrainReport train_standard(Classifier& model, const DatasetBundle& bundle, const TrainConfig& config);
// Every minibatch example is replaced by a PGD example (inner_steps steps,
// alpha = 2 eps / inner_steps) computed against the current parameters.
TrainReport train_adversarial(Classifier& model, const DatasetBundle& bundle, const TrainConfig& config);
// CE(clean) + beta * KL(clean || adversarial), inner maximization of the KL term
// by PGD from x + U(-init_noise, init_noise).
TrainReport train_trades(Classifier& model, const DatasetBundle& bundle, const TrainConfig& config);

TrainReport train(Classifier& model, const DatasetBundle& bundle, const TrainConfig& config);

// Seed of the inner attack for one training example in one epoch.
std::uint64_t inner_attack_seed(std::uint64_t train_seed, int epoch, const std::string& example_id);

// PGD on KL(softmax(reference) || softmax(model(x'))) used as the TRADES inner step.
Tensor trades_inner_max(const Classifier& model, const Tensor& x, const Tensor& reference_logits, double epsilon,
                        int steps, double init_noise, std::uint64_t seed);

}  // namespace tsadv
