#include "tsadv/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "tsadv/attacks.hpp"
#include "tsadv/error.hpp"
#include "tsadv/rng.hpp"

namespace tsadv {
namespace {

// Stream tags keep shuffling and inner-attack randomness independent, so a
// degenerate inner attack leaves the shuffle order untouched.
constexpr std::uint64_t kShuffleStream = 0x5348554646ULL;
constexpr std::uint64_t kInnerStream = 0x494e4e4552ULL;

struct ExampleOutcome {
  double loss = 0.0;
  bool correct = false;
};

using GradMap = std::map<std::string, Tensor>;

void accumulate(GradMap& acc, const std::map<std::string, Tensor>& grads) {
  for (const auto& [name, g] : grads) {
    auto it = acc.find(name);
    if (it == acc.end())
      acc.emplace(name, g);
    else
      it->second += g;
  }
}

double majority_rate(const std::vector<LabeledSequence>& seqs, std::size_t num_classes) {
  if (seqs.empty()) return 0.0;
  std::vector<std::size_t> counts(num_classes, 0);
  for (const auto& s : seqs) ++counts[s.label];
  return static_cast<double>(*std::max_element(counts.begin(), counts.end())) / static_cast<double>(seqs.size());
}

// Cross-entropy step on a single (possibly attacked) input.
ExampleOutcome ce_step(const Classifier& model, const Tensor& input, std::size_t label, GradMap& acc) {
  Tape tape;
  Var x = tape.constant(input);
  auto params = model.bind_parameters(tape, true);
  Var logits = model.forward(tape, x, params);
  Var loss = softmax_cross_entropy(tape, logits, label);
  ExampleOutcome out{tape.value(loss)[0], argmax(tape.value(logits).data()) == label};
  accumulate(acc, tape.backward(loss).by_name());
  return out;
}

template <typename StepFn>
TrainReport run_loop(Classifier& model, const DatasetBundle& bundle, TrainConfig config, Regime regime,
                     StepFn&& step) {
  config.regime = regime;
  config.validate();
  if (bundle.train.empty()) throw UsageError("training split is empty");
  if (!bundle.normalized()) throw UsageError("training expects a normalized dataset");

  TrainReport report;
  report.regime = config.regime;
  Rng shuffle_rng(derive_seed(config.seed, kShuffleStream));
  std::vector<std::size_t> order(bundle.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < config.epochs && report.converged; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      GradMap grads;
      for (std::size_t k = start; k < end; ++k) {
        const auto& seq = bundle.train[order[k]];
        const ExampleOutcome o = step(model, seq, inner_attack_seed(config.seed, epoch, seq.id), grads);
        loss_sum += o.loss;
        correct += o.correct ? 1 : 0;
      }
      bool finite = std::isfinite(loss_sum);
      for (const auto& [_, g] : grads) finite = finite && all_finite(g);
      if (!finite) {
        report.converged = false;
        report.note = "non-finite loss or gradient in epoch " + std::to_string(epoch);
        break;
      }
      const double step_size = config.learning_rate / static_cast<double>(end - start);
      for (const auto& [name, g] : grads) {
        Tensor p = model.parameter(name);
        for (std::size_t i = 0; i < p.size(); ++i) p[i] -= step_size * g[i];
        model.set_parameter(name, std::move(p));
      }
    }
    if (!report.converged) break;
    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    stats.val_accuracy = bundle.val.empty() ? 0.0 : clean_accuracy(model, bundle.val);
    report.epochs.push_back(stats);
  }

  report.final_train_accuracy = clean_accuracy(model, bundle.train);
  report.final_test_accuracy = clean_accuracy(model, bundle.test);
  if (report.converged && config.epochs > 0 &&
      report.final_train_accuracy <= majority_rate(bundle.train, bundle.num_classes)) {
    report.converged = false;
    report.note = "train accuracy did not exceed the majority-class rate";
  }
  return report;
}

}  // namespace

std::uint64_t inner_attack_seed(std::uint64_t train_seed, int epoch, const std::string& example_id) {
  return derive_seed(derive_seed(train_seed ^ kInnerStream, static_cast<std::uint64_t>(epoch)), example_id);
}

const char* regime_name(Regime r) {
  switch (r) {
    case Regime::standard: return "standard";
    case Regime::adversarial: return "adversarial";
    case Regime::trades: return "trades";
  }
  return "?";
}

Regime parse_regime(const std::string& name) {
  for (auto r : {Regime::standard, Regime::adversarial, Regime::trades})
    if (name == regime_name(r)) return r;
  throw ConfigError("unknown training regime '" + name + "'");
}

const char* label_mode_name(LabelMode m) {
  return m == LabelMode::ground_truth ? "ground_truth" : "model_prediction";
}

LabelMode parse_label_mode(const std::string& name) {
  if (name == "ground_truth") return LabelMode::ground_truth;
  if (name == "model_prediction") return LabelMode::model_prediction;
  throw ConfigError("unknown at_label_mode '" + name + "'");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (regime != Regime::standard && !(train_epsilon > 0.0))
    throw ConfigError("train: train_epsilon must be > 0 for robust regimes");
  if (regime != Regime::standard && (inner_steps < 1 || inner_restarts < 1))
    throw ConfigError("train: inner_steps and inner_restarts must be >= 1");
  if (regime == Regime::trades && !(trades_beta > 0.0)) throw ConfigError("train: trades_beta must be > 0");
  if (regime == Regime::trades && trades_init_noise < 0.0) throw ConfigError("train: trades_init_noise must be >= 0");
}

double clean_accuracy(const Classifier& model, const std::vector<LabeledSequence>& sequences) {
  if (sequences.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& s : sequences) correct += argmax(model.logits(s.channels).data()) == s.label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(sequences.size());
}

TrainReport train_standard(Classifier& model, const DatasetBundle& bundle, const TrainConfig& config) {
  return run_loop(model, bundle, config, Regime::standard,
                  [](const Classifier& m, const LabeledSequence& seq, std::uint64_t, GradMap& acc) {
                    return ce_step(m, seq.channels, seq.label, acc);
                  });
}

TrainReport train_adversarial(Classifier& model, const DatasetBundle& bundle, const TrainConfig& config) {
  if (!(config.train_epsilon > 0.0)) throw ConfigError("adversarial training needs train_epsilon > 0");
  return run_loop(model, bundle, config, Regime::adversarial,
                  [&config](const Classifier& m, const LabeledSequence& seq, std::uint64_t seed, GradMap& acc) {
                    const std::size_t target = config.at_label_mode == LabelMode::ground_truth
                                                   ? seq.label
                                                   : argmax(m.logits(seq.channels).data());
                    const AttackResult adv = pgd(m, seq.channels, target, config.train_epsilon,
                                                 config.inner_restarts, config.inner_steps, seed);
                    return ce_step(m, adv.x_adv, target, acc);
                  });
}

Tensor trades_inner_max(const Classifier& model, const Tensor& x, const Tensor& reference_logits, double epsilon,
                        int steps, double init_noise, std::uint64_t seed) {
  Rng rng(seed);
  const double noise = std::min(init_noise, epsilon);
  Tensor xa = x;
  if (noise > 0.0) {
    std::uniform_real_distribution<double> dist(-noise, noise);
    for (auto& v : xa.data()) v += dist(rng);
  }
  const double alpha = 2.0 * epsilon / static_cast<double>(steps);
  const KlTarget target{reference_logits};
  for (int t = 0; t < steps; ++t) {
    const Tensor g = model.loss_and_input_grad(xa, target).input_grad;
    for (std::size_t i = 0; i < xa.size(); ++i) {
      const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      xa[i] = x[i] + std::clamp(xa[i] + alpha * s - x[i], -epsilon, epsilon);
    }
  }
  return xa;
}

TrainReport train_trades(Classifier& model, const DatasetBundle& bundle, const TrainConfig& config) {
  if (!(config.trades_beta > 0.0)) throw ConfigError("trades needs trades_beta > 0");
  return run_loop(
      model, bundle, config, Regime::trades, [&config](const Classifier& m, const LabeledSequence& seq, std::uint64_t seed, GradMap& acc) {
        const Tensor reference = m.logits(seq.channels);
        const Tensor x_adv = trades_inner_max(m, seq.channels, reference, config.train_epsilon, config.inner_steps,
                                              config.trades_init_noise, seed);
        Tape tape;
        auto params = m.bind_parameters(tape, true);
        Var clean = m.forward(tape, tape.constant(seq.channels), params);
        Var adv = m.forward(tape, tape.constant(x_adv), params);
        Var ce = softmax_cross_entropy(tape, clean, seq.label);
        Var kl = kl_divergence(tape, clean, adv);
        Var loss = add(tape, ce, scale(tape, kl, config.trades_beta));
        ExampleOutcome out{tape.value(loss)[0], argmax(tape.value(clean).data()) == seq.label};
        accumulate(acc, tape.backward(loss).by_name());
        return out;
      });
}

TrainReport train(Classifier& model, const DatasetBundle& bundle, const TrainConfig& config) {
  switch (config.regime) {
    case Regime::standard: return train_standard(model, bundle, config);
    case Regime::adversarial: return train_adversarial(model, bundle, config);
    case Regime::trades: return train_trades(model, bundle, config);
  }
  throw ConfigError("unknown regime");
}

}  // namespace tsadv
