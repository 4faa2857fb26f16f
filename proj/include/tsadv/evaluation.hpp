#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tsadv/attacks.hpp"
#include "tsadv/data.hpp"
#include "tsadv/model.hpp"

namespace tsadv {

inline constexpr double kBudgetTolerance = 1e-9;
inline constexpr int kCurvesFormatVersion = 1;

struct EvalProtocol {
  std::vector<double> epsilon_grid = {0.05, 0.10, 0.15, 0.20, 0.25, 0.30};
  std::vector<AttackSpec> attacks = default_attacks();
  bool carry_forward = true;
  std::uint64_t seed = 42;
  // Evaluate only the first N test sequences; 0 means all.
  std::size_t max_examples = 0;

  // NOISE-100, FGSM-100, PGD-10 (100 steps), boundary, SIMBA.
  static std::vector<AttackSpec> default_attacks();
  void validate() const;
};

enum class AuditVerdict {
  pass,
  // Boundary-attack result beyond the L-inf budget: the perturbation is discarded.
  downgraded,
};

struct AuditReport {
  AuditVerdict verdict = AuditVerdict::pass;
  double linf_norm = 0.0;
  double l2_norm = 0.0;
  double l0_norm = 0.0;
  // Success after applying the discard rule.
  bool success = false;
};

// Recomputes the perturbation norms from (x_adv - x) and checks them against the
// attack's bookkeeping and the budget. Throws ConsistencyError on a norm mismatch
// above 1e-9, on a boundary result that still claims success beyond the budget,
// or when any other attack exceeds epsilon + 1e-9.
AuditReport audit(const AttackResult& result, const Tensor& x, double epsilon);

struct RobustAccuracy {
  double accuracy = 0.0;
  double clean_accuracy = 0.0;
  // Clean-misclassified examples whose attacked candidate is classified correctly,
  // as a fraction of all examples.
  double flipped_to_correct = 0.0;
  double mean_queries = 0.0;
  std::vector<AttackResult> results;
  std::vector<AuditReport> audits;
  std::vector<bool> robust;
};

// Per-example seed; independent of evaluation order.
std::uint64_t example_seed(std::uint64_t protocol_seed, const std::string& example_id);

RobustAccuracy robust_accuracy(const Classifier& model, const std::vector<LabeledSequence>& examples,
                               const AttackSpec& attack, double epsilon, std::uint64_t seed);

struct CurvePoint {
  double epsilon = 0.0;
  double robust_accuracy = 0.0;
  double mean_queries = 0.0;
  std::size_t n_examples = 0;
};

struct RobustnessCurve {
  std::string attack;
  double clean_accuracy = 0.0;
  std::vector<CurvePoint> points;
};

// One curve per attack, epsilons visited in ascending order. With carry_forward a
// non-robust example stays non-robust at larger epsilon (its candidate is still
// inside the larger ball), and the attack is not rerun for it.
std::vector<RobustnessCurve> robustness_curve(const Classifier& model, const std::vector<LabeledSequence>& test,
                                              const EvalProtocol& protocol);

// CSV: a "# tsadv-curves format_version=1 model=<label>" line, a header row
// attack,epsilon,robust_accuracy,mean_queries,n_examples, then one row per point.
std::string curves_to_csv(const std::vector<RobustnessCurve>& curves, const std::string& model_label);

struct CsvRow {
  std::string attack;
  double epsilon = 0.0;
  double robust_accuracy = 0.0;
  double mean_queries = 0.0;
  std::size_t n_examples = 0;
};

struct CurvesCsv {
  std::string model_label;
  std::vector<CsvRow> rows;
};

// Throws LoadError naming the offending line.
CurvesCsv parse_curves_csv(const std::string& text);

}  // namespace tsadv
