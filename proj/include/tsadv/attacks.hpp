#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tsadv/model.hpp"
#include "tsadv/tensor.hpp"

namespace tsadv {

// All attacks are untargeted, work against the ground-truth label y and operate
// in an L-infinity ball of radius epsilon with no box constraint on the input.

enum class AttackKind { noise, fgsm, pgd, boundary, simba };

const char* attack_kind_name(AttackKind kind);
AttackKind parse_attack_kind(const std::string& name);

struct BoundaryParams {
  int iterations = 1000;
  int init_cap = 1000;
  // Half-width of the uniform noise used to find a starting point; <= 0 picks
  // max(1, 2 * max|x|).
  double init_scale = 0.0;
  int binary_search_steps = 25;
  double spherical_step = 0.01;
  double source_step = 0.01;
  double step_adaptation = 1.5;
  int adaptation_window = 30;
  // Acceptance rate the source step is tuned towards.
  double target_acceptance = 0.25;
  // Rate at which the orthogonal move alone should stay adversarial.
  double spherical_target = 0.5;
};

struct AttackSpec {
  AttackKind kind = AttackKind::pgd;
  // noise: number of random vectors; fgsm/pgd: random restarts. Unused otherwise.
  int restarts = 10;
  // pgd: steps per restart; boundary: iterations (overrides boundary.iterations).
  int steps = 100;
  // pgd step size alpha = step_scale * epsilon / steps.
  double step_scale = 2.0;
  BoundaryParams boundary;

  static AttackSpec noise(int vectors = 100);
  static AttackSpec fgsm(int restarts = 100);
  static AttackSpec pgd(int restarts = 10, int steps = 100);
  static AttackSpec boundary_attack(int iterations = 1000);
  static AttackSpec simba();

  // NOISE-100, FGSM-100, PGD-10, BOUNDARY, SIMBA.
  std::string display_name() const;
  void validate() const;
};

struct AttackResult {
  AttackKind kind = AttackKind::pgd;
  Tensor x_adv;
  bool success = false;
  std::int64_t queries = 0;
  double linf_norm = 0.0;
  double l2_norm = 0.0;
  double l0_norm = 0.0;
  // Cross-entropy against y at x_adv (scored after the attack, not a query).
  double loss = 0.0;
  // Loss of every candidate considered when picking the best (noise vectors, restarts).
  std::vector<double> candidate_losses;
  // simba: y-probability after each committed coordinate; boundary: L2 distance
  // after each accepted step.
  std::vector<double> trace;
};

AttackResult noise_attack(const DifferentiableModel& model, const Tensor& x, std::size_t y, double epsilon,
                          int vectors, std::uint64_t seed);
AttackResult fgsm(const DifferentiableModel& model, const Tensor& x, std::size_t y, double epsilon, int restarts,
                  std::uint64_t seed);
AttackResult pgd(const DifferentiableModel& model, const Tensor& x, std::size_t y, double epsilon, int restarts,
                 int steps, std::uint64_t seed, double step_scale = 2.0);
// Label-only. The returned point is the smallest-L2 adversarial point found;
// success is cleared when its L-infinity norm exceeds epsilon.
AttackResult boundary_attack(const DifferentiableModel& model, const Tensor& x, std::size_t y, double epsilon,
                             const BoundaryParams& params, std::uint64_t seed);
// Probability-only coordinate descent on p(y | x) with +/- epsilon per coordinate.
AttackResult simba(const DifferentiableModel& model, const Tensor& x, std::size_t y, double epsilon,
                   std::uint64_t seed);

AttackResult run_attack(const DifferentiableModel& model, const Tensor& x, std::size_t y, double epsilon,
                        const AttackSpec& spec, std::uint64_t seed);

// Ranking used to pick among restarts/candidates: success first, then higher loss.
bool better_candidate(bool success_a, double loss_a, bool success_b, double loss_b);

}  // namespace tsadv
