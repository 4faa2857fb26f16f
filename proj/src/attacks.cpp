#include "tsadv/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tsadv/error.hpp"
#include "tsadv/rng.hpp"

namespace tsadv {
namespace {

// Query-counting views of a model. Each attack receives only the view its
// threat model allows.
class LabelOracle {
 public:
  explicit LabelOracle(const DifferentiableModel& model) : model_(model) {}
  std::size_t label(const Tensor& x) {
    ++queries_;
    return argmax(model_.logits(x).data());
  }
  std::int64_t queries() const { return queries_; }

 private:
  const DifferentiableModel& model_;
  std::int64_t queries_ = 0;
};

class ProbabilityOracle {
 public:
  explicit ProbabilityOracle(const DifferentiableModel& model) : model_(model) {}
  // Log-probabilities over classes.
  std::vector<double> log_probs(const Tensor& x) {
    ++queries_;
    return log_softmax(model_.logits(x).data());
  }
  std::int64_t queries() const { return queries_; }

 private:
  const DifferentiableModel& model_;
  std::int64_t queries_ = 0;
};

class GradientOracle {
 public:
  explicit GradientOracle(const DifferentiableModel& model) : model_(model) {}
  Tensor grad(const Tensor& x, std::size_t y) {
    ++queries_;
    return model_.loss_and_input_grad(x, CrossEntropyTarget{y}).input_grad;
  }
  std::int64_t queries() const { return queries_; }

 private:
  const DifferentiableModel& model_;
  std::int64_t queries_ = 0;
};

struct Scored {
  double loss;
  bool success;
};

// Post-attack scoring; not counted as a query.
Scored score(const DifferentiableModel& model, const Tensor& x, std::size_t y) {
  const Tensor logits = model.logits(x);
  const auto lsm = log_softmax(logits.data());
  return {-lsm[y], argmax(logits.data()) != y};
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Tensor uniform_start(const Tensor& x, double epsilon, Rng& rng) {
  Tensor out = x;
  if (epsilon <= 0.0) return out;
  std::uniform_real_distribution<double> dist(-epsilon, epsilon);
  for (auto& v : out.data()) v += dist(rng);
  return out;
}

// Per-coordinate projection of (xa - x) into [-epsilon, epsilon].
void clip_to_ball(Tensor& xa, const Tensor& x, double epsilon) {
  for (std::size_t i = 0; i < xa.size(); ++i) xa[i] = x[i] + std::clamp(xa[i] - x[i], -epsilon, epsilon);
}

AttackResult finish(const DifferentiableModel& model, AttackKind kind, const Tensor& x, std::size_t y,
                    double epsilon, Tensor x_adv, std::int64_t queries) {
  AttackResult r;
  r.kind = kind;
  const Scored s = score(model, x_adv, y);
  const Tensor delta = x_adv - x;
  r.linf_norm = linf_norm(delta);
  r.l2_norm = l2_norm(delta);
  r.l0_norm = l0_norm(delta);
  r.loss = s.loss;
  r.success = s.success;
  // Perturbations outside the budget are discarded, not counted as successes.
  if (r.linf_norm > epsilon + 1e-9) r.success = false;
  r.x_adv = std::move(x_adv);
  r.queries = queries;
  return r;
}

void check_inputs(const DifferentiableModel& model, std::size_t y, double epsilon) {
  if (y >= model.num_classes()) throw UsageError("attack label out of range");
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw UsageError("attack epsilon must be finite and >= 0");
}

}  // namespace

const char* attack_kind_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::noise: return "noise";
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::pgd: return "pgd";
    case AttackKind::boundary: return "boundary";
    case AttackKind::simba: return "simba";
  }
  return "?";
}

AttackKind parse_attack_kind(const std::string& name) {
  for (auto k : {AttackKind::noise, AttackKind::fgsm, AttackKind::pgd, AttackKind::boundary, AttackKind::simba})
    if (name == attack_kind_name(k)) return k;
  throw ConfigError("unknown attack '" + name + "'");
}

AttackSpec AttackSpec::noise(int vectors) {
  AttackSpec s;
  s.kind = AttackKind::noise;
  s.restarts = vectors;
  s.steps = 1;
  return s;
}

AttackSpec AttackSpec::fgsm(int restarts) {
  AttackSpec s;
  s.kind = AttackKind::fgsm;
  s.restarts = restarts;
  s.steps = 1;
  return s;
}

AttackSpec AttackSpec::pgd(int restarts, int steps) {
  AttackSpec s;
  s.kind = AttackKind::pgd;
  s.restarts = restarts;
  s.steps = steps;
  return s;
}

AttackSpec AttackSpec::boundary_attack(int iterations) {
  AttackSpec s;
  s.kind = AttackKind::boundary;
  s.restarts = 1;
  s.steps = iterations;
  s.boundary.iterations = iterations;
  return s;
}

AttackSpec AttackSpec::simba() {
  AttackSpec s;
  s.kind = AttackKind::simba;
  s.restarts = 1;
  s.steps = 1;
  return s;
}

std::string AttackSpec::display_name() const {
  switch (kind) {
    case AttackKind::noise: return "NOISE-" + std::to_string(restarts);
    case AttackKind::fgsm: return "FGSM-" + std::to_string(restarts);
    case AttackKind::pgd: return "PGD-" + std::to_string(restarts);
    case AttackKind::boundary: return "BOUNDARY";
    case AttackKind::simba: return "SIMBA";
  }
  return "?";
}

void AttackSpec::validate() const {
  if (restarts < 1) throw ConfigError(display_name() + ": restarts must be >= 1");
  if (steps < 1) throw ConfigError(display_name() + ": steps must be >= 1");
  if (kind == AttackKind::pgd && !(step_scale > 0.0)) throw ConfigError("pgd: step_scale must be > 0");
  if (kind == AttackKind::boundary) {
    if (boundary.init_cap < 1 || boundary.adaptation_window < 1 || boundary.binary_search_steps < 0)
      throw ConfigError("boundary: init_cap and adaptation_window must be >= 1");
    if (!(boundary.step_adaptation > 1.0)) throw ConfigError("boundary: step_adaptation must be > 1");
  }
}

bool better_candidate(bool success_a, double loss_a, bool success_b, double loss_b) {
  if (success_a != success_b) return success_a;
  return loss_a > loss_b;
}

AttackResult noise_attack(const DifferentiableModel& model, const Tensor& x, std::size_t y, double epsilon,
                          int vectors, std::uint64_t seed) {
  check_inputs(model, y, epsilon);
  if (vectors < 1) throw ConfigError("noise attack needs at least one vector");
  ProbabilityOracle oracle(model);
  Rng rng(seed);
  std::vector<double> losses;
  Tensor best;
  bool best_success = false;
  double best_loss = 0.0;
  for (int i = 0; i < vectors; ++i) {
    Tensor cand = uniform_start(x, epsilon, rng);
    const auto lp = oracle.log_probs(cand);
    const double loss = -lp[y];
    const bool success = argmax(lp) != y;
    losses.push_back(loss);
    if (i == 0 || better_candidate(success, loss, best_success, best_loss)) {
      best = std::move(cand);
      best_success = success;
      best_loss = loss;
    }
  }
  AttackResult r = finish(model, AttackKind::noise, x, y, epsilon, std::move(best), oracle.queries());
  r.candidate_losses = std::move(losses);
  return r;
}

AttackResult fgsm(const DifferentiableModel& model, const Tensor& x, std::size_t y, double epsilon, int restarts,
                  std::uint64_t seed) {
  check_inputs(model, y, epsilon);
  if (restarts < 1) throw ConfigError("fgsm needs at least one restart");
  GradientOracle oracle(model);
  Rng rng(seed);
  std::vector<double> losses;
  Tensor best;
  Scored best_score{0.0, false};
  for (int r = 0; r < restarts; ++r) {
    Tensor cand = r == 0 ? x : uniform_start(x, epsilon, rng);
    const Tensor g = oracle.grad(cand, y);
    for (std::size_t i = 0; i < cand.size(); ++i) cand[i] += epsilon * sign(g[i]);
    clip_to_ball(cand, x, epsilon);
    const Scored s = score(model, cand, y);
    losses.push_back(s.loss);
    if (r == 0 || better_candidate(s.success, s.loss, best_score.success, best_score.loss)) {
      best = std::move(cand);
      best_score = s;
    }
  }
  AttackResult res = finish(model, AttackKind::fgsm, x, y, epsilon, std::move(best), oracle.queries());
  res.candidate_losses = std::move(losses);
  return res;
}

AttackResult pgd(const DifferentiableModel& model, const Tensor& x, std::size_t y, double epsilon, int restarts,
                 int steps, std::uint64_t seed, double step_scale) {
  check_inputs(model, y, epsilon);
  if (restarts < 1 || steps < 1) throw ConfigError("pgd needs restarts >= 1 and steps >= 1");
  const double alpha = step_scale * epsilon / static_cast<double>(steps);
  GradientOracle oracle(model);
  Rng rng(seed);
  std::vector<double> losses;
  Tensor best;
  Scored best_score{0.0, false};
  for (int r = 0; r < restarts; ++r) {
    Tensor xa = uniform_start(x, epsilon, rng);
    for (int t = 0; t < steps; ++t) {
      const Tensor g = oracle.grad(xa, y);
      for (std::size_t i = 0; i < xa.size(); ++i) xa[i] += alpha * sign(g[i]);
      clip_to_ball(xa, x, epsilon);
    }
    const Scored s = score(model, xa, y);
    losses.push_back(s.loss);
    if (r == 0 || better_candidate(s.success, s.loss, best_score.success, best_score.loss)) {
      best = std::move(xa);
      best_score = s;
    }
  }
  AttackResult res = finish(model, AttackKind::pgd, x, y, epsilon, std::move(best), oracle.queries());
  res.candidate_losses = std::move(losses);
  return res;
}

AttackResult boundary_attack(const DifferentiableModel& model, const Tensor& x, std::size_t y, double epsilon,
                             const BoundaryParams& params, std::uint64_t seed) {
  check_inputs(model, y, epsilon);
  LabelOracle oracle(model);
  Rng rng(seed);
  std::vector<double> trace;

  if (oracle.label(x) != y) return finish(model, AttackKind::boundary, x, y, epsilon, x, oracle.queries());

  // Initialization: pure uniform noise until something is not classified as y.
  const double scale = params.init_scale > 0.0 ? params.init_scale : std::max(1.0, 2.0 * linf_norm(x));
  std::uniform_real_distribution<double> init_dist(-scale, scale);
  Tensor start;
  Tensor closest_noise;
  double closest_noise_dist = 0.0;
  for (int k = 0; k < params.init_cap; ++k) {
    Tensor cand(x.shape());
    for (auto& v : cand.data()) v = init_dist(rng);
    if (oracle.label(cand) != y) {
      start = std::move(cand);
      break;
    }
    const double d = l2_norm(cand - x);
    if (closest_noise.empty() || d < closest_noise_dist) {
      closest_noise = std::move(cand);
      closest_noise_dist = d;
    }
  }
  if (start.empty()) {
    AttackResult r = finish(model, AttackKind::boundary, x, y, epsilon, std::move(closest_noise), oracle.queries());
    r.success = false;
    return r;
  }

  // Binary search on the segment [x, start] for the boundary; hi stays adversarial.
  auto blend = [&](double lambda) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += lambda * (start[i] - x[i]);
    return out;
  };
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < params.binary_search_steps; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (oracle.label(blend(mid)) != y)
      hi = mid;
    else
      lo = mid;
  }
  Tensor current = hi < 1.0 ? blend(hi) : start;
  double current_dist = l2_norm(current - x);
  trace.push_back(current_dist);

  std::normal_distribution<double> gauss(0.0, 1.0);
  double spherical_step = params.spherical_step;
  double source_step = params.source_step;
  // Two success rates, as in the original attack: how often the orthogonal move
  // alone stays adversarial (drives the spherical step) and how often the full
  // proposal is accepted (drives the source step). A single shared rate would
  // keep the ratio of the two steps fixed and can stall short of the boundary.
  int window_proposals = 0, window_spherical = 0, window_accepted = 0;
  const std::size_t n = x.size();
  Tensor eta(x.shape());
  for (int it = 0; it < params.iterations && current_dist > 0.0; ++it) {
    // Unit direction from the current point towards x.
    Tensor diff = x - current;
    const double dist = l2_norm(diff);
    // Gaussian proposal, projected orthogonally to diff and scaled relative to dist.
    for (auto& v : eta.data()) v = gauss(rng);
    const double proj = dot(eta, diff) / (dist * dist);
    for (std::size_t i = 0; i < n; ++i) eta[i] -= proj * diff[i];
    const double eta_norm = l2_norm(eta);
    if (eta_norm > 0.0) eta *= spherical_step * dist / eta_norm;
    // Move on the sphere of radius dist around x, then step towards x.
    Tensor new_diff = diff + eta;
    const double on_sphere = dist / l2_norm(new_diff);
    Tensor spherical = x;
    for (std::size_t i = 0; i < n; ++i) spherical[i] -= new_diff[i] * on_sphere;

    ++window_proposals;
    if (oracle.label(spherical) != y) {
      ++window_spherical;
      Tensor cand = x;
      for (std::size_t i = 0; i < n; ++i) cand[i] -= new_diff[i] * on_sphere * (1.0 - source_step);
      const double cand_dist = l2_norm(cand - x);
      if (oracle.label(cand) != y && cand_dist < current_dist) {
        current = std::move(cand);
        current_dist = cand_dist;
        trace.push_back(current_dist);
        ++window_accepted;
      }
    }
    if (window_proposals == params.adaptation_window) {
      const double spherical_rate = static_cast<double>(window_spherical) / window_proposals;
      const double step_rate = static_cast<double>(window_accepted) / window_proposals;
      const double a = params.step_adaptation;
      spherical_step = std::clamp(spherical_step * (spherical_rate > params.spherical_target ? a : 1.0 / a), 1e-6, 1.0);
      source_step = std::clamp(source_step * (step_rate > params.target_acceptance ? a : 1.0 / a), 1e-6, 0.5);
      window_proposals = window_spherical = window_accepted = 0;
    }
  }

  AttackResult r = finish(model, AttackKind::boundary, x, y, epsilon, std::move(current), oracle.queries());
  r.trace = std::move(trace);
  return r;
}

AttackResult simba(const DifferentiableModel& model, const Tensor& x, std::size_t y, double epsilon,
                   std::uint64_t seed) {
  check_inputs(model, y, epsilon);
  ProbabilityOracle oracle(model);
  Rng rng(seed);
  std::vector<double> trace;

  Tensor current = x;
  auto lp = oracle.log_probs(current);
  double p = std::exp(lp[y]);
  if (argmax(lp) != y) return finish(model, AttackKind::simba, x, y, epsilon, current, oracle.queries());

  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  for (std::size_t idx : order) {
    Tensor plus = current;
    plus[idx] = x[idx] + epsilon;
    Tensor minus = current;
    minus[idx] = x[idx] - epsilon;
    const auto lp_plus = oracle.log_probs(plus);
    const auto lp_minus = oracle.log_probs(minus);
    const double p_plus = std::exp(lp_plus[y]);
    const double p_minus = std::exp(lp_minus[y]);

    bool flipped = false;
    if (p_plus < p && p_plus <= p_minus) {
      current = std::move(plus);
      p = p_plus;
      flipped = argmax(lp_plus) != y;
      trace.push_back(p);
    } else if (p_minus < p) {
      current = std::move(minus);
      p = p_minus;
      flipped = argmax(lp_minus) != y;
      trace.push_back(p);
    }
    if (flipped) break;
  }
  AttackResult r = finish(model, AttackKind::simba, x, y, epsilon, std::move(current), oracle.queries());
  r.trace = std::move(trace);
  return r;
}

AttackResult run_attack(const DifferentiableModel& model, const Tensor& x, std::size_t y, double epsilon,
                        const AttackSpec& spec, std::uint64_t seed) {
  spec.validate();
  switch (spec.kind) {
    case AttackKind::noise: return noise_attack(model, x, y, epsilon, spec.restarts, seed);
    case AttackKind::fgsm: return fgsm(model, x, y, epsilon, spec.restarts, seed);
    case AttackKind::pgd: return pgd(model, x, y, epsilon, spec.restarts, spec.steps, seed, spec.step_scale);
    case AttackKind::boundary: {
      BoundaryParams params = spec.boundary;
      params.iterations = spec.steps;
      return boundary_attack(model, x, y, epsilon, params, seed);
    }
    case AttackKind::simba: return simba(model, x, y, epsilon, seed);
  }
  throw ConfigError("unknown attack kind");
}

}  // namespace tsadv
