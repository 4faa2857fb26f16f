// Property-based acceptance checks on synthetic fixtures. Prints one PASS/FAIL
// line per criterion; exits nonzero if any fails.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "../support/gradcheck.hpp"
#include "../support/oracles.hpp"
#include "tsadv/attacks.hpp"
#include "tsadv/checkpoint.hpp"
#include "tsadv/cli.hpp"
#include "tsadv/evaluation.hpp"
#include "tsadv/trainers.hpp"

using namespace tsadv;
using namespace tsadv::testing;
namespace fs = std::filesystem;

namespace {

// Tolerances pinned by the criteria.
constexpr double kGradTolerance = 1e-3;
constexpr int kGradInstances = 20;
constexpr double kOracleTolerance = 1e-9;
constexpr double kBudgetSlack = 1e-9;
constexpr int kMinBudgetInvocations = 1000;
// Share of finite-difference coordinates allowed to straddle a relu/max-pool kink.
constexpr double kMaxKinkFraction = 0.02;

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Recorder {
 public:
  void fail(const std::string& why) {
    if (out_.pass) out_.detail = why;
    out_.pass = false;
  }
  void expect(bool cond, const std::string& why) {
    if (!cond) fail(why);
  }
  Outcome done(const std::string& summary) {
    if (out_.pass) out_.detail = summary;
    return out_;
  }

 private:
  Outcome out_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// 6. Finite-difference gradient suite.
Outcome gradients() {
  Recorder r;
  Rng rng(6);
  double worst = 0.0;
  auto check = [&](const std::string& name, const OpBuilder& op, const std::function<std::vector<Tensor>()>& make) {
    for (int i = 0; i < kGradInstances; ++i) {
      const double e = op_gradient_error(op, make(), rng);
      worst = std::max(worst, e);
      r.expect(e <= kGradTolerance, name + " relative error " + fmt("%.3g", e));
    }
  };
  check("conv1d", [](Tape& t, const std::vector<Var>& v) { return conv1d(t, v[0], v[1], v[2]); },
        [&] { return std::vector{random_tensor({2, 9}, rng), random_tensor({3, 2, 3}, rng), random_tensor({3}, rng)}; });
  check("relu", [](Tape& t, const std::vector<Var>& v) { return relu(t, v[0]); },
        [&] { return std::vector{random_tensor({3, 7}, rng)}; });
  check("maxpool1d", [](Tape& t, const std::vector<Var>& v) { return maxpool1d(t, v[0], 2); },
        [&] { return std::vector{random_tensor({3, 9}, rng)}; });
  check("gnlm", [](Tape& t, const std::vector<Var>& v) { return gnlm_denoise(t, v[0], v[1], v[2]); }, [&] {
    return std::vector{random_tensor({4, 6}, rng), random_tensor({4, kGnlmEmbedding}, rng, -0.3, 0.3),
                       random_tensor({4, kGnlmEmbedding}, rng, -0.3, 0.3)};
  });
  check("global_avg_pool", [](Tape& t, const std::vector<Var>& v) { return global_avg_pool(t, v[0]); },
        [&] { return std::vector{random_tensor({3, 5}, rng)}; });
  check("dense", [](Tape& t, const std::vector<Var>& v) { return dense(t, v[0], v[1], v[2]); },
        [&] { return std::vector{random_tensor({4}, rng), random_tensor({3, 4}, rng), random_tensor({3}, rng)}; });
  check("cross_entropy", [](Tape& t, const std::vector<Var>& v) { return softmax_cross_entropy(t, v[0], 2); },
        [&] { return std::vector{random_tensor({5}, rng, -3, 3)}; });
  check("kl_divergence", [](Tape& t, const std::vector<Var>& v) { return kl_divergence(t, v[0], v[1]); },
        [&] { return std::vector{random_tensor({4}, rng, -2, 2), random_tensor({4}, rng, -2, 2)}; });
  check("add", [](Tape& t, const std::vector<Var>& v) { return add(t, v[0], v[1]); },
        [&] { return std::vector{random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)}; });
  check("scale", [](Tape& t, const std::vector<Var>& v) { return scale(t, v[0], -1.7); },
        [&] { return std::vector{random_tensor({2, 3}, rng)}; });

  // Composed model, with and without GNLM: input and every parameter coordinate.
  std::size_t coords = 0, kinks = 0;
  for (bool gnlm : {false, true}) {
    for (int i = 0; i < kGradInstances; ++i) {
      const Classifier m{tiny_config(gnlm, 500 + static_cast<std::uint64_t>(i))};
      const Tensor x = random_tensor({2, 9}, rng);
      const std::size_t y = static_cast<std::size_t>(i % 3);
      const auto nx = checked_numeric_gradient(
          [&](const Tensor& p) { return m.loss_and_input_grad(p, CrossEntropyTarget{y}).loss; }, x);
      const double ex = relative_error(m.loss_and_input_grad(x, CrossEntropyTarget{y}).input_grad, nx);
      worst = std::max(worst, ex);
      r.expect(ex <= kGradTolerance, std::string("model input gradient") + (gnlm ? " (gnlm)" : "") + " " + fmt("%.3g", ex));
      coords += x.size();
      kinks += nx.kinks;

      Tape tape;
      auto params = m.bind_parameters(tape, true);
      const auto grads =
          tape.backward(softmax_cross_entropy(tape, m.forward(tape, tape.constant(x), params), y)).by_name();
      for (const auto& [name, value] : m.parameters()) {
        const auto np = checked_numeric_gradient(
            [&](const Tensor& p) {
              Classifier probe = m;
              probe.set_parameter(name, p);
              return probe.loss_and_input_grad(x, CrossEntropyTarget{y}).loss;
            },
            value);
        const double e = relative_error(grads.at(name), np);
        worst = std::max(worst, e);
        r.expect(e <= kGradTolerance, "model parameter " + name + " " + fmt("%.3g", e));
        coords += value.size();
        kinks += np.kinks;
      }
    }
  }
  const double kink_fraction = static_cast<double>(kinks) / static_cast<double>(coords);
  r.expect(kink_fraction < kMaxKinkFraction, "too many kink coordinates: " + fmt("%.4f", kink_fraction));
  return r.done("10 ops + model (gnlm off/on) x " + std::to_string(kGradInstances) + " instances, worst rel err " +
                fmt("%.2e", worst) + ", kink coords " + std::to_string(kinks) + "/" + std::to_string(coords));
}

// 7. Oracle equivalence on linear models.
Outcome oracles() {
  Recorder r;
  Rng rng(7);
  double worst = 0.0;
  int cases = 0;
  for (std::size_t d = 1; d <= 10; ++d) {
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<double> w(d);
      for (auto& v : w) v = std::uniform_real_distribution<double>(-2, 2)(rng);
      const LinearModel m = margin_model(w, std::uniform_real_distribution<double>(-0.5, 0.5)(rng));
      const Tensor x = random_tensor({d}, rng);
      const std::size_t y = static_cast<std::size_t>(trial % 2);
      const double eps = 0.05 * (1 + trial % 6);
      const double oracle = corner_max_loss(m, x, y, eps);
      const double e_fgsm = std::abs(fgsm(m, x, y, eps, 1, trial).loss - oracle);
      const double e_pgd = std::abs(pgd(m, x, y, eps, 2, 1 + trial * 7, trial).loss - oracle);
      worst = std::max({worst, e_fgsm, e_pgd});
      r.expect(e_fgsm <= kOracleTolerance, "FGSM-1 off the corner oracle by " + fmt("%.3g", e_fgsm));
      r.expect(e_pgd <= kOracleTolerance, "PGD off the corner oracle by " + fmt("%.3g", e_pgd));
      ++cases;
    }
  }
  int simba_cases = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const LinearModel m(random_tensor({3, 3}, rng, -2, 2), random_tensor({3}, rng, -0.5, 0.5), Shape{3});
    const Tensor x = random_tensor({3}, rng);
    const std::size_t y = argmax(m.logits(x).data());
    const std::uint64_t seed = 900 + static_cast<std::uint64_t>(trial);
    const auto expected = simba_oracle(m, x, y, 0.4, seed);
    const AttackResult res = simba(m, x, y, 0.4, seed);
    for (std::size_t j = 0; j < 3; ++j)
      r.expect(std::abs(res.x_adv[j] - x[j] - expected[j] * 0.4) <= 1e-12, "SIMBA differs from the assignment oracle");
    ++simba_cases;
  }
  return r.done(std::to_string(cases) + " FGSM-1/PGD cases (d 1..10), worst |loss - oracle| " + fmt("%.2e", worst) +
                "; " + std::to_string(simba_cases) + " SIMBA cases");
}

// 8. Budget soundness across randomized invocations of all five attacks.
Outcome budget() {
  Recorder r;
  Rng rng(8);
  const std::vector<AttackSpec> specs = {AttackSpec::noise(10), AttackSpec::fgsm(3), AttackSpec::pgd(2, 5),
                                         AttackSpec::boundary_attack(50), AttackSpec::simba()};
  ModelConfig binary = tiny_config(false);
  binary.num_classes = 2;
  const std::vector<Classifier> models = {Classifier(tiny_config(false, 81)), Classifier(tiny_config(true, 82)),
                                          Classifier(binary)};
  int invocations = 0, downgraded = 0;
  double worst_excess = -1.0;
  for (int trial = 0; trial < 60; ++trial) {
    const Classifier& m = models[static_cast<std::size_t>(trial) % models.size()];
    const Tensor x = random_tensor({2, 10}, rng, -2, 2);
    const std::size_t y = static_cast<std::size_t>(trial) % m.num_classes();
    for (double eps : {0.01, 0.05, 0.3, 1.0})
      for (const auto& spec : specs) {
        const AttackResult res = run_attack(m, x, y, eps, spec, static_cast<std::uint64_t>(trial * 31 + invocations));
        ++invocations;
        const double linf = linf_norm(res.x_adv - x);
        if (spec.kind == AttackKind::boundary && linf > eps + kBudgetSlack) {
          ++downgraded;
          const AuditReport a = audit(res, x, eps);
          r.expect(!res.success && !a.success && a.verdict == AuditVerdict::downgraded,
                   "over-budget boundary result counted as a success");
          continue;
        }
        worst_excess = std::max(worst_excess, linf - eps);
        r.expect(linf <= eps + kBudgetSlack, spec.display_name() + " exceeded the budget by " + fmt("%.3g", linf - eps));
        r.expect(res.success == (predict(m, res.x_adv).label != y), spec.display_name() + " success flag wrong");
      }
  }
  r.expect(invocations >= kMinBudgetInvocations, "only " + std::to_string(invocations) + " invocations");
  r.expect(downgraded > 0, "no over-budget boundary result was exercised");
  return r.done(std::to_string(invocations) + " invocations, max(linf - eps) " + fmt("%.2e", worst_excess) + ", " +
                std::to_string(downgraded) + " boundary results downgraded");
}

// 9. Protocol exactness.
Outcome protocol() {
  Recorder r;
  SynthSpec spec;
  spec.per_class = 20;
  spec.length = 16;
  spec.channels = 2;
  spec.num_classes = 3;
  const DatasetBundle bundle = normalize(synth_generate(spec));
  Classifier m{tiny_config(false)};
  TrainConfig t;
  t.epochs = 60;
  t.learning_rate = 0.05;
  t.batch_size = 8;
  train_standard(m, bundle, t);
  const double clean = clean_accuracy(m, bundle.test);

  const std::vector<AttackSpec> specs = {AttackSpec::noise(5), AttackSpec::fgsm(3), AttackSpec::pgd(2, 10),
                                         AttackSpec::boundary_attack(100), AttackSpec::simba()};
  for (const auto& s : specs)
    r.expect(robust_accuracy(m, bundle.test, s, 0.0, 1).accuracy == clean, s.display_name() + " at eps=0 != clean");

  EvalProtocol p;
  p.attacks = specs;
  std::size_t points = 0;
  for (const auto& c : robustness_curve(m, bundle.test, p))
    for (std::size_t i = 0; i < c.points.size(); ++i, ++points)
      r.expect(i == 0 || c.points[i].robust_accuracy <= c.points[i - 1].robust_accuracy, c.attack + " not monotone");

  // Best-of-restarts dominance. Candidates rank success first; on two classes
  // success means loss > ln 2, so the best loss dominates every restart.
  ModelConfig binary = tiny_config(true);
  binary.num_classes = 2;
  const Classifier b(binary);
  Rng rng(9);
  int restart_sets = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = random_tensor({2, 12}, rng);
    for (const auto& s : {AttackSpec::noise(20), AttackSpec::fgsm(20), AttackSpec::pgd(10, 5)}) {
      const AttackResult res = run_attack(b, x, static_cast<std::size_t>(trial % 2), 0.3, s, trial);
      for (double l : res.candidate_losses) r.expect(res.loss >= l, s.display_name() + " best loss below a restart");
      ++restart_sets;
    }
  }
  return r.done("eps=0 matches clean " + fmt("%.3f", clean) + " for 5 attacks; " + std::to_string(points) +
                " curve points monotone; " + std::to_string(restart_sets) + " restart sets dominated");
}

// 10. Determinism of train and evaluate through the CLI.
Outcome determinism(const fs::path& scratch) {
  Recorder r;
  const char* config = R"({
    "dataset": {"synthetic": {"per_class": 10, "length": 16, "channels": 2, "num_classes": 2}},
    "model": {"conv_blocks": [{"filters": 4, "kernel": 3}, {"filters": 4, "kernel": 3}], "use_gnlm": true},
    "train": {"regime": "trades", "trades_beta": 1.0, "epochs": 5, "batch_size": 8, "learning_rate": 0.05, "inner_steps": 2},
    "eval": {"attacks": [{"kind": "noise", "restarts": 3}, {"kind": "fgsm", "restarts": 2},
                         {"kind": "pgd", "restarts": 1, "steps": 3}, {"kind": "boundary", "steps": 30},
                         {"kind": "simba"}]}})";
  std::ofstream(scratch / "det.json") << config;
  std::ostringstream sink;
  for (const char* run : {"a", "b"}) {
    const std::string dir = (scratch / run).string();
    const std::string cfg = (scratch / "det.json").string();
    const int train_rc = cli::run({"train", "--config", cfg, "--out", dir, "--quiet"}, sink, sink);
    r.expect(train_rc == cli::kOk || train_rc == cli::kNotConverged, "train failed: " + sink.str());
    r.expect(cli::run({"evaluate", "--config", cfg, "--out", dir, "--quiet"}, sink, sink) == cli::kOk,
             "evaluate failed: " + sink.str());
  }
  const std::string ca = read(scratch / "a/checkpoint.json"), cb = read(scratch / "b/checkpoint.json");
  const std::string va = read(scratch / "a/curves.csv"), vb = read(scratch / "b/curves.csv");
  r.expect(!ca.empty() && ca == cb, "checkpoints differ");
  r.expect(!va.empty() && va == vb, "curve CSVs differ");
  r.expect(read(scratch / "a/train_report.json") == read(scratch / "b/train_report.json"), "train reports differ");
  return r.done("2 train+evaluate runs (TRADES + GNLM): checkpoints " + std::to_string(ca.size()) + " B and CSVs " +
                std::to_string(va.size()) + " B byte-identical");
}

// 11. Checkpoint and plot round trips.
Outcome formats(const fs::path& scratch) {
  Recorder r;
  Rng rng(11);
  int predictions = 0;
  for (bool gnlm : {false, true}) {
    ModelConfig c;
    c.use_gnlm = gnlm;
    Classifier m(c);
    const auto initial = m.parameters();
    for (const auto& [name, value] : initial) m.set_parameter(name, value + random_tensor(value.shape(), rng, -0.01, 0.01));
    const fs::path path = scratch / (gnlm ? "g.json" : "p.json");
    save_checkpoint(Checkpoint{m, std::nullopt, ""}, path);
    const Checkpoint back = load_checkpoint(path);
    for (int i = 0; i < 10; ++i, ++predictions) {
      const Tensor x = random_tensor({3, 32 + static_cast<std::size_t>(i)}, rng, -3, 3);
      const Prediction a = predict(m, x), b = predict(back.model, x);
      r.expect(a.logits == b.logits && a.probs == b.probs && a.label == b.label, "prediction changed after reload");
    }
  }
  const fs::path golden = TSADV_GOLDEN;
  fs::copy_file(golden / "curves_fixture.csv", scratch / "curves.csv", fs::copy_options::overwrite_existing);
  std::ostringstream sink;
  r.expect(cli::run({"plot", (scratch / "curves.csv").string(), "--quiet"}, sink, sink) == cli::kOk, "plot failed");
  const std::string svg = read(scratch / "trades-0.1+gnlm.svg");
  r.expect(!svg.empty() && svg == read(golden / "curves_fixture.svg"), "SVG differs from the golden file");
  return r.done(std::to_string(predictions) + " reloaded predictions bit-identical; golden SVG (" +
                std::to_string(svg.size()) + " B) byte-identical");
}

}  // namespace

int main() {
  const fs::path scratch = fs::temp_directory_path() / "tsadv-acceptance-properties";
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {6, "gradient suite", gradients},
      {7, "oracle equivalence", oracles},
      {8, "budget soundness", budget},
      {9, "protocol exactness", protocol},
      {10, "determinism", [&] { return determinism(scratch); }},
      {11, "format round-trips", [&] { return formats(scratch); }},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %2d %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  fs::remove_all(scratch);
  return failures == 0 ? 0 : 1;
}
