#include "tsadv/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>

#include "tsadv/error.hpp"
#include "tsadv/rng.hpp"

namespace tsadv {
namespace {

std::string format_double(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, std::size_t line_no, const char* column) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw LoadError("curves CSV line " + std::to_string(line_no) + ": bad " + column + " value '" + s + "'");
  }
}

}  // namespace

std::vector<AttackSpec> EvalProtocol::default_attacks() {
  return {AttackSpec::noise(100), AttackSpec::fgsm(100), AttackSpec::pgd(10, 100), AttackSpec::boundary_attack(1000),
          AttackSpec::simba()};
}

void EvalProtocol::validate() const {
  if (epsilon_grid.empty()) throw ConfigError("evaluation: epsilon grid is empty");
  for (std::size_t i = 0; i < epsilon_grid.size(); ++i) {
    if (!(epsilon_grid[i] > 0.0)) throw ConfigError("evaluation: epsilon values must be positive");
    if (i > 0 && !(epsilon_grid[i] > epsilon_grid[i - 1]))
      throw ConfigError("evaluation: epsilon grid must be strictly increasing");
  }
  if (attacks.empty()) throw ConfigError("evaluation: no attacks configured");
  for (const auto& a : attacks) a.validate();
}

AuditReport audit(const AttackResult& result, const Tensor& x, double epsilon) {
  require_same_shape(result.x_adv, x, "audit");
  const Tensor delta = result.x_adv - x;
  AuditReport report;
  report.linf_norm = linf_norm(delta);
  report.l2_norm = l2_norm(delta);
  report.l0_norm = l0_norm(delta);
  if (std::abs(report.linf_norm - result.linf_norm) > kBudgetTolerance ||
      std::abs(report.l2_norm - result.l2_norm) > kBudgetTolerance ||
      std::abs(report.l0_norm - result.l0_norm) > kBudgetTolerance)
    throw ConsistencyError(std::string("audit: ") + attack_kind_name(result.kind) +
                           " reported norms disagree with the recomputed perturbation");
  report.success = result.success;
  if (report.linf_norm > epsilon + kBudgetTolerance) {
    if (result.kind != AttackKind::boundary)
      throw ConsistencyError(std::string("audit: ") + attack_kind_name(result.kind) + " perturbation L-inf " +
                             format_double("%.12g", report.linf_norm) + " exceeds budget " +
                             format_double("%.12g", epsilon));
    report.verdict = AuditVerdict::downgraded;
    report.success = false;
  }
  return report;
}

std::uint64_t example_seed(std::uint64_t protocol_seed, const std::string& example_id) {
  return derive_seed(protocol_seed, example_id);
}

RobustAccuracy robust_accuracy(const Classifier& model, const std::vector<LabeledSequence>& examples,
                               const AttackSpec& attack, double epsilon, std::uint64_t seed) {
  attack.validate();
  RobustAccuracy out;
  if (examples.empty()) return out;
  std::size_t robust_count = 0, clean_correct = 0, flipped = 0;
  double queries = 0.0;
  for (const auto& ex : examples) {
    AttackResult r = run_attack(model, ex.channels, ex.label, epsilon, attack, example_seed(seed, ex.id));
    const AuditReport a = audit(r, ex.channels, epsilon);
    const bool clean_ok = argmax(model.logits(ex.channels).data()) == ex.label;
    const Tensor& effective = a.verdict == AuditVerdict::downgraded ? ex.channels : r.x_adv;
    const bool is_robust = argmax(model.logits(effective).data()) == ex.label;
    robust_count += is_robust ? 1 : 0;
    clean_correct += clean_ok ? 1 : 0;
    flipped += (!clean_ok && is_robust) ? 1 : 0;
    queries += static_cast<double>(r.queries);
    out.results.push_back(std::move(r));
    out.audits.push_back(a);
    out.robust.push_back(is_robust);
  }
  const double n = static_cast<double>(examples.size());
  out.accuracy = static_cast<double>(robust_count) / n;
  out.clean_accuracy = static_cast<double>(clean_correct) / n;
  out.flipped_to_correct = static_cast<double>(flipped) / n;
  out.mean_queries = queries / n;
  if (out.accuracy > out.clean_accuracy + out.flipped_to_correct + 1e-12)
    throw ConsistencyError("robust accuracy exceeds clean accuracy plus flipped fraction");
  return out;
}

std::vector<RobustnessCurve> robustness_curve(const Classifier& model, const std::vector<LabeledSequence>& all_test,
                                              const EvalProtocol& protocol) {
  protocol.validate();
  std::vector<LabeledSequence> test = all_test;
  if (protocol.max_examples > 0 && test.size() > protocol.max_examples) test.resize(protocol.max_examples);
  if (test.empty()) throw UsageError("evaluation: no test sequences");

  std::vector<double> grid = protocol.epsilon_grid;
  std::sort(grid.begin(), grid.end());

  std::size_t clean_correct = 0;
  for (const auto& ex : test) clean_correct += argmax(model.logits(ex.channels).data()) == ex.label ? 1 : 0;
  const double clean = static_cast<double>(clean_correct) / static_cast<double>(test.size());

  std::vector<RobustnessCurve> curves;
  for (const auto& attack : protocol.attacks) {
    RobustnessCurve curve;
    curve.attack = attack.display_name();
    curve.clean_accuracy = clean;
    // Queries of the result that made an example non-robust, once found.
    std::vector<std::optional<std::int64_t>> broken(test.size());
    // The boundary attack ignores epsilon while searching, so its point is reused.
    std::vector<std::optional<AttackResult>> boundary_cache(test.size());

    for (double eps : grid) {
      std::size_t robust = 0;
      double queries = 0.0;
      for (std::size_t i = 0; i < test.size(); ++i) {
        const auto& ex = test[i];
        if (protocol.carry_forward && broken[i]) {
          queries += static_cast<double>(*broken[i]);
          continue;
        }
        AttackResult r;
        if (attack.kind == AttackKind::boundary && boundary_cache[i]) {
          r = *boundary_cache[i];
          r.success = argmax(model.logits(r.x_adv).data()) != ex.label && r.linf_norm <= eps + kBudgetTolerance;
        } else {
          r = run_attack(model, ex.channels, ex.label, eps, attack, example_seed(protocol.seed, ex.id));
          if (attack.kind == AttackKind::boundary) boundary_cache[i] = r;
        }
        const AuditReport a = audit(r, ex.channels, eps);
        const Tensor& effective = a.verdict == AuditVerdict::downgraded ? ex.channels : r.x_adv;
        const bool is_robust = argmax(model.logits(effective).data()) == ex.label;
        queries += static_cast<double>(r.queries);
        if (is_robust)
          ++robust;
        else
          broken[i] = r.queries;
      }
      const double n = static_cast<double>(test.size());
      curve.points.push_back({eps, static_cast<double>(robust) / n, queries / n, test.size()});
    }
    curves.push_back(std::move(curve));
  }
  return curves;
}

std::string curves_to_csv(const std::vector<RobustnessCurve>& curves, const std::string& model_label) {
  std::string out = "# tsadv-curves format_version=" + std::to_string(kCurvesFormatVersion) + " model=" + model_label +
                    "\nattack,epsilon,robust_accuracy,mean_queries,n_examples\n";
  for (const auto& c : curves)
    for (const auto& p : c.points)
      out += c.attack + "," + format_double("%.6g", p.epsilon) + "," + format_double("%.6f", p.robust_accuracy) + "," +
             format_double("%.2f", p.mean_queries) + "," + std::to_string(p.n_examples) + "\n";
  return out;
}

CurvesCsv parse_curves_csv(const std::string& text) {
  CurvesCsv csv;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto pos = line.find("model=");
      if (pos != std::string::npos) csv.model_label = line.substr(pos + 6);
      continue;
    }
    const auto cells = split_csv_line(line);
    if (!header_seen) {
      if (line != "attack,epsilon,robust_accuracy,mean_queries,n_examples")
        throw LoadError("curves CSV line " + std::to_string(line_no) + ": unexpected header '" + line + "'");
      header_seen = true;
      continue;
    }
    if (cells.size() != 5)
      throw LoadError("curves CSV line " + std::to_string(line_no) + ": expected 5 columns, got " +
                      std::to_string(cells.size()));
    if (cells[0].empty()) throw LoadError("curves CSV line " + std::to_string(line_no) + ": empty attack name");
    CsvRow row;
    row.attack = cells[0];
    row.epsilon = parse_number(cells[1], line_no, "epsilon");
    row.robust_accuracy = parse_number(cells[2], line_no, "robust_accuracy");
    row.mean_queries = parse_number(cells[3], line_no, "mean_queries");
    const double n = parse_number(cells[4], line_no, "n_examples");
    if (row.robust_accuracy < 0.0 || row.robust_accuracy > 1.0)
      throw LoadError("curves CSV line " + std::to_string(line_no) + ": robust_accuracy outside [0, 1]");
    if (n < 0 || n != std::floor(n)) throw LoadError("curves CSV line " + std::to_string(line_no) + ": bad n_examples");
    row.n_examples = static_cast<std::size_t>(n);
    csv.rows.push_back(std::move(row));
  }
  if (!header_seen) throw LoadError("curves CSV: missing header row");
  if (csv.rows.empty()) throw LoadError("curves CSV: no data rows");
  return csv;
}

}  // namespace tsadv
