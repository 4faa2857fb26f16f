#include "tsadv/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "tsadv/checkpoint.hpp"
#include "tsadv/error.hpp"
#include "tsadv/rng.hpp"

namespace tsadv::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string percent(double v) { return fmt("%.2f%%", 100.0 * v); }

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void ensure_directory(const fs::path& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_directory(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

json synth_to_json(const SynthSpec& s) {
  return {{"num_classes", s.num_classes}, {"per_class", s.per_class}, {"channels", s.channels},
          {"length", s.length},           {"noise", s.noise},         {"seed", s.seed}};
}

SynthSpec synth_from_json(const json& j) {
  reject_unknown(j, {"num_classes", "per_class", "channels", "length", "noise", "seed"}, "dataset.synthetic");
  SynthSpec s;
  s.num_classes = j.value("num_classes", s.num_classes);
  s.per_class = j.value("per_class", s.per_class);
  s.channels = j.value("channels", s.channels);
  s.length = j.value("length", s.length);
  s.noise = j.value("noise", s.noise);
  s.seed = j.value("seed", s.seed);
  return s;
}

json train_to_json(const TrainConfig& t) {
  return {{"regime", regime_name(t.regime)},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"train_epsilon", t.train_epsilon},
          {"inner_steps", t.inner_steps},
          {"inner_restarts", t.inner_restarts},
          {"trades_beta", t.trades_beta},
          {"trades_init_noise", t.trades_init_noise},
          {"at_label_mode", label_mode_name(t.at_label_mode)},
          {"seed", t.seed}};
}

TrainConfig train_from_json(const json& j) {
  reject_unknown(j,
                 {"regime", "epochs", "batch_size", "learning_rate", "train_epsilon", "inner_steps", "inner_restarts",
                  "trades_beta", "trades_init_noise", "at_label_mode", "seed"},
                 "train");
  TrainConfig t;
  if (j.contains("regime")) t.regime = parse_regime(j.at("regime").get<std::string>());
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.train_epsilon = j.value("train_epsilon", t.train_epsilon);
  t.inner_steps = j.value("inner_steps", t.inner_steps);
  t.inner_restarts = j.value("inner_restarts", t.inner_restarts);
  t.trades_beta = j.value("trades_beta", t.trades_beta);
  t.trades_init_noise = j.value("trades_init_noise", t.trades_init_noise);
  if (j.contains("at_label_mode")) t.at_label_mode = parse_label_mode(j.at("at_label_mode").get<std::string>());
  t.seed = j.value("seed", t.seed);
  return t;
}

json eval_to_json(const EvalProtocol& e) {
  json attacks = json::array();
  for (const auto& a : e.attacks) attacks.push_back(attack_spec_to_json(a));
  return {{"epsilon_grid", e.epsilon_grid}, {"attacks", std::move(attacks)}, {"carry_forward", e.carry_forward},
          {"seed", e.seed},                 {"max_examples", e.max_examples}};
}

EvalProtocol eval_from_json(const json& j) {
  reject_unknown(j, {"epsilon_grid", "attacks", "carry_forward", "seed", "max_examples"}, "eval");
  EvalProtocol e;
  if (j.contains("epsilon_grid")) e.epsilon_grid = j.at("epsilon_grid").get<std::vector<double>>();
  if (j.contains("attacks")) {
    e.attacks.clear();
    for (const auto& a : j.at("attacks")) e.attacks.push_back(attack_spec_from_json(a));
  }
  e.carry_forward = j.value("carry_forward", e.carry_forward);
  e.seed = j.value("seed", e.seed);
  e.max_examples = j.value("max_examples", e.max_examples);
  return e;
}

json boundary_to_json(const BoundaryParams& b) {
  return {{"iterations", b.iterations},
          {"init_cap", b.init_cap},
          {"init_scale", b.init_scale},
          {"binary_search_steps", b.binary_search_steps},
          {"spherical_step", b.spherical_step},
          {"source_step", b.source_step},
          {"step_adaptation", b.step_adaptation},
          {"adaptation_window", b.adaptation_window},
          {"target_acceptance", b.target_acceptance},
          {"spherical_target", b.spherical_target}};
}

BoundaryParams boundary_from_json(const json& j) {
  reject_unknown(j,
                 {"iterations", "init_cap", "init_scale", "binary_search_steps", "spherical_step", "source_step",
                  "step_adaptation", "adaptation_window", "target_acceptance", "spherical_target"},
                 "boundary");
  BoundaryParams b;
  b.iterations = j.value("iterations", b.iterations);
  b.init_cap = j.value("init_cap", b.init_cap);
  b.init_scale = j.value("init_scale", b.init_scale);
  b.binary_search_steps = j.value("binary_search_steps", b.binary_search_steps);
  b.spherical_step = j.value("spherical_step", b.spherical_step);
  b.source_step = j.value("source_step", b.source_step);
  b.step_adaptation = j.value("step_adaptation", b.step_adaptation);
  b.adaptation_window = j.value("adaptation_window", b.adaptation_window);
  b.target_acceptance = j.value("target_acceptance", b.target_acceptance);
  b.spherical_target = j.value("spherical_target", b.spherical_target);
  return b;
}

json report_to_json_impl(const TrainReport& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs)
    epochs.push_back({{"train_loss", e.train_loss}, {"train_accuracy", e.train_accuracy}, {"val_accuracy", e.val_accuracy}});
  return {{"format_version", 1},
          {"kind", "tsadv-train-report"},
          {"regime", regime_name(r.regime)},
          {"final_train_accuracy", r.final_train_accuracy},
          {"final_test_accuracy", r.final_test_accuracy},
          {"converged", r.converged},
          {"note", r.note},
          {"epochs", std::move(epochs)}};
}

TrainReport report_from_json(const json& j) {
  TrainReport r;
  r.regime = parse_regime(j.at("regime").get<std::string>());
  r.final_train_accuracy = j.at("final_train_accuracy").get<double>();
  r.final_test_accuracy = j.at("final_test_accuracy").get<double>();
  r.converged = j.at("converged").get<bool>();
  r.note = j.value("note", std::string());
  for (const auto& e : j.at("epochs"))
    r.epochs.push_back({e.at("train_loss").get<double>(), e.at("train_accuracy").get<double>(),
                        e.at("val_accuracy").get<double>()});
  return r;
}

// The network's input width and class count follow the dataset.
ExperimentConfig resolve(ExperimentConfig config, const DatasetBundle& bundle) {
  config.model.in_channels = bundle.channels();
  config.model.num_classes = bundle.num_classes;
  config.model.validate();
  return config;
}

json manifest(const std::string& command, const ExperimentConfig& config, const std::string& checksum) {
  return {{"format_version", 1},
          {"kind", "tsadv-manifest"},
          {"command", command},
          {"tool_version", kToolVersion},
          {"config", config_to_json(config)},
          {"config_hash", config_hash(config)},
          {"seeds",
           {{"global", config.seed}, {"model", config.model.seed}, {"train", config.train.seed},
            {"eval", config.eval.seed}}},
          {"dataset_checksum", checksum}};
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string defense_name(Regime r) {
  switch (r) {
    case Regime::standard: return "-";
    case Regime::adversarial: return "Adversarial Training";
    case Regime::trades: return "TRADES";
  }
  return "?";
}

std::string table1_line(const ExperimentConfig& config, double train_acc, double test_acc) {
  const std::string inv_lambda = config.train.regime == Regime::trades ? fmt("%g", config.train.trades_beta) : "-";
  return "defense=" + defense_name(config.train.regime) + " 1/lambda=" + inv_lambda +
         " denoising=" + (config.model.use_gnlm ? "GNLM" : "-") + " train_accuracy=" + percent(train_acc) +
         " test_accuracy=" + percent(test_acc);
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& s, const char* what) {
  std::vector<double> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError(std::string("bad ") + what + " value '" + tok + "'");
    }
  }
  if (out.empty()) throw ConfigError(std::string("empty ") + what + " list");
  return out;
}

std::vector<bool> parse_gnlm_list(const std::string& s) {
  std::vector<bool> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (tok == "on")
      out.push_back(true);
    else if (tok == "off")
      out.push_back(false);
    else
      throw ConfigError("--gnlm expects a list of on/off, got '" + tok + "'");
  }
  if (out.empty()) throw ConfigError("empty --gnlm list");
  return out;
}

}  // namespace

json attack_spec_to_json(const AttackSpec& spec) {
  json j = {{"kind", attack_kind_name(spec.kind)}};
  switch (spec.kind) {
    case AttackKind::noise:
    case AttackKind::fgsm: j["restarts"] = spec.restarts; break;
    case AttackKind::pgd:
      j["restarts"] = spec.restarts;
      j["steps"] = spec.steps;
      j["step_scale"] = spec.step_scale;
      break;
    case AttackKind::boundary: j["boundary"] = boundary_to_json(spec.boundary); break;
    case AttackKind::simba: break;
  }
  return j;
}

AttackSpec attack_spec_from_json(const json& j) {
  reject_unknown(j, {"kind", "restarts", "steps", "step_scale", "boundary"}, "attack");
  const AttackKind kind = parse_attack_kind(j.at("kind").get<std::string>());
  AttackSpec spec;
  switch (kind) {
    case AttackKind::noise: spec = AttackSpec::noise(); break;
    case AttackKind::fgsm: spec = AttackSpec::fgsm(); break;
    case AttackKind::pgd: spec = AttackSpec::pgd(); break;
    case AttackKind::boundary: spec = AttackSpec::boundary_attack(); break;
    case AttackKind::simba: spec = AttackSpec::simba(); break;
  }
  spec.restarts = j.value("restarts", spec.restarts);
  spec.steps = j.value("steps", spec.steps);
  spec.step_scale = j.value("step_scale", spec.step_scale);
  if (j.contains("boundary")) {
    spec.boundary = boundary_from_json(j.at("boundary"));
    spec.steps = spec.boundary.iterations;
  }
  spec.validate();
  return spec;
}

json config_to_json(const ExperimentConfig& config) {
  json dataset = config.dataset.path ? json{{"path", config.dataset.path->string()}}
                                     : json{{"synthetic", synth_to_json(config.dataset.synthetic)}};
  return {{"format_version", kConfigFormatVersion},
          {"dataset", std::move(dataset)},
          {"model", model_config_to_json(config.model)},
          {"train", train_to_json(config.train)},
          {"eval", eval_to_json(config.eval)},
          {"output_dir", config.output_dir.string()},
          {"seed", config.seed}};
}

ExperimentConfig config_from_json(const json& j) {
  try {
    reject_unknown(j, {"format_version", "dataset", "model", "train", "eval", "output_dir", "seed"}, "config");
    if (j.value("format_version", kConfigFormatVersion) != kConfigFormatVersion)
      throw ConfigError("unsupported config format_version " + j.at("format_version").dump());
    ExperimentConfig c;
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      reject_unknown(d, {"path", "synthetic"}, "dataset");
      if (d.contains("path") && d.contains("synthetic"))
        throw ConfigError("dataset: give either 'path' or 'synthetic', not both");
      if (d.contains("path")) c.dataset.path = fs::path(d.at("path").get<std::string>());
      if (d.contains("synthetic")) c.dataset.synthetic = synth_from_json(d.at("synthetic"));
    }
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) c.train = train_from_json(j.at("train"));
    if (j.contains("eval")) c.eval = eval_from_json(j.at("eval"));
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    c.seed = j.value("seed", c.seed);
    c.model.validate();
    c.train.validate();
    c.eval.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_config(const fs::path& path) {
  const std::string text = read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  return config_from_json(j);
}

void apply_seed(ExperimentConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.model.seed = seed;
  config.train.seed = seed;
  config.eval.seed = seed;
}

std::string config_hash(const ExperimentConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(config_to_json(config).dump())));
  return buf;
}

DatasetBundle load_dataset(const ExperimentConfig& config) {
  return config.dataset.path ? load_jsonl(*config.dataset.path) : synth_generate(config.dataset.synthetic);
}

std::string model_label(const ExperimentConfig& config) {
  std::string label = regime_name(config.train.regime);
  if (config.train.regime == Regime::trades) label += "-" + fmt("%g", config.train.trades_beta);
  if (config.model.use_gnlm) label += "+gnlm";
  return label;
}

json train_report_to_json(const TrainReport& report) { return report_to_json_impl(report); }

std::string render_svg(const CurvesCsv& curves) {
  constexpr double kWidth = 640, kHeight = 420;
  constexpr double kLeft = 60, kRight = 170, kTop = 40, kBottom = 50;
  constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                      "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  const double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;

  std::vector<std::string> attacks;
  std::set<double> eps_set;
  for (const auto& r : curves.rows) {
    if (std::find(attacks.begin(), attacks.end(), r.attack) == attacks.end()) attacks.push_back(r.attack);
    eps_set.insert(r.epsilon);
  }
  const double x_max = *eps_set.rbegin() > 0.0 ? *eps_set.rbegin() : 1.0;
  auto px = [&](double eps) { return kLeft + plot_w * eps / x_max; };
  auto py = [&](double acc) { return kTop + plot_h * (1.0 - acc); };
  auto num = [](double v) { return fmt("%.2f", v); };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" viewBox=\"0 0 640 420\" "
       "font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(kLeft + plot_w / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" +
       xml_escape(curves.model_label.empty() ? "robustness curves" : curves.model_label) + "</text>\n";
  // Axes and grid.
  for (int i = 0; i <= 5; ++i) {
    const double acc = i / 5.0;
    s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(py(acc)) + "\" x2=\"" + num(kLeft + plot_w) + "\" y2=\"" +
         num(py(acc)) + "\" stroke=\"#dddddd\"/>\n";
    s += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(py(acc) + 4) + "\" text-anchor=\"end\">" + fmt("%.1f", acc) +
         "</text>\n";
  }
  for (double eps : eps_set) {
    s += "<line x1=\"" + num(px(eps)) + "\" y1=\"" + num(kTop + plot_h) + "\" x2=\"" + num(px(eps)) + "\" y2=\"" +
         num(kTop + plot_h + 5) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + num(px(eps)) + "\" y=\"" + num(kTop + plot_h + 18) + "\" text-anchor=\"middle\">" +
         fmt("%g", eps) + "</text>\n";
  }
  s += "<path d=\"M" + num(kLeft) + " " + num(kTop) + " V" + num(kTop + plot_h) + " H" + num(kLeft + plot_w) +
       "\" fill=\"none\" stroke=\"black\"/>\n";
  s += "<text x=\"" + num(kLeft + plot_w / 2) + "\" y=\"" + num(kHeight - 12) +
       "\" text-anchor=\"middle\">epsilon (L-inf)</text>\n";
  s += "<text x=\"16\" y=\"" + num(kTop + plot_h / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       num(kTop + plot_h / 2) + ")\">robust accuracy</text>\n";

  for (std::size_t a = 0; a < attacks.size(); ++a) {
    const std::string color = kPalette[a % std::size(kPalette)];
    std::vector<std::pair<double, double>> pts;
    for (const auto& r : curves.rows)
      if (r.attack == attacks[a]) pts.emplace_back(r.epsilon, r.robust_accuracy);
    std::stable_sort(pts.begin(), pts.end(), [](const auto& l, const auto& r) { return l.first < r.first; });
    std::string coords;
    for (const auto& [e, acc] : pts) coords += (coords.empty() ? "" : " ") + num(px(e)) + "," + num(py(acc));
    s += "<polyline points=\"" + coords + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    for (const auto& [e, acc] : pts)
      s += "<circle cx=\"" + num(px(e)) + "\" cy=\"" + num(py(acc)) + "\" r=\"3\" fill=\"" + color + "\"/>\n";
    const double ly = kTop + 10 + 20.0 * static_cast<double>(a);
    const double lx = kLeft + plot_w + 15;
    s += "<line x1=\"" + num(lx) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(lx + 20) + "\" y2=\"" + num(ly) +
         "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + num(lx + 26) + "\" y=\"" + num(ly + 4) + "\">" + xml_escape(attacks[a]) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

TrainOutcome train_command(const ExperimentConfig& input, std::ostream& log) {
  const DatasetBundle raw = load_dataset(input);
  const ExperimentConfig config = resolve(input, raw);
  const std::string checksum = dataset_checksum(raw);
  const DatasetBundle bundle = normalize(raw);
  ensure_directory(config.output_dir);

  const auto start = std::chrono::steady_clock::now();
  Classifier model(config.model);
  TrainOutcome outcome;
  outcome.report = train(model, bundle, config.train);
  const double train_seconds = seconds_since(start);

  outcome.checkpoint = config.output_dir / "checkpoint.json";
  save_checkpoint({model, bundle.stats, checksum}, outcome.checkpoint);
  write_text(config.output_dir / "train_report.json", train_report_to_json(outcome.report).dump(2) + "\n");
  json m = manifest("train", config, checksum);
  m["checkpoint"] = outcome.checkpoint.string();
  m["timings"] = {{"train_seconds", train_seconds}};
  write_text(config.output_dir / "manifest.json", m.dump(2) + "\n");

  log << "train_accuracy=" << percent(outcome.report.final_train_accuracy)
      << " test_accuracy=" << percent(outcome.report.final_test_accuracy)
      << " converged=" << (outcome.report.converged ? "yes" : "no");
  if (!outcome.report.note.empty()) log << " (" << outcome.report.note << ")";
  log << "\n";
  return outcome;
}

std::vector<RobustnessCurve> evaluate_command(const fs::path& checkpoint, const ExperimentConfig& input,
                                              const fs::path& out_dir, std::ostream& log) {
  Checkpoint ckpt = load_checkpoint(checkpoint);
  const DatasetBundle raw = load_dataset(input);
  const std::string checksum = dataset_checksum(raw);
  if (checksum != ckpt.dataset_checksum)
    throw ConsistencyError("dataset checksum " + checksum + " does not match the checkpoint's " +
                           ckpt.dataset_checksum);
  DatasetBundle bundle = raw;
  if (ckpt.normalization) {
    bundle = normalize(raw);
    if (bundle.stats->mean != ckpt.normalization->mean || bundle.stats->stddev != ckpt.normalization->stddev)
      throw ConsistencyError("normalization statistics differ from the checkpoint's");
  }
  ExperimentConfig config = input;
  config.model = ckpt.model.config();

  const auto start = std::chrono::steady_clock::now();
  auto curves = robustness_curve(ckpt.model, bundle.test, config.eval);
  const double eval_seconds = seconds_since(start);

  const fs::path csv = out_dir / "curves.csv";
  write_text(csv, curves_to_csv(curves, model_label(config)));
  json m = manifest("evaluate", config, checksum);
  m["checkpoint"] = checkpoint.string();
  m["curves"] = csv.string();
  m["timings"] = {{"eval_seconds", eval_seconds}};
  write_text(out_dir / "eval_manifest.json", m.dump(2) + "\n");

  log << table1_line(config, clean_accuracy(ckpt.model, bundle.train), clean_accuracy(ckpt.model, bundle.test))
      << "\n";
  return curves;
}

fs::path plot_command(const fs::path& csv, const fs::path& out_dir) {
  const CurvesCsv curves = parse_curves_csv(read_text(csv));
  std::string stem = curves.model_label.empty() ? csv.stem().string() : curves.model_label;
  for (char& c : stem)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' || c == '+')) c = '_';
  const fs::path out = out_dir / (stem + ".svg");
  write_text(out, render_svg(curves));
  return out;
}

std::vector<SweepCell> sweep_grid(const std::vector<double>& betas, const std::vector<bool>& gnlm) {
  std::vector<SweepCell> cells;
  for (bool g : gnlm) cells.push_back({Regime::standard, 0.0, g});
  for (bool g : gnlm) cells.push_back({Regime::adversarial, 0.0, g});
  for (double b : betas)
    for (bool g : gnlm) cells.push_back({Regime::trades, b, g});
  return cells;
}

fs::path sweep_command(const ExperimentConfig& base, const std::vector<double>& betas, const std::vector<bool>& gnlm,
                       const fs::path& out_dir, std::ostream& log) {
  const auto cells = sweep_grid(betas, gnlm);
  std::vector<std::string> attack_names;
  for (const auto& a : base.eval.attacks) attack_names.push_back(a.display_name());
  const double eps_max = *std::max_element(base.eval.epsilon_grid.begin(), base.eval.epsilon_grid.end());

  std::string table = "# tsadv-sweep format_version=1\ndefense,inv_lambda,denoising,train_accuracy,test_accuracy";
  for (const auto& n : attack_names) table += "," + n + "@" + fmt("%g", eps_max);
  table += ",config_hash,note\n";

  for (const auto& cell : cells) {
    ExperimentConfig config = base;
    config.train.regime = cell.regime;
    if (cell.regime == Regime::trades) config.train.trades_beta = cell.beta;
    config.model.use_gnlm = cell.gnlm;
    const std::string hash = config_hash(config);
    config.output_dir = out_dir / "cells" / (model_label(config) + "-" + hash);

    std::string row = defense_name(cell.regime) + "," + (cell.regime == Regime::trades ? fmt("%g", cell.beta) : "-") +
                      "," + (cell.gnlm ? "GNLM" : "-");
    std::string note;
    try {
      const fs::path report_path = config.output_dir / "train_report.json";
      const fs::path ckpt_path = config.output_dir / "checkpoint.json";
      TrainReport report;
      if (fs::exists(report_path) && fs::exists(ckpt_path)) {
        report = report_from_json(json::parse(read_text(report_path)));
        log << model_label(config) << ": resumed\n";
      } else {
        log << model_label(config) << ": training\n";
        report = train_command(config, log).report;
      }
      if (!report.converged) {
        row += ",-,-";
        for (std::size_t i = 0; i < attack_names.size(); ++i) row += ",-";
        note = "not converged: " + report.note;
      } else {
        const fs::path csv_path = config.output_dir / "curves.csv";
        CurvesCsv curves;
        if (fs::exists(csv_path)) {
          curves = parse_curves_csv(read_text(csv_path));
        } else {
          curves = parse_curves_csv(
              curves_to_csv(evaluate_command(ckpt_path, config, config.output_dir, log), model_label(config)));
        }
        row += "," + fmt("%.4f", report.final_train_accuracy) + "," + fmt("%.4f", report.final_test_accuracy);
        for (const auto& n : attack_names) {
          auto it = std::find_if(curves.rows.begin(), curves.rows.end(),
                                 [&](const CsvRow& r) { return r.attack == n && r.epsilon == eps_max; });
          row += "," + (it == curves.rows.end() ? std::string("-") : fmt("%.4f", it->robust_accuracy));
        }
      }
    } catch (const std::exception& e) {
      // One failing cell must not abort the grid.
      row = defense_name(cell.regime) + "," + (cell.regime == Regime::trades ? fmt("%g", cell.beta) : "-") + "," +
            (cell.gnlm ? "GNLM" : "-") + ",-,-";
      for (std::size_t i = 0; i < attack_names.size(); ++i) row += ",-";
      note = std::string("error: ") + e.what();
    }
    std::replace(note.begin(), note.end(), ',', ';');
    std::replace(note.begin(), note.end(), '\n', ' ');
    table += row + "," + hash + "," + note + "\n";
  }
  const fs::path out = out_dir / "sweep_table.csv";
  write_text(out, table);
  return out;
}

namespace {

struct NullBuffer : std::streambuf {
  int overflow(int c) override { return c; }
};

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const UsageError*>(&e)) return kUsage;
  if (dynamic_cast<const ConsistencyError*>(&e)) return kConsistency;
  if (dynamic_cast<const LoadError*>(&e) || dynamic_cast<const IoError*>(&e) ||
      dynamic_cast<const ConversionError*>(&e))
    return kIo;
  return 1;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarial robustness toolkit for 1-D convolutional time-series classifiers", "tsadv"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  std::string config_path, out_dir, checkpoint, epsilons, source, betas = "0.1,10", gnlm = "off,on";
  std::optional<std::uint64_t> seed;
  std::size_t max_examples = 0;
  std::vector<std::string> csvs;
  bool quiet = false;

  auto common = [&](CLI::App* sub, bool with_config) {
    if (with_config) sub->add_option("--config", config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Global seed; overrides every component seed");
    sub->add_option("--out", out_dir, "Output directory");
    sub->add_flag("--quiet", quiet, "Suppress progress output");
  };

  auto* defaults = app.add_subcommand("defaults", "Print the full default experiment config");
  defaults->add_option("--out", out_dir, "Write the config to this file instead of stdout");
  defaults->add_option("--seed", seed, "Global seed");

  auto* convert = app.add_subcommand("convert", "Convert the UCI character-trajectories archive to JSONL");
  convert->add_option("--source", source, "mixoutALL_shifted.mat, its directory, or the UCI zip")->required();
  convert->add_option("--out", out_dir, "Output JSONL file")->required();
  convert->add_option("--seed", seed, "Split seed (default 42)");
  convert->add_flag("--quiet", quiet, "Suppress progress output");

  auto* train_cmd = app.add_subcommand("train", "Train a classifier");
  common(train_cmd, true);

  auto* eval_cmd = app.add_subcommand("evaluate", "Attack a trained checkpoint across the epsilon grid");
  common(eval_cmd, true);
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint (default <output_dir>/checkpoint.json)");
  eval_cmd->add_option("--epsilons", epsilons, "Comma-separated epsilon grid override");
  eval_cmd->add_option("--max-examples", max_examples, "Evaluate only the first N test sequences");

  auto* plot_cmd = app.add_subcommand("plot", "Render curves CSV files as SVG line charts");
  plot_cmd->add_option("csv", csvs, "Curves CSV files")->required();
  plot_cmd->add_option("--out", out_dir, "Output directory (default: next to each CSV)");
  plot_cmd->add_flag("--quiet", quiet, "Suppress progress output");

  auto* sweep_cmd = app.add_subcommand("sweep", "Train and evaluate the regime x TRADES beta x GNLM grid");
  common(sweep_cmd, true);
  sweep_cmd->add_option("--betas", betas, "Comma-separated TRADES beta values");
  sweep_cmd->add_option("--gnlm", gnlm, "Comma-separated on/off list");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  NullBuffer null_buffer;
  std::ostream null_stream(&null_buffer);
  std::ostream& log = quiet ? null_stream : out;

  try {
    auto load = [&]() {
      ExperimentConfig c = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
      if (seed) apply_seed(c, *seed);
      return c;
    };

    if (*defaults) {
      ExperimentConfig c;
      if (seed) apply_seed(c, *seed);
      const std::string text = config_to_json(c).dump(2) + "\n";
      if (out_dir.empty())
        out << text;
      else
        write_text(out_dir, text);
      return kOk;
    }
    if (*convert) {
      const auto summary = convert_uci_charset(source, out_dir, seed.value_or(42));
      log << "records=" << summary.records << " train=" << summary.train << " val=" << summary.val
          << " test=" << summary.test << " classes=" << summary.num_classes << " padded=" << summary.padded
          << " truncated=" << summary.truncated << "\n";
      return kOk;
    }
    if (*train_cmd) {
      ExperimentConfig c = load();
      if (!out_dir.empty()) c.output_dir = out_dir;
      const auto outcome = train_command(c, log);
      return outcome.report.converged ? kOk : kNotConverged;
    }
    if (*eval_cmd) {
      ExperimentConfig c = load();
      if (!epsilons.empty()) c.eval.epsilon_grid = parse_double_list(epsilons, "epsilon");
      if (max_examples > 0) c.eval.max_examples = max_examples;
      c.eval.validate();
      // As for train, --out names the run directory; the checkpoint defaults to the one inside it.
      if (!out_dir.empty()) c.output_dir = out_dir;
      const fs::path ckpt = checkpoint.empty() ? c.output_dir / "checkpoint.json" : fs::path(checkpoint);
      evaluate_command(ckpt, c, c.output_dir, log);
      return kOk;
    }
    if (*plot_cmd) {
      for (const auto& csv : csvs) {
        const fs::path p(csv);
        const fs::path dir = out_dir.empty() ? (p.has_parent_path() ? p.parent_path() : fs::path(".")) : fs::path(out_dir);
        log << plot_command(p, dir).string() << "\n";
      }
      return kOk;
    }
    if (*sweep_cmd) {
      ExperimentConfig c = load();
      const fs::path dir = out_dir.empty() ? c.output_dir : fs::path(out_dir);
      log << sweep_command(c, parse_double_list(betas, "beta"), parse_gnlm_list(gnlm), dir, log).string() << "\n";
      return kOk;
    }
  } catch (const std::exception& e) {
    err << "tsadv: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kUsage;
}

}  // namespace tsadv::cli
