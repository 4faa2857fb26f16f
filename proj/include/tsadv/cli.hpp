#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsadv/data.hpp"
#include "tsadv/evaluation.hpp"
#include "tsadv/model.hpp"
#include "tsadv/trainers.hpp"

namespace tsadv::cli {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kConfigFormatVersion = 1;

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kIo = 3,
  kConsistency = 4,
  kNotConverged = 5,
};

struct DatasetSource {
  std::optional<std::filesystem::path> path;  // JSONL file
  SynthSpec synthetic;                        // used when path is empty
};

struct ExperimentConfig {
  DatasetSource dataset;
  ModelConfig model;
  TrainConfig train;
  EvalProtocol eval;
  std::filesystem::path output_dir = "runs/default";
  std::uint64_t seed = 42;
};

nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
// Sets the global seed and every component seed.
void apply_seed(ExperimentConfig& config, std::uint64_t seed);
std::string config_hash(const ExperimentConfig& config);

nlohmann::json attack_spec_to_json(const AttackSpec& spec);
AttackSpec attack_spec_from_json(const nlohmann::json& j);

// Raw (unnormalized) bundle described by the config.
DatasetBundle load_dataset(const ExperimentConfig& config);

// "standard", "adversarial+gnlm", "trades-0.1", ...
std::string model_label(const ExperimentConfig& config);

nlohmann::json train_report_to_json(const TrainReport& report);

// Deterministic line chart of robust accuracy against epsilon, one polyline per attack.
std::string render_svg(const CurvesCsv& curves);

struct TrainOutcome {
  TrainReport report;
  std::filesystem::path checkpoint;
};

// Writes checkpoint.json, train_report.json and manifest.json into config.output_dir.
TrainOutcome train_command(const ExperimentConfig& config, std::ostream& log);
// Writes curves.csv and eval_manifest.json into out_dir and returns the curves.
std::vector<RobustnessCurve> evaluate_command(const std::filesystem::path& checkpoint, const ExperimentConfig& config,
                                              const std::filesystem::path& out_dir, std::ostream& log);
std::filesystem::path plot_command(const std::filesystem::path& csv, const std::filesystem::path& out_dir);

struct SweepCell {
  Regime regime = Regime::standard;
  double beta = 0.0;
  bool gnlm = false;
};

std::vector<SweepCell> sweep_grid(const std::vector<double>& betas, const std::vector<bool>& gnlm);
// Trains (or resumes) and evaluates every cell; writes sweep_table.csv into out_dir.
std::filesystem::path sweep_command(const ExperimentConfig& base, const std::vector<double>& betas,
                                    const std::vector<bool>& gnlm, const std::filesystem::path& out_dir,
                                    std::ostream& log);

// Entry point shared by the executable and the tests.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tsadv::cli
