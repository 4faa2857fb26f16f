#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tsadv/checkpoint.hpp"
#include "tsadv/cli.hpp"
#include "tsadv/error.hpp"
#include "tsadv/evaluation.hpp"

using namespace tsadv;
namespace fs = std::filesystem;

namespace {

const fs::path kGolden = TSADV_GOLDEN;
const fs::path kFixtures = TSADV_FIXTURES;

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

// Small enough that train + evaluate take well under a second.
const char* kQuickConfig = R"({
  "format_version": 1,
  "dataset": {"synthetic": {"per_class": 10, "length": 16, "channels": 2, "num_classes": 2}},
  "model": {"conv_blocks": [{"filters": 4, "kernel": 3}, {"filters": 4, "kernel": 3}]},
  "train": {"epochs": 20, "batch_size": 8, "learning_rate": 0.05, "inner_steps": 2},
  "eval": {"attacks": [{"kind": "noise", "restarts": 3}, {"kind": "fgsm", "restarts": 2},
                       {"kind": "pgd", "restarts": 1, "steps": 3}, {"kind": "boundary", "steps": 20},
                       {"kind": "simba"}]}
})";

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("tsadv-cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write(dir_ / "quick.json", kQuickConfig);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int tsadv(std::vector<std::string> args) {
    out_.str("");
    err_.str("");
    return cli::run(args, out_, err_);
  }

  std::string cfg() const { return (dir_ / "quick.json").string(); }
  fs::path dir_;
  std::ostringstream out_, err_;
};

std::size_t data_rows(const std::string& csv) { return parse_curves_csv(csv).rows.size(); }

}  // namespace

TEST_F(Cli, DefaultsRoundTripThroughTheParser) {
  ASSERT_EQ(tsadv({"defaults"}), cli::kOk);
  const auto j = nlohmann::json::parse(out_.str());
  EXPECT_EQ(j.at("format_version"), cli::kConfigFormatVersion);
  const cli::ExperimentConfig c = cli::config_from_json(j);
  EXPECT_EQ(cli::config_to_json(c), j);
  EXPECT_EQ(c.train.learning_rate, 0.01);
  EXPECT_EQ(c.train.batch_size, 32u);
  EXPECT_EQ(c.eval.attacks.size(), 5u);
  ASSERT_EQ(tsadv({"defaults", "--seed", "7"}), cli::kOk);
  const auto seeded = cli::config_from_json(nlohmann::json::parse(out_.str()));
  EXPECT_EQ(seeded.train.seed, 7u);
  EXPECT_EQ(seeded.model.seed, 7u);
  EXPECT_EQ(seeded.eval.seed, 7u);
}

TEST_F(Cli, ConfigRejectsUnknownKeysAndBadVersions) {
  write(dir_ / "bad.json", R"({"train": {"epochz": 3}})");
  EXPECT_EQ(tsadv({"train", "--config", (dir_ / "bad.json").string(), "--quiet"}), cli::kUsage);
  EXPECT_NE(err_.str().find("epochz"), std::string::npos);
  write(dir_ / "v.json", R"({"format_version": 2})");
  EXPECT_EQ(tsadv({"train", "--config", (dir_ / "v.json").string(), "--quiet"}), cli::kUsage);
  write(dir_ / "beta.json", R"({"train": {"regime": "trades", "trades_beta": 0}})");
  EXPECT_EQ(tsadv({"train", "--config", (dir_ / "beta.json").string(), "--quiet"}), cli::kUsage);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(tsadv({}), cli::kUsage);
  EXPECT_EQ(tsadv({"frobnicate"}), cli::kUsage);
  EXPECT_EQ(tsadv({"train", "--config", (dir_ / "missing.json").string()}), cli::kUsage);
  EXPECT_EQ(tsadv({"evaluate", "--config", cfg(), "--epsilons", "0.2,0.1"}), cli::kUsage);
  EXPECT_EQ(tsadv({"--version"}), cli::kOk);
  EXPECT_NE(out_.str().find(cli::kToolVersion), std::string::npos);
}

TEST_F(Cli, TrainWritesArtifactsAndTableLine) {
  const fs::path run = dir_ / "run";
  ASSERT_EQ(tsadv({"train", "--config", cfg(), "--out", run.string()}), cli::kOk) << err_.str();
  EXPECT_NE(out_.str().find("train_accuracy=100.00% test_accuracy=100.00% converged=yes"), std::string::npos)
      << out_.str();
  for (const char* f : {"checkpoint.json", "train_report.json", "manifest.json"}) EXPECT_TRUE(fs::exists(run / f)) << f;
  const auto report = nlohmann::json::parse(read(run / "train_report.json"));
  EXPECT_EQ(report.at("format_version"), 1);
  EXPECT_EQ(report.at("epochs").size(), 20u);
  const auto manifest = nlohmann::json::parse(read(run / "manifest.json"));
  EXPECT_EQ(manifest.at("kind"), "tsadv-manifest");
  EXPECT_EQ(manifest.at("dataset_checksum"), load_checkpoint(run / "checkpoint.json").dataset_checksum);
  EXPECT_EQ(manifest.at("config_hash"), cli::config_hash(cli::config_from_json(manifest.at("config"))));
}

TEST_F(Cli, SameConfigGivesIdenticalCheckpoints) {
  ASSERT_EQ(tsadv({"train", "--config", cfg(), "--out", (dir_ / "a").string(), "--quiet"}), cli::kOk);
  ASSERT_EQ(tsadv({"train", "--config", cfg(), "--out", (dir_ / "b").string(), "--quiet"}), cli::kOk);
  EXPECT_TRUE(out_.str().empty());
  EXPECT_EQ(read(dir_ / "a/checkpoint.json"), read(dir_ / "b/checkpoint.json"));
  ASSERT_EQ(tsadv({"train", "--config", cfg(), "--out", (dir_ / "c").string(), "--seed", "5", "--quiet"}), cli::kOk);
  EXPECT_NE(read(dir_ / "a/checkpoint.json"), read(dir_ / "c/checkpoint.json"));
}

TEST_F(Cli, NonConvergenceHasItsOwnExitCodeAndStillWritesTheReport) {
  write(dir_ / "diverge.json", R"({
    "dataset": {"synthetic": {"per_class": 10, "length": 16, "channels": 2}},
    "model": {"conv_blocks": [{"filters": 4, "kernel": 3}]},
    "train": {"epochs": 3, "learning_rate": 1e300}})");
  const fs::path run = dir_ / "run";
  EXPECT_EQ(tsadv({"train", "--config", (dir_ / "diverge.json").string(), "--out", run.string()}),
            cli::kNotConverged);
  EXPECT_NE(out_.str().find("converged=no"), std::string::npos);
  const auto report = nlohmann::json::parse(read(run / "train_report.json"));
  EXPECT_FALSE(report.at("converged").get<bool>());
}

TEST_F(Cli, EvaluateEmitsFiveBySixRowsAndSingleEpsilonOverride) {
  const fs::path run = dir_ / "run";
  ASSERT_EQ(tsadv({"train", "--config", cfg(), "--out", run.string(), "--quiet"}), cli::kOk);
  ASSERT_EQ(tsadv({"evaluate", "--config", cfg(), "--out", run.string()}), cli::kOk) << err_.str();
  EXPECT_NE(out_.str().find("defense=- 1/lambda=- denoising=- train_accuracy="), std::string::npos) << out_.str();
  const std::string csv = read(run / "curves.csv");
  EXPECT_EQ(data_rows(csv), 30u);
  EXPECT_TRUE(fs::exists(run / "eval_manifest.json"));

  ASSERT_EQ(tsadv({"evaluate", "--config", cfg(), "--checkpoint", (run / "checkpoint.json").string(), "--out",
                   (dir_ / "single").string(), "--epsilons", "0.3", "--quiet"}),
            cli::kOk);
  EXPECT_EQ(data_rows(read(dir_ / "single/curves.csv")), 5u);

  // Reproducible byte for byte.
  ASSERT_EQ(tsadv({"evaluate", "--config", cfg(), "--checkpoint", (run / "checkpoint.json").string(), "--out",
                   (dir_ / "again").string(), "--quiet"}),
            cli::kOk);
  EXPECT_EQ(read(dir_ / "again/curves.csv"), csv);
}

TEST_F(Cli, EvaluateRefusesADifferentDataset) {
  const fs::path run = dir_ / "run";
  ASSERT_EQ(tsadv({"train", "--config", cfg(), "--out", run.string(), "--quiet"}), cli::kOk);
  auto j = nlohmann::json::parse(kQuickConfig);
  j["dataset"]["synthetic"]["seed"] = 99;
  write(dir_ / "other.json", j.dump());
  EXPECT_EQ(tsadv({"evaluate", "--config", (dir_ / "other.json").string(), "--checkpoint",
                   (run / "checkpoint.json").string(), "--out", run.string()}),
            cli::kConsistency);
  EXPECT_NE(err_.str().find("checksum"), std::string::npos) << err_.str();
  EXPECT_FALSE(fs::exists(run / "curves.csv"));
}

TEST_F(Cli, EvaluateMissingCheckpointIsAnIoError) {
  EXPECT_EQ(tsadv({"evaluate", "--config", cfg(), "--checkpoint", (dir_ / "none.json").string()}), cli::kIo);
  EXPECT_FALSE(err_.str().empty());
}

TEST_F(Cli, PlotMatchesGoldenFile) {
  fs::copy_file(kGolden / "curves_fixture.csv", dir_ / "curves.csv");
  ASSERT_EQ(tsadv({"plot", (dir_ / "curves.csv").string(), "--quiet"}), cli::kOk) << err_.str();
  EXPECT_EQ(read(dir_ / "trades-0.1+gnlm.svg"), read(kGolden / "curves_fixture.svg"));
  // Pure function of the CSV bytes.
  EXPECT_EQ(cli::render_svg(parse_curves_csv(read(kGolden / "curves_fixture.csv"))),
            read(kGolden / "curves_fixture.svg"));
}

TEST_F(Cli, PlotSinglePointHasOneMarker) {
  write(dir_ / "one.csv", "attack,epsilon,robust_accuracy,mean_queries,n_examples\nPGD-10,0.3,0.05,1000,20\n");
  ASSERT_EQ(tsadv({"plot", (dir_ / "one.csv").string(), "--quiet"}), cli::kOk) << err_.str();
  const std::string svg = read(dir_ / "one.svg");
  EXPECT_EQ(count(svg, "<circle"), 1u);
  EXPECT_EQ(count(svg, "<polyline"), 1u);
}

TEST_F(Cli, PlotRejectsEmptyOrMalformedCsv) {
  write(dir_ / "empty.csv", "# tsadv-curves format_version=1 model=x\nattack,epsilon,robust_accuracy,mean_queries,n_examples\n");
  EXPECT_NE(tsadv({"plot", (dir_ / "empty.csv").string()}), cli::kOk);
  EXPECT_NE(err_.str().find("no data rows"), std::string::npos);
  write(dir_ / "bad.csv", "attack,epsilon,robust_accuracy,mean_queries,n_examples\nPGD-10,0.3,zz,1,1\n");
  EXPECT_NE(tsadv({"plot", (dir_ / "bad.csv").string()}), cli::kOk);
  EXPECT_NE(err_.str().find("line 2"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir_ / "bad.svg"));
}

TEST_F(Cli, SweepGridHasEightRowsAndResumes) {
  EXPECT_EQ(cli::sweep_grid({0.1, 10.0}, {false, true}).size(), 8u);
  const fs::path out = dir_ / "sweep";
  ASSERT_EQ(tsadv({"sweep", "--config", cfg(), "--out", out.string(), "--betas", "0.1,10", "--gnlm", "off,on"}),
            cli::kOk)
      << err_.str();
  const std::string table = read(out / "sweep_table.csv");
  std::istringstream is(table);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line))
    if (!line.empty()) lines.push_back(line);
  ASSERT_EQ(lines.size(), 2u + 8u);
  EXPECT_EQ(lines[0], "# tsadv-sweep format_version=1");
  EXPECT_EQ(lines[1].rfind("defense,inv_lambda,denoising,train_accuracy,test_accuracy,", 0), 0u);
  EXPECT_EQ(count(table, "TRADES,"), 4u);
  EXPECT_EQ(count(table, "Adversarial Training,"), 2u);
  EXPECT_EQ(count(out_.str(), ": resumed"), 0u);

  ASSERT_EQ(tsadv({"sweep", "--config", cfg(), "--out", out.string()}), cli::kOk);
  EXPECT_EQ(count(out_.str(), ": resumed"), 8u) << out_.str();
  EXPECT_EQ(read(out / "sweep_table.csv"), table);
}

TEST_F(Cli, ConvertFixtureAndFailures) {
  const fs::path out = dir_ / "chars.jsonl";
  ASSERT_EQ(tsadv({"convert", "--source", (kFixtures / "tiny_charset.zip").string(), "--out", out.string()}),
            cli::kOk);
  EXPECT_NE(out_.str().find("records=12"), std::string::npos);
  const std::string first = read(out);
  ASSERT_EQ(tsadv({"convert", "--source", (kFixtures / "tiny_charset.zip").string(), "--out", out.string()}),
            cli::kOk);
  EXPECT_EQ(read(out), first);
  EXPECT_EQ(tsadv({"convert", "--source", (dir_ / "absent.zip").string(), "--out", out.string()}), cli::kIo);
  EXPECT_FALSE(err_.str().empty());
}

TEST_F(Cli, TrainsFromAConvertedJsonlDataset) {
  const fs::path data = dir_ / "chars.jsonl";
  ASSERT_EQ(tsadv({"convert", "--source", (kFixtures / "tiny_charset.mat").string(), "--out", data.string(),
                   "--quiet"}),
            cli::kOk);
  auto j = nlohmann::json::parse(kQuickConfig);
  j["dataset"] = {{"path", data.string()}};
  j["train"]["epochs"] = 2;
  write(dir_ / "chars.json", j.dump());
  // The fixture values are i*1000 + c*100 + t, so a short run may stay at chance; only I/O is checked.
  const int rc = tsadv({"train", "--config", (dir_ / "chars.json").string(), "--out", (dir_ / "run").string()});
  EXPECT_TRUE(rc == cli::kOk || rc == cli::kNotConverged) << err_.str();
  EXPECT_EQ(load_checkpoint(dir_ / "run/checkpoint.json").model.config().in_channels, 3u);
}

// The installed binary maps errors to process exit codes.
TEST(CliBinary, ExitCodes) {
  const std::string cli = TSADV_CLI;
  auto status = [](const std::string& cmd) {
    const int raw = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  EXPECT_EQ(status(cli + " --help"), 0);
  EXPECT_EQ(status(cli + " nonsense"), 2);
  EXPECT_EQ(status(cli + " convert --source /nonexistent/x.zip --out /tmp/tsadv-x.jsonl"), 3);
  EXPECT_EQ(status(cli + " plot /nonexistent.csv"), 3);
}
