#include <gtest/gtest.h>
#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

// Small scenario: a 6 h training trace, a 5 epoch model, 2 h runs and a
// single threshold cell.
const char* kSmallConfig = R"({
  "schema_version": 1,
  "name": "cli",
  "seed": 7,
  "duration_hours": 2,
  "scheduler": "MinMin",
  "grid": {"lower": {"values": [0.2]}, "upper": {"values": [0.7]}, "tuning_hours": 2},
  "trace": {"hours": 6},
  "model": {"numerical": {"epochs": 5, "neurons": 8, "lookback": 4}},
  "tune": {"n_pop": 2, "top_n": 1, "iterations": 1, "bo_budget": 2, "bo_warm_start": 1, "max_epochs": 5}
})";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t lines(const fs::path& p) {
  auto t = slurp(p);
  return static_cast<std::size_t>(std::count(t.begin(), t.end(), '\n'));
}

class Cli : public ::testing::Test {
 protected:
  static fs::path root;
  static fs::path config;

  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / ("ipft_cli_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
    config = root / "small.json";
    std::ofstream(config) << kSmallConfig;
  }
  static void TearDownTestSuite() { fs::remove_all(root); }

  static int run(const std::string& args, std::string* err = nullptr) {
    auto log = root / "stderr.txt";
    std::string cmd = std::string(IPFT_CLI_PATH) + " " + args + " >" + (root / "stdout.txt").string() + " 2>" +
                      log.string();
    int status = std::system(cmd.c_str());
    if (err) *err = slurp(log);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string with_config(const std::string& cmd, const fs::path& out) {
    return cmd + " --config " + config.string() + " --out " + out.string();
  }

  // synth + train into `out`, once per directory.
  static void trained(const fs::path& out) {
    if (fs::exists(out / "model.json")) return;
    ASSERT_EQ(run(with_config("synth", out)), 0);
    ASSERT_EQ(run(with_config("train", out)), 0);
  }
};

fs::path Cli::root;
fs::path Cli::config;

}  // namespace

TEST_F(Cli, SynthWritesTraceAndScenario) {
  auto out = root / "synth";
  ASSERT_EQ(run(with_config("synth", out)), 0);
  EXPECT_GT(lines(out / "trace.csv"), 100u);
  auto j = nlohmann::json::parse(slurp(out / "scenario.json"));
  EXPECT_EQ(j.at("name"), "cli");
  EXPECT_EQ(j.at("seed"), 7);
}

TEST_F(Cli, SeedFlagOverridesConfig) {
  auto out = root / "seeded";
  ASSERT_EQ(run(with_config("synth", out) + " --seed 99"), 0);
  EXPECT_EQ(nlohmann::json::parse(slurp(out / "scenario.json")).at("seed"), 99);
}

TEST_F(Cli, DeskScaleShortensRuns) {
  auto out = root / "desk";
  ASSERT_EQ(run(with_config("synth", out) + " --desk-scale"), 0);
  auto j = nlohmann::json::parse(slurp(out / "scenario.json"));
  EXPECT_EQ(j.at("duration_hours"), 24.0);
  EXPECT_LE(j.at("tune").at("n_pop").get<int>(), 4);
}

TEST_F(Cli, TrainWritesModelAndReport) {
  auto out = root / "train";
  trained(out);
  auto model = nlohmann::json::parse(slurp(out / "model.json"));
  EXPECT_TRUE(model.is_object());
  auto rep = nlohmann::json::parse(slurp(out / "train_report.json"));
  EXPECT_TRUE(rep.at("test").contains("persistence"));
  EXPECT_GT(rep.at("test").at("model").at("samples").get<int>(), 0);
}

TEST_F(Cli, TrainWithoutTraceIsMissingArtifact) {
  std::string err;
  EXPECT_EQ(run(with_config("train", root / "empty_train"), &err), 3);
  EXPECT_NE(err.find("MissingArtifact"), std::string::npos);
}

TEST_F(Cli, TuneWritesHistory) {
  auto out = root / "tune";
  ASSERT_EQ(run(with_config("synth", out)), 0);
  ASSERT_EQ(run(with_config("tune", out)), 0);
  EXPECT_GE(lines(out / "tuning_history.csv"), 3u);
  EXPECT_TRUE(fs::exists(out / "model.json"));
  auto rep = nlohmann::json::parse(slurp(out / "tune_report.json"));
  EXPECT_EQ(rep.at("evaluations").get<int>(), 2);
}

TEST_F(Cli, ZeroBoBudgetIsConfigInvalid) {
  auto bad = root / "bad_budget.json";
  auto j = nlohmann::json::parse(kSmallConfig);
  j["tune"]["bo_budget"] = 0;
  std::ofstream(bad) << j.dump();
  std::string err;
  EXPECT_EQ(run("tune --config " + bad.string() + " --out " + (root / "bad").string(), &err), 2);
  EXPECT_NE(err.find("ConfigInvalid"), std::string::npos);
}

TEST_F(Cli, UnknownKeyIsConfigInvalid) {
  auto bad = root / "bad_key.json";
  auto j = nlohmann::json::parse(kSmallConfig);
  j["fleet"] = {{"actve", 3}};
  std::ofstream(bad) << j.dump();
  std::string err;
  EXPECT_EQ(run("synth --config " + bad.string() + " --out " + (root / "bad").string(), &err), 2);
  EXPECT_NE(err.find("fleet.actve"), std::string::npos);
}

TEST_F(Cli, MissingConfigFileIsRejected) {
  EXPECT_NE(run("synth --config " + (root / "nope.json").string() + " --out " + (root / "x").string()), 0);
}

TEST_F(Cli, IpftSimulateWithoutModelIsMissingArtifact) {
  std::string err;
  EXPECT_EQ(run(with_config("simulate", root / "no_model"), &err), 3);
  EXPECT_NE(err.find("model.json"), std::string::npos);
  EXPECT_EQ(err.find("MissingArtifact: MissingArtifact"), std::string::npos);
}

TEST_F(Cli, SimulateIsByteIdenticalAcrossRuns) {
  auto out = root / "sim";
  trained(out);
  ASSERT_EQ(run(with_config("simulate", out)), 0);
  auto first = slurp(out / "events.csv");
  auto first_report = slurp(out / "report.json");
  ASSERT_EQ(run(with_config("simulate", out)), 0);
  EXPECT_EQ(slurp(out / "events.csv"), first);
  EXPECT_EQ(slurp(out / "report.json"), first_report);
  EXPECT_GT(lines(out / "events.csv"), 100u);
  for (auto f : {"episodes.csv", "decisions.csv", "monitoring.csv", "hourly.csv"}) EXPECT_TRUE(fs::exists(out / f)) << f;
}

TEST_F(Cli, CompareAndReport) {
  auto out = root / "cmp";
  trained(out);
  ASSERT_EQ(run(with_config("compare", out)), 0);
  EXPECT_EQ(lines(out / "comparison.csv"), 7u);
  for (auto s : {"RR", "MinMin", "MaxMin"}) EXPECT_EQ(lines(out / ("grid_" + std::string(s) + ".csv")), 2u) << s;
  auto table = slurp(out / "table.txt");
  EXPECT_NE(table.find("IPFT MaxMin"), std::string::npos);
  EXPECT_NE(table.find("RFT RR"), std::string::npos);

  ASSERT_EQ(run(with_config("report", out)), 0);
  EXPECT_EQ(lines(out / "summary.csv"), 7u);
  EXPECT_TRUE(fs::exists(out / "hourly" / "IPFT_MinMin.csv"));
  EXPECT_EQ(slurp(out / "summary.txt"), table);
}

TEST_F(Cli, ReportWithoutRunsIsMissingArtifact) {
  EXPECT_EQ(run(with_config("report", root / "nothing")), 3);
}

TEST_F(Cli, RftSimulateNeedsNoModel) {
  auto bad = root / "rft.json";
  auto j = nlohmann::json::parse(kSmallConfig);
  j["controller"] = {{"mode", "RFT"}};
  std::ofstream(bad) << j.dump();
  auto out = root / "rft";
  ASSERT_EQ(run("simulate --config " + bad.string() + " --out " + out.string()), 0);
  auto rep = nlohmann::json::parse(slurp(out / "report.json"));
  EXPECT_EQ(rep.at("mode"), "RFT");
}
