#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include <nlohmann/json.hpp>

#include "moelab/cli.hpp"
#include "moelab/error.hpp"
#include "moelab/experiment.hpp"

namespace moelab {
namespace {

namespace fs = std::filesystem;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("moelab-cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(std::vector<std::string> args) {
    args.insert(args.begin(), "moelab");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    out_.str("");
    err_.str("");
    return cli::run(static_cast<int>(argv.size()), argv.data(), out_, err_);
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
  std::ostringstream out_, err_;
};

TEST(ScoreCsv, ParsesSequences) {
  const auto seqs = cli::parse_score_csv("0.5,0.5\n1,0\n\n\n0.25, 0.75\n");
  ASSERT_EQ(seqs.size(), 2u);
  EXPECT_EQ(seqs[0].tokens(), 2u);
  EXPECT_EQ(seqs[1](0, 1), 0.75);
}

TEST(ScoreCsv, ErrorsCarryPosition) {
  try {
    cli::parse_score_csv("0.5,0.5\n0.5,abc\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_EQ(e.column(), 5u);
  }
  EXPECT_THROW(cli::parse_score_csv("0.5,0.5\n0.2,0.3,0.5\n"), ParseError);
  EXPECT_THROW(cli::parse_score_csv("0.6,0.6\n"), ParseError);
  EXPECT_THROW(cli::parse_score_csv(""), ParseError);
}

TEST_F(CliTest, RouteSeqTopKExample) {
  write_file(path("s.csv"), "0.5,0.45,0.05\n0.34,0.33,0.33\n");
  ASSERT_EQ(run({"route", "--scores", path("s.csv"), "--strategy", "seqtopk", "--k", "1",
                 "--out", dir_.string()}),
            cli::kOk);
  EXPECT_EQ(read_file(path("masks.csv")), "1,1,0\n0,0,0\n");
  const auto report = nlohmann::json::parse(out_.str());
  EXPECT_EQ(report["total_selected"], 2);
  EXPECT_EQ(report["sequences"][0]["per_token_counts"], nlohmann::json::array({2, 0}));
}

TEST_F(CliTest, RouteTopKFullSelection) {
  write_file(path("s.csv"), "0.2,0.3,0.5\n0.6,0.3,0.1\n\n0.1,0.1,0.8\n");
  ASSERT_EQ(run({"route", "--scores", path("s.csv"), "--strategy", "topk", "--k", "3",
                 "--out", dir_.string()}),
            cli::kOk);
  EXPECT_EQ(read_file(path("masks.csv")), "1,1,1\n1,1,1\n\n1,1,1\n");
}

TEST_F(CliTest, RouteExitCodes) {
  write_file(path("bad.csv"), "0.5,0.5\n0.6,0.6\n");
  EXPECT_EQ(run({"route", "--scores", path("bad.csv")}), cli::kBadInput);
  EXPECT_NE(err_.str().find("line 2"), std::string::npos);
  write_file(path("s.csv"), "0.5,0.5\n");
  EXPECT_EQ(run({"route", "--scores", path("s.csv"), "--k", "3", "--out", dir_.string()}),
            cli::kInfeasibleBudget);
  EXPECT_EQ(run({"route", "--scores", path("missing.csv")}), cli::kBadInput);
  EXPECT_EQ(run({"route", "--scores", path("s.csv"), "--strategy", "nope"}), cli::kBadInput);
  EXPECT_EQ(run({"bogus"}), cli::kBadInput);
}

TEST_F(CliTest, TrainDeterministicAndAnalyze) {
  for (const char* sub : {"a", "b"}) {
    ASSERT_EQ(run({"train", "--steps", "40", "--seed", "4", "--out", path(sub)}), cli::kOk)
        << err_.str();
  }
  EXPECT_EQ(read_file(path("a/metrics.csv")), read_file(path("b/metrics.csv")));

  ASSERT_EQ(run({"analyze", "--checkpoint", path("a/checkpoint.json"), "--out", path("an")}),
            cli::kOk)
      << err_.str();
  const auto reports = nlohmann::json::parse(read_file(path("an/reports.json")));
  bool saw_entropy = false;
  for (const auto& r : reports["reports"]) {
    if (r["metric"] == "routing_entropy") {
      saw_entropy = true;
      EXPECT_GE(r["values"][0].get<double>(), 0.0);
      EXPECT_LE(r["values"][0].get<double>(), 1.0);
    }
    if (r["metric"] == "batch_sensitivity") {
      for (const auto& v : r["values"]) EXPECT_EQ(v.get<double>(), 1.0);
    }
  }
  EXPECT_TRUE(saw_entropy);
}

TEST_F(CliTest, TopKCheckpointHistogramSpike) {
  ASSERT_EQ(run({"train", "--steps", "5", "--strategy", "topk", "--k", "2", "--out", path("t")}),
            cli::kOk);
  ASSERT_EQ(run({"analyze", "--checkpoint", path("t/checkpoint.json"), "--reports",
                 "activation", "--out", path("an")}),
            cli::kOk);
  EXPECT_EQ(read_file(path("an/activation_histogram.csv")), "layer,experts,tokens\n0,2,2048\n");
}

TEST_F(CliTest, TrainZeroStepsWritesInitialCheckpoint) {
  ASSERT_EQ(run({"train", "--steps", "0", "--out", path("z")}), cli::kOk);
  EXPECT_TRUE(fs::exists(path("z/checkpoint.json")));
}

TEST_F(CliTest, TrainConfigErrors) {
  write_file(path("bad.json"), "{\n  \"train\": [\n");
  EXPECT_EQ(run({"train", "--config", path("bad.json")}), cli::kBadInput);
  EXPECT_NE(err_.str().find("line"), std::string::npos);

  auto c = default_experiment_config();
  c.train.steps = 20;
  c.train.learning_rate = 1e200;
  c.output_dir = path("div");
  write_file(path("div.json"), config_to_json(c));
  EXPECT_EQ(run({"train", "--config", path("div.json")}), cli::kDiverged);
  EXPECT_NE(err_.str().find("step"), std::string::npos);
}

TEST_F(CliTest, AnalyzeMissingCheckpoint) {
  EXPECT_EQ(run({"analyze", "--checkpoint", path("none.json")}), cli::kBadInput);
}

TEST_F(CliTest, VerifySubsetAndFaultInjection) {
  EXPECT_EQ(run({"verify", "--only", "4,8"}), cli::kOk);
  EXPECT_NE(out_.str().find("[PASS]  4"), std::string::npos);
  EXPECT_EQ(run({"verify", "--only", "1", "--inject-fault"}), cli::kVerifyFailed);
  EXPECT_NE(out_.str().find("[FAIL]  1 budget-conservation"), std::string::npos);
}

}  // namespace
}  // namespace moelab
