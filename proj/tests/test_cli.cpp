#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "gradcf/cli.hpp"
#include "gradcf/tensor_net.hpp"

namespace gradcf::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "gradcf");
  return run(args);
}

class Cli : public ::testing::Test {
 protected:
  static fs::path dir_;

  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("gradcf_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
    ASSERT_EQ(cli({"train", "--data", "synth", "--d", "10", "--classes", "2", "--seed", "7", "--data-seed", "7",
                   "--out", (dir_ / "m.json").string()}),
              kOk);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::string model() { return (dir_ / "m.json").string(); }
  static std::string out(const std::string& name) { return (dir_ / name).string(); }
};

fs::path Cli::dir_;

TEST_F(Cli, TrainWritesModelAndManifest) {
  EXPECT_TRUE(fs::exists(dir_ / "m.json"));
  const auto m = net::load_model(dir_ / "m.json");
  EXPECT_EQ(m.input_width(), 10u);
  EXPECT_EQ(m.class_count(), 2u);
  EXPECT_TRUE(m.norm.has_value());
  const auto manifest = json::parse(slurp(dir_ / "manifest.json"));
  EXPECT_EQ(manifest["command"], "train");
  const auto acc = manifest["outputs"].dump();
  EXPECT_NE(acc.find("m.json"), std::string::npos);
}

TEST_F(Cli, MissingOutIsUsageError) {
  EXPECT_EQ(cli({"train", "--data", "synth"}), kUsage);
  EXPECT_EQ(cli({}), kUsage);
  EXPECT_EQ(cli({"frobnicate"}), kUsage);
}

TEST_F(Cli, ExplainWritesSession) {
  const std::string od = out("explain");
  ASSERT_EQ(cli({"explain", "--model", model(), "--data", "synth", "--data-seed", "7", "--row", "0", "--target", "1",
                 "--tau", "0.5", "--out-dir", od}),
            kOk);
  const auto s = json::parse(slurp(fs::path(od) / "session.json"));
  EXPECT_EQ(s["outcome"], "success");
  EXPECT_EQ(s["objective"], "gradual");
  EXPECT_TRUE(fs::exists(fs::path(od) / "manifest.json"));
}

TEST_F(Cli, ExplainBadTargetIsRuntimeError) {
  EXPECT_EQ(cli({"explain", "--model", model(), "--data", "synth", "--data-seed", "7", "--row", "0", "--target", "99",
                 "--out-dir", out("bad")}),
            kRuntimeFailure);
}

TEST_F(Cli, ExplainDimensionMismatchIsRuntimeError) {
  EXPECT_EQ(cli({"explain", "--model", model(), "--vector", "0.1,0.2", "--target", "1", "--data", "synth",
                 "--data-seed", "7", "--out-dir", out("dim")}),
            kRuntimeFailure);
}

TEST_F(Cli, ExplainObjectiveTag) {
  const std::string od = out("ablation");
  ASSERT_EQ(cli({"explain", "--model", model(), "--data", "synth", "--data-seed", "7", "--row", "1", "--target", "1",
                 "--objective", "ablation", "--out-dir", od}),
            kOk);
  EXPECT_EQ(json::parse(slurp(fs::path(od) / "session.json"))["objective"], "ablation");
}

TEST_F(Cli, ExplainBudgetExhaustedExitCode) {
  EXPECT_EQ(cli({"explain", "--model", model(), "--data", "synth", "--data-seed", "7", "--row", "0", "--target", "1",
                 "--tau", "0.9999999", "--max-outer", "1", "--sigma", "5", "--out-dir", out("budget")}),
            kBudgetExhausted);
}

TEST_F(Cli, EvaluateThreeObjectivesThreeRows) {
  const std::string od = out("eval");
  ASSERT_EQ(cli({"evaluate", "--model", model(), "--data", "synth", "--data-seed", "7", "--n", "100", "--objectives",
                 "gradual,wachter,ablation", "--out-dir", od}),
            kOk);
  std::istringstream csv(slurp(fs::path(od) / "report.csv"));
  std::vector<std::string> lines;
  for (std::string line; std::getline(csv, line);) lines.push_back(line);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[1].rfind("gradual,", 0), 0u);
  EXPECT_EQ(lines[2].rfind("wachter,", 0), 0u);
  EXPECT_EQ(lines[3].rfind("ablation,", 0), 0u);
}

TEST_F(Cli, EvaluateZeroInstancesIsUsageError) {
  EXPECT_EQ(cli({"evaluate", "--model", model(), "--data", "synth", "--n", "0", "--out-dir", out("n0")}), kUsage);
}

TEST_F(Cli, EvaluateEpsilonIsPlumbed) {
  const std::string od = out("eps");
  ASSERT_EQ(cli({"evaluate", "--model", model(), "--data", "synth", "--data-seed", "7", "--n", "10", "--epsilon", "5",
                 "--out-dir", od}),
            kOk);
  const auto r = json::parse(slurp(fs::path(od) / "report.json"));
  EXPECT_EQ(r["reports"][0]["epsilon"], 5);
}

TEST_F(Cli, GenerateOnFlatModelFails) {
  EXPECT_EQ(cli({"generate", "--model", model(), "--data", "synth", "--data-seed", "7", "--target", "1", "--out-dir",
                 out("gen")}),
            kRuntimeFailure);
}

TEST_F(Cli, CsvWorkflow) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  auto write_csv = [&](const fs::path& p, int rows) {
    std::ofstream f(p);
    f << "a,b,c,outcome\n";
    for (int r = 0; r < rows; ++r) {
      const bool pos = r % 2;
      f << 10 * n01(rng) + (pos ? 60 : 0) << ',' << n01(rng) << ',' << 3 + n01(rng) << ','
        << (pos ? "approve" : "refuse") << '\n';
    }
  };
  write_csv(dir_ / "train.csv", 200);
  write_csv(dir_ / "test.csv", 40);
  ASSERT_EQ(cli({"train", "--data", out("train.csv"), "--test", out("test.csv"), "--label", "outcome", "--epochs", "40",
                 "--seed", "2", "--out", out("csv_model.json"), "--out-dir", out("csv_train")}),
            kOk);
  const std::string od = out("csv_explain");
  const int code = cli({"explain", "--model", out("csv_model.json"), "--data", out("test.csv"), "--train",
                        out("train.csv"), "--label", "outcome", "--row", "0", "--target", "1", "--tau", "0.5",
                        "--out-dir", od});
  EXPECT_TRUE(code == kOk || code == kBudgetExhausted);
  const auto s = json::parse(slurp(fs::path(od) / "session.json"));
  EXPECT_TRUE(s.contains("outcome"));
}

TEST_F(Cli, RepeatedRunsAreByteIdentical) {
  for (int rep = 0; rep < 2; ++rep) {
    const std::string tag = std::to_string(rep);
    ASSERT_EQ(cli({"explain", "--model", model(), "--data", "synth", "--data-seed", "7", "--row", "3", "--target", "1",
                   "--seed", "11", "--out-dir", out("det_explain" + tag)}),
              kOk);
    ASSERT_EQ(cli({"evaluate", "--model", model(), "--data", "synth", "--data-seed", "7", "--n", "20", "--seed", "11",
                   "--objectives", "gradual,ablation", "--out-dir", out("det_eval" + tag)}),
              kOk);
    ASSERT_EQ(cli({"train", "--data", "synth", "--seed", "4", "--epochs", "3", "--out", out("det_m" + tag + ".json")}),
              kOk);
  }
  EXPECT_EQ(slurp(out("det_explain0") + "/session.json"), slurp(out("det_explain1") + "/session.json"));
  EXPECT_EQ(slurp(out("det_eval0") + "/report.csv"), slurp(out("det_eval1") + "/report.csv"));
  EXPECT_EQ(slurp(out("det_eval0") + "/report.json"), slurp(out("det_eval1") + "/report.json"));
  EXPECT_EQ(slurp(out("det_m0.json")), slurp(out("det_m1.json")));
}

TEST(Seeds, StreamsAreDistinctAndStable) {
  EXPECT_NE(seed_stream(1, "data"), seed_stream(1, "init"));
  EXPECT_NE(seed_stream(1, "data"), seed_stream(2, "data"));
  EXPECT_EQ(seed_stream(9, "composite"), seed_stream(9, "composite"));
}

TEST(Hash, KnownDigest) {
  const auto p = fs::temp_directory_path() / ("gradcf_hash_" + std::to_string(::getpid()));
  std::ofstream(p, std::ios::binary) << "abc";
  EXPECT_EQ(sha256_file(p.string()), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  fs::remove(p);
}

}  // namespace
}  // namespace gradcf::cli
