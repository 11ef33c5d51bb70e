// Copyright 2026 The wwcnn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "json.hpp"
#include "manifest.hpp"

namespace fs = std::filesystem;
using wwcnn::cli::run;

namespace {

const std::string kSpec = std::string(WWCNN_SOURCE_DIR) + "/configs/mini.net";

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string csv_value(const fs::path& p, const std::string& key) {
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(key + ",", 0) == 0) return line.substr(key.size() + 1);
  return {};
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::path(::testing::TempDir()) / "wwcnn_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_);
    const auto r = cli({"gen-data", "--instances", "4", "--backgrounds", "1", "--n_az", "2", "--out", (root_ / "data").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto t = cli({"train", "--spec", kSpec, "--arch", "inject-multi", "--train", train(), "--test", test(),
                        "--epochs", "1", "--lr", "0.01", "--out", (root_ / "mi").string()});
    ASSERT_EQ(t.code, 0) << t.err;
  }
  static std::string train() { return (root_ / "data" / "train.wwds").string(); }
  static std::string test() { return (root_ / "data" / "test.wwds").string(); }
  static std::string dir(const std::string& name) { return (root_ / name).string(); }
  static fs::path root_;
};

fs::path CliTest::root_;

TEST_F(CliTest, PipelinePrunedAccuracyMatches) {
  const auto mi = dir("mi") + "/checkpoint.wwck";
  ASSERT_EQ(cli({"eval", "--checkpoint", mi, "--data", test(), "--out", dir("ev_mi")}).code, 0);
  ASSERT_EQ(cli({"prune", "--checkpoint", mi, "--out", dir("pruned")}).code, 0);
  ASSERT_EQ(cli({"eval", "--checkpoint", dir("pruned") + "/checkpoint.wwck", "--data", test(), "--out",
                 dir("ev_pruned")})
                .code,
            0);
  const auto before = csv_value(fs::path(dir("ev_mi")) / "eval.csv", "accuracy");
  ASSERT_FALSE(before.empty());
  EXPECT_EQ(before, csv_value(fs::path(dir("ev_pruned")) / "eval.csv", "accuracy"));
  EXPECT_EQ(csv_value(fs::path(dir("ev_mi")) / "eval.csv", "map"),
            csv_value(fs::path(dir("ev_pruned")) / "eval.csv", "map"));
  EXPECT_FALSE(csv_value(fs::path(dir("ev_mi")) / "eval.csv", "pose_accuracy").empty());
  EXPECT_TRUE(csv_value(fs::path(dir("ev_pruned")) / "eval.csv", "pose_accuracy").empty());
}

TEST_F(CliTest, EpochCsvHeader) {
  const auto text = slurp(fs::path(dir("mi")) / "epochs.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "epoch,train_loss,train_cat_loss,train_pose_loss,test_acc,lr");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
}

TEST_F(CliTest, SpecHashMismatchIsVersionError) {
  const auto other = root_ / "other.net";
  {
    std::ofstream f(other);
    auto text = slurp(kSpec);
    text.replace(text.find("category 10"), 11, "category 12");
    f << text;
  }
  const auto r = cli({"eval", "--checkpoint", dir("mi") + "/checkpoint.wwck", "--data", test(), "--spec",
                      other.string(), "--out", dir("ev_bad")});
  EXPECT_EQ(r.code, 3);
  const auto j = nlohmann::json::parse(r.err);
  EXPECT_EQ(j.at("error"), "version_mismatch");
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST_F(CliTest, MatchingSpecAccepted) {
  const auto r = cli({"eval", "--checkpoint", dir("mi") + "/checkpoint.wwck", "--data", test(), "--spec", kSpec,
                      "--out", dir("ev_ok")});
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"train", "--spec", kSpec}).code, 2);
  EXPECT_EQ(cli({"train", "--spec", kSpec, "--train", train(), "--arch", "vgg", "--out", dir("x")}).code, 2);
  const auto missing = cli({"eval", "--checkpoint", dir("none.wwck"), "--data", test(), "--out", dir("x")});
  EXPECT_EQ(missing.code, 3);
  EXPECT_EQ(nlohmann::json::parse(missing.err).at("error"), "input");
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST_F(CliTest, DivergenceIsNumericFailure) {
  const auto r = cli({"train", "--spec", kSpec, "--train", train(), "--epochs", "1", "--lr", "1e6", "--out",
                      dir("diverge")});
  EXPECT_EQ(r.code, 4) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.err).at("error"), "numeric");
}

TEST_F(CliTest, RefusesToOverwriteInputs) {
  const auto r = cli({"prune", "--checkpoint", dir("mi") + "/checkpoint.wwck", "--out", dir("mi")});
  EXPECT_EQ(r.code, 3);
}

TEST_F(CliTest, ManifestAppendOnly) {
  const auto out = dir("probe");
  for (int i = 0; i < 2; ++i)
    ASSERT_EQ(cli({"probe", "--checkpoint", dir("mi") + "/checkpoint.wwck", "--data", train(), "--batches", "2",
                   "--out", out})
                  .code,
              0);
  const auto entries = wwcnn::cli::read_manifest(out);
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[0].command, "probe");
  EXPECT_EQ(entries[0].outputs, std::vector<std::string>{"probe.csv"});
  EXPECT_EQ(entries[0].inputs.at("data"), fs::weakly_canonical(train()).string());
  std::size_t manifests = 0;
  for (const auto& e : fs::directory_iterator(out)) manifests += e.path().extension() == ".jsonl";
  EXPECT_EQ(manifests, 1u);
}

TEST_F(CliTest, ReplayReproducesTraining) {
  const auto r = cli({"replay", "--manifest", dir("mi"), "--out", dir("mi_replay")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("\"identical\":true"), std::string::npos);
  EXPECT_EQ(slurp(fs::path(dir("mi")) / "epochs.csv"), slurp(fs::path(dir("mi_replay")) / "epochs.csv"));
}

TEST_F(CliTest, ReplayDetectsTamperedOutput) {
  const auto out = dir("ev_tamper");
  ASSERT_EQ(cli({"eval", "--checkpoint", dir("mi") + "/checkpoint.wwck", "--data", test(), "--out", out}).code, 0);
  {
    std::ofstream f(fs::path(out) / "eval.csv", std::ios::app);
    f << "extra,1\n";
  }
  const auto r = cli({"replay", "--manifest", out, "--out", dir("ev_tamper_replay")});
  EXPECT_EQ(r.code, 4);
  EXPECT_EQ(nlohmann::json::parse(r.err).at("error"), "replay_mismatch");
}

TEST_F(CliTest, OutputRootEnvironment) {
  const auto root = root_ / "env_root";
  ::setenv("WWCNN_OUTPUT_ROOT", root.string().c_str(), 1);
  const auto r = cli({"transplant", "--from", dir("mi") + "/checkpoint.wwck", "--spec", kSpec, "--arch", "base",
                      "--out", "relative_out"});
  ::unsetenv("WWCNN_OUTPUT_ROOT");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(root / "relative_out" / "checkpoint.wwck"));
  EXPECT_TRUE(fs::exists(root / "relative_out" / "transplant.csv"));
}

TEST_F(CliTest, AnalyzeArtifacts) {
  const auto out = dir("analyze");
  const auto ck = dir("mi") + "/checkpoint.wwck";
  ASSERT_EQ(cli({"analyze", "rf", "--checkpoint", ck, "--data", test(), "--layers", "pool1,fc7", "--k", "5",
                 "--out", out})
                .code,
            0);
  ASSERT_EQ(cli({"analyze", "embed", "--checkpoint", ck, "--data", test(), "--out", out}).code, 0);
  EXPECT_TRUE(fs::exists(fs::path(out) / "rf_pool1.pgm"));
  EXPECT_TRUE(fs::exists(fs::path(out) / "rf_fc7.csv"));
  const auto embed = slurp(fs::path(out) / "embed.csv");
  EXPECT_EQ(embed.substr(0, embed.find('\n')), "index,category,pose,x,y");
  EXPECT_EQ(cli({"analyze", "tsne", "--checkpoint", ck, "--data", test(), "--out", out}).code, 2);
}

TEST_F(CliTest, GenDataConfigFile) {
  const auto cfg = root_ / "gen.json";
  {
    std::ofstream f(cfg);
    f << R"({"categories": 3, "n_rot": 2, "n_az": 2, "instances": 4, "backgrounds": 1, "seed": 9})";
  }
  ASSERT_EQ(cli({"gen-data", "--config", cfg.string(), "--no_split", "--out", dir("gen_cfg")}).code, 0);
  EXPECT_EQ(slurp(fs::path(dir("gen_cfg")) / "summary.csv"),
            "split,records,categories,poses,instances_per_category\ndata,48,3,4,4\n");
  {
    std::ofstream f(cfg);
    f << R"({"categoriez": 3})";
  }
  EXPECT_EQ(cli({"gen-data", "--config", cfg.string(), "--out", dir("gen_bad")}).code, 3);
}

}  // namespace
