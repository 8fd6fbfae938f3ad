// Copyright 2026 The PSC Authors. All Rights Reserved.
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

#include "psc/cli.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "psc/fixtures.hpp"
#include "psc/graph.hpp"
#include "psc/tensor_io.hpp"

namespace psc {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("psc_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    unsetenv("PSC_LOG");
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string write(const std::string& name, const std::string& text) {
    const auto p = (dir_ / name).string();
    std::ofstream(p) << text;
    return p;
  }
  std::string fixture_file(const std::string& name) {
    return write(name + ".json", serialize_model(fixture(name, FixtureWidth::reduced)));
  }
  static std::string slurp(const fs::path& p) {
    std::ifstream f(p);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
  }

  fs::path dir_;
};

TEST_F(Cli, HelpExitsZero) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("count-params"), std::string::npos);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(run({"verify", "--bogus"}).code, kExitUsage);
  EXPECT_EQ(run({"count-params"}).code, kExitUsage);
  EXPECT_EQ(run({"rewrite", "--model", "x.json", "--m", "4"}).code, kExitUsage);
  EXPECT_EQ(run({"verify", "--suite", "eq2"}).code, kExitUsage);
  EXPECT_EQ(run({"train-demo", "--variant", "p9sc9"}).code, kExitUsage);
  EXPECT_EQ(run({"count-params", "--model", "m.json", "--format", "xml"}).code, kExitUsage);
}

TEST_F(Cli, UnknownFlagRejectedBeforeWork) {
  const auto out = (dir_ / "never.json").string();
  const auto r = run({"count-params", "--model", fixture_file("unet_3d"), "--out", out, "--typo"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_FALSE(fs::exists(out));
}

TEST_F(Cli, MissingModelFile) {
  const auto r = run({"count-params", "--model", (dir_ / "absent.json").string()});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("absent.json"), std::string::npos);
}

TEST_F(Cli, InvalidModelNamesNodeAndField) {
  const auto p = write("bad.json", R"({"version":1,"nodes":[
    {"id":"x","op":"input","inputs":[],"attrs":{"channels":1}},
    {"id":"c","op":"conv3d","inputs":["x"],"attrs":{"kernel":[3,3],"in_ch":1,"out_ch":2}},
    {"id":"y","op":"output","inputs":["c"],"attrs":{}}]})");
  const auto r = run({"count-params", "--model", p});
  EXPECT_EQ(r.code, kExitValidation);
  EXPECT_NE(r.err.find("'c'"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("kernel"), std::string::npos) << r.err;
}

TEST_F(Cli, CountParamsJsonAndTable) {
  const auto p = fixture_file("resnet34_3d");
  const auto total = count_params(fixture("resnet34_3d", FixtureWidth::reduced)).total;
  const auto r = run({"count-params", "--model", p});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(json::parse(r.out)["total"].get<std::size_t>(), total);
  const auto t = run({"count-params", "--model", p, "--format", "table"});
  ASSERT_EQ(t.code, kExitOk);
  EXPECT_NE(t.out.find("total"), std::string::npos);
  EXPECT_NE(t.out.find(std::to_string(total)), std::string::npos);
}

TEST_F(Cli, RewriteToStdout) {
  const auto r = run({"rewrite", "--model", fixture_file("unet_3d"), "--m", "1", "--n", "1"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto j = json::parse(r.out);
  ASSERT_TRUE(j.contains("report"));
  ASSERT_TRUE(j.contains("model"));
  const ModelGraph g = graph_from_json(j["model"]);
  EXPECT_EQ(count_params(g).total, j["report"]["total_after"].get<std::size_t>());
}

TEST_F(Cli, RewriteToFileRoundTrips) {
  const auto out = (dir_ / "rw.json").string();
  const auto r = run({"rewrite", "--model", fixture_file("densenet_3d"), "--m", "2", "--n", "2", "--out", out});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const std::string text = slurp(out);
  EXPECT_EQ(serialize_model(parse_model(text)), text);
  // Rewriting the result again changes nothing.
  const auto out2 = (dir_ / "rw2.json").string();
  ASSERT_EQ(run({"rewrite", "--model", out, "--m", "2", "--n", "2", "--out", out2}).code, kExitOk);
  EXPECT_EQ(slurp(out2), text);
}

TEST_F(Cli, RewriteWarningsGoToStderr) {
  const auto r = run({"rewrite", "--model", fixture_file("resnet34_3d"), "--m", "1", "--n", "1"});
  ASSERT_EQ(r.code, kExitOk);
  EXPECT_NE(r.err.find("stem_conv"), std::string::npos) << r.err;
  EXPECT_TRUE(json::accept(r.out));
}

TEST_F(Cli, LogLevelFromEnvironment) {
  setenv("PSC_LOG", "error", 1);
  const auto quiet = run({"rewrite", "--model", fixture_file("resnet34_3d"), "--m", "1", "--n", "1"});
  EXPECT_TRUE(quiet.err.empty()) << quiet.err;
  setenv("PSC_LOG", "info", 1);
  const auto loud = run({"verify", "--suite", "eq1", "--seeds", "2"});
  EXPECT_NE(loud.err.find("eq1"), std::string::npos);
  unsetenv("PSC_LOG");
}

TEST_F(Cli, VerifySuite) {
  const auto r = run({"verify", "--suite", "eq4", "--seeds", "3"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_TRUE(j["pass"].get<bool>());
  EXPECT_EQ(j["cases"].get<std::size_t>(), 3u);
}

TEST_F(Cli, GradCheckModel) {
  const auto r = run({"grad-check", "--model", fixture_file("unet_3d"), "--extent", "8", "--seed", "2"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(json::parse(r.out)["pass"].get<bool>());
}

TEST_F(Cli, DecomposeWritesFactors) {
  Rng rng(4);
  write_tensor(dir_ / "k", Tensor::random_normal({3, 3, 3, 2}, rng));
  const auto out = dir_ / "dec";
  const auto r = run({"decompose", "--kernel", (dir_ / "k.bin").string(), "--out", out.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_LT(j["frob_error"].get<double>(), 1e-10);
  EXPECT_EQ(j["ranks"], json::array({3, 3, 3}));
  EXPECT_EQ(j["slab_assignment"].size(), j["per_slab_energy"].size());
  EXPECT_TRUE(fs::exists(out / "report.json"));
  EXPECT_TRUE(fs::exists(out / "core.bin"));
  EXPECT_TRUE(fs::exists(out / "mode3.json"));
  EXPECT_TRUE(fs::exists(out / "slab00_vec.bin"));
}

TEST_F(Cli, DecomposeRejectsBadRanks) {
  EXPECT_EQ(run({"decompose", "--d", "3", "--ranks", "4,1,1"}).code, kExitValidation);
  EXPECT_EQ(run({"decompose", "--d", "3", "--ranks", "1,1"}).code, kExitValidation);
}

TEST_F(Cli, TrainDemoCsv) {
  const auto csv = (dir_ / "h.csv").string();
  const auto r = run({"train-demo", "--variant", "p1sc1", "--epochs", "3", "--seed", "2", "--out", csv});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  std::istringstream lines(slurp(csv));
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) ++n;
  EXPECT_EQ(n, 4u);
  EXPECT_EQ(json::parse(r.out)[0]["variant"], "p1sc1");
}

}  // namespace
}  // namespace psc
