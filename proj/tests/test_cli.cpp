// Copyright 2026 The cftransfer Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <sys/wait.h>

#include "cftransfer/audio/mel.hpp"
#include "cftransfer/cf/als.hpp"
#include "cftransfer/core/config.hpp"
#include "cftransfer/workbench/results.hpp"

namespace cftransfer {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int status = -1;
  std::string out;
  std::string err;
};

std::string Slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path Scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cftransfer_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Outcome Cli(const std::string& args, const fs::path& scratch) {
  const std::string cmd = std::string(CFTRANSFER_CLI) + " " + args + " > " + (scratch / "stdout").string() + " 2> " +
                          (scratch / "stderr").string();
  const int raw = std::system(cmd.c_str());
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, Slurp(scratch / "stdout"), Slurp(scratch / "stderr")};
}

const std::string kConfigs = std::string(CFTRANSFER_SOURCE_DIR) + "/configs";

TEST(Cli, UsageErrors) {
  const fs::path s = Scratch("usage");
  EXPECT_NE(Cli("", s).status, 0);
  EXPECT_NE(Cli("frobnicate", s).status, 0);
  EXPECT_NE(Cli("als-fit only-one-arg", s).status, 0);
}

TEST(Cli, AlsFitThreeLineLogRoundTrip) {
  const fs::path s = Scratch("als");
  std::ofstream(s / "logs.tsv") << "u1\tsongA\t3\nu2\tsongB\nu1\tsongB\t1\n";
  const auto r = Cli("als-fit " + (s / "logs.tsv").string() + " " + (s / "emb.cftable").string(), s);
  ASSERT_EQ(r.status, 0) << r.err;
  const auto emb = cf::LoadItemVectors(s / "emb.cftable");
  EXPECT_EQ(cf::ItemVector(emb, "songA").size(), 40);
  EXPECT_EQ(cf::ItemVector(emb, "songB").size(), 40);
}

TEST(Cli, ErrorsAreOneMachineParsableLine) {
  const fs::path s = Scratch("errors");
  auto r = Cli("als-fit " + (s / "missing.tsv").string() + " " + (s / "o").string(), s);
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(r.err.rfind("error io: ", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);

  std::ofstream(s / "bad.json") << "{\"schema_version\": 1, \"wrld\": {}}";
  r = Cli("run " + (s / "bad.json").string(), s);
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(r.err.rfind("error config: ", 0), 0u) << r.err;

  std::ofstream(s / "garbage.json") << "{ not json";
  r = Cli("run " + (s / "garbage.json").string(), s);
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(r.err.rfind("error config: ", 0), 0u) << r.err;
}

TEST(Cli, GenerateWorldThenFeatures) {
  const fs::path s = Scratch("world");
  auto r = Cli("generate-world " + kConfigs + "/smoke_manifest.json " + (s / "data").string() + " --seed 9", s);
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_TRUE(fs::exists(s / "data" / "logs.tsv"));
  EXPECT_TRUE(fs::exists(s / "data" / "labels.csv"));
  EXPECT_TRUE(fs::exists(s / "data" / "latents.cftable"));
  EXPECT_EQ(ReadJsonFile(s / "data" / "world.json").at("seed"), 9);

  std::ofstream(s / "features.json") << R"({"n_fft": 256, "hop": 250, "n_mels": 8})";
  r = Cli("features " + (s / "data" / "audio").string() + " " + (s / "mels").string() + " --config " +
              (s / "features.json").string(),
          s);
  ASSERT_EQ(r.status, 0) << r.err;
  const Grid g = audio::LoadMelGrid(s / "mels" / "task0000.cftable");
  EXPECT_EQ(g.rows, 8u);
  EXPECT_EQ(g.cols, 16u);
}

TEST(Cli, RunEvaluateAndStagedTraining) {
  const fs::path s = Scratch("run");
  std::ofstream(s / "patch.json") << "{\"output_dir\": \"" << (s / "out").string() << "\"}";
  const std::string manifest = kConfigs + "/smoke_manifest.json --config " + (s / "patch.json").string();
  auto r = Cli("run " + manifest + " --deterministic", s);
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_NE(r.out.find("ttest kd-base"), std::string::npos) << r.out;
  const std::string results = Slurp(s / "out" / "results.csv");
  EXPECT_EQ(workbench::ReadResultsCsv(s / "out" / "results.csv").size(), 16u);

  r = Cli("evaluate " + (s / "out" / "results.csv").string(), s);
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_NE(r.out.find("mean task=genre channels=4 regime=fix n=4"), std::string::npos) << r.out;

  fs::remove_all(s / "out");
  r = Cli("train-task " + manifest, s);
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(r.err.rfind("error not_found: stage estimator", 0), 0u) << r.err;
  ASSERT_EQ(Cli("-q train-estimator " + manifest, s).status, 0);
  r = Cli("-q train-task " + manifest, s);
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(Slurp(s / "out" / "results.csv"), results);

  r = Cli("run " + manifest + " --seed 7", s);
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(workbench::ReadResultsCsv(s / "out" / "results.csv").size(), 8u);
}

}  // namespace
}  // namespace cftransfer
