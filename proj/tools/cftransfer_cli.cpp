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

// Command-line front end. Errors print one line, `error <kind>: <message>`,
// on stderr and exit with status 1; usage errors exit with CLI11's codes.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cftransfer/audio/mel.hpp"
#include "cftransfer/audio/waveform.hpp"
#include "cftransfer/cf/als.hpp"
#include "cftransfer/cf/interaction_matrix.hpp"
#include "cftransfer/core/config.hpp"
#include "cftransfer/core/error.hpp"
#include "cftransfer/core/float_table.hpp"
#include "cftransfer/workbench/dataset.hpp"
#include "cftransfer/workbench/experiment.hpp"
#include "cftransfer/workbench/manifest.hpp"
#include "cftransfer/workbench/results.hpp"
#include "cftransfer/workbench/world.hpp"

namespace fs = std::filesystem;
using namespace cftransfer;

namespace {

struct GlobalFlags {
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string config;
  bool quiet = false;
};

workbench::RunManifest LoadManifestWithFlags(const std::string& path, const GlobalFlags& g) {
  nlohmann::json j = ReadJsonFile(path);
  if (!g.config.empty()) j.merge_patch(ReadJsonFile(g.config));
  if (g.seed) j["seeds"] = {*g.seed};
  if (g.deterministic) j["deterministic"] = true;
  return workbench::ManifestFromJson(j, fs::path(path).parent_path());
}

workbench::RunOptions Options(const GlobalFlags& g) {
  workbench::RunOptions o;
  if (!g.quiet) o.log = [](const std::string& s) { std::cout << "[run] " << s << std::endl; };
  return o;
}

int AlsFit(const std::string& logs_path, const std::string& out, const GlobalFlags& g) {
  cf::AlsConfig config;
  if (!g.config.empty()) config = workbench::AlsConfigFromJson(ReadJsonFile(g.config));
  if (g.seed) config.seed = *g.seed;
  if (g.deterministic) config.n_threads = 1;
  const auto logs = cf::ReadListeningLogs(logs_path);
  const auto emb = cf::AlsFit(cf::BuildInteractionMatrix(logs), config);
  cf::SaveItemVectors(out, emb);
  std::cout << "wrote " << emb.item_ids().size() << " item vectors (" << emb.n_factors() << " factors) to " << out
            << "\n";
  return 0;
}

int Features(const std::string& audio_dir, const std::string& out, const GlobalFlags& g) {
  audio::FeatureConfig config;
  double crop = 0.0;
  if (!g.config.empty()) config = workbench::FeatureConfigFromJson(ReadJsonFile(g.config), &crop);
  Require(fs::is_directory(audio_dir), ErrorKind::kIo, "not a directory: " + audio_dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(audio_dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".wav" || ext == ".f32")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  Require(!files.empty(), ErrorKind::kEmptyInput, "no .wav or .f32 files in " + audio_dir);
  fs::create_directories(out);
  for (const auto& f : files) {
    const auto wave = audio::ReadWaveform(f);
    const auto mel = audio::Melspectrogram(crop > 0.0 ? audio::CropMiddle(wave, crop) : wave, config);
    audio::SaveMelGrid(fs::path(out) / (f.stem().string() + ".cftable"), mel.grid);
  }
  std::cout << "wrote " << files.size() << " mel grids to " << out << "\n";
  return 0;
}

int GenerateWorld(const std::string& config_path, const std::string& out, const GlobalFlags& g) {
  nlohmann::json j = ReadJsonFile(config_path);
  if (j.contains("schema_version")) {
    Require(j.contains("world"), ErrorKind::kConfig, config_path + ": manifest has no 'world' section");
    j = j.at("world");
  }
  if (g.seed) j["seed"] = *g.seed;
  const workbench::World world = workbench::GenerateWorld(workbench::WorldConfigFromJson(j));
  workbench::SaveDataset(out, world.dataset);
  WriteJsonFile(fs::path(out) / "world.json", workbench::ToJson(world.config));
  FloatTable latents;
  latents.cols = world.config.latent_dim;
  for (Eigen::Index i = 0; i < world.item_latents.rows(); ++i) {
    latents.row_ids.push_back(world.item_ids[static_cast<std::size_t>(i)]);
    for (Eigen::Index k = 0; k < world.item_latents.cols(); ++k) latents.values.push_back(world.item_latents(i, k));
  }
  for (Eigen::Index i = 0; i < world.task_latents.rows(); ++i) {
    latents.row_ids.push_back(world.dataset.task_items[static_cast<std::size_t>(i)].id);
    for (Eigen::Index k = 0; k < world.task_latents.cols(); ++k) latents.values.push_back(world.task_latents(i, k));
  }
  WriteFloatTable(fs::path(out) / "latents.cftable", latents);
  std::cout << "wrote " << world.dataset.logs.size() << " log rows, " << world.dataset.audio.size()
            << " waveforms and " << world.dataset.task_items.size() << " labels to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cftransfer: CF-embedding knowledge transfer for audio models"};
  app.require_subcommand(1);
  GlobalFlags g;
  app.add_option("--seed", g.seed, "Seed override (world/ALS seed, or the run's seed list)");
  app.add_flag("--deterministic", g.deterministic, "Single-threaded, byte-reproducible outputs");
  app.add_option("--config", g.config, "Config file (ALS/feature settings, or a JSON merge patch for manifests)");
  app.add_flag("-q,--quiet", g.quiet, "No progress output");

  std::string a, b;
  auto* als = app.add_subcommand("als-fit", "Fit ALS item vectors from a listening-log TSV");
  als->add_option("logs", a, "user<TAB>item[<TAB>count] file")->required();
  als->add_option("out", b, "Output embedding table")->required();
  auto* feats = app.add_subcommand("features", "Mel spectrograms for every .wav/.f32 in a directory");
  feats->add_option("audio-dir", a)->required();
  feats->add_option("out", b, "Output directory")->required();
  auto* est = app.add_subcommand("train-estimator", "Data, ALS, features and CF-estimator stages of a manifest");
  est->add_option("manifest", a)->required();
  auto* task = app.add_subcommand("train-task", "Task regimes using estimators from a prior train-estimator");
  task->add_option("manifest", a)->required();
  auto* eval = app.add_subcommand("evaluate", "Per-regime means and paired t-tests from a results CSV");
  eval->add_option("results", a)->required();
  auto* world = app.add_subcommand("generate-world", "Write a synthetic dataset directory");
  world->add_option("config", a, "World config, or a manifest with a 'world' section")->required();
  world->add_option("out", b)->required();
  auto* run = app.add_subcommand("run", "Every stage of a manifest end to end");
  run->add_option("manifest", a)->required();
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*als) return AlsFit(a, b, g);
    if (*feats) return Features(a, b, g);
    if (*world) return GenerateWorld(a, b, g);
    if (*eval) {
      std::cout << workbench::EvaluateSummary(workbench::ReadResultsCsv(a));
      return 0;
    }
    const workbench::RunManifest m = LoadManifestWithFlags(a, g);
    workbench::RunOptions opt = Options(g);
    if (*est) {
      opt.train_tasks = false;
      workbench::RunExperiment(m, opt);
      std::cout << "estimators written to " << (m.output_dir / "checkpoints").string() << "\n";
      return 0;
    }
    if (*task) opt.reuse_estimators = true;
    const auto out = workbench::RunExperiment(m, opt);
    std::cout << workbench::EvaluateSummary(out.rows);
    std::cout << "results written to " << (m.output_dir / "results.csv").string() << "\n";
    return 0;
  } catch (const Error& e) {
    std::cerr << "error " << ToString(e.kind()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error internal: " << e.what() << "\n";
    return 1;
  }
}
