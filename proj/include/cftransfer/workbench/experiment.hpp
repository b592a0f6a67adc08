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

#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cftransfer/audio/mel.hpp"
#include "cftransfer/audio/waveform.hpp"
#include "cftransfer/cf/als.hpp"
#include "cftransfer/cf/interaction_matrix.hpp"
#include "cftransfer/core/config.hpp"
#include "cftransfer/core/error.hpp"
#include "cftransfer/nn/network.hpp"
#include "cftransfer/transfer/estimator.hpp"
#include "cftransfer/transfer/metrics.hpp"
#include "cftransfer/transfer/task.hpp"
#include "cftransfer/workbench/cca.hpp"
#include "cftransfer/workbench/dataset.hpp"
#include "cftransfer/workbench/manifest.hpp"
#include "cftransfer/workbench/results.hpp"
#include "cftransfer/workbench/world.hpp"

namespace cftransfer::workbench {

namespace fs = std::filesystem;

/// Runs a stage body; failures are recorded in <out>/FAILED and rethrown
/// with the stage name prefixed. Artifacts already written stay in place.
template <class Fn>
auto RunStage(const std::string& name, const fs::path& out_dir, Fn&& fn) -> decltype(fn()) {
  auto fail = [&](ErrorKind kind, const char* what) {
    const std::string message = "stage " + name + ": " + what;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::ofstream(out_dir / "FAILED", std::ios::trunc) << ToString(kind) << ": " << message << "\n";
    return Error(kind, message);
  };
  try {
    return fn();
  } catch (const Error& e) {
    throw fail(e.kind(), e.what());
  } catch (const fs::filesystem_error& e) {
    throw fail(ErrorKind::kIo, e.what());
  }
}

/// Mel features for one waveform, laid out as an (n_mels, frames, 1) sample.
inline std::vector<double> ExtractFeatures(const audio::Waveform& wave, const audio::FeatureConfig& config,
                                           double crop_seconds) {
  Require(wave.sample_rate == config.sample_rate, ErrorKind::kConfig,
          "audio sample rate " + FormatDouble(wave.sample_rate) + " != feature sample rate " +
              FormatDouble(config.sample_rate));
  const audio::MelSpectrogram mel =
      audio::Melspectrogram(crop_seconds > 0.0 ? audio::CropMiddle(wave, crop_seconds) : wave, config);
  return mel.grid.data;
}

struct PreparedData {
  Dataset dataset;
  std::optional<World> world;
  cf::CfEmbedding embedding;
  Eigen::VectorXd canonical_correlations;  // synthetic worlds only
  transfer::EstimatorData estimator_train;
  transfer::EstimatorData estimator_validation;
  transfer::TaskData task;
  std::vector<std::string> task_ids;
};

struct RunOptions {
  bool train_tasks = true;
  bool reuse_estimators = false;  // load checkpoints/estimator_F<F>.ckpt instead of training
  std::function<void(const std::string&)> log;
};

struct RunOutput {
  PreparedData data;
  std::vector<nn::NetworkModel> estimators;  // one per channel count
  std::vector<transfer::EstimatorResult> estimator_runs;
  std::vector<transfer::ExperimentResult> results;
  std::vector<ResultRow> rows;
};

inline std::string CellName(const std::string& task, transfer::Regime r, std::size_t f, std::uint64_t seed,
                            std::size_t fold) {
  return task + "_" + transfer::ToString(r) + "_F" + std::to_string(f) + "_s" + std::to_string(seed) + "_f" +
         std::to_string(fold);
}

inline fs::path EstimatorCheckpoint(const fs::path& out, std::size_t f) {
  return out / "checkpoints" / ("estimator_F" + std::to_string(f) + ".ckpt");
}

/// Data, ALS and feature stages.
inline PreparedData PrepareData(const RunManifest& m, const RunOptions& opt) {
  const fs::path out = m.output_dir;
  auto log = [&](const std::string& s) {
    if (opt.log) opt.log(s);
  };
  PreparedData p;
  RunStage("data", out, [&] {
    if (m.world) {
      log("generating synthetic world");
      p.world = GenerateWorld(*m.world);
      p.dataset = p.world->dataset;
      cf::WriteListeningLogs(out / "world" / "logs.tsv", p.dataset.logs);
      WriteLabels(out / "world" / "labels.csv", p.dataset.task_items);
      WriteJsonFile(out / "world" / "world.json", ToJson(*m.world));
    } else {
      log("loading dataset");
      p.dataset = LoadDataset(*m.dataset);
    }
    Require(!p.dataset.logs.empty(), ErrorKind::kEmptyInput, "no listening logs");
    Require(!p.dataset.task_items.empty(), ErrorKind::kEmptyInput, "no labeled task items");
  });

  RunStage("als", out, [&] {
    log("fitting ALS embeddings");
    const cf::UserItemMatrix matrix = cf::BuildInteractionMatrix(p.dataset.logs);
    cf::AlsConfig als = m.als;
    if (m.deterministic) als.n_threads = 1;
    p.embedding = cf::AlsFit(matrix, als);
    cf::SaveItemVectors(out / "embeddings" / "item_vectors.cftable", p.embedding);
    if (p.world) {
      Eigen::MatrixXd learned(p.world->item_latents.rows(), p.embedding.n_factors());
      for (Eigen::Index i = 0; i < learned.rows(); ++i)
        learned.row(i) = p.embedding.ItemVector(p.world->item_ids[static_cast<std::size_t>(i)]).transpose();
      p.canonical_correlations = CanonicalCorrelations(learned, p.world->item_latents);
      std::vector<double> cc(p.canonical_correlations.data(),
                             p.canonical_correlations.data() + p.canonical_correlations.size());
      WriteJsonFile(out / "world" / "diagnostics.json",
                    {{"canonical_correlations", cc}, {"mean_canonical_correlation", p.canonical_correlations.mean()}});
    }
  });

  RunStage("features", out, [&] {
    log("extracting mel features");
    const nn::Shape shape{static_cast<std::size_t>(m.features.n_mels), 0, 1};
    auto sample = [&](const std::string& id) {
      return ExtractFeatures(p.dataset.Audio(id), m.features, m.crop_seconds);
    };
    std::vector<std::vector<double>> est_x;
    std::vector<std::vector<double>> est_y;
    for (const auto& id : p.embedding.item_ids()) {
      if (std::find(p.dataset.audio_ids.begin(), p.dataset.audio_ids.end(), id) == p.dataset.audio_ids.end())
        continue;
      Eigen::VectorXd v = p.embedding.ItemVector(id);
      if (v.isZero(0.0)) continue;
      if (m.normalize_targets) v.normalize();
      est_x.push_back(sample(id));
      est_y.emplace_back(v.data(), v.data() + v.size());
    }
    Require(est_x.size() >= 3, ErrorKind::kEmptyInput, "fewer than three logged items have audio");
    const std::size_t frames = est_x.front().size() / shape[0];
    const nn::Shape sample_shape{shape[0], frames, 1};

    std::vector<std::size_t> order(est_x.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(transfer::DeriveSeed(m.estimator.seed, 21));
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(m.estimator_validation_fraction * static_cast<double>(order.size()))));
    p.estimator_train.features.sample_shape = p.estimator_validation.features.sample_shape = sample_shape;
    for (std::size_t k = 0; k < order.size(); ++k) {
      auto& dst = k < n_val ? p.estimator_validation : p.estimator_train;
      dst.features.samples.push_back(std::move(est_x[order[k]]));
      dst.targets.push_back(std::move(est_y[order[k]]));
    }

    p.task.features.sample_shape = sample_shape;
    for (const auto& item : p.dataset.task_items) {
      p.task_ids.push_back(item.id);
      p.task.features.samples.push_back(sample(item.id));
      Require(p.task.features.samples.back().size() == nn::NumElements(sample_shape), ErrorKind::kDimensionMismatch,
              "item " + item.id + " has a different feature length");
      p.task.labels.push_back(item.label);
      p.task.targets.push_back(item.target);
    }
  });
  return p;
}

/// Train/validation/test indices for one (seed, fold) cell. Validation is a
/// stratified holdout of the training part.
inline transfer::Split MakeSplit(std::span<const std::size_t> labels, std::size_t kfold, std::size_t fold,
                                 std::uint64_t seed, double validation_fraction) {
  const auto folds = transfer::StratifiedKFold(labels, kfold, seed);
  transfer::Split split;
  split.fold = fold;
  split.test = folds.at(fold).test;
  const auto& rest = folds[fold].train;
  std::vector<std::size_t> rest_labels;
  for (std::size_t i : rest) rest_labels.push_back(labels[i]);
  const auto k = std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(1.0 / validation_fraction)));
  const auto inner = transfer::StratifiedKFold(rest_labels, k, transfer::DeriveSeed(seed, 40 + fold));
  for (std::size_t i : inner[0].test) split.validation.push_back(rest[i]);
  for (std::size_t i : inner[0].train) split.train.push_back(rest[i]);
  return split;
}

/// End to end: data -> ALS -> features -> CF estimators -> task regimes ->
/// results.csv. In deterministic mode the seconds column is written as 0 and
/// wall times go to timings.csv instead.
inline RunOutput RunExperiment(const RunManifest& m, const RunOptions& opt = {}) {
  m.Validate();
  const fs::path out = m.output_dir;
  fs::create_directories(out);
  fs::remove(out / "FAILED");
  WriteJsonFile(out / "manifest.json", ToJson(m));
  auto log = [&](const std::string& s) {
    if (opt.log) opt.log(s);
  };

  RunOutput run;
  run.data = PrepareData(m, opt);
  PreparedData& p = run.data;

  RunStage("estimator", out, [&] {
    for (std::size_t f : m.channels) {
      nn::ArchitectureSpec arch = m.Architecture(f);
      Require(arch.InputShape(1) == nn::Shape({1, p.task.features.sample_shape[0], p.task.features.sample_shape[1], 1}),
              ErrorKind::kConfig,
              "architecture input " + nn::ToString(arch.InputShape(1)) + " does not match features " +
                  nn::ToString(p.task.features.sample_shape));
      Require(arch.output_dim == static_cast<std::size_t>(p.embedding.n_factors()), ErrorKind::kConfig,
              "architecture output_dim must equal the embedding width");
      const fs::path ckpt = EstimatorCheckpoint(out, f);
      if (opt.reuse_estimators) {
        log("loading estimator F=" + std::to_string(f));
        Require(fs::exists(ckpt), ErrorKind::kNotFound,
                ckpt.string() + " not found; run train-estimator first");
        run.estimators.push_back(nn::LoadCheckpoint(ckpt, &arch));
        continue;
      }
      log("training CF estimator F=" + std::to_string(f));
      auto result = transfer::TrainCfEstimator(arch, p.estimator_train, p.estimator_validation, m.estimator);
      nn::SaveCheckpoint(ckpt, result.model);
      WriteCurveCsv(out / "curves" / ("estimator_F" + std::to_string(f) + ".csv"), result.curve);
      run.estimators.push_back(result.model);
      run.estimator_runs.push_back(std::move(result));
    }
  });
  if (!opt.train_tasks) return run;

  RunStage("task", out, [&] {
    transfer::TaskSpec spec = m.task;
    if (spec.kind == transfer::TaskKind::kClassification) {
      spec.n_outputs = p.dataset.n_classes;
    } else {
      Require(!p.task.targets.empty() && !p.task.targets.front().empty(), ErrorKind::kConfig,
              "regression task needs target columns in the labels");
      spec.n_outputs = p.task.targets.front().size();
    }
    nlohmann::json folds_json = {{"task", spec.name}, {"kfold", m.kfold}, {"item_ids", p.task_ids}, {"cells", {}}};
    std::vector<std::string> timings;
    for (std::size_t fi = 0; fi < m.channels.size(); ++fi) {
      const std::size_t f = m.channels[fi];
      const nn::ArchitectureSpec arch = m.Architecture(f);
      for (std::uint64_t seed : m.seeds) {
        for (std::size_t fold : m.folds) {
          const transfer::Split split = MakeSplit(p.task.labels, m.kfold, fold, seed, m.task_validation_fraction);
          if (fi == 0)
            folds_json["cells"].push_back(
                {{"seed", seed}, {"fold", fold}, {"train", split.train}, {"validation", split.validation},
                 {"test", split.test}});
          for (transfer::Regime regime : m.regimes) {
            transfer::RegimeConfig rc{regime, m.kd_weight, m.task_training};
            rc.train.seed = seed;
            auto cell = transfer::TrainTask(spec, p.task, split, rc, arch,
                                            regime == transfer::Regime::kBase ? nullptr : &run.estimators[fi]);
            const auto& r = cell.result;
            const std::string name = CellName(spec.name, regime, f, seed, fold);
            log(name + " metric=" + FormatDouble(r.metric, "%.4f") + " epochs=" + std::to_string(r.epochs));
            WriteCurveCsv(out / "curves" / (name + ".csv"), r.curve);
            run.rows.push_back({spec.name, transfer::ToString(regime), f, seed, fold, r.metric, r.epochs,
                                m.deterministic ? 0.0 : r.seconds});
            timings.push_back(name + "," + FormatDouble(r.seconds, "%.3f"));
            run.results.push_back(std::move(cell.result));
          }
        }
      }
    }
    WriteJsonFile(out / "folds.json", folds_json);
    WriteResultsCsv(out / "results.csv", run.rows);
    std::ofstream t(out / "timings.csv", std::ios::trunc);
    t << "cell,seconds\n";
    for (const auto& line : timings) t << line << "\n";
  });
  return run;
}

}  // namespace cftransfer::workbench
