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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cftransfer/audio/mel.hpp"
#include "cftransfer/cf/als.hpp"
#include "cftransfer/core/config.hpp"
#include "cftransfer/core/error.hpp"
#include "cftransfer/nn/network.hpp"
#include "cftransfer/transfer/data.hpp"
#include "cftransfer/transfer/task.hpp"
#include "cftransfer/workbench/dataset.hpp"
#include "cftransfer/workbench/world.hpp"

namespace cftransfer::workbench {

inline constexpr int kSchemaVersion = 1;

/// Everything needed to reproduce a run. Relative paths resolve against the
/// manifest file's directory.
struct RunManifest {
  int schema_version = kSchemaVersion;
  std::optional<WorldConfig> world;
  std::optional<DatasetPaths> dataset;
  cf::AlsConfig als;
  audio::FeatureConfig features;
  double crop_seconds = 0.0;  // 0 keeps the whole waveform
  nlohmann::json architecture = {{"preset", "cf_estimator_desk"}};
  std::vector<std::size_t> channels{8};
  transfer::TrainConfig estimator;
  double estimator_validation_fraction = 0.15;
  transfer::TaskSpec task{"genre", transfer::TaskKind::kClassification, 0};
  transfer::TrainConfig task_training;
  double task_validation_fraction = 0.2;
  std::vector<transfer::Regime> regimes{transfer::Regime::kBase, transfer::Regime::kFix, transfer::Regime::kInit,
                                        transfer::Regime::kKd};
  double kd_weight = 1.0;
  bool normalize_targets = false;  // L2-normalize item vectors before they become estimator targets
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t kfold = 5;
  std::vector<std::size_t> folds{0};
  bool deterministic = true;
  std::filesystem::path output_dir = "out";

  nn::ArchitectureSpec Architecture(std::size_t f) const {
    nlohmann::json j = architecture;
    j["channels"] = f;
    return nn::ArchitectureFromJson(j);
  }

  void Validate() const {
    Require(schema_version == kSchemaVersion, ErrorKind::kConfig,
            "unsupported schema_version " + std::to_string(schema_version));
    Require(world.has_value() != dataset.has_value(), ErrorKind::kConfig,
            "manifest needs exactly one of 'world' or 'dataset'");
    if (dataset) dataset->RequireExist();
    als.Validate();
    features.Validate();
    Require(crop_seconds >= 0.0, ErrorKind::kConfig, "crop_seconds must be >= 0");
    Require(!channels.empty(), ErrorKind::kConfig, "channels list is empty");
    for (std::size_t f : channels) Architecture(f);
    estimator.Validate();
    task_training.Validate();
    for (double frac : {estimator_validation_fraction, task_validation_fraction})
      Require(frac > 0.0 && frac < 1.0, ErrorKind::kConfig, "validation fractions must lie in (0, 1)");
    Require(!regimes.empty(), ErrorKind::kConfig, "regimes list is empty");
    Require(std::isfinite(kd_weight) && kd_weight >= 0.0, ErrorKind::kConfig, "kd_weight must be >= 0");
    Require(!seeds.empty(), ErrorKind::kConfig, "seeds list is empty");
    Require(kfold >= 2, ErrorKind::kConfig, "kfold must be >= 2");
    Require(!folds.empty(), ErrorKind::kConfig, "folds list is empty");
    for (std::size_t f : folds) Require(f < kfold, ErrorKind::kConfig, "fold index out of range");
  }
};

namespace detail {

inline transfer::TrainConfig TrainFromJson(const nlohmann::json& j, const std::string& where,
                                           transfer::TrainConfig c) {
  ConfigReader r(j, where);
  r.Get("epochs", c.epochs);
  r.Get("batch_size", c.batch_size);
  r.Get("learning_rate", c.adam.learning_rate);
  r.Get("beta1", c.adam.beta1);
  r.Get("beta2", c.adam.beta2);
  r.Get("epsilon", c.adam.epsilon);
  r.Get("seed", c.seed);
  r.Get("patience", c.patience);
  r.Get("eval_batch", c.eval_batch);
  r.Finish();
  return c;
}

inline nlohmann::json TrainToJson(const transfer::TrainConfig& c) {
  return {{"epochs", c.epochs},           {"batch_size", c.batch_size}, {"learning_rate", c.adam.learning_rate},
          {"beta1", c.adam.beta1},        {"beta2", c.adam.beta2},      {"epsilon", c.adam.epsilon},
          {"seed", c.seed},               {"patience", c.patience},     {"eval_batch", c.eval_batch}};
}

inline std::filesystem::path Resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace detail

inline cf::AlsConfig AlsConfigFromJson(const nlohmann::json& j) {
  cf::AlsConfig c;
  ConfigReader r(j, "als");
  r.Get("n_factors", c.n_factors);
  r.Get("reg_lambda", c.reg_lambda);
  r.Get("alpha", c.alpha);
  r.Get("n_iterations", c.n_iterations);
  r.Get("seed", c.seed);
  r.Get("scale_reg_by_count", c.scale_reg_by_count);
  r.Get("n_threads", c.n_threads);
  r.Finish();
  c.Validate();
  return c;
}

inline nlohmann::json ToJson(const cf::AlsConfig& c) {
  return {{"n_factors", c.n_factors},       {"reg_lambda", c.reg_lambda},
          {"alpha", c.alpha},               {"n_iterations", c.n_iterations},
          {"seed", c.seed},                 {"scale_reg_by_count", c.scale_reg_by_count},
          {"n_threads", c.n_threads}};
}

/// Feature settings plus an optional "crop_seconds".
inline audio::FeatureConfig FeatureConfigFromJson(const nlohmann::json& j, double* crop_seconds = nullptr) {
  audio::FeatureConfig c;
  ConfigReader r(j, "features");
  r.Get("n_fft", c.n_fft);
  r.Get("hop", c.hop);
  r.Get("n_mels", c.n_mels);
  r.Get("sample_rate", c.sample_rate);
  r.Get("fmin", c.fmin);
  r.Get("fmax", c.fmax);
  r.Get("log_compress", c.log_compress);
  r.Get("log_floor", c.log_floor);
  double crop = 0.0;
  r.Get("crop_seconds", crop);
  if (crop_seconds) *crop_seconds = crop;
  r.Finish();
  c.Validate();
  return c;
}

inline nlohmann::json ToJson(const audio::FeatureConfig& c, double crop_seconds) {
  return {{"n_fft", c.n_fft},   {"hop", c.hop},   {"n_mels", c.n_mels},
          {"sample_rate", c.sample_rate},          {"fmin", c.fmin},
          {"fmax", c.fmax},     {"log_compress", c.log_compress},
          {"log_floor", c.log_floor},              {"crop_seconds", crop_seconds}};
}

inline RunManifest ManifestFromJson(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  RunManifest m;
  ConfigReader r(j, "manifest");
  Require(r.Get("schema_version", m.schema_version), ErrorKind::kConfig, "manifest: missing schema_version");
  if (r.Has("world")) m.world = WorldConfigFromJson(r.At("world"));
  if (r.Has("dataset")) {
    ConfigReader d(r.At("dataset"), "dataset");
    std::string logs, audio_dir, labels;
    Require(d.Get("logs", logs) && d.Get("audio_dir", audio_dir) && d.Get("labels", labels), ErrorKind::kConfig,
            "dataset needs logs, audio_dir and labels");
    d.Finish();
    m.dataset = DatasetPaths{detail::Resolve(base_dir, logs), detail::Resolve(base_dir, audio_dir),
                             detail::Resolve(base_dir, labels)};
  }
  if (r.Has("als")) m.als = AlsConfigFromJson(r.At("als"));
  if (r.Has("features")) m.features = FeatureConfigFromJson(r.At("features"), &m.crop_seconds);
  if (r.Has("architecture")) m.architecture = r.At("architecture");
  r.Get("channels", m.channels);
  if (r.Has("estimator")) {
    ConfigReader e(r.At("estimator"), "estimator");
    e.Get("validation_fraction", m.estimator_validation_fraction);
    nlohmann::json rest = r.At("estimator");
    rest.erase("validation_fraction");
    m.estimator = detail::TrainFromJson(rest, "estimator", m.estimator);
  }
  if (r.Has("task")) {
    ConfigReader t(r.At("task"), "task");
    std::string kind = "classification";
    t.Get("name", m.task.name);
    t.Get("kind", kind);
    t.Get("validation_fraction", m.task_validation_fraction);
    Require(kind == "classification" || kind == "regression", ErrorKind::kConfig,
            "task.kind must be classification or regression");
    m.task.kind = kind == "classification" ? transfer::TaskKind::kClassification : transfer::TaskKind::kRegression;
    nlohmann::json rest = r.At("task");
    for (const char* k : {"name", "kind", "validation_fraction"}) rest.erase(k);
    m.task_training = detail::TrainFromJson(rest, "task", m.task_training);
  }
  if (r.Has("regimes")) {
    m.regimes.clear();
    std::vector<std::string> names;
    r.Get("regimes", names);
    for (const auto& n : names) m.regimes.push_back(transfer::ParseRegime(n));
  }
  r.Get("kd_weight", m.kd_weight);
  r.Get("normalize_targets", m.normalize_targets);
  r.Get("seeds", m.seeds);
  r.Get("kfold", m.kfold);
  r.Get("folds", m.folds);
  r.Get("deterministic", m.deterministic);
  std::string out;
  if (r.Get("output_dir", out)) m.output_dir = detail::Resolve(base_dir, out);
  r.Finish();
  m.Validate();
  return m;
}

inline nlohmann::json ToJson(const RunManifest& m) {
  nlohmann::json j;
  j["schema_version"] = m.schema_version;
  if (m.world) j["world"] = ToJson(*m.world);
  if (m.dataset)
    j["dataset"] = {{"logs", m.dataset->logs.string()},
                    {"audio_dir", m.dataset->audio_dir.string()},
                    {"labels", m.dataset->labels.string()}};
  j["als"] = ToJson(m.als);
  j["features"] = ToJson(m.features, m.crop_seconds);
  j["architecture"] = m.architecture;
  j["channels"] = m.channels;
  j["estimator"] = detail::TrainToJson(m.estimator);
  j["estimator"]["validation_fraction"] = m.estimator_validation_fraction;
  j["task"] = detail::TrainToJson(m.task_training);
  j["task"]["name"] = m.task.name;
  j["task"]["kind"] = m.task.kind == transfer::TaskKind::kClassification ? "classification" : "regression";
  j["task"]["validation_fraction"] = m.task_validation_fraction;
  std::vector<std::string> regimes;
  for (auto r : m.regimes) regimes.push_back(transfer::ToString(r));
  j["regimes"] = regimes;
  j["kd_weight"] = m.kd_weight;
  j["normalize_targets"] = m.normalize_targets;
  j["seeds"] = m.seeds;
  j["kfold"] = m.kfold;
  j["folds"] = m.folds;
  j["deterministic"] = m.deterministic;
  j["output_dir"] = m.output_dir.string();
  return j;
}

inline RunManifest LoadManifest(const std::filesystem::path& path) {
  return ManifestFromJson(ReadJsonFile(path), path.parent_path());
}

}  // namespace cftransfer::workbench
