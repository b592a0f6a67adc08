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
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cftransfer/core/error.hpp"
#include "cftransfer/nn/adam.hpp"
#include "cftransfer/nn/layers.hpp"
#include "cftransfer/nn/losses.hpp"
#include "cftransfer/nn/network.hpp"
#include "cftransfer/transfer/data.hpp"
#include "cftransfer/transfer/distill.hpp"
#include "cftransfer/transfer/metrics.hpp"

namespace cftransfer::transfer {

enum class Regime { kBase, kFix, kInit, kKd };

inline std::string ToString(Regime r) {
  switch (r) {
    case Regime::kBase: return "base";
    case Regime::kFix: return "fix";
    case Regime::kInit: return "init";
    case Regime::kKd: return "kd";
  }
  return "?";
}

inline Regime ParseRegime(const std::string& s) {
  if (s == "base") return Regime::kBase;
  if (s == "fix") return Regime::kFix;
  if (s == "init") return Regime::kInit;
  if (s == "kd") return Regime::kKd;
  Fail(ErrorKind::kConfig, "unknown regime: " + s);
}

struct RegimeConfig {
  Regime regime = Regime::kBase;
  double kd_weight = 1.0;
  TrainConfig train;

  void Validate() const {
    train.Validate();
    Require(std::isfinite(kd_weight) && kd_weight >= 0.0, ErrorKind::kConfig, "kd_weight must be finite and >= 0");
  }
};

enum class TaskKind { kClassification, kRegression };

struct TaskSpec {
  std::string name = "task";
  TaskKind kind = TaskKind::kClassification;
  std::size_t n_outputs = 2;  // classes, or target dimension

  void Validate() const {
    if (kind == TaskKind::kClassification)
      Require(n_outputs >= 2, ErrorKind::kConfig, "classification needs at least two classes");
    else
      Require(n_outputs >= 1, ErrorKind::kConfig, "regression needs a target dimension");
  }
};

/// Features plus labels (classification) or targets (regression).
struct TaskData {
  FeatureSet features;
  std::vector<std::size_t> labels;
  std::vector<std::vector<double>> targets;

  void Validate(const TaskSpec& spec) const {
    spec.Validate();
    Require(features.size() > 0, ErrorKind::kEmptyInput, "task has no items");
    if (spec.kind == TaskKind::kClassification) {
      Require(labels.size() == features.size(), ErrorKind::kDimensionMismatch, "label count != item count");
      for (std::size_t l : labels)
        Require(l < spec.n_outputs, ErrorKind::kInvalidArgument, "label " + std::to_string(l) + " out of range");
    } else {
      Require(targets.size() == features.size(), ErrorKind::kDimensionMismatch, "target count != item count");
      for (const auto& t : targets) {
        Require(t.size() == spec.n_outputs, ErrorKind::kDimensionMismatch, "target width mismatch");
        for (double v : t) Require(std::isfinite(v), ErrorKind::kNumerical, "regression target is not finite");
      }
    }
  }
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  std::size_t fold = 0;
};

/// Backbone ending in the linear 40-d penultimate layer, plus a linear head.
struct TaskModel {
  nn::NetworkModel body;
  nn::Sequential head;

  std::vector<nn::Parameter*> Parameters(bool include_body) {
    std::vector<nn::Parameter*> out;
    if (include_body) out = body.net.Parameters();
    for (nn::Parameter* p : head.Parameters()) out.push_back(p);
    return out;
  }

  nn::Tensor Predict(const nn::Tensor& x) {
    return head.Forward(body.Forward(x, nn::Mode::kEval), nn::Mode::kEval);
  }
};

struct ExperimentResult {
  std::string task;
  Regime regime = Regime::kBase;
  std::size_t channels = 0;
  std::uint64_t seed = 0;
  std::size_t fold = 0;
  double metric = 0.0;
  std::size_t epochs = 0;
  double seconds = 0.0;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> curve;
};

struct TaskRun {
  TaskModel model;
  ExperimentResult result;
};

/// Softmax cross-entropy or MSE, averaged over the batch rows.
inline BatchLoss TaskLoss(const TaskSpec& spec, const nn::Tensor& out, const TaskData& data,
                          std::span<const std::size_t> rows) {
  Require(out.rank() == 2 && out.dim(0) == rows.size() && out.dim(1) == spec.n_outputs,
          ErrorKind::kDimensionMismatch, "task output has shape " + nn::ToString(out.shape()));
  const std::size_t b = rows.size(), k = spec.n_outputs;
  BatchLoss loss{0.0, nn::Tensor(out.shape())};
  for (std::size_t r = 0; r < b; ++r) {
    const std::span<const double> row(out.data() + r * k, k);
    const nn::LossResult l = spec.kind == TaskKind::kClassification
                                 ? nn::SoftmaxCrossEntropy(row, data.labels[rows[r]])
                                 : nn::MseLoss(row, data.targets[rows[r]]);
    loss.value += l.value;
    for (std::size_t i = 0; i < k; ++i) loss.grad[r * k + i] = l.grad[i] / static_cast<double>(b);
  }
  loss.value /= static_cast<double>(b);
  return loss;
}

/// Accuracy of argmax predictions, or r^2 averaged over target dimensions.
inline double TaskMetric(const TaskSpec& spec, const nn::Tensor& out, const TaskData& data,
                         std::span<const std::size_t> rows) {
  const std::size_t k = spec.n_outputs;
  if (spec.kind == TaskKind::kClassification) {
    std::vector<std::size_t> pred, truth;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const double* row = out.data() + r * k;
      pred.push_back(static_cast<std::size_t>(std::max_element(row, row + k) - row));
      truth.push_back(data.labels[rows[r]]);
    }
    return Accuracy(pred, truth);
  }
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    std::vector<double> p, t;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      p.push_back(out[r * k + j]);
      t.push_back(data.targets[rows[r]][j]);
    }
    total += RSquared(p, t);
  }
  return total / static_cast<double>(k);
}

namespace detail {

inline nn::Tensor Gather(const nn::Tensor& table, std::span<const std::size_t> rows) {
  const std::size_t w = table.dim(1);
  nn::Tensor out({rows.size(), w});
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy(table.data() + rows[r] * w, table.data() + (rows[r] + 1) * w, out.data() + r * w);
  return out;
}

/// Inference-mode outputs of `model` for every item, shape (n_items, D).
inline nn::Tensor ForwardAll(nn::NetworkModel& model, const FeatureSet& features, std::size_t eval_batch) {
  std::vector<std::size_t> all(features.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  nn::Tensor out;
  for (const auto& chunk : Chunks(all, eval_batch)) {
    const nn::Tensor part = model.Forward(features.Batch(chunk), nn::Mode::kEval);
    if (out.size() == 0) out = nn::Tensor({features.size(), part.dim(1)});
    std::copy(part.data(), part.data() + part.size(), out.data() + chunk.front() * part.dim(1));
  }
  return out;
}

}  // namespace detail

/// Called with epoch 0 (before any update) and after every training epoch.
using TaskObserver = std::function<void(const EpochRecord&, const TaskModel&)>;

/// Trains one task model under a transfer regime:
///   base  random init, task loss only
///   fix   backbone copied from the estimator and frozen; only the head trains
///   init  backbone copied from the estimator; everything trains
///   kd    random init; task loss + kd_weight * distillation(penultimate, estimator(x))
/// The returned model is the snapshot with the lowest validation task loss.
inline TaskRun TrainTask(const TaskSpec& spec, const TaskData& data, const Split& split, const RegimeConfig& config,
                         const nn::ArchitectureSpec& arch, const nn::NetworkModel* estimator,
                         const TaskObserver& observer = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  config.Validate();
  data.Validate(spec);
  arch.Validate();
  Require(split.train.size() >= 2, ErrorKind::kEmptyInput, "train split needs at least two items");
  Require(!split.validation.empty(), ErrorKind::kEmptyInput, "validation split is empty");
  Require(!split.test.empty(), ErrorKind::kEmptyInput, "test split is empty");
  const Regime regime = config.regime;
  if (regime != Regime::kBase) {
    Require(estimator != nullptr, ErrorKind::kInvalidArgument, ToString(regime) + " requires a trained CF estimator");
    Require(estimator->spec == arch, ErrorKind::kConfig,
            "backbone schedule mismatch: estimator " + ToJson(estimator->spec).dump() + " vs task " +
                ToJson(arch).dump());
  }

  TaskModel model;
  if (regime == Regime::kFix || regime == Regime::kInit) {
    model.body = *estimator;
    model.body.net.MarkUpdated();
  } else {
    model.body = nn::NetworkModel::Build(arch, DeriveSeed(config.train.seed, kBodyInit));
  }
  model.head.Add(std::make_unique<nn::FullyConnected>(arch.output_dim, spec.n_outputs));
  nn::Rng head_rng(DeriveSeed(config.train.seed, kHeadInit));
  model.head.Initialize(head_rng);
  nn::Rng shuffle(DeriveSeed(config.train.seed, kShuffle));

  const bool frozen = regime == Regime::kFix;
  const std::size_t eval_batch = config.train.eval_batch;
  nn::Tensor frozen_features;  // fix: penultimate activations of every item
  if (frozen) frozen_features = detail::ForwardAll(model.body, data.features, eval_batch);
  nn::Tensor teacher;  // kd: estimator output per item
  if (regime == Regime::kKd) {
    nn::NetworkModel est = *estimator;
    teacher = detail::ForwardAll(est, data.features, eval_batch);
  }

  auto outputs = [&](std::span<const std::size_t> rows) {
    nn::Tensor all({rows.size(), spec.n_outputs});
    std::size_t at = 0;
    for (const auto& chunk : Chunks(rows, eval_batch)) {
      const nn::Tensor out = frozen ? model.head.Forward(detail::Gather(frozen_features, chunk), nn::Mode::kEval)
                                    : model.Predict(data.features.Batch(chunk));
      std::copy(out.data(), out.data() + out.size(), all.data() + at);
      at += out.size();
    }
    return all;
  };
  auto validation_loss = [&] { return TaskLoss(spec, outputs(split.validation), data, split.validation).value; };

  nn::AdamState adam(config.train.adam);
  SnapshotSelector<TaskModel> selector;
  ExperimentResult result;
  result.task = spec.name;
  result.regime = regime;
  result.channels = arch.channels;
  result.seed = config.train.seed;
  result.fold = split.fold;

  EpochRecord start{0, TaskLoss(spec, outputs(split.train), data, split.train).value, 0.0, validation_loss()};
  result.curve.push_back(start);
  selector.Offer(0, start.val_loss, model);
  if (observer) observer(start, model);

  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.train.epochs; ++epoch) {
    double task_sum = 0.0, aux_sum = 0.0;
    std::size_t seen = 0;
    for (const auto& batch : MakeBatches(split.train, config.train.batch_size, shuffle)) {
      model.head.ZeroGrad();
      nn::Sequential::Cache head_cache;
      if (frozen) {
        const nn::Tensor out = model.head.Forward(detail::Gather(frozen_features, batch), nn::Mode::kTrain, &head_cache);
        const BatchLoss loss = TaskLoss(spec, out, data, batch);
        model.head.Backward(head_cache, loss.grad);
        task_sum += loss.value * static_cast<double>(batch.size());
      } else {
        model.body.net.ZeroGrad();
        nn::Sequential::Cache body_cache;
        const nn::Tensor z = model.body.Forward(data.features.Batch(batch), nn::Mode::kTrain, &body_cache);
        const nn::Tensor out = model.head.Forward(z, nn::Mode::kTrain, &head_cache);
        const BatchLoss loss = TaskLoss(spec, out, data, batch);
        nn::Tensor grad_z = model.head.Backward(head_cache, loss.grad);
        if (regime == Regime::kKd) {
          const nn::Tensor target = detail::Gather(teacher, batch);
          std::vector<std::vector<double>> rows;
          for (std::size_t r = 0; r < batch.size(); ++r) rows.push_back(Row(target, r));
          const BatchLoss kd = BatchDistillationLoss(z, rows);
          for (std::size_t i = 0; i < grad_z.size(); ++i) grad_z[i] += config.kd_weight * kd.grad[i];
          aux_sum += kd.value * static_cast<double>(batch.size());
        }
        model.body.Backward(body_cache, grad_z);
        task_sum += loss.value * static_cast<double>(batch.size());
      }
      const auto params = model.Parameters(!frozen);
      adam.Step(params);
      model.head.MarkUpdated();
      if (!frozen) model.body.net.MarkUpdated();
      seen += batch.size();
    }
    const double n = static_cast<double>(seen);
    EpochRecord rec{epoch, task_sum / n, aux_sum / n, validation_loss()};
    result.curve.push_back(rec);
    result.epochs = epoch;
    if (observer) observer(rec, model);
    if (selector.Offer(epoch, rec.val_loss, model)) {
      since_best = 0;
    } else if (config.train.patience > 0 && ++since_best >= config.train.patience) {
      break;
    }
  }

  result.best_epoch = selector.best_epoch();
  model = selector.Take();
  result.metric = TaskMetric(spec, outputs(split.test), data, split.test);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(model), std::move(result)};
}

}  // namespace cftransfer::transfer
