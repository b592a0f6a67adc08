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

#include <functional>
#include <span>
#include <vector>

#include "cftransfer/core/error.hpp"
#include "cftransfer/nn/adam.hpp"
#include "cftransfer/nn/network.hpp"
#include "cftransfer/transfer/data.hpp"
#include "cftransfer/transfer/distill.hpp"

namespace cftransfer::transfer {

/// Features paired with CF embedding targets.
struct EstimatorData {
  FeatureSet features;
  std::vector<std::vector<double>> targets;

  void Validate(std::size_t output_dim, const char* what) const {
    Require(features.size() > 0, ErrorKind::kEmptyInput, std::string(what) + " split is empty");
    Require(features.size() == targets.size(), ErrorKind::kDimensionMismatch,
            std::string(what) + ": feature and target counts differ");
    for (const auto& t : targets)
      Require(t.size() == output_dim, ErrorKind::kDimensionMismatch,
              std::string(what) + ": target length " + std::to_string(t.size()) + " != " +
                  std::to_string(output_dim));
  }
};

struct EstimatorResult {
  nn::NetworkModel model;
  std::vector<EpochRecord> curve;  // entry 0 is the untrained model
  std::size_t best_epoch = 0;
};

/// Mean combined loss of `model` over `data` in inference mode.
inline double EvaluateEstimator(nn::NetworkModel& model, const EstimatorData& data, std::size_t eval_batch = 64) {
  std::vector<std::size_t> all(data.features.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  double total = 0.0;
  for (const auto& chunk : Chunks(all, eval_batch)) {
    const nn::Tensor pred = model.Forward(data.features.Batch(chunk), nn::Mode::kEval);
    std::vector<std::vector<double>> t;
    for (std::size_t i : chunk) t.push_back(data.targets[i]);
    total += BatchDistillationLoss(pred, t).value * static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(all.size());
}

/// Trains an audio-to-embedding network on MSE plus cosine proximity and
/// returns the snapshot with the lowest validation loss (epoch 0 included).
inline EstimatorResult TrainCfEstimator(const nn::ArchitectureSpec& arch, const EstimatorData& train,
                                        const EstimatorData& validation, const TrainConfig& config,
                                        const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  config.Validate();
  train.Validate(arch.output_dim, "train");
  validation.Validate(arch.output_dim, "validation");
  Require(train.features.size() >= 2, ErrorKind::kEmptyInput, "train split needs at least two items");

  nn::NetworkModel model = nn::NetworkModel::Build(arch, DeriveSeed(config.seed, kBodyInit));
  nn::Rng shuffle(DeriveSeed(config.seed, kShuffle));
  nn::AdamState adam(config.adam);
  SnapshotSelector<nn::NetworkModel> selector;
  EstimatorResult result;

  EpochRecord start{0, EvaluateEstimator(model, train, config.eval_batch), 0.0, 0.0};
  start.val_loss = EvaluateEstimator(model, validation, config.eval_batch);
  result.curve.push_back(start);
  selector.Offer(0, start.val_loss, model);
  if (on_epoch) on_epoch(start);

  std::vector<std::size_t> order(train.features.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double sum = 0.0;
    std::size_t seen = 0;
    for (const auto& batch : MakeBatches(order, config.batch_size, shuffle)) {
      std::vector<std::vector<double>> t;
      for (std::size_t i : batch) t.push_back(train.targets[i]);
      nn::Sequential::Cache cache;
      model.net.ZeroGrad();
      const nn::Tensor pred = model.Forward(train.features.Batch(batch), nn::Mode::kTrain, &cache);
      const BatchLoss loss = BatchDistillationLoss(pred, t);
      model.Backward(cache, loss.grad);
      const auto params = model.net.Parameters();
      adam.Step(params);
      model.net.MarkUpdated();
      sum += loss.value * static_cast<double>(batch.size());
      seen += batch.size();
    }
    EpochRecord rec{epoch, sum / static_cast<double>(seen), 0.0, EvaluateEstimator(model, validation, config.eval_batch)};
    result.curve.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (selector.Offer(epoch, rec.val_loss, model)) {
      since_best = 0;
    } else if (config.patience > 0 && ++since_best >= config.patience) {
      break;
    }
  }
  result.best_epoch = selector.best_epoch();
  result.model = selector.Take();
  return result;
}

}  // namespace cftransfer::transfer
