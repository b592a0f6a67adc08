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

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cftransfer/core/error.hpp"
#include "cftransfer/nn/adam.hpp"
#include "cftransfer/nn/network.hpp"
#include "cftransfer/nn/tensor.hpp"

namespace cftransfer::transfer {

/// One (H, W, C) input per item, stored flat.
struct FeatureSet {
  nn::Shape sample_shape;
  std::vector<std::vector<double>> samples;

  std::size_t size() const { return samples.size(); }

  nn::Tensor Batch(std::span<const std::size_t> indices) const {
    const std::size_t per = nn::NumElements(sample_shape);
    nn::Shape shape{indices.size()};
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    nn::Tensor out(shape);
    for (std::size_t b = 0; b < indices.size(); ++b) {
      const auto& s = samples.at(indices[b]);
      Require(s.size() == per, ErrorKind::kDimensionMismatch, "feature sample has wrong length");
      std::copy(s.begin(), s.end(), out.data() + b * per);
    }
    return out;
  }
};

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  nn::AdamConfig adam;
  std::uint64_t seed = 0;
  std::size_t patience = 0;  // 0 disables early stopping
  std::size_t eval_batch = 64;

  void Validate() const {
    Require(epochs > 0, ErrorKind::kConfig, "epochs must be positive");
    Require(batch_size >= 2, ErrorKind::kConfig, "batch_size must be >= 2 (batch norm needs batch statistics)");
    Require(eval_batch > 0, ErrorKind::kConfig, "eval_batch must be positive");
    Require(adam.learning_rate > 0.0, ErrorKind::kConfig, "learning rate must be positive");
  }
};

/// Losses after an epoch. `aux_loss` is the distillation term for kd runs.
struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double aux_loss = 0.0;
  double val_loss = 0.0;
};

/// Independent, reproducible seed per purpose (initialization, shuffling...).
inline std::uint64_t DeriveSeed(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

enum SeedStream : std::uint32_t { kBodyInit = 1, kHeadInit = 2, kShuffle = 3 };

/// Shuffled minibatches. A trailing batch of one sample is dropped because
/// training-mode batch norm needs at least two.
inline std::vector<std::vector<std::size_t>> MakeBatches(std::vector<std::size_t> indices, std::size_t batch_size,
                                                         nn::Rng& rng) {
  std::shuffle(indices.begin(), indices.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < indices.size(); i += batch_size) {
    const std::size_t end = std::min(indices.size(), i + batch_size);
    if (end - i < 2) break;
    out.emplace_back(indices.begin() + i, indices.begin() + end);
  }
  return out;
}

inline std::vector<std::vector<std::size_t>> Chunks(std::span<const std::size_t> indices, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < indices.size(); i += size)
    out.emplace_back(indices.begin() + i, indices.begin() + std::min(indices.size(), i + size));
  return out;
}

/// Keeps the model with the lowest validation loss seen so far. Ties keep
/// the earlier epoch.
template <class Model>
class SnapshotSelector {
 public:
  bool Offer(std::size_t epoch, double loss, const Model& model) {
    if (snapshot_ && !(loss < best_loss_)) return false;
    best_loss_ = loss;
    best_epoch_ = epoch;
    snapshot_ = model;
    return true;
  }

  bool has_value() const { return snapshot_.has_value(); }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }
  const Model& model() const {
    Require(snapshot_.has_value(), ErrorKind::kEmptyInput, "no snapshot offered");
    return *snapshot_;
  }
  Model Take() {
    Require(snapshot_.has_value(), ErrorKind::kEmptyInput, "no snapshot offered");
    return std::move(*snapshot_);
  }

 private:
  double best_loss_ = std::numeric_limits<double>::infinity();
  std::size_t best_epoch_ = 0;
  std::optional<Model> snapshot_;
};

inline std::vector<double> Row(const nn::Tensor& t, std::size_t r) {
  const std::size_t w = t.dim(1);
  return {t.data() + r * w, t.data() + (r + 1) * w};
}

}  // namespace cftransfer::transfer
