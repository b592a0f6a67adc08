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
#include <span>
#include <vector>

#include "cftransfer/core/error.hpp"
#include "cftransfer/nn/losses.hpp"
#include "cftransfer/nn/tensor.hpp"

namespace cftransfer::transfer {

/// MSE plus cosine proximity between an activation and its target
/// embedding. Gradient is with respect to `prediction` only.
inline nn::LossResult DistillationLoss(std::span<const double> prediction, std::span<const double> target) {
  Require(prediction.size() == target.size(), ErrorKind::kDimensionMismatch, "distillation_loss: length mismatch");
  const bool nonzero = std::any_of(target.begin(), target.end(), [](double v) { return v != 0.0; });
  Require(nonzero, ErrorKind::kInvalidArgument, "distillation_loss: zero estimator output vector");
  nn::LossResult mse = nn::MseLoss(prediction, target);
  const nn::LossResult cos = nn::CosineProximityLoss(prediction, target);
  mse.value += cos.value;
  for (std::size_t i = 0; i < mse.grad.size(); ++i) mse.grad[i] += cos.grad[i];
  return mse;
}

struct BatchLoss {
  double value = 0.0;
  nn::Tensor grad;
};

/// Mean distillation loss over the rows of a (B, D) batch; targets[k] pairs
/// with row k.
inline BatchLoss BatchDistillationLoss(const nn::Tensor& prediction, std::span<const std::vector<double>> targets) {
  Require(prediction.rank() == 2 && prediction.dim(0) == targets.size(), ErrorKind::kDimensionMismatch,
          "distillation batch: prediction rows do not match targets");
  const std::size_t b = prediction.dim(0), d = prediction.dim(1);
  BatchLoss out{0.0, nn::Tensor(prediction.shape())};
  for (std::size_t r = 0; r < b; ++r) {
    Require(targets[r].size() == d, ErrorKind::kDimensionMismatch,
            "target length " + std::to_string(targets[r].size()) + " != output width " + std::to_string(d));
    const nn::LossResult l = DistillationLoss({prediction.data() + r * d, d}, targets[r]);
    out.value += l.value;
    for (std::size_t i = 0; i < d; ++i) out.grad[r * d + i] = l.grad[i] / static_cast<double>(b);
  }
  out.value /= static_cast<double>(b);
  return out;
}

}  // namespace cftransfer::transfer
