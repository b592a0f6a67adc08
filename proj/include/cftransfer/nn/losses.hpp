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
#include <cmath>
#include <span>
#include <vector>

#include "cftransfer/core/error.hpp"

namespace cftransfer::nn {

struct LossResult {
  double value = 0.0;
  std::vector<double> grad;  // d value / d prediction
};

/// mean((pred - target)^2); gradient 2 (pred - target) / n.
inline LossResult MseLoss(std::span<const double> pred, std::span<const double> target) {
  Require(pred.size() == target.size() && !pred.empty(), ErrorKind::kDimensionMismatch,
          "mse_loss: length mismatch");
  LossResult r{0.0, std::vector<double>(pred.size())};
  const double n = static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    r.value += d * d;
    r.grad[i] = 2.0 * d / n;
  }
  r.value /= n;
  return r;
}

/// Norm floor for the cosine term: |v| is taken as sqrt(max(v.v, eps)).
inline constexpr double kCosineEpsilon = 1e-12;

/// -cos(pred, target) = -(p.t) / sqrt(max(p.p, eps) * max(t.t, eps)).
/// The product form makes the value exactly -1 when pred == target.
inline LossResult CosineProximityLoss(std::span<const double> pred, std::span<const double> target) {
  Require(pred.size() == target.size() && !pred.empty(), ErrorKind::kDimensionMismatch,
          "cosine_proximity_loss: length mismatch");
  double pt = 0.0, pp = 0.0, tt = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pt += pred[i] * target[i];
    pp += pred[i] * pred[i];
    tt += target[i] * target[i];
  }
  Require(tt > 0.0, ErrorKind::kInvalidArgument, "cosine_proximity_loss: zero target vector");
  const double np2 = std::max(pp, kCosineEpsilon);
  const double nt2 = std::max(tt, kCosineEpsilon);
  const double denom = std::sqrt(np2 * nt2);
  const double cos = pt / denom;
  LossResult r{-cos, std::vector<double>(pred.size())};
  // d cos / d p = t / denom - cos * p / |p|^2 (second term vanishes when the
  // floor is active, since |p| is then constant).
  const bool floored = pp < kCosineEpsilon;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double d = target[i] / denom;
    if (!floored) d -= cos * pred[i] / np2;
    r.grad[i] = -d;
  }
  return r;
}

/// log-sum-exp(logits) - logits[label]; gradient softmax - one_hot.
inline LossResult SoftmaxCrossEntropy(std::span<const double> logits, std::size_t label) {
  Require(!logits.empty(), ErrorKind::kEmptyInput, "softmax_cross_entropy: empty logits");
  Require(label < logits.size(), ErrorKind::kInvalidArgument,
          "softmax_cross_entropy: class " + std::to_string(label) + " out of range");
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - peak);
  const double log_z = peak + std::log(sum);
  LossResult r{log_z - logits[label], std::vector<double>(logits.size())};
  for (std::size_t i = 0; i < logits.size(); ++i) r.grad[i] = std::exp(logits[i] - log_z);
  r.grad[label] -= 1.0;
  return r;
}

}  // namespace cftransfer::nn
