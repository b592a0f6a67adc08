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

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "cftransfer/core/error.hpp"
#include "cftransfer/nn/tensor.hpp"

namespace cftransfer::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam. Moments are created lazily on the first step and
/// bound to the parameter list order from then on.
class AdamState {
 public:
  explicit AdamState(AdamConfig config = {}) : config_(config) {}

  void Step(std::span<Parameter* const> params) {
    if (first_.empty()) {
      for (const Parameter* p : params) {
        first_.emplace_back(p->value.shape());
        second_.emplace_back(p->value.shape());
      }
    }
    Require(params.size() == first_.size(), ErrorKind::kDimensionMismatch,
            "adam: parameter count changed between steps");
    ++step_;
    const double correction1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double correction2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Parameter& p = *params[k];
      Require(p.value.shape() == first_[k].shape() && p.grad.shape() == p.value.shape(),
              ErrorKind::kDimensionMismatch, "adam: shape mismatch for parameter " + p.name);
      Tensor& m = first_[k];
      Tensor& v = second_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
        const double m_hat = m[i] / correction1;
        const double v_hat = v[i] / correction2;
        p.value[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
      }
    }
  }

  std::uint64_t step() const { return step_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<Tensor>& first_moments() const { return first_; }
  const std::vector<Tensor>& second_moments() const { return second_; }

 private:
  AdamConfig config_;
  std::uint64_t step_ = 0;
  std::vector<Tensor> first_;
  std::vector<Tensor> second_;
};

}  // namespace cftransfer::nn
