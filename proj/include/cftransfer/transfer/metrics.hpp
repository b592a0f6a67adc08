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
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "cftransfer/core/error.hpp"

namespace cftransfer::transfer {

/// Fraction of positions where prediction equals truth.
inline double Accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> truth) {
  Require(!truth.empty(), ErrorKind::kEmptyInput, "accuracy: empty input");
  Require(predictions.size() == truth.size(), ErrorKind::kDimensionMismatch, "accuracy: length mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predictions[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

/// Squared Pearson correlation. Zero-variance predictions score 0.
inline double RSquared(std::span<const double> predictions, std::span<const double> truth) {
  Require(predictions.size() == truth.size(), ErrorKind::kDimensionMismatch, "r_squared: length mismatch");
  Require(truth.size() >= 2, ErrorKind::kEmptyInput, "r_squared: need at least two points");
  const double n = static_cast<double>(truth.size());
  double mp = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    mp += predictions[i];
    mt += truth[i];
  }
  mp /= n;
  mt /= n;
  double cov = 0.0, vp = 0.0, vt = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double dp = predictions[i] - mp, dt = truth[i] - mt;
    cov += dp * dt;
    vp += dp * dp;
    vt += dt * dt;
  }
  Require(vt > 0.0, ErrorKind::kNumerical, "r_squared: truth has zero variance");
  if (vp == 0.0) return 0.0;
  return std::clamp(cov * cov / (vp * vt), 0.0, 1.0);
}

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Stratified k-fold partition. Each class is shuffled with the seeded
/// generator and dealt round-robin, continuing where the previous class
/// stopped, so every fold holds floor or ceil of n_c / k members of class c.
inline std::vector<Fold> StratifiedKFold(std::span<const std::size_t> labels, std::size_t k, std::uint64_t seed) {
  Require(k >= 2, ErrorKind::kInvalidArgument, "stratified_kfold: k must be >= 2");
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  Require(!by_class.empty(), ErrorKind::kEmptyInput, "stratified_kfold: no labels");
  for (const auto& [label, members] : by_class) {
    Require(members.size() >= k, ErrorKind::kInvalidArgument,
            "stratified_kfold: class " + std::to_string(label) + " has " + std::to_string(members.size()) +
                " members, fewer than k=" + std::to_string(k));
  }
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> test(k);
  std::size_t next = 0;
  for (auto& [label, members] : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t idx : members) {
      test[next].push_back(idx);
      next = (next + 1) % k;
    }
  }
  std::vector<Fold> folds(k);
  std::vector<std::size_t> owner(labels.size());
  for (std::size_t f = 0; f < k; ++f)
    for (std::size_t idx : test[f]) owner[idx] = f;
  for (std::size_t f = 0; f < k; ++f) {
    for (std::size_t i = 0; i < labels.size(); ++i) (owner[i] == f ? folds[f].test : folds[f].train).push_back(i);
  }
  return folds;
}

struct PairedTTestResult {
  double mean_difference = 0.0;
  double t_statistic = 0.0;
  double p_value = 1.0;
  std::size_t degrees_of_freedom = 0;
};

/// Two-sided paired Student t-test of a - b.
inline PairedTTestResult PairedImprovementTest(std::span<const double> a, std::span<const double> b) {
  Require(a.size() == b.size(), ErrorKind::kDimensionMismatch, "paired t-test: length mismatch");
  Require(a.size() >= 2, ErrorKind::kInvalidArgument, "paired t-test: need at least two pairs");
  const double n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / (n - 1.0));
  Require(sd > 0.0, ErrorKind::kNumerical, "paired t-test: differences have zero variance");
  PairedTTestResult r;
  r.mean_difference = mean;
  r.t_statistic = mean / (sd / std::sqrt(n));
  r.degrees_of_freedom = a.size() - 1;
  const boost::math::students_t dist(static_cast<double>(r.degrees_of_freedom));
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t_statistic)));
  return r;
}

}  // namespace cftransfer::transfer
