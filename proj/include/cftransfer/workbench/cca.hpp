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

#include <Eigen/Dense>

#include "cftransfer/core/error.hpp"

namespace cftransfer::workbench {

namespace detail {

// Orthonormal basis of the centered column space.
inline Eigen::MatrixXd CenteredBasis(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd c = m.rowwise() - m.colwise().mean();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(c, Eigen::ComputeThinU);
  const Eigen::VectorXd& s = svd.singularValues();
  Eigen::Index rank = 0;
  while (rank < s.size() && s(rank) > 1e-10 * s(0)) ++rank;
  return svd.matrixU().leftCols(rank);
}

}  // namespace detail

/// Canonical correlations between the row-aligned samples of x and y, in
/// descending order, one per dimension of the smaller column space.
inline Eigen::VectorXd CanonicalCorrelations(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  Require(x.rows() == y.rows(), ErrorKind::kDimensionMismatch, "cca: row counts differ");
  Require(x.rows() >= 2, ErrorKind::kEmptyInput, "cca: need at least two samples");
  const Eigen::MatrixXd qx = detail::CenteredBasis(x), qy = detail::CenteredBasis(y);
  Require(qx.cols() > 0 && qy.cols() > 0, ErrorKind::kNumerical, "cca: a side has zero variance");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(qx.transpose() * qy);
  return svd.singularValues().cwiseMin(1.0);
}

}  // namespace cftransfer::workbench
