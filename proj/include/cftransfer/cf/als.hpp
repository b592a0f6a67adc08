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

// Confidence-weighted alternating least squares for implicit feedback.
//
// Objective over preferences p_ui = [r_ui > 0] and confidences
// c_ui = 1 + alpha * r_ui:
//
//   sum_{u,i} c_ui (p_ui - x_u . y_i)^2 + sum_u l_u |x_u|^2 + sum_i l_i |y_i|^2
//
// with l_row = reg_lambda, or reg_lambda * nnz(row) when scale_reg_by_count
// is set. Each half-sweep solves every row exactly, so the objective is
// non-increasing sweep over sweep.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "cftransfer/cf/interaction_matrix.hpp"
#include "cftransfer/core/error.hpp"
#include "cftransfer/core/float_table.hpp"

namespace cftransfer::cf {

struct AlsConfig {
  int n_factors = 40;
  double reg_lambda = 0.1;
  double alpha = 40.0;
  int n_iterations = 15;
  std::uint64_t seed = 0;
  bool scale_reg_by_count = true;
  int n_threads = 1;

  void Validate() const {
    Require(n_factors >= 1, ErrorKind::kConfig, "n_factors must be >= 1");
    Require(reg_lambda > 0.0, ErrorKind::kConfig, "reg_lambda must be > 0");
    Require(alpha > 0.0, ErrorKind::kConfig, "alpha must be > 0");
    Require(n_iterations >= 0, ErrorKind::kConfig, "n_iterations must be >= 0");
    Require(n_threads >= 1, ErrorKind::kConfig, "n_threads must be >= 1");
  }

  /// Effective ridge weight for a row with `nnz` stored interactions.
  double RowLambda(std::size_t nnz) const {
    return scale_reg_by_count ? reg_lambda * static_cast<double>(nnz) : reg_lambda;
  }
};

inline double Confidence(double r, double alpha) { return 1.0 + alpha * r; }

/// Learned user and item factor tables plus the ids that index them.
class CfEmbedding {
 public:
  CfEmbedding() = default;
  CfEmbedding(std::vector<std::string> user_ids, std::vector<std::string> item_ids,
              Eigen::MatrixXd user_vectors, Eigen::MatrixXd item_vectors)
      : user_ids_(std::move(user_ids)),
        item_ids_(std::move(item_ids)),
        user_vectors_(std::move(user_vectors)),
        item_vectors_(std::move(item_vectors)) {
    Require(static_cast<std::size_t>(user_vectors_.rows()) == user_ids_.size() &&
                static_cast<std::size_t>(item_vectors_.rows()) == item_ids_.size(),
            ErrorKind::kDimensionMismatch, "embedding rows do not match id lists");
    Require(user_ids_.empty() || item_ids_.empty() || user_vectors_.cols() == item_vectors_.cols(),
            ErrorKind::kDimensionMismatch, "user and item factor widths differ");
    for (std::size_t i = 0; i < item_ids_.size(); ++i) {
      Require(item_index_.emplace(item_ids_[i], i).second, ErrorKind::kInvalidArgument,
              "duplicate item id: " + item_ids_[i]);
    }
  }

  int n_factors() const { return static_cast<int>(item_vectors_.cols()); }
  const std::vector<std::string>& user_ids() const { return user_ids_; }
  const std::vector<std::string>& item_ids() const { return item_ids_; }
  const Eigen::MatrixXd& user_vectors() const { return user_vectors_; }
  const Eigen::MatrixXd& item_vectors() const { return item_vectors_; }
  Eigen::MatrixXd& mutable_user_vectors() { return user_vectors_; }
  Eigen::MatrixXd& mutable_item_vectors() { return item_vectors_; }

  bool HasItem(const std::string& item_id) const { return item_index_.contains(item_id); }

  Eigen::VectorXd ItemVector(const std::string& item_id) const {
    auto it = item_index_.find(item_id);
    if (it == item_index_.end()) Fail(ErrorKind::kNotFound, "unknown item id: " + item_id);
    return item_vectors_.row(static_cast<Eigen::Index>(it->second)).transpose();
  }

 private:
  std::vector<std::string> user_ids_;
  std::vector<std::string> item_ids_;
  Eigen::MatrixXd user_vectors_;
  Eigen::MatrixXd item_vectors_;
  std::unordered_map<std::string, std::size_t> item_index_;
};

inline Eigen::VectorXd ItemVector(const CfEmbedding& emb, const std::string& item_id) {
  return emb.ItemVector(item_id);
}

struct NormalEquations {
  Eigen::MatrixXd lhs;  // Y^T C_u Y + l_u I
  Eigen::VectorXd rhs;  // Y^T C_u p(u)
};

/// Assembles one row's normal equations touching only its non-zeros:
/// Y^T C_u Y = Y^T Y + sum_{i in row} (c_ui - 1) y_i y_i^T.
/// `gram` must be fixed^T fixed.
inline NormalEquations AssembleNormalEquations(const Eigen::MatrixXd& fixed,
                                               const Eigen::MatrixXd& gram,
                                               const UserItemMatrix& matrix, const AlsConfig& config,
                                               Side side, std::size_t row) {
  const Eigen::Index k = fixed.cols();
  NormalEquations eq{gram, Eigen::VectorXd::Zero(k)};
  const auto entries = matrix.Row(side, row);
  for (const auto& e : entries) {
    const auto y = fixed.row(static_cast<Eigen::Index>(e.index));
    const double c = Confidence(e.count, config.alpha);
    eq.lhs.noalias() += (c - 1.0) * y.transpose() * y;
    eq.rhs.noalias() += c * y.transpose();
  }
  eq.lhs.diagonal().array() += config.RowLambda(entries.size());
  return eq;
}

/// Solves every row of one side given the other side fixed. Rows without
/// interactions get the zero vector.
inline Eigen::MatrixXd AlsSolveSide(const Eigen::MatrixXd& fixed, const UserItemMatrix& matrix,
                                    const AlsConfig& config, Side side) {
  config.Validate();
  const Side other = side == Side::kUser ? Side::kItem : Side::kUser;
  Require(static_cast<std::size_t>(fixed.rows()) == matrix.n_rows(other), ErrorKind::kDimensionMismatch,
          "fixed factor table has " + std::to_string(fixed.rows()) + " rows, expected " +
              std::to_string(matrix.n_rows(other)));
  Require(fixed.cols() == config.n_factors, ErrorKind::kDimensionMismatch,
          "fixed factor table width does not match n_factors");
  Require(matrix.nnz() > 0, ErrorKind::kEmptyInput, "interaction matrix has no entries");

  const std::size_t n_rows = matrix.n_rows(side);
  const Eigen::MatrixXd gram = fixed.transpose() * fixed;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_rows), fixed.cols());

  auto solve_range = [&](std::size_t begin, std::size_t end, std::string* error) {
    for (std::size_t r = begin; r < end; ++r) {
      if (matrix.Row(side, r).empty()) continue;
      NormalEquations eq = AssembleNormalEquations(fixed, gram, matrix, config, side, r);
      Eigen::LLT<Eigen::MatrixXd> llt(eq.lhs);
      if (llt.info() != Eigen::Success) {
        *error = "normal matrix not positive definite at row " + std::to_string(r);
        return;
      }
      out.row(static_cast<Eigen::Index>(r)) = llt.solve(eq.rhs).transpose();
    }
  };

  const std::size_t n_workers =
      std::min<std::size_t>(static_cast<std::size_t>(config.n_threads), std::max<std::size_t>(n_rows, 1));
  std::vector<std::string> errors(n_workers);
  if (n_workers <= 1) {
    solve_range(0, n_rows, &errors[0]);
  } else {
    std::vector<std::thread> workers;
    const std::size_t chunk = (n_rows + n_workers - 1) / n_workers;
    for (std::size_t w = 0; w < n_workers; ++w) {
      const std::size_t begin = std::min(n_rows, w * chunk);
      const std::size_t end = std::min(n_rows, begin + chunk);
      workers.emplace_back(solve_range, begin, end, &errors[w]);
    }
    for (auto& t : workers) t.join();
  }
  for (const auto& e : errors) {
    if (!e.empty()) Fail(ErrorKind::kNumerical, e);
  }
  return out;
}

/// Exact objective, evaluated densely over every (u, i) pair. Fine at desk
/// scale; a production-size matrix would need the same Y^T Y identity the
/// solver uses to avoid the n_users * n_items loop.
inline double WeightedLoss(const UserItemMatrix& matrix, const CfEmbedding& emb, const AlsConfig& config) {
  const auto& x = emb.user_vectors();
  const auto& y = emb.item_vectors();
  Require(static_cast<std::size_t>(x.rows()) == matrix.n_users() &&
              static_cast<std::size_t>(y.rows()) == matrix.n_items() && x.cols() == y.cols(),
          ErrorKind::kDimensionMismatch, "embedding does not match interaction matrix");
  const Eigen::MatrixXd scores = x * y.transpose();
  double loss = 0.0;
  for (std::size_t u = 0; u < matrix.n_users(); ++u) {
    const auto row = matrix.Row(Side::kUser, u);
    std::size_t next = 0;
    for (std::size_t i = 0; i < matrix.n_items(); ++i) {
      double r = 0.0;
      if (next < row.size() && row[next].index == i) r = row[next++].count;
      const double p = r > 0.0 ? 1.0 : 0.0;
      const double diff = p - scores(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(i));
      loss += Confidence(r, config.alpha) * diff * diff;
    }
    loss += config.RowLambda(row.size()) * x.row(static_cast<Eigen::Index>(u)).squaredNorm();
  }
  for (std::size_t i = 0; i < matrix.n_items(); ++i) {
    loss += config.RowLambda(matrix.Row(Side::kItem, i).size()) *
            y.row(static_cast<Eigen::Index>(i)).squaredNorm();
  }
  return loss;
}

/// Seeded start: every factor uniform in [-0.01, 0.01], users drawn first.
inline CfEmbedding InitialEmbedding(const UserItemMatrix& matrix, const AlsConfig& config) {
  config.Validate();
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> dist(-0.01, 0.01);
  Eigen::MatrixXd users(static_cast<Eigen::Index>(matrix.n_users()), config.n_factors);
  Eigen::MatrixXd items(static_cast<Eigen::Index>(matrix.n_items()), config.n_factors);
  for (Eigen::Index r = 0; r < users.rows(); ++r)
    for (Eigen::Index c = 0; c < users.cols(); ++c) users(r, c) = dist(rng);
  for (Eigen::Index r = 0; r < items.rows(); ++r)
    for (Eigen::Index c = 0; c < items.cols(); ++c) items(r, c) = dist(rng);
  return CfEmbedding(matrix.user_ids(), matrix.item_ids(), std::move(users), std::move(items));
}

/// Runs `n_iterations` sweeps (user solve, then item solve). The optional
/// callback sees the embedding after every completed sweep.
inline CfEmbedding AlsFit(const UserItemMatrix& matrix, const AlsConfig& config,
                          const std::function<void(int, const CfEmbedding&)>& on_sweep = {}) {
  CfEmbedding emb = InitialEmbedding(matrix, config);
  for (int it = 0; it < config.n_iterations; ++it) {
    emb.mutable_user_vectors() = AlsSolveSide(emb.item_vectors(), matrix, config, Side::kUser);
    emb.mutable_item_vectors() = AlsSolveSide(emb.user_vectors(), matrix, config, Side::kItem);
    if (on_sweep) on_sweep(it + 1, emb);
  }
  return emb;
}

/// Persists item vectors (one row per item id) in the float table format.
inline void SaveItemVectors(const std::filesystem::path& path, const CfEmbedding& emb) {
  FloatTable table;
  table.row_ids = emb.item_ids();
  table.cols = static_cast<std::size_t>(emb.n_factors());
  table.values.reserve(table.rows() * table.cols);
  for (Eigen::Index r = 0; r < emb.item_vectors().rows(); ++r)
    for (Eigen::Index c = 0; c < emb.item_vectors().cols(); ++c)
      table.values.push_back(emb.item_vectors()(r, c));
  WriteFloatTable(path, table);
}

/// Loads an item-only embedding; the user table is empty.
inline CfEmbedding LoadItemVectors(const std::filesystem::path& path) {
  const FloatTable table = ReadFloatTable(path);
  Require(table.cols >= 1, ErrorKind::kFormat, path.string() + ": embedding has zero factors");
  Eigen::MatrixXd items(static_cast<Eigen::Index>(table.rows()), static_cast<Eigen::Index>(table.cols));
  for (std::size_t r = 0; r < table.rows(); ++r)
    for (std::size_t c = 0; c < table.cols; ++c)
      items(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = table.at(r, c);
  return CfEmbedding({}, table.row_ids, Eigen::MatrixXd(0, items.cols()), std::move(items));
}

}  // namespace cftransfer::cf
