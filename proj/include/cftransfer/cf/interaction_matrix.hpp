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
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cftransfer/core/error.hpp"

namespace cftransfer::cf {

/// One line of raw listening history.
struct ListeningLog {
  std::string user_id;
  std::string item_id;
  std::int64_t count = 1;
};

/// A stored (index, play count) pair inside one user row or item column.
struct Interaction {
  std::size_t index;
  double count;
};

enum class Side { kUser, kItem };

/// Sparse implicit-feedback matrix. Counts are kept; the binary preference
/// is p = 1 for every stored entry. Rows are indexed both ways so each ALS
/// side can walk its non-zeros directly.
class UserItemMatrix {
 public:
  UserItemMatrix() = default;

  /// Builds from already-indexed triplets. Duplicate coordinates are summed.
  static UserItemMatrix FromTriplets(std::size_t n_users, std::size_t n_items,
                                     std::span<const std::tuple<std::size_t, std::size_t, double>> triplets) {
    std::vector<std::string> users(n_users), items(n_items);
    for (std::size_t u = 0; u < n_users; ++u) users[u] = "u" + std::to_string(u);
    for (std::size_t i = 0; i < n_items; ++i) items[i] = "i" + std::to_string(i);
    return UserItemMatrix(std::move(users), std::move(items), triplets);
  }

  UserItemMatrix(std::vector<std::string> user_ids, std::vector<std::string> item_ids,
                 std::span<const std::tuple<std::size_t, std::size_t, double>> triplets)
      : user_ids_(std::move(user_ids)), item_ids_(std::move(item_ids)) {
    Require(!user_ids_.empty() && !item_ids_.empty(), ErrorKind::kEmptyInput,
            "interaction matrix needs at least one user and one item");
    std::map<std::pair<std::size_t, std::size_t>, double> merged;
    for (const auto& [u, i, c] : triplets) {
      Require(u < user_ids_.size() && i < item_ids_.size(), ErrorKind::kDimensionMismatch,
              "triplet index out of range");
      Require(c >= 1.0, ErrorKind::kInvalidArgument, "interaction counts must be >= 1");
      merged[{u, i}] += c;
    }
    by_user_.assign(user_ids_.size(), {});
    by_item_.assign(item_ids_.size(), {});
    for (const auto& [key, count] : merged) {
      by_user_[key.first].push_back({key.second, count});
      by_item_[key.second].push_back({key.first, count});
    }
    nnz_ = merged.size();
    for (std::size_t u = 0; u < user_ids_.size(); ++u) user_index_.emplace(user_ids_[u], u);
    for (std::size_t i = 0; i < item_ids_.size(); ++i) item_index_.emplace(item_ids_[i], i);
  }

  std::size_t n_users() const { return user_ids_.size(); }
  std::size_t n_items() const { return item_ids_.size(); }
  std::size_t nnz() const { return nnz_; }

  std::size_t n_rows(Side side) const { return side == Side::kUser ? n_users() : n_items(); }

  /// Non-zeros of one user row (side=kUser) or one item column (side=kItem),
  /// sorted by the opposite index.
  std::span<const Interaction> Row(Side side, std::size_t index) const {
    return side == Side::kUser ? std::span(by_user_.at(index)) : std::span(by_item_.at(index));
  }

  /// Play count r_ui, 0 when unobserved.
  double Count(std::size_t user, std::size_t item) const {
    const auto& row = by_user_.at(user);
    auto it = std::lower_bound(row.begin(), row.end(), item,
                               [](const Interaction& e, std::size_t i) { return e.index < i; });
    return (it != row.end() && it->index == item) ? it->count : 0.0;
  }

  const std::vector<std::string>& user_ids() const { return user_ids_; }
  const std::vector<std::string>& item_ids() const { return item_ids_; }

  std::size_t UserIndex(const std::string& id) const { return Lookup(user_index_, id, "user"); }
  std::size_t ItemIndex(const std::string& id) const { return Lookup(item_index_, id, "item"); }

 private:
  static std::size_t Lookup(const std::unordered_map<std::string, std::size_t>& map,
                            const std::string& id, const char* what) {
    auto it = map.find(id);
    if (it == map.end()) Fail(ErrorKind::kNotFound, std::string("unknown ") + what + " id: " + id);
    return it->second;
  }

  std::vector<std::string> user_ids_;
  std::vector<std::string> item_ids_;
  std::unordered_map<std::string, std::size_t> user_index_;
  std::unordered_map<std::string, std::size_t> item_index_;
  std::vector<std::vector<Interaction>> by_user_;
  std::vector<std::vector<Interaction>> by_item_;
  std::size_t nnz_ = 0;
};

/// Aggregates raw logs into a matrix. Ids are indexed in order of first
/// appearance, so the result is a pure function of the log sequence.
inline UserItemMatrix BuildInteractionMatrix(std::span<const ListeningLog> logs) {
  Require(!logs.empty(), ErrorKind::kEmptyInput, "no listening logs given");
  std::vector<std::string> users, items;
  std::unordered_map<std::string, std::size_t> user_index, item_index;
  std::vector<std::tuple<std::size_t, std::size_t, double>> triplets;
  triplets.reserve(logs.size());
  auto intern = [](std::unordered_map<std::string, std::size_t>& index,
                   std::vector<std::string>& ids, const std::string& id) {
    auto [it, inserted] = index.emplace(id, ids.size());
    if (inserted) ids.push_back(id);
    return it->second;
  };
  for (const auto& log : logs) {
    Require(log.count >= 1, ErrorKind::kInvalidArgument,
            "log count must be >= 1 for " + log.user_id + "/" + log.item_id);
    const std::size_t u = intern(user_index, users, log.user_id);
    const std::size_t i = intern(item_index, items, log.item_id);
    triplets.emplace_back(u, i, static_cast<double>(log.count));
  }
  return UserItemMatrix(std::move(users), std::move(items), triplets);
}

/// Parses `user_id<TAB>item_id[<TAB>count]` lines. Blank lines are skipped.
inline std::vector<ListeningLog> ParseListeningLogs(std::istream& in, const std::string& source) {
  std::vector<ListeningLog> logs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    const std::string where = source + ":" + std::to_string(line_no);
    Require(fields.size() == 2 || fields.size() == 3, ErrorKind::kFormat,
            where + ": expected user_id<TAB>item_id[<TAB>count]");
    Require(!fields[0].empty() && !fields[1].empty(), ErrorKind::kFormat, where + ": empty id");
    ListeningLog log{fields[0], fields[1], 1};
    if (fields.size() == 3) {
      std::size_t used = 0;
      long long count = 0;
      try {
        count = std::stoll(fields[2], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      Require(used == fields[2].size() && count >= 1, ErrorKind::kFormat,
              where + ": count must be a positive integer");
      log.count = count;
    }
    logs.push_back(std::move(log));
  }
  return logs;
}

inline std::vector<ListeningLog> ReadListeningLogs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorKind::kIo, "cannot open log file: " + path.string());
  return ParseListeningLogs(in, path.string());
}

inline void WriteListeningLogs(const std::filesystem::path& path, std::span<const ListeningLog> logs) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) Fail(ErrorKind::kIo, "cannot open for writing: " + path.string());
  for (const auto& log : logs) {
    out << log.user_id << '\t' << log.item_id;
    if (log.count != 1) out << '\t' << log.count;
    out << '\n';
  }
}

}  // namespace cftransfer::cf
