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

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "cftransfer/core/error.hpp"

namespace cftransfer {

/// Reads optional fields from a JSON object and rejects keys nobody asked
/// for, so typos in config files fail loudly.
class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    Require(j_.is_object(), ErrorKind::kConfig, where_ + ": expected a JSON object");
  }

  template <class T>
  bool Get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return false;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      Fail(ErrorKind::kConfig, where_ + "." + key + ": " + e.what());
    }
    return true;
  }

  bool Has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const nlohmann::json& At(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void Finish() const {
    for (const auto& [key, value] : j_.items())
      Require(seen_.contains(key), ErrorKind::kConfig, where_ + ": unknown key '" + key + "'");
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline nlohmann::json ReadJsonFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorKind::kIo, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    Fail(ErrorKind::kConfig, path.string() + ": " + e.what());
  }
}

inline void WriteJsonFile(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) Fail(ErrorKind::kIo, "cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
  if (!out) Fail(ErrorKind::kIo, "write failed: " + path.string());
}

}  // namespace cftransfer
