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
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cftransfer/audio/waveform.hpp"
#include "cftransfer/cf/interaction_matrix.hpp"
#include "cftransfer/core/error.hpp"
#include "cftransfer/workbench/world.hpp"

namespace cftransfer::workbench {

// On-disk dataset layout:
//   logs.tsv      user<TAB>item<TAB>count
//   audio/<id>.wav (or .f32 with its .json sidecar)
//   labels.csv    item,label[,target...]

inline void WriteLabels(const std::filesystem::path& path, std::span<const LabeledItem> items) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) Fail(ErrorKind::kIo, "cannot open for writing: " + path.string());
  out.precision(17);
  out << "item,label";
  if (!items.empty())
    for (std::size_t k = 0; k < items.front().target.size(); ++k) out << ",target" << k;
  out << "\n";
  for (const auto& it : items) {
    out << it.id << "," << it.label;
    for (double v : it.target) out << "," << v;
    out << "\n";
  }
  if (!out) Fail(ErrorKind::kIo, "write failed: " + path.string());
}

inline std::vector<LabeledItem> ReadLabels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorKind::kIo, "cannot open " + path.string());
  std::string line;
  Require(static_cast<bool>(std::getline(in, line)) && line.rfind("item,label", 0) == 0, ErrorKind::kFormat,
          path.string() + ": expected header 'item,label[,target...]'");
  const auto n_targets = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',') - 1);
  std::vector<LabeledItem> items;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    Require(fields.size() == 2 + n_targets, ErrorKind::kFormat, where + ": wrong number of fields");
    LabeledItem item;
    item.id = fields[0];
    try {
      std::size_t used = 0;
      const long long label = std::stoll(fields[1], &used);
      Require(used == fields[1].size() && label >= 0, ErrorKind::kFormat, where + ": bad label");
      item.label = static_cast<std::size_t>(label);
      for (std::size_t k = 0; k < n_targets; ++k) item.target.push_back(std::stod(fields[2 + k]));
    } catch (const std::logic_error&) {
      Fail(ErrorKind::kFormat, where + ": unparsable number");
    }
    items.push_back(std::move(item));
  }
  return items;
}

struct DatasetPaths {
  std::filesystem::path logs;
  std::filesystem::path audio_dir;
  std::filesystem::path labels;

  static DatasetPaths Under(const std::filesystem::path& dir) {
    return {dir / "logs.tsv", dir / "audio", dir / "labels.csv"};
  }

  void RequireExist() const {
    for (const auto& p : {logs, audio_dir, labels})
      Require(std::filesystem::exists(p), ErrorKind::kIo, "missing dataset path: " + p.string());
  }
};

inline void SaveDataset(const std::filesystem::path& dir, const Dataset& data) {
  const DatasetPaths paths = DatasetPaths::Under(dir);
  std::filesystem::create_directories(paths.audio_dir);
  cf::WriteListeningLogs(paths.logs, data.logs);
  for (std::size_t i = 0; i < data.audio.size(); ++i)
    audio::WriteWav(paths.audio_dir / (data.audio_ids[i] + ".wav"), data.audio[i]);
  WriteLabels(paths.labels, data.task_items);
}

/// Audio files are taken in filename order; the item id is the file stem.
inline Dataset LoadDataset(const DatasetPaths& paths) {
  paths.RequireExist();
  Dataset data;
  data.logs = cf::ReadListeningLogs(paths.logs);
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(paths.audio_dir)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".wav" || ext == ".f32")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    data.audio_ids.push_back(f.stem().string());
    data.audio.push_back(audio::ReadWaveform(f));
  }
  data.task_items = ReadLabels(paths.labels);
  for (const auto& it : data.task_items) data.n_classes = std::max(data.n_classes, it.label + 1);
  return data;
}

}  // namespace cftransfer::workbench
