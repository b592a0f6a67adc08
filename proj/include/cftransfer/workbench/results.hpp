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
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "cftransfer/core/error.hpp"
#include "cftransfer/transfer/data.hpp"
#include "cftransfer/transfer/metrics.hpp"

namespace cftransfer::workbench {

inline constexpr const char* kResultsHeader = "task,regime,channels,seed,fold,metric,epochs,seconds";

struct ResultRow {
  std::string task;
  std::string regime;
  std::size_t channels = 0;
  std::uint64_t seed = 0;
  std::size_t fold = 0;
  double metric = 0.0;
  std::size_t epochs = 0;
  double seconds = 0.0;
};

inline std::string FormatDouble(double v, const char* fmt = "%.10g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

inline void WriteResultsCsv(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) Fail(ErrorKind::kIo, "cannot open for writing: " + path.string());
  out << kResultsHeader << "\n";
  for (const auto& r : rows) {
    out << r.task << "," << r.regime << "," << r.channels << "," << r.seed << "," << r.fold << ","
        << FormatDouble(r.metric) << "," << r.epochs << "," << FormatDouble(r.seconds, "%.3f") << "\n";
  }
  if (!out) Fail(ErrorKind::kIo, "write failed: " + path.string());
}

inline std::vector<ResultRow> ReadResultsCsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorKind::kIo, "cannot open " + path.string());
  std::string line;
  Require(static_cast<bool>(std::getline(in, line)) && line == kResultsHeader, ErrorKind::kFormat,
          path.string() + ": expected header '" + std::string(kResultsHeader) + "'");
  std::vector<ResultRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> f;
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    Require(f.size() == 8, ErrorKind::kFormat, where + ": expected 8 fields");
    try {
      rows.push_back({f[0], f[1], std::stoull(f[2]), std::stoull(f[3]), std::stoull(f[4]), std::stod(f[5]),
                      std::stoull(f[6]), std::stod(f[7])});
    } catch (const std::logic_error&) {
      Fail(ErrorKind::kFormat, where + ": unparsable number");
    }
  }
  return rows;
}

inline void WriteCurveCsv(const std::filesystem::path& path, const std::vector<transfer::EpochRecord>& curve) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) Fail(ErrorKind::kIo, "cannot open for writing: " + path.string());
  out << "epoch,train_loss,aux_loss,val_loss\n";
  for (const auto& e : curve)
    out << e.epoch << "," << FormatDouble(e.train_loss) << "," << FormatDouble(e.aux_loss) << ","
        << FormatDouble(e.val_loss) << "\n";
}

struct RegimeMean {
  std::string task;
  std::size_t channels = 0;
  std::string regime;
  std::size_t n = 0;
  double mean = 0.0;
};

/// Per (task, channels, regime) means, in order of first appearance.
inline std::vector<RegimeMean> RegimeMeans(const std::vector<ResultRow>& rows) {
  std::vector<RegimeMean> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const RegimeMean& m) {
      return m.task == r.task && m.channels == r.channels && m.regime == r.regime;
    });
    if (it == out.end()) it = out.insert(out.end(), RegimeMean{r.task, r.channels, r.regime, 0, 0.0});
    it->mean += r.metric;
    ++it->n;
  }
  for (auto& m : out) m.mean /= static_cast<double>(m.n);
  return out;
}

/// Metric lists for `regime` and `reference`, paired on (task, channels,
/// seed, fold). Cells missing either side are skipped.
inline std::pair<std::vector<double>, std::vector<double>> PairedMetrics(const std::vector<ResultRow>& rows,
                                                                         const std::string& regime,
                                                                         const std::string& reference) {
  using Key = std::tuple<std::string, std::size_t, std::uint64_t, std::size_t>;
  std::map<Key, double> a, b;
  for (const auto& r : rows) {
    const Key k{r.task, r.channels, r.seed, r.fold};
    if (r.regime == regime) a[k] = r.metric;
    if (r.regime == reference) b[k] = r.metric;
  }
  std::pair<std::vector<double>, std::vector<double>> out;
  for (const auto& [k, v] : a) {
    if (const auto it = b.find(k); it != b.end()) {
      out.first.push_back(v);
      out.second.push_back(it->second);
    }
  }
  return out;
}

/// Text report: one line per regime mean, then a paired t-test of every
/// other regime against base.
inline std::string EvaluateSummary(const std::vector<ResultRow>& rows) {
  Require(!rows.empty(), ErrorKind::kEmptyInput, "no result rows");
  std::ostringstream out;
  std::vector<std::string> regimes;
  for (const auto& m : RegimeMeans(rows)) {
    out << "mean task=" << m.task << " channels=" << m.channels << " regime=" << m.regime << " n=" << m.n
        << " metric=" << FormatDouble(m.mean, "%.6f") << "\n";
    if (std::find(regimes.begin(), regimes.end(), m.regime) == regimes.end()) regimes.push_back(m.regime);
  }
  for (const auto& regime : regimes) {
    if (regime == "base") continue;
    const auto [a, b] = PairedMetrics(rows, regime, "base");
    out << "ttest " << regime << "-base n=" << a.size();
    if (a.size() < 2) {
      out << " unavailable: fewer than two paired cells\n";
      continue;
    }
    try {
      const auto t = transfer::PairedImprovementTest(a, b);
      out << " mean_diff=" << FormatDouble(t.mean_difference, "%.6f") << " t=" << FormatDouble(t.t_statistic, "%.4f")
          << " df=" << t.degrees_of_freedom << " p=" << FormatDouble(t.p_value, "%.4g") << "\n";
    } catch (const Error& e) {
      double diff = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) / static_cast<double>(a.size());
      out << " mean_diff=" << FormatDouble(diff, "%.6f") << " unavailable: " << e.what() << "\n";
    }
  }
  return out.str();
}

}  // namespace cftransfer::workbench
