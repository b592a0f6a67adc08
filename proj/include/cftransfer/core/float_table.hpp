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

// Float table file format (version 1). Stable across releases.
//
//   CFTABLE 1\n
//   rows <n>\n
//   cols <m>\n
//   <row id 0>\n
//   ...
//   <row id n-1>\n
//   data\n
//   <n*m IEEE-754 binary64 values, little-endian, row-major>
//
// Row ids are arbitrary UTF-8 strings without '\n'. The same container
// stores CF embeddings (one row per item) and cached mel grids (one row per
// mel bin).

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cftransfer/core/error.hpp"

namespace cftransfer {

struct FloatTable {
  std::vector<std::string> row_ids;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major, row_ids.size() * cols

  std::size_t rows() const { return row_ids.size(); }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

namespace detail {

inline void PutLe64(std::ostream& out, double value) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(value);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffU);
  out.write(bytes, 8);
}

inline double GetLe64(const unsigned char* bytes) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline std::string ReadLine(std::istream& in, const std::string& path) {
  std::string line;
  if (!std::getline(in, line)) Fail(ErrorKind::kFormat, path + ": truncated header");
  return line;
}

inline std::size_t ParseKeyCount(const std::string& line, const std::string& key,
                                 const std::string& path) {
  std::istringstream ss(line);
  std::string k;
  long long n = -1;
  ss >> k >> n;
  if (k != key || n < 0) Fail(ErrorKind::kFormat, path + ": expected '" + key + " <n>'");
  return static_cast<std::size_t>(n);
}

}  // namespace detail

inline void WriteFloatTable(const std::filesystem::path& path, const FloatTable& table) {
  Require(table.values.size() == table.rows() * table.cols, ErrorKind::kDimensionMismatch,
          "float table value count does not match rows*cols");
  for (const auto& id : table.row_ids) {
    Require(id.find('\n') == std::string::npos, ErrorKind::kInvalidArgument,
            "row id contains a newline: " + id);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) Fail(ErrorKind::kIo, "cannot open for writing: " + path.string());
  out << "CFTABLE 1\n" << "rows " << table.rows() << "\n" << "cols " << table.cols << "\n";
  for (const auto& id : table.row_ids) out << id << "\n";
  out << "data\n";
  for (double v : table.values) detail::PutLe64(out, v);
  if (!out) Fail(ErrorKind::kIo, "write failed: " + path.string());
}

inline FloatTable ReadFloatTable(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorKind::kIo, "cannot open: " + path.string());
  const std::string p = path.string();
  if (detail::ReadLine(in, p) != "CFTABLE 1") Fail(ErrorKind::kFormat, p + ": bad magic");
  FloatTable table;
  const std::size_t rows = detail::ParseKeyCount(detail::ReadLine(in, p), "rows", p);
  table.cols = detail::ParseKeyCount(detail::ReadLine(in, p), "cols", p);
  table.row_ids.reserve(rows);
  for (std::size_t r = 0; r < rows; ++r) table.row_ids.push_back(detail::ReadLine(in, p));
  if (detail::ReadLine(in, p) != "data") Fail(ErrorKind::kFormat, p + ": missing data marker");
  const std::size_t count = rows * table.cols;
  std::vector<unsigned char> raw(count * 8);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
    Fail(ErrorKind::kFormat, p + ": truncated data section");
  }
  if (in.peek() != std::char_traits<char>::eof()) Fail(ErrorKind::kFormat, p + ": trailing bytes");
  table.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) table.values[i] = detail::GetLe64(&raw[i * 8]);
  return table;
}

}  // namespace cftransfer
