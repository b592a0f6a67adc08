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
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cftransfer/core/error.hpp"

namespace cftransfer::audio {

struct Waveform {
  std::vector<double> samples;
  double sample_rate = 16000.0;

  double seconds() const { return static_cast<double>(samples.size()) / sample_rate; }

  void Validate() const {
    Require(sample_rate > 0.0, ErrorKind::kInvalidArgument, "sample rate must be positive");
    for (double s : samples) {
      Require(std::isfinite(s), ErrorKind::kInvalidArgument, "waveform contains non-finite samples");
    }
  }
};

/// Centered slice of exactly round(seconds * sample_rate) samples. Never pads.
inline Waveform CropMiddle(const Waveform& wave, double seconds) {
  Require(seconds > 0.0, ErrorKind::kInvalidArgument, "crop length must be positive");
  const auto want = static_cast<std::size_t>(std::llround(seconds * wave.sample_rate));
  Require(wave.samples.size() >= want, ErrorKind::kInvalidArgument,
          "waveform of " + std::to_string(wave.samples.size()) + " samples is shorter than the " +
              std::to_string(want) + " requested");
  const std::size_t start = (wave.samples.size() - want) / 2;
  Waveform out;
  out.sample_rate = wave.sample_rate;
  out.samples.assign(wave.samples.begin() + static_cast<std::ptrdiff_t>(start),
                     wave.samples.begin() + static_cast<std::ptrdiff_t>(start + want));
  return out;
}

namespace detail {

inline std::uint32_t ReadU32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t ReadU16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void PutU32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void PutU16(std::ostream& out, std::uint16_t v) {
  out.put(static_cast<char>(v & 0xff));
  out.put(static_cast<char>(v >> 8));
}

inline std::vector<unsigned char> Slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorKind::kIo, "cannot open: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Reads 16-bit PCM mono RIFF/WAVE. Samples are scaled to [-1, 1).
inline Waveform ReadWav(const std::filesystem::path& path) {
  const auto bytes = detail::Slurp(path);
  const std::string p = path.string();
  Require(bytes.size() >= 12 && std::memcmp(bytes.data(), "RIFF", 4) == 0 &&
              std::memcmp(bytes.data() + 8, "WAVE", 4) == 0,
          ErrorKind::kFormat, p + ": not a RIFF/WAVE file");
  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint32_t rate = 0;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = detail::ReadU32(&bytes[pos + 4]);
    const unsigned char* body = &bytes[pos + 8];
    Require(pos + 8 + size <= bytes.size(), ErrorKind::kFormat, p + ": truncated chunk");
    if (std::memcmp(&bytes[pos], "fmt ", 4) == 0) {
      Require(size >= 16, ErrorKind::kFormat, p + ": short fmt chunk");
      Require(detail::ReadU16(body) == 1, ErrorKind::kFormat, p + ": only PCM WAV is supported");
      Require(detail::ReadU16(body + 2) == 1, ErrorKind::kFormat, p + ": only mono WAV is supported");
      rate = detail::ReadU32(body + 4);
      Require(detail::ReadU16(body + 14) == 16, ErrorKind::kFormat, p + ": only 16-bit WAV is supported");
      have_fmt = true;
    } else if (std::memcmp(&bytes[pos], "data", 4) == 0) {
      Require(have_fmt, ErrorKind::kFormat, p + ": data chunk before fmt chunk");
      Waveform wave;
      wave.sample_rate = rate;
      wave.samples.resize(size / 2);
      for (std::size_t i = 0; i < wave.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(detail::ReadU16(body + 2 * i));
        wave.samples[i] = static_cast<double>(v) / 32768.0;
      }
      return wave;
    }
    pos += 8 + size + (size & 1);
  }
  Fail(ErrorKind::kFormat, p + ": no data chunk");
}

inline void WriteWav(const std::filesystem::path& path, const Waveform& wave) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) Fail(ErrorKind::kIo, "cannot open for writing: " + path.string());
  const auto rate = static_cast<std::uint32_t>(std::lround(wave.sample_rate));
  const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
  out.write("RIFF", 4);
  detail::PutU32(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  detail::PutU32(out, 16);
  detail::PutU16(out, 1);
  detail::PutU16(out, 1);
  detail::PutU32(out, rate);
  detail::PutU32(out, rate * 2);
  detail::PutU16(out, 2);
  detail::PutU16(out, 16);
  out.write("data", 4);
  detail::PutU32(out, data_bytes);
  for (double s : wave.samples) {
    const double clipped = std::clamp(s, -1.0, 32767.0 / 32768.0);
    detail::PutU16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(clipped * 32768.0))));
  }
}

/// Raw float32 little-endian samples in `<stem>.f32` with a one-line JSON
/// sidecar `<stem>.json` holding {"sample_rate": ..., "length": ...}.
inline void WriteRawF32(const std::filesystem::path& f32_path, const Waveform& wave) {
  if (f32_path.has_parent_path()) std::filesystem::create_directories(f32_path.parent_path());
  std::ofstream out(f32_path, std::ios::binary | std::ios::trunc);
  if (!out) Fail(ErrorKind::kIo, "cannot open for writing: " + f32_path.string());
  for (double s : wave.samples) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(s));
    detail::PutU32(out, bits);
  }
  auto sidecar = f32_path;
  sidecar.replace_extension(".json");
  std::ofstream meta(sidecar, std::ios::trunc);
  nlohmann::json j = {{"sample_rate", wave.sample_rate}, {"length", wave.samples.size()}};
  meta << j.dump() << "\n";
}

inline Waveform ReadRawF32(const std::filesystem::path& f32_path) {
  auto sidecar = f32_path;
  sidecar.replace_extension(".json");
  std::ifstream meta(sidecar);
  if (!meta) Fail(ErrorKind::kIo, "missing sidecar: " + sidecar.string());
  nlohmann::json j;
  try {
    meta >> j;
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kFormat, sidecar.string() + ": " + e.what());
  }
  Require(j.contains("sample_rate") && j.contains("length"), ErrorKind::kFormat,
          sidecar.string() + ": needs sample_rate and length");
  const auto bytes = detail::Slurp(f32_path);
  const auto length = j["length"].get<std::size_t>();
  Require(bytes.size() == length * 4, ErrorKind::kFormat,
          f32_path.string() + ": size does not match sidecar length");
  Waveform wave;
  wave.sample_rate = j["sample_rate"].get<double>();
  wave.samples.resize(length);
  for (std::size_t i = 0; i < length; ++i)
    wave.samples[i] = std::bit_cast<float>(detail::ReadU32(&bytes[4 * i]));
  return wave;
}

/// Dispatches on extension: `.wav` or `.f32`.
inline Waveform ReadWaveform(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".wav") return ReadWav(path);
  if (ext == ".f32") return ReadRawF32(path);
  Fail(ErrorKind::kFormat, "unsupported audio extension: " + path.string());
}

}  // namespace cftransfer::audio
