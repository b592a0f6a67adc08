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
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "cftransfer/audio/fft.hpp"
#include "cftransfer/audio/waveform.hpp"
#include "cftransfer/core/error.hpp"
#include "cftransfer/core/float_table.hpp"
#include "cftransfer/core/grid.hpp"
#include "cftransfer/core/hash.hpp"

namespace cftransfer::audio {

struct FeatureConfig {
  int n_fft = 512;
  int hop = 375;
  int n_mels = 96;
  double sample_rate = 16000.0;
  double fmin = 0.0;
  double fmax = 8000.0;
  bool log_compress = true;
  double log_floor = 1e-10;

  void Validate() const {
    Require(n_fft >= 2, ErrorKind::kConfig, "n_fft must be >= 2");
    Require(hop >= 1, ErrorKind::kConfig, "hop must be >= 1");
    Require(n_mels >= 1, ErrorKind::kConfig, "n_mels must be >= 1");
    Require(sample_rate > 0.0, ErrorKind::kConfig, "sample_rate must be positive");
    Require(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0, ErrorKind::kConfig,
            "need 0 <= fmin < fmax <= sample_rate/2");
    Require(log_floor > 0.0, ErrorKind::kConfig, "log_floor must be positive");
  }

  std::size_t n_bins() const { return static_cast<std::size_t>(n_fft / 2 + 1); }
};

struct MelSpectrogram {
  Grid grid;  // n_mels x n_frames
  FeatureConfig config;

  std::size_t n_mels() const { return grid.rows; }
  std::size_t n_frames() const { return grid.cols; }
};

/// Frames produced for `n_samples` samples under center padding.
inline std::size_t FrameCount(std::size_t n_samples, int hop) {
  return (n_samples + static_cast<std::size_t>(hop) - 1) / static_cast<std::size_t>(hop);
}

/// Periodic Hann window.
inline std::vector<double> HannWindow(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

/// Maps a possibly out-of-range index into [0, n) by mirror reflection
/// about the end samples (edge sample not repeated).
inline std::size_t ReflectIndex(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<std::ptrdiff_t>(n) ? m : period - m);
}

/// Samples of frame `t` before windowing: centered on sample t*hop.
inline std::vector<double> FrameSamples(const Waveform& wave, const FeatureConfig& config, std::size_t t) {
  std::vector<double> frame(static_cast<std::size_t>(config.n_fft));
  const auto start = static_cast<std::ptrdiff_t>(t) * config.hop - config.n_fft / 2;
  for (int m = 0; m < config.n_fft; ++m)
    frame[static_cast<std::size_t>(m)] = wave.samples[ReflectIndex(start + m, wave.samples.size())];
  return frame;
}

/// Hann-windowed, reflect-padded power STFT: (n_fft/2 + 1) x ceil(N / hop).
inline Grid StftPower(const Waveform& wave, const FeatureConfig& config) {
  config.Validate();
  Require(!wave.samples.empty(), ErrorKind::kEmptyInput, "empty waveform");
  const std::size_t n_frames = FrameCount(wave.samples.size(), config.hop);
  const auto window = HannWindow(config.n_fft);
  Grid power(config.n_bins(), n_frames);
  for (std::size_t t = 0; t < n_frames; ++t) {
    auto frame = FrameSamples(wave, config, t);
    for (std::size_t m = 0; m < frame.size(); ++m) frame[m] *= window[m];
    const auto spectrum = RealPowerSpectrum(frame);
    for (std::size_t k = 0; k < spectrum.size(); ++k) power(k, t) = spectrum[k];
  }
  return power;
}

// Slaney mel scale: linear below 1 kHz, logarithmic above.
inline double HzToMel(double hz) {
  constexpr double kLinearStep = 200.0 / 3.0;
  constexpr double kBreakHz = 1000.0;
  const double break_mel = kBreakHz / kLinearStep;
  const double log_step = std::log(6.4) / 27.0;
  return hz < kBreakHz ? hz / kLinearStep : break_mel + std::log(hz / kBreakHz) / log_step;
}

inline double MelToHz(double mel) {
  constexpr double kLinearStep = 200.0 / 3.0;
  constexpr double kBreakHz = 1000.0;
  const double break_mel = kBreakHz / kLinearStep;
  const double log_step = std::log(6.4) / 27.0;
  return mel < break_mel ? mel * kLinearStep : kBreakHz * std::exp(log_step * (mel - break_mel));
}

/// Center frequency (Hz) of each mel filter.
inline std::vector<double> MelCenterFrequencies(const FeatureConfig& config) {
  const double lo = HzToMel(config.fmin), hi = HzToMel(config.fmax);
  std::vector<double> centers(static_cast<std::size_t>(config.n_mels));
  for (int k = 0; k < config.n_mels; ++k)
    centers[k] = MelToHz(lo + (hi - lo) * (k + 1) / (config.n_mels + 1));
  return centers;
}

/// Peak-normalized triangular filters, n_mels x (n_fft/2 + 1).
inline Grid MelFilterbank(const FeatureConfig& config) {
  config.Validate();
  const double lo = HzToMel(config.fmin), hi = HzToMel(config.fmax);
  std::vector<double> edges(static_cast<std::size_t>(config.n_mels + 2));
  for (std::size_t k = 0; k < edges.size(); ++k)
    edges[k] = MelToHz(lo + (hi - lo) * static_cast<double>(k) / (config.n_mels + 1));
  Grid bank(static_cast<std::size_t>(config.n_mels), config.n_bins());
  for (std::size_t m = 0; m < bank.rows; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    bool any = false;
    for (std::size_t b = 0; b < bank.cols; ++b) {
      const double f = static_cast<double>(b) * config.sample_rate / config.n_fft;
      const double rising = (f - left) / (center - left);
      const double falling = (right - f) / (right - center);
      const double w = std::max(0.0, std::min(rising, falling));
      bank(m, b) = w;
      any = any || w > 0.0;
    }
    Require(any, ErrorKind::kConfig,
            "mel filter " + std::to_string(m) + " covers no FFT bin; reduce n_mels or raise n_fft");
  }
  return bank;
}

/// Filterbank applied to the power STFT, optionally log10(x + floor).
inline MelSpectrogram Melspectrogram(const Waveform& wave, const FeatureConfig& config) {
  wave.Validate();
  const Grid bank = MelFilterbank(config);
  const Grid power = StftPower(wave, config);
  MelSpectrogram mel{Grid(bank.rows, power.cols), config};
  for (std::size_t m = 0; m < bank.rows; ++m) {
    for (std::size_t b = 0; b < bank.cols; ++b) {
      const double w = bank(m, b);
      if (w == 0.0) continue;
      const double* src = &power.data[b * power.cols];
      double* dst = &mel.grid.data[m * power.cols];
      for (std::size_t t = 0; t < power.cols; ++t) dst[t] += w * src[t];
    }
  }
  if (config.log_compress) {
    for (double& v : mel.grid.data) v = std::log10(v + config.log_floor);
  }
  return mel;
}

/// Hex key for the feature cache: hash of the samples, rate and every
/// config field.
inline std::string FeatureCacheKey(const Waveform& wave, const FeatureConfig& config) {
  Fnv1a64 h;
  h.UpdateValues(std::span<const double>(wave.samples));
  const double fields[] = {wave.sample_rate, double(config.n_fft), double(config.hop), double(config.n_mels),
                           config.sample_rate, config.fmin, config.fmax, config.log_compress ? 1.0 : 0.0,
                           config.log_floor};
  h.UpdateValues(std::span<const double>(fields));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h.Digest()));
  return buf;
}

/// Persists a grid as a float table; row ids are "mel<k>".
inline void SaveMelGrid(const std::filesystem::path& path, const Grid& grid) {
  FloatTable table;
  table.cols = grid.cols;
  table.values = grid.data;
  for (std::size_t r = 0; r < grid.rows; ++r) table.row_ids.push_back("mel" + std::to_string(r));
  WriteFloatTable(path, table);
}

inline Grid LoadMelGrid(const std::filesystem::path& path) {
  FloatTable table = ReadFloatTable(path);
  Grid grid;
  grid.rows = table.rows();
  grid.cols = table.cols;
  grid.data = std::move(table.values);
  return grid;
}

}  // namespace cftransfer::audio
