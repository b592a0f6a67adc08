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
#include <complex>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cftransfer/audio/fft.hpp"
#include "cftransfer/audio/mel.hpp"
#include "cftransfer/audio/waveform.hpp"
#include "cftransfer/cf/interaction_matrix.hpp"
#include "cftransfer/core/config.hpp"
#include "cftransfer/core/error.hpp"
#include "cftransfer/transfer/data.hpp"

namespace cftransfer::workbench {

/// Synthetic listening world. Users and items share a latent space; play
/// probability is sigmoid(scale * <u, z> / sqrt(d) + bias) and each item's
/// audio is band-limited noise whose band energies are affine in z.
struct WorldConfig {
  std::size_t n_users = 200;
  std::size_t n_items = 300;       // items that appear in the logs
  std::size_t n_task_items = 200;  // labeled items held apart from the logs
  std::size_t latent_dim = 4;
  double affinity_scale = 3.0;
  double affinity_bias = -1.5;
  int max_extra_plays = 4;
  int max_resample = 1000;

  double sample_rate = 16000.0;
  double seconds = 1.5;
  std::size_t n_bands = 8;
  double band_low_hz = 60.0;
  double band_high_hz = 7600.0;
  double encoder_gain = 0.5;
  double energy_floor = 0.05;
  double signal_rms = 0.1;
  double noise_level = 0.1;  // white-noise rms as a fraction of signal_rms

  std::size_t n_classes = 4;
  std::string label_rule = "latent";  // "latent" or "random"
  std::uint64_t seed = 0;

  std::size_t n_samples() const { return static_cast<std::size_t>(std::llround(seconds * sample_rate)); }

  void Validate() const {
    Require(n_users >= 1 && n_items >= 1, ErrorKind::kConfig, "world needs users and items");
    Require(latent_dim >= 1, ErrorKind::kConfig, "latent_dim must be >= 1");
    Require(std::isfinite(affinity_scale) && std::isfinite(affinity_bias), ErrorKind::kConfig,
            "affinity parameters must be finite");
    Require(max_extra_plays >= 0 && max_resample >= 1, ErrorKind::kConfig, "bad play sampler limits");
    Require(sample_rate > 0.0 && n_samples() >= 2, ErrorKind::kConfig, "waveform too short");
    Require(n_bands >= 1 && band_low_hz > 0.0 && band_low_hz < band_high_hz && band_high_hz < sample_rate / 2.0,
            ErrorKind::kConfig, "bands must lie inside (0, sample_rate/2)");
    Require(energy_floor > 0.0 && signal_rms > 0.0 && noise_level >= 0.0, ErrorKind::kConfig,
            "energy_floor and signal_rms must be positive, noise_level >= 0");
    Require(n_classes >= 2, ErrorKind::kConfig, "n_classes must be >= 2");
    Require(label_rule == "latent" || label_rule == "random", ErrorKind::kConfig,
            "label_rule must be 'latent' or 'random'");
  }
};

inline nlohmann::json ToJson(const WorldConfig& c) {
  return {{"n_users", c.n_users},
          {"n_items", c.n_items},
          {"n_task_items", c.n_task_items},
          {"latent_dim", c.latent_dim},
          {"affinity_scale", c.affinity_scale},
          {"affinity_bias", c.affinity_bias},
          {"max_extra_plays", c.max_extra_plays},
          {"max_resample", c.max_resample},
          {"sample_rate", c.sample_rate},
          {"seconds", c.seconds},
          {"n_bands", c.n_bands},
          {"band_low_hz", c.band_low_hz},
          {"band_high_hz", c.band_high_hz},
          {"encoder_gain", c.encoder_gain},
          {"energy_floor", c.energy_floor},
          {"signal_rms", c.signal_rms},
          {"noise_level", c.noise_level},
          {"n_classes", c.n_classes},
          {"label_rule", c.label_rule},
          {"seed", c.seed}};
}

inline WorldConfig WorldConfigFromJson(const nlohmann::json& j) {
  WorldConfig c;
  ConfigReader r(j, "world");
  r.Get("n_users", c.n_users);
  r.Get("n_items", c.n_items);
  r.Get("n_task_items", c.n_task_items);
  r.Get("latent_dim", c.latent_dim);
  r.Get("affinity_scale", c.affinity_scale);
  r.Get("affinity_bias", c.affinity_bias);
  r.Get("max_extra_plays", c.max_extra_plays);
  r.Get("max_resample", c.max_resample);
  r.Get("sample_rate", c.sample_rate);
  r.Get("seconds", c.seconds);
  r.Get("n_bands", c.n_bands);
  r.Get("band_low_hz", c.band_low_hz);
  r.Get("band_high_hz", c.band_high_hz);
  r.Get("encoder_gain", c.encoder_gain);
  r.Get("energy_floor", c.energy_floor);
  r.Get("signal_rms", c.signal_rms);
  r.Get("noise_level", c.noise_level);
  r.Get("n_classes", c.n_classes);
  r.Get("label_rule", c.label_rule);
  r.Get("seed", c.seed);
  r.Finish();
  c.Validate();
  return c;
}

/// A labeled item for the downstream task.
struct LabeledItem {
  std::string id;
  std::size_t label = 0;
  std::vector<double> target;
};

/// Everything a run consumes: logs, audio by item id, labeled task items.
struct Dataset {
  std::vector<cf::ListeningLog> logs;
  std::vector<std::string> audio_ids;
  std::vector<audio::Waveform> audio;
  std::vector<LabeledItem> task_items;
  std::size_t n_classes = 0;

  const audio::Waveform& Audio(const std::string& id) const {
    const auto it = std::find(audio_ids.begin(), audio_ids.end(), id);
    if (it == audio_ids.end()) Fail(ErrorKind::kNotFound, "no audio for item " + id);
    return audio[static_cast<std::size_t>(it - audio_ids.begin())];
  }
};

struct World {
  WorldConfig config;
  Dataset dataset;
  std::vector<std::string> item_ids;  // logged items, row order of item_latents
  Eigen::MatrixXd item_latents;
  Eigen::MatrixXd user_latents;
  Eigen::MatrixXd task_latents;
  Eigen::MatrixXd encoder;     // n_bands x latent_dim
  Eigen::MatrixXd projection;  // n_classes x latent_dim
};

enum WorldStream : std::uint32_t {
  kEncoder = 11,
  kProjection,
  kItemLatents,
  kUserLatents,
  kInteractions,
  kAudio,
  kTaskLatents,
  kRandomLabels,
};

inline double Sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double Affinity(const WorldConfig& c, const Eigen::VectorXd& user, const Eigen::VectorXd& item) {
  return Sigmoid(c.affinity_scale * user.dot(item) / std::sqrt(static_cast<double>(c.latent_dim)) + c.affinity_bias);
}

/// Per-band energy profile of an item: max(floor, 1 + gain * (W z)_b).
inline std::vector<double> BandEnergies(const WorldConfig& c, const Eigen::MatrixXd& encoder, const Eigen::VectorXd& z) {
  const Eigen::VectorXd proj = encoder * z;
  std::vector<double> e(static_cast<std::size_t>(proj.size()));
  for (Eigen::Index b = 0; b < proj.size(); ++b)
    e[static_cast<std::size_t>(b)] = std::max(c.energy_floor, 1.0 + c.encoder_gain * proj(b));
  return e;
}

/// Band edges in Hz, evenly spaced on the mel scale.
inline std::vector<double> BandEdges(const WorldConfig& c) {
  const double lo = audio::HzToMel(c.band_low_hz), hi = audio::HzToMel(c.band_high_hz);
  std::vector<double> edges(c.n_bands + 1);
  for (std::size_t b = 0; b <= c.n_bands; ++b)
    edges[b] = audio::MelToHz(lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(c.n_bands));
  return edges;
}

inline std::size_t FftLength(std::size_t n) {
  std::size_t l = 1;
  while (l < n) l <<= 1;
  return l;
}

/// Band-limited Gaussian noise with the given per-band energies, plus white
/// noise. Energy 1 in every band gives rms `signal_rms` before the white noise.
inline audio::Waveform SynthesizeItemAudio(const WorldConfig& c, std::span<const double> energies, std::uint64_t seed) {
  const std::size_t n = c.n_samples(), len = FftLength(n);
  const auto edges = BandEdges(c);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  std::vector<std::complex<double>> spec(len);
  std::size_t in_band = 0;
  for (std::size_t k = 1; k < len / 2; ++k) {
    const double f = static_cast<double>(k) * c.sample_rate / static_cast<double>(len);
    const auto it = std::upper_bound(edges.begin(), edges.end(), f);
    if (it == edges.begin() || it == edges.end()) continue;
    const auto b = static_cast<std::size_t>(it - edges.begin()) - 1;
    const double re = n01(rng), im = n01(rng);
    spec[k] = std::sqrt(energies[b]) * std::complex<double>(re, im);
    ++in_band;
  }
  Require(in_band > 0, ErrorKind::kConfig, "no FFT bins fall inside the bands");
  audio::FftInPlace(spec, true);
  const double gain = c.signal_rms / std::sqrt(static_cast<double>(in_band));
  audio::Waveform full;
  full.sample_rate = c.sample_rate;
  full.samples.resize(len);
  for (std::size_t i = 0; i < len; ++i) full.samples[i] = gain * spec[i].real();
  audio::Waveform wave = audio::CropMiddle(full, c.seconds);
  if (c.noise_level > 0.0)
    for (double& s : wave.samples) s += c.noise_level * c.signal_rms * n01(rng);
  return wave;
}

namespace detail {

inline Eigen::MatrixXd GaussianMatrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index k = 0; k < cols; ++k) m(r, k) = scale * n01(rng);
  return m;
}

inline std::string Id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%04zu", prefix, i);
  return buf;
}

}  // namespace detail

inline std::size_t ArgmaxLabel(const Eigen::MatrixXd& projection, const Eigen::VectorXd& z) {
  Eigen::Index best = 0;
  (projection * z).maxCoeff(&best);
  return static_cast<std::size_t>(best);
}

/// Class frequencies must lie within 0.10 of uniform.
inline bool LabelsBalanced(std::span<const LabeledItem> items, std::size_t n_classes) {
  if (items.empty()) return true;
  std::vector<double> freq(n_classes, 0.0);
  for (const auto& it : items) freq[it.label] += 1.0 / static_cast<double>(items.size());
  return std::all_of(freq.begin(), freq.end(),
                     [&](double f) { return std::abs(f - 1.0 / static_cast<double>(n_classes)) <= 0.10; });
}

/// Samples the listening logs, the audio of logged and task items, and the
/// task labels. Regression targets are the mean of the latent coordinates
/// scaled to unit variance.
inline World GenerateWorld(const WorldConfig& config) {
  config.Validate();
  using transfer::DeriveSeed;
  const auto d = static_cast<Eigen::Index>(config.latent_dim);
  World w;
  w.config = config;
  w.encoder = detail::GaussianMatrix(static_cast<Eigen::Index>(config.n_bands), d, DeriveSeed(config.seed, kEncoder),
                                     1.0 / std::sqrt(static_cast<double>(d)));
  if (config.n_classes == config.latent_dim) {
    w.projection = Eigen::MatrixXd::Identity(d, d);
  } else {
    w.projection =
        detail::GaussianMatrix(static_cast<Eigen::Index>(config.n_classes), d, DeriveSeed(config.seed, kProjection));
  }
  w.item_latents = detail::GaussianMatrix(static_cast<Eigen::Index>(config.n_items), d,
                                          DeriveSeed(config.seed, kItemLatents));
  w.user_latents = detail::GaussianMatrix(static_cast<Eigen::Index>(config.n_users), d,
                                          DeriveSeed(config.seed, kUserLatents));

  std::vector<std::string> user_ids;
  for (std::size_t u = 0; u < config.n_users; ++u) user_ids.push_back(detail::Id("user", u));
  for (std::size_t i = 0; i < config.n_items; ++i) w.item_ids.push_back(detail::Id("item", i));

  // Columns are resampled until every item has at least one play.
  std::mt19937_64 rng(DeriveSeed(config.seed, kInteractions));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<std::vector<int>> counts(config.n_users, std::vector<int>(config.n_items, 0));
  for (std::size_t i = 0; i < config.n_items; ++i) {
    const Eigen::VectorXd z = w.item_latents.row(static_cast<Eigen::Index>(i)).transpose();
    bool any = false;
    for (int attempt = 0; attempt < config.max_resample && !any; ++attempt) {
      for (std::size_t u = 0; u < config.n_users; ++u) {
        const double p = Affinity(config, w.user_latents.row(static_cast<Eigen::Index>(u)).transpose(), z);
        counts[u][i] = 0;
        if (unif(rng) < p) {
          std::binomial_distribution<int> extra(config.max_extra_plays, p);
          counts[u][i] = 1 + extra(rng);
          any = true;
        }
      }
    }
    Require(any, ErrorKind::kConfig,
            "infeasible world: item " + w.item_ids[i] + " drew no interactions in " +
                std::to_string(config.max_resample) + " attempts");
  }
  for (std::size_t u = 0; u < config.n_users; ++u)
    for (std::size_t i = 0; i < config.n_items; ++i)
      if (counts[u][i] > 0) w.dataset.logs.push_back({user_ids[u], w.item_ids[i], counts[u][i]});

  // Task items; latents are redrawn until the classes are balanced.
  std::vector<LabeledItem> task;
  const double target_scale = 1.0 / std::sqrt(static_cast<double>(config.latent_dim));
  std::mt19937_64 task_rng(DeriveSeed(config.seed, kTaskLatents));
  std::mt19937_64 label_rng(DeriveSeed(config.seed, kRandomLabels));
  bool balanced = false;
  for (int attempt = 0; attempt < config.max_resample && !balanced; ++attempt) {
    w.task_latents = detail::GaussianMatrix(static_cast<Eigen::Index>(config.n_task_items), d, task_rng());
    task.clear();
    for (std::size_t i = 0; i < config.n_task_items; ++i) {
      const Eigen::VectorXd z = w.task_latents.row(static_cast<Eigen::Index>(i)).transpose();
      LabeledItem item{detail::Id("task", i), 0, {z.sum() * target_scale}};
      item.label = config.label_rule == "latent" ? ArgmaxLabel(w.projection, z)
                                                 : static_cast<std::size_t>(label_rng() % config.n_classes);
      task.push_back(std::move(item));
    }
    balanced = LabelsBalanced(task, config.n_classes);
  }
  Require(balanced, ErrorKind::kConfig, "could not draw class-balanced task labels");
  w.dataset.task_items = std::move(task);
  w.dataset.n_classes = config.n_classes;

  const std::uint64_t audio_seed = DeriveSeed(config.seed, kAudio);
  auto add_audio = [&](const std::string& id, const Eigen::VectorXd& z, std::uint64_t k) {
    const auto e = BandEnergies(config, w.encoder, z);
    w.dataset.audio_ids.push_back(id);
    w.dataset.audio.push_back(SynthesizeItemAudio(config, e, DeriveSeed(audio_seed, static_cast<std::uint32_t>(k))));
  };
  for (std::size_t i = 0; i < config.n_items; ++i)
    add_audio(w.item_ids[i], w.item_latents.row(static_cast<Eigen::Index>(i)).transpose(), i);
  for (std::size_t i = 0; i < config.n_task_items; ++i)
    add_audio(w.dataset.task_items[i].id, w.task_latents.row(static_cast<Eigen::Index>(i)).transpose(),
              config.n_items + i);
  return w;
}

}  // namespace cftransfer::workbench
