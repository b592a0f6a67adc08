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

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cftransfer/core/error.hpp"
#include "cftransfer/core/float_table.hpp"
#include "cftransfer/nn/layers.hpp"
#include "cftransfer/nn/tensor.hpp"

namespace cftransfer::nn {

/// Ordered layer stack with reverse-mode backward. Copies are deep.
class Sequential {
 public:
  struct Cache {
    std::vector<std::unique_ptr<LayerCache>> entries;
    const Sequential* owner = nullptr;
    std::uint64_t version = 0;
  };

  Sequential() = default;
  Sequential(const Sequential& other) : version_(other.version_) {
    layers_.reserve(other.layers_.size());
    for (const auto& layer : other.layers_) layers_.push_back(layer->Clone());
  }
  Sequential& operator=(const Sequential& other) {
    if (this != &other) {
      Sequential copy(other);
      layers_ = std::move(copy.layers_);
      version_ = other.version_;
    }
    return *this;
  }
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  void Add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }

  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }

  Shape OutputShape(Shape shape) const {
    for (const auto& layer : layers_) shape = layer->OutputShape(shape);
    return shape;
  }

  /// `trace`, when given, receives the output shape of every layer.
  Tensor Forward(const Tensor& x, Mode mode, Cache* cache = nullptr, std::vector<Shape>* trace = nullptr) {
    if (cache) {
      cache->entries.clear();
      cache->entries.resize(layers_.size());
      cache->owner = this;
      cache->version = version_;
    }
    Tensor h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i]->Forward(h, mode, cache ? &cache->entries[i] : nullptr);
      if (trace) trace->push_back(h.shape());
    }
    return h;
  }

  /// Accumulates parameter gradients; returns the input gradient.
  Tensor Backward(const Cache& cache, const Tensor& grad_out) {
    Require(cache.owner == this && cache.version == version_ && cache.entries.size() == layers_.size(),
            ErrorKind::kStaleCache, "backward called with a cache from a different or since-updated network");
    Tensor g = grad_out;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      Require(cache.entries[i] != nullptr, ErrorKind::kStaleCache, "forward cache is incomplete");
      g = layers_[i]->Backward(g, *cache.entries[i]);
    }
    return g;
  }

  std::vector<Parameter*> Parameters() {
    std::vector<Parameter*> out;
    for (auto& layer : layers_)
      for (Parameter* p : layer->Parameters()) out.push_back(p);
    return out;
  }

  /// Every checkpointed tensor (parameters, then buffers) with a stable name.
  std::vector<std::pair<std::string, Tensor*>> NamedState() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      std::size_t k = 0;
      for (Parameter* p : layers_[i]->Parameters())
        out.emplace_back(std::to_string(i) + "." + std::to_string(k++) + "." + p->name, &p->value);
      for (auto& [name, t] : layers_[i]->Buffers())
        out.emplace_back(std::to_string(i) + "." + std::to_string(k++) + "." + name, t);
    }
    return out;
  }

  void ZeroGrad() {
    for (Parameter* p : Parameters()) p->grad.Fill(0.0);
  }

  void Initialize(Rng& rng) {
    for (auto& layer : layers_) layer->Initialize(rng);
    ++version_;
  }

  /// Invalidates outstanding caches; call after changing parameters.
  void MarkUpdated() { ++version_; }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
  std::uint64_t version_ = 0;
};

/// BN -> ReLU -> Conv, twice, then squeeze-and-excitation. Spatial dims are
/// preserved; channels go in_channels -> channels.
class DoubleConv final : public Layer {
 public:
  DoubleConv(std::size_t in_channels, std::size_t channels, std::size_t se_ratio)
      : in_(in_channels), out_(channels), ratio_(se_ratio) {
    body_.Add(std::make_unique<BatchNorm>(in_channels));
    body_.Add(std::make_unique<Relu>());
    body_.Add(std::make_unique<Conv2d>(in_channels, channels));
    body_.Add(std::make_unique<BatchNorm>(channels));
    body_.Add(std::make_unique<Relu>());
    body_.Add(std::make_unique<Conv2d>(channels, channels));
    body_.Add(std::make_unique<SeBlock>(channels, se_ratio));
  }

  LayerKind kind() const override { return LayerKind::kDoubleConv; }
  std::string Describe() const override {
    return "double_conv(" + std::to_string(in_) + "->" + std::to_string(out_) + ", se " + std::to_string(ratio_) + ")";
  }
  Shape OutputShape(const Shape& input) const override { return body_.OutputShape(input); }

  Tensor Forward(const Tensor& x, Mode mode, std::unique_ptr<LayerCache>* cache) override {
    if (!cache) return body_.Forward(x, mode);
    auto entry = std::make_unique<Cache>();
    Tensor y = body_.Forward(x, mode, &entry->inner);
    *cache = std::move(entry);
    return y;
  }

  Tensor Backward(const Tensor& grad_out, const LayerCache& cache) override {
    return body_.Backward(detail::CacheAs<Cache>(cache).inner, grad_out);
  }

  std::vector<Parameter*> Parameters() override { return body_.Parameters(); }
  std::vector<std::pair<std::string, Tensor*>> Buffers() override {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (std::size_t i = 0; i < body_.size(); ++i)
      for (auto& [name, t] : body_.layer(i).Buffers()) out.emplace_back(std::to_string(i) + "." + name, t);
    return out;
  }
  void Initialize(Rng& rng) override { body_.Initialize(rng); }
  std::unique_ptr<Layer> Clone() const override { return std::make_unique<DoubleConv>(*this); }

  /// Sub-layers in order: bn, relu, conv, bn, relu, conv, se.
  Sequential& body() { return body_; }

 private:
  struct Cache : LayerCache {
    Sequential::Cache inner;
  };
  std::size_t in_;
  std::size_t out_;
  std::size_t ratio_;
  Sequential body_;
};

// ---------------------------------------------------------------------------

/// Layer schedule of a CF-estimator-shaped network: one double_conv block
/// per pool (each followed by that pool), an optional trailing block with no
/// pool, global average pooling and a linear output layer.
struct ArchitectureSpec {
  std::string name = "custom";
  std::size_t input_height = 96;
  std::size_t input_width = 1280;
  std::size_t input_channels = 1;
  std::size_t channels = 32;
  std::vector<std::pair<std::size_t, std::size_t>> pools;
  bool trailing_block = true;
  std::size_t se_ratio = 8;
  std::size_t output_dim = 40;

  friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;

  Shape InputShape(std::size_t batch) const { return {batch, input_height, input_width, input_channels}; }

  void Validate() const {
    Require(channels > 0 && output_dim > 0 && input_channels > 0, ErrorKind::kConfig,
            "architecture widths must be positive");
    Require(se_ratio > 0 && channels % se_ratio == 0, ErrorKind::kConfig,
            "se_ratio " + std::to_string(se_ratio) + " must divide channels " + std::to_string(channels));
    std::size_t h = input_height, w = input_width;
    for (const auto& [ph, pw] : pools) {
      Require(ph > 0 && pw > 0 && h % ph == 0 && w % pw == 0, ErrorKind::kConfig,
              "pool " + std::to_string(ph) + "x" + std::to_string(pw) + " does not divide (" + std::to_string(h) +
                  ", " + std::to_string(w) + ")");
      h /= ph;
      w /= pw;
    }
    Require(!pools.empty() || trailing_block, ErrorKind::kConfig, "architecture needs at least one block");
  }
};

inline nlohmann::json ToJson(const ArchitectureSpec& spec) {
  nlohmann::json pools = nlohmann::json::array();
  for (const auto& [ph, pw] : spec.pools) pools.push_back({ph, pw});
  return {{"name", spec.name},
          {"input", {spec.input_height, spec.input_width, spec.input_channels}},
          {"channels", spec.channels},
          {"pools", pools},
          {"trailing_block", spec.trailing_block},
          {"se_ratio", spec.se_ratio},
          {"output_dim", spec.output_dim}};
}

/// Presets: `cf_estimator_table1` (96x1280 input, pools 4x5, 3x4, 2x4, 2x4,
/// fifth block before pooling to the 40-d output) and `cf_estimator_desk`
/// (32x64 input for minutes-scale CPU runs).
inline ArchitectureSpec ArchitecturePreset(const std::string& name, std::size_t channels) {
  ArchitectureSpec spec;
  spec.name = name;
  spec.channels = channels;
  if (name == "cf_estimator_table1") {
    spec.input_height = 96;
    spec.input_width = 1280;
    spec.pools = {{4, 5}, {3, 4}, {2, 4}, {2, 4}};
  } else if (name == "cf_estimator_desk") {
    spec.input_height = 32;
    spec.input_width = 64;
    spec.pools = {{2, 4}, {2, 2}, {2, 2}, {2, 2}};
  } else {
    Fail(ErrorKind::kConfig, "unknown architecture preset: " + name);
  }
  spec.trailing_block = true;
  spec.se_ratio = 8;
  spec.output_dim = 40;
  return spec;
}

/// Reads either {"preset": name, "channels": F, ...overrides} or a full
/// description with the fields written by ToJson.
inline ArchitectureSpec ArchitectureFromJson(const nlohmann::json& j) {
  try {
    ArchitectureSpec spec;
    if (j.contains("preset")) {
      spec = ArchitecturePreset(j.at("preset").get<std::string>(), j.value("channels", std::size_t{32}));
    }
    if (j.contains("name")) spec.name = j.at("name").get<std::string>();
    if (j.contains("input")) {
      const auto& in = j.at("input");
      Require(in.is_array() && in.size() == 3, ErrorKind::kConfig, "architecture input must be [H, W, C]");
      spec.input_height = in[0].get<std::size_t>();
      spec.input_width = in[1].get<std::size_t>();
      spec.input_channels = in[2].get<std::size_t>();
    }
    if (j.contains("channels")) spec.channels = j.at("channels").get<std::size_t>();
    if (j.contains("pools")) {
      spec.pools.clear();
      for (const auto& p : j.at("pools")) {
        Require(p.is_array() && p.size() == 2, ErrorKind::kConfig, "each pool must be [ph, pw]");
        spec.pools.emplace_back(p[0].get<std::size_t>(), p[1].get<std::size_t>());
      }
    }
    if (j.contains("trailing_block")) spec.trailing_block = j.at("trailing_block").get<bool>();
    if (j.contains("se_ratio")) spec.se_ratio = j.at("se_ratio").get<std::size_t>();
    if (j.contains("output_dim")) spec.output_dim = j.at("output_dim").get<std::size_t>();
    spec.Validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kConfig, std::string("malformed architecture config: ") + e.what());
  }
}

inline ArchitectureSpec LoadArchitectureConfig(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorKind::kIo, "cannot open architecture config: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kConfig, path.string() + ": " + e.what());
  }
  return ArchitectureFromJson(j);
}

inline Sequential BuildLayers(const ArchitectureSpec& spec) {
  spec.Validate();
  Sequential net;
  std::size_t in = spec.input_channels;
  for (const auto& [ph, pw] : spec.pools) {
    net.Add(std::make_unique<DoubleConv>(in, spec.channels, spec.se_ratio));
    net.Add(std::make_unique<MaxPool>(ph, pw));
    in = spec.channels;
  }
  if (spec.trailing_block) net.Add(std::make_unique<DoubleConv>(in, spec.channels, spec.se_ratio));
  net.Add(std::make_unique<GlobalAvgPool>());
  net.Add(std::make_unique<FullyConnected>(spec.channels, spec.output_dim));
  return net;
}

/// Architecture plus its layers and parameters.
struct NetworkModel {
  ArchitectureSpec spec;
  Sequential net;

  static NetworkModel Build(const ArchitectureSpec& spec, std::uint64_t seed) {
    NetworkModel model{spec, BuildLayers(spec)};
    Rng rng(seed);
    model.net.Initialize(rng);
    return model;
  }

  Tensor Forward(const Tensor& x, Mode mode, Sequential::Cache* cache = nullptr,
                 std::vector<Shape>* trace = nullptr) {
    RequireShape(x, spec.InputShape(x.rank() == 4 ? x.dim(0) : 0), "network input");
    return net.Forward(x, mode, cache, trace);
  }

  Tensor Backward(const Sequential::Cache& cache, const Tensor& grad_out) { return net.Backward(cache, grad_out); }
};

/// Per-sample shapes after each pooling stage, after global pooling and at
/// the output, taken from an actual forward pass.
inline std::vector<Shape> PoolingShapeTrace(NetworkModel& model, const Tensor& x) {
  std::vector<Shape> trace;
  model.Forward(x, Mode::kEval, nullptr, &trace);
  std::vector<Shape> out;
  for (std::size_t i = 0; i < model.net.size(); ++i) {
    const LayerKind k = model.net.layer(i).kind();
    if (k == LayerKind::kMaxPool || k == LayerKind::kGlobalAvgPool || k == LayerKind::kFullyConnected) {
      out.emplace_back(trace[i].begin() + 1, trace[i].end());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint format (version 1):
//
//   CFTCKPT 1\n
//   arch <architecture json, one line>\n
//   tensors <count>\n
//   then per tensor: <name> <rank> <d0> ... <dk>\n followed by the values as
//   little-endian binary64, row-major.

inline void SaveCheckpoint(const std::filesystem::path& path, NetworkModel& model) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) Fail(ErrorKind::kIo, "cannot open for writing: " + path.string());
  const auto state = model.net.NamedState();
  out << "CFTCKPT 1\n" << "arch " << ToJson(model.spec).dump() << "\n" << "tensors " << state.size() << "\n";
  for (const auto& [name, t] : state) {
    out << name << " " << t->rank();
    for (std::size_t d : t->shape()) out << " " << d;
    out << "\n";
    for (double v : t->values()) cftransfer::detail::PutLe64(out, v);
  }
  if (!out) Fail(ErrorKind::kIo, "write failed: " + path.string());
}

/// Loads a checkpoint. When `expected` is given, the stored architecture
/// must match it exactly.
inline NetworkModel LoadCheckpoint(const std::filesystem::path& path, const ArchitectureSpec* expected = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorKind::kIo, "cannot open checkpoint: " + path.string());
  const std::string p = path.string();
  if (cftransfer::detail::ReadLine(in, p) != "CFTCKPT 1") Fail(ErrorKind::kFormat, p + ": bad checkpoint magic");
  const std::string arch_line = cftransfer::detail::ReadLine(in, p);
  Require(arch_line.rfind("arch ", 0) == 0, ErrorKind::kFormat, p + ": missing arch line");
  nlohmann::json arch_json;
  try {
    arch_json = nlohmann::json::parse(arch_line.substr(5));
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kFormat, p + ": bad architecture json: " + e.what());
  }
  const ArchitectureSpec spec = ArchitectureFromJson(arch_json);
  if (expected != nullptr && !(spec == *expected)) {
    Fail(ErrorKind::kConfig, p + ": architecture mismatch: checkpoint has " + ToJson(spec).dump() +
                                 ", expected " + ToJson(*expected).dump());
  }
  NetworkModel model{spec, BuildLayers(spec)};
  auto state = model.net.NamedState();
  const std::size_t count = cftransfer::detail::ParseKeyCount(cftransfer::detail::ReadLine(in, p), "tensors", p);
  Require(count == state.size(), ErrorKind::kConfig, p + ": tensor count does not match architecture");
  for (auto& [name, t] : state) {
    std::istringstream header(cftransfer::detail::ReadLine(in, p));
    std::string stored_name;
    std::size_t rank = 0;
    header >> stored_name >> rank;
    Shape shape(rank);
    for (auto& d : shape) header >> d;
    Require(header && stored_name == name && shape == t->shape(), ErrorKind::kConfig,
            p + ": tensor " + stored_name + " does not match architecture slot " + name);
    std::vector<unsigned char> raw(t->size() * 8);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    Require(static_cast<std::size_t>(in.gcount()) == raw.size(), ErrorKind::kFormat, p + ": truncated tensor data");
    for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = cftransfer::detail::GetLe64(&raw[8 * i]);
  }
  model.net.MarkUpdated();
  return model;
}

}  // namespace cftransfer::nn
