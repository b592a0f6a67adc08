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

// The closed layer set: 3x3 convolution, batch norm, ReLU, max-pool,
// squeeze-and-excitation, global average pool and fully-connected. Every
// layer caches what its backward pass needs in a LayerCache owned by the
// caller, accumulates parameter gradients into Parameter::grad, and returns
// the gradient with respect to its input.

#include <cmath>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cftransfer/core/error.hpp"
#include "cftransfer/nn/tensor.hpp"

namespace cftransfer::nn {

enum class Mode { kTrain, kEval };

enum class LayerKind {
  kConv2d,
  kBatchNorm,
  kRelu,
  kMaxPool,
  kSeBlock,
  kGlobalAvgPool,
  kFullyConnected,
  kDoubleConv,
};

struct LayerCache {
  virtual ~LayerCache() = default;
};

using Rng = std::mt19937_64;

class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  virtual std::string Describe() const = 0;

  /// Output shape for a batched input shape; throws on incompatibility.
  virtual Shape OutputShape(const Shape& input) const = 0;

  /// `cache` may be null for inference-only passes.
  virtual Tensor Forward(const Tensor& x, Mode mode, std::unique_ptr<LayerCache>* cache) = 0;
  virtual Tensor Backward(const Tensor& grad_out, const LayerCache& cache) = 0;

  virtual std::vector<Parameter*> Parameters() { return {}; }
  /// Non-trainable state that still belongs in checkpoints.
  virtual std::vector<std::pair<std::string, Tensor*>> Buffers() { return {}; }
  virtual void Initialize(Rng&) {}
  virtual std::unique_ptr<Layer> Clone() const = 0;
};

namespace detail {

template <typename Cache>
const Cache& CacheAs(const LayerCache& cache) {
  const auto* typed = dynamic_cast<const Cache*>(&cache);
  if (typed == nullptr) Fail(ErrorKind::kStaleCache, "layer cache type does not match layer");
  return *typed;
}

inline void RequireRank(const Shape& s, std::size_t rank, const std::string& what) {
  Require(s.size() == rank, ErrorKind::kDimensionMismatch,
          what + ": expected rank " + std::to_string(rank) + " input, got " + ToString(s));
}

inline void GlorotUniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : t.values()) v = dist(rng);
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// 3x3 cross-correlation, stride 1, zero 'same' padding, NHWC.
/// Weights are laid out (ky, kx, c_in, c_out).
class Conv2d final : public Layer {
 public:
  static constexpr std::size_t kKernel = 3;

  Conv2d(std::size_t in_channels, std::size_t out_channels)
      : in_(in_channels),
        out_(out_channels),
        weight_("weight", {kKernel, kKernel, in_channels, out_channels}),
        bias_("bias", {out_channels}) {
    Require(in_ > 0 && out_ > 0, ErrorKind::kInvalidArgument, "conv channels must be positive");
  }

  LayerKind kind() const override { return LayerKind::kConv2d; }
  std::string Describe() const override {
    return "conv2d(3x3, " + std::to_string(in_) + "->" + std::to_string(out_) + ")";
  }

  Shape OutputShape(const Shape& input) const override {
    detail::RequireRank(input, 4, "conv2d");
    Require(input[3] == in_, ErrorKind::kDimensionMismatch,
            "conv2d: expected " + std::to_string(in_) + " input channels, got " + std::to_string(input[3]));
    return {input[0], input[1], input[2], out_};
  }

  Tensor Forward(const Tensor& x, Mode, std::unique_ptr<LayerCache>* cache) override {
    Tensor y(OutputShape(x.shape()));
    const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2);
    const double* wt = weight_.value.data();
    const double* b = bias_.value.data();
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
          double* out = y.data() + ((s * h + r) * w + c) * out_;
          for (std::size_t o = 0; o < out_; ++o) out[o] = b[o];
          for (std::size_t ky = 0; ky < kKernel; ++ky) {
            const std::ptrdiff_t ir = static_cast<std::ptrdiff_t>(r + ky) - 1;
            if (ir < 0 || ir >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < kKernel; ++kx) {
              const std::ptrdiff_t ic = static_cast<std::ptrdiff_t>(c + kx) - 1;
              if (ic < 0 || ic >= static_cast<std::ptrdiff_t>(w)) continue;
              const double* in = x.data() + ((s * h + ir) * w + ic) * in_;
              const double* k = wt + (ky * kKernel + kx) * in_ * out_;
              for (std::size_t i = 0; i < in_; ++i) {
                const double v = in[i];
                const double* krow = k + i * out_;
                for (std::size_t o = 0; o < out_; ++o) out[o] += v * krow[o];
              }
            }
          }
        }
      }
    }
    if (cache) {
      auto entry = std::make_unique<Cache>();
      entry->input = x;
      *cache = std::move(entry);
    }
    return y;
  }

  Tensor Backward(const Tensor& grad_out, const LayerCache& cache) override {
    const Tensor& x = detail::CacheAs<Cache>(cache).input;
    RequireShape(grad_out, OutputShape(x.shape()), "conv2d backward");
    Tensor dx(x.shape());
    const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2);
    const double* wt = weight_.value.data();
    double* dw = weight_.grad.data();
    double* db = bias_.grad.data();
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
          const double* g = grad_out.data() + ((s * h + r) * w + c) * out_;
          for (std::size_t o = 0; o < out_; ++o) db[o] += g[o];
          for (std::size_t ky = 0; ky < kKernel; ++ky) {
            const std::ptrdiff_t ir = static_cast<std::ptrdiff_t>(r + ky) - 1;
            if (ir < 0 || ir >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < kKernel; ++kx) {
              const std::ptrdiff_t ic = static_cast<std::ptrdiff_t>(c + kx) - 1;
              if (ic < 0 || ic >= static_cast<std::ptrdiff_t>(w)) continue;
              const std::size_t in_offset = ((s * h + ir) * w + ic) * in_;
              const double* in = x.data() + in_offset;
              double* din = dx.data() + in_offset;
              const std::size_t k_offset = (ky * kKernel + kx) * in_ * out_;
              for (std::size_t i = 0; i < in_; ++i) {
                const double v = in[i];
                const double* krow = wt + k_offset + i * out_;
                double* dkrow = dw + k_offset + i * out_;
                double acc = 0.0;
                for (std::size_t o = 0; o < out_; ++o) {
                  dkrow[o] += v * g[o];
                  acc += krow[o] * g[o];
                }
                din[i] += acc;
              }
            }
          }
        }
      }
    }
    return dx;
  }

  std::vector<Parameter*> Parameters() override { return {&weight_, &bias_}; }

  void Initialize(Rng& rng) override {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(kKernel * kKernel * in_)));
    for (double& v : weight_.value.values()) v = dist(rng);
    bias_.value.Fill(0.0);
  }

  std::unique_ptr<Layer> Clone() const override { return std::make_unique<Conv2d>(*this); }

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  struct Cache : LayerCache {
    Tensor input;
  };

  std::size_t in_;
  std::size_t out_;
  Parameter weight_;
  Parameter bias_;
};

// ---------------------------------------------------------------------------

/// Per-channel normalization over every axis but the last. Train mode uses
/// batch statistics (biased variance) and updates running estimates with
/// `running = (1 - momentum) * running + momentum * batch`.
class BatchNorm final : public Layer {
 public:
  explicit BatchNorm(std::size_t channels, double momentum = 0.1, double epsilon = 1e-5)
      : channels_(channels),
        momentum_(momentum),
        epsilon_(epsilon),
        gamma_("gamma", {channels}),
        beta_("beta", {channels}),
        running_mean_({channels}, 0.0),
        running_var_({channels}, 1.0) {
    gamma_.value.Fill(1.0);
  }

  LayerKind kind() const override { return LayerKind::kBatchNorm; }
  std::string Describe() const override { return "batch_norm(" + std::to_string(channels_) + ")"; }

  Shape OutputShape(const Shape& input) const override {
    Require(input.size() >= 2 && input.back() == channels_, ErrorKind::kDimensionMismatch,
            "batch_norm: expected " + std::to_string(channels_) + " channels, got " + ToString(input));
    return input;
  }

  Tensor Forward(const Tensor& x, Mode mode, std::unique_ptr<LayerCache>* cache) override {
    OutputShape(x.shape());
    const std::size_t c_count = channels_;
    const std::size_t m = x.size() / c_count;
    Tensor y(x.shape());
    std::vector<double> mean(c_count, 0.0), inv_std(c_count, 0.0);
    if (mode == Mode::kTrain) {
      Require(x.dim(0) >= 2, ErrorKind::kInvalidArgument, "batch_norm: train mode needs a batch of at least 2");
      std::vector<double> var(c_count, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t c = 0; c < c_count; ++c) mean[c] += x[i * c_count + c];
      for (double& v : mean) v /= static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t c = 0; c < c_count; ++c) {
          const double d = x[i * c_count + c] - mean[c];
          var[c] += d * d;
        }
      for (std::size_t c = 0; c < c_count; ++c) {
        var[c] /= static_cast<double>(m);
        inv_std[c] = 1.0 / std::sqrt(var[c] + epsilon_);
        running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * mean[c];
        running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * var[c];
      }
    } else {
      for (std::size_t c = 0; c < c_count; ++c) {
        mean[c] = running_mean_[c];
        inv_std[c] = 1.0 / std::sqrt(running_var_[c] + epsilon_);
      }
    }
    Tensor x_hat(x.shape());
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t c = 0; c < c_count; ++c) {
        const std::size_t k = i * c_count + c;
        x_hat[k] = (x[k] - mean[c]) * inv_std[c];
        y[k] = gamma_.value[c] * x_hat[k] + beta_.value[c];
      }
    }
    if (cache) {
      auto entry = std::make_unique<Cache>();
      entry->mode = mode;
      entry->x_hat = std::move(x_hat);
      entry->inv_std = std::move(inv_std);
      *cache = std::move(entry);
    }
    return y;
  }

  Tensor Backward(const Tensor& grad_out, const LayerCache& cache) override {
    const auto& c_ = detail::CacheAs<Cache>(cache);
    RequireShape(grad_out, c_.x_hat.shape(), "batch_norm backward");
    const std::size_t c_count = channels_;
    const std::size_t m = grad_out.size() / c_count;
    Tensor dx(grad_out.shape());
    std::vector<double> sum_g(c_count, 0.0), sum_gx(c_count, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t c = 0; c < c_count; ++c) {
        const std::size_t k = i * c_count + c;
        sum_g[c] += grad_out[k];
        sum_gx[c] += grad_out[k] * c_.x_hat[k];
      }
    for (std::size_t c = 0; c < c_count; ++c) {
      gamma_.grad[c] += sum_gx[c];
      beta_.grad[c] += sum_g[c];
    }
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t c = 0; c < c_count; ++c) {
        const std::size_t k = i * c_count + c;
        const double scale = gamma_.value[c] * c_.inv_std[c];
        if (c_.mode == Mode::kTrain) {
          dx[k] = scale * (grad_out[k] - inv_m * sum_g[c] - c_.x_hat[k] * inv_m * sum_gx[c]);
        } else {
          dx[k] = scale * grad_out[k];
        }
      }
    }
    return dx;
  }

  std::vector<Parameter*> Parameters() override { return {&gamma_, &beta_}; }
  std::vector<std::pair<std::string, Tensor*>> Buffers() override {
    return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
  }
  void Initialize(Rng&) override {
    gamma_.value.Fill(1.0);
    beta_.value.Fill(0.0);
    running_mean_.Fill(0.0);
    running_var_.Fill(1.0);
  }
  std::unique_ptr<Layer> Clone() const override { return std::make_unique<BatchNorm>(*this); }

  Parameter& gamma() { return gamma_; }
  Parameter& beta() { return beta_; }
  Tensor& running_mean() { return running_mean_; }
  Tensor& running_var() { return running_var_; }
  double epsilon() const { return epsilon_; }

 private:
  struct Cache : LayerCache {
    Mode mode = Mode::kTrain;
    Tensor x_hat;
    std::vector<double> inv_std;
  };

  std::size_t channels_;
  double momentum_;
  double epsilon_;
  Parameter gamma_;
  Parameter beta_;
  Tensor running_mean_;
  Tensor running_var_;
};

// ---------------------------------------------------------------------------

class Relu final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::kRelu; }
  std::string Describe() const override { return "relu"; }
  Shape OutputShape(const Shape& input) const override { return input; }

  Tensor Forward(const Tensor& x, Mode, std::unique_ptr<LayerCache>* cache) override {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    if (cache) {
      auto entry = std::make_unique<Cache>();
      entry->input = x;
      *cache = std::move(entry);
    }
    return y;
  }

  Tensor Backward(const Tensor& grad_out, const LayerCache& cache) override {
    const Tensor& x = detail::CacheAs<Cache>(cache).input;
    RequireShape(grad_out, x.shape(), "relu backward");
    Tensor dx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
    return dx;
  }

  std::unique_ptr<Layer> Clone() const override { return std::make_unique<Relu>(*this); }

 private:
  struct Cache : LayerCache {
    Tensor input;
  };
};

// ---------------------------------------------------------------------------

/// Non-overlapping max pool. Spatial dims must divide evenly. The gradient
/// goes to the first maximum in row-major window order.
class MaxPool final : public Layer {
 public:
  MaxPool(std::size_t pool_h, std::size_t pool_w) : ph_(pool_h), pw_(pool_w) {
    Require(ph_ > 0 && pw_ > 0, ErrorKind::kInvalidArgument, "pool sizes must be positive");
  }

  LayerKind kind() const override { return LayerKind::kMaxPool; }
  std::string Describe() const override {
    return "max_pool(" + std::to_string(ph_) + "x" + std::to_string(pw_) + ")";
  }

  Shape OutputShape(const Shape& input) const override {
    detail::RequireRank(input, 4, "max_pool");
    Require(input[1] % ph_ == 0 && input[2] % pw_ == 0, ErrorKind::kDimensionMismatch,
            "max_pool " + std::to_string(ph_) + "x" + std::to_string(pw_) + " does not divide input " +
                ToString(input));
    return {input[0], input[1] / ph_, input[2] / pw_, input[3]};
  }

  Tensor Forward(const Tensor& x, Mode, std::unique_ptr<LayerCache>* cache) override {
    const Shape out_shape = OutputShape(x.shape());
    Tensor y(out_shape);
    std::vector<std::size_t> argmax(y.size());
    const std::size_t h = x.dim(1), w = x.dim(2), ch = x.dim(3);
    const std::size_t oh = out_shape[1], ow = out_shape[2];
    for (std::size_t s = 0; s < x.dim(0); ++s)
      for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c)
          for (std::size_t k = 0; k < ch; ++k) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t best_index = 0;
            for (std::size_t dr = 0; dr < ph_; ++dr)
              for (std::size_t dc = 0; dc < pw_; ++dc) {
                const std::size_t idx = ((s * h + r * ph_ + dr) * w + c * pw_ + dc) * ch + k;
                if (x[idx] > best) {
                  best = x[idx];
                  best_index = idx;
                }
              }
            const std::size_t o = ((s * oh + r) * ow + c) * ch + k;
            y[o] = best;
            argmax[o] = best_index;
          }
    if (cache) {
      auto entry = std::make_unique<Cache>();
      entry->input_shape = x.shape();
      entry->argmax = std::move(argmax);
      *cache = std::move(entry);
    }
    return y;
  }

  Tensor Backward(const Tensor& grad_out, const LayerCache& cache) override {
    const auto& c_ = detail::CacheAs<Cache>(cache);
    Require(grad_out.size() == c_.argmax.size(), ErrorKind::kDimensionMismatch, "max_pool backward shape");
    Tensor dx(c_.input_shape);
    for (std::size_t o = 0; o < grad_out.size(); ++o) dx[c_.argmax[o]] += grad_out[o];
    return dx;
  }

  std::unique_ptr<Layer> Clone() const override { return std::make_unique<MaxPool>(*this); }

  std::size_t pool_h() const { return ph_; }
  std::size_t pool_w() const { return pw_; }

 private:
  struct Cache : LayerCache {
    Shape input_shape;
    std::vector<std::size_t> argmax;
  };
  std::size_t ph_;
  std::size_t pw_;
};

// ---------------------------------------------------------------------------

/// (N, H, W, C) -> (N, C) spatial mean.
class GlobalAvgPool final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::kGlobalAvgPool; }
  std::string Describe() const override { return "global_avg_pool"; }

  Shape OutputShape(const Shape& input) const override {
    detail::RequireRank(input, 4, "global_avg_pool");
    return {input[0], input[3]};
  }

  Tensor Forward(const Tensor& x, Mode, std::unique_ptr<LayerCache>* cache) override {
    Tensor y(OutputShape(x.shape()));
    const std::size_t hw = x.dim(1) * x.dim(2), ch = x.dim(3);
    for (std::size_t s = 0; s < x.dim(0); ++s) {
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t k = 0; k < ch; ++k) y[s * ch + k] += x[(s * hw + p) * ch + k];
      for (std::size_t k = 0; k < ch; ++k) y[s * ch + k] /= static_cast<double>(hw);
    }
    if (cache) {
      auto entry = std::make_unique<Cache>();
      entry->input_shape = x.shape();
      *cache = std::move(entry);
    }
    return y;
  }

  Tensor Backward(const Tensor& grad_out, const LayerCache& cache) override {
    const Shape& in = detail::CacheAs<Cache>(cache).input_shape;
    RequireShape(grad_out, OutputShape(in), "global_avg_pool backward");
    Tensor dx(in);
    const std::size_t hw = in[1] * in[2], ch = in[3];
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t s = 0; s < in[0]; ++s)
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t k = 0; k < ch; ++k) dx[(s * hw + p) * ch + k] = grad_out[s * ch + k] * inv;
    return dx;
  }

  std::unique_ptr<Layer> Clone() const override { return std::make_unique<GlobalAvgPool>(*this); }

 private:
  struct Cache : LayerCache {
    Shape input_shape;
  };
};

// ---------------------------------------------------------------------------

/// y = x W + b on (N, D_in) inputs; linear activation.
class FullyConnected final : public Layer {
 public:
  FullyConnected(std::size_t in_features, std::size_t out_features)
      : in_(in_features),
        out_(out_features),
        weight_("weight", {in_features, out_features}),
        bias_("bias", {out_features}) {
    Require(in_ > 0 && out_ > 0, ErrorKind::kInvalidArgument, "fully_connected widths must be positive");
  }

  LayerKind kind() const override { return LayerKind::kFullyConnected; }
  std::string Describe() const override {
    return "fully_connected(" + std::to_string(in_) + "->" + std::to_string(out_) + ")";
  }

  Shape OutputShape(const Shape& input) const override {
    detail::RequireRank(input, 2, "fully_connected");
    Require(input[1] == in_, ErrorKind::kDimensionMismatch,
            "fully_connected: expected width " + std::to_string(in_) + ", got " + std::to_string(input[1]));
    return {input[0], out_};
  }

  Tensor Forward(const Tensor& x, Mode, std::unique_ptr<LayerCache>* cache) override {
    Tensor y(OutputShape(x.shape()));
    for (std::size_t s = 0; s < x.dim(0); ++s) {
      double* out = y.data() + s * out_;
      for (std::size_t o = 0; o < out_; ++o) out[o] = bias_.value[o];
      for (std::size_t i = 0; i < in_; ++i) {
        const double v = x[s * in_ + i];
        const double* row = weight_.value.data() + i * out_;
        for (std::size_t o = 0; o < out_; ++o) out[o] += v * row[o];
      }
    }
    if (cache) {
      auto entry = std::make_unique<Cache>();
      entry->input = x;
      *cache = std::move(entry);
    }
    return y;
  }

  Tensor Backward(const Tensor& grad_out, const LayerCache& cache) override {
    const Tensor& x = detail::CacheAs<Cache>(cache).input;
    RequireShape(grad_out, OutputShape(x.shape()), "fully_connected backward");
    Tensor dx(x.shape());
    for (std::size_t s = 0; s < x.dim(0); ++s) {
      const double* g = grad_out.data() + s * out_;
      for (std::size_t o = 0; o < out_; ++o) bias_.grad[o] += g[o];
      for (std::size_t i = 0; i < in_; ++i) {
        const double v = x[s * in_ + i];
        const double* row = weight_.value.data() + i * out_;
        double* drow = weight_.grad.data() + i * out_;
        double acc = 0.0;
        for (std::size_t o = 0; o < out_; ++o) {
          drow[o] += v * g[o];
          acc += row[o] * g[o];
        }
        dx[s * in_ + i] = acc;
      }
    }
    return dx;
  }

  std::vector<Parameter*> Parameters() override { return {&weight_, &bias_}; }
  void Initialize(Rng& rng) override {
    detail::GlorotUniform(weight_.value, in_, out_, rng);
    bias_.value.Fill(0.0);
  }
  std::unique_ptr<Layer> Clone() const override { return std::make_unique<FullyConnected>(*this); }

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  struct Cache : LayerCache {
    Tensor input;
  };
  std::size_t in_;
  std::size_t out_;
  Parameter weight_;
  Parameter bias_;
};

// ---------------------------------------------------------------------------

/// Squeeze-and-excitation: gate = sigmoid(FC(relu(FC(mean_hw(x))))), with a
/// bottleneck of channels / ratio; output = x * gate per channel.
class SeBlock final : public Layer {
 public:
  SeBlock(std::size_t channels, std::size_t ratio)
      : channels_(channels),
        ratio_(ratio),
        hidden_(ratio == 0 ? 0 : channels / ratio),
        w1_("squeeze_weight", {channels, hidden_}),
        b1_("squeeze_bias", {hidden_}),
        w2_("excite_weight", {hidden_, channels}),
        b2_("excite_bias", {channels}) {
    Require(ratio_ > 0 && channels_ % ratio_ == 0 && hidden_ > 0, ErrorKind::kInvalidArgument,
            "se_block: ratio " + std::to_string(ratio_) + " must divide channel count " + std::to_string(channels_));
  }

  LayerKind kind() const override { return LayerKind::kSeBlock; }
  std::string Describe() const override {
    return "se_block(" + std::to_string(channels_) + ", ratio " + std::to_string(ratio_) + ")";
  }

  Shape OutputShape(const Shape& input) const override {
    detail::RequireRank(input, 4, "se_block");
    Require(input[3] == channels_, ErrorKind::kDimensionMismatch, "se_block: channel count mismatch");
    return input;
  }

  Tensor Forward(const Tensor& x, Mode, std::unique_ptr<LayerCache>* cache) override {
    OutputShape(x.shape());
    const std::size_t n = x.dim(0), hw = x.dim(1) * x.dim(2), ch = channels_;
    Tensor squeeze({n, ch}), hidden({n, hidden_}), gate({n, ch});
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t k = 0; k < ch; ++k) squeeze[s * ch + k] += x[(s * hw + p) * ch + k];
      for (std::size_t k = 0; k < ch; ++k) squeeze[s * ch + k] /= static_cast<double>(hw);
      for (std::size_t j = 0; j < hidden_; ++j) {
        double z = b1_.value[j];
        for (std::size_t k = 0; k < ch; ++k) z += squeeze[s * ch + k] * w1_.value[k * hidden_ + j];
        hidden[s * hidden_ + j] = z > 0.0 ? z : 0.0;
      }
      for (std::size_t k = 0; k < ch; ++k) {
        double z = b2_.value[k];
        for (std::size_t j = 0; j < hidden_; ++j) z += hidden[s * hidden_ + j] * w2_.value[j * ch + k];
        gate[s * ch + k] = 1.0 / (1.0 + std::exp(-z));
      }
    }
    Tensor y(x.shape());
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t k = 0; k < ch; ++k) {
          const std::size_t idx = (s * hw + p) * ch + k;
          y[idx] = x[idx] * gate[s * ch + k];
        }
    if (cache) {
      auto entry = std::make_unique<Cache>();
      entry->input = x;
      entry->squeeze = std::move(squeeze);
      entry->hidden = std::move(hidden);
      entry->gate = std::move(gate);
      *cache = std::move(entry);
    }
    return y;
  }

  Tensor Backward(const Tensor& grad_out, const LayerCache& cache) override {
    const auto& c_ = detail::CacheAs<Cache>(cache);
    const Tensor& x = c_.input;
    RequireShape(grad_out, x.shape(), "se_block backward");
    const std::size_t n = x.dim(0), hw = x.dim(1) * x.dim(2), ch = channels_;
    Tensor dx(x.shape());
    std::vector<double> d_gate(ch), d_z2(ch), d_hidden(hidden_), d_z1(hidden_), d_squeeze(ch);
    for (std::size_t s = 0; s < n; ++s) {
      std::fill(d_gate.begin(), d_gate.end(), 0.0);
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t k = 0; k < ch; ++k) {
          const std::size_t idx = (s * hw + p) * ch + k;
          d_gate[k] += grad_out[idx] * x[idx];
          dx[idx] = grad_out[idx] * c_.gate[s * ch + k];
        }
      for (std::size_t k = 0; k < ch; ++k) {
        const double g = c_.gate[s * ch + k];
        d_z2[k] = d_gate[k] * g * (1.0 - g);
        b2_.grad[k] += d_z2[k];
      }
      for (std::size_t j = 0; j < hidden_; ++j) {
        double acc = 0.0;
        const double h = c_.hidden[s * hidden_ + j];
        for (std::size_t k = 0; k < ch; ++k) {
          w2_.grad[j * ch + k] += h * d_z2[k];
          acc += w2_.value[j * ch + k] * d_z2[k];
        }
        d_hidden[j] = acc;
        d_z1[j] = h > 0.0 ? acc : 0.0;
        b1_.grad[j] += d_z1[j];
      }
      for (std::size_t k = 0; k < ch; ++k) {
        double acc = 0.0;
        const double q = c_.squeeze[s * ch + k];
        for (std::size_t j = 0; j < hidden_; ++j) {
          w1_.grad[k * hidden_ + j] += q * d_z1[j];
          acc += w1_.value[k * hidden_ + j] * d_z1[j];
        }
        d_squeeze[k] = acc / static_cast<double>(hw);
      }
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t k = 0; k < ch; ++k) dx[(s * hw + p) * ch + k] += d_squeeze[k];
    }
    return dx;
  }

  std::vector<Parameter*> Parameters() override { return {&w1_, &b1_, &w2_, &b2_}; }
  void Initialize(Rng& rng) override {
    detail::GlorotUniform(w1_.value, channels_, hidden_, rng);
    detail::GlorotUniform(w2_.value, hidden_, channels_, rng);
    b1_.value.Fill(0.0);
    b2_.value.Fill(0.0);
  }
  std::unique_ptr<Layer> Clone() const override { return std::make_unique<SeBlock>(*this); }

  std::size_t ratio() const { return ratio_; }
  Parameter& squeeze_weight() { return w1_; }
  Parameter& squeeze_bias() { return b1_; }
  Parameter& excite_weight() { return w2_; }
  Parameter& excite_bias() { return b2_; }

 private:
  struct Cache : LayerCache {
    Tensor input;
    Tensor squeeze;
    Tensor hidden;
    Tensor gate;
  };
  std::size_t channels_;
  std::size_t ratio_;
  std::size_t hidden_;
  Parameter w1_;
  Parameter b1_;
  Parameter w2_;
  Parameter b2_;
};

}  // namespace cftransfer::nn
