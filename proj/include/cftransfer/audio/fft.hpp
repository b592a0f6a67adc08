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

#include <bit>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

namespace cftransfer::audio {

/// In-place iterative radix-2 FFT. `data.size()` must be a power of two.
/// `inverse` applies the conjugate transform without 1/n scaling.
inline void FftInPlace(std::span<std::complex<double>> data, bool inverse = false) {
  const std::size_t n = data.size();
  if (n <= 1) return;
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
  const double sign = inverse ? 1.0 : -1.0;
  // Twiddles evaluated directly (not by recurrence) to keep one rounding each.
  std::vector<std::complex<double>> twiddle(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    const double a = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    twiddle[k] = {std::cos(a), std::sin(a)};
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t stride = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> even = data[start + k];
        const std::complex<double> odd = data[start + k + len / 2] * twiddle[k * stride];
        data[start + k] = even + odd;
        data[start + k + len / 2] = even - odd;
      }
    }
  }
}

/// |X_k|^2 for k = 0..n/2 of a real frame. Falls back to a direct DFT when
/// the length is not a power of two.
inline std::vector<double> RealPowerSpectrum(std::span<const double> frame) {
  const std::size_t n = frame.size();
  std::vector<double> power(n / 2 + 1);
  if (std::has_single_bit(n)) {
    std::vector<std::complex<double>> buf(frame.begin(), frame.end());
    FftInPlace(buf);
    for (std::size_t k = 0; k <= n / 2; ++k) power[k] = std::norm(buf[k]);
    return power;
  }
  for (std::size_t k = 0; k <= n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      acc += frame[t] * std::complex<double>(std::cos(a), std::sin(a));
    }
    power[k] = std::norm(acc);
  }
  return power;
}

}  // namespace cftransfer::audio
