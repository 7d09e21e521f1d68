#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "dllrnn/errors.hpp"

namespace dllrnn {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_power_of_two(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// In-place iterative radix-2 FFT. `inverse` applies the conjugate kernel
// without the 1/n factor.
inline void fft_inplace(std::span<std::complex<double>> a, bool inverse = false) {
  const std::size_t n = a.size();
  if (!is_power_of_two(n)) throw DimensionError("FFT length must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      // Twiddles evaluated directly rather than by recurrence to avoid drift.
      const std::complex<double> w(std::cos(ang * k), std::sin(ang * k));
      for (std::size_t i = 0; i < n; i += len) {
        const auto u = a[i + k];
        const auto v = a[i + k + half] * w;
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

// Linear convolution of two real sequences via zero-padded FFT.
inline std::vector<double> fft_convolve(std::span<const double> x, std::span<const double> h) {
  if (x.empty() || h.empty()) return {};
  const std::size_t out_len = x.size() + h.size() - 1;
  const std::size_t n = next_power_of_two(out_len);
  std::vector<std::complex<double>> fx(n), fh(n);
  for (std::size_t i = 0; i < x.size(); ++i) fx[i] = x[i];
  for (std::size_t i = 0; i < h.size(); ++i) fh[i] = h[i];
  fft_inplace(fx);
  fft_inplace(fh);
  for (std::size_t i = 0; i < n; ++i) fx[i] *= fh[i];
  fft_inplace(fx, true);
  std::vector<double> out(out_len);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = fx[i].real() * inv_n;
  return out;
}

}  // namespace dllrnn
