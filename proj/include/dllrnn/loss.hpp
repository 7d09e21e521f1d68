#pragma once

// STFT, the phase-constrained magnitude (PCM) loss, and SI-SDR.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "dllrnn/errors.hpp"
#include "dllrnn/fft.hpp"
#include "dllrnn/tensor.hpp"

namespace dllrnn {

struct StftSpec {
  std::size_t window = 512;
  std::size_t hop = 256;

  void validate() const {
    if (!is_power_of_two(window) || hop == 0 || hop > window) {
      throw ConfigError("STFT needs a power-of-two window and 0 < hop <= window");
    }
  }

  // Frames start at t*hop; the tail is zero padded. Signals shorter than one
  // window still produce one frame.
  std::size_t frame_count(std::size_t samples) const {
    if (samples <= window) return 1;
    return 1 + (samples - window + hop - 1) / hop;
  }

  std::size_t bins() const { return window / 2 + 1; }
};

// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<double> real;  // frames x bins
  std::vector<double> imag;

  double re(std::size_t t, std::size_t f) const { return real[t * bins + f]; }
  double im(std::size_t t, std::size_t f) const { return imag[t * bins + f]; }
};

template <typename T>
Spectrogram stft(std::span<const T> x, const StftSpec& spec = {}) {
  spec.validate();
  const auto window = hann_window(spec.window);
  Spectrogram s;
  s.frames = spec.frame_count(x.size());
  s.bins = spec.bins();
  s.real.resize(s.frames * s.bins);
  s.imag.resize(s.frames * s.bins);
  std::vector<std::complex<double>> buf(spec.window);
  for (std::size_t t = 0; t < s.frames; ++t) {
    for (std::size_t j = 0; j < spec.window; ++j) {
      const std::size_t n = t * spec.hop + j;
      buf[j] = n < x.size() ? window[j] * static_cast<double>(x[n]) : 0.0;
    }
    fft_inplace(buf);
    for (std::size_t k = 0; k < s.bins; ++k) {
      s.real[t * s.bins + k] = buf[k].real();
      s.imag[t * s.bins + k] = buf[k].imag();
    }
  }
  return s;
}

namespace detail {

inline double sgn(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

// Accumulates L_SM(target, estimate) and, when grad_* are non-empty, adds
// sign_factor * dL_SM/dEstimate spectral gradients into them.
inline double spectral_magnitude_l1(const Spectrogram& target, const Spectrogram& estimate,
                                    double sign_factor, std::span<double> grad_re,
                                    std::span<double> grad_im) {
  const double norm = 1.0 / static_cast<double>(target.frames * target.bins);
  double total = 0.0;
  for (std::size_t i = 0; i < target.real.size(); ++i) {
    const double a = std::abs(target.real[i]) + std::abs(target.imag[i]);
    const double b = std::abs(estimate.real[i]) + std::abs(estimate.imag[i]);
    total += std::abs(a - b);
    if (!grad_re.empty()) {
      const double d = -sgn(a - b) * norm * sign_factor;
      grad_re[i] += d * sgn(estimate.real[i]);
      grad_im[i] += d * sgn(estimate.imag[i]);
    }
  }
  return total * norm;
}

}  // namespace detail

// Mean L1 distance between |Re|+|Im| spectral magnitudes.
template <typename T>
double spectral_magnitude_loss(std::span<const T> target, std::span<const T> estimate,
                               const StftSpec& spec = {}) {
  if (target.size() != estimate.size()) throw DimensionError("L_SM inputs differ in length");
  return detail::spectral_magnitude_l1(stft(target, spec), stft(estimate, spec), 1.0, {}, {});
}

// Differentiable PCM loss: L_SM(x, x_hat) + L_SM(y - x, y - x_hat). Gradients
// flow into x_hat only; x and y are constants.
template <typename T>
Tensor<T> pcm_loss(Tape<T>& tape, const Tensor<T>& x_hat, std::span<const T> x,
                   std::span<const T> y, const StftSpec& spec = {}) {
  if (x_hat.numel() != x.size() || x.size() != y.size()) {
    throw DimensionError("pcm_loss length mismatch: estimate " + std::to_string(x_hat.numel()) +
                         ", target " + std::to_string(x.size()) + ", mixture " +
                         std::to_string(y.size()));
  }
  const std::size_t N = x.size();
  std::vector<double> noise(N), noise_hat(N);
  auto xh = x_hat.data();
  for (std::size_t n = 0; n < N; ++n) {
    noise[n] = static_cast<double>(y[n]) - static_cast<double>(x[n]);
    noise_hat[n] = static_cast<double>(y[n]) - static_cast<double>(xh[n]);
  }
  const Spectrogram S = stft(x, spec);
  const Spectrogram S_hat = stft<T>(xh, spec);
  const Spectrogram V = stft<double>(noise, spec);
  const Spectrogram V_hat = stft<double>(noise_hat, spec);

  const bool needs_grad = x_hat.requires_grad();
  std::vector<double> g_re(needs_grad ? S.real.size() : 0), g_im(g_re.size());
  double value = detail::spectral_magnitude_l1(S, S_hat, 1.0, g_re, g_im);
  // y - x_hat depends on x_hat with slope -1.
  value += detail::spectral_magnitude_l1(V, V_hat, -1.0, g_re, g_im);

  auto out = Tensor<T>::scalar(static_cast<T>(value));
  if (needs_grad) {
    tape.record(out, [x_hat, out, spec, N, frames = S.frames, bins = S.bins,
                      g_re = std::move(g_re), g_im = std::move(g_im)]() mutable {
      const double upstream = static_cast<double>(std::as_const(out).grad()[0]);
      const auto window = hann_window(spec.window);
      auto gx = x_hat.grad();
      std::vector<std::complex<double>> buf(spec.window);
      for (std::size_t t = 0; t < frames; ++t) {
        std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
        for (std::size_t k = 0; k < bins; ++k)
          buf[k] = {g_re[t * bins + k], g_im[t * bins + k]};
        // Adjoint of the windowed real DFT: w[j] * Re(sum_k G_k e^{+2 pi i k j / W}).
        fft_inplace(buf, true);
        for (std::size_t j = 0; j < spec.window; ++j) {
          const std::size_t n = t * spec.hop + j;
          if (n < N) gx[n] += static_cast<T>(upstream * window[j] * buf[j].real());
        }
      }
    });
  }
  return out;
}

// Plain value of the PCM loss.
template <typename T>
double pcm_loss_value(std::span<const T> x_hat, std::span<const T> x, std::span<const T> y,
                      const StftSpec& spec = {}) {
  Tape<T> tape;
  Tensor<T> est({x_hat.size()}, std::vector<T>(x_hat.begin(), x_hat.end()));
  return static_cast<double>(pcm_loss(tape, est, x, y, spec).item());
}

inline constexpr double kSiSdrCapDb = 80.0;
inline constexpr double kSiSdrEps = 1e-12;

// Scale-invariant SDR in dB, clamped to [-80, 80]. The error power is floored
// at 1e-12 so a perfect estimate is finite.
template <typename T>
double si_sdr(std::span<const T> estimate, std::span<const T> reference) {
  if (estimate.size() != reference.size()) throw DimensionError("si_sdr inputs differ in length");
  double dot = 0.0, ref_energy = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    dot += static_cast<double>(estimate[i]) * static_cast<double>(reference[i]);
    ref_energy += static_cast<double>(reference[i]) * static_cast<double>(reference[i]);
  }
  if (!(ref_energy > 0.0)) throw DegenerateInputError("si_sdr reference has zero energy");
  const double alpha = dot / ref_energy;
  double signal = 0.0, error = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double target = alpha * static_cast<double>(reference[i]);
    const double e = target - static_cast<double>(estimate[i]);
    signal += target * target;
    error += e * e;
  }
  if (signal <= 0.0) return -kSiSdrCapDb;
  const double db = 10.0 * std::log10(signal / std::max(error, kSiSdrEps));
  return std::clamp(db, -kSiSdrCapDb, kSiSdrCapDb);
}

}  // namespace dllrnn
