#pragma once

// Waveform <-> overlapped frame conversion with the low-latency padding rule:
// each input frame of L_i samples ends L_o samples past its hop position, so
// the network only ever sees L_o samples of lookahead.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dllrnn/errors.hpp"
#include "dllrnn/rng.hpp"
#include "dllrnn/tensor.hpp"

namespace dllrnn {

inline constexpr double kSampleRate = 16000.0;

struct FrameSpec {
  std::size_t input_len = 256;   // L_i
  std::size_t output_len = 32;   // L_o
  std::size_t hop = 16;

  void validate() const {
    if (hop == 0 || output_len == 0 || input_len == 0 || output_len > input_len ||
        hop > output_len || output_len % hop != 0) {
      std::ostringstream os;
      os << "invalid frame spec (L_i=" << input_len << ", L_o=" << output_len << ", hop=" << hop
         << "): need hop <= L_o <= L_i and L_o % hop == 0";
      throw ConfigError(os.str());
    }
  }

  std::size_t left_pad() const { return input_len - output_len; }

  std::size_t frame_count(std::size_t samples) const { return (samples + hop - 1) / hop; }

  bool operator==(const FrameSpec&) const = default;
};

// C x N samples, channel-major.
template <typename T>
struct Waveform {
  std::size_t channels = 0;
  std::size_t samples = 0;
  std::vector<T> data;

  Waveform() = default;
  Waveform(std::size_t c, std::size_t n) : channels(c), samples(n), data(c * n, T(0)) {}
  Waveform(std::size_t c, std::size_t n, std::vector<T> values)
      : channels(c), samples(n), data(std::move(values)) {
    if (data.size() != c * n) throw DimensionError("waveform data does not match C x N");
  }

  std::span<T> channel(std::size_t c) { return std::span<T>(data).subspan(c * samples, samples); }
  std::span<const T> channel(std::size_t c) const {
    return std::span<const T>(data).subspan(c * samples, samples);
  }
  T& at(std::size_t c, std::size_t n) { return data[c * samples + n]; }
  const T& at(std::size_t c, std::size_t n) const { return data[c * samples + n]; }

  template <typename U>
  Waveform<U> cast() const {
    Waveform<U> out(channels, samples);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  bool operator==(const Waveform&) const = default;
};

template <typename T>
struct NormalizedWaveform {
  Waveform<T> waveform;
  T scale;
};

// Pooled (mean-removed) variance over all C*N samples, accumulated in double.
template <typename T>
double pooled_variance(const Waveform<T>& y) {
  if (y.data.empty()) return 0.0;
  double mean = 0.0;
  for (T v : y.data) mean += static_cast<double>(v);
  mean /= static_cast<double>(y.data.size());
  double var = 0.0;
  for (T v : y.data) {
    const double d = static_cast<double>(v) - mean;
    var += d * d;
  }
  return var / static_cast<double>(y.data.size());
}

template <typename T>
NormalizedWaveform<T> normalize_variance(const Waveform<T>& y) {
  const double var = pooled_variance(y);
  if (!(var > 0.0) || !std::isfinite(var)) {
    throw DegenerateInputError("cannot variance-normalize a constant or all-zero waveform");
  }
  const T scale = static_cast<T>(1.0 / std::sqrt(var));
  NormalizedWaveform<T> out{Waveform<T>(y.channels, y.samples), scale};
  for (std::size_t i = 0; i < y.data.size(); ++i) out.waveform.data[i] = y.data[i] * scale;
  return out;
}

// Frame t of channel c holds padded samples [t*hop, t*hop + L_i), where the
// padded signal has L_i - L_o leading zeros and trailing zeros past N.
// Sample n of the original signal is at padded index n + L_i - L_o.
template <typename T>
void frame_into(std::span<const T> channel, const FrameSpec& spec, std::size_t t,
                std::span<T> frame) {
  const auto pad = static_cast<std::ptrdiff_t>(spec.left_pad());
  const auto n_samples = static_cast<std::ptrdiff_t>(channel.size());
  const auto start = static_cast<std::ptrdiff_t>(t * spec.hop) - pad;
  for (std::size_t i = 0; i < spec.input_len; ++i) {
    const std::ptrdiff_t n = start + static_cast<std::ptrdiff_t>(i);
    frame[i] = (n >= 0 && n < n_samples) ? channel[static_cast<std::size_t>(n)] : T(0);
  }
}

// Returns frames shaped C x T x L_i with T = ceil(N / hop).
template <typename T>
Tensor<T> frame_signal(const Waveform<T>& x, const FrameSpec& spec) {
  spec.validate();
  if (x.samples == 0 || x.channels == 0) throw DimensionError("cannot frame an empty waveform");
  const std::size_t frames = spec.frame_count(x.samples);
  auto out = Tensor<T>::zeros({x.channels, frames, spec.input_len});
  auto data = out.data();
  for (std::size_t c = 0; c < x.channels; ++c) {
    for (std::size_t t = 0; t < frames; ++t) {
      frame_into<T>(x.channel(c), spec, t,
                    data.subspan((c * frames + t) * spec.input_len, spec.input_len));
    }
  }
  return out;
}

// Number of output frames whose L_o window covers sample n.
inline std::size_t overlap_count(const FrameSpec& spec, std::size_t frames, std::size_t n) {
  const std::size_t last = std::min(n / spec.hop, frames - 1);
  const std::size_t first = n + 1 > spec.output_len ? (n + 1 - spec.output_len + spec.hop - 1) / spec.hop : 0;
  return last >= first ? last - first + 1 : 0;
}

namespace detail {

inline void check_ola_shape(const Shape& shape, const FrameSpec& spec, std::size_t samples) {
  const bool ok = shape.size() == 3 && shape[0] == 1 && shape[2] == spec.output_len &&
                  shape[1] == spec.frame_count(samples);
  if (!ok) {
    throw DimensionError("overlap_add expects frames [1x" +
                         std::to_string(spec.frame_count(samples)) + "x" +
                         std::to_string(spec.output_len) + "] for N=" + std::to_string(samples) +
                         ", got " + shape_str(shape));
  }
}

}  // namespace detail

// Sums frame contributions in ascending frame order, then divides by the
// overlap count of each sample. Output truncated to `samples`.
template <typename T>
std::vector<T> overlap_add(std::span<const T> frames, const FrameSpec& spec, std::size_t samples) {
  const std::size_t count = spec.frame_count(samples);
  if (frames.size() % spec.output_len != 0) {
    throw DimensionError("overlap_add frame data is not a multiple of L_o");
  }
  detail::check_ola_shape({1, frames.size() / spec.output_len, spec.output_len}, spec, samples);
  std::vector<T> out(samples, T(0));
  for (std::size_t t = 0; t < count; ++t) {
    for (std::size_t i = 0; i < spec.output_len; ++i) {
      const std::size_t n = t * spec.hop + i;
      if (n < samples) out[n] += frames[t * spec.output_len + i];
    }
  }
  for (std::size_t n = 0; n < samples; ++n) out[n] /= static_cast<T>(overlap_count(spec, count, n));
  return out;
}

// Differentiable overlap-add: frames [1 x T x L_o] -> waveform [1 x N].
template <typename T>
Tensor<T> overlap_add(Tape<T>& tape, const Tensor<T>& frames, const FrameSpec& spec,
                      std::size_t samples) {
  spec.validate();
  detail::check_ola_shape(frames.shape(), spec, samples);
  Tensor<T> out({1, samples}, overlap_add<T>(frames.data(), spec, samples));
  if (frames.requires_grad()) {
    tape.record(out, [frames, out, spec, samples]() mutable {
      auto g = std::as_const(out).grad();
      auto gf = frames.grad();
      const std::size_t count = spec.frame_count(samples);
      for (std::size_t t = 0; t < count; ++t) {
        for (std::size_t i = 0; i < spec.output_len; ++i) {
          const std::size_t n = t * spec.hop + i;
          if (n < samples) {
            gf[t * spec.output_len + i] += g[n] / static_cast<T>(overlap_count(spec, count, n));
          }
        }
      }
    });
  }
  return out;
}

// Rightmost L_o samples of every input frame, as [1 x T x L_o] for channel c.
template <typename T>
Tensor<T> rightmost_windows(const Tensor<T>& frames, const FrameSpec& spec, std::size_t c = 0) {
  const std::size_t count = frames.extent(1);
  auto out = Tensor<T>::zeros({1, count, spec.output_len});
  auto src = frames.data();
  auto dst = out.data();
  for (std::size_t t = 0; t < count; ++t) {
    for (std::size_t i = 0; i < spec.output_len; ++i) {
      dst[t * spec.output_len + i] =
          src[(c * count + t) * spec.input_len + spec.left_pad() + i];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Latency audit

struct LatencyTrial {
  std::size_t perturbed = 0;         // input sample index m
  std::size_t earliest_changed = 0;  // first output index that differs (== N if none)
  bool violated = false;
};

struct LatencyReport {
  std::size_t bound = 0;  // L_o
  std::vector<LatencyTrial> trials;

  bool passed() const {
    for (const auto& t : trials)
      if (t.violated) return false;
    return true;
  }

  std::string describe() const {
    std::ostringstream os;
    for (const auto& t : trials) {
      if (t.violated) {
        os << "latency violation: perturbing input m=" << t.perturbed << " changed output n="
           << t.earliest_changed << " (allowed only n > m - " << bound << ")\n";
      }
    }
    if (passed()) os << "latency bound " << bound << " holds for " << trials.size() << " trials\n";
    return os.str();
  }
};

struct LatencyProbe {
  std::size_t channels = 1;
  std::size_t samples = 4000;
  std::size_t trials = 32;
  std::uint64_t seed = 0;
  std::vector<std::size_t> positions;  // explicit m values; random when empty
};

// Checks that no output sample n depends on input sample m when n <= m - L_o.
// `model` maps a C x N waveform to N output samples and must be deterministic.
template <typename T>
LatencyReport latency_check(const std::function<std::vector<T>(const Waveform<T>&)>& model,
                            const FrameSpec& spec, const LatencyProbe& probe) {
  spec.validate();
  Rng rng(probe.seed);
  Waveform<T> base(probe.channels, probe.samples);
  for (auto& v : base.data) v = static_cast<T>(rng.normal());
  const std::vector<T> reference = model(base);

  std::vector<std::size_t> positions = probe.positions;
  if (positions.empty()) {
    for (std::size_t i = 0; i < probe.trials; ++i) {
      positions.push_back(static_cast<std::size_t>(rng.uniform_int(
          static_cast<std::int64_t>(spec.output_len), static_cast<std::int64_t>(probe.samples) - 1)));
    }
  }

  LatencyReport report{spec.output_len, {}};
  for (std::size_t m : positions) {
    Waveform<T> perturbed = base;
    const std::size_t c = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(probe.channels) - 1));
    perturbed.at(c, m) += T(1);
    const std::vector<T> out = model(perturbed);
    LatencyTrial trial{m, probe.samples, false};
    for (std::size_t n = 0; n < out.size(); ++n) {
      if (out[n] != reference[n]) {
        trial.earliest_changed = n;
        break;
      }
    }
    trial.violated = trial.earliest_changed + spec.output_len <= m;
    report.trials.push_back(trial);
  }
  return report;
}

}  // namespace dllrnn
