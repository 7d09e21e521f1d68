#pragma once

// Multichannel mixture generation: random shoebox room, eight-microphone
// circular array, one speech source and several noise sources, mixed at a
// target SNR measured on the direct path summed over channels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "dllrnn/errors.hpp"
#include "dllrnn/fft.hpp"
#include "dllrnn/framing.hpp"
#include "dllrnn/rng.hpp"
#include "dllrnn/room.hpp"

namespace dllrnn {

inline constexpr double kMinSourceDistance = 0.3;

struct Range {
  double lo = 0;
  double hi = 0;

  bool operator==(const Range&) const = default;
};

struct SimulationRanges {
  Range length{3.0, 10.0};
  Range width{3.0, 10.0};
  Range height{2.0, 5.0};
  Range absorption{0.1, 0.4};
  Range snr_db{-10.0, 10.0};
  std::size_t min_noises = 1;
  std::size_t max_noises = 10;
  std::size_t mic_count = 8;
  double array_radius = 0.10;
  int image_order = 6;

  void validate() const {
    auto ordered = [](const Range& r) { return r.lo <= r.hi; };
    if (!ordered(length) || !ordered(width) || !ordered(height) || !ordered(absorption) || !ordered(snr_db)) {
      throw ConfigError("simulation range with lo > hi");
    }
    if (length.lo < 2 * (array_radius + 2 * kWallMargin) || width.lo < 2 * (array_radius + 2 * kWallMargin) ||
        height.lo < 4 * kWallMargin) {
      throw ConfigError("room ranges too small for the array and wall margin");
    }
    if (absorption.lo < 0 || absorption.hi >= 1) throw ConfigError("absorption must lie in [0, 1)");
    if (min_noises < 1 || min_noises > max_noises) throw ConfigError("noise source count range invalid");
    if (mic_count < 1 || array_radius <= 0) throw ConfigError("array needs >= 1 mic and positive radius");
    if (image_order < 0) throw ConfigError("image order must be non-negative");
  }
};

// `count` microphones evenly spaced on a horizontal circle, mic 0 on +x.
inline std::vector<Vec3> circular_array(const Vec3& center, std::size_t count, double radius) {
  std::vector<Vec3> mics;
  for (std::size_t m = 0; m < count; ++m) {
    const double phi = 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(count);
    mics.push_back({center.x + radius * std::cos(phi), center.y + radius * std::sin(phi), center.z});
  }
  return mics;
}

struct RoomDraw {
  RoomSpec room;
  Vec3 array_center;
  std::vector<Vec3> mics;
  Vec3 speech_source;
  std::vector<Vec3> noise_sources;
  double snr_db = 0.0;
  int image_order = 6;
};

inline Vec3 draw_point(const RoomSpec& room, double margin, Rng& rng) {
  return {rng.uniform(margin, room.length - margin), rng.uniform(margin, room.width - margin),
          rng.uniform(margin, room.height - margin)};
}

inline RoomDraw draw_room(const SimulationRanges& ranges, std::uint64_t seed) {
  ranges.validate();
  Rng rng(seed);
  RoomDraw d;
  d.room.seed = seed;
  d.room.length = rng.uniform(ranges.length.lo, ranges.length.hi);
  d.room.width = rng.uniform(ranges.width.lo, ranges.width.hi);
  d.room.height = rng.uniform(ranges.height.lo, ranges.height.hi);
  d.room.absorption = rng.uniform(ranges.absorption.lo, ranges.absorption.hi);
  d.image_order = ranges.image_order;

  const double array_margin = kWallMargin + ranges.array_radius;
  d.array_center = draw_point(d.room, array_margin, rng);
  d.array_center.z = rng.uniform(kWallMargin, d.room.height - kWallMargin);
  d.mics = circular_array(d.array_center, ranges.mic_count, ranges.array_radius);

  // Sources closer than kMinSourceDistance to any microphone are redrawn.
  auto draw_source = [&]() {
    for (;;) {
      Vec3 p = draw_point(d.room, kWallMargin, rng);
      bool clear = true;
      for (const auto& m : d.mics) clear = clear && distance(p, m) >= kMinSourceDistance;
      if (clear) return p;
    }
  };
  d.speech_source = draw_source();
  const auto n_noise = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(ranges.min_noises), static_cast<std::int64_t>(ranges.max_noises)));
  for (std::size_t i = 0; i < n_noise; ++i) d.noise_sources.push_back(draw_source());
  d.snr_db = rng.uniform(ranges.snr_db.lo, ranges.snr_db.hi);
  return d;
}

struct MixtureExample {
  Waveform<double> s_direct;  // direct-path speech at each mic
  Waveform<double> s_reverb;  // speech reverberation
  Waveform<double> noise;     // scaled sum of all noise images
  Waveform<double> mixture;   // s_direct + s_reverb + noise
  double snr_db = 0.0;
  std::size_t noise_sources = 0;
  double noise_gain = 1.0;
  RoomDraw draw;
};

inline double energy(const Waveform<double>& w) {
  double e = 0.0;
  for (double v : w.data) e += v * v;
  return e;
}

// Channel-summed direct-path energy over channel-summed noise energy, in dB.
inline double achieved_snr(const Waveform<double>& s_direct, const Waveform<double>& noise) {
  const double en = energy(noise);
  if (!(en > 0.0)) throw DegenerateInputError("noise has zero energy");
  return 10.0 * std::log10(energy(s_direct) / en);
}

inline double achieved_snr(const MixtureExample& ex) { return achieved_snr(ex.s_direct, ex.noise); }

// Gain on the noise so that the direct-path/noise energy ratio equals snr_db.
inline double noise_gain_for_snr(double direct_energy, double noise_energy, double snr_db) {
  if (!(direct_energy > 0.0)) throw DegenerateInputError("speech has zero direct-path energy");
  if (!(noise_energy > 0.0)) throw DegenerateInputError("noise has zero energy");
  return std::sqrt(direct_energy / (noise_energy * std::pow(10.0, snr_db / 10.0)));
}

namespace detail {

// Convolves `x` with every filter in `filters`, truncating each result to x's
// length. The source spectrum is computed once.
inline std::vector<std::vector<double>> convolve_truncated(std::span<const double> x,
                                                           const std::vector<std::vector<double>>& filters) {
  std::size_t longest = 0;
  for (const auto& h : filters) longest = std::max(longest, h.size());
  const std::size_t n = next_power_of_two(x.size() + longest);
  std::vector<std::complex<double>> fx(n);
  for (std::size_t i = 0; i < x.size(); ++i) fx[i] = x[i];
  fft_inplace(fx);
  std::vector<std::vector<double>> out;
  std::vector<std::complex<double>> fh(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (const auto& h : filters) {
    std::fill(fh.begin(), fh.end(), std::complex<double>(0.0, 0.0));
    for (std::size_t i = 0; i < h.size(); ++i) fh[i] = h[i];
    fft_inplace(fh);
    for (std::size_t i = 0; i < n; ++i) fh[i] *= fx[i];
    fft_inplace(fh, true);
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = fh[i].real() * inv_n;
    out.push_back(std::move(y));
  }
  return out;
}

}  // namespace detail

// Propagates speech and noises through the drawn room and mixes them at the
// drawn SNR. All noises share one gain. Output length equals the speech length;
// noise signals must be at least that long.
inline MixtureExample spatialize_mixture(const RoomDraw& draw, std::span<const double> speech,
                                         const std::vector<std::vector<double>>& noises) {
  if (noises.empty() || noises.size() != draw.noise_sources.size()) {
    throw ContractError("need one noise signal per drawn noise source");
  }
  if (speech.empty()) throw DegenerateInputError("speech signal is empty");
  const std::size_t C = draw.mics.size(), N = speech.size();
  auto silent = [N](std::span<const double> x) {
    return std::all_of(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(N), [](double v) { return v == 0.0; });
  };
  if (silent(speech)) throw DegenerateInputError("speech signal is silent");
  for (std::size_t s = 0; s < noises.size(); ++s) {
    if (noises[s].size() < N) throw DimensionError("noise signal shorter than speech");
    if (silent(noises[s])) throw DegenerateInputError("noise source " + std::to_string(s) + " is silent");
  }

  MixtureExample ex;
  ex.draw = draw;
  ex.snr_db = draw.snr_db;
  ex.noise_sources = noises.size();
  ex.s_direct = Waveform<double>(C, N);
  ex.s_reverb = Waveform<double>(C, N);
  ex.noise = Waveform<double>(C, N);
  ex.mixture = Waveform<double>(C, N);

  std::vector<std::vector<double>> direct_h, reverb_h;
  for (const auto& mic : draw.mics) {
    auto direct = simulate_rir(draw.room, draw.speech_source, mic, 0);
    auto full = simulate_rir(draw.room, draw.speech_source, mic, draw.image_order);
    for (std::size_t i = 0; i < direct.size() && i < full.size(); ++i) full[i] -= direct[i];
    direct_h.push_back(std::move(direct));
    reverb_h.push_back(std::move(full));
  }
  const auto direct = detail::convolve_truncated(speech, direct_h);
  const auto reverb = detail::convolve_truncated(speech, reverb_h);
  for (std::size_t c = 0; c < C; ++c) {
    std::copy(direct[c].begin(), direct[c].end(), ex.s_direct.channel(c).begin());
    std::copy(reverb[c].begin(), reverb[c].end(), ex.s_reverb.channel(c).begin());
  }

  for (std::size_t s = 0; s < noises.size(); ++s) {
    std::vector<std::vector<double>> hs;
    for (const auto& mic : draw.mics) hs.push_back(simulate_rir(draw.room, draw.noise_sources[s], mic, draw.image_order));
    const auto src = std::span<const double>(noises[s]).first(N);
    const auto images = detail::convolve_truncated(src, hs);
    for (std::size_t c = 0; c < C; ++c) {
      auto dst = ex.noise.channel(c);
      for (std::size_t n = 0; n < N; ++n) dst[n] += images[c][n];
    }
  }

  ex.noise_gain = noise_gain_for_snr(energy(ex.s_direct), energy(ex.noise), draw.snr_db);
  for (auto& v : ex.noise.data) v *= ex.noise_gain;
  for (std::size_t i = 0; i < ex.mixture.data.size(); ++i) {
    ex.mixture.data[i] = ex.s_direct.data[i] + ex.s_reverb.data[i] + ex.noise.data[i];
  }
  return ex;
}

// ---------------------------------------------------------------------------
// Synthetic source material

// Voiced/unvoiced syllable sequence: harmonic excitation with a drifting
// pitch through two formant resonators, gated by raised-cosine envelopes and
// short pauses. Peak-normalized to 0.5.
inline std::vector<double> synth_speech(std::size_t samples, std::uint64_t seed, double fs = kSampleRate) {
  Rng rng(seed);
  std::vector<double> out(samples, 0.0);
  std::size_t pos = 0;
  double phase = 0.0;
  while (pos < samples) {
    const auto syllable = static_cast<std::size_t>(rng.uniform(0.12, 0.32) * fs);
    const auto pause = static_cast<std::size_t>(rng.uniform(0.02, 0.15) * fs);
    const double f0 = rng.uniform(90.0, 230.0);
    const double glide = rng.uniform(-0.3, 0.3);
    const double voiced_mix = rng.uniform(0.6, 1.0);
    const double f1 = rng.uniform(300.0, 900.0), f2 = rng.uniform(900.0, 2600.0);
    // Two-pole resonators for the formants.
    auto resonator = [fs](double f, double bw) {
      const double r = std::exp(-std::numbers::pi * bw / fs);
      return std::pair<double, double>{2.0 * r * std::cos(2.0 * std::numbers::pi * f / fs), -r * r};
    };
    const auto [a1, a2] = resonator(f1, 90.0);
    const auto [b1, b2] = resonator(f2, 140.0);
    double y1 = 0, y2 = 0, z1 = 0, z2 = 0;
    for (std::size_t i = 0; i < syllable && pos + i < samples; ++i) {
      const double u = static_cast<double>(i) / static_cast<double>(syllable);
      const double f = f0 * (1.0 + glide * u);
      phase += 2.0 * std::numbers::pi * f / fs;
      double excitation = 0.0;
      for (int k = 1; k <= 12; ++k) excitation += std::sin(k * phase) / k;
      excitation = voiced_mix * excitation + (1.0 - voiced_mix) * 2.0 * rng.normal();
      const double y = excitation + a1 * y1 + a2 * y2;
      y2 = y1;
      y1 = y;
      const double z = y + b1 * z1 + b2 * z2;
      z2 = z1;
      z1 = z;
      const double env = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * u);
      out[pos + i] = env * (0.6 * y + 0.4 * z);
    }
    pos += syllable + pause;
  }
  double peak = 0.0;
  for (double v : out) peak = std::max(peak, std::abs(v));
  if (peak > 0) {
    for (auto& v : out) v *= 0.5 / peak;
  }
  return out;
}

enum class NoiseColor { white, pink, brown };

// Unit-variance coloured Gaussian noise.
inline std::vector<double> synth_noise(std::size_t samples, NoiseColor color, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out(samples);
  double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0, walk = 0;
  for (auto& v : out) {
    const double w = rng.normal();
    switch (color) {
      case NoiseColor::white:
        v = w;
        break;
      case NoiseColor::pink:
        // Paul Kellet's refined pink filter.
        b0 = 0.99886 * b0 + w * 0.0555179;
        b1 = 0.99332 * b1 + w * 0.0750759;
        b2 = 0.96900 * b2 + w * 0.1538520;
        b3 = 0.86650 * b3 + w * 0.3104856;
        b4 = 0.55000 * b4 + w * 0.5329522;
        b5 = -0.7616 * b5 - w * 0.0168980;
        v = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
        b6 = w * 0.115926;
        break;
      case NoiseColor::brown:
        walk = 0.995 * walk + 0.1 * w;
        v = walk;
        break;
    }
  }
  double mean = 0.0, var = 0.0;
  for (double v : out) mean += v;
  mean /= static_cast<double>(samples);
  for (double v : out) var += (v - mean) * (v - mean);
  var /= static_cast<double>(samples);
  const double g = var > 0 ? 1.0 / std::sqrt(var) : 1.0;
  for (auto& v : out) v = (v - mean) * g;
  return out;
}

// One complete synthetic example: room draw, speech, N_ns noises, mixing.
inline MixtureExample simulate_example(const SimulationRanges& ranges, std::size_t samples, std::uint64_t seed) {
  const RoomDraw draw = draw_room(ranges, derive_seed(seed, 1));
  const auto speech = synth_speech(samples, derive_seed(seed, 2));
  std::vector<std::vector<double>> noises;
  Rng pick(derive_seed(seed, 3));
  for (std::size_t i = 0; i < draw.noise_sources.size(); ++i) {
    const auto color = static_cast<NoiseColor>(pick.uniform_int(0, 2));
    noises.push_back(synth_noise(samples, color, derive_seed(seed, 4, i)));
  }
  return spatialize_mixture(draw, speech, noises);
}

}  // namespace dllrnn
