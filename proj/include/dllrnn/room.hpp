#pragma once

// Shoebox room impulse responses by the image-source method.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <numbers>
#include <sstream>
#include <vector>

#include "dllrnn/errors.hpp"

namespace dllrnn {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  double operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  bool operator==(const Vec3&) const = default;
};

inline double distance(const Vec3& a, const Vec3& b) {
  return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) + (a.z - b.z) * (a.z - b.z));
}

inline constexpr double kWallMargin = 0.1;
inline constexpr std::size_t kSincTaps = 81;

struct RoomSpec {
  double length = 5.0;  // x extent, m
  double width = 4.0;   // y extent, m
  double height = 3.0;  // z extent, m
  double absorption = 0.2;  // energy absorption coefficient of every wall
  double sound_speed = 343.0;
  double sample_rate = 16000.0;
  std::uint64_t seed = 0;

  double extent(int axis) const { return axis == 0 ? length : (axis == 1 ? width : height); }

  // Amplitude reflection coefficient.
  double reflection() const { return std::sqrt(1.0 - absorption); }

  bool contains(const Vec3& p, double margin = kWallMargin) const {
    for (int a = 0; a < 3; ++a) {
      if (!(p[a] >= margin && p[a] <= extent(a) - margin)) return false;
    }
    return true;
  }
};

struct ImageSource {
  Vec3 position;
  int reflections = 0;
};

// All images with at most `order` wall reflections in total. Along each axis,
// image index i sits at i*L + s for even i and i*L + (L - s) for odd i, and
// accounts for |i| reflections.
inline std::vector<ImageSource> image_sources(const RoomSpec& room, const Vec3& src, int order) {
  std::vector<ImageSource> out;
  auto coord = [&](int axis, int i) {
    const double L = room.extent(axis);
    const double s = src[axis];
    return i * L + ((i % 2 == 0) ? s : L - s);
  };
  for (int i = -order; i <= order; ++i) {
    for (int j = -(order - std::abs(i)); j <= order - std::abs(i); ++j) {
      const int rest = order - std::abs(i) - std::abs(j);
      for (int k = -rest; k <= rest; ++k) {
        out.push_back({{coord(0, i), coord(1, j), coord(2, k)}, std::abs(i) + std::abs(j) + std::abs(k)});
      }
    }
  }
  return out;
}

inline void check_geometry(const RoomSpec& room, const Vec3& src, const Vec3& mic) {
  auto where = [](const Vec3& p) {
    std::ostringstream os;
    os << "(" << p.x << ", " << p.y << ", " << p.z << ")";
    return os.str();
  };
  if (!(room.length > 0 && room.width > 0 && room.height > 0) || !(room.absorption >= 0 && room.absorption <= 1)) {
    throw GeometryError("room needs positive extents and absorption in [0, 1]");
  }
  if (!room.contains(src)) throw GeometryError("source " + where(src) + " is outside the room interior");
  if (!room.contains(mic)) throw GeometryError("microphone " + where(mic) + " is outside the room interior");
  if (distance(src, mic) <= 0.0) throw GeometryError("source and microphone coincide");
}

// Adds a Hann-tapered truncated sinc of `amplitude` centred on fractional
// sample `delay`.
inline void add_fractional_tap(std::vector<double>& h, double delay, double amplitude) {
  const double half = static_cast<double>(kSincTaps) / 2.0;
  const auto first = static_cast<long>(std::ceil(delay - half));
  for (long n = std::max(0L, first); n < first + static_cast<long>(kSincTaps); ++n) {
    const double x = static_cast<double>(n) - delay;
    if (std::abs(x) >= half) continue;
    const double w = 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * x / static_cast<double>(kSincTaps)));
    const double sinc = x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
    if (static_cast<std::size_t>(n) < h.size()) h[static_cast<std::size_t>(n)] += amplitude * w * sinc;
  }
}

// Impulse response from src to mic including all images up to `order`
// reflections. Each image contributes beta^reflections / (4 pi d).
inline std::vector<double> simulate_rir(const RoomSpec& room, const Vec3& src, const Vec3& mic, int order) {
  if (order < 0) throw GeometryError("image order must be non-negative");
  check_geometry(room, src, mic);
  const auto images = image_sources(room, src, order);
  double max_delay = 0.0;
  for (const auto& img : images) max_delay = std::max(max_delay, distance(img.position, mic));
  max_delay *= room.sample_rate / room.sound_speed;
  std::vector<double> h(static_cast<std::size_t>(std::ceil(max_delay)) + kSincTaps / 2 + 2, 0.0);
  const double beta = room.reflection();
  for (const auto& img : images) {
    const double d = distance(img.position, mic);
    const double amplitude = std::pow(beta, img.reflections) / (4.0 * std::numbers::pi * d);
    add_fractional_tap(h, d * room.sample_rate / room.sound_speed, amplitude);
  }
  return h;
}

}  // namespace dllrnn
