#pragma once

// Flat `key = value` run configuration. One entry per line, `#` starts a
// comment, blank lines are ignored. Every key has a default, so an empty file
// is a valid configuration.

#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "dllrnn/datasim.hpp"
#include "dllrnn/errors.hpp"
#include "dllrnn/model.hpp"
#include "dllrnn/train.hpp"

namespace dllrnn {

struct RunConfig {
  ModelConfig model;

  // training
  double lr = kDefaultLearningRate;
  double clip = kDefaultClipNorm;
  std::size_t batch = 16;
  double chunk_s = 4.0;
  std::size_t epochs = 200;
  std::uint64_t seed = 0;
  std::size_t max_steps = 0;

  // simulation
  std::size_t count = 0;
  double seconds = 4.0;
  SimulationRanges sim;

  // paths
  std::string out;
  std::string manifest;
  std::string checkpoint;
  std::string resume;
  std::string speech_files;  // comma-separated WAVs; empty = synthetic speech
  std::string noise_files;   // comma-separated WAVs; empty = synthetic noise

  bool operator==(const RunConfig& o) const {
    return model == o.model && lr == o.lr && clip == o.clip && batch == o.batch && chunk_s == o.chunk_s &&
           epochs == o.epochs && seed == o.seed && max_steps == o.max_steps && count == o.count &&
           seconds == o.seconds && sim.length == o.sim.length && sim.width == o.sim.width &&
           sim.height == o.sim.height && sim.absorption == o.sim.absorption && sim.snr_db == o.sim.snr_db &&
           sim.min_noises == o.sim.min_noises && sim.max_noises == o.sim.max_noises &&
           sim.mic_count == o.sim.mic_count && sim.array_radius == o.sim.array_radius &&
           sim.image_order == o.sim.image_order && out == o.out && manifest == o.manifest &&
           checkpoint == o.checkpoint && resume == o.resume && speech_files == o.speech_files &&
           noise_files == o.noise_files;
  }

  Schedule schedule() const {
    Schedule s;
    s.epochs = epochs;
    s.batch_size = batch;
    s.chunk_seconds = chunk_s;
    s.seed = seed;
    s.lr = lr;
    s.clip = clip;
    s.max_steps = max_steps;
    return s;
  }

  // Cross-field checks; each failure names the key to fix.
  void validate() const {
    auto bad = [](const std::string& key, const std::string& why) { throw ConfigError("config key '" + key + "': " + why); };
    try {
      model.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("model keys (C, F, S, B, L_i, L_o, hop): ") + e.what());
    }
    if (!(lr > 0)) bad("lr", "must be positive");
    if (!(clip > 0)) bad("clip", "must be positive");
    if (batch == 0) bad("batch", "must be positive");
    if (!(chunk_s >= 0)) bad("chunk_s", "must be non-negative");
    if (!(seconds > 0)) bad("seconds", "must be positive");
    auto range = [&](const char* key, const Range& r) {
      if (!(r.lo <= r.hi)) bad(std::string(key) + "_lo", std::string("exceeds ") + key + "_hi");
    };
    range("length", sim.length);
    range("width", sim.width);
    range("height", sim.height);
    range("absorption", sim.absorption);
    range("snr", sim.snr_db);
    if (sim.absorption.lo < 0 || sim.absorption.hi >= 1) bad("absorption_hi", "absorption must lie in [0, 1)");
    if (sim.min_noises < 1 || sim.min_noises > sim.max_noises) bad("noises_lo", "need 1 <= noises_lo <= noises_hi");
    if (!(sim.array_radius > 0)) bad("radius", "must be positive");
    if (sim.image_order < 0) bad("order", "must be non-negative");
    const double min_floor = 2 * (sim.array_radius + 2 * kWallMargin);
    if (sim.length.lo < min_floor) bad("length_lo", "room too small for the array and wall margin");
    if (sim.width.lo < min_floor) bad("width_lo", "room too small for the array and wall margin");
    if (sim.height.lo < 4 * kWallMargin) bad("height_lo", "room too small for the wall margin");
  }
};

namespace detail {

struct ConfigKey {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_real(const std::string& key, const std::string& text) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || *end != '\0' || errno == ERANGE) {
    throw ConfigError("config key '" + key + "': '" + text + "' is not a number");
  }
  return v;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& text) {
  errno = 0;
  char* end = nullptr;
  if (text.empty() || text[0] == '-') throw ConfigError("config key '" + key + "': '" + text + "' is not a non-negative integer");
  const unsigned long long v = std::strtoull(text.c_str(), &end, 10);
  if (*end != '\0' || errno == ERANGE) {
    throw ConfigError("config key '" + key + "': '" + text + "' is not a non-negative integer");
  }
  return v;
}

template <typename Field>
ConfigKey size_key(std::string name, Field field) {
  return {name, [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); },
          [field, name](RunConfig& c, const std::string& v) {
            field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(parse_uint(name, v));
          }};
}

template <typename Field>
ConfigKey real_key(std::string name, Field field) {
  return {name, [field](const RunConfig& c) { return format_real(field(const_cast<RunConfig&>(c))); },
          [field, name](RunConfig& c, const std::string& v) { field(c) = parse_real(name, v); }};
}

template <typename Field>
ConfigKey text_key(std::string name, Field field) {
  return {name, [field](const RunConfig& c) { return field(const_cast<RunConfig&>(c)); },
          [field](RunConfig& c, const std::string& v) { field(c) = v; }};
}

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    // C sets both the model input width and the simulated array size.
    k.push_back({"C", [](const RunConfig& c) { return std::to_string(c.model.channels); },
                 [](RunConfig& c, const std::string& v) {
                   c.model.channels = parse_uint("C", v);
                   c.sim.mic_count = c.model.channels;
                 }});
    k.push_back(size_key("F", [](RunConfig& c) -> std::size_t& { return c.model.units; }));
    k.push_back(size_key("S", [](RunConfig& c) -> std::size_t& { return c.model.spatial; }));
    k.push_back(size_key("B", [](RunConfig& c) -> std::size_t& { return c.model.blocks; }));
    k.push_back(size_key("L_i", [](RunConfig& c) -> std::size_t& { return c.model.frame.input_len; }));
    k.push_back(size_key("L_o", [](RunConfig& c) -> std::size_t& { return c.model.frame.output_len; }));
    k.push_back(size_key("hop", [](RunConfig& c) -> std::size_t& { return c.model.frame.hop; }));
    k.push_back(real_key("lr", [](RunConfig& c) -> double& { return c.lr; }));
    k.push_back(real_key("clip", [](RunConfig& c) -> double& { return c.clip; }));
    k.push_back(size_key("batch", [](RunConfig& c) -> std::size_t& { return c.batch; }));
    k.push_back(real_key("chunk_s", [](RunConfig& c) -> double& { return c.chunk_s; }));
    k.push_back(size_key("epochs", [](RunConfig& c) -> std::size_t& { return c.epochs; }));
    k.push_back(size_key("seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }));
    k.push_back(size_key("max_steps", [](RunConfig& c) -> std::size_t& { return c.max_steps; }));
    k.push_back(size_key("count", [](RunConfig& c) -> std::size_t& { return c.count; }));
    k.push_back(real_key("seconds", [](RunConfig& c) -> double& { return c.seconds; }));
    k.push_back(real_key("length_lo", [](RunConfig& c) -> double& { return c.sim.length.lo; }));
    k.push_back(real_key("length_hi", [](RunConfig& c) -> double& { return c.sim.length.hi; }));
    k.push_back(real_key("width_lo", [](RunConfig& c) -> double& { return c.sim.width.lo; }));
    k.push_back(real_key("width_hi", [](RunConfig& c) -> double& { return c.sim.width.hi; }));
    k.push_back(real_key("height_lo", [](RunConfig& c) -> double& { return c.sim.height.lo; }));
    k.push_back(real_key("height_hi", [](RunConfig& c) -> double& { return c.sim.height.hi; }));
    k.push_back(real_key("absorption_lo", [](RunConfig& c) -> double& { return c.sim.absorption.lo; }));
    k.push_back(real_key("absorption_hi", [](RunConfig& c) -> double& { return c.sim.absorption.hi; }));
    k.push_back(real_key("snr_lo", [](RunConfig& c) -> double& { return c.sim.snr_db.lo; }));
    k.push_back(real_key("snr_hi", [](RunConfig& c) -> double& { return c.sim.snr_db.hi; }));
    k.push_back(size_key("noises_lo", [](RunConfig& c) -> std::size_t& { return c.sim.min_noises; }));
    k.push_back(size_key("noises_hi", [](RunConfig& c) -> std::size_t& { return c.sim.max_noises; }));
    k.push_back(real_key("radius", [](RunConfig& c) -> double& { return c.sim.array_radius; }));
    k.push_back(size_key("order", [](RunConfig& c) -> int& { return c.sim.image_order; }));
    k.push_back(text_key("out", [](RunConfig& c) -> std::string& { return c.out; }));
    k.push_back(text_key("manifest", [](RunConfig& c) -> std::string& { return c.manifest; }));
    k.push_back(text_key("checkpoint", [](RunConfig& c) -> std::string& { return c.checkpoint; }));
    k.push_back(text_key("resume", [](RunConfig& c) -> std::string& { return c.resume; }));
    k.push_back(text_key("speech_files", [](RunConfig& c) -> std::string& { return c.speech_files; }));
    k.push_back(text_key("noise_files", [](RunConfig& c) -> std::string& { return c.noise_files; }));
    return k;
  }();
  return keys;
}

inline std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace detail

// Applies one `key = value` assignment on top of `config`.
inline void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& k : detail::config_keys()) {
    if (k.name == key) {
      k.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::string get_config_value(const RunConfig& config, const std::string& key) {
  for (const auto& k : detail::config_keys()) {
    if (k.name == key) return k.get(config);
  }
  throw ConfigError("unknown config key '" + key + "'");
}

// Parses on top of the defaults. Paths are taken verbatim.
inline RunConfig parse_config(const std::string& text, const std::string& source = "<config>") {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    try {
      set_config_value(config, key, detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return config;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

inline std::string emit_config(const RunConfig& config) {
  std::string out;
  for (const auto& k : detail::config_keys()) out += k.name + " = " + k.get(config) + "\n";
  return out;
}

}  // namespace dllrnn
