#pragma once

// Binary checkpoint format (all integers little-endian):
//
//   magic     8 bytes  "DLLRNNCK" (model) or "DLLRNNOP" (optimizer state)
//   version   u32      = 1
//   config    7 x u32  C, F, S, B, L_i, L_o, hop
//   step      u64      optimizer steps taken
//   epoch     u64
//   records   u32      count, then per record:
//               u32 name length, name bytes, u32 rank, rank x u32 extents,
//               product(extents) x f32 values
//
// Optimizer files hold three records per parameter: "m/<name>", "v/<name>",
// "v_max/<name>".

#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dllrnn/errors.hpp"
#include "dllrnn/model.hpp"
#include "dllrnn/train.hpp"
#include "dllrnn/wav.hpp"

namespace dllrnn {

inline constexpr char kModelMagic[9] = "DLLRNNCK";
inline constexpr char kOptimMagic[9] = "DLLRNNOP";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TrainingProgress {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
};

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct CheckpointContents {
  ModelConfig config;
  TrainingProgress progress;
  std::vector<CheckpointRecord> records;
};

namespace detail {

inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_f32(std::vector<unsigned char>& out, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  put_u32(out, u);
}

inline std::uint64_t read_u64(ByteReader& r) {
  const std::uint64_t lo = r.u32();
  const std::uint64_t hi = r.u32();
  return lo | (hi << 32);
}

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const char* magic, const CheckpointContents& c) {
  std::vector<unsigned char> out(magic, magic + 8);
  detail::put_u32(out, kCheckpointVersion);
  const auto& cfg = c.config;
  for (std::size_t v : {cfg.channels, cfg.units, cfg.spatial, cfg.blocks, cfg.frame.input_len,
                        cfg.frame.output_len, cfg.frame.hop}) {
    detail::put_u32(out, static_cast<std::uint32_t>(v));
  }
  detail::put_u64(out, c.progress.step);
  detail::put_u64(out, c.progress.epoch);
  detail::put_u32(out, static_cast<std::uint32_t>(c.records.size()));
  for (const auto& rec : c.records) {
    detail::put_u32(out, static_cast<std::uint32_t>(rec.name.size()));
    out.insert(out.end(), rec.name.begin(), rec.name.end());
    detail::put_u32(out, static_cast<std::uint32_t>(rec.shape.size()));
    for (auto e : rec.shape) detail::put_u32(out, static_cast<std::uint32_t>(e));
    for (float v : rec.values) detail::put_f32(out, v);
  }
  return out;
}

inline CheckpointContents decode_checkpoint(const std::vector<unsigned char>& bytes, const char* magic,
                                            const std::string& source) {
  detail::ByteReader r(bytes, source);
  r.need(8);
  if (std::memcmp(r.here(), magic, 8) != 0) r.fail(std::string("bad magic, expected ") + magic);
  r.skip(8);
  if (r.u32() != kCheckpointVersion) r.fail("unsupported checkpoint version");
  CheckpointContents c;
  auto& cfg = c.config;
  cfg.channels = r.u32();
  cfg.units = r.u32();
  cfg.spatial = r.u32();
  cfg.blocks = r.u32();
  cfg.frame.input_len = r.u32();
  cfg.frame.output_len = r.u32();
  cfg.frame.hop = r.u32();
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    r.fail(std::string("invalid config header: ") + e.what());
  }
  c.progress.step = detail::read_u64(r);
  c.progress.epoch = detail::read_u64(r);
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    const std::uint32_t len = r.u32();
    r.need(len);
    rec.name.assign(reinterpret_cast<const char*>(r.here()), len);
    r.skip(len);
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) r.fail("implausible tensor rank " + std::to_string(rank));
    std::size_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      rec.shape.push_back(r.u32());
      numel *= rec.shape.back();
    }
    r.need(numel * 4);
    rec.values.resize(numel);
    for (auto& v : rec.values) {
      const std::uint32_t u = r.u32();
      std::memcpy(&v, &u, 4);
    }
    c.records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) r.fail("trailing bytes after last record");
  return c;
}

template <typename T>
CheckpointContents snapshot(const Model<T>& model, TrainingProgress progress = {}) {
  CheckpointContents c{model.config(), progress, {}};
  for (const auto& [name, t] : model.params()) {
    CheckpointRecord rec{name, t.shape(), {}};
    for (T v : t.data()) rec.values.push_back(static_cast<float>(v));
    c.records.push_back(std::move(rec));
  }
  return c;
}

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model, TrainingProgress progress = {}) {
  detail::write_bytes(path, encode_checkpoint(kModelMagic, snapshot(model, progress)));
}

template <typename T>
struct LoadedModel {
  Model<T> model;
  TrainingProgress progress;
};

// Rebuilds the model from the header config and copies every record in,
// checking names, shapes, and the total against count_params.
template <typename T>
LoadedModel<T> model_from_contents(const CheckpointContents& c, const std::string& source) {
  Model<T> model(c.config);
  std::size_t total = 0;
  for (const auto& rec : c.records) total += rec.values.size();
  if (total != count_params(c.config) || c.records.size() != model.params().size()) {
    throw ParseError(source + ": checkpoint holds " + std::to_string(total) + " scalars in " +
                     std::to_string(c.records.size()) + " records, " + c.config.name() + " needs " +
                     std::to_string(count_params(c.config)));
  }
  for (const auto& rec : c.records) {
    if (!model.params().contains(rec.name)) throw ParseError(source + ": unknown parameter '" + rec.name + "'");
    auto& t = model.params().at(rec.name);
    if (t.shape() != rec.shape) {
      throw ParseError(source + ": parameter '" + rec.name + "' has shape " + shape_str(rec.shape) +
                       ", expected " + shape_str(t.shape()));
    }
    auto data = t.data();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<T>(rec.values[i]);
  }
  return {std::move(model), c.progress};
}

template <typename T>
LoadedModel<T> load_checkpoint(const std::string& path) {
  return model_from_contents<T>(decode_checkpoint(detail::read_bytes(path), kModelMagic, path), path);
}

inline void save_optimizer(const std::string& path, const Model<float>& model, const OptState<float>& opt,
                           TrainingProgress progress) {
  CheckpointContents c{model.config(), progress, {}};
  const char* prefixes[3] = {"m/", "v/", "v_max/"};
  const std::vector<std::vector<float>>* buffers[3] = {&opt.m, &opt.v, &opt.v_max};
  for (int k = 0; k < 3; ++k) {
    std::size_t idx = 0;
    for (const auto& [name, t] : model.params()) {
      c.records.push_back({prefixes[k] + name, t.shape(), (*buffers[k])[idx]});
      ++idx;
    }
  }
  detail::write_bytes(path, encode_checkpoint(kOptimMagic, c));
}

inline OptState<float> load_optimizer(const std::string& path, const Model<float>& model) {
  const auto c = decode_checkpoint(detail::read_bytes(path), kOptimMagic, path);
  if (!(c.config == model.config())) throw ParseError(path + ": optimizer state belongs to " + c.config.name());
  auto opt = OptState<float>::for_params(model.params());
  opt.step = c.progress.step;
  std::map<std::string, const CheckpointRecord*> by_name;
  for (const auto& rec : c.records) by_name[rec.name] = &rec;
  const char* prefixes[3] = {"m/", "v/", "v_max/"};
  std::vector<std::vector<float>>* buffers[3] = {&opt.m, &opt.v, &opt.v_max};
  for (int k = 0; k < 3; ++k) {
    std::size_t idx = 0;
    for (const auto& [name, t] : model.params()) {
      auto it = by_name.find(prefixes[k] + name);
      if (it == by_name.end() || it->second->values.size() != t.numel()) {
        throw ParseError(path + ": missing or malformed optimizer record " + prefixes[k] + name);
      }
      (*buffers[k])[idx] = it->second->values;
      ++idx;
    }
  }
  return opt;
}

}  // namespace dllrnn
