#pragma once

// The decoupled spatial/temporal network: a per-channel frame encoder, a
// densely connected stack of spatio-temporal blocks, and a frame decoder.

#include <cstddef>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dllrnn/errors.hpp"
#include "dllrnn/framing.hpp"
#include "dllrnn/layers.hpp"
#include "dllrnn/rng.hpp"
#include "dllrnn/tensor.hpp"

namespace dllrnn {

struct ModelConfig {
  std::size_t channels = 8;  // C, microphones
  std::size_t units = 64;    // F, hidden ("frequency") width
  std::size_t spatial = 8;   // S, block spatial width
  std::size_t blocks = 8;    // B
  FrameSpec frame{};

  void validate() const {
    if (channels == 0 || units == 0 || spatial == 0 || blocks == 0) {
      throw ConfigError("model config needs C, F, S, B >= 1 (got " + name() + ", C=" +
                        std::to_string(channels) + ")");
    }
    frame.validate();
  }

  // Spatial width consumed by block b (0-based): encoder output plus every
  // earlier block's output.
  std::size_t block_input_width(std::size_t b) const { return channels + b * spatial; }
  std::size_t block_output_width(std::size_t b) const { return b + 1 == blocks ? 1 : spatial; }

  std::string name() const {
    return "D-LL-RNN-" + std::to_string(units) + "-" + std::to_string(spatial) + "-" +
           std::to_string(blocks);
  }

  // Parses "F-S-B" or "D-LL-RNN-F-S-B"; other fields keep their defaults.
  static ModelConfig from_name(std::string text, std::size_t channels = 8) {
    const std::string prefix = "D-LL-RNN-";
    if (text.rfind(prefix, 0) == 0) text = text.substr(prefix.size());
    ModelConfig cfg;
    cfg.channels = channels;
    std::size_t values[3];
    std::size_t pos = 0;
    for (int i = 0; i < 3; ++i) {
      const std::size_t dash = text.find('-', pos);
      const std::string part = text.substr(pos, dash == std::string::npos ? dash : dash - pos);
      if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos ||
          (i < 2 && dash == std::string::npos) || (i == 2 && dash != std::string::npos)) {
        throw ConfigError("model name must look like F-S-B, got '" + text + "'");
      }
      values[i] = std::stoul(part);
      pos = dash + 1;
    }
    cfg.units = values[0];
    cfg.spatial = values[1];
    cfg.blocks = values[2];
    cfg.validate();
    return cfg;
  }

  bool operator==(const ModelConfig&) const = default;
};

// Named trainable tensors in construction order.
template <typename T>
class ParamStore {
 public:
  void add(const std::string& name, const Tensor<T>& tensor) {
    if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
    index_[name] = entries_.size();
    entries_.emplace_back(name, tensor);
  }

  const Tensor<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return entries_[it->second].second;
  }
  Tensor<T>& at(const std::string& name) {
    return const_cast<Tensor<T>&>(std::as_const(*this).at(name));
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::map<std::string, std::size_t> index_;
};

template <typename T>
struct SpatioTemporalBlock {
  std::size_t in_width = 0;
  std::size_t out_width = 0;
  SpatialConvParams<T> conv;  // in_width -> out_width + 1
  LayerNormParams<T> norm;
  PReluParams<T> act;
  LstmParams<T> lstm;
  LinearParams<T> post;  // F -> F after the LSTM
};

template <typename T>
SpatioTemporalBlock<T> init_block(std::size_t in_width, std::size_t spatial, std::size_t units,
                                  bool is_final, Rng& rng) {
  const std::size_t out_width = is_final ? 1 : spatial;
  SpatioTemporalBlock<T> b;
  b.in_width = in_width;
  b.out_width = out_width;
  b.conv = init_spatial_conv<T>(in_width, out_width + 1, units, rng);
  b.norm = init_layer_norm<T>(units);
  b.act = init_prelu<T>();
  b.lstm = init_lstm<T>(units, units, rng);
  b.post = init_linear<T>(units, units, rng);
  return b;
}

// Spatial conv to out_width+1 channels, LN, PReLU; channel 0 goes through the
// LSTM and a linear layer and then scales channels 1..out_width elementwise.
template <typename T>
Tensor<T> st_block_forward(Tape<T>& tape, const Tensor<T>& x, const SpatioTemporalBlock<T>& block) {
  if (x.rank() != 3 || x.extent(0) != block.in_width) {
    throw DimensionError("block expects " + std::to_string(block.in_width) +
                         " input channels, got " + shape_str(x.shape()));
  }
  auto h = spatial_conv_forward(tape, x, block.conv);
  h = layer_norm_forward(tape, h, block.norm);
  h = prelu_forward(tape, h, block.act);
  auto temporal = slice(tape, h, 0, 0, 1);
  temporal = lstm_forward(tape, temporal, block.lstm).outputs;
  temporal = linear_forward(tape, temporal, block.post);
  auto spatial = slice(tape, h, 0, 1, block.out_width + 1);
  return mul(tape, spatial, temporal);
}

template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& config, std::uint64_t seed = 0) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const std::size_t F = config_.units;
    encoder_ = init_linear<T>(config_.frame.input_len, F, rng);
    encoder_norm_ = init_layer_norm<T>(F);
    encoder_act_ = init_prelu<T>();
    for (std::size_t b = 0; b < config_.blocks; ++b) {
      blocks_.push_back(init_block<T>(config_.block_input_width(b), config_.spatial, F,
                                      b + 1 == config_.blocks, rng));
    }
    decoder_ = init_linear<T>(F, config_.frame.output_len, rng);
    register_params();
  }

  // Deep copy with independent parameter storage.
  Model clone() const {
    Model copy(*this);
    copy.params_ = ParamStore<T>();
    auto dup = [](auto& t) { t = t.clone(true); };
    dup(copy.encoder_.weight);
    dup(copy.encoder_.bias);
    dup(copy.encoder_norm_.gain);
    dup(copy.encoder_norm_.bias);
    dup(copy.encoder_act_.slope);
    for (auto& b : copy.blocks_) {
      for (auto* t : {&b.conv.weight, &b.conv.bias, &b.norm.gain, &b.norm.bias, &b.act.slope,
                      &b.lstm.w_ih, &b.lstm.w_hh, &b.lstm.bias, &b.post.weight, &b.post.bias})
        dup(*t);
    }
    dup(copy.decoder_.weight);
    dup(copy.decoder_.bias);
    copy.register_params();
    return copy;
  }

  const ModelConfig& config() const { return config_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const std::vector<SpatioTemporalBlock<T>>& blocks() const { return blocks_; }
  std::vector<SpatioTemporalBlock<T>>& blocks() { return blocks_; }
  const LinearParams<T>& encoder() const { return encoder_; }
  const LayerNormParams<T>& encoder_norm() const { return encoder_norm_; }
  const PReluParams<T>& encoder_act() const { return encoder_act_; }
  const LinearParams<T>& decoder() const { return decoder_; }

  // C x T x L_i frames -> 1 x T x L_o enhanced frames.
  Tensor<T> forward_frames(Tape<T>& tape, const Tensor<T>& frames) const {
    if (frames.rank() != 3 || frames.extent(0) != config_.channels ||
        frames.extent(2) != config_.frame.input_len) {
      throw DimensionError("model expects frames [" + std::to_string(config_.channels) + "xTx" +
                           std::to_string(config_.frame.input_len) + "], got " +
                           shape_str(frames.shape()));
    }
    auto enc = linear_forward(tape, frames, encoder_);
    enc = layer_norm_forward(tape, enc, encoder_norm_);
    enc = prelu_forward(tape, enc, encoder_act_);
    std::vector<Tensor<T>> stack{enc};
    Tensor<T> out = enc;
    for (const auto& block : blocks_) {
      out = st_block_forward(tape, concat(tape, stack, 0), block);
      stack.push_back(out);
    }
    return linear_forward(tape, out, decoder_);
  }

  // Processes y scaled by `scale` and maps the result back by 1/scale.
  Tensor<T> forward_with_scale(Tape<T>& tape, const Waveform<T>& y, T scale) const {
    check_channels(y);
    Waveform<T> scaled(y.channels, y.samples);
    for (std::size_t i = 0; i < y.data.size(); ++i) scaled.data[i] = y.data[i] * scale;
    return finish(tape, scaled, scale);
  }

  // Full inference path: variance normalization, framing, network,
  // overlap-add, and inverse scaling. Returns [1 x N].
  Tensor<T> forward(Tape<T>& tape, const Waveform<T>& y) const {
    check_channels(y);
    auto norm = normalize_variance(y);
    return finish(tape, norm.waveform, norm.scale);
  }

  std::vector<T> enhance(const Waveform<T>& y) const {
    Tape<T> tape;
    auto out = forward(tape, y);
    return {out.data().begin(), out.data().end()};
  }

 private:
  void check_channels(const Waveform<T>& y) const {
    if (y.channels != config_.channels) {
      throw DimensionError("model expects " + std::to_string(config_.channels) +
                           " channels, got " + std::to_string(y.channels));
    }
  }

  Tensor<T> finish(Tape<T>& tape, const Waveform<T>& normalized, T scale) const {
    auto frames = frame_signal(normalized, config_.frame);
    auto decoded = forward_frames(tape, frames);
    auto wave = overlap_add(tape, decoded, config_.frame, normalized.samples);
    return dllrnn::scale(tape, wave, T(1) / scale);
  }

  void register_params() {
    params_.add("encoder.weight", encoder_.weight);
    params_.add("encoder.bias", encoder_.bias);
    params_.add("encoder.norm.gain", encoder_norm_.gain);
    params_.add("encoder.norm.bias", encoder_norm_.bias);
    params_.add("encoder.prelu.slope", encoder_act_.slope);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const std::string p = "block" + std::to_string(b) + ".";
      auto& blk = blocks_[b];
      if (blk.in_width != config_.block_input_width(b)) {
        throw ContractError("dense input width mismatch at block " + std::to_string(b));
      }
      params_.add(p + "conv.weight", blk.conv.weight);
      params_.add(p + "conv.bias", blk.conv.bias);
      params_.add(p + "norm.gain", blk.norm.gain);
      params_.add(p + "norm.bias", blk.norm.bias);
      params_.add(p + "prelu.slope", blk.act.slope);
      params_.add(p + "lstm.w_ih", blk.lstm.w_ih);
      params_.add(p + "lstm.w_hh", blk.lstm.w_hh);
      params_.add(p + "lstm.bias", blk.lstm.bias);
      params_.add(p + "linear.weight", blk.post.weight);
      params_.add(p + "linear.bias", blk.post.bias);
    }
    params_.add("decoder.weight", decoder_.weight);
    params_.add("decoder.bias", decoder_.bias);
  }

  ModelConfig config_;
  LinearParams<T> encoder_;
  LayerNormParams<T> encoder_norm_;
  PReluParams<T> encoder_act_;
  std::vector<SpatioTemporalBlock<T>> blocks_;
  LinearParams<T> decoder_;
  ParamStore<T> params_;
};

// ---------------------------------------------------------------------------
// Resource accounting

// Trainable scalars of the model built from `config`.
inline std::uint64_t count_params(const ModelConfig& config) {
  config.validate();
  const std::uint64_t F = config.units;
  const std::uint64_t Li = config.frame.input_len, Lo = config.frame.output_len;
  std::uint64_t total = Li * F + F;  // encoder
  total += 2 * F + 1;                // encoder norm + PReLU
  for (std::size_t b = 0; b < config.blocks; ++b) {
    const std::uint64_t in = config.block_input_width(b);
    const std::uint64_t out = config.block_output_width(b) + 1;
    total += F * out * in + out * F;  // spatial conv
    total += 2 * F + 1;               // norm + PReLU
    total += 8 * F * F + 4 * F;       // LSTM
    total += F * F + F;               // post-LSTM linear
  }
  total += F * Lo + Lo;  // decoder
  return total;
}

// Multiply-accumulates of one frame, matrix-style contractions only.
inline std::uint64_t macs_per_frame(const ModelConfig& config) {
  const std::uint64_t F = config.units;
  std::uint64_t macs = config.channels * config.frame.input_len * F;
  for (std::size_t b = 0; b < config.blocks; ++b) {
    macs += F * (config.block_output_width(b) + 1) * config.block_input_width(b);
    macs += 8 * F * F + F * F;
  }
  macs += F * config.frame.output_len;
  return macs;
}

// FLOPs (2 per MAC) to process `seconds` of C-channel audio at 16 kHz.
// Normalization, activation and elementwise work is not counted.
inline double count_flops(const ModelConfig& config, double seconds) {
  config.validate();
  if (!(seconds > 0.0)) throw ContractError("count_flops needs a positive duration");
  const double frames_per_second = kSampleRate / static_cast<double>(config.frame.hop);
  return 2.0 * static_cast<double>(macs_per_frame(config)) * frames_per_second * seconds;
}

}  // namespace dllrnn
