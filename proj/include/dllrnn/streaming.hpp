#pragma once

// Frame-by-frame inference that carries LSTM state between frames. Uses the
// same kernels as the taped forward pass, so its output matches
// Model::forward exactly.

#include <cstddef>
#include <span>
#include <vector>

#include "dllrnn/framing.hpp"
#include "dllrnn/layers.hpp"
#include "dllrnn/model.hpp"

namespace dllrnn {

template <typename T>
class FrameStreamer {
 public:
  explicit FrameStreamer(const Model<T>& model) : model_(model) { reset(); }

  void reset() {
    states_.assign(model_.config().blocks, LstmState<T>::zeros(model_.config().units));
  }

  // One input frame laid out C x L_i -> one output frame of L_o samples.
  std::vector<T> process(std::span<const T> frame) {
    const auto& cfg = model_.config();
    const std::size_t C = cfg.channels, F = cfg.units, Li = cfg.frame.input_len;
    if (frame.size() != C * Li) throw DimensionError("streamed frame must hold C x L_i samples");

    // Dense stack: encoder output followed by every block output, S-axis first.
    std::vector<T> stack(C * F);
    {
      std::vector<T> lin(C * F);
      const auto& enc = model_.encoder();
      kernel::linear<T>(frame, enc.weight.data(), enc.bias.data(), C, Li, F, lin);
      std::vector<T> normed(C * F);
      kernel::layer_norm<T>(lin, model_.encoder_norm().gain.data(),
                            model_.encoder_norm().bias.data(), C, F,
                            static_cast<T>(kLayerNormEps), normed, {}, {});
      kernel::prelu<T>(normed, model_.encoder_act().slope[0], stack);
    }

    std::vector<T> last;
    for (std::size_t b = 0; b < model_.blocks().size(); ++b) {
      const auto& blk = model_.blocks()[b];
      const std::size_t width = blk.out_width + 1;
      std::vector<T> conv(width * F), normed(width * F), act(width * F);
      kernel::spatial_conv<T>(stack, blk.conv.weight.data(), blk.conv.bias.data(), blk.in_width,
                              width, 1, F, conv);
      kernel::layer_norm<T>(conv, blk.norm.gain.data(), blk.norm.bias.data(), width, F,
                            static_cast<T>(kLayerNormEps), normed, {}, {});
      kernel::prelu<T>(normed, blk.act.slope[0], act);

      auto& state = states_[b];
      std::vector<T> gates(4 * F), h(F), c(F);
      kernel::lstm_step<T>(std::span<const T>(act).first(F), state.h, state.c,
                           blk.lstm.w_ih.data(), blk.lstm.w_hh.data(), blk.lstm.bias.data(), F, F,
                           gates, h, c);
      state.h = h;
      state.c = c;
      std::vector<T> temporal(F);
      kernel::linear<T>(h, blk.post.weight.data(), blk.post.bias.data(), 1, F, F, temporal);

      last.assign(blk.out_width * F, T(0));
      for (std::size_t s = 0; s < blk.out_width; ++s)
        for (std::size_t f = 0; f < F; ++f) last[s * F + f] = act[(s + 1) * F + f] * temporal[f];
      stack.insert(stack.end(), last.begin(), last.end());
    }

    std::vector<T> out(cfg.frame.output_len);
    kernel::linear<T>(last, model_.decoder().weight.data(), model_.decoder().bias.data(), 1, F,
                      cfg.frame.output_len, out);
    return out;
  }

 private:
  const Model<T>& model_;
  std::vector<LstmState<T>> states_;
};

// Whole-utterance inference driven one frame at a time. Each frame only
// reads input up to L_o samples past its hop position; the output sample
// block [t*hop, (t+1)*hop) is final after frame t. The variance-normalization
// gain is computed over the full input first.
template <typename T>
std::vector<T> enhance_streaming(const Model<T>& model, const Waveform<T>& y) {
  const auto& cfg = model.config();
  if (y.channels != cfg.channels) {
    throw DimensionError("model expects " + std::to_string(cfg.channels) + " channels, got " +
                         std::to_string(y.channels));
  }
  if (y.samples == 0) throw DimensionError("cannot enhance an empty waveform");
  const auto norm = normalize_variance(y);
  const FrameSpec& spec = cfg.frame;
  const std::size_t N = y.samples, frames = spec.frame_count(N);

  FrameStreamer<T> streamer(model);
  std::vector<T> frame(cfg.channels * spec.input_len);
  std::vector<T> acc(N, T(0)), out(N, T(0));
  const T inv_scale = T(1) / norm.scale;
  std::size_t emitted = 0;
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t c = 0; c < cfg.channels; ++c) {
      frame_into<T>(norm.waveform.channel(c), spec, t,
                    std::span<T>(frame).subspan(c * spec.input_len, spec.input_len));
    }
    const auto decoded = streamer.process(frame);
    for (std::size_t i = 0; i < spec.output_len; ++i) {
      const std::size_t n = t * spec.hop + i;
      if (n < N) acc[n] += decoded[i];
    }
    const std::size_t ready = t + 1 == frames ? N : std::min(N, (t + 1) * spec.hop);
    for (; emitted < ready; ++emitted) {
      out[emitted] = acc[emitted] / static_cast<T>(overlap_count(spec, frames, emitted)) * inv_scale;
    }
  }
  return out;
}

}  // namespace dllrnn
