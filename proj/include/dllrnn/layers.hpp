#pragma once

// Trainable layers: spatial convolution, layer normalization, PReLU, LSTM,
// and linear projections.
//
// Each layer has a plain forward kernel over raw buffers and a taped wrapper
// that records its backward rule. The kernels do not depend on the frame
// count T beyond looping over it, so running them one frame at a time
// (streaming) reproduces the whole-utterance result bit for bit.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dllrnn/errors.hpp"
#include "dllrnn/rng.hpp"
#include "dllrnn/tensor.hpp"

namespace dllrnn {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kPReluInit = 0.25;
inline constexpr double kForgetBiasInit = 1.0;

// ---------------------------------------------------------------------------
// Parameter bundles. All members are leaf tensors that require grad.

template <typename T>
struct LinearParams {
  Tensor<T> weight;  // out x in
  Tensor<T> bias;    // out

  std::size_t in() const { return weight.extent(1); }
  std::size_t out() const { return weight.extent(0); }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gain;  // F
  Tensor<T> bias;  // F
};

template <typename T>
struct PReluParams {
  Tensor<T> slope;  // [1], shared across the layer
};

// F matrices of S_o x S_i, one per hidden unit, stored as [F x S_o x S_i].
template <typename T>
struct SpatialConvParams {
  Tensor<T> weight;  // F x S_o x S_i
  Tensor<T> bias;    // S_o x F

  std::size_t units() const { return weight.extent(0); }
  std::size_t out_channels() const { return weight.extent(1); }
  std::size_t in_channels() const { return weight.extent(2); }
};

// Gate order (input, forget, cell, output); one bias per gate row.
template <typename T>
struct LstmParams {
  Tensor<T> w_ih;  // 4F x F
  Tensor<T> w_hh;  // 4F x F
  Tensor<T> bias;  // 4F

  std::size_t hidden() const { return w_hh.extent(1); }
  std::size_t input() const { return w_ih.extent(1); }
};

// ---------------------------------------------------------------------------
// Initialization: weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero,
// layer-norm gain one, PReLU slope 0.25, LSTM forget-gate bias one.

namespace detail {

template <typename T>
Tensor<T> uniform_tensor(const Shape& shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  auto t = Tensor<T>::zeros(shape, true);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace detail

template <typename T>
LinearParams<T> init_linear(std::size_t in, std::size_t out, Rng& rng) {
  return {detail::uniform_tensor<T>({out, in}, in, rng), Tensor<T>::zeros({out}, true)};
}

template <typename T>
LayerNormParams<T> init_layer_norm(std::size_t units) {
  return {Tensor<T>::full({units}, T(1), true), Tensor<T>::zeros({units}, true)};
}

template <typename T>
PReluParams<T> init_prelu() {
  return {Tensor<T>::full({1}, static_cast<T>(kPReluInit), true)};
}

template <typename T>
SpatialConvParams<T> init_spatial_conv(std::size_t in_channels, std::size_t out_channels,
                                       std::size_t units, Rng& rng) {
  return {detail::uniform_tensor<T>({units, out_channels, in_channels}, in_channels, rng),
          Tensor<T>::zeros({out_channels, units}, true)};
}

template <typename T>
LstmParams<T> init_lstm(std::size_t input, std::size_t hidden, Rng& rng) {
  LstmParams<T> p{detail::uniform_tensor<T>({4 * hidden, input}, hidden, rng),
                  detail::uniform_tensor<T>({4 * hidden, hidden}, hidden, rng),
                  Tensor<T>::zeros({4 * hidden}, true)};
  auto b = p.bias.data();
  for (std::size_t j = hidden; j < 2 * hidden; ++j) b[j] = static_cast<T>(kForgetBiasInit);
  return p;
}

// ---------------------------------------------------------------------------
// Forward kernels

namespace kernel {

// y[r, :] = W x[r, :] + b for `rows` rows.
template <typename T>
void linear(std::span<const T> x, std::span<const T> w, std::span<const T> b, std::size_t rows,
            std::size_t in, std::size_t out, std::span<T> y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * in;
    for (std::size_t o = 0; o < out; ++o) {
      const T* wo = w.data() + o * in;
      T acc = 0;
      for (std::size_t i = 0; i < in; ++i) acc += wo[i] * xr[i];
      y[r * out + o] = acc + b[o];
    }
  }
}

// Normalizes each length-F row; writes the normalized (pre-affine) values to
// `xhat` and 1/sqrt(var+eps) to `inv_std` when those spans are non-empty.
template <typename T>
void layer_norm(std::span<const T> x, std::span<const T> gain, std::span<const T> bias,
                std::size_t rows, std::size_t units, T eps, std::span<T> y, std::span<T> xhat,
                std::span<T> inv_std) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * units;
    T mean = 0;
    for (std::size_t f = 0; f < units; ++f) mean += xr[f];
    mean /= static_cast<T>(units);
    T var = 0;
    for (std::size_t f = 0; f < units; ++f) var += (xr[f] - mean) * (xr[f] - mean);
    var /= static_cast<T>(units);
    const T inv = T(1) / std::sqrt(var + eps);
    if (!inv_std.empty()) inv_std[r] = inv;
    for (std::size_t f = 0; f < units; ++f) {
      const T h = (xr[f] - mean) * inv;
      if (!xhat.empty()) xhat[r * units + f] = h;
      y[r * units + f] = h * gain[f] + bias[f];
    }
  }
}

template <typename T>
void prelu(std::span<const T> x, T slope, std::span<T> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] >= T(0) ? x[i] : slope * x[i];
}

// x: S_i x T x F, y: S_o x T x F.
template <typename T>
void spatial_conv(std::span<const T> x, std::span<const T> w, std::span<const T> b,
                  std::size_t in_ch, std::size_t out_ch, std::size_t frames, std::size_t units,
                  std::span<T> y) {
  const std::size_t plane = frames * units;
  for (std::size_t so = 0; so < out_ch; ++so) {
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t f = 0; f < units; ++f) {
        const T* wf = w.data() + (f * out_ch + so) * in_ch;
        T acc = 0;
        for (std::size_t si = 0; si < in_ch; ++si) acc += wf[si] * x[si * plane + t * units + f];
        y[so * plane + t * units + f] = acc + b[so * units + f];
      }
    }
  }
}

// One LSTM time step. `gates` receives the activated (i, f, g, o) values.
template <typename T>
void lstm_step(std::span<const T> x, std::span<const T> h_prev, std::span<const T> c_prev,
               std::span<const T> w_ih, std::span<const T> w_hh, std::span<const T> bias,
               std::size_t input, std::size_t hidden, std::span<T> gates, std::span<T> h,
               std::span<T> c) {
  for (std::size_t j = 0; j < 4 * hidden; ++j) {
    const T* wi = w_ih.data() + j * input;
    const T* wh = w_hh.data() + j * hidden;
    T acc = 0;
    for (std::size_t i = 0; i < input; ++i) acc += wi[i] * x[i];
    for (std::size_t i = 0; i < hidden; ++i) acc += wh[i] * h_prev[i];
    const T z = acc + bias[j];
    const bool cell = j >= 2 * hidden && j < 3 * hidden;
    gates[j] = cell ? std::tanh(z) : T(1) / (T(1) + std::exp(-z));
  }
  for (std::size_t k = 0; k < hidden; ++k) {
    const T ig = gates[k], fg = gates[hidden + k], gg = gates[2 * hidden + k],
            og = gates[3 * hidden + k];
    c[k] = fg * c_prev[k] + ig * gg;
    h[k] = og * std::tanh(c[k]);
  }
}

}  // namespace kernel

// ---------------------------------------------------------------------------
// Taped layers

template <typename T>
Tensor<T> linear_forward(Tape<T>& tape, const Tensor<T>& x, const LinearParams<T>& p) {
  const std::size_t in = p.in(), out = p.out();
  if (x.shape().back() != in || p.bias.numel() != out) {
    throw DimensionError("linear expects last extent " + std::to_string(in) + ", got " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out;
  auto y = Tensor<T>::zeros(out_shape);
  kernel::linear<T>(x.data(), p.weight.data(), p.bias.data(), rows, in, out, y.data());
  if (any_requires_grad<T>({&x, &p.weight, &p.bias})) {
    tape.record(y, [x, p, y, rows, in, out]() mutable {
      auto g = std::as_const(y).grad();
      auto xd = std::as_const(x).data();
      auto wd = std::as_const(p.weight).data();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t o = 0; o < out; ++o) {
            const T go = g[r * out + o];
            for (std::size_t i = 0; i < in; ++i) gx[r * in + i] += go * wd[o * in + i];
          }
      }
      if (p.weight.requires_grad()) {
        auto gw = p.weight.grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t o = 0; o < out; ++o) {
            const T go = g[r * out + o];
            for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += go * xd[r * in + i];
          }
      }
      if (p.bias.requires_grad()) {
        auto gb = p.bias.grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t o = 0; o < out; ++o) gb[o] += g[r * out + o];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> layer_norm_forward(Tape<T>& tape, const Tensor<T>& x, const LayerNormParams<T>& p,
                             T eps = static_cast<T>(kLayerNormEps)) {
  const std::size_t units = p.gain.numel();
  if (units == 0 || x.shape().back() != units || p.bias.numel() != units) {
    throw DimensionError("layer norm over " + std::to_string(units) + " units, got " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / units;
  auto y = Tensor<T>::zeros(x.shape());
  std::vector<T> xhat(x.numel()), inv_std(rows);
  kernel::layer_norm<T>(x.data(), p.gain.data(), p.bias.data(), rows, units, eps, y.data(), xhat,
                        inv_std);
  if (any_requires_grad<T>({&x, &p.gain, &p.bias})) {
    tape.record(y, [x, p, y, rows, units, xhat = std::move(xhat),
                    inv_std = std::move(inv_std)]() mutable {
      auto g = std::as_const(y).grad();
      auto gain = std::as_const(p.gain).data();
      const bool gx_on = x.requires_grad();
      std::span<T> gx = gx_on ? x.grad() : std::span<T>{};
      std::span<T> gg = p.gain.requires_grad() ? p.gain.grad() : std::span<T>{};
      std::span<T> gb = p.bias.requires_grad() ? p.bias.grad() : std::span<T>{};
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * units;
        T mean_d = 0, mean_dh = 0;
        for (std::size_t f = 0; f < units; ++f) {
          const T gy = g[base + f];
          if (!gg.empty()) gg[f] += gy * xhat[base + f];
          if (!gb.empty()) gb[f] += gy;
          const T d = gy * gain[f];
          mean_d += d;
          mean_dh += d * xhat[base + f];
        }
        if (!gx_on) continue;
        mean_d /= static_cast<T>(units);
        mean_dh /= static_cast<T>(units);
        for (std::size_t f = 0; f < units; ++f) {
          const T d = g[base + f] * gain[f];
          gx[base + f] += inv_std[r] * (d - mean_d - xhat[base + f] * mean_dh);
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> prelu_forward(Tape<T>& tape, const Tensor<T>& x, const PReluParams<T>& p) {
  if (p.slope.numel() != 1) throw DimensionError("PReLU slope must be a single value");
  auto y = Tensor<T>::zeros(x.shape());
  const T a = p.slope[0];
  kernel::prelu<T>(x.data(), a, y.data());
  if (any_requires_grad<T>({&x, &p.slope})) {
    tape.record(y, [x, p, y, a]() mutable {
      auto g = std::as_const(y).grad();
      auto xd = std::as_const(x).data();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xd[i] >= T(0) ? g[i] : a * g[i];
      }
      if (p.slope.requires_grad()) {
        T acc = 0;
        for (std::size_t i = 0; i < g.size(); ++i)
          if (xd[i] < T(0)) acc += g[i] * xd[i];
        p.slope.grad()[0] += acc;
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> spatial_conv_forward(Tape<T>& tape, const Tensor<T>& x, const SpatialConvParams<T>& p) {
  if (x.rank() != 3 || x.extent(0) != p.in_channels() || x.extent(2) != p.units() ||
      p.bias.shape() != Shape{p.out_channels(), p.units()}) {
    throw DimensionError("spatial conv with " + std::to_string(p.in_channels()) +
                         " input channels and " + std::to_string(p.units()) +
                         " units cannot take " + shape_str(x.shape()));
  }
  const std::size_t in_ch = p.in_channels(), out_ch = p.out_channels(), frames = x.extent(1),
                    units = p.units();
  auto y = Tensor<T>::zeros({out_ch, frames, units});
  kernel::spatial_conv<T>(x.data(), p.weight.data(), p.bias.data(), in_ch, out_ch, frames, units,
                          y.data());
  if (any_requires_grad<T>({&x, &p.weight, &p.bias})) {
    tape.record(y, [x, p, y, in_ch, out_ch, frames, units]() mutable {
      auto g = std::as_const(y).grad();
      auto xd = std::as_const(x).data();
      auto wd = std::as_const(p.weight).data();
      const std::size_t plane = frames * units;
      const bool gx_on = x.requires_grad(), gw_on = p.weight.requires_grad(),
                 gb_on = p.bias.requires_grad();
      std::span<T> gx = gx_on ? x.grad() : std::span<T>{};
      std::span<T> gw = gw_on ? p.weight.grad() : std::span<T>{};
      std::span<T> gb = gb_on ? p.bias.grad() : std::span<T>{};
      for (std::size_t so = 0; so < out_ch; ++so)
        for (std::size_t t = 0; t < frames; ++t)
          for (std::size_t f = 0; f < units; ++f) {
            const T go = g[so * plane + t * units + f];
            if (gb_on) gb[so * units + f] += go;
            const std::size_t wbase = (f * out_ch + so) * in_ch;
            for (std::size_t si = 0; si < in_ch; ++si) {
              const std::size_t xi = si * plane + t * units + f;
              if (gw_on) gw[wbase + si] += go * xd[xi];
              if (gx_on) gx[xi] += go * wd[wbase + si];
            }
          }
    });
  }
  return y;
}

template <typename T>
struct LstmState {
  std::vector<T> h;
  std::vector<T> c;

  static LstmState zeros(std::size_t hidden) {
    return {std::vector<T>(hidden, T(0)), std::vector<T>(hidden, T(0))};
  }
};

template <typename T>
struct LstmResult {
  Tensor<T> outputs;  // same shape as the input
  LstmState<T> final_state;
};

// Runs the recurrence over the second-to-last axis of x (T x F, or 1 x T x F).
// Gradients do not flow into `initial`.
template <typename T>
LstmResult<T> lstm_forward(Tape<T>& tape, const Tensor<T>& x, const LstmParams<T>& p,
                           const LstmState<T>* initial = nullptr) {
  const std::size_t hidden = p.hidden(), input = p.input();
  const bool shape_ok = (x.rank() == 2 || (x.rank() == 3 && x.extent(0) == 1)) &&
                        x.shape().back() == input && p.w_hh.extent(0) == 4 * hidden &&
                        p.w_ih.extent(0) == 4 * hidden && p.bias.numel() == 4 * hidden &&
                        input == hidden;
  if (!shape_ok) {
    throw DimensionError("LSTM with hidden size " + std::to_string(hidden) + " cannot take " +
                         shape_str(x.shape()));
  }
  if (initial != nullptr && (initial->h.size() != hidden || initial->c.size() != hidden)) {
    throw DimensionError("LSTM initial state has wrong width");
  }
  const std::size_t frames = x.extent(x.rank() - 2);
  auto y = Tensor<T>::zeros(x.shape());

  // Saved activations: gates (4F), cell (F), per frame.
  std::vector<T> gates(frames * 4 * hidden), cells(frames * hidden);
  LstmState<T> state = initial ? *initial : LstmState<T>::zeros(hidden);
  const std::vector<T> h0 = state.h, c0 = state.c;
  auto xd = x.data();
  auto yd = y.data();
  for (std::size_t t = 0; t < frames; ++t) {
    std::span<const T> h_prev = t ? std::span<const T>(yd.subspan((t - 1) * hidden, hidden))
                                  : std::span<const T>(h0);
    std::span<const T> c_prev =
        t ? std::span<const T>(cells).subspan((t - 1) * hidden, hidden) : std::span<const T>(c0);
    kernel::lstm_step<T>(xd.subspan(t * input, input), h_prev, c_prev, p.w_ih.data(),
                         p.w_hh.data(), p.bias.data(), input, hidden,
                         std::span<T>(gates).subspan(t * 4 * hidden, 4 * hidden),
                         yd.subspan(t * hidden, hidden),
                         std::span<T>(cells).subspan(t * hidden, hidden));
  }
  if (frames > 0) {
    state.h.assign(yd.end() - static_cast<std::ptrdiff_t>(hidden), yd.end());
    state.c.assign(cells.end() - static_cast<std::ptrdiff_t>(hidden), cells.end());
  }

  if (any_requires_grad<T>({&x, &p.w_ih, &p.w_hh, &p.bias})) {
    tape.record(y, [x, p, y, frames, hidden, input, gates = std::move(gates),
                    cells = std::move(cells), h0, c0]() mutable {
      auto g = std::as_const(y).grad();
      auto xd = std::as_const(x).data();
      auto yd = std::as_const(y).data();
      auto wih = std::as_const(p.w_ih).data();
      auto whh = std::as_const(p.w_hh).data();
      const bool gx_on = x.requires_grad();
      std::span<T> gx = gx_on ? x.grad() : std::span<T>{};
      std::span<T> gwih = p.w_ih.requires_grad() ? p.w_ih.grad() : std::span<T>{};
      std::span<T> gwhh = p.w_hh.requires_grad() ? p.w_hh.grad() : std::span<T>{};
      std::span<T> gb = p.bias.requires_grad() ? p.bias.grad() : std::span<T>{};
      std::vector<T> dh_next(hidden, T(0)), dc_next(hidden, T(0)), dz(4 * hidden);
      for (std::size_t t = frames; t-- > 0;) {
        const T* gt = gates.data() + t * 4 * hidden;
        const T* ct = cells.data() + t * hidden;
        const T* c_prev = t ? cells.data() + (t - 1) * hidden : c0.data();
        const T* h_prev = t ? yd.data() + (t - 1) * hidden : h0.data();
        for (std::size_t k = 0; k < hidden; ++k) {
          const T ig = gt[k], fg = gt[hidden + k], gg = gt[2 * hidden + k],
                  og = gt[3 * hidden + k];
          const T tc = std::tanh(ct[k]);
          const T dh = g[t * hidden + k] + dh_next[k];
          const T dc = dh * og * (T(1) - tc * tc) + dc_next[k];
          dz[k] = dc * gg * ig * (T(1) - ig);
          dz[hidden + k] = dc * c_prev[k] * fg * (T(1) - fg);
          dz[2 * hidden + k] = dc * ig * (T(1) - gg * gg);
          dz[3 * hidden + k] = dh * tc * og * (T(1) - og);
          dc_next[k] = dc * fg;
        }
        std::fill(dh_next.begin(), dh_next.end(), T(0));
        const T* xt = xd.data() + t * input;
        for (std::size_t j = 0; j < 4 * hidden; ++j) {
          const T d = dz[j];
          if (!gb.empty()) gb[j] += d;
          for (std::size_t i = 0; i < input; ++i) {
            if (!gwih.empty()) gwih[j * input + i] += d * xt[i];
            if (gx_on) gx[t * input + i] += d * wih[j * input + i];
          }
          for (std::size_t i = 0; i < hidden; ++i) {
            if (!gwhh.empty()) gwhh[j * hidden + i] += d * h_prev[i];
            dh_next[i] += d * whh[j * hidden + i];
          }
        }
      }
    });
  }
  return {y, std::move(state)};
}

}  // namespace dllrnn
