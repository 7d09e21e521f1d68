#pragma once

// AMSGrad training with global gradient-norm clipping on random chunks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dllrnn/errors.hpp"
#include "dllrnn/framing.hpp"
#include "dllrnn/loss.hpp"
#include "dllrnn/model.hpp"
#include "dllrnn/rng.hpp"

namespace dllrnn {

inline constexpr double kDefaultLearningRate = 2e-4;
inline constexpr double kDefaultClipNorm = 0.03;

template <typename T>
struct OptState {
  double lr = kDefaultLearningRate;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  // One buffer per parameter, in ParamStore order.
  std::vector<std::vector<T>> m, v, v_max;

  static OptState for_params(const ParamStore<T>& params, double lr = kDefaultLearningRate) {
    OptState s;
    s.lr = lr;
    for (const auto& [name, t] : params) {
      s.m.emplace_back(t.numel(), T(0));
      s.v.emplace_back(t.numel(), T(0));
      s.v_max.emplace_back(t.numel(), T(0));
    }
    return s;
  }
};

// Bias-corrected Adam update with the running maximum of the second moment in
// the denominator. Checks every gradient before touching any state.
template <typename T>
void adam_step(ParamStore<T>& params, OptState<T>& state) {
  if (state.m.size() != params.size()) throw ContractError("optimizer state does not match parameters");
  std::size_t idx = 0;
  for (auto& [name, t] : params) {
    if (state.m[idx].size() != t.numel()) throw ContractError("optimizer state shape mismatch for " + name);
    for (T g : std::as_const(t).grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericalError("non-finite gradient in parameter '" + name + "'");
      }
    }
    ++idx;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const T step_size = static_cast<T>(state.lr / bc1);
  const T bc2_sqrt = static_cast<T>(std::sqrt(bc2));
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2), eps = static_cast<T>(state.eps);
  idx = 0;
  for (auto& [name, t] : params) {
    auto data = t.data();
    auto grad = std::as_const(t).grad();
    auto& m = state.m[idx];
    auto& v = state.v[idx];
    auto& vm = state.v_max[idx];
    for (std::size_t i = 0; i < data.size(); ++i) {
      const T g = grad.empty() ? T(0) : grad[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      vm[i] = std::max(vm[i], v[i]);
      const T denom = std::sqrt(vm[i]) / bc2_sqrt + eps;
      data[i] -= step_size * m[i] / denom;
    }
    ++idx;
  }
}

// Global L2 norm over all gradients; rescales them to max_norm when larger.
// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParamStore<T>& params, double max_norm = kDefaultClipNorm) {
  if (!(max_norm > 0.0)) throw ContractError("max_norm must be positive");
  double sq = 0.0;
  for (const auto& [name, t] : params) {
    for (T g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto& [name, t] : params) {
      if (!t.has_grad()) continue;
      for (auto& g : t.grad()) g *= factor;
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainExample {
  Waveform<float> mixture;     // C x N
  std::vector<float> target;   // direct-path speech at the reference mic
};

inline constexpr std::size_t kReferenceMic = 0;

struct Schedule {
  std::size_t epochs = 200;
  std::size_t batch_size = 16;
  double chunk_seconds = 4.0;
  std::uint64_t seed = 0;
  double lr = kDefaultLearningRate;
  double clip = kDefaultClipNorm;
  std::size_t max_steps = 0;  // stop after this many global steps; 0 = no limit
};

struct StepRecord {
  std::uint64_t step = 0;  // 1-based global step
  std::size_t epoch = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double wall_seconds = 0.0;
};

struct FitHooks {
  std::function<void(const StepRecord&)> on_step;
  // Called after the last step of an epoch.
  std::function<void(std::size_t epoch)> on_epoch_end;
  // Called whenever a step sets a new lowest loss.
  std::function<void(const StepRecord&)> on_best;
};

struct FitResult {
  std::vector<StepRecord> log;
  double best_loss = 0.0;
};

// Crops [offset, offset+len) of an example; the whole example when it is
// shorter than len.
inline TrainExample crop_example(const TrainExample& ex, std::size_t len, Rng& rng) {
  const std::size_t N = ex.mixture.samples;
  if (len == 0 || len >= N) return ex;
  const auto offset = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(N - len)));
  TrainExample out{Waveform<float>(ex.mixture.channels, len), {}};
  for (std::size_t c = 0; c < ex.mixture.channels; ++c) {
    auto src = ex.mixture.channel(c).subspan(offset, len);
    std::copy(src.begin(), src.end(), out.mixture.channel(c).begin());
  }
  out.target.assign(ex.target.begin() + static_cast<std::ptrdiff_t>(offset),
                    ex.target.begin() + static_cast<std::ptrdiff_t>(offset + len));
  return out;
}

// PCM loss of the model on one example against the reference-mic target.
template <typename T>
Tensor<T> example_loss(Tape<T>& tape, const Model<T>& model, const Waveform<T>& mixture,
                       std::span<const T> target) {
  auto estimate = model.forward(tape, mixture);
  return pcm_loss<T>(tape, estimate, target, mixture.channel(kReferenceMic));
}

// Epoch e visits the dataset in an order shuffled by (seed, e); each batch
// element is cropped with a stream keyed by (seed, global step, slot). A run
// resumed from a checkpoint at step k therefore reproduces step k+1 exactly.
inline FitResult fit(Model<float>& model, OptState<float>& opt, const std::vector<TrainExample>& data,
                     const Schedule& schedule, const FitHooks& hooks = {}) {
  if (data.empty()) throw ConfigError("training dataset is empty");
  if (schedule.batch_size == 0) throw ConfigError("batch size must be positive");
  for (const auto& ex : data) {
    if (ex.mixture.channels != model.config().channels) {
      throw ConfigError("example has " + std::to_string(ex.mixture.channels) + " channels, model expects " +
                        std::to_string(model.config().channels));
    }
    if (ex.target.size() != ex.mixture.samples) throw DimensionError("target length differs from mixture");
  }
  opt.lr = schedule.lr;
  const std::size_t per_epoch = (data.size() + schedule.batch_size - 1) / schedule.batch_size;
  const auto chunk = static_cast<std::size_t>(std::llround(schedule.chunk_seconds * kSampleRate));
  const auto start = std::chrono::steady_clock::now();

  FitResult result;
  result.best_loss = std::numeric_limits<double>::infinity();
  std::uint64_t step = opt.step;
  for (std::size_t epoch = step / per_epoch; epoch < schedule.epochs; ++epoch) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(schedule.seed, 0x5eed, epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    }
    for (std::size_t b = step % per_epoch; b < per_epoch; ++b) {
      if (schedule.max_steps && step >= schedule.max_steps) return result;
      Tape<float> tape;
      model.params().zero_grad();
      std::vector<Tensor<float>> losses;
      const std::size_t first = b * schedule.batch_size;
      const std::size_t last = std::min(first + schedule.batch_size, data.size());
      for (std::size_t i = first; i < last; ++i) {
        Rng crop_rng(derive_seed(schedule.seed, step + 1, i - first));
        const TrainExample ex = crop_example(data[order[i]], chunk, crop_rng);
        losses.push_back(example_loss<float>(tape, model, ex.mixture, ex.target));
      }
      Tensor<float> total = losses.size() == 1 ? losses[0] : sum(tape, concat(tape, losses, 0));
      Tensor<float> loss = scale(tape, total, 1.0f / static_cast<float>(losses.size()));
      if (!std::isfinite(loss.item())) throw NumericalError("non-finite training loss at step " + std::to_string(step + 1));
      tape.backward(loss);
      const double norm = clip_grad_norm(model.params(), schedule.clip);
      adam_step(model.params(), opt);
      step = opt.step;

      StepRecord rec{step, epoch, static_cast<double>(loss.item()), norm,
                     std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
      result.log.push_back(rec);
      if (hooks.on_step) hooks.on_step(rec);
      if (rec.loss < result.best_loss) {
        result.best_loss = rec.loss;
        if (hooks.on_best) hooks.on_best(rec);
      }
    }
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch);
  }
  return result;
}

}  // namespace dllrnn
