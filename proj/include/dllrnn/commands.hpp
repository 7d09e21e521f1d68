#pragma once

// The five operator commands behind the `dllrnn` executable. Each takes a
// validated RunConfig and writes its human-readable report to `report`.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dllrnn/checkpoint.hpp"
#include "dllrnn/config.hpp"
#include "dllrnn/datasim.hpp"
#include "dllrnn/errors.hpp"
#include "dllrnn/loss.hpp"
#include "dllrnn/manifest.hpp"
#include "dllrnn/model.hpp"
#include "dllrnn/rng.hpp"
#include "dllrnn/streaming.hpp"
#include "dllrnn/train.hpp"
#include "dllrnn/wav.hpp"

namespace dllrnn {

namespace detail {

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string example_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ex%05zu", i);
  return buf;
}

inline void ensure_directory(const std::string& key, const std::string& dir) {
  if (dir.empty()) throw ConfigError("config key '" + key + "' (or --out) must name a directory");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw ConfigError("config key '" + key + "': cannot create directory '" + dir + "'");
  }
}

// First channel of a 16 kHz WAV, looped to `samples`.
inline std::vector<double> load_source(const std::string& path, std::size_t samples) {
  const WavFile wav = read_wav(path);
  if (wav.sample_rate != kSampleRate) {
    throw DimensionError(path + ": sample rate " + std::to_string(wav.sample_rate) + " Hz, expected 16000");
  }
  if (wav.audio.samples == 0) throw DegenerateInputError(path + ": no samples");
  std::vector<double> out(samples);
  const auto ch = wav.audio.channel(0);
  for (std::size_t n = 0; n < samples; ++n) out[n] = ch[n % ch.size()];
  return out;
}

inline Waveform<float> to_float(const Waveform<double>& w) { return w.cast<float>(); }

inline Waveform<float> read_checked(const std::filesystem::path& path) {
  WavFile wav = read_wav(path.string());
  if (wav.sample_rate != kSampleRate) {
    throw DimensionError(path.string() + ": sample rate " + std::to_string(wav.sample_rate) + " Hz, expected 16000");
  }
  return std::move(wav.audio);
}

inline std::vector<double> channel_as_double(const Waveform<float>& w, std::size_t c) {
  const auto ch = w.channel(c);
  return {ch.begin(), ch.end()};
}

}  // namespace detail

// Example i uses the substream derive_seed(seed, 0xda7a, i), so a dataset of
// n examples is a prefix of any larger one with the same seed.
inline MixtureExample simulate_indexed(const RunConfig& cfg, std::size_t index) {
  const std::uint64_t seed = derive_seed(cfg.seed, 0xda7a, index);
  const auto samples = static_cast<std::size_t>(std::llround(cfg.seconds * kSampleRate));
  const auto speech_files = detail::split_list(cfg.speech_files);
  const auto noise_files = detail::split_list(cfg.noise_files);
  if (speech_files.empty() && noise_files.empty()) return simulate_example(cfg.sim, samples, seed);

  const RoomDraw draw = draw_room(cfg.sim, derive_seed(seed, 1));
  Rng pick(derive_seed(seed, 3));
  const std::vector<double> speech =
      speech_files.empty() ? synth_speech(samples, derive_seed(seed, 2))
                           : detail::load_source(speech_files[index % speech_files.size()], samples);
  std::vector<std::vector<double>> noises;
  for (std::size_t i = 0; i < draw.noise_sources.size(); ++i) {
    if (noise_files.empty()) {
      const auto color = static_cast<NoiseColor>(pick.uniform_int(0, 2));
      noises.push_back(synth_noise(samples, color, derive_seed(seed, 4, i)));
    } else {
      const auto k = static_cast<std::size_t>(pick.uniform_int(0, static_cast<std::int64_t>(noise_files.size()) - 1));
      noises.push_back(detail::load_source(noise_files[k], samples));
    }
  }
  return spatialize_mixture(draw, speech, noises);
}

// Writes <out>/exNNNNN_mix.wav, <out>/exNNNNN_direct.wav and <out>/manifest.tsv.
inline void cmd_simulate(const RunConfig& cfg, std::ostream& report) {
  cfg.validate();
  detail::ensure_directory("out", cfg.out);
  const std::filesystem::path root(cfg.out);
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < cfg.count; ++i) {
    const MixtureExample ex = simulate_indexed(cfg, i);
    ManifestEntry e;
    e.id = detail::example_id(i);
    e.mixture = e.id + "_mix.wav";
    e.direct = e.id + "_direct.wav";
    e.length = ex.draw.room.length;
    e.width = ex.draw.room.width;
    e.height = ex.draw.room.height;
    e.absorption = ex.draw.room.absorption;
    e.snr_db = ex.snr_db;
    e.noise_sources = ex.noise_sources;
    e.seed = derive_seed(cfg.seed, 0xda7a, i);
    write_wav((root / e.mixture).string(), detail::to_float(ex.mixture));
    write_wav((root / e.direct).string(), detail::to_float(ex.s_direct));
    entries.push_back(e);
  }
  const auto manifest_path = (root / "manifest.tsv").string();
  write_manifest(manifest_path, entries);
  report << "simulated " << entries.size() << " examples into " << manifest_path << "\n";
}

inline std::vector<TrainExample> load_training_set(const Manifest& manifest, std::size_t channels) {
  std::vector<TrainExample> data;
  for (const auto& e : manifest.entries) {
    const auto mix_path = manifest.resolve(e.mixture);
    Waveform<float> mix = detail::read_checked(mix_path);
    Waveform<float> direct = detail::read_checked(manifest.resolve(e.direct));
    if (mix.channels != channels) {
      throw ConfigError("config C = " + std::to_string(channels) + " but " + mix_path.string() + " has " +
                        std::to_string(mix.channels) + " channels");
    }
    if (direct.samples != mix.samples) throw DimensionError(e.id + ": mixture and direct WAVs differ in length");
    const auto target = direct.channel(kReferenceMic);
    data.push_back({std::move(mix), {target.begin(), target.end()}});
  }
  return data;
}

inline std::string format_step(const StepRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "step=%llu epoch=%zu loss=%.9g grad_norm=%.9g wall=%.3f",
                static_cast<unsigned long long>(r.step), r.epoch, r.loss, r.grad_norm, r.wall_seconds);
  return buf;
}

// Trains on the manifest's examples. Writes <out>/last.ckpt (+ .opt) at every
// epoch end and at exit, <out>/best.ckpt right after each step that sets a new
// lowest loss, and appends one line per step to <out>/train.log.
inline void cmd_train(const RunConfig& cfg, std::ostream& report) {
  cfg.validate();
  if (cfg.manifest.empty()) throw ConfigError("config key 'manifest' must name a dataset manifest");
  detail::ensure_directory("out", cfg.out);
  const Manifest manifest = load_manifest(cfg.manifest);
  const auto data = load_training_set(manifest, cfg.model.channels);
  if (data.empty()) throw ConfigError("manifest '" + cfg.manifest + "' lists no examples");

  Model<float> model(cfg.model, cfg.seed);
  auto opt = OptState<float>::for_params(model.params(), cfg.lr);
  if (!cfg.resume.empty()) {
    auto loaded = load_checkpoint<float>(cfg.resume);
    if (!(loaded.model.config() == cfg.model)) {
      throw ConfigError("checkpoint '" + cfg.resume + "' is " + loaded.model.config().name() + " (C=" +
                        std::to_string(loaded.model.config().channels) + "), config asks for " + cfg.model.name() +
                        " (C=" + std::to_string(cfg.model.channels) + ")");
    }
    model = std::move(loaded.model);
    opt = load_optimizer(cfg.resume + ".opt", model);
    report << "resuming from step " << opt.step << "\n";
  }

  const std::filesystem::path root(cfg.out);
  const std::string last = (root / "last.ckpt").string(), best = (root / "best.ckpt").string();
  std::ofstream log((root / "train.log").string(), cfg.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw ConfigError("cannot write training log in '" + cfg.out + "'");

  const Schedule schedule = cfg.schedule();
  const std::size_t per_epoch = (data.size() + schedule.batch_size - 1) / schedule.batch_size;
  auto progress = [&] { return TrainingProgress{opt.step, opt.step / per_epoch}; };
  auto save_last = [&] {
    save_checkpoint(last, model, progress());
    save_optimizer(last + ".opt", model, opt, progress());
  };
  FitHooks hooks;
  hooks.on_step = [&](const StepRecord& r) {
    const std::string line = format_step(r);
    log << line << "\n";
    report << line << "\n";
  };
  hooks.on_epoch_end = [&](std::size_t) { save_last(); };
  hooks.on_best = [&](const StepRecord&) { save_checkpoint(best, model, progress()); };
  const FitResult result = fit(model, opt, data, schedule, hooks);
  save_last();
  report << "trained to step " << opt.step << ", best loss " << result.best_loss << ", checkpoint " << last << "\n";
}

// Enhances a C-channel 16 kHz WAV into a mono WAV of the same length.
inline void cmd_enhance(const std::string& checkpoint, const std::string& in_wav, const std::string& out_wav,
                        bool streaming, std::ostream& report) {
  if (checkpoint.empty()) throw ConfigError("enhance needs a checkpoint");
  if (in_wav.empty() || out_wav.empty()) throw ConfigError("enhance needs an input WAV and an output path");
  const auto loaded = load_checkpoint<float>(checkpoint);
  const Waveform<float> y = detail::read_checked(in_wav);
  if (y.channels != loaded.model.config().channels) {
    throw DimensionError(in_wav + " has " + std::to_string(y.channels) + " channels, checkpoint expects " +
                         std::to_string(loaded.model.config().channels));
  }
  const std::vector<float> est = streaming ? enhance_streaming(loaded.model, y) : loaded.model.enhance(y);
  write_wav(out_wav, Waveform<float>(1, est.size(), est));
  report << "enhanced " << y.samples << " samples (" << (streaming ? "streaming" : "batch") << ") into " << out_wav
         << "\n";
}

inline const std::vector<std::string>& reference_models() {
  static const std::vector<std::string> names = {"64-1-8", "64-8-8", "64-8-4", "32-8-8", "128-8-8", "256-8-8"};
  return names;
}

// One row per model name ("F-S-B" or "D-LL-RNN-F-S-B"); frame settings and C
// come from `base`.
inline void cmd_count(const std::vector<std::string>& names, const ModelConfig& base, std::ostream& report) {
  report << "# params: trainable scalars, in millions\n"
            "# GFLOPs: 2 x multiply-accumulates of the encoder, spatial convolutions, LSTM gate products,\n"
            "#         post-LSTM linear layers and decoder, per frame, times frames per second (fs / hop),\n"
            "#         for one second of C-channel audio; normalization, activations and products excluded\n";
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-20s %3s %10s %10s\n", "model", "C", "params(M)", "GFLOPs");
  report << buf;
  for (const auto& name : names.empty() ? reference_models() : names) {
    ModelConfig cfg = ModelConfig::from_name(name, base.channels);
    cfg.frame = base.frame;
    std::snprintf(buf, sizeof buf, "%-20s %3zu %10.4f %10.4f\n", cfg.name().c_str(), cfg.channels,
                  static_cast<double>(count_params(cfg)) / 1e6, count_flops(cfg, 1.0) / 1e9);
    report << buf;
  }
}

enum class Enhancer { model, identity, oracle };

inline Enhancer parse_enhancer(const std::string& name) {
  if (name == "model") return Enhancer::model;
  if (name == "identity") return Enhancer::identity;
  if (name == "oracle") return Enhancer::oracle;
  throw ConfigError("unknown enhancer '" + name + "' (expected model, identity or oracle)");
}

struct EvaluationSummary {
  std::size_t evaluated = 0;
  std::vector<std::string> failures;
  double mean_unprocessed = 0.0;
  double mean_enhanced = 0.0;
};

// SI-SDR of the first mixture channel and of the enhancer output, both against
// the first-mic direct path. Unreadable examples are reported and skipped.
inline EvaluationSummary cmd_evaluate(const RunConfig& cfg, Enhancer enhancer, std::ostream& report,
                                      std::ostream& errors) {
  if (cfg.manifest.empty()) throw ConfigError("config key 'manifest' must name a dataset manifest");
  const Manifest manifest = load_manifest(cfg.manifest);
  std::optional<Model<float>> model;
  if (enhancer == Enhancer::model) {
    if (cfg.checkpoint.empty()) throw ConfigError("config key 'checkpoint' is required for the model enhancer");
    model.emplace(load_checkpoint<float>(cfg.checkpoint).model);
  }
  EvaluationSummary summary;
  char buf[160];
  report << "id\tunprocessed_db\tenhanced_db\timprovement_db\n";
  for (const auto& e : manifest.entries) {
    try {
      const Waveform<float> mix = detail::read_checked(manifest.resolve(e.mixture));
      const Waveform<float> direct = detail::read_checked(manifest.resolve(e.direct));
      if (mix.samples != direct.samples) throw DimensionError("mixture and direct WAVs differ in length");
      const auto reference = detail::channel_as_double(direct, kReferenceMic);
      const auto noisy = detail::channel_as_double(mix, kReferenceMic);
      std::vector<double> estimate;
      switch (enhancer) {
        case Enhancer::identity: estimate = noisy; break;
        case Enhancer::oracle: estimate = reference; break;
        case Enhancer::model: {
          const auto out = model->enhance(mix);
          estimate.assign(out.begin(), out.end());
          break;
        }
      }
      const double before = si_sdr<double>(noisy, reference);
      const double after = si_sdr<double>(estimate, reference);
      std::snprintf(buf, sizeof buf, "%s\t%.4f\t%.4f\t%.4f\n", e.id.c_str(), before, after, after - before);
      report << buf;
      summary.mean_unprocessed += before;
      summary.mean_enhanced += after;
      ++summary.evaluated;
    } catch (const Error& err) {
      summary.failures.push_back(e.id);
      errors << "skipping " << e.id << ": " << err.what() << "\n";
    }
  }
  if (summary.evaluated > 0) {
    summary.mean_unprocessed /= static_cast<double>(summary.evaluated);
    summary.mean_enhanced /= static_cast<double>(summary.evaluated);
  }
  std::snprintf(buf, sizeof buf, "mean\t%.4f\t%.4f\t%.4f\n", summary.mean_unprocessed, summary.mean_enhanced,
                summary.mean_enhanced - summary.mean_unprocessed);
  report << buf;
  report << "# evaluated " << summary.evaluated << ", failed " << summary.failures.size() << "\n";
  return summary;
}

}  // namespace dllrnn
