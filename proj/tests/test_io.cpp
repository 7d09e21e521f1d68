#include <gtest/gtest.h>

#include <unistd.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include "dllrnn/checkpoint.hpp"
#include "dllrnn/config.hpp"
#include "dllrnn/manifest.hpp"
#include "dllrnn/wav.hpp"

using namespace dllrnn;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("dllrnn_io_" + name + "_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir;
}

std::string what_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.channels = 2;
  cfg.units = 4;
  cfg.spatial = 2;
  cfg.blocks = 2;
  cfg.frame = FrameSpec{16, 8, 4};
  return cfg;
}

}  // namespace

TEST(Wav, FloatRoundTripIsBitExact) {
  Rng rng(1);
  Waveform<float> w(3, 257);
  for (auto& v : w.data) v = static_cast<float>(rng.normal() * 3.0);
  w.data[5] = std::numeric_limits<float>::denorm_min();
  w.data[6] = -0.0f;
  const auto back = parse_wav(encode_wav(w));
  EXPECT_EQ(back.sample_rate, 16000u);
  EXPECT_EQ(back.encoding, WavEncoding::float32);
  ASSERT_EQ(back.audio.channels, 3u);
  ASSERT_EQ(back.audio.samples, 257u);
  EXPECT_EQ(std::memcmp(back.audio.data.data(), w.data.data(), w.data.size() * sizeof(float)), 0);
}

TEST(Wav, Pcm16Scaling) {
  Waveform<float> w(1, 4, {32767.0f / 32768.0f, -1.0f, 0.5f, 0.0f});
  const auto back = parse_wav(encode_wav(w, 16000, WavEncoding::pcm16));
  EXPECT_EQ(back.encoding, WavEncoding::pcm16);
  EXPECT_EQ(back.audio.data[0], 32767.0f / 32768.0f);
  EXPECT_EQ(back.audio.data[1], -1.0f);
  EXPECT_EQ(back.audio.data[2], 0.5f);
  EXPECT_EQ(back.audio.data[3], 0.0f);
  // Raw sample 0x7fff read back directly.
  auto bytes = encode_wav(Waveform<float>(1, 1), 16000, WavEncoding::pcm16);
  bytes[44] = 0xff;
  bytes[45] = 0x7f;
  EXPECT_EQ(parse_wav(bytes).audio.data[0], 32767.0f / 32768.0f);
}

TEST(Wav, EightChannelFile) {
  const auto dir = scratch_dir("wav8");
  Waveform<float> w(8, 100);
  for (std::size_t c = 0; c < 8; ++c) w.at(c, 10) = static_cast<float>(c) / 8.0f;
  const auto path = (dir / "eight.wav").string();
  write_wav(path, w);
  const auto back = read_wav(path);
  EXPECT_EQ(back.audio.channels, 8u);
  EXPECT_EQ(back.audio, w);
  fs::remove_all(dir);
}

TEST(Wav, SkipsUnknownChunks) {
  auto bytes = encode_wav(Waveform<float>(1, 2, {0.25f, -0.5f}));
  std::vector<unsigned char> list = {'L', 'I', 'S', 'T', 3, 0, 0, 0, 'a', 'b', 'c', 0};
  bytes.insert(bytes.begin() + 36, list.begin(), list.end());
  EXPECT_EQ(parse_wav(bytes).audio.data, (std::vector<float>{0.25f, -0.5f}));
}

TEST(Wav, MalformedHeadersReportOffset) {
  const auto good = encode_wav(Waveform<float>(1, 4));
  auto bad = good;
  bad[0] = 'X';
  EXPECT_NE(what_of([&] { parse_wav(bad); }).find("RIFF"), std::string::npos);
  EXPECT_NE(what_of([&] { parse_wav(bad); }).find("byte offset 4"), std::string::npos);

  bad = good;
  bad.resize(30);
  const auto msg = what_of([&] { parse_wav(bad); });
  EXPECT_NE(msg.find("byte offset"), std::string::npos) << msg;

  bad = good;
  bad[20] = 2;  // ADPCM
  EXPECT_THROW(parse_wav(bad), ParseError);
  EXPECT_NE(what_of([&] { parse_wav(bad); }).find("unsupported codec"), std::string::npos);

  EXPECT_THROW(read_wav("/nonexistent/path.wav"), ParseError);
}

TEST(Wav, TruncatedDataIsParseError) {
  auto bytes = encode_wav(Waveform<float>(2, 10));
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(parse_wav(bytes), ParseError);
}

TEST(Config, DefaultsArePrefilled) {
  const auto c = parse_config("");
  EXPECT_EQ(c.model.units, 64u);
  EXPECT_EQ(c.model.spatial, 8u);
  EXPECT_EQ(c.model.blocks, 8u);
  EXPECT_EQ(c.model.channels, 8u);
  EXPECT_EQ(c.model.frame, (FrameSpec{256, 32, 16}));
  EXPECT_DOUBLE_EQ(c.lr, 0.0002);
  EXPECT_DOUBLE_EQ(c.clip, 0.03);
  EXPECT_EQ(c.sim.snr_db, (Range{-10, 10}));
  EXPECT_EQ(c.sim.min_noises, 1u);
  EXPECT_EQ(c.sim.max_noises, 10u);
  EXPECT_DOUBLE_EQ(c.sim.array_radius, 0.10);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, ParsesCommentsAndWhitespace) {
  const auto c = parse_config("# tiny run\n  F = 16  \nS=2 # inline\n\nlr = 1e-3\nout = runs/a b\n");
  EXPECT_EQ(c.model.units, 16u);
  EXPECT_EQ(c.model.spatial, 2u);
  EXPECT_DOUBLE_EQ(c.lr, 1e-3);
  EXPECT_EQ(c.out, "runs/a b");
}

TEST(Config, UnknownKeyRejectedWithLine) {
  const auto msg = what_of([] { parse_config("F = 8\nfoo = 1\n", "run.cfg"); });
  EXPECT_NE(msg.find("run.cfg:2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("'foo'"), std::string::npos) << msg;
  EXPECT_THROW(parse_config("F = -3\n"), ConfigError);
  EXPECT_THROW(parse_config("lr = fast\n"), ConfigError);
  EXPECT_THROW(parse_config("F\n"), ConfigError);
}

TEST(Config, ValidationNamesKey) {
  auto c = parse_config("snr_lo = 5\nsnr_hi = -5\n");
  EXPECT_NE(what_of([&] { c.validate(); }).find("snr_lo"), std::string::npos);
  c = parse_config("L_o = 24\n");
  EXPECT_NE(what_of([&] { c.validate(); }).find("L_o"), std::string::npos);
}

TEST(ConfigProperty, EmitParseRoundTrip) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    RunConfig c;
    c.model.units = static_cast<std::size_t>(rng.uniform_int(1, 512));
    c.model.channels = static_cast<std::size_t>(rng.uniform_int(1, 16));
    c.sim.mic_count = c.model.channels;
    c.lr = std::exp(rng.uniform(-20, 0));
    c.clip = rng.uniform(0, 1);
    c.chunk_s = rng.uniform(0, 10);
    c.seed = static_cast<std::uint64_t>(rng.uniform_int(0, std::numeric_limits<std::int64_t>::max()));
    c.sim.snr_db = {rng.uniform(-30, 0), rng.uniform(0, 30)};
    c.sim.array_radius = rng.uniform(0.01, 0.5);
    c.sim.image_order = static_cast<int>(rng.uniform_int(0, 8));
    c.out = "dir " + std::to_string(trial);
    c.speech_files = "a.wav,b.wav";
    EXPECT_EQ(parse_config(emit_config(c)), c) << emit_config(c);
  }
}

TEST(Manifest, RoundTrip) {
  std::vector<ManifestEntry> entries;
  Rng rng(3);
  for (int i = 0; i < 5; ++i) {
    entries.push_back({"ex" + std::to_string(i), "mix/" + std::to_string(i) + ".wav", "direct/" + std::to_string(i) + ".wav",
                       rng.uniform(3, 10), rng.uniform(3, 10), rng.uniform(2, 5), rng.uniform(0.1, 0.4),
                       rng.uniform(-10, 10), static_cast<std::size_t>(rng.uniform_int(1, 10)),
                       static_cast<std::uint64_t>(rng.uniform_int(0, 1 << 30))});
  }
  EXPECT_EQ(parse_manifest(format_manifest(entries)), entries);
  EXPECT_TRUE(parse_manifest(format_manifest({})).empty());

  const auto dir = scratch_dir("manifest");
  write_manifest((dir / "manifest.tsv").string(), entries);
  const auto loaded = load_manifest((dir / "manifest.tsv").string());
  EXPECT_EQ(loaded.entries, entries);
  EXPECT_EQ(loaded.resolve("mix/0.wav"), dir / "mix/0.wav");
  fs::remove_all(dir);
}

TEST(Manifest, MalformedLinesNamed) {
  const std::string header = std::string(kManifestMagic) + "\n" + kManifestColumns + "\n";
  EXPECT_NE(what_of([&] { parse_manifest(header + "a\tb\n", "m.tsv"); }).find("m.tsv:3"), std::string::npos);
  EXPECT_THROW(parse_manifest("id\tmixture\n"), ParseError);
  EXPECT_THROW(parse_manifest(""), ParseError);
  EXPECT_THROW(parse_manifest(header + "a\tb\tc\tx\t1\t1\t0.1\t0\t1\t1\n"), ParseError);
  EXPECT_THROW(load_manifest("/nonexistent/manifest.tsv"), ConfigError);
}

TEST(Checkpoint, RoundTripRestoresEveryParameter) {
  Model<float> model(small_config(), 3);
  const auto bytes = encode_checkpoint(kModelMagic, snapshot(model, {17, 2}));
  const auto contents = decode_checkpoint(bytes, kModelMagic, "mem");
  EXPECT_EQ(contents.config, small_config());
  EXPECT_EQ(contents.progress.step, 17u);
  EXPECT_EQ(contents.progress.epoch, 2u);
  auto loaded = model_from_contents<float>(contents, "mem");
  for (const auto& [name, t] : model.params()) {
    const auto& u = loaded.model.params().at(name);
    ASSERT_EQ(u.shape(), t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_EQ(u[i], t[i]) << name;
  }
  EXPECT_EQ(encode_checkpoint(kModelMagic, snapshot(loaded.model, {17, 2})), bytes);
}

TEST(Checkpoint, CorruptionDetected) {
  Model<float> model(small_config(), 3);
  const auto good = encode_checkpoint(kModelMagic, snapshot(model));
  auto bad = good;
  bad[0] = 'X';
  EXPECT_NE(what_of([&] { decode_checkpoint(bad, kModelMagic, "c.ckpt"); }).find("bad magic"), std::string::npos);
  EXPECT_THROW(decode_checkpoint(good, kOptimMagic, "c.ckpt"), ParseError);
  bad = good;
  bad.resize(bad.size() - 2);
  EXPECT_NE(what_of([&] { decode_checkpoint(bad, kModelMagic, "c.ckpt"); }).find("byte offset"), std::string::npos);
  bad = good;
  bad.push_back(0);
  EXPECT_THROW(decode_checkpoint(bad, kModelMagic, "c.ckpt"), ParseError);
}

TEST(Checkpoint, ShapeMismatchRejected) {
  Model<float> model(small_config(), 3);
  auto contents = snapshot(model);
  contents.records.pop_back();
  EXPECT_THROW(model_from_contents<float>(contents, "c.ckpt"), ParseError);

  contents = snapshot(model);
  contents.config.units = 5;  // records no longer fit the declared shapes
  EXPECT_THROW(model_from_contents<float>(contents, "c.ckpt"), ParseError);
}

TEST(Checkpoint, OptimizerStateRoundTrip) {
  const auto dir = scratch_dir("optim");
  Model<float> model(small_config(), 4);
  auto opt = OptState<float>::for_params(model.params());
  Rng rng(5);
  for (auto* buf : {&opt.m, &opt.v, &opt.v_max})
    for (auto& vec : *buf)
      for (auto& v : vec) v = static_cast<float>(rng.uniform(0, 1));
  opt.step = 42;
  const auto path = (dir / "optim.ckpt").string();
  save_optimizer(path, model, opt, {42, 1});
  const auto back = load_optimizer(path, model);
  EXPECT_EQ(back.step, 42u);
  EXPECT_EQ(back.m, opt.m);
  EXPECT_EQ(back.v, opt.v);
  EXPECT_EQ(back.v_max, opt.v_max);

  auto other_cfg = small_config();
  other_cfg.units = 6;
  Model<float> other(other_cfg);
  EXPECT_THROW(load_optimizer(path, other), ParseError);
  fs::remove_all(dir);
}
