#include <gtest/gtest.h>

#include <cmath>

#include "dllrnn/loss.hpp"
#include "dllrnn/model.hpp"
#include "dllrnn/streaming.hpp"
#include "gradcheck.hpp"

using namespace dllrnn;

namespace {

struct TableRow {
  std::size_t F, S, B;
  double gflops, params_m;
};

// D-LL-RNN rows of the published comparison table, C = 8.
const TableRow kTable[] = {
    {64, 1, 8, 0.90, 0.34},  {64, 2, 8, 0.93, 0.34},  {64, 4, 8, 1.01, 0.38},
    {64, 8, 8, 1.25, 0.49},  {64, 8, 6, 0.95, 0.34},  {64, 8, 4, 0.69, 0.22},
    {32, 8, 8, 0.48, 0.17},  {128, 8, 8, 3.67, 1.57}, {200, 4, 8, 7.06, 3.14},
    {256, 4, 8, 11.10, 5.05}, {256, 8, 8, 12.06, 5.50},
};

ModelConfig make_config(std::size_t C, std::size_t F, std::size_t S, std::size_t B, FrameSpec frame = {}) {
  ModelConfig cfg;
  cfg.channels = C;
  cfg.units = F;
  cfg.spatial = S;
  cfg.blocks = B;
  cfg.frame = frame;
  return cfg;
}

ModelConfig tiny_config() { return make_config(2, 8, 2, 2, FrameSpec{32, 8, 4}); }

Waveform<double> random_waveform(std::size_t c, std::size_t n, Rng& rng) {
  Waveform<double> w(c, n);
  for (auto& v : w.data) v = rng.normal();
  return w;
}

Tensor<double> random_input(const Shape& shape, Rng& rng) {
  return gradcheck::random_tensor(shape, rng, false);
}

}  // namespace

TEST(ModelConfig, NameRoundTrip) {
  auto cfg = ModelConfig::from_name("D-LL-RNN-64-8-8");
  EXPECT_EQ(cfg.units, 64u);
  EXPECT_EQ(cfg.spatial, 8u);
  EXPECT_EQ(cfg.blocks, 8u);
  EXPECT_EQ(cfg.name(), "D-LL-RNN-64-8-8");
  EXPECT_EQ(ModelConfig::from_name("32-4-2").name(), "D-LL-RNN-32-4-2");
  for (const char* bad : {"64-8", "64-8-8-8", "a-b-c", "64--8", "0-8-8"})
    EXPECT_THROW(ModelConfig::from_name(bad), ConfigError) << bad;
}

TEST(ModelConfig, DenseWidths) {
  auto cfg = make_config(8, 64, 8, 8);
  for (std::size_t b = 0; b < 8; ++b) EXPECT_EQ(cfg.block_input_width(b), 8 + b * 8);
  EXPECT_EQ(cfg.block_output_width(0), 8u);
  EXPECT_EQ(cfg.block_output_width(7), 1u);
  Model<float> model(cfg);
  for (std::size_t b = 0; b < 8; ++b) EXPECT_EQ(model.blocks()[b].in_width, 8 + b * 8);
}

TEST(CountParams, TableRowsWithinTenPercent) {
  for (const auto& row : kTable) {
    const auto cfg = make_config(8, row.F, row.S, row.B);
    const double m = static_cast<double>(count_params(cfg)) / 1e6;
    EXPECT_NEAR(m, row.params_m, 0.10 * row.params_m) << cfg.name();
  }
}

TEST(CountFlops, TableRowsWithinFifteenPercent) {
  for (const auto& row : kTable) {
    const auto cfg = make_config(8, row.F, row.S, row.B);
    const double g = count_flops(cfg, 1.0) / 1e9;
    EXPECT_NEAR(g, row.gflops, 0.15 * row.gflops) << cfg.name();
  }
}

TEST(CountParams, HandEnumerationTinyConfig) {
  // C=2, F=2, S=1, B=2, L_i=4, L_o=2. Block 0 reads 2 channels and emits
  // 1+1; block 1 reads 2+1 and emits 1+1.
  const auto cfg = make_config(2, 2, 1, 2, FrameSpec{4, 2, 2});
  const std::size_t encoder = 4 * 2 + 2 + 2 + 2 + 1;
  const std::size_t block0 = (2 * 2 * 2 + 2 * 2) + (2 + 2 + 1) + (4 * 2 * 2 + 4 * 2 * 2 + 4 * 2) + (2 * 2 + 2);
  const std::size_t block1 = (2 * 2 * 3 + 2 * 2) + (2 + 2 + 1) + (4 * 2 * 2 + 4 * 2 * 2 + 4 * 2) + (2 * 2 + 2);
  const std::size_t decoder = 2 * 2 + 2;
  EXPECT_EQ(encoder + block0 + block1 + decoder, 151u);
  EXPECT_EQ(count_params(cfg), 151u);
  EXPECT_EQ(Model<double>(cfg).params().total_scalars(), 151u);
}

TEST(CountParams, MatchesParamStore) {
  for (const auto& row : kTable) {
    const auto cfg = make_config(8, row.F, row.S, row.B);
    if (row.F > 128) continue;
    EXPECT_EQ(Model<float>(cfg).params().total_scalars(), count_params(cfg)) << cfg.name();
  }
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const auto cfg = make_config(static_cast<std::size_t>(rng.uniform_int(1, 6)),
                                 static_cast<std::size_t>(rng.uniform_int(1, 12)),
                                 static_cast<std::size_t>(rng.uniform_int(1, 5)),
                                 static_cast<std::size_t>(rng.uniform_int(1, 5)), FrameSpec{16, 8, 4});
    EXPECT_EQ(Model<float>(cfg).params().total_scalars(), count_params(cfg)) << cfg.name();
  }
}

TEST(CountParams, ChannelsOnlyWidenDenseInputs) {
  // Encoder weights are shared across microphones; each extra channel adds
  // one input column to every block's spatial conv.
  const auto a = make_config(4, 64, 8, 8), b = make_config(8, 64, 8, 8);
  const std::uint64_t per_channel = 64 * (7 * 9 + 2);
  EXPECT_EQ(count_params(b) - count_params(a), 4 * per_channel);
}

TEST(CountParams, MonotoneInSpatialAndUnits) {
  for (std::size_t F : {16u, 64u}) {
    for (std::size_t S = 1; S < 10; ++S)
      EXPECT_LT(count_params(make_config(8, F, S, 8)), count_params(make_config(8, F, S + 1, 8)));
  }
  for (std::size_t F = 8; F < 300; F += 24)
    EXPECT_LT(count_params(make_config(8, F, 8, 8)), count_params(make_config(8, F + 8, 8, 8)));
}

TEST(CountParams, SpatialWidthDeltaMatchesTable) {
  const double delta =
      static_cast<double>(count_params(make_config(8, 64, 8, 8)) - count_params(make_config(8, 64, 1, 8))) / 1e6;
  EXPECT_NEAR(delta, 0.15, 0.3 * 0.15);
}

TEST(CountFlops, LinearInDuration) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cfg = make_config(static_cast<std::size_t>(rng.uniform_int(1, 8)),
                                 static_cast<std::size_t>(rng.uniform_int(1, 64)),
                                 static_cast<std::size_t>(rng.uniform_int(1, 8)),
                                 static_cast<std::size_t>(rng.uniform_int(1, 8)));
    EXPECT_DOUBLE_EQ(count_flops(cfg, 2.0), 2.0 * count_flops(cfg, 1.0));
  }
  EXPECT_DOUBLE_EQ(count_flops(make_config(8, 64, 8, 8), 1.0),
                   2.0 * static_cast<double>(macs_per_frame(make_config(8, 64, 8, 8))) * 1000.0);
  EXPECT_THROW(count_flops(make_config(8, 64, 8, 8), 0.0), ContractError);
}

TEST(Block, InteriorBlockShapeAtDefaults) {
  Rng rng(13);
  auto block = init_block<double>(24, 8, 64, false, rng);
  Tape<double> tape;
  auto y = st_block_forward(tape, random_input({24, 5, 64}, rng), block);
  EXPECT_EQ(y.shape(), (Shape{8, 5, 64}));
  auto last = init_block<double>(64, 8, 64, true, rng);
  EXPECT_EQ(st_block_forward(tape, random_input({64, 5, 64}, rng), last).shape(), (Shape{1, 5, 64}));
  EXPECT_THROW(st_block_forward(tape, random_input({23, 5, 64}, rng), block), DimensionError);
}

TEST(Block, TemporalOnesPassSpatialBranchThrough) {
  Rng rng(14);
  auto block = init_block<double>(6, 3, 10, false, rng);
  for (auto& w : block.post.weight.data()) w = 0.0;
  for (auto& b : block.post.bias.data()) b = 1.0;
  auto x = random_input({6, 7, 10}, rng);
  Tape<double> tape;
  auto y = st_block_forward(tape, x, block);
  auto h = prelu_forward(tape, layer_norm_forward(tape, spatial_conv_forward(tape, x, block.conv), block.norm), block.act);
  ASSERT_EQ(y.shape(), (Shape{3, 7, 10}));
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y[i], h[7 * 10 + i]);
}

TEST(Block, TemporalZerosAnnihilate) {
  Rng rng(15);
  auto block = init_block<double>(6, 3, 10, false, rng);
  for (auto* t : {&block.lstm.w_ih, &block.lstm.w_hh, &block.lstm.bias, &block.post.weight, &block.post.bias})
    for (auto& v : t->data()) v = 0.0;
  Tape<double> tape;
  auto y = st_block_forward(tape, random_input({6, 7, 10}, rng), block);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Model, DefaultsMapEightChannelsToOne) {
  Model<float> model(ModelConfig{}, 1);
  Rng rng(16);
  auto y = random_waveform(8, 16000, rng).cast<float>();
  Tape<float> tape;
  auto out = model.forward(tape, y);
  EXPECT_EQ(out.shape(), (Shape{1, 16000}));
  for (float v : out.data()) ASSERT_TRUE(std::isfinite(v));
}

TEST(Model, ChannelMismatchThrows) {
  Model<double> model(tiny_config());
  Rng rng(17);
  Tape<double> tape;
  EXPECT_THROW(model.forward(tape, random_waveform(3, 64, rng)), DimensionError);
}

TEST(Model, LatencyBoundHoldsAtDefaults) {
  Model<double> model(ModelConfig{}, 2);
  LatencyProbe probe;
  probe.channels = 8;
  probe.samples = 2000;
  probe.trials = 12;
  probe.seed = 3;
  auto run = [&](const Waveform<double>& y) {
    // Fixed gain: the normalization statistic is global over the utterance.
    Tape<double> tape;
    auto out = model.forward_with_scale(tape, y, 1.0);
    return std::vector<double>(out.data().begin(), out.data().end());
  };
  auto report = latency_check<double>(run, model.config().frame, probe);
  EXPECT_TRUE(report.passed()) << report.describe();
  EXPECT_EQ(report.bound, 32u);
}

TEST(Model, GradientMatchesFiniteDifferences) {
  Model<double> model(tiny_config(), 4);
  Rng rng(18);
  auto y = random_waveform(2, 256, rng);
  std::vector<double> x(256);
  for (auto& v : x) v = rng.normal();
  const std::span<const double> ref = y.channel(0);

  auto value = [&] {
    Tape<double> tape;
    return pcm_loss(tape, model.forward(tape, y), std::span<const double>(x), ref).item();
  };
  model.params().zero_grad();
  {
    Tape<double> tape;
    auto l = pcm_loss(tape, model.forward(tape, y), std::span<const double>(x), ref);
    tape.backward(l);
  }

  std::vector<std::pair<std::string, std::size_t>> scalars;
  for (const auto& [name, t] : model.params())
    for (std::size_t i = 0; i < t.numel(); ++i) scalars.emplace_back(name, i);
  const double h = 1e-5;
  double worst = 0;
  std::string where;
  for (int k = 0; k < 50; ++k) {
    const auto& [name, i] = scalars[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(scalars.size()) - 1))];
    Tensor<double> handle = model.params().at(name);
    auto data = handle.data();
    const double old = data[i];
    data[i] = old + h;
    const double up = value();
    data[i] = old - h;
    const double down = value();
    data[i] = old;
    const double err = gradcheck::rel_error(handle.grad()[i], (up - down) / (2 * h), 1e-6);
    if (err > worst) {
      worst = err;
      where = name + "[" + std::to_string(i) + "]";
    }
  }
  EXPECT_LT(worst, 1e-4) << where;
}

TEST(ModelProperty, FiniteOutputAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Model<float> model(tiny_config(), seed);
    Rng rng(1000 + seed);
    auto y = random_waveform(2, 300, rng);
    for (auto& v : y.data) v *= std::exp(rng.uniform(-8.0, 8.0));
    for (float v : model.enhance(y.cast<float>())) ASSERT_TRUE(std::isfinite(v)) << "seed " << seed;
  }
}

TEST(ModelProperty, StreamingMatchesBatch) {
  Rng rng(19);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Model<float> model(tiny_config(), seed);
    auto y = random_waveform(2, static_cast<std::size_t>(rng.uniform_int(1, 700)), rng).cast<float>();
    EXPECT_EQ(enhance_streaming(model, y), model.enhance(y)) << "seed " << seed;
  }
  Model<float> defaults(ModelConfig{}, 7);
  auto y = random_waveform(8, 1200, rng).cast<float>();
  EXPECT_EQ(enhance_streaming(defaults, y), defaults.enhance(y));
}

TEST(Model, CloneIsIndependent) {
  Model<double> model(tiny_config(), 5);
  auto copy = model.clone();
  Tensor<double> w = copy.params().at("decoder.bias");
  w.data()[0] += 1.0;
  EXPECT_NE(copy.params().at("decoder.bias")[0], model.params().at("decoder.bias")[0]);
}
