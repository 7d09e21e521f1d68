#include <gtest/gtest.h>

#include "dllrnn/tensor.hpp"
#include "gradcheck.hpp"

using namespace dllrnn;
using gradcheck::random_tensor;

namespace {

Tensor<double> mat(std::size_t r, std::size_t c, std::vector<double> v, bool rg = false) {
  return Tensor<double>({r, c}, std::move(v), rg);
}

}  // namespace

TEST(Tensor, RejectsInconsistentShapes) {
  EXPECT_THROW(Tensor<double>({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor<double>({2, 0}, std::vector<double>{}), DimensionError);
}

TEST(Tensor, GradHasDataShape) {
  auto t = Tensor<double>::zeros({3, 4}, true);
  EXPECT_FALSE(t.has_grad());
  EXPECT_EQ(t.grad().size(), 12u);
}

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  Tape<double> tape;
  auto eye = mat(2, 2, {1, 0, 0, 1});
  auto x = mat(2, 3, {1.5, -2, 3, 4, 5, -6.25});
  auto y = matmul(tape, eye, x);
  EXPECT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Matmul, HandExample) {
  Tape<double> tape;
  auto y = matmul(tape, mat(2, 2, {1, 2, 3, 4}), mat(2, 1, {1, 1}));
  EXPECT_EQ(y.shape(), (Shape{2, 1}));
  EXPECT_EQ(y[0], 3);
  EXPECT_EQ(y[1], 7);
}

TEST(Matmul, MismatchNamesBothShapes) {
  Tape<double> tape;
  try {
    matmul(tape, Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3] · [2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  Rng rng(1);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  auto r = gradcheck::check({{"a", a}, {"b", b}}, [&](Tape<double>& t) { return sum(t, matmul(t, a, b)); });
  EXPECT_LT(r.worst, 1e-6) << r.where;
}

TEST(Elementwise, MulByOnesIsIdentity) {
  Tape<double> tape;
  Rng rng(2);
  auto x = random_tensor({2, 3, 4}, rng, false);
  auto y = mul(tape, x, Tensor<double>::full(x.shape(), 1.0));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Elementwise, ActivationsAtZero) {
  Tape<double> tape;
  auto z = Tensor<double>::scalar(0.0);
  EXPECT_EQ(sigmoid(tape, z).item(), 0.5);
  EXPECT_EQ(dllrnn::tanh(tape, z).item(), 0.0);
}

TEST(Elementwise, IncompatibleBroadcastThrows) {
  Tape<double> tape;
  EXPECT_THROW(add(tape, Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({3, 3})), DimensionError);
}

TEST(Elementwise, BroadcastGradientSumsOverSpatialAxis) {
  Rng rng(3);
  const std::size_t S = 3, T = 4, F = 5;
  auto temporal = random_tensor({1, T, F}, rng);
  auto spatial = random_tensor({S, T, F}, rng);
  auto upstream = random_tensor({S, T, F}, rng, false);
  auto loss = [&](Tape<double>& t) { return sum(t, mul(t, mul(t, temporal, spatial), upstream)); };
  auto r = gradcheck::check({{"temporal", temporal}, {"spatial", spatial}}, loss);
  EXPECT_LT(r.worst, 1e-6) << r.where;
  // Closed form: d/d temporal[t,f] = sum_s spatial[s,t,f] * upstream[s,t,f].
  for (std::size_t i = 0; i < T * F; ++i) {
    double expect = 0;
    for (std::size_t s = 0; s < S; ++s) expect += spatial[s * T * F + i] * upstream[s * T * F + i];
    EXPECT_NEAR(temporal.grad()[i], expect, 1e-12);
  }
}

TEST(Concat, SingleTensorIsUnchanged) {
  Tape<double> tape;
  Rng rng(4);
  auto x = random_tensor({2, 3}, rng, false);
  auto y = concat(tape, {x}, 0);
  EXPECT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Concat, DenseStackingAddsSpatialExtents) {
  Tape<double> tape;
  auto y = concat(tape, {Tensor<double>::zeros({8, 5, 64}), Tensor<double>::zeros({8, 5, 64})}, 0);
  EXPECT_EQ(y.shape(), (Shape{16, 5, 64}));
}

TEST(Concat, SliceRoundTripIsBitExact) {
  Tape<double> tape;
  Rng rng(5);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    Shape sa{2, 3, 4}, sb{2, 3, 4};
    sb[axis] = 5;
    auto a = random_tensor(sa, rng, false);
    auto b = random_tensor(sb, rng, false);
    auto c = concat(tape, {a, b}, axis);
    auto a2 = slice(tape, c, axis, 0, sa[axis]);
    auto b2 = slice(tape, c, axis, sa[axis], sa[axis] + sb[axis]);
    ASSERT_EQ(a2.shape(), a.shape());
    ASSERT_EQ(b2.shape(), b.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a2[i], a[i]);
    for (std::size_t i = 0; i < b.numel(); ++i) EXPECT_EQ(b2[i], b[i]);
  }
}

TEST(Concat, OffAxisMismatchThrows) {
  Tape<double> tape;
  EXPECT_THROW(concat(tape, {Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({2, 4})}, 0), DimensionError);
}

TEST(Backward, SumGivesOnes) {
  Rng rng(6);
  auto x = random_tensor({3, 2}, rng);
  Tape<double> tape;
  auto root = sum(tape, x);
  tape.backward(root);
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SumOfSquaresGivesTwoX) {
  Rng rng(7);
  auto x = random_tensor({4}, rng);
  Tape<double> tape;
  auto root = sum(tape, mul(tape, x, x));
  tape.backward(root);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2 * x[i]);
}

TEST(Backward, NonScalarRootIsContractError) {
  Tape<double> tape;
  auto x = Tensor<double>::zeros({2}, true);
  auto y = scale(tape, x, 2.0);
  EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Backward, RepeatedCallsAccumulate) {
  auto x = Tensor<double>::full({3}, 2.0, true);
  for (int k = 0; k < 2; ++k) {
    Tape<double> tape;
    auto root = sum(tape, mul(tape, x, x));
    tape.backward(root);
  }
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 8.0);
}

TEST(Backward, SumOfScalarsEqualsSeparatePasses) {
  Rng rng(8);
  auto x = random_tensor({5}, rng);
  auto f = [&](Tape<double>& t) { return sum(t, mul(t, x, x)); };
  auto g = [&](Tape<double>& t) { return sum(t, dllrnn::tanh(t, x)); };

  Tape<double> t1;
  auto joint = add(t1, f(t1), g(t1));
  t1.backward(joint);
  std::vector<double> together(x.grad().begin(), x.grad().end());

  x.zero_grad();
  for (const std::function<Tensor<double>(Tape<double>&)>& part : {std::function<Tensor<double>(Tape<double>&)>(f), std::function<Tensor<double>(Tape<double>&)>(g)}) {
    Tape<double> t;
    auto r = part(t);
    t.backward(r);
  }
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(together[i], x.grad()[i], 1e-14);
}

TEST(Tape, OutputCannotBeRecordedTwice) {
  Tape<double> tape;
  auto y = Tensor<double>::zeros({1}, true);
  tape.record(y, [] {});
  EXPECT_THROW(tape.record(y, [] {}), ContractError);
}

// Randomized op/shape draws: every differentiable op against central
// differences, and inputs left untouched by the forward pass.
TEST(TensorProperty, RandomOpsMatchFiniteDifferences) {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    auto ext = [&] { return static_cast<std::size_t>(rng.uniform_int(1, 6)); };
    const int op = static_cast<int>(rng.uniform_int(0, 7));
    const std::size_t m = ext(), k = ext(), n = ext();
    std::vector<std::pair<std::string, Tensor<double>>> wrt;
    std::function<Tensor<double>(Tape<double>&)> build;
    auto weights = random_tensor({m, n}, rng, false);  // random projection so sum() is not degenerate
    auto project = [weights](Tape<double>& t, const Tensor<double>& y) { return sum(t, mul(t, y, weights)); };
    switch (op) {
      case 0: {
        auto a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
        wrt = {{"a", a}, {"b", b}};
        build = [=](Tape<double>& t) { return project(t, matmul(t, a, b)); };
        break;
      }
      case 1:
      case 2: {
        auto a = random_tensor({m, n}, rng), b = random_tensor({1, n}, rng);
        wrt = {{"a", a}, {"b", b}};
        const bool is_add = op == 1;
        build = [=](Tape<double>& t) { return project(t, is_add ? add(t, a, b) : mul(t, a, b)); };
        break;
      }
      case 3:
      case 4: {
        auto a = random_tensor({m, n}, rng);
        wrt = {{"a", a}};
        const bool is_sig = op == 3;
        build = [=](Tape<double>& t) { return project(t, is_sig ? sigmoid(t, a) : dllrnn::tanh(t, a)); };
        break;
      }
      case 5: {
        auto a = random_tensor({m, k}, rng), b = random_tensor({m, n}, rng);
        wrt = {{"a", a}, {"b", b}};
        build = [=](Tape<double>& t) { return project(t, slice(t, concat(t, {a, b}, 1), 1, k, k + n)); };
        break;
      }
      case 6: {
        auto a = random_tensor({n, m}, rng);
        wrt = {{"a", a}};
        build = [=](Tape<double>& t) { return project(t, reshape(t, scale(t, a, 1.7), Shape{m, n})); };
        break;
      }
      default: {
        auto a = random_tensor({m, n}, rng);
        wrt = {{"a", a}};
        build = [=](Tape<double>& t) { return sum(t, mul(t, a, a)); };
        break;
      }
    }
    std::vector<std::vector<double>> before;
    for (const auto& [name, t] : wrt) before.emplace_back(t.data().begin(), t.data().end());
    {
      Tape<double> tape;
      build(tape);
    }
    for (std::size_t i = 0; i < wrt.size(); ++i) {
      ASSERT_TRUE(std::equal(before[i].begin(), before[i].end(), wrt[i].second.data().begin()))
          << "op " << op << " mutated its input";
    }
    auto r = gradcheck::check(wrt, build, 1e-5);
    EXPECT_LT(r.worst, 1e-4) << "trial " << trial << " op " << op << " at " << r.where;
  }
}
