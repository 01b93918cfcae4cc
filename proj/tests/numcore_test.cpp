#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ssvp/numcore/adam.hpp"
#include "test_util.hpp"

using namespace ssvp;
using namespace ssvp::testing;

namespace {

Var c(Tensor t) { return nc::constant(std::move(t)); }

}  // namespace

TEST(Matmul, IdentityAndZero) {
  Tape t;
  const auto i2 = c(Tensor::matrix({{1, 0}, {0, 1}}));
  const auto a = c(Tensor::matrix({{1, 2}, {3, 4}}));
  EXPECT_EQ(t.matmul(i2, a).value(), a.value());
  EXPECT_EQ(t.matmul(c(Tensor::matrix({{1, 0}})), c(Tensor::matrix({{0}, {5}}))).value(),
            Tensor::matrix({{0}}));
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(11);
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({4, 2}, rng);
  Tape t;
  const Tensor got = t.matmul(c(a), c(b)).value();
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
      EXPECT_NEAR(got.at(i, j), s, 1e-15);
    }
  }
}

TEST(Matmul, ShapeMismatchThrows) {
  Tape t;
  EXPECT_THROW(t.matmul(c(Tensor({2, 3})), c(Tensor({2, 3}))), nc::ShapeError);
}

TEST(Softmax, Examples) {
  Tape t;
  const Tensor u = t.softmax(c(Tensor::vector({0, 0, 0}))).value();
  for (double v : u.storage()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  for (double shift : {-50.0, 0.0, 7.5}) {
    const Tensor s = t.softmax(c(Tensor::vector({shift, shift + std::log(3.0)}))).value();
    EXPECT_NEAR(s[0], 0.25, 1e-15);
    EXPECT_NEAR(s[1], 0.75, 1e-15);
  }
}

TEST(Softmax, MatchesFormulaAndSumsToOne) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_tensor({4, 7}, rng, -5, 5);
    Tape t;
    const Tensor s = t.softmax(c(x), 1).value();
    const Tensor shifted = t.softmax(t.add_scalar(c(x), 3.25), 1).value();
    for (std::size_t r = 0; r < 4; ++r) {
      double z = 0, sum = 0;
      for (std::size_t j = 0; j < 7; ++j) z += std::exp(x.at(r, j));
      for (std::size_t j = 0; j < 7; ++j) {
        EXPECT_NEAR(s.at(r, j), std::exp(x.at(r, j)) / z, 1e-12);
        EXPECT_NEAR(shifted.at(r, j), s.at(r, j), 1e-12);
        sum += s.at(r, j);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(LayerNorm, Examples) {
  Tape t;
  const auto g = c(Tensor({4}, 1.0));
  const auto b = c(Tensor({4}, 0.0));
  const Tensor flat = t.layer_norm(c(Tensor::vector({1, 1, 1, 1})), g, b).value();
  for (double v : flat.storage()) EXPECT_EQ(v, 0.0);
  const Tensor y = t.layer_norm(c(Tensor::vector({-1, 1})), c(Tensor({2}, 1.0)), c(Tensor({2}, 0.0)), 0.0).value();
  EXPECT_DOUBLE_EQ(y[0], -1.0);
  EXPECT_DOUBLE_EQ(y[1], 1.0);
}

TEST(LayerNorm, Moments) {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({1, 16}, rng, -3, 3);
  double mean = 0, var = 0;
  for (double v : x.storage()) mean += v / 16;
  for (double v : x.storage()) var += (v - mean) * (v - mean) / 16;
  Tape t;
  for (double eps : {nc::kLayerNormEps, 1e-15}) {
    const Tensor y = t.layer_norm(c(x), c(Tensor({16}, 1.0)), c(Tensor({16}, 0.0)), eps).value();
    double m = 0, s = 0;
    for (double v : y.storage()) m += v / 16;
    for (double v : y.storage()) s += (v - m) * (v - m) / 16;
    EXPECT_LT(std::abs(m), 1e-12);
    EXPECT_NEAR(s, var / (var + eps), 1e-9);
  }
}

TEST(Elementwise, Examples) {
  Tape t;
  EXPECT_EQ(t.sigmoid(c(Tensor::scalar(0))).item(), 0.5);
  const Tensor v = Tensor::vector({0.3, -2, 5});
  EXPECT_NEAR(t.cosine(c(v), c(v)).item(), 1.0, 1e-15);
  EXPECT_EQ(t.cosine(c(Tensor::vector({1, 0})), c(Tensor::vector({0, 1}))).item(), 0.0);
  EXPECT_EQ(t.cosine(c(Tensor::vector({0, 0})), c(Tensor::vector({0, 1}))).item(), 0.0);
  EXPECT_NEAR(t.gelu(c(Tensor::scalar(1.0))).item(), 0.5 * (1 + std::erf(1 / std::sqrt(2.0))), 1e-15);
}

TEST(Elementwise, NonFiniteNamesTheOp) {
  Tape t;
  try {
    t.log(c(Tensor::scalar(-1.0)));
    FAIL();
  } catch (const nc::NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("log"), std::string::npos);
  }
  EXPECT_THROW(t.exp(c(Tensor::scalar(1000.0))), nc::NumericError);
}

TEST(Backward, Examples) {
  auto x = nc::parameter(Tensor::scalar(3.0));
  {
    Tape t;
    t.backward(t.square(x));
    EXPECT_DOUBLE_EQ(x.grad().item(), 6.0);
  }
  std::mt19937_64 rng(1);
  auto y = nc::parameter(random_tensor({1, 5}, rng));
  Tape t;
  t.backward(t.sum(t.softmax(y)));
  const Tensor gy = y.grad();
  for (double g : gy.storage()) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(Backward, SecondCallThrows) {
  auto x = nc::parameter(Tensor::scalar(2.0));
  Tape t;
  const Var l = t.square(x);
  t.backward(l);
  EXPECT_THROW(t.backward(l), std::logic_error);
}

TEST(Backward, RequiresScalarLoss) {
  auto x = nc::parameter(Tensor::vector({1, 2}));
  Tape t;
  EXPECT_THROW(t.backward(t.square(x)), std::invalid_argument);
}

TEST(Backward, ReverseOrderAndAccumulation) {
  auto x = nc::parameter(Tensor::scalar(2.0));
  Tape t;
  const Var y = t.mul(x, x);
  const Var z = t.add(y, t.scale(x, 3.0));
  EXPECT_EQ(t.op_names(), (std::vector<std::string>{"mul", "scale", "add"}));
  t.backward(z);
  EXPECT_DOUBLE_EQ(x.grad().item(), 7.0);
}

TEST(Backward, StopGradientBlocks) {
  auto x = nc::parameter(Tensor::scalar(2.0));
  Tape t;
  t.backward(t.mul(x, t.stop_gradient(x)));
  EXPECT_DOUBLE_EQ(x.grad().item(), 2.0);
}

TEST(Backward, ConstantsGetNoGradient) {
  auto x = nc::constant(Tensor::scalar(2.0));
  auto w = nc::parameter(Tensor::scalar(1.5));
  Tape t;
  t.backward(t.mul(x, w));
  EXPECT_FALSE(x.has_grad());
  EXPECT_DOUBLE_EQ(w.grad().item(), 2.0);
}

struct OpCase {
  const char* name;
  std::vector<nc::Shape> shapes;
  std::function<Var(Tape&, const std::vector<Var>&)> op;
  double lo = -1.0, hi = 1.0;
};

class OpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  const OpCase& oc = GetParam();
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed * 7919 + 17);
    std::vector<Tensor> in;
    for (const auto& s : oc.shapes) in.push_back(random_tensor(s, rng, oc.lo, oc.hi));
    // Project the output onto a fixed random direction to get a scalar loss.
    Tape probe;
    std::vector<Var> pv;
    for (const auto& x : in) pv.push_back(nc::constant(x));
    const Tensor w = random_tensor(oc.op(probe, pv).shape(), rng);
    const ScalarFn f = [&](Tape& t, const std::vector<Var>& v) {
      return t.sum(t.mul(oc.op(t, v), nc::constant(w)));
    };
    worst = std::max(worst, fd_error(f, in));
  }
  EXPECT_LT(worst, 1e-4) << oc.name;
}

std::vector<OpCase> op_cases() {
  using V = const std::vector<Var>&;
  return {
      {"matmul", {{3, 4}, {4, 2}}, [](Tape& t, V v) { return t.matmul(v[0], v[1]); }},
      {"matmul_nt", {{3, 4}, {2, 4}}, [](Tape& t, V v) { return t.matmul_nt(v[0], v[1]); }},
      {"transpose", {{3, 2}}, [](Tape& t, V v) { return t.transpose(v[0]); }},
      {"add", {{2, 3}, {2, 3}}, [](Tape& t, V v) { return t.add(v[0], v[1]); }},
      {"sub", {{2, 3}, {2, 3}}, [](Tape& t, V v) { return t.sub(v[0], v[1]); }},
      {"mul", {{2, 3}, {2, 3}}, [](Tape& t, V v) { return t.mul(v[0], v[1]); }},
      {"add_row", {{3, 4}, {4}}, [](Tape& t, V v) { return t.add_row(v[0], v[1]); }},
      {"scale", {{2, 2}}, [](Tape& t, V v) { return t.scale(v[0], -1.7); }},
      {"add_scalar", {{2, 2}}, [](Tape& t, V v) { return t.add_scalar(v[0], 0.3); }},
      {"mul_scalar", {{2, 3}, {1}}, [](Tape& t, V v) { return t.mul_scalar(v[0], v[1]); }},
      {"exp", {{2, 3}}, [](Tape& t, V v) { return t.exp(v[0]); }},
      {"log", {{2, 3}}, [](Tape& t, V v) { return t.log(v[0]); }, 0.2, 2.0},
      {"pow", {{2, 3}}, [](Tape& t, V v) { return t.pow(v[0], 2.5); }, 0.2, 2.0},
      {"square", {{2, 3}}, [](Tape& t, V v) { return t.square(v[0]); }},
      {"relu", {{3, 3}}, [](Tape& t, V v) { return t.relu(v[0]); }},
      {"clamp", {{3, 3}}, [](Tape& t, V v) { return t.clamp(v[0], -0.5, 0.5); }},
      {"gelu", {{2, 3}}, [](Tape& t, V v) { return t.gelu(v[0]); }, -3, 3},
      {"sigmoid", {{2, 3}}, [](Tape& t, V v) { return t.sigmoid(v[0]); }, -3, 3},
      {"softmax_rows", {{3, 4}}, [](Tape& t, V v) { return t.softmax(v[0], 1); }, -3, 3},
      {"softmax_cols", {{3, 4}}, [](Tape& t, V v) { return t.softmax(v[0], 0); }, -3, 3},
      {"layer_norm", {{3, 5}, {5}, {5}}, [](Tape& t, V v) { return t.layer_norm(v[0], v[1], v[2]); }},
      {"reshape", {{2, 3}}, [](Tape& t, V v) { return t.reshape(v[0], {3, 2}); }},
      {"concat0", {{2, 3}, {1, 3}}, [](Tape& t, V v) { return t.concat(v[0], v[1], 0); }},
      {"concat1", {{2, 3}, {2, 2}}, [](Tape& t, V v) { return t.concat(v[0], v[1], 1); }},
      {"slice_rows", {{4, 3}}, [](Tape& t, V v) { return t.slice_rows(v[0], 1, 3); }},
      {"slice_cols", {{3, 4}}, [](Tape& t, V v) { return t.slice_cols(v[0], 1, 3); }},
      {"sum", {{2, 3}}, [](Tape& t, V v) { return t.sum(v[0]); }},
      {"mean", {{2, 3}}, [](Tape& t, V v) { return t.mean(v[0]); }},
      {"sum_axis0", {{3, 2}}, [](Tape& t, V v) { return t.sum(v[0], 0); }},
      {"mean_axis1", {{3, 2}}, [](Tape& t, V v) { return t.mean(v[0], 1); }},
      {"max_axis1", {{3, 4}}, [](Tape& t, V v) { return t.max(v[0], 1); }},
      {"topk_mean", {{3, 4}}, [](Tape& t, V v) { return t.topk_mean(v[0], 3); }},
      {"cosine_rows", {{3, 4}, {2, 4}}, [](Tape& t, V v) { return t.cosine_rows(v[0], v[1]); }},
      {"cosine", {{2, 3}, {2, 3}}, [](Tape& t, V v) { return t.cosine(v[0], v[1]); }},
      {"bce_pos", {{1}}, [](Tape& t, V v) { return t.bce_with_logits(v[0], 1.0); }, -4, 4},
      {"bce_neg", {{1}}, [](Tape& t, V v) { return t.bce_with_logits(v[0], 0.0); }, -4, 4},
  };
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::ValuesIn(op_cases()),
                         [](const auto& info) { return std::string(info.param.name); });

TEST(Adam, ZeroGradientLeavesParams) {
  std::vector<double> p{1.0, -2.0};
  nc::AdamState s;
  nc::adam_step(p, std::vector<double>{0.0, 0.0}, s, {});
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
}

TEST(Adam, DescendsOnQuadratic) {
  std::vector<double> x{1.0};
  nc::AdamState s;
  nc::adam_step(x, std::vector<double>{2.0 * x[0]}, s, {0.1});
  EXPECT_LT(x[0] * x[0], 1.0);
}

TEST(Adam, TwoStepTrace) {
  const nc::AdamHyper hp{0.01, 0.9, 0.999, 1e-8};
  std::vector<double> x{0.5};
  nc::AdamState s;
  const double g1 = 1.0, g2 = -0.5;
  nc::adam_step(x, std::vector<double>{g1}, s, hp);
  nc::adam_step(x, std::vector<double>{g2}, s, hp);
  double m = 0, v = 0, ref = 0.5;
  int t = 0;
  for (double g : {g1, g2}) {
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    ref -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
  }
  EXPECT_NEAR(x[0], ref, 1e-15);
  EXPECT_EQ(s.t, 2);
}

TEST(Adam, RejectsNonPositiveLr) {
  std::vector<double> x{1.0};
  nc::AdamState s;
  EXPECT_THROW(nc::adam_step(x, std::vector<double>{1.0}, s, {0.0}), std::invalid_argument);
}

TEST(Schedule, CosineDecay) {
  EXPECT_DOUBLE_EQ(nc::cosine_decay(0.1, 0, 100), 0.1);
  EXPECT_NEAR(nc::cosine_decay(0.1, 50, 100), 0.05, 1e-15);
  EXPECT_NEAR(nc::cosine_decay(0.1, 100, 100), 0.0, 1e-15);
  for (int s = 0; s <= 100; s += 7) {
    EXPECT_NEAR(nc::cosine_decay(2.0, s, 100), 2.0 * 0.5 * (1 + std::cos(std::numbers::pi * s / 100)), 1e-15);
  }
}

TEST(Schedule, ClipGradNorm) {
  auto a = nc::parameter(Tensor::vector({3.0}));
  auto b = nc::parameter(Tensor::vector({4.0}));
  Tape t;
  t.backward(t.add(t.scale(t.sum(a), 3.0), t.scale(t.sum(b), 4.0)));
  std::vector<Var> ps{a, b};
  EXPECT_DOUBLE_EQ(nc::clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(b.grad()[0], 0.8, 1e-15);
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  std::mt19937_64 rng(9);
  const Tensor a = random_tensor({5, 6}, rng);
  const Tensor b = random_tensor({6, 3}, rng);
  Tape t1, t2;
  EXPECT_EQ(t1.softmax(t1.matmul(c(a), c(b))).value(), t2.softmax(t2.matmul(c(a), c(b))).value());
}
