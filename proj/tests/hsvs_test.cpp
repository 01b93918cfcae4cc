#include <gtest/gtest.h>

#include "ssvp/hsvs.hpp"
#include "test_util.hpp"

using namespace ssvp;
using namespace ssvp::testing;

namespace {

Var c(Tensor t) { return nc::constant(std::move(t)); }

AtfParams random_atf(std::size_t dc, std::size_t dd, std::size_t dh, Rng& rng, bool zero_out) {
  AtfParams p = make_atf(dc, dd, dh, 2 * dh, rng, "atf");
  if (!zero_out) {
    std::normal_distribution<double> n(0.0, 0.3);
    for (auto* v : {&p.mlp.fc2.weight, &p.mlp.fc2.bias}) {
      for (auto& x : v->mutable_value().storage()) x = n(rng);
    }
  }
  return p;
}

}  // namespace

TEST(Atf, ZeroOutputLayerIsResidualIdentity) {
  Rng rng(1);
  const AtfParams p = make_atf(8, 6, 4, 8, rng, "atf");
  const Tensor fc = gaussian_tensor({5, 8}, rng);
  Tape t;
  EXPECT_EQ(atf_fuse(t, c(fc), c(gaussian_tensor({5, 6}, rng)), p).value(), fc);
}

TEST(Atf, SingleTokenUsesValueProjections) {
  Rng rng(2);
  const AtfParams p = random_atf(8, 6, 4, rng, false);
  const Tensor fc = gaussian_tensor({1, 8}, rng);
  const Tensor fd = gaussian_tensor({1, 6}, rng);
  Tape t;
  const Tensor got = atf_fuse(t, c(fc), c(fd), p).value();
  // One token: both attention rows are 1, so each path is just the value projection.
  const Var a = t.layer_norm(t.matmul(c(fd), p.wv_d), p.ln_cd_gain, p.ln_cd_bias);
  const Var b = t.layer_norm(t.matmul(c(fc), p.wv_c), p.ln_dc_gain, p.ln_dc_bias);
  const Var want = t.add(c(fc), p.mlp.forward(t, t.concat(a, b, 1)));
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want.value()[i], 1e-12);
}

TEST(Atf, PermutationEquivariant) {
  Rng rng(3);
  const AtfParams p = random_atf(8, 6, 4, rng, false);
  const Tensor fc = gaussian_tensor({5, 8}, rng);
  const Tensor fd = gaussian_tensor({5, 6}, rng);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  auto permute = [&](const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t r = 0; r < perm.size(); ++r) {
      for (std::size_t k = 0; k < x.cols(); ++k) y.at(r, k) = x.at(perm[r], k);
    }
    return y;
  };
  Tape t;
  const Tensor out = atf_fuse(t, c(fc), c(fd), p).value();
  const Tensor out_p = atf_fuse(t, c(permute(fc)), c(permute(fd)), p).value();
  const Tensor want = permute(out);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out_p[i], want[i], 1e-12);
}

TEST(Atf, DimensionMismatchThrows) {
  Rng rng(4);
  const AtfParams p = make_atf(8, 6, 4, 8, rng, "atf");
  Tape t;
  EXPECT_THROW(atf_fuse(t, c(Tensor({3, 7})), c(Tensor({3, 6})), p), nc::ShapeError);
  EXPECT_THROW(atf_fuse(t, c(Tensor({3, 8})), c(Tensor({2, 6})), p), nc::ShapeError);
}

TEST(Hsvs, ZeroInitIsIdentityOnClip) {
  Rng rng(5);
  const HsvsParams p = make_hsvs(1, 8, 6, 4, 8, rng);
  std::mt19937_64 g(5);
  const FeatureBundle b = random_bundle(1, {2, 3}, 8, 6, g);
  Tape t;
  const SynergyFeatures s = hsvs_forward(t, bundle_inputs(b), p);
  EXPECT_EQ(s.v_locals[0].value(), b.clip_locals[0].to_f64());
  EXPECT_EQ(s.v_global.value().storage(), b.clip_global.to_f64().storage());
}

TEST(Hsvs, OutputShapes) {
  Rng rng(6);
  const HsvsParams p = make_hsvs(4, 16, 12, 4, 8, rng);
  std::mt19937_64 g(6);
  const FeatureBundle b = random_bundle(4, {3, 3}, 16, 12, g);
  Tape t;
  const SynergyFeatures s = hsvs_forward(t, bundle_inputs(b), p);
  ASSERT_EQ(s.v_locals.size(), 4u);
  for (const auto& v : s.v_locals) EXPECT_EQ(v.shape(), (nc::Shape{9, 16}));
  EXPECT_EQ(s.v_global.value().size(), 16u);
}

TEST(Hsvs, LayerCountMismatchThrows) {
  Rng rng(7);
  const HsvsParams p = make_hsvs(2, 8, 6, 4, 8, rng);
  std::mt19937_64 g(7);
  const FeatureBundle b = random_bundle(3, {2, 2}, 8, 6, g);
  Tape t;
  EXPECT_THROW(hsvs_forward(t, bundle_inputs(b), p), std::invalid_argument);
}

TEST(Hsvs, GlobalIgnoresLocalPatches) {
  Rng rng(8);
  HsvsParams p = make_hsvs(2, 8, 6, 4, 8, rng);
  for (auto& v : p.global.mlp.fc2.weight.mutable_value().storage()) v = 0.1;
  std::mt19937_64 g(8);
  FeatureBundle b = random_bundle(2, {2, 2}, 8, 6, g);
  Tape t;
  const Tensor before = hsvs_forward(t, bundle_inputs(b), p).v_global.value();
  for (auto& v : b.clip_locals[1].data) v += 1.0f;
  for (auto& v : b.dino_locals[0].data) v -= 2.0f;
  EXPECT_EQ(hsvs_forward(t, bundle_inputs(b), p).v_global.value(), before);
}

TEST(Atf, InputGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const AtfParams p = random_atf(5, 4, 3, rng, false);
    const ScalarFn f = [&](Tape& t, const std::vector<Var>& v) {
      const Var out = atf_fuse(t, v[0], v[1], p);
      return t.sum(t.mul(out, out));
    };
    EXPECT_LT(fd_error(f, {gaussian_tensor({4, 5}, rng), gaussian_tensor({4, 4}, rng)}), 1e-4);
  }
}
