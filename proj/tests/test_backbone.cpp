#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "cosegnet/backbone.hpp"
#include "oracles.hpp"

using namespace coseg;

TEST(Backbone, DefaultPyramidShapes) {
  Rng rng(0);
  Backbone b = Backbone::make(BackboneConfig{}, rng);
  std::mt19937_64 r(1);
  FeaturePyramid p = b(oracle::random_tensor({64, 64, 3}, r, 0.0, 1.0));
  const Shape expect[4] = {{16, 16, 16}, {8, 8, 32}, {4, 4, 64}, {2, 2, 128}};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(p.levels[i].dims(), expect[i]);
  EXPECT_EQ(p.lowest().dims(), expect[3]);
  EXPECT_EQ(p.fused.dims(), (Shape{16, 16, 64}));
}

TEST(Backbone, ShapeContractOverRandomConfigs) {
  std::mt19937_64 r(2);
  std::uniform_int_distribution<std::size_t> ch(1, 6), conv(1, 3), side(1, 3), wr(1, 9);
  for (int t = 0; t < 12; ++t) {
    BackboneConfig cfg;
    for (auto& c : cfg.stage_channels) c = ch(r);
    cfg.fused_channels = ch(r);
    cfg.convs_per_stage = conv(r);
    cfg.working_h = wr(r);
    cfg.working_w = wr(r);
    Rng rng(static_cast<std::uint64_t>(t));
    Backbone b = Backbone::make(cfg, rng);
    const std::size_t h = 32 * side(r), w = 32 * side(r);
    FeaturePyramid p = b(oracle::random_tensor({h, w, 3}, r, 0.0, 1.0));
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_EQ(p.levels[i].dims(), (Shape{h >> (i + 2), w >> (i + 2), cfg.stage_channels[i]}));
    }
    EXPECT_EQ(p.fused.dims(), (Shape{cfg.working_h, cfg.working_w, cfg.fused_channels}));
  }
}

TEST(Backbone, IndivisibleExtentsRejected) {
  Rng rng(3);
  Backbone b = Backbone::make(BackboneConfig{}, rng);
  EXPECT_THROW(b.extract_pyramid(Tensor(Shape{48, 64, 3})), ValidationError);
  EXPECT_THROW(b.extract_pyramid(Tensor(Shape{64, 64, 1})), ShapeError);
  BackboneConfig bad;
  bad.stage_channels[2] = 0;
  EXPECT_THROW(Backbone::make(bad, rng), ConfigError);
}

TEST(Backbone, ZeroImageZeroBiasGivesZeroLevels) {
  Rng rng(4);
  Backbone b = Backbone::make(BackboneConfig{}, rng);
  auto lv = b.extract_pyramid(Tensor(Shape{64, 64, 3}, 0.0));
  for (const Tensor& t : lv)
    for (double v : t.data()) EXPECT_EQ(v, 0.0);
  const Tensor kept = b.fuse_features(lv);
  for (double v : kept.data()) EXPECT_EQ(v, 0.0);
}

TEST(Backbone, DeterministicForFixedSeed) {
  std::mt19937_64 r(5);
  Tensor img = oracle::random_tensor({64, 64, 3}, r, 0.0, 1.0);
  Rng a(7), b(7);
  FeaturePyramid pa = Backbone::make(BackboneConfig{}, a)(img);
  FeaturePyramid pb = Backbone::make(BackboneConfig{}, b)(img);
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_EQ(std::memcmp(pa.levels[i].ptr(), pb.levels[i].ptr(), pa.levels[i].size() * sizeof(double)), 0);
  EXPECT_EQ(std::memcmp(pa.fused.ptr(), pb.fused.ptr(), pa.fused.size() * sizeof(double)), 0);
}

TEST(FuseFeatures, SingleLevelIsResampledThenNormalised) {
  BackboneConfig cfg;
  cfg.stage_channels = {2, 2, 2, 2};
  cfg.fused_channels = 2;
  cfg.working_h = cfg.working_w = 6;
  Rng rng(8);
  Backbone b = Backbone::make(cfg, rng);
  for (std::size_t s = 0; s < 4; ++s) {
    b.fuse[s].kernel = Tensor(Shape{1, 1, 2, 2}, std::vector<double>{1, 0, 0, 1});
    for (double& v : b.fuse[s].bias.data()) v = 0.0;
  }
  std::mt19937_64 r(9);
  std::array<Tensor, 4> lv;
  for (std::size_t s = 0; s < 4; ++s) lv[s] = Tensor(Shape{8u >> s, 8u >> s, 2}, 0.0);
  lv[1] = oracle::random_tensor({4, 4, 2}, r, 0.1, 1.0);
  Tensor fused = b.fuse_features(lv);
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 6; ++x) {
      const double a = oracle::bilinear_at(lv[1], y, x, 6, 6, 0), c = oracle::bilinear_at(lv[1], y, x, 6, 6, 1);
      const double n = std::sqrt(a * a + c * c + 1e-12);
      EXPECT_NEAR(fused[(y * 6 + x) * 2], a / n, 1e-12);
      EXPECT_NEAR(fused[(y * 6 + x) * 2 + 1], c / n, 1e-12);
    }
}

TEST(FuseFeatures, NonzeroPositionsAreUnitNorm) {
  Rng rng(10);
  Backbone b = Backbone::make(BackboneConfig{}, rng);
  std::mt19937_64 r(11);
  std::array<Tensor, 4> lv;
  const std::size_t ch[4] = {16, 32, 64, 128};
  for (std::size_t s = 0; s < 4; ++s) lv[s] = oracle::random_tensor({16u >> s, 16u >> s, ch[s]}, r);
  Tensor fused = b.fuse_features(lv);
  for (std::size_t p = 0; p < 256; ++p) {
    double n = 0.0;
    for (std::size_t c = 0; c < 64; ++c) n += fused[p * 64 + c] * fused[p * 64 + c];
    if (n > 0) {
      EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
    }
  }
}

TEST(Backbone, GradientReachesEveryParameter) {
  BackboneConfig cfg;
  cfg.stage_channels = {4, 4, 4, 4};
  cfg.fused_channels = 4;
  cfg.working_h = cfg.working_w = 4;
  Rng rng(12);
  Backbone b = Backbone::make(cfg, rng);
  ParameterSet params;
  b.register_into(params, "backbone");
  std::mt19937_64 r(13);
  Tensor img = oracle::random_tensor({32, 32, 3}, r, 0.0, 1.0);
  Graph g;
  {
    GraphScope scope(g);
    FeaturePyramid p = b(img);
    Tensor w = oracle::random_tensor({4, 4, 4}, r);
    Tensor loss = ops::sum(ops::mul(p.fused, w));
    for (const Tensor& lv : p.levels) loss = ops::add(loss, ops::mean(lv));
    g.backward(loss);
  }
  for (const auto& [name, t] : params.entries()) {
    ASSERT_TRUE(t.has_grad()) << name;
    double n = 0.0;
    for (double v : t.grad()) n += v * v;
    EXPECT_GT(n, 0.0) << name;
  }
}
