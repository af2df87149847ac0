#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cosegnet/grad_check.hpp"
#include "cosegnet/model.hpp"
#include "cosegnet/nn.hpp"

// Finite-difference checks over every differentiable op and the full
// multi-task loss on a small group, shared by the CLI and the tests.
namespace coseg {

struct GradCase {
  std::string name;
  GradCheckResult result;
};

namespace detail {

inline Tensor suite_random(Shape dims, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return uniform_tensor(std::move(dims), lo, hi, rng);
}

// Keeps relu inputs clear of the kink.
inline Tensor suite_nudged(Shape dims, Rng& rng) {
  Tensor t = suite_random(std::move(dims), rng);
  for (double& v : t.data()) v += v >= 0 ? 0.05 : -0.05;
  return t;
}

inline Tensor suite_weigh(const Tensor& y, const Tensor& w) { return ops::sum(ops::mul(y, w)); }

}  // namespace detail

// Configuration of the toy model used for the full-loss check: 2 images of
// 32 x 32, narrow layers so that every parameter can be perturbed.
inline TrainConfig grad_suite_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.group_size = 2;
  cfg.image_size = 32;
  cfg.backbone.stage_channels = {3, 3, 4, 4};
  cfg.backbone.fused_channels = 3;
  cfg.backbone.working_h = cfg.backbone.working_w = 4;
  cfg.backbone.convs_per_stage = 1;
  cfg.sp_channels = 2;
  cfg.head_channels = 2;
  cfg.spectral_tol = 1e-12;
  cfg.spectral_max_iter = 100000;
  return cfg;
}

inline GradCase full_loss_grad_case(std::uint64_t seed, double step = 1e-5) {
  const TrainConfig cfg = grad_suite_config(seed);
  CoSegNet model(cfg, 3);
  Rng rng(seed + 1);
  // Small random biases move relu pre-activations off zero.
  for (const auto& [name, t] : model.parameters().entries()) {
    if (name.ends_with(".bias")) {
      Tensor b = t;
      for (double& v : b.data()) v = std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
    }
  }
  std::vector<Tensor> images{detail::suite_random({32, 32, 3}, rng, 0.0, 1.0),
                             detail::suite_random({32, 32, 3}, rng, 0.0, 1.0)};
  std::vector<Tensor> masks;
  for (int n = 0; n < 2; ++n) {
    Tensor m(Shape{32, 32}, 0.0);
    for (std::size_t y = 8; y < 20; ++y)
      for (std::size_t x = 6 + 4 * n; x < 22; ++x) m[y * 32 + x] = 1.0;
    masks.push_back(m);
  }
  spatial::SpectralSolution frozen;
  {
    NoGradScope no_grad;
    frozen = model.forward(images).solution;
  }
  auto f = [&] {
    GroupOutput out = model.forward(images, &frozen);
    return model.loss(out, masks, std::size_t{1}).total;
  };
  std::vector<Tensor> inputs;
  for (const auto& e : model.parameters().entries()) inputs.push_back(e.second);
  return {"multi_task_loss", grad_check(f, inputs, step)};
}

inline std::vector<GradCase> run_grad_suite(std::uint64_t seed = 0) {
  using detail::suite_nudged;
  using detail::suite_random;
  using detail::suite_weigh;
  Rng rng(seed);
  std::vector<GradCase> cases;
  auto add = [&](std::string name, const std::function<Tensor()>& f, std::vector<Tensor> in) {
    cases.push_back({std::move(name), grad_check(f, std::move(in))});
  };

  {
    Tensor in = suite_nudged({6, 6, 2}, rng), k = suite_random({3, 3, 2, 3}, rng), b = suite_random({3}, rng);
    Tensor w = suite_random({3, 3, 3}, rng);
    add("conv2d", [=] { return suite_weigh(ops::conv2d(in, k, b, 2, 1), w); }, {in, k, b});
    add("conv2d_relu_sum", [=] { return ops::sum(ops::relu(ops::conv2d(in, k, b, 1, 1))); }, {in, k, b});
  }
  {
    Tensor x = suite_random({3, 4, 2}, rng), wu = suite_random({7, 9, 2}, rng), wd = suite_random({2, 2, 2}, rng);
    add("resample_bilinear_up", [=] { return suite_weigh(ops::resample(x, 7, 9, ops::ResampleMode::bilinear), wu); }, {x});
    add("resample_bilinear_down", [=] { return suite_weigh(ops::resample(x, 2, 2, ops::ResampleMode::bilinear), wd); }, {x});
    add("resample_nearest", [=] { return suite_weigh(ops::resample(x, 7, 9, ops::ResampleMode::nearest), wu); }, {x});
  }
  {
    Tensor a = suite_random({2, 3, 4}, rng), b = suite_random({2, 3, 4}, rng), ch = suite_random({4}, rng);
    Tensor g = suite_random({4}, rng), s = suite_random({2, 3}, rng), w = suite_random({2, 3, 4}, rng);
    add("add", [=] { return suite_weigh(ops::add(a, ch), w); }, {a, ch});
    add("mul", [=] { return suite_weigh(ops::mul(a, b), w); }, {a, b});
    add("scale_shift", [=] { return suite_weigh(ops::scale_shift(a, g, s), w); }, {a, g, s});
    Tensor r = suite_nudged({2, 3, 4}, rng);
    add("relu", [=] { return suite_weigh(ops::relu(r), w); }, {r});
    Tensor z = suite_random({2, 3, 4}, rng, -6.0, 6.0);
    add("sigmoid", [=] { return suite_weigh(ops::sigmoid(z), w); }, {z});
    add("l2_normalize_positions", [=] { return suite_weigh(ops::l2_normalize_positions(a), w); }, {a});
  }
  {
    Tensor a = suite_random({3, 4}, rng), b = suite_random({4, 2}, rng), w = suite_random({2, 3}, rng);
    Tensor c = suite_random({1, 2}, rng), wc = suite_random({4, 2}, rng);
    add("matmul_transpose", [=] { return suite_weigh(ops::transpose(ops::matmul(a, b)), w); }, {a, b});
    add("concat_reshape", [=] {
      return suite_weigh(ops::reshape(ops::concat({ops::matmul(a, b), c}), Shape{4, 2}), wc);
    }, {a, b, c});
  }
  {
    Tensor f = suite_random({3, 4, 3}, rng), w = suite_random({3, 3}, rng);
    add("covariance", [=] { return suite_weigh(ops::covariance(f, true), w); }, {f});
    add("second_moment", [=] { return suite_weigh(ops::covariance(f, false), w); }, {f});
  }
  {
    Tensor p = suite_random({4, 4}, rng, 0.05, 0.95), t(Shape{4, 4});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = i % 3 == 0 ? 1.0 : 0.0;
    add("segmentation_loss", [=] { return segmentation_loss({p}, {t}); }, {p});
    Tensor q = suite_random({5}, rng, 0.05, 0.95);
    add("semantic_loss", [=] { return semantic::semantic_loss(q, semantic::one_hot(5, 2)); }, {q});
  }
  {
    std::vector<double> rows(8 * 3);
    for (double& v : rows) v = std::normal_distribution<double>(0.0, 1.0)(rng);
    Tensor maps = ops::l2_normalize_positions(Tensor(Shape{2, 4, 3}, rows));
    spatial::DescriptorMatrix x = spatial::collect_descriptors({maps});
    std::vector<double> s = spatial::dominant_eigenvector(x, 1e-12, 100000).s_hat;
    add("spatial_loss", [=] { return spatial::spatial_loss(x, s); }, {x.columns});
  }
  {
    semantic::SecondOrderPooling sp = semantic::SecondOrderPooling::make(3, 3, 2, rng);
    Tensor in = suite_random({3, 3, 3}, rng), w = suite_random({1, 1, 2}, rng);
    add("sp_forward", [=] { return suite_weigh(sp(in), w); }, {sp.reduce_kernel, sp.fc.weight, sp.fc.bias, in});
  }
  cases.push_back(full_loss_grad_case(seed));
  return cases;
}

}  // namespace coseg
