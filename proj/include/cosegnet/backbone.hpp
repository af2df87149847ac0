#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "cosegnet/nn.hpp"
#include "cosegnet/ops.hpp"

namespace coseg {

struct BackboneConfig {
  std::array<std::size_t, 4> stage_channels{16, 32, 64, 128};
  std::size_t fused_channels = 64;  // d
  std::size_t working_h = 16;
  std::size_t working_w = 16;
  std::size_t convs_per_stage = 2;

  void validate() const {
    for (std::size_t c : stage_channels)
      if (c == 0) throw ConfigError("backbone: stage channel counts must be positive");
    if (fused_channels == 0 || working_h == 0 || working_w == 0 || convs_per_stage == 0) {
      throw ConfigError("backbone: extents must be positive");
    }
  }
};

// Multi-resolution features of one image. levels[0] is H/4, levels[3] is
// H/32 and doubles as the lowest-resolution map.
struct FeaturePyramid {
  std::array<Tensor, 4> levels;
  Tensor fused;  // working_h x working_w x d, unit-norm positions

  const Tensor& lowest() const { return levels[3]; }
};

// A stride-2 stem followed by four stages; each stage opens with a stride-2
// 3x3 conv and continues with stride-1 3x3 convs, all followed by relu.
struct Backbone {
  BackboneConfig config;
  ConvLayer stem;
  std::array<std::vector<ConvLayer>, 4> stages;
  std::array<ConvLayer, 4> fuse;  // 1x1 projections to d

  static Backbone make(const BackboneConfig& cfg, Rng& rng) {
    cfg.validate();
    Backbone b;
    b.config = cfg;
    b.stem = ConvLayer::make(3, 3, cfg.stage_channels[0], 2, rng);
    std::size_t cin = cfg.stage_channels[0];
    for (std::size_t s = 0; s < 4; ++s) {
      const std::size_t cout = cfg.stage_channels[s];
      for (std::size_t i = 0; i < cfg.convs_per_stage; ++i) {
        b.stages[s].push_back(ConvLayer::make(3, i == 0 ? cin : cout, cout, i == 0 ? 2 : 1, rng));
      }
      cin = cout;
      b.fuse[s] = ConvLayer::make(1, cout, cfg.fused_channels, 1, rng);
    }
    return b;
  }

  void register_into(ParameterSet& set, const std::string& prefix) const {
    stem.register_into(set, prefix + ".stem");
    for (std::size_t s = 0; s < 4; ++s) {
      for (std::size_t i = 0; i < stages[s].size(); ++i) {
        stages[s][i].register_into(set, prefix + ".stage" + std::to_string(s + 1) + "." + std::to_string(i));
      }
      fuse[s].register_into(set, prefix + ".fuse" + std::to_string(s + 1));
    }
  }

  std::array<Tensor, 4> extract_pyramid(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(2) != 3) {
      throw ShapeError("extract_pyramid: expected H x W x 3 image, got " + format_dims(image.dims()));
    }
    if (image.dim(0) % 32 != 0 || image.dim(1) % 32 != 0) {
      throw ValidationError("extract_pyramid: image extents " + format_dims(image.dims()) +
                            " must be divisible by 32");
    }
    std::array<Tensor, 4> levels;
    Tensor x = ops::relu(stem(image));
    for (std::size_t s = 0; s < 4; ++s) {
      for (const ConvLayer& conv : stages[s]) x = ops::relu(conv(x));
      levels[s] = x;
    }
    return levels;
  }

  Tensor fuse_features(const std::array<Tensor, 4>& levels) const {
    Tensor acc;
    for (std::size_t s = 0; s < 4; ++s) {
      Tensor projected = ops::resample(fuse[s](levels[s]), config.working_h, config.working_w,
                                       ops::ResampleMode::bilinear);
      acc = acc.defined() ? ops::add(acc, projected) : projected;
    }
    return ops::l2_normalize_positions(acc);
  }

  FeaturePyramid operator()(const Tensor& image) const {
    FeaturePyramid p;
    p.levels = extract_pyramid(image);
    p.fused = fuse_features(p.levels);
    return p;
  }
};

}  // namespace coseg
