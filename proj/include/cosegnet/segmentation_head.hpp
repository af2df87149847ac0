#pragma once

#include <array>
#include <string>
#include <vector>

#include "cosegnet/nn.hpp"
#include "cosegnet/ops.hpp"

namespace coseg {

struct SegHeadConfig {
  std::size_t channels = 64;       // d, shared with the channel selector
  std::size_t head_channels = 16;  // width of the final 3x3 conv
  ops::ResampleMode fpn_upsample = ops::ResampleMode::bilinear;
};

using ModulatedPyramid = std::array<Tensor, 4>;

// Y_c = gamma_c * X_c + S on every level, with S resampled (bilinear) to
// each level's resolution. `shift` is h x w.
inline ModulatedPyramid modulate(const std::array<Tensor, 4>& levels, const Tensor& gamma,
                                 const Tensor& shift) {
  if (shift.rank() != 2) throw ShapeError("modulate: spatial mask must be h x w, got " + format_dims(shift.dims()));
  Tensor s3 = ops::reshape(shift, Shape{shift.dim(0), shift.dim(1), 1});
  ModulatedPyramid out;
  for (std::size_t i = 0; i < 4; ++i) {
    const Tensor& x = levels[i];
    if (x.rank() != 3 || gamma.size() != x.dim(2)) throw ShapeError("modulate", x.dims(), gamma.dims());
    Tensor si = ops::resample(s3, x.dim(0), x.dim(1), ops::ResampleMode::bilinear);
    out[i] = ops::scale_shift(x, gamma, ops::reshape(si, Shape{x.dim(0), x.dim(1)}));
  }
  return out;
}

struct SegmentationHead {
  SegHeadConfig config;
  std::array<ConvLayer, 4> project;  // backbone channels -> d
  std::array<ConvLayer, 3> lateral;  // d -> d, bias-free; lateral[i] feeds level i
  ConvLayer refine;                  // 3x3, d -> head_channels
  ConvLayer classify;                // 1x1, head_channels -> 1

  static SegmentationHead make(const SegHeadConfig& cfg, const std::array<std::size_t, 4>& level_channels,
                               Rng& rng) {
    SegmentationHead h;
    h.config = cfg;
    for (std::size_t i = 0; i < 4; ++i) h.project[i] = ConvLayer::make(1, level_channels[i], cfg.channels, 1, rng);
    for (std::size_t i = 0; i < 3; ++i) h.lateral[i] = ConvLayer::make(1, cfg.channels, cfg.channels, 1, rng, false);
    h.refine = ConvLayer::make(3, cfg.channels, cfg.head_channels, 1, rng);
    h.classify = ConvLayer::make(1, cfg.head_channels, 1, 1, rng);
    return h;
  }

  void register_into(ParameterSet& set, const std::string& prefix) const {
    for (std::size_t i = 0; i < 4; ++i) project[i].register_into(set, prefix + ".project" + std::to_string(i + 1));
    for (std::size_t i = 0; i < 3; ++i) lateral[i].register_into(set, prefix + ".lateral" + std::to_string(i + 1));
    refine.register_into(set, prefix + ".refine");
    classify.register_into(set, prefix + ".classify");
  }

  std::array<Tensor, 4> project_levels(const std::array<Tensor, 4>& levels) const {
    std::array<Tensor, 4> out;
    for (std::size_t i = 0; i < 4; ++i) out[i] = project[i](levels[i]);
    return out;
  }

  // Coarse to fine: top = Y_i + up(lateral_i(top)), starting from Y_4.
  Tensor fpn_fuse(const ModulatedPyramid& pyramid) const {
    Tensor top = pyramid[3];
    for (std::size_t i = 3; i-- > 0;) {
      const Tensor& finer = pyramid[i];
      Tensor up = ops::resample(lateral[i](top), finer.dim(0), finer.dim(1), config.fpn_upsample);
      top = ops::add(finer, up);
    }
    return top;
  }

  // 3x3 conv + relu, 1x1 conv to one channel, bilinear upsample, sigmoid.
  Tensor predict_mask(const Tensor& fused, std::size_t out_h, std::size_t out_w) const {
    Tensor logits = classify(ops::relu(refine(fused)));
    Tensor up = ops::resample(logits, out_h, out_w, ops::ResampleMode::bilinear);
    return ops::sigmoid(ops::reshape(up, Shape{out_h, out_w}));
  }
};

// Weighted pixel-wise cross-entropy averaged over N images of P pixels:
//   -(1/NP) sum_n sum_i [ a_n M(i) log P(i) + b_n (1 - M(i)) log(1 - P(i)) ]
// with (a_n, b_n) = (delta_n, 1 - delta_n), delta_n the foreground fraction
// of image n, or swapped when balance_swap is set.
inline Tensor segmentation_loss(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt,
                                bool balance_swap = false) {
  if (pred.size() != gt.size() || pred.empty()) {
    throw ShapeError("segmentation_loss: " + std::to_string(pred.size()) + " predictions vs " +
                     std::to_string(gt.size()) + " masks");
  }
  const std::size_t pixels = pred.front().size();
  Tensor total;
  for (std::size_t n = 0; n < pred.size(); ++n) {
    if (pred[n].dims() != gt[n].dims()) throw ShapeError("segmentation_loss", pred[n].dims(), gt[n].dims());
    if (pred[n].size() != pixels) throw ShapeError("segmentation_loss: images must share a pixel count");
    double positives = 0.0;
    for (double v : gt[n].data()) {
      if (v != 0.0 && v != 1.0) throw ValidationError("segmentation_loss: ground-truth mask is not binary");
      positives += v;
    }
    const double delta = positives / static_cast<double>(pixels);
    const double pos_w = balance_swap ? 1.0 - delta : delta;
    const double neg_w = balance_swap ? delta : 1.0 - delta;
    Tensor term = ops::weighted_bce_sum(pred[n], gt[n], pos_w, neg_w);
    total = total.defined() ? ops::add(total, term) : term;
  }
  return ops::scale(total, 1.0 / static_cast<double>(pred.size() * pixels));
}

}  // namespace coseg
