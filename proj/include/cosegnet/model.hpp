#pragma once

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "cosegnet/backbone.hpp"
#include "cosegnet/config.hpp"
#include "cosegnet/nn.hpp"
#include "cosegnet/segmentation_head.hpp"
#include "cosegnet/semantic_modulator.hpp"
#include "cosegnet/spatial_modulator.hpp"

namespace coseg {

struct GroupOutput {
  std::vector<Tensor> masks;  // per image, H x W probabilities
  spatial::SpatialMaskSet spatial;
  spatial::SpectralSolution solution;
  Tensor gamma;          // [d]
  Tensor class_scores;   // [L], undefined when the semantic branch is off
  Tensor spatial_loss;   // scalar
};

struct LossBreakdown {
  Tensor total;
  double spatial = 0.0;
  double semantic = 0.0;
  double segmentation = 0.0;
};

// Backbone, both modulators and the segmentation head, sharing one set of
// parameters across the images of a group.
class CoSegNet {
 public:
  CoSegNet(const TrainConfig& cfg, std::size_t num_classes) : config_(cfg), num_classes_(num_classes) {
    cfg.validate();
    if (num_classes < 1) throw ConfigError("model needs at least one co-category");
    Rng rng(cfg.seed);
    backbone_ = Backbone::make(cfg.backbone, rng);
    hsp_ = semantic::HierarchicalPooling::make(cfg.backbone.stage_channels[3], cfg.sp_channels,
                                               cfg.backbone.fused_channels, rng);
    hsp_.image_level.centered = hsp_.group_level.centered = !cfg.raw_second_moment;
    classifier_ = semantic::Classifier::make(num_classes, cfg.backbone.fused_channels, rng);
    SegHeadConfig head_cfg{cfg.backbone.fused_channels, cfg.head_channels, cfg.fpn_upsample};
    head_ = SegmentationHead::make(head_cfg, cfg.backbone.stage_channels, rng);

    backbone_.register_into(params_, "backbone");
    hsp_.register_into(params_, "semantic.hsp");
    classifier_.register_into(params_, "semantic.classifier");
    head_.register_into(params_, "head");
  }

  const TrainConfig& config() const { return config_; }
  std::size_t num_classes() const { return num_classes_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  // `fixed`, when given, replaces the spectral solve. The indicator is held
  // constant by the loss anyway, so this pins the one non-differentiable
  // dependency (used by finite-difference checks).
  GroupOutput forward(const std::vector<Tensor>& images, const spatial::SpectralSolution* fixed = nullptr) const {
    if (images.empty()) throw ContractError("forward: empty image group");
    const std::size_t height = images.front().dim(0), width = images.front().dim(1);
    const BackboneConfig& bc = config_.backbone;

    std::vector<std::array<Tensor, 4>> levels;
    for (const Tensor& img : images) {
      if (img.dims() != images.front().dims()) throw ShapeError("forward", images.front().dims(), img.dims());
      levels.push_back(backbone_.extract_pyramid(img));
    }

    GroupOutput out;
    if (config_.disable_spatial) {
      for (std::size_t n = 0; n < images.size(); ++n) out.spatial.masks.emplace_back(Shape{bc.working_h, bc.working_w}, 0.0);
      out.spatial_loss = Tensor::scalar(0.0);
    } else {
      std::vector<Tensor> fused;
      for (const auto& lv : levels) fused.push_back(backbone_.fuse_features(lv));
      auto x = spatial::collect_descriptors(fused);
      out.solution = fixed ? *fixed
                           : spatial::dominant_eigenvector(x, config_.spectral_tol, config_.spectral_max_iter,
                                                           config_.seed);
      if (!out.solution.converged) {
        if (config_.abort_on_nonconverged) {
          throw Error(ErrorCategory::numeric, "spectral solve did not converge: residual " +
                                                  std::to_string(out.solution.residual));
        }
      }
      auto oriented = spatial::orient_and_rescale(out.solution, x.count(), config_.orientation);
      out.spatial = spatial::reshape_masks(oriented, images.size(), bc.working_h, bc.working_w);
      if (config_.detach_spatial_loss) {
        NoGradScope no_grad;
        out.spatial_loss = spatial::spatial_loss(x, out.solution.s_hat);
      } else {
        out.spatial_loss = spatial::spatial_loss(x, out.solution.s_hat);
      }
    }

    if (config_.disable_semantic) {
      out.gamma = Tensor(Shape{bc.fused_channels}, 1.0);
    } else {
      std::vector<Tensor> lowest;
      for (const auto& lv : levels) lowest.push_back(lv[3]);
      out.gamma = hsp_(lowest);
      out.class_scores = classifier_(out.gamma);
    }

    for (std::size_t n = 0; n < images.size(); ++n) {
      auto projected = head_.project_levels(levels[n]);
      auto modulated = modulate(projected, out.gamma, out.spatial.masks[n]);
      out.masks.push_back(head_.predict_mask(head_.fpn_fuse(modulated), height, width));
    }
    return out;
  }

  // lambda_spa * l_spa + lambda_sem * l_sem + lambda_seg * l_seg for one group.
  LossBreakdown loss(const GroupOutput& out, const std::vector<Tensor>& gt_masks,
                     std::optional<std::size_t> category) const {
    return multi_task_loss(out, gt_masks, category, config_, num_classes_);
  }

  static LossBreakdown multi_task_loss(const GroupOutput& out, const std::vector<Tensor>& gt_masks,
                                       std::optional<std::size_t> category, const TrainConfig& cfg,
                                       std::size_t num_classes) {
    const double w_spa = cfg.effective_lambda_spa();
    const double w_sem = cfg.effective_lambda_sem();
    LossBreakdown lb;
    Tensor seg = segmentation_loss(out.masks, gt_masks, cfg.balance_swap);
    lb.segmentation = seg.item();
    lb.spatial = out.spatial_loss.item();
    Tensor total = ops::scale(seg, cfg.lambda_seg);
    if (w_spa > 0.0) total = ops::add(total, ops::scale(out.spatial_loss, w_spa));
    if (w_sem > 0.0) {
      if (!category) throw ConfigError("semantic loss weight is positive but the group has no category label");
      if (!out.class_scores.defined()) throw ConfigError("semantic loss requested with the semantic branch disabled");
      Tensor sem = semantic::semantic_loss(out.class_scores, semantic::one_hot(num_classes, *category));
      lb.semantic = sem.item();
      total = ops::add(total, ops::scale(sem, w_sem));
    } else if (out.class_scores.defined() && category && *category < num_classes) {
      NoGradScope no_grad;
      lb.semantic = semantic::semantic_loss(out.class_scores, semantic::one_hot(num_classes, *category)).item();
    }
    lb.total = total;
    return lb;
  }

 private:
  TrainConfig config_;
  std::size_t num_classes_;
  Backbone backbone_;
  semantic::HierarchicalPooling hsp_;
  semantic::Classifier classifier_;
  SegmentationHead head_;
  ParameterSet params_;
};

}  // namespace coseg
