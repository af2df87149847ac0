#pragma once

#include <cstdint>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "cosegnet/adam.hpp"
#include "cosegnet/checkpoint.hpp"
#include "cosegnet/dataset.hpp"
#include "cosegnet/model.hpp"

namespace coseg {

struct StepLog {
  std::uint64_t step = 0;  // 1-based index of the completed update
  double spatial = 0.0;
  double semantic = 0.0;
  double segmentation = 0.0;
  double total = 0.0;
  std::size_t nonconverged = 0;
};

inline constexpr const char* kLossCsvHeader = "step,loss_spa,loss_sem,loss_seg,loss";

inline std::string csv_row(const StepLog& s) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g,%.17g,%.17g", static_cast<unsigned long long>(s.step),
                s.spatial, s.semantic, s.segmentation, s.total);
  return buf;
}

// Joint multi-task training. Each step draws groups_per_batch groups; each
// group is group_size images sampled without replacement from one
// category's pool of training images. Batch sampling depends only on
// (seed, step), so a resumed run draws the same batches.
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const std::vector<ImageGroup>& groups)
      : config_(cfg), groups_(groups) {
    cfg.validate();
    build_pools();
    for (const auto& [cat, pool] : pools_) config_.num_classes = std::max(config_.num_classes, cat + 1);
    model_ = std::make_unique<CoSegNet>(config_, config_.num_classes);
    optimizer_ = std::make_unique<Adam>(model_->parameters(), adam_parameters(config_));
  }

  // Resumes from a checkpoint written by save().
  Trainer(const std::string& checkpoint_path, const std::vector<ImageGroup>& groups,
          std::optional<std::size_t> max_steps = std::nullopt)
      : groups_(groups) {
    auto entries = checkpoint::read_file(checkpoint_path);
    config_ = checkpoint::config_of(entries);
    if (max_steps) config_.max_steps = *max_steps;
    build_pools();
    model_ = std::make_unique<CoSegNet>(config_, config_.num_classes);
    optimizer_ = std::make_unique<Adam>(model_->parameters(), adam_parameters(config_));
    checkpoint::restore(entries, *model_, optimizer_.get());
  }

  static AdamParameters adam_parameters(const TrainConfig& cfg) {
    return AdamParameters{cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon,
                          cfg.lr_halving_interval_steps};
  }

  CoSegNet& model() { return *model_; }
  const CoSegNet& model() const { return *model_; }
  Adam& optimizer() { return *optimizer_; }
  const TrainConfig& config() const { return config_; }
  std::uint64_t steps_done() const { return optimizer_->state().step; }

  void set_warning_stream(std::ostream* os) { warn_ = os; }

  void save(const std::string& path) const { checkpoint::save(path, *model_, optimizer_.get()); }

  StepLog step() {
    const std::uint64_t index = steps_done();
    std::seed_seq seq{static_cast<std::uint32_t>(config_.seed), static_cast<std::uint32_t>(config_.seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5a17u};
    std::mt19937_64 rng(seq);

    model_->parameters().zero_grad();
    Graph graph;
    StepLog log;
    Tensor batch_loss;
    {
      GraphScope scope(graph);
      const double inv = 1.0 / static_cast<double>(config_.groups_per_batch);
      for (std::size_t b = 0; b < config_.groups_per_batch; ++b) {
        const auto [category, images, masks] = sample_group(rng);
        GroupOutput out = model_->forward(images);
        if (!config_.disable_spatial && !out.solution.converged) ++log.nonconverged;
        LossBreakdown lb = model_->loss(out, masks, category);
        log.spatial += lb.spatial * inv;
        log.semantic += lb.semantic * inv;
        log.segmentation += lb.segmentation * inv;
        Tensor scaled = ops::scale(lb.total, inv);
        batch_loss = batch_loss.defined() ? ops::add(batch_loss, scaled) : scaled;
      }
    }
    log.total = batch_loss.item();
    graph.backward(batch_loss);
    optimizer_->step(model_->parameters());
    log.step = steps_done();
    if (log.nonconverged && warn_) {
      ++warned_;
      if (warned_ <= 3 || warned_ % 100 == 0) {
        *warn_ << "warning: step " << log.step << ": " << log.nonconverged
               << " spectral solve(s) did not reach tolerance\n";
      }
    }
    return log;
  }

  // Runs until max_steps updates have been applied, appending CSV rows.
  void run(std::ostream* csv, const std::function<void(const StepLog&)>& on_step = {}) {
    while (steps_done() < config_.max_steps) {
      StepLog s = step();
      if (csv) *csv << csv_row(s) << '\n';
      if (on_step) on_step(s);
    }
  }

 private:
  struct PoolEntry {
    std::size_t group;
    std::size_t image;
  };

  void build_pools() {
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      const ImageGroup& grp = groups_[g];
      if (!grp.has_masks()) throw ValidationError("training group '" + grp.name + "' has no masks");
      if (!grp.category) throw ValidationError("training group '" + grp.name + "' has no category label");
      for (std::size_t i = 0; i < grp.size(); ++i) pools_[*grp.category].push_back({g, i});
    }
    for (const auto& [cat, pool] : pools_) {
      if (pool.size() >= config_.group_size) eligible_.push_back(cat);
    }
    if (eligible_.empty()) {
      throw ValidationError("no category has at least group_size = " + std::to_string(config_.group_size) +
                            " training images");
    }
  }

  struct Sample {
    std::size_t category;
    std::vector<Tensor> images;
    std::vector<Tensor> masks;
  };

  Sample sample_group(std::mt19937_64& rng) const {
    Sample s;
    s.category = eligible_[std::uniform_int_distribution<std::size_t>(0, eligible_.size() - 1)(rng)];
    std::vector<PoolEntry> pool = pools_.at(s.category);
    for (std::size_t k = 0; k < config_.group_size; ++k) {
      const std::size_t j = std::uniform_int_distribution<std::size_t>(k, pool.size() - 1)(rng);
      std::swap(pool[k], pool[j]);
      const ImageGroup& g = groups_[pool[k].group];
      s.images.push_back(g.images[pool[k].image]);
      s.masks.push_back(g.gt_masks[pool[k].image]);
    }
    return s;
  }

  TrainConfig config_;
  std::vector<ImageGroup> groups_;
  std::map<std::size_t, std::vector<PoolEntry>> pools_;
  std::vector<std::size_t> eligible_;
  std::unique_ptr<CoSegNet> model_;
  std::unique_ptr<Adam> optimizer_;
  std::ostream* warn_ = &std::clog;
  std::size_t warned_ = 0;
};

}  // namespace coseg
