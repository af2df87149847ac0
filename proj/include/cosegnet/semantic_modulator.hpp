#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cosegnet/nn.hpp"
#include "cosegnet/ops.hpp"

namespace coseg::semantic {

// Second-order pooling: 1x1 channel reduction d_in -> c, channel covariance
// over spatial positions, then a fully connected map of the flattened c x c
// matrix to d_out.
struct SecondOrderPooling {
  Tensor reduce_kernel;  // 1 x 1 x d_in x c
  Linear fc;             // (c*c) -> d_out
  bool centered = true;  // false: raw second moment

  static SecondOrderPooling make(std::size_t d_in, std::size_t c, std::size_t d_out, Rng& rng) {
    if (c < 2) throw ConfigError("second-order pooling needs at least 2 reduced channels");
    SecondOrderPooling sp;
    sp.reduce_kernel = normal_tensor(Shape{1, 1, d_in, c}, 1.0 / std::sqrt(static_cast<double>(d_in)), rng);
    sp.fc = Linear::make(c * c, d_out, rng);
    return sp;
  }

  std::size_t in_channels() const { return reduce_kernel.dim(2); }
  std::size_t out_channels() const { return fc.bias.size(); }

  void register_into(ParameterSet& set, const std::string& name) const {
    set.add(name + ".reduce", reduce_kernel);
    fc.register_into(set, name + ".fc");
  }

  // input: h x w x d_in -> 1 x 1 x d_out
  Tensor operator()(const Tensor& input) const {
    if (input.rank() != 3 || input.dim(2) != in_channels()) {
      throw ShapeError("sp_forward", input.dims(), reduce_kernel.dims());
    }
    Tensor reduced = ops::conv2d(input, reduce_kernel, Tensor{}, 1, 0);
    Tensor cov = ops::covariance(reduced, centered);
    return ops::reshape(fc(cov), Shape{1, 1, out_channels()});
  }
};

// Hierarchical pooling over a group: per-image SP, stack the N outputs as an
// N x 1 x d grid, pool again. Covariance pools over positions, so the
// result does not depend on image order.
struct HierarchicalPooling {
  SecondOrderPooling image_level;
  SecondOrderPooling group_level;

  static HierarchicalPooling make(std::size_t d_lowest, std::size_t c, std::size_t d, Rng& rng) {
    HierarchicalPooling h;
    h.image_level = SecondOrderPooling::make(d_lowest, c, d, rng);
    h.group_level = SecondOrderPooling::make(d, c, d, rng);
    // Start the selector near the identity gate.
    for (double& v : h.group_level.fc.bias.data()) v = 1.0;
    return h;
  }

  void register_into(ParameterSet& set, const std::string& prefix) const {
    image_level.register_into(set, prefix + ".sp1");
    group_level.register_into(set, prefix + ".sp2");
  }

  // Returns the channel selector gamma, shape [d].
  Tensor operator()(const std::vector<Tensor>& group_lowest) const {
    if (group_lowest.empty()) throw ShapeError("hsp_forward: empty group");
    std::vector<Tensor> pooled;
    pooled.reserve(group_lowest.size());
    for (const Tensor& t : group_lowest) {
      if (t.dims() != group_lowest.front().dims()) throw ShapeError("hsp_forward", group_lowest.front().dims(), t.dims());
      pooled.push_back(image_level(t));
    }
    Tensor stacked = ops::concat(pooled);  // N x 1 x d
    Tensor gamma = group_level(stacked);
    return ops::reshape(gamma, Shape{gamma.size()});
  }
};

struct Classifier {
  Tensor weight;  // L x d
  Tensor bias;    // L

  static Classifier make(std::size_t classes, std::size_t d, Rng& rng) {
    if (classes < 1) throw ConfigError("classifier needs at least one class");
    Classifier c;
    c.weight = normal_tensor(Shape{classes, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    c.bias = Tensor(Shape{classes}, 0.0);
    return c;
  }

  void register_into(ParameterSet& set, const std::string& prefix) const {
    set.add(prefix + ".weight", weight);
    set.add(prefix + ".bias", bias);
  }

  // Per-class sigmoid responses, shape [L].
  Tensor operator()(const Tensor& gamma) const {
    const std::size_t classes = weight.dim(0), d = weight.dim(1);
    if (gamma.size() != d) throw ShapeError("classify", weight.dims(), gamma.dims());
    Tensor logits = ops::matmul(weight, ops::reshape(gamma, Shape{d, 1}));
    return ops::sigmoid(ops::add(ops::reshape(logits, Shape{classes}), bias));
  }
};

// -(1/L) sum_l [ y_l log p_l + (1 - y_l) log(1 - p_l) ]
inline Tensor semantic_loss(const Tensor& y_hat, const Tensor& y) {
  for (double v : y.data())
    if (v != 0.0 && v != 1.0) throw ValidationError("semantic_loss: labels must be binary");
  return ops::scale(ops::weighted_bce_sum(y_hat, y, 1.0, 1.0), 1.0 / static_cast<double>(y_hat.size()));
}

inline Tensor one_hot(std::size_t classes, std::size_t label) {
  if (label >= classes) throw ValidationError("category id " + std::to_string(label) + " >= " + std::to_string(classes));
  Tensor t(Shape{classes}, 0.0);
  t[label] = 1.0;
  return t;
}

}  // namespace coseg::semantic
