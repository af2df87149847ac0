#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cosegnet/ops.hpp"
#include "cosegnet/tensor.hpp"

namespace coseg {

using Rng = std::mt19937_64;

// Ordered, named collection of trainable tensors. Order is registration
// order and is what checkpoints and the optimizer iterate over.
class ParameterSet {
 public:
  const Tensor& add(std::string name, Tensor t) {
    for (const auto& [n, _] : entries_) {
      if (n == name) throw ContractError("parameter registered twice: " + name);
    }
    t.set_requires_grad(true);
    entries_.emplace_back(std::move(name), t);
    return entries_.back().second;
  }

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : entries_)
      if (n == name) return &t;
    return nullptr;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

inline Tensor normal_tensor(Shape dims, double stddev, Rng& rng) {
  Tensor t(std::move(dims));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

inline Tensor uniform_tensor(Shape dims, double lo, double hi, Rng& rng) {
  Tensor t(std::move(dims));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

struct ConvLayer {
  Tensor kernel;  // k x k x c_in x c_out
  Tensor bias;    // c_out, or undefined
  std::size_t stride = 1;
  std::size_t padding = 0;

  // He-normal kernel, zero bias.
  static ConvLayer make(std::size_t k, std::size_t cin, std::size_t cout, std::size_t stride,
                        Rng& rng, bool with_bias = true) {
    ConvLayer layer;
    const double fan_in = static_cast<double>(k * k * cin);
    layer.kernel = normal_tensor(Shape{k, k, cin, cout}, std::sqrt(2.0 / fan_in), rng);
    if (with_bias) layer.bias = Tensor(Shape{cout}, 0.0);
    layer.stride = stride;
    layer.padding = k / 2;
    return layer;
  }

  Tensor operator()(const Tensor& x) const { return ops::conv2d(x, kernel, bias, stride, padding); }

  void register_into(ParameterSet& set, const std::string& name) const {
    set.add(name + ".kernel", kernel);
    if (bias.defined()) set.add(name + ".bias", bias);
  }
};

// Fully connected layer acting on a flat vector: y = x W + b.
struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out

  static Linear make(std::size_t in, std::size_t out, Rng& rng) {
    Linear l;
    l.weight = normal_tensor(Shape{in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    l.bias = Tensor(Shape{out}, 0.0);
    return l;
  }

  // x is any tensor with in elements; returns shape [out].
  Tensor operator()(const Tensor& x) const {
    Tensor row = ops::reshape(x, Shape{1, x.size()});
    Tensor y = ops::matmul(row, weight);
    return ops::add(ops::reshape(y, Shape{weight.dim(1)}), bias);
  }

  void register_into(ParameterSet& set, const std::string& name) const {
    set.add(name + ".weight", weight);
    set.add(name + ".bias", bias);
  }
};

}  // namespace coseg
