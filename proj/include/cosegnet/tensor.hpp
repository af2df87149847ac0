#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cosegnet/error.hpp"

namespace coseg {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         [](std::size_t a, std::size_t b) { return a * b; });
}

namespace detail {

struct TensorStorage {
  Shape dims;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};

}  // namespace detail

// Dense row-major float64 array with an optional gradient slot.
//
// Tensor is a handle: copies share storage, so a parameter captured by the
// graph and the parameter held by the model are the same object. Use
// clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape dims, double fill = 0.0)
      : s_(std::make_shared<detail::TensorStorage>()) {
    validate_dims(dims);
    s_->data.assign(shape_size(dims), fill);
    s_->dims = std::move(dims);
  }

  Tensor(Shape dims, std::vector<double> data)
      : s_(std::make_shared<detail::TensorStorage>()) {
    validate_dims(dims);
    if (shape_size(dims) != data.size()) {
      throw ShapeError("tensor: dims " + format_dims(dims) + " hold " +
                       std::to_string(shape_size(dims)) + " values, got " +
                       std::to_string(data.size()));
    }
    s_->dims = std::move(dims);
    s_->data = std::move(data);
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

  bool defined() const noexcept { return static_cast<bool>(s_); }

  const Shape& dims() const { return s_->dims; }
  std::size_t dim(std::size_t i) const { return s_->dims.at(i); }
  std::size_t rank() const { return s_->dims.size(); }
  std::size_t size() const { return s_->data.size(); }

  std::span<const double> data() const { return s_->data; }
  std::span<double> data() { return s_->data; }
  const double* ptr() const { return s_->data.data(); }
  double* ptr() { return s_->data.data(); }

  double operator[](std::size_t i) const { return s_->data[i]; }
  double& operator[](std::size_t i) { return s_->data[i]; }

  // Value of a single-element tensor.
  double item() const {
    if (size() != 1) {
      throw ContractError("item() on tensor of shape " + format_dims(dims()));
    }
    return s_->data[0];
  }

  bool requires_grad() const { return s_ && s_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    s_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !s_->grad.empty(); }
  std::span<const double> grad() const { return s_->grad; }

  // Gradient buffer, allocated (zero-filled) on first access.
  std::span<double> mutable_grad() {
    if (s_->grad.empty()) s_->grad.assign(s_->data.size(), 0.0);
    return s_->grad;
  }
  void zero_grad() { s_->grad.clear(); }

  Tensor clone() const {
    Tensor t;
    t.s_ = std::make_shared<detail::TensorStorage>();
    t.s_->dims = s_->dims;
    t.s_->data = s_->data;
    return t;
  }

  // Same storage with a different shape is not allowed; reshape via ops.
  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

 private:
  static void validate_dims(const Shape& dims) {
    if (dims.empty()) throw ShapeError("tensor: rank must be at least 1");
    for (std::size_t d : dims) {
      if (d == 0) throw ShapeError("tensor: zero extent in " + format_dims(dims));
    }
  }

  std::shared_ptr<detail::TensorStorage> s_;
};

// Tape of executed differentiable ops, in execution order.
class Graph {
 public:
  struct Node {
    std::string op;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void(Node&)> backward;
  };

  void record(std::string op, std::vector<Tensor> inputs, Tensor output,
              std::function<void(Node&)> backward) {
    nodes_.push_back(Node{std::move(op), std::move(inputs), std::move(output), std::move(backward)});
  }

  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }

  // Populates grad slots with d(loss)/d(tensor) for every tensor on the tape
  // that requires grad. Gradients accumulate into existing slots. Visits
  // each node once, in reverse execution order; the returned value is the
  // number of nodes whose backward closure ran.
  std::size_t backward(Tensor loss) {
    if (loss.size() != 1) {
      throw ContractError("backward: loss must be a scalar, got shape " + format_dims(loss.dims()));
    }
    if (!loss.requires_grad()) {
      throw ContractError("backward: loss is not connected to any tensor requiring grad");
    }
    loss.mutable_grad()[0] += 1.0;
    std::size_t visited = 0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (!it->output.has_grad()) continue;  // not upstream of the loss
      it->backward(*it);
      ++visited;
    }
    return visited;
  }

 private:
  std::vector<Node> nodes_;
};

namespace detail {
inline Graph*& active_graph_slot() {
  thread_local Graph* g = nullptr;
  return g;
}
}  // namespace detail

inline Graph* active_graph() { return detail::active_graph_slot(); }

// Ops executed while a GraphScope is alive are recorded on its graph.
class GraphScope {
 public:
  explicit GraphScope(Graph& g) : previous_(detail::active_graph_slot()) {
    detail::active_graph_slot() = &g;
  }
  ~GraphScope() { detail::active_graph_slot() = previous_; }
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph* previous_;
};

// Suspends recording, e.g. for inference or finite-difference probes.
class NoGradScope {
 public:
  NoGradScope() : previous_(detail::active_graph_slot()) { detail::active_graph_slot() = nullptr; }
  ~NoGradScope() { detail::active_graph_slot() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Graph* previous_;
};

inline std::size_t backward(Graph& graph, const Tensor& loss) { return graph.backward(loss); }

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  return std::any_of(ts.begin(), ts.end(), [](const Tensor* t) { return t->requires_grad(); });
}

// Records `out` on the active graph if any input requires grad. Returns
// true when recorded.
inline bool record(const char* op, std::vector<Tensor> inputs, Tensor& out,
                   std::function<void(Graph::Node&)> backward) {
  Graph* g = active_graph();
  if (!g) return false;
  bool needed = std::any_of(inputs.begin(), inputs.end(),
                            [](const Tensor& t) { return t.requires_grad(); });
  if (!needed) return false;
  out.set_requires_grad(true);
  g->record(op, std::move(inputs), out, std::move(backward));
  return true;
}

}  // namespace detail

}  // namespace coseg
