#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cosegnet/tensor.hpp"

namespace coseg {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
};

// Compares the tape gradient of a scalar function against central finite
// differences (f(x+e) - f(x-e)) / 2e, coordinate by coordinate over all
// `inputs`. The error per coordinate is |analytic - numeric| / max(1, |numeric|).
//
// `f` must rebuild its output from the current contents of `inputs` on every
// call; the inputs are perturbed in place and restored afterwards.
inline GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                                  double step = 1e-5) {
  if (!(step >= 1e-7 && step <= 1e-3)) {
    throw ContractError("grad_check: step must lie in [1e-7, 1e-3]");
  }
  std::vector<bool> previous;
  for (Tensor& t : inputs) {
    previous.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    Graph graph;
    GraphScope scope(graph);
    Tensor loss = f();
    graph.backward(loss);
  }
  for (Tensor& t : inputs) {
    auto g = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                          : std::vector<double>(t.size(), 0.0);
    analytic.push_back(std::move(g));
    t.zero_grad();
  }

  GradCheckResult result;
  NoGradScope no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& t = inputs[k];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + step;
      const double up = f().item();
      t[i] = saved - step;
      const double down = f().item();
      t[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double err = std::abs(analytic[k][i] - numeric) / std::max(1.0, std::abs(numeric));
      result.max_relative_error = std::max(result.max_relative_error, err);
      ++result.coordinates;
    }
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) inputs[k].set_requires_grad(previous[k]);
  return result;
}

}  // namespace coseg
