#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "cosegnet/spatial_modulator.hpp"

// Random small instances comparing the relaxed solve against exhaustive
// enumeration of the discrete partition problem.
namespace coseg::spatial {

struct SpectralInstance {
  std::size_t count = 0;
  std::size_t channels = 0;
  std::vector<double> rows;  // count x channels, unit rows
  SpectralSolution solution;
  double relaxed = 0.0;        // -s^T G s at the unit solution
  double discrete_bound = 0.0; // enumerated optimum divided by 2n
  double optimum = 0.0;        // enumerated three-sum optimum
  double rounded = 0.0;        // three-sum objective at sign(s)
  double rounding_gap = 0.0;   // (rounded - optimum) / |optimum|
};

inline DescriptorMatrix instance_matrix(const SpectralInstance& inst) {
  return descriptors_from_rows(inst.count, inst.channels, inst.rows);
}

inline SpectralInstance solve_random_instance(std::mt19937_64& rng, std::size_t min_count = 4,
                                              std::size_t max_count = 12, std::size_t min_channels = 2,
                                              std::size_t max_channels = 8) {
  SpectralInstance inst;
  inst.count = std::uniform_int_distribution<std::size_t>(min_count, max_count)(rng);
  inst.channels = std::uniform_int_distribution<std::size_t>(min_channels, max_channels)(rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  inst.rows.resize(inst.count * inst.channels);
  for (std::size_t i = 0; i < inst.count; ++i) {
    double n2 = 0.0;
    for (std::size_t c = 0; c < inst.channels; ++c) {
      double& v = inst.rows[i * inst.channels + c];
      v = normal(rng);
      n2 += v * v;
    }
    for (std::size_t c = 0; c < inst.channels; ++c) inst.rows[i * inst.channels + c] /= std::sqrt(n2);
  }
  DescriptorMatrix x = instance_matrix(inst);
  inst.solution = dominant_eigenvector(x, 1e-12, 200000, rng());
  inst.relaxed = relaxed_objective(x, inst.solution.s_hat);

  PartitionResult best = brute_force_partition(x);
  inst.optimum = best.objective;
  inst.discrete_bound = best.objective / (2.0 * static_cast<double>(inst.count));
  std::vector<double> signs(inst.count);
  for (std::size_t i = 0; i < inst.count; ++i) signs[i] = inst.solution.s_hat[i] >= 0.0 ? 1.0 : -1.0;
  inst.rounded = clustering_objective(x, signs);
  inst.rounding_gap = (inst.rounded - inst.optimum) / std::abs(inst.optimum);
  return inst;
}

}  // namespace coseg::spatial
