#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "cosegnet/ops.hpp"
#include "cosegnet/tensor.hpp"

// Unsupervised two-way partition of a group's descriptors. With unit-norm
// descriptors x_i and a +-1/sqrt(n) indicator s, the clustering objective
// reduces to -s^T G s with G = X^T X - 1 (all-ones), whose relaxed minimiser
// on the unit sphere is the top eigenvector of G.
namespace coseg::spatial {

// The group's per-position descriptors. `columns` is whN x d: row i is the
// descriptor x_i, i.e. the i-th column of X. Ordering is image-major, then
// raster (row-major) order inside each image.
struct DescriptorMatrix {
  Tensor columns;
  std::size_t n_images = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  std::size_t count() const { return n_images * height * width; }
  std::span<const double> descriptor(std::size_t i) const {
    return columns.data().subspan(i * channels, channels);
  }
  std::size_t index(std::size_t image, std::size_t row, std::size_t col) const {
    return (image * height + row) * width + col;
  }
};

struct SpectralSolution {
  std::vector<double> s_hat;
  double lambda_max = 0.0;
  double residual = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

struct SpatialMaskSet {
  std::vector<Tensor> masks;  // each height x width
};

enum class Orientation {
  minority_foreground,  // positive set is the smaller cluster
  majority_foreground,
};

// Descriptors from N fused maps (each h x w x d). Differentiable: the
// returned columns stay connected to the maps on the active graph.
inline DescriptorMatrix collect_descriptors(const std::vector<Tensor>& fused_maps) {
  if (fused_maps.empty()) throw ShapeError("collect_descriptors: empty group");
  const Tensor& first = fused_maps.front();
  if (first.rank() != 3) throw ShapeError("collect_descriptors: expected h x w x d maps, got " + format_dims(first.dims()));
  DescriptorMatrix m;
  m.n_images = fused_maps.size();
  m.height = first.dim(0);
  m.width = first.dim(1);
  m.channels = first.dim(2);
  std::vector<Tensor> rows;
  rows.reserve(fused_maps.size());
  for (const Tensor& map : fused_maps) {
    if (map.dims() != first.dims()) throw ShapeError("collect_descriptors", first.dims(), map.dims());
    rows.push_back(ops::reshape(map, Shape{m.height * m.width, m.channels}));
  }
  m.columns = rows.size() == 1 ? rows.front() : ops::concat(rows);
  return m;
}

// Builds a descriptor matrix directly from rows (tests, oracle reports).
inline DescriptorMatrix descriptors_from_rows(std::size_t count, std::size_t channels,
                                              std::vector<double> rows) {
  DescriptorMatrix m;
  m.columns = Tensor(Shape{count, channels}, std::move(rows));
  m.n_images = 1;
  m.height = 1;
  m.width = count;
  m.channels = channels;
  return m;
}

// d_ij = 2 - 2 x_i.x_j, the squared distance between unit vectors.
inline double pairwise_distance(std::span<const double> xi, std::span<const double> xj) {
  double dot = 0.0;
  for (std::size_t c = 0; c < xi.size(); ++c) dot += xi[c] * xj[c];
  return 2.0 - 2.0 * dot;
}

// G v = X^T (X v) - (sum v) 1, without forming G.
inline std::vector<double> gram_product(const DescriptorMatrix& x, std::span<const double> v) {
  const std::size_t n = x.count(), d = x.channels;
  if (v.size() != n) throw ShapeError("gram_product: vector length " + std::to_string(v.size()) +
                                      " vs " + std::to_string(n) + " descriptors");
  const double* rows = x.columns.ptr();
  std::vector<double> xv(d, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double vi = v[i];
    total += vi;
    const double* r = rows + i * d;
    for (std::size_t c = 0; c < d; ++c) xv[c] += r[c] * vi;
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = rows + i * d;
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += r[c] * xv[c];
    out[i] = acc - total;
  }
  return out;
}

namespace detail {
inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}
inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }
}  // namespace detail

// Power iteration on G + c I with c = n. For unit v,
// v^T G v = |X v|^2 - (1^T v)^2 >= -n, so the shifted operator is positive
// semidefinite and the iteration converges to the largest algebraic
// eigenvalue of G (not merely the largest in magnitude).
inline SpectralSolution dominant_eigenvector(const DescriptorMatrix& x, double tol = 1e-8,
                                             std::size_t max_iter = 10000, std::uint64_t seed = 0) {
  if (!(tol > 0.0)) throw ContractError("dominant_eigenvector: tol must be > 0");
  const std::size_t n = x.count();
  const double shift = static_cast<double>(n);

  SpectralSolution sol;
  sol.s_hat.resize(n);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (double& v : sol.s_hat) v = dist(rng);
  double nv = detail::norm(sol.s_hat);
  for (double& v : sol.s_hat) v /= nv;

  std::vector<double> gv = gram_product(x, sol.s_hat);
  auto measure = [&] {
    sol.lambda_max = detail::dot(sol.s_hat, gv);
    double r2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = gv[i] - sol.lambda_max * sol.s_hat[i];
      r2 += e * e;
    }
    sol.residual = std::sqrt(r2);
  };
  measure();
  while (sol.residual > tol && sol.iterations < max_iter) {
    for (std::size_t i = 0; i < n; ++i) sol.s_hat[i] = gv[i] + shift * sol.s_hat[i];
    nv = detail::norm(sol.s_hat);
    for (double& v : sol.s_hat) v /= nv;
    gv = gram_product(x, sol.s_hat);
    ++sol.iterations;
    measure();
  }
  sol.converged = sol.residual <= tol;
  return sol;
}

// Fixes the sign (foreground as the minority positive set by default; an
// exact tie keeps the solver's sign) and rescales by sqrt(n) so that a
// discrete indicator maps to +-1.
inline std::vector<double> orient_and_rescale(const SpectralSolution& sol, std::size_t count,
                                              Orientation orientation = Orientation::minority_foreground) {
  if (sol.s_hat.size() != count) throw ShapeError("orient_and_rescale: solution length mismatch");
  std::size_t positives = 0, negatives = 0;
  for (double v : sol.s_hat) {
    if (v > 0.0) ++positives;
    else if (v < 0.0) ++negatives;
  }
  bool flip = orientation == Orientation::minority_foreground ? positives > negatives
                                                              : positives < negatives;
  const double factor = std::sqrt(static_cast<double>(count)) * (flip ? -1.0 : 1.0);
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = sol.s_hat[i] * factor;
  return out;
}

inline SpatialMaskSet reshape_masks(std::span<const double> oriented, std::size_t n_images,
                                    std::size_t height, std::size_t width) {
  const std::size_t per = height * width;
  if (oriented.size() != n_images * per) {
    throw ShapeError("reshape_masks: " + std::to_string(oriented.size()) + " values for " +
                     std::to_string(n_images) + " masks of " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  SpatialMaskSet set;
  for (std::size_t n = 0; n < n_images; ++n) {
    auto part = oriented.subspan(n * per, per);
    set.masks.emplace_back(Shape{height, width}, std::vector<double>(part.begin(), part.end()));
  }
  return set;
}

// -s^T G s = -|X s|^2 + (sum s)^2 with s held constant; gradient flows into
// the descriptors as -2 (X s) s^T.
inline Tensor spatial_loss(const DescriptorMatrix& x, std::span<const double> s_hat) {
  const std::size_t n = x.count();
  if (s_hat.size() != n) throw ShapeError("spatial_loss: indicator length mismatch");
  Tensor s(Shape{1, n}, std::vector<double>(s_hat.begin(), s_hat.end()));
  double total = 0.0;
  for (double v : s_hat) total += v;
  Tensor xs = ops::matmul(s, x.columns);
  return ops::add_scalar(ops::scale(ops::sum(ops::mul(xs, xs)), -1.0), total * total);
}

// -s^T G s evaluated matrix-free, for any (not necessarily unit) s.
inline double relaxed_objective(const DescriptorMatrix& x, std::span<const double> s) {
  auto gs = gram_product(x, s);
  return -detail::dot(s, gs);
}

// The three-sum clustering objective over a +-1 assignment (positive =
// foreground), with ordered pairs:
//   -2 sum_{i in F, j in B} d_ij + sum_{i,j in F} d_ij + sum_{i,j in B} d_ij
inline double clustering_objective(const DescriptorMatrix& x, std::span<const double> signs) {
  const std::size_t n = x.count();
  double cross = 0.0, same = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const bool fi = signs[i] > 0.0, fj = signs[j] > 0.0;
      const double dij = pairwise_distance(x.descriptor(i), x.descriptor(j));
      if (fi && !fj) cross += dij;
      else if (fi == fj) same += dij;
    }
  }
  return -2.0 * cross + same;
}

struct PartitionResult {
  std::vector<double> indicator;  // +-1
  double objective = 0.0;         // three-sum value at the optimum
  double max_identity_gap = 0.0;  // max |three-sum - n s^T D s| over all assignments
};

inline constexpr std::size_t kMaxEnumeration = 16;

// Exhaustive minimiser of the three-sum objective over all 2^n assignments.
inline PartitionResult brute_force_partition(const DescriptorMatrix& x) {
  const std::size_t n = x.count();
  if (n > kMaxEnumeration) {
    throw ContractError("brute_force_partition: " + std::to_string(n) +
                        " descriptors exceeds the enumeration limit of " + std::to_string(kMaxEnumeration));
  }
  std::vector<double> dist(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) dist[i * n + j] = pairwise_distance(x.descriptor(i), x.descriptor(j));

  PartitionResult best;
  best.objective = std::numeric_limits<double>::infinity();
  const double level = 1.0 / std::sqrt(static_cast<double>(n));
  std::vector<double> s(n);
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    for (std::size_t i = 0; i < n; ++i) s[i] = (mask >> i) & 1u ? 1.0 : -1.0;
    double cross = 0.0, same = 0.0, quad = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double dij = dist[i * n + j];
        if (s[i] > 0.0 && s[j] < 0.0) cross += dij;
        else if (s[i] == s[j]) same += dij;
        quad += (s[i] * level) * dij * (s[j] * level);
      }
    }
    const double value = -2.0 * cross + same;
    best.max_identity_gap = std::max(best.max_identity_gap, std::abs(value - static_cast<double>(n) * quad));
    if (value < best.objective) {
      best.objective = value;
      best.indicator = s;
    }
  }
  return best;
}

}  // namespace coseg::spatial
