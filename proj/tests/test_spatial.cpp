#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cosegnet/grad_check.hpp"
#include "cosegnet/spatial_modulator.hpp"
#include "oracles.hpp"

using namespace coseg;
using namespace coseg::spatial;

namespace {

DescriptorMatrix from_rows(std::size_t n, std::size_t d, std::vector<double> rows) {
  return descriptors_from_rows(n, d, std::move(rows));
}

DescriptorMatrix random_instance(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  return from_rows(n, d, oracle::random_unit_rows(n, d, rng));
}

std::vector<double> signs_of(std::span<const double> s) {
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i] > 0.0 ? 1.0 : -1.0;
  return out;
}

}  // namespace

TEST(CollectDescriptors, SingletonIsThatVector) {
  Tensor map(Shape{1, 1, 3}, std::vector<double>{0.6, 0.0, 0.8});
  DescriptorMatrix x = collect_descriptors({map});
  ASSERT_EQ(x.count(), 1u);
  EXPECT_EQ(x.columns[0], 0.6);
  EXPECT_EQ(x.columns[2], 0.8);
}

TEST(CollectDescriptors, IndexArithmeticAndSwap) {
  std::mt19937_64 rng(1);
  Tensor a = oracle::random_tensor({3, 4, 2}, rng), b = oracle::random_tensor({3, 4, 2}, rng);
  DescriptorMatrix ab = collect_descriptors({a, b}), ba = collect_descriptors({b, a});
  for (std::size_t img = 0; img < 2; ++img)
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t ch = 0; ch < 2; ++ch) {
          const Tensor& src = img == 0 ? a : b;
          const double expect = src[(r * 4 + c) * 2 + ch];
          EXPECT_EQ(ab.descriptor(ab.index(img, r, c))[ch], expect);
          EXPECT_EQ(ba.descriptor(ba.index(1 - img, r, c))[ch], expect);
        }
}

TEST(CollectDescriptors, MismatchedShapesRejected) {
  EXPECT_THROW(collect_descriptors({Tensor(Shape{2, 2, 3}), Tensor(Shape{2, 3, 3})}), ShapeError);
}

TEST(PairwiseDistance, Examples) {
  std::vector<double> e1{1, 0}, e2{0, 1}, m1{-1, 0};
  EXPECT_EQ(pairwise_distance(e1, e1), 0.0);
  EXPECT_EQ(pairwise_distance(e1, e2), 2.0);
  EXPECT_EQ(pairwise_distance(e1, m1), 4.0);
}

TEST(PairwiseDistance, EqualsSquaredEuclidean) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 200; ++t) {
    auto rows = oracle::random_unit_rows(2, 5, rng);
    std::span<const double> a(rows.data(), 5), b(rows.data() + 5, 5);
    double sq = 0.0;
    for (int c = 0; c < 5; ++c) sq += (a[c] - b[c]) * (a[c] - b[c]);
    EXPECT_NEAR(pairwise_distance(a, b), sq, 1e-12);
  }
}

TEST(GramProduct, MatchesDenseMatrix) {
  std::mt19937_64 rng(3);
  for (std::size_t n : {2, 3, 7, 12}) {
    auto rows = oracle::random_unit_rows(n, 4, rng);
    DescriptorMatrix x = from_rows(n, 4, rows);
    Eigen::MatrixXd g = oracle::dense_gram(rows, n, 4);
    std::vector<double> v(n);
    std::normal_distribution<double> dist;
    for (double& e : v) e = dist(rng);
    Eigen::VectorXd dense = g * Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(n));
    auto mf = gram_product(x, v);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(mf[i], dense(static_cast<Eigen::Index>(i)), 1e-12);
  }
}

TEST(GramProduct, ZeroAndIdenticalColumns) {
  DescriptorMatrix x = from_rows(2, 2, {0.6, 0.8, 0.6, 0.8});
  for (double v : gram_product(x, std::vector<double>{0, 0})) EXPECT_EQ(v, 0.0);
  for (double v : gram_product(x, std::vector<double>{1, -1})) EXPECT_NEAR(v, 0.0, 1e-15);
  EXPECT_THROW(gram_product(x, std::vector<double>{1}), ShapeError);
}

TEST(DominantEigenvector, AntipodalClosedForm) {
  DescriptorMatrix x = from_rows(2, 2, {1, 0, -1, 0});
  SpectralSolution s = dominant_eigenvector(x);
  ASSERT_TRUE(s.converged);
  EXPECT_NEAR(s.lambda_max, 2.0, 1e-9);
  EXPECT_NEAR(std::abs(s.s_hat[0]), 1.0 / std::sqrt(2.0), 1e-9);
  EXPECT_NEAR(s.s_hat[0], -s.s_hat[1], 1e-9);
  EXPECT_LE(s.residual, 1e-8);
}

TEST(DominantEigenvector, ZeroMatrixAnyUnitVector) {
  DescriptorMatrix x = from_rows(2, 2, {0.6, 0.8, 0.6, 0.8});
  SpectralSolution s = dominant_eigenvector(x);
  EXPECT_TRUE(s.converged);
  EXPECT_NEAR(s.lambda_max, 0.0, 1e-12);
  EXPECT_NEAR(spatial::detail::norm(s.s_hat), 1.0, 1e-12);
}

TEST(DominantEigenvector, MatchesDenseEigensolver) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 4 + t % 9, d = 2 + t % 7;
    auto rows = oracle::random_unit_rows(n, d, rng);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(oracle::dense_gram(rows, n, d));
    const Eigen::Index top = static_cast<Eigen::Index>(n) - 1;
    SpectralSolution s = dominant_eigenvector(from_rows(n, d, rows), 1e-8, 10000, static_cast<std::uint64_t>(t));
    ASSERT_TRUE(s.converged) << "instance " << t;
    EXPECT_LE(s.residual, 1e-8);
    EXPECT_NEAR(s.lambda_max, es.eigenvalues()(top), 1e-6);
    // Eigenvector comparison is meaningful when the top eigenvalue is simple.
    if (es.eigenvalues()(top) - es.eigenvalues()(top - 1) > 1e-3) {
      for (std::size_t i = 0; i < n; ++i)
        EXPECT_NEAR(std::abs(s.s_hat[i]), std::abs(es.eigenvectors()(static_cast<Eigen::Index>(i), top)), 1e-6);
    }
  }
}

TEST(DominantEigenvector, FindsAlgebraicMaximumWhenNegativeDominates) {
  // With d = 2 and many points, G's most negative eigenvalue (about -n) can
  // dominate in magnitude; the largest algebraic one is still expected.
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    auto rows = oracle::random_unit_rows(10, 2, rng);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(oracle::dense_gram(rows, 10, 2));
    SpectralSolution s = dominant_eigenvector(from_rows(10, 2, rows));
    EXPECT_NEAR(s.lambda_max, es.eigenvalues().maxCoeff(), 1e-6);
  }
}

TEST(DominantEigenvector, BudgetExhaustionIsReported) {
  std::mt19937_64 rng(6);
  DescriptorMatrix x = random_instance(rng, 12, 3);
  SpectralSolution s = dominant_eigenvector(x, 1e-14, 2);
  EXPECT_FALSE(s.converged);
  EXPECT_EQ(s.iterations, 2u);
  EXPECT_GT(s.residual, 1e-14);
  EXPECT_THROW(dominant_eigenvector(x, 0.0), ContractError);
}

TEST(DominantEigenvector, EntriesWithinUnitRange) {
  std::mt19937_64 rng(7);
  SpectralSolution s = dominant_eigenvector(random_instance(rng, 40, 6));
  for (double v : s.s_hat) {
    EXPECT_LE(v, 1.0);
    EXPECT_GE(v, -1.0);
  }
}

TEST(Orientation, MinorityPositiveKept) {
  SpectralSolution sol;
  sol.s_hat = {0.9, -0.3, -0.3, -0.1};
  const double nrm = spatial::detail::norm(sol.s_hat);
  for (double& v : sol.s_hat) v /= nrm;
  auto kept = orient_and_rescale(sol, 4);
  EXPECT_GT(kept[0], 0.0);
  EXPECT_NEAR(kept[0], 2.0 * 0.9 / nrm, 1e-12);
  for (double& v : sol.s_hat) v = -v;
  auto flipped = orient_and_rescale(sol, 4);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(kept[i], flipped[i]);
}

TEST(Orientation, IndicatorRescalesToUnitLevels) {
  SpectralSolution sol;
  sol.s_hat = {0.5, -0.5, -0.5, -0.5};
  auto out = orient_and_rescale(sol, 4);
  EXPECT_EQ(out, (std::vector<double>{1, -1, -1, -1}));
}

TEST(Orientation, ExactTieKeepsSolverSign) {
  SpectralSolution sol;
  sol.s_hat = {0.5, 0.5, -0.5, -0.5};
  EXPECT_EQ(orient_and_rescale(sol, 4), (std::vector<double>{1, 1, -1, -1}));
  auto maj = orient_and_rescale(sol, 4, Orientation::majority_foreground);
  EXPECT_EQ(maj, (std::vector<double>{1, 1, -1, -1}));
}

TEST(Orientation, PipelineInvariantToSolverSign) {
  std::mt19937_64 rng(8);
  // Odd count, so the two signs never tie.
  DescriptorMatrix x = random_instance(rng, 21, 4);
  SpectralSolution s = dominant_eigenvector(x);
  SpectralSolution neg = s;
  for (double& v : neg.s_hat) v = -v;
  auto a = reshape_masks(orient_and_rescale(s, 21), 3, 1, 7);
  auto b = reshape_masks(orient_and_rescale(neg, 21), 3, 1, 7);
  for (std::size_t m = 0; m < 3; ++m)
    for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(a.masks[m][i], b.masks[m][i]);
}

TEST(ReshapeMasks, OrderingAndErrors) {
  auto set = reshape_masks(std::vector<double>{1, -1, -1, -1}, 1, 2, 2);
  ASSERT_EQ(set.masks.size(), 1u);
  EXPECT_EQ(set.masks[0].dims(), (Shape{2, 2}));
  EXPECT_EQ(set.masks[0][0], 1.0);
  EXPECT_EQ(set.masks[0][3], -1.0);
  EXPECT_THROW(reshape_masks(std::vector<double>{1, 2, 3}, 1, 2, 2), ShapeError);
}

TEST(ReshapeMasks, RoundTripWithCollect) {
  std::mt19937_64 rng(9);
  const std::size_t n = 3, h = 4, w = 5;
  std::vector<double> v(n * h * w);
  std::normal_distribution<double> dist;
  for (double& e : v) e = dist(rng);
  auto set = reshape_masks(v, n, h, w);
  std::vector<Tensor> maps;
  for (const Tensor& m : set.masks) maps.push_back(ops::reshape(m, Shape{h, w, 1}));
  DescriptorMatrix back = collect_descriptors(maps);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(back.columns[i], v[i]);
}

TEST(SpatialLoss, ClosedForms) {
  DescriptorMatrix anti = from_rows(2, 2, {1, 0, -1, 0});
  const double r = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(spatial_loss(anti, std::vector<double>{r, -r}).item(), -2.0, 1e-12);
  DescriptorMatrix same = from_rows(2, 2, {0.6, 0.8, 0.6, 0.8});
  EXPECT_NEAR(spatial_loss(same, std::vector<double>{r, r}).item(), 0.0, 1e-12);
}

TEST(SpatialLoss, EqualsMinusQuadraticForm) {
  std::mt19937_64 rng(10);
  auto rows = oracle::random_unit_rows(9, 3, rng);
  DescriptorMatrix x = from_rows(9, 3, rows);
  SpectralSolution s = dominant_eigenvector(x);
  Eigen::Map<Eigen::VectorXd> sv(s.s_hat.data(), 9);
  const double dense = -(sv.transpose() * oracle::dense_gram(rows, 9, 3) * sv)(0, 0);
  EXPECT_NEAR(spatial_loss(x, s.s_hat).item(), dense, 1e-12);
  EXPECT_NEAR(spatial_loss(x, s.s_hat).item(), -s.lambda_max, 1e-8);
}

TEST(SpatialLoss, FixedIndicatorGradientMatchesFiniteDifference) {
  std::mt19937_64 rng(11);
  DescriptorMatrix x = random_instance(rng, 8, 3);
  std::vector<double> s = dominant_eigenvector(x).s_hat;
  auto r = grad_check([&] { return spatial_loss(x, s); }, {x.columns});
  EXPECT_LT(r.max_relative_error, 1e-6);
}

TEST(SpatialLoss, EnvelopeGradientOfTopEigenvalue) {
  // d(-lambda_max)/dX with the eigenvector re-solved each evaluation equals
  // the fixed-indicator gradient at a simple top eigenvalue.
  std::mt19937_64 rng(12);
  DescriptorMatrix x;
  Eigen::VectorXd ev;
  do {
    x = random_instance(rng, 8, 3);
    std::vector<double> rows(x.columns.data().begin(), x.columns.data().end());
    ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(oracle::dense_gram(rows, 8, 3)).eigenvalues();
  } while (ev(7) - ev(6) < 0.1);

  std::vector<double> s = dominant_eigenvector(x, 1e-12).s_hat;
  Tensor cols = x.columns.clone();
  cols.set_requires_grad(true);
  DescriptorMatrix xg = x;
  xg.columns = cols;
  {
    Graph g;
    GraphScope scope(g);
    g.backward(spatial_loss(xg, s));
  }
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    auto eval = [&](double delta) {
      DescriptorMatrix p = x;
      p.columns = x.columns.clone();
      p.columns[i] += delta;
      return -dominant_eigenvector(p, 1e-13, 100000).lambda_max;
    };
    const double fd = (eval(h) - eval(-h)) / (2 * h);
    worst = std::max(worst, std::abs(fd - cols.grad()[i]) / std::max(1.0, std::abs(fd)));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(BruteForce, AntipodalPairSplits) {
  PartitionResult r = brute_force_partition(from_rows(2, 2, {1, 0, -1, 0}));
  EXPECT_NE(r.indicator[0], r.indicator[1]);
}

TEST(BruteForce, IdenticalPairsGroupTogether) {
  PartitionResult r = brute_force_partition(from_rows(4, 2, {1, 0, 0, 1, 1, 0, 0, 1}));
  EXPECT_EQ(r.indicator[0], r.indicator[2]);
  EXPECT_EQ(r.indicator[1], r.indicator[3]);
  EXPECT_NE(r.indicator[0], r.indicator[1]);
}

TEST(BruteForce, RefusesLargeInstances) {
  std::mt19937_64 rng(13);
  EXPECT_THROW(brute_force_partition(random_instance(rng, 17, 2)), ContractError);
}

TEST(BruteForce, QuadraticIdentityAndPairwiseDifferences) {
  std::mt19937_64 rng(14);
  std::uniform_int_distribution<int> bits(0, 1);
  for (int t = 0; t < 30; ++t) {
    const std::size_t n = 4 + t % 7;
    DescriptorMatrix x = random_instance(rng, n, 3);
    PartitionResult r = brute_force_partition(x);
    EXPECT_LT(r.max_identity_gap, 1e-9);
    // Differences between two assignments agree between the three-sum and
    // the scaled relaxed form at indicator levels +-1/sqrt(n).
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = bits(rng) ? 1.0 : -1.0;
      b[i] = bits(rng) ? 1.0 : -1.0;
    }
    auto scaled = [&](std::vector<double> s) {
      for (double& v : s) v /= std::sqrt(static_cast<double>(n));
      return 2.0 * static_cast<double>(n) * relaxed_objective(x, s);
    };
    EXPECT_NEAR(clustering_objective(x, a) - clustering_objective(x, b), scaled(a) - scaled(b), 1e-9);
  }
}

TEST(BruteForce, RelaxationLowerBoundsDiscreteOptimum) {
  std::mt19937_64 rng(15);
  for (int t = 0; t < 40; ++t) {
    const std::size_t n = 4 + t % 9;
    DescriptorMatrix x = random_instance(rng, n, 2 + t % 7);
    SpectralSolution s = dominant_eigenvector(x);
    PartitionResult r = brute_force_partition(x);
    const double discrete = r.objective / (2.0 * static_cast<double>(n));
    EXPECT_LE(relaxed_objective(x, s.s_hat), discrete + 1e-9);
  }
}

TEST(BruteForce, SignRoundingOfRelaxedSolution) {
  std::mt19937_64 rng(16);
  DescriptorMatrix x = from_rows(6, 2, {1, 0, 0.99, 0.141067, 0.98, -0.198997, -1, 0, -0.99, 0.141067, -0.98, 0.198997});
  SpectralSolution s = dominant_eigenvector(x);
  PartitionResult r = brute_force_partition(x);
  EXPECT_NEAR(clustering_objective(x, signs_of(s.s_hat)), r.objective, 1e-9);
}
