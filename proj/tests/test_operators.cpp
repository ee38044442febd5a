#include "hbip/operators.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace hbip;
using hbip::testing::randomMatrix;
using hbip::testing::randomVector;

namespace {

double adjointGap(const LinearMap& map, Rng& rng, int pairs = 50) {
  double worst = 0.0;
  for (int p = 0; p < pairs; ++p) {
    Vector u = randomVector(map.rows(), rng);
    Vector v = randomVector(map.cols(), rng);
    Vector av = map.apply(v);
    double gap = std::abs(u.dot(av) - map.applyTranspose(u).dot(v));
    worst = std::max(worst, gap / (u.norm() * av.norm()));
  }
  return worst;
}

}  // namespace

TEST(DenseMap, IdentityAndHandExample) {
  auto id = denseMap(Matrix::Identity(3, 3));
  Vector x(3);
  x << 1, 2, 3;
  EXPECT_EQ(id->apply(x), x);

  Matrix a(2, 2);
  a << 1, 2, 3, 4;
  auto map = denseMap(a);
  Vector ones = Vector::Ones(2);
  Vector y = map->apply(ones);
  EXPECT_DOUBLE_EQ(y(0), 3.0);
  EXPECT_DOUBLE_EQ(y(1), 7.0);
}

TEST(DenseMap, AdjointRandom5x4) {
  Rng rng(7);
  auto map = denseMap(randomMatrix(5, 4, rng));
  Vector u = randomVector(5, rng), v = randomVector(4, rng);
  EXPECT_LT(std::abs(u.dot(map->apply(v)) - map->applyTranspose(u).dot(v)), 1e-10);
  EXPECT_LT(adjointGap(*map, rng), 1e-8);
}

TEST(DenseMap, DimensionMismatchThrows) {
  auto map = denseMap(Matrix::Ones(2, 3));
  EXPECT_THROW(map->apply(Vector::Ones(2)), std::invalid_argument);
  EXPECT_THROW(map->applyTranspose(Vector::Ones(3)), std::invalid_argument);
}

TEST(DenseMap, NonFiniteEntriesRejected) {
  Matrix a = Matrix::Ones(2, 2);
  a(0, 1) = std::nan("");
  EXPECT_THROW(denseMap(a), std::invalid_argument);
}

TEST(Counters, IncrementOncePerApplication) {
  auto map = denseMap(Matrix::Ones(3, 2));
  CostLedger ledger;
  map->apply(Vector::Ones(2), &ledger);
  map->apply(Vector::Ones(2), &ledger);
  map->applyTranspose(Vector::Ones(3), &ledger);
  EXPECT_EQ(map->applyCount(), 2u);
  EXPECT_EQ(map->transposeCount(), 1u);
  EXPECT_EQ(ledger.t_a(), 3u);

  auto l = laplacian1dFactor(4);
  l->apply(Vector::Ones(4), &ledger);
  l->solve(Vector::Ones(4), &ledger);
  l->solveTranspose(Vector::Ones(4), &ledger);
  EXPECT_EQ(ledger.t_l(), 1u);
  EXPECT_EQ(ledger.t_linv(), 2u);
  EXPECT_EQ(l->solveCount(), 2u);
}

TEST(Laplacian1d, StencilN3) {
  auto l = laplacian1dFactor(3);
  Matrix dense = densify(*l);
  Matrix expected(3, 3);
  expected << 2, -1, 0, -1, 2, -1, 0, -1, 2;
  EXPECT_LT((dense.transpose() * dense - expected).norm(), 1e-14);
}

TEST(Laplacian1d, RoundTripAndSmallestEigenvalue) {
  Rng rng(3);
  auto l = laplacian1dFactor(16);
  Vector x = randomVector(16, rng);
  EXPECT_LT((l->solve(l->apply(x)) - x).norm() / x.norm(), 1e-10);
  EXPECT_LT((l->solveTranspose(l->applyTranspose(x)) - x).norm() / x.norm(), 1e-10);

  Matrix r = densify(*laplacian1dFactor(4));
  Eigen::SelfAdjointEigenSolver<Matrix> eig(r.transpose() * r);
  EXPECT_NEAR(eig.eigenvalues()(0), 2.0 * (1.0 - std::cos(std::numbers::pi / 5.0)), 1e-12);
}

TEST(Laplacian1d, LogDetMatchesDense) {
  auto l = laplacian1dFactor(10);
  // det tridiag(-1,2,-1) of size n is n + 1.
  EXPECT_NEAR(2.0 * l->logAbsDet(), std::log(11.0), 1e-12);
  EXPECT_THROW(laplacian1dFactor(1), std::invalid_argument);
}

TEST(Biharmonic2d, SineModeEigenvalue) {
  Grid2d grid{8, 4};
  auto l = biharmonic2dFactor(grid);
  Vector mode(grid.size());
  for (Index j = 0; j < grid.ny(); ++j)
    for (Index i = 0; i < grid.nx(); ++i) {
      double sx = std::sin(std::numbers::pi * (i + 1) / static_cast<double>(grid.cells_x));
      double sy = std::sin(std::numbers::pi * (j + 1) / static_cast<double>(grid.cells_y));
      mode(grid.index(i, j)) = sx * sy;
    }
  double eig = 4.0 - 2.0 * std::cos(std::numbers::pi / grid.cells_x) -
               2.0 * std::cos(std::numbers::pi / grid.cells_y);
  EXPECT_LT((l->apply(mode) - eig * mode).norm(), 1e-12);
}

TEST(Biharmonic2d, RoundTripSymmetryAndDeterminant) {
  Rng rng(11);
  Grid2d grid{8, 4};
  auto l = biharmonic2dFactor(grid);
  Vector x = randomVector(grid.size(), rng), y = randomVector(grid.size(), rng);
  EXPECT_LT((l->solve(l->apply(x)) - x).norm() / x.norm(), 1e-8);
  EXPECT_LT((l->solveTranspose(l->applyTranspose(x)) - x).norm() / x.norm(), 1e-8);
  EXPECT_LT(std::abs(x.dot(l->apply(y)) - l->apply(x).dot(y)), 1e-10);

  Matrix dense = densify(*l);
  EXPECT_NEAR(l->logAbsDet(), std::log(std::abs(dense.determinant())), 1e-9);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(dense.transpose() * dense);
  EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0);
}

TEST(Conv1d, SpikeGivesScaledKernelColumn) {
  Kernel1d kernel;
  const Index n = 32;
  auto a = conv1dMap(kernel, n, n);
  Vector spike = Vector::Zero(n);
  spike(5) = 1.0;
  Vector y = a->apply(spike);
  for (Index i = 0; i < n; ++i) {
    double s = (i + 0.5) / n, t = (5 + 0.5) / n;
    EXPECT_NEAR(y(i), kernel(s - t) / n, 1e-14);
  }
}

TEST(Conv1d, ConstantKernelQuadrature) {
  Kernel1d kernel{Kernel1d::Shape::Constant, 1.0};
  auto a = conv1dMap(kernel, 20, 7);
  Vector y = a->apply(Vector::Ones(20));
  for (Index i = 0; i < y.size(); ++i) EXPECT_NEAR(y(i), 1.0, 1e-14);
}

TEST(Conv1d, AdjointAndErrors) {
  Rng rng(5);
  auto a = conv1dMap(Kernel1d{}, 32, 32);
  Vector u = randomVector(32, rng), v = randomVector(32, rng);
  EXPECT_LT(std::abs(u.dot(a->apply(v)) - a->applyTranspose(u).dot(v)), 1e-10);
  EXPECT_LT(adjointGap(*a, rng), 1e-8);
  EXPECT_THROW(conv1dMap(Kernel1d{Kernel1d::Shape::Gaussian, 0.0}, 8, 8), std::invalid_argument);
  EXPECT_THROW(conv1dMap(Kernel1d{}, 4, 8), std::invalid_argument);
}

namespace {

std::vector<Index> allIndices(const Grid2d& g) {
  std::vector<Index> idx(static_cast<std::size_t>(g.size()));
  for (Index i = 0; i < g.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
  return idx;
}

}  // namespace

TEST(Heat2d, AdjointSmallGrid) {
  Rng rng(13);
  Grid2d grid{8, 4};
  std::vector<Index> obs{0, 3, 7, 10, 14, 20};
  auto a = heat2dMap(grid, 0.01, 0.5, 4, obs);
  Vector u = randomVector(a->rows(), rng), v = randomVector(a->cols(), rng);
  EXPECT_LT(std::abs(u.dot(a->apply(v)) - a->applyTranspose(u).dot(v)), 1e-10);
  EXPECT_LT(adjointGap(*a, rng), 1e-8);
}

TEST(Heat2d, SpikeDiffusesPositivelyAndLosesMass) {
  Grid2d grid{8, 4};
  auto a = heat2dMap(grid, 0.05, 1.0, 10, allIndices(grid));
  Vector spike = Vector::Zero(grid.size());
  spike(grid.index(3, 1)) = 1.0;
  Vector out = a->evolve(spike);
  EXPECT_GT(out.minCoeff(), 0.0);
  EXPECT_LT(out.sum(), 1.0);
  EXPECT_EQ(a->apply(Vector::Zero(grid.size())), Vector::Zero(a->rows()));
}

TEST(Heat2d, ZeroDiffusionIsRestriction) {
  Rng rng(2);
  Grid2d grid{8, 4};
  std::vector<Index> obs{1, 4, 9};
  auto a = heat2dMap(grid, 0.0, 5.0, 50, obs);
  Vector x = randomVector(grid.size(), rng);
  Vector y = a->apply(x);
  for (std::size_t i = 0; i < obs.size(); ++i) EXPECT_DOUBLE_EQ(y(static_cast<Index>(i)), x(obs[i]));
}

TEST(Heat2d, InvalidObservationIndexThrows) {
  Grid2d grid{8, 4};
  EXPECT_THROW(heat2dMap(grid, 0.001, 5.0, 50, {grid.size()}), std::invalid_argument);
  EXPECT_THROW(heat2dMap(grid, 0.001, 5.0, 0, {0}), std::invalid_argument);
}

TEST(DenseFactor, RoundTrip) {
  Rng rng(8);
  Matrix l = hbip::testing::randomFactor(6, rng);
  DenseFactor f(l);
  Vector x = randomVector(6, rng);
  EXPECT_LT((f.solve(f.apply(x)) - x).norm(), 1e-10);
  EXPECT_LT((f.solveTranspose(f.applyTranspose(x)) - x).norm(), 1e-10);
  EXPECT_NEAR(f.logAbsDet(), std::log(std::abs(l.determinant())), 1e-10);
}

TEST(CostLedger, Arithmetic) {
  CostLedger a{1, 2, 3, 4, 5, 6}, b{1, 1, 1, 1, 1, 1};
  CostLedger c = a - b;
  EXPECT_EQ(c.forward, 0u);
  EXPECT_EQ(c.surrogate, 5u);
  c += b;
  EXPECT_EQ(c, a);
}
