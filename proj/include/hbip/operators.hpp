#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <atomic>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace hbip {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Thrown when a factorization, solve or decomposition cannot be completed.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tally of the operations that dominate sampler cost.
///
/// T_A counts forward and adjoint applications of the forward map, T_L counts
/// applications of the prior factor (and its transpose) and T_Linv counts
/// solves with the factor (and its transpose).
struct CostLedger {
  std::uint64_t forward = 0;
  std::uint64_t adjoint = 0;
  std::uint64_t factor_apply = 0;
  std::uint64_t factor_solve = 0;
  std::uint64_t full_posterior = 0;
  std::uint64_t surrogate = 0;

  std::uint64_t t_a() const { return forward + adjoint; }
  std::uint64_t t_l() const { return factor_apply; }
  std::uint64_t t_linv() const { return factor_solve; }

  CostLedger& operator+=(const CostLedger& other);
  friend CostLedger operator-(CostLedger lhs, const CostLedger& rhs);
  friend bool operator==(const CostLedger&, const CostLedger&) = default;
};

/// Matrix-free linear map R^cols -> R^rows with instrumented application counts.
///
/// Counters are atomic so a single map can be shared by chains running on
/// different threads. Passing a ledger additionally charges the caller.
class LinearMap {
 public:
  LinearMap(const LinearMap&) = delete;
  LinearMap& operator=(const LinearMap&) = delete;
  virtual ~LinearMap() = default;

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }

  Vector apply(const Vector& x, CostLedger* ledger = nullptr) const;
  Vector applyTranspose(const Vector& y, CostLedger* ledger = nullptr) const;

  std::uint64_t applyCount() const { return applies_.load(std::memory_order_relaxed); }
  std::uint64_t transposeCount() const { return transposes_.load(std::memory_order_relaxed); }

 protected:
  LinearMap(Index rows, Index cols);

  virtual void doApply(const Vector& x, Vector& y) const = 0;
  virtual void doApplyTranspose(const Vector& y, Vector& x) const = 0;

 private:
  Index rows_;
  Index cols_;
  mutable std::atomic<std::uint64_t> applies_{0};
  mutable std::atomic<std::uint64_t> transposes_{0};
};

/// Square invertible factor L of a prior precision, Gamma_prior^{-1} = L^T L.
class PriorFactor {
 public:
  PriorFactor(const PriorFactor&) = delete;
  PriorFactor& operator=(const PriorFactor&) = delete;
  virtual ~PriorFactor() = default;

  Index dim() const { return dim_; }

  Vector apply(const Vector& x, CostLedger* ledger = nullptr) const;
  Vector applyTranspose(const Vector& x, CostLedger* ledger = nullptr) const;
  Vector solve(const Vector& y, CostLedger* ledger = nullptr) const;
  Vector solveTranspose(const Vector& y, CostLedger* ledger = nullptr) const;

  /// log|det L|; theta-independent, so it cancels in every acceptance ratio.
  virtual double logAbsDet() const = 0;

  std::uint64_t applyCount() const { return applies_.load(std::memory_order_relaxed); }
  std::uint64_t solveCount() const { return solves_.load(std::memory_order_relaxed); }

 protected:
  explicit PriorFactor(Index dim);

  virtual void doApply(const Vector& x, Vector& y) const = 0;
  virtual void doApplyTranspose(const Vector& x, Vector& y) const = 0;
  virtual void doSolve(const Vector& y, Vector& x) const = 0;
  virtual void doSolveTranspose(const Vector& y, Vector& x) const = 0;

 private:
  void checkDim(const Vector& v, const char* what) const;

  Index dim_;
  mutable std::atomic<std::uint64_t> applies_{0};
  mutable std::atomic<std::uint64_t> solves_{0};
};

class DenseMap final : public LinearMap {
 public:
  explicit DenseMap(Matrix matrix);
  const Matrix& matrix() const { return matrix_; }

 protected:
  void doApply(const Vector& x, Vector& y) const override;
  void doApplyTranspose(const Vector& y, Vector& x) const override;

 private:
  Matrix matrix_;
};

/// Convolution kernel for the 1D deblurring quadrature.
struct Kernel1d {
  enum class Shape { Gaussian, Constant };
  Shape shape = Shape::Gaussian;
  double width = 0.05;

  double operator()(double s) const;
};

/// Midpoint-quadrature Fredholm operator on [0,1]:
/// (Ax)_i = (1/n) sum_j a(s_i - s'_j) x_j with s'_j = (j + 1/2)/n and
/// observation points s_i = (i + 1/2)/m.
class Conv1dMap final : public LinearMap {
 public:
  Conv1dMap(const Kernel1d& kernel, Index n, Index m);
  const Matrix& matrix() const { return matrix_; }

 protected:
  void doApply(const Vector& x, Vector& y) const override;
  void doApplyTranspose(const Vector& y, Vector& x) const override;

 private:
  Matrix matrix_;
};

/// Interior-node geometry of a rectangular grid with homogeneous Dirichlet
/// boundary. `cells_x` x `cells_y` cells give (cells_x-1)*(cells_y-1) unknowns,
/// ordered with x fastest.
struct Grid2d {
  Index cells_x = 0;
  Index cells_y = 0;
  double length_x = 2.0;
  double length_y = 1.0;

  Index nx() const { return cells_x - 1; }
  Index ny() const { return cells_y - 1; }
  Index size() const { return nx() * ny(); }
  double hx() const { return length_x / static_cast<double>(cells_x); }
  double hy() const { return length_y / static_cast<double>(cells_y); }
  Index index(Index i, Index j) const { return j * nx() + i; }
};

/// Sparse 5-point Dirichlet Laplacian -Delta_h on the interior nodes.
/// With `scaled` the h^-2 factors are included; otherwise the unit stencil
/// (4 on the diagonal, -1 for each neighbour) is used.
Eigen::SparseMatrix<double> dirichletLaplacian2d(const Grid2d& grid, bool scaled);

/// Initial state -> observed final state of u_t = kappa Delta u with
/// homogeneous Dirichlet data, backward Euler with `steps` uniform steps.
class Heat2dMap final : public LinearMap {
 public:
  Heat2dMap(const Grid2d& grid, double kappa, double final_time, int steps,
            std::vector<Index> observed);

  const Grid2d& grid() const { return grid_; }
  const std::vector<Index>& observed() const { return observed_; }

  /// Full-grid state after all time steps, without observation.
  Vector evolve(const Vector& u0) const;

 protected:
  void doApply(const Vector& x, Vector& y) const override;
  void doApplyTranspose(const Vector& y, Vector& x) const override;

 private:
  Grid2d grid_;
  int steps_;
  bool identity_step_;
  std::vector<Index> observed_;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> step_;
};

/// Upper bidiagonal Cholesky factor R of the unscaled 1D Dirichlet Laplacian
/// tridiag(-1, 2, -1), so that R^T R equals the stencil matrix.
class Laplacian1dFactor final : public PriorFactor {
 public:
  explicit Laplacian1dFactor(Index n);
  double logAbsDet() const override { return log_abs_det_; }

 protected:
  void doApply(const Vector& x, Vector& y) const override;
  void doApplyTranspose(const Vector& x, Vector& y) const override;
  void doSolve(const Vector& y, Vector& x) const override;
  void doSolveTranspose(const Vector& y, Vector& x) const override;

 private:
  Vector diag_;
  Vector super_;
  double log_abs_det_ = 0.0;
};

/// L = unscaled 5-point Dirichlet Laplacian on a 2D grid, so L^T L is the
/// discrete biharmonic precision. L is symmetric; solves use a sparse
/// Cholesky factorization computed once.
class Laplacian2dFactor final : public PriorFactor {
 public:
  explicit Laplacian2dFactor(const Grid2d& grid);
  double logAbsDet() const override { return log_abs_det_; }
  const Grid2d& grid() const { return grid_; }

 protected:
  void doApply(const Vector& x, Vector& y) const override;
  void doApplyTranspose(const Vector& x, Vector& y) const override;
  void doSolve(const Vector& y, Vector& x) const override;
  void doSolveTranspose(const Vector& y, Vector& x) const override;

 private:
  Grid2d grid_;
  Eigen::SparseMatrix<double> stencil_;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> chol_;
  double log_abs_det_ = 0.0;
};

/// Arbitrary invertible dense factor, mostly for small test problems.
class DenseFactor final : public PriorFactor {
 public:
  explicit DenseFactor(Matrix factor);
  double logAbsDet() const override { return log_abs_det_; }
  const Matrix& matrix() const { return factor_; }

 protected:
  void doApply(const Vector& x, Vector& y) const override;
  void doApplyTranspose(const Vector& x, Vector& y) const override;
  void doSolve(const Vector& y, Vector& x) const override;
  void doSolveTranspose(const Vector& y, Vector& x) const override;

 private:
  Matrix factor_;
  Eigen::PartialPivLU<Matrix> lu_;
  double log_abs_det_ = 0.0;
};

std::shared_ptr<DenseMap> denseMap(Matrix matrix);
std::shared_ptr<Conv1dMap> conv1dMap(const Kernel1d& kernel, Index n, Index m);
std::shared_ptr<Heat2dMap> heat2dMap(const Grid2d& grid, double kappa, double final_time,
                                     int steps, std::vector<Index> observed);
std::shared_ptr<Laplacian1dFactor> laplacian1dFactor(Index n);
std::shared_ptr<Laplacian2dFactor> biharmonic2dFactor(const Grid2d& grid);

/// Materialize a map column by column (test scale only).
Matrix densify(const LinearMap& map, CostLedger* ledger = nullptr);
Matrix densify(const PriorFactor& factor, CostLedger* ledger = nullptr);

}  // namespace hbip
