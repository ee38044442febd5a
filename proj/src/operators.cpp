#include "hbip/operators.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace hbip {

namespace {

void requireLength(const Vector& v, Index expected, const char* what) {
  if (v.size() != expected) {
    std::ostringstream msg;
    msg << what << ": expected vector of length " << expected << ", got " << v.size();
    throw std::invalid_argument(msg.str());
  }
}

void bump(std::atomic<std::uint64_t>& counter) {
  counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace

CostLedger& CostLedger::operator+=(const CostLedger& other) {
  forward += other.forward;
  adjoint += other.adjoint;
  factor_apply += other.factor_apply;
  factor_solve += other.factor_solve;
  full_posterior += other.full_posterior;
  surrogate += other.surrogate;
  return *this;
}

CostLedger operator-(CostLedger lhs, const CostLedger& rhs) {
  lhs.forward -= rhs.forward;
  lhs.adjoint -= rhs.adjoint;
  lhs.factor_apply -= rhs.factor_apply;
  lhs.factor_solve -= rhs.factor_solve;
  lhs.full_posterior -= rhs.full_posterior;
  lhs.surrogate -= rhs.surrogate;
  return lhs;
}

// ---------------------------------------------------------------------------
// LinearMap

LinearMap::LinearMap(Index rows, Index cols) : rows_(rows), cols_(cols) {
  if (rows <= 0 || cols <= 0) {
    throw std::invalid_argument("LinearMap: dimensions must be positive");
  }
}

Vector LinearMap::apply(const Vector& x, CostLedger* ledger) const {
  requireLength(x, cols_, "LinearMap::apply");
  Vector y(rows_);
  doApply(x, y);
  bump(applies_);
  if (ledger) ++ledger->forward;
  return y;
}

Vector LinearMap::applyTranspose(const Vector& y, CostLedger* ledger) const {
  requireLength(y, rows_, "LinearMap::applyTranspose");
  Vector x(cols_);
  doApplyTranspose(y, x);
  bump(transposes_);
  if (ledger) ++ledger->adjoint;
  return x;
}

// ---------------------------------------------------------------------------
// PriorFactor

PriorFactor::PriorFactor(Index dim) : dim_(dim) {
  if (dim <= 0) throw std::invalid_argument("PriorFactor: dimension must be positive");
}

void PriorFactor::checkDim(const Vector& v, const char* what) const {
  requireLength(v, dim_, what);
}

Vector PriorFactor::apply(const Vector& x, CostLedger* ledger) const {
  checkDim(x, "PriorFactor::apply");
  Vector y(dim_);
  doApply(x, y);
  bump(applies_);
  if (ledger) ++ledger->factor_apply;
  return y;
}

Vector PriorFactor::applyTranspose(const Vector& x, CostLedger* ledger) const {
  checkDim(x, "PriorFactor::applyTranspose");
  Vector y(dim_);
  doApplyTranspose(x, y);
  bump(applies_);
  if (ledger) ++ledger->factor_apply;
  return y;
}

Vector PriorFactor::solve(const Vector& y, CostLedger* ledger) const {
  checkDim(y, "PriorFactor::solve");
  Vector x(dim_);
  doSolve(y, x);
  bump(solves_);
  if (ledger) ++ledger->factor_solve;
  return x;
}

Vector PriorFactor::solveTranspose(const Vector& y, CostLedger* ledger) const {
  checkDim(y, "PriorFactor::solveTranspose");
  Vector x(dim_);
  doSolveTranspose(y, x);
  bump(solves_);
  if (ledger) ++ledger->factor_solve;
  return x;
}

// ---------------------------------------------------------------------------
// Dense map

DenseMap::DenseMap(Matrix matrix)
    : LinearMap(matrix.rows(), matrix.cols()), matrix_(std::move(matrix)) {
  if (!matrix_.allFinite()) throw std::invalid_argument("DenseMap: non-finite entries");
}

void DenseMap::doApply(const Vector& x, Vector& y) const { y.noalias() = matrix_ * x; }

void DenseMap::doApplyTranspose(const Vector& y, Vector& x) const {
  x.noalias() = matrix_.transpose() * y;
}

// ---------------------------------------------------------------------------
// 1D convolution

double Kernel1d::operator()(double s) const {
  switch (shape) {
    case Shape::Constant:
      return 1.0;
    case Shape::Gaussian:
      return std::exp(-s * s / (2.0 * width * width)) /
             (width * std::sqrt(2.0 * std::numbers::pi));
  }
  return 0.0;
}

Conv1dMap::Conv1dMap(const Kernel1d& kernel, Index n, Index m) : LinearMap(m, n) {
  if (n < m || m < 1) throw std::invalid_argument("conv1d_map: requires n >= m >= 1");
  if (kernel.shape == Kernel1d::Shape::Gaussian && !(kernel.width > 0.0)) {
    throw std::invalid_argument("conv1d_map: kernel width must be positive");
  }
  matrix_.resize(m, n);
  const double h = 1.0 / static_cast<double>(n);
  for (Index i = 0; i < m; ++i) {
    const double s = (static_cast<double>(i) + 0.5) / static_cast<double>(m);
    for (Index j = 0; j < n; ++j) {
      const double t = (static_cast<double>(j) + 0.5) * h;
      matrix_(i, j) = h * kernel(s - t);
    }
  }
}

void Conv1dMap::doApply(const Vector& x, Vector& y) const { y.noalias() = matrix_ * x; }

void Conv1dMap::doApplyTranspose(const Vector& y, Vector& x) const {
  x.noalias() = matrix_.transpose() * y;
}

// ---------------------------------------------------------------------------
// 2D heat equation

Eigen::SparseMatrix<double> dirichletLaplacian2d(const Grid2d& grid, bool scaled) {
  if (grid.cells_x < 2 || grid.cells_y < 2) {
    throw std::invalid_argument("2D Laplacian: need at least 2 cells per direction");
  }
  const double wx = scaled ? 1.0 / (grid.hx() * grid.hx()) : 1.0;
  const double wy = scaled ? 1.0 / (grid.hy() * grid.hy()) : 1.0;
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(grid.size()) * 5);
  for (Index j = 0; j < grid.ny(); ++j) {
    for (Index i = 0; i < grid.nx(); ++i) {
      const Index row = grid.index(i, j);
      entries.emplace_back(row, row, 2.0 * wx + 2.0 * wy);
      if (i > 0) entries.emplace_back(row, grid.index(i - 1, j), -wx);
      if (i + 1 < grid.nx()) entries.emplace_back(row, grid.index(i + 1, j), -wx);
      if (j > 0) entries.emplace_back(row, grid.index(i, j - 1), -wy);
      if (j + 1 < grid.ny()) entries.emplace_back(row, grid.index(i, j + 1), -wy);
    }
  }
  Eigen::SparseMatrix<double> lap(grid.size(), grid.size());
  lap.setFromTriplets(entries.begin(), entries.end());
  return lap;
}

Heat2dMap::Heat2dMap(const Grid2d& grid, double kappa, double final_time, int steps,
                     std::vector<Index> observed)
    : LinearMap(static_cast<Index>(observed.size()), grid.size()),
      grid_(grid),
      steps_(steps),
      identity_step_(kappa == 0.0),
      observed_(std::move(observed)) {
  if (kappa < 0.0) throw std::invalid_argument("heat2d_map: kappa must be non-negative");
  if (!(final_time > 0.0)) throw std::invalid_argument("heat2d_map: final time must be positive");
  if (steps < 1) throw std::invalid_argument("heat2d_map: need at least one time step");
  for (Index k : observed_) {
    if (k < 0 || k >= grid.size()) {
      throw std::invalid_argument("heat2d_map: observation index outside the interior grid");
    }
  }
  if (!identity_step_) {
    const double dt = final_time / steps;
    Eigen::SparseMatrix<double> op = dirichletLaplacian2d(grid, true) * (kappa * dt);
    Eigen::SparseMatrix<double> eye(grid.size(), grid.size());
    eye.setIdentity();
    op += eye;
    step_.compute(op);
    if (step_.info() != Eigen::Success) {
      throw NumericalError("heat2d_map: time-step factorization failed");
    }
  }
}

Vector Heat2dMap::evolve(const Vector& u0) const {
  Vector u = u0;
  if (!identity_step_) {
    for (int s = 0; s < steps_; ++s) u = step_.solve(u);
  }
  return u;
}

void Heat2dMap::doApply(const Vector& x, Vector& y) const {
  const Vector u = evolve(x);
  for (std::size_t k = 0; k < observed_.size(); ++k) y(static_cast<Index>(k)) = u(observed_[k]);
}

void Heat2dMap::doApplyTranspose(const Vector& y, Vector& x) const {
  Vector u = Vector::Zero(grid_.size());
  for (std::size_t k = 0; k < observed_.size(); ++k) u(observed_[k]) += y(static_cast<Index>(k));
  // Each backward Euler step is symmetric, so the adjoint replays the same solves.
  x = evolve(u);
}

// ---------------------------------------------------------------------------
// 1D Laplacian factor

Laplacian1dFactor::Laplacian1dFactor(Index n) : PriorFactor(n < 2 ? 1 : n) {
  if (n < 2) throw std::invalid_argument("laplacian1d_factor: n must be at least 2");
  diag_.resize(n);
  super_.resize(n - 1);
  diag_(0) = std::sqrt(2.0);
  for (Index i = 0; i + 1 < n; ++i) {
    super_(i) = -1.0 / diag_(i);
    diag_(i + 1) = std::sqrt(2.0 - super_(i) * super_(i));
  }
  log_abs_det_ = diag_.array().log().sum();
}

void Laplacian1dFactor::doApply(const Vector& x, Vector& y) const {
  const Index n = diag_.size();
  for (Index i = 0; i + 1 < n; ++i) y(i) = diag_(i) * x(i) + super_(i) * x(i + 1);
  y(n - 1) = diag_(n - 1) * x(n - 1);
}

void Laplacian1dFactor::doApplyTranspose(const Vector& x, Vector& y) const {
  const Index n = diag_.size();
  y(0) = diag_(0) * x(0);
  for (Index i = 1; i < n; ++i) y(i) = diag_(i) * x(i) + super_(i - 1) * x(i - 1);
}

void Laplacian1dFactor::doSolve(const Vector& y, Vector& x) const {
  const Index n = diag_.size();
  x(n - 1) = y(n - 1) / diag_(n - 1);
  for (Index i = n - 2; i >= 0; --i) x(i) = (y(i) - super_(i) * x(i + 1)) / diag_(i);
}

void Laplacian1dFactor::doSolveTranspose(const Vector& y, Vector& x) const {
  const Index n = diag_.size();
  x(0) = y(0) / diag_(0);
  for (Index i = 1; i < n; ++i) x(i) = (y(i) - super_(i - 1) * x(i - 1)) / diag_(i);
}

// ---------------------------------------------------------------------------
// 2D Laplacian factor

Laplacian2dFactor::Laplacian2dFactor(const Grid2d& grid)
    : PriorFactor(grid.cells_x < 2 || grid.cells_y < 2 ? 1 : grid.size()), grid_(grid) {
  if (grid.cells_x < 2 || grid.cells_y < 2) {
    throw std::invalid_argument("biharmonic2d_factor: need at least 2 cells per direction");
  }
  stencil_ = dirichletLaplacian2d(grid, false);
  chol_.compute(stencil_);
  if (chol_.info() != Eigen::Success) {
    throw NumericalError("biharmonic2d_factor: stencil is not positive definite");
  }
  // Probe: the stencil must be positive definite on a smooth vector.
  Vector probe = Vector::Ones(grid.size());
  if (!(probe.dot(stencil_ * probe) > 0.0)) {
    throw NumericalError("biharmonic2d_factor: stencil failed the positivity probe");
  }
  // L is the stencil itself, so log|det L| = log det K = 2 sum log diag(chol(K)).
  const Eigen::SparseMatrix<double> lower = chol_.matrixL();
  log_abs_det_ = 2.0 * lower.diagonal().array().log().sum();
}

void Laplacian2dFactor::doApply(const Vector& x, Vector& y) const { y = stencil_ * x; }
void Laplacian2dFactor::doApplyTranspose(const Vector& x, Vector& y) const { y = stencil_ * x; }
void Laplacian2dFactor::doSolve(const Vector& y, Vector& x) const { x = chol_.solve(y); }
void Laplacian2dFactor::doSolveTranspose(const Vector& y, Vector& x) const { x = chol_.solve(y); }

// ---------------------------------------------------------------------------
// Dense factor

DenseFactor::DenseFactor(Matrix factor)
    : PriorFactor(factor.rows()), factor_(std::move(factor)) {
  if (factor_.rows() != factor_.cols()) throw std::invalid_argument("DenseFactor: must be square");
  lu_.compute(factor_);
  const Vector d = lu_.matrixLU().diagonal();
  if ((d.array().abs() == 0.0).any()) throw NumericalError("DenseFactor: singular factor");
  log_abs_det_ = d.array().abs().log().sum();
}

void DenseFactor::doApply(const Vector& x, Vector& y) const { y.noalias() = factor_ * x; }
void DenseFactor::doApplyTranspose(const Vector& x, Vector& y) const {
  y.noalias() = factor_.transpose() * x;
}
void DenseFactor::doSolve(const Vector& y, Vector& x) const { x = lu_.solve(y); }
void DenseFactor::doSolveTranspose(const Vector& y, Vector& x) const {
  x = lu_.transpose().solve(y);
}

// ---------------------------------------------------------------------------

std::shared_ptr<DenseMap> denseMap(Matrix matrix) {
  return std::make_shared<DenseMap>(std::move(matrix));
}

std::shared_ptr<Conv1dMap> conv1dMap(const Kernel1d& kernel, Index n, Index m) {
  return std::make_shared<Conv1dMap>(kernel, n, m);
}

std::shared_ptr<Heat2dMap> heat2dMap(const Grid2d& grid, double kappa, double final_time,
                                     int steps, std::vector<Index> observed) {
  return std::make_shared<Heat2dMap>(grid, kappa, final_time, steps, std::move(observed));
}

std::shared_ptr<Laplacian1dFactor> laplacian1dFactor(Index n) {
  return std::make_shared<Laplacian1dFactor>(n);
}

std::shared_ptr<Laplacian2dFactor> biharmonic2dFactor(const Grid2d& grid) {
  return std::make_shared<Laplacian2dFactor>(grid);
}

Matrix densify(const LinearMap& map, CostLedger* ledger) {
  Matrix out(map.rows(), map.cols());
  Vector e = Vector::Zero(map.cols());
  for (Index j = 0; j < map.cols(); ++j) {
    e(j) = 1.0;
    out.col(j) = map.apply(e, ledger);
    e(j) = 0.0;
  }
  return out;
}

Matrix densify(const PriorFactor& factor, CostLedger* ledger) {
  Matrix out(factor.dim(), factor.dim());
  Vector e = Vector::Zero(factor.dim());
  for (Index j = 0; j < factor.dim(); ++j) {
    e(j) = 1.0;
    out.col(j) = factor.apply(e, ledger);
    e(j) = 0.0;
  }
  return out;
}

}  // namespace hbip
