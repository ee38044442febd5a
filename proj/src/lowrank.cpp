#include "hbip/lowrank.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace hbip {

namespace {

constexpr char kMagic[8] = {'H', 'B', 'I', 'P', 'L', 'R', 'K', '1'};

static_assert(std::endian::native == std::endian::little,
              "sidecar I/O assumes a little-endian host");

// H v = L^{-T} A^T A L^{-1} v
Vector hessianApply(const LinearMap& forward, const PriorFactor& factor, const Vector& v,
                    CostLedger* ledger) {
  const Vector u = factor.solve(v, ledger);
  const Vector au = forward.apply(u, ledger);
  const Vector atau = forward.applyTranspose(au, ledger);
  return factor.solveTranspose(atau, ledger);
}

Matrix hessianApply(const LinearMap& forward, const PriorFactor& factor, const Matrix& block,
                    CostLedger* ledger) {
  Matrix out(block.rows(), block.cols());
  for (Index j = 0; j < block.cols(); ++j) {
    out.col(j) = hessianApply(forward, factor, Vector(block.col(j)), ledger);
  }
  return out;
}

Matrix orthonormalize(const Matrix& y) {
  Eigen::HouseholderQR<Matrix> qr(y);
  return qr.householderQ() * Matrix::Identity(y.rows(), y.cols());
}

// Rayleigh-Ritz on an orthonormal basis q: top `count` eigenpairs of q^T H q.
void rayleighRitz(const Matrix& q, const Matrix& hq, Index count, Vector& values,
                  Matrix& vectors) {
  Matrix t = q.transpose() * hq;
  t = 0.5 * (t + t.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(t);
  if (eig.info() != Eigen::Success) throw NumericalError("Rayleigh-Ritz eigensolve failed");
  const Index l = t.rows();
  values.resize(count);
  vectors.resize(q.rows(), count);
  for (Index i = 0; i < count; ++i) {
    values(i) = std::max(0.0, eig.eigenvalues()(l - 1 - i));
    vectors.col(i) = q * eig.eigenvectors().col(l - 1 - i);
  }
}

LowRankSurrogate exactEig(const LinearMap& forward, const PriorFactor& factor, Index stored,
                          Index rank, CostLedger* ledger) {
  const Index n = factor.dim();
  Matrix b(forward.rows(), n);
  Vector e = Vector::Zero(n);
  for (Index j = 0; j < n; ++j) {
    e(j) = 1.0;
    b.col(j) = forward.apply(factor.solve(e, ledger), ledger);
    e(j) = 0.0;
  }
  Matrix h = b.transpose() * b;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(h);
  if (eig.info() != Eigen::Success) throw NumericalError("truncated_eig: dense eigensolve failed");
  Vector values(stored);
  Matrix basis(n, stored);
  for (Index i = 0; i < stored; ++i) {
    values(i) = std::max(0.0, eig.eigenvalues()(n - 1 - i));
    basis.col(i) = eig.eigenvectors().col(n - 1 - i);
  }
  return LowRankSurrogate(std::move(values), std::move(basis), rank);
}

LowRankSurrogate randomizedEig(const LinearMap& forward, const PriorFactor& factor, Index stored,
                               Index rank, const EigOptions& options, CostLedger* ledger) {
  const Index n = factor.dim();
  const Index l = std::min(n, stored + std::max<Index>(options.oversampling, 0));
  Rng rng(options.seed);
  std::normal_distribution<double> normal;
  Matrix omega(n, l);
  for (Index j = 0; j < l; ++j)
    for (Index i = 0; i < n; ++i) omega(i, j) = normal(rng);

  Matrix y = hessianApply(forward, factor, omega, ledger);
  for (int it = 0; it < options.power_iterations; ++it) {
    y = hessianApply(forward, factor, orthonormalize(y), ledger);
  }
  const Matrix q = orthonormalize(y);
  const Matrix hq = hessianApply(forward, factor, q, ledger);
  Vector values;
  Matrix basis;
  rayleighRitz(q, hq, stored, values, basis);
  return LowRankSurrogate(std::move(values), std::move(basis), rank);
}

LowRankSurrogate lanczosEig(const LinearMap& forward, const PriorFactor& factor, Index stored,
                            Index rank, const EigOptions& options, CostLedger* ledger) {
  const Index n = factor.dim();
  Rng rng(options.seed);
  std::normal_distribution<double> normal;
  auto randomUnit = [&](const Matrix& basis, Index filled) -> Vector {
    for (int attempt = 0; attempt < 4; ++attempt) {
      Vector v(n);
      for (Index i = 0; i < n; ++i) v(i) = normal(rng);
      for (int pass = 0; pass < 2; ++pass) {
        if (filled > 0) {
          const auto qb = basis.leftCols(filled);
          v -= qb * (qb.transpose() * v);
        }
      }
      const double norm = v.norm();
      if (norm > 1e-8) return v / norm;
    }
    return Vector();
  };

  Index target = std::min(n, std::max<Index>(2 * stored, stored + 20));
  Matrix q(n, target);
  std::vector<double> alpha;
  std::vector<double> beta;  // beta[j] couples q_j and q_{j+1}
  Index steps = 0;

  Vector current = randomUnit(q, 0);
  double tnorm = 0.0;
  while (true) {
    if (q.cols() < target) q.conservativeResize(n, target);
    while (steps < target) {
      q.col(steps) = current;
      Vector w = hessianApply(forward, factor, current, ledger);
      const double a = current.dot(w);
      alpha.push_back(a);
      // Full reorthogonalization, two passes.
      for (int pass = 0; pass < 2; ++pass) {
        const auto qb = q.leftCols(steps + 1);
        w -= qb * (qb.transpose() * w);
      }
      double b = w.norm();
      tnorm = std::max(tnorm, std::abs(a) + b);
      ++steps;
      if (steps == target) {
        beta.push_back(b);
        current = b > 0.0 ? Vector(w / b) : Vector();
        break;
      }
      if (b <= options.tolerance * std::max(tnorm, 1e-300)) {
        // Invariant subspace found: restart in the orthogonal complement.
        Vector fresh = randomUnit(q, steps);
        if (fresh.size() == 0) {
          if (steps < stored) {
            std::ostringstream msg;
            msg << "truncated_eig: Lanczos breakdown after " << steps << " of " << stored
                << " required vectors";
            throw NumericalError(msg.str());
          }
          beta.push_back(0.0);
          current = Vector();
          target = steps;
          break;
        }
        beta.push_back(0.0);
        current = fresh;
      } else {
        beta.push_back(b);
        current = w / b;
      }
    }

    const Index m = steps;
    Matrix t = Matrix::Zero(m, m);
    for (Index i = 0; i < m; ++i) {
      t(i, i) = alpha[static_cast<std::size_t>(i)];
      if (i + 1 < m) {
        t(i, i + 1) = beta[static_cast<std::size_t>(i)];
        t(i + 1, i) = beta[static_cast<std::size_t>(i)];
      }
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(t);
    if (eig.info() != Eigen::Success) throw NumericalError("truncated_eig: tridiagonal eigensolve failed");
    const double top = std::max(eig.eigenvalues()(m - 1), 1e-300);
    const double last_beta = m > 0 ? beta[static_cast<std::size_t>(m - 1)] : 0.0;
    bool converged = true;
    for (Index i = 0; i < std::min(stored, m); ++i) {
      const double residual = std::abs(last_beta * eig.eigenvectors()(m - 1, m - 1 - i));
      if (residual > 1e-8 * top) converged = false;
    }
    if (m < stored) converged = false;
    if (converged || m >= n || current.size() == 0) {
      if (m < stored) {
        throw NumericalError("truncated_eig: Lanczos produced fewer vectors than requested");
      }
      Vector values(stored);
      Matrix basis(n, stored);
      const auto qm = q.leftCols(m);
      for (Index i = 0; i < stored; ++i) {
        values(i) = std::max(0.0, eig.eigenvalues()(m - 1 - i));
        basis.col(i) = qm * eig.eigenvectors().col(m - 1 - i);
      }
      return LowRankSurrogate(std::move(values), std::move(basis), rank);
    }
    target = std::min(n, 2 * target);
  }
}

}  // namespace

EigMethod parseEigMethod(std::string_view name) {
  if (name == "exact") return EigMethod::Exact;
  if (name == "lanczos") return EigMethod::Lanczos;
  if (name == "randomized") return EigMethod::Randomized;
  throw std::invalid_argument("unknown eigen method '" + std::string(name) +
                              "' (expected exact|lanczos|randomized)");
}

std::string_view toString(EigMethod method) {
  switch (method) {
    case EigMethod::Exact: return "exact";
    case EigMethod::Lanczos: return "lanczos";
    case EigMethod::Randomized: return "randomized";
  }
  return "?";
}

LowRankSurrogate::LowRankSurrogate(Vector eigenvalues, Matrix basis, Index rank)
    : values_(std::make_shared<const Vector>(std::move(eigenvalues))),
      basis_(std::make_shared<const Matrix>(std::move(basis))),
      rank_(rank) {
  if (basis_->cols() != values_->size()) {
    throw std::invalid_argument("LowRankSurrogate: eigenvalue/basis size mismatch");
  }
  if (rank_ < 0 || rank_ > values_->size()) {
    throw std::invalid_argument("LowRankSurrogate: rank exceeds stored eigenpairs");
  }
}

LowRankSurrogate LowRankSurrogate::withRank(Index rank) const {
  LowRankSurrogate out = *this;
  if (rank < 0 || rank > stored()) {
    throw std::invalid_argument("LowRankSurrogate::withRank: rank exceeds stored eigenpairs");
  }
  out.rank_ = rank;
  return out;
}

void LowRankSurrogate::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::uint64_t header[3] = {static_cast<std::uint64_t>(dim()),
                                   static_cast<std::uint64_t>(stored()),
                                   static_cast<std::uint64_t>(rank_)};
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(values_->data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(stored())));
  out.write(reinterpret_cast<const char*>(basis_->data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(basis_->size())));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

LowRankSurrogate LowRankSurrogate::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  std::uint64_t header[3];
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path.string() + ": not a surrogate sidecar");
  }
  const auto n = static_cast<Index>(header[0]);
  const auto stored = static_cast<Index>(header[1]);
  const auto rank = static_cast<Index>(header[2]);
  Vector values(stored);
  Matrix basis(n, stored);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(stored)));
  in.read(reinterpret_cast<char*>(basis.data()),
          static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(basis.size())));
  if (!in) throw std::runtime_error(path.string() + ": truncated surrogate sidecar");
  return LowRankSurrogate(std::move(values), std::move(basis), rank);
}

LowRankSurrogate truncatedEig(const LinearMap& forward, const PriorFactor& factor, Index rank,
                              const EigOptions& options, CostLedger* ledger) {
  const Index n = factor.dim();
  if (forward.cols() != n) throw std::invalid_argument("truncated_eig: A and L dimensions differ");
  if (rank < 1 || rank > std::min(forward.rows(), n)) {
    throw std::invalid_argument("truncated_eig: rank must lie in [1, min(M, N)]");
  }
  Index stored = rank;
  if (options.tail_rank >= 0) {
    stored = std::min(n, std::max(rank, options.tail_rank));
  } else if (options.method == EigMethod::Exact) {
    stored = n;
  }
  switch (options.method) {
    case EigMethod::Exact: return exactEig(forward, factor, stored, rank, ledger);
    case EigMethod::Lanczos: return lanczosEig(forward, factor, stored, rank, options, ledger);
    case EigMethod::Randomized:
      return randomizedEig(forward, factor, stored, rank, options, ledger);
  }
  throw std::invalid_argument("truncated_eig: unknown method");
}

// ---------------------------------------------------------------------------

GFactor::GFactor(const LowRankSurrogate& surrogate, const PriorFactor& factor, HyperState theta)
    : surrogate_(&surrogate), factor_(&factor), theta_(theta) {
  theta.require();
  if (surrogate.dim() != factor.dim()) throw std::invalid_argument("GFactor: dimension mismatch");
  const auto lambda = surrogate.keptValues();
  d_.resize(lambda.size());
  dhat_.resize(lambda.size());
  for (Index j = 0; j < lambda.size(); ++j) {
    const double ml = theta.mu * lambda(j);
    d_(j) = ml / (ml + theta.sigma);
    // 1 - sqrt(1 - d) written to avoid cancellation for small d.
    const double root = std::sqrt(theta.sigma / (ml + theta.sigma));
    dhat_(j) = d_(j) / (1.0 + root);
  }
}

Vector GFactor::whiten(const Vector& eps) const {
  const auto v = surrogate_->keptBasis();
  Vector out = eps - v * (dhat_.asDiagonal() * (v.transpose() * eps));
  return out / std::sqrt(theta_.sigma);
}

Vector GFactor::apply(const Vector& eps, CostLedger* ledger) const {
  return factor_->solve(whiten(eps), ledger);
}

GFactor buildGFactor(const LowRankSurrogate& surrogate, const PriorFactor& factor,
                     HyperState theta) {
  return GFactor(surrogate, factor, theta);
}

Vector sampleConditional(const GFactor& g, const Vector& mean, const Vector& eps,
                         CostLedger* ledger) {
  return mean + g.apply(eps, ledger);
}

Vector sampleConditional(const GFactor& g, const Vector& mean, Rng& rng, CostLedger* ledger) {
  return sampleConditional(g, mean, standardNormal(mean.size(), rng), ledger);
}

Vector standardNormal(Index n, Rng& rng) {
  std::normal_distribution<double> normal;
  Vector eps(n);
  for (Index i = 0; i < n; ++i) eps(i) = normal(rng);
  return eps;
}

}  // namespace hbip
