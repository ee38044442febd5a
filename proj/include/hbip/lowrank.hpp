#pragma once

#include "hbip/operators.hpp"
#include "hbip/types.hpp"

#include <filesystem>
#include <memory>
#include <string_view>

namespace hbip {

enum class EigMethod { Exact, Lanczos, Randomized };

EigMethod parseEigMethod(std::string_view name);
std::string_view toString(EigMethod method);

struct EigOptions {
  EigMethod method = EigMethod::Exact;
  Index oversampling = 10;
  int power_iterations = 2;
  std::uint64_t seed = 0x5eed5eedULL;
  /// Number of eigenpairs to keep beyond the rank for tail quantities.
  /// Negative: the full spectrum for `Exact`, nothing extra otherwise.
  Index tail_rank = -1;
  double tolerance = 1e-10;
};

/// Eigenpairs (lambda_j, v_j) of the prior-preconditioned data-misfit Hessian
/// H = L^{-T} A^T A L^{-1}, sorted by decreasing eigenvalue. The first `rank`
/// pairs define the surrogate; any further stored pairs only feed tail
/// quantities such as the moments M_m.
class LowRankSurrogate {
 public:
  LowRankSurrogate(Vector eigenvalues, Matrix basis, Index rank);

  Index dim() const { return basis_->rows(); }
  Index rank() const { return rank_; }
  Index stored() const { return values_->size(); }
  bool fullSpectrum() const { return stored() == dim(); }
  bool hasTail() const { return stored() > rank_; }

  const Vector& eigenvalues() const { return *values_; }
  const Matrix& basis() const { return *basis_; }
  auto keptValues() const { return values_->head(rank_); }
  auto keptBasis() const { return basis_->leftCols(rank_); }

  /// Same stored eigenpairs with a different kept rank (no copy).
  LowRankSurrogate withRank(Index rank) const;

  /// Binary sidecar: 8-byte magic "HBIPLRK1", uint64 N, uint64 stored,
  /// uint64 rank, then `stored` eigenvalues and the N x stored basis in
  /// column-major order, all little-endian float64.
  void save(const std::filesystem::path& path) const;
  static LowRankSurrogate load(const std::filesystem::path& path);

 private:
  std::shared_ptr<const Vector> values_;
  std::shared_ptr<const Matrix> basis_;
  Index rank_;
};

/// Top eigenpairs of L^{-T} A^T A L^{-1}. `Exact` densifies (test scale);
/// `Lanczos` uses full reorthogonalization; `Randomized` is a range finder
/// with power iterations followed by Rayleigh-Ritz.
LowRankSurrogate truncatedEig(const LinearMap& forward, const PriorFactor& factor, Index rank,
                              const EigOptions& options = {}, CostLedger* ledger = nullptr);

/// Square-root factor of the surrogate conditional covariance,
/// G = sigma^{-1/2} L^{-1} (I - V_k Dhat_k V_k^T), with
/// d_j = mu lambda_j / (mu lambda_j + sigma) and dhat_j = 1 - sqrt(1 - d_j).
class GFactor {
 public:
  GFactor(const LowRankSurrogate& surrogate, const PriorFactor& factor, HyperState theta);

  const HyperState& theta() const { return theta_; }
  const Vector& d() const { return d_; }
  const Vector& dhat() const { return dhat_; }

  /// sigma^{-1/2} (I - V Dhat V^T) eps, i.e. L G eps.
  Vector whiten(const Vector& eps) const;
  Vector apply(const Vector& eps, CostLedger* ledger = nullptr) const;

 private:
  const LowRankSurrogate* surrogate_;
  const PriorFactor* factor_;
  HyperState theta_;
  Vector d_;
  Vector dhat_;
};

GFactor buildGFactor(const LowRankSurrogate& surrogate, const PriorFactor& factor,
                     HyperState theta);

/// x = mean + G eps with the supplied eps.
Vector sampleConditional(const GFactor& g, const Vector& mean, const Vector& eps,
                         CostLedger* ledger = nullptr);
/// x = mean + G eps with fresh standard normal eps drawn from rng.
Vector sampleConditional(const GFactor& g, const Vector& mean, Rng& rng,
                         CostLedger* ledger = nullptr);

Vector standardNormal(Index n, Rng& rng);

}  // namespace hbip
