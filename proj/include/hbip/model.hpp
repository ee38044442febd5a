#pragma once

#include "hbip/lowrank.hpp"
#include "hbip/operators.hpp"
#include "hbip/types.hpp"

#include <memory>
#include <mutex>
#include <vector>

namespace hbip {

/// Eigenbasis used for conditional sampling together with the projections
/// c_j = v_j^T L^{-T} A^T b of the whitened data onto every stored vector.
struct SpectralView {
  std::shared_ptr<const LowRankSurrogate> basis;
  Vector coeffs;

  Index rank() const { return basis->rank(); }
};

/// Dense copies of the operators, built on demand for test-scale exact paths.
struct DenseCache {
  Matrix forward;
  Matrix factor;
  Matrix normal;  // A^T A
  Matrix prior;   // L^T L
  Vector adjoint_data;  // A^T b
};

/// Read-only bundle of forward map, prior factor, data and hyperprior, with an
/// optional low-rank surrogate. Lazily built caches are thread-safe.
class ModelContext {
 public:
  ModelContext(std::shared_ptr<const LinearMap> forward, std::shared_ptr<const PriorFactor> factor,
               Vector data, HyperPrior prior,
               std::shared_ptr<const LowRankSurrogate> surrogate = nullptr);

  const LinearMap& forward() const { return *forward_; }
  const PriorFactor& factor() const { return *factor_; }
  std::shared_ptr<const LinearMap> forwardPtr() const { return forward_; }
  std::shared_ptr<const PriorFactor> factorPtr() const { return factor_; }
  const Vector& data() const { return data_; }
  const HyperPrior& prior() const { return prior_; }
  Index dataSize() const { return forward_->rows(); }
  Index stateSize() const { return forward_->cols(); }

  bool hasSurrogate() const { return static_cast<bool>(surrogate_.basis); }
  const LowRankSurrogate& surrogate() const;
  const SpectralView& surrogateView() const;

  /// Copy sharing operators and data, with a different surrogate.
  ModelContext withSurrogate(std::shared_ptr<const LowRankSurrogate> surrogate) const;

  double dataNormSq() const { return data_norm_sq_; }
  /// g = L^{-T} A^T b.
  const Vector& whitenedData() const { return whitened_data_; }

  const DenseCache& dense() const;
  /// Full-rank spectral decomposition (densified); Gamma_hat_cond = Gamma_cond.
  const SpectralView& exactView() const;

 private:
  struct Lazy {
    std::once_flag dense_once;
    std::once_flag exact_once;
    DenseCache dense;
    SpectralView exact;
  };

  SpectralView makeView(std::shared_ptr<const LowRankSurrogate> basis) const;

  std::shared_ptr<const LinearMap> forward_;
  std::shared_ptr<const PriorFactor> factor_;
  Vector data_;
  HyperPrior prior_;
  SpectralView surrogate_;
  double data_norm_sq_ = 0.0;
  Vector whitened_data_;
  std::shared_ptr<Lazy> lazy_;
};

// ---------------------------------------------------------------------------
// Unnormalized joint density and its pieces

/// ||Ax - b||^2 and ||Lx||^2 for one state.
struct StateTerms {
  double misfit_sq = 0.0;
  double prior_sq = 0.0;
};

StateTerms stateTerms(const ModelContext& ctx, const Vector& x, CostLedger* ledger = nullptr);

/// (alpha-1) log mu - beta mu + (alpha-1) log sigma - beta sigma.
double logHyperprior(const HyperPrior& prior, HyperState theta);
/// log f(theta) = (M/2) log mu + (N/2) log sigma + log pi(theta).
double logScaling(const ModelContext& ctx, HyperState theta);

/// log pi(x, theta | b) up to a constant; one forward and one factor apply.
double logPosterior(const ModelContext& ctx, const Vector& x, HyperState theta,
                    CostLedger* ledger = nullptr);
double logPosterior(const ModelContext& ctx, const StateTerms& terms, HyperState theta);

/// log pi(theta | b) by dense Cholesky of mu A^T A + sigma L^T L (test scale).
double logMarginal(const ModelContext& ctx, HyperState theta);

/// Normalized exact conditional log-density log N(x; x_cond, Gamma_cond), dense.
double logConditional(const ModelContext& ctx, const Vector& x, HyperState theta);

// ---------------------------------------------------------------------------
// Spectral (surrogate) route; exact when the view carries the full spectrum.

/// log det of the conditional precision: sum_j log(mu lambda_j + sigma)
/// + (N - k) log sigma + 2 log|det L|.
double logDetPrecision(const ModelContext& ctx, const SpectralView& view, HyperState theta);
double logSpectralMarginal(const ModelContext& ctx, const SpectralView& view, HyperState theta);
Vector spectralMean(const ModelContext& ctx, const SpectralView& view, HyperState theta,
                    CostLedger* ledger = nullptr);
/// mean + G eps, assembled so that only one factor solve is needed.
Vector spectralSample(const ModelContext& ctx, const SpectralView& view, HyperState theta,
                      const Vector& eps, CostLedger* ledger = nullptr);
/// Normalized conditional log-density of a spectralSample draw, from its eps.
double logConditionalFromNoise(const ModelContext& ctx, const SpectralView& view,
                               HyperState theta, const Vector& eps);
/// Normalized conditional log-density at an arbitrary x (one solve, one apply).
double logSpectralConditional(const ModelContext& ctx, const SpectralView& view,
                              const Vector& x, HyperState theta, CostLedger* ledger = nullptr);

double logSurrogateMarginal(const ModelContext& ctx, HyperState theta,
                            CostLedger* ledger = nullptr);
/// log pi_hat(x, theta | b): same constants as logPosterior, one factor apply.
double logSurrogatePosterior(const ModelContext& ctx, const Vector& x, HyperState theta,
                             CostLedger* ledger = nullptr);
double logSurrogateConditional(const ModelContext& ctx, const Vector& x, HyperState theta,
                               CostLedger* ledger = nullptr);

// ---------------------------------------------------------------------------
// Surrogate quality quantities

/// log w = -1/2 x^T (Gamma_cond^{-1} - Gamma_hat_cond^{-1}) x, assembled as
/// -mu/2 (||Ax||^2 - sum_{j<=k} lambda_j (v_j^T L x)^2). Unclamped.
double logW(const ModelContext& ctx, const Vector& x, HyperState theta,
            CostLedger* ledger = nullptr);
/// w in (0, 1].
double wRatio(const ModelContext& ctx, const Vector& x, HyperState theta,
              CostLedger* ledger = nullptr);

/// log M_m(theta) from the discarded eigenpairs j > k. Requires stored tail
/// eigenpairs unless the kept rank is already N.
double logMoment(const ModelContext& ctx, HyperState theta, int m);
double momentM(const ModelContext& ctx, HyperState theta, int m);

/// z = pi(x | theta, b) / pi_hat(x | theta, b) = w M_1.
double logZ(const ModelContext& ctx, const Vector& x, HyperState theta,
            CostLedger* ledger = nullptr);
double zRatio(const ModelContext& ctx, const Vector& x, HyperState theta,
              CostLedger* ledger = nullptr);

struct ZkEstimate {
  double log_value = 0.0;  // log z_K
  std::vector<Vector> samples;
  std::vector<double> log_z;
};

/// z_K = (1/K) sum_j z(x_j, theta), x_j ~ pi_hat(. | theta, b).
ZkEstimate zK(const ModelContext& ctx, HyperState theta, int count, Rng& rng,
              CostLedger* ledger = nullptr);

// ---------------------------------------------------------------------------
// Conditionals

struct GammaParams {
  double shape = 0.0;
  double rate = 0.0;
};

struct FullConditionals {
  GammaParams mu;
  GammaParams sigma;
};

FullConditionals gibbsConditionals(const ModelContext& ctx, const Vector& x,
                                   CostLedger* ledger = nullptr);
FullConditionals gibbsConditionals(const ModelContext& ctx, const StateTerms& terms);

enum class ConditionalRoute { Exact, Surrogate };

struct ConditionalGaussian {
  HyperState theta;
  ConditionalRoute route = ConditionalRoute::Exact;
  Vector mean;
};

/// Exact: dense solve of (mu A^T A + sigma L^T L) mean = mu A^T b.
/// Surrogate: mean = (mu/sigma) L^{-1} (I - V D V^T) L^{-T} A^T b.
ConditionalGaussian conditionalParams(const ModelContext& ctx, HyperState theta,
                                      ConditionalRoute route, CostLedger* ledger = nullptr);

double logSumExp(const std::vector<double>& values);

}  // namespace hbip
