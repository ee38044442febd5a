#pragma once

#include "hbip/diagnostics.hpp"
#include "hbip/model.hpp"
#include "hbip/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace hbip::testing {

inline Matrix randomMatrix(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> normal;
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

inline Vector randomVector(Index n, Rng& rng) { return standardNormal(n, rng); }

/// Invertible, moderately conditioned dense factor: I + 0.3 * strict upper noise.
inline Matrix randomFactor(Index n, Rng& rng) {
  Matrix l = Matrix::Identity(n, n);
  std::normal_distribution<double> normal;
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < j; ++i) l(i, j) = 0.3 * normal(rng);
  for (Index i = 0; i < n; ++i) l(i, i) = 1.0 + 0.5 * std::abs(normal(rng));
  return l;
}

/// Small dense instance with an informative hyperprior.
inline ModelContext denseInstance(Index n, Index m, std::uint64_t seed,
                                  HyperPrior prior = {2.0, 1.0, 2.0, 1.0},
                                  double noise = 0.5) {
  Rng rng(seed);
  Matrix a = randomMatrix(m, n, rng) / std::sqrt(static_cast<double>(n));
  Matrix l = randomFactor(n, rng);
  Vector x = randomVector(n, rng);
  Vector b = a * x + noise * randomVector(m, rng);
  return ModelContext(denseMap(a), std::make_shared<DenseFactor>(l), b, prior);
}

/// Attach the full exact spectrum with `rank` pairs kept.
inline ModelContext withExactRank(const ModelContext& ctx, Index rank) {
  EigOptions opt;
  opt.method = EigMethod::Exact;
  const Index top = std::min(ctx.dataSize(), ctx.stateSize());
  auto full = truncatedEig(ctx.forward(), ctx.factor(), top, opt);
  return ctx.withSurrogate(std::make_shared<const LowRankSurrogate>(full.withRank(rank)));
}

/// Exact conditional covariance (mu A^T A + sigma L^T L)^{-1}.
inline Matrix exactCovariance(const ModelContext& ctx, HyperState t) {
  const DenseCache& d = ctx.dense();
  Matrix p = t.mu * d.normal + t.sigma * d.prior;
  return p.inverse();
}

/// Surrogate conditional covariance sigma^{-1} L^{-1} (I - V D V^T) L^{-T}.
inline Matrix surrogateCovariance(const ModelContext& ctx, HyperState t) {
  const DenseCache& d = ctx.dense();
  const LowRankSurrogate& s = ctx.surrogate();
  const Index n = ctx.stateSize();
  Vector dd(s.rank());
  for (Index j = 0; j < s.rank(); ++j) {
    dd(j) = t.mu * s.eigenvalues()(j) / (t.mu * s.eigenvalues()(j) + t.sigma);
  }
  const Matrix v = s.keptBasis();
  const Matrix inner = Matrix::Identity(n, n) - v * dd.asDiagonal() * v.transpose();
  const Matrix linv = d.factor.inverse();
  return linv * inner * linv.transpose() / t.sigma;
}

/// Posterior moments of theta and the posterior mean of x by quadrature on a
/// (log mu, log sigma) grid, with pi(theta | b) from the dense marginal.
struct QuadratureOracle {
  double mean_mu = 0.0;
  double var_mu = 0.0;
  double mean_sigma = 0.0;
  double var_sigma = 0.0;
  Vector x_mean;
};

inline QuadratureOracle quadratureOracle(const ModelContext& ctx, int points = 401) {
  auto logDensity = [&](double u, double v) {
    return logMarginal(ctx, {std::exp(u), std::exp(v)}) + u + v;
  };
  // Coarse scan to locate the mass, then a fine grid over the region that matters.
  const int coarse = 121;
  const double lo = -15.0, hi = 15.0, h = (hi - lo) / (coarse - 1);
  std::vector<double> grid(coarse * coarse);
  double top = -INFINITY;
  for (int i = 0; i < coarse; ++i)
    for (int j = 0; j < coarse; ++j) {
      grid[i * coarse + j] = logDensity(lo + i * h, lo + j * h);
      top = std::max(top, grid[i * coarse + j]);
    }
  double u0 = hi, u1 = lo, v0 = hi, v1 = lo;
  for (int i = 0; i < coarse; ++i)
    for (int j = 0; j < coarse; ++j) {
      if (grid[i * coarse + j] < top - 40.0) continue;
      u0 = std::min(u0, lo + (i - 1) * h);
      u1 = std::max(u1, lo + (i + 1) * h);
      v0 = std::min(v0, lo + (j - 1) * h);
      v1 = std::max(v1, lo + (j + 1) * h);
    }
  const double hu = (u1 - u0) / (points - 1), hv = (v1 - v0) / (points - 1);
  std::vector<double> logw(static_cast<std::size_t>(points) * points);
  top = -INFINITY;
  for (int i = 0; i < points; ++i)
    for (int j = 0; j < points; ++j) {
      logw[i * points + j] = logDensity(u0 + i * hu, v0 + j * hv);
      top = std::max(top, logw[i * points + j]);
    }
  QuadratureOracle q;
  q.x_mean = Vector::Zero(ctx.stateSize());
  double total = 0.0, m2 = 0.0, s2 = 0.0;
  for (int i = 0; i < points; ++i)
    for (int j = 0; j < points; ++j) {
      const double lw = logw[i * points + j] - top;
      if (lw < -45.0) continue;
      const double w = std::exp(lw);
      const HyperState t{std::exp(u0 + i * hu), std::exp(v0 + j * hv)};
      total += w;
      q.mean_mu += w * t.mu;
      m2 += w * t.mu * t.mu;
      q.mean_sigma += w * t.sigma;
      s2 += w * t.sigma * t.sigma;
      q.x_mean += w * conditionalParams(ctx, t, ConditionalRoute::Exact).mean;
    }
  q.mean_mu /= total;
  q.mean_sigma /= total;
  q.var_mu = m2 / total - q.mean_mu * q.mean_mu;
  q.var_sigma = s2 / total - q.mean_sigma * q.mean_sigma;
  q.x_mean /= total;
  return q;
}

inline double sampleMean(const std::vector<double>& s) {
  double m = 0.0;
  for (double v : s) m += v;
  return m / static_cast<double>(s.size());
}

/// Monte Carlo standard error of the mean, sd * sqrt(IACT / n).
inline double mcse(const std::vector<double>& s) {
  const double m = sampleMean(s);
  double v = 0.0;
  for (double x : s) v += (x - m) * (x - m);
  v /= static_cast<double>(s.size() - 1);
  return std::sqrt(v * iact(s) / static_cast<double>(s.size()));
}

inline std::vector<double> centeredSquares(const std::vector<double>& s) {
  const double m = sampleMean(s);
  std::vector<double> out;
  out.reserve(s.size());
  for (double x : s) out.push_back((x - m) * (x - m));
  return out;
}

inline std::vector<double> row(const Matrix& samples, Index i) {
  std::vector<double> out(static_cast<std::size_t>(samples.cols()));
  for (Index j = 0; j < samples.cols(); ++j) out[static_cast<std::size_t>(j)] = samples(i, j);
  return out;
}

// ---------------------------------------------------------------------------
// Acceptance ratios assembled from raw densities, for identity checks against
// the simplified forms used by the samplers.

/// AOB: pi(x',theta') pi_hat(x|theta) r(theta|theta') / (pi(x,theta) pi_hat(x'|theta') r(theta'|theta)).
inline double rawAobLogRatio(const ModelContext& ctx, const ProposalKernel& r, const Vector& x,
                             HyperState t, const Vector& xp, HyperState tp) {
  return logPosterior(ctx, xp, tp) + logSurrogateConditional(ctx, x, t) + r.logDensity(t, tp) -
         logPosterior(ctx, x, t) - logSurrogateConditional(ctx, xp, tp) - r.logDensity(tp, t);
}

/// z' pi(theta'|b) r(theta|theta') / (z pi(theta|b) r(theta'|theta)).
inline double simplifiedAobLogRatio(const ModelContext& ctx, const ProposalKernel& r,
                                    const Vector& x, HyperState t, const Vector& xp,
                                    HyperState tp) {
  return logZ(ctx, xp, tp) + logMarginal(ctx, tp) + r.logDensity(t, tp) - logZ(ctx, x, t) -
         logMarginal(ctx, t) - r.logDensity(tp, t);
}

/// Stage-1 probability beta(theta -> theta') on the surrogate marginal.
inline double logStage1(const ModelContext& ctx, const ProposalKernel& r, HyperState t,
                        HyperState tp) {
  const double v = logSurrogateMarginal(ctx, tp) + r.logDensity(t, tp) -
                   logSurrogateMarginal(ctx, t) - r.logDensity(tp, t);
  return std::min(0.0, v);
}

/// Stage-2 ratio with the effective proposal q = r beta pi_hat(x'|theta').
inline double rawAbdaStage2LogRatio(const ModelContext& ctx, const ProposalKernel& r,
                                    const Vector& x, HyperState t, const Vector& xp,
                                    HyperState tp) {
  const double q_fwd = r.logDensity(tp, t) + logStage1(ctx, r, t, tp) +
                       logSurrogateConditional(ctx, xp, tp);
  const double q_bwd = r.logDensity(t, tp) + logStage1(ctx, r, tp, t) +
                       logSurrogateConditional(ctx, x, t);
  return std::min(0.0, logPosterior(ctx, xp, tp) + q_bwd - logPosterior(ctx, x, t) - q_fwd);
}

/// Pseudo-marginal ratio from the raw importance sums over the given draws.
inline double rawPmLogRatio(const ModelContext& ctx, const ProposalKernel& r,
                            const std::vector<Vector>& xs, HyperState t,
                            const std::vector<Vector>& xps, HyperState tp) {
  auto logEstimate = [&](const std::vector<Vector>& draws, HyperState th) {
    std::vector<double> terms;
    for (const Vector& x : draws) {
      terms.push_back(logPosterior(ctx, x, th) - logSurrogateConditional(ctx, x, th));
    }
    return logSumExp(terms) - std::log(static_cast<double>(draws.size()));
  };
  return logEstimate(xps, tp) + r.logDensity(t, tp) - logEstimate(xs, t) - r.logDensity(tp, t);
}

/// z_K' pi(theta'|b) r(theta|theta') / (z_K pi(theta|b) r(theta'|theta)).
inline double simplifiedPmLogRatio(const ModelContext& ctx, const ProposalKernel& r,
                                   const std::vector<Vector>& xs, HyperState t,
                                   const std::vector<Vector>& xps, HyperState tp) {
  auto logZk = [&](const std::vector<Vector>& draws, HyperState th) {
    std::vector<double> terms;
    for (const Vector& x : draws) terms.push_back(logZ(ctx, x, th));
    return logSumExp(terms) - std::log(static_cast<double>(draws.size()));
  };
  return logZk(xps, tp) + logMarginal(ctx, tp) + r.logDensity(t, tp) - logZk(xs, t) -
         logMarginal(ctx, t) - r.logDensity(tp, t);
}

}  // namespace hbip::testing
