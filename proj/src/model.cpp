#include "hbip/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace hbip {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

Eigen::LLT<Matrix> precisionCholesky(const DenseCache& dense, HyperState theta) {
  Matrix precision = theta.mu * dense.normal + theta.sigma * dense.prior;
  Eigen::LLT<Matrix> llt(precision);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("conditional precision is not positive definite");
  }
  return llt;
}

double logDetFromCholesky(const Eigen::LLT<Matrix>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace

// ---------------------------------------------------------------------------
// ModelContext

ModelContext::ModelContext(std::shared_ptr<const LinearMap> forward,
                           std::shared_ptr<const PriorFactor> factor, Vector data,
                           HyperPrior prior, std::shared_ptr<const LowRankSurrogate> surrogate)
    : forward_(std::move(forward)),
      factor_(std::move(factor)),
      data_(std::move(data)),
      prior_(prior),
      lazy_(std::make_shared<Lazy>()) {
  if (!forward_ || !factor_) throw std::invalid_argument("ModelContext: null operator");
  if (forward_->cols() != factor_->dim()) {
    throw std::invalid_argument("ModelContext: forward map and prior factor dimensions differ");
  }
  if (data_.size() != forward_->rows()) {
    throw std::invalid_argument("ModelContext: data length does not match forward map rows");
  }
  if (!data_.allFinite()) throw std::invalid_argument("ModelContext: data must be finite");
  if (!prior_.valid()) throw std::invalid_argument("ModelContext: hyperprior parameters must be positive");
  data_norm_sq_ = data_.squaredNorm();
  whitened_data_ = factor_->solveTranspose(forward_->applyTranspose(data_));
  if (surrogate) surrogate_ = makeView(std::move(surrogate));
}

SpectralView ModelContext::makeView(std::shared_ptr<const LowRankSurrogate> basis) const {
  if (basis->dim() != stateSize()) {
    throw std::invalid_argument("ModelContext: surrogate dimension does not match state size");
  }
  SpectralView view;
  view.coeffs = basis->basis().transpose() * whitened_data_;
  view.basis = std::move(basis);
  return view;
}

const LowRankSurrogate& ModelContext::surrogate() const {
  if (!hasSurrogate()) throw std::logic_error("ModelContext: no surrogate attached");
  return *surrogate_.basis;
}

const SpectralView& ModelContext::surrogateView() const {
  if (!hasSurrogate()) throw std::logic_error("ModelContext: no surrogate attached");
  return surrogate_;
}

ModelContext ModelContext::withSurrogate(std::shared_ptr<const LowRankSurrogate> surrogate) const {
  ModelContext out = *this;
  out.surrogate_ = surrogate ? makeView(std::move(surrogate)) : SpectralView{};
  // Dense and exact caches do not depend on the surrogate and stay shared.
  return out;
}

const DenseCache& ModelContext::dense() const {
  std::call_once(lazy_->dense_once, [this] {
    DenseCache& d = lazy_->dense;
    d.forward = densify(*forward_);
    d.factor = densify(*factor_);
    d.normal = d.forward.transpose() * d.forward;
    d.prior = d.factor.transpose() * d.factor;
    d.adjoint_data = d.forward.transpose() * data_;
  });
  return lazy_->dense;
}

const SpectralView& ModelContext::exactView() const {
  std::call_once(lazy_->exact_once, [this] {
    if (hasSurrogate() && surrogate_.basis->fullSpectrum() &&
        surrogate_.basis->rank() == stateSize()) {
      lazy_->exact = surrogate_;
      return;
    }
    std::shared_ptr<const LowRankSurrogate> full;
    if (hasSurrogate() && surrogate_.basis->fullSpectrum()) {
      full = std::make_shared<const LowRankSurrogate>(surrogate_.basis->withRank(stateSize()));
    } else {
      const Index n = stateSize();
      const Index rank = std::min(n, dataSize());
      EigOptions options;
      options.method = EigMethod::Exact;
      options.tail_rank = n;
      full = std::make_shared<const LowRankSurrogate>(
          truncatedEig(*forward_, *factor_, rank, options).withRank(n));
    }
    lazy_->exact = makeView(std::move(full));
  });
  return lazy_->exact;
}

// ---------------------------------------------------------------------------
// Joint density

StateTerms stateTerms(const ModelContext& ctx, const Vector& x, CostLedger* ledger) {
  if (!x.allFinite()) throw std::invalid_argument("state vector must be finite");
  StateTerms t;
  t.misfit_sq = (ctx.forward().apply(x, ledger) - ctx.data()).squaredNorm();
  t.prior_sq = ctx.factor().apply(x, ledger).squaredNorm();
  return t;
}

double logHyperprior(const HyperPrior& prior, HyperState theta) {
  return (prior.alpha_mu - 1.0) * std::log(theta.mu) - prior.beta_mu * theta.mu +
         (prior.alpha_sigma - 1.0) * std::log(theta.sigma) - prior.beta_sigma * theta.sigma;
}

double logScaling(const ModelContext& ctx, HyperState theta) {
  theta.require();
  return 0.5 * static_cast<double>(ctx.dataSize()) * std::log(theta.mu) +
         0.5 * static_cast<double>(ctx.stateSize()) * std::log(theta.sigma) +
         logHyperprior(ctx.prior(), theta);
}

double logPosterior(const ModelContext& ctx, const StateTerms& terms, HyperState theta) {
  return logScaling(ctx, theta) - 0.5 * theta.mu * terms.misfit_sq -
         0.5 * theta.sigma * terms.prior_sq;
}

double logPosterior(const ModelContext& ctx, const Vector& x, HyperState theta,
                    CostLedger* ledger) {
  theta.require();
  const StateTerms terms = stateTerms(ctx, x, ledger);
  if (ledger) ++ledger->full_posterior;
  return logPosterior(ctx, terms, theta);
}

double logMarginal(const ModelContext& ctx, HyperState theta) {
  theta.require();
  const DenseCache& dense = ctx.dense();
  const auto llt = precisionCholesky(dense, theta);
  const Vector rhs = dense.adjoint_data;
  const double quad = rhs.dot(llt.solve(rhs));
  return logScaling(ctx, theta) - 0.5 * logDetFromCholesky(llt) -
         0.5 * theta.mu * ctx.dataNormSq() + 0.5 * theta.mu * theta.mu * quad;
}

double logConditional(const ModelContext& ctx, const Vector& x, HyperState theta) {
  theta.require();
  const DenseCache& dense = ctx.dense();
  const auto llt = precisionCholesky(dense, theta);
  const Vector mean = llt.solve(theta.mu * dense.adjoint_data);
  const Vector r = x - mean;
  const Matrix precision = theta.mu * dense.normal + theta.sigma * dense.prior;
  const double n = static_cast<double>(ctx.stateSize());
  return -0.5 * n * kLog2Pi + 0.5 * logDetFromCholesky(llt) - 0.5 * r.dot(precision * r);
}

// ---------------------------------------------------------------------------
// Spectral route

double logDetPrecision(const ModelContext& ctx, const SpectralView& view, HyperState theta) {
  theta.require();
  const auto lambda = view.basis->keptValues();
  double out = 0.0;
  for (Index j = 0; j < lambda.size(); ++j) out += std::log(theta.mu * lambda(j) + theta.sigma);
  out += static_cast<double>(ctx.stateSize() - lambda.size()) * std::log(theta.sigma);
  return out + 2.0 * ctx.factor().logAbsDet();
}

double logSpectralMarginal(const ModelContext& ctx, const SpectralView& view, HyperState theta) {
  theta.require();
  const auto lambda = view.basis->keptValues();
  // b^T A Gamma_hat A^T b = (||g||^2 - sum_j d_j c_j^2) / sigma
  double projected = 0.0;
  for (Index j = 0; j < lambda.size(); ++j) {
    const double ml = theta.mu * lambda(j);
    projected += ml / (ml + theta.sigma) * view.coeffs(j) * view.coeffs(j);
  }
  const double gsq = ctx.whitenedData().squaredNorm();
  const double quad = (gsq - projected) / theta.sigma;
  return logScaling(ctx, theta) - 0.5 * logDetPrecision(ctx, view, theta) -
         0.5 * theta.mu * ctx.dataNormSq() + 0.5 * theta.mu * theta.mu * quad;
}

namespace {

// L x_hat = (mu/sigma) (g - V (d o c))
Vector whitenedMean(const ModelContext& ctx, const SpectralView& view, HyperState theta) {
  const auto lambda = view.basis->keptValues();
  const auto v = view.basis->keptBasis();
  Vector dc(lambda.size());
  for (Index j = 0; j < lambda.size(); ++j) {
    const double ml = theta.mu * lambda(j);
    dc(j) = ml / (ml + theta.sigma) * view.coeffs(j);
  }
  return (theta.mu / theta.sigma) * (ctx.whitenedData() - v * dc);
}

}  // namespace

Vector spectralMean(const ModelContext& ctx, const SpectralView& view, HyperState theta,
                    CostLedger* ledger) {
  theta.require();
  return ctx.factor().solve(whitenedMean(ctx, view, theta), ledger);
}

Vector spectralSample(const ModelContext& ctx, const SpectralView& view, HyperState theta,
                      const Vector& eps, CostLedger* ledger) {
  theta.require();
  const GFactor g(*view.basis, ctx.factor(), theta);
  return ctx.factor().solve(whitenedMean(ctx, view, theta) + g.whiten(eps), ledger);
}

double logConditionalFromNoise(const ModelContext& ctx, const SpectralView& view,
                               HyperState theta, const Vector& eps) {
  const double n = static_cast<double>(ctx.stateSize());
  return -0.5 * n * kLog2Pi + 0.5 * logDetPrecision(ctx, view, theta) - 0.5 * eps.squaredNorm();
}

namespace {

// y^T (mu V Lambda V^T + sigma I) y
double whitenedPrecisionForm(const SpectralView& view, const Vector& y, HyperState theta) {
  const auto lambda = view.basis->keptValues();
  const Vector proj = view.basis->keptBasis().transpose() * y;
  double out = theta.sigma * y.squaredNorm();
  for (Index j = 0; j < lambda.size(); ++j) out += theta.mu * lambda(j) * proj(j) * proj(j);
  return out;
}

}  // namespace

double logSpectralConditional(const ModelContext& ctx, const SpectralView& view, const Vector& x,
                              HyperState theta, CostLedger* ledger) {
  theta.require();
  const Vector y = ctx.factor().apply(x, ledger) - whitenedMean(ctx, view, theta);
  const double n = static_cast<double>(ctx.stateSize());
  return -0.5 * n * kLog2Pi + 0.5 * logDetPrecision(ctx, view, theta) -
         0.5 * whitenedPrecisionForm(view, y, theta);
}

double logSurrogateMarginal(const ModelContext& ctx, HyperState theta, CostLedger* ledger) {
  if (ledger) ++ledger->surrogate;
  return logSpectralMarginal(ctx, ctx.surrogateView(), theta);
}

double logSurrogatePosterior(const ModelContext& ctx, const Vector& x, HyperState theta,
                             CostLedger* ledger) {
  theta.require();
  const SpectralView& view = ctx.surrogateView();
  const Vector y = ctx.factor().apply(x, ledger);
  if (ledger) ++ledger->surrogate;
  // -mu/2 b^T b + mu b^T A x - 1/2 x^T Gamma_hat^{-1} x, with b^T A x = g^T L x.
  return logScaling(ctx, theta) - 0.5 * theta.mu * ctx.dataNormSq() +
         theta.mu * ctx.whitenedData().dot(y) - 0.5 * whitenedPrecisionForm(view, y, theta);
}

double logSurrogateConditional(const ModelContext& ctx, const Vector& x, HyperState theta,
                               CostLedger* ledger) {
  if (ledger) ++ledger->surrogate;
  return logSpectralConditional(ctx, ctx.surrogateView(), x, theta, ledger);
}

// ---------------------------------------------------------------------------
// w, M_m, z

double logW(const ModelContext& ctx, const Vector& x, HyperState theta, CostLedger* ledger) {
  theta.require();
  const SpectralView& view = ctx.surrogateView();
  const double ax = ctx.forward().apply(x, ledger).squaredNorm();
  const Vector y = ctx.factor().apply(x, ledger);
  const auto lambda = view.basis->keptValues();
  const Vector proj = view.basis->keptBasis().transpose() * y;
  double kept = 0.0;
  for (Index j = 0; j < lambda.size(); ++j) kept += lambda(j) * proj(j) * proj(j);
  return -0.5 * theta.mu * (ax - kept);
}

double wRatio(const ModelContext& ctx, const Vector& x, HyperState theta, CostLedger* ledger) {
  return std::exp(std::min(0.0, logW(ctx, x, theta, ledger)));
}

double logMoment(const ModelContext& ctx, HyperState theta, int m) {
  theta.require();
  if (m < 1) throw std::invalid_argument("moment_m: m must be a positive integer");
  const SpectralView& view = ctx.surrogateView();
  const LowRankSurrogate& s = *view.basis;
  if (s.rank() == ctx.stateSize()) return 0.0;
  if (!s.hasTail()) {
    throw NumericalError("moment_m: discarded eigenpairs are not available (store a tail)");
  }
  const Vector& lambda = s.eigenvalues();
  double exponent = 0.0;
  double logprod = 0.0;
  const double mm = static_cast<double>(m);
  for (Index j = s.rank(); j < s.stored(); ++j) {
    const double a = mm * theta.mu * lambda(j);
    exponent += a / (a + theta.sigma) * view.coeffs(j) * view.coeffs(j);
    logprod += 0.5 * std::log1p(a / theta.sigma);
  }
  return theta.mu * theta.mu / (2.0 * theta.sigma) * exponent + logprod;
}

double momentM(const ModelContext& ctx, HyperState theta, int m) {
  return std::exp(logMoment(ctx, theta, m));
}

double logZ(const ModelContext& ctx, const Vector& x, HyperState theta, CostLedger* ledger) {
  return logW(ctx, x, theta, ledger) + logMoment(ctx, theta, 1);
}

double zRatio(const ModelContext& ctx, const Vector& x, HyperState theta, CostLedger* ledger) {
  return std::exp(logZ(ctx, x, theta, ledger));
}

double logSumExp(const std::vector<double>& values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double top = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(top)) return top;
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - top);
  return top + std::log(sum);
}

ZkEstimate zK(const ModelContext& ctx, HyperState theta, int count, Rng& rng,
              CostLedger* ledger) {
  if (count < 1) throw std::invalid_argument("z_K: K must be at least 1");
  const SpectralView& view = ctx.surrogateView();
  const double log_m1 = logMoment(ctx, theta, 1);
  ZkEstimate out;
  out.samples.reserve(static_cast<std::size_t>(count));
  out.log_z.reserve(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) {
    const Vector eps = standardNormal(ctx.stateSize(), rng);
    Vector x = spectralSample(ctx, view, theta, eps, ledger);
    out.log_z.push_back(logW(ctx, x, theta, ledger) + log_m1);
    out.samples.push_back(std::move(x));
  }
  out.log_value = logSumExp(out.log_z) - std::log(static_cast<double>(count));
  return out;
}

// ---------------------------------------------------------------------------
// Conditionals

FullConditionals gibbsConditionals(const ModelContext& ctx, const StateTerms& terms) {
  const HyperPrior& p = ctx.prior();
  FullConditionals out;
  out.mu.shape = 0.5 * static_cast<double>(ctx.dataSize()) + p.alpha_mu;
  out.mu.rate = 0.5 * terms.misfit_sq + p.beta_mu;
  out.sigma.shape = 0.5 * static_cast<double>(ctx.stateSize()) + p.alpha_sigma;
  out.sigma.rate = 0.5 * terms.prior_sq + p.beta_sigma;
  return out;
}

FullConditionals gibbsConditionals(const ModelContext& ctx, const Vector& x, CostLedger* ledger) {
  return gibbsConditionals(ctx, stateTerms(ctx, x, ledger));
}

ConditionalGaussian conditionalParams(const ModelContext& ctx, HyperState theta,
                                      ConditionalRoute route, CostLedger* ledger) {
  theta.require();
  ConditionalGaussian out;
  out.theta = theta;
  out.route = route;
  if (route == ConditionalRoute::Exact) {
    const DenseCache& dense = ctx.dense();
    const auto llt = precisionCholesky(dense, theta);
    out.mean = llt.solve(theta.mu * dense.adjoint_data);
  } else {
    out.mean = spectralMean(ctx, ctx.surrogateView(), theta, ledger);
  }
  return out;
}

}  // namespace hbip
