#include "hbip/samplers.hpp"

#include <chrono>
#include <cmath>
#include <exception>
#include <stdexcept>
#include <thread>

namespace hbip {

SamplerKind parseSamplerKind(std::string_view name) {
  if (name == "gibbs") return SamplerKind::Gibbs;
  if (name == "one_block" || name == "one-block") return SamplerKind::OneBlock;
  if (name == "aob") return SamplerKind::Aob;
  if (name == "abda") return SamplerKind::Abda;
  if (name == "pm" || name == "pseudo_marginal" || name == "pseudo-marginal") {
    return SamplerKind::PseudoMarginal;
  }
  throw std::invalid_argument("unknown sampler '" + std::string(name) +
                              "' (expected gibbs, one_block, aob, abda or pm)");
}

std::string_view toString(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::Gibbs: return "gibbs";
    case SamplerKind::OneBlock: return "one_block";
    case SamplerKind::Aob: return "aob";
    case SamplerKind::Abda: return "abda";
    case SamplerKind::PseudoMarginal: return "pm";
  }
  return "?";
}

// ---------------------------------------------------------------------------

namespace {

Rng makeStream(std::uint64_t seed, std::uint32_t role) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), role};
  return Rng(seq);
}

}  // namespace

RngStreams::RngStreams(std::uint64_t seed)
    : proposal(makeStream(seed, 1)),
      noise(makeStream(seed, 2)),
      accept(makeStream(seed, 3)),
      gamma(makeStream(seed, 4)),
      select(makeStream(seed, 5)) {}

// ---------------------------------------------------------------------------

ProposalKernel::ProposalKernel(const ProposalOptions& options) : options_(options) {
  if (!(options.initial_var_mu > 0.0) || !(options.initial_var_sigma > 0.0)) {
    throw std::invalid_argument("proposal: initial variances must be positive");
  }
  if (!(options.scale > 0.0) || options.epsilon < 0.0 || options.adapt_start < 2) {
    throw std::invalid_argument("proposal: invalid adaptation parameters");
  }
  covariance_ = Eigen::Vector2d(options.initial_var_mu, options.initial_var_sigma).asDiagonal();
  next_checkpoint_ = options.adapt_start;
  refactor();
}

void ProposalKernel::refactor() {
  Eigen::LLT<Eigen::Matrix2d> llt(covariance_);
  if (llt.info() != Eigen::Success) throw NumericalError("proposal covariance lost definiteness");
  chol_ = llt.matrixL();
}

ProposalKernel::Proposal ProposalKernel::propose(HyperState current, Rng& rng) const {
  current.require();
  std::normal_distribution<double> normal;
  Eigen::Vector2d n;
  n(0) = normal(rng);
  n(1) = normal(rng);
  const Eigen::Vector2d step = chol_ * n;
  Proposal p;
  p.theta.mu = current.mu * std::exp(step(0));
  p.theta.sigma = current.sigma * std::exp(step(1));
  p.log_correction = step(0) + step(1);
  return p;
}

void ProposalKernel::update(HyperState state) {
  const Eigen::Vector2d y(std::log(state.mu), std::log(state.sigma));
  ++count_;
  ++window_count_;
  const Eigen::Vector2d delta = y - mean_;
  mean_ += delta / static_cast<double>(window_count_);
  scatter_ += delta * (y - mean_).transpose();
  if (count_ < next_checkpoint_) return;
  next_checkpoint_ *= 2;
  const Eigen::Matrix2d empirical = scatter_ / static_cast<double>(window_count_ - 1);
  window_count_ = 0;
  mean_.setZero();
  scatter_.setZero();
  if (!options_.adapt) return;
  const Eigen::Matrix2d candidate =
      options_.scale * (empirical + options_.epsilon * Eigen::Matrix2d::Identity());
  Eigen::LLT<Eigen::Matrix2d> llt(candidate);
  if (llt.info() != Eigen::Success) return;  // keep the previous covariance
  covariance_ = candidate;
  chol_ = llt.matrixL();
}

double ProposalKernel::logDensity(HyperState to, HyperState from) const {
  const Eigen::Vector2d y(std::log(to.mu / from.mu), std::log(to.sigma / from.sigma));
  const Eigen::Vector2d white = chol_.triangularView<Eigen::Lower>().solve(y);
  const double logdet = 2.0 * (std::log(chol_(0, 0)) + std::log(chol_(1, 1)));
  constexpr double kLog2Pi = 1.8378770664093454835606594728112;
  return -0.5 * white.squaredNorm() - 0.5 * logdet - kLog2Pi - std::log(to.mu) -
         std::log(to.sigma);
}

// ---------------------------------------------------------------------------

double Chain::acceptanceRate() const {
  return records.empty() ? 0.0 : static_cast<double>(accepted) / static_cast<double>(size());
}

double Chain::stage1Rate() const {
  return records.empty() ? 0.0 : static_cast<double>(stage1) / static_cast<double>(size());
}

double Chain::stage2Rate() const {
  return stage1 == 0 ? 0.0 : static_cast<double>(stage2) / static_cast<double>(stage1);
}

std::vector<double> Chain::muSeries(bool post_burnin) const {
  std::vector<double> out;
  for (long i = post_burnin ? burnin : 0; i < size(); ++i) out.push_back(records[i].theta.mu);
  return out;
}

std::vector<double> Chain::sigmaSeries(bool post_burnin) const {
  std::vector<double> out;
  for (long i = post_burnin ? burnin : 0; i < size(); ++i) out.push_back(records[i].theta.sigma);
  return out;
}

Matrix Chain::xSamples() const {
  std::vector<const Vector*> kept;
  for (long i = burnin; i < size(); ++i) {
    if (records[i].x.size() > 0) kept.push_back(&records[i].x);
  }
  if (kept.empty()) return Matrix();
  Matrix out(kept.front()->size(), static_cast<Index>(kept.size()));
  for (std::size_t j = 0; j < kept.size(); ++j) out.col(static_cast<Index>(j)) = *kept[j];
  return out;
}

// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

class Recorder {
 public:
  Recorder(SamplerKind kind, const SamplerOptions& options)
      : options_(options), start_(Clock::now()) {
    if (options.iterations < 1) throw std::invalid_argument("iterations must be positive");
    if (options.x_stride < 0) throw std::invalid_argument("x_stride must be non-negative");
    options.theta0.require();
    chain_.sampler = kind;
    chain_.seed = options.seed;
    chain_.burnin = options.burnin < 0 ? options.iterations / 2 : options.burnin;
    if (chain_.burnin >= options.iterations) {
      throw std::invalid_argument("burnin must be smaller than iterations");
    }
    chain_.importance_samples = options.importance_samples;
    chain_.records.reserve(static_cast<std::size_t>(options.iterations));
  }

  CostLedger ledger;

  void push(long it, HyperState theta, const Vector& x, bool accepted, bool stage1, bool stage2,
            double log_target) {
    ChainRecord r;
    r.iteration = it;
    r.theta = theta;
    if (options_.x_stride > 0 && it % options_.x_stride == 0) r.x = x;
    r.accepted = accepted;
    r.stage1 = stage1;
    r.stage2 = stage2;
    r.log_target = log_target;
    r.ledger = ledger;
    chain_.accepted += accepted;
    chain_.stage1 += stage1;
    chain_.stage2 += stage2;
    chain_.records.push_back(std::move(r));
  }

  Chain finish() {
    chain_.ledger = ledger;
    chain_.wall_seconds = std::chrono::duration<double>(Clock::now() - start_).count();
    return std::move(chain_);
  }

 private:
  const SamplerOptions& options_;
  Clock::time_point start_;
  Chain chain_;
};

bool acceptLog(double log_ratio, Rng& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  return std::log(uniform(rng)) < log_ratio;
}

double gammaDraw(const GammaParams& p, Rng& rng) {
  std::gamma_distribution<double> gamma(p.shape, 1.0 / p.rate);
  const double v = gamma(rng);
  if (!(v > 0.0) || !std::isfinite(v)) throw NumericalError("gamma draw left (0, inf)");
  return v;
}

/// One conditional draw with its joint log-density and its normalized
/// conditional log-density under the route that produced it.
struct Draw {
  Vector x;
  double log_post = 0.0;
  double log_cond = 0.0;
};

Draw drawConditional(const ModelContext& ctx, const SpectralView& view, HyperState theta,
                     Rng& noise, CostLedger& ledger) {
  const Vector eps = standardNormal(ctx.stateSize(), noise);
  Draw d;
  d.x = spectralSample(ctx, view, theta, eps, &ledger);
  d.log_post = logPosterior(ctx, d.x, theta, &ledger);
  d.log_cond = logConditionalFromNoise(ctx, view, theta, eps);
  return d;
}

}  // namespace

Chain gibbs(const ModelContext& ctx, const SamplerOptions& options) {
  Recorder rec(SamplerKind::Gibbs, options);
  RngStreams rng(options.seed);
  const SpectralView& exact = ctx.exactView();
  HyperState theta = options.theta0;
  Vector x = spectralSample(ctx, exact, theta, standardNormal(ctx.stateSize(), rng.noise),
                            &rec.ledger);
  StateTerms terms = stateTerms(ctx, x, &rec.ledger);
  ++rec.ledger.full_posterior;
  for (long it = 1; it <= options.iterations; ++it) {
    const FullConditionals c = gibbsConditionals(ctx, terms);
    theta.mu = gammaDraw(c.mu, rng.gamma);
    theta.sigma = gammaDraw(c.sigma, rng.gamma);
    x = spectralSample(ctx, exact, theta, standardNormal(ctx.stateSize(), rng.noise), &rec.ledger);
    // The same two norms give the joint density now and the conditionals next sweep.
    terms = stateTerms(ctx, x, &rec.ledger);
    ++rec.ledger.full_posterior;
    rec.push(it, theta, x, true, true, true, logPosterior(ctx, terms, theta));
  }
  return rec.finish();
}

Chain oneBlock(const ModelContext& ctx, const SamplerOptions& options) {
  Recorder rec(SamplerKind::OneBlock, options);
  RngStreams rng(options.seed);
  ProposalKernel kernel(options.proposal);
  const SpectralView& exact = ctx.exactView();
  HyperState theta = options.theta0;
  double lm = logSpectralMarginal(ctx, exact, theta);
  Vector x = spectralSample(ctx, exact, theta, standardNormal(ctx.stateSize(), rng.noise),
                            &rec.ledger);
  for (long it = 1; it <= options.iterations; ++it) {
    const auto prop = kernel.propose(theta, rng.proposal);
    const double lm_prop = logSpectralMarginal(ctx, exact, prop.theta);
    const bool accepted = acceptLog(lm_prop - lm + prop.log_correction, rng.accept);
    if (accepted) {
      // The ratio does not involve x, so the conditional draw waits for acceptance.
      theta = prop.theta;
      lm = lm_prop;
      x = spectralSample(ctx, exact, theta, standardNormal(ctx.stateSize(), rng.noise),
                         &rec.ledger);
    }
    kernel.update(theta);
    rec.push(it, theta, x, accepted, accepted, accepted, lm);
  }
  return rec.finish();
}

Chain aob(const ModelContext& ctx, const SamplerOptions& options) {
  Recorder rec(SamplerKind::Aob, options);
  RngStreams rng(options.seed);
  ProposalKernel kernel(options.proposal);
  const SpectralView& view = ctx.surrogateView();
  HyperState theta = options.theta0;
  Draw cur = drawConditional(ctx, view, theta, rng.noise, rec.ledger);
  for (long it = 1; it <= options.iterations; ++it) {
    const auto prop = kernel.propose(theta, rng.proposal);
    Draw next = drawConditional(ctx, view, prop.theta, rng.noise, rec.ledger);
    const double log_ratio =
        (next.log_post - next.log_cond) - (cur.log_post - cur.log_cond) + prop.log_correction;
    const bool accepted = acceptLog(log_ratio, rng.accept);
    if (accepted) {
      theta = prop.theta;
      cur = std::move(next);
    }
    kernel.update(theta);
    rec.push(it, theta, cur.x, accepted, accepted, accepted, cur.log_post);
  }
  return rec.finish();
}

Chain abda(const ModelContext& ctx, const SamplerOptions& options) {
  Recorder rec(SamplerKind::Abda, options);
  RngStreams rng(options.seed);
  ProposalKernel kernel(options.proposal);
  const SpectralView& view = ctx.surrogateView();
  HyperState theta = options.theta0;
  double lm = logSurrogateMarginal(ctx, theta, &rec.ledger);
  Draw cur = drawConditional(ctx, view, theta, rng.noise, rec.ledger);
  // log pi(x,theta) - log pi_hat(x,theta), i.e. log w up to a constant.
  double gap = cur.log_post - (lm + cur.log_cond);
  for (long it = 1; it <= options.iterations; ++it) {
    const auto prop = kernel.propose(theta, rng.proposal);
    const double lm_prop = logSurrogateMarginal(ctx, prop.theta, &rec.ledger);
    const bool promoted = acceptLog(lm_prop - lm + prop.log_correction, rng.accept);
    bool accepted = false;
    if (promoted) {
      Draw next = drawConditional(ctx, view, prop.theta, rng.noise, rec.ledger);
      const double gap_prop = next.log_post - (lm_prop + next.log_cond);
      accepted = acceptLog(gap_prop - gap, rng.accept);
      if (accepted) {
        theta = prop.theta;
        lm = lm_prop;
        gap = gap_prop;
        cur = std::move(next);
      }
    }
    kernel.update(theta);
    rec.push(it, theta, cur.x, accepted, promoted, accepted, cur.log_post);
  }
  return rec.finish();
}

namespace {

struct ImportanceEstimate {
  double log_value = 0.0;
  std::vector<Draw> draws;
};

ImportanceEstimate importanceEstimate(const ModelContext& ctx, const SpectralView& view,
                                      HyperState theta, int count, Rng& noise,
                                      CostLedger& ledger) {
  ImportanceEstimate est;
  est.draws.reserve(static_cast<std::size_t>(count));
  std::vector<double> log_weights;
  log_weights.reserve(static_cast<std::size_t>(count));
  for (int j = 0; j < count; ++j) {
    est.draws.push_back(drawConditional(ctx, view, theta, noise, ledger));
    log_weights.push_back(est.draws.back().log_post - est.draws.back().log_cond);
  }
  est.log_value = logSumExp(log_weights) - std::log(static_cast<double>(count));
  return est;
}

std::size_t resample(const ImportanceEstimate& est, Rng& rng) {
  if (est.draws.size() == 1) return 0;
  std::vector<double> weights;
  double top = -INFINITY;
  for (const Draw& d : est.draws) top = std::max(top, d.log_post - d.log_cond);
  for (const Draw& d : est.draws) weights.push_back(std::exp(d.log_post - d.log_cond - top));
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  return pick(rng);
}

}  // namespace

Chain pseudoMarginal(const ModelContext& ctx, const SamplerOptions& options) {
  if (options.importance_samples < 1) throw std::invalid_argument("K must be at least 1");
  Recorder rec(SamplerKind::PseudoMarginal, options);
  RngStreams rng(options.seed);
  ProposalKernel kernel(options.proposal);
  const SpectralView& view = ctx.surrogateView();
  const int count = options.importance_samples;
  HyperState theta = options.theta0;
  ImportanceEstimate cur = importanceEstimate(ctx, view, theta, count, rng.noise, rec.ledger);
  std::size_t pick = resample(cur, rng.select);
  for (long it = 1; it <= options.iterations; ++it) {
    const auto prop = kernel.propose(theta, rng.proposal);
    ImportanceEstimate next =
        importanceEstimate(ctx, view, prop.theta, count, rng.noise, rec.ledger);
    // The current estimate is carried over unchanged on rejection.
    const bool accepted =
        acceptLog(next.log_value - cur.log_value + prop.log_correction, rng.accept);
    if (accepted) {
      theta = prop.theta;
      cur = std::move(next);
      pick = resample(cur, rng.select);
    }
    kernel.update(theta);
    rec.push(it, theta, cur.draws[pick].x, accepted, accepted, accepted, cur.log_value);
  }
  return rec.finish();
}

Chain runSampler(SamplerKind kind, const ModelContext& ctx, const SamplerOptions& options) {
  switch (kind) {
    case SamplerKind::Gibbs: return gibbs(ctx, options);
    case SamplerKind::OneBlock: return oneBlock(ctx, options);
    case SamplerKind::Aob: return aob(ctx, options);
    case SamplerKind::Abda: return abda(ctx, options);
    case SamplerKind::PseudoMarginal: return pseudoMarginal(ctx, options);
  }
  throw std::invalid_argument("unknown sampler");
}

std::vector<Chain> runChains(SamplerKind kind, const ModelContext& ctx,
                             const SamplerOptions& options, int chains) {
  if (chains < 1) throw std::invalid_argument("chain count must be positive");
  // Build shared lazy caches once before the workers start.
  if (kind == SamplerKind::Gibbs || kind == SamplerKind::OneBlock) ctx.exactView();
  std::vector<Chain> out(static_cast<std::size_t>(chains));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(chains));
  std::vector<std::thread> workers;
  for (int c = 0; c < chains; ++c) {
    workers.emplace_back([&, c] {
      try {
        SamplerOptions local = options;
        local.seed = options.seed + static_cast<std::uint64_t>(c);
        out[static_cast<std::size_t>(c)] = runSampler(kind, ctx, local);
      } catch (...) {
        errors[static_cast<std::size_t>(c)] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace hbip
