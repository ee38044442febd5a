#pragma once

#include "hbip/model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace hbip {

enum class SamplerKind { Gibbs, OneBlock, Aob, Abda, PseudoMarginal };

SamplerKind parseSamplerKind(std::string_view name);
std::string_view toString(SamplerKind kind);

/// One generator per role, all derived from a single seed. Keeping the roles
/// apart means two samplers that consume the same draws for the same purpose
/// stay aligned even when one of them needs extra randomness elsewhere.
struct RngStreams {
  explicit RngStreams(std::uint64_t seed);

  Rng proposal;  // theta proposals
  Rng noise;     // conditional eps draws
  Rng accept;    // Metropolis uniforms
  Rng gamma;     // Gibbs hyperparameter draws
  Rng select;    // importance resampling of the recorded x (pseudo-marginal)
};

struct ProposalOptions {
  /// Initial proposal variances of (log mu, log sigma).
  double initial_var_mu = 0.01;
  double initial_var_sigma = 0.01;
  bool adapt = true;
  long adapt_start = 200;
  double scale = 2.38 * 2.38 / 2.0;
  double epsilon = 1e-8;
};

/// Adaptive Metropolis random walk on log theta (a lognormal proposal on theta).
///
/// The covariance is re-estimated at iterations adapt_start, 2 adapt_start,
/// 4 adapt_start, ... from the samples since the previous checkpoint, so a long
/// initial transient does not inflate it for the rest of the run.
class ProposalKernel {
 public:
  struct Proposal {
    HyperState theta;
    /// log r(theta | theta') - log r(theta' | theta) = sum log theta' - sum log theta.
    double log_correction = 0.0;
  };

  explicit ProposalKernel(const ProposalOptions& options = {});

  Proposal propose(HyperState current, Rng& rng) const;
  /// Feed the chain state after an iteration; adapts from `adapt_start` samples on.
  void update(HyperState state);

  const Eigen::Matrix2d& covariance() const { return covariance_; }
  long samples() const { return count_; }
  /// log r(to | from) including the lognormal Jacobian.
  double logDensity(HyperState to, HyperState from) const;

 private:
  void refactor();

  ProposalOptions options_;
  long count_ = 0;
  long window_count_ = 0;
  long next_checkpoint_ = 0;
  Eigen::Vector2d mean_ = Eigen::Vector2d::Zero();
  Eigen::Matrix2d scatter_ = Eigen::Matrix2d::Zero();
  Eigen::Matrix2d covariance_;
  Eigen::Matrix2d chol_;
};

struct ChainRecord {
  long iteration = 0;
  HyperState theta;
  Vector x;  // empty when thinned out
  bool accepted = false;
  bool stage1 = false;
  bool stage2 = false;
  /// Log target at the recorded state: joint posterior (Gibbs, AOB, ABDA),
  /// exact marginal (one-block) or the importance estimate (pseudo-marginal).
  double log_target = 0.0;
  CostLedger ledger;
};

struct Chain {
  SamplerKind sampler = SamplerKind::Aob;
  std::uint64_t seed = 0;
  long burnin = 0;
  int importance_samples = 1;
  std::vector<ChainRecord> records;
  long accepted = 0;
  long stage1 = 0;
  long stage2 = 0;
  CostLedger ledger;
  double wall_seconds = 0.0;

  long size() const { return static_cast<long>(records.size()); }
  double acceptanceRate() const;
  /// Stage-1 promotion rate (ABDA); equals acceptanceRate() for other samplers.
  double stage1Rate() const;
  /// Stage-2 acceptance among promoted proposals (ABDA).
  double stage2Rate() const;

  std::vector<double> muSeries(bool post_burnin = true) const;
  std::vector<double> sigmaSeries(bool post_burnin = true) const;
  /// Post-burn-in x samples, one per column (records without x are skipped).
  Matrix xSamples() const;
};

struct SamplerOptions {
  long iterations = 1000;
  /// Negative: half of the iterations.
  long burnin = -1;
  std::uint64_t seed = 1;
  HyperState theta0{1.0, 1.0};
  /// Keep x every `x_stride` iterations; 0 keeps none.
  long x_stride = 1;
  int importance_samples = 1;
  ProposalOptions proposal;
};

Chain gibbs(const ModelContext& ctx, const SamplerOptions& options);
Chain oneBlock(const ModelContext& ctx, const SamplerOptions& options);
Chain aob(const ModelContext& ctx, const SamplerOptions& options);
Chain abda(const ModelContext& ctx, const SamplerOptions& options);
Chain pseudoMarginal(const ModelContext& ctx, const SamplerOptions& options);

Chain runSampler(SamplerKind kind, const ModelContext& ctx, const SamplerOptions& options);

/// Independent chains on worker threads; chain c uses seed `options.seed + c`.
std::vector<Chain> runChains(SamplerKind kind, const ModelContext& ctx,
                             const SamplerOptions& options, int chains);

}  // namespace hbip
