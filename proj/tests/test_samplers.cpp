#include "hbip/samplers.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace hbip;
using namespace hbip::testing;

namespace {

SamplerOptions quick(long iterations, std::uint64_t seed = 7) {
  SamplerOptions o;
  o.iterations = iterations;
  o.seed = seed;
  return o;
}

std::vector<bool> acceptTrace(const Chain& c) {
  std::vector<bool> out;
  for (const auto& r : c.records) out.push_back(r.accepted);
  return out;
}

}  // namespace

TEST(SamplerKind, ParseAndPrint) {
  for (auto k : {SamplerKind::Gibbs, SamplerKind::OneBlock, SamplerKind::Aob, SamplerKind::Abda,
                 SamplerKind::PseudoMarginal}) {
    EXPECT_EQ(parseSamplerKind(toString(k)), k);
  }
  EXPECT_EQ(parseSamplerKind("one-block"), SamplerKind::OneBlock);
  EXPECT_EQ(parseSamplerKind("pseudo_marginal"), SamplerKind::PseudoMarginal);
  EXPECT_THROW(parseSamplerKind("hmc"), std::invalid_argument);
}

TEST(RngStreams, DeterministicAndDistinct) {
  RngStreams a(3), b(3);
  EXPECT_EQ(a.proposal(), b.proposal());
  EXPECT_EQ(a.select(), b.select());
  RngStreams c(3);
  EXPECT_NE(c.proposal(), c.noise());
  EXPECT_NE(RngStreams(3).accept(), RngStreams(4).accept());
}

TEST(Proposal, InitialCovarianceIsFixedDiagonal) {
  ProposalOptions o;
  o.initial_var_mu = 0.04;
  o.initial_var_sigma = 0.09;
  ProposalKernel k(o);
  for (int i = 0; i < 199; ++i) k.update({1.0 + 0.1 * i, 2.0});
  EXPECT_DOUBLE_EQ(k.covariance()(0, 0), 0.04);
  EXPECT_DOUBLE_EQ(k.covariance()(1, 1), 0.09);
  EXPECT_DOUBLE_EQ(k.covariance()(0, 1), 0.0);
  k.update({3.0, 2.5});
  EXPECT_NE(k.covariance()(0, 0), 0.04);
}

TEST(Proposal, LognormalCorrectionAndPositivity) {
  ProposalKernel k;
  Rng rng(5);
  const HyperState cur{2.0, 0.3};
  for (int i = 0; i < 100; ++i) {
    auto p = k.propose(cur, rng);
    ASSERT_TRUE(p.theta.valid());
    const double want = std::log(p.theta.mu) + std::log(p.theta.sigma) - std::log(cur.mu) -
                        std::log(cur.sigma);
    EXPECT_NEAR(p.log_correction, want, 1e-12);
    EXPECT_NEAR(k.logDensity(cur, p.theta) - k.logDensity(p.theta, cur), want, 1e-12);
  }
}

TEST(Proposal, AdaptationTracksLogScaleCovariance) {
  ProposalKernel k;
  Rng rng(9);
  std::normal_distribution<double> n;
  for (int i = 0; i < 3200; ++i) k.update({std::exp(2.0 * n(rng)), std::exp(0.5 * n(rng))});
  const double sd = 2.38 * 2.38 / 2.0;
  EXPECT_NEAR(k.covariance()(0, 0) / sd, 4.0, 0.6);
  EXPECT_NEAR(k.covariance()(1, 1) / sd, 0.25, 0.04);
}

TEST(Proposal, RejectsBadOptions) {
  ProposalOptions o;
  o.initial_var_mu = 0.0;
  EXPECT_THROW(ProposalKernel{o}, std::invalid_argument);
}

TEST(Gibbs, DecoupledMuChainIsGammaDistributed) {
  const HyperPrior prior{2.0, 3.0, 2.0, 1.0};
  auto ctx = ModelContext(denseMap(Matrix::Zero(6, 3)), std::make_shared<DenseFactor>(
                              Matrix::Identity(3, 3)),
                          Vector::Ones(6), prior);
  auto c = gibbs(ctx, quick(40000));
  const auto mu = c.muSeries();
  // A = 0: mu | rest ~ Gamma(M/2 + alpha, ||b||^2/2 + beta) independently each sweep.
  const double shape = 3.0 + 2.0, rate = 3.0 + 3.0;
  EXPECT_NEAR(sampleMean(mu), shape / rate, 3.0 * mcse(mu));
  EXPECT_EQ(c.accepted, c.size());
}

TEST(Chain, RecordsAreContiguousAndConsistent) {
  auto ctx = withExactRank(denseInstance(5, 5, 3), 2);
  for (auto k : {SamplerKind::Gibbs, SamplerKind::OneBlock, SamplerKind::Aob, SamplerKind::Abda,
                 SamplerKind::PseudoMarginal}) {
    auto c = runSampler(k, ctx, quick(300));
    ASSERT_EQ(c.size(), 300);
    EXPECT_EQ(c.burnin, 150);
    for (long i = 0; i < c.size(); ++i) {
      const auto& r = c.records[static_cast<std::size_t>(i)];
      EXPECT_EQ(r.iteration, i + 1);
      EXPECT_TRUE(!r.stage2 || r.stage1);
      EXPECT_EQ(r.accepted, r.stage2);
      EXPECT_EQ(r.x.size(), 5);
    }
    EXPECT_EQ(c.muSeries().size(), 150u);
    EXPECT_EQ(c.xSamples().cols(), 150);
  }
}

TEST(Chain, OptionValidation) {
  auto ctx = withExactRank(denseInstance(3, 3, 1), 1);
  auto o = quick(10);
  o.burnin = 10;
  EXPECT_THROW(aob(ctx, o), std::invalid_argument);
  o = quick(0);
  EXPECT_THROW(aob(ctx, o), std::invalid_argument);
  o = quick(10);
  o.importance_samples = 0;
  EXPECT_THROW(pseudoMarginal(ctx, o), std::invalid_argument);
}

TEST(Chain, XThinning) {
  auto ctx = withExactRank(denseInstance(4, 4, 2), 2);
  auto o = quick(100);
  o.x_stride = 10;
  auto c = aob(ctx, o);
  EXPECT_EQ(c.xSamples().cols(), 5);
  o.x_stride = 0;
  EXPECT_EQ(aob(ctx, o).xSamples().size(), 0);
}

TEST(Determinism, SameSeedSameChain) {
  auto ctx = withExactRank(denseInstance(5, 4, 8), 2);
  for (auto k : {SamplerKind::Gibbs, SamplerKind::OneBlock, SamplerKind::Aob, SamplerKind::Abda,
                 SamplerKind::PseudoMarginal}) {
    auto o = quick(400);
    o.importance_samples = 3;
    auto a = runSampler(k, ctx, o), b = runSampler(k, ctx, o);
    for (long i = 0; i < a.size(); ++i) {
      ASSERT_EQ(a.records[i].theta, b.records[i].theta);
      ASSERT_EQ(a.records[i].x, b.records[i].x);
      ASSERT_EQ(a.records[i].log_target, b.records[i].log_target);
    }
    o.seed = 8;
    EXPECT_NE(runSampler(k, ctx, o).records.back().theta, a.records.back().theta);
  }
}

TEST(Ledger, FullPosteriorEvaluationCounts) {
  auto ctx = withExactRank(denseInstance(6, 6, 4), 3);
  const long n = 500;
  auto a = aob(ctx, quick(n));
  EXPECT_EQ(a.ledger.full_posterior, static_cast<std::uint64_t>(n + 1));
  auto d = abda(ctx, quick(n));
  EXPECT_EQ(d.ledger.full_posterior, static_cast<std::uint64_t>(d.stage1 + 1));
  EXPECT_LT(d.ledger.full_posterior, a.ledger.full_posterior);
  auto o = quick(n);
  o.importance_samples = 4;
  auto p = pseudoMarginal(ctx, o);
  EXPECT_EQ(p.ledger.full_posterior, static_cast<std::uint64_t>(4 * (n + 1)));
  // AOB acceptance ratio: one forward application and one factor application per iteration.
  EXPECT_EQ(a.ledger.forward, static_cast<std::uint64_t>(n + 1));
}

TEST(Reduction, FullRankAobMatchesOneBlock) {
  auto base = denseInstance(6, 6, 11);
  auto ctx = withExactRank(base, 6);
  auto o = quick(3000);
  EXPECT_EQ(acceptTrace(aob(ctx, o)), acceptTrace(oneBlock(ctx, o)));
}

TEST(Reduction, PseudoMarginalWithOneSampleMatchesAob) {
  auto ctx = withExactRank(denseInstance(6, 6, 12), 2);
  auto o = quick(3000);
  auto a = aob(ctx, o), p = pseudoMarginal(ctx, o);
  EXPECT_EQ(acceptTrace(a), acceptTrace(p));
  EXPECT_EQ(a.records.back().theta, p.records.back().theta);
}

TEST(Reduction, FullRankPseudoMarginalMatchesOneBlock) {
  auto ctx = withExactRank(denseInstance(5, 5, 13), 5);
  auto o = quick(2000);
  o.importance_samples = 3;
  EXPECT_EQ(acceptTrace(pseudoMarginal(ctx, o)), acceptTrace(oneBlock(ctx, o)));
}

TEST(Reduction, FullRankAbdaAcceptsEveryPromotion) {
  auto ctx = withExactRank(denseInstance(6, 6, 14), 6);
  auto c = abda(ctx, quick(2000));
  EXPECT_GT(c.stage1, 0);
  EXPECT_EQ(c.stage1, c.stage2);
  EXPECT_DOUBLE_EQ(c.stage2Rate(), 1.0);
}

TEST(OneBlock, ForcedIdenticalProposalAlwaysAccepted) {
  auto ctx = denseInstance(4, 4, 15);
  auto o = quick(100);
  o.proposal.adapt = false;
  o.proposal.initial_var_mu = 1e-300;
  o.proposal.initial_var_sigma = 1e-300;
  EXPECT_DOUBLE_EQ(oneBlock(ctx, o).acceptanceRate(), 1.0);
}

TEST(Identities, RawDensityRatiosMatchSimplifiedForms) {
  auto ctx = withExactRank(denseInstance(6, 6, 21), 3);
  ProposalKernel r;
  Rng rng(22);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    const HyperState t{std::exp(u(rng)), std::exp(u(rng))}, tp{std::exp(u(rng)), std::exp(u(rng))};
    const Vector x = randomVector(6, rng), xp = randomVector(6, rng);
    EXPECT_NEAR(rawAobLogRatio(ctx, r, x, t, xp, tp), simplifiedAobLogRatio(ctx, r, x, t, xp, tp),
                1e-10);
    const double stage2 = std::min(0.0, logW(ctx, xp, tp) - logW(ctx, x, t));
    EXPECT_NEAR(rawAbdaStage2LogRatio(ctx, r, x, t, xp, tp), stage2, 1e-10);
    std::vector<Vector> xs{x, randomVector(6, rng)}, xps{xp, randomVector(6, rng)};
    EXPECT_NEAR(rawPmLogRatio(ctx, r, xs, t, xps, tp), simplifiedPmLogRatio(ctx, r, xs, t, xps, tp),
                1e-10);
  }
}

TEST(Exactness, ThetaMomentsMatchQuadrature) {
  auto ctx = withExactRank(denseInstance(4, 4, 31), 2);
  const auto q = quadratureOracle(ctx, 201);
  for (auto k : {SamplerKind::Gibbs, SamplerKind::OneBlock, SamplerKind::Aob, SamplerKind::Abda,
                 SamplerKind::PseudoMarginal}) {
    auto o = quick(40000, 5);
    o.importance_samples = 2;
    auto c = runSampler(k, ctx, o);
    const auto mu = c.muSeries(), sigma = c.sigmaSeries();
    EXPECT_NEAR(sampleMean(mu), q.mean_mu, 4.0 * mcse(mu)) << toString(k);
    EXPECT_NEAR(sampleMean(sigma), q.mean_sigma, 4.0 * mcse(sigma)) << toString(k);
    const Matrix xs = c.xSamples();
    for (Index i = 0; i < 4; ++i) {
      const auto xi = row(xs, i);
      EXPECT_NEAR(sampleMean(xi), q.x_mean(i), 4.0 * mcse(xi)) << toString(k) << " x_" << i;
    }
  }
}

TEST(Chains, ParallelChainsUseConsecutiveSeeds) {
  auto ctx = withExactRank(denseInstance(5, 5, 41), 2);
  auto o = quick(300, 100);
  auto chains = runChains(SamplerKind::Aob, ctx, o, 3);
  ASSERT_EQ(chains.size(), 3u);
  for (int c = 0; c < 3; ++c) {
    auto single = o;
    single.seed = 100 + static_cast<std::uint64_t>(c);
    auto ref = aob(ctx, single);
    EXPECT_EQ(chains[c].seed, single.seed);
    EXPECT_EQ(chains[c].records.back().theta, ref.records.back().theta);
  }
  EXPECT_THROW(runChains(SamplerKind::Aob, ctx, o, 0), std::invalid_argument);
}
