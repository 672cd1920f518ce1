#include <gtest/gtest.h>

#include <boost/math/distributions/lognormal.hpp>
#include <cmath>
#include <numeric>
#include <vector>

#include "jumpsde/mcmc.hpp"

using namespace jumpsde;

namespace {

// mean over obs of ((y - mean)^2 - var)^2, written out longhand
double h_oracle(std::span<const double> obs, double x, double dt, const SdeModel& m, double var) {
  const double f = m.drift(x);
  const double mean = x + f / (1.0 + dt * f * f) * dt;
  double s = 0.0;
  for (double y : obs) {
    const double e = (y - mean) * (y - mean) - var;
    s += e * e;
  }
  return s / obs.size();
}

std::vector<double> appc_obs(int n, std::uint64_t seed) {
  const auto s = EstimationSetup::standard();
  return simulate_observations(s.x, s.model, s.dt, n, seed);
}

}  // namespace

TEST(Lognormal, MatchesBoostWithShiftedLocation) {
  for (double c : {0.3, 1.7, 2.4})
    for (double sg : {0.01, 0.05, 0.7})
      for (double x : {0.2, 1.0, 2.4, 5.0}) {
        boost::math::lognormal_distribution<double> d(std::log(c) - 0.5 * sg * sg, sg);
        const double want = boost::math::pdf(d, x);
        EXPECT_NEAR(lognormal_density(x, c, sg), want, 1e-12 * (1.0 + want));
      }
}

TEST(Lognormal, IntegratesToOne) {
  // Simpson in t = log x, where the integrand is smooth and fast-decaying.
  const double c = 2.4, sg = 0.3;
  const double lo = std::log(c) - 12 * sg, hi = std::log(c) + 12 * sg;
  const int n = 20000;
  const double h = (hi - lo) / n;
  double s = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double t = lo + i * h;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    s += w * lognormal_density(std::exp(t), c, sg) * std::exp(t);
  }
  EXPECT_NEAR(s * h / 3.0, 1.0, 1e-6);
}

TEST(Lognormal, ProposalPreservesMean) {
  Rng rng(2024);
  const int n = 1000000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = propose_lognormal(2.4, 0.01, rng);
    ASSERT_GT(v, 0.0);
    sum += v;
  }
  EXPECT_NEAR(sum / n, 2.4, 0.001);
}

TEST(Lognormal, ProposalIsNotSymmetric) {
  const double a = 1.7, b = 2.1, sg = 0.2;
  EXPECT_GT(std::abs(lognormal_density(a, b, sg) - lognormal_density(b, a, sg)), 1e-3);
}

TEST(Lognormal, RejectsNonpositiveInputs) {
  EXPECT_THROW(lognormal_density(0.0, 1.0, 0.1), ValidationError);
  EXPECT_THROW(lognormal_density(1.0, -1.0, 0.1), ValidationError);
  EXPECT_THROW(lognormal_density(1.0, 1.0, 0.0), ValidationError);
  Rng rng(1);
  EXPECT_THROW(propose_lognormal(0.0, 0.1, rng), ValidationError);
}

TEST(Quantile7, MatchesRDefault) {
  std::vector<double> v(10);
  std::iota(v.begin(), v.end(), 1.0);
  // R: quantile(1:10, c(0.025, 0.5, 0.975)) = 1.225 5.5 9.775
  EXPECT_NEAR(quantile7(v, 0.025), 1.225, 1e-12);
  EXPECT_NEAR(quantile7(v, 0.5), 5.5, 1e-12);
  EXPECT_NEAR(quantile7(v, 0.975), 9.775, 1e-12);
  EXPECT_EQ(quantile7({3.0}, 0.3), 3.0);
}

TEST(ApproxLoglik, EmptyIsZeroAndSetsAdd) {
  const auto s = EstimationSetup::standard();
  const auto obs = appc_obs(40, 5);
  const JumpPool pool(11, 50);
  const FourierConfig fc;
  EXPECT_EQ(approx_loglik(1.7, 2.4, {}, s.x, s.dt, s.model, fc, pool).loglik, 0.0);
  const std::span<const double> all(obs);
  const double whole = approx_loglik(1.7, 2.4, all, s.x, s.dt, s.model, fc, pool).loglik;
  const double a = approx_loglik(1.7, 2.4, all.first(15), s.x, s.dt, s.model, fc, pool).loglik;
  const double b = approx_loglik(1.7, 2.4, all.subspan(15), s.x, s.dt, s.model, fc, pool).loglik;
  EXPECT_NEAR(whole, a + b, 1e-9 * std::abs(whole));
}

TEST(ApproxLoglik, MatchesPerObservationDensity) {
  const auto s = EstimationSetup::standard();
  const auto obs = appc_obs(5, 6);
  const JumpPool pool(12, 30);
  const FourierConfig fc;
  const auto configs = pool.materialize_all(1.7, s.dt, s.model.jumps.law);
  double want = 0.0;
  for (double y : obs) want += std::log(fourier_density(y, [&](cplx u) { return cf_jump_mc(u, s.x, s.model, s.dt, configs); }, fc));
  EXPECT_NEAR(approx_loglik(1.7, 2.4, obs, s.x, s.dt, s.model, fc, pool).loglik, want, 1e-9 * std::abs(want));
}

TEST(ApproxLoglik, TruthBeatsDoubledIntensity) {
  const auto s = EstimationSetup::standard();
  const auto obs = appc_obs(250, 1);
  const JumpPool pool(derive_seed(1, {stream::kPool}), 200);
  const FourierConfig fc;
  const double truth = approx_loglik(1.7, 2.4, obs, s.x, s.dt, s.model, fc, pool).loglik;
  const double doubled = approx_loglik(3.4, 2.4, obs, s.x, s.dt, s.model, fc, pool).loglik;
  EXPECT_GT(truth / 250.0, doubled / 250.0);
}

TEST(HStat, MatchesLonghandWithFrozenConfigs) {
  const auto s = EstimationSetup::standard();
  const auto obs = appc_obs(100, 7);
  const JumpPool pool(13, 300);
  SdeModel m = s.model;
  m.jumps.lambda = 2.2;
  m.jumps.gamma = 1.9;
  const double var = cond_var_jump_mc(s.x, m, s.dt, pool.materialize_all(2.2, s.dt, m.jumps.law)).variance;
  EXPECT_NEAR(h_stat(2.2, 1.9, obs, s.x, s.dt, s.model, pool), h_oracle(obs, s.x, s.dt, m, var), 1e-12);
}

TEST(HStat, ZeroJumpsReduceToNoJumpVariance) {
  const auto s = EstimationSetup::standard();
  const auto obs = appc_obs(60, 8);
  const JumpPool pool(14, 100);
  SdeModel quiet = s.model;
  quiet.jumps.lambda = 0.0;
  quiet.jumps.gamma = 0.0;
  const double g = 0.35 * s.x + 0.2;
  const double var = g * g * s.dt + 0.5 * std::pow(g * 0.35 * s.dt, 2);
  EXPECT_NEAR(h_stat(0.0, 0.0, obs, s.x, s.dt, s.model, pool), h_oracle(obs, s.x, s.dt, quiet, var), 1e-12);
}

TEST(HStat, SeparatesTruthFromTripledIntensity) {
  const auto s = EstimationSetup::standard();
  const auto obs = appc_obs(10000, 9);
  const JumpPool pool(15, 4000);
  EXPECT_LT(h_stat(1.7, 2.4, obs, s.x, s.dt, s.model, pool), h_stat(5.1, 2.4, obs, s.x, s.dt, s.model, pool));
}

TEST(HStat, MonteCarloSpreadHalvesPerFourTimesConfigs) {
  const auto s = EstimationSetup::standard();
  const auto obs = appc_obs(200, 10);
  // Away from the minimiser, where h is locally linear in the MC moment; at
  // the minimiser the first-order term vanishes and the spread falls as 1/n.
  auto spread = [&](int n) {
    std::vector<double> v;
    for (std::uint64_t k = 0; k < 200; ++k) v.push_back(h_stat(1.7, 1.2, obs, s.x, s.dt, s.model, JumpPool(100 + k, n)));
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / (v.size() - 1));
  };
  const double ratio = spread(100) / spread(400);
  EXPECT_GT(ratio, 1.6);
  EXPECT_LT(ratio, 2.5);
}

TEST(NelderMead, QuadraticBowl) {
  const auto r = nelder_mead(
      [](std::span<const double> p) { return 3.0 * std::pow(p[0] - 1.25, 2) + std::pow(p[1] + 0.5, 2) + 0.5 * (p[0] - 1.25) * (p[1] + 0.5); },
      {0.0, 0.0}, 0.5, 500, 1e-9);
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.x[0], 1.25, 1e-5);
  EXPECT_NEAR(r.x[1], -0.5, 1e-5);
}

TEST(NelderMead, Rosenbrock) {
  const auto r = nelder_mead(
      [](std::span<const double> p) { return 100 * std::pow(p[1] - p[0] * p[0], 2) + std::pow(1 - p[0], 2); }, {-1.2, 1.0}, 0.5,
      5000, 1e-10);
  EXPECT_NEAR(r.x[0], 1.0, 1e-4);
  EXPECT_NEAR(r.x[1], 1.0, 1e-4);
}

TEST(NelderMead, IterationCapIsHonoured) {
  const auto r = nelder_mead([](std::span<const double> p) { return p[0] * p[0]; }, {5.0}, 0.1, 3);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 3);
}

TEST(MinimizeH, StartAtTruthStaysNear) {
  const auto s = EstimationSetup::standard();
  const auto obs = appc_obs(5000, 16);
  const JumpPool pool(17, 2000);
  const auto est = minimize_h(obs, s.x, s.dt, s.model, pool, {1.7, 2.4});
  EXPECT_GT(est[0], 0.0);
  EXPECT_GT(est[1], 0.0);
  // h only sees the second moment, so check lambda * gamma^2 rather than each
  EXPECT_NEAR(est[0] * est[1] * est[1] / (1.7 * 2.4 * 2.4), 1.0, 0.3);
}

TEST(Discriminator, RatioIdentity) {
  for (double theta : {0.5, 5.0})
    for (double h0 : {0.1, 1.3, 4.0})
      for (double h1 : {0.05, 1.3, 1.31, 6.0}) {
        const double p = std::min(1.0, std::exp(theta * (std::exp(h0) - std::exp(h1))));
        const double lr = discriminator_log_ratio(h1, h0, theta);
        EXPECT_NEAR(std::min(1.0, std::exp(lr)), p, 1e-12);
        if (h1 <= h0) {
          EXPECT_GE(lr, 0.0);
        }
      }
  // huge h: no overflow, no NaN
  EXPECT_EQ(std::exp(discriminator_log_ratio(800.0, 700.0, 5.0)), 0.0);
  EXPECT_GE(discriminator_log_ratio(700.0, 800.0, 5.0), 0.0);
}

TEST(Chain, ConstantScoreAcceptsEverything) {
  MhConfig cfg;
  cfg.m = 300;
  const auto chain = detail::run_chain(
      cfg, false, 3, [](double, double, std::size_t&) { return 1.25; },
      [&](double h1, double h0) { return discriminator_log_ratio(h1, h0, cfg.theta); });
  for (std::size_t i = 0; i < chain.accepted.size(); ++i) {
    EXPECT_TRUE(chain.accepted[i]);
    EXPECT_EQ(chain.accept_prob[i], 1.0);
  }
}

TEST(Chain, TinyProposalStaysAtInit) {
  const auto s = EstimationSetup::standard();
  const auto obs = appc_obs(50, 18);
  MhConfig cfg;
  cfg.m = 40;
  cfg.sigma1 = cfg.sigma2 = 1e-9;
  cfg.init = {1.7, 2.4};
  const auto chain = mh_likelihood(obs, s.x, s.dt, s.model, cfg, FourierConfig{}, 40, 19);
  const auto sum = chain.summarize(cfg.burn());
  EXPECT_NEAR(sum.lambda_mean, 1.7, 1e-6);
  EXPECT_NEAR(sum.gamma_mean, 2.4, 1e-6);
  EXPECT_GE(sum.acceptance, 0.95);
}

TEST(Chain, DeterministicPositiveAndBounded) {
  const auto s = EstimationSetup::standard();
  const auto obs = appc_obs(60, 20);
  MhConfig cfg;
  cfg.m = 60;
  cfg.init = {1.5, 2.0};
  const auto a = mh_likelihood(obs, s.x, s.dt, s.model, cfg, FourierConfig{}, 30, 21);
  const auto b = mh_likelihood(obs, s.x, s.dt, s.model, cfg, FourierConfig{}, 30, 21);
  EXPECT_EQ(a.lambda, b.lambda);
  EXPECT_EQ(a.gamma, b.gamma);
  EXPECT_EQ(a.accepted, b.accepted);
  ASSERT_EQ(a.lambda.size(), 60u);
  for (std::size_t i = 0; i < a.lambda.size(); ++i) {
    EXPECT_GT(a.lambda[i], 0.0);
    EXPECT_GT(a.gamma[i], 0.0);
    EXPECT_GE(a.accept_prob[i], 0.0);
    EXPECT_LE(a.accept_prob[i], 1.0);
  }
  cfg.m = 400;
  const auto c = mh_discriminator(obs, s.x, s.dt, s.model, cfg, 200, 22);
  const auto d = mh_discriminator(obs, s.x, s.dt, s.model, cfg, 200, 22);
  EXPECT_EQ(c.lambda, d.lambda);
  EXPECT_EQ(c.score, d.score);
  for (double p : c.accept_prob) {
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
  }
}

TEST(Chain, DiscriminatorScoresTrackCurrentState) {
  const auto s = EstimationSetup::standard();
  const auto obs = appc_obs(80, 23);
  MhConfig cfg;
  cfg.m = 300;
  cfg.init = {0.5, 0.5};
  const auto c = mh_discriminator(obs, s.x, s.dt, s.model, cfg, 200, 24);
  const JumpPool pool(derive_seed(24, {stream::kPool}), 200);
  double prev = h_stat(0.5, 0.5, obs, s.x, s.dt, s.model, pool);
  for (std::size_t i = 0; i < c.lambda.size(); ++i) {
    if (c.accepted[i]) {
      EXPECT_NEAR(c.score[i], h_stat(c.lambda[i], c.gamma[i], obs, s.x, s.dt, s.model, pool), 1e-12);
      // p < 1 only for a worse candidate
      if (c.accept_prob[i] < 1.0) {
        EXPECT_GT(c.score[i], prev);
      }
    } else {
      EXPECT_EQ(c.score[i], prev);
    }
    prev = c.score[i];
  }
}

TEST(Chain, SummaryUsesPostBurnInSamples) {
  MhChain c;
  for (int i = 0; i < 10; ++i) {
    c.lambda.push_back(i < 5 ? 100.0 : 1.0 + i);
    c.gamma.push_back(2.0);
    c.accepted.push_back(i % 2);
    c.accept_prob.push_back(0.5);
  }
  const auto s = c.summarize(5);
  EXPECT_DOUBLE_EQ(s.lambda_mean, 8.0);
  EXPECT_DOUBLE_EQ(s.gamma_mean, 2.0);
  EXPECT_DOUBLE_EQ(s.acceptance, 0.5);
  EXPECT_NEAR(s.lambda_ci[0], 6.0 + 4 * 0.025, 1e-12);
  EXPECT_NEAR(s.lambda_ci[1], 6.0 + 4 * 0.975, 1e-12);
}

TEST(MhConfig, Validation) {
  MhConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.burn(), 200);
  c.sigma1 = 0.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = MhConfig{};
  c.init = {0.0, 1.0};
  EXPECT_THROW(c.validate(), ValidationError);
  c = MhConfig{};
  c.burn_in = 1000;
  EXPECT_THROW(c.validate(), ValidationError);
}
