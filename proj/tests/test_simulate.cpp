#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "jumpsde/simulate.hpp"

using namespace jumpsde;

namespace {

SdeModel make_model(const char* f, const char* g, double x0 = 1.0, JumpSpec jumps = {}) {
  return {Coefficient::parse(f), Coefficient::parse(g), x0, jumps};
}

struct Stats {
  double mean = 0, var = 0, stderr_mean = 0;
};

Stats stats_of(const std::vector<double>& v) {
  Stats s;
  for (double x : v) s.mean += x;
  s.mean /= v.size();
  for (double x : v) s.var += (x - s.mean) * (x - s.mean);
  s.var /= (v.size() - 1);
  s.stderr_mean = std::sqrt(s.var / v.size());
  return s;
}

}  // namespace

TEST(TamedDrift, Values) {
  EXPECT_EQ(tamed_drift(0.0, 0.005), 0.0);
  EXPECT_NEAR(tamed_drift(1e6, 0.005), 1e6 / (1 + 0.005 * 1e12), 1e-18);
  EXPECT_LT(std::fabs(tamed_drift(1e6, 0.005)), 1.0 / (2 * std::sqrt(0.005)));
  const double fx = -0.25 * std::pow(2.4, 3);  // -3.456
  EXPECT_NEAR(tamed_drift(fx, 0.005), fx / (1 + 0.005 * fx * fx), 1e-15);
  EXPECT_NEAR(tamed_drift(fx, 0.005), -3.261, 5e-4);
}

TEST(TamedDrift, BoundHoldsEverywhere) {
  for (double dt : {1e-4, 0.005, 0.5, 2.0}) {
    const double bound = 1.0 / (2.0 * std::sqrt(dt));
    for (double mag = 1e-6; mag < 1e9; mag *= 1.3)
      for (double fx : {mag, -mag}) ASSERT_LE(std::fabs(tamed_drift(fx, dt)), bound * (1 + 1e-12));
  }
}

TEST(JumpConfigs, NoIntensityNoJumps) {
  Rng rng(1);
  JumpSpec spec{0.0, 1.0, JumpLaw::uniform(0.1)};
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_jump_config(rng, 0.5, spec).count(), 0u);
}

TEST(JumpConfigs, PoissonMeanAndSortedTimes) {
  Rng rng(2);
  JumpSpec spec{1.7, 1.0, JumpLaw::uniform(0.5)};
  const double dt = 0.5;  // lambda dt = 0.85
  double total = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto cfg = sample_jump_config(rng, dt, spec);
    total += cfg.count();
    for (std::size_t j = 0; j < cfg.count(); ++j) {
      ASSERT_GT(cfg.times[j], 0.0);
      ASSERT_LE(cfg.times[j], dt);
      if (j > 0) {
        ASSERT_LE(cfg.times[j - 1], cfg.times[j]);
      }
      ASSERT_LE(std::fabs(cfg.sizes[j]), 0.5);
    }
  }
  EXPECT_NEAR(total / n, 0.85, 0.01);
}

TEST(JumpLaws, SecondMomentsAndParsing) {
  EXPECT_DOUBLE_EQ(JumpLaw::uniform(0.3).second_moment(), 0.03);
  EXPECT_DOUBLE_EQ(JumpLaw::normal(0.5).second_moment(), 0.25);
  EXPECT_DOUBLE_EQ(JumpLaw::laplace(0.1).second_moment(), 0.02);
  EXPECT_EQ(JumpLaw::parse("laplace:0.1").kind, JumpLawKind::Laplace);
  EXPECT_DOUBLE_EQ(JumpLaw::parse("normal:2").scale, 2.0);
  EXPECT_THROW(JumpLaw::parse("cauchy:1"), std::invalid_argument);
  EXPECT_THROW(JumpLaw::parse("normal"), std::invalid_argument);
  EXPECT_THROW(JumpLaw::parse("normal:-1"), std::invalid_argument);
  EXPECT_THROW(JumpLaw::parse("normal:1x"), std::invalid_argument);
}

TEST(JumpLaws, EmpiricalSecondMoment) {
  Rng rng(3);
  for (auto law : {JumpLaw::uniform(0.5), JumpLaw::normal(0.7), JumpLaw::laplace(0.2)}) {
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
      const double z = law.sample(rng);
      s += z;
      s2 += z * z;
    }
    EXPECT_NEAR(s / n, 0.0, 4 * std::sqrt(law.second_moment() / n));
    EXPECT_NEAR(s2 / n / law.second_moment(), 1.0, 0.03);
  }
}

TEST(JumpLaws, NormalQuantileInvertsCdf) {
  for (double p : {1e-10, 1e-4, 0.01, 0.3, 0.5, 0.77, 0.999, 1 - 1e-9}) {
    const double x = JumpLaw::normal_quantile(p);
    EXPECT_NEAR(0.5 * std::erfc(-x / std::sqrt(2.0)), p, 1e-9 * std::min(p, 1 - p) + 1e-15);
  }
}

TEST(MilsteinStep, DegenerateModelIsIdentity) {
  const auto m = make_model("0", "0", 0.0);
  Rng rng(4);
  for (double x : {-1.0, 0.0, 3.5}) EXPECT_EQ(milstein_step(x, m, 0.1, rng), x);
}

TEST(MilsteinStep, UnitDiffusionVariance) {
  const auto m = make_model("0", "1");
  Rng rng(5);
  const double dt = 0.01;
  std::vector<double> inc(100000);
  for (auto& v : inc) v = milstein_step(0.3, m, dt, rng) - 0.3;
  EXPECT_NEAR(stats_of(inc).var / dt, 1.0, 0.02);
}

TEST(MilsteinStep, ConditionalMeanMatchesTamedDrift) {
  const auto m = make_model("sin(x)", "0.35*x+0.2", 1.5, {1.7, 2.4, JumpLaw::uniform(0.5)});
  Rng rng(6);
  const double dt = 0.5, x = 1.5;
  std::vector<double> inc(200000);
  for (auto& v : inc) v = milstein_step(x, m, dt, rng) - x;
  const auto s = stats_of(inc);
  EXPECT_NEAR(s.mean, tamed_drift(std::sin(x), dt) * dt, 4 * s.stderr_mean);
}

TEST(MilsteinStep, JumpSumIsSymmetric) {
  JumpSpec spec{1.2, 0.8, JumpLaw::uniform(0.1)};
  Rng rng(7);
  std::vector<double> sums(100000);
  for (auto& v : sums) v = spec.gamma * sample_jump_config(rng, 0.5, spec).size_sum();
  const auto s = stats_of(sums);
  EXPECT_NEAR(s.mean, 0.0, 3 * s.stderr_mean);
  EXPECT_EQ(jump_compensator(spec), 0.0);
}

TEST(MilsteinUpdate, BridgeTermsUseTailIncrements) {
  // Two jumps at 0.1 and 0.3 in a step of 0.5; g(x) = x so g(x + gz) - g(x) = gz.
  const auto m = make_model("0", "x", 1.0, {1.0, 2.0, JumpLaw::uniform(1.0)});
  JumpConfig cfg{{0.1, 0.3}, {0.25, -0.5}};
  const double pieces[3] = {0.2, -0.1, 0.05};
  const double dw = 0.15;
  const double expected = 1.0 + dw + 0.5 * 1.0 * 1.0 * (dw * dw - 0.5) + 2.0 * (0.25 - 0.5) +
                          (2.0 * 0.25) * (-0.1 + 0.05) + (2.0 * -0.5) * 0.05;
  EXPECT_NEAR(milstein_update(1.0, m, 0.5, cfg, pieces), expected, 1e-15);
}

TEST(SimulatePaths, ShapeAndBlocks) {
  const auto m = make_model("-0.25*x^3", "0.57*x", 1.5);
  const auto ps = simulate_paths(m, 5.0, 1000, 10, 42, 100);
  EXPECT_EQ(ps.num_paths(), 10u);
  EXPECT_EQ(ps.num_points(), 1000u);
  EXPECT_EQ(ps.num_blocks(), 10u);
  EXPECT_DOUBLE_EQ(ps.grid.back(), 5.0);
  ps.validate();
  // Paths decay toward zero.
  double start = 0, end = 0;
  for (const auto& p : ps.paths) {
    EXPECT_EQ(p[0], 1.5);
    start += std::fabs(p[0]);
    end += std::fabs(p.back());
  }
  EXPECT_LT(end, 0.6 * start);
  const auto tiny = simulate_paths(m, 1.0, 2, 1, 1, 2);
  EXPECT_EQ(tiny.paths.size(), 1u);
  EXPECT_EQ(tiny.paths[0].size(), 2u);
}

TEST(SimulatePaths, Deterministic) {
  const auto m = make_model("1-x", "0.31*x", 1.5, {1.2, 0.8, JumpLaw::uniform(0.1)});
  const auto a = simulate_paths(m, 5.0, 200, 4, 99, 50);
  const auto b = simulate_paths(m, 5.0, 200, 4, 99, 50);
  EXPECT_EQ(a.paths, b.paths);
  const auto c = simulate_paths(m, 5.0, 200, 4, 100, 50);
  EXPECT_NE(a.paths, c.paths);
}

TEST(SimulatePaths, Validation) {
  const auto m = make_model("0", "1");
  EXPECT_THROW(simulate_paths(m, 1.0, 1, 1, 1, 2), ValidationError);
  EXPECT_THROW(simulate_paths(m, 1.0, 10, 0, 1, 2), ValidationError);
  EXPECT_THROW(simulate_paths(m, 1.0, 10, 1, 1, 3), ValidationError);
  EXPECT_THROW(simulate_paths(m, 1.0, 10, 1, 1, 1), ValidationError);
}

TEST(SimulatePaths, DivergenceIsReported) {
  const auto m = make_model("0", "x^3", 5.0);
  try {
    (void)simulate_paths(m, 10.0, 1000, 2, 5, 10);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.seed(), 5u);
    EXPECT_GT(e.step(), 0u);
  }
}

TEST(Convergence, DeterministicLimitIsAtLeastFirstOrder) {
  // x0 = 2 so the taming bias dominates the Euler error.
  const auto m = make_model("-x", "0", 2.0);
  const auto r = convergence_slope(m, 1.0, {16, 32, 64, 128}, 4096, 4, 1);
  EXPECT_GE(r.slope, 1.0);
}

TEST(Convergence, LinearSdeSlopeNearOne) {
  const auto m = make_model("-x", "0.5*x", 1.0);
  const auto r = convergence_slope(m, 1.0, {64, 128, 256, 512, 1024}, 16384, 500, 11);
  EXPECT_GT(r.slope, 0.8);
  EXPECT_LT(r.slope, 1.2);
}
