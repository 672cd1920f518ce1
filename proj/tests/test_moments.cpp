#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "jumpsde/moments.hpp"

using namespace jumpsde;

namespace {

SdeModel make_model(const char* f, const char* g, JumpSpec jumps = {}) {
  return {Coefficient::parse(f), Coefficient::parse(g), 0.0, jumps};
}

double sample_variance(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= v.size();
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / (v.size() - 1);
}

}  // namespace

TEST(CondMean, Values) {
  EXPECT_EQ(cond_mean(1.3, make_model("0", "1"), 0.1), 1.3);
  const double s = std::sin(1.5);
  EXPECT_NEAR(cond_mean(1.5, make_model("sin(x)", "1"), 0.5), 1.5 + 0.5 * s / (1 + 0.5 * s * s), 1e-15);
  EXPECT_NEAR(cond_mean(1.5, make_model("sin(x)", "1"), 0.5), 1.8331, 1e-4);
}

TEST(CondMean, MatchesSimulation) {
  const auto m = make_model("sin(x)", "0.35*x+0.2");
  Rng rng(1);
  std::vector<double> v(1000000);
  double sum = 0;
  for (auto& x : v) sum += (x = milstein_step(1.5, m, 0.5, rng));
  const double mean = sum / v.size();
  const double se = std::sqrt(sample_variance(v) / v.size());
  EXPECT_NEAR(mean, cond_mean(1.5, m, 0.5), 4 * se);
}

TEST(CondVarNoJump, Values) {
  EXPECT_EQ(cond_var_nojump(0.7, make_model("x", "0"), 0.5), 0.0);
  EXPECT_DOUBLE_EQ(cond_var_nojump(0.7, make_model("x", "1"), 0.5), 0.5);
  const double g = 0.57 * 1.5, gp = 0.57, dt = 0.005;
  const double expected = g * g * dt + 0.5 * std::pow(g * gp * dt, 2);
  EXPECT_NEAR(cond_var_nojump(1.5, make_model("x", "0.57*x"), dt), expected, 1e-18);
  // 3.6555e-3 is 0.855^2 * 0.005 rounded to five significant digits.
  EXPECT_NEAR(expected, 3.6555e-3 + 2.97e-6, 5e-7);
}

TEST(CondVarNoJump, MatchesSimulation) {
  const auto m = make_model("-0.25*x^3", "0.57*x");
  Rng rng(2);
  std::vector<double> v(1000000);
  for (auto& x : v) x = milstein_step(1.5, m, 0.005, rng);
  EXPECT_NEAR(sample_variance(v) / cond_var_nojump(1.5, m, 0.005), 1.0, 0.02);
}

TEST(CondVarJump, ConstantDiffusionHasNoCrossTerms) {
  const auto m = make_model("1-x", "0.7", {1.7, 0.31, JumpLaw::normal(std::sqrt(0.12))});
  Rng rng(3);
  const auto est = cond_var_jump_mc(0.4, m, 0.5, 400, rng);
  EXPECT_NEAR(est.variance, 0.49 * 0.5 + 0.31 * 0.31 * 0.12 * 1.7 * 0.5, 1e-15);
  EXPECT_EQ(est.mc_samples, 400);
}

TEST(CondVarJump, MatchesSimulation) {
  const auto m = make_model("1-x", "0.31*x", {1.2, 0.8, JumpLaw::uniform(0.1)});
  Rng rng(4);
  const double x = 1.5, dt = 0.5;
  std::vector<double> v(1000000);
  for (auto& s : v) s = milstein_step(x, m, dt, rng);
  const auto est = cond_var_jump_mc(x, m, dt, 4000, rng);
  EXPECT_NEAR(sample_variance(v) / est.variance, 1.0, 0.05);
  EXPECT_GT(est.variance, 0.0);
}

TEST(CondVarJump, CrossTermsAgainstDirectDoubleSum) {
  const auto m = make_model("0", "0.5*x^2+0.1");
  JumpConfig cfg{{0.05, 0.2, 0.4}, {0.3, -0.7, 0.1}};
  const double x = 0.8, dt = 0.5, gamma = 1.3;
  const double gx = m.diffusion(x);
  std::vector<double> dg;
  for (double z : cfg.sizes) dg.push_back(m.diffusion(x + gamma * z) - gx);
  double direct = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    direct += 2 * gx * dg[i] * (dt - cfg.times[i]);
    for (std::size_t j = 0; j < 3; ++j) direct += dg[i] * dg[j] * (dt - std::max(cfg.times[i], cfg.times[j]));
  }
  auto g_at = [&](double y) { return m.diffusion(y); };
  EXPECT_NEAR(jump_cross_terms(gx, cfg, dt, gamma, x, g_at), direct, 1e-15);
}

TEST(CondVarJump, StderrFollowsSqrtLaw) {
  const auto m = make_model("sin(x)", "0.35*x+0.2", {1.7, 2.4, JumpLaw::uniform(0.5)});
  Rng rng(5);
  const auto a = cond_var_jump_mc(1.5, m, 0.5, 4000, rng);
  const auto b = cond_var_jump_mc(1.5, m, 0.5, 16000, rng);
  EXPECT_NEAR(a.mc_stderr / b.mc_stderr, 2.0, 0.2);
}

TEST(CondVarJump, ContinuityAsGammaVanishes) {
  const auto base = make_model("sin(x)", "0.35*x+0.2");
  Rng rng(6);
  const double v0 = cond_var_nojump(1.5, base, 0.5);
  for (double gamma : {1e-3, 1e-5}) {
    auto m = base;
    m.jumps = {1.7, gamma, JumpLaw::uniform(0.5)};
    EXPECT_NEAR(cond_var_jump_mc(1.5, m, 0.5, 2000, rng).variance, v0, 10 * gamma);
  }
}

TEST(CondMoments, ClosedFormWithoutJumps) {
  Rng rng(7);
  const auto est = cond_moments(1.0, make_model("x", "x"), 0.1, 400, rng);
  EXPECT_EQ(est.mc_samples, 0);
}

TEST(StandardizedResidual, Values) {
  const auto m = make_model("sin(x)", "0.35*x+0.2");
  EXPECT_EQ(standardized_residual(cond_mean(1.5, m, 0.5), 1.5, m, 0.5, 0.3), 0.0);
  const auto zero = make_model("0", "0");
  EXPECT_EQ(standardized_residual(1.0, 1.0, zero, 0.5, cond_var_nojump(1.0, zero, 0.5)), 0.0);
  EXPECT_EQ(standardized_residual(1.5, 1.0, zero, 0.5, 0.0), 0.5);
}

TEST(StandardizedResidual, UnitMomentsOnSimulatedData) {
  const auto m = make_model("-0.25*x^3", "0.57*x");
  Rng rng(8);
  const double dt = 0.005;
  const int n = 100000;
  std::vector<double> y(n);
  for (int i = 0; i < n; ++i) {
    const double x = 0.3 + 1.5 * i / n;
    y[i] = standardized_residual(milstein_step(x, m, dt, rng), x, m, dt, cond_var_nojump(x, m, dt));
  }
  double mean = 0;
  for (double v : y) mean += v;
  mean /= n;
  EXPECT_NEAR(mean, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(sample_variance(y), 1.0, 0.02);
}

TEST(StandardizedResidual, PerBucketWithJumps) {
  const auto m = make_model("1-x", "0.31*x", {1.2, 0.8, JumpLaw::uniform(0.1)});
  Rng rng(9);
  const double dt = 0.5;
  for (double x : {0.5, 1.0, 2.0}) {
    const double var = cond_var_jump_mc(x, m, dt, 4000, rng).variance;
    std::vector<double> y(50000);
    for (auto& v : y) v = standardized_residual(milstein_step(x, m, dt, rng), x, m, dt, var);
    double mean = 0;
    for (double v : y) mean += v;
    mean /= y.size();
    EXPECT_NEAR(mean, 0.0, 4.0 / std::sqrt(y.size()));
    EXPECT_NEAR(sample_variance(y), 1.0, 0.04);
  }
}
