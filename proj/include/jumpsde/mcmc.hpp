#pragma once

// Estimation of the jump intensity lambda and scale gamma from N independent
// one-step observations X_{t+dt} given a known X_t = x, with f, g and the
// jump-size law known.
//
// Two Metropolis-Hastings samplers with mean-preserving lognormal proposals:
// one driven by the Fourier-inverted likelihood, one by the discriminator
// exp(theta exp(h)) built on the second-moment mismatch h. All candidate
// evaluations within a chain share one JumpPool, so likelihood and h
// differences are not swamped by Monte Carlo noise.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "jumpsde/charfun.hpp"
#include "jumpsde/density.hpp"
#include "jumpsde/jumps.hpp"
#include "jumpsde/model.hpp"
#include "jumpsde/moments.hpp"
#include "jumpsde/rng.hpp"
#include "jumpsde/simulate.hpp"

namespace jumpsde {

// Lognormal density with log-location log(center) - sigma^2/2 and log-scale
// sigma, so that its mean is `center`.
inline double lognormal_log_density(double x, double center, double sigma) {
  if (!(x > 0.0) || !(center > 0.0) || !(sigma > 0.0))
    throw ValidationError("lognormal density needs positive x, center and sigma");
  const double mu = std::log(center) - 0.5 * sigma * sigma;
  const double z = (std::log(x) - mu) / sigma;
  return -0.5 * z * z - std::log(x * sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
}

inline double lognormal_density(double x, double center, double sigma) {
  return std::exp(lognormal_log_density(x, center, sigma));
}

inline double propose_lognormal(double center, double sigma, Rng& rng) {
  if (!(center > 0.0) || !(sigma > 0.0)) throw ValidationError("lognormal proposal needs positive center and sigma");
  return std::exp(std::log(center) - 0.5 * sigma * sigma + sigma * standard_normal(rng));
}

// Same model with the candidate jump parameters.
inline SdeModel with_jumps(const SdeModel& model, double lambda, double gamma) {
  SdeModel m = model;
  m.jumps.lambda = lambda;
  m.jumps.gamma = gamma;
  return m;
}

struct LoglikValue {
  double loglik = 0.0;
  std::size_t clamped = 0;
};

// sum_i log p(obs_i) with the step law at (lambda, gamma) over the pool's
// configurations.
inline LoglikValue approx_loglik(double lambda, double gamma, std::span<const double> obs, double x, double dt,
                                 const SdeModel& model, const FourierConfig& cfg, const JumpPool& pool) {
  LoglikValue out;
  if (obs.empty()) return out;
  const SdeModel m = with_jumps(model, lambda, gamma);
  std::vector<JumpConfig> configs;
  if (m.jumps.active()) configs = pool.materialize_all(lambda, dt, m.jumps.law);
  const OneStepLaw law = one_step_law(x, m, dt, configs);
  const FourierInverter inv([&](cplx u) { return law.cf(u); }, cfg);
  for (double y : obs) {
    bool low = false;
    out.loglik += std::log(inv(y, &low));
    out.clamped += low ? 1 : 0;
  }
  return out;
}

inline LoglikValue approx_loglik(double lambda, double gamma, std::span<const double> obs, double x, double dt,
                                 const SdeModel& model, const FourierConfig& cfg, int n_mc, Rng& rng) {
  const JumpPool pool(rng(), n_mc);
  return approx_loglik(lambda, gamma, obs, x, dt, model, cfg, pool);
}

// h^N(lambda, gamma): mean over observations of (squared drift residual -
// conditional variance at the candidate)^2.
inline double h_stat(double lambda, double gamma, std::span<const double> obs, double x, double dt,
                     const SdeModel& model, const JumpPool& pool) {
  if (obs.empty()) throw ValidationError("h statistic needs observations");
  const SdeModel m = with_jumps(model, lambda, gamma);
  double var = 0.0;
  if (m.jumps.active()) {
    const auto configs = pool.materialize_all(lambda, dt, m.jumps.law);
    var = cond_var_jump_mc(x, m, dt, configs).variance;
  } else {
    var = cond_var_nojump(x, m, dt);
  }
  const double mean = cond_mean(x, m, dt);
  double s = 0.0;
  for (double y : obs) {
    const double r = y - mean;
    const double e = r * r - var;
    s += e * e;
  }
  return s / static_cast<double>(obs.size());
}

inline double h_stat(double lambda, double gamma, std::span<const double> obs, double x, double dt,
                     const SdeModel& model, int n_mc, Rng& rng) {
  const JumpPool pool(rng(), n_mc);
  return h_stat(lambda, gamma, obs, x, dt, model, pool);
}

struct NelderMeadResult {
  std::vector<double> x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Nelder-Mead simplex with reflection 1, expansion 2, contraction 0.5 and
// shrink 0.5. Stops after max_iter iterations or when the largest vertex
// distance from the best vertex drops below tol.
inline NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& fn, std::vector<double> x0,
                                    double step, int max_iter = 500, double tol = 1e-6) {
  const std::size_t n = x0.size();
  if (n == 0) throw ValidationError("Nelder-Mead needs at least one dimension");
  std::vector<std::vector<double>> pts(n + 1, x0);
  for (std::size_t i = 0; i < n; ++i) pts[i + 1][i] += step;
  std::vector<double> val(n + 1);
  for (std::size_t i = 0; i <= n; ++i) val[i] = fn(pts[i]);
  auto eval = [&](const std::vector<double>& p) { return fn(p); };

  NelderMeadResult res;
  std::vector<std::size_t> order(n + 1);
  for (int it = 0; it < max_iter; ++it) {
    for (std::size_t i = 0; i <= n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return val[a] < val[b]; });
    {
      std::vector<std::vector<double>> p2;
      std::vector<double> v2;
      for (std::size_t i : order) {
        p2.push_back(pts[i]);
        v2.push_back(val[i]);
      }
      pts.swap(p2);
      val.swap(v2);
    }
    double diam = 0.0;
    for (std::size_t i = 1; i <= n; ++i) {
      double d = 0.0;
      for (std::size_t k = 0; k < n; ++k) d += (pts[i][k] - pts[0][k]) * (pts[i][k] - pts[0][k]);
      diam = std::max(diam, std::sqrt(d));
    }
    res.iterations = it;
    if (diam < tol) {
      res.converged = true;
      break;
    }
    std::vector<double> c(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k) c[k] += pts[i][k] / static_cast<double>(n);
    auto along = [&](double t) {
      std::vector<double> p(n);
      for (std::size_t k = 0; k < n; ++k) p[k] = c[k] + t * (pts[n][k] - c[k]);
      return p;
    };
    const auto xr = along(-1.0);
    const double fr = eval(xr);
    if (fr < val[0]) {
      const auto xe = along(-2.0);
      const double fe = eval(xe);
      if (fe < fr) {
        pts[n] = xe;
        val[n] = fe;
      } else {
        pts[n] = xr;
        val[n] = fr;
      }
      continue;
    }
    if (fr < val[n - 1]) {
      pts[n] = xr;
      val[n] = fr;
      continue;
    }
    // contraction: outside if the reflection beat the worst point
    const bool outside = fr < val[n];
    const auto xc = along(outside ? -0.5 : 0.5);
    const double fc = eval(xc);
    if (fc < (outside ? fr : val[n])) {
      pts[n] = xc;
      val[n] = fc;
      continue;
    }
    for (std::size_t i = 1; i <= n; ++i) {
      for (std::size_t k = 0; k < n; ++k) pts[i][k] = pts[0][k] + 0.5 * (pts[i][k] - pts[0][k]);
      val[i] = eval(pts[i]);
    }
  }
  if (!res.converged) res.iterations = max_iter;
  const auto best = std::min_element(val.begin(), val.end()) - val.begin();
  res.x = pts[best];
  res.value = val[best];
  return res;
}

// argmin h^N over (lambda, gamma), searched in (log lambda, log gamma).
inline std::array<double, 2> minimize_h(std::span<const double> obs, double x, double dt, const SdeModel& model,
                                        const JumpPool& pool, std::array<double, 2> init, double* value = nullptr) {
  if (!(init[0] > 0.0) || !(init[1] > 0.0)) throw ValidationError("Nelder-Mead start must be positive");
  const auto r = nelder_mead(
      [&](std::span<const double> p) { return h_stat(std::exp(p[0]), std::exp(p[1]), obs, x, dt, model, pool); },
      {std::log(init[0]), std::log(init[1])}, 0.5);
  if (value) *value = r.value;
  return {std::exp(r.x[0]), std::exp(r.x[1])};
}

// Starting point for the chains: Nelder-Mead minimiser of h from (1, 1) on a
// pool of its own, independent of the chain's pool.
inline std::array<double, 2> nelder_mead_start(std::span<const double> obs, double x, double dt, const SdeModel& model,
                                               std::uint64_t seed, int pool_size = 4000, double* value = nullptr) {
  const JumpPool pool(derive_seed(seed, {stream::kPool, 1}), pool_size);
  return minimize_h(obs, x, dt, model, pool, {1.0, 1.0}, value);
}

struct MhConfig {
  int m = 1000;
  double sigma1 = 0.05;
  double sigma2 = 0.01;
  double theta = 5.0;
  std::array<double, 2> init{1.0, 1.0};
  int burn_in = -1;  // -1: m / 5

  int burn() const { return burn_in >= 0 ? burn_in : m / 5; }

  void validate() const {
    if (m <= 0) throw ValidationError("m must be positive");
    if (!(sigma1 > 0.0) || !(sigma2 > 0.0)) throw ValidationError("sigma1 and sigma2 must be positive");
    if (!(theta > 0.0)) throw ValidationError("theta must be positive");
    if (!(init[0] > 0.0) || !(init[1] > 0.0)) throw ValidationError("initial lambda and gamma must be positive");
    if (burn() >= m) throw ValidationError("burn-in must be smaller than m");
  }
};

// R's default (type 7) sample quantile.
inline double quantile7(std::vector<double> v, double p) {
  if (v.empty()) throw ValidationError("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct ChainSummary {
  double lambda_mean = 0.0;
  double gamma_mean = 0.0;
  std::array<double, 2> lambda_ci{};
  std::array<double, 2> gamma_ci{};
  double acceptance = 0.0;
  int burn_in = 0;
};

struct MhChain {
  std::vector<double> lambda;
  std::vector<double> gamma;
  std::vector<char> accepted;
  std::vector<double> accept_prob;
  std::vector<double> score;  // loglik (likelihood sampler) or h (discriminator sampler) of the current state
  std::size_t clamped = 0;

  ChainSummary summarize(int burn_in) const {
    ChainSummary s;
    s.burn_in = burn_in;
    const std::vector<double> l(lambda.begin() + burn_in, lambda.end());
    const std::vector<double> g(gamma.begin() + burn_in, gamma.end());
    for (double v : l) s.lambda_mean += v / static_cast<double>(l.size());
    for (double v : g) s.gamma_mean += v / static_cast<double>(g.size());
    s.lambda_ci = {quantile7(l, 0.025), quantile7(l, 0.975)};
    s.gamma_ci = {quantile7(g, 0.025), quantile7(g, 0.975)};
    double acc = 0.0;
    for (char a : accepted) acc += a ? 1.0 : 0.0;
    s.acceptance = acc / static_cast<double>(accepted.size());
    return s;
  }
};

namespace detail {

// Generic MH loop; log_ratio(candidate score, current score) gives the
// log acceptance ratio before the Hastings term.
template <class Score, class LogRatio>
MhChain run_chain(const MhConfig& cfg, bool hastings, std::uint64_t seed, Score&& score, LogRatio&& log_ratio) {
  cfg.validate();
  Rng rng = make_stream(seed, {stream::kProposal});
  MhChain chain;
  chain.lambda.reserve(cfg.m);
  chain.gamma.reserve(cfg.m);
  double l0 = cfg.init[0], g0 = cfg.init[1];
  double s0 = score(l0, g0, chain.clamped);
  for (int i = 0; i < cfg.m; ++i) {
    const double l1 = propose_lognormal(l0, cfg.sigma1, rng);
    const double g1 = propose_lognormal(g0, cfg.sigma2, rng);
    const double s1 = score(l1, g1, chain.clamped);
    double lr = log_ratio(s1, s0);
    if (hastings) {
      lr += lognormal_log_density(l0, l1, cfg.sigma1) + lognormal_log_density(g0, g1, cfg.sigma2) -
            lognormal_log_density(l1, l0, cfg.sigma1) - lognormal_log_density(g1, g0, cfg.sigma2);
    }
    const double p = std::isnan(lr) ? 0.0 : (lr >= 0.0 ? 1.0 : std::exp(lr));
    const bool take = uniform01(rng) < p;
    if (take) {
      l0 = l1;
      g0 = g1;
      s0 = s1;
    }
    chain.lambda.push_back(l0);
    chain.gamma.push_back(g0);
    chain.accepted.push_back(take);
    chain.accept_prob.push_back(p);
    chain.score.push_back(s0);
  }
  return chain;
}

}  // namespace detail

// Likelihood sampler: accept with min{1, L(new)/L(old) * q(old|new)/q(new|old)}.
inline MhChain mh_likelihood(std::span<const double> obs, double x, double dt, const SdeModel& model,
                             const MhConfig& cfg, const FourierConfig& fourier, int n_mc, std::uint64_t seed) {
  if (obs.empty()) throw ValidationError("MH needs observations");
  const JumpPool pool(derive_seed(seed, {stream::kPool}), n_mc);
  return detail::run_chain(
      cfg, true, seed,
      [&](double l, double g, std::size_t& clamped) {
        const auto v = approx_loglik(l, g, obs, x, dt, model, fourier, pool);
        clamped += v.clamped;
        return v.loglik;
      },
      [](double s1, double s0) { return s1 - s0; });
}

// log of d_theta(new) / d_theta(old) in the orientation that makes a smaller
// h more probable: theta (exp(h_old) - exp(h_new)).
inline double discriminator_log_ratio(double h_new, double h_old, double theta) {
  if (h_new <= h_old) return theta * std::exp(h_old) * -std::expm1(h_new - h_old);
  return -theta * std::exp(h_old) * std::expm1(h_new - h_old);
}

// Discriminator sampler: accept with min{1, exp(theta (exp(h_old) - exp(h_new)))}.
inline MhChain mh_discriminator(std::span<const double> obs, double x, double dt, const SdeModel& model,
                                const MhConfig& cfg, int n_mc, std::uint64_t seed) {
  if (obs.empty()) throw ValidationError("MH needs observations");
  const JumpPool pool(derive_seed(seed, {stream::kPool}), n_mc);
  return detail::run_chain(
      cfg, false, seed,
      [&](double l, double g, std::size_t&) { return h_stat(l, g, obs, x, dt, model, pool); },
      [&](double h1, double h0) { return discriminator_log_ratio(h1, h0, cfg.theta); });
}

// N independent one-step draws X_{t+dt} | X_t = x from the scheme.
inline std::vector<double> simulate_observations(double x, const SdeModel& model, double dt, int n, std::uint64_t seed) {
  if (n < 0) throw ValidationError("observation count must be nonnegative");
  Rng rng = make_stream(seed, {stream::kData});
  std::vector<double> out(static_cast<std::size_t>(n));
  for (auto& y : out) y = milstein_step(x, model, dt, rng);
  return out;
}

// f = sin x, g = 0.35 x + 0.2, lambda = 1.7, gamma = 2.4, U(-0.5, 0.5) sizes,
// 250 observations from x = 1.5 with dt = 0.5.
struct EstimationSetup {
  SdeModel model;
  double x = 1.5;
  double dt = 0.5;
  int n_obs = 250;

  static EstimationSetup standard() {
    EstimationSetup s;
    s.model.drift = Coefficient::parse("sin(x)");
    s.model.diffusion = Coefficient::parse("0.35*x + 0.2");
    s.model.x0 = s.x;
    s.model.jumps = JumpSpec{1.7, 2.4, JumpLaw::uniform(0.5)};
    return s;
  }
};

}  // namespace jumpsde
