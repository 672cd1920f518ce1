#pragma once

// Conditional first and second moments of one Tamed-Milstein step, and
// standardized residuals.

#include <cmath>
#include <span>
#include <vector>

#include "jumpsde/jumps.hpp"
#include "jumpsde/model.hpp"
#include "jumpsde/simulate.hpp"

namespace jumpsde {

struct MomentEstimate {
  double mean = 0.0;
  double variance = 0.0;
  int mc_samples = 0;      // 0 for the closed form
  double mc_stderr = 0.0;  // standard error of the Monte Carlo part
};

// E(X_{t+dt} | X_t = x) = x + f^dt(x) dt
inline double cond_mean(double x, const SdeModel& model, double dt) {
  return x + tamed_drift(model.drift(x), dt) * dt;
}

// Jump-free conditional variance g^2 dt + (g g' dt)^2 / 2.
template <class T>
T cond_var_nojump_terms(const T& gx, const T& gpx, double dt) {
  const T ggdt = gx * gpx * dt;
  return gx * gx * dt + 0.5 * ggdt * ggdt;
}

inline double cond_var_nojump(double x, const SdeModel& model, double dt) {
  return cond_var_nojump_terms(model.diffusion(x), model.diffusion.prime(x), dt);
}

// Jump cross terms for one configuration:
//   2 g sum_i dg_i (dt - tau_i) + sum_{i,j} dg_i dg_j (dt - max(tau_i, tau_j))
// with dg_i = g(x + gamma z_i) - g(x). `g_at(y)` evaluates the diffusion.
template <class T, class GAt>
T jump_cross_terms(const T& gx, const JumpConfig& cfg, double dt, double gamma, double x, GAt&& g_at) {
  T first = T(0.0);
  T second = T(0.0);
  T prefix = T(0.0);  // sum of dg_i over earlier jumps
  for (std::size_t j = 0; j < cfg.count(); ++j) {
    const T dg = g_at(x + gamma * cfg.sizes[j]) - gx;
    const double rem = dt - cfg.times[j];
    first = first + dg * rem;
    second = second + dg * rem * (dg + 2.0 * prefix);
    prefix = prefix + dg;
  }
  return 2.0 * gx * first + second;
}

// Conditional variance with jumps: closed-form part plus the Monte Carlo
// average of the cross terms over the given (frozen) jump configurations.
template <class T, class GAt>
T cond_var_jump_terms(const T& gx, const T& gpx, double x, double dt, const JumpSpec& spec,
                      std::span<const JumpConfig> configs, GAt&& g_at) {
  T cross = T(0.0);
  for (const auto& cfg : configs)
    if (cfg.count() > 0) cross = cross + jump_cross_terms(gx, cfg, dt, spec.gamma, x, g_at);
  const double n = configs.empty() ? 1.0 : static_cast<double>(configs.size());
  return cond_var_nojump_terms(gx, gpx, dt) + spec.gamma * spec.gamma * spec.mu2() * spec.lambda * dt + cross / n;
}

inline MomentEstimate cond_var_jump_mc(double x, const SdeModel& model, double dt,
                                       std::span<const JumpConfig> configs) {
  MomentEstimate est;
  est.mean = cond_mean(x, model, dt);
  const double gx = model.diffusion(x);
  const double gpx = model.diffusion.prime(x);
  const auto& spec = model.jumps;
  auto g_at = [&](double y) { return model.diffusion(y); };
  double sum = 0.0, sum_sq = 0.0;
  for (const auto& cfg : configs) {
    const double c = cfg.count() > 0 ? jump_cross_terms(gx, cfg, dt, spec.gamma, x, g_at) : 0.0;
    sum += c;
    sum_sq += c * c;
  }
  const double n = static_cast<double>(configs.size());
  const double mean_cross = n > 0 ? sum / n : 0.0;
  est.variance = cond_var_nojump_terms(gx, gpx, dt) + spec.gamma * spec.gamma * spec.mu2() * spec.lambda * dt + mean_cross;
  est.mc_samples = static_cast<int>(configs.size());
  if (n > 1) est.mc_stderr = std::sqrt(std::max(sum_sq / n - mean_cross * mean_cross, 0.0) / (n - 1.0));
  return est;
}

inline MomentEstimate cond_var_jump_mc(double x, const SdeModel& model, double dt, int n_mc, Rng& rng) {
  const auto configs = sample_jump_configs(rng, dt, model.jumps, n_mc);
  return cond_var_jump_mc(x, model, dt, configs);
}

// Closed form when jumps are off, Monte Carlo otherwise.
inline MomentEstimate cond_moments(double x, const SdeModel& model, double dt, int n_mc, Rng& rng) {
  if (!model.jumps.active()) {
    return {cond_mean(x, model, dt), cond_var_nojump(x, model, dt), 0, 0.0};
  }
  return cond_var_jump_mc(x, model, dt, n_mc, rng);
}

// (x_next - E) / sqrt(variance), or the raw residual when the variance is
// zero (g(x) = 0 without jumps).
template <class T>
T standardize(const T& residual, const T& variance) {
  using std::sqrt;
  if (variance > 0.0) return residual / sqrt(variance);
  return residual;
}

inline double standardized_residual(double x_next, double x, const SdeModel& model, double dt, double variance) {
  return standardize(x_next - cond_mean(x, model, dt), variance);
}

}  // namespace jumpsde
