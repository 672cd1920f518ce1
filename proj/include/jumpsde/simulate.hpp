#pragma once

// Tamed-Milstein stepping for dX = f dt + g dW + gamma z dN and generation of
// multi-path training corpora.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "jumpsde/jumps.hpp"
#include "jumpsde/model.hpp"
#include "jumpsde/parallel.hpp"
#include "jumpsde/rng.hpp"

namespace jumpsde {

inline constexpr double kDivergenceBound = 1e12;

// f / (1 + dt f^2); bounded by 1 / (2 sqrt(dt)) in absolute value.
template <class T>
T tamed_drift(const T& fx, double dt) {
  return fx / (1.0 + dt * fx * fx);
}

// Drift compensator  int gamma z v(dz) dt. Every supported law is symmetric
// about 0, so this is identically zero.
inline double jump_compensator(const JumpSpec& spec) {
  (void)spec;
  return 0.0;
}

// One step given the jump configuration and the Brownian increments over the
// partition 0 = tau_0 < tau_1 <= ... <= tau_n < tau_{n+1} = dt; pieces[j]
// is W(tau_{j+1}) - W(tau_j), so pieces.size() == cfg.count() + 1.
inline double milstein_update(double x, const SdeModel& model, double dt, const JumpConfig& cfg,
                              std::span<const double> pieces) {
  const double fx = model.drift(x);
  const double gx = model.diffusion(x);
  const double gpx = model.diffusion.prime(x);
  double dw = 0.0;
  for (double p : pieces) dw += p;
  double next = x + (tamed_drift(fx, dt) - jump_compensator(model.jumps)) * dt + gx * dw +
                0.5 * gx * gpx * (dw * dw - dt);
  const std::size_t n = cfg.count();
  if (n > 0) {
    const double gamma = model.jumps.gamma;
    // W(dt) - W(tau_i) accumulated from the right.
    double tail = pieces[n];
    for (std::size_t i = n; i-- > 0;) {
      const double z = cfg.sizes[i];
      next += gamma * z + (model.diffusion(x + gamma * z) - gx) * tail;
      tail += pieces[i];
    }
  }
  return next;
}

// Samples the jump configuration and Brownian increments for one step.
inline double milstein_step(double x, const SdeModel& model, double dt, Rng& rng) {
  JumpConfig cfg;
  if (model.jumps.active()) cfg = sample_jump_config(rng, dt, model.jumps);
  const std::size_t n = cfg.count();
  double pieces_small[8];
  std::vector<double> pieces_large;
  std::span<double> pieces;
  if (n + 1 <= 8) {
    pieces = std::span<double>(pieces_small, n + 1);
  } else {
    pieces_large.resize(n + 1);
    pieces = pieces_large;
  }
  double prev = 0.0;
  for (std::size_t j = 0; j <= n; ++j) {
    const double next_t = j < n ? cfg.times[j] : dt;
    pieces[j] = std::sqrt(std::max(next_t - prev, 0.0)) * standard_normal(rng);
    prev = next_t;
  }
  return milstein_update(x, model, dt, cfg, pieces);
}

// K paths on a shared grid, partitioned into contiguous blocks of equal size.
struct PathSet {
  std::vector<double> grid;
  std::vector<std::vector<double>> paths;
  std::size_t block_size = 0;

  std::size_t num_paths() const { return paths.size(); }
  std::size_t num_points() const { return grid.size(); }
  std::size_t num_blocks() const { return block_size == 0 ? 0 : grid.size() / block_size; }
  // Grid index range [first, last) of block k.
  std::pair<std::size_t, std::size_t> block(std::size_t k) const { return {k * block_size, (k + 1) * block_size}; }
  double step(std::size_t i) const { return grid[i + 1] - grid[i]; }

  void validate() const {
    if (grid.size() < 2) throw ValidationError("path set needs at least two grid points");
    for (std::size_t i = 1; i < grid.size(); ++i)
      if (!(grid[i] > grid[i - 1])) throw ValidationError("time grid must be strictly increasing");
    if (block_size < 2) throw ValidationError("block size must be at least 2");
    if (grid.size() % block_size != 0)
      throw ValidationError("block size " + std::to_string(block_size) + " does not divide the number of grid points " +
                            std::to_string(grid.size()));
    for (const auto& p : paths)
      if (p.size() != grid.size()) throw ValidationError("every path must have one state per grid point");
  }
};

class DivergenceError : public NumericalError {
 public:
  DivergenceError(std::uint64_t seed, std::size_t path, std::size_t step)
      : NumericalError("path " + std::to_string(path) + " (seed " + std::to_string(seed) + ") diverged at step " +
                       std::to_string(step)),
        seed_(seed),
        path_(path),
        step_(step) {}
  std::uint64_t seed() const { return seed_; }
  std::size_t path() const { return path_; }
  std::size_t step() const { return step_; }

 private:
  std::uint64_t seed_;
  std::size_t path_;
  std::size_t step_;
};

// Path k uses the stream derive_seed(seed, {stream::kPaths, k}). N is the
// number of grid points, so the step is T / (N - 1).
inline PathSet simulate_paths(const SdeModel& model, double T, std::size_t N, std::size_t K, std::uint64_t seed,
                              std::size_t block_size) {
  if (N < 2) throw ValidationError("N must be at least 2");
  if (K < 1) throw ValidationError("K must be at least 1");
  if (block_size < 2) throw ValidationError("block size must be at least 2");
  if (N % block_size != 0) throw ValidationError("block size must divide N");
  if (!(T > 0.0)) throw ValidationError("T must be positive");
  PathSet out;
  out.block_size = block_size;
  out.grid.resize(N);
  for (std::size_t i = 0; i < N; ++i) out.grid[i] = T * static_cast<double>(i) / static_cast<double>(N - 1);
  out.paths.assign(K, std::vector<double>(N));
  parallel_for(K, [&](std::size_t k) {
    Rng rng = make_stream(seed, {stream::kPaths, k});
    auto& path = out.paths[k];
    path[0] = model.x0;
    for (std::size_t i = 0; i + 1 < N; ++i) {
      const double next = milstein_step(path[i], model, out.grid[i + 1] - out.grid[i], rng);
      if (!std::isfinite(next) || std::fabs(next) > kDivergenceBound) throw DivergenceError(seed, k, i + 1);
      path[i + 1] = next;
    }
  });
  return out;
}

struct ConvergenceResult {
  double slope = 0.0;
  std::vector<std::size_t> levels;  // steps per level
  std::vector<double> rms_error;    // vs the reference level
};

// Empirical strong order for the jump-free scheme: RMS error at T of each
// level against a fine reference driven by the same Brownian path (coarse
// increments are sums of fine ones), then the least-squares slope of
// log2(rms) against log2(h). Levels and reference must be nested powers of two.
inline ConvergenceResult convergence_slope(const SdeModel& model, double T, const std::vector<std::size_t>& levels,
                                           std::size_t reference_steps, std::size_t K_mc, std::uint64_t seed) {
  if (model.jumps.active()) throw ValidationError("convergence test requires the jump-free model");
  if (levels.size() < 2) throw ValidationError("need at least two levels");
  for (std::size_t n : levels)
    if (n == 0 || reference_steps % n != 0 || n >= reference_steps)
      throw ValidationError("each level must divide the reference step count and be coarser");

  const std::size_t L = levels.size();
  std::vector<std::vector<double>> sq(K_mc, std::vector<double>(L, 0.0));
  parallel_for(K_mc, [&](std::size_t k) {
    Rng rng = make_stream(seed, {stream::kPaths, k});
    const double h_ref = T / static_cast<double>(reference_steps);
    const double sd = std::sqrt(h_ref);
    std::vector<double> dw(reference_steps);
    for (double& v : dw) v = sd * standard_normal(rng);

    auto run = [&](std::size_t steps) {
      const std::size_t agg = reference_steps / steps;
      const double h = T / static_cast<double>(steps);
      double x = model.x0;
      for (std::size_t s = 0; s < steps; ++s) {
        double w = 0.0;
        for (std::size_t j = 0; j < agg; ++j) w += dw[s * agg + j];
        const double fx = model.drift(x);
        const double gx = model.diffusion(x);
        const double gpx = model.diffusion.prime(x);
        x = x + tamed_drift(fx, h) * h + gx * w + 0.5 * gx * gpx * (w * w - h);
      }
      return x;
    };

    const double ref = run(reference_steps);
    for (std::size_t l = 0; l < L; ++l) {
      const double e = run(levels[l]) - ref;
      sq[k][l] = e * e;
    }
  });

  ConvergenceResult res;
  res.levels = levels;
  res.rms_error.assign(L, 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    double s = 0.0;
    for (std::size_t k = 0; k < K_mc; ++k) s += sq[k][l];
    res.rms_error[l] = std::sqrt(s / static_cast<double>(K_mc));
  }
  double mx = 0, my = 0;
  std::vector<double> lx(L), ly(L);
  for (std::size_t l = 0; l < L; ++l) {
    lx[l] = std::log2(T / static_cast<double>(levels[l]));
    ly[l] = std::log2(res.rms_error[l]);
    mx += lx[l];
    my += ly[l];
  }
  mx /= L;
  my /= L;
  double sxy = 0, sxx = 0;
  for (std::size_t l = 0; l < L; ++l) {
    sxy += (lx[l] - mx) * (ly[l] - my);
    sxx += (lx[l] - mx) * (lx[l] - mx);
  }
  res.slope = sxy / sxx;
  return res;
}

}  // namespace jumpsde
