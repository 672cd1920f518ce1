#pragma once

// Truncated Fourier inversion of the one-step CF on the grid u_m = mh + ia,
//   p(x) = (h / 2pi) sum_{m=-M}^{M} Re(exp(-ix u_m) phi(u_m)),
// clamped below at a positive floor, and the path log-likelihood built on it.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "jumpsde/charfun.hpp"
#include "jumpsde/model.hpp"
#include "jumpsde/parallel.hpp"
#include "jumpsde/rng.hpp"

namespace jumpsde {

struct FourierConfig {
  int M = 200;
  double h = 0.05;
  double a = 0.0;
  double floor = 1e-12;

  static FourierConfig training() { return {}; }
  static FourierConfig analysis() { return {2000, 0.05, 0.0, 1e-12}; }

  void validate() const {
    if (M <= 0) throw ValidationError("fourier.M must be positive");
    if (!(h > 0.0)) throw ValidationError("fourier.h must be positive");
    if (!std::isfinite(a)) throw ValidationError("fourier.a must be finite");
    if (!(floor > 0.0)) throw ValidationError("fourier.floor must be positive");
  }

  cplx point(int m) const { return {m * h, a}; }
};

inline constexpr double kImagTolerance = 1e-6;

// Raw (unclamped) inversion sum; returns the complex total so the caller can
// inspect the imaginary residue.
template <class Cf>
cplx fourier_sum(double x, Cf&& cf, const FourierConfig& cfg) {
  cplx total = 0.0;
  for (int m = -cfg.M; m <= cfg.M; ++m) {
    const cplx u = cfg.point(m);
    total += std::exp(-kI * x * u) * cf(u);
  }
  return total * (cfg.h / (2.0 * std::numbers::pi));
}

// Density at x. `clamped` (optional) reports whether the floor was applied.
template <class Cf>
double fourier_density(double x, Cf&& cf, const FourierConfig& cfg, bool* clamped = nullptr) {
  cfg.validate();
  const cplx s = fourier_sum(x, cf, cfg);
  if (cfg.a == 0.0 && std::abs(s.imag()) > kImagTolerance)
    throw NumericalError("imaginary residue " + std::to_string(s.imag()) + " in Fourier inversion; CF is not Hermitian");
  const bool low = !(s.real() >= cfg.floor);
  if (clamped) *clamped = low;
  return low ? cfg.floor : s.real();
}

// Samples phi on the grid once, then inverts at many points.
class FourierInverter {
 public:
  template <class Cf>
  FourierInverter(Cf&& cf, const FourierConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    u_.resize(2 * cfg.M + 1);
    phi_.resize(u_.size());
    for (int m = -cfg.M; m <= cfg.M; ++m) {
      u_[m + cfg.M] = cfg.point(m);
      phi_[m + cfg.M] = cf(u_[m + cfg.M]);
    }
  }

  double operator()(double x, bool* clamped = nullptr) const {
    cplx total = 0.0;
    for (std::size_t i = 0; i < u_.size(); ++i) total += std::exp(-kI * x * u_[i]) * phi_[i];
    total *= cfg_.h / (2.0 * std::numbers::pi);
    if (cfg_.a == 0.0 && std::abs(total.imag()) > kImagTolerance)
      throw NumericalError("imaginary residue in Fourier inversion; CF is not Hermitian");
    const bool low = !(total.real() >= cfg_.floor);
    if (clamped) *clamped = low;
    return low ? cfg_.floor : total.real();
  }

  const std::vector<cplx>& points() const { return u_; }
  const std::vector<cplx>& values() const { return phi_; }

 private:
  FourierConfig cfg_;
  std::vector<cplx> u_;
  std::vector<cplx> phi_;
};

// Density of a OneStepLaw at y with partial derivatives with respect to the
// law parameters. With a = 0 the law's CF is Hermitian term by term, so the
// sum over m = -M..M is folded to Re(m = 0) + 2 sum_{m>0} Re(...).
struct LawDensity {
  double value = 0.0;  // clamped density
  double raw = 0.0;    // before clamping
  bool clamped = false;
  double d_center = 0.0;
  double d_gg = 0.0;
  std::vector<double> d_s2;  // per component
  std::vector<double> d_s1;
};

inline void law_density(const OneStepLaw& law, double y, const FourierConfig& cfg, bool want_grad, LawDensity& out) {
  const std::size_t K = law.components.size();
  out.d_center = 0.0;
  out.d_gg = 0.0;
  if (want_grad) {
    out.d_s2.assign(K, 0.0);
    out.d_s1.assign(K, 0.0);
  }
  const bool paired = cfg.a == 0.0;
  const int m_lo = paired ? 0 : -cfg.M;
  double raw = 0.0;
  const double gg = law.gg;
  const double dt = law.dt;
  const double base = law.center - 0.5 * gg * dt;
  for (int m = m_lo; m <= cfg.M; ++m) {
    const cplx u = cfg.point(m);
    const double wm = (paired && m != 0) ? 2.0 : 1.0;
    const cplx iu = kI * u;
    const cplx w = 1.0 - iu * gg * dt;
    if (!(w.real() > 0.0)) throw NumericalError("CF square root leaves the principal branch");
    // e^{-iyu} * prefactor
    const cplx pre = std::exp(iu * (base - y)) / (std::sqrt(w) * law.total);
    const cplx u2 = u * u;
    cplx sum = 0.0;
    cplx sum_gg = 0.0;  // sum_k T_k * d/dgg of the component exponent
    for (std::size_t k = 0; k < K; ++k) {
      const auto& c = law.components[k];
      const cplx tail = iu * gg * c.s1 * c.s1 / w;
      const cplx t = c.weight * std::exp(iu * c.shift - 0.5 * u2 * (c.s2 + tail));
      sum += t;
      if (want_grad) {
        const cplx pt = pre * t;
        out.d_s2[k] += wm * (pt * (-0.5 * u2)).real();
        out.d_s1[k] += wm * (pt * (-iu * u2 * gg * c.s1 / w)).real();
        sum_gg += t * (-0.5 * iu * u2 * c.s1 * c.s1 / (w * w));
      }
    }
    const cplx term = pre * sum;
    raw += wm * term.real();
    if (want_grad) {
      out.d_center += wm * (iu * term).real();
      out.d_gg += wm * (term * (-0.5 * iu * dt + 0.5 * iu * dt / w) + pre * sum_gg).real();
    }
  }
  const double scale = cfg.h / (2.0 * std::numbers::pi);
  raw *= scale;
  out.raw = raw;
  out.clamped = !(raw >= cfg.floor);
  out.value = out.clamped ? cfg.floor : raw;
  if (want_grad) {
    if (out.clamped) {
      out.d_center = out.d_gg = 0.0;
      std::fill(out.d_s2.begin(), out.d_s2.end(), 0.0);
      std::fill(out.d_s1.begin(), out.d_s1.end(), 0.0);
    } else {
      out.d_center *= scale;
      out.d_gg *= scale;
      for (auto& v : out.d_s2) v *= scale;
      for (auto& v : out.d_s1) v *= scale;
    }
  }
}

inline double law_density(const OneStepLaw& law, double y, const FourierConfig& cfg, bool* clamped = nullptr) {
  LawDensity d;
  law_density(law, y, cfg, false, d);
  if (clamped) *clamped = d.clamped;
  return d.value;
}

struct LoglikResult {
  double loglik = 0.0;
  std::size_t transitions = 0;
  std::size_t clamped = 0;
};

// Sum over transitions of log p(x_{i+1} | x_i) with step t_{i+1} - t_i. With
// jumps, transition i draws n_mc configurations from its own stream derived
// from one draw of `rng`.
inline LoglikResult loglik_path(std::span<const double> path, std::span<const double> grid, const SdeModel& model,
                                const FourierConfig& cfg, int n_mc, Rng& rng) {
  if (path.size() < 2) throw ValidationError("path needs at least two points");
  if (grid.size() != path.size()) throw ValidationError("path and grid lengths differ");
  cfg.validate();
  const std::uint64_t root = rng();
  const std::size_t n = path.size() - 1;
  std::vector<double> logs(n);
  std::vector<char> low(n);
  parallel_for(n, [&](std::size_t i) {
    Rng local = make_stream(root, {stream::kConfigs, i});
    const double dt = grid[i + 1] - grid[i];
    const OneStepLaw law = sample_step_law(path[i], model, dt, n_mc, local);
    bool c = false;
    logs[i] = std::log(law_density(law, path[i + 1], cfg, &c));
    low[i] = c;
  });
  LoglikResult r;
  r.transitions = n;
  for (std::size_t i = 0; i < n; ++i) {
    r.loglik += logs[i];
    r.clamped += low[i] ? 1 : 0;
  }
  return r;
}

// Constant-step convenience overload.
inline LoglikResult loglik_path(std::span<const double> path, double dt, const SdeModel& model,
                                const FourierConfig& cfg, int n_mc, Rng& rng) {
  std::vector<double> grid(path.size());
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = dt * static_cast<double>(i);
  return loglik_path(path, grid, model, cfg, n_mc, rng);
}

struct DensityFit {
  double integral = 0.0;  // trapezoid over the sample range padded by its width on each side
  double tv = 0.0;        // total variation against the sample histogram
  double lo = 0.0;
  double hi = 0.0;
  int bins = 0;
};

// Compares a density with a histogram of samples on `bins` equal bins
// spanning the sample range. Bin masses of the density use Simpson's rule.
template <class Density>
DensityFit density_fit(Density&& p, std::span<const double> samples, int bins) {
  if (samples.size() < 2) throw ValidationError("density fit needs at least two samples");
  if (bins < 1) throw ValidationError("bin count must be positive");
  DensityFit r;
  r.bins = bins;
  r.lo = *std::min_element(samples.begin(), samples.end());
  r.hi = *std::max_element(samples.begin(), samples.end());
  if (!(r.hi > r.lo)) throw ValidationError("samples are constant");
  const double w = r.hi - r.lo;
  const int n_int = 6000;
  const double a = r.lo - w, step = 3.0 * w / n_int;
  for (int k = 0; k <= n_int; ++k) r.integral += (k == 0 || k == n_int ? 0.5 : 1.0) * p(a + k * step);
  r.integral *= step;

  std::vector<double> counts(static_cast<std::size_t>(bins), 0.0);
  const double bw = w / bins;
  for (double v : samples) {
    auto b = static_cast<int>((v - r.lo) / bw);
    counts[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))] += 1.0;
  }
  const int sub = 8;
  for (int b = 0; b < bins; ++b) {
    const double x0 = r.lo + b * bw, hs = bw / sub;
    double mass = p(x0) + p(x0 + bw);
    for (int k = 1; k < sub; ++k) mass += (k % 2 ? 4.0 : 2.0) * p(x0 + k * hs);
    mass *= hs / 3.0;
    r.tv += std::fabs(mass - counts[static_cast<std::size_t>(b)] / static_cast<double>(samples.size()));
  }
  r.tv *= 0.5;
  return r;
}

}  // namespace jumpsde
