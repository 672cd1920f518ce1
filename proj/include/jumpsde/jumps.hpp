#pragma once

// Symmetric jump-size laws, jump intensity/scale, and per-step jump
// configurations of the Poisson random measure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "jumpsde/rng.hpp"

namespace jumpsde {

enum class JumpLawKind { Uniform, Normal, Laplace };

// Symmetric about zero. `scale` is b for Uniform(-b,b) and Laplace(0,b), and
// the standard deviation for Normal(0, scale^2).
struct JumpLaw {
  JumpLawKind kind = JumpLawKind::Uniform;
  double scale = 0.0;

  static JumpLaw uniform(double b) { return {JumpLawKind::Uniform, b}; }
  static JumpLaw normal(double sigma) { return {JumpLawKind::Normal, sigma}; }
  static JumpLaw laplace(double b) { return {JumpLawKind::Laplace, b}; }

  double second_moment() const {
    switch (kind) {
      case JumpLawKind::Uniform: return scale * scale / 3.0;
      case JumpLawKind::Normal: return scale * scale;
      case JumpLawKind::Laplace: return 2.0 * scale * scale;
    }
    return 0.0;
  }

  // Inverse CDF; p in (0,1).
  double quantile(double p) const {
    switch (kind) {
      case JumpLawKind::Uniform: return scale * (2.0 * p - 1.0);
      case JumpLawKind::Normal: return scale * normal_quantile(p);
      case JumpLawKind::Laplace:
        return p < 0.5 ? scale * std::log(2.0 * p) : -scale * std::log(2.0 * (1.0 - p));
    }
    return 0.0;
  }

  double sample(Rng& rng) const {
    switch (kind) {
      case JumpLawKind::Uniform: return scale * (2.0 * uniform01(rng) - 1.0);
      case JumpLawKind::Normal: return scale * standard_normal(rng);
      case JumpLawKind::Laplace: return quantile(uniform01(rng));
    }
    return 0.0;
  }

  // "uniform:b", "normal:sigma", "laplace:b"
  static JumpLaw parse(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("jump law must look like kind:scale, got '" + text + "'");
    const std::string kind = text.substr(0, colon);
    double s = 0.0;
    try {
      std::size_t used = 0;
      s = std::stod(text.substr(colon + 1), &used);
      if (used != text.size() - colon - 1) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw std::invalid_argument("jump law scale is not a number in '" + text + "'");
    }
    if (!(s >= 0.0) || !std::isfinite(s)) throw std::invalid_argument("jump law scale must be >= 0 in '" + text + "'");
    if (kind == "uniform") return uniform(s);
    if (kind == "normal") return normal(s);
    if (kind == "laplace") return laplace(s);
    throw std::invalid_argument("unknown jump law '" + kind + "' (expected uniform, normal or laplace)");
  }

  std::string str() const {
    const char* name = kind == JumpLawKind::Uniform ? "uniform" : kind == JumpLawKind::Normal ? "normal" : "laplace";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s:%.17g", name, scale);
    return buf;
  }

  // Acklam's rational approximation refined by one Halley step.
  static double normal_quantile(double p) {
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01, -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double plow = 0.02425;
    double x;
    if (p < plow) {
      const double q = std::sqrt(-2.0 * std::log(p));
      x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
          ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
      const double q = p - 0.5;
      const double r = q * q;
      x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
          (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
      const double q = std::sqrt(-2.0 * std::log1p(-p));
      x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
          ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2.0 * 3.14159265358979323846) * std::exp(x * x / 2.0);
    return x - u / (1.0 + x * u / 2.0);
  }
};

struct JumpSpec {
  double lambda = 0.0;  // intensity, 1/time
  double gamma = 0.0;   // scale
  JumpLaw law{};

  bool active() const { return lambda > 0.0 && gamma > 0.0; }
  double mu2() const { return law.second_moment(); }
};

// Jumps inside one step (t, t+dt]. Times are stored relative to t, sorted.
struct JumpConfig {
  std::vector<double> times;
  std::vector<double> sizes;

  std::size_t count() const { return times.size(); }
  double size_sum() const {
    double s = 0.0;
    for (double z : sizes) s += z;
    return s;
  }
};

// Count ~ Poisson(lambda dt); given the count, times are uniform order
// statistics on (0, dt] and sizes are iid from the law.
inline JumpConfig sample_jump_config(Rng& rng, double dt, const JumpSpec& spec) {
  JumpConfig cfg;
  if (!(spec.lambda > 0.0)) return cfg;
  std::poisson_distribution<int> count(spec.lambda * dt);
  const int n = count(rng);
  cfg.times.resize(n);
  cfg.sizes.resize(n);
  for (int i = 0; i < n; ++i) cfg.times[i] = dt * uniform01(rng);
  std::sort(cfg.times.begin(), cfg.times.end());
  for (int i = 0; i < n; ++i) cfg.sizes[i] = spec.law.sample(rng);
  return cfg;
}

inline std::vector<JumpConfig> sample_jump_configs(Rng& rng, double dt, const JumpSpec& spec, int n_mc) {
  std::vector<JumpConfig> out;
  out.reserve(n_mc);
  for (int k = 0; k < n_mc; ++k) out.push_back(sample_jump_config(rng, dt, spec));
  return out;
}

// Smallest n with P(N <= n) >= p for N ~ Poisson(mean).
inline int poisson_quantile(double p, double mean) {
  if (!(mean > 0.0)) return 0;
  double term = std::exp(-mean);
  double cdf = term;
  int n = 0;
  if (term > 0.0) {
    while (cdf < p && n < 100000) {
      ++n;
      term *= mean / n;
      cdf += term;
      if (term < 1e-300 && static_cast<double>(n) > mean) break;
    }
    return n;
  }
  // exp(-mean) underflows; fall back to a normal approximation.
  const double z = JumpLaw::normal_quantile(p);
  return std::max(0, static_cast<int>(std::lround(mean + z * std::sqrt(mean))));
}

// Pool of frozen uniforms for common random numbers across candidate
// (lambda, gamma) values. Entry k yields a JumpConfig whose count is the
// Poisson quantile of a fixed uniform, and whose times and sizes come from a
// counter-based stream, so changing lambda only changes the count.
class JumpPool {
 public:
  JumpPool() = default;
  JumpPool(std::uint64_t seed, int n) : seed_(seed), count_u_(n) {
    for (int k = 0; k < n; ++k) count_u_[k] = counter_uniform(derive_seed(seed, {0}), k);
  }

  int size() const { return static_cast<int>(count_u_.size()); }

  JumpConfig materialize(int k, double lambda, double dt, const JumpLaw& law) const {
    JumpConfig cfg;
    const int n = poisson_quantile(count_u_[k], lambda * dt);
    const std::uint64_t s = derive_seed(seed_, {1, static_cast<std::uint64_t>(k)});
    cfg.times.resize(n);
    cfg.sizes.resize(n);
    for (int i = 0; i < n; ++i) cfg.times[i] = dt * counter_uniform(s, 2 * static_cast<std::uint64_t>(i));
    std::sort(cfg.times.begin(), cfg.times.end());
    for (int i = 0; i < n; ++i) cfg.sizes[i] = law.quantile(counter_uniform(s, 2 * static_cast<std::uint64_t>(i) + 1));
    return cfg;
  }

  std::vector<JumpConfig> materialize_all(double lambda, double dt, const JumpLaw& law) const {
    std::vector<JumpConfig> out;
    out.reserve(count_u_.size());
    for (int k = 0; k < size(); ++k) out.push_back(materialize(k, lambda, dt, law));
    return out;
  }

 private:
  std::uint64_t seed_ = 0;
  std::vector<double> count_u_;
};

}  // namespace jumpsde
