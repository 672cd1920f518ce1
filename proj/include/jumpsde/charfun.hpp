#pragma once

// Conditional characteristic function of one Tamed-Milstein step.
//
// Given the jump configuration, the stochastic part of the step is a Gaussian
// quadratic form Q = Z' cJ Z + a'Z + d with Z ~ N(0, diag(dtau)), J the
// all-ones matrix, c = g g'/2 and a_j = c_j. The general (matrix) form of its
// CF is kept as a test oracle; production code uses the rank-one
// Sherman-Morrison reduction, which is O(n) per configuration.

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include "jumpsde/jumps.hpp"
#include "jumpsde/model.hpp"
#include "jumpsde/moments.hpp"
#include "jumpsde/simulate.hpp"

namespace jumpsde {

using cplx = std::complex<double>;
inline constexpr cplx kI{0.0, 1.0};

// Dense evaluation of E exp(iuQ) for Q = Z'(cJ)Z + a'Z + d, Z ~ N(0, diag(sigma)).
inline cplx cf_quadform_general(std::span<const double> sigma_diag, double c, std::span<const double> a_vec, double d,
                                cplx u) {
  const auto k = static_cast<Eigen::Index>(sigma_diag.size());
  if (k == 0 || a_vec.size() != sigma_diag.size()) throw ValidationError("sigma and a must have equal nonzero length");
  if (k > 12) throw ValidationError("dense quadratic-form oracle is capped at dimension 12");
  using Mat = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<cplx, Eigen::Dynamic, 1>;
  Eigen::VectorXd root(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    if (!(sigma_diag[i] > 0.0)) throw ValidationError("sigma entries must be positive");
    root(i) = std::sqrt(sigma_diag[i]);
  }
  const cplx two_iuc = 2.0 * kI * u * c;
  // I - 2iu A Sigma with A = cJ
  Mat m1 = Mat::Identity(k, k);
  Mat m2 = Mat::Identity(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) {
      m1(i, j) -= two_iuc * sigma_diag[j];
      m2(i, j) -= two_iuc * root(i) * root(j);
    }
  Eigen::PartialPivLU<Mat> lu1(m1);
  const cplx det = lu1.determinant();
  if (std::abs(det) == 0.0) throw NumericalError("singular matrix in quadratic-form CF");
  Vec b(k);
  for (Eigen::Index i = 0; i < k; ++i) b(i) = root(i) * a_vec[i];
  Eigen::PartialPivLU<Mat> lu2(m2);
  const Vec y = lu2.solve(b);
  const cplx quad = (b.transpose() * y)(0, 0);
  return std::exp(kI * u * d - 0.5 * u * u * quad) / std::sqrt(det);
}

// Sherman-Morrison form:
// (1 - 2iuc dt)^{-1/2} exp(-u^2/2 [S2 + 2iuc S1^2 / (1 - 2iuc dt)] + iud)
// with S2 = sum c_j^2 dtau_j, S1 = sum c_j dtau_j, dt = sum dtau_j.
inline cplx cf_quadform_closed(std::span<const double> dtau, std::span<const double> coeffs, double c, double d,
                               cplx u) {
  if (dtau.size() != coeffs.size() || dtau.empty()) throw ValidationError("dtau and coeffs must have equal nonzero length");
  double s2 = 0.0, s1 = 0.0, dt = 0.0;
  for (std::size_t j = 0; j < dtau.size(); ++j) {
    s2 += coeffs[j] * coeffs[j] * dtau[j];
    s1 += coeffs[j] * dtau[j];
    dt += dtau[j];
  }
  const cplx w = 1.0 - 2.0 * kI * u * c * dt;
  return std::exp(-0.5 * u * u * (s2 + 2.0 * kI * u * c * s1 * s1 / w) + kI * u * d) / std::sqrt(w);
}

// Partition lengths dtau_1..dtau_{n+1} and coefficients c_1..c_{n+1} of one
// configuration: c_1 = g(x), c_j = g(x) + sum_{l<j} (g(x + gamma z_l) - g(x)).
// Generic in the scalar so the trainer can run it on tracked values.
template <class T, class GAt>
void jump_quadform_sums(const T& gx, const JumpConfig& cfg, double dt, double gamma, double x, GAt&& g_at, T& s2,
                        T& s1) {
  T cj = gx;
  double prev = 0.0;
  s2 = T(0.0);
  s1 = T(0.0);
  for (std::size_t j = 0; j < cfg.count(); ++j) {
    const double dtau = cfg.times[j] - prev;
    s2 = s2 + cj * cj * dtau;
    s1 = s1 + cj * dtau;
    cj = cj + (g_at(x + gamma * cfg.sizes[j]) - gx);
    prev = cfg.times[j];
  }
  const double last = dt - prev;
  s2 = s2 + cj * cj * last;
  s1 = s1 + cj * last;
}

inline void partition_of(const JumpConfig& cfg, double dt, std::vector<double>& dtau) {
  dtau.clear();
  double prev = 0.0;
  for (double t : cfg.times) {
    dtau.push_back(t - prev);
    prev = t;
  }
  dtau.push_back(dt - prev);
}

// exp(iu(x + (f^dt - gg'/2) dt) - u^2 g^2 dt / (2(1 - iu gg' dt))) / sqrt(1 - iu gg' dt)
inline cplx cf_nojump(cplx u, double x, const SdeModel& model, double dt) {
  const double gx = model.diffusion(x);
  const double gg = gx * model.diffusion.prime(x);
  const cplx w = 1.0 - kI * u * gg * dt;
  if (!(w.real() > 0.0)) throw NumericalError("CF square root leaves the principal branch (Re(1 - iu g g' dt) <= 0)");
  const double drift = x + (tamed_drift(model.drift(x), dt) - 0.5 * gg) * dt;
  return std::exp(kI * u * drift - 0.5 * u * u * gx * gx * dt / w) / std::sqrt(w);
}

// One mixture component of the step law: the configurations with the same
// jump pattern contribute weight * exp(iu shift - u^2/2 (s2 + iu gg s1^2 / w)).
// Weights are configuration counts; the law divides by their total so that
// phi(0) is exactly 1.
struct LawComponent {
  double weight = 1.0;
  double shift = 0.0;  // gamma * sum z
  double s2 = 0.0;
  double s1 = 0.0;
};

// Reduced representation of the one-step CF averaged over a frozen set of
// jump configurations:
//   phi(u) = exp(iu(center - gg dt / 2)) / sqrt(w) * sum_k weight_k T_k(u) / total,
//   w = 1 - iu gg dt, gg = g g', center = conditional mean.
// Configurations without jumps are merged into one component.
struct OneStepLaw {
  double center = 0.0;
  double gg = 0.0;
  double dt = 0.0;
  double total = 1.0;  // sum of component weights
  std::vector<LawComponent> components;

  cplx cf(cplx u) const {
    const cplx w = 1.0 - kI * u * gg * dt;
    const cplx iu = kI * u;
    cplx sum = 0.0;
    for (const auto& k : components)
      sum += k.weight * std::exp(iu * k.shift - 0.5 * u * u * (k.s2 + iu * gg * k.s1 * k.s1 / w));
    return std::exp(iu * (center - 0.5 * gg * dt)) / std::sqrt(w) * (sum / total);
  }

  bool branch_ok(cplx u) const { return (1.0 - kI * u * gg * dt).real() > 0.0; }
};

inline OneStepLaw one_step_law(double x, const SdeModel& model, double dt, std::span<const JumpConfig> configs) {
  OneStepLaw law;
  const double gx = model.diffusion(x);
  law.center = cond_mean(x, model, dt);
  law.gg = gx * model.diffusion.prime(x);
  law.dt = dt;
  const bool jumps = model.jumps.active() && !configs.empty();
  law.total = jumps ? static_cast<double>(configs.size()) : 1.0;
  LawComponent quiet{0.0, 0.0, gx * gx * dt, gx * dt};
  auto g_at = [&](double y) { return model.diffusion(y); };
  if (!jumps) {
    quiet.weight = 1.0;
  } else {
    for (const auto& cfg : configs) {
      if (cfg.count() == 0) {
        quiet.weight += 1.0;
        continue;
      }
      LawComponent k;
      k.weight = 1.0;
      k.shift = model.jumps.gamma * cfg.size_sum();
      jump_quadform_sums(gx, cfg, dt, model.jumps.gamma, x, g_at, k.s2, k.s1);
      law.components.push_back(k);
    }
  }
  if (quiet.weight > 0.0) law.components.insert(law.components.begin(), quiet);
  return law;
}

// Monte Carlo average over the given configurations of the conditional CF.
inline cplx cf_jump_mc(cplx u, double x, const SdeModel& model, double dt, std::span<const JumpConfig> configs) {
  if (!model.jumps.active()) throw ValidationError("cf_jump_mc requires lambda > 0 and gamma > 0");
  return one_step_law(x, model, dt, configs).cf(u);
}

inline cplx cf_jump_mc(cplx u, double x, const SdeModel& model, double dt, int n_mc, Rng& rng) {
  const auto configs = sample_jump_configs(rng, dt, model.jumps, n_mc);
  return cf_jump_mc(u, x, model, dt, configs);
}

// cf_nojump when jumps are off, otherwise cf_jump_mc on fresh configurations.
inline OneStepLaw sample_step_law(double x, const SdeModel& model, double dt, int n_mc, Rng& rng) {
  if (!model.jumps.active()) return one_step_law(x, model, dt, {});
  const auto configs = sample_jump_configs(rng, dt, model.jumps, n_mc);
  return one_step_law(x, model, dt, configs);
}

}  // namespace jumpsde
