#pragma once

// Scalar-input, scalar-output perceptrons with ELU hidden layers and either a
// linear or a softplus head.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "jumpsde/autodiff.hpp"
#include "jumpsde/model.hpp"
#include "jumpsde/rng.hpp"

namespace jumpsde {

enum class Head { Linear, Softplus };

inline double elu(double z) { return z > 0.0 ? z : std::expm1(z); }
inline double elu_prime(double z) { return z > 0.0 ? 1.0 : std::exp(z); }
inline double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<int> widths, Head head) : widths_(std::move(widths)), head_(head) {
    if (widths_.size() < 2 || widths_.front() != 1 || widths_.back() != 1)
      throw ValidationError("network widths must start and end with 1");
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      w_off_.push_back(n);
      n += static_cast<std::size_t>(widths_[l]) * widths_[l + 1];
      b_off_.push_back(n);
      n += widths_[l + 1];
    }
    params_.assign(n, 0.0);
    grad_.assign(n, 0.0);
  }

  // 1 -> 32 x 4 ELU -> linear
  static Mlp drift_net(std::uint64_t seed) {
    Mlp m({1, 32, 32, 32, 32, 1}, Head::Linear);
    m.init(seed);
    return m;
  }
  // 1 -> 32 x 3 ELU -> softplus
  static Mlp diffusion_net(std::uint64_t seed) {
    Mlp m({1, 32, 32, 32, 1}, Head::Softplus);
    m.init(seed);
    return m;
  }

  // Weights ~ U(-sqrt(6 / fan_in), sqrt(6 / fan_in)), biases 0.
  void init(std::uint64_t seed) {
    seed_ = seed;
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      const double bound = std::sqrt(6.0 / widths_[l]);
      const std::size_t nw = static_cast<std::size_t>(widths_[l]) * widths_[l + 1];
      for (std::size_t i = 0; i < nw; ++i) params_[w_off_[l] + i] = bound * (2.0 * uniform01(rng) - 1.0);
      for (int i = 0; i < widths_[l + 1]; ++i) params_[b_off_[l] + i] = 0.0;
    }
  }

  std::size_t num_params() const { return params_.size(); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }
  const std::vector<int>& widths() const { return widths_; }
  Head head() const { return head_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t layers() const { return widths_.size() - 1; }
  std::size_t weight_offset(std::size_t l) const { return w_off_[l]; }
  std::size_t bias_offset(std::size_t l) const { return b_off_[l]; }

  double operator()(double x) const { return forward(x); }

  double forward(double x) const {
    thread_local std::vector<double> a, b;
    a.assign(1, x);
    const std::size_t L = layers();
    for (std::size_t l = 0; l < L; ++l) {
      const int in = widths_[l], out = widths_[l + 1];
      b.assign(out, 0.0);
      const double* W = &params_[w_off_[l]];
      const double* bias = &params_[b_off_[l]];
      for (int o = 0; o < out; ++o) {
        double s = bias[o];
        const double* row = W + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) s += row[i] * a[i];
        b[o] = l + 1 < L ? elu(s) : s;
      }
      std::swap(a, b);
    }
    return head_ == Head::Softplus ? softplus(a[0]) : a[0];
  }

  // Adds adjoint * d(net(x))/d(params) into grad().
  void accumulate_grad(double x, double adjoint) {
    thread_local std::vector<std::vector<double>> pre;   // pre-activations per layer
    thread_local std::vector<std::vector<double>> act;   // activations, act[0] = input
    const std::size_t L = layers();
    pre.resize(L);
    act.resize(L + 1);
    act[0].assign(1, x);
    for (std::size_t l = 0; l < L; ++l) {
      const int in = widths_[l], out = widths_[l + 1];
      pre[l].assign(out, 0.0);
      act[l + 1].assign(out, 0.0);
      const double* W = &params_[w_off_[l]];
      const double* bias = &params_[b_off_[l]];
      for (int o = 0; o < out; ++o) {
        double s = bias[o];
        const double* row = W + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) s += row[i] * act[l][i];
        pre[l][o] = s;
        act[l + 1][o] = l + 1 < L ? elu(s) : s;
      }
    }
    thread_local std::vector<double> delta, next;
    const double z = pre[L - 1][0];
    delta.assign(1, adjoint * (head_ == Head::Softplus ? sigmoid(z) : 1.0));
    for (std::size_t l = L; l-- > 0;) {
      const int in = widths_[l], out = widths_[l + 1];
      double* gW = &grad_[w_off_[l]];
      double* gb = &grad_[b_off_[l]];
      const double* W = &params_[w_off_[l]];
      next.assign(in, 0.0);
      for (int o = 0; o < out; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        gb[o] += d;
        double* grow = gW + static_cast<std::size_t>(o) * in;
        const double* row = W + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) {
          grow[i] += d * act[l][i];
          next[i] += d * row[i];
        }
      }
      if (l > 0)
        for (int i = 0; i < in; ++i) next[i] *= elu_prime(pre[l - 1][i]);
      std::swap(delta, next);
    }
  }

  // Tape node whose adjoint flows into grad().
  ad::Var forward(ad::Tape& tape, double x) {
    return {&tape, tape.hook(forward(x), &Mlp::hook, this, x)};
  }

  // (net(x), (net(x + delta) - net(x - delta)) / (2 delta)), both tracked.
  std::pair<ad::Var, ad::Var> forward_with_input_deriv(ad::Tape& tape, double x, double delta) {
    const ad::Var v = forward(tape, x);
    const ad::Var up = forward(tape, x + delta);
    const ad::Var dn = forward(tape, x - delta);
    return {v, (up - dn) / (2.0 * delta)};
  }

  double input_deriv(double x, double delta) const { return (forward(x + delta) - forward(x - delta)) / (2.0 * delta); }

  nlohmann::json to_json(const nlohmann::json& train_meta = nlohmann::json::object()) const {
    nlohmann::json j;
    j["widths"] = widths_;
    j["head"] = head_ == Head::Softplus ? "softplus" : "linear";
    nlohmann::json ws = nlohmann::json::array(), bs = nlohmann::json::array();
    for (std::size_t l = 0; l < layers(); ++l) {
      const std::size_t nw = static_cast<std::size_t>(widths_[l]) * widths_[l + 1];
      ws.push_back(std::vector<double>(params_.begin() + w_off_[l], params_.begin() + w_off_[l] + nw));
      bs.push_back(std::vector<double>(params_.begin() + b_off_[l], params_.begin() + b_off_[l] + widths_[l + 1]));
    }
    j["weights"] = ws;
    j["biases"] = bs;
    j["seed"] = seed_;
    j["train_meta"] = train_meta;
    return j;
  }

  static Mlp from_json(const nlohmann::json& j) {
    const std::string head = j.at("head").get<std::string>();
    if (head != "linear" && head != "softplus") throw ValidationError("network head must be linear or softplus");
    Mlp m(j.at("widths").get<std::vector<int>>(), head == "softplus" ? Head::Softplus : Head::Linear);
    const auto& ws = j.at("weights");
    const auto& bs = j.at("biases");
    if (ws.size() != m.layers() || bs.size() != m.layers()) throw ValidationError("checkpoint layer count mismatch");
    for (std::size_t l = 0; l < m.layers(); ++l) {
      const auto w = ws[l].get<std::vector<double>>();
      const auto b = bs[l].get<std::vector<double>>();
      if (w.size() != static_cast<std::size_t>(m.widths_[l]) * m.widths_[l + 1] ||
          b.size() != static_cast<std::size_t>(m.widths_[l + 1]))
        throw ValidationError("checkpoint layer " + std::to_string(l) + " has the wrong shape");
      std::copy(w.begin(), w.end(), m.params_.begin() + m.w_off_[l]);
      std::copy(b.begin(), b.end(), m.params_.begin() + m.b_off_[l]);
    }
    m.seed_ = j.value("seed", std::uint64_t{0});
    return m;
  }

 private:
  static void hook(void* ctx, double x, double adjoint) { static_cast<Mlp*>(ctx)->accumulate_grad(x, adjoint); }

  std::vector<int> widths_;
  Head head_ = Head::Linear;
  std::vector<std::size_t> w_off_, b_off_;
  std::vector<double> params_;
  std::vector<double> grad_;
  std::uint64_t seed_ = 0;
};

// Coefficient view of a trained network; g' by central difference.
inline Coefficient coefficient_of(const Mlp& net, double delta, std::string label) {
  auto shared = std::make_shared<Mlp>(net);
  return Coefficient::with_central_difference([shared](double x) { return shared->forward(x); }, delta, std::move(label));
}

}  // namespace jumpsde
