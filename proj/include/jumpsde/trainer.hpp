#pragma once

// Three-phase estimation of drift and diffusion networks from K observed
// paths cut into R contiguous time blocks.
//
// Phase 1 trains both networks jointly on the Fourier likelihood D2, then
// re-initializes the diffusion network. Phase 2 alternates f-training on L1
// and g-training on L2 over randomly selected blocks, favouring blocks with
// large losses. Phase 3 selects blocks by the standardized statistic H and
// trains f on L3 + L4 and g on L2.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "jumpsde/adam.hpp"
#include "jumpsde/autodiff.hpp"
#include "jumpsde/charfun.hpp"
#include "jumpsde/density.hpp"
#include "jumpsde/jumps.hpp"
#include "jumpsde/mlp.hpp"
#include "jumpsde/model.hpp"
#include "jumpsde/moments.hpp"
#include "jumpsde/parallel.hpp"
#include "jumpsde/rng.hpp"
#include "jumpsde/simulate.hpp"

namespace jumpsde {

using ad::Var;

struct TrainSeeds {
  std::uint64_t init_f = 0;
  std::uint64_t init_g = 0;
  std::uint64_t reset_g = 0;
  std::uint64_t selection = 0;
  std::uint64_t configs = 0;

  static TrainSeeds from_master(std::uint64_t seed) {
    return {derive_seed(seed, {stream::kInitF}), derive_seed(seed, {stream::kInitG}),
            derive_seed(seed, {stream::kResetG}), derive_seed(seed, {stream::kSelection}),
            derive_seed(seed, {stream::kConfigs})};
  }
};

struct TrainConfig {
  std::optional<int> epoch0;  // unset: 400 without jumps, 10 with jumps
  int epoch1 = 100;
  int epoch2 = 400;
  int train_f = 4;
  int R1 = 8;
  int R2 = 2;
  int R3 = 4;
  int R4 = 4;
  double lr = 1e-3;
  FourierConfig fourier = FourierConfig::training();
  int n_mc_var = 400;
  int n_mc_cf = 200;
  double g_prime_delta = 1e-3;
  int eval_grid = 200;
  TrainSeeds seeds = TrainSeeds::from_master(0);

  int epoch0_for(bool jumps) const { return epoch0 ? *epoch0 : (jumps ? 10 : 400); }

  void validate(std::size_t blocks) const {
    auto nonneg = [](int v, const char* name) {
      if (v < 0) throw ValidationError(std::string(name) + " must be non-negative");
    };
    if (epoch0) nonneg(*epoch0, "epoch0");
    nonneg(epoch1, "epoch1");
    nonneg(epoch2, "epoch2");
    nonneg(train_f, "train_f");
    const int R = static_cast<int>(blocks);
    for (auto [v, name] : {std::pair{R1, "R1"}, {R2, "R2"}, {R3, "R3"}, {R4, "R4"}}) {
      nonneg(v, name);
      if (blocks > 0 && v > R)
        throw ValidationError(std::string(name) + " = " + std::to_string(v) + " exceeds the block count " +
                              std::to_string(R));
    }
    if (!(lr > 0.0)) throw ValidationError("lr must be positive");
    if (n_mc_var <= 0 || n_mc_cf <= 0) throw ValidationError("n_mc_var and n_mc_cf must be positive");
    if (!(g_prime_delta > 0.0)) throw ValidationError("g_prime_delta must be positive");
    if (eval_grid < 2) throw ValidationError("eval_grid must be at least 2");
    fourier.validate();
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    static const char* known[] = {"epoch0", "epoch1", "epoch2", "train_f", "R1", "R2", "R3", "R4", "lr", "fourier",
                                  "n_mc_var", "n_mc_cf", "g_prime_delta", "eval_grid", "seed", "seeds"};
    if (!j.is_object()) throw ValidationError("train config must be a JSON object");
    for (const auto& [key, _] : j.items())
      if (std::find(std::begin(known), std::end(known), key) == std::end(known))
        throw ValidationError("unknown train config key '" + key + "'");
    TrainConfig c;
    try {
      if (j.contains("epoch0") && !j["epoch0"].is_null()) c.epoch0 = j["epoch0"].get<int>();
      c.epoch1 = j.value("epoch1", c.epoch1);
      c.epoch2 = j.value("epoch2", c.epoch2);
      c.train_f = j.value("train_f", c.train_f);
      c.R1 = j.value("R1", c.R1);
      c.R2 = j.value("R2", c.R2);
      c.R3 = j.value("R3", c.R3);
      c.R4 = j.value("R4", c.R4);
      c.lr = j.value("lr", c.lr);
      c.n_mc_var = j.value("n_mc_var", c.n_mc_var);
      c.n_mc_cf = j.value("n_mc_cf", c.n_mc_cf);
      c.g_prime_delta = j.value("g_prime_delta", c.g_prime_delta);
      c.eval_grid = j.value("eval_grid", c.eval_grid);
      if (j.contains("fourier")) {
        const auto& f = j["fourier"];
        for (const auto& [key, _] : f.items())
          if (key != "M" && key != "h" && key != "a" && key != "floor")
            throw ValidationError("unknown fourier key '" + key + "'");
        c.fourier.M = f.value("M", c.fourier.M);
        c.fourier.h = f.value("h", c.fourier.h);
        c.fourier.a = f.value("a", c.fourier.a);
        c.fourier.floor = f.value("floor", c.fourier.floor);
      }
      if (j.contains("seed")) c.seeds = TrainSeeds::from_master(j["seed"].get<std::uint64_t>());
      if (j.contains("seeds")) {
        const auto& s = j["seeds"];
        for (const auto& [key, _] : s.items())
          if (key != "init_f" && key != "init_g" && key != "reset_g" && key != "selection" && key != "configs")
            throw ValidationError("unknown seeds key '" + key + "'");
        c.seeds.init_f = s.value("init_f", c.seeds.init_f);
        c.seeds.init_g = s.value("init_g", c.seeds.init_g);
        c.seeds.reset_g = s.value("reset_g", c.seeds.reset_g);
        c.seeds.selection = s.value("selection", c.seeds.selection);
        c.seeds.configs = s.value("configs", c.seeds.configs);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("train config: ") + e.what());
    }
    c.validate(0);
    return c;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["epoch0"] = epoch0 ? nlohmann::json(*epoch0) : nlohmann::json(nullptr);
    j["epoch1"] = epoch1;
    j["epoch2"] = epoch2;
    j["train_f"] = train_f;
    j["R1"] = R1;
    j["R2"] = R2;
    j["R3"] = R3;
    j["R4"] = R4;
    j["lr"] = lr;
    j["fourier"] = {{"M", fourier.M}, {"h", fourier.h}, {"a", fourier.a}, {"floor", fourier.floor}};
    j["n_mc_var"] = n_mc_var;
    j["n_mc_cf"] = n_mc_cf;
    j["g_prime_delta"] = g_prime_delta;
    j["eval_grid"] = eval_grid;
    j["seeds"] = {{"init_f", seeds.init_f},
                  {"init_g", seeds.init_g},
                  {"reset_g", seeds.reset_g},
                  {"selection", seeds.selection},
                  {"configs", seeds.configs}};
    return j;
  }
};

struct Nets {
  Mlp f;
  Mlp g;

  static Nets fresh(const TrainSeeds& s) { return {Mlp::drift_net(s.init_f), Mlp::diffusion_net(s.init_g)}; }
};

// States and times of one path restricted to one block.
struct BlockRef {
  std::span<const double> x;
  std::span<const double> t;

  std::size_t transitions() const { return x.size() - 1; }
};

inline BlockRef block_of(const PathSet& ps, std::size_t path, std::size_t block) {
  const auto [lo, hi] = ps.block(block);
  return {std::span<const double>(ps.paths[path]).subspan(lo, hi - lo),
          std::span<const double>(ps.grid).subspan(lo, hi - lo)};
}

// Network evaluation that records on a tape only for the networks being
// trained; the others enter as constants. Can also wrap a plain model, which
// is never tracked.
class NetEval {
 public:
  NetEval(Nets& nets, ad::Tape* tape, bool track_f, bool track_g, double delta)
      : nets_(&nets), tape_(tape), track_f_(tape && track_f), track_g_(tape && track_g), delta_(delta) {}
  explicit NetEval(const SdeModel& model) : model_(&model) {}

  Var f(double x) const {
    if (model_) return model_->drift(x);
    return track_f_ ? nets_->f.forward(*tape_, x) : Var(nets_->f(x));
  }
  Var g(double x) const {
    if (model_) return model_->diffusion(x);
    return track_g_ ? nets_->g.forward(*tape_, x) : Var(nets_->g(x));
  }
  double g_value(double x) const { return model_ ? model_->diffusion(x) : nets_->g(x); }
  std::pair<Var, Var> g_and_prime(double x) const {
    if (model_) return {Var(model_->diffusion(x)), Var(model_->diffusion.prime(x))};
    if (track_g_) return nets_->g.forward_with_input_deriv(*tape_, x, delta_);
    return {Var(nets_->g(x)), Var(nets_->g.input_deriv(x, delta_))};
  }
  ad::Tape* tape() const { return tape_; }

 private:
  Nets* nets_ = nullptr;
  const SdeModel* model_ = nullptr;
  ad::Tape* tape_ = nullptr;
  bool track_f_ = false;
  bool track_g_ = false;
  double delta_ = 1e-3;
};

// Settings shared by the losses.
struct LossContext {
  JumpSpec jumps{};
  FourierConfig fourier = FourierConfig::training();
  int n_mc_var = 400;
  int n_mc_cf = 200;
};

// Frozen configurations of transition i under a given root.
inline std::vector<JumpConfig> transition_configs(std::uint64_t root, std::size_t i, double dt, const JumpSpec& spec,
                                                  int n) {
  if (!spec.active()) return {};
  Rng rng = make_stream(root, {stream::kConfigs, i});
  return sample_jump_configs(rng, dt, spec, n);
}

// x_{i+1} - x_i - f^dt(x_i) dt
inline Var drift_residual(const NetEval& ev, const BlockRef& b, std::size_t i) {
  const double dt = b.t[i + 1] - b.t[i];
  const Var fv = ev.f(b.x[i]);
  return (b.x[i + 1] - b.x[i]) - tamed_drift(fv, dt) * dt;
}

// Conditional variance at x_i with the networks substituted.
inline Var model_variance(const NetEval& ev, const BlockRef& b, std::size_t i, const LossContext& ctx,
                          std::uint64_t root) {
  const double dt = b.t[i + 1] - b.t[i];
  const auto [gx, gp] = ev.g_and_prime(b.x[i]);
  if (!ctx.jumps.active()) return cond_var_nojump_terms(gx, gp, dt);
  const auto configs = transition_configs(root, i, dt, ctx.jumps, ctx.n_mc_var);
  auto g_at = [&](double y) { return ev.g(y); };
  return cond_var_jump_terms(gx, gp, b.x[i], dt, ctx.jumps, std::span<const JumpConfig>(configs), g_at);
}

inline Var loss_D1(const NetEval& ev, const BlockRef& b) {
  Var s = 0.0;
  for (std::size_t i = 0; i < b.transitions(); ++i) s = s + square(drift_residual(ev, b, i));
  return abs(s / static_cast<double>(b.transitions()));
}

inline Var loss_L1(const NetEval& ev, const BlockRef& b) {
  Var s = 0.0;
  for (std::size_t i = 0; i < b.transitions(); ++i) s = s + drift_residual(ev, b, i);
  return abs(s / static_cast<double>(b.transitions()));
}

inline Var loss_L2(const NetEval& ev, const BlockRef& b, const LossContext& ctx, std::uint64_t root) {
  Var s = 0.0;
  for (std::size_t i = 0; i < b.transitions(); ++i) {
    const Var r = drift_residual(ev, b, i);
    s = s + square(square(r) - model_variance(ev, b, i, ctx, root));
  }
  return s / static_cast<double>(b.transitions());
}

// Per-transition pieces of the Phase-3 statistics.
struct SplitTerms {
  std::vector<Var> residual;
  std::vector<Var> variance;
  std::vector<char> g_nonzero;
};

inline SplitTerms split_terms(const NetEval& ev, const BlockRef& b, const LossContext& ctx, std::uint64_t root) {
  SplitTerms s;
  const std::size_t n = b.transitions();
  s.residual.reserve(n);
  s.variance.reserve(n);
  s.g_nonzero.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.residual.push_back(drift_residual(ev, b, i));
    s.variance.push_back(model_variance(ev, b, i, ctx, root));
    s.g_nonzero.push_back(ev.g_value(b.x[i]) != 0.0);
  }
  return s;
}

// mean over {g != 0} of term + mean over {g == 0} of term; an empty sub-block
// contributes 0.
template <class Term>
Var split_mean(const SplitTerms& s, Term&& term) {
  Var on = 0.0, off = 0.0;
  std::size_t n_on = 0, n_off = 0;
  for (std::size_t i = 0; i < s.residual.size(); ++i) {
    const Var v = term(i);
    if (s.g_nonzero[i]) {
      on = on + v;
      ++n_on;
    } else {
      off = off + v;
      ++n_off;
    }
  }
  Var out = 0.0;
  if (n_on) out = out + on / static_cast<double>(n_on);
  if (n_off) out = out + off / static_cast<double>(n_off);
  return out;
}

inline double stat_H(const NetEval& ev, const BlockRef& b, const LossContext& ctx, std::uint64_t root) {
  const SplitTerms s = split_terms(ev, b, ctx, root);
  return split_mean(s, [&](std::size_t i) { return square(standardize(s.residual[i], s.variance[i])); }).value;
}

inline Var loss_L3(const NetEval& ev, const BlockRef& b, const LossContext& ctx, std::uint64_t root) {
  const SplitTerms s = split_terms(ev, b, ctx, root);
  return split_mean(s, [&](std::size_t i) { return square(s.residual[i]); });
}

inline Var loss_L4(const NetEval& ev, const BlockRef& b, const LossContext& ctx, std::uint64_t root) {
  const SplitTerms s = split_terms(ev, b, ctx, root);
  return split_mean(s, [&](std::size_t i) { return square(square(s.residual[i]) - s.variance[i]); });
}

inline Var loss_L34(const NetEval& ev, const BlockRef& b, const LossContext& ctx, std::uint64_t root) {
  const SplitTerms s = split_terms(ev, b, ctx, root);
  return split_mean(s, [&](std::size_t i) { return square(s.residual[i]); }) +
         split_mean(s, [&](std::size_t i) { return square(square(s.residual[i]) - s.variance[i]); });
}

// -sum log p(x_{i+1} | x_i) over the block with the networks substituted.
// Each transition is one tape node whose partials come from the analytic
// derivatives of the inverted density with respect to the law parameters.
inline Var loss_D2(const NetEval& ev, const BlockRef& b, const LossContext& ctx, std::uint64_t root,
                   std::size_t* clamped = nullptr) {
  Var total = 0.0;
  std::size_t low = 0;
  LawDensity dens;
  std::vector<Var> parents;
  std::vector<double> partials;
  OneStepLaw law;
  for (std::size_t i = 0; i < b.transitions(); ++i) {
    const double x = b.x[i];
    const double dt = b.t[i + 1] - b.t[i];
    const Var fv = ev.f(x);
    const auto [gx, gp] = ev.g_and_prime(x);
    const Var center = x + tamed_drift(fv, dt) * dt;
    const Var gg = gx * gp;
    parents.assign({center, gg});
    law.center = center.value;
    law.gg = gg.value;
    law.dt = dt;
    law.total = 1.0;
    law.components.clear();

    LawComponent quiet{0.0, 0.0, 0.0, 0.0};
    Var q2 = gx * gx * dt, q1 = gx * dt;
    quiet.s2 = q2.value;
    quiet.s1 = q1.value;
    std::vector<Var> s2v, s1v;
    if (!ctx.jumps.active()) {
      quiet.weight = 1.0;
    } else {
      const auto configs = transition_configs(root, i, dt, ctx.jumps, ctx.n_mc_cf);
      law.total = static_cast<double>(configs.size());
      auto g_at = [&](double y) { return ev.g(y); };
      for (const auto& cfg : configs) {
        if (cfg.count() == 0) {
          quiet.weight += 1.0;
          continue;
        }
        Var s2, s1;
        jump_quadform_sums(gx, cfg, dt, ctx.jumps.gamma, x, g_at, s2, s1);
        law.components.push_back({1.0, ctx.jumps.gamma * cfg.size_sum(), s2.value, s1.value});
        s2v.push_back(s2);
        s1v.push_back(s1);
      }
    }
    if (quiet.weight > 0.0) {
      law.components.insert(law.components.begin(), quiet);
      s2v.insert(s2v.begin(), q2);
      s1v.insert(s1v.begin(), q1);
    }
    const bool want = ev.tape() != nullptr;
    law_density(law, b.x[i + 1], ctx.fourier, want, dens);
    if (dens.clamped) ++low;
    const double nll = -std::log(dens.value);
    if (!want) {
      total = total + nll;
      continue;
    }
    const double inv = -1.0 / dens.value;
    partials.assign({dens.d_center * inv, dens.d_gg * inv});
    for (std::size_t k = 0; k < law.components.size(); ++k) {
      parents.push_back(s2v[k]);
      partials.push_back(dens.d_s2[k] * inv);
      parents.push_back(s1v[k]);
      partials.push_back(dens.d_s1[k] * inv);
    }
    total = total + ad::custom(*ev.tape(), nll, parents, partials);
  }
  if (clamped) *clamped = low;
  return total;
}

// Sequential weighted draw without replacement: pick i with probability
// w_i / sum(w) among the remaining indices, remove it, repeat. When every
// remaining weight is zero the rest of the draw is uniform and
// `fallback` (optional) is set.
inline std::vector<std::size_t> weighted_sample_without_replacement(std::span<const double> weights, std::size_t k,
                                                                    Rng& rng, bool* fallback = nullptr) {
  if (k > weights.size()) throw ValidationError("cannot draw more indices than weights");
  for (double w : weights)
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("selection weights must be finite and non-negative");
  std::vector<std::size_t> left(weights.size());
  for (std::size_t i = 0; i < left.size(); ++i) left[i] = i;
  std::vector<std::size_t> out;
  out.reserve(k);
  if (fallback) *fallback = false;
  while (out.size() < k) {
    double total = 0.0;
    for (std::size_t i : left) total += weights[i];
    std::size_t pos = 0;
    if (total > 0.0) {
      const double target = uniform01(rng) * total;
      double acc = 0.0;
      std::size_t last_positive = 0;
      pos = left.size();
      for (std::size_t p = 0; p < left.size(); ++p) {
        const double w = weights[left[p]];
        if (w <= 0.0) continue;
        last_positive = p;
        acc += w;
        if (target < acc) {
          pos = p;
          break;
        }
      }
      if (pos == left.size()) pos = last_positive;
    } else {
      if (fallback) *fallback = true;
      pos = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(left.size()));
      if (pos >= left.size()) pos = left.size() - 1;
    }
    out.push_back(left[pos]);
    left.erase(left.begin() + static_cast<std::ptrdiff_t>(pos));
  }
  return out;
}

struct TrainData {
  PathSet paths;
  JumpSpec jumps{};
};

struct TrainReport {
  std::vector<double> phase1_d2;          // one entry per (epoch, path, block) step
  std::vector<double> phase1_epoch_mean;  // mean D2 per epoch
  std::vector<double> phase2_l1;          // epoch1 x R1
  std::vector<double> phase2_l2;          // epoch1 x R2
  std::vector<double> phase3_l34;         // epoch2 x train_f x R3
  std::vector<double> phase3_l2;          // epoch2 x R4
  std::vector<double> phase3_mean_h;      // mean H over blocks per epoch, u4 draw
  std::size_t clamped_phase1 = 0;
  std::size_t selection_fallbacks = 0;
  std::uint64_t reset_g_seed = 0;
  bool has_truth = false;
  double mse_f = 0.0;
  double mse_g = 0.0;
  double eval_lo = 0.0;
  double eval_hi = 0.0;
  int eval_points = 0;
  double wall_seconds = 0.0;

  nlohmann::json to_json(bool with_wall_time = true) const {
    nlohmann::json j;
    j["phase1"] = {{"d2", phase1_d2}, {"epoch_mean", phase1_epoch_mean}, {"clamped", clamped_phase1}};
    j["phase2"] = {{"l1", phase2_l1}, {"l2", phase2_l2}};
    j["phase3"] = {{"l3_plus_l4", phase3_l34}, {"l2", phase3_l2}, {"mean_h", phase3_mean_h}};
    j["selection_fallbacks"] = selection_fallbacks;
    j["reset_g_seed"] = reset_g_seed;
    if (has_truth) {
      j["MSE_f"] = mse_f;
      j["MSE_g"] = mse_g;
      j["eval_range"] = {eval_lo, eval_hi};
      j["eval_points"] = eval_points;
    }
    if (with_wall_time) j["wall_seconds"] = wall_seconds;
    return j;
  }
};

struct Truth {
  Coefficient drift;
  Coefficient diffusion;
};

// Mean squared error of a network against a coefficient on n uniform points.
inline double mse_on_grid(const Mlp& net, const Coefficient& truth, double lo, double hi, int n) {
  double s = 0.0;
  for (int k = 0; k < n; ++k) {
    const double x = n == 1 ? lo : lo + (hi - lo) * k / (n - 1);
    const double e = net(x) - truth(x);
    s += e * e;
  }
  return s / n;
}

inline std::pair<double, double> observed_range(const PathSet& ps) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& p : ps.paths)
    for (double v : p) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  return {lo, hi};
}

class Trainer {
 public:
  using Progress = std::function<void(const std::string&)>;

  Trainer(TrainData data, TrainConfig cfg) : data_(std::move(data)), cfg_(std::move(cfg)) {
    data_.paths.validate();
    if (data_.paths.num_paths() == 0) throw ValidationError("no paths to train on");
    cfg_.validate(data_.paths.num_blocks());
    ctx_.jumps = data_.jumps;
    ctx_.fourier = cfg_.fourier;
    ctx_.n_mc_var = cfg_.n_mc_var;
    ctx_.n_mc_cf = cfg_.n_mc_cf;
    nets_ = Nets::fresh(cfg_.seeds);
  }

  void set_progress(Progress p) { progress_ = std::move(p); }

  Nets& nets() { return nets_; }
  const TrainReport& report() const { return report_; }
  const LossContext& context() const { return ctx_; }

  void run_phase1() {
    const int epochs = cfg_.epoch0_for(data_.jumps.active());
    AdamState af(nets_.f.num_params(), cfg_.lr), ag(nets_.g.num_params(), cfg_.lr);
    ad::Tape tape;
    const std::size_t K = data_.paths.num_paths(), R = data_.paths.num_blocks();
    for (int e = 0; e < epochs; ++e) {
      double sum = 0.0;
      for (std::size_t p = 0; p < K; ++p)
        for (std::size_t b = 0; b < R; ++b) {
          tape.clear();
          nets_.f.zero_grad();
          nets_.g.zero_grad();
          NetEval ev(nets_, &tape, true, true, cfg_.g_prime_delta);
          std::size_t low = 0;
          const std::uint64_t root = derive_seed(cfg_.seeds.configs, {1, u64(e), p, b});
          const Var loss = loss_D2(ev, block_of(data_.paths, p, b), ctx_, root, &low);
          loss.backward();
          adam_step(nets_.f.params(), nets_.f.grad(), af);
          adam_step(nets_.g.params(), nets_.g.grad(), ag);
          report_.phase1_d2.push_back(loss.value);
          report_.clamped_phase1 += low;
          sum += loss.value;
        }
      report_.phase1_epoch_mean.push_back(sum / static_cast<double>(K * R));
      note("phase1 epoch " + std::to_string(e + 1) + "/" + std::to_string(epochs) +
           " D2=" + std::to_string(report_.phase1_epoch_mean.back()));
    }
    report_.reset_g_seed = cfg_.seeds.reset_g;
    nets_.g.init(cfg_.seeds.reset_g);
  }

  void run_phase2() {
    AdamState af(nets_.f.num_params(), cfg_.lr), ag(nets_.g.num_params(), cfg_.lr);
    const std::size_t R = data_.paths.num_blocks();
    for (int e = 0; e < cfg_.epoch1; ++e) {
      Rng rng = make_stream(cfg_.seeds.selection, {2, u64(e)});
      // f on L1
      auto u1 = draw_paths(rng);
      std::vector<double> w(R);
      parallel_for(R, [&](std::size_t j) {
        NetEval ev(nets_, nullptr, false, false, cfg_.g_prime_delta);
        w[j] = loss_L1(ev, block_of(data_.paths, u1[j], j)).value;
      });
      for (std::size_t j : select(w, cfg_.R1, rng)) {
        const double v = step(af, true, [&](const NetEval& ev) { return loss_L1(ev, block_of(data_.paths, u1[j], j)); });
        report_.phase2_l1.push_back(v);
      }
      // g on L2
      auto u2 = draw_paths(rng);
      auto root = [&](std::size_t j) { return derive_seed(cfg_.seeds.configs, {2, u64(e), j}); };
      parallel_for(R, [&](std::size_t j) {
        NetEval ev(nets_, nullptr, false, false, cfg_.g_prime_delta);
        w[j] = loss_L2(ev, block_of(data_.paths, u2[j], j), ctx_, root(j)).value;
      });
      for (std::size_t j : select(w, cfg_.R2, rng)) {
        const double v = step(ag, false, [&](const NetEval& ev) {
          return loss_L2(ev, block_of(data_.paths, u2[j], j), ctx_, root(j));
        });
        report_.phase2_l2.push_back(v);
      }
      if ((e + 1) % 10 == 0 || e + 1 == cfg_.epoch1) note("phase2 epoch " + std::to_string(e + 1) + "/" + std::to_string(cfg_.epoch1));
    }
  }

  void run_phase3() {
    AdamState af(nets_.f.num_params(), cfg_.lr), ag(nets_.g.num_params(), cfg_.lr);
    const std::size_t R = data_.paths.num_blocks();
    std::vector<double> H(R), w(R);
    for (int e = 0; e < cfg_.epoch2; ++e) {
      Rng rng = make_stream(cfg_.seeds.selection, {3, u64(e)});
      for (int rep = 0; rep < cfg_.train_f; ++rep) {
        auto u3 = draw_paths(rng);
        auto root = [&](std::size_t j) { return derive_seed(cfg_.seeds.configs, {3, u64(e), u64(rep), j}); };
        compute_H(u3, root, H);
        for (std::size_t j : select(H, cfg_.R3, rng)) {
          const double v = step(af, true, [&](const NetEval& ev) {
            return loss_L34(ev, block_of(data_.paths, u3[j], j), ctx_, root(j));
          });
          report_.phase3_l34.push_back(v);
        }
      }
      auto u4 = draw_paths(rng);
      auto root = [&](std::size_t j) { return derive_seed(cfg_.seeds.configs, {3, u64(e), u64(cfg_.train_f), j}); };
      compute_H(u4, root, H);
      bool any_zero = false;
      double mean_h = 0.0;
      for (double h : H) {
        any_zero = any_zero || h == 0.0;
        mean_h += h / static_cast<double>(R);
      }
      report_.phase3_mean_h.push_back(mean_h);
      // 1/H; blocks with H = 0 take all the mass in the limit.
      for (std::size_t j = 0; j < R; ++j) w[j] = any_zero ? (H[j] == 0.0 ? 1.0 : 0.0) : 1.0 / H[j];
      for (std::size_t j : select(w, cfg_.R4, rng)) {
        const double v = step(ag, false, [&](const NetEval& ev) {
          return loss_L2(ev, block_of(data_.paths, u4[j], j), ctx_, root(j));
        });
        report_.phase3_l2.push_back(v);
      }
      if ((e + 1) % 10 == 0 || e + 1 == cfg_.epoch2)
        note("phase3 epoch " + std::to_string(e + 1) + "/" + std::to_string(cfg_.epoch2) + " mean H=" + std::to_string(mean_h));
    }
  }

  void evaluate(const Truth& truth) {
    const auto [lo, hi] = observed_range(data_.paths);
    report_.has_truth = true;
    report_.eval_lo = lo;
    report_.eval_hi = hi;
    report_.eval_points = cfg_.eval_grid;
    report_.mse_f = mse_on_grid(nets_.f, truth.drift, lo, hi, cfg_.eval_grid);
    report_.mse_g = mse_on_grid(nets_.g, truth.diffusion, lo, hi, cfg_.eval_grid);
  }

  void run(const std::optional<Truth>& truth = std::nullopt) {
    const auto start = std::chrono::steady_clock::now();
    run_phase1();
    run_phase2();
    run_phase3();
    if (truth) evaluate(*truth);
    report_.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }

 private:
  static std::uint64_t u64(int v) { return static_cast<std::uint64_t>(v); }

  void note(const std::string& s) const {
    if (progress_) progress_(s);
  }

  std::vector<std::size_t> draw_paths(Rng& rng) const {
    const std::size_t K = data_.paths.num_paths(), R = data_.paths.num_blocks();
    std::vector<std::size_t> u(R);
    for (auto& v : u) {
      v = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(K));
      if (v >= K) v = K - 1;
    }
    return u;
  }

  std::vector<std::size_t> select(const std::vector<double>& w, int k, Rng& rng) {
    bool fb = false;
    auto idx = weighted_sample_without_replacement(w, static_cast<std::size_t>(k), rng, &fb);
    if (fb) ++report_.selection_fallbacks;
    return idx;
  }

  template <class Root>
  void compute_H(const std::vector<std::size_t>& u, Root&& root, std::vector<double>& H) {
    parallel_for(H.size(), [&](std::size_t j) {
      NetEval ev(nets_, nullptr, false, false, cfg_.g_prime_delta);
      H[j] = stat_H(ev, block_of(data_.paths, u[j], j), ctx_, root(j));
    });
    for (double h : H)
      if (!std::isfinite(h)) throw NumericalError("non-finite H statistic; the networks have diverged");
  }

  // One Adam step on f (train_f) or g on the given loss; returns its value.
  template <class Loss>
  double step(AdamState& state, bool train_f, Loss&& loss_fn) {
    ad::Tape& tape = tape_;
    tape.clear();
    Mlp& net = train_f ? nets_.f : nets_.g;
    net.zero_grad();
    NetEval ev(nets_, &tape, train_f, !train_f, cfg_.g_prime_delta);
    const Var loss = loss_fn(ev);
    loss.backward();
    adam_step(net.params(), net.grad(), state);
    return loss.value;
  }

  TrainData data_;
  TrainConfig cfg_;
  LossContext ctx_;
  Nets nets_;
  TrainReport report_;
  ad::Tape tape_;
  Progress progress_;
};

inline std::pair<Nets, TrainReport> train_full(const TrainData& data, const TrainConfig& cfg,
                                               const std::optional<Truth>& truth = std::nullopt,
                                               Trainer::Progress progress = {}) {
  Trainer t(data, cfg);
  t.set_progress(std::move(progress));
  t.run(truth);
  return {t.nets(), t.report()};
}

}  // namespace jumpsde
