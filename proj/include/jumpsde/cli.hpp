#pragma once

// Command-line front end. Kept in a header so the acceptance driver can run
// the same code paths in-process through cli::run.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "jumpsde/charfun.hpp"
#include "jumpsde/density.hpp"
#include "jumpsde/mcmc.hpp"
#include "jumpsde/model.hpp"
#include "jumpsde/moments.hpp"
#include "jumpsde/simulate.hpp"
#include "jumpsde/trainer.hpp"

namespace jumpsde::cli {

using nlohmann::json;

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Collects output files and writes them only once the whole computation has
// succeeded, each through a temporary file and a rename.
class Outputs {
 public:
  void add(std::filesystem::path path, std::string content) { files_.emplace_back(std::move(path), std::move(content)); }
  void add_json(std::filesystem::path path, const json& j) { add(std::move(path), j.dump(2) + "\n"); }

  void commit() const {
    for (const auto& [path, content] : files_) {
      if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
      const std::filesystem::path tmp = path.string() + ".tmp";
      {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ValidationError("cannot open " + tmp.string() + " for writing");
        out << content;
        out.flush();
        if (!out) throw ValidationError("failed writing " + tmp.string());
      }
      std::filesystem::rename(tmp, path);
    }
  }

 private:
  std::vector<std::pair<std::filesystem::path, std::string>> files_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json read_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ValidationError(what + ": '" + s + "' is not a number");
  }
}

// Reads `path,t,x` rows back into a PathSet.
inline PathSet read_paths_csv(const std::string& file, std::size_t block_size) {
  std::istringstream in(read_file(file));
  std::string line;
  if (!std::getline(in, line) || line.rfind("path,t,x", 0) != 0) throw ValidationError(file + ": expected header path,t,x");
  std::map<long, std::vector<std::pair<double, double>>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 3) throw ValidationError(file + ":" + std::to_string(lineno) + ": expected 3 fields");
    const double p = parse_double(f[0], file + ":" + std::to_string(lineno));
    rows[static_cast<long>(p)].emplace_back(parse_double(f[1], file), parse_double(f[2], file));
  }
  if (rows.empty()) throw ValidationError(file + ": no rows");
  PathSet ps;
  ps.block_size = block_size;
  for (const auto& [t, _] : rows.begin()->second) ps.grid.push_back(t);
  for (const auto& [id, pts] : rows) {
    if (pts.size() != ps.grid.size()) throw ValidationError(file + ": path " + std::to_string(id) + " has a different length");
    std::vector<double> xs;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (pts[i].first != ps.grid[i]) throw ValidationError(file + ": paths must share one time grid");
      xs.push_back(pts[i].second);
    }
    ps.paths.push_back(std::move(xs));
  }
  ps.validate();
  return ps;
}

// One value per line; a non-numeric first line is taken as a header.
inline std::vector<double> read_column_csv(const std::string& file) {
  std::istringstream in(read_file(file));
  std::string line;
  std::vector<double> out;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      first = false;
      try {
        std::size_t used = 0;
        std::stod(line, &used);
      } catch (const std::exception&) {
        continue;
      }
    }
    out.push_back(parse_double(line, file));
  }
  return out;
}

inline std::string paths_csv(const PathSet& ps) {
  std::string s = "path,t,x\n";
  for (std::size_t k = 0; k < ps.num_paths(); ++k)
    for (std::size_t i = 0; i < ps.num_points(); ++i)
      s += std::to_string(k) + "," + num(ps.grid[i]) + "," + num(ps.paths[k][i]) + "\n";
  return s;
}

inline std::string column_csv(const char* name, const std::vector<double>& v) {
  std::string s = std::string(name) + "\n";
  for (double x : v) s += num(x) + "\n";
  return s;
}

inline Coefficient parse_coefficient(const std::string& src, const char* flag) {
  if (src.empty()) throw ValidationError(std::string(flag) + " is empty");
  try {
    return Coefficient::parse(src);
  } catch (const expr::ParseError& e) {
    throw ValidationError(std::string(flag) + ": " + e.what());
  }
}

struct ModelOpts {
  std::string drift;
  std::string diffusion;
  double x0 = 0.0;
  double lambda = 0.0;
  double gamma = 0.0;
  std::string jump_law = "uniform:0";

  SdeModel build() const {
    SdeModel m;
    m.drift = parse_coefficient(drift, "--drift");
    m.diffusion = parse_coefficient(diffusion, "--diffusion");
    if (!std::isfinite(x0)) throw ValidationError("--x0 must be finite");
    m.x0 = x0;
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("--lambda must be finite and >= 0");
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ValidationError("--gamma must be finite and >= 0");
    try {
      m.jumps = JumpSpec{lambda, gamma, JumpLaw::parse(jump_law)};
    } catch (const std::invalid_argument& e) {
      throw ValidationError(std::string("--jump-law: ") + e.what());
    }
    return m;
  }
};

inline void add_model_flags(CLI::App* s, ModelOpts& m, bool with_x0, bool with_intensity) {
  s->add_option("--drift", m.drift, "drift f(x), e.g. \"-0.25*x^3\"")->required();
  s->add_option("--diffusion", m.diffusion, "diffusion g(x)")->required();
  if (with_x0) s->add_option("--x0", m.x0, "initial state");
  if (with_intensity) {
    s->add_option("--lambda", m.lambda, "jump intensity");
    s->add_option("--gamma", m.gamma, "jump scale");
  }
  s->add_option("--jump-law", m.jump_law, "uniform:b | normal:sigma | laplace:b");
}

// ---------------------------------------------------------------- tasks

inline void log_line(bool quiet, const std::string& s) {
  if (!quiet) std::cerr << s << std::endl;
}

struct DensityTask {
  SdeModel model;
  double x = 0.0;
  double dt = 0.5;
  FourierConfig fourier = FourierConfig::analysis();
  int n_mc = 150;
  std::uint64_t seed = 0;
  double lo = 0.0, hi = 1.0;
  int n = 200;
  int hist = 0;
};

struct DensityOut {
  std::string csv;
  std::vector<double> samples;
  std::optional<DensityFit> fit;
};

inline DensityOut run_density(const DensityTask& t, int fit_bins = 0) {
  t.fourier.validate();
  if (t.n < 1) throw ValidationError("grid needs at least one point");
  if (t.n_mc < 1) throw ValidationError("--n-mc must be positive");
  if (t.hist < 0) throw ValidationError("--hist-sim must be >= 0");
  if (!(t.dt > 0.0)) throw ValidationError("--dt must be positive");
  Rng rng = make_stream(t.seed, {stream::kConfigs});
  const OneStepLaw law = sample_step_law(t.x, t.model, t.dt, t.n_mc, rng);
  const FourierInverter inv([&](cplx u) { return law.cf(u); }, t.fourier);
  DensityOut out;
  if (t.hist > 0) out.samples = simulate_observations(t.x, t.model, t.dt, t.hist, t.seed);
  const double step = t.n > 1 ? (t.hi - t.lo) / (t.n - 1) : 0.0;
  std::vector<double> hist(static_cast<std::size_t>(t.n), 0.0);
  if (t.hist > 0 && t.n > 1) {
    for (double v : out.samples) {
      const double k = std::floor((v - t.lo) / step + 0.5);
      if (k >= 0 && k < t.n) hist[static_cast<std::size_t>(k)] += 1.0;
    }
    for (double& h : hist) h /= static_cast<double>(t.hist) * step;
  }
  out.csv = t.hist > 0 ? "x,density,hist\n" : "x,density\n";
  for (int k = 0; k < t.n; ++k) {
    const double x = t.lo + k * step;
    out.csv += num(x) + "," + num(inv(x));
    if (t.hist > 0) out.csv += "," + num(hist[static_cast<std::size_t>(k)]);
    out.csv += "\n";
  }
  if (fit_bins > 0 && t.hist > 1) out.fit = density_fit([&](double y) { return inv(y); }, out.samples, fit_bins);
  return out;
}

inline std::string loss_trace_csv(const TrainReport& r) {
  std::string s = "phase,loss,index,value\n";
  auto put = [&](int phase, const char* name, const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i)
      s += std::to_string(phase) + "," + name + "," + std::to_string(i) + "," + num(v[i]) + "\n";
  };
  put(1, "D2", r.phase1_d2);
  put(1, "D2_epoch_mean", r.phase1_epoch_mean);
  put(2, "L1", r.phase2_l1);
  put(2, "L2", r.phase2_l2);
  put(3, "L3+L4", r.phase3_l34);
  put(3, "L2", r.phase3_l2);
  put(3, "mean_H", r.phase3_mean_h);
  return s;
}

inline json run_training(const TrainData& data, const TrainConfig& cfg, const std::optional<Truth>& truth,
                         const std::filesystem::path& dir, Outputs& out, bool quiet) {
  const auto t0 = std::chrono::steady_clock::now();
  auto [nets, report] = train_full(data, cfg, truth, [&](const std::string& s) { log_line(quiet, "[train] " + s); });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  log_line(quiet, "[train] finished in " + num(secs) + " s");
  const json meta = {{"config", cfg.to_json()}};
  out.add_json(dir / "f_net.json", nets.f.to_json(meta));
  out.add_json(dir / "g_net.json", nets.g.to_json(meta));
  out.add(dir / "loss_trace.csv", loss_trace_csv(report));
  json rep = report.to_json(false);
  rep.erase("phase1");
  rep.erase("phase2");
  rep.erase("phase3");
  rep["phase1_clamped"] = report.clamped_phase1;
  rep["config"] = cfg.to_json();
  return rep;
}

struct MhTask {
  std::string algorithm = "likelihood";
  std::vector<double> obs;
  double x = 0.0;
  double dt = 0.5;
  SdeModel model;
  MhConfig mh;
  FourierConfig fourier = FourierConfig::training();
  int n_mc = -1;  // -1: 200 for the likelihood, 4000 for the discriminator
  int nm_pool = 4000;
  std::optional<std::array<double, 2>> init;
  std::uint64_t seed = 0;
};

inline json run_mh(MhTask t, const std::filesystem::path& dir, Outputs& out, bool quiet) {
  const bool lik = t.algorithm == "likelihood";
  if (!lik && t.algorithm != "discriminator") throw ValidationError("--algorithm must be likelihood or discriminator");
  if (t.obs.empty()) throw ValidationError("no observations");
  if (!(t.dt > 0.0)) throw ValidationError("--dt must be positive");
  if (t.n_mc < 0) t.n_mc = lik ? 200 : 4000;
  if (t.n_mc < 1 || t.nm_pool < 1) throw ValidationError("pool sizes must be positive");
  t.fourier.validate();
  json summary;
  if (t.init) {
    t.mh.init = *t.init;
    summary["init_source"] = "user";
  } else {
    t.mh.validate();
    double h = 0.0;
    t.mh.init = nelder_mead_start(t.obs, t.x, t.dt, t.model, t.seed, t.nm_pool, &h);
    summary["init_source"] = "nelder-mead";
    summary["nelder_mead_h"] = h;
    log_line(quiet, "[mh] Nelder-Mead start lambda=" + num(t.mh.init[0]) + " gamma=" + num(t.mh.init[1]));
  }
  t.mh.validate();
  const MhChain chain = lik ? mh_likelihood(t.obs, t.x, t.dt, t.model, t.mh, t.fourier, t.n_mc, t.seed)
                            : mh_discriminator(t.obs, t.x, t.dt, t.model, t.mh, t.n_mc, t.seed);
  const ChainSummary s = chain.summarize(t.mh.burn());
  std::string csv = "iter,lambda,gamma,accepted\n";
  for (std::size_t i = 0; i < chain.lambda.size(); ++i)
    csv += std::to_string(i + 1) + "," + num(chain.lambda[i]) + "," + num(chain.gamma[i]) + "," +
           (chain.accepted[i] ? "1" : "0") + "\n";
  out.add(dir / "chain.csv", csv);
  summary["algorithm"] = t.algorithm;
  summary["m"] = t.mh.m;
  summary["burn_in"] = s.burn_in;
  summary["sigma1"] = t.mh.sigma1;
  summary["sigma2"] = t.mh.sigma2;
  if (!lik) summary["theta"] = t.mh.theta;
  summary["n_mc"] = t.n_mc;
  summary["n_obs"] = t.obs.size();
  summary["seed"] = t.seed;
  summary["init"] = t.mh.init;
  summary["lambda_mean"] = s.lambda_mean;
  summary["gamma_mean"] = s.gamma_mean;
  summary["lambda_ci"] = s.lambda_ci;
  summary["gamma_ci"] = s.gamma_ci;
  summary["acceptance"] = s.acceptance;
  if (lik) summary["clamped"] = chain.clamped;
  out.add_json(dir / "summary.json", summary);
  return summary;
}

struct ConvergenceTask {
  SdeModel model;
  double T = 1.0;
  std::vector<std::size_t> levels{64, 128, 256, 512, 1024};
  std::size_t reference = 16384;
  std::size_t k_mc = 2000;
  std::uint64_t seed = 0;
};

inline json run_convergence(const ConvergenceTask& t) {
  if (!(t.T > 0.0)) throw ValidationError("--T must be positive");
  if (t.k_mc < 1) throw ValidationError("--k-mc must be positive");
  const auto r = convergence_slope(t.model, t.T, t.levels, t.reference, t.k_mc, t.seed);
  return {{"slope", r.slope}, {"levels", r.levels}, {"rms_error", r.rms_error}, {"reference_steps", t.reference},
          {"k_mc", t.k_mc}, {"T", t.T}, {"seed", t.seed}};
}

// ---------------------------------------------------------------- recipes

struct TrainRecipe {
  const char* drift;
  const char* diffusion;
  JumpSpec jumps;
};

inline const std::map<std::string, TrainRecipe>& train_recipes() {
  static const std::map<std::string, TrainRecipe> r = {
      {"table1-row1", {"-0.25*x^3", "0.57*x", {}}},
      {"table1-row2", {"0.15*(x - x^5)", "0.32*sin(x)", {}}},
      {"table1-row3", {"1 - x", "1", {}}},
      {"table1-row4", {"sin(x)", "1", {}}},
      {"table2-row1", {"1 - x", "0.31*x", {1.2, 0.8, JumpLaw::uniform(0.1)}}},
      {"table2-row2", {"0.28*(x - x^3)", "1", {1.7, 0.31, JumpLaw::normal(std::sqrt(0.12))}}},
      {"table2-row3", {"cos(x)", "1", {0.5, 1.47, JumpLaw::laplace(0.1)}}},
  };
  return r;
}

inline std::vector<std::string> recipe_names() {
  std::vector<std::string> v{"fig1", "fig5", "fig6"};
  for (const auto& [k, _] : train_recipes()) v.push_back(k);
  v.insert(v.end(), {"appC-alg1", "appC-alg2", "convergence"});
  return v;
}

struct RecipeOpts {
  std::string name;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool quick = false;
  std::optional<int> epoch2;
};

inline void run_recipe(const RecipeOpts& o, Outputs& out, bool quiet) {
  const std::filesystem::path dir = o.out_dir;
  json report = {{"recipe", o.name}, {"seed", o.seed}, {"scale", o.quick ? "quick" : "full"}};

  if (o.name == "fig1") {
    SdeModel m{Coefficient::parse("-0.25*x^3"), Coefficient::parse("0.57*x"), 1.5, {}};
    const PathSet ps = simulate_paths(m, 5.0, 1000, 10, o.seed, 100);
    out.add(dir / "paths.csv", paths_csv(ps));
    report.update({{"drift", m.drift.label}, {"diffusion", m.diffusion.label}, {"x0", 1.5}, {"T", 5.0}, {"N", 1000},
                   {"K", 10}});
  } else if (o.name == "fig5" || o.name == "fig6") {
    DensityTask t;
    if (o.name == "fig5")
      t.model = {Coefficient::parse("0.17*(x - x^3)"), Coefficient::parse("0.76*(1 + cos(x))"), 2.3,
                 {0.94, 0.8, JumpLaw::uniform(0.1)}};
    else
      t.model = {Coefficient::parse("1 - x"), Coefficient::parse("0.84*(1 + sin(x))"), 2.3,
                 {0.81, 0.25, JumpLaw::normal(1.0)}};
    t.x = 2.3;
    t.dt = 0.5;
    t.seed = o.seed;
    t.hist = o.quick ? 10000 : 100000;
    // grid over the central part of the sampled law
    std::vector<double> probe = simulate_observations(t.x, t.model, t.dt, t.hist, o.seed);
    std::sort(probe.begin(), probe.end());
    t.lo = probe[probe.size() / 1000];
    t.hi = probe[probe.size() - 1 - probe.size() / 1000];
    t.n = 200;
    const DensityOut d = run_density(t, 60);
    out.add(dir / "density.csv", d.csv);
    report.update({{"x", t.x}, {"dt", t.dt}, {"M", t.fourier.M}, {"h", t.fourier.h}, {"a", t.fourier.a},
                   {"n_mc", t.n_mc}, {"hist_samples", t.hist}, {"integral", d.fit->integral},
                   {"tv_60_bins", d.fit->tv}});
  } else if (train_recipes().count(o.name)) {
    const TrainRecipe& r = train_recipes().at(o.name);
    SdeModel m{Coefficient::parse(r.drift), Coefficient::parse(r.diffusion), 1.5, r.jumps};
    const PathSet ps = simulate_paths(m, 5.0, 1000, 10, o.seed, 100);
    TrainConfig cfg;
    cfg.seeds = TrainSeeds::from_master(o.seed);
    if (o.quick) {
      cfg.epoch0 = 1;
      cfg.epoch1 = 1;
      cfg.epoch2 = 1;
      cfg.n_mc_var = 20;
      cfg.n_mc_cf = 10;
    }
    if (o.epoch2) cfg.epoch2 = *o.epoch2;
    out.add(dir / "paths.csv", paths_csv(ps));
    const json rep = run_training({ps, r.jumps}, cfg, Truth{m.drift, m.diffusion}, dir, out, quiet);
    report.update(rep);
    report.update({{"drift", m.drift.label},
                   {"diffusion", m.diffusion.label},
                   {"lambda", r.jumps.lambda},
                   {"gamma", r.jumps.gamma},
                   {"jump_law", r.jumps.law.str()}});
  } else if (o.name == "appC-alg1" || o.name == "appC-alg2") {
    const auto setup = EstimationSetup::standard();
    MhTask t;
    t.algorithm = o.name == "appC-alg1" ? "likelihood" : "discriminator";
    t.obs = simulate_observations(setup.x, setup.model, setup.dt, setup.n_obs, o.seed);
    t.x = setup.x;
    t.dt = setup.dt;
    t.model = setup.model;
    t.seed = o.seed;
    t.mh.m = o.name == "appC-alg1" ? 1000 : 10000;
    if (o.quick) {
      t.mh.m = 40;
      t.n_mc = 20;
      t.nm_pool = 50;
    }
    out.add(dir / "obs.csv", column_csv("x_next", t.obs));
    const json s = run_mh(t, dir, out, quiet);
    report.update(s);
    report["truth"] = {{"lambda", 1.7}, {"gamma", 2.4}};
  } else if (o.name == "convergence") {
    ConvergenceTask t;
    t.model = {Coefficient::parse("-x"), Coefficient::parse("0.5*x"), 1.0, {}};
    t.seed = o.seed;
    if (o.quick) t.k_mc = 50;
    report.update(run_convergence(t));
  } else {
    std::string names;
    for (const auto& n : recipe_names()) names += " " + n;
    throw ValidationError("unknown recipe '" + o.name + "'; available:" + names);
  }
  out.add_json(dir / "report.json", report);
}

// ---------------------------------------------------------------- entry

// Flattens a JSON run config into long flags placed ahead of the command-line
// arguments, so explicit flags win. A nested "model" object is allowed.
inline std::vector<std::string> config_args(const json& j, const CLI::App* sub) {
  if (!j.is_object()) throw ValidationError("run config must be a JSON object");
  std::vector<std::string> args;
  auto put = [&](const std::string& key, const json& v) {
    const std::string flag = "--" + key;
    if (key == "run-config" || sub->get_option_no_throw(flag) == nullptr)
      throw ValidationError("unknown config key '" + key + "' for '" + sub->get_name() + "'");
    if (v.is_boolean()) {
      if (v.get<bool>()) args.push_back(flag);
      return;
    }
    args.push_back(flag);
    if (v.is_string())
      args.push_back(v.get<std::string>());
    else if (v.is_number_integer() || v.is_number_unsigned())
      args.push_back(v.dump());
    else if (v.is_number())
      args.push_back(num(v.get<double>()));
    else
      throw ValidationError("config key '" + key + "' must be a string, number or boolean");
  };
  for (const auto& [key, v] : j.items()) {
    if (key == "model") {
      if (!v.is_object()) throw ValidationError("config key 'model' must be an object");
      for (const auto& [mk, mv] : v.items()) put(mk, mv);
    } else {
      put(key, v);
    }
  }
  return args;
}

inline int run(int argc, const char* const* argv) {
  CLI::App app{"Jump-diffusion SDE simulation, density and estimation toolkit", "jumpsde"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress progress messages");
  std::string run_config;

  ModelOpts model;
  std::uint64_t seed = 0;
  std::string out_path, out_dir;

  auto* sim = app.add_subcommand("simulate", "simulate paths with the tamed Milstein scheme");
  double T = 1.0;
  std::size_t N = 1000, K = 1, block = 0;
  add_model_flags(sim, model, true, true);
  sim->add_option("--T", T, "time horizon");
  sim->add_option("--N", N, "grid points per path");
  sim->add_option("--K", K, "number of paths");
  sim->add_option("--seed", seed);
  sim->add_option("--block-size", block, "block size (default N)");
  sim->add_option("--out", out_path, "output CSV")->required();

  double x = 0.0, dt = 0.5;
  int n_mc = -1;
  auto* mom = app.add_subcommand("moments", "conditional mean and variance of one step");
  add_model_flags(mom, model, false, true);
  mom->add_option("--x", x)->required();
  mom->add_option("--dt", dt)->required();
  mom->add_option("--n-mc", n_mc, "jump configurations (default 400)");
  mom->add_option("--seed", seed);
  mom->add_option("--out", out_path, "also write the JSON here");

  double umax = 20.0;
  int n_points = 201;
  auto* cf = app.add_subcommand("cf", "one-step characteristic function on a real grid");
  add_model_flags(cf, model, false, true);
  cf->add_option("--x", x)->required();
  cf->add_option("--dt", dt)->required();
  cf->add_option("--umax", umax);
  cf->add_option("--n-points", n_points);
  cf->add_option("--n-mc", n_mc, "jump configurations (default 150)");
  cf->add_option("--seed", seed);
  cf->add_option("--out", out_path)->required();

  DensityTask dtask;
  std::string grid;
  auto* den = app.add_subcommand("density", "Fourier-inverted one-step density");
  den->set_help_flag("--help", "print this help message and exit");
  add_model_flags(den, model, false, true);
  den->add_option("--x0-state", dtask.x, "conditioning state X_t")->required();
  den->add_option("--dt", dtask.dt);
  den->add_option("--M", dtask.fourier.M);
  den->add_option("--h", dtask.fourier.h);
  den->add_option("--a", dtask.fourier.a);
  den->add_option("--n-mc", dtask.n_mc);
  den->add_option("--grid", grid, "lo:hi:n")->required();
  den->add_option("--hist-sim", dtask.hist, "simulated steps for a histogram column");
  den->add_option("--seed", seed);
  den->add_option("--out", out_path)->required();

  std::string paths_file, config_file, truth_drift, truth_diffusion;
  std::size_t train_block = 100;
  auto* tr = app.add_subcommand("train", "three-phase network training on observed paths");
  tr->add_option("--paths", paths_file, "paths CSV (path,t,x)")->required();
  tr->add_option("--config", config_file, "training config JSON");
  tr->add_option("--truth-drift", truth_drift);
  tr->add_option("--truth-diffusion", truth_diffusion);
  tr->add_option("--block-size", train_block);
  tr->add_option("--lambda", model.lambda);
  tr->add_option("--gamma", model.gamma);
  tr->add_option("--jump-law", model.jump_law);
  tr->add_option("--seed", seed)->required();
  tr->add_option("--out-dir", out_dir)->required();

  MhTask mtask;
  std::string obs_file;
  std::vector<double> init;
  auto* mh = app.add_subcommand("mh", "Metropolis-Hastings estimation of lambda and gamma");
  mh->set_help_flag("--help", "print this help message and exit");
  add_model_flags(mh, model, false, false);
  mh->add_option("--algorithm", mtask.algorithm, "likelihood | discriminator");
  mh->add_option("--obs", obs_file, "one column of X_{t+dt} values")->required();
  mh->add_option("--x", mtask.x)->required();
  mh->add_option("--dt", mtask.dt)->required();
  int m_steps = -1;
  mh->add_option("--m", m_steps, "chain length (default 1000 / 10000)");
  mh->add_option("--sigma1", mtask.mh.sigma1);
  mh->add_option("--sigma2", mtask.mh.sigma2);
  mh->add_option("--theta", mtask.mh.theta);
  mh->add_option("--burn-in", mtask.mh.burn_in, "default m/5");
  mh->add_option("--n-mc", mtask.n_mc, "jump pool size (default 200 / 4000)");
  mh->add_option("--nm-pool", mtask.nm_pool);
  mh->add_option("--init", init, "lambda,gamma (default: Nelder-Mead)")->delimiter(',')->expected(2);
  mh->add_option("--M", mtask.fourier.M);
  mh->add_option("--h", mtask.fourier.h);
  mh->add_option("--a", mtask.fourier.a);
  mh->add_option("--seed", seed)->required();
  mh->add_option("--out-dir", out_dir)->required();

  ConvergenceTask ctask;
  std::string levels;
  auto* conv = app.add_subcommand("convergence", "empirical strong order of the jump-free scheme");
  add_model_flags(conv, model, true, false);
  conv->add_option("--T", ctask.T);
  conv->add_option("--levels", levels, "comma-separated step counts (default 64,...,1024)");
  conv->add_option("--reference", ctask.reference);
  conv->add_option("--k-mc", ctask.k_mc);
  conv->add_option("--seed", seed);
  conv->add_option("--out", out_path)->required();

  RecipeOpts ropts;
  int epoch2 = -1;
  auto* rep = app.add_subcommand("reproduce", "run a named experiment end to end");
  rep->add_option("recipe", ropts.name, "recipe name")->required();
  rep->add_option("--seed", ropts.seed)->required();
  rep->add_option("--out-dir", ropts.out_dir)->required();
  rep->add_flag("--quick", ropts.quick, "small-scale variant for smoke and determinism checks");
  rep->add_option("--epoch2", epoch2, "override the Phase 3 epoch count");

  for (auto* s : app.get_subcommands({}))
    if (s != rep) s->add_option("--run-config", run_config, "JSON file with flag values; explicit flags win");

  // Splice a --run-config file in ahead of the explicit flags.
  std::vector<std::string> args(argv + 1, argv + argc);
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] != "--run-config" || args.empty()) continue;
    CLI::App* sub = nullptr;
    for (auto* s : app.get_subcommands({}))
      if (s->get_name() == args[0]) sub = s;
    if (!sub) break;
    try {
      const auto extra = config_args(read_json(args[i + 1]), sub);
      args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
      args.insert(args.begin() + 1, extra.begin(), extra.end());
    } catch (const ValidationError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
    break;
  }
  std::vector<const char*> cargs{argv[0]};
  for (const auto& a : args) cargs.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    Outputs out;
    if (*sim) {
      const SdeModel m = model.build();
      const PathSet ps = simulate_paths(m, T, N, K, seed, block == 0 ? N : block);
      out.add(out_path, paths_csv(ps));
    } else if (*mom) {
      const SdeModel m = model.build();
      if (!(dt > 0.0)) throw ValidationError("--dt must be positive");
      if (n_mc < 0) n_mc = 400;
      if (n_mc < 1) throw ValidationError("--n-mc must be positive");
      Rng rng = make_stream(seed, {stream::kConfigs});
      const MomentEstimate e = cond_moments(x, m, dt, n_mc, rng);
      const json j = {{"mean", e.mean}, {"variance", e.variance}, {"mc_samples", e.mc_samples}};
      std::cout << j.dump(2) << "\n";
      if (!out_path.empty()) out.add_json(out_path, j);
    } else if (*cf) {
      const SdeModel m = model.build();
      if (!(dt > 0.0)) throw ValidationError("--dt must be positive");
      if (n_points < 2) throw ValidationError("--n-points must be at least 2");
      if (!(umax > 0.0)) throw ValidationError("--umax must be positive");
      if (n_mc < 0) n_mc = 150;
      if (n_mc < 1) throw ValidationError("--n-mc must be positive");
      Rng rng = make_stream(seed, {stream::kConfigs});
      const OneStepLaw law = sample_step_law(x, m, dt, n_mc, rng);
      std::string csv = "u_re,u_im,phi_re,phi_im\n";
      for (int k = 0; k < n_points; ++k) {
        const double u = -umax + 2.0 * umax * k / (n_points - 1);
        const cplx p = law.cf(u);
        csv += num(u) + ",0," + num(p.real()) + "," + num(p.imag()) + "\n";
      }
      out.add(out_path, csv);
    } else if (*den) {
      dtask.model = model.build();
      const auto g = split(grid, ':');
      if (g.size() != 3) throw ValidationError("--grid must look like lo:hi:n");
      dtask.lo = parse_double(g[0], "--grid lo");
      dtask.hi = parse_double(g[1], "--grid hi");
      dtask.n = static_cast<int>(parse_double(g[2], "--grid n"));
      if (!(dtask.hi > dtask.lo) || dtask.n < 2) throw ValidationError("--grid needs lo < hi and n >= 2");
      dtask.seed = seed;
      out.add(out_path, run_density(dtask).csv);
    } else if (*tr) {
      const SdeModel jm = [&] {
        ModelOpts mo = model;
        mo.drift = mo.diffusion = "0";
        return mo.build();
      }();
      const PathSet ps = read_paths_csv(paths_file, train_block);
      TrainConfig cfg;
      json cj = json::object();
      if (!config_file.empty()) {
        cj = read_json(config_file);
        cfg = TrainConfig::from_json(cj);
      }
      if (cj.contains("seed") && cj["seed"].get<std::uint64_t>() != seed)
        throw ValidationError("config seed differs from --seed");
      if (!cj.contains("seeds")) cfg.seeds = TrainSeeds::from_master(seed);
      if (truth_drift.empty() != truth_diffusion.empty())
        throw ValidationError("--truth-drift and --truth-diffusion go together");
      std::optional<Truth> truth;
      if (!truth_drift.empty())
        truth = Truth{parse_coefficient(truth_drift, "--truth-drift"),
                      parse_coefficient(truth_diffusion, "--truth-diffusion")};
      const json r = run_training({ps, jm.jumps}, cfg, truth, out_dir, out, quiet);
      out.add_json(std::filesystem::path(out_dir) / "report.json", r);
    } else if (*mh) {
      mtask.model = model.build();
      mtask.obs = read_column_csv(obs_file);
      mtask.seed = seed;
      mtask.mh.m = m_steps > 0 ? m_steps : (mtask.algorithm == "discriminator" ? 10000 : 1000);
      if (m_steps == 0 || m_steps < -1) throw ValidationError("--m must be positive");
      if (!init.empty()) mtask.init = std::array<double, 2>{init[0], init[1]};
      run_mh(mtask, out_dir, out, quiet);
    } else if (*conv) {
      ctask.model = model.build();
      ctask.seed = seed;
      if (!levels.empty()) {
        ctask.levels.clear();
        for (const auto& s : split(levels, ',')) {
          const double v = parse_double(s, "--levels");
          if (!(v >= 1.0)) throw ValidationError("--levels entries must be positive");
          ctask.levels.push_back(static_cast<std::size_t>(v));
        }
      }
      out.add_json(out_path, run_convergence(ctask));
    } else if (*rep) {
      if (epoch2 >= 0) ropts.epoch2 = epoch2;
      run_recipe(ropts, out, quiet);
    }
    out.commit();
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

inline int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"jumpsde"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace jumpsde::cli
