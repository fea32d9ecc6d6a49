#pragma once

// Reproducible benchmark runner behind the CLI: flat key-value configs,
// replicated experiments fanned out over worker threads with
// stream-id-ordered reduction, and fixed-schema CSV + JSON outputs that are
// byte-identical for a given config and seed regardless of worker count.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "neo/continuous.hpp"
#include "neo/core.hpp"
#include "neo/estimators.hpp"
#include "neo/mcmc.hpp"
#include "neo/orbit.hpp"
#include "neo/targets.hpp"
#include "neo/transforms.hpp"

namespace neo::bench {

inline constexpr int schema_version = 1;

struct ConfigError : std::runtime_error {
  std::string key;
  ConfigError(std::string key_, const std::string& msg)
      : std::runtime_error("config error: " + key_ + ": " + msg), key(std::move(key_)) {}
};

struct RunConfig {
  std::string experiment;  // estimate-z | sample | efficiency-curve | converge-h | neis-compare

  // target
  std::string target = "mg25";  // mg25 | funnel | cauchy | gaussian-l-1d
  int dim = 10;
  double sigma2_rho = 5.0;
  double mg25_cov = 0.0;  // > 0 overrides every covariance entry
  double funnel_a = 1.0;
  double funnel_b = 0.5;
  double cauchy_mu = 5.0;
  double cauchy_sigma = 1.0;

  // transform
  double gamma = 1.0;
  double h = 0.1;
  int k_window = 10;
  double mass_scale = 5.0;

  // estimator
  std::string method;  // experiment dependent
  long n_samples = 50000;
  int replicates = 1;

  // chain
  int n_proposals = 10;
  std::string proposal_mode = "independent";  // independent | autoregressive
  double alpha = 0.99;
  long n_iters = 100000;
  long thin = 1;

  // converge-h / efficiency-curve / neis-compare
  std::vector<double> h_values{0.2, 0.1, 0.05, 0.025};
  double window_t = 1.0;
  double start_q = 1.0;
  double start_p = 0.5;
  std::vector<int> k_values{0, 1, 2, 5, 10};
  std::vector<double> gamma_values{0.1, 1.0, 2.0};
  std::vector<double> neis_steps{0.1, 0.05, 0.025};
  double time_cap = 10.0;
  double energy_max = 0.0;  // > 0 switches the exit set to an energy ball

  // run control
  std::uint64_t seed = 0;
  int workers = 1;
  std::string out = "run";
  bool timing = false;
};

namespace detail {

inline std::string format_double(double v) {
  if (std::isnan(v)) throw std::runtime_error("refusing to serialize NaN");
  if (v == pos_inf) return "inf";
  if (v == neg_inf) return "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline nlohmann::ordered_json json_double(double v) {
  if (!std::isfinite(v)) return detail::format_double(v);  // JSON has no inf
  return v;
}

template <typename T>
inline T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* begin = text.data();
  const char* end = begin + text.size();
  std::from_chars_result res{};
  if constexpr (std::is_floating_point_v<T>)
    res = std::from_chars(begin, end, value);
  else
    res = std::from_chars(begin, end, value, 10);
  if (res.ec != std::errc{} || res.ptr != end)
    throw ConfigError(key, "expected a number, got '" + text + "'");
  return value;
}

template <typename T>
inline std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(parse_number<T>(key, item));
  if (out.empty()) throw ConfigError(key, "expected a comma-separated list");
  return out;
}

}  // namespace detail

// Applies one key=value pair; unknown keys are rejected by name.
inline void apply_key(RunConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_list;
  using detail::parse_number;
  if (key == "experiment") c.experiment = value;
  else if (key == "target") c.target = value;
  else if (key == "dim") c.dim = parse_number<int>(key, value);
  else if (key == "sigma2_rho") c.sigma2_rho = parse_number<double>(key, value);
  else if (key == "mg25_cov") c.mg25_cov = parse_number<double>(key, value);
  else if (key == "funnel_a") c.funnel_a = parse_number<double>(key, value);
  else if (key == "funnel_b") c.funnel_b = parse_number<double>(key, value);
  else if (key == "cauchy_mu") c.cauchy_mu = parse_number<double>(key, value);
  else if (key == "cauchy_sigma") c.cauchy_sigma = parse_number<double>(key, value);
  else if (key == "gamma") c.gamma = parse_number<double>(key, value);
  else if (key == "h") c.h = parse_number<double>(key, value);
  else if (key == "K") c.k_window = parse_number<int>(key, value);
  else if (key == "mass_scale") c.mass_scale = parse_number<double>(key, value);
  else if (key == "method") c.method = value;
  else if (key == "n_samples") c.n_samples = parse_number<long>(key, value);
  else if (key == "replicates") c.replicates = parse_number<int>(key, value);
  else if (key == "N") c.n_proposals = parse_number<int>(key, value);
  else if (key == "proposal_mode") c.proposal_mode = value;
  else if (key == "alpha") c.alpha = parse_number<double>(key, value);
  else if (key == "n_iters") c.n_iters = parse_number<long>(key, value);
  else if (key == "thin") c.thin = parse_number<long>(key, value);
  else if (key == "h_values") c.h_values = parse_list<double>(key, value);
  else if (key == "window_t") c.window_t = parse_number<double>(key, value);
  else if (key == "start_q") c.start_q = parse_number<double>(key, value);
  else if (key == "start_p") c.start_p = parse_number<double>(key, value);
  else if (key == "k_values") c.k_values = parse_list<int>(key, value);
  else if (key == "gamma_values") c.gamma_values = parse_list<double>(key, value);
  else if (key == "neis_steps") c.neis_steps = parse_list<double>(key, value);
  else if (key == "time_cap") c.time_cap = parse_number<double>(key, value);
  else if (key == "energy_max") c.energy_max = parse_number<double>(key, value);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "workers") c.workers = parse_number<int>(key, value);
  else if (key == "out") c.out = value;
  else if (key == "timing") c.timing = (value == "1" || value == "true");
  else throw ConfigError(key, "unknown config key");
}

inline RunConfig parse_config_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("<root>", "config must be a flat JSON object");
  auto number_text = [](const std::string& key, const nlohmann::json& val) {
    if (val.is_number_integer()) return std::to_string(val.get<long long>());
    if (val.is_number_unsigned()) return std::to_string(val.get<unsigned long long>());
    if (val.is_number()) return detail::format_double(val.get<double>());
    throw ConfigError(key, "expected a number");
  };
  RunConfig c;
  for (const auto& [key, val] : j.items()) {
    std::string text;
    if (val.is_string()) text = val.get<std::string>();
    else if (val.is_boolean()) text = val.get<bool>() ? "1" : "0";
    else if (val.is_number()) text = number_text(key, val);
    else if (val.is_array()) {
      std::string acc;
      for (const auto& item : val) {
        if (!acc.empty()) acc += ",";
        acc += number_text(key, item);
      }
      text = acc;
    } else {
      throw ConfigError(key, "unsupported value type");
    }
    apply_key(c, key, text);
  }
  return c;
}

inline void validate(const RunConfig& c) {
  const std::vector<std::string> experiments{"estimate-z", "sample", "efficiency-curve",
                                             "converge-h", "neis-compare"};
  if (std::find(experiments.begin(), experiments.end(), c.experiment) == experiments.end())
    throw ConfigError("experiment", "expected one of estimate-z|sample|efficiency-curve|"
                                    "converge-h|neis-compare");
  const std::vector<std::string> targets{"mg25", "funnel", "cauchy", "gaussian-l-1d"};
  if (std::find(targets.begin(), targets.end(), c.target) == targets.end())
    throw ConfigError("target", "unknown target '" + c.target + "'");
  if (c.target == "mg25" && c.dim < 2) throw ConfigError("dim", "mg25 needs dim >= 2");
  if (c.target == "funnel" && c.dim < 2) throw ConfigError("dim", "funnel needs dim >= 2");
  if (c.dim < 1) throw ConfigError("dim", "must be >= 1");
  if (!(c.sigma2_rho > 0.0)) throw ConfigError("sigma2_rho", "must be > 0");
  if (!(c.gamma > 0.0)) throw ConfigError("gamma", "must be > 0");
  if (!(c.h > 0.0)) throw ConfigError("h", "must be > 0");
  if (c.k_window < 0) throw ConfigError("K", "must be >= 0");
  if (!(c.mass_scale > 0.0)) throw ConfigError("mass_scale", "must be > 0");
  if (c.n_samples < 1) throw ConfigError("n_samples", "must be >= 1");
  if (c.replicates < 1) throw ConfigError("replicates", "must be >= 1");
  if (c.workers < 0) throw ConfigError("workers", "must be >= 0");
  if (c.thin < 1) throw ConfigError("thin", "must be >= 1");
  if (c.n_iters < 0) throw ConfigError("n_iters", "must be >= 0");

  if (c.experiment == "estimate-z") {
    const std::vector<std::string> methods{"neo-is", "plain-is", "neo-snis"};
    if (std::find(methods.begin(), methods.end(), c.method) == methods.end())
      throw ConfigError("method", "expected neo-is|plain-is|neo-snis");
  } else if (c.experiment == "sample") {
    const std::vector<std::string> methods{"neo-mcmc", "isir"};
    if (std::find(methods.begin(), methods.end(), c.method) == methods.end())
      throw ConfigError("method", "expected neo-mcmc|isir");
    if (c.n_proposals < 2) throw ConfigError("N", "must be >= 2");
    if (c.proposal_mode != "independent" && c.proposal_mode != "autoregressive")
      throw ConfigError("proposal_mode", "expected independent|autoregressive");
    if (c.proposal_mode == "autoregressive" && !(c.alpha > 0.0 && c.alpha < 1.0))
      throw ConfigError("alpha", "must be in (0,1)");
  } else if (c.experiment == "converge-h") {
    if (c.h_values.empty()) throw ConfigError("h_values", "must not be empty");
    for (double h : c.h_values) {
      if (!(h > 0.0)) throw ConfigError("h_values", "steps must be > 0");
      const double ratio = c.window_t / h;
      if (std::abs(ratio - std::lround(ratio)) > 1e-9)
        throw ConfigError("h_values", "window_t must be an integer multiple of every step");
    }
    if (!(c.window_t > 0.0)) throw ConfigError("window_t", "must be > 0");
  } else if (c.experiment == "efficiency-curve") {
    for (int k : c.k_values)
      if (k < 0) throw ConfigError("k_values", "entries must be >= 0");
    for (double g : c.gamma_values)
      if (!(g > 0.0)) throw ConfigError("gamma_values", "entries must be > 0");
  } else if (c.experiment == "neis-compare") {
    for (double s : c.neis_steps)
      if (!(s > 0.0)) throw ConfigError("neis_steps", "entries must be > 0");
    if (!(c.time_cap > 0.0)) throw ConfigError("time_cap", "must be > 0");
  }
}

// Canonical echo of the effective configuration, keys sorted.
inline nlohmann::ordered_json canonical_config(const RunConfig& c) {
  std::map<std::string, nlohmann::json> kv;
  kv["experiment"] = c.experiment;
  kv["target"] = c.target;
  kv["dim"] = c.dim;
  kv["sigma2_rho"] = c.sigma2_rho;
  kv["mg25_cov"] = c.mg25_cov;
  kv["funnel_a"] = c.funnel_a;
  kv["funnel_b"] = c.funnel_b;
  kv["cauchy_mu"] = c.cauchy_mu;
  kv["cauchy_sigma"] = c.cauchy_sigma;
  kv["gamma"] = c.gamma;
  kv["h"] = c.h;
  kv["K"] = c.k_window;
  kv["mass_scale"] = c.mass_scale;
  kv["method"] = c.method;
  kv["n_samples"] = c.n_samples;
  kv["replicates"] = c.replicates;
  kv["N"] = c.n_proposals;
  kv["proposal_mode"] = c.proposal_mode;
  kv["alpha"] = c.alpha;
  kv["n_iters"] = c.n_iters;
  kv["thin"] = c.thin;
  kv["h_values"] = c.h_values;
  kv["window_t"] = c.window_t;
  kv["start_q"] = c.start_q;
  kv["start_p"] = c.start_p;
  kv["k_values"] = c.k_values;
  kv["gamma_values"] = c.gamma_values;
  kv["neis_steps"] = c.neis_steps;
  kv["time_cap"] = c.time_cap;
  kv["energy_max"] = c.energy_max;
  kv["seed"] = c.seed;
  // workers deliberately omitted: it schedules the run without affecting
  // any output byte, and artifacts must not depend on it
  kv["out"] = c.out;
  kv["timing"] = c.timing;
  nlohmann::ordered_json out;
  for (const auto& [k, v] : kv) out[k] = v;
  return out;
}

struct EvalCounters {
  std::atomic<long> density{0};
  std::atomic<long> like{0};
  std::atomic<long> grad{0};
  long total() const { return density.load() + like.load() + grad.load(); }
};

inline TargetModel with_counters(const TargetModel& t, EvalCounters& counters) {
  TargetModel out = t;
  out.log_rho = [f = t.log_rho, &counters](const Vec& x) {
    counters.density.fetch_add(1, std::memory_order_relaxed);
    return f(x);
  };
  out.log_like = [f = t.log_like, &counters](const Vec& x) {
    counters.like.fetch_add(1, std::memory_order_relaxed);
    return f(x);
  };
  out.grad_U = [f = t.grad_U, &counters](const Vec& x) {
    counters.grad.fetch_add(1, std::memory_order_relaxed);
    return f(x);
  };
  return out;
}

inline TargetModel build_base_target(const RunConfig& c) {
  if (c.target == "mg25") {
    std::optional<Vec> cov;
    if (c.mg25_cov > 0.0) cov = Vec(static_cast<std::size_t>(c.dim), c.mg25_cov);
    return make_mg25(c.dim, cov, c.sigma2_rho);
  }
  if (c.target == "funnel") return make_funnel(c.dim, c.funnel_a, c.funnel_b, c.sigma2_rho);
  if (c.target == "cauchy")
    return make_cauchy_mixture(c.dim, c.cauchy_mu, c.cauchy_sigma, c.sigma2_rho);
  return make_gaussian_L_1d();
}

struct PhaseSetup {
  TargetModel phase;
  std::shared_ptr<const Transform> transform;
};

inline PhaseSetup build_phase_setup(const RunConfig& c, const TargetModel& base) {
  const Vec mass(static_cast<std::size_t>(base.dim), c.mass_scale);
  PhaseSetup s{make_phase_target(base, mass),
               std::make_shared<ConformalSymplecticEuler>(
                   ConformalParams(c.gamma, c.h, mass), base.grad_U)};
  return s;
}

struct RunArtifacts {
  std::string csv;
  nlohmann::ordered_json summary;
};

namespace detail {

inline void append_csv_row(std::string& csv, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) csv += ',';
    csv += fields[i];
  }
  csv += '\n';
}

inline nlohmann::ordered_json base_summary(const RunConfig& c) {
  nlohmann::ordered_json s;
  s["schema_version"] = schema_version;
  s["experiment"] = c.experiment;
  s["config"] = canonical_config(c);
  return s;
}

inline double median(Vec values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n == 0) return 0.0;
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// estimate-z: replicated normalizing-constant estimation
// ---------------------------------------------------------------------------

inline RunArtifacts run_estimate_z(const RunConfig& c) {
  const TargetModel base = build_base_target(c);
  EvalCounters counters;
  const TargetModel counted_base = with_counters(base, counters);

  struct Row {
    double estimate = 0.0;
    double rel_var = 0.0;
    double wall = 0.0;
    bool degenerate = false;
  };
  std::vector<Row> rows(static_cast<std::size_t>(c.replicates));

  if (c.method == "plain-is") {
    parallel_for(c.replicates, c.workers, [&](long r) {
      RngStream rng(c.seed, static_cast<std::uint64_t>(r));
      const EstimateReport rep = plain_is(counted_base, c.n_samples, rng);
      rows[static_cast<std::size_t>(r)] = {rep.log_z_hat, rep.rel_var_hat, rep.wall_time_s,
                                           rep.degenerate};
    });
  } else {
    const PhaseSetup setup = build_phase_setup(c, counted_base);
    if (c.method == "neo-is") {
      parallel_for(c.replicates, c.workers, [&](long r) {
        RngStream rng(c.seed, static_cast<std::uint64_t>(r));
        const EstimateReport rep =
            neo_is(setup.phase, *setup.transform, uniform_window_weights(c.k_window),
                   c.n_samples, rng);
        rows[static_cast<std::size_t>(r)] = {rep.log_z_hat, rep.rel_var_hat, rep.wall_time_s,
                                             rep.degenerate};
      });
    } else {  // neo-snis with g = tanh of the first coordinate
      auto g = [](const Vec& x) { return std::tanh(x[0]); };
      parallel_for(c.replicates, c.workers, [&](long r) {
        RngStream rng(c.seed, static_cast<std::uint64_t>(r));
        const SnisReport rep = neo_snis(setup.phase, *setup.transform,
                                        uniform_window_weights(c.k_window), g, c.n_samples, rng);
        rows[static_cast<std::size_t>(r)] = {rep.estimate, 0.0, 0.0, false};
      });
    }
  }

  RunArtifacts art;
  art.csv = "experiment,replicate,seed,method,target,dim,gamma,h,K,N,estimate,rel_var,"
            "wall_time_s,degenerate\n";
  Vec z_values;
  for (int r = 0; r < c.replicates; ++r) {
    const Row& row = rows[static_cast<std::size_t>(r)];
    detail::append_csv_row(
        art.csv,
        {c.experiment, std::to_string(r), std::to_string(c.seed), c.method, c.target,
         std::to_string(c.dim), detail::format_double(c.gamma), detail::format_double(c.h),
         std::to_string(c.k_window), std::to_string(c.n_proposals),
         detail::format_double(row.estimate), detail::format_double(row.rel_var),
         detail::format_double(c.timing ? row.wall : 0.0), row.degenerate ? "1" : "0"});
    if (c.method != "neo-snis") z_values.push_back(std::exp(row.estimate));
  }

  art.summary = detail::base_summary(c);
  const long span_points = c.method == "neo-is" || c.method == "neo-snis"
                               ? 2L * c.k_window + 1L
                               : 1L;
  art.summary["budget"] = {
      {"density_evals_analytic", static_cast<long>(c.replicates) * c.n_samples * span_points},
      {"density_evals_counted", counters.density.load()},
      {"like_evals_counted", counters.like.load()},
      {"grad_evals_counted", counters.grad.load()}};
  art.summary["totals"] = {{"replicates", c.replicates}, {"n_samples", c.n_samples}};
  if (!z_values.empty()) {
    double mean = 0.0;
    for (double z : z_values) mean += z;
    mean /= static_cast<double>(z_values.size());
    double var = 0.0;
    for (double z : z_values) var += (z - mean) * (z - mean);
    var = z_values.size() > 1 ? var / static_cast<double>(z_values.size() - 1) : 0.0;
    art.summary["results"] = {{"median_z", detail::json_double(detail::median(z_values))},
                              {"mean_z", detail::json_double(mean)},
                              {"var_z", detail::json_double(var)}};
  }
  return art;
}

// ---------------------------------------------------------------------------
// sample: one chain, thinned output draws plus occupancy diagnostics
// ---------------------------------------------------------------------------

namespace detail {

struct ModeStats {
  Vec occupancy;     // fraction of samples nearest each center
  int visited = 0;   // centers with a sample within radius 0.5
};

inline ModeStats mg25_mode_stats(const std::vector<Vec>& samples) {
  std::vector<std::pair<double, double>> centers;
  for (int i = -2; i <= 2; ++i)
    for (int j = -2; j <= 2; ++j) centers.emplace_back(i, j);
  ModeStats stats;
  stats.occupancy.assign(centers.size(), 0.0);
  std::vector<char> visited(centers.size(), 0);
  for (const Vec& s : samples) {
    double best = pos_inf;
    std::size_t arg = 0;
    for (std::size_t m = 0; m < centers.size(); ++m) {
      const double dx = s[0] - centers[m].first;
      const double dy = s[1] - centers[m].second;
      const double d2 = dx * dx + dy * dy;
      if (d2 < best) {
        best = d2;
        arg = m;
      }
    }
    stats.occupancy[arg] += 1.0;
    if (best <= 0.25) visited[arg] = 1;
  }
  if (!samples.empty())
    for (double& o : stats.occupancy) o /= static_cast<double>(samples.size());
  for (char v : visited) stats.visited += v;
  return stats;
}

}  // namespace detail

inline RunArtifacts run_sample(const RunConfig& c) {
  const TargetModel base = build_base_target(c);
  EvalCounters counters;
  const TargetModel counted_base = with_counters(base, counters);

  const ProposalMode mode = c.proposal_mode == "autoregressive" ? ProposalMode::autoregressive
                                                                : ProposalMode::independent;
  ChainOutput out;
  if (c.method == "neo-mcmc") {
    const PhaseSetup setup = build_phase_setup(c, counted_base);
    const KernelConfig kc(c.n_proposals, uniform_window_weights(c.k_window), setup.transform,
                          mode, c.alpha);
    out = run_chain(std::nullopt, kc, setup.phase, c.n_iters, RngStream(c.seed, 0),
                    RunChainOptions{false, c.thin});
  } else {  // isir on the base target
    const KernelConfig kc(c.n_proposals, WeightSequence::point_mass(),
                          std::make_shared<Identity>(base.dim), mode, c.alpha);
    out = run_chain(std::nullopt, kc, counted_base, c.n_iters, RngStream(c.seed, 0),
                    RunChainOptions{false, c.thin});
  }

  RunArtifacts art;
  const std::size_t sample_dim = out.samples.empty() ? 0 : out.samples.front().size();
  art.csv = "iter";
  for (std::size_t i = 0; i < sample_dim; ++i) art.csv += ",x" + std::to_string(i);
  art.csv += '\n';
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    std::vector<std::string> fields{std::to_string((i + 1) * static_cast<std::size_t>(c.thin))};
    for (double v : out.samples[i]) fields.push_back(detail::format_double(v));
    detail::append_csv_row(art.csv, fields);
  }

  art.summary = detail::base_summary(c);
  art.summary["totals"] = {{"n_iters", c.n_iters},
                           {"recorded_samples", out.samples.size()},
                           {"target_evals_counted", counters.total()}};
  art.summary["chain"] = {{"acceptance_rate", detail::json_double(out.acceptance_rate)},
                          {"stalls", out.stalls}};
  nlohmann::ordered_json ess = nlohmann::ordered_json::array();
  for (double e : out.ess) ess.push_back(detail::json_double(e));
  art.summary["chain"]["ess"] = ess;
  if (c.target == "mg25" && sample_dim >= 2) {
    const detail::ModeStats stats = detail::mg25_mode_stats(out.samples);
    nlohmann::ordered_json occ = nlohmann::ordered_json::array();
    for (double o : stats.occupancy) occ.push_back(detail::json_double(o));
    art.summary["modes"] = {{"occupancy", occ}, {"visited", stats.visited}};
  }
  return art;
}

// ---------------------------------------------------------------------------
// efficiency-curve: second-moment table over (K, gamma)
// ---------------------------------------------------------------------------

inline RunArtifacts run_efficiency_curve(const RunConfig& c) {
  const TargetModel base = build_base_target(c);
  const std::vector<EfficiencyCurveRow> rows = efficiency_curve(
      base, c.h, c.mass_scale, c.k_values, c.gamma_values, c.n_samples, c.seed);

  RunArtifacts art;
  art.csv = "K,gamma,e_hat,m_hat,e_is_ref\n";
  for (const auto& row : rows)
    detail::append_csv_row(art.csv, {std::to_string(row.k), detail::format_double(row.gamma),
                                     detail::format_double(row.e_hat),
                                     detail::format_double(row.m_hat),
                                     detail::format_double(row.e_is_ref)});
  art.summary = detail::base_summary(c);
  art.summary["totals"] = {{"cells", rows.size()}, {"n_samples", c.n_samples}};
  return art;
}

// ---------------------------------------------------------------------------
// converge-h: discrete orbit sums against the continuous limit
// ---------------------------------------------------------------------------

inline RunArtifacts run_converge_h(const RunConfig& c) {
  const TargetModel base = make_gaussian_L_1d();
  const Vec x_phase{c.start_q, c.start_p};
  auto f = [](const Vec& x) { return std::tanh(x[0]); };
  std::vector<double> hs = c.h_values;
  std::sort(hs.begin(), hs.end(), std::greater<>());
  const std::vector<StepsizeErrorRow> rows = stepsize_convergence_table(
      x_phase, base, c.gamma, c.mass_scale, c.window_t, hs, f);

  RunArtifacts art;
  art.csv = "h,discrete,continuous,abs_error,error_ratio\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double ratio = i == 0 ? 0.0 : rows[i - 1].abs_error / rows[i].abs_error;
    detail::append_csv_row(art.csv, {detail::format_double(rows[i].h),
                                     detail::format_double(rows[i].discrete_value),
                                     detail::format_double(rows[i].continuous_value),
                                     detail::format_double(rows[i].abs_error),
                                     detail::format_double(ratio)});
  }
  art.summary = detail::base_summary(c);
  art.summary["totals"] = {{"rows", rows.size()}};
  return art;
}

// ---------------------------------------------------------------------------
// neis-compare: matched-budget discrete vs trajectory estimators
// ---------------------------------------------------------------------------

inline RunArtifacts run_neis_compare(const RunConfig& c) {
  const TargetModel base = build_base_target(c);
  RunArtifacts art;
  art.csv = "method,step,replicate,seed,estimate,rel_var,n_samples,capped\n";
  art.summary = detail::base_summary(c);

  // Discrete orbit estimator and its evaluation budget per replicate.
  EvalCounters neo_counters;
  {
    const TargetModel counted = with_counters(base, neo_counters);
    const PhaseSetup setup = build_phase_setup(c, counted);
    std::vector<EstimateReport> reps(static_cast<std::size_t>(c.replicates));
    parallel_for(c.replicates, c.workers, [&](long r) {
      RngStream rng(c.seed, static_cast<std::uint64_t>(r));
      reps[static_cast<std::size_t>(r)] = neo_is(
          setup.phase, *setup.transform, uniform_window_weights(c.k_window), c.n_samples, rng);
    });
    for (int r = 0; r < c.replicates; ++r)
      detail::append_csv_row(
          art.csv, {"neo-is", detail::format_double(c.h), std::to_string(r),
                    std::to_string(c.seed),
                    detail::format_double(reps[static_cast<std::size_t>(r)].log_z_hat),
                    detail::format_double(reps[static_cast<std::size_t>(r)].rel_var_hat),
                    std::to_string(c.n_samples), "0"});
  }
  const long budget_per_replicate = neo_counters.total() / c.replicates;

  // Plain IS at the same total evaluation budget (one like-eval per draw).
  {
    EvalCounters plain_counters;
    const TargetModel counted = with_counters(base, plain_counters);
    std::vector<EstimateReport> reps(static_cast<std::size_t>(c.replicates));
    parallel_for(c.replicates, c.workers, [&](long r) {
      RngStream rng(c.seed, (1ull << 32) + static_cast<std::uint64_t>(r));
      reps[static_cast<std::size_t>(r)] = plain_is(counted, budget_per_replicate, rng);
    });
    for (int r = 0; r < c.replicates; ++r)
      detail::append_csv_row(
          art.csv, {"plain-is", "0", std::to_string(r), std::to_string(c.seed),
                    detail::format_double(reps[static_cast<std::size_t>(r)].log_z_hat),
                    detail::format_double(reps[static_cast<std::size_t>(r)].rel_var_hat),
                    std::to_string(budget_per_replicate), "0"});
  }

  // Trajectory estimator: per quadrature step, size the sample count from a
  // pilot so each replicate spends the discrete estimator's budget.
  const Vec mass(static_cast<std::size_t>(base.dim), c.mass_scale);
  const TargetModel phase = make_phase_target(base, mass);
  FlowConfig flow_cfg = conformal_flow(base, c.gamma, mass);
  flow_cfg.time_cap = c.time_cap;
  const ExitSet exit_set =
      c.energy_max > 0.0
          ? ExitSet::energy_ball(
                [&base, mass, d = base.dim](const Vec& x) {
                  Vec q(x.begin(), x.begin() + d);
                  double kin = 0.0;
                  for (int i = 0; i < d; ++i) {
                    const double p = x[static_cast<std::size_t>(d + i)];
                    kin += 0.5 * p * p / mass[static_cast<std::size_t>(i)];
                  }
                  const double ll = base.log_like(q);
                  const double lr = base.log_rho(q);
                  return -(ll + lr) + kin;  // U(q) + K(p)
                },
                c.energy_max)
          : ExitSet::all_space();

  nlohmann::ordered_json neis_budget = nlohmann::ordered_json::array();
  for (std::size_t si = 0; si < c.neis_steps.size(); ++si) {
    const double step = c.neis_steps[si];
    EvalCounters pilot_counters;
    const TargetModel counted_phase = with_counters(phase, pilot_counters);
    FlowConfig counted_flow = conformal_flow(with_counters(base, pilot_counters), c.gamma, mass);
    counted_flow.time_cap = c.time_cap;
    const long pilot_n = 8;
    {
      RngStream rng(c.seed, (2ull << 32) + si);
      neis_estimate(counted_phase, counted_flow, exit_set, pilot_n, rng, step);
    }
    const long per_sample = std::max(1L, pilot_counters.total() / pilot_n);
    const long n_neis = std::max(1L, budget_per_replicate / per_sample);

    std::vector<EstimateReport> reps(static_cast<std::size_t>(c.replicates));
    parallel_for(c.replicates, c.workers, [&](long r) {
      RngStream rng(c.seed, (3ull << 32) + si * 100000ull + static_cast<std::uint64_t>(r));
      reps[static_cast<std::size_t>(r)] =
          neis_estimate(phase, flow_cfg, exit_set, n_neis, rng, step);
    });
    long capped_total = 0;
    for (int r = 0; r < c.replicates; ++r) {
      const EstimateReport& rep = reps[static_cast<std::size_t>(r)];
      capped_total += rep.capped_orbits;
      detail::append_csv_row(art.csv,
                             {"neis", detail::format_double(step), std::to_string(r),
                              std::to_string(c.seed), detail::format_double(rep.log_z_hat),
                              detail::format_double(rep.rel_var_hat), std::to_string(n_neis),
                              std::to_string(rep.capped_orbits)});
    }
    neis_budget.push_back({{"step", step},
                           {"per_sample_evals", per_sample},
                           {"n_samples", n_neis},
                           {"capped_orbits", capped_total}});
  }

  art.summary["budget"] = {{"neo_evals_per_replicate", budget_per_replicate},
                           {"neis", neis_budget}};
  return art;
}

inline RunArtifacts execute(const RunConfig& c) {
  validate(c);
  if (c.experiment == "estimate-z") return run_estimate_z(c);
  if (c.experiment == "sample") return run_sample(c);
  if (c.experiment == "efficiency-curve") return run_efficiency_curve(c);
  if (c.experiment == "converge-h") return run_converge_h(c);
  return run_neis_compare(c);
}

inline void write_artifacts(const RunConfig& c, const RunArtifacts& art) {
  {
    std::ofstream csv(c.out + ".csv", std::ios::binary);
    if (!csv) throw std::runtime_error("cannot open output file " + c.out + ".csv");
    csv << art.csv;
    if (!csv) throw std::runtime_error("failed writing " + c.out + ".csv");
  }
  {
    std::ofstream js(c.out + ".json", std::ios::binary);
    if (!js) throw std::runtime_error("cannot open output file " + c.out + ".json");
    js << art.summary.dump(2) << '\n';
    if (!js) throw std::runtime_error("failed writing " + c.out + ".json");
  }
}

}  // namespace neo::bench
