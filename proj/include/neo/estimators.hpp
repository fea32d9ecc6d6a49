#pragma once

// Normalizing-constant estimators on orbits (orbit-weighted IS, plain IS,
// self-normalized expectations) plus the efficiency diagnostics that control
// their variance and tail bounds.

#include <algorithm>
#include <chrono>
#include <functional>
#include <optional>
#include <stdexcept>

#include "neo/core.hpp"
#include "neo/orbit.hpp"
#include "neo/targets.hpp"
#include "neo/transforms.hpp"

namespace neo {

struct EstimateReport {
  double log_z_hat = neg_inf;
  long n_samples = 0;
  Vec per_sample_log_z;  // retained when requested
  double rel_var_hat = 0.0;  // empirical second moment of Z_hat/mean minus one
  double wall_time_s = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
  bool degenerate = false;   // every per-sample estimate was zero
  long capped_orbits = 0;    // continuous-time estimators only
};

namespace detail {

// Shared reduction: log mean and relative variance of exp-values given in
// log domain. Point-mass and orbit estimators funnel through the same code
// so their outputs are bit-identical on shared streams.
inline EstimateReport reduce_log_values(Vec values, RngStream& rng, bool keep_per_sample) {
  EstimateReport r;
  r.n_samples = static_cast<long>(values.size());
  r.seed = rng.seed();
  r.stream_id = rng.stream_id();
  const double lse = log_sum_exp(values);
  if (lse == neg_inf) {
    r.degenerate = true;
    r.log_z_hat = neg_inf;
    r.rel_var_hat = 0.0;
  } else {
    const double log_n = std::log(static_cast<double>(values.size()));
    r.log_z_hat = lse - log_n;
    Vec doubled(values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
      doubled[i] = values[i] == neg_inf ? neg_inf : 2.0 * values[i];
    const double log_m2 = log_sum_exp(doubled) - log_n;
    r.rel_var_hat = std::expm1(log_m2 - 2.0 * r.log_z_hat);
  }
  if (keep_per_sample) r.per_sample_log_z = std::move(values);
  return r;
}

}  // namespace detail

// Orbit-weighted IS estimate of Z: mean over i.i.d. proposal draws of the
// per-orbit estimate Z_hat_x; unbiased for any invertible transform and any
// admissible weight window.
inline EstimateReport neo_is(const TargetModel& target, const Transform& transform,
                             const WeightSequence& weights, long n, RngStream& rng,
                             bool keep_per_sample = false) {
  if (n < 1) throw std::invalid_argument("neo_is: n must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  Vec values(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    const Vec x = target.sample_rho(rng);
    values[static_cast<std::size_t>(i)] = build_orbit(x, transform, weights, target).log_z_hat;
  }
  EstimateReport r = detail::reduce_log_values(std::move(values), rng, keep_per_sample);
  r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// Baseline: mean of L over proposal draws, in log space. Identical to neo_is
// with a point-mass window on a shared stream.
inline EstimateReport plain_is(const TargetModel& target, long n, RngStream& rng,
                               bool keep_per_sample = false) {
  if (n < 1) throw std::invalid_argument("plain_is: n must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  Vec values(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    const Vec x = target.sample_rho(rng);
    const double ll = target.log_like(x);
    values[static_cast<std::size_t>(i)] = std::isnan(ll) ? neg_inf : ll;
  }
  EstimateReport r = detail::reduce_log_values(std::move(values), rng, keep_per_sample);
  r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

struct SnisReport {
  double estimate = 0.0;
  double log_z_hat = neg_inf;
  long n_samples = 0;
};

// Self-normalized estimate of a pi-expectation, computed hierarchically:
// per-orbit convex averages of g reweighted by the per-orbit Z estimates.
// For |g| <= 1 the result is a convex combination of g values.
inline SnisReport neo_snis(const TargetModel& target, const Transform& transform,
                           const WeightSequence& weights,
                           const std::function<double(const Vec&)>& g, long n, RngStream& rng) {
  if (n < 1) throw std::invalid_argument("neo_snis: n must be >= 1");
  Vec log_z(static_cast<std::size_t>(n));
  Vec inner(static_cast<std::size_t>(n), 0.0);
  for (long i = 0; i < n; ++i) {
    const Vec x = target.sample_rho(rng);
    const OrbitTable orbit = build_orbit(x, transform, weights, target);
    log_z[static_cast<std::size_t>(i)] = orbit.log_z_hat;
    if (orbit.log_z_hat == neg_inf) continue;
    double acc = 0.0;
    for (int k = orbit.k_min; k <= orbit.k_max; ++k) {
      const double lw = orbit.log_weight(k) + orbit.log_like_at(k) - orbit.log_z_hat;
      if (lw == neg_inf) continue;
      acc += std::exp(lw) * g(orbit.point(k));
    }
    inner[static_cast<std::size_t>(i)] = acc;
  }
  const double total = log_sum_exp(log_z);
  if (total == neg_inf) throw std::domain_error("neo_snis: degenerate total weight");
  SnisReport r;
  r.n_samples = n;
  r.log_z_hat = total - std::log(static_cast<double>(n));
  double est = 0.0;
  for (std::size_t i = 0; i < log_z.size(); ++i) {
    if (log_z[i] == neg_inf) continue;
    est += std::exp(log_z[i] - total) * inner[i];
  }
  r.estimate = est;
  return r;
}

struct EfficiencyEstimate {
  double e_hat = 0.0;        // Monte Carlo average of (Z_hat_x / Z)^2
  double m_hat = 0.0;        // sample max of Z_hat_x / Z, a lower bound on the ess-sup
  bool plug_in_z = false;    // Z replaced by the sample mean
  std::optional<double> m_analytic_bound;  // ||L||_inf * Omega / (w_0 * Z) when available
};

// Second-moment and sup diagnostics of the per-orbit estimator. When the
// true Z is unknown the plug-in estimate is used and flagged. The sample max
// only ever under-estimates the essential sup, so it is reported as a lower
// bound alongside the analytic upper bound when ||L||_inf is declared.
inline EfficiencyEstimate estimate_efficiency(const TargetModel& target, const Transform& transform,
                                              const WeightSequence& weights, long n, RngStream& rng,
                                              std::optional<double> log_z_true = std::nullopt) {
  if (n < 1) throw std::invalid_argument("estimate_efficiency: n must be >= 1");
  Vec values(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    const Vec x = target.sample_rho(rng);
    values[static_cast<std::size_t>(i)] = build_orbit(x, transform, weights, target).log_z_hat;
  }
  EfficiencyEstimate out;
  double log_z;
  if (log_z_true) {
    log_z = *log_z_true;
  } else {
    log_z = log_sum_exp(values) - std::log(static_cast<double>(n));
    out.plug_in_z = true;
  }
  Vec doubled(values.size());
  double max_v = neg_inf;
  for (std::size_t i = 0; i < values.size(); ++i) {
    doubled[i] = values[i] == neg_inf ? neg_inf : 2.0 * (values[i] - log_z);
    max_v = std::max(max_v, values[i]);
  }
  out.e_hat = std::exp(log_sum_exp(doubled) - std::log(static_cast<double>(n)));
  out.m_hat = std::exp(max_v - log_z);
  if (target.sup_like)
    out.m_analytic_bound = std::exp(std::log(*target.sup_like) + weights.log_omega() -
                                    weights.log_at(0) - log_z);
  return out;
}

struct EfficiencyCurveRow {
  int k = 0;
  double gamma = 0.0;
  double e_hat = 0.0;
  double m_hat = 0.0;
  double e_is_ref = 0.0;  // matched-budget reference: averaging K+1 plain IS draws
};

// Second-moment curve over window length K and damping gamma for the
// conformal transform on the phase-augmented target. The reference column is
// the second moment achieved by averaging K+1 independent plain IS
// estimates, E_is(K) = 1 + (E_is(0) - 1) / (K + 1).
inline std::vector<EfficiencyCurveRow> efficiency_curve(const TargetModel& base, double h,
                                                        double mass_scale,
                                                        const std::vector<int>& k_values,
                                                        const std::vector<double>& gamma_values,
                                                        long n, std::uint64_t seed) {
  for (int k : k_values)
    if (k < 0) throw std::invalid_argument("efficiency_curve: K values must be >= 0");
  for (double g : gamma_values)
    if (!(g > 0.0)) throw std::invalid_argument("efficiency_curve: gamma values must be > 0");

  // Plain IS second moment on the base target, shared across the table.
  const Identity id(base.dim);
  RngStream rng_is(seed, 0);
  const EfficiencyEstimate e0 = estimate_efficiency(base, id, WeightSequence::point_mass(), n,
                                                    rng_is, base.log_z_true);

  std::vector<EfficiencyCurveRow> rows;
  std::uint64_t stream = 1;
  for (double gamma : gamma_values) {
    const Vec mass(static_cast<std::size_t>(base.dim), mass_scale);
    const TargetModel phase = make_phase_target(base, mass);
    const ConformalSymplecticEuler transform(
        ConformalParams(gamma, h, mass), base.grad_U);
    for (int k : k_values) {
      RngStream rng(seed, stream++);
      const EfficiencyEstimate e = estimate_efficiency(phase, transform,
                                                       uniform_window_weights(k), n, rng,
                                                       phase.log_z_true);
      EfficiencyCurveRow row;
      row.k = k;
      row.gamma = gamma;
      row.e_hat = e.e_hat;
      row.m_hat = e.m_hat;
      row.e_is_ref = 1.0 + (e0.e_hat - 1.0) / static_cast<double>(k + 1);
      rows.push_back(row);
    }
  }
  return rows;
}

// Deviation bound for the normalized estimate at confidence 1 - delta:
// M_T * sqrt(log(2/delta) / (2n)).
inline double hoeffding_bound(double m_t, long n, double delta) {
  if (!(m_t > 0.0)) throw std::invalid_argument("hoeffding_bound: M_T must be > 0");
  if (n < 1) throw std::invalid_argument("hoeffding_bound: n must be >= 1");
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("hoeffding_bound: delta must be in (0,1)");
  return m_t * std::sqrt(std::log(2.0 / delta) / (2.0 * static_cast<double>(n)));
}

// Composite Simpson rule; intervals must be even and >= 2.
inline double simpson(const std::function<double(double)>& f, double lo, double hi,
                      int intervals) {
  if (intervals < 2 || intervals % 2 != 0)
    throw std::invalid_argument("simpson: intervals must be even and >= 2");
  const double step = (hi - lo) / intervals;
  double acc = f(lo) + f(hi);
  for (int i = 1; i < intervals; ++i) acc += f(lo + i * step) * (i % 2 == 1 ? 4.0 : 2.0);
  return acc * step / 3.0;
}

struct QuadratureGrid {
  double lo = -12.0;
  double hi = 12.0;
  int intervals = 1 << 14;
};

struct Chi2BoundCheck {
  double e_t = 0.0;             // quadrature value of the second moment
  double d_chi2_plus_1 = 0.0;   // chi-square divergence of pi from rho_T, plus one
  double rho_t_mass = 0.0;      // quadrature of the mixture proposal, should be 1
  double log_z_quad = 0.0;      // quadrature normalizing constant used for both sides
};

// Verifies by deterministic quadrature on a 1D target that the second moment
// is dominated by the chi-square divergence between pi and the orbit mixture
// proposal. Throws when the grid is too coarse to normalize the mixture.
inline Chi2BoundCheck chi2_bound_check(const TargetModel& target, const Transform& transform,
                                       const WeightSequence& weights,
                                       const QuadratureGrid& grid = QuadratureGrid{}) {
  if (target.dim != 1) throw std::invalid_argument("chi2_bound_check: 1D targets only");
  if (grid.intervals < 2 || grid.intervals % 2 != 0)
    throw std::invalid_argument("chi2_bound_check: intervals must be even");

  const int nodes = grid.intervals + 1;
  const double step = (grid.hi - grid.lo) / grid.intervals;

  Vec log_rho_v(static_cast<std::size_t>(nodes));
  Vec log_pi_un(static_cast<std::size_t>(nodes));   // log(rho * L), unnormalized
  Vec log_zx(static_cast<std::size_t>(nodes));      // per-orbit estimate at the node
  Vec log_rho_t(static_cast<std::size_t>(nodes));   // log of the orbit mixture proposal

  Vec mix_terms(static_cast<std::size_t>(weights.support_size()));
  for (int i = 0; i < nodes; ++i) {
    const Vec x{grid.lo + i * step};
    const OrbitTable orbit = build_orbit(x, transform, weights, target);
    const std::size_t ii = static_cast<std::size_t>(i);
    log_rho_v[ii] = target.log_rho(x);
    const double ll = target.log_like(x);
    log_pi_un[ii] = log_rho_v[ii] + (std::isnan(ll) ? neg_inf : ll);
    log_zx[ii] = orbit.log_z_hat;
    // rho_T(x) = Omega^{-1} sum_j w_j rho(T^{-j} x) J_{T^{-j}}(x); the orbit
    // table at x already holds those values as a_{-j}.
    for (int j = weights.k_min(); j <= weights.k_max(); ++j)
      mix_terms[static_cast<std::size_t>(j - weights.k_min())] =
          weights.log_at(j) + orbit.a(-j);
    log_rho_t[ii] = log_sum_exp(mix_terms) - weights.log_omega();
  }

  auto simpson_weight = [&](int i) {
    if (i == 0 || i == nodes - 1) return 1.0;
    return i % 2 == 1 ? 4.0 : 2.0;
  };
  auto integrate = [&](auto&& term) {
    double acc = 0.0;
    for (int i = 0; i < nodes; ++i) acc += simpson_weight(i) * term(static_cast<std::size_t>(i));
    return acc * step / 3.0;
  };

  Chi2BoundCheck out;
  out.log_z_quad = std::log(integrate([&](std::size_t i) { return std::exp(log_pi_un[i]); }));
  out.rho_t_mass = integrate([&](std::size_t i) { return std::exp(log_rho_t[i]); });
  if (std::abs(out.rho_t_mass - 1.0) > 1e-4)
    throw std::runtime_error("chi2_bound_check: quadrature grid too coarse for the mixture");
  out.e_t = integrate([&](std::size_t i) {
    if (log_zx[i] == neg_inf) return 0.0;
    return std::exp(2.0 * (log_zx[i] - out.log_z_quad) + log_rho_v[i]);
  });
  out.d_chi2_plus_1 = integrate([&](std::size_t i) {
    if (log_pi_un[i] == neg_inf) return 0.0;
    return std::exp(2.0 * (log_pi_un[i] - out.log_z_quad) - log_rho_t[i]);
  });
  return out;
}

}  // namespace neo
