#pragma once

// Continuous-time reference implementations: ODE flows carrying their own
// log-Jacobian (integrated divergence), continuous orbit weights, the
// exit-time trajectory estimator, and the stepsize-convergence study that
// compares discretized orbit sums against the continuous limit.

#include <functional>
#include <optional>
#include <stdexcept>
#include <utility>

#include "neo/core.hpp"
#include "neo/estimators.hpp"
#include "neo/orbit.hpp"
#include "neo/targets.hpp"
#include "neo/transforms.hpp"

namespace neo {

struct FlowConfig {
  int dim = 0;
  std::function<Vec(const Vec&)> drift;
  std::function<double(const Vec&)> div_drift;
  int substeps_per_unit = 50;  // reference RK4 resolution per unit time
  double time_cap = 50.0;      // longest trajectory any estimator will follow
};

// Dissipative conformal field on phase space: (q, p) -> (M^{-1} p,
// -grad_U(q) - gamma p). Its divergence is the constant -gamma d.
inline FlowConfig conformal_flow(const TargetModel& base, double gamma, const Vec& mass_diag) {
  if (static_cast<int>(mass_diag.size()) != base.dim)
    throw std::invalid_argument("conformal_flow: mass diagonal has wrong dimension");
  const int d = base.dim;
  FlowConfig cfg;
  cfg.dim = 2 * d;
  cfg.drift = [grad = base.grad_U, mass_diag, gamma, d](const Vec& x) {
    Vec q(x.begin(), x.begin() + d);
    const Vec g = grad(q);
    Vec out(static_cast<std::size_t>(2 * d));
    for (int i = 0; i < d; ++i) {
      const double p = x[static_cast<std::size_t>(d + i)];
      out[static_cast<std::size_t>(i)] = p / mass_diag[static_cast<std::size_t>(i)];
      out[static_cast<std::size_t>(d + i)] = -g[static_cast<std::size_t>(i)] - gamma * p;
    }
    return out;
  };
  cfg.div_drift = [gamma, d](const Vec&) { return -gamma * static_cast<double>(d); };
  return cfg;
}

struct FlowPoint {
  Vec x;
  double log_jacobian = 0.0;
  bool diverged = false;
  double blow_up_time = 0.0;
};

namespace detail {

// One RK4 step of the augmented system d/dt (x, logJ) = (b(x), div b(x)).
inline bool rk4_step(Vec& x, double& log_jac, double dt, const FlowConfig& cfg) {
  const std::size_t n = x.size();
  const Vec k1 = cfg.drift(x);
  const double j1 = cfg.div_drift(x);
  Vec tmp(n);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * dt * k1[i];
  const Vec k2 = cfg.drift(tmp);
  const double j2 = cfg.div_drift(tmp);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + 0.5 * dt * k2[i];
  const Vec k3 = cfg.drift(tmp);
  const double j3 = cfg.div_drift(tmp);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + dt * k3[i];
  const Vec k4 = cfg.drift(tmp);
  const double j4 = cfg.div_drift(tmp);
  for (std::size_t i = 0; i < n; ++i)
    x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  log_jac += dt / 6.0 * (j1 + 2.0 * j2 + 2.0 * j3 + j4);
  return all_finite(x) && std::isfinite(log_jac);
}

// Integrate from (x, log_jac) over a signed interval dt.
inline bool advance(Vec& x, double& log_jac, double dt, const FlowConfig& cfg) {
  if (dt == 0.0) return true;
  const int steps =
      std::max(1, static_cast<int>(std::ceil(std::abs(dt) * cfg.substeps_per_unit)));
  const double h = dt / steps;
  for (int s = 0; s < steps; ++s)
    if (!rk4_step(x, log_jac, h, cfg)) return false;
  return true;
}

}  // namespace detail

// Flow map and its log-Jacobian at time t (negative t runs the field in
// reverse). Blow-up is reported with the time of the first bad substep.
inline FlowPoint flow(const Vec& x0, double t, const FlowConfig& cfg) {
  FlowPoint out{x0, 0.0, false, 0.0};
  if (t == 0.0) return out;
  const int steps = std::max(1, static_cast<int>(std::ceil(std::abs(t) * cfg.substeps_per_unit)));
  const double h = t / steps;
  for (int s = 0; s < steps; ++s) {
    if (!detail::rk4_step(out.x, out.log_jacobian, h, cfg)) {
      out.diverged = true;
      out.blow_up_time = h * (s + 1);
      return out;
    }
  }
  return out;
}

// Piecewise-continuous nonnegative weight function with bounded support.
struct WeightFunction {
  std::function<double(double)> omega_c;
  double support_lo = 0.0;
  double support_hi = 0.0;
  std::optional<double> m_ratio;  // sup w(t)/w(t+s) over the support overlap

  static WeightFunction window(double lo, double hi) {
    if (!(hi > lo)) throw std::invalid_argument("WeightFunction: empty window");
    return WeightFunction{
        [lo, hi](double t) { return (t >= lo && t <= hi) ? 1.0 : 0.0; }, lo, hi, 1.0};
  }
};

namespace detail {

// Values of log(rho(phi_s(x)) J_phi_s(x)) on the uniform grid lo + j * dt,
// integrated outward from t = 0. Nodes past a blow-up carry -inf.
struct TrajectoryGrid {
  double t_lo = 0.0, dt = 0.0;
  int n_nodes = 0;
  std::vector<Vec> points;
  Vec log_rho_jac;
  std::vector<bool> valid;

  double t_at(int j) const { return t_lo + j * dt; }
};

inline TrajectoryGrid trajectory_grid(const Vec& x0, double t_lo, double t_hi, int intervals,
                                      const FlowConfig& cfg,
                                      const std::function<double(const Vec&)>& log_rho) {
  if (!(t_hi > t_lo) || intervals < 1)
    throw std::invalid_argument("trajectory_grid: bad window");
  TrajectoryGrid g;
  g.t_lo = t_lo;
  g.dt = (t_hi - t_lo) / intervals;
  g.n_nodes = intervals + 1;
  g.points.assign(static_cast<std::size_t>(g.n_nodes), Vec{});
  g.log_rho_jac.assign(static_cast<std::size_t>(g.n_nodes), neg_inf);
  g.valid.assign(static_cast<std::size_t>(g.n_nodes), false);

  auto fill = [&](int j, const Vec& x, double lj) {
    const double lr = log_rho(x);
    g.points[static_cast<std::size_t>(j)] = x;
    g.log_rho_jac[static_cast<std::size_t>(j)] = std::isnan(lr) ? neg_inf : lr + lj;
    g.valid[static_cast<std::size_t>(j)] = true;
  };

  // walk forward through nodes with t >= 0, then backward through the rest
  int first_nonneg = g.n_nodes;
  for (int j = 0; j < g.n_nodes; ++j)
    if (g.t_at(j) >= 0.0) {
      first_nonneg = j;
      break;
    }
  {
    Vec x = x0;
    double lj = 0.0, t = 0.0;
    for (int j = first_nonneg; j < g.n_nodes; ++j) {
      if (!detail::advance(x, lj, g.t_at(j) - t, cfg)) break;
      t = g.t_at(j);
      fill(j, x, lj);
    }
  }
  {
    Vec x = x0;
    double lj = 0.0, t = 0.0;
    for (int j = first_nonneg - 1; j >= 0; --j) {
      if (!detail::advance(x, lj, g.t_at(j) - t, cfg)) break;
      t = g.t_at(j);
      fill(j, x, lj);
    }
  }
  return g;
}

// log of the trapezoid integral of exp(terms) over a uniform grid.
inline double log_trapezoid(std::span<const double> terms, double dt) {
  if (terms.size() < 2) return neg_inf;
  Vec weighted(terms.size());
  const double log_half = std::log(0.5);
  for (std::size_t j = 0; j < terms.size(); ++j) {
    weighted[j] = terms[j];
    if (j == 0 || j + 1 == terms.size()) weighted[j] += log_half;
  }
  return log_sum_exp(weighted) + std::log(dt);
}

}  // namespace detail

// Continuous orbit weight w_t(x): numerator omega(t) rho(phi_t x) J_phi_t(x),
// denominator the integral of omega(t - s) rho(phi_s x) J_phi_s(x) over the
// support window, evaluated by trapezoid quadrature in log space. The t - s
// direction is forced by the pushforward-mixture proposal: evaluating the
// mixture at phi_t(x) reaches the orbit point phi_{t - tau}(x) for mixture
// time tau, exactly as the discrete weights convolve a_{k - j}.
inline double continuous_weight(const Vec& x, double t, const FlowConfig& cfg,
                                const WeightFunction& wf, double quadrature_step,
                                const std::function<double(const Vec&)>& log_rho) {
  if (!(quadrature_step > 0.0))
    throw std::invalid_argument("continuous_weight: quadrature step must be > 0");
  const double wt = wf.omega_c(t);
  if (wt <= 0.0) return 0.0;
  const FlowPoint fp = flow(x, t, cfg);
  if (fp.diverged) return 0.0;
  const double lr = log_rho(fp.x);
  const double log_num = std::log(wt) + (std::isnan(lr) ? neg_inf : lr) + fp.log_jacobian;

  // omega(t - s) > 0 requires s in [t - support_hi, t - support_lo]
  const double s_lo = t - wf.support_hi;
  const double s_hi = t - wf.support_lo;
  const int intervals = std::max(2, static_cast<int>(std::ceil((s_hi - s_lo) / quadrature_step)));
  const detail::TrajectoryGrid grid =
      detail::trajectory_grid(x, s_lo, s_hi, intervals, cfg, log_rho);
  Vec terms(static_cast<std::size_t>(grid.n_nodes), neg_inf);
  for (int j = 0; j < grid.n_nodes; ++j) {
    // the grid spans exactly the support window, so clamping only removes
    // floating-point noise at the two boundary nodes
    const double u = std::clamp(t - grid.t_at(j), wf.support_lo, wf.support_hi);
    const double w = wf.omega_c(u);
    if (w <= 0.0 || !grid.valid[static_cast<std::size_t>(j)]) continue;
    terms[static_cast<std::size_t>(j)] =
        std::log(w) + grid.log_rho_jac[static_cast<std::size_t>(j)];
  }
  const double log_den = detail::log_trapezoid(terms, grid.dt);
  if (log_den == neg_inf)
    throw std::domain_error("continuous_weight: degenerate denominator");
  return std::exp(log_num - log_den);
}

struct ContinuousExit {
  double tau_minus = 0.0;
  double tau_plus = 0.0;
  bool capped_minus = false;
  bool capped_plus = false;
};

namespace detail {

// Scans the trajectory in quadrature-step chunks for the first time the
// predicate fails, then refines by bisection on continuous time. t_in is the
// last time known inside, t_out the first known outside; either ordering.
inline double refine_exit(const Vec& x_in, double lj_in, double t_in, double t_out,
                          const FlowConfig& cfg, const std::function<bool(const Vec&)>& inside,
                          double tol) {
  Vec x = x_in;
  double lj = lj_in;
  double t_cur = t_in;
  while (std::abs(t_out - t_cur) > tol) {
    const double t_mid = 0.5 * (t_cur + t_out);
    Vec xm = x;
    double ljm = lj;
    const bool ok = advance(xm, ljm, t_mid - t_cur, cfg) && inside(xm);
    if (ok) {
      x = std::move(xm);
      lj = ljm;
      t_cur = t_mid;
    } else {
      t_out = t_mid;
    }
  }
  return t_cur;
}

inline ContinuousExit continuous_exit_times(const Vec& x0, const FlowConfig& cfg,
                                            const ExitSet& exit_set, double scan_step,
                                            double tol = 1e-6) {
  ContinuousExit out;
  for (int dir = 0; dir < 2; ++dir) {
    const double sign = dir == 0 ? 1.0 : -1.0;
    Vec x = x0;
    double lj = 0.0, t = 0.0;
    bool capped = true;
    double tau = sign * cfg.time_cap;
    while (std::abs(t) < cfg.time_cap) {
      const double step = sign * std::min(scan_step, cfg.time_cap - std::abs(t));
      Vec xn = x;
      double ljn = lj;
      const bool ok = advance(xn, ljn, step, cfg) && exit_set.contains(xn);
      if (!ok) {
        const double t_exit =
            refine_exit(x, lj, t, t + step, cfg,
                        [&](const Vec& p) { return all_finite(p) && exit_set.contains(p); }, tol);
        tau = t_exit;
        capped = false;
        break;
      }
      x = std::move(xn);
      lj = ljn;
      t += step;
    }
    if (dir == 0) {
      out.tau_plus = tau;
      out.capped_plus = capped;
    } else {
      out.tau_minus = tau;
      out.capped_minus = capped;
    }
  }
  return out;
}

}  // namespace detail

// Per-trajectory exit-time estimate: the ratio of the trapezoid integrals of
// rho J L and rho J over [tau_minus, tau_plus], in log space.
inline double neis_sample_log_value(const Vec& x0, const TargetModel& target,
                                    const FlowConfig& cfg, const ExitSet& exit_set,
                                    double quadrature_step, bool* capped = nullptr) {
  const ContinuousExit exits =
      detail::continuous_exit_times(x0, cfg, exit_set, quadrature_step);
  if (capped) *capped = exits.capped_plus || exits.capped_minus;
  const double span = exits.tau_plus - exits.tau_minus;
  if (!(span > 0.0)) return target.log_like(x0);  // instantly exiting orbit
  const int intervals = std::max(2, static_cast<int>(std::ceil(span / quadrature_step)));
  const detail::TrajectoryGrid grid = detail::trajectory_grid(
      x0, exits.tau_minus, exits.tau_plus, intervals, cfg, target.log_rho);
  Vec den(static_cast<std::size_t>(grid.n_nodes), neg_inf);
  Vec num(static_cast<std::size_t>(grid.n_nodes), neg_inf);
  for (int j = 0; j < grid.n_nodes; ++j) {
    const std::size_t jj = static_cast<std::size_t>(j);
    if (!grid.valid[jj]) continue;
    den[jj] = grid.log_rho_jac[jj];
    if (den[jj] == neg_inf) continue;
    const double ll = target.log_like(grid.points[jj]);
    num[jj] = den[jj] + (std::isnan(ll) ? neg_inf : ll);
  }
  const double log_den = detail::log_trapezoid(den, grid.dt);
  if (log_den == neg_inf) return neg_inf;
  return detail::log_trapezoid(num, grid.dt) - log_den;
}

// Trajectory-weighted estimate of Z over the exit set. Unlike the discrete
// orbit estimator this carries a quadrature bias that only vanishes as the
// step is refined; orbits that never exit within the time cap are counted.
inline EstimateReport neis_estimate(const TargetModel& target, const FlowConfig& cfg,
                                    const ExitSet& exit_set, long n, RngStream& rng,
                                    double quadrature_step, bool keep_per_sample = false) {
  if (n < 1) throw std::invalid_argument("neis_estimate: n must be >= 1");
  if (!(quadrature_step > 0.0))
    throw std::invalid_argument("neis_estimate: quadrature step must be > 0");
  Vec values(static_cast<std::size_t>(n));
  long capped_count = 0;
  for (long i = 0; i < n; ++i) {
    const Vec x = target.sample_rho(rng);
    if (!exit_set.contains(x)) {
      values[static_cast<std::size_t>(i)] = neg_inf;  // outside O: zero contribution
      continue;
    }
    bool capped = false;
    values[static_cast<std::size_t>(i)] =
        neis_sample_log_value(x, target, cfg, exit_set, quadrature_step, &capped);
    if (capped) ++capped_count;
  }
  EstimateReport r = detail::reduce_log_values(std::move(values), rng, keep_per_sample);
  r.capped_orbits = capped_count;
  return r;
}

struct StepsizeErrorRow {
  double h = 0.0;
  double discrete_value = 0.0;
  double continuous_value = 0.0;
  double abs_error = 0.0;
};

// Compares the discretized orbit sum sum_k w_k f(T_h^k x) against the
// continuous integral of w_t f(phi_t x) for a window weight on [0, T], at a
// fixed start point (no Monte Carlo noise). Window endpoints must be integer
// multiples of every tested stepsize so the comparison isolates the
// integrator error from boundary-cell effects.
inline std::vector<StepsizeErrorRow> stepsize_convergence_table(
    const Vec& x_phase, const TargetModel& base, double gamma, double mass_scale,
    double window_t, const std::vector<double>& h_values,
    const std::function<double(const Vec&)>& f, int fine_intervals_per_window = 4096) {
  if (!(window_t > 0.0))
    throw std::invalid_argument("stepsize_convergence_table: window must be positive");
  const Vec mass(static_cast<std::size_t>(base.dim), mass_scale);
  const TargetModel phase = make_phase_target(base, mass);
  const FlowConfig cfg = conformal_flow(base, gamma, mass);

  // continuous reference on an aligned grid over [-T, T]
  const int m = fine_intervals_per_window;
  const detail::TrajectoryGrid grid =
      detail::trajectory_grid(x_phase, -window_t, window_t, 2 * m, cfg, phase.log_rho);
  const double dt = grid.dt;
  double continuous_value = 0.0;
  Vec den_terms;
  for (int jt = m; jt <= 2 * m; ++jt) {  // t = 0 .. T
    const std::size_t jj = static_cast<std::size_t>(jt);
    if (!grid.valid[jj] || grid.log_rho_jac[jj] == neg_inf) continue;
    // denominator over s with t - s in [0, T]  =>  s in [t - T, t]
    const int s_lo = jt - m, s_hi = jt;
    den_terms.assign(static_cast<std::size_t>(s_hi - s_lo + 1), neg_inf);
    for (int js = s_lo; js <= s_hi; ++js)
      den_terms[static_cast<std::size_t>(js - s_lo)] =
          grid.log_rho_jac[static_cast<std::size_t>(js)];
    const double log_den = detail::log_trapezoid(den_terms, dt);
    const double w = std::exp(grid.log_rho_jac[jj] - log_den);
    const double trap = (jt == m || jt == 2 * m) ? 0.5 : 1.0;
    continuous_value += trap * w * f(grid.points[jj]) * dt;
  }

  std::vector<StepsizeErrorRow> rows;
  rows.reserve(h_values.size());
  for (double h : h_values) {
    const double ratio = window_t / h;
    const int k_max = static_cast<int>(std::lround(ratio));
    if (std::abs(ratio - k_max) > 1e-9)
      throw std::invalid_argument(
          "stepsize_convergence_table: window must be an integer multiple of every h");
    const ConformalSymplecticEuler transform(ConformalParams(gamma, h, mass), base.grad_U);
    const OrbitTable orbit =
        build_orbit(x_phase, transform, uniform_window_weights(k_max), phase);
    double discrete = 0.0;
    for (int k = 0; k <= k_max; ++k) {
      const double lw = orbit.log_weight(k);
      if (lw == neg_inf) continue;
      discrete += std::exp(lw) * f(orbit.point(k));
    }
    rows.push_back({h, discrete, continuous_value, std::abs(discrete - continuous_value)});
  }
  return rows;
}

}  // namespace neo
