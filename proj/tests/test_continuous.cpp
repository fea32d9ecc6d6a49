#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "neo/continuous.hpp"
#include "oracles.hpp"

using neo::conformal_flow;
using neo::continuous_weight;
using neo::ExitSet;
using neo::flow;
using neo::FlowConfig;
using neo::make_gaussian_L_1d;
using neo::neg_inf;
using neo::neis_estimate;
using neo::neis_sample_log_value;
using neo::RngStream;
using neo::stepsize_convergence_table;
using neo::TargetModel;
using neo::Vec;
using neo::WeightFunction;

namespace {

FlowConfig linear_flow_1d(double gamma) {
  FlowConfig cfg;
  cfg.dim = 1;
  cfg.drift = [gamma](const Vec& x) { return Vec{-gamma * x[0]}; };
  cfg.div_drift = [gamma](const Vec&) { return -gamma; };
  return cfg;
}

TargetModel uniform_rho(double lo, double hi, std::function<double(const Vec&)> log_like) {
  TargetModel t;
  t.dim = 1;
  t.log_rho = [lo, hi](const Vec& x) {
    return (x[0] > lo && x[0] < hi) ? -std::log(hi - lo) : neg_inf;
  };
  t.sample_rho = [lo, hi](RngStream& rng) { return Vec{lo + (hi - lo) * rng.uniform()}; };
  t.log_like = std::move(log_like);
  t.grad_U = [](const Vec&) { return Vec{0.0}; };
  return t;
}

}  // namespace

TEST_CASE("linear flow matches the closed form") {
  const FlowConfig cfg = linear_flow_1d(1.0);
  const auto fp = flow({1.0}, 0.7, cfg);
  CHECK(!fp.diverged);
  CHECK(fp.x[0] == doctest::Approx(std::exp(-0.7)).epsilon(1e-8));
  CHECK(fp.log_jacobian == doctest::Approx(-0.7).epsilon(1e-8));

  const auto back = flow({1.0}, -0.7, cfg);
  CHECK(back.x[0] == doctest::Approx(std::exp(0.7)).epsilon(1e-8));
  CHECK(back.log_jacobian == doctest::Approx(0.7).epsilon(1e-8));

  const auto still = flow({1.0}, 0.0, cfg);
  CHECK(still.x[0] == 1.0);
  CHECK(still.log_jacobian == 0.0);
}

TEST_CASE("conformal field jacobian is the damping exponent for any potential") {
  const TargetModel base = make_gaussian_L_1d();  // quadratic potential
  const double gamma = 1.0;
  const FlowConfig cfg = conformal_flow(base, gamma, {1.0});
  for (double t : {0.3, 1.2, -0.8}) {
    const auto fp = flow({0.7, -0.4}, t, cfg);
    REQUIRE(!fp.diverged);
    CHECK(fp.log_jacobian == doctest::Approx(-gamma * 1.0 * t).epsilon(1e-10));
  }
}

TEST_CASE("flow group property") {
  const FlowConfig cfg = linear_flow_1d(0.8);
  const auto one = flow({1.3}, 0.4, cfg);
  const auto two = flow(one.x, 0.5, cfg);
  const auto direct = flow({1.3}, 0.9, cfg);
  CHECK(two.x[0] == doctest::Approx(direct.x[0]).epsilon(1e-6));
  CHECK(one.log_jacobian + two.log_jacobian == doctest::Approx(direct.log_jacobian).epsilon(1e-6));
}

TEST_CASE("flow jacobian matches finite differences in state") {
  const TargetModel base = make_gaussian_L_1d();
  const FlowConfig cfg = conformal_flow(base, 0.6, {1.5});
  const Vec x{0.5, -0.3};
  const double t = 0.9;
  const double step = 1e-5;
  // 2x2 jacobian of x -> phi_t(x) by central differences
  double jac[2][2];
  for (int j = 0; j < 2; ++j) {
    Vec hi = x, lo = x;
    hi[static_cast<std::size_t>(j)] += step;
    lo[static_cast<std::size_t>(j)] -= step;
    const auto fh = flow(hi, t, cfg);
    const auto fl = flow(lo, t, cfg);
    for (int i = 0; i < 2; ++i)
      jac[i][j] = (fh.x[static_cast<std::size_t>(i)] - fl.x[static_cast<std::size_t>(i)]) /
                  (2.0 * step);
  }
  const double det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
  const auto fp = flow(x, t, cfg);
  CHECK(std::log(std::abs(det)) == doctest::Approx(fp.log_jacobian).epsilon(1e-4));
}

TEST_CASE("declared divergence matches the drift jacobian trace") {
  const TargetModel base = make_gaussian_L_1d();
  const FlowConfig cfg = conformal_flow(base, 0.9, {2.0});
  RngStream rng(3, 0);
  for (int rep = 0; rep < 20; ++rep) {
    const Vec x{rng.normal(), rng.normal()};
    double trace = 0.0;
    const double step = 1e-5;
    for (int j = 0; j < 2; ++j) {
      Vec hi = x, lo = x;
      hi[static_cast<std::size_t>(j)] += step;
      lo[static_cast<std::size_t>(j)] -= step;
      trace += (cfg.drift(hi)[static_cast<std::size_t>(j)] -
                cfg.drift(lo)[static_cast<std::size_t>(j)]) /
               (2.0 * step);
    }
    CHECK(trace == doctest::Approx(cfg.div_drift(x)).epsilon(1e-4));
  }
}

TEST_CASE("frozen flow gives flat continuous weights") {
  FlowConfig cfg;
  cfg.dim = 1;
  cfg.drift = [](const Vec&) { return Vec{0.0}; };
  cfg.div_drift = [](const Vec&) { return 0.0; };
  const WeightFunction wf = WeightFunction::window(0.0, 2.0);
  auto log_rho = [](const Vec&) { return -0.25; };

  for (double t : {0.1, 1.0, 1.9})
    CHECK(continuous_weight({0.3}, t, cfg, wf, 0.01, log_rho) ==
          doctest::Approx(0.5).epsilon(1e-9));

  // with a frozen flow the weights integrate to exactly one over the window
  const double integral = oracle::simpson_1d(
      [&](double t) { return continuous_weight({0.3}, t, cfg, wf, 0.01, log_rho); }, 0.0, 2.0,
      64);
  CHECK(integral == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("continuous weights self-converge under quadrature refinement") {
  const FlowConfig cfg = linear_flow_1d(1.0);
  const WeightFunction wf = WeightFunction::window(-1.0, 1.0);
  auto log_rho = [](const Vec& x) { return -0.5 * std::log(2.0 * neo::pi_const) - 0.5 * x[0] * x[0]; };
  const double coarse = continuous_weight({0.4}, 0.3, cfg, wf, 0.02, log_rho);
  const double fine = continuous_weight({0.4}, 0.3, cfg, wf, 0.002, log_rho);
  CHECK(coarse == doctest::Approx(fine).epsilon(1e-4));
}

TEST_CASE("trajectory estimate equals a hand-built trapezoid ratio") {
  const double gamma = 1.0;
  const FlowConfig cfg = linear_flow_1d(gamma);
  TargetModel t = uniform_rho(-2.0, 2.0, [](const Vec& x) { return -x[0] * x[0]; });

  const Vec x0{0.3};
  const double step = 0.01;
  FlowConfig capped = cfg;
  capped.time_cap = 6.0;
  bool was_capped = false;
  const double value =
      neis_sample_log_value(x0, t, capped, ExitSet::interval(-2.0, 2.0), step, &was_capped);
  CHECK(was_capped);  // contracting flow never leaves the box forward

  // oracle: the same ratio assembled directly from the closed-form flow
  const double tau_minus = -std::log(2.0 / 0.3);  // |x| e^{|t|} = 2
  const double tau_plus = 6.0;
  const int m = static_cast<int>(std::ceil((tau_plus - tau_minus) / step));
  const double dt = (tau_plus - tau_minus) / m;
  double num = 0.0, den = 0.0;
  for (int j = 0; j <= m; ++j) {
    const double tt = tau_minus + j * dt;
    const double xt = 0.3 * std::exp(-tt);
    const double w = (j == 0 || j == m) ? 0.5 : 1.0;
    const double rho_j = 0.25 * std::exp(-tt * 0.0 - gamma * tt);  // rho * J, rho = 1/4
    num += w * rho_j * std::exp(-xt * xt);
    den += w * rho_j;
  }
  CHECK(value == doctest::Approx(std::log(num / den)).epsilon(1e-6));
}

TEST_CASE("capped all-space exit matches the wide-window continuous weights") {
  const FlowConfig base_cfg = linear_flow_1d(1.0);
  TargetModel t;
  t.dim = 1;
  t.log_rho = [](const Vec& x) {
    return -0.5 * std::log(2.0 * neo::pi_const) - 0.5 * x[0] * x[0];
  };
  t.sample_rho = [](RngStream& rng) { return Vec{rng.normal()}; };
  t.log_like = [](const Vec& x) { return -x[0] * x[0]; };
  t.grad_U = [](const Vec&) { return Vec{0.0}; };

  FlowConfig capped = base_cfg;
  capped.time_cap = 20.0;
  const double step = 0.05;
  const Vec x0{0.3};
  const double neis_value =
      std::exp(neis_sample_log_value(x0, t, capped, ExitSet::all_space(), step));

  // continuous orbit weights with a window wide enough to cover everything
  const WeightFunction wf = WeightFunction::window(-20.0, 20.0);
  const int m = static_cast<int>(40.0 / step);
  double integral = 0.0;
  for (int j = 0; j <= m; ++j) {
    const double tt = -20.0 + j * step;
    const double w = continuous_weight(x0, tt, capped, wf, step, t.log_rho);
    const auto fp = flow(x0, tt, capped);
    const double trap = (j == 0 || j == m) ? 0.5 : 1.0;
    integral += trap * w * std::exp(t.log_like(fp.x)) * step;
  }
  CHECK(neis_value == doctest::Approx(integral).epsilon(1e-3));
}

TEST_CASE("trajectory estimator is unbiased against quadrature") {
  const FlowConfig cfg = linear_flow_1d(1.0);
  FlowConfig capped = cfg;
  capped.time_cap = 12.0;
  TargetModel t = uniform_rho(-2.0, 2.0, [](const Vec& x) {
    return (x[0] > 0.0 && x[0] < 1.0) ? 0.0 : neg_inf;
  });

  RngStream rng(808, 0);
  const long n = 10000;
  const auto rep = neis_estimate(t, capped, ExitSet::interval(-2.0, 2.0), n, rng, 0.005,
                                 /*keep_per_sample=*/true);
  // estimand: integral of f rho over O = 1/4
  Vec values(rep.per_sample_log_z.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    values[i] = std::exp(rep.per_sample_log_z[i]);
  const double mean = oracle::mean_of(values);
  CHECK(std::abs(mean - 0.25) <= 3.0 * oracle::stderr_of(values));
  CHECK(rep.capped_orbits == n);  // the contraction never exits forward
}

TEST_CASE("discretized orbit sums converge to the continuous limit at first order") {
  const TargetModel base = make_gaussian_L_1d();
  auto f = [](const Vec& x) { return std::tanh(x[0]); };
  const auto rows = stepsize_convergence_table({1.0, 0.5}, base, 1.0, 1.0, 1.0,
                                               {0.2, 0.1, 0.05, 0.025}, f);
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i].abs_error < rows[i - 1].abs_error);
    const double ratio = rows[i - 1].abs_error / rows[i].abs_error;
    CHECK(ratio >= 1.5);
    CHECK(ratio <= 2.5);
  }
  // window endpoints must divide every step
  CHECK_THROWS_AS(stepsize_convergence_table({1.0, 0.5}, base, 1.0, 1.0, 1.0, {0.3}, f),
                  std::invalid_argument);
}

TEST_CASE("trajectory and orbit estimates approach the same continuous value") {
  // deterministic at a fixed start point: both discretizations tend to the
  // same limit as their steps shrink
  const TargetModel base = make_gaussian_L_1d();
  const Vec mass{1.0};
  const TargetModel phase = neo::make_phase_target(base, mass);
  FlowConfig cfg = conformal_flow(base, 1.0, mass);
  cfg.time_cap = 3.0;

  const Vec x0{0.8, 0.4};
  Vec errors;
  const double reference =
      neis_sample_log_value(x0, phase, cfg, ExitSet::all_space(), 0.0025);
  for (double step : {0.08, 0.04, 0.02}) {
    const double v = neis_sample_log_value(x0, phase, cfg, ExitSet::all_space(), step);
    errors.push_back(std::abs(v - reference));
  }
  CHECK(errors[1] < errors[0]);
  CHECK(errors[2] < errors[1]);
}
