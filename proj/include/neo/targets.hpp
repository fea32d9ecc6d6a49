#pragma once

// Benchmark targets packaged as proposal rho + likelihood ratio L with
// pi = rho * L / Z. Every built-in benchmark normalizes pi, so the ground
// truth Z is exactly 1 and oracle tests have an exact reference. The phase
// space augmentation pairs any base target with a Gaussian momentum block.

#include <functional>
#include <optional>
#include <stdexcept>
#include <utility>

#include "neo/core.hpp"

namespace neo {

// Unnormalized target as proposal + likelihood + potential gradient.
// grad_U is the gradient of U = -log(rho * L); instances keep it consistent
// analytically and tests cross-check by finite differences.
struct TargetModel {
  int dim = 0;
  std::function<double(const Vec&)> log_rho;
  std::function<Vec(RngStream&)> sample_rho;
  std::function<double(const Vec&)> log_like;  // log L, -inf allowed, never NaN
  std::function<Vec(const Vec&)> grad_U;

  std::optional<double> log_z_true;             // known normalizing constant
  std::optional<double> sup_like;               // ||L||_inf when declared
  std::optional<double> gaussian_rho_sigma2;    // set when rho = N(0, s2 I)
  std::optional<Vec> momentum_mass;             // set on phase-augmented targets

  int position_dim() const { return momentum_mass ? dim / 2 : dim; }
};

struct GaussianProposal {
  int dim;
  double sigma2;

  double log_density(const Vec& x) const {
    double s = 0.0;
    for (double xi : x) s += xi * xi;
    return -0.5 * dim * std::log(2.0 * pi_const * sigma2) - 0.5 * s / sigma2;
  }
  Vec sample(RngStream& rng) const {
    Vec x(static_cast<std::size_t>(dim));
    const double sd = std::sqrt(sigma2);
    for (auto& xi : x) xi = sd * rng.normal();
    return x;
  }
  Vec grad_log_density(const Vec& x) const {
    Vec g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = -x[i] / sigma2;
    return g;
  }
};

inline GaussianProposal make_gaussian_proposal(int dim, double sigma2) {
  if (dim < 1) throw std::invalid_argument("make_gaussian_proposal: dim must be >= 1");
  if (!(sigma2 > 0.0)) throw std::invalid_argument("make_gaussian_proposal: sigma2 must be > 0");
  return GaussianProposal{dim, sigma2};
}

namespace detail {

inline double log_normal_1d(double x, double mean, double var) {
  const double z = x - mean;
  return -0.5 * std::log(2.0 * pi_const * var) - 0.5 * z * z / var;
}

// log L = log pi - log rho without ever producing NaN: an exact zero of pi
// dominates (the orbit weight there is zero anyway), and a zero of rho only
// happens where pi underflows too.
inline double safe_log_ratio(double log_pi, double log_rho) {
  if (log_pi == neg_inf || log_rho == neg_inf) return neg_inf;
  return log_pi - log_rho;
}

}  // namespace detail

// 5x5 grid of Gaussian bumps: means (i, j, 0, ..., 0) for i, j in {-2..2},
// covariance diag(0.01, 0.01, 0.1, ..., 0.1) unless overridden. pi is the
// normalized 25-component mixture, so Z = 1.
inline TargetModel make_mg25(int dim, std::optional<Vec> cov_override = std::nullopt,
                             double sigma2_rho = 5.0) {
  if (dim < 2) throw std::invalid_argument("make_mg25: dim must be >= 2");
  Vec cov(static_cast<std::size_t>(dim), 0.1);
  cov[0] = cov[1] = 0.01;
  if (cov_override) {
    if (static_cast<int>(cov_override->size()) != dim)
      throw std::invalid_argument("make_mg25: covariance override has wrong dimension");
    for (double c : *cov_override)
      if (!(c > 0.0)) throw std::invalid_argument("make_mg25: covariance entries must be > 0");
    cov = *cov_override;
  }

  std::vector<Vec> means;
  means.reserve(25);
  for (int i = -2; i <= 2; ++i)
    for (int j = -2; j <= 2; ++j) {
      Vec mu(static_cast<std::size_t>(dim), 0.0);
      mu[0] = static_cast<double>(i);
      mu[1] = static_cast<double>(j);
      means.push_back(std::move(mu));
    }

  double log_norm = 0.0;  // shared component normalizer
  for (double c : cov) log_norm -= 0.5 * std::log(2.0 * pi_const * c);

  auto comp_logs = [dim, cov, means, log_norm](const Vec& x) {
    Vec logs(25);
    for (std::size_t m = 0; m < 25; ++m) {
      double q = 0.0;
      for (int i = 0; i < dim; ++i) {
        const double z = x[static_cast<std::size_t>(i)] - means[m][static_cast<std::size_t>(i)];
        q += z * z / cov[static_cast<std::size_t>(i)];
      }
      logs[m] = log_norm - 0.5 * q;
    }
    return logs;
  };
  auto log_pi = [comp_logs](const Vec& x) {
    return log_sum_exp(comp_logs(x)) - std::log(25.0);
  };

  const GaussianProposal rho = make_gaussian_proposal(dim, sigma2_rho);

  TargetModel t;
  t.dim = dim;
  t.log_rho = [rho](const Vec& x) { return rho.log_density(x); };
  t.sample_rho = [rho](RngStream& rng) { return rho.sample(rng); };
  t.log_like = [log_pi, rho](const Vec& x) {
    return detail::safe_log_ratio(log_pi(x), rho.log_density(x));
  };
  t.grad_U = [dim, cov, means, comp_logs](const Vec& x) {
    // grad U = -grad log pi via component responsibilities
    Vec logs = comp_logs(x);
    const double total = log_sum_exp(logs);
    Vec g(static_cast<std::size_t>(dim), 0.0);
    for (std::size_t m = 0; m < 25; ++m) {
      const double r = std::exp(logs[m] - total);
      if (r == 0.0) continue;
      for (int i = 0; i < dim; ++i)
        g[static_cast<std::size_t>(i)] +=
            r * (x[static_cast<std::size_t>(i)] - means[m][static_cast<std::size_t>(i)]) /
            cov[static_cast<std::size_t>(i)];
    }
    return g;
  };
  t.log_z_true = 0.0;
  t.gaussian_rho_sigma2 = sigma2_rho;
  return t;
}

// Neal-style funnel: pi(x) = N(x1; 0, a^2) prod_{i>=2} N(x_i; 0, e^{2 b x1}).
inline TargetModel make_funnel(int dim, double a = 1.0, double b = 0.5,
                               double sigma2_rho = 5.0) {
  if (dim < 2) throw std::invalid_argument("make_funnel: dim must be >= 2");
  if (!(a > 0.0)) throw std::invalid_argument("make_funnel: a must be > 0");

  auto log_pi = [dim, a, b](const Vec& x) {
    // fully in log form: stays finite (or -inf) for any finite x, even when
    // the per-coordinate variance e^{2 b x1} over- or underflows
    double lp = detail::log_normal_1d(x[0], 0.0, a * a);
    const double log_var = 2.0 * b * x[0];
    const double inv_var = std::exp(-log_var);  // may be 0 or +inf
    for (int i = 1; i < dim; ++i) {
      const double xi = x[static_cast<std::size_t>(i)];
      lp += -0.5 * std::log(2.0 * pi_const) - 0.5 * log_var;
      if (xi != 0.0) lp -= 0.5 * xi * xi * inv_var;  // -inf when inv_var overflows
    }
    return lp;
  };

  const GaussianProposal rho = make_gaussian_proposal(dim, sigma2_rho);

  TargetModel t;
  t.dim = dim;
  t.log_rho = [rho](const Vec& x) { return rho.log_density(x); };
  t.sample_rho = [rho](RngStream& rng) { return rho.sample(rng); };
  t.log_like = [log_pi, rho](const Vec& x) {
    return detail::safe_log_ratio(log_pi(x), rho.log_density(x));
  };
  t.grad_U = [dim, a, b](const Vec& x) {
    Vec g(static_cast<std::size_t>(dim));
    const double inv_var = std::exp(-2.0 * b * x[0]);
    double sum_sq = 0.0;
    for (int i = 1; i < dim; ++i) {
      const double xi = x[static_cast<std::size_t>(i)];
      sum_sq += xi * xi;
      g[static_cast<std::size_t>(i)] = xi * inv_var;
    }
    g[0] = x[0] / (a * a) + static_cast<double>(dim - 1) * b - b * sum_sq * inv_var;
    return g;
  };
  t.log_z_true = 0.0;
  t.gaussian_rho_sigma2 = sigma2_rho;
  return t;
}

// Product over coordinates of a symmetric two-component Cauchy mixture with
// centers at +-mu and common scale sigma.
inline TargetModel make_cauchy_mixture(int dim, double mu = 5.0, double sigma = 1.0,
                                       double sigma2_rho = 5.0) {
  if (dim < 1) throw std::invalid_argument("make_cauchy_mixture: dim must be >= 1");
  if (!(sigma > 0.0)) throw std::invalid_argument("make_cauchy_mixture: sigma must be > 0");

  auto mix_pdf = [mu, sigma](double x) {
    const double z1 = (x - mu) / sigma;
    const double z2 = (x + mu) / sigma;
    const double c1 = 1.0 / (pi_const * sigma * (1.0 + z1 * z1));
    const double c2 = 1.0 / (pi_const * sigma * (1.0 + z2 * z2));
    return 0.5 * (c1 + c2);
  };
  auto mix_dpdf = [mu, sigma](double x) {
    const double z1 = (x - mu) / sigma;
    const double z2 = (x + mu) / sigma;
    const double c1 = 1.0 / (pi_const * sigma * (1.0 + z1 * z1));
    const double c2 = 1.0 / (pi_const * sigma * (1.0 + z2 * z2));
    const double d1 = c1 * (-2.0 * z1) / (sigma * (1.0 + z1 * z1));
    const double d2 = c2 * (-2.0 * z2) / (sigma * (1.0 + z2 * z2));
    return 0.5 * (d1 + d2);
  };

  auto log_pi = [dim, mix_pdf](const Vec& x) {
    double lp = 0.0;
    for (int i = 0; i < dim; ++i) lp += std::log(mix_pdf(x[static_cast<std::size_t>(i)]));
    return lp;
  };

  const GaussianProposal rho = make_gaussian_proposal(dim, sigma2_rho);

  TargetModel t;
  t.dim = dim;
  t.log_rho = [rho](const Vec& x) { return rho.log_density(x); };
  t.sample_rho = [rho](RngStream& rng) { return rho.sample(rng); };
  t.log_like = [log_pi, rho](const Vec& x) {
    return detail::safe_log_ratio(log_pi(x), rho.log_density(x));
  };
  t.grad_U = [dim, mix_pdf, mix_dpdf](const Vec& x) {
    Vec g(static_cast<std::size_t>(dim));
    for (int i = 0; i < dim; ++i) {
      const double xi = x[static_cast<std::size_t>(i)];
      g[static_cast<std::size_t>(i)] = -mix_dpdf(xi) / mix_pdf(xi);
    }
    return g;
  };
  t.log_z_true = 0.0;
  t.gaussian_rho_sigma2 = sigma2_rho;
  return t;
}

// Closed-form 1D fixture: rho = N(0,1), L(x) = exp(-x^2/2). Exactly
// Z = 1/sqrt(2) and E_rho[(L/Z)^2] = 2/sqrt(3); pi = N(0, 1/2).
inline TargetModel make_gaussian_L_1d() {
  const GaussianProposal rho = make_gaussian_proposal(1, 1.0);
  TargetModel t;
  t.dim = 1;
  t.log_rho = [rho](const Vec& x) { return rho.log_density(x); };
  t.sample_rho = [rho](RngStream& rng) { return rho.sample(rng); };
  t.log_like = [](const Vec& x) { return -0.5 * x[0] * x[0]; };
  t.grad_U = [](const Vec& x) { return Vec{2.0 * x[0]}; };
  t.log_z_true = -0.5 * std::log(2.0);
  t.sup_like = 1.0;
  t.gaussian_rho_sigma2 = 1.0;
  return t;
}

// L == 1 everywhere; Z = 1 trivially. Useful for exactness tests.
inline TargetModel make_flat_like(int dim, double sigma2_rho = 1.0) {
  const GaussianProposal rho = make_gaussian_proposal(dim, sigma2_rho);
  TargetModel t;
  t.dim = dim;
  t.log_rho = [rho](const Vec& x) { return rho.log_density(x); };
  t.sample_rho = [rho](RngStream& rng) { return rho.sample(rng); };
  t.log_like = [](const Vec&) { return 0.0; };
  t.grad_U = [rho](const Vec& x) {
    Vec g = rho.grad_log_density(x);
    for (auto& v : g) v = -v;
    return g;
  };
  t.log_z_true = 0.0;
  t.sup_like = 1.0;
  t.gaussian_rho_sigma2 = sigma2_rho;
  return t;
}

// Phase-space augmentation: rho~(q, p) = rho(q) N(p; 0, M) with M diagonal,
// L~(q, p) = L(q). The momentum block is normalized, so the (q, p)
// normalizing constant equals the q-space one.
inline TargetModel make_phase_target(const TargetModel& base, Vec mass_diag) {
  if (static_cast<int>(mass_diag.size()) != base.dim)
    throw std::invalid_argument("make_phase_target: mass diagonal has wrong dimension");
  for (double m : mass_diag)
    if (!(m > 0.0)) throw std::invalid_argument("make_phase_target: mass entries must be > 0");

  const int d = base.dim;
  double log_norm_p = 0.0;
  for (double m : mass_diag) log_norm_p -= 0.5 * std::log(2.0 * pi_const * m);

  TargetModel t;
  t.dim = 2 * d;
  t.log_rho = [base, mass_diag, log_norm_p, d](const Vec& x) {
    Vec q(x.begin(), x.begin() + d);
    double kin = 0.0;
    for (int i = 0; i < d; ++i) {
      const double pi_ = x[static_cast<std::size_t>(d + i)];
      kin += pi_ * pi_ / mass_diag[static_cast<std::size_t>(i)];
    }
    return base.log_rho(q) - 0.5 * kin + log_norm_p;
  };
  t.sample_rho = [base, mass_diag, d](RngStream& rng) {
    Vec q = base.sample_rho(rng);
    Vec x(static_cast<std::size_t>(2 * d));
    for (int i = 0; i < d; ++i) x[static_cast<std::size_t>(i)] = q[static_cast<std::size_t>(i)];
    for (int i = 0; i < d; ++i)
      x[static_cast<std::size_t>(d + i)] =
          std::sqrt(mass_diag[static_cast<std::size_t>(i)]) * rng.normal();
    return x;
  };
  t.log_like = [base, d](const Vec& x) {
    Vec q(x.begin(), x.begin() + d);
    return base.log_like(q);
  };
  t.grad_U = [base, mass_diag, d](const Vec& x) {
    Vec q(x.begin(), x.begin() + d);
    Vec gq = base.grad_U(q);
    Vec g(static_cast<std::size_t>(2 * d));
    for (int i = 0; i < d; ++i) {
      g[static_cast<std::size_t>(i)] = gq[static_cast<std::size_t>(i)];
      g[static_cast<std::size_t>(d + i)] =
          x[static_cast<std::size_t>(d + i)] / mass_diag[static_cast<std::size_t>(i)];
    }
    return g;
  };
  t.log_z_true = base.log_z_true;
  t.sup_like = base.sup_like;
  t.gaussian_rho_sigma2 = base.gaussian_rho_sigma2;
  t.momentum_mass = std::move(mass_diag);
  return t;
}

}  // namespace neo
