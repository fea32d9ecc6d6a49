#pragma once

// Invertible C^1 transforms with exact inverses and log-Jacobians. The
// conformal symplectic Euler integrator is the flagship instance; the affine
// and identity maps exist mostly for tests and reductions.

#include <cstdlib>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>

#include "neo/core.hpp"

namespace neo {

struct PhasePoint {
  Vec q;
  Vec p;

  PhasePoint(Vec q_, Vec p_) : q(std::move(q_)), p(std::move(p_)) {
    if (q.size() != p.size())
      throw std::invalid_argument("PhasePoint: position/momentum dimension mismatch");
    if (!all_finite(q) || !all_finite(p))
      throw std::invalid_argument("PhasePoint: non-finite coordinate");
  }

  Vec flatten() const {
    Vec out(q);
    out.insert(out.end(), p.begin(), p.end());
    return out;
  }
  static PhasePoint from_flat(const Vec& x) {
    if (x.size() % 2 != 0) throw std::invalid_argument("PhasePoint: odd flat dimension");
    const std::size_t d = x.size() / 2;
    return PhasePoint(Vec(x.begin(), x.begin() + d), Vec(x.begin() + d, x.end()));
  }
};

struct ConformalParams {
  double gamma;    // damping, > 0
  double h;        // stepsize, > 0
  Vec mass_diag;   // diagonal of the mass matrix, all entries > 0

  ConformalParams(double gamma_, double h_, Vec mass_diag_)
      : gamma(gamma_), h(h_), mass_diag(std::move(mass_diag_)) {
    if (!(gamma > 0.0)) throw std::invalid_argument("ConformalParams: gamma must be > 0");
    if (!(h > 0.0)) throw std::invalid_argument("ConformalParams: h must be > 0");
    if (mass_diag.empty()) throw std::invalid_argument("ConformalParams: empty mass diagonal");
    for (double m : mass_diag)
      if (!(m > 0.0)) throw std::invalid_argument("ConformalParams: mass entries must be > 0");
  }

  static ConformalParams isotropic(int dim, double gamma, double h, double mass_scale) {
    return ConformalParams(gamma, h, Vec(static_cast<std::size_t>(dim), mass_scale));
  }

  int position_dim() const { return static_cast<int>(mass_diag.size()); }
};

// Abstract invertible map on R^n. forward/inverse may return non-finite
// coordinates when the dynamics blow up; callers treat that as a divergence
// signal, never as an exception.
class Transform {
 public:
  virtual ~Transform() = default;
  virtual int dim() const = 0;
  virtual Vec forward(const Vec& x) const = 0;
  virtual Vec inverse(const Vec& x) const = 0;
  virtual double log_jacobian_forward(const Vec& x) const = 0;
};

class Identity final : public Transform {
 public:
  explicit Identity(int dim) : dim_(dim) {}
  int dim() const override { return dim_; }
  Vec forward(const Vec& x) const override { return x; }
  Vec inverse(const Vec& x) const override { return x; }
  double log_jacobian_forward(const Vec&) const override { return 0.0; }

 private:
  int dim_;
};

class AffineMap1D final : public Transform {
 public:
  AffineMap1D(double a, double b) : a_(a), b_(b) {
    if (a == 0.0) throw std::invalid_argument("AffineMap1D: slope must be nonzero");
  }
  int dim() const override { return 1; }
  Vec forward(const Vec& x) const override { return {a_ * x[0] + b_}; }
  Vec inverse(const Vec& x) const override { return {(x[0] - b_) / a_}; }
  double log_jacobian_forward(const Vec&) const override { return std::log(std::abs(a_)); }

  double slope() const { return a_; }
  double intercept() const { return b_; }

 private:
  double a_, b_;
};

using GradCallback = std::function<Vec(const Vec&)>;

// One step of the conformal symplectic Euler integrator on phase space
// (q, p) in R^{2d}:
//   p' = e^{-h gamma} p - h grad_U(q)
//   q' = q + h M^{-1} p'
// with exact inverse
//   q0 = q - h M^{-1} p,  p0 = e^{h gamma} (p + h grad_U(q0)).
// The Jacobian determinant is the constant e^{-gamma h d} where d is the
// position dimension.
class ConformalSymplecticEuler final : public Transform {
 public:
  ConformalSymplecticEuler(ConformalParams params, GradCallback grad_U)
      : params_(std::move(params)), grad_U_(std::move(grad_U)) {
    d_ = params_.position_dim();
  }

  int dim() const override { return 2 * d_; }

  Vec forward(const Vec& x) const override {
    const double h = params_.h;
    const double damp = std::exp(-h * params_.gamma);
    Vec q(x.begin(), x.begin() + d_);
    const Vec g = grad_U_(q);
    Vec out(static_cast<std::size_t>(2 * d_));
    for (int i = 0; i < d_; ++i) {
      const double pnew = damp * x[static_cast<std::size_t>(d_ + i)] - h * g[static_cast<std::size_t>(i)];
      out[static_cast<std::size_t>(d_ + i)] = pnew;
      out[static_cast<std::size_t>(i)] =
          q[static_cast<std::size_t>(i)] + h * pnew / params_.mass_diag[static_cast<std::size_t>(i)];
    }
    return out;
  }

  Vec inverse(const Vec& x) const override {
    const double h = params_.h;
    const double grow = std::exp(h * params_.gamma);
    Vec q0(static_cast<std::size_t>(d_));
    for (int i = 0; i < d_; ++i)
      q0[static_cast<std::size_t>(i)] =
          x[static_cast<std::size_t>(i)] -
          h * x[static_cast<std::size_t>(d_ + i)] / params_.mass_diag[static_cast<std::size_t>(i)];
    const Vec g = grad_U_(q0);
    Vec out(static_cast<std::size_t>(2 * d_));
    for (int i = 0; i < d_; ++i) {
      out[static_cast<std::size_t>(i)] = q0[static_cast<std::size_t>(i)];
      out[static_cast<std::size_t>(d_ + i)] =
          grow * (x[static_cast<std::size_t>(d_ + i)] + h * g[static_cast<std::size_t>(i)]);
    }
    return out;
  }

  double log_jacobian_forward(const Vec&) const override {
    return -params_.gamma * params_.h * static_cast<double>(d_);
  }

  // log |det D(T^k)|; state-independent, so iterating is a multiplication.
  double log_jacobian_power(int k) const {
    return -params_.gamma * params_.h * static_cast<double>(d_) * static_cast<double>(k);
  }

  const ConformalParams& params() const { return params_; }

 private:
  ConformalParams params_;
  GradCallback grad_U_;
  int d_;
};

struct IterateResult {
  Vec point;
  bool diverged = false;
  int first_bad_index = 0;  // signed orbit index of the first non-finite point
};

// T^k with T^0 = Id and negative k applying the inverse. Divergence is
// reported, not thrown; the returned point is the last finite one.
inline IterateResult iterate(const Transform& t, const Vec& x, int k) {
  IterateResult r{x, false, 0};
  const int n = std::abs(k);
  const int dir = k >= 0 ? 1 : -1;
  for (int i = 1; i <= n; ++i) {
    Vec next = dir > 0 ? t.forward(r.point) : t.inverse(r.point);
    if (!all_finite(next)) {
      r.diverged = true;
      r.first_bad_index = dir * i;
      return r;
    }
    r.point = std::move(next);
  }
  return r;
}

namespace detail {

// log |det A| by partial-pivot LU; A is overwritten.
inline double log_abs_det(std::vector<Vec>& a) {
  const int n = static_cast<int>(a.size());
  double log_det = 0.0;
  for (int c = 0; c < n; ++c) {
    int piv = c;
    for (int r = c + 1; r < n; ++r)
      if (std::abs(a[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)]) >
          std::abs(a[static_cast<std::size_t>(piv)][static_cast<std::size_t>(c)]))
        piv = r;
    if (a[static_cast<std::size_t>(piv)][static_cast<std::size_t>(c)] == 0.0) return neg_inf;
    if (piv != c) std::swap(a[static_cast<std::size_t>(piv)], a[static_cast<std::size_t>(c)]);
    const double d = a[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    log_det += std::log(std::abs(d));
    for (int r = c + 1; r < n; ++r) {
      const double f = a[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] / d;
      if (f == 0.0) continue;
      for (int cc = c; cc < n; ++cc)
        a[static_cast<std::size_t>(r)][static_cast<std::size_t>(cc)] -=
            f * a[static_cast<std::size_t>(c)][static_cast<std::size_t>(cc)];
    }
  }
  return log_det;
}

}  // namespace detail

// Central-difference Jacobian determinant of the forward map. A wrong
// analytic Jacobian silently biases every orbit weight, so new Transform
// implementations should be checked against this once.
inline double numeric_log_jacobian(const Transform& t, const Vec& x, double step = 1e-5) {
  const int n = t.dim();
  std::vector<Vec> jac(static_cast<std::size_t>(n), Vec(static_cast<std::size_t>(n)));
  for (int j = 0; j < n; ++j) {
    Vec hi = x, lo = x;
    hi[static_cast<std::size_t>(j)] += step;
    lo[static_cast<std::size_t>(j)] -= step;
    const Vec fhi = t.forward(hi);
    const Vec flo = t.forward(lo);
    for (int i = 0; i < n; ++i)
      jac[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          (fhi[static_cast<std::size_t>(i)] - flo[static_cast<std::size_t>(i)]) / (2.0 * step);
  }
  return detail::log_abs_det(jac);
}

}  // namespace neo
