#pragma once

// Orbit tables: cached forward/backward iterates of a start point together
// with the log-density + log-Jacobian values a_m and the orbit weights.
//
// For weight support [k_min, k_max] the denominator of the weight at k needs
// a_{k-j} for every supported j, so the table spans m in
// [k_min - k_max, k_max - k_min]; a forward-only window still walks the
// backward orbit. Divergent or out-of-set points carry a_m = -inf and drop
// out of every log-domain sum.

#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>

#include "neo/core.hpp"
#include "neo/targets.hpp"
#include "neo/transforms.hpp"

namespace neo {

struct OrbitTable {
  Vec start;
  int span_lo = 0, span_hi = 0;  // orbit indices m covered
  int k_min = 0, k_max = 0;      // weight support

  std::vector<Vec> points;   // T^m(start), index m - span_lo; empty past divergence
  Vec log_rho_jac;           // a_m = log rho(T^m x) + log J_{T^m}(x)
  Vec log_w;                 // index k - k_min
  Vec log_like;              // log L(T^k x), index k - k_min
  double log_z_hat = neg_inf;

  std::optional<int> diverged_fwd;  // first divergent forward index
  std::optional<int> diverged_bwd;  // first divergent backward index

  const Vec& point(int m) const { return points[static_cast<std::size_t>(m - span_lo)]; }
  double a(int m) const { return log_rho_jac[static_cast<std::size_t>(m - span_lo)]; }
  double log_weight(int k) const { return log_w[static_cast<std::size_t>(k - k_min)]; }
  double log_like_at(int k) const { return log_like[static_cast<std::size_t>(k - k_min)]; }
};

// Open set O used by exit-time truncation. contains must be deterministic
// and total; non-finite points are never passed to it.
struct ExitSet {
  std::function<bool(const Vec&)> contains;

  static ExitSet all_space() {
    return ExitSet{[](const Vec&) { return true; }};
  }
  static ExitSet box(Vec lo, Vec hi) {
    return ExitSet{[lo = std::move(lo), hi = std::move(hi)](const Vec& x) {
      for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] <= lo[i] || x[i] >= hi[i]) return false;
      return true;
    }};
  }
  static ExitSet interval(double lo, double hi) { return box({lo}, {hi}); }
  // {x : H(x) <= e_max} for a user-supplied energy function.
  static ExitSet energy_ball(std::function<double(const Vec&)> energy, double e_max) {
    return ExitSet{[energy = std::move(energy), e_max](const Vec& x) {
      return energy(x) <= e_max;
    }};
  }
};

struct ExitTimes {
  int tau_minus = 0;  // <= -1
  int tau_plus = 0;   // >= 1
  bool capped_minus = false;
  bool capped_plus = false;
};

// First forward index >= 1 and first backward index <= -1 leaving O, each
// capped at max_iter. A cap is reported separately from a true exit; a
// non-finite iterate counts as having left O.
inline ExitTimes exit_times(const Vec& x, const Transform& transform, const ExitSet& exit_set,
                            int max_iter) {
  if (!exit_set.contains(x)) throw std::invalid_argument("exit_times: start point outside O");
  ExitTimes out;
  Vec cur = x;
  out.tau_plus = max_iter;
  out.capped_plus = true;
  for (int k = 1; k <= max_iter; ++k) {
    cur = transform.forward(cur);
    if (!all_finite(cur) || !exit_set.contains(cur)) {
      out.tau_plus = k;
      out.capped_plus = false;
      break;
    }
  }
  cur = x;
  out.tau_minus = -max_iter;
  out.capped_minus = true;
  for (int k = 1; k <= max_iter; ++k) {
    cur = transform.inverse(cur);
    if (!all_finite(cur) || !exit_set.contains(cur)) {
      out.tau_minus = -k;
      out.capped_minus = false;
      break;
    }
  }
  return out;
}

namespace detail {

// Walks the orbit in both directions, filling points and a_m. When exit_set
// is non-null, indices at or past the first point outside O get a_m = -inf
// (the exit index itself is excluded, matching the open in-set window).
inline OrbitTable build_orbit_impl(const Vec& x, const Transform& transform,
                                   const WeightSequence& weights, const TargetModel& target,
                                   const ExitSet* exit_set) {
  if (!all_finite(x)) throw std::invalid_argument("build_orbit: non-finite start point");
  if (exit_set && !exit_set->contains(x))
    throw std::invalid_argument("build_orbit: start point outside O");

  OrbitTable t;
  t.start = x;
  t.k_min = weights.k_min();
  t.k_max = weights.k_max();
  t.span_lo = weights.k_min() - weights.k_max();
  t.span_hi = weights.k_max() - weights.k_min();

  const std::size_t span_n = static_cast<std::size_t>(t.span_hi - t.span_lo + 1);
  t.points.assign(span_n, Vec{});
  t.log_rho_jac.assign(span_n, neg_inf);

  auto slot = [&](int m) { return static_cast<std::size_t>(m - t.span_lo); };

  const double a0 = target.log_rho(x);
  if (!(a0 > neg_inf))
    throw std::invalid_argument("build_orbit: start point outside the proposal support");
  t.points[slot(0)] = x;
  t.log_rho_jac[slot(0)] = a0;

  // forward sweep
  {
    Vec cur = x;
    double log_jac = 0.0;
    for (int m = 1; m <= t.span_hi; ++m) {
      log_jac += transform.log_jacobian_forward(cur);
      Vec next = transform.forward(cur);
      if (!all_finite(next)) {
        t.diverged_fwd = m;
        break;  // remaining slots keep a = -inf
      }
      if (exit_set && !exit_set->contains(next)) break;  // exit index and beyond excluded
      const double lr = target.log_rho(next);
      t.log_rho_jac[slot(m)] = std::isnan(lr) ? neg_inf : lr + log_jac;
      t.points[slot(m)] = next;
      cur = std::move(next);
    }
  }

  // backward sweep; J_{T^{-(m+1)}}(x) = J_{T^{-m}}(x) / J_T(T^{-(m+1)} x)
  {
    Vec cur = x;
    double log_jac = 0.0;
    for (int m = -1; m >= t.span_lo; --m) {
      Vec next = transform.inverse(cur);
      if (!all_finite(next)) {
        t.diverged_bwd = m;
        break;
      }
      if (exit_set && !exit_set->contains(next)) break;
      log_jac -= transform.log_jacobian_forward(next);
      const double lr = target.log_rho(next);
      t.log_rho_jac[slot(m)] = std::isnan(lr) ? neg_inf : lr + log_jac;
      t.points[slot(m)] = next;
      cur = std::move(next);
    }
  }

  // weights: log w_k = log w_k(num) - log sum_j exp(log varpi_j + a_{k-j})
  const int support = weights.support_size();
  t.log_w.assign(static_cast<std::size_t>(support), neg_inf);
  t.log_like.assign(static_cast<std::size_t>(support), neg_inf);
  Vec den_terms(static_cast<std::size_t>(support));
  Vec z_terms(static_cast<std::size_t>(support));
  for (int k = t.k_min; k <= t.k_max; ++k) {
    const std::size_t kk = static_cast<std::size_t>(k - t.k_min);
    const double num = weights.log_at(k) + t.log_rho_jac[slot(k)];
    if (num == neg_inf) {
      z_terms[kk] = neg_inf;
      continue;
    }
    for (int j = weights.k_min(); j <= weights.k_max(); ++j)
      den_terms[static_cast<std::size_t>(j - weights.k_min())] =
          weights.log_at(j) + t.log_rho_jac[slot(k - j)];
    const double den = log_sum_exp(den_terms);
    t.log_w[kk] = num - den;
    t.log_like[kk] = target.log_like(t.points[slot(k)]);
    z_terms[kk] = t.log_w[kk] + t.log_like[kk];
  }
  t.log_z_hat = log_sum_exp(z_terms);
  return t;
}

}  // namespace detail

inline OrbitTable build_orbit(const Vec& x, const Transform& transform,
                              const WeightSequence& weights, const TargetModel& target) {
  return detail::build_orbit_impl(x, transform, weights, target, nullptr);
}

// Exit-time truncated variant: contributions outside the in-set index window
// (tau_minus(x), tau_plus(x)) are zeroed, and the weight denominators see
// only in-set terms.
inline OrbitTable build_orbit_truncated(const Vec& x, const Transform& transform,
                                        const WeightSequence& weights, const TargetModel& target,
                                        const ExitSet& exit_set) {
  return detail::build_orbit_impl(x, transform, weights, target, &exit_set);
}

}  // namespace neo
