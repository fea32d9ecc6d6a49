#pragma once

// Test-side oracles, kept independent of the library code paths they check:
// quadrature rules, finite differences, distribution helpers, and summary
// statistics used to freeze expected values.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "neo/core.hpp"

namespace oracle {

using neo::Vec;

// Composite Simpson rule with n even intervals.
inline double simpson_1d(const std::function<double(double)>& f, double lo, double hi, int n) {
  const double h = (hi - lo) / n;
  double acc = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) acc += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

// Integral over (-x_cap, x_cap) via the substitution x = scale * tan(theta);
// handles heavy tails that a truncated box would miss.
inline double integrate_line(const std::function<double(double)>& f, double scale, int n,
                             double x_cap = 1e7) {
  auto g = [&](double th) {
    const double c = std::cos(th);
    const double x = scale * std::tan(th);
    return f(x) * scale / (c * c);
  };
  const double th_max = std::atan(x_cap / scale);
  return simpson_1d(g, -th_max, th_max, n);
}

inline double normal_pdf(double x, double mean = 0.0, double var = 1.0) {
  const double z = x - mean;
  return std::exp(-0.5 * z * z / var) / std::sqrt(2.0 * neo::pi_const * var);
}

inline double normal_cdf(double x, double mean = 0.0, double sd = 1.0) {
  return 0.5 * std::erfc(-(x - mean) / (sd * std::sqrt(2.0)));
}

// Central-difference gradient of a scalar function.
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x,
                       double step = 1e-5) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    Vec hi = x, lo = x;
    hi[i] += step;
    lo[i] -= step;
    g[i] = (f(hi) - f(lo)) / (2.0 * step);
  }
  return g;
}

inline double mean_of(const Vec& v) {
  double m = 0.0;
  for (double x : v) m += x;
  return m / static_cast<double>(v.size());
}

inline double variance_of(const Vec& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

inline double stderr_of(const Vec& v) {
  return std::sqrt(variance_of(v) / static_cast<double>(v.size()));
}

// Kolmogorov distance between an empirical sample and a reference CDF.
inline double kolmogorov_distance(Vec samples, const std::function<double(double)>& cdf) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double c = cdf(samples[i]);
    d = std::max(d, std::abs(c - static_cast<double>(i) / n));
    d = std::max(d, std::abs(c - static_cast<double>(i + 1) / n));
  }
  return d;
}

// Total variation between a histogram of samples (clamped into [lo, hi]) and
// reference bin masses; mass outside the box counts toward the edge bins of
// the reference as well.
inline double histogram_tv(const std::vector<double>& samples, double lo, double hi, int bins,
                           const std::function<double(double)>& density, int quad_per_bin = 64) {
  const double width = (hi - lo) / bins;
  std::vector<double> emp(static_cast<std::size_t>(bins), 0.0);
  for (double s : samples) {
    int b = static_cast<int>((s - lo) / width);
    b = std::clamp(b, 0, bins - 1);
    emp[static_cast<std::size_t>(b)] += 1.0;
  }
  for (double& e : emp) e /= static_cast<double>(samples.size());
  double tv = 0.0;
  double ref_total = 0.0;
  std::vector<double> ref(static_cast<std::size_t>(bins), 0.0);
  for (int b = 0; b < bins; ++b) {
    ref[static_cast<std::size_t>(b)] =
        simpson_1d(density, lo + b * width, lo + (b + 1) * width, quad_per_bin);
    ref_total += ref[static_cast<std::size_t>(b)];
  }
  for (int b = 0; b < bins; ++b)
    tv += std::abs(emp[static_cast<std::size_t>(b)] - ref[static_cast<std::size_t>(b)] / ref_total);
  return 0.5 * tv;
}

}  // namespace oracle
