#pragma once

// Core numeric plumbing shared by every module: counter-based seedable RNG
// streams, finite-support weight sequences, and stable log-domain reductions.
// All density arithmetic in this library is carried in log space; -inf is the
// canonical encoding of an exact zero and must never turn into NaN.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace neo {

using Vec = std::vector<double>;

inline constexpr double neg_inf = -std::numeric_limits<double>::infinity();
inline constexpr double pos_inf = std::numeric_limits<double>::infinity();
inline constexpr double pi_const = 3.14159265358979323846;

inline bool all_finite(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

namespace detail {

inline constexpr std::uint64_t golden64 = 0x9E3779B97F4A7C15ull;

// SplitMix64 finalizer; good avalanche, cheap.
inline std::uint64_t mix64(std::uint64_t z) noexcept {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  z ^= z >> 31;
  return z;
}

}  // namespace detail

// Counter-based random stream: the triple (seed, stream_id, draw index)
// determines every value, so replicated runs are reproducible regardless of
// scheduling, and disjoint stream_ids give independent parallel streams.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_(stream_id) {
    key_ = detail::mix64(seed + detail::golden64) ^
           detail::mix64(stream_id * 0xD1B54A32D192ED03ull + 0x8BB84B93962EACC9ull);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_; }
  std::uint64_t draws() const { return counter_; }

  std::uint64_t next_u64() { return detail::mix64(key_ + (++counter_) * detail::golden64); }

  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1]; safe under log().
  double uniform_pos() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  // Standard normal via Box-Muller. Always consumes exactly two words so the
  // draw index stays in lockstep across code paths.
  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * pi_const * u2);
  }

  Vec normal_vec(std::size_t n) {
    Vec out(n);
    for (auto& x : out) x = normal();
    return out;
  }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    int k = static_cast<int>(uniform() * n);
    return k >= n ? n - 1 : k;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// log(sum_i exp(v_i)) with the max subtracted before exponentiation.
// An all-(-inf) or empty input yields -inf; NaN or +inf entries are rejected.
// A single finite entry is returned exactly (log(1) == 0), which downstream
// reduction identities rely on.
inline double log_sum_exp(std::span<const double> values) {
  double m = neg_inf;
  std::size_t argmax = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (std::isnan(v) || v == pos_inf)
      throw std::invalid_argument("log_sum_exp: NaN or +inf entry");
    if (v > m) {
      m = v;
      argmax = i;
    }
  }
  if (m == neg_inf) return neg_inf;
  double s = 0.0;  // log1p over the non-pivot terms keeps tiny contributions
  for (std::size_t i = 0; i < values.size(); ++i)
    if (i != argmax) s += std::exp(values[i] - m);
  return m + std::log1p(s);
}

inline double log_sum_exp(const Vec& values) {
  return log_sum_exp(std::span<const double>(values.data(), values.size()));
}

// Finite-support nonnegative weight sequence over orbit indices. The entry at
// index 0 must be strictly positive; offset is the smallest supported index.
class WeightSequence {
 public:
  WeightSequence(int offset, Vec values) : offset_(offset), values_(std::move(values)) {
    if (values_.empty()) throw std::invalid_argument("WeightSequence: empty support");
    bool any_pos = false;
    for (double w : values_) {
      if (!(w >= 0.0) || !std::isfinite(w))
        throw std::invalid_argument("WeightSequence: weights must be finite and >= 0");
      if (w > 0.0) any_pos = true;
    }
    if (!any_pos) throw std::invalid_argument("WeightSequence: all weights zero");
    if (offset_ > 0 || offset_ + static_cast<int>(values_.size()) - 1 < 0 ||
        values_[static_cast<std::size_t>(-offset_)] <= 0.0)
      throw std::invalid_argument("WeightSequence: weight at index 0 must be > 0");
    omega_ = 0.0;
    for (double w : values_) omega_ += w;
    log_values_.resize(values_.size());
    for (std::size_t i = 0; i < values_.size(); ++i)
      log_values_[i] = values_[i] > 0.0 ? std::log(values_[i]) : neg_inf;
  }

  static WeightSequence point_mass() { return WeightSequence(0, {1.0}); }

  int k_min() const { return offset_; }
  int k_max() const { return offset_ + static_cast<int>(values_.size()) - 1; }
  int support_size() const { return static_cast<int>(values_.size()); }
  bool is_point_mass() const { return values_.size() == 1; }

  double at(int k) const {
    if (k < k_min() || k > k_max()) return 0.0;
    return values_[static_cast<std::size_t>(k - offset_)];
  }
  double log_at(int k) const {
    if (k < k_min() || k > k_max()) return neg_inf;
    return log_values_[static_cast<std::size_t>(k - offset_)];
  }

  double omega() const { return omega_; }
  double log_omega() const { return std::log(omega_); }

 private:
  int offset_;
  Vec values_;
  Vec log_values_;
  double omega_;
};

// Indicator window on k in [0, k_max]; Omega = k_max + 1 exactly.
inline WeightSequence uniform_window_weights(int k_max) {
  if (k_max < 0) throw std::invalid_argument("uniform_window_weights: k_max must be >= 0");
  return WeightSequence(0, Vec(static_cast<std::size_t>(k_max) + 1, 1.0));
}

// Inverse-CDF draw over normalized exp(log_weights). Ties break toward the
// lower index and the scan accumulates in natural order, so the result is
// reproducible across platforms. When exactly one entry is finite no
// randomness is consumed; reductions to single-atom draws stay in RNG
// lockstep with code paths that never draw at all.
inline int categorical_draw(std::span<const double> log_weights, RngStream& rng) {
  int finite_count = 0;
  int last_finite = -1;
  for (std::size_t i = 0; i < log_weights.size(); ++i) {
    const double v = log_weights[i];
    if (std::isnan(v) || v == pos_inf)
      throw std::invalid_argument("categorical_draw: NaN or +inf entry");
    if (v > neg_inf) {
      ++finite_count;
      last_finite = static_cast<int>(i);
    }
  }
  if (finite_count == 0)
    throw std::domain_error("categorical_draw: degenerate distribution (all -inf)");
  if (finite_count == 1) return last_finite;

  const double total = log_sum_exp(log_weights);
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < log_weights.size(); ++i) {
    acc += std::exp(log_weights[i] - total);
    if (u < acc) return static_cast<int>(i);
  }
  return last_finite;  // u landed in rounding slack past the last atom
}

inline int categorical_draw(const Vec& log_weights, RngStream& rng) {
  return categorical_draw(std::span<const double>(log_weights.data(), log_weights.size()), rng);
}

// Index-parallel loop; the body must only write state owned by its index, so
// results do not depend on scheduling. workers <= 0 means hardware default.
template <typename F>
inline void parallel_for(long n, int workers, F&& body) {
  if (n <= 0) return;
  if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
  if (workers <= 0) workers = 1;
  if (static_cast<long>(workers) > n) workers = static_cast<int>(n);
  if (workers == 1) {
    for (long i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<long> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const long i = next.fetch_add(1, std::memory_order_relaxed);
        if (i >= n) return;
        body(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace neo
