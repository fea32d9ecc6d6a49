#pragma once

// NEO-MCMC: iterated SIR over orbit estimates of the normalizing constant.
// Each step keeps a conditioning point, refreshes the other proposals
// (independently or through a proposal-reversible autoregressive chain),
// resamples the conditioning point proportionally to the per-orbit Z
// estimates, and emits one sample drawn from the conditioning orbit.

#include <complex>
#include <memory>
#include <optional>
#include <stdexcept>
#include <utility>

#include "neo/core.hpp"
#include "neo/estimators.hpp"
#include "neo/orbit.hpp"
#include "neo/targets.hpp"
#include "neo/transforms.hpp"

namespace neo {

enum class ProposalMode { independent, autoregressive };

struct KernelConfig {
  int n_proposals;
  WeightSequence weights;
  std::shared_ptr<const Transform> transform;
  ProposalMode mode = ProposalMode::independent;
  double alpha = 0.0;  // autoregressive correlation, in (0,1)

  KernelConfig(int n_proposals_, WeightSequence weights_,
               std::shared_ptr<const Transform> transform_,
               ProposalMode mode_ = ProposalMode::independent, double alpha_ = 0.0)
      : n_proposals(n_proposals_),
        weights(std::move(weights_)),
        transform(std::move(transform_)),
        mode(mode_),
        alpha(alpha_) {
    if (n_proposals < 2) throw std::invalid_argument("KernelConfig: need at least 2 proposals");
    if (!transform) throw std::invalid_argument("KernelConfig: missing transform");
    if (mode == ProposalMode::autoregressive && !(alpha > 0.0 && alpha < 1.0))
      throw std::invalid_argument("KernelConfig: autoregressive alpha must be in (0,1)");
  }
};

// One autoregressive move reversible with respect to N(0, sigma2 I).
inline Vec ar_proposal_draw(const Vec& x, double alpha, double sigma2, RngStream& rng) {
  Vec out(x.size());
  const double sd = std::sqrt(sigma2 * (1.0 - alpha * alpha));
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = alpha * x[i] + sd * rng.normal();
  return out;
}

namespace detail {

// Autoregressive move matched to the target's Gaussian proposal; on a
// phase-augmented target the position and momentum blocks use their own
// variances so the move stays reversible with respect to the full proposal.
inline Vec ar_draw_for_target(const TargetModel& target, const Vec& x, double alpha,
                              RngStream& rng) {
  if (!target.gaussian_rho_sigma2)
    throw std::invalid_argument("autoregressive proposals need a Gaussian proposal density");
  const double s2 = *target.gaussian_rho_sigma2;
  if (!target.momentum_mass) return ar_proposal_draw(x, alpha, s2, rng);
  const Vec& mass = *target.momentum_mass;
  const int d = target.position_dim();
  Vec out(x.size());
  const double scale = std::sqrt(1.0 - alpha * alpha);
  for (int i = 0; i < d; ++i)
    out[static_cast<std::size_t>(i)] =
        alpha * x[static_cast<std::size_t>(i)] + scale * std::sqrt(s2) * rng.normal();
  for (int i = 0; i < d; ++i)
    out[static_cast<std::size_t>(d + i)] =
        alpha * x[static_cast<std::size_t>(d + i)] +
        scale * std::sqrt(mass[static_cast<std::size_t>(i)]) * rng.normal();
  return out;
}

}  // namespace detail

struct ChainState {
  Vec y;             // conditioning point
  OrbitTable orbit;  // cached orbit of y
  Vec u;             // current output sample
  long iter = 0;
  RngStream rng;
};

struct StepInfo {
  bool accepted = false;  // conditioning point replaced this step
  bool stalled = false;   // every fresh proposal had a zero Z estimate
};

// Draws (or validates) an initial conditioning point with a positive orbit
// estimate; proposal draws outside the estimator's support are retried.
inline ChainState init_chain(const KernelConfig& config, const TargetModel& target,
                             RngStream rng, std::optional<Vec> y0 = std::nullopt,
                             int max_attempts = 100) {
  if (y0) {
    OrbitTable orbit = build_orbit(*y0, *config.transform, config.weights, target);
    if (orbit.log_z_hat == neg_inf)
      throw std::invalid_argument("init_chain: starting point has a zero orbit estimate");
    Vec u = *y0;
    return ChainState{std::move(*y0), std::move(orbit), std::move(u), 0, rng};
  }
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    Vec y = target.sample_rho(rng);
    OrbitTable orbit = build_orbit(y, *config.transform, config.weights, target);
    if (orbit.log_z_hat == neg_inf) continue;
    Vec u = y;
    return ChainState{std::move(y), std::move(orbit), std::move(u), 0, rng};
  }
  throw std::runtime_error("init_chain: no valid starting point found");
}

// One transition. The conditioning orbit is reused, so each step builds
// exactly N-1 fresh orbit tables.
inline StepInfo neo_mcmc_step(ChainState& state, const KernelConfig& config,
                              const TargetModel& target) {
  const int n = config.n_proposals;
  std::vector<Vec> proposals(static_cast<std::size_t>(n));
  std::vector<OrbitTable> orbits(static_cast<std::size_t>(n));
  int cond_slot = 0;

  if (config.mode == ProposalMode::independent) {
    proposals[0] = state.y;
    for (int i = 1; i < n; ++i)
      proposals[static_cast<std::size_t>(i)] = target.sample_rho(state.rng);
  } else {
    cond_slot = state.rng.uniform_int(n);
    proposals[static_cast<std::size_t>(cond_slot)] = state.y;
    for (int i = cond_slot - 1; i >= 0; --i)
      proposals[static_cast<std::size_t>(i)] = detail::ar_draw_for_target(
          target, proposals[static_cast<std::size_t>(i + 1)], config.alpha, state.rng);
    for (int i = cond_slot + 1; i < n; ++i)
      proposals[static_cast<std::size_t>(i)] = detail::ar_draw_for_target(
          target, proposals[static_cast<std::size_t>(i - 1)], config.alpha, state.rng);
  }

  Vec log_z(static_cast<std::size_t>(n));
  bool any_fresh_alive = false;
  for (int i = 0; i < n; ++i) {
    if (i == cond_slot) {
      log_z[static_cast<std::size_t>(i)] = state.orbit.log_z_hat;
      continue;
    }
    orbits[static_cast<std::size_t>(i)] =
        build_orbit(proposals[static_cast<std::size_t>(i)], *config.transform, config.weights,
                    target);
    const double lz = orbits[static_cast<std::size_t>(i)].log_z_hat;
    log_z[static_cast<std::size_t>(i)] = lz;
    if (lz > neg_inf) any_fresh_alive = true;
  }

  const int pick = categorical_draw(log_z, state.rng);
  StepInfo info;
  info.accepted = pick != cond_slot;
  info.stalled = !any_fresh_alive;
  if (pick != cond_slot) {
    state.y = std::move(proposals[static_cast<std::size_t>(pick)]);
    state.orbit = std::move(orbits[static_cast<std::size_t>(pick)]);
  }

  // output draw from the conditioning orbit, index k with probability
  // proportional to w_k(y) L(T^k y)
  const OrbitTable& orbit = state.orbit;
  Vec q_log(static_cast<std::size_t>(config.weights.support_size()));
  for (int k = orbit.k_min; k <= orbit.k_max; ++k)
    q_log[static_cast<std::size_t>(k - orbit.k_min)] =
        orbit.log_weight(k) + orbit.log_like_at(k);
  const int k_idx = categorical_draw(q_log, state.rng);
  state.u = orbit.point(orbit.k_min + k_idx);
  ++state.iter;
  return info;
}

// i-SIR is the point-mass special case: per-orbit estimates collapse to
// L(x) and the output draw is the conditioning point itself.
inline StepInfo isir_step(ChainState& state, const KernelConfig& config,
                          const TargetModel& target) {
  if (config.weights.is_point_mass()) return neo_mcmc_step(state, config, target);
  KernelConfig reduced(config.n_proposals, WeightSequence::point_mass(), config.transform,
                       config.mode, config.mode == ProposalMode::autoregressive ? config.alpha
                                                                                : 0.0);
  return neo_mcmc_step(state, reduced, target);
}

// One sampling-importance-resampling draw: n proposal orbits, an orbit
// index proportional to the per-orbit Z estimates, then an on-orbit index
// proportional to w_k L(T^k x).
inline Vec sir_sample(const TargetModel& target, const Transform& transform,
                      const WeightSequence& weights, long n, RngStream& rng) {
  if (n < 1) throw std::invalid_argument("sir_sample: n must be >= 1");
  std::vector<OrbitTable> orbits;
  orbits.reserve(static_cast<std::size_t>(n));
  Vec log_z(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    orbits.push_back(build_orbit(target.sample_rho(rng), transform, weights, target));
    log_z[static_cast<std::size_t>(i)] = orbits.back().log_z_hat;
  }
  int pick;
  try {
    pick = categorical_draw(log_z, rng);
  } catch (const std::domain_error&) {
    throw std::domain_error("sir_sample: all proposal orbits have zero weight");
  }
  const OrbitTable& orbit = orbits[static_cast<std::size_t>(pick)];
  Vec q_log(static_cast<std::size_t>(weights.support_size()));
  for (int k = orbit.k_min; k <= orbit.k_max; ++k)
    q_log[static_cast<std::size_t>(k - orbit.k_min)] =
        orbit.log_weight(k) + orbit.log_like_at(k);
  const int k_idx = categorical_draw(q_log, rng);
  return orbit.point(orbit.k_min + k_idx);
}

struct MixingBound {
  double epsilon = 0.0;  // minorization constant
  double kappa = 0.0;    // per-step total-variation contraction factor
};

// Uniform-ergodicity rate from the sup bound on the normalized per-orbit
// estimate: epsilon_N = (N-1) / (2 M_T + N - 2), kappa_N = 1 - epsilon_N.
inline MixingBound mixing_rate_bound(double m_t, int n_proposals) {
  if (!(m_t >= 1.0)) throw std::invalid_argument("mixing_rate_bound: M_T must be >= 1");
  if (n_proposals < 2) throw std::invalid_argument("mixing_rate_bound: need at least 2 proposals");
  MixingBound b;
  b.epsilon = static_cast<double>(n_proposals - 1) /
              (2.0 * m_t + static_cast<double>(n_proposals) - 2.0);
  b.kappa = 1.0 - b.epsilon;
  return b;
}

namespace detail {

inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * pi_const / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse)
    for (auto& x : a) x /= static_cast<double>(n);
}

// Autocovariances gamma_0..gamma_{m} of a mean-centered series via FFT.
inline Vec autocovariance(const Vec& series, std::size_t max_lag) {
  const std::size_t n = series.size();
  double mean = 0.0;
  for (double v : series) mean += v;
  mean /= static_cast<double>(n);
  std::size_t size = 1;
  while (size < 2 * n) size <<= 1;
  std::vector<std::complex<double>> buf(size, {0.0, 0.0});
  for (std::size_t i = 0; i < n; ++i) buf[i] = {series[i] - mean, 0.0};
  fft_inplace(buf, false);
  for (auto& x : buf) x = x * std::conj(x);
  fft_inplace(buf, true);
  Vec gamma(max_lag + 1);
  for (std::size_t t = 0; t <= max_lag; ++t)
    gamma[t] = buf[t].real() / static_cast<double>(n);
  return gamma;
}

}  // namespace detail

// Effective sample size by the initial-positive-sequence truncation: sum
// autocorrelations in lag pairs until a pair goes nonpositive.
inline double ess_autocorrelation(const Vec& series) {
  const std::size_t n = series.size();
  if (n < 4) return static_cast<double>(n);
  const std::size_t max_lag = n - 1;
  const Vec gamma = detail::autocovariance(series, max_lag);
  if (!(gamma[0] > 0.0)) return static_cast<double>(n);  // constant series
  double pair_sum = 0.0;
  for (std::size_t m = 0;; ++m) {
    const std::size_t t0 = 2 * m, t1 = 2 * m + 1;
    if (t0 > max_lag) break;
    const double g = gamma[t0] / gamma[0] + (t1 <= max_lag ? gamma[t1] / gamma[0] : 0.0);
    if (g <= 0.0) break;
    pair_sum += g;
  }
  const double tau = std::max(2.0 * pair_sum - 1.0, 1e-12);
  return static_cast<double>(n) / tau;
}

struct ChainOutput {
  std::vector<Vec> samples;       // output draws U_n
  std::vector<Vec> conditioning;  // Y_n trace when requested
  double acceptance_rate = 0.0;
  Vec ess;  // per coordinate of the recorded samples
  long stalls = 0;
};

struct RunChainOptions {
  bool record_conditioning = false;
  long thin = 1;
};

inline ChainOutput run_chain(std::optional<Vec> y0, const KernelConfig& config,
                             const TargetModel& target, long n_iters, RngStream rng,
                             const RunChainOptions& opts = RunChainOptions{}) {
  if (n_iters < 0) throw std::invalid_argument("run_chain: negative iteration count");
  ChainState state = init_chain(config, target, std::move(rng), std::move(y0));
  ChainOutput out;
  const long thin = std::max<long>(1, opts.thin);
  out.samples.reserve(static_cast<std::size_t>(n_iters / thin));
  long accepted = 0;
  for (long i = 0; i < n_iters; ++i) {
    const StepInfo info = neo_mcmc_step(state, config, target);
    if (info.accepted) ++accepted;
    if (info.stalled) ++out.stalls;
    if ((i + 1) % thin == 0) {
      out.samples.push_back(state.u);
      if (opts.record_conditioning) out.conditioning.push_back(state.y);
    }
  }
  out.acceptance_rate = n_iters > 0 ? static_cast<double>(accepted) / n_iters : 0.0;
  if (!out.samples.empty()) {
    const std::size_t dim = out.samples.front().size();
    out.ess.resize(dim);
    Vec coord(out.samples.size());
    for (std::size_t c = 0; c < dim; ++c) {
      for (std::size_t i = 0; i < out.samples.size(); ++i) coord[i] = out.samples[i][c];
      out.ess[c] = ess_autocorrelation(coord);
    }
  }
  return out;
}

}  // namespace neo
