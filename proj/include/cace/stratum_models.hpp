#pragma once

// P(S | X): linked probits, a multinomial logit, and covariate-free proportions.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cace/distributions.hpp"
#include "cace/random.hpp"

namespace cace {

enum class Stratum : std::uint8_t { complier = 0, never_taker = 1, always_taker = 2 };

/// Probabilities of (never-taker, complier, always-taker) at one covariate value.
struct StratumProbs {
  double never = 0.0;
  double complier = 0.0;
  double always = 0.0;

  double of(Stratum s) const noexcept {
    switch (s) {
      case Stratum::complier: return complier;
      case Stratum::never_taker: return never;
      case Stratum::always_taker: return always;
    }
    return 0.0;
  }
};

// ---------------------------------------------------------------------------
// Linked probits

struct ProbitStratumParams {
  double b00 = 0.0;  // never-taker equation: intercept
  double b01 = 0.0;  //                        slope
  double b10 = 0.0;  // complier-vs-always equation: intercept
  double b11 = 0.0;  //                               slope
};

inline StratumProbs stratum_probs_probit(double x, const ProbitStratumParams& p) noexcept {
  StratumProbs out;
  const double eta_n = p.b00 + p.b01 * x;
  const double eta_c = p.b10 + p.b11 * x;
  out.never = standard_normal_sf(eta_n);
  out.complier = (1.0 - out.never) * standard_normal_sf(eta_c);
  out.always = std::max(0.0, 1.0 - out.never - out.complier);
  return out;
}

/// Log probabilities computed factor by factor, accurate when a stratum is very unlikely.
inline StratumProbs log_stratum_probs_probit(double x, const ProbitStratumParams& p) noexcept {
  const double eta_n = p.b00 + p.b01 * x;
  const double eta_c = p.b10 + p.b11 * x;
  const double log_not_never = std::log(standard_normal_cdf(eta_n));
  return {std::log(standard_normal_sf(eta_n)), log_not_never + std::log(standard_normal_sf(eta_c)),
          log_not_never + std::log(standard_normal_cdf(eta_c))};
}

/// Augmented probit utilities. s_c is only defined when s_n > 0.
struct LatentUtilities {
  double s_n = 0.0;
  std::optional<double> s_c;

  Stratum implied_stratum() const noexcept {
    if (s_n <= 0.0) return Stratum::never_taker;
    return *s_c <= 0.0 ? Stratum::complier : Stratum::always_taker;
  }
};

namespace detail {

inline constexpr double kClampOffset = 1e-8;

/// Truncated draw that pins to the boundary when the region underflows.
inline double truncated_or_pinned(double mean, double bound, TruncationSide side, RngStream& rng) {
  try {
    return sample_truncated_normal(mean, 1.0, bound, side, rng);
  } catch (const DegenerateTruncationError&) {
    return side == TruncationSide::above ? bound + kClampOffset : bound - kClampOffset;
  }
}

}  // namespace detail

inline LatentUtilities sample_latent_utilities(Stratum s, double x, const ProbitStratumParams& p,
                                               RngStream& rng) {
  LatentUtilities u;
  const double eta_n = p.b00 + p.b01 * x;
  if (s == Stratum::never_taker) {
    u.s_n = detail::truncated_or_pinned(eta_n, 0.0, TruncationSide::below, rng);
    return u;
  }
  u.s_n = detail::truncated_or_pinned(eta_n, 0.0, TruncationSide::above, rng);
  const double eta_c = p.b10 + p.b11 * x;
  u.s_c = detail::truncated_or_pinned(
      eta_c, 0.0, s == Stratum::complier ? TruncationSide::below : TruncationSide::above, rng);
  return u;
}

/// Default prior: every coefficient N(0, 5).
inline NormalLinearPrior default_probit_prior() { return {{0.0, 0.0, 0.0, 0.0}, {5.0, 5.0, 5.0, 5.0}}; }

/// Regresses s_n on (1, x) over all patients, then s_c on (1, x) where s_c exists; unit noise.
inline ProbitStratumParams update_probit_beta(std::span<const LatentUtilities> utilities,
                                              std::span<const double> xs, const NormalLinearPrior& prior,
                                              RngStream& rng) {
  if (utilities.size() != xs.size()) throw Error("utilities and covariates differ in length");
  if (prior.size() != 4) throw Error("probit prior must have four components");
  LinearSuffStats never_eq(2), complier_eq(2);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::array<double, 2> row{1.0, xs[i]};
    never_eq.add(row, utilities[i].s_n);
    if (utilities[i].s_c) complier_eq.add(row, *utilities[i].s_c);
  }
  const NormalLinearPrior prior_n{{prior.mean[0], prior.mean[1]}, {prior.variance[0], prior.variance[1]}};
  const NormalLinearPrior prior_c{{prior.mean[2], prior.mean[3]}, {prior.variance[2], prior.variance[3]}};
  const Eigen::VectorXd bn = sample_conjugate_linear(never_eq, 1.0, prior_n, rng);
  const Eigen::VectorXd bc = sample_conjugate_linear(complier_eq, 1.0, prior_c, rng);
  return {bn[0], bn[1], bc[0], bc[1]};
}

// ---------------------------------------------------------------------------
// Multinomial logit, complier as the zero-score reference category

struct MlogitStratumParams {
  std::array<double, 2> gamma_n{0.0, 0.0};  // (intercept, slope)
  std::array<double, 2> gamma_a{0.0, 0.0};
};

inline StratumProbs log_stratum_probs_mlogit(double x, const MlogitStratumParams& p) noexcept {
  const double sn = p.gamma_n[0] + p.gamma_n[1] * x;
  const double sa = p.gamma_a[0] + p.gamma_a[1] * x;
  const double m = std::max({sn, sa, 0.0});
  const double lse = m + std::log(std::exp(sn - m) + std::exp(-m) + std::exp(sa - m));
  return {sn - lse, -lse, sa - lse};
}

inline StratumProbs stratum_probs_mlogit(double x, const MlogitStratumParams& p) noexcept {
  const StratumProbs l = log_stratum_probs_mlogit(x, p);
  return {std::exp(l.never), std::exp(l.complier), std::exp(l.always)};
}

/// Random-walk Metropolis settings and adaptation state for the logit coefficients.
///
/// Proposals move the intercept at the centre of the covariate and the slope
/// independently, which removes most of the intercept/slope correlation.
struct MlogitProposal {
  std::array<double, 2> sd{0.3, 0.3};  // per block: never-taker, always-taker
  double x_center = 0.0;
  double x_scale = 1.0;
  double prior_sd = 2.2360679774997898;  // sqrt(5)
  bool adapting = true;
  std::array<long, 2> accepted{0, 0};
  std::array<long, 2> proposed{0, 0};
  double target_low = 0.3;
  double target_high = 0.5;

  /// Rescales each block's step toward the target acceptance band and resets counters.
  void adapt() noexcept {
    if (!adapting) return;
    for (std::size_t b = 0; b < 2; ++b) {
      if (proposed[b] == 0) continue;
      const double rate = static_cast<double>(accepted[b]) / static_cast<double>(proposed[b]);
      if (rate < target_low) sd[b] *= 0.8;
      else if (rate > target_high) sd[b] *= 1.25;
      accepted[b] = proposed[b] = 0;
    }
  }
};

namespace detail {

inline double mlogit_log_likelihood(const MlogitStratumParams& p, std::span<const Stratum> labels,
                                    std::span<const double> xs) {
  double ll = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) ll += log_stratum_probs_mlogit(xs[i], p).of(labels[i]);
  return ll;
}

inline double mlogit_log_prior(const MlogitStratumParams& p, double prior_sd) {
  const double v = prior_sd * prior_sd;
  return -0.5 * (p.gamma_n[0] * p.gamma_n[0] + p.gamma_n[1] * p.gamma_n[1] + p.gamma_a[0] * p.gamma_a[0] +
                 p.gamma_a[1] * p.gamma_a[1]) /
         v;
}

}  // namespace detail

/// One Metropolis-within-Gibbs sweep: the never-taker block, then the always-taker block.
inline MlogitStratumParams update_mlogit_gamma(const MlogitStratumParams& current,
                                               std::span<const Stratum> labels, std::span<const double> xs,
                                               MlogitProposal& proposal, RngStream& rng) {
  if (labels.size() != xs.size()) throw Error("labels and covariates differ in length");
  MlogitStratumParams state = current;
  double log_post = detail::mlogit_log_likelihood(state, labels, xs) +
                    detail::mlogit_log_prior(state, proposal.prior_sd);
  for (std::size_t b = 0; b < 2; ++b) {
    const double step = proposal.sd[b];
    const double d_centered = step * rng.normal();
    const double d_slope = step / proposal.x_scale * rng.normal();
    if (step == 0.0) continue;
    MlogitStratumParams cand = state;
    auto& g = b == 0 ? cand.gamma_n : cand.gamma_a;
    g[1] += d_slope;
    g[0] += d_centered - proposal.x_center * d_slope;
    const double cand_log_post =
        detail::mlogit_log_likelihood(cand, labels, xs) + detail::mlogit_log_prior(cand, proposal.prior_sd);
    ++proposal.proposed[b];
    if (std::log(rng.uniform()) < cand_log_post - log_post) {
      state = cand;
      log_post = cand_log_post;
      ++proposal.accepted[b];
    }
  }
  return state;
}

// ---------------------------------------------------------------------------
// Covariate-free proportions

struct StratumProportions {
  double complier = 1.0 / 3.0;
  double never = 1.0 / 3.0;
  double always = 1.0 / 3.0;

  StratumProbs probs() const noexcept { return {never, complier, always}; }
};

struct StratumCounts {
  long complier = 0;
  long never = 0;
  long always = 0;
};

/// Dirichlet(concentration + counts) draw, ordered (complier, never, always).
inline StratumProportions update_proportions(const StratumCounts& counts, RngStream& rng,
                                             const std::array<double, 3>& concentration = {1.0, 1.0, 1.0}) {
  const auto p = sample_dirichlet({counts.complier, counts.never, counts.always}, concentration, rng);
  return {p[0], p[1], p[2]};
}

}  // namespace cace
