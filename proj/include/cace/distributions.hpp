#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "cace/errors.hpp"
#include "cace/random.hpp"

namespace cace {

inline constexpr double kSqrt1_2 = 0.70710678118654752440;
inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

/// Standard normal CDF. erfc keeps full relative accuracy in both tails.
inline double standard_normal_cdf(double t) noexcept { return 0.5 * std::erfc(-t * kSqrt1_2); }

/// Upper tail 1 - Phi(t), accurate for large positive t.
inline double standard_normal_sf(double t) noexcept { return 0.5 * std::erfc(t * kSqrt1_2); }

inline double standard_normal_log_pdf(double t) noexcept { return -0.5 * t * t - kLogSqrt2Pi; }

inline double normal_log_pdf(double y, double mean, double variance) noexcept {
  const double r = y - mean;
  return -0.5 * r * r / variance - 0.5 * std::log(variance) - kLogSqrt2Pi;
}

/// Inverse of the standard normal CDF for p in (0, 1).
///
/// Acklam's rational approximation (relative error 1.2e-9) followed by one
/// Halley step against erfc, which brings it to near machine precision.
inline double standard_normal_quantile(double p) noexcept {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;

  if (p <= 0.0) return -HUGE_VAL;
  if (p >= 1.0) return HUGE_VAL;

  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // Halley refinement; the residual is formed on whichever tail is accurate.
  double e;
  if (x < 0.0) {
    e = standard_normal_cdf(x) - p;
  } else {
    e = (1.0 - p) - standard_normal_sf(x);
  }
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

enum class TruncationSide { above, below };

namespace detail {

inline constexpr double kTailSwitch = 5.0;
inline constexpr double kDegenerateBound = 37.0;

/// Standard normal conditioned on Z > alpha.
inline double sample_lower_truncated_standard(double alpha, RngStream& rng) {
  if (alpha > kDegenerateBound) {
    throw DegenerateTruncationError("truncation region probability underflows (standardized bound " +
                                    std::to_string(alpha) + ")");
  }
  if (alpha > kTailSwitch) {
    // Exponential proposal with the optimal rate (Robert, 1995).
    const double lambda = 0.5 * (alpha + std::sqrt(alpha * alpha + 4.0));
    for (;;) {
      const double z = alpha + rng.exponential() / lambda;
      const double r = z - lambda;
      if (std::log(rng.uniform()) <= -0.5 * r * r && z > alpha) return z;
    }
  }
  const double tail = standard_normal_sf(alpha);
  for (;;) {
    const double z = -standard_normal_quantile(rng.uniform() * tail);
    if (z > alpha) return z;
  }
}

}  // namespace detail

/// Normal(mean, sd^2) conditioned to lie strictly above or below `bound`.
///
/// Inverse-CDF on the tail probability in the body, exponential-proposal
/// rejection once the standardized bound is past 5. Throws
/// DegenerateTruncationError when the kept region is further than 37 SD out.
inline double sample_truncated_normal(double mean, double sd, double bound, TruncationSide side,
                                      RngStream& rng) {
  const double sign = side == TruncationSide::above ? 1.0 : -1.0;
  const double alpha = sign * (bound - mean) / sd;
  for (;;) {
    const double z = detail::sample_lower_truncated_standard(alpha, rng);
    const double v = mean + sign * sd * z;
    if (side == TruncationSide::above ? v > bound : v < bound) return v;
  }
}

/// Independent normal prior on regression coefficients.
struct NormalLinearPrior {
  std::vector<double> mean;
  std::vector<double> variance;

  std::size_t size() const noexcept { return mean.size(); }
};

/// Sufficient statistics of a Gaussian linear regression.
struct LinearSuffStats {
  Eigen::MatrixXd xtx;
  Eigen::VectorXd xty;
  std::size_t n = 0;

  explicit LinearSuffStats(std::size_t p)
      : xtx(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p))),
        xty(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p))) {}

  template <class Row>
  void add(const Row& row, double y) {
    const auto p = xty.size();
    for (Eigen::Index i = 0; i < p; ++i) {
      xty[i] += row[i] * y;
      for (Eigen::Index j = 0; j <= i; ++j) xtx(i, j) += row[i] * row[j];
    }
    ++n;
  }

  /// Mirrors the lower triangle filled by add().
  Eigen::MatrixXd gram() const {
    Eigen::MatrixXd g = xtx;
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      for (Eigen::Index j = i + 1; j < g.cols(); ++j) g(i, j) = g(j, i);
    return g;
  }
};

inline constexpr double kSingularCondition = 1e12;

/// Gaussian full conditional of regression coefficients, as (mean, precision).
struct LinearPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd precision;
};

inline LinearPosterior conjugate_linear_posterior(const LinearSuffStats& stats, double noise_variance,
                                                  const NormalLinearPrior& prior) {
  const auto p = static_cast<Eigen::Index>(prior.size());
  if (stats.xty.size() != p) throw Error("prior dimension does not match design");
  if (!(noise_variance > 0.0)) throw Error("noise variance must be positive");

  Eigen::MatrixXd prec = stats.gram() / noise_variance;
  Eigen::VectorXd rhs = stats.xty / noise_variance;
  for (Eigen::Index i = 0; i < p; ++i) {
    const double v = prior.variance[static_cast<std::size_t>(i)];
    if (!(v > 0.0)) throw Error("prior variances must be positive");
    prec(i, i) += 1.0 / v;
    rhs[i] += prior.mean[static_cast<std::size_t>(i)] / v;
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(prec, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > kSingularCondition || !std::isfinite(hi)) {
    throw SingularPosteriorError("posterior precision is numerically singular (condition " +
                                 std::to_string(hi / lo) + ")");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(prec);
  return {llt.solve(rhs), std::move(prec)};
}

/// One draw of the coefficients from their Gaussian conditional posterior.
inline Eigen::VectorXd sample_conjugate_linear(const LinearSuffStats& stats, double noise_variance,
                                               const NormalLinearPrior& prior, RngStream& rng) {
  LinearPosterior post = conjugate_linear_posterior(stats, noise_variance, prior);
  Eigen::LLT<Eigen::MatrixXd> llt(post.precision);
  Eigen::VectorXd z(post.mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal();
  // precision = L L^T, so L^{-T} z has covariance precision^{-1}.
  return post.mean + llt.matrixU().solve(z);
}

/// Convenience form over raw data: `design` is n x p, one row per observation.
inline Eigen::VectorXd sample_conjugate_linear(std::span<const double> y, const Eigen::MatrixXd& design,
                                               double noise_variance, const NormalLinearPrior& prior,
                                               RngStream& rng) {
  if (static_cast<std::size_t>(design.rows()) != y.size()) {
    throw Error("design row count does not match outcome length");
  }
  if (design.cols() != static_cast<Eigen::Index>(prior.size())) {
    throw Error("prior dimension does not match design");
  }
  LinearSuffStats stats(prior.size());
  for (Eigen::Index r = 0; r < design.rows(); ++r) stats.add(design.row(r), y[static_cast<std::size_t>(r)]);
  return sample_conjugate_linear(stats, noise_variance, prior, rng);
}

/// Precision draw from Gamma(shape0 + n/2, rate0 + residual_ss/2), shape-rate convention.
inline double sample_precision_gamma(double residual_ss, std::size_t n, double shape0, double rate0,
                                     RngStream& rng) {
  const double shape = shape0 + 0.5 * static_cast<double>(n);
  const double rate = rate0 + 0.5 * residual_ss;
  return rng.gamma(shape) / rate;
}

/// Draw from Dirichlet(concentration + counts).
inline std::array<double, 3> sample_dirichlet(const std::array<long, 3>& counts,
                                              const std::array<double, 3>& concentration,
                                              RngStream& rng) {
  std::array<double, 3> g{};
  double total = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    g[k] = rng.gamma(concentration[k] + static_cast<double>(counts[k]));
    total += g[k];
  }
  for (auto& v : g) v /= total;
  return g;
}

}  // namespace cace
