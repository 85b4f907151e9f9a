#pragma once

// f(Y | S, X): shared-variance normal regressions per outcome group.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>

#include "cace/distributions.hpp"
#include "cace/errors.hpp"
#include "cace/random.hpp"
#include "cace/stratum_models.hpp"

namespace cace {

/// Model variants. A: group-specific slopes. Astar: one shared slope.
/// B: no covariate in the outcome model. Cstar: logit strata with Astar outcomes.
/// D: no covariate anywhere (Dirichlet proportions).
enum class ModelVariant { A, Astar, B, Cstar, D };

inline std::string_view to_string(ModelVariant v) noexcept {
  switch (v) {
    case ModelVariant::A: return "A";
    case ModelVariant::Astar: return "Astar";
    case ModelVariant::B: return "B";
    case ModelVariant::Cstar: return "Cstar";
    case ModelVariant::D: return "D";
  }
  return "?";
}

inline ModelVariant parse_variant(std::string_view s) {
  if (s == "A") return ModelVariant::A;
  if (s == "Astar" || s == "A*") return ModelVariant::Astar;
  if (s == "B") return ModelVariant::B;
  if (s == "Cstar" || s == "C*") return ModelVariant::Cstar;
  if (s == "D") return ModelVariant::D;
  throw ConfigError("variant", "unknown model variant '" + std::string(s) + "'");
}

enum class SlopeMode { per_group, shared, none };

inline constexpr SlopeMode slope_mode(ModelVariant v) noexcept {
  switch (v) {
    case ModelVariant::A: return SlopeMode::per_group;
    case ModelVariant::Astar:
    case ModelVariant::Cstar: return SlopeMode::shared;
    case ModelVariant::B:
    case ModelVariant::D: return SlopeMode::none;
  }
  return SlopeMode::per_group;
}

/// Outcome distribution a patient's observed-arm outcome is drawn from.
enum class OutcomeGroup : std::uint8_t { never = 0, always = 1, complier_control = 2, complier_treated = 3 };

inline constexpr std::array<OutcomeGroup, 4> kAllOutcomeGroups = {
    OutcomeGroup::never, OutcomeGroup::always, OutcomeGroup::complier_control, OutcomeGroup::complier_treated};

inline std::string_view to_string(OutcomeGroup g) noexcept {
  switch (g) {
    case OutcomeGroup::never: return "n";
    case OutcomeGroup::always: return "a";
    case OutcomeGroup::complier_control: return "c0";
    case OutcomeGroup::complier_treated: return "c1";
  }
  return "?";
}

/// Noncompliers have one outcome distribution regardless of assignment.
inline constexpr OutcomeGroup outcome_group(Stratum s, int z) noexcept {
  switch (s) {
    case Stratum::never_taker: return OutcomeGroup::never;
    case Stratum::always_taker: return OutcomeGroup::always;
    case Stratum::complier: break;
  }
  return z == 0 ? OutcomeGroup::complier_control : OutcomeGroup::complier_treated;
}

struct OutcomeParams {
  std::array<std::array<double, 2>, 4> alpha{};  // (intercept, slope) per OutcomeGroup
  double sigma2 = 1.0;
  ModelVariant variant = ModelVariant::A;

  double intercept(OutcomeGroup g) const noexcept { return alpha[static_cast<std::size_t>(g)][0]; }
  double slope(OutcomeGroup g) const noexcept {
    return slope_mode(variant) == SlopeMode::none ? 0.0 : alpha[static_cast<std::size_t>(g)][1];
  }
  double mean(OutcomeGroup g, double x) const noexcept { return intercept(g) + slope(g) * x; }
};

inline double outcome_log_density(double y, double x, OutcomeGroup g, const OutcomeParams& p) noexcept {
  return normal_log_pdf(y, p.mean(g, x), p.sigma2);
}

struct OutcomePriors {
  double intercept_mean = 0.0;  // set to the observed outcome mean at fit time
  double intercept_var = 100.0;
  double slope_mean = 0.0;
  double slope_var = 100.0;
  double precision_shape = 0.01;
  double precision_rate = 0.01;
};

/// Running sums of one group's complete (x, y) pairs.
struct OutcomeGroupStats {
  std::size_t n = 0;
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0, syy = 0.0;

  void add(double x, double y) noexcept {
    ++n;
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    syy += y * y;
  }

  /// Sum of squared residuals around intercept + slope * x.
  double residual_ss(double intercept, double slope) const noexcept {
    const double nn = static_cast<double>(n);
    const double ss = syy - 2.0 * intercept * sy - 2.0 * slope * sxy + nn * intercept * intercept +
                      2.0 * intercept * slope * sx + slope * slope * sxx;
    return std::max(0.0, ss);
  }
};

using OutcomeStats = std::array<OutcomeGroupStats, 4>;

/// Draws all regression coefficients given `sigma2`, then the shared variance given them.
inline OutcomeParams update_outcome_params(const OutcomeStats& stats, double sigma2, const OutcomePriors& priors,
                                           ModelVariant variant, RngStream& rng) {
  OutcomeParams out;
  out.variant = variant;
  switch (slope_mode(variant)) {
    case SlopeMode::per_group: {
      const NormalLinearPrior prior{{priors.intercept_mean, priors.slope_mean},
                                    {priors.intercept_var, priors.slope_var}};
      for (std::size_t g = 0; g < 4; ++g) {
        const auto& s = stats[g];
        LinearSuffStats ls(2);
        ls.xtx << static_cast<double>(s.n), 0.0, s.sx, s.sxx;
        ls.xty << s.sy, s.sxy;
        ls.n = s.n;
        const Eigen::VectorXd b = sample_conjugate_linear(ls, sigma2, prior, rng);
        out.alpha[g] = {b[0], b[1]};
      }
      break;
    }
    case SlopeMode::shared: {
      // Columns: four group indicators, then x.
      LinearSuffStats ls(5);
      double sxx = 0.0, sxy = 0.0;
      for (std::size_t g = 0; g < 4; ++g) {
        const auto gi = static_cast<Eigen::Index>(g);
        ls.xtx(gi, gi) = static_cast<double>(stats[g].n);
        ls.xtx(4, gi) = stats[g].sx;
        ls.xty[gi] = stats[g].sy;
        sxx += stats[g].sxx;
        sxy += stats[g].sxy;
        ls.n += stats[g].n;
      }
      ls.xtx(4, 4) = sxx;
      ls.xty[4] = sxy;
      NormalLinearPrior prior;
      for (int g = 0; g < 4; ++g) {
        prior.mean.push_back(priors.intercept_mean);
        prior.variance.push_back(priors.intercept_var);
      }
      prior.mean.push_back(priors.slope_mean);
      prior.variance.push_back(priors.slope_var);
      const Eigen::VectorXd b = sample_conjugate_linear(ls, sigma2, prior, rng);
      for (std::size_t g = 0; g < 4; ++g) out.alpha[g] = {b[static_cast<Eigen::Index>(g)], b[4]};
      break;
    }
    case SlopeMode::none: {
      const NormalLinearPrior prior{{priors.intercept_mean}, {priors.intercept_var}};
      for (std::size_t g = 0; g < 4; ++g) {
        LinearSuffStats ls(1);
        ls.xtx(0, 0) = static_cast<double>(stats[g].n);
        ls.xty[0] = stats[g].sy;
        ls.n = stats[g].n;
        out.alpha[g] = {sample_conjugate_linear(ls, sigma2, prior, rng)[0], 0.0};
      }
      break;
    }
  }

  double ss = 0.0;
  std::size_t n = 0;
  for (std::size_t g = 0; g < 4; ++g) {
    ss += stats[g].residual_ss(out.alpha[g][0], slope_mode(variant) == SlopeMode::none ? 0.0 : out.alpha[g][1]);
    n += stats[g].n;
  }
  const double precision = sample_precision_gamma(ss, n, priors.precision_shape, priors.precision_rate, rng);
  out.sigma2 = 1.0 / precision;
  return out;
}

inline double impute_missing_observed_outcome(OutcomeGroup g, double x, const OutcomeParams& p, RngStream& rng) {
  return rng.normal(p.mean(g, x), std::sqrt(p.sigma2));
}

/// The unobserved arm's outcome for a complier: group c1 when assigned control, c0 when treated.
inline double impute_complier_counterfactual(int z_observed, double x, const OutcomeParams& p, RngStream& rng) {
  const OutcomeGroup g = z_observed == 0 ? OutcomeGroup::complier_treated : OutcomeGroup::complier_control;
  return rng.normal(p.mean(g, x), std::sqrt(p.sigma2));
}

}  // namespace cace
