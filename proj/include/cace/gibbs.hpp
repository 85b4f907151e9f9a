#pragma once

// Data-augmentation Gibbs sampler for the complier average causal effect.
//
// Each iteration draws the missing stratum labels of patients who received
// their assigned treatment, imputes missing observed-arm outcomes and the
// compliers' counterfactual outcomes, then updates the stratum model and the
// outcome regressions given the completed data, and records the CACE.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "cace/data.hpp"
#include "cace/distributions.hpp"
#include "cace/errors.hpp"
#include "cace/outcome_models.hpp"
#include "cace/random.hpp"
#include "cace/stratum_models.hpp"

namespace cace {

enum class StratumModelKind { probit, mlogit, proportions };

inline constexpr StratumModelKind stratum_model_kind(ModelVariant v) noexcept {
  switch (v) {
    case ModelVariant::Cstar: return StratumModelKind::mlogit;
    case ModelVariant::D: return StratumModelKind::proportions;
    default: return StratumModelKind::probit;
  }
}

enum class PrecisionConvention { shape_rate, shape_scale };

struct Schedule {
  std::size_t burn_in = 5000;
  std::size_t kept = 5000;
  std::size_t thin = 10;

  std::size_t saved() const noexcept { return thin ? kept / thin : 0; }
};

struct ModelConfig {
  ModelVariant variant = ModelVariant::A;
  Schedule schedule;
  std::size_t n_chains = 3;
  std::uint64_t seed = 20111;
  bool marginal_missing_y = false;
  std::size_t threads = 0;  // 0: one worker per hardware thread

  // Outcome priors. Intercepts centre on the observed outcome mean unless set.
  std::optional<double> intercept_mean;
  double intercept_var = 100.0;
  double slope_mean = 0.0;
  double slope_var = 100.0;
  double precision_shape = 0.01;
  double precision_param = 0.01;
  PrecisionConvention precision_convention = PrecisionConvention::shape_rate;

  // Stratum-model priors.
  double beta_mean = 0.0;
  double beta_var = 5.0;
  double mlogit_prior_sd = 2.2360679774997898;
  double mlogit_initial_sd = 0.3;
  std::size_t mlogit_adapt_interval = 50;
  std::array<double, 3> dirichlet{1.0, 1.0, 1.0};  // (complier, never, always)

  double psrf_threshold = 1.06;
  std::size_t progress_interval = 1000;

  double precision_rate() const noexcept {
    return precision_convention == PrecisionConvention::shape_rate ? precision_param : 1.0 / precision_param;
  }

  OutcomePriors outcome_priors(const Dataset& ds) const {
    OutcomePriors p;
    p.intercept_mean = intercept_mean.value_or(ds.observed_outcome_mean());
    p.intercept_var = intercept_var;
    p.slope_mean = slope_mean;
    p.slope_var = slope_var;
    p.precision_shape = precision_shape;
    p.precision_rate = precision_rate();
    return p;
  }

  NormalLinearPrior probit_prior() const {
    return {{beta_mean, beta_mean, beta_mean, beta_mean}, {beta_var, beta_var, beta_var, beta_var}};
  }

  /// Throws ConfigError naming the offending field.
  void validate() const {
    if (n_chains < 1) throw ConfigError("model.n_chains", "must be at least 1");
    if (schedule.thin < 1) throw ConfigError("model.schedule.thin", "must be positive");
    if (!(intercept_var > 0)) throw ConfigError("model.priors.intercept_var", "must be positive");
    if (!(slope_var > 0)) throw ConfigError("model.priors.slope_var", "must be positive");
    if (!(precision_shape > 0)) throw ConfigError("model.priors.precision_shape", "must be positive");
    if (!(precision_param > 0)) throw ConfigError("model.priors.precision_param", "must be positive");
    if (!(beta_var > 0)) throw ConfigError("model.priors.beta_var", "must be positive");
    if (!(mlogit_prior_sd > 0)) throw ConfigError("model.priors.mlogit_prior_sd", "must be positive");
    if (!(mlogit_initial_sd >= 0)) throw ConfigError("model.mlogit.initial_proposal_sd", "must be nonnegative");
    for (double a : dirichlet)
      if (!(a > 0)) throw ConfigError("model.priors.dirichlet", "concentrations must be positive");
    if (!(psrf_threshold > 0)) throw ConfigError("model.psrf_threshold", "must be positive");
  }
};

/// Full parameter vector. Only the stratum block matching the variant is live.
struct ParameterState {
  ModelVariant variant = ModelVariant::A;
  ProbitStratumParams probit;
  MlogitStratumParams mlogit;
  StratumProportions proportions;
  OutcomeParams outcome;

  StratumProbs log_stratum_probs(double x) const noexcept {
    switch (stratum_model_kind(variant)) {
      case StratumModelKind::probit: return log_stratum_probs_probit(x, probit);
      case StratumModelKind::mlogit: return log_stratum_probs_mlogit(x, mlogit);
      case StratumModelKind::proportions: break;
    }
    return {std::log(proportions.never), std::log(proportions.complier), std::log(proportions.always)};
  }

  StratumProbs stratum_probs(double x) const noexcept {
    switch (stratum_model_kind(variant)) {
      case StratumModelKind::probit: return stratum_probs_probit(x, probit);
      case StratumModelKind::mlogit: return stratum_probs_mlogit(x, mlogit);
      case StratumModelKind::proportions: break;
    }
    return proportions.probs();
  }
};

// ---------------------------------------------------------------------------
// Scalar views used by draw files and summaries

inline std::vector<std::string> stratum_parameter_names(ModelVariant v) {
  switch (stratum_model_kind(v)) {
    case StratumModelKind::probit: return {"beta00", "beta01", "beta10", "beta11"};
    case StratumModelKind::mlogit: return {"gamma_n0", "gamma_n1", "gamma_a0", "gamma_a1"};
    case StratumModelKind::proportions: break;
  }
  return {"pi_c", "pi_n", "pi_a"};
}

inline std::vector<std::string> parameter_names(ModelVariant v) {
  auto names = stratum_parameter_names(v);
  for (const char* g : {"n", "a", "c0", "c1"}) {
    names.push_back(std::string("alpha0_") + g);
    names.push_back(std::string("alpha1_") + g);
  }
  names.push_back("sigma2");
  return names;
}

inline std::vector<double> to_scalars(const ParameterState& p) {
  std::vector<double> out;
  switch (stratum_model_kind(p.variant)) {
    case StratumModelKind::probit:
      out = {p.probit.b00, p.probit.b01, p.probit.b10, p.probit.b11};
      break;
    case StratumModelKind::mlogit:
      out = {p.mlogit.gamma_n[0], p.mlogit.gamma_n[1], p.mlogit.gamma_a[0], p.mlogit.gamma_a[1]};
      break;
    case StratumModelKind::proportions:
      out = {p.proportions.complier, p.proportions.never, p.proportions.always};
      break;
  }
  for (std::size_t g = 0; g < 4; ++g) {
    out.push_back(p.outcome.alpha[g][0]);
    out.push_back(p.outcome.alpha[g][1]);
  }
  out.push_back(p.outcome.sigma2);
  return out;
}

inline ParameterState from_scalars(ModelVariant v, std::span<const double> s) {
  if (s.size() != parameter_names(v).size()) throw Error("wrong number of scalars for variant");
  ParameterState p;
  p.variant = v;
  std::size_t k = 0;
  switch (stratum_model_kind(v)) {
    case StratumModelKind::probit:
      p.probit = {s[0], s[1], s[2], s[3]};
      k = 4;
      break;
    case StratumModelKind::mlogit:
      p.mlogit = {{s[0], s[1]}, {s[2], s[3]}};
      k = 4;
      break;
    case StratumModelKind::proportions:
      p.proportions = {s[0], s[1], s[2]};
      k = 3;
      break;
  }
  p.outcome.variant = v;
  for (std::size_t g = 0; g < 4; ++g) {
    p.outcome.alpha[g] = {s[k], s[k + 1]};
    k += 2;
  }
  p.outcome.sigma2 = s[k];
  return p;
}

// ---------------------------------------------------------------------------
// Complier membership

/// Eq.-8-style posterior probability of complier membership from stratum log
/// probabilities and the two competing outcome densities, normalized in log space.
inline double complier_probability(const StratumProbs& log_psi, double x, double y, int z,
                                   const OutcomeParams& outcome) noexcept {
  const OutcomeGroup gc = z == 0 ? OutcomeGroup::complier_control : OutcomeGroup::complier_treated;
  const OutcomeGroup gt = z == 0 ? OutcomeGroup::never : OutcomeGroup::always;
  const double log_psi_t = z == 0 ? log_psi.never : log_psi.always;
  const double lc = log_psi.complier + outcome_log_density(y, x, gc, outcome);
  const double lt = log_psi_t + outcome_log_density(y, x, gt, outcome);
  if (!std::isfinite(lc) && !std::isfinite(lt)) {
    const double pc = std::exp(log_psi.complier);
    const double pt = std::exp(log_psi_t);
    return pc + pt > 0.0 ? pc / (pc + pt) : 0.5;
  }
  if (lc == -HUGE_VAL) return 0.0;
  if (lt == -HUGE_VAL) return 1.0;
  return 1.0 / (1.0 + std::exp(lt - lc));
}

inline double complier_probability(double x, double y, int z, const ParameterState& theta) noexcept {
  return complier_probability(theta.log_stratum_probs(x), x, y, z, theta.outcome);
}

/// Membership probability with the outcome integrated out: Psi_c / (Psi_c + Psi_t).
inline double complier_probability_marginal(double x, int z, const ParameterState& theta) noexcept {
  const StratumProbs p = theta.stratum_probs(x);
  const double pt = z == 0 ? p.never : p.always;
  return p.complier + pt > 0.0 ? p.complier / (p.complier + pt) : 0.5;
}

// ---------------------------------------------------------------------------
// Sampler state

struct StratumState {
  std::vector<Stratum> labels;
  std::vector<LatentUtilities> utilities;   // probit variants only
  std::vector<double> y_complete;           // observed outcome, or its current imputation
  std::vector<double> y_counterfactual;     // compliers only; NaN otherwise
  std::vector<std::int8_t> counterfactual_group;  // OutcomeGroup used, or -1

  std::size_t complier_count() const noexcept {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), Stratum::complier));
  }
};

/// Labels each patient may hold given their observed pattern.
inline bool label_allowed(ObservedPattern p, Stratum s) noexcept {
  switch (p) {
    case ObservedPattern::KnownNeverTaker: return s == Stratum::never_taker;
    case ObservedPattern::KnownAlwaysTaker: return s == Stratum::always_taker;
    case ObservedPattern::MixtureControlArm: return s == Stratum::complier || s == Stratum::never_taker;
    case ObservedPattern::MixtureTreatedArm: return s == Stratum::complier || s == Stratum::always_taker;
  }
  return false;
}

inline Stratum noncomplier_stratum(ObservedPattern p) noexcept {
  return (p == ObservedPattern::MixtureControlArm || p == ObservedPattern::KnownNeverTaker) ? Stratum::never_taker
                                                                                              : Stratum::always_taker;
}

/// Draws labels for mixture patients; known patterns are left untouched.
inline void sample_stratum_memberships(const Dataset& ds, const ParameterState& theta, StratumState& state,
                                       RngStream& rng, bool marginal_missing_y = false) {
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const ObservedPattern pat = ds.pattern(i);
    if (!is_mixture(pat)) continue;
    const auto& r = ds[i];
    double p;
    if (!r.y_obs && marginal_missing_y) {
      p = complier_probability_marginal(r.x, r.z, theta);
    } else {
      const double y = r.y_obs ? *r.y_obs : state.y_complete[i];
      p = complier_probability(r.x, y, r.z, theta);
    }
    state.labels[i] = rng.uniform() < p ? Stratum::complier : noncomplier_stratum(pat);
  }
}

/// Mean of Y(1) - Y(0) over current compliers; empty when there are none.
inline std::optional<double> compute_cace(const Dataset& ds, const StratumState& state) noexcept {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (state.labels[i] != Stratum::complier) continue;
    const double observed = state.y_complete[i];
    const double other = state.y_counterfactual[i];
    sum += ds[i].z == 1 ? observed - other : other - observed;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

/// Everything an iteration needs besides the state itself.
struct SamplerContext {
  const Dataset* ds = nullptr;
  ModelConfig config;
  OutcomePriors outcome_priors;
  NormalLinearPrior probit_prior;
  std::vector<double> xs;
  MlogitProposal mlogit;
  std::size_t chain_index = 0;
  std::size_t iteration = 0;
  bool burn_in = true;
  bool keep_labels = false;  // first sweep: update parameters from the initial labels

  SamplerContext(const Dataset& data, const ModelConfig& cfg, std::size_t chain = 0)
      : ds(&data), config(cfg), outcome_priors(cfg.outcome_priors(data)), probit_prior(cfg.probit_prior()),
        chain_index(chain) {
    xs.reserve(data.size());
    for (const auto& r : data.records()) xs.push_back(r.x);
    double m = 0.0, v = 0.0;
    for (double x : xs) m += x;
    m /= static_cast<double>(std::max<std::size_t>(1, xs.size()));
    for (double x : xs) v += (x - m) * (x - m);
    v = xs.size() > 1 ? v / static_cast<double>(xs.size() - 1) : 0.0;
    mlogit.x_center = m;
    mlogit.x_scale = v > 0.0 ? std::sqrt(v) : 1.0;
    mlogit.prior_sd = cfg.mlogit_prior_sd;
    mlogit.sd = {cfg.mlogit_initial_sd, cfg.mlogit_initial_sd};
  }
};

struct IterationRecord {
  std::optional<double> cace;
  std::size_t n_c = 0;
};

namespace detail {

template <class F>
decltype(auto) guarded(const SamplerContext& ctx, const char* block, F&& f) {
  try {
    return f();
  } catch (const SingularPosteriorError& e) {
    throw ChainAbortError(ctx.chain_index, ctx.iteration, block, e.what());
  }
}

inline void impute_outcomes(const Dataset& ds, const ParameterState& theta, StratumState& state, RngStream& rng) {
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& r = ds[i];
    if (!r.y_obs) {
      state.y_complete[i] =
          impute_missing_observed_outcome(outcome_group(state.labels[i], r.z), r.x, theta.outcome, rng);
    }
  }
}

inline void impute_counterfactuals(const Dataset& ds, const ParameterState& theta, StratumState& state,
                                   RngStream& rng) {
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& r = ds[i];
    if (state.labels[i] == Stratum::complier) {
      state.y_counterfactual[i] = impute_complier_counterfactual(r.z, r.x, theta.outcome, rng);
      state.counterfactual_group[i] = static_cast<std::int8_t>(
          r.z == 0 ? OutcomeGroup::complier_treated : OutcomeGroup::complier_control);
    } else {
      state.y_counterfactual[i] = std::numeric_limits<double>::quiet_NaN();
      state.counterfactual_group[i] = -1;
    }
  }
}

inline OutcomeStats outcome_stats(const Dataset& ds, const StratumState& state) {
  OutcomeStats stats{};
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto g = static_cast<std::size_t>(outcome_group(state.labels[i], ds[i].z));
    stats[g].add(ds[i].x, state.y_complete[i]);
  }
  return stats;
}

}  // namespace detail

/// One systematic-scan sweep: labels, missing outcomes, counterfactuals,
/// stratum parameters, outcome parameters, CACE.
inline IterationRecord gibbs_iteration(SamplerContext& ctx, StratumState& state, ParameterState& theta,
                                       RngStream& rng) {
  const Dataset& ds = *ctx.ds;
  if (!ctx.keep_labels) sample_stratum_memberships(ds, theta, state, rng, ctx.config.marginal_missing_y);
  detail::impute_outcomes(ds, theta, state, rng);
  detail::impute_counterfactuals(ds, theta, state, rng);

  switch (stratum_model_kind(theta.variant)) {
    case StratumModelKind::probit:
      for (std::size_t i = 0; i < ds.size(); ++i)
        state.utilities[i] = sample_latent_utilities(state.labels[i], ctx.xs[i], theta.probit, rng);
      theta.probit = detail::guarded(ctx, "probit-beta", [&] {
        return update_probit_beta(state.utilities, ctx.xs, ctx.probit_prior, rng);
      });
      break;
    case StratumModelKind::mlogit:
      theta.mlogit = update_mlogit_gamma(theta.mlogit, state.labels, ctx.xs, ctx.mlogit, rng);
      if (ctx.burn_in && ctx.config.mlogit_adapt_interval > 0 &&
          (ctx.iteration + 1) % ctx.config.mlogit_adapt_interval == 0) {
        ctx.mlogit.adapt();
      }
      break;
    case StratumModelKind::proportions: {
      StratumCounts counts;
      for (Stratum s : state.labels) {
        if (s == Stratum::complier) ++counts.complier;
        else if (s == Stratum::never_taker) ++counts.never;
        else ++counts.always;
      }
      theta.proportions = update_proportions(counts, rng, ctx.config.dirichlet);
      break;
    }
  }

  const OutcomeStats stats = detail::outcome_stats(ds, state);
  theta.outcome = detail::guarded(ctx, "outcome", [&] {
    return update_outcome_params(stats, theta.outcome.sigma2, ctx.outcome_priors, theta.variant, rng);
  });

  IterationRecord rec;
  rec.cace = compute_cace(ds, state);
  rec.n_c = state.complier_count();
  return rec;
}

// ---------------------------------------------------------------------------
// Chains

struct SavedDraw {
  std::size_t iteration = 0;  // 1-based post-burn-in iteration
  ParameterState params;
  std::optional<double> cace;
  std::size_t n_c = 0;
  std::vector<bool> complier;  // per patient
};

struct Chain {
  std::size_t chain_index = 0;
  std::uint64_t seed = 0;
  ModelVariant variant = ModelVariant::A;
  Schedule schedule;
  std::vector<SavedDraw> draws;
  std::size_t undefined_cace = 0;  // among saved draws
  std::array<double, 2> mlogit_proposal_sd{0.0, 0.0};
};

struct ProgressEvent {
  std::size_t chain = 0;
  std::size_t iteration = 0;  // counts burn-in
  std::size_t total = 0;
  std::size_t n_c = 0;
};

using ProgressCallback = std::function<void(const ProgressEvent&)>;

/// Overdispersed starting point for chain k: parameters at prior means shifted
/// by +1 prior SD (even k) or -1 prior SD (odd k), mixture labels Bernoulli(1/2),
/// sigma2 at the sample variance of the observed outcomes. The first sweep keeps
/// the initial labels, so a start with a near-zero complier share cannot empty the
/// complier groups before any parameter has seen data. Slope shifts are one
/// prior SD per covariate SD and intercepts are shifted at the covariate mean, so a
/// start never puts the linear predictors many SDs out across the whole sample.
inline void initialize_chain(const SamplerContext& ctx, StratumState& state, ParameterState& theta,
                             RngStream& rng) {
  const Dataset& ds = *ctx.ds;
  const ModelConfig& cfg = ctx.config;
  const double shift = ctx.chain_index % 2 == 0 ? 1.0 : -1.0;

  const std::size_t n = ds.size();
  state.labels.assign(n, Stratum::complier);
  state.utilities.assign(n, LatentUtilities{});
  state.y_complete.assign(n, 0.0);
  state.y_counterfactual.assign(n, std::numeric_limits<double>::quiet_NaN());
  state.counterfactual_group.assign(n, -1);
  double xsum = 0.0, xss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const ObservedPattern pat = ds.pattern(i);
    state.labels[i] = is_mixture(pat) ? (rng.uniform() < 0.5 ? Stratum::complier : noncomplier_stratum(pat))
                                      : noncomplier_stratum(pat);
    if (ds[i].y_obs) state.y_complete[i] = *ds[i].y_obs;
    xsum += ds[i].x;
  }
  const double xbar = xsum / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) xss += (ds[i].x - xbar) * (ds[i].x - xbar);
  const double xsd = n > 1 && xss > 0.0 ? std::sqrt(xss / static_cast<double>(n - 1)) : 1.0;

  theta = ParameterState{};
  theta.variant = cfg.variant;
  const double bsd = std::sqrt(cfg.beta_var);
  const double b1 = cfg.beta_mean + shift * bsd / xsd;
  const double b0 = cfg.beta_mean + shift * bsd - (b1 - cfg.beta_mean) * xbar;
  theta.probit = {b0, b1, b0, b1};
  const double g1 = shift * cfg.mlogit_prior_sd / xsd;
  const double g0 = shift * cfg.mlogit_prior_sd - g1 * xbar;
  theta.mlogit = {{g0, g1}, {g0, g1}};
  theta.proportions = {};
  theta.outcome.variant = cfg.variant;
  double a0 = ctx.outcome_priors.intercept_mean + shift * std::sqrt(ctx.outcome_priors.intercept_var);
  double a1 = 0.0;
  if (slope_mode(cfg.variant) != SlopeMode::none) {
    a1 = ctx.outcome_priors.slope_mean + shift * std::sqrt(ctx.outcome_priors.slope_var) / xsd;
    a0 -= (a1 - ctx.outcome_priors.slope_mean) * xbar;
  }
  for (auto& a : theta.outcome.alpha) a = {a0, a1};
  theta.outcome.sigma2 = ds.observed_outcome_variance();

  detail::impute_outcomes(ds, theta, state, rng);
}

inline void check_fit_preconditions(const Dataset& ds, const ModelConfig& config) {
  config.validate();
  std::size_t observed = 0;
  for (const auto& r : ds.records()) observed += r.y_obs ? 1 : 0;
  if (observed < 2) throw Error("at least two observed outcomes are required to fit");
  if (!(ds.observed_outcome_variance() > 0.0)) throw Error("observed outcomes have zero variance");
}

inline Chain run_chain(const Dataset& ds, const ModelConfig& config, std::size_t chain_index,
                       const ProgressCallback& progress = {}) {
  check_fit_preconditions(ds, config);
  SamplerContext ctx(ds, config, chain_index);
  RngStream rng(config.seed, chain_index);
  StratumState state;
  ParameterState theta;
  initialize_chain(ctx, state, theta, rng);

  Chain chain;
  chain.chain_index = chain_index;
  chain.seed = config.seed;
  chain.variant = config.variant;
  chain.schedule = config.schedule;
  chain.draws.reserve(config.schedule.saved());

  const std::size_t total = config.schedule.burn_in + config.schedule.kept;
  for (std::size_t t = 0; t < total; ++t) {
    ctx.iteration = t;
    ctx.burn_in = t < config.schedule.burn_in;
    ctx.keep_labels = t == 0;
    if (t == config.schedule.burn_in) ctx.mlogit.adapting = false;
    const IterationRecord rec = gibbs_iteration(ctx, state, theta, rng);

    if (!ctx.burn_in) {
      const std::size_t k = t - config.schedule.burn_in + 1;
      if (k % config.schedule.thin == 0) {
        SavedDraw d;
        d.iteration = k;
        d.params = theta;
        d.cace = rec.cace;
        d.n_c = rec.n_c;
        d.complier.resize(ds.size());
        for (std::size_t i = 0; i < ds.size(); ++i) d.complier[i] = state.labels[i] == Stratum::complier;
        if (!d.cace) ++chain.undefined_cace;
        chain.draws.push_back(std::move(d));
      }
    }
    if (progress && config.progress_interval && (t + 1) % config.progress_interval == 0) {
      progress({chain_index, t + 1, total, rec.n_c});
    }
  }
  chain.mlogit_proposal_sd = ctx.mlogit.sd;
  return chain;
}

struct ChainFailure {
  std::size_t chain_index = 0;
  std::string message;
};

struct ModelRun {
  std::vector<Chain> chains;  // successful chains, ordered by chain index
  std::vector<ChainFailure> failures;

  bool complete() const noexcept { return failures.empty(); }
};

inline std::size_t resolve_threads(std::size_t requested, std::size_t tasks) {
  std::size_t t = requested ? requested : std::max<std::size_t>(1, std::thread::hardware_concurrency());
  return std::max<std::size_t>(1, std::min(t, tasks));
}

/// Runs all chains, each on its own RNG stream; output order is by chain index.
inline ModelRun run_model(const Dataset& ds, const ModelConfig& config, const ProgressCallback& progress = {}) {
  check_fit_preconditions(ds, config);
  const std::size_t m = config.n_chains;
  std::vector<std::optional<Chain>> slots(m);
  std::vector<std::optional<std::string>> errors(m);
  std::atomic<std::size_t> next{0};
  std::mutex progress_mutex;
  ProgressCallback serialized;
  if (progress) {
    serialized = [&](const ProgressEvent& e) {
      std::lock_guard<std::mutex> lock(progress_mutex);
      progress(e);
    };
  }

  auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < m;) {
      try {
        slots[k] = run_chain(ds, config, k, serialized);
      } catch (const std::exception& e) {
        errors[k] = e.what();
      }
    }
  };
  const std::size_t n_threads = resolve_threads(config.threads, m);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  ModelRun run;
  for (std::size_t k = 0; k < m; ++k) {
    if (slots[k]) run.chains.push_back(std::move(*slots[k]));
    else run.failures.push_back({k, errors[k].value_or("unknown failure")});
  }
  return run;
}

}  // namespace cace
