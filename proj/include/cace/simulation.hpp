#pragma once

// Synthetic trials, the Monte Carlo bias harness, and an exact small-sample
// posterior used to check the sampler.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cace/data.hpp"
#include "cace/diagnostics.hpp"
#include "cace/distributions.hpp"
#include "cace/errors.hpp"
#include "cace/gibbs.hpp"
#include "cace/random.hpp"

namespace cace {

/// Data-generating process.
///
/// Covariate: Normal(x_mean, x_sd^2), optionally rounded to integers, kept in
/// [x_lo, x_hi] by rejection. Strata follow the linked probits with
///   never-taker index   base_never  + stratum_slope * (x - x_mean)
///   always-taker index  base_always + stratum_slope * (x - x_mean)
/// so a positive slope moves low-x patients toward never-taking and high-x
/// patients toward always-taking. Outcomes share one slope in x, chosen so that
/// Corr(x, y) = corr_xy when all intercepts coincide; treated compliers get
/// `true_cace` added to both arms' shared noise draw.
struct DgpConfig {
  std::size_t n = 500;
  double stratum_slope = 0.3;
  double corr_xy = 0.0;
  double true_cace = 0.0;
  double x_mean = 12.8;
  double x_sd = 2.7;
  double x_lo = 0.0;
  double x_hi = 25.0;
  bool x_rounded = true;
  double assignment_prob = 0.5;
  double sigma_y = 10.0;
  double base_never = 0.0;                   // P(never) = 0.5 at x_mean
  double base_always = -0.5533847195556729;  // P(always | not never) = 0.29 at x_mean
  double outcome_intercept = 42.8;
  std::array<double, 3> stratum_offsets{0.0, 0.0, 0.0};  // (complier, never, always)
  double missing_prob = 0.0;

  void validate() const {
    if (n < 1) throw ConfigError("dgp.n", "must be at least 1");
    if (!(std::abs(corr_xy) < 1.0)) throw ConfigError("dgp.corr_xy", "must lie in (-1, 1)");
    if (!(sigma_y > 0.0)) throw ConfigError("dgp.sigma_y", "must be positive");
    if (!(x_sd > 0.0)) throw ConfigError("dgp.x_sd", "must be positive");
    if (!(x_hi > x_lo)) throw ConfigError("dgp.x_hi", "must exceed x_lo");
    if (!(assignment_prob > 0.0 && assignment_prob < 1.0))
      throw ConfigError("dgp.assignment_prob", "must lie in (0, 1)");
    if (!(missing_prob >= 0.0 && missing_prob < 1.0)) throw ConfigError("dgp.missing_prob", "must lie in [0, 1)");
  }

  /// Linked-probit coefficients on the raw covariate scale.
  ProbitStratumParams stratum_params() const noexcept {
    return {base_never - stratum_slope * x_mean, stratum_slope, base_always - stratum_slope * x_mean,
            stratum_slope};
  }
};

/// Exact mean and variance of the covariate law (numerical integration for the continuous case).
inline std::pair<double, double> x_law_moments(const DgpConfig& cfg) {
  double mass = 0.0, m1 = 0.0, m2 = 0.0;
  if (cfg.x_rounded) {
    for (double k = std::ceil(cfg.x_lo); k <= std::floor(cfg.x_hi); k += 1.0) {
      const double p = standard_normal_cdf((k + 0.5 - cfg.x_mean) / cfg.x_sd) -
                       standard_normal_cdf((k - 0.5 - cfg.x_mean) / cfg.x_sd);
      mass += p;
      m1 += p * k;
      m2 += p * k * k;
    }
  } else {
    const int steps = 20000;
    const double h = (cfg.x_hi - cfg.x_lo) / steps;
    for (int i = 0; i <= steps; ++i) {
      const double x = cfg.x_lo + h * i;
      const double w = (i == 0 || i == steps) ? 0.5 : 1.0;
      const double p = w * std::exp(standard_normal_log_pdf((x - cfg.x_mean) / cfg.x_sd));
      mass += p;
      m1 += p * x;
      m2 += p * x * x;
    }
  }
  if (!(mass > 0.0)) throw CalibrationError("covariate law has no mass in [x_lo, x_hi]");
  m1 /= mass;
  return {m1, m2 / mass - m1 * m1};
}

/// Outcome slope giving Corr(x, y) = corr_xy for y = a + slope x + N(0, sigma_y^2).
inline double calibrate_outcome_slope(const DgpConfig& cfg) {
  if (!(std::abs(cfg.corr_xy) < 1.0)) throw CalibrationError("corr_xy must lie in (-1, 1)");
  const double var_x = x_law_moments(cfg).second;
  if (!(var_x > 0.0)) {
    if (cfg.corr_xy == 0.0) return 0.0;
    throw CalibrationError("nonzero corr_xy is unattainable with a degenerate covariate law");
  }
  const double rho = cfg.corr_xy;
  return rho * cfg.sigma_y / (std::sqrt(var_x) * std::sqrt(1.0 - rho * rho));
}

/// Standard deviation of y implied by the calibration (intercept offsets at zero).
inline double outcome_sd(const DgpConfig& cfg) {
  const double slope = calibrate_outcome_slope(cfg);
  return std::sqrt(slope * slope * x_law_moments(cfg).second + cfg.sigma_y * cfg.sigma_y);
}

/// Scoring-only truth. Fitting code takes a Dataset and never sees this.
struct TruthRecord {
  std::vector<Stratum> strata;
  std::vector<double> y0, y1;  // both potential outcomes
  double true_cace = 0.0;
  double sample_cace = 0.0;     // mean of y1 - y0 over true compliers
  double outcome_slope = 0.0;
};

struct SimulatedTrial {
  Dataset data;
  TruthRecord truth;
};

inline SimulatedTrial generate_dataset(const DgpConfig& cfg, RngStream& rng) {
  cfg.validate();
  const double slope = calibrate_outcome_slope(cfg);
  const ProbitStratumParams beta = cfg.stratum_params();
  std::vector<PatientRecord> records;
  records.reserve(cfg.n);
  SimulatedTrial out;
  out.truth.true_cace = cfg.true_cace;
  out.truth.outcome_slope = slope;
  double cace_sum = 0.0;
  std::size_t n_c = 0;

  for (std::size_t i = 0; i < cfg.n; ++i) {
    double x;
    do {
      x = rng.normal(cfg.x_mean, cfg.x_sd);
      if (cfg.x_rounded) x = std::nearbyint(x);
    } while (x < cfg.x_lo || x > cfg.x_hi);

    const double sn = beta.b00 + beta.b01 * x + rng.normal();
    const double sc = beta.b10 + beta.b11 * x + rng.normal();
    const Stratum s = sn <= 0.0 ? Stratum::never_taker : (sc <= 0.0 ? Stratum::complier : Stratum::always_taker);
    const int z = rng.uniform() < cfg.assignment_prob ? 1 : 0;
    int d = 0;
    switch (s) {
      case Stratum::never_taker: d = 0; break;
      case Stratum::always_taker: d = 1; break;
      case Stratum::complier: d = z; break;
    }
    const double base = cfg.outcome_intercept + cfg.stratum_offsets[static_cast<std::size_t>(s)] + slope * x +
                        rng.normal(0.0, cfg.sigma_y);
    const double y0 = base;
    const double y1 = s == Stratum::complier ? base + cfg.true_cace : base;
    const bool missing = cfg.missing_prob > 0.0 && rng.uniform() < cfg.missing_prob;

    PatientRecord r;
    r.id = "sim" + std::to_string(i + 1);
    r.z = z;
    r.d_obs = d;
    r.x = x;
    if (!missing) r.y_obs = z == 1 ? y1 : y0;
    records.push_back(std::move(r));
    out.truth.strata.push_back(s);
    out.truth.y0.push_back(y0);
    out.truth.y1.push_back(y1);
    if (s == Stratum::complier) {
      cace_sum += y1 - y0;
      ++n_c;
    }
  }
  out.truth.sample_cace = n_c ? cace_sum / static_cast<double>(n_c) : 0.0;
  out.data = Dataset::from_records(std::move(records));
  return out;
}

// ---------------------------------------------------------------------------
// Fixture shaped like the surgical trial's summary table

struct PatternTarget {
  int z, d;
  std::size_t n;
  double x_mean, x_sd;
  double y_mean, y_sd;
  std::size_t y_missing;
};

/// Published pattern sizes, covariate and outcome moments, and nonresponse counts
/// (48.4% / 46.2% by arm, 55.6% / 45.0% among known always/never-takers).
inline constexpr std::array<PatternTarget, 4> kTable1Targets = {{
    {0, 0, 53, 12.8, 2.7, 42.8, 12.1, 25},
    {0, 1, 9, 14.0, 2.0, 42.8, 11.9, 5},
    {1, 1, 40, 13.2, 2.3, 44.5, 12.1, 19},
    {1, 0, 40, 12.2, 3.0, 41.7, 9.3, 18},
}};

namespace detail {

/// n normal draws affinely adjusted to an exact sample mean and SD.
inline std::vector<double> exact_moment_sample(std::size_t n, double mean, double sd, RngStream& rng) {
  std::vector<double> v(n);
  for (auto& e : v) e = rng.normal();
  if (n == 1) return {mean};
  double m = 0.0;
  for (double e : v) m += e;
  m /= static_cast<double>(n);
  double ss = 0.0;
  for (double e : v) ss += (e - m) * (e - m);
  const double s = std::sqrt(ss / static_cast<double>(n - 1));
  for (auto& e : v) e = mean + sd * (e - m) / s;
  return v;
}

}  // namespace detail

/// 142 records whose per-pattern counts, x moments, observed-y moments, and
/// missing counts equal the published summaries exactly. Record order is shuffled.
inline std::vector<PatientRecord> table1_fixture(std::uint64_t seed = 2011) {
  RngStream rng(seed, 0);
  std::vector<PatientRecord> recs;
  for (const auto& t : kTable1Targets) {
    const auto xs = detail::exact_moment_sample(t.n, t.x_mean, t.x_sd, rng);
    const auto ys = detail::exact_moment_sample(t.n - t.y_missing, t.y_mean, t.y_sd, rng);
    for (std::size_t i = 0; i < t.n; ++i) {
      PatientRecord r;
      r.z = t.z;
      r.d_obs = t.d;
      r.x = xs[i];
      if (i < ys.size()) r.y_obs = ys[i];
      recs.push_back(std::move(r));
    }
  }
  for (std::size_t i = recs.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.next() % i);
    std::swap(recs[i - 1], recs[j]);
  }
  for (std::size_t i = 0; i < recs.size(); ++i) recs[i].id = "p" + std::to_string(i + 1);
  return recs;
}

// ---------------------------------------------------------------------------
// Monte Carlo harness

struct ReplicateResult {
  std::size_t rep = 0;
  bool ok = false;
  std::string error;
  std::uint64_t dataset_seed = 0;
  std::uint64_t fit_seed = 0;
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double sd = 0.0;
  double sample_cace = 0.0;
};

struct McCell {
  double corr_xy = 0.0;
  ModelVariant variant = ModelVariant::A;
  double outcome_sd = 0.0;
  std::vector<ReplicateResult> replicates;

  std::size_t ok_count() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(replicates.begin(), replicates.end(), [](const ReplicateResult& r) { return r.ok; }));
  }
  bool partial() const noexcept { return ok_count() != replicates.size(); }

  double average(double ReplicateResult::*field) const noexcept {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : replicates)
      if (r.ok) {
        s += r.*field;
        ++n;
      }
    return n ? s / static_cast<double>(n) : std::nan("");
  }
  double mean_cace() const noexcept { return average(&ReplicateResult::mean); }
  double mean_lo() const noexcept { return average(&ReplicateResult::lo); }
  double mean_hi() const noexcept { return average(&ReplicateResult::hi); }

  /// Share of successful replicates whose 95% interval excludes zero.
  double excludes_zero_rate() const noexcept {
    std::size_t hits = 0, n = 0;
    for (const auto& r : replicates)
      if (r.ok) {
        ++n;
        if (r.lo > 0.0 || r.hi < 0.0) ++hits;
      }
    return n ? static_cast<double>(hits) / static_cast<double>(n) : std::nan("");
  }
};

/// Fitting defaults for the Monte Carlo harness: the standard schedule and priors
/// except a diffuse outcome-intercept prior. The intercept sits at x = 0, far below
/// the covariate range, and the default N(mean y, 100) prior there pulls a correctly
/// specified covariate-adjusted fit away from the truth once x and y are correlated.
inline ModelConfig simulation_model_defaults() {
  ModelConfig m;
  m.intercept_var = 1.0e4;
  return m;
}

struct McConfig {
  std::vector<double> corr_grid{-0.6, -0.3, 0.0, 0.3, 0.6};
  std::vector<ModelVariant> variants{ModelVariant::A, ModelVariant::B};
  std::size_t reps = 50;
  DgpConfig dgp;
  ModelConfig model = simulation_model_defaults();
  std::uint64_t master_seed = 5;
  std::size_t threads = 0;

  void validate() const {
    if (reps < 1) throw ConfigError("simulation.reps", "must be at least 1");
    if (corr_grid.empty()) throw ConfigError("simulation.corr_grid", "must not be empty");
    if (variants.empty()) throw ConfigError("simulation.variants", "must not be empty");
    for (std::size_t i = 0; i < corr_grid.size(); ++i)
      if (!(std::abs(corr_grid[i]) < 1.0))
        throw ConfigError("simulation.corr_grid[" + std::to_string(i) + "]", "must lie in (-1, 1)");
    dgp.validate();
    model.validate();
  }
};

struct McResult {
  std::vector<McCell> cells;  // corr-major, then variant
};

inline std::uint64_t replicate_dataset_seed(std::uint64_t master, std::size_t corr_index, std::size_t rep) {
  return derive_seed(master, corr_index + 1, rep + 1);
}

inline std::uint64_t replicate_fit_seed(std::uint64_t dataset_seed, std::size_t variant_index) {
  return derive_seed(dataset_seed, 0xF17, variant_index + 1);
}

/// One task per (corr, replicate): the same simulated trial is fitted under every variant.
/// Results do not depend on thread count or completion order.
inline McResult run_monte_carlo(const McConfig& cfg) {
  cfg.validate();
  McResult result;
  for (double corr : cfg.corr_grid) {
    DgpConfig d = cfg.dgp;
    d.corr_xy = corr;
    for (ModelVariant v : cfg.variants) {
      McCell cell;
      cell.corr_xy = corr;
      cell.variant = v;
      cell.outcome_sd = outcome_sd(d);
      cell.replicates.resize(cfg.reps);
      result.cells.push_back(std::move(cell));
    }
  }

  const std::size_t n_tasks = cfg.corr_grid.size() * cfg.reps;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t task; (task = next.fetch_add(1)) < n_tasks;) {
      const std::size_t ci = task / cfg.reps;
      const std::size_t rep = task % cfg.reps;
      DgpConfig d = cfg.dgp;
      d.corr_xy = cfg.corr_grid[ci];
      const std::uint64_t ds_seed = replicate_dataset_seed(cfg.master_seed, ci, rep);
      std::optional<SimulatedTrial> trial;
      std::string gen_error;
      try {
        RngStream rng(ds_seed, 0);
        trial = generate_dataset(d, rng);
      } catch (const std::exception& e) {
        gen_error = e.what();
      }
      for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi) {
        ReplicateResult& rr = result.cells[ci * cfg.variants.size() + vi].replicates[rep];
        rr.rep = rep;
        rr.dataset_seed = ds_seed;
        rr.fit_seed = replicate_fit_seed(ds_seed, vi);
        if (!trial) {
          rr.error = gen_error;
          continue;
        }
        rr.sample_cace = trial->truth.sample_cace;
        ModelConfig mc = cfg.model;
        mc.variant = cfg.variants[vi];
        mc.seed = rr.fit_seed;
        mc.threads = 1;
        try {
          const ModelRun run = run_model(trial->data, mc);
          if (!run.complete()) {
            rr.error = run.failures.front().message;
            continue;
          }
          const PosteriorSummary s = summarize_cace(run.chains);
          rr.mean = s.mean;
          rr.lo = s.q025;
          rr.hi = s.q975;
          rr.sd = s.sd;
          rr.ok = true;
        } catch (const std::exception& e) {
          rr.error = e.what();
        }
      }
    }
  };
  const std::size_t n_threads = resolve_threads(cfg.threads, n_tasks);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return result;
}

// ---------------------------------------------------------------------------
// Exact posterior for tiny covariate-free problems

struct QuadratureSpec {
  double log_tau_min = -30.0;
  double log_tau_max = 25.0;
  std::size_t nodes = 8001;
};

struct BruteForceResult {
  std::vector<double> complier_prob;  // per patient; 0 or 1 for known patterns
  double cace_mean = 0.0;             // conditional on at least one complier
  double prob_no_compliers = 0.0;
  std::size_t configurations = 0;
};

inline constexpr std::size_t kBruteForceLimit = 10;

/// Posterior of the mixture labels under the covariate-free model (variant D) by
/// enumerating every label configuration.
///
/// Proportions and group means are integrated analytically (Dirichlet-multinomial,
/// normal-normal); the shared precision is integrated numerically with the
/// trapezoid rule in log(precision). Priors are read from `config`.
inline BruteForceResult brute_force_posterior(const Dataset& ds, const ModelConfig& config,
                                              const QuadratureSpec& quad = {}) {
  if (ds.size() > kBruteForceLimit) throw TooLargeError("brute-force oracle supports at most 10 patients");
  for (const auto& r : ds.records())
    if (!r.y_obs) throw TooLargeError("brute-force oracle requires complete outcomes");

  const OutcomePriors pri = config.outcome_priors(ds);
  const std::array<double, 3> alpha = config.dirichlet;  // (complier, never, always)
  const double a0 = pri.precision_shape, b0 = pri.precision_rate;
  const double m0 = pri.intercept_mean, v0 = pri.intercept_var;

  std::vector<std::size_t> mix;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (is_mixture(ds.pattern(i))) mix.push_back(i);

  std::vector<double> log_tau(quad.nodes), tau(quad.nodes);
  const double h = (quad.log_tau_max - quad.log_tau_min) / static_cast<double>(quad.nodes - 1);
  for (std::size_t k = 0; k < quad.nodes; ++k) {
    log_tau[k] = quad.log_tau_min + h * static_cast<double>(k);
    tau[k] = std::exp(log_tau[k]);
  }

  const std::size_t n_config = std::size_t{1} << mix.size();
  std::vector<double> log_weight(n_config);
  std::vector<double> cace_given(n_config, 0.0);
  std::vector<bool> has_complier(n_config, false);
  std::vector<Stratum> labels(ds.size());
  std::vector<double> integrand(quad.nodes);

  for (std::size_t cfg = 0; cfg < n_config; ++cfg) {
    for (std::size_t i = 0; i < ds.size(); ++i) labels[i] = noncomplier_stratum(ds.pattern(i));
    for (std::size_t j = 0; j < mix.size(); ++j)
      if (cfg & (std::size_t{1} << j)) labels[mix[j]] = Stratum::complier;

    std::array<double, 3> counts{0, 0, 0};
    std::array<double, 4> gn{}, gsum{}, gss{};
    for (std::size_t i = 0; i < ds.size(); ++i) {
      counts[static_cast<std::size_t>(labels[i])] += 1.0;
      const auto g = static_cast<std::size_t>(outcome_group(labels[i], ds[i].z));
      gn[g] += 1.0;
      gsum[g] += *ds[i].y_obs;
    }
    std::array<double, 4> gmean{};
    for (std::size_t g = 0; g < 4; ++g) gmean[g] = gn[g] > 0 ? gsum[g] / gn[g] : 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto g = static_cast<std::size_t>(outcome_group(labels[i], ds[i].z));
      gss[g] += (*ds[i].y_obs - gmean[g]) * (*ds[i].y_obs - gmean[g]);
    }

    double log_dm = std::lgamma(alpha[0] + alpha[1] + alpha[2]) -
                    std::lgamma(alpha[0] + alpha[1] + alpha[2] + static_cast<double>(ds.size()));
    for (std::size_t k = 0; k < 3; ++k) log_dm += std::lgamma(alpha[k] + counts[k]) - std::lgamma(alpha[k]);

    // log of prior(tau) * tau (Jacobian) * prod_g marginal likelihood of group g given tau.
    double peak = -HUGE_VAL;
    for (std::size_t k = 0; k < quad.nodes; ++k) {
      const double t = tau[k];
      double l = a0 * std::log(b0) - std::lgamma(a0) + a0 * log_tau[k] - b0 * t;
      for (std::size_t g = 0; g < 4; ++g) {
        if (gn[g] == 0) continue;
        const double shrink = 1.0 + gn[g] * t * v0;
        l += 0.5 * gn[g] * (log_tau[k] - std::log(2.0 * M_PI)) - 0.5 * t * gss[g] - 0.5 * std::log(shrink) -
             0.5 * gn[g] * t * (gmean[g] - m0) * (gmean[g] - m0) / shrink;
      }
      integrand[k] = l;
      peak = std::max(peak, l);
    }
    double z = 0.0, ez1 = 0.0, ez0 = 0.0;
    for (std::size_t k = 0; k < quad.nodes; ++k) {
      const double w = ((k == 0 || k + 1 == quad.nodes) ? 0.5 : 1.0) * std::exp(integrand[k] - peak);
      z += w;
      // posterior means of the complier group means given tau
      const double t = tau[k];
      ez1 += w * (m0 / v0 + t * gsum[3]) / (1.0 / v0 + t * gn[3]);
      ez0 += w * (m0 / v0 + t * gsum[2]) / (1.0 / v0 + t * gn[2]);
    }
    log_weight[cfg] = log_dm + peak + std::log(z * h);
    const double mu1 = ez1 / z, mu0 = ez0 / z;

    double diff = 0.0;
    std::size_t nc = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (labels[i] != Stratum::complier) continue;
      diff += ds[i].z == 1 ? *ds[i].y_obs - mu0 : mu1 - *ds[i].y_obs;
      ++nc;
    }
    has_complier[cfg] = nc > 0;
    cace_given[cfg] = nc ? diff / static_cast<double>(nc) : 0.0;
  }

  const double top = *std::max_element(log_weight.begin(), log_weight.end());
  double total = 0.0, with_c = 0.0, cace_acc = 0.0;
  BruteForceResult out;
  out.configurations = n_config;
  out.complier_prob.assign(ds.size(), 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.pattern(i) == ObservedPattern::KnownNeverTaker || ds.pattern(i) == ObservedPattern::KnownAlwaysTaker)
      out.complier_prob[i] = 0.0;
  for (std::size_t cfg = 0; cfg < n_config; ++cfg) {
    const double w = std::exp(log_weight[cfg] - top);
    total += w;
    for (std::size_t j = 0; j < mix.size(); ++j)
      if (cfg & (std::size_t{1} << j)) out.complier_prob[mix[j]] += w;
    if (has_complier[cfg]) {
      with_c += w;
      cace_acc += w * cace_given[cfg];
    }
  }
  for (std::size_t j : mix) out.complier_prob[j] /= total;
  out.prob_no_compliers = 1.0 - with_c / total;
  out.cace_mean = with_c > 0 ? cace_acc / with_c : std::nan("");
  return out;
}

}  // namespace cace
