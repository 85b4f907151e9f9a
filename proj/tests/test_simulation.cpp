#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <vector>

#include "cace/simulation.hpp"
#include "support.hpp"

using namespace cace;
using testing_support::moments;

namespace {

double sample_corr(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ma = moments(a), mb = moments(b);
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma.mean) * (b[i] - mb.mean);
  return s / (a.size() - 1) / std::sqrt(ma.var * mb.var);
}

}  // namespace

TEST(GenerateDataset, ZeroSlopeSymmetricBaseGivesQuarterHalfQuarter) {
  DgpConfig cfg;
  cfg.n = 100000;
  cfg.stratum_slope = 0.0;
  cfg.base_never = 0.0;
  cfg.base_always = 0.0;
  RngStream rng(1);
  const auto t = generate_dataset(cfg, rng);
  std::array<double, 3> c{0, 0, 0};
  for (auto s : t.truth.strata) c[static_cast<std::size_t>(s)] += 1;
  const double n = static_cast<double>(cfg.n);
  const std::array<double, 3> expect{0.25, 0.5, 0.25};  // complier, never, always
  for (int k = 0; k < 3; ++k)
    EXPECT_NEAR(c[k] / n, expect[k], 3 * std::sqrt(expect[k] * (1 - expect[k]) / n)) << k;
}

TEST(GenerateDataset, CorrelationCalibration) {
  for (double rho : {0.0, 0.3, -0.6}) {
    DgpConfig cfg;
    cfg.n = 20000;
    cfg.corr_xy = rho;
    RngStream rng(2);
    const auto t = generate_dataset(cfg, rng);
    // Correlation of x with the control potential outcome (no stratum offsets).
    std::vector<double> x;
    for (const auto& r : t.data.records()) x.push_back(r.x);
    const double r = sample_corr(x, t.truth.y0);
    EXPECT_NEAR(r, rho, 3 * (1 - rho * rho) / std::sqrt(static_cast<double>(cfg.n))) << rho;
  }
}

TEST(GenerateDataset, NullEffectAtLargeN) {
  DgpConfig cfg;
  cfg.n = 100000;
  cfg.corr_xy = 0.3;
  RngStream rng(3);
  const auto t = generate_dataset(cfg, rng);
  EXPECT_DOUBLE_EQ(t.truth.sample_cace, 0.0);
  std::vector<double> y1, y0;
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    if (t.truth.strata[i] != Stratum::complier) continue;
    (t.data[i].z == 1 ? y1 : y0).push_back(*t.data[i].y_obs);
  }
  const auto m1 = moments(y1), m0 = moments(y0);
  EXPECT_NEAR(m1.mean - m0.mean, 0.0, 3 * std::hypot(m1.se, m0.se));
}

TEST(GenerateDataset, NonzeroEffectIsAddedToCompliers) {
  DgpConfig cfg;
  cfg.n = 2000;
  cfg.true_cace = 5.0;
  RngStream rng(4);
  const auto t = generate_dataset(cfg, rng);
  EXPECT_NEAR(t.truth.sample_cace, 5.0, 1e-12);
}

TEST(GenerateDataset, PatternsRespectMonotonicity) {
  DgpConfig cfg;
  cfg.n = 5000;
  cfg.stratum_slope = 0.6;
  cfg.missing_prob = 0.3;
  RngStream rng(5);
  const auto t = generate_dataset(cfg, rng);
  std::size_t missing = 0;
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    ASSERT_TRUE(label_allowed(t.data.pattern(i), t.truth.strata[i]));
    ASSERT_GE(t.data[i].x, cfg.x_lo);
    ASSERT_LE(t.data[i].x, cfg.x_hi);
    ASSERT_EQ(t.data[i].x, std::nearbyint(t.data[i].x));
    missing += !t.data[i].y_obs;
  }
  EXPECT_NEAR(missing / 5000.0, 0.3, 3 * std::sqrt(0.21 / 5000));
}

TEST(GenerateDataset, SlopeSendsHighCovariateTowardAlwaysTaking) {
  DgpConfig cfg;
  cfg.n = 20000;
  RngStream rng(6);
  const auto t = generate_dataset(cfg, rng);
  std::array<std::vector<double>, 3> xs;
  for (std::size_t i = 0; i < t.data.size(); ++i) xs[static_cast<std::size_t>(t.truth.strata[i])].push_back(t.data[i].x);
  const double xc = moments(xs[0]).mean, xn = moments(xs[1]).mean, xa = moments(xs[2]).mean;
  EXPECT_LT(xn, xc);
  EXPECT_LT(xc, xa);
}

TEST(GenerateDataset, CovariateLawMomentsMatchSample) {
  DgpConfig cfg;
  cfg.n = 50000;
  RngStream rng(7);
  const auto t = generate_dataset(cfg, rng);
  std::vector<double> x;
  for (const auto& r : t.data.records()) x.push_back(r.x);
  const auto m = moments(x);
  const auto [mu, var] = x_law_moments(cfg);
  EXPECT_NEAR(m.mean, mu, 4 * m.se);
  EXPECT_NEAR(m.var, var, 4 * testing_support::variance_se(x));
  EXPECT_NEAR(outcome_sd(cfg), cfg.sigma_y, 1e-12);  // corr 0
}

TEST(GenerateDataset, UnattainableCorrelationIsCalibrationError) {
  DgpConfig cfg;
  cfg.x_lo = 4.6;
  cfg.x_hi = 5.4;  // only x = 5 survives rounding
  cfg.corr_xy = 0.3;
  RngStream rng(8);
  EXPECT_THROW(generate_dataset(cfg, rng), CalibrationError);
  cfg.corr_xy = 0.0;
  EXPECT_NO_THROW(generate_dataset(cfg, rng));
  cfg.corr_xy = 1.0;
  EXPECT_THROW(generate_dataset(cfg, rng), ConfigError);
}

TEST(GenerateDataset, Deterministic) {
  DgpConfig cfg;
  cfg.n = 300;
  RngStream a(9), b(9);
  const auto ta = generate_dataset(cfg, a), tb = generate_dataset(cfg, b);
  for (std::size_t i = 0; i < ta.data.size(); ++i) {
    ASSERT_EQ(ta.data[i].x, tb.data[i].x);
    ASSERT_EQ(ta.data[i].y_obs, tb.data[i].y_obs);
  }
}

namespace {

McConfig tiny_mc() {
  McConfig mc;
  mc.corr_grid = {0.3};
  mc.variants = {ModelVariant::B};
  mc.reps = 1;
  mc.dgp.n = 120;
  mc.model.schedule = {200, 400, 4};
  mc.master_seed = 17;
  mc.threads = 1;
  return mc;
}

}  // namespace

TEST(RunMonteCarlo, SingleCellSingleReplicate) {
  const auto r = run_monte_carlo(tiny_mc());
  ASSERT_EQ(r.cells.size(), 1u);
  ASSERT_EQ(r.cells[0].replicates.size(), 1u);
  const auto& rep = r.cells[0].replicates[0];
  EXPECT_TRUE(rep.ok) << rep.error;
  EXPECT_LE(rep.lo, rep.hi);
  EXPECT_FALSE(r.cells[0].partial());
  EXPECT_EQ(r.cells[0].mean_cace(), rep.mean);
}

TEST(RunMonteCarlo, DeterministicAndThreadInvariant) {
  auto mc = tiny_mc();
  mc.corr_grid = {-0.3, 0.3};
  mc.variants = {ModelVariant::A, ModelVariant::B};
  mc.reps = 3;
  const auto a = run_monte_carlo(mc);
  const auto b = run_monte_carlo(mc);
  mc.threads = 4;
  const auto c = run_monte_carlo(mc);
  ASSERT_EQ(a.cells.size(), 4u);
  for (std::size_t k = 0; k < a.cells.size(); ++k)
    for (std::size_t r = 0; r < mc.reps; ++r) {
      EXPECT_EQ(a.cells[k].replicates[r].mean, b.cells[k].replicates[r].mean);
      EXPECT_EQ(a.cells[k].replicates[r].mean, c.cells[k].replicates[r].mean);
      EXPECT_EQ(a.cells[k].replicates[r].hi, c.cells[k].replicates[r].hi);
      EXPECT_EQ(a.cells[k].replicates[r].dataset_seed, c.cells[k].replicates[r].dataset_seed);
    }
  // Both variants of one replicate see the same simulated trial.
  EXPECT_EQ(a.cells[0].replicates[1].dataset_seed, a.cells[1].replicates[1].dataset_seed);
  EXPECT_EQ(a.cells[0].replicates[1].sample_cace, a.cells[1].replicates[1].sample_cace);
  EXPECT_NE(a.cells[0].replicates[1].fit_seed, a.cells[1].replicates[1].fit_seed);
}

TEST(RunMonteCarlo, ValidationNamesField) {
  auto mc = tiny_mc();
  mc.reps = 0;
  EXPECT_THROW(run_monte_carlo(mc), ConfigError);
  mc = tiny_mc();
  mc.corr_grid = {0.2, 1.5};
  try {
    run_monte_carlo(mc);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("corr_grid[1]"), std::string::npos);
  }
}

TEST(McCell, Aggregates) {
  McCell c;
  c.replicates.resize(4);
  c.replicates[0] = {0, true, "", 0, 0, 1.0, 0.5, 1.5, 0.2, 0.0};
  c.replicates[1] = {1, true, "", 0, 0, -1.0, -2.0, 0.5, 0.2, 0.0};
  c.replicates[2] = {2, true, "", 0, 0, 3.0, -0.5, -0.1, 0.2, 0.0};
  c.replicates[3] = {3, false, "boom", 0, 0, 100.0, 0, 0, 0, 0};
  EXPECT_TRUE(c.partial());
  EXPECT_EQ(c.ok_count(), 3u);
  EXPECT_DOUBLE_EQ(c.mean_cace(), 1.0);
  EXPECT_DOUBLE_EQ(c.excludes_zero_rate(), 2.0 / 3.0);
}

// ---------------------------------------------------------------------------
// Exact posterior

namespace {

PatientRecord rec(std::string id, int z, int d, double y) { return {std::move(id), z, d, y, 0.0}; }

// Independent evaluation: each group's outcomes are jointly N(m0 1, I / tau + v0 1 1^T),
// evaluated with a dense Cholesky, and tau is integrated with Simpson's rule in log tau.
std::vector<double> oracle_complier_probs(const Dataset& ds, const ModelConfig& cfg) {
  const OutcomePriors pri = cfg.outcome_priors(ds);
  std::vector<std::size_t> mix;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (is_mixture(ds.pattern(i))) mix.push_back(i);
  const std::size_t nconf = std::size_t{1} << mix.size();
  std::vector<double> logw(nconf);
  for (std::size_t c = 0; c < nconf; ++c) {
    std::vector<Stratum> lab(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) lab[i] = noncomplier_stratum(ds.pattern(i));
    for (std::size_t j = 0; j < mix.size(); ++j)
      if (c >> j & 1) lab[mix[j]] = Stratum::complier;
    std::array<double, 3> cnt{0, 0, 0};
    std::array<std::vector<double>, 4> ys;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      cnt[static_cast<std::size_t>(lab[i])] += 1;
      ys[static_cast<std::size_t>(outcome_group(lab[i], ds[i].z))].push_back(*ds[i].y_obs);
    }
    const auto& a = cfg.dirichlet;
    double ldm = std::lgamma(a[0] + a[1] + a[2]) - std::lgamma(a[0] + a[1] + a[2] + ds.size());
    for (int k = 0; k < 3; ++k) ldm += std::lgamma(a[k] + cnt[k]) - std::lgamma(a[k]);

    auto log_f = [&](double u) {
      const double tau = std::exp(u);
      double l = pri.precision_shape * std::log(pri.precision_rate) - std::lgamma(pri.precision_shape) +
                 pri.precision_shape * u - pri.precision_rate * tau;
      for (const auto& y : ys) {
        if (y.empty()) continue;
        const auto n = static_cast<Eigen::Index>(y.size());
        Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(n, n) / tau + Eigen::MatrixXd::Constant(n, n, pri.intercept_var);
        Eigen::VectorXd r(n);
        for (Eigen::Index i = 0; i < n; ++i) r[i] = y[static_cast<std::size_t>(i)] - pri.intercept_mean;
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        const Eigen::MatrixXd L = llt.matrixL();
        double logdet = 0;
        for (Eigen::Index i = 0; i < n; ++i) logdet += 2 * std::log(L(i, i));
        const Eigen::VectorXd sol = llt.solve(r);
        l += -0.5 * n * std::log(2 * M_PI) - 0.5 * logdet - 0.5 * r.dot(sol);
      }
      return l;
    };
    // Locate the peak on a coarse grid, then integrate the scaled integrand.
    double peak = -HUGE_VAL;
    for (double u = -30; u <= 25; u += 0.05) peak = std::max(peak, log_f(u));
    const double integral = testing_support::simpson([&](double u) { return std::exp(log_f(u) - peak); }, -30, 25, 12000);
    logw[c] = ldm + peak + std::log(integral);
  }
  const double top = *std::max_element(logw.begin(), logw.end());
  std::vector<double> p(ds.size(), 0.0);
  double tot = 0;
  for (std::size_t c = 0; c < nconf; ++c) {
    const double w = std::exp(logw[c] - top);
    tot += w;
    for (std::size_t j = 0; j < mix.size(); ++j)
      if (c >> j & 1) p[mix[j]] += w;
  }
  for (auto& v : p) v /= tot;
  return p;
}

ModelConfig d_config() {
  ModelConfig c;
  c.variant = ModelVariant::D;
  return c;
}

}  // namespace

TEST(BruteForcePosterior, NoMixturePatientsSingleConfiguration) {
  const Dataset ds = Dataset::from_records({rec("a", 1, 0, 40), rec("b", 0, 1, 45), rec("c", 1, 0, 38)});
  const auto r = brute_force_posterior(ds, d_config());
  EXPECT_EQ(r.configurations, 1u);
  for (double p : r.complier_prob) EXPECT_EQ(p, 0.0);
  EXPECT_EQ(r.prob_no_compliers, 1.0);
  EXPECT_TRUE(std::isnan(r.cace_mean));
}

TEST(BruteForcePosterior, SingletonGroupsReduceToDirichletMultinomial) {
  // Two mixture patients with equal outcomes; every configuration puts each patient in
  // its own outcome group, so only the Dirichlet-multinomial weights differ: 2:1:1:1.
  const Dataset ds = Dataset::from_records({rec("a", 0, 0, 40), rec("b", 1, 1, 40)});
  const auto r = brute_force_posterior(ds, d_config());
  EXPECT_EQ(r.configurations, 4u);
  EXPECT_NEAR(r.complier_prob[0], 0.6, 1e-9);
  EXPECT_NEAR(r.complier_prob[1], 0.6, 1e-9);
  EXPECT_NEAR(r.prob_no_compliers, 0.2, 1e-9);
}

TEST(BruteForcePosterior, SymmetricPairHasEqualProbabilities) {
  const Dataset ds = Dataset::from_records(
      {rec("a", 0, 0, 43), rec("b", 1, 1, 43), rec("c", 1, 0, 40), rec("d", 0, 1, 40)});
  const auto r = brute_force_posterior(ds, d_config());
  EXPECT_NEAR(r.complier_prob[0], r.complier_prob[1], 1e-12);
}

TEST(BruteForcePosterior, MatchesDenseMatrixOracle) {
  const std::vector<std::vector<PatientRecord>> fixtures{
      {rec("a", 0, 0, 38), rec("b", 0, 0, 52), rec("c", 1, 1, 47), rec("d", 1, 1, 30), rec("e", 1, 0, 41),
       rec("f", 0, 1, 49)},
      {rec("a", 0, 0, 44), rec("b", 1, 1, 44.5), rec("c", 1, 1, 61), rec("d", 1, 0, 43), rec("e", 1, 0, 42),
       rec("f", 0, 0, 20)},
  };
  for (const auto& f : fixtures) {
    const Dataset ds = Dataset::from_records(f);
    const auto r = brute_force_posterior(ds, d_config());
    const auto o = oracle_complier_probs(ds, d_config());
    for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_NEAR(r.complier_prob[i], o[i], 1e-6) << i;
  }
}

TEST(BruteForcePosterior, LimitsEnforced) {
  std::vector<PatientRecord> recs;
  for (int i = 0; i < 11; ++i) recs.push_back(rec("p" + std::to_string(i), i % 2, i % 2, 40 + i));
  EXPECT_THROW(brute_force_posterior(Dataset::from_records(recs), d_config()), TooLargeError);
  recs.resize(4);
  recs[2].y_obs.reset();
  EXPECT_THROW(brute_force_posterior(Dataset::from_records(recs), d_config()), TooLargeError);
}

TEST(BruteForcePosterior, GibbsLabelFrequenciesAgree) {
  // Long single-schedule run; raw indicator frequencies, no Rao-Blackwellization.
  const Dataset ds = Dataset::from_records({rec("a", 0, 0, 38), rec("b", 0, 0, 52), rec("c", 1, 1, 47),
                                            rec("d", 1, 1, 30), rec("e", 1, 0, 41), rec("f", 0, 1, 49)});
  auto cfg = d_config();
  cfg.schedule = {2000, 400000, 4};
  cfg.n_chains = 3;
  cfg.seed = 4242;
  const auto oracle = brute_force_posterior(ds, cfg);
  const ModelRun run = run_model(ds, cfg);
  ASSERT_TRUE(run.complete());
  std::vector<double> freq(ds.size(), 0.0);
  double n = 0;
  for (const auto& c : run.chains)
    for (const auto& d : c.draws) {
      for (std::size_t i = 0; i < ds.size(); ++i) freq[i] += d.complier[i];
      n += 1;
    }
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_NEAR(freq[i] / n, oracle.complier_prob[i], 0.02) << i;
}
