#pragma once

// Convergence checks, posterior summaries, and complier-probability diagnostics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cace/data.hpp"
#include "cace/errors.hpp"
#include "cace/gibbs.hpp"

namespace cace {

/// Potential scale reduction factor, sqrt(((n-1)/n W + B/n) / W), without the
/// degrees-of-freedom correction. W is the mean within-chain variance and B is
/// n times the variance of the chain means.
inline double compute_psrf(std::span<const std::vector<double>> chains) {
  const std::size_t m = chains.size();
  if (m < 2) throw InsufficientDrawsError("PSRF needs at least two chains");
  const std::size_t n = chains[0].size();
  if (n < 10) throw InsufficientDrawsError("PSRF needs at least ten draws per chain");
  for (const auto& c : chains)
    if (c.size() != n) throw InsufficientDrawsError("PSRF needs chains of equal length");

  std::vector<double> means(m);
  double w = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (double v : chains[j]) s += v;
    means[j] = s / static_cast<double>(n);
    double ss = 0.0;
    for (double v : chains[j]) ss += (v - means[j]) * (v - means[j]);
    w += ss / static_cast<double>(n - 1);
  }
  w /= static_cast<double>(m);
  double grand = 0.0;
  for (double mu : means) grand += mu;
  grand /= static_cast<double>(m);
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= static_cast<double>(n) / static_cast<double>(m - 1);

  const double nn = static_cast<double>(n);
  if (w == 0.0) return b > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  return std::sqrt(((nn - 1.0) / nn * w + b / nn) / w);
}

struct PsrfEntry {
  std::string name;
  double psrf = 1.0;
  bool exceeds = false;
};

struct PsrfReport {
  double threshold = 1.06;
  std::vector<PsrfEntry> entries;

  bool converged() const noexcept {
    return std::none_of(entries.begin(), entries.end(), [](const PsrfEntry& e) { return e.exceeds; });
  }
};

/// Per-chain series of every scalar parameter, indexed [parameter][chain][draw].
inline std::vector<std::vector<std::vector<double>>> parameter_series(std::span<const Chain> chains) {
  if (chains.empty()) return {};
  const std::size_t p = parameter_names(chains[0].variant).size();
  std::vector<std::vector<std::vector<double>>> out(p, std::vector<std::vector<double>>(chains.size()));
  for (std::size_t c = 0; c < chains.size(); ++c) {
    for (const auto& d : chains[c].draws) {
      const auto s = to_scalars(d.params);
      for (std::size_t k = 0; k < p; ++k) out[k][c].push_back(s[k]);
    }
  }
  return out;
}

/// PSRF for every scalar parameter, plus the CACE when no chain has undefined iterations.
/// Empty when fewer than two chains or ten draws per chain are available.
inline PsrfReport psrf_report(std::span<const Chain> chains, double threshold = 1.06) {
  PsrfReport report;
  report.threshold = threshold;
  if (chains.size() < 2) return report;
  for (const auto& c : chains)
    if (c.draws.size() < 10 || c.draws.size() != chains[0].draws.size()) return report;

  const auto names = parameter_names(chains[0].variant);
  const auto series = parameter_series(chains);
  auto add = [&](const std::string& name, const std::vector<std::vector<double>>& s) {
    const double v = compute_psrf(s);
    report.entries.push_back({name, v, v > threshold});
  };
  for (std::size_t k = 0; k < names.size(); ++k) add(names[k], series[k]);

  bool all_defined = true;
  std::vector<std::vector<double>> cace(chains.size());
  for (std::size_t c = 0; c < chains.size(); ++c)
    for (const auto& d : chains[c].draws) {
      if (!d.cace) all_defined = false;
      else cace[c].push_back(*d.cace);
    }
  if (all_defined) add("cace", cace);
  return report;
}

// ---------------------------------------------------------------------------
// Posterior summaries

/// Linear interpolation between order statistics at h = (N-1) p. `sorted` must be ascending.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw Error("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct PosteriorSummary {
  std::string name;
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
  std::size_t undefined = 0;  // CACE only: iterations with no compliers
};

inline PosteriorSummary summarize_values(std::string name, std::vector<double> values) {
  if (values.empty()) throw AllUndefinedError(name + ": no defined draws to summarize");
  PosteriorSummary s;
  s.name = std::move(name);
  s.n = values.size();
  std::sort(values.begin(), values.end());
  // Sorting first makes the summation order independent of pooling order.
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(s.n);
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.sd = s.n > 1 ? std::sqrt(ss / static_cast<double>(s.n - 1)) : 0.0;
  s.q025 = quantile_sorted(values, 0.025);
  s.q975 = quantile_sorted(values, 0.975);
  return s;
}

/// Pooled CACE draws across chains, dropping iterations without compliers.
inline PosteriorSummary summarize_cace(std::span<const Chain> chains) {
  std::vector<double> values;
  std::size_t undefined = 0;
  for (const auto& c : chains)
    for (const auto& d : c.draws) {
      if (d.cace) values.push_back(*d.cace);
      else ++undefined;
    }
  if (values.empty()) throw AllUndefinedError("cace: every saved iteration had no compliers");
  PosteriorSummary s = summarize_values("cace", std::move(values));
  s.undefined = undefined;
  return s;
}

/// Summaries of every scalar parameter, then n_c, then the CACE, pooled across chains.
inline std::vector<PosteriorSummary> summarize_posterior(std::span<const Chain> chains) {
  std::vector<PosteriorSummary> out;
  if (chains.empty()) return out;
  const auto names = parameter_names(chains[0].variant);
  const auto series = parameter_series(chains);
  for (std::size_t k = 0; k < names.size(); ++k) {
    std::vector<double> pooled;
    for (const auto& c : series[k]) pooled.insert(pooled.end(), c.begin(), c.end());
    out.push_back(summarize_values(names[k], std::move(pooled)));
  }
  std::vector<double> nc;
  for (const auto& c : chains)
    for (const auto& d : c.draws) nc.push_back(static_cast<double>(d.n_c));
  out.push_back(summarize_values("n_c", std::move(nc)));
  out.push_back(summarize_cace(chains));
  return out;
}

// ---------------------------------------------------------------------------
// Complier-probability diagnostics

inline std::vector<ParameterState> pooled_parameters(std::span<const Chain> chains) {
  std::vector<ParameterState> out;
  for (const auto& c : chains)
    for (const auto& d : c.draws) out.push_back(d.params);
  return out;
}

struct GridPoint {
  double x = 0.0;
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

struct ComplierProbGrid {
  int z = 0;
  double y_eval = 0.0;
  std::vector<GridPoint> points;
};

/// Pointwise posterior mean and 95% band of the complier-membership probability.
inline ComplierProbGrid complier_prob_grid(std::span<const ParameterState> draws, int z, double y_eval,
                                           std::span<const double> x_grid) {
  ComplierProbGrid grid;
  grid.z = z;
  grid.y_eval = y_eval;
  std::vector<double> vals(draws.size());
  for (double x : x_grid) {
    double sum = 0.0;
    for (std::size_t d = 0; d < draws.size(); ++d) {
      vals[d] = complier_probability(x, y_eval, z, draws[d]);
      sum += vals[d];
    }
    GridPoint pt{x, std::nan(""), std::nan(""), std::nan("")};
    if (!draws.empty()) {
      pt.mean = sum / static_cast<double>(draws.size());
      std::vector<double> sorted = vals;
      std::sort(sorted.begin(), sorted.end());
      pt.lo = quantile_sorted(sorted, 0.025);
      pt.hi = quantile_sorted(sorted, 0.975);
    }
    grid.points.push_back(pt);
  }
  return grid;
}

/// `size` equally spaced points over [lo, hi].
inline std::vector<double> linear_grid(double lo, double hi, std::size_t size) {
  std::vector<double> g;
  if (size == 0) return g;
  if (size == 1) return {0.5 * (lo + hi)};
  for (std::size_t i = 0; i < size; ++i)
    g.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(size - 1));
  return g;
}

inline std::size_t sturges_bins(std::size_t n) {
  return static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(std::max<std::size_t>(n, 1))))) + 1;
}

struct HistogramBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double shading = 0.0;
};

struct ShadedHistogram {
  int z = 0;
  double y_eval = 0.0;
  std::vector<HistogramBin> bins;
};

/// Histogram of x among patients with z = d_obs = z, each bin shaded by the mean
/// posterior complier probability at its midpoint with y at that pattern's observed mean.
/// `n_bins` = 0 selects Sturges' rule.
inline ShadedHistogram shaded_histogram(std::span<const ParameterState> draws, const Dataset& ds, int z,
                                        std::size_t n_bins = 0, std::optional<double> y_eval = std::nullopt) {
  const ObservedPattern pat = z == 0 ? ObservedPattern::MixtureControlArm : ObservedPattern::MixtureTreatedArm;
  std::vector<double> xs;
  double ysum = 0.0;
  std::size_t ny = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.pattern(i) != pat) continue;
    xs.push_back(ds[i].x);
    if (ds[i].y_obs) {
      ysum += *ds[i].y_obs;
      ++ny;
    }
  }
  if (xs.empty()) throw EmptyPatternError("no patients with z = d_obs = " + std::to_string(z));
  if (!y_eval && ny == 0) throw EmptyPatternError("no observed outcomes with z = d_obs = " + std::to_string(z));

  ShadedHistogram h;
  h.z = z;
  h.y_eval = y_eval.value_or(ysum / static_cast<double>(ny));
  if (n_bins == 0) n_bins = sturges_bins(xs.size());
  const auto [mn, mx] = std::minmax_element(xs.begin(), xs.end());
  double lo = *mn, hi = *mx;
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / static_cast<double>(n_bins);
  std::vector<double> mids;
  for (std::size_t b = 0; b < n_bins; ++b) {
    HistogramBin bin;
    bin.lo = lo + width * static_cast<double>(b);
    bin.hi = b + 1 == n_bins ? hi : lo + width * static_cast<double>(b + 1);
    h.bins.push_back(bin);
    mids.push_back(0.5 * (bin.lo + bin.hi));
  }
  for (double x : xs) {
    auto b = static_cast<std::size_t>((x - lo) / width);
    h.bins[std::min(b, n_bins - 1)].count++;
  }
  const ComplierProbGrid g = complier_prob_grid(draws, z, h.y_eval, mids);
  for (std::size_t b = 0; b < n_bins; ++b) h.bins[b].shading = g.points[b].mean;
  return h;
}

}  // namespace cace
