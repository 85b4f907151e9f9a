#pragma once

// Persisted formats: configuration JSON, draw CSV files, digests.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "cace/data.hpp"
#include "cace/diagnostics.hpp"
#include "cace/errors.hpp"
#include "cace/gibbs.hpp"
#include "cace/simulation.hpp"

namespace cace {

using json = nlohmann::ordered_json;

/// Shortest-unambiguous is not used: every real is written with 17 significant digits.
inline std::string format_real(double v) {
  if (std::isnan(v)) return "NA";
  if (std::isinf(v)) return v > 0 ? "Inf" : "-Inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int{md[i]};
  return os.str();
}

class IoError : public Error {
public:
  using Error::Error;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read '" + p.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out << bytes;
  if (!out) throw IoError("failed writing '" + p.string() + "'");
}

// ---------------------------------------------------------------------------
// Configuration

namespace detail {

/// Reads optional fields from one JSON object, rejecting unknown keys.
class FieldReader {
public:
  FieldReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.push_back(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(field(key), "expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
          throw ConfigError(field(key), "expected a nonnegative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(field(key), "expected a number");
      }
      out = v.get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(field(key), e.what());
    }
  }

  const json* sub(const char* key) {
    seen_.push_back(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string field(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
        throw ConfigError(field(it.key()), "unknown field");
    }
  }

private:
  const json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

}  // namespace detail

/// Fields absent from `j` keep their values from `base`.
inline ModelConfig model_config_from_json(const json& j, const std::string& path = "model",
                                          const ModelConfig& base = ModelConfig{}) {
  ModelConfig c = base;
  detail::FieldReader r(j, path);
  std::string variant = std::string(to_string(c.variant));
  r.get("variant", variant);
  try {
    c.variant = parse_variant(variant);
  } catch (const ConfigError&) {
    throw ConfigError(r.field("variant"), "unknown model variant '" + variant + "'");
  }
  r.get("n_chains", c.n_chains);
  r.get("seed", c.seed);
  r.get("marginal_missing_y", c.marginal_missing_y);
  r.get("threads", c.threads);
  r.get("psrf_threshold", c.psrf_threshold);
  r.get("progress_interval", c.progress_interval);
  if (const json* s = r.sub("schedule")) {
    detail::FieldReader rs(*s, r.field("schedule"));
    rs.get("burn_in", c.schedule.burn_in);
    rs.get("kept", c.schedule.kept);
    rs.get("thin", c.schedule.thin);
    rs.finish();
  }
  if (const json* p = r.sub("priors")) {
    detail::FieldReader rp(*p, r.field("priors"));
    if (const json* im = rp.sub("intercept_mean")) {
      if (im->is_null()) c.intercept_mean.reset();
      else if (im->is_number()) c.intercept_mean = im->get<double>();
      else throw ConfigError(rp.field("intercept_mean"), "expected a number or null");
    }
    rp.get("intercept_var", c.intercept_var);
    rp.get("slope_mean", c.slope_mean);
    rp.get("slope_var", c.slope_var);
    rp.get("precision_shape", c.precision_shape);
    rp.get("precision_param", c.precision_param);
    std::string conv = c.precision_convention == PrecisionConvention::shape_rate ? "shape_rate" : "shape_scale";
    rp.get("precision_convention", conv);
    if (conv == "shape_rate") c.precision_convention = PrecisionConvention::shape_rate;
    else if (conv == "shape_scale") c.precision_convention = PrecisionConvention::shape_scale;
    else throw ConfigError(rp.field("precision_convention"), "expected 'shape_rate' or 'shape_scale'");
    rp.get("beta_mean", c.beta_mean);
    rp.get("beta_var", c.beta_var);
    rp.get("mlogit_prior_sd", c.mlogit_prior_sd);
    if (const json* d = rp.sub("dirichlet")) {
      if (!d->is_array() || d->size() != 3) throw ConfigError(rp.field("dirichlet"), "expected three numbers");
      for (std::size_t k = 0; k < 3; ++k) {
        if (!(*d)[k].is_number()) throw ConfigError(rp.field("dirichlet"), "expected three numbers");
        c.dirichlet[k] = (*d)[k].get<double>();
      }
    }
    rp.finish();
  }
  if (const json* m = r.sub("mlogit")) {
    detail::FieldReader rm(*m, r.field("mlogit"));
    rm.get("initial_proposal_sd", c.mlogit_initial_sd);
    rm.get("adapt_interval", c.mlogit_adapt_interval);
    rm.finish();
  }
  r.finish();
  c.validate();
  return c;
}

inline json to_json(const ModelConfig& c) {
  json j;
  j["variant"] = std::string(to_string(c.variant));
  j["n_chains"] = c.n_chains;
  j["seed"] = c.seed;
  j["marginal_missing_y"] = c.marginal_missing_y;
  j["threads"] = c.threads;
  j["psrf_threshold"] = c.psrf_threshold;
  j["progress_interval"] = c.progress_interval;
  j["schedule"] = {{"burn_in", c.schedule.burn_in}, {"kept", c.schedule.kept}, {"thin", c.schedule.thin}};
  json p;
  p["intercept_mean"] = c.intercept_mean ? json(*c.intercept_mean) : json(nullptr);
  p["intercept_var"] = c.intercept_var;
  p["slope_mean"] = c.slope_mean;
  p["slope_var"] = c.slope_var;
  p["precision_shape"] = c.precision_shape;
  p["precision_param"] = c.precision_param;
  p["precision_convention"] =
      c.precision_convention == PrecisionConvention::shape_rate ? "shape_rate" : "shape_scale";
  p["beta_mean"] = c.beta_mean;
  p["beta_var"] = c.beta_var;
  p["mlogit_prior_sd"] = c.mlogit_prior_sd;
  p["dirichlet"] = c.dirichlet;
  j["priors"] = p;
  j["mlogit"] = {{"initial_proposal_sd", c.mlogit_initial_sd}, {"adapt_interval", c.mlogit_adapt_interval}};
  return j;
}

inline DgpConfig dgp_config_from_json(const json& j, const std::string& path) {
  DgpConfig c;
  detail::FieldReader r(j, path);
  r.get("n", c.n);
  r.get("stratum_slope", c.stratum_slope);
  r.get("corr_xy", c.corr_xy);
  r.get("true_cace", c.true_cace);
  r.get("x_mean", c.x_mean);
  r.get("x_sd", c.x_sd);
  r.get("x_lo", c.x_lo);
  r.get("x_hi", c.x_hi);
  r.get("x_rounded", c.x_rounded);
  r.get("assignment_prob", c.assignment_prob);
  r.get("sigma_y", c.sigma_y);
  r.get("base_never", c.base_never);
  r.get("base_always", c.base_always);
  r.get("outcome_intercept", c.outcome_intercept);
  r.get("missing_prob", c.missing_prob);
  if (const json* o = r.sub("stratum_offsets")) {
    if (!o->is_array() || o->size() != 3) throw ConfigError(r.field("stratum_offsets"), "expected three numbers");
    for (std::size_t k = 0; k < 3; ++k) c.stratum_offsets[k] = (*o)[k].get<double>();
  }
  r.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(path + e.field().substr(e.field().find('.')), std::string(e.what()).substr(e.field().size() + 2));
  }
  return c;
}

inline json to_json(const DgpConfig& c) {
  return {{"n", c.n},
          {"stratum_slope", c.stratum_slope},
          {"corr_xy", c.corr_xy},
          {"true_cace", c.true_cace},
          {"x_mean", c.x_mean},
          {"x_sd", c.x_sd},
          {"x_lo", c.x_lo},
          {"x_hi", c.x_hi},
          {"x_rounded", c.x_rounded},
          {"assignment_prob", c.assignment_prob},
          {"sigma_y", c.sigma_y},
          {"base_never", c.base_never},
          {"base_always", c.base_always},
          {"outcome_intercept", c.outcome_intercept},
          {"stratum_offsets", c.stratum_offsets},
          {"missing_prob", c.missing_prob}};
}

/// Simulation block; the fitting settings come from the top-level model block.
inline McConfig mc_config_from_json(const json& sim, const ModelConfig& model, const std::string& path = "simulation") {
  McConfig c;
  c.model = model;
  detail::FieldReader r(sim, path);
  r.get("reps", c.reps);
  r.get("master_seed", c.master_seed);
  r.get("threads", c.threads);
  if (const json* g = r.sub("corr_grid")) {
    if (!g->is_array()) throw ConfigError(r.field("corr_grid"), "expected an array of numbers");
    c.corr_grid.clear();
    for (std::size_t i = 0; i < g->size(); ++i) {
      if (!(*g)[i].is_number())
        throw ConfigError(r.field("corr_grid[" + std::to_string(i) + "]"), "expected a number");
      c.corr_grid.push_back((*g)[i].get<double>());
    }
  }
  if (const json* v = r.sub("variants")) {
    if (!v->is_array()) throw ConfigError(r.field("variants"), "expected an array of variant names");
    c.variants.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      const std::string f = r.field("variants[" + std::to_string(i) + "]");
      if (!(*v)[i].is_string()) throw ConfigError(f, "expected a variant name");
      try {
        c.variants.push_back(parse_variant((*v)[i].get<std::string>()));
      } catch (const ConfigError&) {
        throw ConfigError(f, "unknown model variant '" + (*v)[i].get<std::string>() + "'");
      }
    }
  }
  if (const json* d = r.sub("dgp")) c.dgp = dgp_config_from_json(*d, r.field("dgp"));
  r.finish();
  c.validate();
  return c;
}

inline json to_json(const McConfig& c) {
  json variants = json::array();
  for (auto v : c.variants) variants.push_back(std::string(to_string(v)));
  return {{"reps", c.reps},     {"master_seed", c.master_seed}, {"threads", c.threads},
          {"corr_grid", c.corr_grid}, {"variants", variants},       {"dgp", to_json(c.dgp)}};
}

// ---------------------------------------------------------------------------
// Draw files

/// One row per saved draw: chain, iteration, every scalar parameter, cace ("NA" when undefined), n_c.
inline std::string draws_csv(std::span<const Chain> chains) {
  std::ostringstream os;
  if (chains.empty()) return "";
  const auto names = parameter_names(chains[0].variant);
  os << "chain,iteration";
  for (const auto& n : names) os << ',' << n;
  os << ",cace,n_c\n";
  for (const auto& c : chains) {
    for (const auto& d : c.draws) {
      os << c.chain_index << ',' << d.iteration;
      for (double v : to_scalars(d.params)) os << ',' << format_real(v);
      os << ',' << (d.cace ? format_real(*d.cace) : "NA") << ',' << d.n_c << '\n';
    }
  }
  return os.str();
}

/// Rebuilds chains (parameters, CACE, n_c) from a draw file. Membership bitsets are not persisted.
inline std::vector<Chain> read_draws_csv(const std::string& text, ModelVariant variant) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(0, "empty draw file");
  const auto header = detail::split_csv_line(detail::trim(line));
  const auto names = parameter_names(variant);
  if (header.size() != names.size() + 4 || header[0] != "chain" || header[1] != "iteration")
    throw ParseError(0, "draw file header does not match variant " + std::string(to_string(variant)));
  for (std::size_t k = 0; k < names.size(); ++k)
    if (header[k + 2] != names[k]) throw ParseError(0, "unexpected column '" + std::string(header[k + 2]) + "'");

  std::vector<Chain> chains;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto f = detail::split_csv_line(detail::trim(line));
    if (f.size() != header.size()) throw ParseError(row, "wrong field count");
    const auto ci = detail::parse_int(f[0]);
    const auto it = detail::parse_int(f[1]);
    if (!ci || !it || *ci < 0) throw ParseError(row, "bad chain/iteration");
    std::vector<double> s;
    for (std::size_t k = 0; k < names.size(); ++k) {
      const auto v = detail::parse_double(f[k + 2]);
      if (!v) throw ParseError(row, "bad value for " + names[k]);
      s.push_back(*v);
    }
    SavedDraw d;
    d.iteration = static_cast<std::size_t>(*it);
    d.params = from_scalars(variant, s);
    if (f[names.size() + 2] != "NA") {
      d.cace = detail::parse_double(f[names.size() + 2]);
      if (!d.cace) throw ParseError(row, "bad cace");
    }
    const auto nc = detail::parse_int(f[names.size() + 3]);
    if (!nc) throw ParseError(row, "bad n_c");
    d.n_c = static_cast<std::size_t>(*nc);
    if (chains.empty() || chains.back().chain_index != static_cast<std::size_t>(*ci)) {
      Chain c;
      c.chain_index = static_cast<std::size_t>(*ci);
      c.variant = variant;
      chains.push_back(std::move(c));
    }
    if (!d.cace) ++chains.back().undefined_cace;
    chains.back().draws.push_back(std::move(d));
  }
  return chains;
}

inline json to_json(const PosteriorSummary& s) {
  json j{{"n", s.n}, {"mean", s.mean}, {"sd", s.sd}, {"q2.5", s.q025}, {"q97.5", s.q975}};
  if (s.name == "cace") j["undefined"] = s.undefined;
  return j;
}

inline json to_json(const PsrfReport& r) {
  json entries = json::object();
  for (const auto& e : r.entries) {
    entries[e.name] = {{"psrf", std::isfinite(e.psrf) ? json(e.psrf) : json("Inf")}, {"exceeds", e.exceeds}};
  }
  return {{"threshold", r.threshold}, {"converged", r.converged()}, {"parameters", entries}};
}

inline std::string psrf_csv(const PsrfReport& r) {
  std::ostringstream os;
  os << "parameter,psrf,exceeds\n";
  for (const auto& e : r.entries) os << e.name << ',' << format_real(e.psrf) << ',' << (e.exceeds ? 1 : 0) << '\n';
  return os.str();
}

inline std::string grid_csv(const ComplierProbGrid& g) {
  std::ostringstream os;
  os << "x,mean,lo,hi\n";
  for (const auto& p : g.points)
    os << format_real(p.x) << ',' << format_real(p.mean) << ',' << format_real(p.lo) << ',' << format_real(p.hi)
       << '\n';
  return os.str();
}

inline std::string histogram_csv(const ShadedHistogram& h) {
  std::ostringstream os;
  os << "bin_lo,bin_hi,count,shading\n";
  for (const auto& b : h.bins)
    os << format_real(b.lo) << ',' << format_real(b.hi) << ',' << b.count << ',' << format_real(b.shading) << '\n';
  return os.str();
}

inline std::string mc_results_csv(const McResult& r) {
  std::ostringstream os;
  os << "corr_xy,variant,mean_cace,lo,hi,reps,ok,excludes_zero_rate,outcome_sd,partial\n";
  for (const auto& c : r.cells) {
    os << format_real(c.corr_xy) << ',' << to_string(c.variant) << ',' << format_real(c.mean_cace()) << ','
       << format_real(c.mean_lo()) << ',' << format_real(c.mean_hi()) << ',' << c.replicates.size() << ','
       << c.ok_count() << ',' << format_real(c.excludes_zero_rate()) << ',' << format_real(c.outcome_sd) << ','
       << (c.partial() ? 1 : 0) << '\n';
  }
  return os.str();
}

inline std::string mc_replicates_csv(const McResult& r) {
  std::ostringstream os;
  os << "corr_xy,variant,rep,dataset_seed,fit_seed,ok,mean,sd,lo,hi,sample_cace,error\n";
  for (const auto& c : r.cells)
    for (const auto& rr : c.replicates) {
      std::string err = rr.error;
      std::replace(err.begin(), err.end(), ',', ';');
      std::replace(err.begin(), err.end(), '\n', ' ');
      os << format_real(c.corr_xy) << ',' << to_string(c.variant) << ',' << rr.rep << ',' << rr.dataset_seed << ','
         << rr.fit_seed << ',' << (rr.ok ? 1 : 0) << ',' << format_real(rr.ok ? rr.mean : std::nan("")) << ','
         << format_real(rr.ok ? rr.sd : std::nan("")) << ',' << format_real(rr.ok ? rr.lo : std::nan("")) << ','
         << format_real(rr.ok ? rr.hi : std::nan("")) << ',' << format_real(rr.sample_cace) << ',' << err << '\n';
    }
  return os.str();
}

}  // namespace cace
