#pragma once

// Batch commands behind the `cace` executable. Each command reads its inputs,
// writes its outputs plus a manifest into an output directory, and returns a
// process exit status:
//   0 success, 2 input error, 3 partial failure, 4 consistency error, 5 internal.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "cace/data.hpp"
#include "cace/diagnostics.hpp"
#include "cace/gibbs.hpp"
#include "cace/io.hpp"
#include "cace/random.hpp"
#include "cace/simulation.hpp"

namespace cace::cli {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "1.0.0";

enum ExitCode : int { kOk = 0, kInputError = 2, kPartialFailure = 3, kConsistencyError = 4, kInternalError = 5 };

/// Raised by a command after writing its partial outputs.
class PartialFailure : public Error {
public:
  using Error::Error;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Output files written by one command, with digests for the manifest.
class OutputSet {
public:
  explicit OutputSet(fs::path dir) : dir_(std::move(dir)) {}

  void write(const std::string& name, const std::string& bytes) {
    write_file(dir_ / name, bytes);
    inventory_.push_back({{"file", name}, {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}});
  }

  const json& inventory() const noexcept { return inventory_; }
  const fs::path& dir() const noexcept { return dir_; }

private:
  fs::path dir_;
  json inventory_ = json::array();
};

inline void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw IoError("cannot create output directory '" + p.string() + "'");
}

inline json load_config_file(const std::optional<fs::path>& path) {
  if (!path) return json::object();
  if (!fs::exists(*path)) throw IoError("config file not found: '" + path->string() + "'");
  try {
    return json::parse(read_file(*path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path->string(), std::string("invalid JSON: ") + e.what());
  }
}

inline ModelConfig model_config_from_file_json(const json& root, const ModelConfig& base = ModelConfig{}) {
  if (!root.is_object()) throw ConfigError("<root>", "expected an object");
  for (auto it = root.begin(); it != root.end(); ++it)
    if (it.key() != "model" && it.key() != "simulation") throw ConfigError(it.key(), "unknown top-level field");
  return root.contains("model") ? model_config_from_json(root.at("model"), "model", base) : base;
}

// ---------------------------------------------------------------------------
// fit

struct FitOptions {
  fs::path dataset;
  std::optional<fs::path> config;
  fs::path out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> chains;
  std::optional<ModelVariant> variant;
  bool marginal_missing_y = false;
  std::optional<std::size_t> threads;
};

inline ModelConfig resolve_fit_config(const FitOptions& o) {
  ModelConfig c = model_config_from_file_json(load_config_file(o.config));
  if (o.seed) c.seed = *o.seed;
  if (o.chains) c.n_chains = *o.chains;
  if (o.variant) c.variant = *o.variant;
  if (o.marginal_missing_y) c.marginal_missing_y = true;
  if (o.threads) c.threads = *o.threads;
  c.validate();
  return c;
}

inline json summary_json(const ModelConfig& cfg, const ModelRun& run) {
  json j;
  j["variant"] = std::string(to_string(cfg.variant));
  j["chains_completed"] = run.chains.size();
  std::size_t draws = 0;
  for (const auto& c : run.chains) draws += c.draws.size();
  j["draws"] = draws;
  json params = json::object();
  for (const auto& s : summarize_posterior(run.chains)) {
    if (s.name == "cace") j["cace"] = to_json(s);
    else params[s.name] = to_json(s);
  }
  j["parameters"] = params;
  j["psrf"] = to_json(psrf_report(run.chains, cfg.psrf_threshold));
  json failures = json::array();
  for (const auto& f : run.failures) failures.push_back({{"chain", f.chain_index}, {"message", f.message}});
  j["failures"] = failures;
  return j;
}

/// Fits with an already-resolved configuration; shared by `fit` and `replay`.
inline int fit_with_config(const fs::path& dataset_path, const ModelConfig& cfg, const fs::path& out_dir,
                           const json& config_source) {
  const std::string started = utc_timestamp();
  const std::string bytes = read_file(dataset_path);
  const Dataset ds = ingest_dataset_string(bytes);
  spdlog::info("fit: {} records, variant {}, {} chains x ({} burn-in + {} kept, thin {})", ds.size(),
               to_string(cfg.variant), cfg.n_chains, cfg.schedule.burn_in, cfg.schedule.kept, cfg.schedule.thin);
  ensure_dir(out_dir);

  const ModelRun run = run_model(ds, cfg, [](const ProgressEvent& e) {
    spdlog::debug("chain {}: iteration {}/{} n_c={}", e.chain, e.iteration, e.total, e.n_c);
  });

  OutputSet outputs(out_dir);
  outputs.write("draws.csv", draws_csv(run.chains));
  if (!run.chains.empty()) outputs.write("summary.json", summary_json(cfg, run).dump(2) + "\n");

  json streams = json::array();
  for (std::size_t k = 0; k < cfg.n_chains; ++k) streams.push_back(k);
  json manifest;
  manifest["tool"] = "cace";
  manifest["version"] = kToolVersion;
  manifest["rng"] = kRngAlgorithm;
  manifest["command"] = "fit";
  manifest["inputs"] = {{"dataset", {{"path", fs::absolute(dataset_path).string()}, {"sha256", sha256_hex(bytes)}}},
                        {"config", config_source}};
  manifest["config"] = {{"model", to_json(cfg)}};
  manifest["seeds"] = {{"model_seed", cfg.seed}, {"chain_streams", streams}};
  manifest["started_at"] = started;
  manifest["finished_at"] = utc_timestamp();
  manifest["outputs"] = outputs.inventory();
  write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");

  if (!run.complete()) {
    std::string msg;
    for (const auto& f : run.failures) msg += (msg.empty() ? "" : "; ") + f.message;
    throw PartialFailure(msg);
  }
  return kOk;
}

inline int cmd_fit(const FitOptions& o) {
  const ModelConfig cfg = resolve_fit_config(o);
  json source = o.config ? json{{"path", fs::absolute(*o.config).string()},
                                {"sha256", sha256_hex(read_file(*o.config))}}
                         : json(nullptr);
  return fit_with_config(o.dataset, cfg, o.out, source);
}

// ---------------------------------------------------------------------------
// diagnose

struct DiagnoseOptions {
  fs::path draws;
  fs::path dataset;
  fs::path out;
  std::optional<int> z;  // both arms when empty
  std::optional<double> y_eval;
  std::size_t bins = 0;  // Sturges' rule when 0
  std::size_t grid_size = 101;
};

inline int cmd_diagnose(const DiagnoseOptions& o) {
  const fs::path manifest_path = o.draws.parent_path() / "manifest.json";
  if (!fs::exists(manifest_path)) throw IoError("no manifest.json next to '" + o.draws.string() + "'");
  const json manifest = json::parse(read_file(manifest_path));
  const std::string bytes = read_file(o.dataset);
  const std::string expected = manifest.at("inputs").at("dataset").at("sha256").get<std::string>();
  if (sha256_hex(bytes) != expected) {
    throw DigestMismatchError("dataset digest does not match the fit manifest (expected " + expected + ")");
  }
  const ModelVariant variant = parse_variant(manifest.at("config").at("model").at("variant").get<std::string>());
  const double threshold = manifest.at("config").at("model").value("psrf_threshold", 1.06);
  const Dataset ds = ingest_dataset_string(bytes);
  const std::vector<Chain> chains = read_draws_csv(read_file(o.draws), variant);
  const std::vector<ParameterState> draws = pooled_parameters(chains);
  ensure_dir(o.out);
  OutputSet outputs(o.out);

  const std::vector<double> grid = linear_grid(ds.x_min(), ds.x_max(), o.grid_size);
  const double y_grid = o.y_eval.value_or(ds.observed_outcome_mean());
  std::vector<std::string> errors;
  for (int z : {0, 1}) {
    if (o.z && *o.z != z) continue;
    const std::string sz = std::to_string(z);
    outputs.write("complier_grid_z" + sz + ".csv", grid_csv(complier_prob_grid(draws, z, y_grid, grid)));
    try {
      outputs.write("shaded_hist_z" + sz + ".csv", histogram_csv(shaded_histogram(draws, ds, z, o.bins, o.y_eval)));
    } catch (const EmptyPatternError& e) {
      spdlog::warn("arm z={}: {}", z, e.what());
      errors.push_back(e.what());
    }
  }
  outputs.write("psrf.csv", psrf_csv(psrf_report(chains, threshold)));

  json m;
  m["tool"] = "cace";
  m["version"] = kToolVersion;
  m["command"] = "diagnose";
  m["inputs"] = {{"draws", {{"path", fs::absolute(o.draws).string()}, {"sha256", sha256_hex(read_file(o.draws))}}},
                 {"dataset", {{"path", fs::absolute(o.dataset).string()}, {"sha256", sha256_hex(bytes)}}}};
  m["options"] = {{"z", o.z ? json(*o.z) : json(nullptr)},
                  {"y_eval", o.y_eval ? json(*o.y_eval) : json(nullptr)},
                  {"bins", o.bins},
                  {"grid_size", o.grid_size}};
  m["outputs"] = outputs.inventory();
  m["errors"] = errors;
  write_file(o.out / "diagnose_manifest.json", m.dump(2) + "\n");
  if (!errors.empty()) throw PartialFailure(errors.front());
  return kOk;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions {
  fs::path config;
  fs::path out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

inline int simulate_with_config(const McConfig& mc, const fs::path& out_dir, const json& config_source) {
  const std::string started = utc_timestamp();
  ensure_dir(out_dir);
  spdlog::info("simulate: {} corr values x {} variants x {} reps", mc.corr_grid.size(), mc.variants.size(), mc.reps);
  const McResult result = run_monte_carlo(mc);
  OutputSet outputs(out_dir);
  outputs.write("mc_results.csv", mc_results_csv(result));
  outputs.write("mc_replicates.csv", mc_replicates_csv(result));

  json seeds = json::array();
  for (const auto& c : result.cells)
    for (const auto& r : c.replicates)
      seeds.push_back({{"corr_xy", c.corr_xy},
                       {"variant", std::string(to_string(c.variant))},
                       {"rep", r.rep},
                       {"dataset_seed", r.dataset_seed},
                       {"fit_seed", r.fit_seed}});
  json manifest;
  manifest["tool"] = "cace";
  manifest["version"] = kToolVersion;
  manifest["rng"] = kRngAlgorithm;
  manifest["command"] = "simulate";
  manifest["inputs"] = {{"config", config_source}};
  manifest["config"] = {{"model", to_json(mc.model)}, {"simulation", to_json(mc)}};
  manifest["seeds"] = {{"master_seed", mc.master_seed}, {"replicates", seeds}};
  manifest["started_at"] = started;
  manifest["finished_at"] = utc_timestamp();
  manifest["outputs"] = outputs.inventory();
  write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");

  for (const auto& c : result.cells)
    if (c.partial()) throw PartialFailure("some replicates failed; see mc_replicates.csv");
  return kOk;
}

inline int cmd_simulate(const SimulateOptions& o) {
  const json root = load_config_file(o.config);
  const ModelConfig model = model_config_from_file_json(root, simulation_model_defaults());
  McConfig mc = mc_config_from_json(root.contains("simulation") ? root.at("simulation") : json::object(), model);
  if (o.seed) mc.master_seed = *o.seed;
  if (o.threads) mc.threads = *o.threads;
  json source{{"path", fs::absolute(o.config).string()}, {"sha256", sha256_hex(read_file(o.config))}};
  return simulate_with_config(mc, o.out, source);
}

// ---------------------------------------------------------------------------
// fixture, replay

inline int cmd_fixture(const fs::path& out_file, std::uint64_t seed) {
  std::ostringstream os;
  write_dataset(os, table1_fixture(seed));
  if (out_file.has_parent_path()) ensure_dir(out_file.parent_path());
  write_file(out_file, os.str());
  return kOk;
}

/// Reruns the command recorded in a manifest into `out_dir` and checks every listed digest.
inline int cmd_replay(const fs::path& manifest_path, const fs::path& out_dir) {
  const json m = json::parse(read_file(manifest_path));
  const std::string command = m.at("command").get<std::string>();
  int status = kOk;
  try {
    if (command == "fit") {
      const ModelConfig cfg = model_config_from_json(m.at("config").at("model"));
      const fs::path dataset = m.at("inputs").at("dataset").at("path").get<std::string>();
      if (sha256_hex(read_file(dataset)) != m.at("inputs").at("dataset").at("sha256").get<std::string>())
        throw DigestMismatchError("dataset '" + dataset.string() + "' changed since the recorded run");
      status = fit_with_config(dataset, cfg, out_dir, m.at("inputs").at("config"));
    } else if (command == "simulate") {
      const ModelConfig model = model_config_from_json(m.at("config").at("model"));
      const McConfig mc = mc_config_from_json(m.at("config").at("simulation"), model);
      status = simulate_with_config(mc, out_dir, m.at("inputs").at("config"));
    } else {
      throw ConfigError("command", "cannot replay '" + command + "'");
    }
  } catch (const PartialFailure&) {
    status = kPartialFailure;
  }
  for (const auto& entry : m.at("outputs")) {
    const std::string file = entry.at("file").get<std::string>();
    const std::string digest = sha256_hex(read_file(out_dir / file));
    if (digest != entry.at("sha256").get<std::string>())
      throw DigestMismatchError("replayed '" + file + "' differs from the recorded digest");
  }
  spdlog::info("replay: {} outputs reproduced", m.at("outputs").size());
  return status;
}

// ---------------------------------------------------------------------------
// Error mapping

/// Runs a command, mapping exceptions to exit codes and a one-line JSON error on `err`.
inline int run_guarded(const std::function<int()>& command, std::ostream& err = std::cerr) {
  auto report = [&](int code, const char* type, const std::string& message) {
    json e{{"error", {{"code", code}, {"type", type}, {"message", message}}}};
    err << e.dump() << std::endl;
    return code;
  };
  try {
    return command();
  } catch (const PartialFailure& e) {
    return report(kPartialFailure, "PartialFailure", e.what());
  } catch (const DigestMismatchError& e) {
    return report(kConsistencyError, "DigestMismatchError", e.what());
  } catch (const ConfigError& e) {
    return report(kInputError, "ConfigError", e.what());
  } catch (const ParseError& e) {
    return report(kInputError, "ParseError", e.what());
  } catch (const ValidationError& e) {
    return report(kInputError, "ValidationError", e.what());
  } catch (const EmptyArmError& e) {
    return report(kInputError, "EmptyArmError", e.what());
  } catch (const IoError& e) {
    return report(kInputError, "IoError", e.what());
  } catch (const nlohmann::json::exception& e) {
    return report(kInputError, "JsonError", e.what());
  } catch (const std::exception& e) {
    return report(kInternalError, "InternalError", e.what());
  }
}

}  // namespace cace::cli
