// cace: fit, diagnose and simulate the principal-stratification CACE model.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cace/cli.hpp"

namespace {

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("cace");
  logger->set_pattern("[%H:%M:%S] [%^%l%$] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* lvl = std::getenv("CACE_LOG_LEVEL")) spdlog::set_level(spdlog::level::from_str(lvl));
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  using namespace cace::cli;

  CLI::App app{"Bayesian complier average causal effect estimation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  FitOptions fit;
  std::string fit_variant;
  auto* fit_cmd = app.add_subcommand("fit", "run the Gibbs sampler on a dataset");
  fit_cmd->add_option("--dataset", fit.dataset, "CSV with columns id,z,d_obs,y_obs,x")->required();
  fit_cmd->add_option("--config", fit.config, "JSON configuration");
  fit_cmd->add_option("--out", fit.out, "output directory")->required();
  fit_cmd->add_option("--seed", fit.seed, "master seed");
  fit_cmd->add_option("--chains", fit.chains, "number of chains");
  fit_cmd->add_option("--variant", fit_variant, "model variant")
      ->check(CLI::IsMember({"A", "Astar", "A*", "B", "Cstar", "C*", "D"}));
  fit_cmd->add_flag("--marginal-missing-y", fit.marginal_missing_y,
                    "use stratum probabilities only for patients with missing outcomes");
  fit_cmd->add_option("--threads", fit.threads, "worker threads (0 = hardware)");

  DiagnoseOptions diag;
  auto* diag_cmd = app.add_subcommand("diagnose", "complier-probability grids, shaded histograms and PSRF");
  diag_cmd->add_option("--draws", diag.draws, "draws.csv written by fit")->required();
  diag_cmd->add_option("--dataset", diag.dataset, "dataset used for the fit")->required();
  diag_cmd->add_option("--out", diag.out, "output directory")->required();
  diag_cmd->add_option("--z", diag.z, "only this arm")->check(CLI::Range(0, 1));
  diag_cmd->add_option("--y-eval", diag.y_eval, "outcome value for the complier probabilities");
  diag_cmd->add_option("--bins", diag.bins, "histogram bins (0 = Sturges)");
  diag_cmd->add_option("--grid-size", diag.grid_size, "covariate grid points")->check(CLI::PositiveNumber);

  SimulateOptions sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo study over the covariate-outcome correlation");
  sim_cmd->add_option("--config", sim.config, "JSON configuration")->required();
  sim_cmd->add_option("--out", sim.out, "output directory")->required();
  sim_cmd->add_option("--seed", sim.seed, "master seed");
  sim_cmd->add_option("--threads", sim.threads, "worker threads (0 = hardware)");

  std::string fixture_out;
  std::uint64_t fixture_seed = 2011;
  auto* fix_cmd = app.add_subcommand("fixture", "write the 142-patient reference dataset");
  fix_cmd->add_option("--out", fixture_out, "CSV path")->required();
  fix_cmd->add_option("--seed", fixture_seed, "seed");

  std::string replay_manifest, replay_out;
  auto* replay_cmd = app.add_subcommand("replay", "rerun a recorded fit or simulation and verify its outputs");
  replay_cmd->add_option("--manifest", replay_manifest, "manifest.json from an earlier run")->required();
  replay_cmd->add_option("--out", replay_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInputError;
  }

  return run_guarded([&]() -> int {
    if (*fit_cmd) {
      if (!fit_variant.empty()) fit.variant = cace::parse_variant(fit_variant);
      return cmd_fit(fit);
    }
    if (*diag_cmd) return cmd_diagnose(diag);
    if (*sim_cmd) return cmd_simulate(sim);
    if (*fix_cmd) return cmd_fixture(fixture_out, fixture_seed);
    return cmd_replay(replay_manifest, replay_out);
  });
}
