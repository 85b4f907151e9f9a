#include <gtest/gtest.h>

#include <sys/wait.h>

#include <filesystem>
#include <random>
#include <sstream>
#include <string>

#include "cace/cli.hpp"

namespace fs = std::filesystem;
using cace::json;
using cace::read_file;
using cace::write_file;

namespace {

class CliTest : public ::testing::Test {
protected:
  void SetUp() override {
    std::random_device rd;
    dir_ = fs::temp_directory_path() / ("cace_cli_" + std::to_string(rd()));
    fs::create_directories(dir_);
  }
  void TearDown() override {
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }

  fs::path p(const std::string& name) const { return dir_ / name; }

  /// Runs the executable; stderr goes to err.txt.
  int run(const std::string& args) {
    const std::string cmd = std::string("CACE_LOG_LEVEL=warn '") + CACE_CLI_PATH + "' " + args + " 2> '" +
                            p("err.txt").string() + "' > /dev/null";
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  }

  std::string err() const { return read_file(p("err.txt")); }

  void fixture() { ASSERT_EQ(run("fixture --out '" + p("fx.csv").string() + "'"), 0); }

  fs::path dir_;
};

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::vector<std::vector<std::string>> csv_rows(const std::string& s) {
  std::vector<std::vector<std::string>> out;
  std::istringstream in(s);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    out.push_back(f);
  }
  return out;
}

}  // namespace

TEST_F(CliTest, MissingConfigIsInputError) {
  fixture();
  EXPECT_EQ(run("fit --dataset '" + p("fx.csv").string() + "' --config '" + p("nope.json").string() + "' --out '" +
                p("o").string() + "'"),
            2);
  const json e = json::parse(err());
  EXPECT_EQ(e["error"]["code"], 2);
  EXPECT_EQ(e["error"]["type"], "IoError");
}

TEST_F(CliTest, BadConfigFieldIsReported) {
  fixture();
  write_file(p("c.json"), R"({"model":{"schedule":{"thin":0}}})");
  EXPECT_EQ(run("fit --dataset '" + p("fx.csv").string() + "' --config '" + p("c.json").string() + "' --out '" +
                p("o").string() + "'"),
            2);
  EXPECT_NE(err().find("model.schedule.thin"), std::string::npos);
}

TEST_F(CliTest, MalformedDatasetIsInputError) {
  write_file(p("bad.csv"), "id,z,d_obs,y_obs,x\n1,2,0,40,3\n");
  EXPECT_EQ(run("fit --dataset '" + p("bad.csv").string() + "' --out '" + p("o").string() + "'"), 2);
}

TEST_F(CliTest, UnknownSubcommandIsInputError) { EXPECT_EQ(run("frobnicate"), 2); }

TEST_F(CliTest, FitDiagnoseAndReplay) {
  fixture();
  const std::string ds = p("fx.csv").string();
  ASSERT_EQ(run("fit --dataset '" + ds + "' --variant D --out '" + p("f1").string() + "'"), 0) << err();
  ASSERT_EQ(run("fit --dataset '" + ds + "' --variant D --out '" + p("f2").string() + "'"), 0) << err();
  const std::string draws = read_file(p("f1/draws.csv"));
  EXPECT_EQ(lines(draws), 1501u);  // header + 3 chains x 500 saved draws
  EXPECT_EQ(draws, read_file(p("f2/draws.csv")));
  EXPECT_EQ(read_file(p("f1/summary.json")), read_file(p("f2/summary.json")));

  const json m = json::parse(read_file(p("f1/manifest.json")));
  EXPECT_EQ(m["seeds"]["model_seed"], 20111);
  EXPECT_EQ(m["inputs"]["dataset"]["sha256"], cace::sha256_hex(read_file(p("fx.csv"))));
  for (const auto& o : m["outputs"])
    EXPECT_EQ(o["sha256"], cace::sha256_hex(read_file(p("f1") / o["file"].get<std::string>())));

  ASSERT_EQ(run("diagnose --draws '" + p("f1/draws.csv").string() + "' --dataset '" + ds + "' --out '" +
                p("d").string() + "'"),
            0)
      << err();
  for (int z : {0, 1}) {
    const auto grid = csv_rows(read_file(p("d/complier_grid_z" + std::to_string(z) + ".csv")));
    EXPECT_EQ(grid.size(), 102u);
    const auto hist = csv_rows(read_file(p("d/shaded_hist_z" + std::to_string(z) + ".csv")));
    ASSERT_GE(hist.size(), 2u);
    for (std::size_t r = 1; r < hist.size(); ++r) {
      if (hist[r][3] == "NA") continue;
      const double s = std::stod(hist[r][3]);
      EXPECT_GE(s, 0.0);
      EXPECT_LE(s, 1.0);
    }
  }
  EXPECT_TRUE(fs::exists(p("d/psrf.csv")));

  EXPECT_EQ(run("replay --manifest '" + p("f1/manifest.json").string() + "' --out '" + p("r").string() + "'"), 0)
      << err();
  EXPECT_EQ(read_file(p("r/draws.csv")), draws);

  // A different dataset next to the fit's draws is a consistency error.
  std::string other = read_file(p("fx.csv"));
  other.back() == '\n' ? other.append("zz,0,0,40,12\n") : other.append("\nzz,0,0,40,12\n");
  write_file(p("other.csv"), other);
  EXPECT_EQ(run("diagnose --draws '" + p("f1/draws.csv").string() + "' --dataset '" + p("other.csv").string() +
                "' --out '" + p("d2").string() + "'"),
            4);
  EXPECT_EQ(json::parse(err())["error"]["type"], "DigestMismatchError");
}

TEST_F(CliTest, SimulateIsReproducible) {
  write_file(p("sim.json"), R"({
  "model": {"schedule": {"burn_in": 100, "kept": 200, "thin": 2}, "n_chains": 2},
  "simulation": {"reps": 1, "corr_grid": [0.3], "variants": ["B"], "dgp": {"n": 150}}
})");
  ASSERT_EQ(run("simulate --config '" + p("sim.json").string() + "' --out '" + p("s1").string() + "'"), 0) << err();
  ASSERT_EQ(run("simulate --config '" + p("sim.json").string() + "' --out '" + p("s2").string() + "'"), 0) << err();
  const std::string res = read_file(p("s1/mc_results.csv"));
  EXPECT_EQ(lines(res), 2u);
  EXPECT_EQ(res, read_file(p("s2/mc_results.csv")));
  EXPECT_EQ(read_file(p("s1/mc_replicates.csv")), read_file(p("s2/mc_replicates.csv")));
  EXPECT_EQ(run("replay --manifest '" + p("s1/manifest.json").string() + "' --out '" + p("s3").string() + "'"), 0)
      << err();

  EXPECT_EQ(run("simulate --config '" + p("sim.json").string() + "' --seed 6 --out '" + p("s4").string() + "'"), 0);
  EXPECT_NE(read_file(p("s4/mc_replicates.csv")), read_file(p("s1/mc_replicates.csv")));
}

TEST_F(CliTest, SimulateRejectsUnknownVariant) {
  write_file(p("sim.json"), R"({"simulation": {"variants": ["A", "E"]}})");
  EXPECT_EQ(run("simulate --config '" + p("sim.json").string() + "' --out '" + p("s").string() + "'"), 2);
  EXPECT_NE(err().find("simulation.variants[1]"), std::string::npos);
}

TEST(RunGuarded, MapsErrorsToCodes) {
  using namespace cace::cli;
  std::ostringstream sink;
  EXPECT_EQ(run_guarded([]() -> int { throw cace::ConfigError("model.seed", "bad"); }, sink), 2);
  EXPECT_EQ(run_guarded([]() -> int { throw PartialFailure("x"); }, sink), 3);
  EXPECT_EQ(run_guarded([]() -> int { throw cace::DigestMismatchError("x"); }, sink), 4);
  EXPECT_EQ(run_guarded([]() -> int { throw std::logic_error("x"); }, sink), 5);
  EXPECT_EQ(run_guarded([] { return 0; }, sink), 0);
  std::istringstream lines_in(sink.str());
  std::string first;
  std::getline(lines_in, first);
  EXPECT_EQ(json::parse(first)["error"]["message"], "model.seed: bad");
}
