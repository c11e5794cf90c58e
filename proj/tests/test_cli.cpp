// End-to-end CLI checks at smoke scale: the heavy pipeline runs live in the
// acceptance suite; here we exercise command wiring, exit codes, artifact
// formats, and byte-identical reruns.
#include "precomp/config.hpp"
#include "precomp/io.hpp"
#include "precomp/trajectory.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const fs::path kWs = fs::temp_directory_path() / "precomp_cli_ws";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PRECOMP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

void write_config() {
  const std::string cfg =
      "[paths]\nworkspace = " + (kWs / "runs").string() +
      "\n[plant]\nseed = 2\n[datagen]\nseed = 11\npoints_per_axis = 9000\n"
      "[train]\nepochs = 2\nbatch_size = 512\n"
      "[stage1]\nn_points = 48\ntolerance = 2e-4\na_max = 2\n";
  precomp::io::atomic_write(kWs / "smoke.cfg", cfg);
}

std::string slurp(const fs::path& p) { return precomp::io::read_file(p); }

}  // namespace

TEST_CASE("cli pipeline at smoke scale") {
  fs::remove_all(kWs);
  fs::create_directories(kWs);
  write_config();
  const std::string cfg = " --config " + (kWs / "smoke.cfg").string();

  SUBCASE("datagen, identify, and stubbed optimize run clean") {
    REQUIRE(run_cli("datagen" + cfg) == 0);
    CHECK(fs::exists(kWs / "runs/dataset_x.bin"));
    CHECK(fs::exists(kWs / "runs/dataset_y.bin"));
    CHECK(fs::exists(kWs / "runs/datagen_report.json"));

    REQUIRE(run_cli("identify" + cfg) == 0);
    CHECK(fs::exists(kWs / "runs/linmodel.json"));

    // Identity-stub optimize: end-to-end without a trained network.
    REQUIRE(run_cli("optimize --geometry fixture:line --stub-model identity --out optline" +
                    cfg) == 0);
    CHECK(fs::exists(kWs / "runs/optline_r.csv"));
    CHECK(fs::exists(kWs / "runs/optline_report.json"));
    const auto traj = precomp::load_trajectory_csv(kWs / "runs/optline_r.csv");
    CHECK(traj.size() > 100);

    // The deliverable can be run through the plant and evaluated.
    REQUIRE(run_cli("run-plant --input " + (kWs / "runs/optline_r.csv").string() +
                    " --output optline_gamma.csv" + cfg) == 0);
    REQUIRE(run_cli("evaluate --geometry fixture:line --trajectory " +
                    (kWs / "runs/optline_gamma.csv").string() + " --out optline" + cfg) == 0);
    CHECK(fs::exists(kWs / "runs/optline_stats.json"));
    CHECK(fs::exists(kWs / "runs/optline_deviation.csv"));
    const std::string dev = slurp(kWs / "runs/optline_deviation.csv");
    CHECK(dev.find("s_m,deviation_m") != std::string::npos);

    // Artifact verification passes, then catches tampering.
    REQUIRE(run_cli("verify" + cfg) == 0);
    precomp::io::atomic_write(kWs / "runs/optline_r.csv", "t_s,x_m,y_m\n0,0,0\n");
    CHECK(run_cli("verify" + cfg) == 5);
  }

  SUBCASE("datagen rerun with identical config and seeds is byte-identical") {
    REQUIRE(run_cli("datagen" + cfg) == 0);
    const std::string ds1 = slurp(kWs / "runs/dataset_x.bin");
    const std::string rep1 = slurp(kWs / "runs/datagen_report.json");
    const std::string tr1 = slurp(kWs / "runs/data/train_000_r.csv");
    REQUIRE(run_cli("datagen" + cfg) == 0);
    CHECK(slurp(kWs / "runs/dataset_x.bin") == ds1);
    CHECK(slurp(kWs / "runs/datagen_report.json") == rep1);
    CHECK(slurp(kWs / "runs/data/train_000_r.csv") == tr1);
  }

  SUBCASE("impossible tolerance exits with the infeasible code") {
    REQUIRE(run_cli("datagen" + cfg) == 0);
    REQUIRE(run_cli("identify" + cfg) == 0);
    // mu = 1 nm cannot be certified; expect exit code 2 and a slack report.
    const int rc = run_cli(
        "optimize --geometry fixture:line --stub-model identity --tol 1e-9 --out opttight" + cfg);
    CHECK(rc == 2);
    const auto j = nlohmann::json::parse(slurp(kWs / "runs/opttight_report.json"));
    CHECK(j.at("max_slack_m").get<double>() > 1e-8);
  }

  SUBCASE("missing inputs exit with the io code") {
    CHECK(run_cli("identify --config " + (kWs / "smoke.cfg").string()) == 5);
  }
}
