// precomp command-line front end: data generation, identification, training,
// optimization, plant execution, evaluation, sweeps.

#include "precomp/config.hpp"
#include "precomp/datagen.hpp"
#include "precomp/evaluate.hpp"
#include "precomp/fixtures.hpp"
#include "precomp/geometry.hpp"
#include "precomp/linmodel.hpp"
#include "precomp/nnmodel.hpp"
#include "precomp/plant.hpp"
#include "precomp/stage1.hpp"
#include "precomp/stage2.hpp"
#include "precomp/trajectory.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using namespace precomp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInfeasible = 2;
constexpr int kExitLimit = 3;
constexpr int kExitNumerical = 4;
constexpr int kExitIo = 5;

struct Cli {
  std::string config_path;
  std::string seed_override;
  RunConfig cfg = RunConfig::defaults();

  void load() {
    if (!config_path.empty()) cfg = RunConfig::load(config_path);
  }
};

TargetGeometry resolve_geometry(const std::string& spec) {
  if (spec.rfind("fixture:", 0) == 0) return fixtures::by_name(spec.substr(8));
  if (fs::exists(spec)) return load_geometry_json(spec);
  return fixtures::by_name(spec);
}

nlohmann::ordered_json kkt_json(const KktResiduals& k) {
  return {{"stationarity", k.stationarity},
          {"feasibility", k.feasibility},
          {"complementarity", k.complementarity}};
}

std::string status_name(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::IterLimit: return "iter_limit";
    case SolveStatus::Infeasible: return "infeasible";
  }
  return "?";
}

nlohmann::ordered_json report_header(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["config_hash"] = cfg.hash();
  j["config"] = cfg.echo_json();
  return j;
}

// --- datagen -----------------------------------------------------------------

struct CorpusPlan {
  std::vector<Trajectory> inputs;
  std::vector<std::string> tags;
};

CorpusPlan plan_corpus(const RunConfig& cfg) {
  CorpusPlan plan;
  const long points = cfg.integer("datagen", "points_per_axis");
  const double random_fraction = cfg.num("datagen", "random_fraction");
  const double rand_dur = cfg.num("datagen", "random_duration_s");
  const auto levels = cfg.num_list("datagen", "train_amax_levels");
  const std::uint64_t seed0 = cfg.seed("datagen", "seed") * 1000000ull;

  long rand_budget = static_cast<long>(random_fraction * static_cast<double>(points));
  long idx = 0;
  while (rand_budget > 0) {
    const double dur = std::min(rand_dur, std::max(1.0, static_cast<double>(rand_budget) / kSampleRate));
    LimitSet lim = LimitSet::machine();
    lim.a_max = levels[static_cast<std::size_t>(idx) % levels.size()];
    Trajectory tr = random_trajectory(lim, dur, seed0 + static_cast<std::uint64_t>(idx));
    rand_budget -= static_cast<long>(tr.size());
    plan.tags.push_back("random_a" + std::to_string(lim.a_max));
    plan.inputs.push_back(std::move(tr));
    ++idx;
  }

  long reg_budget = points - static_cast<long>(random_fraction * static_cast<double>(points));
  // Deterministic catalog of regular shapes: circles and spirals at varied
  // speeds, polygons slow enough to clear the corner acceleration check.
  struct Reg { ShapeSpec spec; double speed; const char* tag; };
  std::vector<Reg> catalog;
  for (double radius : {0.03, 0.05, 0.08, 0.11})
    for (double a_c : {0.3, 0.8, 1.6, 2.6}) {
      ShapeSpec s;
      s.kind = ShapeSpec::Kind::Circle;
      s.radius = radius;
      catalog.push_back({s, std::sqrt(a_c * radius), "circle"});
    }
  for (int sides : {3, 4, 5, 6, 8})
    for (double speed : {0.02, 0.03, 0.045}) {
      ShapeSpec s;
      s.kind = ShapeSpec::Kind::Polygon;
      s.sides = sides;
      s.radius = 0.07;
      catalog.push_back({s, speed, "polygon"});
    }
  for (double b_scale : {0.04, 0.07})
    for (double speed : {0.05, 0.12, 0.2}) {
      ShapeSpec s;
      s.kind = ShapeSpec::Kind::Spiral;
      s.spiral_b = b_scale / (2.0 * std::numbers::pi);
      s.spiral_turns = 2.5;
      catalog.push_back({s, speed, "spiral"});
    }
  std::size_t ci = 0;
  while (reg_budget > 0 && ci < 10 * catalog.size()) {
    const Reg& reg = catalog[ci % catalog.size()];
    ++ci;
    Trajectory tr = regular_shape(reg.spec, reg.speed);
    if (tr.size() <= static_cast<std::size_t>(kWindow) + 1) continue;
    if (!check_limits(tr, LimitSet::machine()).empty()) continue;  // corner spikes
    reg_budget -= static_cast<long>(tr.size());
    plan.tags.push_back(reg.tag);
    plan.inputs.push_back(std::move(tr));
  }
  return plan;
}

int cmd_datagen(Cli& cli, long points_override) {
  RunConfig cfg = cli.cfg;
  if (!cli.seed_override.empty()) cfg.set("datagen", "seed", cli.seed_override);
  if (points_override > 0) cfg.set("datagen", "points_per_axis", std::to_string(points_override));
  ArtifactLog log(cfg.workspace(), cfg.hash());
  const PlantConfig plant_base = cfg.plant();

  const CorpusPlan plan = plan_corpus(cfg);
  std::vector<std::pair<Trajectory, Trajectory>> pairs;
  std::size_t total_points = 0, violations = 0;
  for (std::size_t i = 0; i < plan.inputs.size(); ++i) {
    const auto& r = plan.inputs[i];
    violations += check_limits(r, LimitSet::machine()).size();
    PlantConfig pc = plant_base;
    pc.seed = plant_base.seed * 1000000ull + i;
    Trajectory gamma = run(pc, r, LimitSet::machine());
    total_points += r.size();
    char name[64];
    std::snprintf(name, sizeof name, "data/train_%03zu", i);
    log.write(std::string(name) + "_r.csv", trajectory_to_csv(r, "config_hash=" + cfg.hash()));
    log.write(std::string(name) + "_g.csv",
              trajectory_to_csv(gamma, "config_hash=" + cfg.hash()));
    pairs.emplace_back(r, std::move(gamma));
  }

  std::size_t window_counts[2] = {0, 0};
  for (int axis = 0; axis < 2; ++axis) {
    const WindowDataset ds = build_dataset(pairs, axis);
    window_counts[axis] = ds.count();
    const fs::path rel = axis == 0 ? "dataset_x.bin" : "dataset_y.bin";
    save_dataset(cfg.workspace() / rel, ds);
    log.record_external(rel);
  }

  // Held-out labeled test set, used by validate/model reports. Skipped for
  // smoke-scale corpora.
  nlohmann::ordered_json test_index = nlohmann::json::array();
  if (cfg.integer("datagen", "points_per_axis") >= 50000) {
    const auto test_levels = cfg.num_list("datagen", "test_amax_levels");
    const long per_level = cfg.integer("datagen", "test_trajs_per_level");
    const double dur = cfg.num("datagen", "test_duration_s");
    const std::uint64_t test_seed0 = cfg.seed("datagen", "seed") * 1000000ull + 500000ull;
    std::size_t k = 0;
    for (double a : test_levels)
      for (long j = 0; j < per_level; ++j, ++k) {
        LimitSet lim = LimitSet::machine();
        lim.a_max = a;
        const Trajectory r = random_trajectory(lim, dur, test_seed0 + k);
        PlantConfig pc = plant_base;
        pc.seed = plant_base.seed * 1000000ull + 900000ull + k;
        const Trajectory gamma = run(pc, r, LimitSet::machine());
        char name[64];
        std::snprintf(name, sizeof name, "data/test_%03zu", k);
        log.write(std::string(name) + "_r.csv", trajectory_to_csv(r, "config_hash=" + cfg.hash()));
        log.write(std::string(name) + "_g.csv",
                  trajectory_to_csv(gamma, "config_hash=" + cfg.hash()));
        test_index.push_back({{"r", std::string(name) + "_r.csv"},
                              {"g", std::string(name) + "_g.csv"},
                              {"a_max", a}});
      }
  }
  nlohmann::ordered_json j = report_header(cfg);
  j["trajectories"] = plan.inputs.size();
  j["points_per_axis"] = total_points;
  j["windows_x"] = window_counts[0];
  j["windows_y"] = window_counts[1];
  j["limit_violations"] = violations;
  j["test_set"] = std::move(test_index);
  log.write("datagen_report.json", j.dump(2) + "\n");

  std::cout << "datagen: " << plan.inputs.size() << " trajectories, " << total_points
            << " points/axis, windows x=" << window_counts[0] << " y=" << window_counts[1]
            << ", limit violations: " << violations << "\n";
  if (violations > 0) throw LimitError("datagen: corpus violates machine limits");
  return kExitOk;
}

std::vector<std::pair<Trajectory, Trajectory>> load_train_pairs(const RunConfig& cfg) {
  std::vector<std::pair<Trajectory, Trajectory>> pairs;
  for (std::size_t i = 0;; ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "data/train_%03zu", i);
    const fs::path r = cfg.workspace() / (std::string(name) + "_r.csv");
    const fs::path g = cfg.workspace() / (std::string(name) + "_g.csv");
    if (!fs::exists(r) || !fs::exists(g)) break;
    pairs.emplace_back(load_trajectory_csv(r), load_trajectory_csv(g));
  }
  if (pairs.empty()) throw IoError("no training pairs found; run datagen first");
  return pairs;
}

std::vector<EvalPair> load_test_pairs(const RunConfig& cfg) {
  const auto j = nlohmann::json::parse(io::read_file(cfg.workspace() / "datagen_report.json"));
  std::vector<EvalPair> sets;
  for (const auto& e : j.at("test_set")) {
    EvalPair p;
    p.input = load_trajectory_csv(cfg.workspace() / e.at("r").get<std::string>());
    p.output = load_trajectory_csv(cfg.workspace() / e.at("g").get<std::string>());
    p.a_max_label = e.at("a_max").get<double>();
    sets.push_back(std::move(p));
  }
  if (sets.empty()) throw IoError("no test pairs recorded in datagen_report.json");
  return sets;
}

int cmd_identify(Cli& cli) {
  RunConfig cfg = cli.cfg;
  ArtifactLog log(cfg.workspace(), cfg.hash());
  const auto pairs = load_train_pairs(cfg);
  const LtiModel model = identify(pairs);
  log.write("linmodel.json", lti_to_json(model));
  nlohmann::ordered_json j = report_header(cfg);
  const Eigen::Vector4cd eig = model.A.eigenvalues();
  auto poles = nlohmann::json::array();
  for (int i = 0; i < 4; ++i) poles.push_back({eig(i).real(), eig(i).imag()});
  j["poles"] = std::move(poles);
  double rmse = 0.0;
  std::size_t n = 0;
  for (const auto& [r, g] : pairs) {
    const Trajectory sim = simulate(model, r, steady_state(model, r.points.front()));
    for (std::size_t i = 200; i < sim.size(); ++i) {
      rmse += (sim.points[i] - g.points[i]).squaredNorm();
      n += 2;
    }
  }
  j["sim_rmse_m"] = std::sqrt(rmse / static_cast<double>(n));
  log.write("identify_report.json", j.dump(2) + "\n");
  std::cout << "identify: sim rmse " << j["sim_rmse_m"].get<double>() << " m\n";
  return kExitOk;
}

int cmd_train(Cli& cli) {
  RunConfig cfg = cli.cfg;
  if (!cli.seed_override.empty()) cfg.set("train", "seed", cli.seed_override);
  ArtifactLog log(cfg.workspace(), cfg.hash());
  const TrainConfig tc = cfg.train();

  AxisPair pair;
  TrainReport reports[2];
  std::exception_ptr errs[2] = {nullptr, nullptr};
  auto train_axis = [&](int axis) {
    try {
      const WindowDataset ds =
          load_dataset(cfg.workspace() / (axis == 0 ? "dataset_x.bin" : "dataset_y.bin"));
      TrainConfig t = tc;
      t.seed = tc.seed + static_cast<std::uint64_t>(axis);
      (axis == 0 ? pair.x : pair.y) = train(ds, t, &reports[axis]);
    } catch (...) {
      errs[axis] = std::current_exception();
    }
  };
  std::thread ty(train_axis, 1);
  train_axis(0);
  ty.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);

  save_axis_pair(cfg.workspace() / "nnmodel.bin", pair);
  log.record_external("nnmodel.bin");
  nlohmann::ordered_json j = report_header(cfg);
  for (int axis = 0; axis < 2; ++axis) {
    nlohmann::ordered_json a;
    a["train_mse"] = reports[axis].train_mse;
    a["heldout_mse"] = reports[axis].heldout_mse;
    a["best_epoch"] = reports[axis].best_epoch;
    j[axis == 0 ? "x" : "y"] = std::move(a);
  }
  log.write("train_report.json", j.dump(2) + "\n");
  std::cout << "train: best heldout mse x="
            << reports[0].heldout_mse[static_cast<std::size_t>(reports[0].best_epoch)]
            << " y=" << reports[1].heldout_mse[static_cast<std::size_t>(reports[1].best_epoch)]
            << " (scaled)\n";
  return kExitOk;
}

int cmd_validate(Cli& cli) {
  RunConfig cfg = cli.cfg;
  ArtifactLog log(cfg.workspace(), cfg.hash());
  const AxisPair pair = load_axis_pair(cfg.workspace() / "nnmodel.bin");
  const LtiModel lin = load_lti_json(cfg.workspace() / "linmodel.json");
  const auto sets = load_test_pairs(cfg);
  const ModelReport rep = model_report(pair, lin, sets);
  nlohmann::ordered_json j = report_header(cfg);
  j.update(model_report_to_json(rep));
  log.write("model_report.json", j.dump(2) + "\n");
  std::ostringstream curve;
  curve << "# config_hash=" << cfg.hash() << "\na_max,std_x_m,std_y_m\n";
  for (const auto& b : rep.nn_stats.curve)
    curve << io::format_double(b.a_max) << ',' << io::format_double(b.std_x) << ','
          << io::format_double(b.std_y) << '\n';
  log.write("nn_error_vs_amax.csv", curve.str());
  for (const auto& e : rep.entries)
    if (e.a_max == 0.0)
      std::cout << "validate: " << e.model << " std x=" << e.std_x << " y=" << e.std_y << " m\n";
  return kExitOk;
}

int cmd_optimize(Cli& cli, const std::string& geometry, double amax, double tol, long n_points,
                 long horizon2, const std::string& mode, const std::string& stub,
                 const std::string& out_prefix) {
  RunConfig cfg = cli.cfg;
  if (amax > 0) cfg.set("stage1", "a_max", io::format_double(amax));
  if (tol > 0) cfg.set("stage1", "tolerance", io::format_double(tol));
  if (n_points > 0) cfg.set("stage1", "n_points", std::to_string(n_points));
  if (horizon2 > 0) cfg.set("stage2", "horizon2", std::to_string(horizon2));
  if (!mode.empty()) cfg.set("stage2", "mode", mode);
  ArtifactLog log(cfg.workspace(), cfg.hash());

  const TargetGeometry geom = resolve_geometry(geometry);
  const double S = geom.total_length();
  const LtiModel lin = load_lti_json(cfg.workspace() / "linmodel.json");
  AxisPair pair;
  if (stub == "identity") {
    pair.x = MlpModel::identity_stub();
    pair.y = MlpModel::identity_stub();
  } else {
    pair = load_axis_pair(cfg.workspace() / "nnmodel.bin");
  }

  const Stage1Config cfg1 = cfg.stage1(S);
  const Stage2Config cfg2 = cfg.stage2(S);
  const std::string prefix = out_prefix.empty() ? "opt" : out_prefix;

  const Stage1Solution s1 = solve_stage1(geom, lin, cfg1);
  log.write(prefix + "_stage1.json", stage1_to_json(s1));
  const ReferencePlan plan = schedule_to_reference(s1, geom);
  const Stage2Solution s2 = cfg2.mode == Stage2Config::Mode::Receding
                                ? solve_stage2_rh(pair, plan, cfg2)
                                : solve_stage2(pair, plan, cfg2);

  log.write(prefix + "_r.csv", trajectory_to_csv(s2.input, "config_hash=" + cfg.hash()));
  const auto violations = check_limits(s2.input, LimitSet::machine());

  nlohmann::ordered_json j = report_header(cfg);
  j["geometry"] = geometry;
  j["T_s"] = s1.total_time;
  j["M"] = s2.input.size();
  j["objective_m2"] = s2.objective;
  j["deviation_sq_m2"] = s2.deviation_sq;
  j["max_slack_m"] = s2.max_slack;
  j["kkt_stage1"] = kkt_json(s1.kkt);
  j["kkt_stage2"] = kkt_json(s2.kkt);
  j["status_stage1"] = status_name(s1.status);
  j["status_stage2"] = status_name(s2.status);
  j["stage1_reference"] = prefix + "_stage1.json";
  j["limit_violations"] = violations.size();
  log.write(prefix + "_report.json", j.dump(2) + "\n");

  std::cout << "optimize: T=" << s1.total_time << " s, M=" << s2.input.size()
            << ", max_slack=" << s2.max_slack << " m, stage1 " << status_name(s1.status)
            << ", stage2 " << status_name(s2.status) << "\n";
  if (!violations.empty()) return kExitLimit;
  if (s1.status == SolveStatus::Infeasible || s2.status == SolveStatus::Infeasible ||
      s2.max_slack > 1e-8)
    return kExitInfeasible;
  if (s1.status != SolveStatus::Converged || s2.status != SolveStatus::Converged)
    return kExitNumerical;
  return kExitOk;
}

int cmd_run_plant(Cli& cli, const std::string& input, const std::string& output, bool unbounded) {
  RunConfig cfg = cli.cfg;
  if (!cli.seed_override.empty()) cfg.set("plant", "seed", cli.seed_override);
  ArtifactLog log(cfg.workspace(), cfg.hash());
  const Trajectory r = load_trajectory_csv(input);
  const Trajectory gamma =
      run(cfg.plant(), r, unbounded ? LimitSet::unbounded() : LimitSet::machine());
  const fs::path out = output.empty() ? "plant_output.csv" : output;
  log.write(out, trajectory_to_csv(gamma, "config_hash=" + cfg.hash()));
  std::cout << "run-plant: " << gamma.size() << " samples -> " << (cfg.workspace() / out) << "\n";
  return kExitOk;
}

int cmd_evaluate(Cli& cli, const std::string& geometry, const std::string& trajectory,
                 const std::string& out_prefix) {
  RunConfig cfg = cli.cfg;
  ArtifactLog log(cfg.workspace(), cfg.hash());
  const TargetGeometry geom = resolve_geometry(geometry);
  const Trajectory gamma = load_trajectory_csv(trajectory);
  const DeviationStats st = deviation_stats(geom, gamma);
  const std::string prefix = out_prefix.empty() ? "eval" : out_prefix;
  const auto profile = deviation_profile(geom, gamma, 512);
  log.write(prefix + "_deviation.csv",
            deviation_profile_to_csv(geom, profile, "config_hash=" + cfg.hash()));
  nlohmann::ordered_json j = report_header(cfg);
  j["L1_m"] = st.l1;
  j["L2_m"] = st.l2;
  j["Linf_m"] = st.linf;
  j["samples"] = gamma.size();
  log.write(prefix + "_stats.json", j.dump(2) + "\n");
  std::cout << "evaluate: L1=" << st.l1 << " L2=" << st.l2 << " Linf=" << st.linf << " m\n";
  return kExitOk;
}

int cmd_sweep(Cli& cli, const std::string& geometry, const std::string& amax_list, int threads) {
  RunConfig cfg = cli.cfg;
  ArtifactLog log(cfg.workspace(), cfg.hash());
  const TargetGeometry geom = resolve_geometry(geometry);
  PipelineModels models{load_lti_json(cfg.workspace() / "linmodel.json"),
                        load_axis_pair(cfg.workspace() / "nnmodel.bin")};
  std::vector<double> a_list;
  {
    std::istringstream ss(amax_list);
    std::string item;
    while (std::getline(ss, item, ',')) a_list.push_back(std::stod(item));
  }
  const auto rows = tradeoff_sweep(geom, models, cfg.plant(), cfg.stage1(geom.total_length()),
                                   cfg.stage2(geom.total_length()), a_list, threads);
  log.write("sweep.csv", sweep_to_csv(rows, "config_hash=" + cfg.hash()));
  for (const auto& r : rows)
    std::cout << "sweep a_max=" << r.a_max
              << (r.failed ? " FAILED: " + r.error
                           : " T=" + std::to_string(r.total_time) +
                                 " impr_L2=" + std::to_string(r.impr_l2) + "%")
              << "\n";
  return kExitOk;
}

int cmd_horizon(Cli& cli, const std::string& geometry, const std::string& h_list_str) {
  RunConfig cfg = cli.cfg;
  ArtifactLog log(cfg.workspace(), cfg.hash());
  const TargetGeometry geom = resolve_geometry(geometry);
  const LtiModel lin = load_lti_json(cfg.workspace() / "linmodel.json");
  std::vector<int> h_list;
  {
    std::istringstream ss(h_list_str);
    std::string item;
    while (std::getline(ss, item, ',')) h_list.push_back(std::stoi(item));
  }
  const auto rows = horizon_study(geom, lin, cfg.stage1(geom.total_length()), h_list);
  log.write("horizon.csv", horizon_to_csv(rows, "config_hash=" + cfg.hash()));
  for (const auto& r : rows) {
    std::cout << "horizon H=" << r.horizon << " T_norm=" << r.t_norm
              << " compute_norm=" << r.compute_norm << "\n";
    std::cerr << "  (wall " << r.wall_s << " s)\n";
  }
  return kExitOk;
}

int cmd_verify(Cli& cli) {
  RunConfig cfg = cli.cfg;
  ArtifactLog log(cfg.workspace(), cfg.hash());
  const auto res = log.verify();
  std::cout << "verify: " << res.ok.size() << " ok, " << res.changed.size() << " changed, "
            << res.missing.size() << " missing\n";
  for (const auto& f : res.changed) std::cout << "  changed: " << f << "\n";
  for (const auto& f : res.missing) std::cout << "  missing: " << f << "\n";
  return (res.changed.empty() && res.missing.empty()) ? kExitOk : kExitIo;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data-driven input-trajectory pre-compensation for precision motion stages"};
  app.require_subcommand(1);
  Cli cli;
  app.add_option("--config", cli.config_path, "Run configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", cli.seed_override, "Override the command's primary seed");

  long points_override = 0;
  auto* c_datagen = app.add_subcommand("datagen", "Generate excitation corpus and datasets");
  c_datagen->add_option("--points", points_override, "Override points per axis");

  auto* c_identify = app.add_subcommand("identify", "Fit the linear model");
  auto* c_train = app.add_subcommand("train", "Train the per-axis neural models");
  auto* c_validate = app.add_subcommand("validate", "Model statistics on the held-out test set");

  std::string geometry, mode, stub, out_prefix, input, output, trajectory, amax_list = "0.5,1,2,3",
                                                                           h_list = "8,16,32,64";
  double amax = 0, tol = 0;
  long n_points = 0, horizon2 = 0;
  bool unbounded = false;
  int threads = 2;

  auto* c_optimize = app.add_subcommand("optimize", "Two-stage input trajectory optimization");
  c_optimize->add_option("--geometry", geometry, "Geometry JSON or fixture name")->required();
  c_optimize->add_option("--amax", amax, "Acceleration limit (m/s^2)");
  c_optimize->add_option("--tol", tol, "Tolerance tube (m)");
  c_optimize->add_option("--N", n_points, "Stage-1 spatial points");
  c_optimize->add_option("--horizon2", horizon2, "Stage-2 receding horizon");
  c_optimize->add_option("--mode", mode, "oneshot | receding");
  c_optimize->add_option("--stub-model", stub, "identity: bypass the NN with the identity map");
  c_optimize->add_option("--out", out_prefix, "Artifact name prefix");

  auto* c_plant = app.add_subcommand("run-plant", "Run the synthetic plant on a trajectory");
  c_plant->add_option("--input", input, "Input trajectory CSV")->required();
  c_plant->add_option("--output", output, "Output CSV (relative to workspace)");
  c_plant->add_flag("--unbounded", unbounded, "Skip machine limit checks");

  auto* c_eval = app.add_subcommand("evaluate", "Deviation statistics of a trajectory");
  c_eval->add_option("--geometry", geometry, "Geometry JSON or fixture name")->required();
  c_eval->add_option("--trajectory", trajectory, "Trajectory CSV")->required();
  c_eval->add_option("--out", out_prefix, "Artifact name prefix");

  auto* c_sweep = app.add_subcommand("sweep", "Precision-speed trade-off sweep");
  c_sweep->add_option("--geometry", geometry, "Geometry JSON or fixture name")->required();
  c_sweep->add_option("--amax-list", amax_list, "Comma-separated a_max values");
  c_sweep->add_option("--threads", threads, "Concurrent rows");

  auto* c_horizon = app.add_subcommand("horizon-study", "Stage-1 receding-horizon study");
  c_horizon->add_option("--geometry", geometry, "Geometry JSON or fixture name")->required();
  c_horizon->add_option("--H-list", h_list, "Comma-separated horizon lengths");

  auto* c_verify = app.add_subcommand("verify", "Re-check artifact hashes in the workspace");

  CLI11_PARSE(app, argc, argv);

  try {
    cli.load();
    if (c_datagen->parsed()) return cmd_datagen(cli, points_override);
    if (c_identify->parsed()) return cmd_identify(cli);
    if (c_train->parsed()) return cmd_train(cli);
    if (c_validate->parsed()) return cmd_validate(cli);
    if (c_optimize->parsed())
      return cmd_optimize(cli, geometry, amax, tol, n_points, horizon2, mode, stub, out_prefix);
    if (c_plant->parsed()) return cmd_run_plant(cli, input, output, unbounded);
    if (c_eval->parsed()) return cmd_evaluate(cli, geometry, trajectory, out_prefix);
    if (c_sweep->parsed()) return cmd_sweep(cli, geometry, amax_list, threads);
    if (c_horizon->parsed()) return cmd_horizon(cli, geometry, h_list);
    if (c_verify->parsed()) return cmd_verify(cli);
  } catch (const LimitError& e) {
    std::cerr << "limit violation: " << e.what() << "\n";
    return kExitLimit;
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}
