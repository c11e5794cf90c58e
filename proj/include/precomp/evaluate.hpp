#pragma once

#include "precomp/core.hpp"
#include "precomp/geometry.hpp"
#include "precomp/linmodel.hpp"
#include "precomp/nnmodel.hpp"
#include "precomp/plant.hpp"
#include "precomp/stage1.hpp"
#include "precomp/stage2.hpp"
#include "precomp/trajectory.hpp"

#include <json.hpp>

#include <array>
#include <atomic>
#include <map>
#include <sstream>
#include <thread>
#include <vector>

namespace precomp {

/// Normalized L1 / L2 (rms) / Linf of the per-sample distances from the
/// output trajectory to the target geometry.
struct DeviationStats {
  double l1 = 0.0;
  double l2 = 0.0;
  double linf = 0.0;
  std::vector<double> samples;  // per-sample projection distances, meters
};

inline DeviationStats deviation_stats(const TargetGeometry& geom, const Trajectory& gamma) {
  if (gamma.empty()) throw Error("deviation_stats: empty trajectory");
  DeviationStats st;
  st.samples.reserve(gamma.size());
  double sum = 0.0, sum2 = 0.0;
  for (const auto& p : gamma.points) {
    const double d = geom.project(p).distance;
    st.samples.push_back(d);
    sum += d;
    sum2 += d * d;
    st.linf = std::max(st.linf, d);
  }
  const double m = static_cast<double>(gamma.size());
  st.l1 = sum / m;
  st.l2 = std::sqrt(sum2 / m);
  return st;
}

/// Constant progress-speed reference r(t) = Xi(t*S/T) on the uniform grid.
inline Trajectory baseline_reference(const TargetGeometry& geom, double total_time,
                                     double dt = kSampleDt) {
  if (!(total_time > 0.0)) throw Error("baseline_reference: T <= 0");
  const double S = geom.total_length();
  const std::vector<std::pair<double, double>> schedule{{0.0, 0.0}, {total_time, S}};
  return Trajectory::uniform(dt, sample_equal_time(geom, schedule, dt));
}

struct TradeoffRow {
  double a_max = 0.0;
  double total_time = 0.0;
  DeviationStats optimized;
  DeviationStats baseline;
  double impr_l1 = 0.0, impr_l2 = 0.0, impr_linf = 0.0;  // percent
  std::size_t baseline_limit_violations = 0;
  bool failed = false;
  std::string error;
};

struct PipelineModels {
  LtiModel linear;
  AxisPair nn;
};

/// stage1 -> stage2 -> plant for one acceleration level, paired against the
/// equal-time constant-speed baseline run with the same plant seed.
inline TradeoffRow tradeoff_cell(const TargetGeometry& geom, const PipelineModels& models,
                                 const PlantConfig& plant_cfg, Stage1Config cfg1,
                                 Stage2Config cfg2, double a_max) {
  TradeoffRow row;
  row.a_max = a_max;
  try {
    cfg1.a_max = a_max;
    cfg2.a_max = a_max;
    const Stage1Solution s1 = solve_stage1(geom, models.linear, cfg1);
    const ReferencePlan plan = schedule_to_reference(s1, geom);
    const Stage2Solution s2 = cfg2.mode == Stage2Config::Mode::Receding
                                  ? solve_stage2_rh(models.nn, plan, cfg2)
                                  : solve_stage2(models.nn, plan, cfg2);
    row.total_time = s1.total_time;

    const Trajectory gamma_opt = run(plant_cfg, s2.input, LimitSet::machine());
    const Trajectory base = baseline_reference(geom, s1.total_time);
    row.baseline_limit_violations = check_limits(base, LimitSet::machine()).size();
    const Trajectory gamma_base = run(plant_cfg, base, LimitSet::unbounded());
    row.optimized = deviation_stats(geom, gamma_opt);
    row.baseline = deviation_stats(geom, gamma_base);
    auto impr = [](double b, double o) { return 100.0 * (b - o) / b; };
    row.impr_l1 = impr(row.baseline.l1, row.optimized.l1);
    row.impr_l2 = impr(row.baseline.l2, row.optimized.l2);
    row.impr_linf = impr(row.baseline.linf, row.optimized.linf);
  } catch (const std::exception& e) {
    row.failed = true;
    row.error = e.what();
  }
  return row;
}

/// Sweep over acceleration levels; rows are computed concurrently and merged
/// in input order.
inline std::vector<TradeoffRow> tradeoff_sweep(const TargetGeometry& geom,
                                               const PipelineModels& models,
                                               const PlantConfig& plant_cfg,
                                               const Stage1Config& cfg1, const Stage2Config& cfg2,
                                               std::vector<double> a_list, int threads = 2) {
  std::sort(a_list.begin(), a_list.end());
  std::vector<TradeoffRow> rows(a_list.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= a_list.size()) return;
      rows[i] = tradeoff_cell(geom, models, plant_cfg, cfg1, cfg2, a_list[i]);
    }
  };
  std::vector<std::thread> pool;
  for (int i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  return rows;
}

inline std::string sweep_to_csv(const std::vector<TradeoffRow>& rows,
                                const std::string& header_comment = {}) {
  std::ostringstream out;
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "a_max,T_s,L1_opt,L2_opt,Linf_opt,L1_base,L2_base,Linf_base,"
         "impr_L1_pct,impr_L2_pct,impr_Linf_pct\n";
  for (const auto& r : rows) {
    if (r.failed) {
      out << io::format_double(r.a_max) << ",failed,,,,,,,,,\n";
      continue;
    }
    out << io::format_double(r.a_max) << ',' << io::format_double(r.total_time) << ','
        << io::format_double(r.optimized.l1) << ',' << io::format_double(r.optimized.l2) << ','
        << io::format_double(r.optimized.linf) << ',' << io::format_double(r.baseline.l1) << ','
        << io::format_double(r.baseline.l2) << ',' << io::format_double(r.baseline.linf) << ','
        << io::format_double(r.impr_l1) << ',' << io::format_double(r.impr_l2) << ','
        << io::format_double(r.impr_linf) << '\n';
  }
  return out.str();
}

struct HorizonRow {
  int horizon = 0;
  double total_time = 0.0;
  double t_norm = 0.0;
  double compute_norm = 0.0;  // deterministic work proxy, normalized
  long work = 0;
  double wall_s = 0.0;  // informational only, never written to artifacts
};

/// Stage-1 receding-horizon study: trajectory time and computation effort
/// as a function of the window length, normalized by the one-shot solve.
inline std::vector<HorizonRow> horizon_study(const TargetGeometry& geom, const LtiModel& model,
                                             Stage1Config cfg, std::vector<int> h_list) {
  const int n = cfg.n_points > 0 ? cfg.n_points : stage1_default_points(geom);
  bool has_oneshot = false;
  for (int h : h_list) has_oneshot |= (h >= n || h <= 0);
  if (!has_oneshot) h_list.push_back(n);
  std::sort(h_list.begin(), h_list.end());
  std::vector<HorizonRow> rows;
  HorizonRow oneshot;
  for (int h : h_list) {
    const auto t0 = std::chrono::steady_clock::now();
    Stage1Config c = cfg;
    c.horizon = (h >= n) ? 0 : h;
    const Stage1Solution sol = solve_stage1(geom, model, c);
    HorizonRow row;
    row.horizon = std::min(h, n);
    row.total_time = sol.total_time;
    row.work = sol.work;
    row.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(row);
    if (h >= n) oneshot = row;
  }
  for (auto& row : rows) {
    row.t_norm = row.total_time / oneshot.total_time;
    row.compute_norm = static_cast<double>(row.work) / static_cast<double>(oneshot.work);
  }
  return rows;
}

inline std::string horizon_to_csv(const std::vector<HorizonRow>& rows,
                                  const std::string& header_comment = {}) {
  std::ostringstream out;
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "H,T_s,T_norm,compute_norm\n";
  for (const auto& r : rows)
    out << r.horizon << ',' << io::format_double(r.total_time) << ','
        << io::format_double(r.t_norm) << ',' << io::format_double(r.compute_norm) << '\n';
  return out.str();
}

/// Prediction-error statistics of both models on labeled held-out sets:
/// mean/std per model, per axis, per acceleration level, plus the
/// error-vs-acceleration series of the nonlinear model.
struct ModelReport {
  struct Entry {
    std::string model;  // "linear" | "nonlinear"
    double a_max = 0.0;  // 0 = pooled over all sets
    double mean_x = 0, std_x = 0, mean_y = 0, std_y = 0;
  };
  std::vector<Entry> entries;
  ValidationStats nn_stats;
};

inline ModelReport model_report(const AxisPair& nn, const LtiModel& linear,
                                const std::vector<EvalPair>& sets) {
  ModelReport rep;
  rep.nn_stats = validate(nn, sets);

  std::map<double, std::array<std::vector<double>, 4>> bins;  // lin_ex, lin_ey, nn_ex, nn_ey
  for (const auto& set : sets) {
    const Trajectory lin_pred = simulate(linear, set.input, steady_state(linear, set.input.points.front()));
    const Trajectory nn_pred = predict_trajectory(nn, set.input);
    auto& b = bins[set.a_max_label];
    for (std::size_t i = 0; i < set.output.size(); ++i) {
      b[0].push_back(lin_pred.points[i].x() - set.output.points[i].x());
      b[1].push_back(lin_pred.points[i].y() - set.output.points[i].y());
      b[2].push_back(nn_pred.points[i].x() - set.output.points[i].x());
      b[3].push_back(nn_pred.points[i].y() - set.output.points[i].y());
    }
  }
  auto push = [&](const std::string& model, double a, const std::vector<double>& ex,
                  const std::vector<double>& ey) {
    ModelReport::Entry e;
    e.model = model;
    e.a_max = a;
    std::tie(e.mean_x, e.std_x) = detail::mean_std(ex);
    std::tie(e.mean_y, e.std_y) = detail::mean_std(ey);
    rep.entries.push_back(e);
  };
  std::array<std::vector<double>, 4> pooled;
  for (const auto& [a, b] : bins) {
    push("linear", a, b[0], b[1]);
    push("nonlinear", a, b[2], b[3]);
    for (int i = 0; i < 4; ++i) pooled[static_cast<std::size_t>(i)].insert(pooled[static_cast<std::size_t>(i)].end(), b[static_cast<std::size_t>(i)].begin(), b[static_cast<std::size_t>(i)].end());
  }
  push("linear", 0.0, pooled[0], pooled[1]);
  push("nonlinear", 0.0, pooled[2], pooled[3]);
  return rep;
}

inline nlohmann::ordered_json model_report_to_json(const ModelReport& rep) {
  nlohmann::ordered_json j;
  auto entries = nlohmann::json::array();
  for (const auto& e : rep.entries)
    entries.push_back({{"model", e.model},
                       {"a_max", e.a_max},
                       {"mean_x_m", e.mean_x},
                       {"std_x_m", e.std_x},
                       {"mean_y_m", e.mean_y},
                       {"std_y_m", e.std_y}});
  j["entries"] = std::move(entries);
  auto curve = nlohmann::json::array();
  for (const auto& b : rep.nn_stats.curve)
    curve.push_back({{"a_max", b.a_max}, {"std_x_m", b.std_x}, {"std_y_m", b.std_y},
                     {"samples", b.samples}});
  j["nn_error_vs_amax"] = std::move(curve);
  return j;
}

}  // namespace precomp
