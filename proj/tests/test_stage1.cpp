#include "precomp/fixtures.hpp"
#include "precomp/stage1.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace precomp;
using Vec = Eigen::VectorXd;

namespace {

// A gentle, exactly-known closed-loop model (the linear plant shape) so
// stage-1 behavior is independent of the identification pipeline.
LtiModel nominal_model() {
  LtiModel m;
  const double omega = 2.0 * std::numbers::pi * 12.0, zeta = 0.8;
  const double w2 = omega * omega;
  m.A << 0, 1, 0, 0, -w2, -2 * zeta * omega, 0, 0, 0, 0, 0, 1, 0, 0, -w2, -2 * zeta * omega;
  m.B << 0, 0, w2, 0, 0, 0, 0, w2;
  m.C << 1, 0, 0, 0, 0, 0, 1, 0;
  m.D.setZero();
  return m;
}

Stage1Config quick_config(double a_max, double mu, double S, int n) {
  Stage1Config cfg;
  cfg.n_points = n;
  cfg.a_max = a_max;
  cfg.mu = ToleranceProfile::constant(mu, S);
  return cfg;
}

stage1_detail::Transcription test_transcription(const TargetGeometry& geom, int n) {
  const LtiModel model = nominal_model();
  Stage1Config cfg = quick_config(1.0, 2e-4, geom.total_length(), n);
  auto tr = stage1_detail::make_transcription(geom, model, cfg, n,
                                              cfg.mu, 0, n);
  tr.pin_start_state = true;
  tr.z_start = steady_state(model, tr.xi.front());
  tr.pin_end_state = true;
  tr.z_end = steady_state(model, tr.xi.back());
  return tr;
}

}  // namespace

TEST_CASE("decision vector dimension audit") {
  const auto geom = fixtures::circle(0.05, 256);
  for (int n : {16, 33, 100}) {
    const auto tr = test_transcription(geom, n);
    CHECK(tr.dim() == (n - 1) + 2 * n + 2 * n + 4 * n + 2 * n);
    const NlpProblem p = tr.problem();
    CHECK(p.n == tr.dim());
    CHECK(p.m_eq == 4 * (n - 1) + 2 * n + 2 * n + n + 8);
  }
}

TEST_CASE("hand-built constant-speed point satisfies the model equalities") {
  const auto line = fixtures::line_segment(0.08);
  const int n = 24;
  auto tr = test_transcription(line, n);
  const Vec x = stage1_detail::initial_point(tr);
  const Vec c = tr.eval_eq(x);
  // Dynamics, output, and frame equalities hold by construction (z comes
  // from forward simulation); the tangential-zero rows carry the lag.
  const int dyn_out_frame = 4 * (n - 1) + 2 * n + 2 * n;
  for (int i = 0; i < dyn_out_frame; ++i) CHECK(std::abs(c[i]) < 1e-8);
  CHECK(std::abs(c[dyn_out_frame + n - 1]) < 0.1);  // nu_1 rows carry the finite lag
}

TEST_CASE("objective gradient matches finite differences") {
  const auto geom = fixtures::circle(0.04, 128);
  const int n = 12;
  auto tr = test_transcription(geom, n);
  Vec x = stage1_detail::initial_point(tr);
  // Perturb away from symmetric points.
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1e-3);
  for (int i = 0; i < x.size(); ++i) x[i] += g(rng) * (i < tr.off_r() ? 0.01 : 1.0);
  Vec grad(x.size());
  tr.objective(x, &grad);
  auto f = [&](const Vec& v) { return tr.objective(v, nullptr); };
  std::mt19937_64 pick_rng(5);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(x.size()) - 1);
  for (int trial = 0; trial < 80; ++trial) {
    const int i = pick(pick_rng);
    const double h = std::max(1e-7, 1e-6 * std::abs(x[i]));
    const double fd = oracles::central_diff(f, x, i, h);
    if (std::abs(fd) < 1e-9 && std::abs(grad[i]) < 1e-9) continue;
    CHECK(std::abs(grad[i] - fd) / std::max(1.0, std::abs(fd)) < 1e-6);
  }
}

TEST_CASE("constraint vector-Jacobian products match finite differences") {
  const auto geom = fixtures::circle(0.04, 128);
  const int n = 10;
  for (bool with_prefix : {false, true}) {
    auto tr = test_transcription(geom, n);
    if (with_prefix) {
      tr.has_prefix = true;
      tr.pin_seam = true;
      tr.seam_r = tr.xi.front();
      tr.seam_gamma = tr.xi.front();
      tr.seam_nu = Vec2::Zero();
      tr.prev_r = tr.xi.front() + Vec2(1e-4, 0);
      tr.prev_gamma = tr.xi.front() + Vec2(1e-4, 0);
      tr.prev_dtau = 3e-3;
    }
    Vec x = stage1_detail::initial_point(tr);
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g(0.0, 1e-3);
    for (int i = 0; i < x.size(); ++i) x[i] += g(rng) * (i < tr.off_r() ? 0.01 : 1.0);

    std::mt19937_64 wrng(13);
    std::normal_distribution<double> wg;
    for (bool eq : {true, false}) {
      const int m = eq ? tr.m_eq() : tr.m_in();
      Vec w(m);
      for (int i = 0; i < m; ++i) w[i] = wg(wrng);
      const Vec vjp = eq ? tr.vjp_eq(x, w) : tr.vjp_in(x, w);
      auto wc = [&](const Vec& v) {
        return eq ? w.dot(tr.eval_eq(v)) : w.dot(tr.eval_in(v));
      };
      std::uniform_int_distribution<int> pick(0, static_cast<int>(x.size()) - 1);
      for (int trial = 0; trial < 60; ++trial) {
        const int i = pick(wrng);
        const double h = std::max(1e-7, 1e-6 * std::abs(x[i]));
        const double fd = oracles::central_diff(wc, x, i, h);
        if (std::abs(fd) < 1e-7 && std::abs(vjp[i]) < 1e-7) continue;
        CHECK(std::abs(vjp[i] - fd) / std::max(1.0, std::abs(fd)) < 1e-5);
      }
    }
  }
}

TEST_CASE("reduced transcription gradients match finite differences") {
  const auto geom = fixtures::circle(0.04, 128);
  const int n = 12;
  for (bool with_prefix : {false, true}) {
    auto full = test_transcription(geom, n);
    if (with_prefix) {
      full.pin_seam = true;
      full.has_prefix = true;
      full.seam_r = full.xi.front();
      full.prev_r = full.xi.front() + Vec2(1e-4, 0);
      full.prev_gamma = full.xi.front() + Vec2(1e-4, 0);
      full.prev_dtau = 3e-3;
      full.pin_end_state = false;
    }
    auto rd = stage1_detail::ReducedTranscription::from(full);
    Vec x = rd.initial_point();
    std::mt19937_64 rng(21);
    std::normal_distribution<double> g(0.0, 1e-3);
    for (int i = 0; i < x.size(); ++i) x[i] += g(rng) * (i < rd.off_r() ? 0.01 : 1.0);

    Vec grad(x.size());
    rd.objective(x, &grad);
    auto f = [&](const Vec& v) { return rd.objective(v, nullptr); };
    std::uniform_int_distribution<int> pick(0, static_cast<int>(x.size()) - 1);
    for (int trial = 0; trial < 40; ++trial) {
      const int i = pick(rng);
      const double fd = oracles::central_diff(f, x, i, 1e-7);
      if (std::abs(fd) < 1e-9 && std::abs(grad[i]) < 1e-9) continue;
      CHECK(std::abs(grad[i] - fd) / std::max(1.0, std::abs(fd)) < 1e-5);
    }
    std::normal_distribution<double> wg;
    for (bool eq : {true, false}) {
      const int m = eq ? rd.m_eq() : rd.m_in();
      Vec w(m);
      for (int i = 0; i < m; ++i) w[i] = wg(rng);
      const Vec vjp = eq ? rd.vjp_eq(x, w) : rd.vjp_in(x, w);
      auto wc = [&](const Vec& v) { return eq ? w.dot(rd.eval_eq(v)) : w.dot(rd.eval_in(v)); };
      for (int trial = 0; trial < 40; ++trial) {
        const int i = pick(rng);
        const double fd = oracles::central_diff(wc, x, i, 1e-7);
        if (std::abs(fd) < 1e-7 && std::abs(vjp[i]) < 1e-7) continue;
        CHECK(std::abs(vjp[i] - fd) / std::max(1.0, std::abs(fd)) < 1e-4);
      }
    }
  }
}

TEST_CASE("straight line solves near the rest-to-rest kinematic bound") {
  const auto line = fixtures::line_segment(0.1);
  const LtiModel model = nominal_model();
  Stage1Config cfg = quick_config(1.0, 1e-3, line.total_length(), 96);
  const Stage1Solution sol = solve_stage1(line, model, cfg);
  const double bound = 2.0 * std::sqrt(line.total_length() / cfg.a_max);
  INFO("T = ", sol.total_time, " bound = ", bound);
  CHECK(sol.total_time >= std::max(line.total_length() / cfg.v_max, bound) * 0.999);
  CHECK(sol.total_time <= 1.2 * bound);
  CHECK(sol.status == SolveStatus::Converged);

  // Schedule is strictly monotone; steps respect the floor.
  for (std::size_t k = 0; k + 1 < sol.schedule.size(); ++k) {
    CHECK(sol.schedule[k + 1].first > sol.schedule[k].first);
    CHECK(sol.schedule[k + 1].second > sol.schedule[k].second);
  }
  for (double d : sol.delta_tau) CHECK(d >= cfg.dtau_min * 0.999999);
}

TEST_CASE("re-simulating the solved inputs reproduces the solved outputs") {
  const auto line = fixtures::line_segment(0.1);
  const LtiModel model = nominal_model();
  Stage1Config cfg = quick_config(1.0, 1e-3, line.total_length(), 72);
  const Stage1Solution sol = solve_stage1(line, model, cfg);
  Vec4 z = sol.z.front();
  double worst = 0.0;
  for (std::size_t k = 0; k + 1 < sol.r.size(); ++k) {
    const int m = sol.substeps[k];
    for (int i = 0; i < m; ++i) z = rk4_step(model, z, sol.r[k], sol.delta_tau[k] / m);
    const Vec2 g = output(model, z, sol.r[k + 1]);
    worst = std::max(worst, (g - sol.gamma[k + 1]).norm());
  }
  CHECK(worst < 10.0 * cfg.solver.tol_feas);
}

TEST_CASE("tolerance is honored under the model") {
  const auto circ = fixtures::circle(0.05, 512);
  const LtiModel model = nominal_model();
  Stage1Config cfg = quick_config(1.0, 2e-5, circ.total_length(), 180);
  const Stage1Solution sol = solve_stage1(circ, model, cfg);
  CHECK(sol.status == SolveStatus::Converged);
  const double feas_tol = cfg.solver.tol_feas;
  for (std::size_t k = 0; k < sol.nu.size(); ++k) {
    CHECK(std::abs(sol.nu[k].x()) < 1.5 * feas_tol);
    CHECK(std::abs(sol.nu[k].y()) <= 2e-5 + 1.5 * feas_tol);
  }
  // Re-check the contouring error geometrically (node spacing adds a bit of
  // polyline-vs-node slack on top of the KKT feasibility).
  for (std::size_t k = 0; k < sol.gamma.size(); ++k)
    CHECK(circ.project(sol.gamma[k]).distance <= 2e-5 + 2.0 * feas_tol);
}

TEST_CASE("total time is monotone in the acceleration limit and the tolerance") {
  const auto circ = fixtures::circle(0.05, 384);
  const LtiModel model = nominal_model();
  Stage1Config lo = quick_config(1.0, 1e-4, circ.total_length(), 128);
  Stage1Config hi = quick_config(3.0, 1e-4, circ.total_length(), 128);
  const double t_lo = solve_stage1(circ, model, lo).total_time;
  const double t_hi = solve_stage1(circ, model, hi).total_time;
  INFO("T(1)=", t_lo, " T(3)=", t_hi);
  CHECK(t_lo >= t_hi - 1e-6);

  Stage1Config tight = quick_config(1.0, 2e-5, circ.total_length(), 128);
  const double t_tight = solve_stage1(circ, model, tight).total_time;
  INFO("T(mu=1e-4)=", t_lo, " T(mu=2e-5)=", t_tight);
  CHECK(t_tight >= t_lo - 1e-6);
}

TEST_CASE("receding horizon is suboptimal but close") {
  const auto circ = fixtures::circle(0.05, 384);
  const LtiModel model = nominal_model();
  Stage1Config cfg = quick_config(2.0, 2e-4, circ.total_length(), 96);
  const double t_oneshot = solve_stage1(circ, model, cfg).total_time;
  cfg.horizon = 32;
  const Stage1Solution rh = solve_stage1(circ, model, cfg);
  INFO("T(one-shot)=", t_oneshot, " T(H=32)=", rh.total_time);
  // On a smooth circle with a loose tube the myopia cost of the receding
  // horizon is below first-order solver noise; allow a 0.5% tolerance.
  CHECK(t_oneshot <= rh.total_time * 1.005 + 1e-6);
  CHECK(rh.total_time < 3.0 * t_oneshot);
}

TEST_CASE("schedule_to_reference resamples onto the uniform grid") {
  const auto circ = fixtures::circle(0.05, 512);
  const LtiModel model = nominal_model();
  Stage1Config cfg = quick_config(2.0, 1e-4, circ.total_length(), 128);
  const Stage1Solution sol = solve_stage1(circ, model, cfg);
  const ReferencePlan plan = schedule_to_reference(sol, circ);
  const std::size_t m = static_cast<std::size_t>(std::floor(sol.total_time / kSampleDt + 1e-9)) + 1;
  CHECK(plan.xi_bar.size() == m);
  CHECK(plan.warm_start.size() == m);
  CHECK(plan.s_at_t.size() == m);
  // Chord length of the resampled target matches S within one sample's travel.
  double chord = 0.0;
  for (std::size_t i = 0; i + 1 < plan.xi_bar.size(); ++i)
    chord += (plan.xi_bar[i + 1] - plan.xi_bar[i]).norm();
  const double travel_per_sample = circ.total_length() / sol.total_time * kSampleDt;
  CHECK(std::abs(chord - circ.total_length()) < 2.0 * travel_per_sample + 1e-4);

  // Constant-speed schedule: uniform spacing.
  Stage1Solution constant;
  constant.total_time = 1.0;
  constant.schedule = {{0.0, 0.0}, {1.0, circ.total_length()}};
  constant.r = {circ.eval(0.0), circ.eval(circ.total_length())};
  const ReferencePlan cplan = schedule_to_reference(constant, circ);
  std::vector<double> gaps;
  for (std::size_t i = 0; i + 1 < cplan.xi_bar.size(); ++i)
    gaps.push_back((cplan.xi_bar[i + 1] - cplan.xi_bar[i]).norm());
  for (double gap : gaps) CHECK(gap == doctest::Approx(gaps.front()).epsilon(1e-6));
}

TEST_CASE("stage1 config validation") {
  Stage1Config cfg;
  cfg.n_points = 4;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.n_points = 0;
  cfg.a_max = 100.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  const auto line = fixtures::line_segment();
  LtiModel unstable = nominal_model();
  unstable.A(1, 1) = 10.0;
  Stage1Config ok = quick_config(1.0, 1e-4, line.total_length(), 16);
  CHECK_THROWS_AS(solve_stage1(line, unstable, ok), Error);
}
