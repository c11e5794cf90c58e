#include "precomp/datagen.hpp"
#include "precomp/linmodel.hpp"
#include "precomp/plant.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace precomp;

namespace {

// White-noise reference input; persistently exciting and exactly ZOH.
Trajectory white_input(std::size_t n, std::uint64_t seed, double amplitude = 0.01) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, amplitude);
  std::vector<Vec2> pts(n);
  for (auto& p : pts) p = Vec2(g(rng), g(rng));
  return Trajectory::uniform(kSampleDt, pts);
}

std::vector<std::pair<Trajectory, Trajectory>> synth_pairs(const LtiModel& truth, std::size_t n,
                                                           std::uint64_t seed) {
  const Trajectory r = white_input(n, seed);
  return {{r, oracles::exact_simulate(truth, r, Vec4::Zero())}};
}

}  // namespace

TEST_CASE("rk4_step trivial and scalar-like cases") {
  LtiModel m;
  m.A.setZero();
  m.B.setZero();
  m.C.setZero();
  m.D.setZero();
  const Vec4 z(1.0, -2.0, 3.0, 4.0);
  CHECK((rk4_step(m, z, Vec2(0.1, 0.2), 0.05) - z).norm() == 0.0);

  // z' = -z per component: one step of 0.1 lands on exp(-0.1) up to the RK4
  // local truncation h^5/5! ~ 8.3e-8, and on the degree-4 Taylor sum exactly.
  m.A = -Eigen::Matrix4d::Identity();
  const Vec4 one = Vec4::Ones();
  const Vec4 stepped = rk4_step(m, one, Vec2::Zero(), 0.1);
  const double taylor4 = 1.0 - 0.1 + 0.005 - 1.0 / 6000.0 + 1.0 / 240000.0;
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(stepped[i] - 0.904837418) < 1e-7);
    CHECK(std::abs(stepped[i] - taylor4) < 1e-15);
  }
}

TEST_CASE("rk4 global error drops ~16x when the step is halved") {
  // Fixed horizon integrated with n and 2n steps against the expm oracle.
  for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
    const LtiModel m = oracles::random_stable_model(seed, 3.0, 12.0, 0.1, 12.0);
    const Vec4 z0 = Vec4::Ones() * 0.1;
    const Vec2 r(0.05, -0.02);
    const double T = 0.2;
    auto integrate = [&](int steps) {
      Vec4 z = z0;
      for (int i = 0; i < steps; ++i) z = rk4_step(m, z, r, T / steps);
      return z;
    };
    const Vec4 exact = oracles::exact_step(m, z0, r, T);
    const double e1 = (integrate(8) - exact).norm();
    const double e2 = (integrate(16) - exact).norm();
    const double ratio = e1 / e2;
    CHECK(ratio > 12.0);
    CHECK(ratio < 20.0);
  }
}

TEST_CASE("output map") {
  LtiModel m;
  m.A.setZero();
  m.B.setZero();
  m.C.setZero();
  m.D.setIdentity();
  CHECK((output(m, Vec4::Zero(), Vec2::Zero())).norm() == 0.0);
  CHECK((output(m, Vec4::Zero(), Vec2(0.3, -0.4)) - Vec2(0.3, -0.4)).norm() == 0.0);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    for (int i = 0; i < 8; ++i) m.C.data()[i] = g(rng);
    for (int i = 0; i < 4; ++i) m.D.data()[i] = g(rng);
    Vec4 z;
    for (int i = 0; i < 4; ++i) z[i] = g(rng);
    const Vec2 r(g(rng), g(rng));
    const Vec2 direct = m.C * z + m.D * r;
    CHECK((output(m, z, r) - direct).norm() == 0.0);
  }
}

TEST_CASE("simulate matches the exact oracle on a gentle system") {
  const LtiModel m = oracles::random_stable_model(3, 3.0, 8.0, 0.1, 8.0);
  const Trajectory r = white_input(400, 17, 0.02);
  const Trajectory sim = simulate(m, r, Vec4::Zero());
  const Trajectory exact = oracles::exact_simulate(m, r, Vec4::Zero());
  double worst = 0.0;
  for (std::size_t i = 0; i < sim.size(); ++i)
    worst = std::max(worst, (sim.points[i] - exact.points[i]).norm());
  CHECK(worst < 1e-8);

  std::vector<Vec2> zeros(100, Vec2::Zero());
  const Trajectory quiet = simulate(m, Trajectory::uniform(kSampleDt, zeros), Vec4::Zero());
  for (const auto& p : quiet.points) CHECK(p.norm() == 0.0);
}

TEST_CASE("simulate is linear and BIBO stable over a long run") {
  const LtiModel m = oracles::random_stable_model(9, 10.0, 60.0, 0.05, 60.0);
  const Trajectory r1 = white_input(300, 31, 0.01);
  const Trajectory r2 = white_input(300, 32, 0.01);
  std::vector<Vec2> mix(r1.size());
  for (std::size_t i = 0; i < mix.size(); ++i)
    mix[i] = 2.0 * r1.points[i] - 0.5 * r2.points[i];
  const Trajectory g1 = simulate(m, r1, Vec4::Zero());
  const Trajectory g2 = simulate(m, r2, Vec4::Zero());
  const Trajectory gm = simulate(m, Trajectory::uniform(kSampleDt, mix), Vec4::Zero());
  for (std::size_t i = 0; i < mix.size(); ++i)
    CHECK((gm.points[i] - 2.0 * g1.points[i] + 0.5 * g2.points[i]).norm() < 1e-10);

  // Bounded input, bounded output over 1e6 steps.
  Vec4 z = Vec4::Ones() * 0.01;
  double peak = 0.0;
  for (int i = 0; i < 1000000; ++i) {
    z = rk4_step(m, z, Vec2(0.01, -0.01), kSampleDt);
    peak = std::max(peak, z.cwiseAbs().maxCoeff());
    REQUIRE(std::isfinite(z[0]));
  }
  CHECK(peak < 1e3);
}

TEST_CASE("identification recovers a known 4-state system") {
  const LtiModel truth = oracles::random_stable_model(42);
  const auto pairs = synth_pairs(truth, 20000, 7);
  const LtiModel fit = identify(pairs);

  auto sorted_eigs = [](const LtiModel& m) {
    std::vector<std::complex<double>> e;
    const auto eig = m.A.eigenvalues();
    for (int i = 0; i < 4; ++i) e.push_back(eig(i));
    std::sort(e.begin(), e.end(), [](auto a, auto b) {
      return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
    });
    return e;
  };
  const auto et = sorted_eigs(truth), ef = sorted_eigs(fit);
  for (int i = 0; i < 4; ++i)
    CHECK(std::abs(ef[static_cast<std::size_t>(i)] - et[static_cast<std::size_t>(i)]) /
              std::abs(et[static_cast<std::size_t>(i)]) < 1e-3);

  // One-step (simulation) prediction error on fresh data.
  const Trajectory r = white_input(2000, 55);
  const Trajectory truth_out = oracles::exact_simulate(truth, r, Vec4::Zero());
  const Trajectory fit_out = oracles::exact_simulate(fit, r, Vec4::Zero());
  double se = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i)
    se += (truth_out.points[i] - fit_out.points[i]).squaredNorm();
  CHECK(std::sqrt(se / static_cast<double>(2 * r.size())) < 1e-8);
}

TEST_CASE("identification on the linear plant is near exact") {
  // White reference excitation (exactly the ZOH model class); limit checks
  // bypassed since this is a plant fixture, not a machine run. Extra
  // integration substeps keep the data itself at the 1e-11 level.
  PlantConfig pc;
  pc.kappa = 0.0;
  pc.noise_std = 0.0;
  pc.seed = 4;
  pc.substeps = 60;
  std::vector<std::pair<Trajectory, Trajectory>> pairs;
  auto white = [&](std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 0.01);
    std::vector<Vec2> pts(n);
    pts[0] = Vec2::Zero();
    for (std::size_t i = 1; i < n; ++i) pts[i] = Vec2(g(rng), g(rng));
    return Trajectory::uniform(kSampleDt, pts);
  };
  for (std::uint64_t s = 0; s < 4; ++s) {
    const Trajectory r = white(4000, 100 + s);
    pairs.emplace_back(r, run(pc, r, LimitSet::unbounded()));
  }
  const LtiModel fit = identify(pairs);
  // Residual on a held-back trajectory via the exact discretization of the
  // identified continuous-time model.
  const Trajectory r = white(2000, 999);
  const Trajectory truth = run(pc, r, LimitSet::unbounded());
  const Trajectory pred = oracles::exact_simulate(fit, r, Vec4::Zero());
  double se = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i)
    se += (truth.points[i] - pred.points[i]).squaredNorm();
  CHECK(std::sqrt(se / static_cast<double>(2 * r.size())) < 1e-8);
}

TEST_CASE("identification on the nonlinear plant leaves tens of microns") {
  PlantConfig pc;  // default kappa
  pc.noise_std = 0.0;
  pc.seed = 4;
  std::vector<std::pair<Trajectory, Trajectory>> pairs;
  for (std::uint64_t s = 0; s < 4; ++s) {
    const Trajectory r = random_trajectory(LimitSet::machine(), 10.0, 200 + s);
    pairs.emplace_back(r, run(pc, r));
  }
  const LtiModel fit = identify(pairs);
  const Trajectory r = random_trajectory(LimitSet::machine(), 8.0, 1999);
  const Trajectory truth = run(pc, r);
  const Trajectory pred = simulate(fit, r, steady_state(fit, r.points.front()));
  std::vector<double> err;
  for (std::size_t i = 0; i < r.size(); ++i) {
    err.push_back(pred.points[i].x() - truth.points[i].x());
    err.push_back(pred.points[i].y() - truth.points[i].y());
  }
  const auto [mean, sigma] = oracles::two_pass_mean_std(err);
  INFO("sigma = ", sigma);
  CHECK(sigma > 5e-6);    // clearly nonzero
  CHECK(sigma < 3e-4);    // but still tens-of-microns scale
}

TEST_CASE("identification is scale equivariant in its predictions") {
  const LtiModel truth = oracles::random_stable_model(8);
  const Trajectory r = white_input(15000, 21);
  const Trajectory g = oracles::exact_simulate(truth, r, Vec4::Zero());
  const double c = 3.7;
  Trajectory rs = r, gs = g;
  for (auto& p : rs.points) p *= c;
  for (auto& p : gs.points) p *= c;
  const LtiModel fit1 = identify({{r, g}});
  const LtiModel fit2 = identify({{rs, gs}});
  const Trajectory probe = white_input(800, 77);
  Trajectory probe_scaled = probe;
  for (auto& p : probe_scaled.points) p *= c;
  const Trajectory p1 = simulate(fit1, probe, Vec4::Zero());
  const Trajectory p2 = simulate(fit2, probe_scaled, Vec4::Zero());
  for (std::size_t i = 0; i < probe.size(); ++i)
    CHECK((c * p1.points[i] - p2.points[i]).norm() < 1e-10 * c);
}

TEST_CASE("identify rejects insufficient data") {
  const LtiModel truth = oracles::random_stable_model(1);
  CHECK_THROWS_AS(identify(synth_pairs(truth, 5000, 3)), Error);
}

TEST_CASE("model json round trip is bit exact") {
  const LtiModel m = oracles::random_stable_model(15);
  const LtiModel back = lti_from_json(lti_to_json(m));
  CHECK((back.A - m.A).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.B - m.B).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.C - m.C).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.D - m.D).cwiseAbs().maxCoeff() == 0.0);
}
