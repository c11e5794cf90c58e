#include "precomp/datagen.hpp"
#include "precomp/plant.hpp"

#include <doctest.h>

#include <filesystem>

using namespace precomp;

TEST_CASE("random trajectories respect the limits for any seed") {
  for (std::uint64_t seed : {1ull, 2ull, 99ull, 12345ull, 777777ull}) {
    for (double a_cap : {0.5, 2.0, 5.0}) {
      LimitSet lim = LimitSet::machine();
      lim.a_max = a_cap;
      const Trajectory tr = random_trajectory(lim, 6.0, seed);
      INFO("seed ", seed, " a_cap ", a_cap);
      CHECK(check_limits(tr, lim).empty());
    }
  }
}

TEST_CASE("random trajectory sampling and determinism") {
  const Trajectory tr = random_trajectory(LimitSet::machine(), 10.0, 3);
  CHECK(tr.size() == 4001);
  CHECK(tr.uniform_dt == kSampleDt);

  const Trajectory again = random_trajectory(LimitSet::machine(), 10.0, 3);
  for (std::size_t i = 0; i < tr.size(); ++i) {
    CHECK(tr.points[i].x() == again.points[i].x());
    CHECK(tr.points[i].y() == again.points[i].y());
  }
  const Trajectory other = random_trajectory(LimitSet::machine(), 10.0, 4);
  bool differs = false;
  for (std::size_t i = 0; i < tr.size(); ++i) differs |= (tr.points[i] != other.points[i]);
  CHECK(differs);
}

TEST_CASE("regular shapes traverse at constant path speed") {
  ShapeSpec circle;
  circle.kind = ShapeSpec::Kind::Circle;
  circle.radius = 0.05;
  const Trajectory tr = regular_shape(circle, 0.1);
  CHECK(tr.duration() ==
        doctest::Approx(2.0 * std::numbers::pi * 0.05 / 0.1).epsilon(0.01));

  // Constant chord length (spiral case).
  ShapeSpec spiral;
  spiral.kind = ShapeSpec::Kind::Spiral;
  spiral.spiral_b = 0.05 / (2.0 * std::numbers::pi);
  spiral.spiral_turns = 2.0;
  const Trajectory sp = regular_shape(spiral, 0.08);
  for (std::size_t i = 1; i + 2 < sp.size(); ++i) {
    const double chord = (sp.points[i + 1] - sp.points[i]).norm();
    CHECK(std::abs(chord - 0.08 * kSampleDt) / (0.08 * kSampleDt) < 0.01);
  }
}

TEST_CASE("square at speed trips the corner acceleration check") {
  ShapeSpec square;
  square.kind = ShapeSpec::Kind::Polygon;
  square.sides = 4;
  square.radius = 0.07;
  // Corner velocity change ~ v*sqrt(2) in one sample: spikes past 40 m/s^2
  // when v*sqrt(2)/dt > 40, i.e. v > ~0.071 m/s.
  const Trajectory fast = regular_shape(square, 0.2);
  const auto viol = check_limits(fast, LimitSet::machine());
  bool acc_flagged = false;
  for (const auto& v : viol) acc_flagged |= v.kind == Violation::Kind::Acceleration;
  CHECK(acc_flagged);
  const Trajectory slow = regular_shape(square, 0.04);
  CHECK(check_limits(slow, LimitSet::machine()).empty());
}

TEST_CASE("regular shape rejects bad requests") {
  ShapeSpec huge;
  huge.kind = ShapeSpec::Kind::Circle;
  huge.radius = 0.25;
  CHECK_THROWS_AS(regular_shape(huge, 0.1), Error);
  ShapeSpec ok;
  ok.kind = ShapeSpec::Kind::Circle;
  CHECK_THROWS_AS(regular_shape(ok, 2.0), Error);
}

TEST_CASE("window dataset construction") {
  // One pair, 1000 samples -> 800 windows.
  const Trajectory r = random_trajectory(LimitSet::machine(), 999.0 / 400.0, 5);
  REQUIRE(r.size() == 1000);
  PlantConfig pc;
  pc.noise_std = 0.0;
  pc.seed = 1;
  const Trajectory g = run(pc, r);
  const WindowDataset ds = build_dataset({{r, g}}, 0);
  CHECK(ds.count() == 800);
  CHECK(ds.h == 200);
  CHECK(ds.scale == kWorkspaceHalf);

  // Window content: scaled history of the input, target = scaled output.
  const std::size_t i = 300;  // window index -> source sample i + h
  for (int k = 0; k < ds.h; ++k)
    CHECK(ds.inputs(k, static_cast<Eigen::Index>(i)) ==
          r.points[i + static_cast<std::size_t>(k)].x() / ds.scale);
  CHECK(ds.targets(static_cast<Eigen::Index>(i)) == g.points[i + 200].x() / ds.scale);

  // Round trip through the scale factor.
  CHECK(ds.inputs(0, 0) * ds.scale == doctest::Approx(r.points[0].x()).epsilon(1e-15));
}

TEST_CASE("constant input gives identical windows and targets") {
  std::vector<Vec2> held(700, Vec2(0.04, -0.02));
  const Trajectory r = Trajectory::uniform(kSampleDt, held);
  PlantConfig pc;
  pc.noise_std = 0.0;
  pc.kappa = 0.0;
  pc.seed = 1;
  const Trajectory g = run(pc, r);
  const WindowDataset ds = build_dataset({{r, g}}, 1);
  for (std::size_t i = 1; i < ds.count(); ++i) {
    CHECK((ds.inputs.col(static_cast<Eigen::Index>(i)) - ds.inputs.col(0)).cwiseAbs().maxCoeff() ==
          0.0);
    CHECK(ds.targets(static_cast<Eigen::Index>(i)) == doctest::Approx(ds.targets(0)).epsilon(1e-12));
  }
}

TEST_CASE("split keeps whole trajectories and no window crosses a boundary") {
  // Two constant trajectoris with distinct values: if a window crossed the
  // boundary it would mix the two constants.
  std::vector<Vec2> a(400, Vec2(0.05, 0.05)), b(400, Vec2(-0.08, -0.08));
  PlantConfig pc;
  pc.noise_std = 0.0;
  pc.seed = 1;
  const Trajectory ra = Trajectory::uniform(kSampleDt, a), rb = Trajectory::uniform(kSampleDt, b);
  const WindowDataset ds = build_dataset({{ra, run(pc, ra)}, {rb, run(pc, rb)}}, 0);
  CHECK(ds.count() == 400);
  for (std::size_t i = 0; i < ds.count(); ++i) {
    const double first = ds.inputs(0, static_cast<Eigen::Index>(i));
    for (int k = 1; k < ds.h; ++k)
      CHECK(ds.inputs(k, static_cast<Eigen::Index>(i)) == first);
  }
  // Whole-trajectory split: all windows of a source share the flag.
  CHECK(ds.is_train[0] == ds.is_train[199]);
  CHECK(ds.is_train[200] == ds.is_train[399]);
  CHECK(ds.is_train[0] == 1);
  CHECK(ds.is_train[399] == 0);  // second trajectory is the 20% tail
}

TEST_CASE("dataset errors") {
  const Trajectory small = random_trajectory(LimitSet::machine(), 0.25, 1);  // 101 samples
  PlantConfig pc;
  pc.seed = 1;
  CHECK_THROWS_AS(build_dataset({{small, run(pc, small)}}, 0), Error);
  const Trajectory ok = random_trajectory(LimitSet::machine(), 1.0, 1);
  Trajectory mismatched = run(pc, ok);
  mismatched.points.pop_back();
  mismatched.t.pop_back();
  CHECK_THROWS_AS(build_dataset({{ok, mismatched}}, 0), Error);
}

TEST_CASE("dataset file round trip is bit exact") {
  const Trajectory r = random_trajectory(LimitSet::machine(), 1.0, 2);
  PlantConfig pc;
  pc.seed = 3;
  const WindowDataset ds = build_dataset({{r, run(pc, r)}}, 0);
  const auto path = std::filesystem::temp_directory_path() / "precomp_test_ds.bin";
  save_dataset(path, ds);
  const WindowDataset back = load_dataset(path);
  CHECK(back.count() == ds.count());
  CHECK(back.h == ds.h);
  CHECK(back.scale == ds.scale);
  CHECK((back.inputs - ds.inputs).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.targets - ds.targets).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.is_train == ds.is_train);
  std::filesystem::remove(path);
}
