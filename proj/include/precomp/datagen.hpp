#pragma once

#include "precomp/core.hpp"
#include "precomp/geometry.hpp"
#include "precomp/io.hpp"
#include "precomp/plant.hpp"
#include "precomp/trajectory.hpp"

#include <Eigen/Dense>

#include <random>
#include <utility>
#include <vector>

namespace precomp {

/// Random excitation trajectory: piecewise-constant jerk per axis with
/// uniformly drawn switch times, clipped to the given limits and steered
/// away from the workspace walls. Starts at rest at a random interior point.
/// Compliant with check_limits(lim) by construction.
inline Trajectory random_trajectory(const LimitSet& lim, double duration, std::uint64_t seed) {
  if (!(duration > 0.0)) throw Error("random_trajectory: duration <= 0");
  const double dt = kSampleDt;
  const std::size_t n = static_cast<std::size_t>(std::llround(duration * kSampleRate)) + 1;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double wall = lim.workspace_half;
  const double margin = 0.01;                      // hard keep-out from the wall
  const double trigger = wall - margin - 0.02;     // start braking beyond this stop point
  const double a_cap = 0.999 * lim.a_max;
  const double v_cap = std::min(0.999 * lim.v_max, std::sqrt(1.6 * a_cap * wall));
  const double jerk_mag = a_cap / 0.08;  // full accel swing within ~160 ms

  struct AxisState {
    double p, v = 0.0, a = 0.0, j = 0.0;
    double next_switch = 0.0;
  };
  AxisState ax[2];
  for (auto& s : ax) s.p = (2.0 * unit(rng) - 1.0) * 0.6 * wall;

  std::vector<Vec2> pts(n);
  pts[0] = Vec2(ax[0].p, ax[1].p);
  for (std::size_t i = 1; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    for (auto& s : ax) {
      if (t >= s.next_switch) {
        s.j = (2.0 * unit(rng) - 1.0) * jerk_mag;
        s.next_switch = t + 0.1 + 0.4 * unit(rng);  // dwell in [0.1, 0.5] s
      }
      s.a = std::clamp(s.a + s.j * dt, -a_cap, a_cap);
      // Brake when the projected stop point would leave the safe box.
      const double stop = s.p + s.v * std::abs(s.v) / (2.0 * 0.9 * a_cap);
      if (std::abs(stop) > trigger && s.v * stop > 0.0) {
        s.a = -(s.v > 0 ? 1.0 : -1.0) * a_cap;
        s.j = (stop > 0 ? -1.0 : 1.0) * std::abs(s.j);
      }
      s.v = std::clamp(s.v + s.a * dt, -v_cap, v_cap);
      s.p += s.v * dt;  // fd velocity equals v exactly
      s.p = std::clamp(s.p, -(wall - 0.5 * margin), wall - 0.5 * margin);
    }
    pts[i] = Vec2(ax[0].p, ax[1].p);
  }
  return Trajectory::uniform(dt, std::move(pts));
}

struct ShapeSpec {
  enum class Kind { Circle, Polygon, Spiral };
  Kind kind = Kind::Circle;
  Vec2 center = Vec2::Zero();
  double radius = 0.05;   // circle radius / polygon circumradius
  int sides = 4;          // polygon
  double spiral_b = 0.05 / (2.0 * std::numbers::pi);  // m per rad, r = b*theta
  double spiral_turns = 2.0;
};

inline TargetGeometry shape_geometry(const ShapeSpec& spec) {
  std::vector<Vec2> pts;
  switch (spec.kind) {
    case ShapeSpec::Kind::Circle: {
      const int n = 1024;
      pts.reserve(n);
      for (int i = 0; i < n; ++i) {
        const double th = 2.0 * std::numbers::pi * i / n;
        pts.emplace_back(spec.center.x() + spec.radius * std::cos(th),
                         spec.center.y() + spec.radius * std::sin(th));
      }
      return TargetGeometry::from_vertices(pts, true);
    }
    case ShapeSpec::Kind::Polygon: {
      if (spec.sides < 3) throw Error("shape: polygon needs >= 3 sides");
      for (int i = 0; i < spec.sides; ++i) {
        const double th = 2.0 * std::numbers::pi * i / spec.sides;
        pts.emplace_back(spec.center.x() + spec.radius * std::cos(th),
                         spec.center.y() + spec.radius * std::sin(th));
      }
      return TargetGeometry::from_vertices(pts, true);
    }
    case ShapeSpec::Kind::Spiral: {
      const double th_max = 2.0 * std::numbers::pi * spec.spiral_turns;
      const int per_turn = 256;
      const int n = std::max(2, static_cast<int>(per_turn * spec.spiral_turns));
      for (int i = 0; i <= n; ++i) {
        const double th = th_max * i / n;
        pts.emplace_back(spec.center.x() + spec.spiral_b * th * std::cos(th),
                         spec.center.y() + spec.spiral_b * th * std::sin(th));
      }
      return TargetGeometry::from_vertices(pts, false);
    }
  }
  throw Error("shape: unknown kind");
}

/// Constant path-speed traversal of a regular shape: r(t) = Xi(t*speed),
/// sampled at 400 Hz. The shape must fit the workspace; the speed must not
/// exceed the machine velocity limit.
inline Trajectory regular_shape(const ShapeSpec& spec, double speed) {
  if (!(speed > 0.0) || speed > kMachineVmax)
    throw Error("regular_shape: speed out of range");
  const TargetGeometry geom = shape_geometry(spec);  // workspace-checked on construction
  const double S = geom.total_length();
  const std::vector<std::pair<double, double>> schedule{{0.0, 0.0}, {S / speed, S}};
  return Trajectory::uniform(kSampleDt, sample_equal_time(geom, schedule, kSampleDt));
}

/// Windowed supervised dataset for one axis: scaled input windows of the
/// h most recent commanded samples, scalar target = measured output at the
/// next step. Split labels assign whole source trajectories to train/test.
struct WindowDataset {
  Eigen::MatrixXd inputs;       // h x count, scaled (window per column)
  Eigen::VectorXd targets;      // count, scaled
  std::vector<std::uint8_t> is_train;  // 1 = train, 0 = test
  int h = 200;
  double scale = kWorkspaceHalf;  // meters per unit

  std::size_t count() const { return static_cast<std::size_t>(targets.size()); }
  std::size_t train_count() const {
    std::size_t c = 0;
    for (auto f : is_train) c += f;
    return c;
  }
};

inline WindowDataset build_dataset(const std::vector<std::pair<Trajectory, Trajectory>>& pairs,
                                   int axis) {
  if (axis != 0 && axis != 1) throw Error("build_dataset: axis must be 0 or 1");
  const int h = 200;
  std::size_t total = 0;
  for (const auto& [r, g] : pairs) {
    if (r.size() != g.size()) throw Error("build_dataset: pair length mismatch");
    if (!r.uniform_dt || std::abs(*r.uniform_dt - kSampleDt) > 1e-12)
      throw Error("build_dataset: pairs must be sampled at 400 Hz");
    if (r.size() <= static_cast<std::size_t>(h))
      throw Error("build_dataset: trajectory shorter than h+1 samples");
    total += r.size() - h;
  }

  WindowDataset ds;
  ds.h = h;
  ds.inputs.resize(h, static_cast<Eigen::Index>(total));
  ds.targets.resize(static_cast<Eigen::Index>(total));
  ds.is_train.resize(total);

  // Whole trajectories go to train/test; the train prefix is chosen closest
  // to 80% of the windows, leaving at least one test trajectory when there
  // are two or more sources.
  std::vector<std::uint8_t> traj_train(pairs.size(), 0);
  {
    const double target = 0.8 * static_cast<double>(total);
    std::size_t covered = 0, best_k = 1;
    double best_gap = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k <= pairs.size(); ++k) {
      covered += pairs[k - 1].first.size() - h;
      const double gap = std::abs(static_cast<double>(covered) - target);
      if (gap < best_gap) {
        best_gap = gap;
        best_k = k;
      }
    }
    if (best_k == pairs.size() && pairs.size() >= 2) best_k = pairs.size() - 1;
    for (std::size_t p = 0; p < best_k; ++p) traj_train[p] = 1;
  }

  std::size_t col = 0;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto& r = pairs[p].first;
    const auto& g = pairs[p].second;
    for (std::size_t i = h; i < r.size(); ++i, ++col) {
      for (int k = 0; k < h; ++k) ds.inputs(k, static_cast<Eigen::Index>(col)) = r.points[i - h + k][axis] / ds.scale;
      ds.targets(static_cast<Eigen::Index>(col)) = g.points[i][axis] / ds.scale;
      ds.is_train[col] = traj_train[p];
    }
  }
  return ds;
}

// --- dataset file format (PCDS) --------------------------------------------

inline void save_dataset(const std::filesystem::path& path, const WindowDataset& ds) {
  io::BinaryWriter w;
  w.magic("PCDS");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(ds.h));
  w.u64(ds.count());
  w.f64(ds.scale);
  for (std::size_t i = 0; i < ds.count(); ++i) {
    w.f64s(ds.inputs.col(static_cast<Eigen::Index>(i)).data(), static_cast<std::size_t>(ds.h));
    w.f64(ds.targets(static_cast<Eigen::Index>(i)));
    w.u8(ds.is_train[i]);
  }
  io::atomic_write(path, w.str());
}

inline WindowDataset load_dataset(const std::filesystem::path& path) {
  io::BinaryReader r(io::read_file(path));
  r.expect_magic("PCDS");
  if (r.u32() != 1) throw IoError("dataset: unsupported version");
  WindowDataset ds;
  ds.h = static_cast<int>(r.u32());
  const std::uint64_t count = r.u64();
  ds.scale = r.f64();
  ds.inputs.resize(ds.h, static_cast<Eigen::Index>(count));
  ds.targets.resize(static_cast<Eigen::Index>(count));
  ds.is_train.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    r.f64s(ds.inputs.col(static_cast<Eigen::Index>(i)).data(), static_cast<std::size_t>(ds.h));
    ds.targets(static_cast<Eigen::Index>(i)) = r.f64();
    ds.is_train[i] = r.u8();
  }
  return ds;
}

}  // namespace precomp
