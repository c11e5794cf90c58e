#pragma once

#include "precomp/core.hpp"
#include "precomp/trajectory.hpp"

#include <json.hpp>

#include <random>
#include <vector>

namespace precomp {

/// Velocity/acceleration/workspace limits enforced on input trajectories.
struct LimitSet {
  double v_max = kMachineVmax;        // m/s
  double a_max = kMachineAmax;        // m/s^2
  double workspace_half = kWorkspaceHalf;  // m

  static LimitSet machine() { return LimitSet{}; }
  static LimitSet unbounded() {
    return LimitSet{std::numeric_limits<double>::infinity(),
                    std::numeric_limits<double>::infinity(), kWorkspaceHalf};
  }
};

struct Violation {
  enum class Kind { Velocity, Acceleration, Workspace };
  Kind kind;
  std::size_t index;  // sample index
  int axis;           // 0 = x, 1 = y
  double value;
  double limit;
};

/// Finite-difference velocity/acceleration per axis against the limits.
/// Empty result iff the trajectory is compliant. Requires uniform sampling.
inline std::vector<Violation> check_limits(const Trajectory& r, const LimitSet& lim) {
  if (!r.uniform_dt) throw Error("check_limits: trajectory must be uniformly sampled");
  const double dt = *r.uniform_dt;
  const double eps = 1e-9;
  std::vector<Violation> out;
  for (std::size_t i = 0; i < r.size(); ++i) {
    for (int a = 0; a < 2; ++a) {
      const double p = r.points[i][a];
      if (std::abs(p) > lim.workspace_half * (1.0 + eps) + 1e-15)
        out.push_back({Violation::Kind::Workspace, i, a, p, lim.workspace_half});
      if (i + 1 < r.size()) {
        const double v = (r.points[i + 1][a] - r.points[i][a]) / dt;
        if (std::abs(v) > lim.v_max * (1.0 + eps))
          out.push_back({Violation::Kind::Velocity, i, a, v, lim.v_max});
      }
      if (i >= 1 && i + 1 < r.size()) {
        const double acc =
            (r.points[i + 1][a] - 2.0 * r.points[i][a] + r.points[i - 1][a]) / (dt * dt);
        if (std::abs(acc) > lim.a_max * (1.0 + eps))
          out.push_back({Violation::Kind::Acceleration, i, a, acc, lim.a_max});
      }
    }
  }
  return out;
}

/// Synthetic closed-loop stage dynamics. Per axis a second-order tracking
/// loop with a cubic stiffness term; gamma = F(r) + e with i.i.d. Gaussian
/// output noise e. The true dynamics are hidden from the models by contract.
struct PlantConfig {
  double omega = 2.0 * std::numbers::pi * 12.0;  // rad/s
  double zeta = 0.8;
  double kappa = 0.05;        // 1/m^2, cubic stiffness
  double eps_xy = 0.0;        // cross-coupling gain (negligible by default)
  double noise_std = kRepeatabilityStd;  // m
  std::uint64_t seed = 0;
  double sample_rate = kSampleRate;  // Hz
  int substeps = 25;  // RK4 substeps per sample interval

  void validate() const {
    if (!(omega > 0.0)) throw Error("plant: omega must be positive");
    if (!(zeta > 0.0)) throw Error("plant: zeta must be positive");
    if (noise_std < 0.0) throw Error("plant: negative noise std");
    if (!(sample_rate > 0.0) || substeps < 1) throw Error("plant: bad sampling config");
  }
};

inline nlohmann::ordered_json plant_config_to_json(const PlantConfig& c) {
  nlohmann::ordered_json j;
  j["omega_rad_s"] = c.omega;
  j["zeta"] = c.zeta;
  j["kappa_per_m2"] = c.kappa;
  j["eps_xy"] = c.eps_xy;
  j["noise_std_m"] = c.noise_std;
  j["seed"] = c.seed;
  j["sample_rate_hz"] = c.sample_rate;
  j["substeps"] = c.substeps;
  return j;
}

inline PlantConfig plant_config_from_json(const nlohmann::json& j) {
  PlantConfig c;
  c.omega = j.at("omega_rad_s").get<double>();
  c.zeta = j.at("zeta").get<double>();
  c.kappa = j.at("kappa_per_m2").get<double>();
  c.eps_xy = j.at("eps_xy").get<double>();
  c.noise_std = j.at("noise_std_m").get<double>();
  if (!j.contains("seed")) throw IoError("plant config: seed is mandatory");
  c.seed = j.at("seed").get<std::uint64_t>();
  c.sample_rate = j.value("sample_rate_hz", kSampleRate);
  c.substeps = j.value("substeps", 25);
  c.validate();
  return c;
}

namespace detail {

// State layout: [x, vx, y, vy].
inline Vec4 plant_deriv(const PlantConfig& c, const Vec4& st, const Vec2& r) {
  const double w2 = c.omega * c.omega;
  const double ex = r.x() - st[0];
  const double ey = r.y() - st[2];
  Vec4 d;
  d[0] = st[1];
  d[1] = w2 * ex - 2.0 * c.zeta * c.omega * st[1] - c.kappa * w2 * st[0] * st[0] * st[0] +
         c.eps_xy * w2 * ey;
  d[2] = st[3];
  d[3] = w2 * ey - 2.0 * c.zeta * c.omega * st[3] - c.kappa * w2 * st[2] * st[2] * st[2] +
         c.eps_xy * w2 * ex;
  return d;
}

}  // namespace detail

/// Runs the plant on an input trajectory: gamma = F(r) + e.
/// The input is rejected (LimitError) when it violates `limits`, mirroring
/// the machine's safety checks. The input is held constant over each sample
/// interval; the state starts settled at the first reference point.
inline Trajectory run(const PlantConfig& config, const Trajectory& r,
                      const LimitSet& limits = LimitSet::machine()) {
  config.validate();
  r.validate();
  if (r.empty()) throw Error("plant: empty input");
  const double dt = 1.0 / config.sample_rate;
  if (!r.uniform_dt || std::abs(*r.uniform_dt - dt) > 1e-12)
    throw Error("plant: input must be sampled at the plant sample rate");
  if (auto v = check_limits(r, limits); !v.empty()) {
    const auto& f = v.front();
    throw LimitError("plant: input rejected, " + std::to_string(v.size()) +
                     " violation(s); first at sample " + std::to_string(f.index) + " axis " +
                     std::to_string(f.axis) + " value " + std::to_string(f.value));
  }

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Vec4 st;
  st << r.points[0].x(), 0.0, r.points[0].y(), 0.0;
  const double h = dt / static_cast<double>(config.substeps);

  std::vector<Vec2> out(r.size());
  auto emit = [&](std::size_t i) {
    Vec2 g(st[0], st[2]);
    if (config.noise_std > 0.0) {
      g.x() += config.noise_std * gauss(rng);
      g.y() += config.noise_std * gauss(rng);
    }
    out[i] = g;
  };
  emit(0);
  for (std::size_t i = 0; i + 1 < r.size(); ++i) {
    const Vec2 u = r.points[i];  // zero-order hold over [t_i, t_{i+1})
    for (int k = 0; k < config.substeps; ++k) {
      const Vec4 k1 = detail::plant_deriv(config, st, u);
      const Vec4 k2 = detail::plant_deriv(config, st + 0.5 * h * k1, u);
      const Vec4 k3 = detail::plant_deriv(config, st + 0.5 * h * k2, u);
      const Vec4 k4 = detail::plant_deriv(config, st + h * k3, u);
      st += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    emit(i + 1);
  }
  return Trajectory::uniform(dt, std::move(out));
}

}  // namespace precomp
