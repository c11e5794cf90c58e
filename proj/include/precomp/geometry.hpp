#pragma once

#include "precomp/core.hpp"
#include "precomp/io.hpp"
#include "precomp/trajectory.hpp"

#include <json.hpp>

#include <algorithm>
#include <utility>
#include <vector>

namespace precomp {

/// Piecewise tolerance tube mu(s) around the target geometry, in meters.
struct ToleranceProfile {
  struct Piece {
    double s_start;
    double s_end;
    double value;
  };
  std::vector<Piece> pieces;

  static ToleranceProfile constant(double mu, double total_length) {
    if (!(mu > 0.0)) throw Error("tolerance: mu must be positive");
    return ToleranceProfile{{{0.0, total_length, mu}}};
  }

  // Pieces must cover [0,S] without gaps; every value positive.
  void validate(double total_length) const {
    if (pieces.empty()) throw Error("tolerance: no pieces");
    double cursor = 0.0;
    for (const auto& p : pieces) {
      if (!(p.value > 0.0)) throw Error("tolerance: non-positive mu");
      if (std::abs(p.s_start - cursor) > 1e-12) throw Error("tolerance: gap in coverage");
      if (!(p.s_end > p.s_start)) throw Error("tolerance: empty piece");
      cursor = p.s_end;
    }
    if (std::abs(cursor - total_length) > 1e-9)
      throw Error("tolerance: pieces do not cover [0,S]");
  }

  double at(double s) const {
    for (const auto& p : pieces)
      if (s >= p.s_start && s <= p.s_end) return p.value;
    return pieces.empty() ? kDefaultTolerance
                          : (s < 0 ? pieces.front().value : pieces.back().value);
  }
};

/// Arc-length parameterized planar polyline Xi(s), s in [0, S].
///
/// Smooth shapes are represented by dense polylines; the vertex list of a
/// closed geometry ends with a copy of the first vertex so that eval(S)
/// equals eval(0) exactly.
class TargetGeometry {
 public:
  static TargetGeometry from_vertices(const std::vector<Vec2>& points, bool closed) {
    std::vector<Vec2> verts;
    verts.reserve(points.size() + 1);
    for (const auto& p : points) {
      if (!in_workspace(p))
        throw Error("geometry: vertex outside workspace: (" + std::to_string(p.x()) + ", " +
                    std::to_string(p.y()) + ")");
      if (verts.empty() || (p - verts.back()).norm() > 1e-12) verts.push_back(p);
    }
    if (closed && verts.size() >= 2 && (verts.front() - verts.back()).norm() <= 1e-12)
      verts.pop_back();  // closure vertex is re-appended below
    if (verts.size() < 2) throw Error("geometry: fewer than 2 distinct points");
    if (closed) verts.push_back(verts.front());

    TargetGeometry g;
    g.verts_ = std::move(verts);
    g.closed_ = closed;
    g.cum_.resize(g.verts_.size());
    g.cum_[0] = 0.0;
    for (std::size_t i = 1; i < g.verts_.size(); ++i)
      g.cum_[i] = g.cum_[i - 1] + (g.verts_[i] - g.verts_[i - 1]).norm();
    if (!(g.cum_.back() > 0.0)) throw Error("geometry: zero total length");
    return g;
  }

  double total_length() const { return cum_.back(); }
  bool closed() const { return closed_; }
  const std::vector<Vec2>& vertices() const { return verts_; }
  const std::vector<double>& cumulative_arclength() const { return cum_; }

  Vec2 eval(double s) const {
    s = checked_s(s);
    const std::size_t i = segment_index(s);
    const double len = cum_[i + 1] - cum_[i];
    const double u = len > 0.0 ? (s - cum_[i]) / len : 0.0;
    return verts_[i] + u * (verts_[i + 1] - verts_[i]);
  }

  /// Angle of the direction of increasing s against the global x axis.
  /// At a polyline vertex this is the bisector of the adjacent segments.
  double tangent_angle(double s) const {
    s = checked_s(s);
    const double vertex_tol = 1e-9;
    // Vertex hit (including both endpoints)?
    const auto it = std::lower_bound(cum_.begin(), cum_.end(), s - vertex_tol);
    const std::size_t vi = static_cast<std::size_t>(it - cum_.begin());
    if (vi < cum_.size() && std::abs(cum_[vi] - s) <= vertex_tol) {
      Vec2 dir;
      if (vi == 0) {
        dir = closed_ ? bisector(last_dir(), seg_dir(0)) : seg_dir(0);
      } else if (vi + 1 == verts_.size()) {
        dir = closed_ ? bisector(last_dir(), seg_dir(0)) : seg_dir(verts_.size() - 2);
      } else {
        dir = bisector(seg_dir(vi - 1), seg_dir(vi));
      }
      return std::atan2(dir.y(), dir.x());
    }
    const Vec2 d = seg_dir(segment_index(s));
    return std::atan2(d.y(), d.x());
  }

  struct Projection {
    double s;         // arg min (smallest in case of ties)
    double distance;  // min point-to-polyline distance
  };

  /// Closest point on the polyline; ties broken by the smallest s.
  Projection project(const Vec2& p) const {
    double best_d2 = std::numeric_limits<double>::infinity();
    double best_s = 0.0;
    for (std::size_t i = 0; i + 1 < verts_.size(); ++i) {
      const Vec2 a = verts_[i], b = verts_[i + 1];
      const Vec2 ab = b - a;
      const double len2 = ab.squaredNorm();
      double u = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
      u = std::clamp(u, 0.0, 1.0);
      const Vec2 q = a + u * ab;
      const double d2 = (p - q).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best_s = cum_[i] + u * (cum_[i + 1] - cum_[i]);
      }
    }
    return {best_s, std::sqrt(best_d2)};
  }

 private:
  double checked_s(double s) const {
    const double slack = 1e-9 * std::max(1.0, total_length());
    if (s < -slack || s > total_length() + slack)
      throw Error("geometry: s outside [0,S]: s=" + std::to_string(s));
    return std::clamp(s, 0.0, total_length());
  }

  std::size_t segment_index(double s) const {
    // Segment i covers [cum_[i], cum_[i+1]).
    const auto it = std::upper_bound(cum_.begin(), cum_.end(), s);
    std::size_t i = static_cast<std::size_t>(it - cum_.begin());
    i = i > 0 ? i - 1 : 0;
    return std::min(i, verts_.size() - 2);
  }

  Vec2 seg_dir(std::size_t i) const { return (verts_[i + 1] - verts_[i]).normalized(); }
  Vec2 last_dir() const { return seg_dir(verts_.size() - 2); }

  static Vec2 bisector(const Vec2& d1, const Vec2& d2) {
    const Vec2 sum = d1 + d2;
    if (sum.norm() < 1e-12) return d1;  // 180 degree reversal, degenerate
    return sum.normalized();
  }

  std::vector<Vec2> verts_;
  std::vector<double> cum_;
  bool closed_ = false;
};

/// Local tangent/normal frame at a geometry point.
///
/// T maps local coordinates nu to global coordinates via [g;1] = T [nu;1];
/// `angle` is the rotation angle of that transform (clockwise-positive, i.e.
/// the negated tangent angle), so that nu_1 is the tangential component and
/// nu_2 the normal component pointing to the port side of travel.
struct LocalFrame {
  Vec2 origin;
  double angle = 0.0;
  Eigen::Matrix3d T;

  static LocalFrame from_angle(double alpha, const Vec2& origin) {
    LocalFrame f;
    f.origin = origin;
    f.angle = alpha;
    const double c = std::cos(alpha), s = std::sin(alpha);
    f.T << c, s, origin.x(), -s, c, origin.y(), 0, 0, 1;
    return f;
  }

  Eigen::Matrix2d rotation() const { return T.topLeftCorner<2, 2>(); }

  Vec2 to_global(const Vec2& local) const { return rotation() * local + origin; }
  Vec2 to_local(const Vec2& global) const {
    return rotation().transpose() * (global - origin);
  }
};

inline std::pair<LocalFrame, double> local_frame(const TargetGeometry& geom, double s,
                                                 const ToleranceProfile& tol) {
  return {LocalFrame::from_angle(-geom.tangent_angle(s), geom.eval(s)), tol.at(s)};
}

/// d(s_k, gamma) for N equally spaced s_k: distance from Xi(s_k) to the
/// polyline through the trajectory samples. Uses positions only.
inline std::vector<double> deviation_profile(const TargetGeometry& geom, const Trajectory& traj,
                                             std::size_t n) {
  if (traj.empty()) throw Error("deviation_profile: empty trajectory");
  if (n < 2) throw Error("deviation_profile: N < 2");
  std::vector<double> out(n);
  const double S = geom.total_length();
  for (std::size_t k = 0; k < n; ++k) {
    const Vec2 p = geom.eval(S * static_cast<double>(k) / static_cast<double>(n - 1));
    double best = (traj.points[0] - p).squaredNorm();
    for (std::size_t i = 0; i + 1 < traj.points.size(); ++i) {
      const Vec2 a = traj.points[i], ab = traj.points[i + 1] - a;
      const double len2 = ab.squaredNorm();
      double u = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
      u = std::clamp(u, 0.0, 1.0);
      best = std::min(best, (p - (a + u * ab)).squaredNorm());
    }
    out[k] = std::sqrt(best);
  }
  return out;
}

inline std::vector<Vec2> sample_equal_space(const TargetGeometry& geom, std::size_t n) {
  if (n < 2) throw Error("sample_equal_space: N < 2");
  std::vector<Vec2> out(n);
  const double S = geom.total_length();
  for (std::size_t k = 0; k < n; ++k)
    out[k] = geom.eval(S * static_cast<double>(k) / static_cast<double>(n - 1));
  return out;
}

/// Monotone piecewise-linear interpolation of a (t,s) schedule at t.
inline double schedule_interp(const std::vector<std::pair<double, double>>& schedule, double t) {
  if (t <= schedule.front().first) return schedule.front().second;
  if (t >= schedule.back().first) return schedule.back().second;
  auto it = std::upper_bound(schedule.begin(), schedule.end(), t,
                             [](double v, const auto& e) { return v < e.first; });
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  const double u = (t - lo.first) / (hi.first - lo.first);
  return lo.second + u * (hi.second - lo.second);
}

/// Xi_bar_i = Xi(s(t_i)) at t_i = i*dt, i = 0..floor(T/dt); also reports the
/// interpolated s values (used to evaluate mu(s) at each time sample).
inline std::vector<Vec2> sample_equal_time(const TargetGeometry& geom,
                                           const std::vector<std::pair<double, double>>& schedule,
                                           double dt, std::vector<double>* s_out = nullptr) {
  if (!(dt > 0.0)) throw Error("sample_equal_time: dt <= 0");
  if (schedule.size() < 2) throw Error("sample_equal_time: schedule too short");
  for (std::size_t i = 1; i < schedule.size(); ++i) {
    if (!(schedule[i].first > schedule[i - 1].first))
      throw Error("sample_equal_time: schedule times not strictly increasing");
    if (schedule[i].second < schedule[i - 1].second - 1e-12)
      throw Error("sample_equal_time: schedule progress not monotone");
  }
  const double T = schedule.back().first;
  const std::size_t m = static_cast<std::size_t>(std::floor(T / dt + 1e-9)) + 1;
  std::vector<Vec2> out(m);
  if (s_out) s_out->resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double t = std::min(static_cast<double>(i) * dt, T);
    const double s = schedule_interp(schedule, t);
    out[i] = geom.eval(s);
    if (s_out) (*s_out)[i] = s;
  }
  return out;
}

// --- geometry file format -------------------------------------------------

inline std::string geometry_to_json(const TargetGeometry& geom) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["closed"] = geom.closed();
  j["units"] = "m";
  auto verts = nlohmann::json::array();
  const auto& v = geom.vertices();
  const std::size_t n = geom.closed() ? v.size() - 1 : v.size();  // drop closure vertex
  for (std::size_t i = 0; i < n; ++i) verts.push_back({v[i].x(), v[i].y()});
  j["vertices"] = std::move(verts);
  return j.dump(2) + "\n";
}

inline TargetGeometry geometry_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (j.at("version").get<int>() != 1) throw IoError("geometry json: unsupported version");
  if (j.at("units").get<std::string>() != "m") throw IoError("geometry json: units must be m");
  std::vector<Vec2> pts;
  for (const auto& v : j.at("vertices")) pts.emplace_back(v.at(0).get<double>(), v.at(1).get<double>());
  return TargetGeometry::from_vertices(pts, j.at("closed").get<bool>());
}

inline void save_geometry_json(const std::filesystem::path& path, const TargetGeometry& g) {
  io::atomic_write(path, geometry_to_json(g));
}

inline TargetGeometry load_geometry_json(const std::filesystem::path& path) {
  return geometry_from_json(io::read_file(path));
}

inline std::string deviation_profile_to_csv(const TargetGeometry& geom,
                                            const std::vector<double>& profile,
                                            const std::string& header_comment = {}) {
  std::ostringstream out;
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "s_m,deviation_m\n";
  const double S = geom.total_length();
  for (std::size_t k = 0; k < profile.size(); ++k) {
    const double s = S * static_cast<double>(k) / static_cast<double>(profile.size() - 1);
    out << io::format_double(s) << ',' << io::format_double(profile[k]) << '\n';
  }
  return out.str();
}

}  // namespace precomp
