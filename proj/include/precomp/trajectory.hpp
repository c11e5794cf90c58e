#pragma once

#include "precomp/core.hpp"
#include "precomp/io.hpp"

#include <optional>
#include <sstream>
#include <vector>

namespace precomp {

/// Planar time series: an input trajectory r or an output trajectory gamma.
struct Trajectory {
  std::vector<double> t;       // s, strictly increasing
  std::vector<Vec2> points;    // m
  std::optional<double> uniform_dt;  // set when t_i = i*dt

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  double duration() const { return t.empty() ? 0.0 : t.back(); }

  static Trajectory uniform(double dt, std::vector<Vec2> pts) {
    Trajectory tr;
    tr.points = std::move(pts);
    tr.t.resize(tr.points.size());
    for (std::size_t i = 0; i < tr.t.size(); ++i) tr.t[i] = static_cast<double>(i) * dt;
    tr.uniform_dt = dt;
    return tr;
  }

  void validate() const {
    if (t.size() != points.size()) throw Error("trajectory: |t| != |points|");
    for (std::size_t i = 1; i < t.size(); ++i)
      if (!(t[i] > t[i - 1])) throw Error("trajectory: timestamps not strictly increasing");
    if (uniform_dt) {
      for (std::size_t i = 0; i < t.size(); ++i)
        if (std::abs(t[i] - static_cast<double>(i) * *uniform_dt) > 1e-12)
          throw Error("trajectory: uniform grid violated");
    }
  }
};

inline std::string trajectory_to_csv(const Trajectory& tr, const std::string& header_comment = {}) {
  std::ostringstream out;
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "t_s,x_m,y_m\n";
  for (std::size_t i = 0; i < tr.size(); ++i) {
    out << io::format_double(tr.t[i]) << ',' << io::format_double(tr.points[i].x()) << ','
        << io::format_double(tr.points[i].y()) << '\n';
  }
  return out.str();
}

inline Trajectory trajectory_from_csv(const std::string& text) {
  Trajectory tr;
  std::istringstream in(text);
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line.rfind("t_s,", 0) != 0) throw IoError("trajectory csv: bad header: " + line);
      header_seen = true;
      continue;
    }
    double t, x, y;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &t, &x, &y) != 3)
      throw IoError("trajectory csv: bad row: " + line);
    tr.t.push_back(t);
    tr.points.emplace_back(x, y);
  }
  if (tr.size() >= 2) {
    const double dt = tr.t[1] - tr.t[0];
    bool uniform = true;
    for (std::size_t i = 0; i < tr.size(); ++i)
      if (std::abs(tr.t[i] - static_cast<double>(i) * dt) > 1e-12) { uniform = false; break; }
    if (uniform) tr.uniform_dt = dt;
  }
  tr.validate();
  return tr;
}

inline void save_trajectory_csv(const std::filesystem::path& path, const Trajectory& tr,
                                const std::string& header_comment = {}) {
  io::atomic_write(path, trajectory_to_csv(tr, header_comment));
}

inline Trajectory load_trajectory_csv(const std::filesystem::path& path) {
  return trajectory_from_csv(io::read_file(path));
}

}  // namespace precomp
