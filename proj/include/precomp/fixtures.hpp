#pragma once

#include "precomp/core.hpp"
#include "precomp/geometry.hpp"

#include <string>
#include <vector>

namespace precomp::fixtures {

/// Polyline path builder mixing straight segments and arcs.
class PathBuilder {
 public:
  explicit PathBuilder(const Vec2& start) { pts_.push_back(start); }

  PathBuilder& line_to(const Vec2& p) {
    pts_.push_back(p);
    return *this;
  }

  /// Circular arc about `center` from angle a0 to a1 (radians, signed sweep).
  PathBuilder& arc(const Vec2& center, double radius, double a0, double a1, int segments = 48) {
    for (int i = 1; i <= segments; ++i) {
      const double th = a0 + (a1 - a0) * i / segments;
      pts_.emplace_back(center.x() + radius * std::cos(th), center.y() + radius * std::sin(th));
    }
    return *this;
  }

  TargetGeometry closed() const { return TargetGeometry::from_vertices(pts_, true); }
  TargetGeometry open() const { return TargetGeometry::from_vertices(pts_, false); }

 private:
  std::vector<Vec2> pts_;
};

inline TargetGeometry line_segment(double length = 0.1) {
  return TargetGeometry::from_vertices({{-length / 2, 0.0}, {length / 2, 0.0}}, false);
}

inline TargetGeometry circle(double radius = 0.05, int n = 1024) {
  std::vector<Vec2> pts;
  pts.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double th = 2.0 * std::numbers::pi * i / n;
    pts.emplace_back(radius * std::cos(th), radius * std::sin(th));
  }
  return TargetGeometry::from_vertices(pts, true);
}

// Four glyph-like closed outlines with sharp corners, straight strokes and
// arcs of different curvature. Plays the role of held-out "letter" shapes;
// none of them appears in the training corpus.

/// U-channel: two straight walls joined by concentric semicircles.
inline TargetGeometry glyph_u() {
  const double w_out = 0.024, w_in = 0.010, top = 0.040, bot = -0.010;
  PathBuilder b(Vec2(-w_out, top));
  b.line_to({-w_out, bot});
  b.arc({0.0, bot}, w_out, std::numbers::pi, 2.0 * std::numbers::pi, 64);
  b.line_to({w_out, top});
  b.line_to({w_in, top});
  b.line_to({w_in, bot});
  b.arc({0.0, bot}, w_in, 0.0, std::numbers::pi, 40);
  b.line_to({-w_in, top});
  return b.closed();
}

/// Stem with a shoulder hook: straight bar plus a quarter-arc overhang.
inline TargetGeometry glyph_r() {
  const double bar_l = -0.026, bar_r = -0.010, top = 0.040, bot = -0.040;
  PathBuilder b(Vec2(bar_l, bot));
  b.line_to({bar_l, top});
  b.line_to({bar_r, top});
  b.line_to({bar_r, 0.016});
  b.arc({bar_r, -0.002}, 0.018, std::numbers::pi / 2.0, 0.0, 32);  // outer shoulder
  b.line_to({bar_r + 0.018, -0.010});
  b.line_to({bar_r + 0.007, -0.010});
  b.line_to({bar_r + 0.007, -0.002});
  b.arc({bar_r, -0.002}, 0.007, 0.0, std::numbers::pi / 2.0, 24);  // inner shoulder
  b.line_to({bar_r, 0.002});
  b.line_to({bar_r, bot});
  return b.closed();
}

/// Open ring: two concentric arcs joined by radial cuts (a crescent).
inline TargetGeometry glyph_c() {
  const double r_out = 0.032, r_in = 0.016, a0 = 0.6, a1 = 2.0 * std::numbers::pi - 0.6;
  PathBuilder b(Vec2(r_out * std::cos(a0), r_out * std::sin(a0)));
  b.arc(Vec2::Zero(), r_out, a0, a1, 96);
  b.line_to({r_in * std::cos(a1), r_in * std::sin(a1)});
  b.arc(Vec2::Zero(), r_in, a1, a0, 64);
  return b.closed();
}

/// Tall stem with an arched bump: mixes long straights with a half-circle.
inline TargetGeometry glyph_h() {
  const double stem_l = -0.028, stem_r = -0.014, top = 0.042, bot = -0.042;
  const double arch_r_out = 0.020, arch_r_in = 0.008, arch_y = 0.004;
  PathBuilder b(Vec2(stem_l, bot));
  b.line_to({stem_l, top});
  b.line_to({stem_r, top});
  b.line_to({stem_r, arch_y + 0.008});
  b.arc({stem_r + arch_r_out, arch_y}, arch_r_out, std::numbers::pi, 0.0, 48);  // outer arch
  b.line_to({stem_r + 2 * arch_r_out, bot});
  b.line_to({stem_r + 2 * arch_r_out - 0.012, bot});
  b.line_to({stem_r + 2 * arch_r_out - 0.012, arch_y});
  b.arc({stem_r + arch_r_out, arch_y}, arch_r_in, 0.0, std::numbers::pi, 32);  // inner arch
  b.line_to({stem_r + arch_r_out - arch_r_in, bot});
  b.line_to({stem_r, bot});
  return b.closed();
}

inline std::vector<TargetGeometry> glyph_set() {
  return {glyph_u(), glyph_r(), glyph_c(), glyph_h()};
}

/// Airfoil-like closed outline: 4-digit-style thickness polynomial over an
/// 0.14 m chord, a rectangular spar notch near the leading edge of the lower
/// surface, and a sharp trailing corner.
inline TargetGeometry airfoil() {
  const double chord = 0.14, thick = 0.12, camber = 0.03;
  auto half_thickness = [&](double xc) {
    return 5.0 * thick * chord *
           (0.2969 * std::sqrt(xc) - 0.1260 * xc - 0.3516 * xc * xc + 0.2843 * xc * xc * xc -
            0.1036 * xc * xc * xc * xc);  // closed trailing edge variant
  };
  auto camber_line = [&](double xc) { return camber * chord * (xc * (1.0 - xc)) * 4.0 * 0.25; };
  std::vector<Vec2> pts;
  const int n = 160;
  // Upper surface, trailing edge -> leading edge.
  for (int i = 0; i <= n; ++i) {
    const double u = static_cast<double>(i) / n;
    const double xc = 1.0 - u * u;  // cluster points near the leading edge
    pts.emplace_back(xc * chord - chord / 2.0, camber_line(xc) + half_thickness(xc));
  }
  // Lower surface, leading edge -> trailing edge, with the spar notch.
  const double notch_a = 0.05, notch_b = 0.12, notch_depth = 0.006;
  bool notch_done = false;
  for (int i = 1; i <= n; ++i) {
    const double u = static_cast<double>(i) / n;
    const double xc = u * u;
    if (!notch_done && xc >= notch_a) {
      auto lower = [&](double q) { return camber_line(q) - half_thickness(q); };
      pts.emplace_back(notch_a * chord - chord / 2.0, lower(notch_a));
      pts.emplace_back(notch_a * chord - chord / 2.0, lower(notch_a) - notch_depth);
      pts.emplace_back(notch_b * chord - chord / 2.0, lower(notch_b) - notch_depth);
      pts.emplace_back(notch_b * chord - chord / 2.0, lower(notch_b));
      notch_done = true;
    }
    if (notch_done && xc > notch_a && xc < notch_b) continue;
    pts.emplace_back(xc * chord - chord / 2.0, camber_line(xc) - half_thickness(xc));
  }
  return TargetGeometry::from_vertices(pts, true);
}

struct NamedFixture {
  std::string name;
  TargetGeometry geometry;
};

inline std::vector<NamedFixture> benchmark_set() {
  return {{"glyph_u", glyph_u()},
          {"glyph_r", glyph_r()},
          {"glyph_c", glyph_c()},
          {"glyph_h", glyph_h()},
          {"airfoil", airfoil()}};
}

inline TargetGeometry by_name(const std::string& name) {
  if (name == "circle") return circle();
  if (name == "line") return line_segment();
  if (name == "glyph_u") return glyph_u();
  if (name == "glyph_r") return glyph_r();
  if (name == "glyph_c") return glyph_c();
  if (name == "glyph_h") return glyph_h();
  if (name == "airfoil") return airfoil();
  throw Error("unknown fixture: " + name);
}

}  // namespace precomp::fixtures
