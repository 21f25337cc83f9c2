#pragma once

#include <array>
#include <cmath>
#include <optional>

#include "detach/simd/kernels.hpp"

namespace detach::sim {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

inline double dist2d(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }
inline double dist3d(Vec3 a, Vec3 b) { return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) + (a.z - b.z) * (a.z - b.z)); }
inline Vec2 xy(Vec3 v) { return {v.x, v.y}; }

// Box rotated about the vertical axis. `center` is the bounding-box center,
// `extents` are full side lengths in the box frame.
struct OrientedBox {
  Vec3 center;
  Vec3 extents;
  double yaw = 0.0;

  double bottom() const { return center.z - 0.5 * extents.z; }
  double top() const { return center.z + 0.5 * extents.z; }

  // Ground-plane footprint for the vector kernels.
  simd::BoxFootprint footprint() const {
    return {center.x, center.y, std::cos(yaw), std::sin(yaw), 0.5 * extents.x, 0.5 * extents.y, top()};
  }

  bool contains_xy(Vec2 p) const;
  std::array<Vec2, 4> corners() const;
};

// First hit of a ray with the box (slab test in the box frame). Returns the
// ray parameter of the entry point.
std::optional<double> ray_box(Vec3 origin, Vec3 dir, const OrientedBox& box);

// Height of the first surface hit by a vertical ray cast down from `from_z`.
std::optional<double> raycast_down(Vec2 p, double from_z, const OrientedBox& box);

// Rotates a local offset by yaw.
inline Vec2 rotate(Vec2 v, double yaw) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

inline double wrap_angle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a < 0) a += 2.0 * M_PI;
  return a - M_PI;
}

}  // namespace detach::sim
