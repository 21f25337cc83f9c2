#include "detach/sim/geometry.hpp"

#include <algorithm>
#include <limits>

namespace detach::sim {

bool OrientedBox::contains_xy(Vec2 p) const {
  // Same operation order as the box_max_height kernels.
  const double c = std::cos(yaw), s = std::sin(yaw);
  const double dx = p.x - center.x, dy = p.y - center.y;
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return std::fabs(lx) <= 0.5 * extents.x && std::fabs(ly) <= 0.5 * extents.y;
}

std::array<Vec2, 4> OrientedBox::corners() const {
  std::array<Vec2, 4> out;
  const double hx = 0.5 * extents.x, hy = 0.5 * extents.y;
  const Vec2 local[4] = {{-hx, -hy}, {hx, -hy}, {hx, hy}, {-hx, hy}};
  for (int i = 0; i < 4; ++i) {
    const Vec2 r = rotate(local[i], yaw);
    out[i] = {center.x + r.x, center.y + r.y};
  }
  return out;
}

std::optional<double> ray_box(Vec3 origin, Vec3 dir, const OrientedBox& box) {
  // Move the ray into the box frame, then intersect the three slabs.
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double dx = origin.x - box.center.x, dy = origin.y - box.center.y;
  const double o[3] = {c * dx + s * dy, -s * dx + c * dy, origin.z - box.center.z};
  const double d[3] = {c * dir.x + s * dir.y, -s * dir.x + c * dir.y, dir.z};
  const double h[3] = {0.5 * box.extents.x, 0.5 * box.extents.y, 0.5 * box.extents.z};
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (std::fabs(o[a]) > h[a]) return std::nullopt;
      continue;
    }
    double ta = (-h[a] - o[a]) / d[a];
    double tb = (h[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  return t0;
}

std::optional<double> raycast_down(Vec2 p, double from_z, const OrientedBox& box) {
  if (from_z < box.top()) from_z = box.top() + 1.0;
  const auto t = ray_box({p.x, p.y, from_z}, {0.0, 0.0, -1.0}, box);
  if (!t) return std::nullopt;
  // Vertical rays enter through the top face; snap away the subtraction error.
  const double z = from_z - *t;
  return std::fabs(z - box.top()) < 1e-9 ? box.top() : z;
}

}  // namespace detach::sim
