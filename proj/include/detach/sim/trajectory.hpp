#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "detach/sim/geometry.hpp"

namespace detach::sim {

struct TrajectoryParams {
  int points = 10;
  double dt = 0.5;  // waypoint spacing (s)
  double v_min = 1.4;
  double v_max = 1.5;
  double max_accel = 2.0;
  double turn_sigma = 0.1;  // small heading noise (rad), clipped to +-turn_clip
  double turn_clip = 0.3;
  double sharp_prob = 0.02;
  double sharp_angle = 1.57;

  // Throws std::invalid_argument outside the supported ranges.
  void validate() const;
};

// Time-indexed polyline. points[k] is reached at times[k].
struct Trajectory {
  std::vector<Vec2> points;
  std::vector<double> times;
  std::vector<double> turns;  // heading change before segment k+1, size = segments - 1
  std::vector<bool> sharp;    // turn k was a sharp event

  double duration() const { return times.empty() ? 0.0 : times.back(); }
  Vec2 start() const { return points.front(); }
  Vec2 end() const { return points.back(); }
  // Clamped to [0, duration].
  Vec2 at(double t) const;
  double initial_heading() const;
};

Trajectory gen_trajectory(std::mt19937_64& rng, Vec2 start, double heading, const TrajectoryParams& params = {});

// Constant-speed timing of a fixed polyline.
Trajectory timed_trajectory(const std::vector<Vec2>& points, double speed);

}  // namespace detach::sim
