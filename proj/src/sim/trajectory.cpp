#include "detach/sim/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace detach::sim {

void TrajectoryParams::validate() const {
  auto bad = [](const char* field, const char* what) {
    throw std::invalid_argument(std::string("trajectory.") + field + ": " + what);
  };
  if (points < 2) bad("points", "need at least 2");
  if (!(dt > 0)) bad("dt", "must be positive");
  if (!(v_min > 0) || !(v_max >= v_min)) bad("v_min", "need 0 < v_min <= v_max");
  if (!(max_accel > 0)) bad("max_accel", "must be positive");
  if (!(turn_sigma >= 0) || !(turn_clip >= 0)) bad("turn_sigma", "must be non-negative");
  if (!(sharp_prob >= 0 && sharp_prob <= 1)) bad("sharp_prob", "must lie in [0, 1]");
}

Vec2 Trajectory::at(double t) const {
  if (points.empty()) return {};
  if (t <= times.front()) return points.front();
  if (t >= times.back()) return points.back();
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  const std::size_t k = static_cast<std::size_t>(it - times.begin());
  const double a = (t - times[k - 1]) / (times[k] - times[k - 1]);
  return {points[k - 1].x + a * (points[k].x - points[k - 1].x), points[k - 1].y + a * (points[k].y - points[k - 1].y)};
}

double Trajectory::initial_heading() const {
  if (points.size() < 2) return 0.0;
  return std::atan2(points[1].y - points[0].y, points[1].x - points[0].x);
}

Trajectory gen_trajectory(std::mt19937_64& rng, Vec2 start, double heading, const TrajectoryParams& p) {
  p.validate();
  std::uniform_real_distribution<double> speed(p.v_min, p.v_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, p.turn_sigma);
  Trajectory tr;
  tr.points.push_back(start);
  tr.times.push_back(0.0);
  double v_prev = speed(rng);
  double h = heading;
  for (int k = 1; k < p.points; ++k) {
    double v = v_prev;
    if (k > 1) {
      double turn;
      const bool sharp = unit(rng) < p.sharp_prob;
      if (sharp) {
        turn = unit(rng) < 0.5 ? -p.sharp_angle : p.sharp_angle;
      } else {
        turn = std::clamp(noise(rng), -p.turn_clip, p.turn_clip);
      }
      tr.turns.push_back(turn);
      tr.sharp.push_back(sharp);
      h += turn;
      const double dv = p.max_accel * p.dt;
      v = std::clamp(speed(rng), v_prev - dv, v_prev + dv);
    }
    const Vec2 last = tr.points.back();
    tr.points.push_back({last.x + v * p.dt * std::cos(h), last.y + v * p.dt * std::sin(h)});
    tr.times.push_back(k * p.dt);
    v_prev = v;
  }
  return tr;
}

Trajectory timed_trajectory(const std::vector<Vec2>& points, double speed) {
  if (points.size() < 2) throw std::invalid_argument("timed_trajectory: need at least 2 points");
  if (!(speed > 0)) throw std::invalid_argument("timed_trajectory: speed must be positive");
  Trajectory tr;
  tr.points = points;
  tr.times.push_back(0.0);
  for (std::size_t k = 1; k < points.size(); ++k) {
    const double len = dist2d(points[k - 1], points[k]);
    if (!(len > 0)) throw std::invalid_argument("timed_trajectory: repeated waypoint");
    tr.times.push_back(tr.times.back() + len / speed);
    if (k + 1 < points.size()) {
      const double h0 = std::atan2(points[k].y - points[k - 1].y, points[k].x - points[k - 1].x);
      const double h1 = std::atan2(points[k + 1].y - points[k].y, points[k + 1].x - points[k].x);
      tr.turns.push_back(wrap_angle(h1 - h0));
      tr.sharp.push_back(false);
    }
  }
  return tr;
}

}  // namespace detach::sim
