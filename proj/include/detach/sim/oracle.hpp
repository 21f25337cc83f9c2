#pragma once

#include <optional>
#include <vector>

#include "detach/sim/episode.hpp"

namespace detach::sim {

// A* over a 0.1 m grid of the scene bounds. Edges are rejected when walking
// them would need a rise above max_step_up within one control step. The
// returned polyline starts at `from`, ends at `to` and has collinear runs
// merged. Empty when no route exists.
std::vector<Vec2> plan_path(const Env& env, Vec2 from, Vec2 to, double resolution = 0.1);

// Privileged waypoint controller: tracks trajectories directly and walks
// planned routes for carry / climb / sit. Used to show that every task is
// solvable and as a reference policy.
class ScriptedOracle : public Controller {
 public:
  void reset(const Env& env, std::uint64_t seed) override;
  void act(const Env& env, std::span<const double> obs, std::span<double> action) override;

 private:
  struct Key {
    std::size_t subtask = 0;
    Phase phase = Phase::kDone;
    bool grasped = false;
    bool operator==(const Key&) const = default;
  };

  bool replan(const Env& env, Vec2 goal);
  Vec2 follow(const Env& env, double speed);
  void drive(const Env& env, Vec2 v_world, std::span<double> action) const;
  std::optional<double> pick_heading(const Env& env, Vec2 object, std::vector<Vec2>& path);

  std::optional<Key> key_;
  std::vector<Vec2> path_;
  std::size_t wp_ = 0;
  double heading_ = 0.0;
  int stuck_ = 0;
  Vec2 last_;
  Vec2 goal_;
};

}  // namespace detach::sim
