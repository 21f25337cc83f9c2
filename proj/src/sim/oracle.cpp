#include "detach/sim/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace detach::sim {
namespace {

// Largest rise along a segment measured against the lowest support within
// the trailing `window` metres (one control step covers at most that much).
double max_rise(const Env& env, Vec2 a, Vec2 b, double start_h, double window) {
  const double len = dist2d(a, b);
  const int n = std::max(1, static_cast<int>(std::ceil(len / 0.01)));
  const int back = std::max(1, static_cast<int>(std::ceil(window / std::max(len / n, 1e-9))));
  std::vector<double> h(static_cast<std::size_t>(n) + 1);
  h[0] = start_h;
  double rise = 0.0;
  for (int i = 1; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    h[static_cast<std::size_t>(i)] = env.support({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
    double lo = h[static_cast<std::size_t>(i)];
    for (int j = std::max(0, i - back); j < i; ++j) lo = std::min(lo, h[static_cast<std::size_t>(j)]);
    rise = std::max(rise, h[static_cast<std::size_t>(i)] - lo);
  }
  return rise;
}

}  // namespace

std::vector<Vec2> plan_path(const Env& env, Vec2 from, Vec2 to, double res) {
  const auto& b = env.scene().bounds;
  const int nx = static_cast<int>(std::floor((b[2] - b[0]) / res));
  const int ny = static_cast<int>(std::floor((b[3] - b[1]) / res));
  if (nx <= 0 || ny <= 0) return {};
  auto center = [&](int i, int j) { return Vec2{b[0] + (i + 0.5) * res, b[1] + (j + 0.5) * res}; };
  auto cell = [&](Vec2 p) {
    return std::pair<int, int>{std::clamp(static_cast<int>(std::floor((p.x - b[0]) / res)), 0, nx - 1),
                               std::clamp(static_cast<int>(std::floor((p.y - b[1]) / res)), 0, ny - 1)};
  };
  const double limit = env.params().max_step_up;
  const double window = env.params().max_speed * std::sqrt(2.0) * env.params().dt;
  const auto [si, sj] = cell(from);
  const auto [gi, gj] = cell(to);
  const std::size_t n = static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny);
  auto id = [&](int i, int j) { return static_cast<std::size_t>(i) * static_cast<std::size_t>(ny) + static_cast<std::size_t>(j); };
  std::vector<double> g(n, std::numeric_limits<double>::infinity());
  std::vector<double> height(n, std::numeric_limits<double>::quiet_NaN());
  std::vector<std::size_t> parent(n, n);
  std::vector<char> closed(n, 0);
  auto h_of = [&](int i, int j) {
    double& h = height[id(i, j)];
    if (std::isnan(h)) h = env.support(center(i, j));
    return h;
  };
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  const Vec2 goal_c = center(gi, gj);
  const double start_h = env.support(from);
  if (max_rise(env, from, center(si, sj), start_h, window) > limit) return {};
  g[id(si, sj)] = 0.0;
  open.push({dist2d(center(si, sj), goal_c), id(si, sj)});
  bool found = false;
  while (!open.empty()) {
    const auto [f, cur] = open.top();
    open.pop();
    if (closed[cur]) continue;
    closed[cur] = 1;
    const int ci = static_cast<int>(cur / static_cast<std::size_t>(ny));
    const int cj = static_cast<int>(cur % static_cast<std::size_t>(ny));
    if (ci == gi && cj == gj) {
      found = true;
      break;
    }
    const Vec2 cp = center(ci, cj);
    const double ch = h_of(ci, cj);
    for (int di = -1; di <= 1; ++di) {
      for (int dj = -1; dj <= 1; ++dj) {
        if (di == 0 && dj == 0) continue;
        const int ni = ci + di, nj = cj + dj;
        if (ni < 0 || nj < 0 || ni >= nx || nj >= ny) continue;
        const std::size_t nid = id(ni, nj);
        if (closed[nid]) continue;
        const Vec2 np = center(ni, nj);
        const double nh = h_of(ni, nj);
        const double step = dist2d(cp, np);
        const double cost = g[cur] + step + 2.0 * std::fabs(nh - ch);
        if (cost >= g[nid]) continue;
        if (max_rise(env, cp, np, ch, window) > limit) continue;
        g[nid] = cost;
        parent[nid] = cur;
        open.push({cost + dist2d(np, goal_c), nid});
      }
    }
  }
  if (!found) return {};
  std::vector<Vec2> cells;
  for (std::size_t c = id(gi, gj); c != n; c = parent[c]) {
    cells.push_back(center(static_cast<int>(c / static_cast<std::size_t>(ny)), static_cast<int>(c % static_cast<std::size_t>(ny))));
  }
  std::reverse(cells.begin(), cells.end());
  std::vector<Vec2> path{from};
  for (std::size_t k = 0; k < cells.size(); ++k) {
    if (k > 0 && k + 1 < cells.size()) {
      const Vec2 a = cells[k - 1], m = cells[k], c = cells[k + 1];
      const double cross = (m.x - a.x) * (c.y - m.y) - (m.y - a.y) * (c.x - m.x);
      if (std::fabs(cross) < 1e-12) continue;
    }
    path.push_back(cells[k]);
  }
  if (max_rise(env, path.back(), to, env.support(path.back()), window) <= limit) path.push_back(to);
  return path;
}

void ScriptedOracle::reset(const Env& env, std::uint64_t) {
  key_.reset();
  path_.clear();
  wp_ = 0;
  heading_ = env.agent().yaw;
  stuck_ = 0;
  last_ = env.agent().xy;
}

bool ScriptedOracle::replan(const Env& env, Vec2 goal) {
  goal_ = goal;
  path_ = plan_path(env, env.agent().xy, goal);
  wp_ = 0;
  stuck_ = 0;
  if (path_.empty()) path_ = {env.agent().xy, goal};
  return true;
}

Vec2 ScriptedOracle::follow(const Env& env, double speed) {
  const Vec2 pos = env.agent().xy;
  while (wp_ < path_.size() && dist2d(pos, path_[wp_]) < 1e-6) ++wp_;
  if (wp_ >= path_.size()) return {0.0, 0.0};
  const Vec2 t = path_[wp_];
  const double d = dist2d(pos, t);
  const double dt = env.params().dt;
  const double s = std::min(speed, d / dt);
  return {(t.x - pos.x) / d * s, (t.y - pos.y) / d * s};
}

void ScriptedOracle::drive(const Env& env, Vec2 v_world, std::span<double> action) const {
  const Vec2 l = rotate(v_world, -env.agent().yaw);
  action[0] = std::clamp(l.x / env.params().max_speed, -1.0, 1.0);
  action[1] = std::clamp(l.y / env.params().max_speed, -1.0, 1.0);
}

std::optional<double> ScriptedOracle::pick_heading(const Env& env, Vec2 object, std::vector<Vec2>& path) {
  const double reach = env.params().hand_reach;
  const double yaw0 = env.agent().yaw;
  for (double off : {0.0, M_PI / 2, -M_PI / 2, M_PI}) {
    const double yaw = wrap_angle(yaw0 + off);
    const Vec2 root{object.x - reach * std::cos(yaw), object.y - reach * std::sin(yaw)};
    if (!env.scene().in_bounds(root)) continue;
    // Stand on the level the object rests on so the hand lines up with it.
    const auto obj = static_cast<std::size_t>(env.carry_object());
    const double base = env.object_pose(obj).position.z - 0.5 * env.scene().objects[obj].extents.z;
    if (std::fabs(env.support(root) - base) > 0.05) continue;
    auto p = plan_path(env, env.agent().xy, root);
    if (!p.empty() && dist2d(p.back(), root) < 1e-9) {
      path = std::move(p);
      return yaw;
    }
  }
  return std::nullopt;
}

void ScriptedOracle::act(const Env& env, std::span<const double>, std::span<double> action) {
  std::fill(action.begin(), action.end(), 0.0);
  if (env.done()) return;
  const auto& p = env.params();
  const Agent& ag = env.agent();
  const Skill skill = env.scene().plan.skills[env.subtask()];
  const Key key{env.subtask(), env.phase(), env.grasped()};
  const bool fresh = !key_ || !(*key_ == key);
  key_ = key;

  // Hold the pelvis at its default height unless sitting.
  double pelvis_target = p.pelvis_default;
  Vec2 v{0.0, 0.0};

  if (dist2d(ag.xy, last_) < 1e-6) ++stuck_;
  else stuck_ = 0;
  last_ = ag.xy;

  switch (skill) {
    case Skill::kTraj: {
      const Trajectory& tr = *env.current_trajectory();
      if (env.phase() == Phase::kActive) {
        const Vec2 t = tr.at(env.traj_clock() + p.dt);
        v = {(t.x - ag.xy.x) / p.dt, (t.y - ag.xy.y) / p.dt};
      } else {
        if (fresh || stuck_ > 10) replan(env, tr.start());
        v = follow(env, p.max_speed);
      }
      break;
    }
    case Skill::kCarry: {
      if (!env.grasped()) {
        const Vec3 obj = env.object_pose(static_cast<std::size_t>(env.carry_object())).position;
        if (fresh || stuck_ > 10) {
          std::vector<Vec2> path;
          if (auto yaw = pick_heading(env, xy(obj), path)) {
            heading_ = *yaw;
            path_ = std::move(path);
            wp_ = 0;
          } else {
            heading_ = ag.yaw;
            replan(env, xy(obj));
          }
          stuck_ = 0;
        }
        const double dyaw = wrap_angle(heading_ - ag.yaw);
        if (std::fabs(dyaw) > 1e-6) {
          action[2] = std::clamp(dyaw / (p.max_yaw_rate * p.dt), -1.0, 1.0);
          stuck_ = 0;
        } else {
          v = follow(env, p.max_speed);
        }
      } else {
        const Vec3 goal = env.carry_goal();
        if (fresh || stuck_ > 10) {
          replan(env, {goal.x - p.hand_reach * std::cos(ag.yaw), goal.y - p.hand_reach * std::sin(ag.yaw)});
        }
        v = follow(env, 0.9 * p.object_speed_threshold);
      }
      break;
    }
    case Skill::kClimb:
    case Skill::kSit: {
      const Vec3 goal = env.current_goal();
      if (fresh || stuck_ > 10) replan(env, xy(goal));
      v = follow(env, p.max_speed);
      if (skill == Skill::kSit && dist2d(ag.xy, xy(goal)) < 0.05) pelvis_target = goal.z - ag.foot_z;
      break;
    }
  }
  drive(env, v, action);
  action[3] = std::clamp((pelvis_target - ag.pelvis) / (p.pelvis_rate * p.dt), -1.0, 1.0);
}

}  // namespace detach::sim
