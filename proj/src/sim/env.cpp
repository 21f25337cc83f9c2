#include "detach/sim/env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace detach::sim {
namespace {

double clamp1(double v) { return std::clamp(v, -1.0, 1.0); }

}  // namespace

std::string termination_name(Termination t) {
  switch (t) {
    case Termination::kNone: return "none";
    case Termination::kCompleted: return "completed";
    case Termination::kFall: return "fall";
    case Termination::kTimeout: return "timeout";
    case Termination::kTrajFailure: return "traj_failure";
  }
  return "none";
}

bool EpisodeResult::lh_success() const {
  if (outcomes.empty()) return false;
  return std::all_of(outcomes.begin(), outcomes.end(), [](double o) { return o == 1.0; });
}

void enforce_sequential(std::vector<double>& outcomes) {
  bool failed = false;
  for (double& o : outcomes) {
    if (failed) o = 0.0;
    else if (o != 1.0) failed = true;
  }
}

double point_box_distance(Vec3 p, const OrientedBox& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double dx = p.x - box.center.x, dy = p.y - box.center.y;
  const double l[3] = {c * dx + s * dy, -s * dx + c * dy, p.z - box.center.z};
  const double h[3] = {0.5 * box.extents.x, 0.5 * box.extents.y, 0.5 * box.extents.z};
  double d2 = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double e = std::max(0.0, std::fabs(l[a]) - h[a]);
    d2 += e * e;
  }
  return std::sqrt(d2);
}

bool sit_reached(Vec3 pelvis, Vec3 sit_target, double xy_tol, double z_tol) {
  return dist2d(xy(pelvis), xy(sit_target)) <= xy_tol && std::fabs(pelvis.z - sit_target.z) <= z_tol;
}

bool climb_reached(Vec3 pelvis, const OrientedBox& footprint, double target_z) {
  return footprint.contains_xy(xy(pelvis)) && pelvis.z >= target_z;
}

double subtask_success(const std::vector<StateSample>& h, const SubtaskTarget& t) {
  if (h.empty()) return 0.0;
  switch (t.skill) {
    case Skill::kTraj: {
      if (t.trajectory == nullptr) throw std::invalid_argument("subtask_success: traj target without trajectory");
      for (const auto& s : h) {
        if (dist2d(xy(s.pelvis), t.trajectory->at(s.t)) > t.threshold) return 0.0;
      }
      return dist2d(xy(h.back().pelvis), t.trajectory->end()) <= t.threshold ? 1.0 : 0.0;
    }
    case Skill::kCarry: {
      bool grasped = false;
      for (const auto& s : h) {
        grasped = grasped || s.grasped;
        if (grasped && !s.carrying && dist2d(xy(s.object), xy(t.point)) <= t.threshold) return 1.0;
      }
      return grasped ? 0.5 : 0.0;
    }
    case Skill::kClimb:
      for (const auto& s : h) {
        if (climb_reached(s.pelvis, t.footprint, t.point.z)) return 1.0;
      }
      return 0.0;
    case Skill::kSit:
      for (const auto& s : h) {
        if (sit_reached(s.pelvis, t.point, t.sit_xy_tol, t.sit_z_tol)) return 1.0;
      }
      return 0.0;
  }
  throw std::invalid_argument("subtask_success: unknown subtask");
}

Env::Env(std::shared_ptr<const SceneSpec> scene, SimParams params) : scene_(std::move(scene)), params_(params) {
  if (!scene_) throw std::invalid_argument("Env: null scene");
  validate_plan(*scene_);
  params_.traj.validate();
}

const Trajectory& Env::trajectory(const std::string& id) const {
  for (std::size_t i = 0; i < scene_->trajectories.size(); ++i) {
    if (scene_->trajectories[i].id == id) return trajs_.at(i);
  }
  throw std::out_of_range("Env: unknown trajectory " + id);
}

void Env::rebuild_parts() {
  parts_.clear();
  part_owner_.clear();
  for (std::size_t i = 0; i < scene_->objects.size(); ++i) {
    for (const auto& b : scene_->objects[i].part_boxes(poses_[i])) {
      parts_.push_back(b.footprint());
      part_owner_.push_back(static_cast<int>(i));
    }
  }
}

double Env::support(Vec2 p, int exclude) const {
  const auto& k = simd::kernels();
  double h = 0.0;
  for (std::size_t i = 0; i < parts_.size(); ++i) {
    const int owner = part_owner_[i];
    if (owner == exclude || owner == agent_.carried) continue;
    k.box_max_height(&p.x, &p.y, &h, 1, parts_[i]);
  }
  return h;
}

void Env::reset(std::uint64_t seed, Mode mode) {
  mode_ = mode;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(-M_PI, M_PI);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  poses_.clear();
  for (const auto& o : scene_->objects) poses_.push_back(o.pose);
  trajs_.clear();
  for (const auto& t : scene_->trajectories) {
    if (t.random) trajs_.push_back(gen_trajectory(rng, t.start, angle(rng), params_.traj));
    else trajs_.push_back(timed_trajectory(t.points, t.speed));
  }
  agent_ = Agent{};
  agent_.pelvis = params_.pelvis_default;
  const auto& plan = scene_->plan;
  Vec2 start = scene_->start;
  agent_.yaw = scene_->start_yaw;
  if (plan.skills.front() == Skill::kTraj) {
    const auto& tr = trajectory(plan.sources.front());
    start = tr.start();
    agent_.yaw = tr.initial_heading();
  }
  const double jx = unit(rng), jy = unit(rng);
  agent_.xy = {start.x + scene_->start_jitter * jx, start.y + scene_->start_jitter * jy};
  rebuild_parts();
  agent_.foot_z = support(agent_.xy);

  result_ = EpisodeResult{};
  result_.skills = plan.skills;
  result_.outcomes.assign(plan.skills.size(), 0.0);
  result_.durations.assign(plan.skills.size(), 0.0);
  steps_ = 0;
  k_ = 0;
  done_ = false;
  begin_subtask();
}

int Env::skill_timeout() const {
  return std::max(1, scene_->episode_steps / static_cast<int>(scene_->plan.skills.size()));
}

const Trajectory* Env::current_trajectory() const {
  if (done_ && k_ >= scene_->plan.skills.size()) return nullptr;
  if (scene_->plan.skills[k_] != Skill::kTraj) return nullptr;
  return &trajectory(scene_->plan.sources[k_]);
}

int Env::carry_object() const {
  if (k_ >= scene_->plan.skills.size() || scene_->plan.skills[k_] != Skill::kCarry) return -1;
  return scene_->plan.target_indices[k_];
}

Vec3 Env::carry_goal() const { return carry_target(*scene_, k_); }

int Env::interact_object() const {
  if (k_ >= scene_->plan.skills.size()) return -1;
  const Skill s = scene_->plan.skills[k_];
  if (s != Skill::kClimb && s != Skill::kSit) return -1;
  return std::stoi(scene_->plan.sources[k_].substr(6));
}

Vec3 Env::hand() const {
  return {agent_.xy.x + params_.hand_reach * std::cos(agent_.yaw), agent_.xy.y + params_.hand_reach * std::sin(agent_.yaw),
          agent_.pelvis_z() - params_.hand_drop};
}

Vec3 Env::current_goal() const {
  if (k_ >= scene_->plan.skills.size()) return agent_.pelvis_pos();
  switch (scene_->plan.skills[k_]) {
    case Skill::kTraj: {
      const Trajectory& tr = *current_trajectory();
      const Vec2 p = phase_ == Phase::kActive ? tr.at(traj_clock()) : tr.start();
      return {p.x, p.y, agent_.pelvis_z()};
    }
    case Skill::kCarry: {
      if (grasped_) return carry_goal();
      return poses_[static_cast<std::size_t>(carry_object())].position;
    }
    case Skill::kClimb: {
      const auto obj = static_cast<std::size_t>(interact_object());
      return scene_->objects[obj].climb_target(poses_[obj]);
    }
    case Skill::kSit: {
      const auto obj = static_cast<std::size_t>(interact_object());
      return scene_->objects[obj].sit_target(poses_[obj]);
    }
  }
  return agent_.pelvis_pos();
}

void Env::begin_subtask() {
  skill_steps_ = 0;
  transition_steps_ = 0;
  active_steps_ = 0;
  traj_ok_ = true;
  grasped_ = false;
  grasp_count_ = 0;
  phase_ = Phase::kActive;
  if (scene_->plan.skills[k_] == Skill::kTraj) {
    phase_ = Phase::kTransition;
    if (dist2d(agent_.xy, current_trajectory()->start()) <= scene_->plan.success_threshold) phase_ = Phase::kActive;
  }
  prev_dist_ = progress_distance();
}

double Env::progress_distance() const {
  if (k_ >= scene_->plan.skills.size()) return 0.0;
  const Vec3 pel = agent_.pelvis_pos();
  switch (scene_->plan.skills[k_]) {
    case Skill::kTraj:
      return phase_ == Phase::kTransition ? dist2d(agent_.xy, current_trajectory()->start()) : 0.0;
    case Skill::kCarry: {
      const auto& obj = poses_[static_cast<std::size_t>(carry_object())].position;
      if (grasped_) return dist2d(xy(obj), xy(carry_goal()));
      return dist2d(xy(hand()), xy(obj));
    }
    case Skill::kClimb: {
      const Vec3 g = current_goal();
      return dist2d(xy(pel), xy(g)) + std::max(0.0, g.z - pel.z);
    }
    case Skill::kSit: {
      const Vec3 g = current_goal();
      return dist2d(xy(pel), xy(g)) + std::fabs(g.z - pel.z);
    }
  }
  return 0.0;
}

double Env::object_rest_z(int obj) const {
  const auto& o = scene_->objects[static_cast<std::size_t>(obj)];
  const OrientedBox b = o.bbox(poses_[static_cast<std::size_t>(obj)]);
  double s = support(xy(b.center), obj);
  for (const auto& c : b.corners()) s = std::max(s, support(c, obj));
  return s + 0.5 * o.extents.z;
}

void Env::finish_subtask(double outcome, StepResult& r) {
  result_.outcomes[k_] = outcome;
  r.events.subtask_finished = static_cast<int>(k_);
  r.reward += params_.subtask_bonus;
  ++k_;
  if (k_ == scene_->plan.skills.size()) {
    done_ = true;
    phase_ = Phase::kDone;
    r.done = true;
    r.cause = Termination::kCompleted;
    return;
  }
  begin_subtask();
}

void Env::fail_episode(double outcome, Termination cause, StepResult& r) {
  result_.outcomes[k_] = outcome;
  enforce_sequential(result_.outcomes);
  r.events.subtask_finished = static_cast<int>(k_);
  done_ = true;
  phase_ = Phase::kDone;
  r.done = true;
  r.cause = cause;
  if (cause == Termination::kFall) r.events.fall = true;
  if (cause == Termination::kTimeout) r.events.timeout = true;
  if (cause == Termination::kTrajFailure) r.events.traj_failure = true;
}

StepResult Env::step(std::span<const double> action) {
  if (done_) throw std::logic_error("Env::step: episode is over; call reset()");
  if (action.size() != static_cast<std::size_t>(kActionDim)) {
    throw std::invalid_argument("Env::step: action has " + std::to_string(action.size()) + " entries, expected " +
                                std::to_string(kActionDim));
  }
  for (double a : action) {
    if (!std::isfinite(a)) throw std::invalid_argument("Env::step: non-finite action");
  }
  StepResult r;
  const double dt = params_.dt;
  std::array<double, kActionDim> a;
  for (int i = 0; i < kActionDim; ++i) a[i] = clamp1(action[i]);

  // Root motion; a rise above max_step_up blocks the move.
  const Vec2 v_world = rotate({a[0] * params_.max_speed, a[1] * params_.max_speed}, agent_.yaw);
  const Vec2 target{agent_.xy.x + v_world.x * dt, agent_.xy.y + v_world.y * dt};
  const Vec2 before = agent_.xy;
  if (scene_->in_bounds(target)) {
    const double s = support(target);
    if (s - agent_.foot_z > params_.max_step_up) {
      r.events.blocked = true;
    } else {
      agent_.xy = target;
      agent_.foot_z = s;
    }
  } else {
    r.events.blocked = true;
  }
  const Vec2 moved = rotate({(agent_.xy.x - before.x) / dt, (agent_.xy.y - before.y) / dt}, -agent_.yaw);
  agent_.vel_local = moved;
  agent_.yaw_rate = a[2] * params_.max_yaw_rate;
  agent_.yaw = wrap_angle(agent_.yaw + agent_.yaw_rate * dt);
  agent_.pelvis = std::clamp(agent_.pelvis + a[3] * params_.pelvis_rate * dt, 0.0, params_.pelvis_max);

  double power = 0.0;
  for (int j = 0; j < kJoints; ++j) {
    const double qn = std::clamp(agent_.q[j] + a[kRootControls + j] * params_.joint_speed * dt, -params_.joint_limit,
                                 params_.joint_limit);
    agent_.qdot[j] = (qn - agent_.q[j]) / dt;
    agent_.q[j] = qn;
    power += std::fabs(a[kRootControls + j] * agent_.qdot[j]);
  }
  r.power_penalty = params_.power_coeff * power;
  r.reward -= r.power_penalty;

  if (agent_.carried >= 0) {
    const auto obj = static_cast<std::size_t>(agent_.carried);
    const Vec3 old = poses_[obj].position;
    const Vec3 h = hand();
    poses_[obj].position = {h.x, h.y, std::max(h.z, agent_.foot_z + 0.5 * scene_->objects[obj].extents.z)};
    const double speed = dist3d(old, poses_[obj].position) / dt;
    r.object_penalty = params_.object_speed_coeff * std::max(0.0, speed - params_.object_speed_threshold);
    r.reward -= r.object_penalty;
  }

  ++steps_;
  ++skill_steps_;
  result_.durations[k_] += dt;

  const auto& plan = scene_->plan;
  const double thr = plan.success_threshold;
  const Skill skill = plan.skills[k_];

  if (agent_.pelvis_z() < params_.fall_height) {
    fail_episode(skill == Skill::kCarry && grasped_ ? 0.5 : 0.0, Termination::kFall, r);
  } else if (skill == Skill::kTraj) {
    const Trajectory& tr = *current_trajectory();
    if (phase_ == Phase::kTransition) {
      ++transition_steps_;
      const double d = dist2d(agent_.xy, tr.start());
      r.reward += clamp1((prev_dist_ - d) / (params_.progress_speed * dt));
      prev_dist_ = d;
      const int limit = mode_ == Mode::kTrain ? plan.max_transition_train : plan.max_transition_test;
      if (d <= thr) phase_ = Phase::kActive;
      else if (transition_steps_ >= limit) fail_episode(0.0, Termination::kTimeout, r);
    } else {
      ++active_steps_;
      const double t = traj_clock();
      const double d = dist2d(agent_.xy, tr.at(t));
      r.reward += std::exp(-params_.traj_kernel * d * d);
      if (d > thr) traj_ok_ = false;
      if (d > params_.traj_fail_distance) {
        fail_episode(0.0, Termination::kTrajFailure, r);
      } else if (t >= tr.duration() - 1e-9) {
        const bool ok = traj_ok_ && dist2d(agent_.xy, tr.end()) <= thr;
        if (ok) finish_subtask(1.0, r);
        else fail_episode(0.0, Termination::kTimeout, r);
      }
    }
  } else {
    const double d = progress_distance();
    r.reward += clamp1((prev_dist_ - d) / (params_.progress_speed * dt));
    if (skill == Skill::kCarry) {
      const int obj = carry_object();
      const auto o = static_cast<std::size_t>(obj);
      if (!grasped_) {
        const OrientedBox box = scene_->objects[o].bbox(poses_[o]);
        grasp_count_ = point_box_distance(hand(), box) <= params_.grasp_radius ? grasp_count_ + 1 : 0;
        if (grasp_count_ >= params_.grasp_steps) {
          grasped_ = true;
          agent_.carried = obj;
          const Vec3 h = hand();
          poses_[o].position = {h.x, h.y, std::max(h.z, agent_.foot_z + 0.5 * scene_->objects[o].extents.z)};
          r.events.grasp = true;
          r.reward += params_.grasp_bonus;
        }
      } else if (dist2d(xy(poses_[o].position), xy(carry_goal())) <= thr) {
        agent_.carried = -1;
        poses_[o].position.z = object_rest_z(obj);
        rebuild_parts();
        r.events.delivered = true;
        finish_subtask(1.0, r);
      }
    } else if (skill == Skill::kClimb) {
      const auto o = static_cast<std::size_t>(interact_object());
      const Vec3 g = scene_->objects[o].climb_target(poses_[o]);
      if (climb_reached(agent_.pelvis_pos(), scene_->objects[o].bbox(poses_[o]), g.z)) finish_subtask(1.0, r);
    } else {
      const auto o = static_cast<std::size_t>(interact_object());
      const Vec3 g = scene_->objects[o].sit_target(poses_[o]);
      if (sit_reached(agent_.pelvis_pos(), g, params_.sit_xy_tol, params_.sit_z_tol)) finish_subtask(1.0, r);
    }
  }

  if (!done_) {
    if (skill_steps_ >= skill_timeout() && r.events.subtask_finished < 0) {
      fail_episode(skill == Skill::kCarry && grasped_ ? 0.5 : 0.0, Termination::kTimeout, r);
    } else if (steps_ >= scene_->episode_steps) {
      const Skill cur = plan.skills[k_];
      fail_episode(cur == Skill::kCarry && grasped_ ? 0.5 : 0.0, Termination::kTimeout, r);
    }
  }
  if (!done_) prev_dist_ = progress_distance();

  result_.steps = steps_;
  result_.total_time = steps_ * dt;
  result_.total_reward += r.reward;
  if (done_) result_.cause = r.cause;
  return r;
}

void Env::observe(std::span<double> out) const {
  if (out.size() != obs_dim()) throw std::invalid_argument("Env::observe: wrong buffer size");
  std::size_t i = 0;
  for (int j = 0; j < kJoints; ++j) out[i++] = agent_.q[j];
  for (int j = 0; j < kJoints; ++j) out[i++] = agent_.qdot[j];
  out[i++] = agent_.vel_local.x;
  out[i++] = agent_.vel_local.y;
  out[i++] = agent_.yaw_rate;
  out[i++] = agent_.pelvis;

  const std::size_t kk = std::min(k_, scene_->plan.skills.size() - 1);
  const Skill skill = scene_->plan.skills[kk];
  for (int s = 0; s < 4; ++s) out[i++] = static_cast<int>(skill) == s ? 1.0 : 0.0;

  std::array<Vec3, kGoalPoints> goals;
  const Vec3 pel = agent_.pelvis_pos();
  if (done_) {
    goals.fill(pel);
  } else if (skill == Skill::kTraj) {
    const Trajectory& tr = *current_trajectory();
    for (int g = 0; g < kGoalPoints; ++g) {
      const Vec2 p = phase_ == Phase::kActive ? tr.at(traj_clock() + params_.traj.dt * g) : tr.start();
      goals[g] = {p.x, p.y, pel.z};
    }
  } else if (skill == Skill::kCarry) {
    const Vec3 obj = poses_[static_cast<std::size_t>(carry_object())].position;
    const Vec3 tgt = carry_goal();
    goals = {grasped_ ? tgt : obj, tgt, obj, tgt, tgt};
  } else {
    goals.fill(current_goal());
  }
  const double clip = params_.goal_clip;
  for (const Vec3& g : goals) {
    Vec2 l = rotate({g.x - pel.x, g.y - pel.y}, -agent_.yaw);
    const double n = std::hypot(l.x, l.y);
    if (n > clip) l = {l.x * clip / n, l.y * clip / n};
    out[i++] = l.x;
    out[i++] = l.y;
    out[i++] = std::clamp(g.z - pel.z, -clip, clip);
  }
  out[i++] = agent_.carried >= 0 ? 1.0 : 0.0;
  if (scene_->perception_grid) {
    perception_grid(out.subspan(i, kGridCells));
    i += kGridCells;
  }
}

std::vector<double> Env::observe() const {
  std::vector<double> out(obs_dim());
  observe(out);
  return out;
}

void Env::perception_grid(std::span<double> out) const {
  if (out.size() != static_cast<std::size_t>(kGridCells)) throw std::invalid_argument("perception_grid: need 625 cells");
  std::array<double, kGridCells> xs, ys;
  const double c = std::cos(agent_.yaw), s = std::sin(agent_.yaw);
  const int half = kGridSide / 2;
  for (int i = 0; i < kGridSide; ++i) {
    for (int j = 0; j < kGridSide; ++j) {
      const double f = (i - half) * params_.grid_spacing, l = (j - half) * params_.grid_spacing;
      xs[i * kGridSide + j] = agent_.xy.x + c * f - s * l;
      ys[i * kGridSide + j] = agent_.xy.y + s * f + c * l;
    }
  }
  std::fill(out.begin(), out.end(), 0.0);
  const auto& k = simd::kernels();
  for (std::size_t p = 0; p < parts_.size(); ++p) {
    if (part_owner_[p] == agent_.carried) continue;
    k.box_max_height(xs.data(), ys.data(), out.data(), kGridCells, parts_[p]);
  }
  const double z = agent_.pelvis_z();
  for (int n = 0; n < kGridCells; ++n) {
    out[n] = scene_->in_bounds({xs[n], ys[n]}) ? out[n] - z : 0.0;
  }
}

}  // namespace detach::sim
