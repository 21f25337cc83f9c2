#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "detach/sim/scene.hpp"
#include "detach/sim/trajectory.hpp"

namespace detach::sim {

inline constexpr int kJoints = 8;
inline constexpr int kRootControls = 4;  // vx, vy (body frame), yaw rate, pelvis height rate
inline constexpr int kActionDim = kRootControls + kJoints;
inline constexpr int kSelfDim = 2 * kJoints + 4;
inline constexpr int kGoalPoints = 5;
inline constexpr int kEnvBaseDim = 4 + 3 * kGoalPoints + 1;
inline constexpr int kGridSide = 25;
inline constexpr int kGridCells = kGridSide * kGridSide;

struct SimParams {
  double dt = 1.0 / 30.0;
  double max_speed = 2.5;      // m/s per body axis at |a| = 1
  double max_yaw_rate = 2.0;   // rad/s
  double pelvis_rate = 1.0;    // m/s
  double joint_speed = 4.0;    // rad/s
  double joint_limit = 1.5;    // symmetric, rad
  double pelvis_default = 0.9;
  double pelvis_max = 1.0;
  double max_step_up = 1.0;
  double fall_height = 0.15;
  double traj_fail_distance = 4.0;
  double power_coeff = 0.0005;
  double object_speed_threshold = 1.5;
  double object_speed_coeff = 1.0;
  double hand_reach = 0.35;  // forward of the root
  double hand_drop = 0.3;    // below the pelvis
  double grasp_radius = 0.2;
  int grasp_steps = 5;
  double sit_xy_tol = 0.2;
  double sit_z_tol = 0.1;
  double traj_kernel = 2.0;  // traj reward exp(-k d^2)
  double progress_speed = 1.5;
  double subtask_bonus = 1.0;
  double grasp_bonus = 0.5;
  double goal_clip = 5.0;  // goal vectors in obs are clipped to this length
  double grid_spacing = 0.1;
  TrajectoryParams traj;
};

enum class Mode { kTrain, kTest };

enum class Termination { kNone, kCompleted, kFall, kTimeout, kTrajFailure };
std::string termination_name(Termination t);

struct Agent {
  Vec2 xy;
  double yaw = 0.0;
  double foot_z = 0.0;     // support height under the root
  double pelvis = 0.9;     // pelvis height above the support
  std::array<double, kJoints> q{};
  std::array<double, kJoints> qdot{};
  Vec2 vel_local;
  double yaw_rate = 0.0;
  int carried = -1;

  double pelvis_z() const { return foot_z + pelvis; }
  Vec3 pelvis_pos() const { return {xy.x, xy.y, pelvis_z()}; }
};

struct StepEvents {
  bool fall = false;
  bool traj_failure = false;
  bool timeout = false;
  bool grasp = false;
  bool delivered = false;
  bool blocked = false;
  int subtask_finished = -1;  // index of the subtask whose outcome was fixed this step
};

struct StepResult {
  double reward = 0.0;
  double power_penalty = 0.0;
  double object_penalty = 0.0;
  bool done = false;
  Termination cause = Termination::kNone;
  StepEvents events;
};

struct EpisodeResult {
  std::vector<Skill> skills;
  std::vector<double> outcomes;   // 0, 0.5 (carry only) or 1
  std::vector<double> durations;  // seconds spent per subtask
  Termination cause = Termination::kNone;
  double total_time = 0.0;
  int steps = 0;
  double total_reward = 0.0;

  bool lh_success() const;
  bool operator==(const EpisodeResult&) const = default;
};

// Applies the sequential rule: every outcome after the first non-1 becomes 0.
void enforce_sequential(std::vector<double>& outcomes);

enum class Phase { kTransition, kActive, kDone };

// One kinematic world plus the long-horizon task state machine.
class Env {
 public:
  Env(std::shared_ptr<const SceneSpec> scene, SimParams params = {});

  void reset(std::uint64_t seed, Mode mode);
  // Throws std::invalid_argument on a wrong size or non-finite action.
  StepResult step(std::span<const double> action);

  std::size_t obs_dim() const { return kSelfDim + env_dim(); }
  std::size_t env_dim() const { return kEnvBaseDim + (scene_->perception_grid ? kGridCells : 0); }
  // Raw observation: [self (kSelfDim) | env].
  void observe(std::span<double> out) const;
  std::vector<double> observe() const;

  // Egocentric 25x25 heights relative to the pelvis, row-major (forward, left).
  void perception_grid(std::span<double> out) const;

  // Support under a point, ignoring the carried object and `exclude`.
  double support(Vec2 p, int exclude = -1) const;

  const SceneSpec& scene() const { return *scene_; }
  std::shared_ptr<const SceneSpec> scene_ptr() const { return scene_; }
  const SimParams& params() const { return params_; }
  const Agent& agent() const { return agent_; }
  const Pose& object_pose(std::size_t i) const { return poses_[i]; }
  const Trajectory& trajectory(const std::string& id) const;
  Mode mode() const { return mode_; }
  bool done() const { return done_; }
  int step_count() const { return steps_; }
  double time() const { return steps_ * params_.dt; }

  std::size_t subtask() const { return k_; }
  Phase phase() const { return phase_; }
  int subtask_steps() const { return skill_steps_; }
  int skill_timeout() const;
  // Seconds since the active window of a traj subtask opened.
  double traj_clock() const { return active_steps_ * params_.dt; }
  bool grasped() const { return grasped_; }
  Vec3 hand() const;
  // Goal of the current subtask (traj: the current tracking point).
  Vec3 current_goal() const;
  const Trajectory* current_trajectory() const;
  int carry_object() const;
  Vec3 carry_goal() const;
  int interact_object() const;

  const EpisodeResult& result() const { return result_; }

 private:
  void rebuild_parts();
  void begin_subtask();
  void finish_subtask(double outcome, StepResult& r);
  void fail_episode(double outcome, Termination cause, StepResult& r);
  double progress_distance() const;
  double object_rest_z(int obj) const;

  std::shared_ptr<const SceneSpec> scene_;
  SimParams params_;
  Mode mode_ = Mode::kTest;
  Agent agent_;
  std::vector<Pose> poses_;
  std::vector<Trajectory> trajs_;
  std::vector<simd::BoxFootprint> parts_;
  std::vector<int> part_owner_;

  std::size_t k_ = 0;
  Phase phase_ = Phase::kDone;
  int steps_ = 0;
  int skill_steps_ = 0;
  int transition_steps_ = 0;
  int active_steps_ = 0;
  bool traj_ok_ = true;
  bool grasped_ = false;
  int grasp_count_ = 0;
  double prev_dist_ = 0.0;
  bool done_ = true;
  EpisodeResult result_;
};

// Success predicates shared by the environment and subtask_success().
bool sit_reached(Vec3 pelvis, Vec3 sit_target, double xy_tol, double z_tol);
bool climb_reached(Vec3 pelvis, const OrientedBox& footprint, double target_z);
double point_box_distance(Vec3 p, const OrientedBox& box);

struct StateSample {
  double t = 0.0;  // seconds since the window opened
  Vec3 pelvis;
  bool grasped = false;
  bool carrying = false;
  Vec3 object;  // carried object position
};

struct SubtaskTarget {
  Skill skill = Skill::kTraj;
  const Trajectory* trajectory = nullptr;
  Vec3 point;             // carry delivery / climb / sit target
  OrientedBox footprint;  // climb object
  double threshold = 0.3;
  double sit_xy_tol = 0.2;
  double sit_z_tol = 0.1;
};

// Outcome of one subtask from its state history.
double subtask_success(const std::vector<StateSample>& history, const SubtaskTarget& target);

}  // namespace detach::sim
