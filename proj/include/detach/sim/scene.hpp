#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "detach/sim/geometry.hpp"

namespace detach::sim {

// Invalid scene/task configuration. The message starts with the field path.
struct SceneError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class ObjectKind { kBox, kChair, kSofa, kBed, kTable, kPlatform, kWall, kNightstand, kTvStand, kTelevision, kCar };

std::string kind_name(ObjectKind k);
std::optional<ObjectKind> kind_from_name(const std::string& s);

enum class Skill { kTraj, kCarry, kClimb, kSit };

std::string skill_name(Skill s);
std::optional<Skill> skill_from_name(const std::string& s);

struct Pose {
  Vec3 position;  // bounding-box center
  double yaw = 0.0;
};

// Axis-aligned sub-box in the object frame; offset is relative to the
// bounding-box center.
struct Part {
  Vec3 offset;
  Vec3 extents;
};

struct Heightmap {
  static constexpr int kRes = 128;
  double size_x = 0.0;
  double size_y = 0.0;
  std::vector<double> h;  // kRes*kRes, row i along local x, height above the object base

  double at(int i, int j) const { return h[static_cast<std::size_t>(i) * kRes + j]; }
  // Cell center in the object frame.
  Vec2 cell_center(int i, int j) const;
  // Nearest cell for a local point (clamped to the grid).
  std::pair<int, int> cell_of(Vec2 local) const;
};

struct SceneObject {
  std::string name;
  ObjectKind kind = ObjectKind::kBox;
  Pose pose;
  Vec3 extents;
  bool carriable = false;
  std::vector<Part> parts;
  int target_part = 0;

  Heightmap heightmap;
  Vec2 target_local;      // object frame
  double surface = 0.0;   // above the object base, read from the heightmap

  OrientedBox bbox(const Pose& at) const;
  OrientedBox bbox() const { return bbox(pose); }
  std::vector<OrientedBox> part_boxes(const Pose& at) const;
  std::vector<OrientedBox> part_boxes() const { return part_boxes(pose); }

  Vec3 climb_target(const Pose& at) const;
  Vec3 climb_target() const { return climb_target(pose); }
  Vec3 sit_target(const Pose& at) const;
  Vec3 sit_target() const { return sit_target(pose); }
};

// Rebuilds heightmap and targets from parts (vertical raycasts).
void compute_surface(SceneObject& obj);

struct TrajectorySpec {
  std::string id;
  bool random = false;         // drawn per episode by gen_trajectory
  Vec2 start;                  // random trajectories
  std::vector<Vec2> points;    // fixed trajectories, timed at `speed`
  double speed = 1.45;
};

struct TaskPlan {
  std::vector<Skill> skills;
  std::vector<int> target_indices;
  std::vector<std::string> sources;
  int max_transition_train = 60;
  int max_transition_test = 20;
  double success_threshold = 0.3;
};

struct SceneSpec {
  std::string name;
  std::vector<SceneObject> objects;
  std::vector<TrajectorySpec> trajectories;
  std::vector<Vec3> target_positions;
  TaskPlan plan;
  Vec2 start;
  double start_yaw = 0.0;
  double start_jitter = 0.0;  // uniform XY jitter applied per episode seed
  std::array<double, 4> bounds{-50.0, -50.0, 50.0, 50.0};  // xmin, ymin, xmax, ymax
  int episode_steps = 1200;
  bool perception_grid = false;

  const TrajectorySpec& trajectory(const std::string& id) const;
  bool in_bounds(Vec2 p) const {
    return p.x >= bounds[0] && p.y >= bounds[1] && p.x <= bounds[2] && p.y <= bounds[3];
  }
};

SceneSpec build_scene(const nlohmann::json& config);
SceneSpec build_scene_file(const std::filesystem::path& path);

// Throws SceneError when the plan does not fit the scene.
void validate_plan(const SceneSpec& scene);

// Carry delivery point for plan step k ("tarpos_i", or target_positions[0]
// for a "scene_i" source).
Vec3 carry_target(const SceneSpec& scene, std::size_t k);

std::string describe(const SceneSpec& scene);

}  // namespace detach::sim
