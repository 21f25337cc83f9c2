#include "detach/sim/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace detach::sim {
namespace {

using nlohmann::json;

constexpr std::pair<ObjectKind, const char*> kKinds[] = {
    {ObjectKind::kBox, "box"},         {ObjectKind::kChair, "chair"},
    {ObjectKind::kSofa, "sofa"},       {ObjectKind::kBed, "bed"},
    {ObjectKind::kTable, "table"},     {ObjectKind::kPlatform, "platform"},
    {ObjectKind::kWall, "wall"},       {ObjectKind::kNightstand, "nightstand"},
    {ObjectKind::kTvStand, "tv_stand"}, {ObjectKind::kTelevision, "television"},
    {ObjectKind::kCar, "car"},
};

constexpr std::pair<Skill, const char*> kSkills[] = {
    {Skill::kTraj, "traj"}, {Skill::kCarry, "carry"}, {Skill::kClimb, "climb"}, {Skill::kSit, "sit"}};

[[noreturn]] void fail(const std::string& path, const std::string& what) { throw SceneError(path + ": " + what); }

double num(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) fail(path, "not finite");
  return v;
}

int integer(const json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  return j.get<int>();
}

std::vector<double> numbers(const json& j, const std::string& path, std::size_t n) {
  if (!j.is_array() || j.size() != n) fail(path, "expected an array of " + std::to_string(n) + " numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(num(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

Vec3 vec3(const json& j, const std::string& path) {
  const auto v = numbers(j, path, 3);
  return {v[0], v[1], v[2]};
}

Vec2 vec2(const json& j, const std::string& path) {
  const auto v = numbers(j, path, 2);
  return {v[0], v[1]};
}

Vec3 positive3(const json& j, const std::string& path) {
  const Vec3 v = vec3(j, path);
  if (v.x <= 0 || v.y <= 0 || v.z <= 0) fail(path, "extents must be positive");
  return v;
}

const json& need(const json& j, const char* key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) fail(path + "." + key, "missing");
  return j.at(key);
}

// Do two oriented footprints overlap (separating axis test, touching does not count)?
bool footprints_overlap(const OrientedBox& a, const OrientedBox& b) {
  const auto ca = a.corners(), cb = b.corners();
  for (const auto* box : {&a, &b}) {
    for (double ang : {box->yaw, box->yaw + M_PI / 2}) {
      const double ux = std::cos(ang), uy = std::sin(ang);
      double amin = 1e300, amax = -1e300, bmin = 1e300, bmax = -1e300;
      for (const auto& p : ca) {
        const double d = p.x * ux + p.y * uy;
        amin = std::min(amin, d);
        amax = std::max(amax, d);
      }
      for (const auto& p : cb) {
        const double d = p.x * ux + p.y * uy;
        bmin = std::min(bmin, d);
        bmax = std::max(bmax, d);
      }
      if (amax <= bmin + 1e-9 || bmax <= amin + 1e-9) return false;
    }
  }
  return true;
}

bool boxes_intersect(const OrientedBox& a, const OrientedBox& b) {
  if (a.top() <= b.bottom() + 1e-9 || b.top() <= a.bottom() + 1e-9) return false;
  return footprints_overlap(a, b);
}

SceneObject parse_object(const json& j, const std::string& path, std::size_t index) {
  SceneObject o;
  const auto kind_str = need(j, "kind", path);
  if (!kind_str.is_string()) fail(path + ".kind", "expected a string");
  const auto kind = kind_from_name(kind_str.get<std::string>());
  if (!kind) fail(path + ".kind", "unknown object kind '" + kind_str.get<std::string>() + "'");
  o.kind = *kind;
  o.name = j.value("name", kind_name(o.kind) + "_" + std::to_string(index));
  o.pose.position = vec3(need(j, "position", path), path + ".position");
  o.pose.yaw = j.contains("yaw") ? num(j["yaw"], path + ".yaw") : 0.0;
  o.extents = positive3(need(j, "extents", path), path + ".extents");
  o.carriable = j.value("carriable", false);
  if (o.pose.position.z - 0.5 * o.extents.z < -1e-9) fail(path + ".position", "object extends below the ground");
  if (j.contains("parts")) {
    const auto& parts = j["parts"];
    if (!parts.is_array() || parts.empty()) fail(path + ".parts", "expected a non-empty array");
    for (std::size_t i = 0; i < parts.size(); ++i) {
      const std::string pp = path + ".parts[" + std::to_string(i) + "]";
      Part part{vec3(need(parts[i], "offset", pp), pp + ".offset"), positive3(need(parts[i], "extents", pp), pp + ".extents")};
      const double tol = 1e-9;
      if (std::fabs(part.offset.x) + 0.5 * part.extents.x > 0.5 * o.extents.x + tol ||
          std::fabs(part.offset.y) + 0.5 * part.extents.y > 0.5 * o.extents.y + tol ||
          std::fabs(part.offset.z) + 0.5 * part.extents.z > 0.5 * o.extents.z + tol) {
        fail(pp, "part exceeds the bounding box");
      }
      o.parts.push_back(part);
    }
  } else {
    o.parts.push_back({{0, 0, 0}, o.extents});
  }
  o.target_part = j.contains("target_part") ? integer(j["target_part"], path + ".target_part") : 0;
  if (o.target_part < 0 || o.target_part >= static_cast<int>(o.parts.size())) fail(path + ".target_part", "out of range");
  compute_surface(o);
  return o;
}

TrajectorySpec parse_trajectory(const json& j, const std::string& path, std::size_t index) {
  TrajectorySpec t;
  t.id = j.value("id", "traj_" + std::to_string(index));
  t.random = j.value("random", false);
  if (j.contains("speed")) t.speed = num(j["speed"], path + ".speed");
  if (t.speed <= 0) fail(path + ".speed", "must be positive");
  if (t.random) {
    t.start = vec2(need(j, "start", path), path + ".start");
    return t;
  }
  const auto& pts = need(j, "points", path);
  if (!pts.is_array() || pts.size() < 2) fail(path + ".points", "need at least two waypoints");
  for (std::size_t i = 0; i < pts.size(); ++i) t.points.push_back(vec2(pts[i], path + ".points[" + std::to_string(i) + "]"));
  t.start = t.points.front();
  return t;
}

}  // namespace

std::string kind_name(ObjectKind k) {
  for (const auto& [kind, name] : kKinds) {
    if (kind == k) return name;
  }
  return "box";
}

std::optional<ObjectKind> kind_from_name(const std::string& s) {
  for (const auto& [kind, name] : kKinds) {
    if (s == name) return kind;
  }
  return std::nullopt;
}

std::string skill_name(Skill s) {
  for (const auto& [skill, name] : kSkills) {
    if (skill == s) return name;
  }
  return "traj";
}

std::optional<Skill> skill_from_name(const std::string& s) {
  for (const auto& [skill, name] : kSkills) {
    if (s == name) return skill;
  }
  return std::nullopt;
}

Vec2 Heightmap::cell_center(int i, int j) const {
  return {-0.5 * size_x + (i + 0.5) * size_x / kRes, -0.5 * size_y + (j + 0.5) * size_y / kRes};
}

std::pair<int, int> Heightmap::cell_of(Vec2 local) const {
  const int i = static_cast<int>(std::floor((local.x + 0.5 * size_x) / size_x * kRes));
  const int j = static_cast<int>(std::floor((local.y + 0.5 * size_y) / size_y * kRes));
  return {std::clamp(i, 0, kRes - 1), std::clamp(j, 0, kRes - 1)};
}

OrientedBox SceneObject::bbox(const Pose& at) const { return {at.position, extents, at.yaw}; }

std::vector<OrientedBox> SceneObject::part_boxes(const Pose& at) const {
  std::vector<OrientedBox> out;
  out.reserve(parts.size());
  for (const auto& p : parts) {
    const Vec2 r = rotate({p.offset.x, p.offset.y}, at.yaw);
    out.push_back({{at.position.x + r.x, at.position.y + r.y, at.position.z + p.offset.z}, p.extents, at.yaw});
  }
  return out;
}

Vec3 SceneObject::climb_target(const Pose& at) const {
  const Vec2 r = rotate(target_local, at.yaw);
  return {at.position.x + r.x, at.position.y + r.y, at.position.z - 0.5 * extents.z + surface};
}

Vec3 SceneObject::sit_target(const Pose& at) const {
  Vec3 t = climb_target(at);
  t.z = t.z + 0.1;
  return t;
}

void compute_surface(SceneObject& obj) {
  // Object frame: origin under the bounding-box center, base at z = 0.
  std::vector<OrientedBox> local;
  for (const auto& p : obj.parts) {
    local.push_back({{p.offset.x, p.offset.y, 0.5 * obj.extents.z + p.offset.z}, p.extents, 0.0});
  }
  Heightmap& hm = obj.heightmap;
  hm.size_x = obj.extents.x;
  hm.size_y = obj.extents.y;
  hm.h.assign(static_cast<std::size_t>(Heightmap::kRes) * Heightmap::kRes, 0.0);
  const double from = obj.extents.z + 1.0;
  for (int i = 0; i < Heightmap::kRes; ++i) {
    for (int j = 0; j < Heightmap::kRes; ++j) {
      const Vec2 c = hm.cell_center(i, j);
      double best = 0.0;
      for (const auto& b : local) {
        if (auto z = raycast_down(c, from, b)) best = std::max(best, *z);
      }
      hm.h[static_cast<std::size_t>(i) * Heightmap::kRes + j] = best;
    }
  }
  const Part& tp = obj.parts[static_cast<std::size_t>(obj.target_part)];
  obj.target_local = {tp.offset.x, tp.offset.y};
  const auto [ci, cj] = hm.cell_of(obj.target_local);
  obj.surface = hm.at(ci, cj);
}

const TrajectorySpec& SceneSpec::trajectory(const std::string& id) const {
  for (const auto& t : trajectories) {
    if (t.id == id) return t;
  }
  throw SceneError("plan.sources: unknown trajectory '" + id + "'");
}

SceneSpec build_scene(const json& j) {
  if (!j.is_object()) fail("scene", "expected a JSON object");
  SceneSpec s;
  s.name = j.value("name", "scene");
  if (j.contains("objects")) {
    const auto& objs = j["objects"];
    if (!objs.is_array()) fail("objects", "expected an array");
    for (std::size_t i = 0; i < objs.size(); ++i) s.objects.push_back(parse_object(objs[i], "objects[" + std::to_string(i) + "]", i));
  }
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    if (!s.objects[i].carriable) continue;
    for (std::size_t k = 0; k < s.objects.size(); ++k) {
      if (k == i || s.objects[k].carriable) continue;
      for (const auto& pb : s.objects[k].part_boxes()) {
        if (boxes_intersect(s.objects[i].bbox(), pb)) {
          fail("objects[" + std::to_string(i) + "]", "carriable object spawns inside " + s.objects[k].name);
        }
      }
    }
  }
  if (j.contains("trajectories")) {
    const auto& ts = j["trajectories"];
    if (!ts.is_array()) fail("trajectories", "expected an array");
    for (std::size_t i = 0; i < ts.size(); ++i) s.trajectories.push_back(parse_trajectory(ts[i], "trajectories[" + std::to_string(i) + "]", i));
  }
  if (j.contains("target_positions")) {
    const auto& tp = j["target_positions"];
    if (!tp.is_array()) fail("target_positions", "expected an array");
    for (std::size_t i = 0; i < tp.size(); ++i) s.target_positions.push_back(vec3(tp[i], "target_positions[" + std::to_string(i) + "]"));
  }
  const auto& plan = need(j, "plan", "scene");
  const auto& skills = need(plan, "skills", "plan");
  if (!skills.is_array() || skills.empty()) fail("plan.skills", "expected a non-empty array");
  for (std::size_t i = 0; i < skills.size(); ++i) {
    const std::string p = "plan.skills[" + std::to_string(i) + "]";
    if (!skills[i].is_string()) fail(p, "expected a string");
    const auto sk = skill_from_name(skills[i].get<std::string>());
    if (!sk) fail(p, "unknown skill '" + skills[i].get<std::string>() + "'");
    s.plan.skills.push_back(*sk);
  }
  const auto& idx = need(plan, "target_indices", "plan");
  if (!idx.is_array()) fail("plan.target_indices", "expected an array");
  for (std::size_t i = 0; i < idx.size(); ++i) s.plan.target_indices.push_back(integer(idx[i], "plan.target_indices[" + std::to_string(i) + "]"));
  const auto& src = need(plan, "sources", "plan");
  if (!src.is_array()) fail("plan.sources", "expected an array");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (!src[i].is_string()) fail("plan.sources[" + std::to_string(i) + "]", "expected a string");
    s.plan.sources.push_back(src[i].get<std::string>());
  }
  if (plan.contains("max_transition_train")) s.plan.max_transition_train = integer(plan["max_transition_train"], "plan.max_transition_train");
  if (plan.contains("max_transition_test")) s.plan.max_transition_test = integer(plan["max_transition_test"], "plan.max_transition_test");
  if (plan.contains("success_threshold")) s.plan.success_threshold = num(plan["success_threshold"], "plan.success_threshold");

  if (j.contains("start")) {
    const auto& st = j["start"];
    s.start = vec2(need(st, "position", "start"), "start.position");
    if (st.contains("yaw")) s.start_yaw = num(st["yaw"], "start.yaw");
    if (st.contains("jitter")) s.start_jitter = num(st["jitter"], "start.jitter");
  } else if (!s.plan.sources.empty() && s.plan.skills.front() == Skill::kTraj) {
    // validated below; start at the first trajectory
  }
  if (j.contains("bounds")) {
    const auto b = numbers(j["bounds"], "bounds", 4);
    if (b[0] >= b[2] || b[1] >= b[3]) fail("bounds", "empty region");
    s.bounds = {b[0], b[1], b[2], b[3]};
  }
  if (j.contains("episode_steps")) {
    s.episode_steps = integer(j["episode_steps"], "episode_steps");
    if (s.episode_steps <= 0) fail("episode_steps", "must be positive");
  }
  s.perception_grid = j.value("perception_grid", false);
  validate_plan(s);
  if (!j.contains("start") && s.plan.skills.front() == Skill::kTraj) {
    s.start = s.trajectory(s.plan.sources.front()).start;
  }
  return s;
}

SceneSpec build_scene_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SceneError("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw SceneError("config: " + path.string() + ": " + e.what());
  }
  return build_scene(j);
}

void validate_plan(const SceneSpec& s) {
  const auto& p = s.plan;
  if (p.skills.size() != p.target_indices.size() || p.skills.size() != p.sources.size()) {
    fail("plan", "skills, target_indices and sources must have equal length");
  }
  if (p.max_transition_train < 0 || p.max_transition_test < 0) fail("plan.max_transition", "must be non-negative");
  if (p.success_threshold <= 0) fail("plan.success_threshold", "must be positive");
  for (std::size_t k = 0; k < p.skills.size(); ++k) {
    const std::string path = "plan.sources[" + std::to_string(k) + "]";
    const std::string& src = p.sources[k];
    const int idx = p.target_indices[k];
    switch (p.skills[k]) {
      case Skill::kTraj:
        if (src.rfind("traj_", 0) != 0) fail(path, "traj skill needs a traj_* source");
        s.trajectory(src);
        break;
      case Skill::kCarry: {
        if (idx < 0 || idx >= static_cast<int>(s.objects.size())) fail("plan.target_indices[" + std::to_string(k) + "]", "no such object");
        if (!s.objects[static_cast<std::size_t>(idx)].carriable) fail("plan.target_indices[" + std::to_string(k) + "]", "carry target is not carriable");
        if (src.rfind("tarpos_", 0) == 0) {
          const int t = std::stoi(src.substr(7));
          if (t < 0 || t >= static_cast<int>(s.target_positions.size())) fail(path, "no such target position");
        } else if (src.rfind("scene_", 0) == 0) {
          if (s.target_positions.empty()) fail(path, "carry needs a target position");
        } else {
          fail(path, "carry needs a tarpos_* or scene_* source");
        }
        break;
      }
      case Skill::kClimb:
      case Skill::kSit: {
        if (src.rfind("scene_", 0) != 0) fail(path, "needs a scene_* source");
        const int obj = std::stoi(src.substr(6));
        if (obj < 0 || obj >= static_cast<int>(s.objects.size())) fail(path, "no such object");
        if (idx < 0 || idx >= static_cast<int>(s.objects.size())) fail("plan.target_indices[" + std::to_string(k) + "]", "no such object");
        break;
      }
    }
  }
}

Vec3 carry_target(const SceneSpec& s, std::size_t k) {
  const std::string& src = s.plan.sources.at(k);
  if (src.rfind("tarpos_", 0) == 0) return s.target_positions.at(static_cast<std::size_t>(std::stoi(src.substr(7))));
  return s.target_positions.at(0);
}

std::string describe(const SceneSpec& s) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << "scene " << s.name << ": " << s.objects.size() << " objects\n";
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    const auto& o = s.objects[i];
    os << "  [" << i << "] " << o.name << " (" << kind_name(o.kind) << ") at [" << o.pose.position.x << ", "
       << o.pose.position.y << ", " << o.pose.position.z << "] yaw " << o.pose.yaw << " extents [" << o.extents.x
       << ", " << o.extents.y << ", " << o.extents.z << "]" << (o.carriable ? " carriable" : "");
    const Vec3 c = o.climb_target();
    os << " climb [" << c.x << ", " << c.y << ", " << c.z << "]\n";
  }
  os << "plan:";
  for (std::size_t k = 0; k < s.plan.skills.size(); ++k) {
    os << ' ' << skill_name(s.plan.skills[k]) << '(' << s.plan.target_indices[k] << ", " << s.plan.sources[k] << ')';
  }
  os << '\n';
  return os.str();
}

}  // namespace detach::sim
