#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "detach/sim/env.hpp"

namespace detach::sim {

// Anything that maps the current environment to an action.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual void reset(const Env& env, std::uint64_t seed) = 0;
  virtual void act(const Env& env, std::span<const double> obs, std::span<double> action) = 0;
};

// Uniform actions in [-1, 1].
class RandomController : public Controller {
 public:
  void reset(const Env& env, std::uint64_t seed) override;
  void act(const Env& env, std::span<const double> obs, std::span<double> action) override;

 private:
  std::uint64_t state_ = 0;
};

struct StepRecord {
  int step = 0;
  std::size_t subtask = 0;
  Skill skill = Skill::kTraj;
  Vec3 pelvis;
  double yaw = 0.0;
  int carried = -1;
  double reward = 0.0;
  std::string event;
};

struct EpisodeTrace {
  std::vector<std::vector<double>> actions;
  std::vector<StepRecord> steps;
};

EpisodeResult run_lh_episode(std::shared_ptr<const SceneSpec> scene, Controller& policy, Mode mode, std::uint64_t seed,
                             const SimParams& params = {}, EpisodeTrace* trace = nullptr);

void write_episode_csv(std::ostream& os, const EpisodeTrace& trace);

// Binary replay: scene name, seed, mode and the action stream.
struct Replay {
  std::string scene;
  std::uint64_t seed = 0;
  Mode mode = Mode::kTest;
  std::vector<std::vector<double>> actions;

  void save(const std::filesystem::path& path) const;
  static Replay load(const std::filesystem::path& path);
};

// Re-executes the recorded actions.
EpisodeResult replay_episode(std::shared_ptr<const SceneSpec> scene, const Replay& replay, const SimParams& params = {},
                             EpisodeTrace* trace = nullptr);

}  // namespace detach::sim
