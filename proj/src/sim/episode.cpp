#include "detach/sim/episode.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <stdexcept>

namespace detach::sim {
namespace {

constexpr char kMagic[8] = {'D', 'T', 'C', 'H', 'R', 'P', 'L', '1'};

std::uint64_t splitmix(std::uint64_t& s) {
  std::uint64_t z = (s += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string event_string(const StepResult& r) {
  std::string e;
  auto add = [&e](const char* s) {
    if (!e.empty()) e += '|';
    e += s;
  };
  if (r.events.grasp) add("grasp");
  if (r.events.delivered) add("delivered");
  if (r.events.blocked) add("blocked");
  if (r.events.subtask_finished >= 0) add("subtask_end");
  if (r.done) add(termination_name(r.cause).c_str());
  return e;
}

void record(const Env& env, std::span<const double> action, std::size_t subtask, const StepResult& r,
            EpisodeTrace* trace) {
  if (trace == nullptr) return;
  trace->actions.emplace_back(action.begin(), action.end());
  StepRecord s;
  s.step = env.step_count();
  s.subtask = subtask;
  s.skill = env.scene().plan.skills[subtask];
  s.pelvis = env.agent().pelvis_pos();
  s.yaw = env.agent().yaw;
  s.carried = env.agent().carried;
  s.reward = r.reward;
  s.event = event_string(r);
  trace->steps.push_back(std::move(s));
}

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("replay: truncated file");
  return v;
}

}  // namespace

void RandomController::reset(const Env&, std::uint64_t seed) { state_ = seed; }

void RandomController::act(const Env&, std::span<const double>, std::span<double> action) {
  for (double& a : action) a = static_cast<double>(splitmix(state_) >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

EpisodeResult run_lh_episode(std::shared_ptr<const SceneSpec> scene, Controller& policy, Mode mode, std::uint64_t seed,
                             const SimParams& params, EpisodeTrace* trace) {
  Env env(std::move(scene), params);
  env.reset(seed, mode);
  policy.reset(env, seed);
  std::vector<double> obs(env.obs_dim());
  std::vector<double> action(kActionDim);
  while (!env.done()) {
    env.observe(obs);
    policy.act(env, obs, action);
    const std::size_t k = env.subtask();
    const StepResult r = env.step(action);
    record(env, action, k, r, trace);
  }
  return env.result();
}

void write_episode_csv(std::ostream& os, const EpisodeTrace& trace) {
  os << "step,subtask,skill,x,y,z,yaw,carried,reward,event\n";
  os << std::setprecision(9);
  for (const auto& s : trace.steps) {
    os << s.step << ',' << s.subtask << ',' << skill_name(s.skill) << ',' << s.pelvis.x << ',' << s.pelvis.y << ','
       << s.pelvis.z << ',' << s.yaw << ',' << s.carried << ',' << s.reward << ',' << s.event << '\n';
  }
}

void Replay::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(scene.size()));
  os.write(scene.data(), static_cast<std::streamsize>(scene.size()));
  put<std::uint64_t>(os, seed);
  put<std::uint8_t>(os, mode == Mode::kTrain ? 1 : 0);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(kActionDim));
  put<std::uint64_t>(os, actions.size());
  for (const auto& a : actions) {
    if (a.size() != static_cast<std::size_t>(kActionDim)) throw std::invalid_argument("replay: bad action size");
    for (double v : a) put<double>(os, v);
  }
}

Replay Replay::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("replay: bad magic in " + path.string());
  }
  Replay r;
  const auto n = get<std::uint32_t>(is);
  r.scene.resize(n);
  if (!is.read(r.scene.data(), n)) throw std::runtime_error("replay: truncated file");
  r.seed = get<std::uint64_t>(is);
  r.mode = get<std::uint8_t>(is) ? Mode::kTrain : Mode::kTest;
  const auto dim = get<std::uint32_t>(is);
  if (dim != static_cast<std::uint32_t>(kActionDim)) throw std::runtime_error("replay: action dimension mismatch");
  const auto steps = get<std::uint64_t>(is);
  r.actions.assign(steps, std::vector<double>(dim));
  for (auto& a : r.actions) {
    for (double& v : a) v = get<double>(is);
  }
  return r;
}

EpisodeResult replay_episode(std::shared_ptr<const SceneSpec> scene, const Replay& replay, const SimParams& params,
                             EpisodeTrace* trace) {
  if (scene->name != replay.scene) {
    throw std::invalid_argument("replay: recorded on scene '" + replay.scene + "', given '" + scene->name + "'");
  }
  Env env(std::move(scene), params);
  env.reset(replay.seed, replay.mode);
  for (const auto& a : replay.actions) {
    if (env.done()) throw std::runtime_error("replay: more actions than episode steps");
    const std::size_t k = env.subtask();
    const StepResult r = env.step(a);
    record(env, a, k, r, trace);
  }
  return env.result();
}

}  // namespace detach::sim
