#include "detach/cli/dispatch.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "detach/cli/run_config.hpp"
#include "detach/metrics/ablation.hpp"
#include "detach/sim/oracle.hpp"
#include "detach/train/gradcheck_suite.hpp"
#include "detach/train/rollout.hpp"

#ifndef DETACH_CONFIG_DIR
#define DETACH_CONFIG_DIR "configs"
#endif

namespace detach::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Failure that is neither usage nor configuration.
struct RunError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::string config_dir = DETACH_CONFIG_DIR;
  std::string out;
  std::vector<std::uint64_t> seeds;
  bool paper_scale = false;
  bool print_config = false;
  int envs = 0;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Run configuration JSON");
  app->add_option("--config-dir", c.config_dir, "Directory holding task configs");
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--seed", c.seeds, "Seed(s)");
  app->add_option("--envs", c.envs, "Parallel environments")->check(CLI::PositiveNumber);
  app->add_flag("--paper-scale", c.paper_scale, "Use the full-scale environment count and episode length");
  app->add_flag("--print-config", c.print_config, "Print the effective configuration and exit");
}

RunConfig effective(const Common& c, const std::string& command) {
  RunConfig rc = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  rc.command = command;
  if (c.paper_scale) rc.apply_paper_scale();
  if (!c.out.empty()) rc.output_dir = c.out;
  if (!c.seeds.empty()) rc.seeds = c.seeds;
  if (c.envs > 0) rc.simulation.parallel_envs = c.envs;
  return rc;
}

fs::path prepare_out(const RunConfig& rc) {
  const fs::path dir = output_path(rc.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("output_dir", "cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw RunError("cannot write " + path.string());
  f << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

train::SceneList load_tasks(const RunConfig& rc, const std::vector<std::string>& names, const Common& c) {
  train::SceneList out;
  for (const auto& n : names) out.push_back(load_task(rc, n, c.config_dir));
  return out;
}

std::string task_label(const std::string& t) { return fs::path(t).stem().string(); }

void print_reports(std::ostream& out, const fs::path& dir, const std::vector<metrics::EvalReport>& reports) {
  std::ostringstream csv, table, detail;
  metrics::write_report_csv(csv, reports);
  metrics::write_report_table(table, reports);
  metrics::write_report_detail_csv(detail, reports);
  write_file(dir / "report.csv", csv.str());
  write_file(dir / "report.txt", table.str());
  write_file(dir / "report_detail.csv", detail.str());
  out << table.str();
}

// ---- commands ----

int cmd_train(std::ostream& out, std::ostream& err, const Common& c, const std::vector<std::string>& tasks,
              const std::string& variant, const std::vector<int>& stage_iters) {
  RunConfig rc = effective(c, "train");
  if (!tasks.empty()) rc.train_tasks = tasks;
  if (!variant.empty()) rc.variant = variant;
  if (!stage_iters.empty()) {
    if (stage_iters.size() != rc.training.stages.size())
      throw ConfigError("training.stages", "--iterations needs one value per configured stage");
    for (std::size_t i = 0; i < stage_iters.size(); ++i) rc.training.stages[i].iterations = stage_iters[i];
  }
  rc.validate();
  if (c.print_config) {
    out << to_json(rc).dump(2) << '\n';
    return 0;
  }
  const auto scenes = load_tasks(rc, rc.train_tasks, c);
  const fs::path dir = prepare_out(rc);
  auto pc = protocol_config(rc, *scenes[0]);
  pc.out_dir = dir;
  pc.warn = [&err](const std::string& m) { err << "warning: " << m << '\n'; };
  pc.on_iteration = [&out](const train::IterLog& l) {
    out << train::stage_name(l.stage) << " iter " << l.iteration << " loss " << l.loss;
    if (l.stage == train::Stage::kFusion || l.stage == train::Stage::kJoint) out << " reward " << l.mean_reward;
    out << '\n';
  };
  write_file(dir / "run_config.json", to_json(rc).dump(2) + "\n");
  const auto res = train::run_protocol(pc, scenes, rc.seeds[0]);
  res.params.save(dir / "params.bin");
  out << "saved " << (dir / "params.bin").string() << " hash " << std::hex << res.params.hash() << std::dec << '\n';
  return 0;
}

int cmd_eval(std::ostream& out, const Common& c, const std::vector<std::string>& tasks, const std::string& policy_name,
             const std::string& checkpoint, int trials, const std::string& reference) {
  RunConfig rc = effective(c, "eval");
  if (!tasks.empty()) rc.eval_tasks = tasks;
  if (trials > 0) rc.eval.trials = trials;
  if (!reference.empty()) rc.eval.reference = reference;
  rc.validate();
  if (c.print_config) {
    out << to_json(rc).dump(2) << '\n';
    return 0;
  }
  std::vector<metrics::EvalTask> et;
  std::size_t ref = 0;
  for (const auto& t : rc.eval_tasks) {
    if (task_label(t) == task_label(rc.eval.reference)) ref = et.size();
    et.push_back({task_label(t), load_task(rc, t, c.config_dir)});
  }
  const fs::path dir = prepare_out(rc);
  const auto ecfg = eval_config(rc, rc.seeds[0]);
  std::vector<metrics::EvalReport> reports;
  if (policy_name == "oracle") {
    metrics::ControllerPolicy p([] { return std::make_unique<sim::ScriptedOracle>(); });
    reports = metrics::run_eval(et, p, ecfg, ref);
  } else if (policy_name == "random") {
    metrics::ControllerPolicy p([] { return std::make_unique<sim::RandomController>(); });
    reports = metrics::run_eval(et, p, ecfg, ref);
  } else {
    if (checkpoint.empty()) throw ConfigError("checkpoint", "--checkpoint is required for the network policy");
    if (!fs::exists(checkpoint)) throw ConfigError("checkpoint", "no such file " + checkpoint);
    ad::ParamTree params = ad::ParamTree::load(checkpoint);
    const auto mc = model_config(rc, *et[0].scene);
    metrics::NetworkPolicy p(params, mc, model::variant_from_name(rc.variant),
                             train::sim_schema(mc.d_self + mc.d_env));
    reports = metrics::run_eval(et, p, ecfg, ref);
  }
  print_reports(out, dir, reports);
  return 0;
}

int cmd_ablate(std::ostream& out, std::ostream& err, const Common& c, const std::vector<std::string>& train_tasks,
               const std::vector<std::string>& eval_tasks, int n_seeds, int trials) {
  RunConfig rc = effective(c, "ablate");
  rc.train_tasks = train_tasks;
  rc.eval_tasks = eval_tasks;
  rc.eval.reference = eval_tasks.front();
  if (trials > 0) rc.eval.trials = trials;
  if (n_seeds > 0 && c.seeds.empty()) {
    rc.seeds.clear();
    for (int i = 0; i < n_seeds; ++i) rc.seeds.push_back(static_cast<std::uint64_t>(i));
  }
  rc.validate();
  if (eval_tasks.size() < 3) throw ConfigError("eval_tasks", "ablate needs reference, transfer and skill tasks");
  if (c.print_config) {
    out << to_json(rc).dump(2) << '\n';
    return 0;
  }
  metrics::AblationConfig ac;
  ac.train_scenes = load_tasks(rc, rc.train_tasks, c);
  for (const auto& t : rc.eval_tasks) ac.eval_tasks.push_back({task_label(t), load_task(rc, t, c.config_dir)});
  ac.protocol = protocol_config(rc, *ac.train_scenes[0]);
  ac.protocol.warn = [&err](const std::string& m) { err << "warning: " << m << '\n'; };
  ac.reference = 0;
  ac.egr_task = 1;
  ac.sgr_task = 2;
  ac.seeds = rc.seeds;
  ac.eval = eval_config(rc, 0);
  const fs::path dir = prepare_out(rc);
  const auto res = metrics::run_ablation(ac, [&out](const metrics::AblationRun& r) {
    out << model::variant_name(r.variant) << " seed " << r.seed << " egr " << metrics::fmt2(r.egr) << " sgr "
        << metrics::fmt2(r.sgr) << '\n';
  });
  std::ostringstream csv;
  metrics::write_ablation_csv(csv, res);
  write_file(dir / "ablation.csv", csv.str());
  for (const auto& s : res.summary) {
    out << "mean " << model::variant_name(s.variant) << " egr " << metrics::fmt2(s.mean_egr) << " sgr "
        << metrics::fmt2(s.mean_sgr) << " (" << s.runs << " runs)\n";
  }
  return 0;
}

int cmd_gradcheck(std::ostream& out, std::uint64_t seed, double tol) {
  bool ok = true;
  std::map<std::string, double> worst;
  for (const auto& e : train::run_gradcheck_suite(seed)) {
    const bool pass = train::gradcheck_passed(e, tol);
    ok = ok && pass;
    worst[e.module] = std::max(worst[e.module], e.finite ? e.max_rel_error : INFINITY);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-12s %-36s %.3e %s", e.module.c_str(), e.name.c_str(), e.max_rel_error,
                  pass ? "ok" : "FAIL");
    out << buf << (pass || e.message.empty() ? "" : "  " + e.message) << '\n';
  }
  for (const auto& [m, v] : worst) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "max %-12s %.3e", m.c_str(), v);
    out << buf << '\n';
  }
  out << (ok ? "gradcheck passed" : "gradcheck FAILED") << '\n';
  return ok ? 0 : kExitFailure;
}

int cmd_gen_scene(std::ostream& out, const Common& c, const std::string& task) {
  RunConfig rc = effective(c, "gen-scene");
  rc.validate();
  out << sim::describe(*load_task(rc, task, c.config_dir));
  return 0;
}

int cmd_gen_traj(std::ostream& out, const Common& c, std::vector<double> start, double heading, int count) {
  RunConfig rc = effective(c, "gen-traj");
  rc.validate();
  if (start.size() != 2) throw ConfigError("start", "expected two coordinates");
  const auto p = sim_params(rc);
  std::mt19937_64 rng(rc.seeds[0]);
  out << "traj,k,t,x,y,sharp_turn\n";
  for (int i = 0; i < count; ++i) {
    const auto t = sim::gen_trajectory(rng, {start[0], start[1]}, heading, p.traj);
    for (std::size_t k = 0; k < t.points.size(); ++k) {
      const bool sharp = k >= 1 && k - 1 < t.sharp.size() && t.sharp[k - 1];
      out << i << ',' << k << ',' << t.times[k] << ',' << t.points[k].x << ',' << t.points[k].y << ','
          << (sharp ? 1 : 0) << '\n';
    }
  }
  return 0;
}

int cmd_heightmap(std::ostream& out, const Common& c, const std::string& task, int object, bool grid) {
  RunConfig rc = effective(c, "heightmap");
  rc.validate();
  const auto scene = load_task(rc, task, c.config_dir);
  if (grid) {
    sim::Env env(scene, sim_params(rc));
    env.reset(rc.seeds[0], sim::Mode::kTest);
    std::vector<double> g(sim::kGridCells);
    env.perception_grid(g);
    for (int i = 0; i < sim::kGridSide; ++i) {
      for (int j = 0; j < sim::kGridSide; ++j) out << (j ? "," : "") << g[i * sim::kGridSide + j];
      out << '\n';
    }
    return 0;
  }
  if (object < 0 || static_cast<std::size_t>(object) >= scene->objects.size())
    throw ConfigError("object", "index out of range for " + scene->name);
  const auto& hm = scene->objects[object].heightmap;
  for (int i = 0; i < sim::Heightmap::kRes; ++i) {
    for (int j = 0; j < sim::Heightmap::kRes; ++j) out << (j ? "," : "") << hm.at(i, j);
    out << '\n';
  }
  return 0;
}

void print_result(std::ostream& out, const sim::EpisodeResult& r) {
  out << "termination " << sim::termination_name(r.cause) << " steps " << r.steps << " outcomes";
  for (double o : r.outcomes) out << ' ' << o;
  out << " lh " << (r.lh_success() ? 1 : 0) << '\n';
}

int cmd_replay(std::ostream& out, const Common& c, const std::string& task, const std::string& file,
               const std::string& record_policy) {
  RunConfig rc = effective(c, "replay");
  rc.validate();
  const auto scene = load_task(rc, task, c.config_dir);
  const auto params = sim_params(rc);
  if (file.empty()) throw ConfigError("file", "--file is required");
  sim::EpisodeTrace trace;
  sim::EpisodeResult result;
  if (!record_policy.empty()) {
    std::unique_ptr<sim::Controller> ctl;
    if (record_policy == "oracle") {
      ctl = std::make_unique<sim::ScriptedOracle>();
    } else if (record_policy == "random") {
      ctl = std::make_unique<sim::RandomController>();
    } else {
      throw ConfigError("record", "expected oracle or random");
    }
    result = sim::run_lh_episode(scene, *ctl, sim::Mode::kTest, rc.seeds[0], params, &trace);
    sim::Replay r{scene->name, rc.seeds[0], sim::Mode::kTest, trace.actions};
    r.save(file);
    out << "recorded " << file << '\n';
  } else {
    if (!fs::exists(file)) throw ConfigError("file", "no such replay " + file);
    const auto r = sim::Replay::load(file);
    if (r.scene != scene->name) throw ConfigError("task", "replay was recorded on " + r.scene);
    result = sim::replay_episode(scene, r, params, &trace);
  }
  print_result(out, result);
  if (!c.out.empty()) {
    const fs::path dir = prepare_out(rc);
    std::ostringstream csv;
    sim::write_episode_csv(csv, trace);
    write_file(dir / "episode.csv", csv.str());
  }
  return 0;
}

// Selects named columns of a CSV text; missing input yields the header only.
std::string select_columns(const std::string& text, const std::vector<std::string>& keep) {
  std::istringstream is(text);
  std::string line;
  std::ostringstream os;
  for (std::size_t i = 0; i < keep.size(); ++i) os << (i ? "," : "") << keep[i];
  os << '\n';
  std::vector<int> idx;
  bool header = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (header) {
      for (const auto& k : keep) {
        auto it = std::find(f.begin(), f.end(), k);
        if (it == f.end()) throw RunError("training log lacks column " + k);
        idx.push_back(static_cast<int>(it - f.begin()));
      }
      header = false;
      continue;
    }
    for (std::size_t i = 0; i < idx.size(); ++i) {
      os << (i ? "," : "") << (static_cast<std::size_t>(idx[i]) < f.size() ? f[idx[i]] : "");
    }
    os << '\n';
  }
  return os.str();
}

metrics::EvalReport as_report(const metrics::RateRow& r, const metrics::DerivedRates& d) {
  metrics::EvalReport e;
  e.task = r.task;
  for (std::size_t k = 0; k < metrics::kColumns; ++k) e.column[k] = r.column[k];
  e.mean_time = r.time_s.value_or(NAN);
  e.lh = r.lh;
  e.egr = d.egr;
  e.sgr = d.sgr;
  return e;
}

int cmd_report(std::ostream& out, std::ostream& err, const Common& c, const std::string& run_dir,
               const std::string& rates, const std::string& reference) {
  RunConfig rc = effective(c, "report");
  rc.validate();
  if (!rates.empty()) {
    std::ifstream f(rates);
    if (!f) throw ConfigError("rates", "cannot open " + rates);
    std::vector<metrics::RateRow> rows;
    try {
      rows = metrics::parse_rate_csv(f);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("rates", e.what());
    }
    if (rows.empty()) throw ConfigError("rates", "no rows");
    const auto derived = metrics::derive_rates(rows, reference.empty() ? rows[0].task : reference);
    std::vector<metrics::EvalReport> reps;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      reps.push_back(as_report(rows[i], derived[i]));
      for (const auto& w : derived[i].warnings) err << "warning: " << w << '\n';
    }
    metrics::write_report_table(out, reps);
    out << "task,egr,sgr\n";
    for (const auto& d : derived) {
      char buf[96];
      std::snprintf(buf, sizeof(buf), "%s,%s,%s", d.task.c_str(), d.egr ? std::to_string(*d.egr).c_str() : "-",
                    d.sgr ? std::to_string(*d.sgr).c_str() : "-");
      out << buf << '\n';
    }
    return 0;
  }
  const fs::path dir = output_path(run_dir.empty() ? rc.output_dir : run_dir);
  const fs::path log = dir / "train_log.csv", rep = dir / "report.csv";
  const bool have_log = fs::exists(log), have_rep = fs::exists(rep);
  if (!have_log && !have_rep) throw ConfigError("run", "no train_log.csv or report.csv in " + dir.string());
  if (have_log) {
    std::string text = read_file(log);
    if (text.find_first_not_of(" \r\n") == std::string::npos) {
      std::ostringstream h;
      train::write_log_header(h);
      text = h.str();
    }
    write_file(dir / "curves.csv", select_columns(text, {"iteration", "stage", "loss", "mean_reward", "success_traj",
                                                         "success_carry", "success_climb", "success_sit",
                                                         "lh_success"}));
    out << "wrote " << (dir / "curves.csv").string() << '\n';
  }
  if (have_rep) {
    std::ifstream f(rep);
    std::vector<metrics::RateRow> rows;
    try {
      rows = metrics::parse_rate_csv(f);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("run.report", e.what());
    }
    if (!rows.empty()) {
      std::string ref = reference.empty() ? rows[0].task : reference;
      const auto derived = metrics::derive_rates(rows, ref);
      std::vector<metrics::EvalReport> reps;
      for (std::size_t i = 0; i < rows.size(); ++i) reps.push_back(as_report(rows[i], derived[i]));
      std::ostringstream table;
      metrics::write_report_table(table, reps);
      write_file(dir / "table.txt", table.str());
      out << table.str();
    }
  }
  return 0;
}

void error_line(std::ostream& err, const std::string& kind, const std::string& msg, const std::string& field = {}) {
  json j{{"error", kind}, {"message", msg}};
  if (!field.empty()) j["field"] = field;
  err << j.dump() << '\n';
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual-stream disentangled policy for long-horizon human-scene interaction", "detach"};
  app.require_subcommand(1, 1);
  Common common;

  auto* train = app.add_subcommand("train", "Run the staged training protocol");
  std::vector<std::string> tasks;
  std::string variant;
  std::vector<int> stage_iters;
  add_common(train, common);
  train->add_option("--task", tasks, "Training task name or config path (repeatable)");
  train->add_option("--variant", variant, "full, a1 or a2");
  train->add_option("--iterations", stage_iters, "Iterations per configured stage");

  auto* eval = app.add_subcommand("eval", "Evaluate a policy on long-horizon tasks");
  std::string policy = "network", checkpoint, reference;
  int trials = 0;
  add_common(eval, common);
  eval->add_option("--task", tasks, "Evaluation task (repeatable)");
  eval->add_option("--policy", policy, "network, oracle or random")
      ->check(CLI::IsMember({"network", "oracle", "random"}));
  eval->add_option("--checkpoint", checkpoint, "Parameter file for the network policy");
  eval->add_option("--trials", trials, "Episodes per task")->check(CLI::PositiveNumber);
  eval->add_option("--reference", reference, "Task used as the EGR reference");

  auto* ablate = app.add_subcommand("ablate", "Train and compare FULL, A1 and A2");
  std::vector<std::string> ab_train{"micro_l1", "micro_l3"}, ab_eval{"micro_l1", "micro_l2", "micro_l3"};
  int n_seeds = 10;
  add_common(ablate, common);
  ablate->add_option("--train-task", ab_train, "Training tasks")->capture_default_str();
  ablate->add_option("--eval-task", ab_eval, "Reference, transfer and skill tasks, in that order")->capture_default_str();
  ablate->add_option("--seeds", n_seeds, "Number of seeds (0..n-1)")->capture_default_str()->check(CLI::PositiveNumber);
  ablate->add_option("--trials", trials, "Episodes per task")->check(CLI::PositiveNumber);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every module and loss");
  std::uint64_t gc_seed = 1;
  double tol = 1e-4;
  gradcheck->add_option("--seed", gc_seed, "Seed")->capture_default_str();
  gradcheck->add_option("--tol", tol, "Relative error bound")->capture_default_str();

  auto* gen_scene = app.add_subcommand("gen-scene", "Build a scene and list its objects");
  std::string task;
  add_common(gen_scene, common);
  gen_scene->add_option("--task,--scene", task, "Task name or config path")->required();

  auto* gen_traj = app.add_subcommand("gen-traj", "Sample reference trajectories as CSV");
  std::vector<double> start{0.0, 0.0};
  double heading = 0.0;
  int count = 1;
  add_common(gen_traj, common);
  gen_traj->add_option("--start", start, "Start x y")->expected(2);
  gen_traj->add_option("--heading", heading, "Initial heading (rad)");
  gen_traj->add_option("--count", count, "Number of trajectories")->capture_default_str()->check(CLI::PositiveNumber);

  auto* heightmap = app.add_subcommand("heightmap", "Print an object heightmap or the perception grid as CSV");
  int object = 0;
  bool grid = false;
  add_common(heightmap, common);
  heightmap->add_option("--task,--scene", task, "Task name or config path")->required();
  heightmap->add_option("--object", object, "Object index")->capture_default_str();
  heightmap->add_flag("--grid", grid, "Egocentric perception grid at the episode start");

  auto* replay = app.add_subcommand("replay", "Record or re-execute an episode action stream");
  std::string file, record;
  add_common(replay, common);
  replay->add_option("--task,--scene", task, "Task name or config path")->required();
  replay->add_option("--file", file, "Replay file")->required();
  replay->add_option("--record", record, "Record a new replay with this controller (oracle, random)");

  auto* report = app.add_subcommand("report", "Tables and curves from a run directory, or rates from a table");
  std::string run_dir, rates;
  add_common(report, common);
  report->add_option("--run", run_dir, "Run directory (default: output_dir)");
  report->add_option("--rates", rates, "Rate table CSV; recomputes EGR and SGR");
  report->add_option("--reference", reference, "Reference task for EGR");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return 0;
    error_line(err, "usage", e.what());
    return kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(out, err, common, tasks, variant, stage_iters);
    if (eval->parsed()) return cmd_eval(out, common, tasks, policy, checkpoint, trials, reference);
    if (ablate->parsed()) return cmd_ablate(out, err, common, ab_train, ab_eval, n_seeds, trials);
    if (gradcheck->parsed()) return cmd_gradcheck(out, gc_seed, tol);
    if (gen_scene->parsed()) return cmd_gen_scene(out, common, task);
    if (gen_traj->parsed()) return cmd_gen_traj(out, common, start, heading, count);
    if (heightmap->parsed()) return cmd_heightmap(out, common, task, object, grid);
    if (replay->parsed()) return cmd_replay(out, common, task, file, record);
    if (report->parsed()) return cmd_report(out, err, common, run_dir, rates, reference);
  } catch (const ConfigError& e) {
    err << "error: config " << e.what() << '\n';
    error_line(err, "config", e.what(), e.field());
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    error_line(err, "runtime", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace detach::cli
