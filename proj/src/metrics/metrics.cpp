#include "detach/metrics/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <stdexcept>

namespace detach::metrics {
namespace {

double half_width(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return 1.96 * std::sqrt(var / n / n);
}

std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

double lh_success_rate(const std::vector<sim::EpisodeResult>& results) {
  if (results.empty()) throw std::invalid_argument("lh_success_rate: no episodes");
  std::size_t ok = 0;
  for (const auto& r : results) ok += r.lh_success() ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(results.size());
}

std::optional<double> egr(double s_li, double s_l1) {
  if (s_l1 == 0.0) return std::nullopt;
  return s_li / s_l1;
}

std::optional<double> sgr(double s_follow, double s_carry, double s_climb, double s_sit) {
  const double den = (s_follow + s_carry) / 2.0;
  if (den == 0.0) return std::nullopt;
  return ((s_climb + s_sit) / 2.0) / den;
}

const char* column_name(std::size_t col) {
  static const char* names[kColumns] = {"follow", "carry", "follow2", "climb", "sit"};
  return col < kColumns ? names[col] : "?";
}

EvalReport summarize(const std::string& task, const std::vector<sim::EpisodeResult>& results) {
  if (results.empty()) throw std::invalid_argument("summarize: no episodes for " + task);
  EvalReport r;
  r.task = task;
  r.trials = results.size();
  r.plan = results[0].skills;
  const std::size_t K = r.plan.size();
  std::vector<std::vector<double>> outcomes(K);
  std::vector<double> lh, times;
  double ret = 0.0;
  for (const auto& e : results) {
    if (e.skills != r.plan) throw std::invalid_argument("summarize: episodes of " + task + " disagree on the plan");
    for (std::size_t k = 0; k < K; ++k) outcomes[k].push_back(e.outcomes[k]);
    lh.push_back(e.lh_success() ? 1.0 : 0.0);
    times.push_back(e.total_time);
    ret += e.total_reward;
  }
  const double n = static_cast<double>(results.size());
  int follows = 0;
  for (std::size_t k = 0; k < K; ++k) {
    const double rate = std::accumulate(outcomes[k].begin(), outcomes[k].end(), 0.0) / n;
    r.subtask_rate.push_back(rate);
    r.subtask_ci.push_back(half_width(outcomes[k]));
    std::size_t col = kColumns;
    switch (r.plan[k]) {
      case sim::Skill::kTraj: col = follows++ == 0 ? 0 : (follows == 2 ? 2 : kColumns); break;
      case sim::Skill::kCarry: col = 1; break;
      case sim::Skill::kClimb: col = 3; break;
      case sim::Skill::kSit: col = 4; break;
    }
    if (col < kColumns && !r.column[col]) r.column[col] = rate;
  }
  r.lh = std::accumulate(lh.begin(), lh.end(), 0.0) / n;
  r.lh_ci = half_width(lh);
  r.mean_time = std::accumulate(times.begin(), times.end(), 0.0) / n;
  r.mean_return = ret / n;
  r.sgr = sgr(r.slot(0), r.slot(1), r.slot(3), r.slot(4));
  return r;
}

std::string fmt2(std::optional<double> v) {
  if (!v || !std::isfinite(*v)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", *v);
  return buf;
}

void write_report_csv(std::ostream& os, const std::vector<EvalReport>& reports) {
  os << "task,follow,carry,follow2,climb,sit,time_s,lh,sgr,egr\n";
  for (const auto& r : reports) {
    os << r.task;
    for (const auto& c : r.column) os << ',' << fmt2(c);
    os << ',' << fmt2(r.mean_time) << ',' << fmt2(r.lh) << ',' << fmt2(r.sgr) << ',' << fmt2(r.egr) << '\n';
  }
}

void write_report_detail_csv(std::ostream& os, const std::vector<EvalReport>& reports) {
  os << "task,subtask,skill,rate,ci95,trials,mean_return\n";
  for (const auto& r : reports) {
    for (std::size_t k = 0; k < r.plan.size(); ++k) {
      os << r.task << ',' << k << ',' << sim::skill_name(r.plan[k]) << ',' << fmt2(r.subtask_rate[k]) << ','
         << fmt2(r.subtask_ci[k]) << ',' << r.trials << ',' << fmt2(r.mean_return) << '\n';
    }
    os << r.task << ",lh,-," << fmt2(r.lh) << ',' << fmt2(r.lh_ci) << ',' << r.trials << ',' << fmt2(r.mean_return)
       << '\n';
  }
}

std::vector<RateRow> parse_rate_csv(std::istream& is) {
  std::vector<RateRow> rows;
  std::string line;
  std::size_t lineno = 0;
  auto cell = [&](const std::string& text) -> std::optional<double> {
    if (text.empty() || text == "-") return std::nullopt;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != text.size()) throw std::invalid_argument("rates line " + std::to_string(lineno) + ": bad number '" + text + "'");
    return v;
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      f.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (f[0] == "task") continue;
    if (f.size() != 10) throw std::invalid_argument("rates line " + std::to_string(lineno) + ": expected 10 columns");
    RateRow r;
    r.task = f[0];
    for (std::size_t c = 0; c < kColumns; ++c) r.column[c] = cell(f[1 + c]);
    r.time_s = cell(f[6]);
    const auto lh = cell(f[7]);
    if (!lh) throw std::invalid_argument("rates line " + std::to_string(lineno) + ": lh is required");
    r.lh = *lh;
    r.sgr = cell(f[8]);
    r.egr = cell(f[9]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<DerivedRates> derive_rates(const std::vector<RateRow>& rows, const std::string& reference, double tol) {
  const RateRow* ref = nullptr;
  for (const auto& r : rows) {
    if (r.task == reference) ref = &r;
  }
  if (ref == nullptr) throw std::invalid_argument("reference task '" + reference + "' not in the rate table");
  std::vector<DerivedRates> out;
  for (const auto& r : rows) {
    DerivedRates d;
    d.task = r.task;
    d.egr = egr(r.lh, ref->lh);
    auto slot = [&](std::size_t c) { return r.column[c].value_or(0.0); };
    d.sgr = sgr(slot(0), slot(1), slot(3), slot(4));
    auto compare = [&](const char* name, const std::optional<double>& stated, const std::optional<double>& got) {
      if (!stated) return;
      if (!got) {
        d.warnings.push_back(r.task + ": " + name + " stated " + fmt2(stated) + " but undefined from the rates");
      } else if (std::abs(*stated - *got) > tol) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s: %s stated %.2f differs from recomputed %.4f", r.task.c_str(), name,
                      *stated, *got);
        d.warnings.push_back(buf);
      }
    };
    if (r.task != reference) compare("egr", r.egr, d.egr);
    compare("sgr", r.sgr, d.sgr);
    out.push_back(std::move(d));
  }
  return out;
}

void write_report_table(std::ostream& os, const std::vector<EvalReport>& reports) {
  os << std::left << std::setw(12) << "task";
  for (const char* h : {"follow", "carry", "follow2", "climb", "sit", "time_s", "lh", "sgr", "egr"}) {
    os << std::right << std::setw(9) << h;
  }
  os << '\n';
  for (const auto& r : reports) {
    os << std::left << std::setw(12) << r.task << std::right;
    for (const auto& c : r.column) os << std::setw(9) << fmt2(c);
    os << std::setw(9) << fmt2(r.mean_time) << std::setw(9) << fmt2(r.lh) << std::setw(9) << fmt2(r.sgr)
       << std::setw(9) << fmt2(r.egr) << '\n';
  }
}

void ControllerPolicy::begin(std::size_t lane, const sim::Env& env, std::uint64_t seed) {
  if (lanes_.size() <= lane) lanes_.resize(lane + 1);
  if (!lanes_[lane]) lanes_[lane] = make_();
  lanes_[lane]->reset(env, seed);
}

void ControllerPolicy::act(std::span<const std::size_t> lanes, std::span<sim::Env* const> envs,
                           std::vector<std::vector<double>>& actions) {
  actions.resize(lanes.size());
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    obs_.resize(envs[i]->obs_dim());
    envs[i]->observe(obs_);
    actions[i].assign(sim::kActionDim, 0.0);
    lanes_[lanes[i]]->act(*envs[i], obs_, actions[i]);
  }
}

NetworkPolicy::NetworkPolicy(ad::ParamTree& params, model::ModelConfig cfg, model::Variant v,
                             obs::SeparationSchema schema)
    : params_(params), cfg_(std::move(cfg)), variant_(v), schema_(std::move(schema)) {}

void NetworkPolicy::push(std::size_t lane, const sim::Env& env, bool fill) {
  const std::size_t D = env.obs_dim(), W = cfg_.window;
  if (D != schema_.width()) throw std::invalid_argument("NetworkPolicy: observation width differs from schema");
  auto& w = windows_[lane];
  const auto obs = env.observe();
  if (fill) {
    w.resize(W * D);
    for (std::size_t t = 0; t < W; ++t) std::copy(obs.begin(), obs.end(), w.begin() + t * D);
    return;
  }
  std::copy(w.begin() + D, w.end(), w.begin());
  std::copy(obs.begin(), obs.end(), w.end() - D);
}

void NetworkPolicy::begin(std::size_t lane, const sim::Env& env, std::uint64_t) {
  if (windows_.size() <= lane) {
    windows_.resize(lane + 1);
    fresh_.resize(lane + 1);
  }
  push(lane, env, true);
  fresh_[lane] = true;
}

void NetworkPolicy::act(std::span<const std::size_t> lanes, std::span<sim::Env* const> envs,
                        std::vector<std::vector<double>>& actions) {
  const std::size_t D = schema_.width(), W = cfg_.window, B = lanes.size();
  std::vector<double> raw(B * W * D);
  for (std::size_t i = 0; i < B; ++i) {
    const std::size_t lane = lanes[i];
    if (!fresh_[lane]) push(lane, *envs[i], false);
    fresh_[lane] = false;
    std::copy(windows_[lane].begin(), windows_[lane].end(), raw.begin() + i * W * D);
  }
  const auto out = model::evaluate(params_, cfg_, variant_, model::batch_from_raw(raw, B, W, schema_));
  std::mt19937_64 unused;
  actions.resize(B);
  for (std::size_t i = 0; i < B; ++i) actions[i] = model::sample_action(out.dist[i], model::ActMode::kMean, unused);
}

std::uint64_t trial_seed(const EvalConfig& cfg, std::size_t trial) {
  if (!cfg.seeds.empty()) return cfg.seeds.at(trial);
  return mix(mix(cfg.seed) ^ static_cast<std::uint64_t>(trial));
}

std::vector<EvalReport> run_eval(const std::vector<EvalTask>& tasks, EvalPolicy& policy, const EvalConfig& cfg,
                                 std::size_t reference, std::vector<std::vector<sim::EpisodeResult>>* episodes) {
  if (cfg.trials == 0) throw std::invalid_argument("eval.trials: must be at least 1");
  if (!cfg.seeds.empty() && cfg.seeds.size() < cfg.trials) throw std::invalid_argument("eval.seeds: fewer seeds than trials");
  if (cfg.lanes == 0) throw std::invalid_argument("eval.lanes: must be positive");
  std::vector<EvalReport> reports;
  if (episodes != nullptr) episodes->clear();
  for (const auto& task : tasks) {
    std::vector<sim::EpisodeResult> results(cfg.trials);
    const std::size_t L = std::min(cfg.lanes, cfg.trials);
    std::vector<sim::Env> envs(L, sim::Env(task.scene, cfg.sim));
    std::vector<std::size_t> trial_of(L);
    std::vector<bool> live(L, false);
    std::size_t next = 0;
    auto start = [&](std::size_t lane) {
      const std::uint64_t s = trial_seed(cfg, next);
      envs[lane].reset(s, sim::Mode::kTest);
      policy.begin(lane, envs[lane], s);
      trial_of[lane] = next++;
      live[lane] = true;
    };
    for (std::size_t lane = 0; lane < L; ++lane) start(lane);
    std::vector<std::size_t> active;
    std::vector<sim::Env*> ptrs;
    std::vector<std::vector<double>> actions;
    while (true) {
      active.clear();
      ptrs.clear();
      for (std::size_t lane = 0; lane < L; ++lane) {
        if (live[lane]) {
          active.push_back(lane);
          ptrs.push_back(&envs[lane]);
        }
      }
      if (active.empty()) break;
      policy.act(active, ptrs, actions);
      for (std::size_t i = 0; i < active.size(); ++i) {
        const std::size_t lane = active[i];
        if (envs[lane].step(actions[i]).done) {
          results[trial_of[lane]] = envs[lane].result();
          live[lane] = false;
          if (next < cfg.trials) start(lane);
        }
      }
    }
    reports.push_back(summarize(task.name, results));
    if (episodes != nullptr) episodes->push_back(std::move(results));
  }
  if (reference < reports.size()) {
    for (auto& r : reports) r.egr = egr(r.lh, reports[reference].lh);
  }
  return reports;
}

ad::ParamTree build_ablation(const ad::ParamTree& full, const model::ModelConfig& cfg, model::Variant v,
                             std::uint64_t seed) {
  ad::ParamTree out = model::init_params(cfg, v, seed);
  for (auto* p : out.all()) {
    if (!full.contains(p->name)) continue;
    const auto& src = full.get(p->name);
    if (src.value.shape() == p->value.shape()) p->value = src.value;
  }
  return out;
}

}  // namespace detach::metrics
