#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "detach/model/policy.hpp"
#include "detach/sim/episode.hpp"

namespace detach::metrics {

// Fraction of episodes whose every subtask outcome is 1. Throws on an empty list.
double lh_success_rate(const std::vector<sim::EpisodeResult>& results);

// S_Li / S_L1, unclamped; nullopt when S_L1 is zero.
std::optional<double> egr(double s_li, double s_l1);

// ((S_climb + S_sit) / 2) / ((S_follow + S_carry) / 2). Absent skills are
// passed as 0. nullopt on a zero denominator.
std::optional<double> sgr(double s_follow, double s_carry, double s_climb, double s_sit);

// Report columns: follow, carry, follow2, climb, sit. The first traj subtask
// fills "follow", a second one "follow2".
inline constexpr std::size_t kColumns = 5;
const char* column_name(std::size_t col);

struct EvalReport {
  std::string task;
  std::size_t trials = 0;
  std::vector<sim::Skill> plan;
  std::vector<double> subtask_rate;  // per plan position, mean outcome
  std::vector<double> subtask_ci;    // 95% normal-approximation half-width
  std::optional<double> column[kColumns];
  double lh = 0.0, lh_ci = 0.0;
  double mean_time = 0.0;    // seconds from episode start to termination
  double mean_return = 0.0;  // undiscounted episode reward
  std::optional<double> egr;
  std::optional<double> sgr;

  // Skill rate for the SGR slots: the column value, 0 when absent.
  double slot(std::size_t col) const { return column[col].value_or(0.0); }
};

EvalReport summarize(const std::string& task, const std::vector<sim::EpisodeResult>& results);

// Two-decimal rendering used by all reports.
std::string fmt2(std::optional<double> v);

// Columns: task, follow, carry, follow2, climb, sit, time_s, lh, sgr, egr.
void write_report_csv(std::ostream& os, const std::vector<EvalReport>& reports);
void write_report_table(std::ostream& os, const std::vector<EvalReport>& reports);
// Per-subtask rates with confidence half-widths, trials and mean return.
void write_report_detail_csv(std::ostream& os, const std::vector<EvalReport>& reports);

// A row of externally supplied rates in report-CSV layout. sgr/egr hold the
// stated values, if any, for comparison with the recomputed ones.
struct RateRow {
  std::string task;
  std::optional<double> column[kColumns];
  std::optional<double> time_s;
  double lh = 0.0;
  std::optional<double> sgr, egr;
};

// Parses report-CSV text; "-" or an empty cell marks an absent value.
// Throws std::invalid_argument naming the line on malformed input.
std::vector<RateRow> parse_rate_csv(std::istream& is);

struct DerivedRates {
  std::string task;
  std::optional<double> egr, sgr;
  std::vector<std::string> warnings;  // stated vs recomputed mismatches beyond tol
};

// Recomputes EGR (against the row named `reference`) and SGR for every row.
std::vector<DerivedRates> derive_rates(const std::vector<RateRow>& rows, const std::string& reference,
                                       double tol = 0.005);

// Batched actor for evaluation lanes.
class EvalPolicy {
 public:
  virtual ~EvalPolicy() = default;
  virtual void begin(std::size_t lane, const sim::Env& env, std::uint64_t seed) = 0;
  // One action per listed lane, in order.
  virtual void act(std::span<const std::size_t> lanes, std::span<sim::Env* const> envs,
                   std::vector<std::vector<double>>& actions) = 0;
};

// Wraps a scripted sim::Controller, one instance per lane.
class ControllerPolicy : public EvalPolicy {
 public:
  using Factory = std::function<std::unique_ptr<sim::Controller>()>;
  explicit ControllerPolicy(Factory make) : make_(std::move(make)) {}
  void begin(std::size_t lane, const sim::Env& env, std::uint64_t seed) override;
  void act(std::span<const std::size_t> lanes, std::span<sim::Env* const> envs,
           std::vector<std::vector<double>>& actions) override;

 private:
  Factory make_;
  std::vector<std::unique_ptr<sim::Controller>> lanes_;
  std::vector<double> obs_;
};

// Trained network acting on its mean action with full cross-attention input.
class NetworkPolicy : public EvalPolicy {
 public:
  NetworkPolicy(ad::ParamTree& params, model::ModelConfig cfg, model::Variant v, obs::SeparationSchema schema);
  void begin(std::size_t lane, const sim::Env& env, std::uint64_t seed) override;
  void act(std::span<const std::size_t> lanes, std::span<sim::Env* const> envs,
           std::vector<std::vector<double>>& actions) override;

 private:
  void push(std::size_t lane, const sim::Env& env, bool fill);

  ad::ParamTree& params_;
  model::ModelConfig cfg_;
  model::Variant variant_;
  obs::SeparationSchema schema_;
  std::vector<std::vector<double>> windows_;
  std::vector<bool> fresh_;
};

struct EvalConfig {
  std::size_t trials = 100;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;  // explicit per-trial seeds; overrides `seed` when non-empty
  std::size_t lanes = 64;
  sim::SimParams sim;
};

struct EvalTask {
  std::string name;
  std::shared_ptr<const sim::SceneSpec> scene;
};

// Runs every task in test mode. EGR is taken against tasks[reference].
std::vector<EvalReport> run_eval(const std::vector<EvalTask>& tasks, EvalPolicy& policy, const EvalConfig& cfg,
                                 std::size_t reference = 0,
                                 std::vector<std::vector<sim::EpisodeResult>>* episodes = nullptr);

std::uint64_t trial_seed(const EvalConfig& cfg, std::size_t trial);

// Parameters for an ablated variant: tensors shared with `full` (same name
// and shape) are copied, the replaced encoder is freshly initialized.
ad::ParamTree build_ablation(const ad::ParamTree& full, const model::ModelConfig& cfg, model::Variant v,
                             std::uint64_t seed);

}  // namespace detach::metrics
