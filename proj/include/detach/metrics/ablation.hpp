#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "detach/metrics/metrics.hpp"
#include "detach/train/protocol.hpp"

namespace detach::metrics {

struct AblationConfig {
  train::ProtocolConfig protocol;  // variant field is overridden per run
  train::SceneList train_scenes;
  std::vector<EvalTask> eval_tasks;
  std::size_t reference = 0;  // S_L1 task for EGR
  std::size_t egr_task = 1;   // task whose EGR is compared
  std::size_t sgr_task = 2;   // task whose SGR is compared
  std::vector<std::uint64_t> seeds;
  std::vector<model::Variant> variants{model::Variant::kFull, model::Variant::kA1, model::Variant::kA2};
  EvalConfig eval;
};

struct AblationRun {
  model::Variant variant;
  std::uint64_t seed = 0;
  std::vector<EvalReport> reports;
  std::optional<double> egr, sgr;
  double seconds = 0.0;
};

struct VariantSummary {
  model::Variant variant;
  double mean_egr = 0.0, mean_sgr = 0.0;  // over runs where the value is defined
  std::size_t egr_defined = 0, sgr_defined = 0, runs = 0;
};

struct AblationResult {
  std::vector<AblationRun> runs;
  std::vector<VariantSummary> summary;
  const VariantSummary& of(model::Variant v) const;
};

// Trains every variant from the same seeded initialization (ablated encoders
// re-initialized) with the identical protocol, then evaluates.
AblationResult run_ablation(const AblationConfig& cfg, const std::function<void(const AblationRun&)>& on_run = {});

void write_ablation_csv(std::ostream& os, const AblationResult& r);

}  // namespace detach::metrics
