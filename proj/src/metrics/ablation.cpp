#include "detach/metrics/ablation.hpp"

#include <chrono>
#include <stdexcept>

namespace detach::metrics {

const VariantSummary& AblationResult::of(model::Variant v) const {
  for (const auto& s : summary) {
    if (s.variant == v) return s;
  }
  throw std::out_of_range("ablation: variant " + std::string(model::variant_name(v)) + " not run");
}

AblationResult run_ablation(const AblationConfig& cfg, const std::function<void(const AblationRun&)>& on_run) {
  if (cfg.seeds.empty()) throw std::invalid_argument("ablation.seeds: at least one seed required");
  const std::size_t n = cfg.eval_tasks.size();
  if (cfg.reference >= n || cfg.egr_task >= n || cfg.sgr_task >= n) {
    throw std::invalid_argument("ablation: task index out of range");
  }
  AblationResult res;
  for (auto v : cfg.variants) res.summary.push_back({v});
  for (std::uint64_t seed : cfg.seeds) {
    const ad::ParamTree full = model::init_params(cfg.protocol.model, model::Variant::kFull, seed);
    for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi) {
      const auto v = cfg.variants[vi];
      const auto t0 = std::chrono::steady_clock::now();
      train::ProtocolConfig pc = cfg.protocol;
      pc.variant = v;
      pc.out_dir.clear();
      auto trained = train::run_protocol(pc, cfg.train_scenes, seed, build_ablation(full, pc.model, v, seed));
      NetworkPolicy policy(trained.params, pc.model, v, train::sim_schema(pc.model.d_self + pc.model.d_env));
      AblationRun run;
      run.variant = v;
      run.seed = seed;
      run.reports = run_eval(cfg.eval_tasks, policy, cfg.eval, cfg.reference);
      run.egr = run.reports[cfg.egr_task].egr;
      run.sgr = run.reports[cfg.sgr_task].sgr;
      run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      auto& s = res.summary[vi];
      ++s.runs;
      if (run.egr) {
        s.mean_egr += *run.egr;
        ++s.egr_defined;
      }
      if (run.sgr) {
        s.mean_sgr += *run.sgr;
        ++s.sgr_defined;
      }
      if (on_run) on_run(run);
      res.runs.push_back(std::move(run));
    }
  }
  for (auto& s : res.summary) {
    if (s.egr_defined > 0) s.mean_egr /= static_cast<double>(s.egr_defined);
    if (s.sgr_defined > 0) s.mean_sgr /= static_cast<double>(s.sgr_defined);
  }
  return res;
}

void write_ablation_csv(std::ostream& os, const AblationResult& r) {
  os << "variant,seed,egr,sgr,seconds";
  if (!r.runs.empty()) {
    for (const auto& rep : r.runs[0].reports) os << ',' << rep.task << "_lh";
  }
  os << '\n';
  for (const auto& run : r.runs) {
    os << model::variant_name(run.variant) << ',' << run.seed << ',' << fmt2(run.egr) << ',' << fmt2(run.sgr) << ','
       << fmt2(run.seconds);
    for (const auto& rep : run.reports) os << ',' << fmt2(rep.lh);
    os << '\n';
  }
}

}  // namespace detach::metrics
