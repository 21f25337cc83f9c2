#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace detach::obs {

struct MiEstimate {
  double nats = 0.0;
  bool regularized = false;  // joint covariance was singular; ridge added
};

// Gaussian-approximation mutual information between two blocks of samples
// (rows are samples). Both blocks are standardized per column first; a
// zero-variance column standardizes to zero.
MiEstimate mi_estimate(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

inline constexpr double kMiRidge = 1e-6;
inline constexpr std::size_t kMiMinSamples = 32;

struct DisentanglementConfig {
  double gamma = 0.99;
  std::size_t horizon = 0;  // T; the sum runs over t = 0..T
  double mi_floor = 1e-3;
  std::size_t window = 256;
};

// D = sum_t gamma^t / max(I_t, mi_floor) for precomputed I_t, t = 0..T.
double disentanglement_from_mi(const std::vector<double>& mi, const DisentanglementConfig& cfg);

// I_t is estimated over a window of cfg.window rows centered at t (truncated
// at the series ends). Rows of both series are aligned in time.
double disentanglement_score(const Eigen::MatrixXd& env_series, const Eigen::MatrixXd& self_series,
                             const DisentanglementConfig& cfg, std::vector<double>* mi_out = nullptr);

}  // namespace detach::obs
