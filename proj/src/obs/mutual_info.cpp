#include "detach/obs/mutual_info.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace detach::obs {
namespace {

Eigen::MatrixXd standardize(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m.rowwise() - m.colwise().mean();
  const double n = static_cast<double>(m.rows());
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    const double sd = std::sqrt(out.col(c).squaredNorm() / n);
    if (sd > 0.0 && std::isfinite(sd)) {
      out.col(c) /= sd;
    } else {
      out.col(c).setZero();
    }
  }
  return out;
}

// log det via Cholesky; nullopt-like NaN when not safely positive definite.
double logdet_or_nan(const Eigen::MatrixXd& s) {
  if (s.rows() == 0) return 0.0;
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success) return std::nan("");
  const Eigen::VectorXd d = llt.matrixLLT().diagonal();
  if (d.minCoeff() <= 1e-7) return std::nan("");
  return 2.0 * d.array().log().sum();
}

double logdet_ridge(Eigen::MatrixXd s) {
  s.diagonal().array() += kMiRidge;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
  return ldlt.vectorD().array().abs().max(1e-300).log().sum();
}

}  // namespace

MiEstimate mi_estimate(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows()) {
    throw std::invalid_argument("mi_estimate: sample counts differ (" + std::to_string(x.rows()) + " vs " +
                                std::to_string(y.rows()) + ")");
  }
  if (static_cast<std::size_t>(x.rows()) < kMiMinSamples) {
    throw std::invalid_argument("mi_estimate: need at least 32 samples, got " + std::to_string(x.rows()));
  }
  if (!x.allFinite() || !y.allFinite()) throw std::invalid_argument("mi_estimate: non-finite samples");
  MiEstimate r;
  if (x.cols() == 0 || y.cols() == 0) return r;
  Eigen::MatrixXd joint(x.rows(), x.cols() + y.cols());
  joint << standardize(x), standardize(y);
  const Eigen::MatrixXd cov = joint.transpose() * joint / static_cast<double>(x.rows());
  const Eigen::Index dx = x.cols(), dy = y.cols();
  const Eigen::MatrixXd sxx = cov.topLeftCorner(dx, dx);
  const Eigen::MatrixXd syy = cov.bottomRightCorner(dy, dy);
  double lj = logdet_or_nan(cov), lx = logdet_or_nan(sxx), ly = logdet_or_nan(syy);
  if (std::isnan(lj) || std::isnan(lx) || std::isnan(ly)) {
    r.regularized = true;
    lj = logdet_ridge(cov);
    lx = logdet_ridge(sxx);
    ly = logdet_ridge(syy);
  }
  r.nats = std::max(0.0, 0.5 * (lx + ly - lj));
  return r;
}

double disentanglement_from_mi(const std::vector<double>& mi, const DisentanglementConfig& cfg) {
  if (!(cfg.gamma >= 0.0 && cfg.gamma < 1.0)) throw std::invalid_argument("disentanglement: gamma must be in [0, 1)");
  if (!(cfg.mi_floor > 0.0)) throw std::invalid_argument("disentanglement: mi_floor must be positive");
  if (mi.size() < cfg.horizon + 1) {
    throw std::invalid_argument("disentanglement: need " + std::to_string(cfg.horizon + 1) + " MI values, got " +
                                std::to_string(mi.size()));
  }
  double d = 0.0, disc = 1.0;
  for (std::size_t t = 0; t <= cfg.horizon; ++t) {
    d += disc / std::max(mi[t], cfg.mi_floor);
    disc *= cfg.gamma;
  }
  return d;
}

double disentanglement_score(const Eigen::MatrixXd& env_series, const Eigen::MatrixXd& self_series,
                             const DisentanglementConfig& cfg, std::vector<double>* mi_out) {
  const auto n = static_cast<std::size_t>(env_series.rows());
  if (static_cast<std::size_t>(self_series.rows()) != n) {
    throw std::invalid_argument("disentanglement: series lengths differ");
  }
  if (n < cfg.horizon + 1) {
    throw std::invalid_argument("disentanglement: series of length " + std::to_string(n) + " shorter than T+1 = " +
                                std::to_string(cfg.horizon + 1));
  }
  std::vector<double> mi(cfg.horizon + 1);
  const std::size_t half = cfg.window / 2;
  for (std::size_t t = 0; t <= cfg.horizon; ++t) {
    const std::size_t lo = t > half ? t - half : 0;
    const std::size_t hi = std::min(n, t + (cfg.window - half));
    const auto rows = static_cast<Eigen::Index>(hi - lo);
    mi[t] = mi_estimate(env_series.middleRows(static_cast<Eigen::Index>(lo), rows),
                        self_series.middleRows(static_cast<Eigen::Index>(lo), rows))
                .nats;
  }
  if (mi_out) *mi_out = mi;
  return disentanglement_from_mi(mi, cfg);
}

}  // namespace detach::obs
