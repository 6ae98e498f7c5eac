#pragma once

/**
 * @file
 * @brief Latency statistics, motion preservation, cumulative gain and collision safety score.
 */

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace dexqp {

struct LatencyStats
{
  double mean = 0.0;
  /// population standard deviation
  double std = 0.0;
  /// nearest-rank 99th percentile
  double p99 = 0.0;
  /// fraction of samples strictly below the control period
  double rt_fraction = 0.0;
  double period = 0.0;
  std::size_t count = 0;
};

/// Nearest-rank percentile: the ⌈p/100·n⌉-th smallest sample.
inline double nearest_rank_percentile(std::vector<double> values, double percent)
{
  if (values.empty()) { throw std::invalid_argument("percentile of an empty sequence"); }
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  auto rank = static_cast<std::size_t>(std::ceil(percent / 100.0 * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return values[rank - 1];
}

inline LatencyStats latency_stats(std::span<const double> latencies, double period)
{
  if (latencies.empty()) { throw std::invalid_argument("latency_stats: empty input"); }
  LatencyStats s;
  s.count = latencies.size();
  s.period = period;
  const double n = static_cast<double>(latencies.size());
  double sum = 0.0;
  std::size_t below = 0;
  for (double l : latencies) {
    sum += l;
    below += l < period ? 1 : 0;
  }
  s.mean = sum / n;
  double ss = 0.0;
  for (double l : latencies) { ss += (l - s.mean) * (l - s.mean); }
  s.std = std::sqrt(ss / n);
  s.p99 = nearest_rank_percentile(std::vector<double>(latencies.begin(), latencies.end()), 99.0);
  s.rt_fraction = static_cast<double>(below) / n;
  return s;
}

/// Directional anchors: each is a (from, to) keypoint index pair plus a weight.
struct MotionPreservationConfig
{
  std::vector<std::pair<std::size_t, std::size_t>> anchors;
  std::vector<double> weights;

  void validate() const
  {
    if (anchors.size() != weights.size()) { throw std::invalid_argument("motion preservation: one weight per anchor"); }
    double sum = 0.0;
    for (double w : weights) {
      if (w < 0.0) { throw std::invalid_argument("motion preservation: weights must be non-negative"); }
      sum += w;
    }
    if (!anchors.empty() && std::abs(sum - 1.0) > 1e-12) {
      throw std::invalid_argument("motion preservation: weights must sum to 1");
    }
  }

  /// Uniform weights over the given anchors.
  static MotionPreservationConfig uniform(std::vector<std::pair<std::size_t, std::size_t>> anchors)
  {
    MotionPreservationConfig cfg;
    cfg.weights.assign(anchors.size(), anchors.empty() ? 0.0 : 1.0 / static_cast<double>(anchors.size()));
    cfg.anchors = std::move(anchors);
    return cfg;
  }
};

struct MotionPreservation
{
  /// E_t = (1/N) Σ w_i ε_i over the usable anchors
  double value = 0.0;
  /// anchors dropped for a zero-length direction on either hand
  std::size_t skipped = 0;
};

using KeypointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3>;

/**
 * @brief Weighted directional dissimilarity between human and robot anchor vectors.
 *
 * ε_i = 1 − d_Hᵀ d_R with unit directions. Degenerate anchors are skipped and the remaining
 * weights renormalized to sum to one; N counts the anchors actually used.
 */
inline MotionPreservation motion_preservation(
  const KeypointMatrix & human, const KeypointMatrix & robot, const MotionPreservationConfig & cfg)
{
  cfg.validate();
  if (human.rows() != robot.rows()) { throw std::invalid_argument("motion preservation: keypoint count mismatch"); }
  std::vector<double> eps;
  std::vector<double> w;
  MotionPreservation out;
  for (std::size_t k = 0; k < cfg.anchors.size(); ++k) {
    const auto [from, to] = cfg.anchors[k];
    if (std::max(from, to) >= static_cast<std::size_t>(human.rows())) {
      throw std::out_of_range("motion preservation: anchor keypoint index out of range");
    }
    const Eigen::Vector3d dh = (human.row(static_cast<Eigen::Index>(to)) - human.row(static_cast<Eigen::Index>(from))).transpose();
    const Eigen::Vector3d dr = (robot.row(static_cast<Eigen::Index>(to)) - robot.row(static_cast<Eigen::Index>(from))).transpose();
    if (dh.norm() <= 1e-9 || dr.norm() <= 1e-9) {
      ++out.skipped;
      continue;
    }
    eps.push_back(1.0 - dh.normalized().dot(dr.normalized()));
    w.push_back(cfg.weights[k]);
  }
  if (eps.empty()) { return out; }
  double wsum = 0.0;
  for (double x : w) { wsum += x; }
  double acc = 0.0;
  for (std::size_t k = 0; k < eps.size(); ++k) { acc += (wsum > 0.0 ? w[k] / wsum : 1.0 / static_cast<double>(w.size())) * eps[k]; }
  out.value = acc / static_cast<double>(eps.size());
  return out;
}

/**
 * @brief Running G_rel(T) = (E_c^base(T) − E_c^ours(T)) / E_c^base(T).
 *
 * Entries where the baseline cumulative error is zero are left empty.
 */
inline std::vector<std::optional<double>> cumulative_gain(std::span<const double> ours, std::span<const double> baseline)
{
  if (ours.size() != baseline.size()) { throw std::invalid_argument("cumulative_gain: series lengths differ"); }
  std::vector<std::optional<double>> out(ours.size());
  double co = 0.0;
  double cb = 0.0;
  for (std::size_t t = 0; t < ours.size(); ++t) {
    co += ours[t];
    cb += baseline[t];
    if (cb != 0.0) { out[t] = (cb - co) / cb; }
  }
  return out;
}

struct SafetyConfig
{
  double d_safe = 0.01;
};

struct SafetyReport
{
  std::vector<double> per_step_score;
  /// minimum clearance over the trial
  double d_self = 0.0;
  double overall_score = 0.0;
  /// fraction of steps whose score is at least 0.8
  double fraction_above_08 = 0.0;
};

inline double clip01(double x) { return std::clamp(x, 0.0, 1.0); }

/// Scores clip(h / D_safe, 0, 1) per step and for the trial minimum.
inline SafetyReport safety_score(std::span<const double> h_min_per_step, const SafetyConfig & cfg)
{
  if (h_min_per_step.empty()) { throw std::invalid_argument("safety_score: empty series"); }
  if (!(cfg.d_safe > 0.0)) { throw std::invalid_argument("safety_score: D_safe must be positive"); }
  SafetyReport r;
  r.per_step_score.reserve(h_min_per_step.size());
  r.d_self = h_min_per_step.front();
  std::size_t good = 0;
  for (double h : h_min_per_step) {
    const double s = clip01(h / cfg.d_safe);
    r.per_step_score.push_back(s);
    good += s >= 0.8 ? 1 : 0;
    r.d_self = std::min(r.d_self, h);
  }
  r.overall_score = clip01(r.d_self / cfg.d_safe);
  r.fraction_above_08 = static_cast<double>(good) / static_cast<double>(h_min_per_step.size());
  return r;
}

/// Report document. Infinite clearances (no monitored pairs) serialize as null.
inline nlohmann::json report_json(
  const LatencyStats & latency, std::span<const double> motion_per_step, const SafetyReport & safety,
  const std::optional<std::vector<std::optional<double>>> & gain = std::nullopt)
{
  using nlohmann::json;
  auto finite_or_null = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  double mp_mean = 0.0;
  for (double v : motion_per_step) { mp_mean += v; }
  if (!motion_per_step.empty()) { mp_mean /= static_cast<double>(motion_per_step.size()); }

  json doc;
  doc["latency"] = {
    {"mean_s", latency.mean},
    {"std_s", latency.std},
    {"p99_s", latency.p99},
    {"rt_fraction", latency.rt_fraction},
    {"period_s", latency.period}};
  doc["motion_preservation"] = {
    {"per_step", std::vector<double>(motion_per_step.begin(), motion_per_step.end())}, {"mean", mp_mean}};
  doc["safety"] = {
    {"per_step_score", safety.per_step_score},
    {"d_self_m", finite_or_null(safety.d_self)},
    {"overall_score", safety.overall_score},
    {"fraction_above_0.8", safety.fraction_above_08}};
  if (gain) {
    json g = json::array();
    for (const auto & v : *gain) { g.push_back(v ? json(*v) : json(nullptr)); }
    doc["gain_vs_baseline"] = std::move(g);
  }
  return doc;
}

}  // namespace dexqp
