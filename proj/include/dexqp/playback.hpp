#pragma once

/**
 * @file
 * @brief Trace playback through the QP path or the nonlinear baseline, plus the metrics
 * that go with a run.
 */

#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dexqp/baseline.hpp"
#include "dexqp/metrics.hpp"
#include "dexqp/retarget.hpp"
#include "dexqp/trace.hpp"

namespace dexqp {

enum class SolverPath { Qp, Baseline };

inline const char * to_string(SolverPath p) { return p == SolverPath::Qp ? "qp" : "baseline"; }

/**
 * @brief Replays frames through the nonlinear solver, warm-started from the previous
 * solution, producing the same record type as the QP path.
 *
 * qp_status is `solved` when the solver met its tolerance and `iteration-limit` otherwise.
 */
inline std::vector<StepResult> run_baseline(
  const HandModel & model, const RetargetParams & params, std::span<const KeypointFrame> frames,
  std::optional<Configuration> initial = std::nullopt, NlpParams nlp = {})
{
  params.validate();
  nlp.alpha = params.alpha;
  nlp.beta = params.beta;
  Configuration q = clamp(model, initial.value_or(Configuration{VecX::Zero(static_cast<Eigen::Index>(model.nq()))}));
  std::vector<StepResult> out;
  out.reserve(frames.size());
  for (std::size_t k = 0; k < frames.size(); ++k) {
    if (k > 0 && frames[k].t < frames[k - 1].t) {
      throw std::invalid_argument("frame " + std::to_string(k) + " has a non-monotone timestamp");
    }
    const KeypointFrame frame = scale_frame(frames[k], params.keypoint_scale);
    const NlpResult r = solve_nonlinear(model, q, frame, nlp);

    StepResult s;
    s.t = frame.t;
    s.dq = r.q.q - q.q;
    s.q = r.q;
    s.solve_latency = r.latency;
    s.qp_status = r.converged ? QpStatus::Solved : QpStatus::IterationLimit;
    s.qp_iterations = r.iterations;
    const FkResult fk = forward_kinematics(model, r.q);
    s.robot_keypoints = fk.keypoint_positions;
    for (const auto & pair : model.collision_pairs()) {
      const double h = capsule_distance(model, fk, pair).h;
      s.pair_clearances.push_back(h);
      s.h_min = std::min(s.h_min, h);
    }
    const auto nk = frame.kp.rows();
    s.tracking_error = nk ? std::sqrt((frame.kp - s.robot_keypoints).rowwise().squaredNorm().sum() / static_cast<double>(nk)) : 0.0;
    out.push_back(std::move(s));
    q = r.q;
  }
  return out;
}

struct PlaybackResult
{
  SolverPath path = SolverPath::Qp;
  std::vector<StepResult> steps;
  /// E_t per step, human directions from the (scaled) input frames
  std::vector<double> motion;
  LatencyStats latency;
  SafetyReport safety;
};

inline std::vector<double> latencies(std::span<const StepResult> steps)
{
  std::vector<double> l;
  l.reserve(steps.size());
  for (const auto & s : steps) { l.push_back(s.solve_latency); }
  return l;
}

inline PlaybackResult play(
  std::shared_ptr<const HandModel> model, const RetargetParams & params, std::span<const KeypointFrame> frames,
  SolverPath path, std::optional<Configuration> initial = std::nullopt)
{
  if (frames.empty()) { throw std::invalid_argument("playback: trace has no frames"); }
  PlaybackResult out;
  out.path = path;
  out.steps = path == SolverPath::Qp ? run_session(model, params, frames, initial)
                                     : run_baseline(*model, params, frames, initial);
  const auto anchors = default_anchors(*model);
  std::vector<double> hmins;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const KeypointFrame human = scale_frame(frames[k], params.keypoint_scale);
    out.motion.push_back(motion_preservation(human.kp, out.steps[k].robot_keypoints, anchors).value);
    hmins.push_back(out.steps[k].h_min);
  }
  out.latency = latency_stats(latencies(out.steps), params.dt);
  out.safety = safety_score(hmins, SafetyConfig{params.safety_threshold > 0.0 ? params.safety_threshold : 0.01});
  return out;
}

struct LatencyComparison
{
  LatencyStats qp;
  LatencyStats baseline;
};

/**
 * @brief Times both paths over the same frames, `reps` times.
 *
 * Each frame is stepped through the QP session and then the baseline before moving on, so
 * both paths see the same machine conditions. One untimed pass runs first to warm caches.
 */
inline std::vector<LatencyComparison> compare_latency(
  std::shared_ptr<const HandModel> model, const RetargetParams & params, std::span<const KeypointFrame> frames,
  std::size_t reps, std::optional<Configuration> initial = std::nullopt)
{
  if (frames.empty()) { throw std::invalid_argument("benchmark: trace has no frames"); }
  params.validate();
  NlpParams nlp;
  nlp.alpha = params.alpha;
  nlp.beta = params.beta;
  const Configuration q0 = clamp(*model, initial.value_or(Configuration{VecX::Zero(static_cast<Eigen::Index>(model->nq()))}));

  std::vector<LatencyComparison> out;
  for (std::size_t r = 0; r <= reps; ++r) {
    RetargetSession session(model, params, q0);
    Configuration q = q0;
    std::vector<double> lq, lb;
    lq.reserve(frames.size());
    lb.reserve(frames.size());
    for (const auto & raw : frames) {
      lq.push_back(session.step(raw).solve_latency);
      const NlpResult nr = solve_nonlinear(*model, q, scale_frame(raw, params.keypoint_scale), nlp);
      lb.push_back(nr.latency);
      q = nr.q;
    }
    if (r > 0) { out.push_back({latency_stats(lq, params.dt), latency_stats(lb, params.dt)}); }
  }
  return out;
}

inline nlohmann::json playback_report(
  const PlaybackResult & r, const std::optional<std::vector<std::optional<double>>> & gain = std::nullopt)
{
  return report_json(r.latency, r.motion, r.safety, gain);
}

}  // namespace dexqp
