#pragma once

/**
 * @file
 * @brief Per-step retargeting QP in joint-increment space and the closed loop around it.
 *
 * Each control step linearizes keypoint tracking and capsule clearances at q_{t-1}, solves
 *
 *   min ½ Δqᵀ H Δq + gᵀ Δq
 *   s.t.  Δq ≤ q_u − q_{t-1},  −Δq ≤ q_{t-1} − q_l,  −J_dist Δq ≤ γ̃ (h − D_safe)
 *
 * with H = 2(αJᵀJ + βI), g = −2αJᵀΔv and γ̃ = γ·dt, then integrates q_t = q_{t-1} + Δq.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dexqp/collision.hpp"
#include "dexqp/kinematics.hpp"
#include "dexqp/model.hpp"
#include "dexqp/qp.hpp"

namespace dexqp {

struct RetargetParams
{
  /// keypoint tracking weight
  double alpha = 1.0;
  /// step regularization weight
  double beta = 0.01;
  /// control period [s]
  double dt = 0.01;
  bool cbf_enabled = true;
  /// barrier decay rate [1/s]
  double gamma = 5.0;
  /// clearance protected by the barrier [m]
  double safety_threshold = 0.01;
  /// pairs closer than this get a barrier row [m]
  double activation_distance = 0.011;
  /// uniform scale applied to incoming human keypoints
  double keypoint_scale = 1.0;

  double gamma_tilde() const { return gamma * dt; }

  /// Throws std::invalid_argument on the first violated invariant.
  void validate() const
  {
    auto require = [](bool ok, const char * msg) {
      if (!ok) { throw std::invalid_argument(msg); }
    };
    require(alpha > 0.0, "alpha must be positive");
    require(beta > 0.0, "beta must be positive (H must be positive definite)");
    require(dt > 0.0, "dt must be positive");
    require(gamma > 0.0, "gamma must be positive");
    require(safety_threshold >= 0.0, "safety threshold must be non-negative");
    require(activation_distance >= safety_threshold, "activation distance must be at least the safety threshold");
    require(keypoint_scale > 0.0, "keypoint scale must be positive");
  }

  /// Non-fatal concerns, e.g. a decay factor above one.
  std::vector<std::string> warnings() const
  {
    std::vector<std::string> w;
    if (gamma_tilde() > 1.0) {
      w.push_back("gamma*dt = " + std::to_string(gamma_tilde()) + " > 1: barrier decay overshoots within one step");
    }
    return w;
  }
};

/// Human keypoints for one instant, in the model base frame.
struct KeypointFrame
{
  double t = 0.0;
  Eigen::Matrix<double, Eigen::Dynamic, 3> kp;
};

inline KeypointFrame scale_frame(const KeypointFrame & f, double s) { return KeypointFrame{f.t, f.kp * s}; }

inline void check_frame(const HandModel & model, const KeypointFrame & f)
{
  if (static_cast<std::size_t>(f.kp.rows()) != model.num_keypoints()) {
    throw DimensionError(
      "frame has " + std::to_string(f.kp.rows()) + " keypoints, model expects " +
      std::to_string(model.num_keypoints()));
  }
  if (!f.kp.allFinite() || !std::isfinite(f.t)) { throw std::invalid_argument("frame contains non-finite values"); }
}

/// Flattened (3N) keypoint vector in row order.
inline VecX flatten(const Eigen::Matrix<double, Eigen::Dynamic, 3> & kp)
{
  VecX v(kp.rows() * 3);
  for (Eigen::Index i = 0; i < kp.rows(); ++i) { v.segment<3>(3 * i) = kp.row(i).transpose(); }
  return v;
}

struct Objective
{
  MatX H;
  VecX g;
};

/// Tracking objective linearized at fk; frame must already be scaled.
inline Objective assemble_objective(
  const HandModel & model, const FkResult & fk, const KeypointFrame & frame, const RetargetParams & params)
{
  check_frame(model, frame);
  if (!(params.alpha > 0.0)) { throw std::invalid_argument("alpha must be positive"); }
  const MatX J = stacked_keypoint_jacobian(model, fk);
  const VecX dv = flatten(frame.kp) - flatten(fk.keypoint_positions);
  Objective obj;
  obj.H.noalias() = (2.0 * params.alpha) * J.transpose().lazyProduct(J);
  obj.H.diagonal().array() += 2.0 * params.beta;
  obj.g = -2.0 * params.alpha * J.transpose() * dv;
  return obj;
}

struct ConstraintRows
{
  MatX A;
  VecX b;
};

/// [I; −I] Δq ≤ [q_u − q; q − q_l].
inline ConstraintRows assemble_joint_limit_rows(const HandModel & model, const Configuration & q)
{
  if (static_cast<std::size_t>(q.q.size()) != model.nq()) { throw DimensionError("joint-limit rows: configuration size mismatch"); }
  const auto n = static_cast<Eigen::Index>(model.nq());
  ConstraintRows rows;
  rows.A.resize(2 * n, n);
  rows.A << MatX::Identity(n, n), -MatX::Identity(n, n);
  rows.b.resize(2 * n);
  rows.b << model.upper_limits() - q.q, q.q - model.lower_limits();
  return rows;
}

struct CbfRows
{
  MatX A;
  VecX b;
  /// Index into model.collision_pairs() for each row.
  std::vector<std::size_t> pair_ids;
  /// Raw clearance of every monitored pair at fk.
  std::vector<DistanceResult> distances;
  /// Some emitted row used a fallback normal.
  bool fallback_normal = false;
};

/**
 * @brief Barrier rows −J_dist Δq ≤ γ̃ (h − D_safe) for every monitored pair with h ≤ d_act.
 *
 * `previous_normals`, when non-empty, is indexed like model.collision_pairs() and supplies the
 * normal used if a pair's witness points coincide.
 */
inline CbfRows assemble_cbf_rows(
  const HandModel & model, const FkResult & fk, const RetargetParams & params,
  std::span<const std::optional<Vec3>> previous_normals = {})
{
  const auto & pairs = model.collision_pairs();
  CbfRows out;
  out.distances.reserve(pairs.size());
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> bounds;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const std::optional<Vec3> prev = k < previous_normals.size() ? previous_normals[k] : std::nullopt;
    DistanceResult d = capsule_distance(model, fk, pairs[k], prev);
    if (d.h <= params.activation_distance) {
      const auto row = distance_jacobian_with_fallback(model, fk, d);
      rows.push_back(-row.row);
      bounds.push_back(params.gamma_tilde() * (d.h - params.safety_threshold));
      out.pair_ids.push_back(k);
      out.fallback_normal = out.fallback_normal || d.fallback_normal;
    }
    out.distances.push_back(d);
  }
  const auto n = static_cast<Eigen::Index>(model.nq());
  out.A.resize(static_cast<Eigen::Index>(rows.size()), n);
  out.b.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.A.row(static_cast<Eigen::Index>(r)) = rows[r];
    out.b[static_cast<Eigen::Index>(r)] = bounds[r];
  }
  return out;
}

/// Outcome of one control step.
struct StepResult
{
  double t = 0.0;
  Configuration q;
  VecX dq;
  /// Wall time for FK at q_{t-1}, assembly, solve and integration [s].
  double solve_latency = 0.0;
  /// Minimum raw clearance over monitored pairs at q_t; +inf without pairs.
  double h_min = std::numeric_limits<double>::infinity();
  /// Raw clearance per monitored pair at q_t.
  std::vector<double> pair_clearances;
  /// Indices into collision_pairs() that carried a barrier row this step.
  std::vector<std::size_t> active_cbf_pairs;
  QpStatus qp_status = QpStatus::Solved;
  std::size_t qp_iterations = 0;
  /// RMS distance between scaled human keypoints and robot keypoints at q_t [m].
  double tracking_error = 0.0;
  Eigen::Matrix<double, Eigen::Dynamic, 3> robot_keypoints;
  /// Infeasible QP; the pose was held (Δq = 0).
  bool held_pose = false;
  /// A barrier row used a fallback normal.
  bool fallback_normal = false;
};

/// Minimum raw clearance over all monitored pairs at fk; +inf when there are none.
inline double min_clearance(const HandModel & model, const FkResult & fk)
{
  double h = std::numeric_limits<double>::infinity();
  for (const auto & pair : model.collision_pairs()) { h = std::min(h, capsule_distance(model, fk, pair).h); }
  return h;
}

/**
 * @brief Closed-loop retargeting session owning q and the warm-start state.
 *
 * Not thread-safe; run one session per thread. Parameter changes take effect at the next step.
 */
class RetargetSession
{
public:
  RetargetSession(
    std::shared_ptr<const HandModel> model, RetargetParams params,
    std::optional<Configuration> initial = std::nullopt)
  : model_(std::move(model)), params_(params)
  {
    params_.validate();
    reset(std::move(initial));
  }

  const HandModel & model() const { return *model_; }
  const RetargetParams & params() const { return params_; }
  const Configuration & q() const { return q_; }

  void set_params(const RetargetParams & params)
  {
    params.validate();
    params_ = params;
  }

  /// Back to clamp(0) (or the given configuration) with cleared warm-start state.
  void reset(std::optional<Configuration> initial = std::nullopt)
  {
    const auto n = static_cast<Eigen::Index>(model_->nq());
    q_ = clamp(*model_, initial.value_or(Configuration{VecX::Zero(n)}));
    hint_joint_rows_.clear();
    hint_pairs_.clear();
    prev_normals_.assign(model_->collision_pairs().size(), std::nullopt);
    last_t_.reset();
  }

  StepResult step(const KeypointFrame & raw_frame)
  {
    const HandModel & model = *model_;
    check_frame(model, raw_frame);
    if (last_t_ && raw_frame.t < *last_t_) {
      throw std::invalid_argument(
        "frame timestamp " + std::to_string(raw_frame.t) + " precedes previous " + std::to_string(*last_t_));
    }
    last_t_ = raw_frame.t;
    const KeypointFrame frame = scale_frame(raw_frame, params_.keypoint_scale);
    const auto n = static_cast<Eigen::Index>(model.nq());

    StepResult res;
    res.t = frame.t;
    const auto start = std::chrono::steady_clock::now();

    const FkResult fk = forward_kinematics(model, q_);
    Objective obj = assemble_objective(model, fk, frame, params_);
    const ConstraintRows jl = assemble_joint_limit_rows(model, q_);
    CbfRows cbf;
    if (params_.cbf_enabled) {
      cbf = assemble_cbf_rows(model, fk, params_, prev_normals_);
      res.active_cbf_pairs = cbf.pair_ids;
      res.fallback_normal = cbf.fallback_normal;
    }

    QpProblem qp;
    qp.H = std::move(obj.H);
    qp.g = std::move(obj.g);
    const Eigen::Index m = jl.A.rows() + cbf.A.rows();
    qp.A.resize(m, n);
    qp.b.resize(m);
    qp.A.topRows(jl.A.rows()) = jl.A;
    qp.b.head(jl.b.size()) = jl.b;
    if (cbf.A.rows()) {
      qp.A.bottomRows(cbf.A.rows()) = cbf.A;
      qp.b.tail(cbf.b.size()) = cbf.b;
    }

    const auto hint = current_hint(jl.A.rows(), cbf.pair_ids);
    const QpSolution sol = warm_start_solve(qp, hint);
    res.qp_status = sol.status;
    res.qp_iterations = sol.iterations;
    if (sol.status == QpStatus::Infeasible) {
      res.dq = VecX::Zero(n);
      res.held_pose = true;
    } else {
      res.dq = sol.x;
      remember_active_set(sol.active_set, jl.A.rows(), cbf.pair_ids);
    }
    q_ = clamp(model, Configuration{q_.q + res.dq});

    res.solve_latency = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    res.q = q_;
    const FkResult fk_new = forward_kinematics(model, q_);
    res.robot_keypoints = fk_new.keypoint_positions;
    const auto & pairs = model.collision_pairs();
    res.pair_clearances.resize(pairs.size());
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const DistanceResult d = capsule_distance(model, fk_new, pairs[k], prev_normals_[k]);
      res.pair_clearances[k] = d.h;
      res.h_min = std::min(res.h_min, d.h);
      if (!d.fallback_normal) { prev_normals_[k] = d.normal; }
    }
    const auto nk = frame.kp.rows();
    res.tracking_error = nk ? std::sqrt((frame.kp - res.robot_keypoints).rowwise().squaredNorm().sum() / static_cast<double>(nk)) : 0.0;
    return res;
  }

private:
  std::vector<std::size_t> current_hint(Eigen::Index joint_rows, const std::vector<std::size_t> & pair_ids) const
  {
    std::vector<std::size_t> hint;
    for (std::size_t r : hint_joint_rows_) {
      if (static_cast<Eigen::Index>(r) < joint_rows) { hint.push_back(r); }
    }
    for (std::size_t k = 0; k < pair_ids.size(); ++k) {
      if (std::find(hint_pairs_.begin(), hint_pairs_.end(), pair_ids[k]) != hint_pairs_.end()) {
        hint.push_back(static_cast<std::size_t>(joint_rows) + k);
      }
    }
    return hint;
  }

  void remember_active_set(
    const std::vector<std::size_t> & active, Eigen::Index joint_rows, const std::vector<std::size_t> & pair_ids)
  {
    hint_joint_rows_.clear();
    hint_pairs_.clear();
    for (std::size_t r : active) {
      if (static_cast<Eigen::Index>(r) < joint_rows) {
        hint_joint_rows_.push_back(r);
      } else {
        hint_pairs_.push_back(pair_ids[r - static_cast<std::size_t>(joint_rows)]);
      }
    }
  }

  std::shared_ptr<const HandModel> model_;
  RetargetParams params_;
  Configuration q_;
  std::vector<std::size_t> hint_joint_rows_;
  std::vector<std::size_t> hint_pairs_;
  std::vector<std::optional<Vec3>> prev_normals_;
  std::optional<double> last_t_;
};

/// One StepResult per frame, in order. Frames must have non-decreasing timestamps.
inline std::vector<StepResult> run_session(
  std::shared_ptr<const HandModel> model, const RetargetParams & params, std::span<const KeypointFrame> frames,
  std::optional<Configuration> initial = std::nullopt)
{
  for (std::size_t k = 1; k < frames.size(); ++k) {
    if (frames[k].t < frames[k - 1].t) {
      throw std::invalid_argument("frame " + std::to_string(k) + " has a non-monotone timestamp");
    }
  }
  RetargetSession session(std::move(model), params, std::move(initial));
  std::vector<StepResult> out;
  out.reserve(frames.size());
  for (const auto & f : frames) { out.push_back(session.step(f)); }
  return out;
}

/// α Σ‖v_i − f_i(q)‖² + β‖q − q_prev‖², with v already scaled.
inline double retarget_objective(
  const HandModel & model, const Configuration & q, const Configuration & q_prev, const KeypointFrame & frame,
  double alpha, double beta)
{
  const FkResult fk = forward_kinematics(model, q);
  return alpha * (frame.kp - fk.keypoint_positions).rowwise().squaredNorm().sum() + beta * (q.q - q_prev.q).squaredNorm();
}

}  // namespace dexqp
