#pragma once

/**
 * @file
 * @brief Reference solver for the full nonlinear retargeting problem
 *
 *   min_q  α Σ‖v_i − f_i(q)‖² + β‖q − q_prev‖²   s.t. q_l ≤ q ≤ q_u
 *
 * by projected Gauss-Newton with backtracking. Variables sitting on a bound whose gradient
 * pushes outward are frozen for the Newton solve, so the projected step stays a descent
 * direction.
 */

#include <Eigen/Dense>

#include <chrono>
#include <cstddef>
#include <stdexcept>

#include "dexqp/kinematics.hpp"
#include "dexqp/model.hpp"
#include "dexqp/retarget.hpp"

namespace dexqp {

struct NlpParams
{
  double alpha = 1.0;
  double beta = 0.01;
  std::size_t max_iterations = 100;
  /// stop when ‖P(q − ∇F) − q‖∞ falls below this
  double gradient_tolerance = 1e-10;
  double line_search_shrink = 0.5;

  void validate() const
  {
    if (!(alpha > 0.0) || !(beta > 0.0)) { throw std::invalid_argument("nlp: alpha and beta must be positive"); }
    if (max_iterations < 1) { throw std::invalid_argument("nlp: max_iterations must be at least 1"); }
    if (!(gradient_tolerance > 0.0)) { throw std::invalid_argument("nlp: tolerance must be positive"); }
    if (!(line_search_shrink > 0.0 && line_search_shrink < 1.0)) {
      throw std::invalid_argument("nlp: line_search_shrink must lie in (0, 1)");
    }
  }
};

struct NlpResult
{
  Configuration q;
  /// Accepted Gauss-Newton iterations; equals max_iterations when the cap was hit.
  std::size_t iterations = 0;
  double latency = 0.0;
  bool converged = false;
  double objective = 0.0;
};

/// Frame keypoints are used as given (apply scale_frame beforehand if needed).
inline NlpResult solve_nonlinear(
  const HandModel & model, const Configuration & q_prev, const KeypointFrame & frame, const NlpParams & params)
{
  params.validate();
  check_frame(model, frame);
  const auto start = std::chrono::steady_clock::now();

  const VecX lo = model.lower_limits();
  const VecX hi = model.upper_limits();
  const auto n = static_cast<Eigen::Index>(model.nq());
  auto project = [&](const VecX & q) { return VecX(q.cwiseMax(lo).cwiseMin(hi)); };
  const VecX target = flatten(frame.kp);

  VecX q = project(q_prev.q);
  auto evaluate = [&](const VecX & qq, FkResult & fk) {
    fk = forward_kinematics(model, Configuration{qq});
    return params.alpha * (target - flatten(fk.keypoint_positions)).squaredNorm() +
           params.beta * (qq - q_prev.q).squaredNorm();
  };

  FkResult fk;
  double f = evaluate(q, fk);
  NlpResult out;
  for (;;) {
    const MatX J = stacked_keypoint_jacobian(model, fk);
    const VecX resid = target - flatten(fk.keypoint_positions);
    const VecX grad = -2.0 * params.alpha * J.transpose() * resid + 2.0 * params.beta * (q - q_prev.q);
    const double pg = (project(q - grad) - q).cwiseAbs().maxCoeff();
    if (n == 0 || pg < params.gradient_tolerance) {
      out.converged = true;
      break;
    }
    if (out.iterations >= params.max_iterations) { break; }

    std::vector<Eigen::Index> free;
    for (Eigen::Index j = 0; j < n; ++j) {
      const bool pinned = (q[j] <= lo[j] && grad[j] > 0.0) || (q[j] >= hi[j] && grad[j] < 0.0);
      if (!pinned) { free.push_back(j); }
    }
    VecX dir = VecX::Zero(n);
    if (!free.empty()) {
      const auto nf = static_cast<Eigen::Index>(free.size());
      MatX B(nf, nf);
      VecX gf(nf);
      const MatX JtJ = J.transpose().lazyProduct(J);
      for (Eigen::Index a = 0; a < nf; ++a) {
        gf[a] = grad[free[a]];
        for (Eigen::Index b = 0; b < nf; ++b) { B(a, b) = 2.0 * params.alpha * JtJ(free[a], free[b]); }
        B(a, a) += 2.0 * params.beta;
      }
      const VecX df = B.llt().solve(-gf);
      for (Eigen::Index a = 0; a < nf; ++a) { dir[free[a]] = df[a]; }
    }

    // Armijo backtracking along the projection arc
    double step = 1.0;
    bool accepted = false;
    FkResult fk_trial;
    for (int k = 0; k < 60; ++k) {
      const VecX trial = project(q + step * dir);
      const double ft = evaluate(trial, fk_trial);
      if (ft < f && ft <= f + 1e-4 * grad.dot(trial - q)) {
        q = trial;
        f = ft;
        fk = std::move(fk_trial);
        accepted = true;
        break;
      }
      step *= params.line_search_shrink;
    }
    if (!accepted) { break; }
    ++out.iterations;
  }

  out.q = Configuration{q};
  out.objective = f;
  out.latency = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace dexqp
