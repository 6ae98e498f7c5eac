#pragma once

/**
 * @file
 * @brief Capsule-pair clearance, witness points and the distance Jacobian row.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "dexqp/kinematics.hpp"
#include "dexqp/model.hpp"

namespace dexqp {

/// Witness points closer than this leave the contact normal undefined.
inline constexpr double kDegenerateGap = 1e-9;

struct SegmentClosest
{
  Vec3 p_a;
  Vec3 p_b;
  double s = 0.0;
  double t = 0.0;
};

/**
 * @brief Closest points between segments [a0, a1] and [b0, b1].
 *
 * Clamped-parametric method. For parallel segments the smallest s attaining the minimum is
 * returned, then the t closest to it. Zero-length segments are treated as points.
 */
inline SegmentClosest segment_closest_points(const Vec3 & a0, const Vec3 & a1, const Vec3 & b0, const Vec3 & b1)
{
  constexpr double kEps = 1e-14;
  const Vec3 d1 = a1 - a0;
  const Vec3 d2 = b1 - b0;
  const Vec3 r = a0 - b0;
  const double a = d1.squaredNorm();
  const double e = d2.squaredNorm();
  const double f = d2.dot(r);

  auto finish = [&](double s, double t) { return SegmentClosest{a0 + s * d1, b0 + t * d2, s, t}; };
  auto closest_t = [&](const Vec3 & p) { return e <= kEps ? 0.0 : std::clamp(d2.dot(p - b0) / e, 0.0, 1.0); };

  if (a <= kEps && e <= kEps) { return finish(0.0, 0.0); }
  if (a <= kEps) { return finish(0.0, std::clamp(f / e, 0.0, 1.0)); }
  const double c = d1.dot(r);
  if (e <= kEps) { return finish(std::clamp(-c / a, 0.0, 1.0), 0.0); }

  const double b = d1.dot(d2);
  const double denom = a * e - b * b;
  if (denom <= 1e-12 * a * e) {
    // parallel: distance is constant where B's projection overlaps A
    const double sb0 = d1.dot(b0 - a0) / a;
    const double sb1 = d1.dot(b1 - a0) / a;
    const double lo = std::min(sb0, sb1);
    const double hi = std::max(sb0, sb1);
    double s = 0.0;
    if (hi < 0.0) {
      s = 0.0;
    } else if (lo > 1.0) {
      s = 1.0;
    } else {
      s = std::max(0.0, lo);
    }
    return finish(s, closest_t(a0 + s * d1));
  }

  double s = std::clamp((b * f - c * e) / denom, 0.0, 1.0);
  double t = (b * s + f) / e;
  if (t < 0.0) {
    t = 0.0;
    s = std::clamp(-c / a, 0.0, 1.0);
  } else if (t > 1.0) {
    t = 1.0;
    s = std::clamp((b - c) / a, 0.0, 1.0);
  }
  return finish(s, t);
}

/// Clearance between two capsules at one configuration.
struct DistanceResult
{
  CapsulePair pair;
  /// ‖p_a − p_b‖ − (r_a + r_b); negative means penetration.
  double h = 0.0;
  Vec3 p_a = Vec3::Zero();
  Vec3 p_b = Vec3::Zero();
  /// Unit vector from B toward A.
  Vec3 normal = Vec3::UnitZ();
  double s = 0.0;
  double t = 0.0;
  /// Witness points coincided and `normal` came from the fallback.
  bool fallback_normal = false;
};

/**
 * @brief Clearance of capsules (first, second) under the link poses in fk.
 *
 * When the witness points coincide the normal falls back to `previous_normal` if given,
 * otherwise world +z.
 */
inline DistanceResult capsule_distance(
  const HandModel & model, const FkResult & fk, CapsulePair pair, std::optional<Vec3> previous_normal = std::nullopt)
{
  const auto & caps = model.capsules();
  if (pair.first >= caps.size() || pair.second >= caps.size()) {
    throw std::out_of_range("capsule_distance: capsule index out of range");
  }
  const auto & ca = caps[pair.first];
  const auto & cb = caps[pair.second];
  const LinkPose & pa = fk.poses[model.capsule_link(pair.first)];
  const LinkPose & pb = fk.poses[model.capsule_link(pair.second)];

  const auto cp = segment_closest_points(pa.apply(ca.a), pa.apply(ca.b), pb.apply(cb.a), pb.apply(cb.b));

  DistanceResult d;
  d.pair = pair;
  d.p_a = cp.p_a;
  d.p_b = cp.p_b;
  d.s = cp.s;
  d.t = cp.t;
  const Vec3 diff = cp.p_a - cp.p_b;
  const double gap = diff.norm();
  d.h = gap - (ca.radius + cb.radius);
  if (gap > kDegenerateGap) {
    d.normal = diff / gap;
  } else {
    d.normal = previous_normal.value_or(Vec3::UnitZ());
    d.fallback_normal = true;
  }
  return d;
}

/// Signals that the witness points coincide and no normal is defined.
class DegenerateNormalError : public std::domain_error
{
public:
  DegenerateNormalError() : std::domain_error("distance_jacobian: witness points coincide (deep penetration)") {}
};

/// Linear map from joint increments to clearance change for one pair.
struct DistanceJacobianRow
{
  CapsulePair pair;
  Eigen::RowVectorXd row;
  double h = 0.0;
};

namespace detail {

inline DistanceJacobianRow assemble_distance_row(const HandModel & model, const FkResult & fk, const DistanceResult & d)
{
  const MatX ja = detail::chain_jacobian(model, fk, model.capsule_link(d.pair.first), d.p_a);
  const MatX jb = detail::chain_jacobian(model, fk, model.capsule_link(d.pair.second), d.p_b);
  return DistanceJacobianRow{d.pair, d.normal.transpose() * (ja - jb), d.h};
}

}  // namespace detail

/**
 * @brief J_dist = n̂ᵀ (J_A(p_A) − J_B(p_B)).
 *
 * Witness-point motion along the segments is ignored (Danskin). Throws DegenerateNormalError
 * when the witness points coincide.
 */
inline DistanceJacobianRow distance_jacobian(const HandModel & model, const FkResult & fk, const DistanceResult & d)
{
  if ((d.p_a - d.p_b).norm() <= kDegenerateGap) { throw DegenerateNormalError(); }
  return detail::assemble_distance_row(model, fk, d);
}

/// Same row, but uses whatever normal `d` carries, including the fallback one.
inline DistanceJacobianRow distance_jacobian_with_fallback(
  const HandModel & model, const FkResult & fk, const DistanceResult & d)
{
  return detail::assemble_distance_row(model, fk, d);
}

}  // namespace dexqp
