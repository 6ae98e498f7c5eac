#pragma once

/**
 * @file
 * @brief Forward kinematics and geometric point Jacobians over the joint tree.
 */

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

#include "dexqp/errors.hpp"
#include "dexqp/model.hpp"

namespace dexqp {

/// World pose of a link frame.
struct LinkPose
{
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3 & local) const { return rotation * local + translation; }
  Vec3 to_local(const Vec3 & world) const { return rotation.transpose() * (world - translation); }
};

/**
 * @brief Result of one forward-kinematics pass.
 *
 * Joint world axes and origins are kept alongside the link poses so Jacobians are a pure
 * column assembly.
 */
struct FkResult
{
  /// Indexed like HandModel::links().
  std::vector<LinkPose> poses;
  /// N x 3, row i is keypoint i+1 in the base frame.
  Eigen::Matrix<double, Eigen::Dynamic, 3> keypoint_positions;
  std::vector<Vec3> joint_axes;
  std::vector<Vec3> joint_origins;
  Configuration evaluated_at;

  const LinkPose & pose(const HandModel & model, const std::string & link) const
  {
    return poses[model.link_index(link)];
  }
  Vec3 keypoint(std::size_t i) const { return keypoint_positions.row(static_cast<Eigen::Index>(i)).transpose(); }
};

inline FkResult forward_kinematics(const HandModel & model, const Configuration & q)
{
  if (static_cast<std::size_t>(q.q.size()) != model.nq()) {
    throw DimensionError(
      "configuration has " + std::to_string(q.q.size()) + " entries, model has " + std::to_string(model.nq()) +
      " joints");
  }
  if (!q.q.allFinite()) { throw std::invalid_argument("forward_kinematics: non-finite configuration"); }

  FkResult fk;
  fk.evaluated_at = q;
  fk.poses.assign(model.links().size(), LinkPose{});
  fk.joint_axes.assign(model.nq(), Vec3::Zero());
  fk.joint_origins.assign(model.nq(), Vec3::Zero());

  for (std::size_t j : model.joint_order()) {
    const auto & spec = model.joints()[j];
    const LinkPose & parent = fk.poses[model.joint_parent_link(j)];
    const Mat3 frame_rot = parent.rotation * model.origin_rotation(j);
    const Vec3 origin = parent.apply(spec.origin_xyz);
    LinkPose & child = fk.poses[model.joint_child_link(j)];
    child.rotation = frame_rot * Eigen::AngleAxisd(q.q[static_cast<Eigen::Index>(j)], spec.axis).toRotationMatrix();
    child.translation = origin;
    fk.joint_axes[j] = frame_rot * spec.axis;
    fk.joint_origins[j] = origin;
  }

  const auto & kps = model.keypoints();
  fk.keypoint_positions.resize(static_cast<Eigen::Index>(kps.size()), 3);
  for (std::size_t i = 0; i < kps.size(); ++i) {
    fk.keypoint_positions.row(static_cast<Eigen::Index>(i)) =
      fk.poses[model.keypoint_link(i)].apply(kps[i].offset).transpose();
  }
  return fk;
}

namespace detail {

inline MatX chain_jacobian(const HandModel & model, const FkResult & fk, std::size_t link, const Vec3 & p)
{
  MatX jac = MatX::Zero(3, static_cast<Eigen::Index>(model.nq()));
  for (std::size_t j : model.chain(link)) {
    jac.col(static_cast<Eigen::Index>(j)) = fk.joint_axes[j].cross(p - fk.joint_origins[j]);
  }
  return jac;
}

}  // namespace detail

/// 3 x nq linear-velocity Jacobian of keypoint i (0-based).
inline MatX keypoint_jacobian(const HandModel & model, const FkResult & fk, std::size_t i)
{
  if (i >= model.num_keypoints()) {
    throw std::out_of_range(
      "keypoint index " + std::to_string(i) + " out of range (" + std::to_string(model.num_keypoints()) +
      " keypoints)");
  }
  return detail::chain_jacobian(model, fk, model.keypoint_link(i), fk.keypoint(i));
}

/// Jacobian of a world point rigidly attached to `link` at fk's configuration.
inline MatX point_jacobian(const HandModel & model, const FkResult & fk, const std::string & link, const Vec3 & world_point)
{
  return detail::chain_jacobian(model, fk, model.link_index(link), world_point);
}

/// Keypoint Jacobians stacked into a 3N x nq matrix.
inline MatX stacked_keypoint_jacobian(const HandModel & model, const FkResult & fk)
{
  const auto n = static_cast<Eigen::Index>(model.num_keypoints());
  MatX jac = MatX::Zero(3 * n, static_cast<Eigen::Index>(model.nq()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const Vec3 p = fk.keypoint(k);
    for (std::size_t j : model.chain(model.keypoint_link(k))) {
      jac.block<3, 1>(3 * i, static_cast<Eigen::Index>(j)) = fk.joint_axes[j].cross(p - fk.joint_origins[j]);
    }
  }
  return jac;
}

}  // namespace dexqp
