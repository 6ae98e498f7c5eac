#pragma once

/**
 * @file
 * @brief Robot-hand description: kinematic tree, joint limits, collision capsules and
 * keypoint attachment sites, plus the JSON model format.
 */

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dexqp/errors.hpp"

namespace dexqp {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

/// Unordered capsule index pair, stored with first < second.
using CapsulePair = std::pair<std::size_t, std::size_t>;

/// Revolute joint between two links.
struct JointSpec
{
  std::string name;
  std::string parent_link;
  std::string child_link;
  Vec3 axis = Vec3::UnitZ();
  Vec3 origin_xyz = Vec3::Zero();
  /// roll-pitch-yaw, extrinsic X-Y-Z
  Vec3 origin_rpy = Vec3::Zero();
  double lower = 0.0;
  double upper = 0.0;

  bool operator==(const JointSpec &) const = default;
};

/// Segment swept by a sphere, fixed to one link.
struct CapsuleSpec
{
  std::string link;
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::Zero();
  double radius = 0.0;

  bool operator==(const CapsuleSpec &) const = default;
};

/// Body-fixed point tracked against a human keypoint. Ids run 1..N.
struct KeypointSpec
{
  int id = 0;
  std::string link;
  Vec3 offset = Vec3::Zero();

  bool operator==(const KeypointSpec &) const = default;
};

/// Rotation for roll-pitch-yaw given as extrinsic rotations about X, then Y, then Z.
inline Mat3 rpy_to_matrix(const Vec3 & rpy)
{
  return (Eigen::AngleAxisd(rpy.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(rpy.y(), Vec3::UnitY()) *
          Eigen::AngleAxisd(rpy.x(), Vec3::UnitX()))
    .toRotationMatrix();
}

/// Joint-angle vector.
struct Configuration
{
  VecX q;
};

/**
 * @brief Validated, immutable hand description.
 *
 * Construction checks every invariant and precomputes the topological joint order and the
 * per-link ancestor joint sets used by forward kinematics and the Jacobians.
 */
class HandModel
{
public:
  /// Validates and takes ownership. Pass std::nullopt for pairs to use auto_collision_pairs().
  HandModel(
    std::vector<std::string> links, std::vector<JointSpec> joints, std::vector<CapsuleSpec> capsules,
    std::vector<KeypointSpec> keypoints, std::optional<std::vector<CapsulePair>> collision_pairs);

  const std::vector<std::string> & links() const { return links_; }
  const std::vector<JointSpec> & joints() const { return joints_; }
  const std::vector<CapsuleSpec> & capsules() const { return capsules_; }
  const std::vector<KeypointSpec> & keypoints() const { return keypoints_; }
  const std::vector<CapsulePair> & collision_pairs() const { return collision_pairs_; }

  std::size_t nq() const { return joints_.size(); }
  std::size_t num_keypoints() const { return keypoints_.size(); }
  std::size_t root_link() const { return root_; }

  /// Throws ValidationError for unknown names.
  std::size_t link_index(const std::string & name) const
  {
    auto it = link_lookup_.find(name);
    if (it == link_lookup_.end()) { throw ValidationError("link", "unknown link '" + name + "'"); }
    return it->second;
  }

  std::size_t capsule_link(std::size_t c) const { return capsule_link_[c]; }
  std::size_t keypoint_link(std::size_t i) const { return keypoint_link_[i]; }

  /// Joint indices sorted so every joint's parent link is posed before it.
  const std::vector<std::size_t> & joint_order() const { return joint_order_; }
  /// Index of the joint whose child is this link; -1 for the root.
  int parent_joint_of_link(std::size_t link) const { return parent_joint_[link]; }
  /// Index of the parent link of a joint.
  std::size_t joint_parent_link(std::size_t j) const { return joint_parent_[j]; }
  std::size_t joint_child_link(std::size_t j) const { return joint_child_[j]; }
  /// Joints on the root-to-link chain.
  const std::vector<std::size_t> & chain(std::size_t link) const { return chains_[link]; }
  /// Origin rotation of joint j, converted from rpy once at load.
  const Mat3 & origin_rotation(std::size_t j) const { return origin_rot_[j]; }

  VecX lower_limits() const
  {
    VecX l(nq());
    for (std::size_t j = 0; j < nq(); ++j) { l[j] = joints_[j].lower; }
    return l;
  }
  VecX upper_limits() const
  {
    VecX u(nq());
    for (std::size_t j = 0; j < nq(); ++j) { u[j] = joints_[j].upper; }
    return u;
  }

  /// True when the two links are identical or joined directly by a joint.
  bool adjacent(std::size_t link_a, std::size_t link_b) const
  {
    if (link_a == link_b) { return true; }
    auto parent_of = [this](std::size_t l) -> long {
      const int pj = parent_joint_[l];
      return pj < 0 ? -1 : static_cast<long>(joint_parent_[static_cast<std::size_t>(pj)]);
    };
    return parent_of(link_a) == static_cast<long>(link_b) || parent_of(link_b) == static_cast<long>(link_a);
  }

  bool operator==(const HandModel & o) const
  {
    return links_ == o.links_ && joints_ == o.joints_ && capsules_ == o.capsules_ &&
           keypoints_ == o.keypoints_ && collision_pairs_ == o.collision_pairs_;
  }

private:
  void validate_and_index();

  std::vector<std::string> links_;
  std::vector<JointSpec> joints_;
  std::vector<CapsuleSpec> capsules_;
  std::vector<KeypointSpec> keypoints_;
  std::vector<CapsulePair> collision_pairs_;

  std::map<std::string, std::size_t> link_lookup_;
  std::size_t root_ = 0;
  std::vector<std::size_t> joint_order_;
  std::vector<int> parent_joint_;
  std::vector<std::size_t> joint_parent_;
  std::vector<std::size_t> joint_child_;
  std::vector<std::vector<std::size_t>> chains_;
  std::vector<Mat3> origin_rot_;
  std::vector<std::size_t> capsule_link_;
  std::vector<std::size_t> keypoint_link_;
};

/**
 * @brief All capsule pairs whose links are neither identical nor parent/child.
 *
 * Ordered lexicographically by (first, second) with first < second.
 */
inline std::vector<CapsulePair> auto_collision_pairs(const HandModel & model)
{
  std::vector<CapsulePair> pairs;
  const auto & caps = model.capsules();
  for (std::size_t i = 0; i < caps.size(); ++i) {
    for (std::size_t j = i + 1; j < caps.size(); ++j) {
      if (!model.adjacent(model.link_index(caps[i].link), model.link_index(caps[j].link))) {
        pairs.emplace_back(i, j);
      }
    }
  }
  return pairs;
}

inline HandModel::HandModel(
  std::vector<std::string> links, std::vector<JointSpec> joints, std::vector<CapsuleSpec> capsules,
  std::vector<KeypointSpec> keypoints, std::optional<std::vector<CapsulePair>> collision_pairs)
: links_(std::move(links)),
  joints_(std::move(joints)),
  capsules_(std::move(capsules)),
  keypoints_(std::move(keypoints))
{
  validate_and_index();

  if (collision_pairs) {
    collision_pairs_ = std::move(*collision_pairs);
    for (auto & [i, j] : collision_pairs_) {
      if (i >= capsules_.size() || j >= capsules_.size()) {
        throw ValidationError("collision_pairs", "capsule index out of range");
      }
      if (i == j) { throw ValidationError("collision_pairs", "pair references the same capsule twice"); }
      if (i > j) { std::swap(i, j); }
      if (adjacent(capsule_link_[i], capsule_link_[j])) {
        throw ValidationError(
          "collision_pairs", "pair (" + std::to_string(i) + ", " + std::to_string(j) +
                               ") is on the same or directly connected links");
      }
    }
    auto sorted = collision_pairs_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ValidationError("collision_pairs", "duplicate pair");
    }
  } else {
    collision_pairs_ = auto_collision_pairs(*this);
  }
}

inline void HandModel::validate_and_index()
{
  constexpr double kAxisTol = 1e-9;

  for (std::size_t l = 0; l < links_.size(); ++l) {
    if (!link_lookup_.emplace(links_[l], l).second) {
      throw ValidationError("links", "duplicate link '" + links_[l] + "'");
    }
  }
  if (links_.empty()) { throw ValidationError("links", "model has no links"); }

  auto find_link = [this](const std::string & name, const std::string & field) {
    auto it = link_lookup_.find(name);
    if (it == link_lookup_.end()) { throw ValidationError(field, "undeclared link '" + name + "'"); }
    return it->second;
  };

  parent_joint_.assign(links_.size(), -1);
  joint_parent_.resize(joints_.size());
  joint_child_.resize(joints_.size());
  origin_rot_.resize(joints_.size());
  for (std::size_t j = 0; j < joints_.size(); ++j) {
    const auto & js = joints_[j];
    const std::string where = "joints[" + std::to_string(j) + "]";
    joint_parent_[j] = find_link(js.parent_link, where + ".parent");
    joint_child_[j] = find_link(js.child_link, where + ".child");
    if (joint_parent_[j] == joint_child_[j]) {
      throw ValidationError(where, "joint '" + js.name + "' connects a link to itself");
    }
    if (parent_joint_[joint_child_[j]] >= 0) {
      throw ValidationError(where + ".child", "link '" + js.child_link + "' has two parent joints");
    }
    parent_joint_[joint_child_[j]] = static_cast<int>(j);
    if (!js.axis.allFinite() || std::abs(js.axis.norm() - 1.0) > kAxisTol) {
      throw ValidationError(where + ".axis", "axis of joint '" + js.name + "' is not a unit vector");
    }
    if (!(js.lower <= js.upper)) {
      throw ValidationError(where + ".limit", "lower limit exceeds upper limit for joint '" + js.name + "'");
    }
    if (!js.origin_xyz.allFinite() || !js.origin_rpy.allFinite()) {
      throw ValidationError(where + ".origin", "non-finite origin for joint '" + js.name + "'");
    }
    origin_rot_[j] = rpy_to_matrix(js.origin_rpy);
  }

  std::vector<std::size_t> roots;
  for (std::size_t l = 0; l < links_.size(); ++l) {
    if (parent_joint_[l] < 0) { roots.push_back(l); }
  }
  if (roots.size() != 1) {
    throw ValidationError(
      "joints", roots.empty() ? std::string("joint graph has a cycle (no root link)")
                              : "joint graph has " + std::to_string(roots.size()) +
                                  " root links, expected one (first extra: '" + links_[roots[1]] + "')");
  }
  root_ = roots.front();

  // breadth-first from the root; anything unreached sits on a cycle
  std::vector<std::vector<std::size_t>> children(links_.size());
  for (std::size_t j = 0; j < joints_.size(); ++j) { children[joint_parent_[j]].push_back(j); }
  chains_.assign(links_.size(), {});
  std::vector<bool> reached(links_.size(), false);
  reached[root_] = true;
  std::vector<std::size_t> frontier{root_};
  for (std::size_t head = 0; head < frontier.size(); ++head) {
    const std::size_t l = frontier[head];
    for (std::size_t j : children[l]) {
      const std::size_t c = joint_child_[j];
      joint_order_.push_back(j);
      chains_[c] = chains_[l];
      chains_[c].push_back(j);
      reached[c] = true;
      frontier.push_back(c);
    }
  }
  for (std::size_t l = 0; l < links_.size(); ++l) {
    if (!reached[l]) { throw ValidationError("joints", "joint graph has a cycle through link '" + links_[l] + "'"); }
  }

  capsule_link_.resize(capsules_.size());
  for (std::size_t c = 0; c < capsules_.size(); ++c) {
    const std::string where = "capsules[" + std::to_string(c) + "]";
    capsule_link_[c] = find_link(capsules_[c].link, where + ".link");
    if (!(capsules_[c].radius > 0.0)) { throw ValidationError(where + ".radius", "radius must be positive"); }
    if (!capsules_[c].a.allFinite() || !capsules_[c].b.allFinite()) {
      throw ValidationError(where, "non-finite endpoint");
    }
  }

  for (std::size_t k = 0; k < keypoints_.size(); ++k) {
    const std::string where = "keypoints[" + std::to_string(k) + "]";
    keypoint_link_.push_back(find_link(keypoints_[k].link, where + ".link"));
    if (keypoints_[k].id != static_cast<int>(k) + 1) {
      throw ValidationError(where + ".id", "keypoint ids must be 1..N in order");
    }
    if (!keypoints_[k].offset.allFinite()) { throw ValidationError(where + ".offset", "non-finite offset"); }
  }
}

/// Projects q componentwise into [lower, upper].
inline Configuration clamp(const HandModel & model, const Configuration & q)
{
  if (static_cast<std::size_t>(q.q.size()) != model.nq()) {
    throw DimensionError(
      "configuration has " + std::to_string(q.q.size()) + " entries, model has " + std::to_string(model.nq()) +
      " joints");
  }
  Configuration out{q.q};
  for (std::size_t j = 0; j < model.nq(); ++j) {
    out.q[j] = std::clamp(out.q[j], model.joints()[j].lower, model.joints()[j].upper);
  }
  return out;
}

namespace detail {

inline Vec3 read_vec3(const nlohmann::json & j, const std::string & field)
{
  if (!j.is_array() || j.size() != 3) { throw ParseError(field + ": expected an array of 3 numbers"); }
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) { throw ParseError(field + ": expected an array of 3 numbers"); }
    v[i] = j[i].get<double>();
  }
  return v;
}

inline const nlohmann::json & member(const nlohmann::json & obj, const char * key, const std::string & where)
{
  if (!obj.is_object() || !obj.contains(key)) { throw ParseError(where + ": missing key '" + key + "'"); }
  return obj.at(key);
}

inline std::string read_string(const nlohmann::json & obj, const char * key, const std::string & where)
{
  const auto & v = member(obj, key, where);
  if (!v.is_string()) { throw ParseError(where + "." + key + ": expected a string"); }
  return v.get<std::string>();
}

inline double read_number(const nlohmann::json & obj, const char * key, const std::string & where)
{
  const auto & v = member(obj, key, where);
  if (!v.is_number()) { throw ParseError(where + "." + key + ": expected a number"); }
  return v.get<double>();
}

inline nlohmann::json vec_json(const Vec3 & v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

}  // namespace detail

/// Builds a model from an already-parsed JSON document.
inline HandModel model_from_json(const nlohmann::json & doc)
{
  using detail::member;
  if (!doc.is_object()) { throw ParseError("model: top level must be an object"); }

  std::vector<std::string> links;
  const auto & jl = member(doc, "links", "model");
  if (!jl.is_array()) { throw ParseError("links: expected an array"); }
  for (const auto & l : jl) {
    if (!l.is_string()) { throw ParseError("links: expected strings"); }
    links.push_back(l.get<std::string>());
  }

  std::vector<JointSpec> joints;
  const auto & jj = member(doc, "joints", "model");
  if (!jj.is_array()) { throw ParseError("joints: expected an array"); }
  for (std::size_t i = 0; i < jj.size(); ++i) {
    const std::string where = "joints[" + std::to_string(i) + "]";
    JointSpec js;
    js.name = detail::read_string(jj[i], "name", where);
    js.parent_link = detail::read_string(jj[i], "parent", where);
    js.child_link = detail::read_string(jj[i], "child", where);
    js.axis = detail::read_vec3(member(jj[i], "axis", where), where + ".axis");
    js.origin_xyz = detail::read_vec3(member(jj[i], "origin_xyz", where), where + ".origin_xyz");
    js.origin_rpy = detail::read_vec3(member(jj[i], "origin_rpy", where), where + ".origin_rpy");
    const auto & lim = member(jj[i], "limit", where);
    js.lower = detail::read_number(lim, "lower", where + ".limit");
    js.upper = detail::read_number(lim, "upper", where + ".limit");
    joints.push_back(std::move(js));
  }

  std::vector<CapsuleSpec> capsules;
  if (doc.contains("capsules")) {
    const auto & jc = doc.at("capsules");
    if (!jc.is_array()) { throw ParseError("capsules: expected an array"); }
    for (std::size_t i = 0; i < jc.size(); ++i) {
      const std::string where = "capsules[" + std::to_string(i) + "]";
      CapsuleSpec cs;
      cs.link = detail::read_string(jc[i], "link", where);
      cs.a = detail::read_vec3(member(jc[i], "a", where), where + ".a");
      cs.b = detail::read_vec3(member(jc[i], "b", where), where + ".b");
      cs.radius = detail::read_number(jc[i], "radius", where);
      capsules.push_back(std::move(cs));
    }
  }

  std::vector<KeypointSpec> keypoints;
  if (doc.contains("keypoints")) {
    const auto & jk = doc.at("keypoints");
    if (!jk.is_array()) { throw ParseError("keypoints: expected an array"); }
    for (std::size_t i = 0; i < jk.size(); ++i) {
      const std::string where = "keypoints[" + std::to_string(i) + "]";
      KeypointSpec ks;
      const auto & id = member(jk[i], "id", where);
      if (!id.is_number_integer()) { throw ParseError(where + ".id: expected an integer"); }
      ks.id = id.get<int>();
      ks.link = detail::read_string(jk[i], "link", where);
      ks.offset = detail::read_vec3(member(jk[i], "offset", where), where + ".offset");
      keypoints.push_back(std::move(ks));
    }
  }
  // ids may be listed out of order in the file
  std::stable_sort(keypoints.begin(), keypoints.end(), [](const auto & a, const auto & b) { return a.id < b.id; });

  std::optional<std::vector<CapsulePair>> pairs;
  if (doc.contains("collision_pairs")) {
    const auto & jp = doc.at("collision_pairs");
    if (!jp.is_array()) { throw ParseError("collision_pairs: expected an array"); }
    pairs.emplace();
    for (const auto & p : jp) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_number_unsigned() || !p[1].is_number_unsigned()) {
        throw ParseError("collision_pairs: expected [i, j] pairs of non-negative integers");
      }
      pairs->emplace_back(p[0].get<std::size_t>(), p[1].get<std::size_t>());
    }
  }

  return HandModel(std::move(links), std::move(joints), std::move(capsules), std::move(keypoints), std::move(pairs));
}

/// Parses and validates model-file text.
inline HandModel parse_model(const std::string & text)
{
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error & e) {
    throw ParseError(std::string("model: ") + e.what());
  }
  return model_from_json(doc);
}

/// Model document with collision pairs always written explicitly.
inline nlohmann::json model_to_json(const HandModel & model)
{
  using nlohmann::json;
  json doc;
  doc["links"] = model.links();
  json joints = json::array();
  for (const auto & j : model.joints()) {
    joints.push_back(
      {{"name", j.name},
       {"parent", j.parent_link},
       {"child", j.child_link},
       {"axis", detail::vec_json(j.axis)},
       {"origin_xyz", detail::vec_json(j.origin_xyz)},
       {"origin_rpy", detail::vec_json(j.origin_rpy)},
       {"limit", {{"lower", j.lower}, {"upper", j.upper}}}});
  }
  doc["joints"] = std::move(joints);
  json caps = json::array();
  for (const auto & c : model.capsules()) {
    caps.push_back({{"link", c.link}, {"a", detail::vec_json(c.a)}, {"b", detail::vec_json(c.b)}, {"radius", c.radius}});
  }
  doc["capsules"] = std::move(caps);
  json kps = json::array();
  for (const auto & k : model.keypoints()) {
    kps.push_back({{"id", k.id}, {"link", k.link}, {"offset", detail::vec_json(k.offset)}});
  }
  doc["keypoints"] = std::move(kps);
  json pairs = json::array();
  for (const auto & [i, j] : model.collision_pairs()) { pairs.push_back({i, j}); }
  doc["collision_pairs"] = std::move(pairs);
  return doc;
}

inline std::string serialize_model(const HandModel & model) { return model_to_json(model).dump(2); }

}  // namespace dexqp
