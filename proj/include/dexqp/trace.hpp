#pragma once

/**
 * @file
 * @brief Line-delimited JSON keypoint traces and step logs.
 *
 * Trace line:    {"t": 0.01, "kp": [[x, y, z], ...]}
 * Step-log line: {"t", "q", "dq", "latency_s", "h_min", "qp_status", "tracking_error", "active_pairs"}
 */

#include <nlohmann/json.hpp>

#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dexqp/errors.hpp"
#include "dexqp/metrics.hpp"
#include "dexqp/model.hpp"
#include "dexqp/retarget.hpp"

namespace dexqp {

inline nlohmann::json keypoints_json(const KeypointMatrix & kp)
{
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < kp.rows(); ++i) { out.push_back({kp(i, 0), kp(i, 1), kp(i, 2)}); }
  return out;
}

inline KeypointMatrix keypoints_from_json(const nlohmann::json & j, const std::string & where)
{
  if (!j.is_array()) { throw ParseError(where + ": 'kp' must be an array of [x, y, z]"); }
  KeypointMatrix kp(static_cast<Eigen::Index>(j.size()), 3);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto & p = j[i];
    if (!p.is_array() || p.size() != 3) { throw ParseError(where + ": keypoint " + std::to_string(i) + " is not [x, y, z]"); }
    for (std::size_t c = 0; c < 3; ++c) {
      if (!p[c].is_number()) { throw ParseError(where + ": keypoint " + std::to_string(i) + " has a non-numeric coordinate"); }
      kp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = p[c].get<double>();
    }
  }
  return kp;
}

inline KeypointFrame frame_from_json(const nlohmann::json & j, const std::string & where)
{
  if (!j.is_object() || !j.contains("t") || !j.contains("kp")) { throw ParseError(where + ": expected {\"t\": ..., \"kp\": [...]}"); }
  if (!j.at("t").is_number()) { throw ParseError(where + ": 't' must be a number"); }
  return KeypointFrame{j.at("t").get<double>(), keypoints_from_json(j.at("kp"), where)};
}

inline std::string frame_to_line(const KeypointFrame & f)
{
  return nlohmann::json{{"t", f.t}, {"kp", keypoints_json(f.kp)}}.dump();
}

/**
 * @brief Reads a trace, one frame per non-blank line.
 *
 * `source` prefixes error messages. With a model, keypoint counts are checked per line.
 */
inline std::vector<KeypointFrame> read_trace(std::istream & in, const std::string & source, const HandModel * model = nullptr)
{
  std::vector<KeypointFrame> frames;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) { continue; }
    const std::string where = source + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error & e) {
      throw ParseError(where + ": " + e.what());
    }
    KeypointFrame f = frame_from_json(j, where);
    if (model && static_cast<std::size_t>(f.kp.rows()) != model->num_keypoints()) {
      throw DimensionError(
        where + ": expected " + std::to_string(model->num_keypoints()) + " keypoints, found " + std::to_string(f.kp.rows()));
    }
    if (!frames.empty() && f.t < frames.back().t) {
      throw ValidationError(where, "timestamp " + std::to_string(f.t) + " precedes the previous frame");
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

inline std::vector<KeypointFrame> read_trace_string(const std::string & text, const HandModel * model = nullptr)
{
  std::istringstream in(text);
  return read_trace(in, "<trace>", model);
}

namespace detail {

inline nlohmann::json vec_to_json(const VecX & v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace detail

/// One step-log record. `pairs` resolves active pair ids to capsule index pairs.
inline nlohmann::json step_log_json(const StepResult & r, const HandModel & model)
{
  nlohmann::json active = nlohmann::json::array();
  for (std::size_t k : r.active_cbf_pairs) {
    const auto & p = model.collision_pairs()[k];
    active.push_back({p.first, p.second});
  }
  return {
    {"t", r.t},
    {"q", detail::vec_to_json(r.q.q)},
    {"dq", detail::vec_to_json(r.dq)},
    {"latency_s", r.solve_latency},
    {"h_min", detail::finite_or_null(r.h_min)},
    {"qp_status", to_string(r.qp_status)},
    {"tracking_error", r.tracking_error},
    {"active_pairs", std::move(active)}};
}

inline void write_step_log(std::ostream & out, std::span<const StepResult> steps, const HandModel & model)
{
  for (const auto & s : steps) { out << step_log_json(s, model).dump() << '\n'; }
}

/**
 * @brief One anchor per kinematic branch: each leaf keypoint paired with its nearest
 * ancestor keypoint (the proximal → fingertip direction on a hand), uniform weights.
 */
inline MotionPreservationConfig default_anchors(const HandModel & model)
{
  const auto & kps = model.keypoints();
  auto is_ancestor_or_self = [&](std::size_t a, std::size_t b) {
    if (a == b || a == model.root_link()) { return true; }
    const int pj = model.parent_joint_of_link(a);
    const auto & ch = model.chain(b);
    return pj >= 0 && std::find(ch.begin(), ch.end(), static_cast<std::size_t>(pj)) != ch.end();
  };
  std::vector<std::size_t> link_of(kps.size());
  for (std::size_t i = 0; i < kps.size(); ++i) { link_of[i] = model.link_index(kps[i].link); }

  std::vector<std::pair<std::size_t, std::size_t>> anchors;
  for (std::size_t tip = 0; tip < kps.size(); ++tip) {
    bool leaf = true;
    for (std::size_t j = 0; j < kps.size() && leaf; ++j) {
      if (j != tip && link_of[j] != link_of[tip] && is_ancestor_or_self(link_of[tip], link_of[j])) { leaf = false; }
    }
    if (!leaf) { continue; }
    std::optional<std::size_t> best;
    for (std::size_t j = 0; j < kps.size(); ++j) {
      if (j == tip || !is_ancestor_or_self(link_of[j], link_of[tip])) { continue; }
      if (!best || model.chain(link_of[j]).size() > model.chain(link_of[*best]).size()) { best = j; }
    }
    if (best) { anchors.emplace_back(*best, tip); }
  }
  return MotionPreservationConfig::uniform(std::move(anchors));
}

}  // namespace dexqp
