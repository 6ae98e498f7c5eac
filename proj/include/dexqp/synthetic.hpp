#pragma once

/**
 * @file
 * @brief Synthetic keypoint traces: parametric joint trajectories pushed through FK.
 *
 * Poses are given by joint name, so the scripted gestures apply to any model that uses the
 * hand fixture's joint names; joints a pose does not mention stay at zero (clamped).
 */

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dexqp/kinematics.hpp"
#include "dexqp/model.hpp"
#include "dexqp/retarget.hpp"

namespace dexqp {

using NamedPose = std::map<std::string, double>;

struct Waypoint
{
  /// seconds from trace start
  double time = 0.0;
  NamedPose pose;
};

enum class GestureKind { Pinch, Cross, Grasp, Track };

inline GestureKind parse_gesture(const std::string & s)
{
  if (s == "pinch") { return GestureKind::Pinch; }
  if (s == "cross") { return GestureKind::Cross; }
  if (s == "grasp") { return GestureKind::Grasp; }
  if (s == "track") { return GestureKind::Track; }
  throw std::invalid_argument("unknown gesture '" + s + "' (expected pinch, cross, grasp or track)");
}

inline VecX pose_vector(const HandModel & model, const NamedPose & pose)
{
  VecX q = VecX::Zero(static_cast<Eigen::Index>(model.nq()));
  for (std::size_t j = 0; j < model.nq(); ++j) {
    auto it = pose.find(model.joints()[j].name);
    if (it != pose.end()) { q[static_cast<Eigen::Index>(j)] = it->second; }
  }
  return clamp(model, Configuration{q}).q;
}

namespace gestures {

inline NamedPose open_hand() { return {{"thumb_cmc_abd", -0.2}, {"thumb_cmc_flex", 0.1}}; }

/// Thumb tip driven through the flexed index tip.
inline NamedPose pinch()
{
  return {
    {"thumb_cmc_abd", -0.75}, {"thumb_cmc_flex", 0.58}, {"thumb_mcp", -0.05}, {"thumb_ip", 0.05},
    {"index_mcp", 0.72},      {"index_pip", 0.72},      {"index_dip", 0.42}};
}

/// Thumb swept across the palm toward the ring finger, past index and middle.
inline NamedPose cross()
{
  return {
    {"thumb_cmc_abd", -1.25}, {"thumb_cmc_flex", 0.75}, {"thumb_mcp", 0.3}, {"thumb_ip", 0.3},
    {"index_mcp", 0.35},      {"middle_mcp", 0.45},     {"ring_mcp", 0.8},  {"ring_pip", 0.9},
    {"ring_dip", 0.5}};
}

/// Power grasp: all fingers curled, thumb closing over index and middle.
inline NamedPose grasp()
{
  return {
    {"thumb_cmc_abd", -0.95}, {"thumb_cmc_flex", 0.8}, {"thumb_mcp", 0.35}, {"thumb_ip", 0.35},
    {"index_mcp", 1.0},       {"index_pip", 1.1},      {"index_dip", 0.7},  {"middle_mcp", 1.0},
    {"middle_pip", 1.1},      {"middle_dip", 0.7},     {"ring_mcp", 1.0},   {"ring_pip", 1.1},
    {"ring_dip", 0.7},        {"little_mcp", 1.0},     {"little_pip", 1.1}, {"little_dip", 0.7}};
}

}  // namespace gestures

/// Open → gesture → hold → open, scaled to the trace duration.
inline std::vector<Waypoint> gesture_waypoints(GestureKind kind, double duration)
{
  NamedPose target;
  switch (kind) {
    case GestureKind::Pinch: target = gestures::pinch(); break;
    case GestureKind::Cross: target = gestures::cross(); break;
    case GestureKind::Grasp: target = gestures::grasp(); break;
    case GestureKind::Track: throw std::invalid_argument("track traces have no waypoints");
  }
  const NamedPose open = gestures::open_hand();
  return {
    {0.0, open}, {0.1 * duration, open}, {0.4 * duration, target}, {0.7 * duration, target}, {0.9 * duration, open},
    {duration, open}};
}

namespace detail {

inline double smoothstep(double x)
{
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

/// Uniform in [0, 1) from the top 53 bits; stable across standard libraries.
inline double unit_uniform(std::mt19937_64 & rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace detail

struct TraceOptions
{
  std::size_t frames = 500;
  double rate = 100.0;
  std::uint64_t seed = 0;
  /// peak per-joint jitter added to scripted gestures [rad]
  double jitter = 0.02;
};

/// Joint trajectory sampled at the trace rate.
inline std::vector<VecX> joint_trajectory(const HandModel & model, GestureKind kind, const TraceOptions & opt)
{
  if (!(opt.rate > 0.0)) { throw std::invalid_argument("trace rate must be positive"); }
  const auto n = static_cast<Eigen::Index>(model.nq());
  const double duration = static_cast<double>(opt.frames) / opt.rate;
  std::mt19937_64 rng(opt.seed);
  const VecX lo = model.lower_limits();
  const VecX hi = model.upper_limits();

  // per-joint slow sinusoids: jitter for gestures, the whole motion for track
  VecX amp(n), freq(n), phase(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    freq[j] = 0.2 + 0.6 * detail::unit_uniform(rng);
    phase[j] = 2.0 * std::numbers::pi * detail::unit_uniform(rng);
    amp[j] = kind == GestureKind::Track ? 0.12 * (hi[j] - lo[j]) * (0.5 + 0.5 * detail::unit_uniform(rng))
                                        : opt.jitter * detail::unit_uniform(rng);
  }

  std::vector<VecX> out;
  out.reserve(opt.frames);
  if (kind == GestureKind::Track) {
    // centered in a pose that keeps every monitored pair well apart
    NamedPose center{{"thumb_cmc_abd", -0.2}, {"thumb_cmc_flex", 0.2}, {"thumb_mcp", 0.2}, {"thumb_ip", 0.2},
                     {"index_mcp", 0.3},      {"index_pip", 0.4},      {"index_dip", 0.3}, {"middle_mcp", 0.3},
                     {"middle_pip", 0.4},     {"middle_dip", 0.3},     {"ring_mcp", 0.3},  {"ring_pip", 0.4},
                     {"ring_dip", 0.3},       {"little_mcp", 0.3},     {"little_pip", 0.4}, {"little_dip", 0.3}};
    const VecX c = pose_vector(model, center);
    for (std::size_t k = 0; k < opt.frames; ++k) {
      const double t = static_cast<double>(k) / opt.rate;
      VecX q = c;
      for (Eigen::Index j = 0; j < n; ++j) { q[j] += amp[j] * (std::sin(2.0 * std::numbers::pi * freq[j] * t + phase[j]) - std::sin(phase[j])); }
      out.push_back(clamp(model, Configuration{q}).q);
    }
    return out;
  }

  const auto wps = gesture_waypoints(kind, duration);
  for (std::size_t k = 0; k < opt.frames; ++k) {
    const double t = static_cast<double>(k) / opt.rate;
    std::size_t seg = 0;
    while (seg + 2 < wps.size() && t >= wps[seg + 1].time) { ++seg; }
    const auto & a = wps[seg];
    const auto & b = wps[seg + 1];
    const double span = b.time - a.time;
    const double w = span > 0.0 ? detail::smoothstep((t - a.time) / span) : 1.0;
    VecX q = (1.0 - w) * pose_vector(model, a.pose) + w * pose_vector(model, b.pose);
    for (Eigen::Index j = 0; j < n; ++j) { q[j] += amp[j] * std::sin(2.0 * std::numbers::pi * freq[j] * t + phase[j]); }
    out.push_back(clamp(model, Configuration{q}).q);
  }
  return out;
}

/// Keypoint frames from FK of the joint trajectory, timestamps k / rate.
inline std::vector<KeypointFrame> generate_trace(const HandModel & model, GestureKind kind, const TraceOptions & opt)
{
  const auto traj = joint_trajectory(model, kind, opt);
  std::vector<KeypointFrame> frames;
  frames.reserve(traj.size());
  for (std::size_t k = 0; k < traj.size(); ++k) {
    frames.push_back(KeypointFrame{static_cast<double>(k) / opt.rate, forward_kinematics(model, Configuration{traj[k]}).keypoint_positions});
  }
  return frames;
}

}  // namespace dexqp
