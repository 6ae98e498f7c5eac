#pragma once

/**
 * @file
 * @brief Message handling for the interactive streaming session.
 *
 * Transport-independent: each text message in yields zero or more text messages out.
 *
 * client → server: {"type":"frame","t":…,"kp":[[…]]}, {"type":"params", …partial params…},
 *                  {"type":"reset"}
 * server → client: {"type":"model", …model document…} once on connect, one
 *                  {"type":"state",…} per frame, {"type":"error","msg":…} on bad input.
 *
 * Parameter changes and resets apply between steps, never during one.
 */

#include <nlohmann/json.hpp>

#include <memory>
#include <string>
#include <vector>

#include "dexqp/model.hpp"
#include "dexqp/retarget.hpp"
#include "dexqp/trace.hpp"

namespace dexqp {

/// Applies the keys present in `patch` to `params`; unknown keys are rejected.
inline RetargetParams apply_params_patch(RetargetParams params, const nlohmann::json & patch)
{
  for (const auto & [key, value] : patch.items()) {
    if (key == "type") { continue; }
    auto number = [&]() {
      if (!value.is_number()) { throw std::invalid_argument("param '" + key + "' must be a number"); }
      return value.get<double>();
    };
    if (key == "alpha") {
      params.alpha = number();
    } else if (key == "beta") {
      params.beta = number();
    } else if (key == "dt") {
      params.dt = number();
    } else if (key == "gamma") {
      params.gamma = number();
    } else if (key == "safety_threshold") {
      params.safety_threshold = number();
    } else if (key == "activation_distance") {
      params.activation_distance = number();
    } else if (key == "keypoint_scale") {
      params.keypoint_scale = number();
    } else if (key == "cbf_enabled") {
      if (!value.is_boolean()) { throw std::invalid_argument("param 'cbf_enabled' must be a boolean"); }
      params.cbf_enabled = value.get<bool>();
    } else {
      throw std::invalid_argument("unknown param '" + key + "'");
    }
  }
  params.validate();
  return params;
}

inline nlohmann::json params_json(const RetargetParams & p)
{
  return {
    {"alpha", p.alpha},
    {"beta", p.beta},
    {"dt", p.dt},
    {"cbf_enabled", p.cbf_enabled},
    {"gamma", p.gamma},
    {"safety_threshold", p.safety_threshold},
    {"activation_distance", p.activation_distance},
    {"keypoint_scale", p.keypoint_scale}};
}

inline nlohmann::json state_message(const StepResult & r, const HandModel & model)
{
  nlohmann::json h = nlohmann::json::array();
  const auto & pairs = model.collision_pairs();
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const bool active = std::find(r.active_cbf_pairs.begin(), r.active_cbf_pairs.end(), k) != r.active_cbf_pairs.end();
    h.push_back({{"pair", {pairs[k].first, pairs[k].second}}, {"h", r.pair_clearances[k]}, {"active", active}});
  }
  return {
    {"type", "state"},
    {"t", r.t},
    {"q", std::vector<double>(r.q.q.data(), r.q.q.data() + r.q.q.size())},
    {"h", std::move(h)},
    {"kp_robot", keypoints_json(r.robot_keypoints)},
    {"latency_s", r.solve_latency},
    {"qp_status", to_string(r.qp_status)}};
}

inline std::string error_message(const std::string & msg) { return nlohmann::json{{"type", "error"}, {"msg", msg}}.dump(); }

/// One client's session. Bad messages produce an error reply and leave the session intact.
class ProtocolSession
{
public:
  ProtocolSession(std::shared_ptr<const HandModel> model, RetargetParams params)
  : model_(model), session_(std::move(model), params)
  {
  }

  /// Sent once when the client connects.
  std::string hello() const
  {
    nlohmann::json doc = model_to_json(*model_);
    doc["type"] = "model";
    doc["params"] = params_json(session_.params());
    return doc.dump();
  }

  std::vector<std::string> handle(const std::string & text)
  {
    nlohmann::json msg;
    try {
      msg = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error & e) {
      return {error_message(std::string("malformed message: ") + e.what())};
    }
    if (!msg.is_object() || !msg.contains("type") || !msg.at("type").is_string()) {
      return {error_message("message must be an object with a string 'type'")};
    }
    const std::string type = msg.at("type").get<std::string>();
    try {
      if (type == "frame") {
        const KeypointFrame frame = frame_from_json(msg, "frame");
        const StepResult r = session_.step(frame);
        return {state_message(r, *model_).dump()};
      }
      if (type == "params") {
        session_.set_params(apply_params_patch(session_.params(), msg));
        return {};
      }
      if (type == "reset") {
        session_.reset();
        return {};
      }
    } catch (const std::exception & e) {
      return {error_message(e.what())};
    }
    return {error_message("unknown message type '" + type + "'")};
  }

  const RetargetSession & session() const { return session_; }

private:
  std::shared_ptr<const HandModel> model_;
  RetargetSession session_;
};

}  // namespace dexqp
