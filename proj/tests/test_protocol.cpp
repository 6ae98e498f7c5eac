#include <gtest/gtest.h>

#include <thread>

#include "dexqp/protocol.hpp"
#include "dexqp/synthetic.hpp"
#include "oracles.hpp"
#include "ws_server.hpp"

using namespace dexqp;

namespace {

struct SessionHandler : ws::Handler
{
  SessionHandler(std::shared_ptr<const HandModel> model, const RetargetParams & params) : session(std::move(model), params) {}
  std::vector<std::string> on_open() override { return {session.hello()}; }
  std::vector<std::string> on_text(const std::string & text) override { return session.handle(text); }
  ProtocolSession session;
};

std::vector<KeypointFrame> pinch_frames(const HandModel & model, std::size_t n)
{
  TraceOptions opt;
  opt.frames = n;
  opt.seed = 1;
  return generate_trace(model, GestureKind::Pinch, opt);
}

std::string frame_message(const KeypointFrame & f)
{
  auto j = nlohmann::json::parse(frame_to_line(f));
  j["type"] = "frame";
  return j.dump();
}

}  // namespace

TEST(Protocol, HelloCarriesModelAndParams)
{
  const auto model = oracle::fixture_model("hand16.json");
  ProtocolSession s(model, RetargetParams{});
  const auto hello = nlohmann::json::parse(s.hello());
  EXPECT_EQ(hello["type"], "model");
  EXPECT_EQ(hello["joints"].size(), 16u);
  EXPECT_EQ(hello["params"]["beta"], 0.01);
  auto doc = hello;
  doc.erase("type");
  doc.erase("params");
  EXPECT_TRUE(model_from_json(doc) == *model);
}

TEST(Protocol, FrameYieldsStateMatchingOfflineStep)
{
  const auto model = oracle::fixture_model("hand16.json");
  const auto frames = pinch_frames(*model, 50);
  ProtocolSession s(model, RetargetParams{});
  const auto offline = run_session(model, RetargetParams{}, frames);
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const auto out = s.handle(frame_message(frames[k]));
    ASSERT_EQ(out.size(), 1u);
    const auto state = nlohmann::json::parse(out[0]);
    ASSERT_EQ(state["type"], "state");
    const auto q = state["q"].get<std::vector<double>>();
    for (std::size_t j = 0; j < q.size(); ++j) { ASSERT_NEAR(q[j], offline[k].q.q[static_cast<Eigen::Index>(j)], 1e-9); }
    ASSERT_EQ(state["h"].size(), model->collision_pairs().size());
    ASSERT_EQ(state["kp_robot"].size(), 10u);
  }
}

TEST(Protocol, BadInputGetsErrorAndSessionSurvives)
{
  const auto model = oracle::fixture_model("hand16.json");
  const auto frames = pinch_frames(*model, 3);
  ProtocolSession s(model, RetargetParams{});
  auto expect_error = [&](const std::string & msg) {
    const auto out = s.handle(msg);
    ASSERT_EQ(out.size(), 1u) << msg;
    EXPECT_EQ(nlohmann::json::parse(out[0])["type"], "error") << msg;
  };
  expect_error("{oops");
  expect_error("[1, 2]");
  expect_error(R"({"type": "dance"})");
  expect_error(R"({"type": "frame", "t": 0, "kp": [[0, 0, 0]]})");
  expect_error(R"({"type": "params", "beta": -1})");
  expect_error(R"({"type": "params", "warp": 9})");
  expect_error(R"({"type": "params", "cbf_enabled": 1})");
  EXPECT_EQ(s.session().params().beta, 0.01);
  EXPECT_EQ(s.handle(frame_message(frames[0])).size(), 1u);
}

TEST(Protocol, ParamsAndResetApplyBetweenSteps)
{
  const auto model = oracle::fixture_model("hand16.json");
  const auto frames = pinch_frames(*model, 5);
  ProtocolSession s(model, RetargetParams{});
  EXPECT_TRUE(s.handle(R"({"type": "params", "beta": 0.5, "cbf_enabled": false})").empty());
  EXPECT_EQ(s.session().params().beta, 0.5);
  EXPECT_FALSE(s.session().params().cbf_enabled);
  s.handle(frame_message(frames[4]));
  EXPECT_FALSE(s.session().q().q.isZero(0.0));
  EXPECT_TRUE(s.handle(R"({"type": "reset"})").empty());
  EXPECT_EQ(s.session().q().q, clamp(*model, Configuration{VecX::Zero(16)}).q);
  // earlier timestamps are accepted again after a reset
  EXPECT_EQ(nlohmann::json::parse(s.handle(frame_message(frames[0]))[0])["type"], "state");
}

TEST(WebSocket, AcceptKeyKnownAnswer)
{
  EXPECT_EQ(ws::accept_key("dGhlIHNhbXBsZSBub25jZQ=="), "s3pPLMBiTxaQ9kYGzzhZRbK+xOo=");
}

TEST(WebSocket, RoundTripMatchesOfflineSession)
{
  const auto model = oracle::fixture_model("hand16.json");
  const RetargetParams params;
  ws::Server server([model, params] { return std::make_unique<SessionHandler>(model, params); });
  const int port = server.listen(0);
  std::thread loop([&] { server.run(); });

  const auto frames = pinch_frames(*model, 20);
  const auto offline = run_session(model, params, frames);
  {
    ws::Client client("127.0.0.1", port);
    const auto hello = client.receive();
    ASSERT_TRUE(hello.has_value());
    EXPECT_EQ(nlohmann::json::parse(*hello)["type"], "model");

    client.send_text(R"({"type": "nonsense"})");
    const auto err = client.receive();
    ASSERT_TRUE(err.has_value());
    EXPECT_EQ(nlohmann::json::parse(*err)["type"], "error");

    for (std::size_t k = 0; k < frames.size(); ++k) {
      client.send_text(frame_message(frames[k]));
      const auto reply = client.receive();
      ASSERT_TRUE(reply.has_value());
      const auto q = nlohmann::json::parse(*reply)["q"].get<std::vector<double>>();
      for (std::size_t j = 0; j < q.size(); ++j) { ASSERT_NEAR(q[j], offline[k].q.q[static_cast<Eigen::Index>(j)], 1e-9); }
    }
    client.close();
  }
  server.stop();
  loop.join();
}

TEST(WebSocket, SessionsAreIndependent)
{
  const auto model = oracle::fixture_model("hand16.json");
  const RetargetParams params;
  ws::Server server([model, params] { return std::make_unique<SessionHandler>(model, params); });
  const int port = server.listen(0);
  std::thread loop([&] { server.run(); });
  const auto frames = pinch_frames(*model, 10);
  {
    ws::Client a("127.0.0.1", port);
    ws::Client b("127.0.0.1", port);
    ASSERT_TRUE(a.receive());
    ASSERT_TRUE(b.receive());
    for (std::size_t k = 0; k < frames.size(); ++k) {
      a.send_text(frame_message(frames[k]));
      ASSERT_TRUE(a.receive());
    }
    // b has seen nothing, so its first step starts from the initial pose again
    b.send_text(frame_message(frames[0]));
    const auto rb = nlohmann::json::parse(b.receive().value());
    ProtocolSession fresh(model, params);
    const auto expect = nlohmann::json::parse(fresh.handle(frame_message(frames[0]))[0]);
    EXPECT_EQ(rb["q"], expect["q"]);
  }
  server.stop();
  loop.join();
}

TEST(WebSocket, HandshakeWithoutKeyIsRejected)
{
  const auto model = oracle::fixture_model("hand16.json");
  ws::Server server([model] { return std::make_unique<SessionHandler>(model, RetargetParams{}); });
  const int port = server.listen(0);
  std::thread loop([&] { server.run(); });

  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ASSERT_EQ(::connect(fd, reinterpret_cast<sockaddr *>(&addr), sizeof(addr)), 0);
  ws::Connection conn(fd);
  const std::string req = "GET / HTTP/1.1\r\nHost: x\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n\r\n";
  ASSERT_TRUE(conn.write_all(req.data(), req.size()));
  const auto head = conn.read_http_head();
  ASSERT_TRUE(head.has_value());
  EXPECT_EQ(head->rfind("HTTP/1.1 400", 0), 0u) << *head;

  server.stop();
  loop.join();
}
