#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "dexqp/playback.hpp"
#include "dexqp/synthetic.hpp"
#include "dexqp/trace.hpp"
#include "oracles.hpp"

using namespace dexqp;

namespace {

std::vector<KeypointFrame> fixture_trace(const std::string & name, const HandModel & model)
{
  std::ifstream in(oracle::fixture_path(name));
  return read_trace(in, name, &model);
}

// Step log with latency_s removed from every record.
std::string log_without_latency(std::span<const StepResult> steps, const HandModel & model)
{
  std::string out;
  for (const auto & s : steps) {
    auto j = step_log_json(s, model);
    j.erase("latency_s");
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace

TEST(Trace, ReadsFixtureTraces)
{
  const auto model = oracle::fixture_model("hand16.json");
  for (const char * name : {"pinch.jsonl", "cross.jsonl", "grasp.jsonl", "track.jsonl"}) {
    const auto frames = fixture_trace(name, *model);
    ASSERT_EQ(frames.size(), 500u) << name;
    EXPECT_EQ(frames[1].t, 0.01);
  }
}

TEST(Trace, WrongKeypointCountNamesBothCounts)
{
  const auto model = oracle::fixture_model("hand16.json");
  try {
    read_trace_string("{\"t\": 0, \"kp\": [[0,0,0],[0,0,0]]}\n", model.get());
    FAIL() << "expected a dimension error";
  } catch (const DimensionError & e) {
    EXPECT_NE(std::string(e.what()).find("expected 10 keypoints, found 2"), std::string::npos) << e.what();
  }
}

TEST(Trace, MalformedLinesReportLineNumber)
{
  try {
    read_trace_string("{\"t\": 0, \"kp\": []}\n\n{\"t\": 1, \"kp\": [[0,0]]}\n");
    FAIL() << "expected a parse error";
  } catch (const ParseError & e) {
    EXPECT_NE(std::string(e.what()).find("<trace>:3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_trace_string("{\"t\": 0, \"kp\": [}\n"), ParseError);
  EXPECT_THROW(read_trace_string("{\"kp\": []}\n"), ParseError);
}

TEST(Trace, DecreasingTimestampsRejected)
{
  EXPECT_THROW(read_trace_string("{\"t\": 1, \"kp\": []}\n{\"t\": 0.5, \"kp\": []}\n"), ValidationError);
  // equal timestamps are allowed
  EXPECT_EQ(read_trace_string("{\"t\": 1, \"kp\": []}\n{\"t\": 1, \"kp\": []}\n").size(), 2u);
}

TEST(Trace, LineRoundTripIsExact)
{
  const auto model = oracle::fixture_model("hand16.json");
  TraceOptions opt;
  opt.frames = 20;
  opt.seed = 3;
  const auto frames = generate_trace(*model, GestureKind::Cross, opt);
  std::string text;
  for (const auto & f : frames) { text += frame_to_line(f) + "\n"; }
  const auto back = read_trace_string(text, model.get());
  ASSERT_EQ(back.size(), frames.size());
  for (std::size_t k = 0; k < frames.size(); ++k) {
    EXPECT_EQ(back[k].t, frames[k].t);
    EXPECT_EQ(back[k].kp, frames[k].kp);
  }
}

TEST(Trace, GeneratorIsSeededAndStaysInLimits)
{
  const auto model = oracle::fixture_model("hand16.json");
  TraceOptions opt;
  opt.frames = 100;
  opt.seed = 4;
  const auto a = joint_trajectory(*model, GestureKind::Pinch, opt);
  const auto b = joint_trajectory(*model, GestureKind::Pinch, opt);
  opt.seed = 5;
  const auto c = joint_trajectory(*model, GestureKind::Pinch, opt);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (const auto & q : a) { EXPECT_EQ(clamp(*model, Configuration{q}).q, q); }
  EXPECT_THROW(parse_gesture("wave"), std::invalid_argument);
}

TEST(Playback, EmptyTraceRejected)
{
  const auto model = oracle::fixture_model("hand16.json");
  EXPECT_THROW(play(model, RetargetParams{}, {}, SolverPath::Qp), std::invalid_argument);
}

TEST(Playback, SingleFrameGivesSingleRecordAndZeroSpread)
{
  const auto model = oracle::fixture_model("hand16.json");
  const auto frames = fixture_trace("pinch.jsonl", *model);
  const std::span<const KeypointFrame> one(frames.data(), 1);
  const PlaybackResult r = play(model, RetargetParams{}, one, SolverPath::Qp);
  EXPECT_EQ(r.steps.size(), 1u);
  EXPECT_EQ(r.latency.std, 0.0);
  EXPECT_EQ(r.latency.count, 1u);
  const auto cmp = compare_latency(model, RetargetParams{}, one, 1);
  ASSERT_EQ(cmp.size(), 1u);
  EXPECT_EQ(cmp[0].qp.std, 0.0);
  EXPECT_EQ(cmp[0].baseline.std, 0.0);
}

TEST(Playback, BothPathsReportWithGain)
{
  const auto model = oracle::fixture_model("hand16.json");
  auto frames = fixture_trace("pinch.jsonl", *model);
  frames.resize(100);
  const PlaybackResult qp = play(model, RetargetParams{}, frames, SolverPath::Qp);
  const PlaybackResult base = play(model, RetargetParams{}, frames, SolverPath::Baseline);
  const auto doc = playback_report(qp, cumulative_gain(qp.motion, base.motion));
  EXPECT_EQ(doc["gain_vs_baseline"].size(), 100u);
  EXPECT_TRUE(doc["safety"].contains("fraction_above_0.8"));
  EXPECT_EQ(doc["motion_preservation"]["per_step"].size(), 100u);
}

TEST(Playback, StepLogsAreDeterministic)
{
  const auto model = oracle::fixture_model("hand16.json");
  const auto frames = fixture_trace("cross.jsonl", *model);
  for (auto path : {SolverPath::Qp, SolverPath::Baseline}) {
    const auto a = play(model, RetargetParams{}, frames, path);
    const auto b = play(model, RetargetParams{}, frames, path);
    EXPECT_EQ(log_without_latency(a.steps, *model), log_without_latency(b.steps, *model));
  }
}

TEST(Playback, StepLogFields)
{
  const auto model = oracle::fixture_model("hand16.json");
  auto frames = fixture_trace("pinch.jsonl", *model);
  frames.resize(3);
  const auto steps = run_session(model, RetargetParams{}, frames);
  std::ostringstream os;
  write_step_log(os, steps, *model);
  std::istringstream is(os.str());
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char * key : {"t", "q", "dq", "latency_s", "h_min", "qp_status", "tracking_error", "active_pairs"}) {
      EXPECT_TRUE(j.contains(key)) << key;
    }
    EXPECT_EQ(j["q"].size(), 16u);
    ++n;
  }
  EXPECT_EQ(n, 3);
}
