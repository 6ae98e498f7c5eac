#include <gtest/gtest.h>

#include <random>

#include "dexqp/baseline.hpp"
#include "dexqp/playback.hpp"
#include "oracles.hpp"

using namespace dexqp;

TEST(Baseline, StationaryPointReturnsPrevious)
{
  const auto model = oracle::fixture_model("hand16.json");
  std::mt19937_64 rng(1);
  const VecX q = oracle::random_in_limits(*model, rng);
  const KeypointFrame f{0.0, forward_kinematics(*model, Configuration{q}).keypoint_positions};
  const NlpResult r = solve_nonlinear(*model, Configuration{q}, f, NlpParams{});
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.q.q, q);
}

TEST(Baseline, SingleJointClosedFormInverse)
{
  const auto model = oracle::fixture_model("single_joint.json");
  const double L = 0.05;
  NlpParams p;
  p.beta = 1e-12;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> U(-2.9, 2.9);
  for (int k = 0; k < 50; ++k) {
    const double theta = U(rng);
    KeypointFrame f{0.0, Eigen::Matrix<double, Eigen::Dynamic, 3>(1, 3)};
    f.kp << L * std::cos(theta), L * std::sin(theta), 0.0;
    const double expect = std::atan2(f.kp(0, 1), f.kp(0, 0));
    // start within a quarter turn so the local solver sits in the right basin
    const Configuration start{VecX::Constant(1, theta + 0.5 * (U(rng) / 2.9))};
    const NlpResult r = solve_nonlinear(*model, clamp(*model, start), f, p);
    ASSERT_TRUE(r.converged);
    ASSERT_NEAR(r.q.q[0], expect, 1e-6);
  }
}

TEST(Baseline, RespectsJointLimits)
{
  const auto model = oracle::fixture_model("single_joint.json");
  KeypointFrame f{0.0, Eigen::Matrix<double, Eigen::Dynamic, 3>(1, 3)};
  f.kp << -0.05, 0.001, 0.0;  // angle ≈ π, beyond the 3.0 rad limit
  NlpParams p;
  p.beta = 1e-9;
  const NlpResult r = solve_nonlinear(*model, Configuration{VecX::Constant(1, 2.5)}, f, p);
  EXPECT_LE(r.q.q[0], 3.0);
  EXPECT_NEAR(r.q.q[0], 3.0, 1e-9);
}

TEST(Baseline, AgreesWithIteratedQpOnStaticFrame)
{
  const auto model = oracle::fixture_model("hand16.json");
  std::mt19937_64 rng(3);
  RetargetParams rp;
  rp.beta = 1e-4;
  rp.cbf_enabled = false;
  NlpParams np;
  np.beta = rp.beta;
  for (int k = 0; k < 5; ++k) {
    const VecX q0 = oracle::random_in_limits(*model, rng);
    const KeypointFrame f{0.0, forward_kinematics(*model, Configuration{oracle::random_in_limits(*model, rng)}).keypoint_positions};
    RetargetSession session(model, rp, Configuration{q0});
    for (int it = 0; it < 300; ++it) { session.step(f); }
    Configuration q = Configuration{q0};
    for (int it = 0; it < 300; ++it) { q = solve_nonlinear(*model, q, f, np).q; }
    // both fixed points minimize the tracking error with a vanishing step penalty
    const double a = retarget_objective(*model, session.q(), session.q(), f, rp.alpha, rp.beta);
    const double b = retarget_objective(*model, q, q, f, rp.alpha, rp.beta);
    EXPECT_NEAR(a, b, 1e-4) << "frame " << k;
  }
}

TEST(Baseline, PlaybackProducesOneRecordPerFrame)
{
  const auto model = oracle::fixture_model("hand16.json");
  std::vector<KeypointFrame> frames;
  for (int k = 0; k < 5; ++k) {
    frames.push_back({0.01 * k, forward_kinematics(*model, Configuration{VecX::Constant(16, 0.05 * k)}).keypoint_positions});
  }
  const auto steps = run_baseline(*model, RetargetParams{}, frames);
  ASSERT_EQ(steps.size(), frames.size());
  for (const auto & s : steps) {
    EXPECT_EQ(s.pair_clearances.size(), model->collision_pairs().size());
    EXPECT_EQ(s.qp_status, QpStatus::Solved);
  }
}

TEST(Baseline, ValidatesParams)
{
  NlpParams p;
  p.beta = 0.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p.beta = 0.01;
  p.line_search_shrink = 1.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
}
