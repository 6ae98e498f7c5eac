#include <gtest/gtest.h>

#include <random>

#include "dexqp/collision.hpp"
#include "dexqp/synthetic.hpp"
#include "oracles.hpp"

using namespace dexqp;

namespace {

// base with two sibling links, so capsules on them are monitored against each other
HandModel two_sphere_model(double spacing)
{
  return model_from_json(nlohmann::json::parse(R"({
    "links": ["base", "a", "b"],
    "joints": [
      {"name": "ja", "parent": "base", "child": "a", "axis": [0,0,1], "origin_xyz": [0,0,0], "origin_rpy": [0,0,0], "limit": {"lower": -1, "upper": 1}},
      {"name": "jb", "parent": "base", "child": "b", "axis": [0,0,1], "origin_xyz": [)" + std::to_string(spacing) + R"(,0,0], "origin_rpy": [0,0,0], "limit": {"lower": -1, "upper": 1}}
    ],
    "capsules": [
      {"link": "a", "a": [0,0,0], "b": [0,0,0], "radius": 0.01},
      {"link": "b", "a": [0,0,0], "b": [0,0,0], "radius": 0.01}
    ],
    "keypoints": []})"));
}

Vec3 random_point(std::mt19937_64 & rng)
{
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  return Vec3(U(rng), U(rng), U(rng));
}

}  // namespace

TEST(SegmentClosest, ParallelUsesCanonicalTieBreak)
{
  const auto c = segment_closest_points(Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(1, 1, 0));
  EXPECT_DOUBLE_EQ((c.p_a - c.p_b).norm(), 1.0);
  EXPECT_EQ(c.s, 0.0);
  EXPECT_EQ(c.t, 0.0);

  // partial overlap: smallest s in the overlap is where B starts
  const auto d = segment_closest_points(Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0.4, 1, 0), Vec3(2, 1, 0));
  EXPECT_DOUBLE_EQ(d.s, 0.4);
  EXPECT_DOUBLE_EQ(d.t, 0.0);
  EXPECT_DOUBLE_EQ((d.p_a - d.p_b).norm(), 1.0);
}

TEST(SegmentClosest, CrossingPerpendicular)
{
  const auto c = segment_closest_points(Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0.5, -0.5, 0.5), Vec3(0.5, 0.5, 0.5));
  EXPECT_DOUBLE_EQ(c.s, 0.5);
  EXPECT_DOUBLE_EQ(c.t, 0.5);
  EXPECT_DOUBLE_EQ((c.p_a - c.p_b).norm(), 0.5);
}

TEST(SegmentClosest, DegenerateSegmentsArePoints)
{
  const auto c = segment_closest_points(Vec3(0, 0, 0), Vec3(0, 0, 0), Vec3(-1, 2, 0), Vec3(1, 2, 0));
  EXPECT_DOUBLE_EQ(c.t, 0.5);
  EXPECT_DOUBLE_EQ((c.p_a - c.p_b).norm(), 2.0);
  const auto d = segment_closest_points(Vec3(0, 0, 0), Vec3(0, 0, 0), Vec3(3, 4, 0), Vec3(3, 4, 0));
  EXPECT_DOUBLE_EQ((d.p_a - d.p_b).norm(), 5.0);
}

TEST(SegmentClosest, SymmetricInArgumentOrder)
{
  std::mt19937_64 rng(1);
  for (int k = 0; k < 1000; ++k) {
    const Vec3 a0 = random_point(rng), a1 = random_point(rng), b0 = random_point(rng), b1 = random_point(rng);
    const auto ab = segment_closest_points(a0, a1, b0, b1);
    const auto ba = segment_closest_points(b0, b1, a0, a1);
    ASSERT_NEAR((ab.p_a - ab.p_b).norm(), (ba.p_a - ba.p_b).norm(), 1e-14);
    ASSERT_NEAR(ab.s, ba.t, 1e-9);
    ASSERT_NEAR(ab.t, ba.s, 1e-9);
  }
}

TEST(SegmentClosest, AgreesWithGridSampling)
{
  std::mt19937_64 rng(2);
  for (int k = 0; k < 100; ++k) {
    const Vec3 a0 = random_point(rng), a1 = random_point(rng), b0 = random_point(rng), b1 = random_point(rng);
    const auto c = segment_closest_points(a0, a1, b0, b1);
    const double d = (c.p_a - c.p_b).norm();
    const double grid = oracle::grid_segment_distance(a0, a1, b0, b1);
    ASSERT_LE(d, grid + 1e-12);
    ASSERT_LT(grid - d, 1e-4);
  }
}

TEST(CapsuleDistance, TwoSpheres)
{
  const HandModel model = two_sphere_model(0.05);
  ASSERT_EQ(model.collision_pairs().size(), 1u);
  const FkResult fk = forward_kinematics(model, Configuration{VecX::Zero(2)});
  const DistanceResult d = capsule_distance(model, fk, model.collision_pairs()[0]);
  EXPECT_NEAR(d.h, 0.03, 1e-15);
  EXPECT_TRUE(d.normal.isApprox(Vec3(-1, 0, 0)));
  EXPECT_FALSE(d.fallback_normal);
}

TEST(CapsuleDistance, CoincidentWitnessPointsFallBack)
{
  const HandModel model = two_sphere_model(0.0);
  const FkResult fk = forward_kinematics(model, Configuration{VecX::Zero(2)});
  const DistanceResult d = capsule_distance(model, fk, {0, 1});
  EXPECT_DOUBLE_EQ(d.h, -0.02);
  EXPECT_TRUE(d.fallback_normal);
  EXPECT_EQ(d.normal, Vec3::UnitZ());
  const DistanceResult e = capsule_distance(model, fk, {0, 1}, Vec3(0, 1, 0));
  EXPECT_EQ(e.normal, Vec3(0, 1, 0));
  EXPECT_THROW(distance_jacobian(model, fk, d), DegenerateNormalError);
  EXPECT_NO_THROW(distance_jacobian_with_fallback(model, fk, d));
}

TEST(CapsuleDistance, FixturePinchPoseMatchesGrid)
{
  const auto model = oracle::fixture_model("hand16.json");
  const FkResult fk = forward_kinematics(*model, Configuration{pose_vector(*model, gestures::pinch())});
  for (const auto & pair : model->collision_pairs()) {
    const auto & ca = model->capsules()[pair.first];
    const auto & cb = model->capsules()[pair.second];
    const LinkPose & pa = fk.pose(*model, ca.link);
    const LinkPose & pb = fk.pose(*model, cb.link);
    const double grid =
      oracle::grid_segment_distance(pa.apply(ca.a), pa.apply(ca.b), pb.apply(cb.a), pb.apply(cb.b)) - ca.radius - cb.radius;
    const double h = capsule_distance(*model, fk, pair).h;
    EXPECT_LE(h, grid + 1e-12);
    EXPECT_LT(grid - h, 1e-4);
  }
}

TEST(DistanceJacobian, BothOnBaseIsZero)
{
  auto doc = oracle::fixture_json("single_joint.json");
  doc["capsules"] = nlohmann::json::parse(R"([
    {"link": "base", "a": [0,0,0], "b": [0.1,0,0], "radius": 0.01},
    {"link": "base", "a": [0,0.1,0], "b": [0.1,0.1,0], "radius": 0.01}])");
  const HandModel model = model_from_json(doc);
  const FkResult fk = forward_kinematics(model, Configuration{VecX::Constant(1, 0.3)});
  const auto row = distance_jacobian(model, fk, capsule_distance(model, fk, {0, 1}));
  EXPECT_TRUE(row.row.isZero(0.0));
}

TEST(DistanceJacobian, OneJointHandComputation)
{
  auto doc = oracle::fixture_json("single_joint.json");
  doc["capsules"].push_back(
    {{"link", "base"}, {"a", {0.05, -0.05, -0.01}}, {"b", {0.05, -0.05, 0.01}}, {"radius", 0.01}});
  const HandModel model = model_from_json(doc);
  const FkResult fk = forward_kinematics(model, Configuration{VecX::Zero(1)});
  const DistanceResult d = capsule_distance(model, fk, {0, 1});
  EXPECT_TRUE(d.normal.isApprox(Vec3(0, 1, 0)));
  // axis z, p_A = (0.05, 0, 0): axis x p_A = (0, 0.05, 0), projected on +y
  EXPECT_NEAR(distance_jacobian(model, fk, d).row[0], 0.05, 1e-15);
}

TEST(DistanceJacobian, NearContactMatchesFiniteDifferences)
{
  const auto model = oracle::fixture_model("hand16.json");
  std::mt19937_64 rng(12);
  std::normal_distribution<double> N(0.0, 0.05);
  int checked = 0;
  for (auto kind : {GestureKind::Pinch, GestureKind::Cross, GestureKind::Grasp}) {
    const VecX base = joint_trajectory(*model, kind, TraceOptions{})[200];
    for (int trial = 0; trial < 300; ++trial) {
      VecX q = base;
      for (auto & v : q) { v += N(rng); }
      q = clamp(*model, Configuration{q}).q;
      const FkResult fk = forward_kinematics(*model, Configuration{q});
      for (const auto & pair : model->collision_pairs()) {
        const DistanceResult d = capsule_distance(*model, fk, pair);
        if (!(d.h > 0.0 && d.h < 0.02)) { continue; }
        const auto & ca = model->capsules()[pair.first];
        const auto & cb = model->capsules()[pair.second];
        const Vec3 da = fk.pose(*model, ca.link).rotation * (ca.b - ca.a);
        const Vec3 db = fk.pose(*model, cb.link).rotation * (cb.b - cb.a);
        if (1.0 - std::abs(da.normalized().dot(db.normalized())) < 1e-6) { continue; }
        const MatX fd = oracle::central_difference(
          [&](const VecX & x) {
            return VecX::Constant(1, capsule_distance(*model, forward_kinematics(*model, Configuration{x}), pair).h);
          },
          q, 1e-6);
        ASSERT_LT((distance_jacobian(*model, fk, d).row - fd.row(0)).cwiseAbs().maxCoeff(), 1e-4);
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 50);
}
