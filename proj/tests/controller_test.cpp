#include "neurotraj/controller.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace neurotraj;

namespace {

ContinuousTrajectory straight_line(double speed, double horizon = 3.0) {
  std::vector<FitSample> samples;
  for (int k = 0; k <= 60; ++k) {
    const double t = horizon * k / 60.0;
    samples.push_back({t, {speed * t, 0.0}, {speed, 0.0}, {0.0, 0.0}});
  }
  return fit_trajectory(samples, fixed_dictionary(32, horizon));
}

ContinuousTrajectory circle(double radius, double speed) {
  std::vector<FitSample> out;
  const double w = speed / radius;
  for (int k = 0; k <= 60; ++k) {
    const double t = 3.0 * k / 60.0;
    out.push_back({t,
                   {radius * std::sin(w * t), radius * (1 - std::cos(w * t))},
                   {speed * std::cos(w * t), speed * std::sin(w * t)},
                   {-speed * w * std::sin(w * t), speed * w * std::cos(w * t)}});
  }
  return fit_trajectory(out, fixed_dictionary(32, 3.0));
}

}  // namespace

TEST(ReferenceAt, StraightConstantSpeed) {
  const auto traj = straight_line(5.0);
  for (double t : {0.5, 1.5, 2.5}) {
    const auto r = reference_at(traj, t);
    EXPECT_NEAR(r.heading, 0.0, 1e-6);
    EXPECT_NEAR(r.kappa_r, 0.0, 1e-6);
    EXPECT_NEAR(r.a_r, 0.0, 1e-4);
    EXPECT_NEAR(r.v_r, 5.0, 1e-4);
  }
}

TEST(ReferenceAt, ClampsBeyondHorizon) {
  const auto traj = circle(10.0, 5.0);
  const auto end = reference_at(traj, 3.0);
  for (double t : {3.0001, 4.0, 100.0}) {
    const auto r = reference_at(traj, t);
    EXPECT_EQ(r.position, end.position);
    EXPECT_EQ(r.heading, end.heading);
    EXPECT_EQ(r.v_r, end.v_r);
    EXPECT_EQ(r.kappa_r, end.kappa_r);
  }
}

TEST(ReferenceAt, FittedCircle) {
  const auto traj = circle(10.0, 5.0);
  for (double t : {0.5, 1.5, 2.5}) {
    const auto r = reference_at(traj, t);
    EXPECT_NEAR(r.v_r, 5.0, 1e-3);
    EXPECT_NEAR(r.kappa_r, 0.1, 1e-4);
    EXPECT_NEAR(r.a_r, 0.0, 1e-2);
  }
}

TEST(ReferenceAt, StationaryKeepsPreviousHeading) {
  ContinuousTrajectory still(4, 3.0);
  still.bx = 2.0;
  const auto r = reference_at(still, 1.0, 0.4);
  EXPECT_EQ(r.heading, 0.4);
  EXPECT_EQ(r.kappa_r, 0.0);
  EXPECT_EQ(r.v_r, 0.0);
}

TEST(ComputeErrors, Examples) {
  ReferencePoint ref;
  ref.v_r = 3.0;
  const auto zero = compute_errors(Pose2{}, 3.0, ref);
  EXPECT_EQ(zero.e, 0.0);
  EXPECT_EQ(zero.theta_e, 0.0);
  EXPECT_EQ(zero.e_d, 0.0);
  EXPECT_EQ(zero.e_v, 0.0);

  const auto left = compute_errors(Pose2{{0.0, 1.0}, 0.0}, 3.0, ref);
  EXPECT_EQ(left.e, 1.0);
  EXPECT_EQ(left.e_d, 0.0);

  const auto behind = compute_errors(Pose2{{-2.0, 0.0}, 0.0}, 2.5, ref);
  EXPECT_EQ(behind.e_d, 2.0);
  EXPECT_EQ(behind.e_v, 0.5);
}

TEST(ComputeErrors, FrameInvariance) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-3, 3), ang(-kPi, kPi);
  for (int trial = 0; trial < 100; ++trial) {
    ReferencePoint ref{{u(rng), u(rng)}, ang(rng), 4.0, 0.0, 0.0};
    const Pose2 veh{{u(rng), u(rng)}, ang(rng)};
    const auto base = compute_errors(veh, 2.0, ref);
    const double rot = ang(rng);
    ReferencePoint ref2 = ref;
    ref2.position = rotate(ref.position, rot);
    ref2.heading = wrap_angle(ref.heading + rot);
    const Pose2 veh2{rotate(veh.position, rot), wrap_angle(veh.heading + rot)};
    const auto moved = compute_errors(veh2, 2.0, ref2);
    EXPECT_NEAR(moved.e, base.e, 1e-12);
    EXPECT_NEAR(moved.e_d, base.e_d, 1e-12);
    EXPECT_NEAR(wrap_angle(moved.theta_e - base.theta_e), 0.0, 1e-12);
    EXPECT_GT(moved.theta_e, -kPi);
    EXPECT_LE(moved.theta_e, kPi);
  }
}

TEST(LateralControl, ZeroErrorFeedforward) {
  ReferencePoint ref;
  ref.v_r = 5.0;
  EXPECT_EQ(lateral_control({}, ref, {}, 5.0), 0.0);
  ref.kappa_r = 0.1;
  EXPECT_NEAR(lateral_control({}, ref, {}, 5.0), std::atan(0.26), 1e-15);
  EXPECT_NEAR(lateral_control({}, ref, {}, 5.0), 0.2545, 2e-4);
}

TEST(LateralControl, OddSymmetryAndClamp) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 200; ++trial) {
    ReferencePoint ref;
    ref.v_r = 5 * std::abs(u(rng));
    ref.kappa_r = 0.2 * u(rng);
    TrackingErrors err{2 * u(rng), u(rng), u(rng), u(rng)};
    const double speed = 4 * std::abs(u(rng));
    const double d = lateral_control(err, ref, {}, speed);
    ReferencePoint mref = ref;
    mref.kappa_r = -ref.kappa_r;
    TrackingErrors merr = err;
    merr.e = -err.e;
    merr.theta_e = -err.theta_e;
    EXPECT_NEAR(lateral_control(merr, mref, {}, speed), -d, 1e-12);
    EXPECT_LE(std::abs(d), 0.6);
  }
}

TEST(LateralControl, ContinuousAcrossZeroHeadingError) {
  ReferencePoint ref;
  ref.v_r = 4.0;
  ref.kappa_r = 0.05;
  TrackingErrors err{0.3, 0.0, 0.0, 0.0};
  const double at0 = lateral_control(err, ref, {}, 4.0);
  for (double th : {-1e-9, 1e-9}) {
    err.theta_e = th;
    EXPECT_NEAR(lateral_control(err, ref, {}, 4.0), at0, 1e-8);
  }
}

TEST(LateralControl, GuardsSingularities) {
  ReferencePoint ref;
  ref.v_r = 5.0;
  ref.kappa_r = 0.2;
  TrackingErrors err{5.0, 0.0, 0.0, 0.0};  // kappa * e = 1
  EXPECT_TRUE(std::isfinite(lateral_control(err, ref, {}, 0.0)));
}

TEST(LongitudinalControl, Examples) {
  ReferencePoint ref;
  auto [t0, b0] = longitudinal_control({}, ref, {});
  EXPECT_EQ(t0, 0.0);
  EXPECT_EQ(b0, 0.0);
  TrackingErrors err;
  err.e_v = 1.0;
  auto [t1, b1] = longitudinal_control(err, ref, {});
  EXPECT_DOUBLE_EQ(t1, 1.0 / 3.0);
  EXPECT_EQ(b1, 0.0);
  ref.a_r = -6.0;
  auto [t2, b2] = longitudinal_control({}, ref, {});
  EXPECT_EQ(t2, 0.0);
  EXPECT_EQ(b2, 1.0);
}

TEST(LongitudinalControl, ThrottleAndBrakeExclusive) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int trial = 0; trial < 500; ++trial) {
    ReferencePoint ref;
    ref.a_r = u(rng);
    TrackingErrors err{u(rng), u(rng), u(rng), u(rng)};
    const auto [th, br] = longitudinal_control(err, ref, {});
    EXPECT_EQ(th * br, 0.0);
    EXPECT_GE(th, 0.0);
    EXPECT_LE(th, 1.0);
    EXPECT_GE(br, 0.0);
    EXPECT_LE(br, 1.0);
  }
}

TEST(Gains, JsonRoundTripAndValidation) {
  ControllerGains g{0.1, 0.2, 0.3, 0.4};
  const auto back = gains_from_json(gains_to_json(g));
  EXPECT_EQ(back.k_e, 0.4);
  EXPECT_THROW(gains_from_json(io::json{{"k_v", -1.0}}), Error);
}
