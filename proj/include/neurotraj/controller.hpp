#pragma once

// Trajectory tracking: longitudinal PD-style feedback with acceleration
// feedforward, and rear-wheel feedback steering.

#include "neurotraj/common.hpp"
#include "neurotraj/io.hpp"
#include "neurotraj/trajectory.hpp"

#include <optional>

namespace neurotraj {

struct ControllerGains {
  double k_d = 0.5;
  double k_v = 1.0;
  double k_theta = 1.0;
  double k_e = 0.5;
};

struct VehicleLimits {
  double wheelbase = 2.6;       // m
  double max_steer = 0.6;       // rad
  double max_accel = 3.0;       // m/s^2 at full throttle or brake
  double min_denominator = 0.1;  // guard on |1 - kappa e|
};

struct ReferencePoint {
  Vec2 position{0.0, 0.0};
  double heading = 0.0;
  double v_r = 0.0;
  double a_r = 0.0;
  double kappa_r = 0.0;
};

struct TrackingErrors {
  double e = 0.0;        // lateral, positive left of the reference
  double theta_e = 0.0;  // vehicle heading minus reference heading
  double e_d = 0.0;      // along-track, positive when the vehicle lags
  double e_v = 0.0;      // reference speed minus vehicle speed
};

struct ControlCommand {
  double throttle = 0.0;
  double brake = 0.0;
  double steering = 0.0;
};

/// Samples the reference at t, clamped to the horizon. `prev_heading` is
/// used when the reference is nearly stationary.
inline ReferencePoint reference_at(const ContinuousTrajectory& traj, double t, double prev_heading = 0.0) {
  const auto s = eval(traj, std::clamp(t, 0.0, traj.horizon));
  ReferencePoint r;
  r.position = s.position;
  r.v_r = s.speed();
  r.a_r = s.velocity.dot(s.acceleration) / std::max(r.v_r, kMinSpeed);
  if (r.v_r >= kMinSpeed) {
    r.heading = std::atan2(s.velocity.y(), s.velocity.x());
    r.kappa_r = curvature(s);
  } else {
    r.heading = wrap_angle(prev_heading);
  }
  return r;
}

inline TrackingErrors compute_errors(const Pose2& vehicle, double speed, const ReferencePoint& ref) {
  const Vec2 d = rotate(vehicle.position - ref.position, -ref.heading);
  return {d.y(), wrap_angle(vehicle.heading - ref.heading), -d.x(), ref.v_r - speed};
}

inline double lateral_control(const TrackingErrors& err, const ReferencePoint& ref, const ControllerGains& g,
                              double speed, const VehicleLimits& lim = {}) {
  const double denom = 1.0 - ref.kappa_r * err.e;
  const double guarded = std::max(std::abs(denom), lim.min_denominator) * (denom < 0.0 ? -1.0 : 1.0);
  const double omega = ref.v_r * ref.kappa_r * std::cos(err.theta_e) / guarded -
                       g.k_theta * std::abs(ref.v_r) * err.theta_e - g.k_e * ref.v_r * sinc(err.theta_e) * err.e;
  const double delta = std::atan(omega * lim.wheelbase / std::max(speed, kMinSpeed));
  return std::clamp(delta, -lim.max_steer, lim.max_steer);
}

/// Returns {throttle, brake}; at most one is non-zero.
inline std::pair<double, double> longitudinal_control(const TrackingErrors& err, const ReferencePoint& ref,
                                                      const ControllerGains& g, const VehicleLimits& lim = {}) {
  const double a_c = g.k_d * err.e_d + g.k_v * err.e_v + ref.a_r;
  if (a_c > 0.0) return {std::min(a_c / lim.max_accel, 1.0), 0.0};
  if (a_c < 0.0) return {0.0, std::min(-a_c / lim.max_accel, 1.0)};
  return {0.0, 0.0};
}

/// Stateful wrapper that remembers the last reference heading.
class TrajectoryTracker {
 public:
  explicit TrajectoryTracker(ControllerGains gains = {}, VehicleLimits limits = {})
      : gains_(gains), limits_(limits) {}

  /// `local` is the vehicle pose expressed in the plan's anchor frame.
  ControlCommand control(const ContinuousTrajectory& traj, double t, const Pose2& local, double speed,
                         TrackingErrors* errors_out = nullptr) {
    const auto ref = reference_at(traj, t, prev_heading_.value_or(local.heading));
    prev_heading_ = ref.heading;
    const auto err = compute_errors(local, speed, ref);
    if (errors_out) *errors_out = err;
    ControlCommand cmd;
    std::tie(cmd.throttle, cmd.brake) = longitudinal_control(err, ref, gains_, limits_);
    cmd.steering = lateral_control(err, ref, gains_, speed, limits_);
    return cmd;
  }

  /// Forget the heading memory, e.g. when a new plan arrives.
  void reset() { prev_heading_.reset(); }

  const ControllerGains& gains() const { return gains_; }
  const VehicleLimits& limits() const { return limits_; }

 private:
  ControllerGains gains_;
  VehicleLimits limits_;
  std::optional<double> prev_heading_;
};

inline io::json gains_to_json(const ControllerGains& g) {
  return {{"k_d", g.k_d}, {"k_v", g.k_v}, {"k_theta", g.k_theta}, {"k_e", g.k_e}};
}

inline ControllerGains gains_from_json(const io::json& j) {
  ControllerGains g;
  for (auto [key, slot] : {std::pair{"k_d", &g.k_d}, {"k_v", &g.k_v}, {"k_theta", &g.k_theta}, {"k_e", &g.k_e}}) {
    if (!j.contains(key)) continue;
    *slot = io::get_field<double>(j, key);
    if (*slot < 0.0) throw Error(std::string("bad value for field '") + key + "': gains must be nonnegative");
  }
  return g;
}

}  // namespace neurotraj
