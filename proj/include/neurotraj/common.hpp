#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace neurotraj {

/// Domain error raised by every module. CLI maps it to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Vec2 = Eigen::Vector2d;

inline constexpr double kPi = std::numbers::pi;

/// Speed floor below which heading/curvature are undefined.
inline constexpr double kMinSpeed = 0.05;

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

inline double sinc(double x) {
  if (std::abs(x) < 1e-6) return 1.0 - x * x / 6.0;
  return std::sin(x) / x;
}

inline Vec2 rotate(const Vec2& v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y()};
}

/// Planar pose in some world frame.
struct Pose2 {
  Vec2 position{0.0, 0.0};
  double heading = 0.0;

  /// Expresses a world point in this pose's local frame.
  Vec2 to_local(const Vec2& world) const { return rotate(world - position, -heading); }
  Vec2 to_world(const Vec2& local) const { return position + rotate(local, heading); }
  Pose2 to_local(const Pose2& world) const {
    return {to_local(world.position), wrap_angle(world.heading - heading)};
  }
  Pose2 to_world(const Pose2& local) const {
    return {to_world(local.position), wrap_angle(local.heading + heading)};
  }
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

}  // namespace neurotraj
