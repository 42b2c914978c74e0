#pragma once

// Synthetic expert demonstrations, causal relabeling, and the episode file
// format.
//
// Each maneuver lives in a "path frame": the reference path starts at the
// origin heading +x, runs straight until `turn_start`, follows a
// constant-curvature arc for `turn_length`, then continues straight. The
// expert advances along it with a closed-form speed profile while an optional
// lateral offset decays to zero. Labels are expressed in the vehicle frame at
// t0 (ego at the origin, heading +x).

#include "neurotraj/common.hpp"
#include "neurotraj/io.hpp"
#include "neurotraj/potential_map.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace neurotraj {

inline constexpr double kHorizon = 3.0;       // s
inline constexpr double kLabelDt = 0.1;       // s
inline constexpr int kLabelCount = 31;        // samples over [0, kHorizon]
inline constexpr int kWindowFrames = 4;       // K + 1
inline constexpr double kFrameDt = 0.1;       // s between window frames
inline constexpr double kMaxSpeed = 8.33;     // m/s
inline constexpr double kMaxCurvature = 0.2;  // 1/m
inline constexpr double kIntentionLength = 30.0;  // m

struct TrajectorySample {
  double t = 0.0;
  Vec2 position{0.0, 0.0};
  Vec2 velocity{0.0, 0.0};
  Vec2 acceleration{0.0, 0.0};
  double speed = 0.0;

  friend bool operator==(const TrajectorySample&, const TrajectorySample&) = default;
};

enum class ManeuverFamily { straight, turn, stop };

inline const char* to_string(ManeuverFamily f) {
  switch (f) {
    case ManeuverFamily::straight: return "straight";
    case ManeuverFamily::turn: return "turn";
    case ManeuverFamily::stop: return "stop";
  }
  return "?";
}

inline ManeuverFamily maneuver_family_from_string(const std::string& s) {
  if (s == "straight") return ManeuverFamily::straight;
  if (s == "turn") return ManeuverFamily::turn;
  if (s == "stop") return ManeuverFamily::stop;
  throw Error("unknown scenario tag '" + s + "'");
}

struct ManeuverSpec {
  ManeuverFamily family = ManeuverFamily::straight;
  double curvature = 0.0;  // 1/m, signed (left positive)
  double turn_start = 0.0;  // m of straight road before the arc
  double turn_length = std::numeric_limits<double>::infinity();  // m of arc
  double v0 = 5.0;           // m/s along the path
  double target_speed = 5.0;
  double jerk_limit = 0.0;   // m/s^3; 0 keeps the speed constant
  double accel_limit = 2.0;  // m/s^2 cap for the speed change
  /// Obstacle center in the path frame (equal to the vehicle frame when
  /// there is no initial offset).
  std::optional<Vec2> obstacle;
  double obstacle_radius = 0.5;  // m
  /// Non-causal expert: drives through an obstacle that will clear later.
  bool obstacle_clears = false;
  double lateral_offset = 0.0;   // m, initial ego offset left of the path
  double heading_offset = 0.0;   // rad, initial ego heading relative to the path
  double offset_decay_time = 2.0;  // s to converge onto the path
};

/// Parameters shared by stop experts and causal relabeling.
struct SafetyConfig {
  double margin = 2.0;          // m kept before the first colliding arclength
  double vehicle_radius = 1.0;  // m
  double obstacle_threshold = 0.5;
};

struct Episode {
  std::string id;
  std::vector<PotentialMap> map_window;  // oldest -> newest
  double v0 = 0.0;
  std::vector<TrajectorySample> label;
  ManeuverFamily scenario_tag = ManeuverFamily::straight;
  /// Occupied cells of the newest frame; relabeling rebuilds the obstacle
  /// potential from them.
  std::vector<CellIndex> obstacle_cells;
  std::uint64_t seed = 0;
  bool relabeled = false;

  friend bool operator==(const Episode&, const Episode&) = default;
};

// ---------------------------------------------------------------------------
// Path geometry

struct PathPoint {
  Vec2 position;
  double heading = 0.0;
  double curvature = 0.0;
};

class PathGeometry {
 public:
  PathGeometry() = default;
  PathGeometry(double curvature, double turn_start, double turn_length)
      : kappa_(curvature), s1_(turn_start), s2_(turn_start + turn_length) {}

  /// Pose along the path at arclength s. Negative s extends the first
  /// segment backward.
  PathPoint at(double s) const {
    if (kappa_ == 0.0 || (s < s1_ && s1_ > 0.0)) return {{s, 0.0}, 0.0, 0.0};
    const double u = std::min(s, s2_);
    const double theta = kappa_ * (u - s1_);
    PathPoint p{{s1_ + std::sin(theta) / kappa_, (1.0 - std::cos(theta)) / kappa_}, theta, kappa_};
    if (s > s2_) {
      p.position += (s - s2_) * Vec2(std::cos(theta), std::sin(theta));
      p.curvature = 0.0;
    }
    return p;
  }

  double curvature() const { return kappa_; }
  double turn_start() const { return s1_; }
  double turn_length() const { return s2_ - s1_; }

  std::vector<Vec2> sample(double s_from, double s_to, double step) const {
    std::vector<Vec2> out;
    const int n = static_cast<int>(std::floor((s_to - s_from) / step));
    for (int i = 0; i <= n; ++i) out.push_back(at(s_from + i * step).position);
    return out;
  }

 private:
  double kappa_ = 0.0;
  double s1_ = 0.0;
  double s2_ = std::numeric_limits<double>::infinity();
};

inline PathGeometry path_of(const ManeuverSpec& spec) {
  if (spec.family != ManeuverFamily::turn) return {};
  return {spec.curvature, spec.turn_start, spec.turn_length};
}

// ---------------------------------------------------------------------------
// Speed profiles: piecewise constant jerk, closed form within each piece.

class SpeedProfile {
 public:
  struct State {
    double s = 0.0, v = 0.0, a = 0.0;
  };

  static SpeedProfile constant(double v0) {
    SpeedProfile p;
    p.v0_ = v0;
    p.knots_.push_back({0.0, {0.0, v0, 0.0}, 0.0});
    return p;
  }

  /// Jerk-limited change from v0 to target with |a| <= accel_limit.
  static SpeedProfile jerk_limited(double v0, double target, double jerk, double accel_limit) {
    SpeedProfile p = constant(v0);
    const double dv = target - v0;
    if (jerk <= 0.0 || dv == 0.0) return p;
    const double sign = dv > 0 ? 1.0 : -1.0;
    double ramp, hold;
    if (std::abs(dv) <= accel_limit * accel_limit / jerk) {
      ramp = std::sqrt(std::abs(dv) / jerk);
      hold = 0.0;
    } else {
      ramp = accel_limit / jerk;
      hold = std::abs(dv) / accel_limit - ramp;
    }
    p.knots_.clear();
    p.knots_.push_back({0.0, {0.0, v0, 0.0}, sign * jerk});
    p.extend(ramp, 0.0);
    p.extend(hold, -sign * jerk);
    p.extend(ramp, 0.0);
    p.knots_.back().state.a = 0.0;  // cancel rounding before the cruise
    p.knots_.back().state.v = target;
    return p;
  }

  /// Constant deceleration that comes to rest after `distance`.
  static SpeedProfile stop_within(double v0, double distance) {
    SpeedProfile p = constant(v0);
    if (v0 <= 0.0) return p;
    const double decel = v0 * v0 / (2.0 * distance);
    p.knots_.clear();
    p.knots_.push_back({0.0, {0.0, v0, -decel}, 0.0});
    const double t_stop = v0 / decel;
    p.knots_.push_back({t_stop, {distance, 0.0, 0.0}, 0.0});
    return p;
  }

  State at(double t) const {
    if (t < 0.0) return {v0_ * t, v0_, 0.0};  // constant-speed history
    const Knot* k = &knots_.front();
    for (const auto& kn : knots_)
      if (kn.t <= t) k = &kn;
    const double d = t - k->t;
    const double j = k->jerk;
    return {k->state.s + k->state.v * d + k->state.a * d * d / 2.0 + j * d * d * d / 6.0,
            k->state.v + k->state.a * d + j * d * d / 2.0, k->state.a + j * d};
  }

 private:
  struct Knot {
    double t;
    State state;
    double jerk;
  };

  // Advances the last piece by `duration` and starts a new one with `next_jerk`.
  void extend(double duration, double next_jerk) {
    const auto& last = knots_.back();
    knots_.push_back({last.t + duration, at_piece(last, duration), next_jerk});
  }

  static State at_piece(const Knot& k, double d) {
    const double j = k.jerk;
    return {k.state.s + k.state.v * d + k.state.a * d * d / 2.0 + j * d * d * d / 6.0,
            k.state.v + k.state.a * d + j * d * d / 2.0, k.state.a + j * d};
  }

  double v0_ = 0.0;
  std::vector<Knot> knots_;
};

// ---------------------------------------------------------------------------
// Rendering the potential-map window from path-frame geometry

struct Obstacle {
  Vec2 center;
  double radius = 0.5;
};

/// Cells covered by an obstacle disk as seen from `pose`; always includes
/// the cell containing the center when it is on the grid.
inline std::vector<CellIndex> occupied_cells(std::span<const Obstacle> obstacles, const Pose2& pose,
                                             const GridSpec& grid) {
  std::vector<CellIndex> cells;
  for (const auto& o : obstacles) {
    const Vec2 local = pose.to_local(o.center);
    const double reach = o.radius + grid.cell_size;
    for (int r = 0; r < grid.rows; ++r) {
      const double y = grid.center({r, 0}).y();
      if (std::abs(y - local.y()) > reach) continue;
      for (int c = 0; c < grid.cols; ++c) {
        const CellIndex cell{r, c};
        if ((grid.center(cell) - local).norm() <= o.radius &&
            std::find(cells.begin(), cells.end(), cell) == cells.end())
          cells.push_back(cell);
      }
    }
    if (auto c = grid.cell_of(local); c && std::find(cells.begin(), cells.end(), *c) == cells.end())
      cells.push_back(*c);
  }
  return cells;
}

/// Dense reference polyline with cumulative arclength.
struct Route {
  std::vector<Vec2> points;

  /// Index of the point nearest `p` within [lo, hi].
  std::size_t nearest(const Vec2& p, std::size_t lo = 0,
                      std::size_t hi = std::numeric_limits<std::size_t>::max()) const {
    hi = std::min(hi, points.size() - 1);
    std::size_t best = lo;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = lo; i <= hi; ++i) {
      const double d = (points[i] - p).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  }
};

/// The in-bounds run of the route ahead of `start`, in the pose's frame.
inline IntentionPath intention_path(const Route& route, std::size_t start, const Pose2& pose,
                                    const GridSpec& grid, double length = kIntentionLength) {
  IntentionPath path;
  double s = 0.0;
  for (std::size_t i = start; i < route.points.size(); ++i) {
    if (i > start) s += (route.points[i] - route.points[i - 1]).norm();
    if (s > length) break;
    const Vec2 local = pose.to_local(route.points[i]);
    if (grid.contains(local)) {
      path.points.push_back(local);
    } else if (!path.points.empty()) {
      break;
    }
  }
  return path;
}

struct RenderedFrame {
  PotentialMap map;
  std::vector<CellIndex> obstacle_cells;
};

inline RenderedFrame render_frame(const Route& route, std::size_t start, const Pose2& pose,
                                  std::span<const Obstacle> obstacles, const GridSpec& grid,
                                  const PotentialConfig& cfg = {}) {
  const auto path = intention_path(route, start, pose, grid);
  if (path.points.empty()) throw Error("intention path leaves the grid");
  RenderedFrame f;
  f.obstacle_cells = occupied_cells(obstacles, pose, grid);
  f.map = compose(build_goal_potential(path, grid, cfg), build_obstacle_potential(f.obstacle_cells, grid, cfg));
  return f;
}

// ---------------------------------------------------------------------------
// Collision geometry shared by stop experts and relabeling

/// Distance from p to the closed square of a cell.
inline double distance_to_cell(const Vec2& p, const CellIndex& c, const GridSpec& grid) {
  const Vec2 ctr = grid.center(c);
  const double h = grid.cell_size / 2.0;
  const double dx = std::max(std::abs(p.x() - ctr.x()) - h, 0.0);
  const double dy = std::max(std::abs(p.y() - ctr.y()) - h, 0.0);
  return std::hypot(dx, dy);
}

/// Cells whose obstacle potential reaches the collision threshold.
inline std::vector<CellIndex> danger_cells(std::span<const CellIndex> occupied, const GridSpec& grid,
                                           const SafetyConfig& safety,
                                           const PotentialConfig& cfg = {}) {
  std::vector<CellIndex> out;
  if (occupied.empty()) return out;
  const auto pot = build_obstacle_potential(occupied, grid, cfg);
  for (int r = 0; r < grid.rows; ++r)
    for (int c = 0; c < grid.cols; ++c)
      if (pot.at(r, c) >= safety.obstacle_threshold) out.push_back({r, c});
  return out;
}

inline bool collides(const Vec2& p, std::span<const CellIndex> danger, const GridSpec& grid,
                     double vehicle_radius) {
  return std::any_of(danger.begin(), danger.end(), [&](const CellIndex& c) {
    return distance_to_cell(p, c, grid) <= vehicle_radius;
  });
}

// ---------------------------------------------------------------------------
// Expert kinematics

namespace detail {

/// Quintic blend: value 1 -> 0 with zero slope/curvature at both ends.
struct Blend {
  double value, slope, curv;
};
inline Blend offset_blend(double d0, double rate0, double t, double horizon) {
  if (t >= horizon) return {0.0, 0.0, 0.0};
  if (t < 0.0) return {d0 + rate0 * t, rate0, 0.0};
  const double u = t / horizon, u2 = u * u, u3 = u2 * u, u4 = u3 * u, u5 = u4 * u;
  const double h0 = 1 - 10 * u3 + 15 * u4 - 6 * u5;
  const double h0d = (-30 * u2 + 60 * u3 - 30 * u4) / horizon;
  const double h0dd = (-60 * u + 180 * u2 - 120 * u3) / (horizon * horizon);
  const double h1 = u - 6 * u3 + 8 * u4 - 3 * u5;
  const double h1d = (1 - 18 * u2 + 32 * u3 - 15 * u4) / horizon;
  const double h1dd = (-36 * u + 96 * u2 - 60 * u3) / (horizon * horizon);
  const double k = rate0 * horizon;
  return {d0 * h0 + k * h1, d0 * h0d + k * h1d, d0 * h0dd + k * h1dd};
}

}  // namespace detail

/// Closed-form expert motion for one maneuver.
class ExpertMotion {
 public:
  ExpertMotion(const ManeuverSpec& spec, const SafetyConfig& safety = {},
               const GridSpec& grid = {}, const PotentialConfig& pcfg = {})
      : ExpertMotion(spec, path_of(spec), 0.0, true, safety, grid, pcfg) {}

  /// Expert on an explicit road starting `path_start` meters along it. In
  /// lenient mode stops that need more than 8 m/s^2 brake at 8 m/s^2 instead
  /// of being rejected.
  ExpertMotion(const ManeuverSpec& spec, const PathGeometry& path, double path_start, bool strict,
               const SafetyConfig& safety = {}, const GridSpec& grid = {}, const PotentialConfig& pcfg = {})
      : spec_(spec), path_(path), s_base_(path_start) {
    validate();
    lateral_rate_ = spec.v0 * (1.0 - road(0.0).curvature * spec.lateral_offset) * std::tan(spec.heading_offset);
    if (spec.family == ManeuverFamily::stop && !spec.obstacle_clears) {
      const double stop_at = first_conflict_arclength(safety, grid, pcfg) - safety.margin;
      if (strict && spec.v0 > 0.0) {
        if (stop_at <= 0.5) throw Error("infeasible maneuver: obstacle too close to stop");
        if (spec.v0 * spec.v0 / (2.0 * stop_at) > 6.0)
          throw Error("infeasible maneuver: stop needs more than 6 m/s^2");
      }
      const double hardest = spec.v0 * spec.v0 / (2.0 * 8.0);
      profile_ = SpeedProfile::stop_within(spec.v0, strict ? stop_at : std::max({stop_at, hardest, 1e-3}));
    } else {
      profile_ = SpeedProfile::jerk_limited(spec.v0, spec.target_speed, spec.jerk_limit, spec.accel_limit);
    }
    const auto s0 = path_frame(0.0);
    frame_ = Pose2{s0.position, initial_heading(s0)};
  }

  const ManeuverSpec& spec() const { return spec_; }
  const PathGeometry& path() const { return path_; }
  /// Ego pose at t0 in the path frame; labels are expressed relative to it.
  const Pose2& vehicle_frame() const { return frame_; }

  /// Expert state in the path frame.
  TrajectorySample path_frame(double t) const {
    const auto sp = profile_.at(t);
    const auto pp = road(sp.s);
    const auto d = detail::offset_blend(spec_.lateral_offset, lateral_rate_, t, spec_.offset_decay_time);
    const Vec2 tangent(std::cos(pp.heading), std::sin(pp.heading));
    const Vec2 normal(-tangent.y(), tangent.x());
    const double k = pp.curvature;
    TrajectorySample out;
    out.t = t;
    out.position = pp.position + d.value * normal;
    out.velocity = sp.v * (1.0 - k * d.value) * tangent + d.slope * normal;
    out.acceleration = (sp.a * (1.0 - k * d.value) - 2.0 * k * sp.v * d.slope) * tangent +
                       (k * sp.v * sp.v * (1.0 - k * d.value) + d.curv) * normal;
    out.speed = out.velocity.norm();
    return out;
  }

  /// Expert state in the vehicle frame at t0.
  TrajectorySample vehicle_frame_state(double t) const {
    auto s = path_frame(t);
    s.position = frame_.to_local(s.position);
    s.velocity = rotate(s.velocity, -frame_.heading);
    s.acceleration = rotate(s.acceleration, -frame_.heading);
    return s;
  }

  /// Ego pose (path frame) at time t, heading along the expert velocity.
  Pose2 pose_at(double t) const {
    const auto s = path_frame(t);
    if (s.speed < kMinSpeed) {
      const auto pp = road(profile_.at(t).s);
      return {s.position, wrap_angle(pp.heading + (t <= 0.0 ? spec_.heading_offset : 0.0))};
    }
    return {s.position, std::atan2(s.velocity.y(), s.velocity.x())};
  }

  double arclength_at(double t) const { return profile_.at(t).s; }

  std::vector<Obstacle> obstacles() const {
    if (!spec_.obstacle) return {};
    return {Obstacle{*spec_.obstacle, spec_.obstacle_radius}};
  }

 private:
  void validate() const {
    auto fail = [](const std::string& m) { throw Error("invalid maneuver: " + m); };
    if (std::abs(spec_.curvature) > kMaxCurvature) fail("|curvature| exceeds 0.2 1/m");
    if (spec_.v0 < 0.0 || spec_.v0 > kMaxSpeed) fail("v0 outside [0, 8.33] m/s");
    if (spec_.target_speed < 0.0 || spec_.target_speed > kMaxSpeed) fail("target speed outside [0, 8.33] m/s");
    if (spec_.jerk_limit < 0.0 || spec_.accel_limit <= 0.0) fail("negative jerk or accel limit");
    if (spec_.turn_start < 0.0 || !(spec_.turn_length > 0.0)) fail("bad turn extent");
    if (spec_.family == ManeuverFamily::stop && !spec_.obstacle) fail("stop maneuver without obstacle");
    if (std::abs(spec_.heading_offset) >= kPi / 4) fail("heading offset too large");
  }

  double initial_heading(const TrajectorySample& s0) const {
    if (s0.speed >= kMinSpeed) return std::atan2(s0.velocity.y(), s0.velocity.x());
    return wrap_angle(road(0.0).heading + spec_.heading_offset);
  }

  // First arclength along the reference path whose point conflicts with the
  // obstacle's danger region, evaluated in the t0 vehicle frame.
  double first_conflict_arclength(const SafetyConfig& safety, const GridSpec& grid,
                                  const PotentialConfig& pcfg) const {
    const auto obs = obstacles();
    const auto start = road(0.0);
    const Vec2 normal(-std::sin(start.heading), std::cos(start.heading));
    const Pose2 frame0{start.position + spec_.lateral_offset * normal, start.heading + spec_.heading_offset};
    const auto cells = occupied_cells(obs, frame0, grid);
    const auto danger = danger_cells(cells, grid, safety, pcfg);
    for (double s = 0.0; s < 60.0; s += 0.05)
      if (collides(frame0.to_local(road(s).position), danger, grid, safety.vehicle_radius)) return s;
    return 60.0;
  }

  PathPoint road(double s) const { return path_.at(s_base_ + s); }

  ManeuverSpec spec_;
  PathGeometry path_;
  double s_base_ = 0.0;
  SpeedProfile profile_;
  double lateral_rate_ = 0.0;
  Pose2 frame_;
};

// ---------------------------------------------------------------------------
// Episode generation

struct GenerationConfig {
  GridSpec grid;
  PotentialConfig potential;
  SafetyConfig safety;
  int max_clutter = 3;
};

/// Renders the K+1 frames by rolling the ego pose back along the path at
/// kFrameDt; returns the newest frame's occupied cells through `newest_cells`.
inline std::vector<PotentialMap> render_window(const ExpertMotion& motion,
                                               std::span<const Obstacle> obstacles,
                                               const GenerationConfig& cfg,
                                               std::vector<CellIndex>* newest_cells) {
  const double step = 0.25;
  const double s_back = -5.0;
  Route route{motion.path().sample(s_back, s_back + 60.0, step)};
  std::vector<PotentialMap> window;
  for (int k = 0; k < kWindowFrames; ++k) {
    const double t = -kFrameDt * (kWindowFrames - 1 - k);
    const Pose2 pose = motion.pose_at(t);
    const double s = motion.arclength_at(t);
    const auto hint = static_cast<std::size_t>(std::max(0.0, std::round((s - s_back) / step)));
    const std::size_t lo = hint > 12 ? hint - 12 : 0;
    const std::size_t start = route.nearest(pose.position, lo, hint + 12);
    auto frame = render_frame(route, start, pose, obstacles, cfg.grid, cfg.potential);
    window.push_back(std::move(frame.map));
    if (k == kWindowFrames - 1 && newest_cells) *newest_cells = std::move(frame.obstacle_cells);
  }
  return window;
}

/// Deterministic in (spec, seed): the seed only places roadside clutter.
inline Episode generate_episode(const ManeuverSpec& spec, std::uint64_t seed,
                                const GenerationConfig& cfg = {}) {
  const ExpertMotion motion(spec, cfg.safety, cfg.grid, cfg.potential);
  Episode ep;
  ep.seed = seed;
  ep.scenario_tag = spec.family;
  for (int k = 0; k < kLabelCount; ++k) {
    auto s = motion.vehicle_frame_state(k * kLabelDt);
    s.t = k * kLabelDt;
    if (k == 0) s.position = Vec2::Zero();
    if (!cfg.grid.contains(s.position)) throw Error("infeasible maneuver: trajectory leaves the grid");
    ep.label.push_back(s);
  }
  ep.v0 = ep.label.front().speed;

  auto obstacles = motion.obstacles();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> count(0, cfg.max_clutter);
  std::uniform_real_distribution<double> along(3.0, 30.0), side(5.0, 12.0), coin(0.0, 1.0);
  const auto dense_path = motion.path().sample(-5.0, 45.0, 0.5);
  for (int i = count(rng), tries = 0; i > 0 && tries < 50; ++tries) {
    const auto pp = motion.path().at(along(rng));
    const double lateral = (coin(rng) < 0.5 ? -1.0 : 1.0) * side(rng);
    const Vec2 c = pp.position + lateral * Vec2(-std::sin(pp.heading), std::cos(pp.heading));
    const bool clear = std::all_of(dense_path.begin(), dense_path.end(),
                                   [&](const Vec2& q) { return (q - c).norm() > 4.5; });
    if (!clear) continue;
    obstacles.push_back({c, 0.3});
    --i;
  }
  ep.map_window = render_window(motion, obstacles, cfg, &ep.obstacle_cells);
  return ep;
}

// ---------------------------------------------------------------------------
// Causal relabeling

namespace detail {

struct PolylinePoint {
  Vec2 position;
  Vec2 tangent;
};

inline PolylinePoint along_polyline(std::span<const TrajectorySample> label,
                                    std::span<const double> cum, double s) {
  Vec2 last_dir(1.0, 0.0);
  for (std::size_t i = 1; i < label.size(); ++i) {
    const Vec2 seg = label[i].position - label[i - 1].position;
    const double len = seg.norm();
    if (len > 0.0) last_dir = seg / len;
    if (s <= cum[i] && len > 0.0) {
      const double u = (s - cum[i - 1]) / len;
      return {label[i - 1].position + u * seg, last_dir};
    }
  }
  return {label.back().position, last_dir};
}

}  // namespace detail

/// Replaces labels that drive into an obstacle with a constant-deceleration
/// stop `margin` before the first colliding sample, keeping the original
/// geometry. Episodes without a collision are returned unchanged.
inline Episode relabel_causal(const Episode& ep, double margin = 2.0, double vehicle_radius = 1.0,
                              const SafetyConfig& base = {}, const PotentialConfig& pcfg = {}) {
  if (ep.label.empty() || ep.map_window.empty()) return ep;
  SafetyConfig safety = base;
  safety.margin = margin;
  safety.vehicle_radius = vehicle_radius;
  const GridSpec& grid = ep.map_window.back().spec;
  const auto danger = danger_cells(ep.obstacle_cells, grid, safety, pcfg);
  std::size_t hit = ep.label.size();
  for (std::size_t k = 0; k < ep.label.size(); ++k)
    if (collides(ep.label[k].position, danger, grid, vehicle_radius)) {
      hit = k;
      break;
    }
  if (hit == ep.label.size()) return ep;

  std::vector<double> cum(ep.label.size(), 0.0);
  for (std::size_t k = 1; k < ep.label.size(); ++k)
    cum[k] = cum[k - 1] + (ep.label[k].position - ep.label[k - 1].position).norm();
  const double stop_distance = std::max(0.0, cum[hit] - margin);
  const double v0 = ep.v0;

  Episode out = ep;
  out.relabeled = true;
  const auto& first = ep.label.front();
  for (std::size_t k = 1; k < out.label.size(); ++k) {
    auto& smp = out.label[k];
    if (stop_distance == 0.0) {
      smp.position = first.position;
      smp.velocity = smp.acceleration = Vec2::Zero();
      smp.speed = 0.0;
      continue;
    }
    const double decel = v0 * v0 / (2.0 * stop_distance);
    const double t_stop = decel > 0.0 ? v0 / decel : 0.0;
    double s = stop_distance, v = 0.0, a = 0.0;
    if (smp.t < t_stop) {
      s = v0 * smp.t - 0.5 * decel * smp.t * smp.t;
      v = v0 - decel * smp.t;
      a = -decel;
    }
    if (v0 == 0.0) s = 0.0;
    const auto pp = detail::along_polyline(ep.label, cum, s);
    smp.position = pp.position;
    smp.velocity = v * pp.tangent;
    smp.acceleration = a * pp.tangent;
    smp.speed = v;
  }
  if (stop_distance > 0.0 && first.speed > 0.0) {
    const double decel = v0 * v0 / (2.0 * stop_distance);
    out.label.front().acceleration = -decel * first.velocity / first.speed;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenario sets: distributions over maneuvers for dataset generation

struct Range {
  double lo = 0.0, hi = 0.0;
  double sample(std::mt19937_64& rng) const {
    return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
  }
};

struct ScenarioSet {
  double weight_straight = 0.35, weight_turn = 0.4, weight_stop = 0.25;
  Range v0{0.0, 8.0};
  Range target_speed{3.0, 8.0};
  Range jerk{0.5, 2.5};
  Range curvature{0.03, 0.15};
  Range turn_start{0.0, 20.0};
  Range turn_angle{kPi / 3, kPi / 2};
  double arc_from_start_probability = 0.4;
  Range lateral_offset{-1.0, 1.0};
  Range heading_offset{-0.12, 0.12};
  double offset_probability = 0.5;
  Range stop_distance{8.0, 28.0};
  double noncausal_probability = 0.3;
};

inline io::json to_json(const Range& r) { return {r.lo, r.hi}; }

inline io::json scenario_set_to_json(const ScenarioSet& s) {
  return {{"weights", {{"straight", s.weight_straight}, {"turn", s.weight_turn}, {"stop", s.weight_stop}}},
          {"v0", to_json(s.v0)},
          {"target_speed", to_json(s.target_speed)},
          {"jerk", to_json(s.jerk)},
          {"curvature", to_json(s.curvature)},
          {"turn_start", to_json(s.turn_start)},
          {"turn_angle", to_json(s.turn_angle)},
          {"arc_from_start_probability", s.arc_from_start_probability},
          {"lateral_offset", to_json(s.lateral_offset)},
          {"heading_offset", to_json(s.heading_offset)},
          {"offset_probability", s.offset_probability},
          {"stop_distance", to_json(s.stop_distance)},
          {"noncausal_probability", s.noncausal_probability}};
}

/// Keys absent from `j` keep their defaults.
inline ScenarioSet scenario_set_from_json(const io::json& j) {
  ScenarioSet s;
  auto range = [&](const char* key, Range& r) {
    if (!j.contains(key)) return;
    const auto v = io::get_field<std::vector<double>>(j, key);
    if (v.size() != 2 || v[0] > v[1]) throw Error(std::string("bad range for field '") + key + "'");
    r = {v[0], v[1]};
  };
  auto number = [&](const char* key, double& x) {
    if (j.contains(key)) x = io::get_field<double>(j, key);
  };
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    if (w.contains("straight")) s.weight_straight = io::get_field<double>(w, "straight");
    if (w.contains("turn")) s.weight_turn = io::get_field<double>(w, "turn");
    if (w.contains("stop")) s.weight_stop = io::get_field<double>(w, "stop");
  }
  range("v0", s.v0);
  range("target_speed", s.target_speed);
  range("jerk", s.jerk);
  range("curvature", s.curvature);
  range("turn_start", s.turn_start);
  range("turn_angle", s.turn_angle);
  number("arc_from_start_probability", s.arc_from_start_probability);
  range("lateral_offset", s.lateral_offset);
  range("heading_offset", s.heading_offset);
  number("offset_probability", s.offset_probability);
  range("stop_distance", s.stop_distance);
  number("noncausal_probability", s.noncausal_probability);
  if (s.weight_straight < 0 || s.weight_turn < 0 || s.weight_stop < 0 ||
      s.weight_straight + s.weight_turn + s.weight_stop <= 0)
    throw Error("bad value for field 'weights'");
  return s;
}

inline ManeuverSpec sample_maneuver(const ScenarioSet& set, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const double total = set.weight_straight + set.weight_turn + set.weight_stop;
  const double pick = coin(rng) * total;
  ManeuverSpec m;
  m.family = pick < set.weight_straight                    ? ManeuverFamily::straight
             : pick < set.weight_straight + set.weight_turn ? ManeuverFamily::turn
                                                            : ManeuverFamily::stop;
  m.v0 = set.v0.sample(rng);
  m.target_speed = set.target_speed.sample(rng);
  m.jerk_limit = set.jerk.sample(rng);
  if (m.family == ManeuverFamily::turn) {
    m.curvature = set.curvature.sample(rng) * (coin(rng) < 0.5 ? -1.0 : 1.0);
    m.turn_start = coin(rng) < set.arc_from_start_probability ? 0.0 : set.turn_start.sample(rng);
    m.turn_length = set.turn_angle.sample(rng) / std::abs(m.curvature);
  }
  if (m.family == ManeuverFamily::stop) {
    m.obstacle = Vec2(set.stop_distance.sample(rng), 0.0);
    m.obstacle_clears = coin(rng) < set.noncausal_probability;
  }
  if (coin(rng) < set.offset_probability) {
    m.lateral_offset = set.lateral_offset.sample(rng);
    m.heading_offset = set.heading_offset.sample(rng);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Episode files

inline io::json maneuver_to_json(const ManeuverSpec& m) {
  io::json j{{"family", to_string(m.family)},
             {"curvature", m.curvature},
             {"turn_start", m.turn_start},
             {"turn_length", std::isfinite(m.turn_length) ? io::json(m.turn_length) : io::json(nullptr)},
             {"v0", m.v0},
             {"target_speed", m.target_speed},
             {"jerk_limit", m.jerk_limit},
             {"accel_limit", m.accel_limit},
             {"obstacle_radius", m.obstacle_radius},
             {"obstacle_clears", m.obstacle_clears},
             {"lateral_offset", m.lateral_offset},
             {"heading_offset", m.heading_offset},
             {"offset_decay_time", m.offset_decay_time}};
  j["obstacle"] = m.obstacle ? io::json{m.obstacle->x(), m.obstacle->y()} : io::json(nullptr);
  return j;
}

inline ManeuverSpec maneuver_from_json(const io::json& j) {
  ManeuverSpec m;
  m.family = maneuver_family_from_string(io::get_field<std::string>(j, "family"));
  m.curvature = io::get_field<double>(j, "curvature");
  m.turn_start = io::get_field<double>(j, "turn_start");
  m.turn_length = j.contains("turn_length") && !j.at("turn_length").is_null()
                      ? io::get_field<double>(j, "turn_length")
                      : std::numeric_limits<double>::infinity();
  m.v0 = io::get_field<double>(j, "v0");
  m.target_speed = io::get_field<double>(j, "target_speed");
  m.jerk_limit = io::get_field<double>(j, "jerk_limit");
  m.accel_limit = io::get_field<double>(j, "accel_limit");
  m.obstacle_radius = io::get_field<double>(j, "obstacle_radius");
  m.obstacle_clears = io::get_field<bool>(j, "obstacle_clears");
  m.lateral_offset = io::get_field<double>(j, "lateral_offset");
  m.heading_offset = io::get_field<double>(j, "heading_offset");
  m.offset_decay_time = io::get_field<double>(j, "offset_decay_time");
  if (j.contains("obstacle") && !j.at("obstacle").is_null()) {
    const auto o = io::get_field<std::vector<double>>(j, "obstacle");
    if (o.size() != 2) throw Error("bad value for field 'obstacle'");
    m.obstacle = Vec2(o[0], o[1]);
  }
  return m;
}

inline std::string map_file_name(const std::string& id, int frame) {
  return id + ".c" + std::to_string(frame) + ".map";
}

/// Episode JSON document; maps are referenced by sibling file name.
inline io::json episode_to_json(const Episode& ep) {
  io::json label;
  std::vector<double> t, px, py, vx, vy, ax, ay, speed;
  for (const auto& s : ep.label) {
    t.push_back(s.t);
    px.push_back(s.position.x());
    py.push_back(s.position.y());
    vx.push_back(s.velocity.x());
    vy.push_back(s.velocity.y());
    ax.push_back(s.acceleration.x());
    ay.push_back(s.acceleration.y());
    speed.push_back(s.speed);
  }
  label = {{"t", t}, {"px", px}, {"py", py}, {"vx", vx}, {"vy", vy}, {"ax", ax}, {"ay", ay}, {"speed", speed}};
  io::json cells = io::json::array();
  for (const auto& c : ep.obstacle_cells) cells.push_back({c.row, c.col});
  io::json maps = io::json::array();
  for (std::size_t i = 0; i < ep.map_window.size(); ++i) maps.push_back(map_file_name(ep.id, static_cast<int>(i)));
  return {{"format", "neurotraj.episode"},
          {"version", 1},
          {"id", ep.id},
          {"scenario_tag", to_string(ep.scenario_tag)},
          {"seed", ep.seed},
          {"relabeled", ep.relabeled},
          {"v0", ep.v0},
          {"label", label},
          {"obstacle_cells", cells},
          {"maps", maps}};
}

/// Writes `<dir>/<id>.json` plus one map file per window frame. Returns the
/// sha256 over the episode document followed by its map files.
inline std::string write_episode(const io::fs::path& dir, const Episode& ep) {
  const auto doc = episode_to_json(ep).dump(1);
  std::string digest_input = doc;
  for (std::size_t i = 0; i < ep.map_window.size(); ++i) {
    const auto bytes = encode_potential_map(ep.map_window[i]);
    io::write_file_atomic(dir / map_file_name(ep.id, static_cast<int>(i)), bytes);
    digest_input += bytes;
  }
  io::write_file_atomic(dir / (ep.id + ".json"), doc);
  return io::sha256_hex(digest_input);
}

inline std::string episode_checksum(const io::fs::path& dir, const std::string& id) {
  const auto doc_text = io::read_file(dir / (id + ".json"));
  std::string digest_input = doc_text;
  const auto doc = io::parse_json(doc_text, "episode " + id);
  for (const auto& name : doc.at("maps")) digest_input += io::read_file(dir / name.get<std::string>());
  return io::sha256_hex(digest_input);
}

inline Episode read_episode(const io::fs::path& file) {
  const auto where = file.string() + ": ";
  try {
    const auto doc = io::parse_json(io::read_file(file), "episode");
    if (io::get_field<std::string>(doc, "format") != "neurotraj.episode")
      throw Error("bad value for field 'format'");
    Episode ep;
    ep.id = io::get_field<std::string>(doc, "id");
    ep.scenario_tag = maneuver_family_from_string(io::get_field<std::string>(doc, "scenario_tag"));
    ep.seed = io::get_field<std::uint64_t>(doc, "seed");
    ep.relabeled = io::get_field<bool>(doc, "relabeled");
    ep.v0 = io::get_field<double>(doc, "v0");
    const auto label = io::get_field<io::json>(doc, "label");
    const char* keys[] = {"t", "px", "py", "vx", "vy", "ax", "ay", "speed"};
    std::array<std::vector<double>, 8> cols;
    for (int i = 0; i < 8; ++i) cols[i] = io::get_field<std::vector<double>>(label, keys[i]);
    for (int i = 1; i < 8; ++i)
      if (cols[i].size() != cols[0].size())
        throw Error(std::string("bad value for field 'label.") + keys[i] + "': length mismatch");
    if (cols[0].empty()) throw Error("bad value for field 'label.t': empty");
    for (std::size_t k = 0; k < cols[0].size(); ++k) {
      if (k > 0 && !(cols[0][k] > cols[0][k - 1]))
        throw Error("bad value for field 'label.t': not strictly increasing");
      ep.label.push_back({cols[0][k], {cols[1][k], cols[2][k]}, {cols[3][k], cols[4][k]},
                          {cols[5][k], cols[6][k]}, cols[7][k]});
    }
    for (const auto& c : io::get_field<std::vector<std::array<int, 2>>>(doc, "obstacle_cells"))
      ep.obstacle_cells.push_back({c[0], c[1]});
    const auto maps = io::get_field<std::vector<std::string>>(doc, "maps");
    if (maps.size() != kWindowFrames) throw Error("bad value for field 'maps': expected 4 frames");
    for (const auto& name : maps) ep.map_window.push_back(read_potential_map(file.parent_path() / name));
    for (const auto& m : ep.map_window)
      if (!(m.spec == ep.map_window.front().spec)) throw Error("bad value for field 'maps': grid mismatch");
    return ep;
  } catch (const Error& e) {
    throw Error(where + e.what());
  }
}

// ---------------------------------------------------------------------------
// Datasets: a directory of episodes plus manifest.json

struct ManifestEntry {
  std::string id;
  std::string file;
  std::uint64_t seed = 0;
  std::string tag;
  std::string sha256;
};

struct DatasetManifest {
  std::uint64_t base_seed = 0;
  std::vector<ManifestEntry> episodes;
};

inline io::json manifest_to_json(const DatasetManifest& m) {
  io::json eps = io::json::array();
  for (const auto& e : m.episodes)
    eps.push_back({{"id", e.id}, {"file", e.file}, {"seed", e.seed}, {"scenario_tag", e.tag}, {"sha256", e.sha256}});
  return {{"format", "neurotraj.dataset"}, {"base_seed", m.base_seed}, {"count", m.episodes.size()}, {"episodes", eps}};
}

inline DatasetManifest read_manifest(const io::fs::path& dir) {
  const auto doc = io::parse_json(io::read_file(dir / "manifest.json"), "manifest");
  DatasetManifest m;
  m.base_seed = io::get_field<std::uint64_t>(doc, "base_seed");
  for (const auto& e : io::get_field<io::json>(doc, "episodes"))
    m.episodes.push_back({io::get_field<std::string>(e, "id"), io::get_field<std::string>(e, "file"),
                          io::get_field<std::uint64_t>(e, "seed"), io::get_field<std::string>(e, "scenario_tag"),
                          io::get_field<std::string>(e, "sha256")});
  return m;
}

/// Per-episode seed derived from the dataset seed (splitmix64 step).
inline std::uint64_t episode_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::string episode_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ep%06zu", index);
  return buf;
}

/// Samples maneuvers until one is feasible; deterministic in (set, seed).
inline Episode generate_from_set(const ScenarioSet& set, std::uint64_t seed, const GenerationConfig& cfg = {}) {
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < 200; ++attempt) {
    const auto spec = sample_maneuver(set, rng);
    try {
      return generate_episode(spec, seed, cfg);
    } catch (const Error&) {
      continue;
    }
  }
  throw Error("scenario set produced no feasible maneuver in 200 attempts");
}

inline std::vector<Episode> generate_dataset(const ScenarioSet& set, std::uint64_t base_seed, std::size_t count,
                                             const GenerationConfig& cfg = {}) {
  std::vector<Episode> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto ep = generate_from_set(set, episode_seed(base_seed, i), cfg);
    ep.id = episode_id(i);
    out.push_back(std::move(ep));
  }
  return out;
}

inline DatasetManifest write_dataset(const io::fs::path& dir, std::span<const Episode> episodes,
                                     std::uint64_t base_seed) {
  io::fs::create_directories(dir);
  DatasetManifest m;
  m.base_seed = base_seed;
  for (const auto& ep : episodes)
    m.episodes.push_back({ep.id, ep.id + ".json", ep.seed, to_string(ep.scenario_tag), write_episode(dir, ep)});
  io::write_file_atomic(dir / "manifest.json", manifest_to_json(m).dump(1));
  return m;
}

/// Reads every manifest episode, verifying its checksum first.
inline std::vector<Episode> read_dataset(const io::fs::path& dir, bool verify = true) {
  const auto m = read_manifest(dir);
  std::vector<Episode> out;
  out.reserve(m.episodes.size());
  for (const auto& e : m.episodes) {
    if (verify && episode_checksum(dir, e.id) != e.sha256)
      throw Error("checksum mismatch for episode " + e.id);
    out.push_back(read_episode(dir / e.file));
  }
  return out;
}

}  // namespace neurotraj
