#pragma once

// Closed-loop harness: a planner task publishes time-stamped plans, a tracker
// task follows the latest one with the trajectory controller, and a kinematic
// bicycle stands in for the vehicle.

#include "neurotraj/controller.hpp"
#include "neurotraj/parallel.hpp"
#include "neurotraj/scenario.hpp"
#include "neurotraj/trajectory.hpp"

#include <atomic>
#include <chrono>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>

namespace neurotraj {

struct VehicleState {
  double x = 0.0, y = 0.0;
  double psi = 0.0;
  double v = 0.0;

  Pose2 pose() const { return {{x, y}, psi}; }
  friend bool operator==(const VehicleState&, const VehicleState&) = default;
};

inline VehicleState step_plant(const VehicleState& s, const ControlCommand& cmd, double dt,
                               const VehicleLimits& lim = {}) {
  if (!(dt > 0.0)) throw Error("plant step needs dt > 0");
  const double a = lim.max_accel * (cmd.throttle - cmd.brake);
  VehicleState n = s;
  n.x += s.v * std::cos(s.psi) * dt;
  n.y += s.v * std::sin(s.psi) * dt;
  n.psi = wrap_angle(s.psi + s.v * std::tan(cmd.steering) / lim.wheelbase * dt);
  n.v = std::max(0.0, s.v + a * dt);
  return n;
}

struct PlanHandle {
  std::uint64_t id = 0;
  ContinuousTrajectory trajectory;
  Pose2 anchor;  // world pose at the planning snapshot
  double t_start = 0.0;
  std::uint64_t guard = ~std::uint64_t{0};  // ~id once fully built

  bool intact() const { return guard == ~id && trajectory.valid(); }
};

struct SimObstacle {
  Obstacle shape;
  double clear_time = std::numeric_limits<double>::infinity();

  bool active(double t) const { return t < clear_time; }
};

/// A road in world coordinates (the road's path frame is the world frame)
/// with a start state, a goal, and static or clearing obstacles.
struct SimScenario {
  std::string name;
  ManeuverFamily family = ManeuverFamily::straight;
  PathGeometry road;
  double start_offset = 0.0;          // m left of the road
  double start_heading_offset = 0.0;  // rad
  double start_speed = 5.0;
  double cruise_speed = 5.0;
  double goal_s = 50.0;  // goal arclength
  std::vector<SimObstacle> obstacles;
  double time_budget = 20.0;

  Vec2 goal() const { return road.at(goal_s).position; }
};

struct InitialJitter {
  double lateral = 0.1;  // m, uniform +-
  double heading = 0.02;
  double speed = 0.3;
};

struct SimConfig {
  double control_dt = 0.02;
  double plan_period = 0.4;
  double latency = 0.0;  // s
  VehicleLimits limits;
  ControllerGains gains;
  double goal_radius = 2.0;
  double vehicle_radius = 1.0;
  double off_road_distance = 3.5;
  /// Overrides the scenario's budget when >= 0.
  double time_budget = -1.0;
  InitialJitter jitter;
  GenerationConfig render;
};

enum class Outcome { success, collision, timeout, failed };

inline const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::success: return "success";
    case Outcome::collision: return "collision";
    case Outcome::timeout: return "timeout";
    case Outcome::failed: return "failed";
  }
  return "?";
}

struct TraceRow {
  double t = 0.0;
  VehicleState state;
  ControlCommand cmd;
  TrackingErrors errors;
  std::int64_t plan_id = -1;
};

struct SimResult {
  Outcome outcome = Outcome::timeout;
  std::string reason;
  double end_time = 0.0;
  double max_lateral_deviation = 0.0;
  std::vector<TraceRow> trace;
  std::vector<std::shared_ptr<const PlanHandle>> plans;
  /// Query time t_now - t_start at each plan's first use.
  std::vector<double> first_use_age;
  std::size_t torn_reads = 0;
};

// ---------------------------------------------------------------------------
// Road helpers

struct RoadTracker {
  const PathGeometry* road = nullptr;
  double s_from = -10.0;
  double step = 0.25;
  Route route;

  RoadTracker(const PathGeometry& r, double s_to) : road(&r) { route.points = r.sample(s_from, s_to, step); }

  double arclength(std::size_t index) const { return s_from + step * static_cast<double>(index); }

  /// Projects p onto the road within `window` points of `hint`; returns
  /// {arclength, signed offset}.
  std::pair<double, double> project(const Vec2& p, std::size_t hint, std::size_t window = 40) const {
    const std::size_t lo = hint > window ? hint - window : 0;
    double s = arclength(route.nearest(p, lo, hint + window));
    for (int it = 0; it < 3; ++it) {
      const auto pp = road->at(s);
      s += (p - pp.position).dot(Vec2(std::cos(pp.heading), std::sin(pp.heading)));
    }
    const auto pp = road->at(s);
    return {s, (p - pp.position).dot(Vec2(-std::sin(pp.heading), std::cos(pp.heading)))};
  }

  std::size_t index_of(double s) const {
    const double i = std::round((s - s_from) / step);
    return static_cast<std::size_t>(std::clamp(i, 0.0, static_cast<double>(route.points.size() - 1)));
  }
};

struct PlanRequest {
  double time = 0.0;
  VehicleState state;
  const SimScenario* scenario = nullptr;
  const RoadTracker* road = nullptr;
  double progress_s = 0.0;  // current arclength along the road
  /// Poses and times of the map window, oldest first.
  std::array<Pose2, kWindowFrames> window_poses;
  std::array<double, kWindowFrames> window_times{};
};

/// Potential-map window a planner would perceive for `req`.
inline std::vector<PotentialMap> render_request_window(const PlanRequest& req, const GenerationConfig& cfg) {
  std::vector<PotentialMap> out;
  const std::size_t hint = req.road->index_of(req.progress_s);
  for (int k = 0; k < kWindowFrames; ++k) {
    const Pose2& pose = req.window_poses[k];
    std::vector<Obstacle> obstacles;
    for (const auto& o : req.scenario->obstacles)
      if (o.active(req.window_times[k])) obstacles.push_back(o.shape);
    const auto [s, offset] = req.road->project(pose.position, hint);
    (void)offset;
    out.push_back(render_frame(req.road->route, req.road->index_of(s), pose, obstacles, cfg.grid, cfg.potential).map);
  }
  return out;
}

class Planner {
 public:
  virtual ~Planner() = default;
  /// Trajectory in the vehicle frame at the request's snapshot.
  virtual ContinuousTrajectory plan(const PlanRequest& req) = 0;
  virtual std::string name() const = 0;
};

/// Plans with the closed-form expert from the vehicle's current state: cruise
/// along the road, or stop before the nearest active obstacle ahead.
class OraclePlanner final : public Planner {
 public:
  explicit OraclePlanner(GenerationConfig cfg = {}) : cfg_(std::move(cfg)) {}

  ContinuousTrajectory plan(const PlanRequest& req) override {
    const auto& sc = *req.scenario;
    const auto [s0, offset] = req.road->project(req.state.pose().position, req.road->index_of(req.progress_s));
    const auto pp = sc.road.at(s0);
    ManeuverSpec spec;
    spec.family = ManeuverFamily::straight;
    spec.v0 = std::clamp(req.state.v, 0.0, kMaxSpeed);
    spec.target_speed = sc.cruise_speed;
    spec.jerk_limit = 1.5;
    spec.lateral_offset = offset;
    spec.heading_offset = wrap_angle(req.state.psi - pp.heading);
    double nearest = std::numeric_limits<double>::infinity();
    for (const auto& o : sc.obstacles) {
      if (!o.active(req.time)) continue;
      const double ahead = req.road->project(o.shape.center, 0, req.road->route.points.size()).first - s0;
      if (ahead > -1.0 && ahead < nearest) {
        nearest = ahead;
        spec.family = ManeuverFamily::stop;
        spec.obstacle = o.shape.center;
        spec.obstacle_radius = o.shape.radius;
      }
    }
    const ExpertMotion motion(spec, sc.road, s0, false, cfg_.safety, cfg_.grid, cfg_.potential);
    std::vector<FitSample> samples;
    for (int k = 0; k <= 60; ++k) {
      const auto s = motion.vehicle_frame_state(0.05 * k);
      samples.push_back({0.05 * k, s.position, s.velocity, s.acceleration});
    }
    return fit_trajectory(samples, fixed_dictionary(32, kHorizon));
  }

  std::string name() const override { return "oracle"; }

 private:
  GenerationConfig cfg_;
};

// ---------------------------------------------------------------------------
// Episode loop

namespace detail {

inline VehicleState initial_state(const SimScenario& sc, const InitialJitter& jitter, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double lateral = sc.start_offset + jitter.lateral * u(rng);
  const double heading = sc.start_heading_offset + jitter.heading * u(rng);
  const double speed = std::clamp(sc.start_speed + jitter.speed * u(rng), 0.0, kMaxSpeed);
  const auto p = sc.road.at(0.0);
  const Vec2 pos = p.position + lateral * Vec2(-std::sin(p.heading), std::cos(p.heading));
  return {pos.x(), pos.y(), wrap_angle(p.heading + heading), speed};
}

// Pose at `t` from tick history; before t = 0 the start state is rolled back
// at constant speed.
inline Pose2 pose_from_history(const std::vector<VehicleState>& history, double t, double dt) {
  if (t >= 0.0) {
    const auto i = static_cast<std::size_t>(std::llround(t / dt));
    return history[std::min(i, history.size() - 1)].pose();
  }
  const auto& s0 = history.front();
  return {{s0.x + s0.v * std::cos(s0.psi) * t, s0.y + s0.v * std::sin(s0.psi) * t}, s0.psi};
}

inline PlanRequest make_request(const SimScenario& sc, const RoadTracker& road, const std::vector<VehicleState>& history,
                                double t, double dt, double progress_s) {
  PlanRequest req;
  req.time = t;
  req.state = history.back();
  req.scenario = &sc;
  req.road = &road;
  req.progress_s = progress_s;
  for (int k = 0; k < kWindowFrames; ++k) {
    const double tk = t - kFrameDt * (kWindowFrames - 1 - k);
    req.window_times[k] = tk;
    req.window_poses[k] = pose_from_history(history, tk, dt);
  }
  return req;
}

struct Judge {
  const SimScenario& sc;
  const SimConfig& cfg;
  const RoadTracker& road;
  double progress_s = 0.0;

  // Returns an outcome when the episode ends at time t with state s.
  std::optional<std::pair<Outcome, std::string>> check(const VehicleState& s, double t, SimResult& res) {
    const Vec2 p = s.pose().position;
    const auto [along, offset] = road.project(p, road.index_of(progress_s));
    progress_s = along;
    res.max_lateral_deviation = std::max(res.max_lateral_deviation, std::abs(offset));
    for (const auto& o : sc.obstacles)
      if (o.active(t) && (p - o.shape.center).norm() <= o.shape.radius + cfg.vehicle_radius)
        return std::pair{Outcome::collision, std::string("hit obstacle")};
    if (std::abs(offset) > cfg.off_road_distance) return std::pair{Outcome::collision, std::string("left the road")};
    if ((p - sc.goal()).norm() <= cfg.goal_radius) return std::pair{Outcome::success, std::string()};
    return std::nullopt;
  }
};

}  // namespace detail

/// Simulated-time episode; bit-reproducible for a given (planner, scenario,
/// config, seed).
inline SimResult run_episode(Planner& planner, const SimScenario& sc, const SimConfig& cfg, std::uint64_t seed) {
  if (!(cfg.control_dt > 0.0) || !(cfg.plan_period > 0.0) || cfg.latency < 0.0) throw Error("bad simulator rates");
  const double dt = cfg.control_dt;
  const auto plan_every = std::max<std::int64_t>(1, std::llround(cfg.plan_period / dt));
  const auto latency_ticks = static_cast<std::int64_t>(std::ceil(cfg.latency / dt - 1e-9));
  const double budget = cfg.time_budget >= 0.0 ? cfg.time_budget : sc.time_budget;
  const auto budget_ticks = static_cast<std::int64_t>(std::ceil(budget / dt - 1e-9));

  const RoadTracker road(sc.road, sc.goal_s + kIntentionLength + 15.0);
  SimResult res;
  std::vector<VehicleState> history{detail::initial_state(sc, cfg.jitter, seed)};
  detail::Judge judge{sc, cfg, road};
  TrajectoryTracker tracker(cfg.gains, cfg.limits);
  std::deque<std::pair<std::int64_t, std::shared_ptr<const PlanHandle>>> pending;
  std::shared_ptr<const PlanHandle> active;
  bool fresh = false;

  for (std::int64_t n = 0;; ++n) {
    const double t = static_cast<double>(n) * dt;
    res.end_time = t;
    if (n >= budget_ticks) {
      res.outcome = Outcome::timeout;
      return res;
    }
    if (n % plan_every == 0) {
      auto h = std::make_shared<PlanHandle>();
      h->id = res.plans.size();
      h->anchor = history.back().pose();
      h->t_start = t;
      try {
        h->trajectory = planner.plan(detail::make_request(sc, road, history, t, dt, judge.progress_s));
      } catch (const Error& e) {
        res.outcome = Outcome::failed;
        res.reason = std::string("planner: ") + e.what();
        return res;
      }
      if (!h->trajectory.valid()) {
        res.outcome = Outcome::failed;
        res.reason = "planner produced non-finite trajectory";
        return res;
      }
      h->guard = ~h->id;
      res.plans.push_back(h);
      pending.emplace_back(n + latency_ticks, std::move(h));
    }
    while (!pending.empty() && pending.front().first <= n) {
      active = std::move(pending.front().second);
      pending.pop_front();
      fresh = true;
    }

    TraceRow row;
    row.t = t;
    row.state = history.back();
    if (active) {
      if (!active->intact()) ++res.torn_reads;
      const double age = t - active->t_start;
      if (fresh) {
        res.first_use_age.push_back(age);
        fresh = false;
      }
      const Pose2 local = active->anchor.to_local(row.state.pose());
      row.cmd = tracker.control(active->trajectory, age, local, row.state.v, &row.errors);
      row.plan_id = static_cast<std::int64_t>(active->id);
    }
    res.trace.push_back(row);

    const auto next = step_plant(row.state, row.cmd, dt, cfg.limits);
    history.push_back(next);
    if (auto end = judge.check(next, t + dt, res)) {
      res.outcome = end->first;
      res.reason = end->second;
      res.end_time = t + dt;
      return res;
    }
  }
}

// ---------------------------------------------------------------------------
// Realtime two-thread mode

/// Latest-plan slot shared by the planner and tracker threads. Only the
/// pointer swap is guarded; plans are immutable once published.
class PlanSlot {
 public:
  void publish(std::shared_ptr<const PlanHandle> h) {
    std::lock_guard lock(mu_);
    plan_ = std::move(h);
  }
  std::shared_ptr<const PlanHandle> latest() const {
    std::lock_guard lock(mu_);
    return plan_;
  }

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const PlanHandle> plan_;
};

/// Wall-clock episode with planner and tracker on separate threads. Not
/// reproducible; `speedup` > 1 runs faster than real time.
inline SimResult run_episode_realtime(Planner& planner, const SimScenario& sc, const SimConfig& cfg,
                                      std::uint64_t seed, double speedup = 1.0) {
  using clock = std::chrono::steady_clock;
  const double dt = cfg.control_dt;
  const double budget = cfg.time_budget >= 0.0 ? cfg.time_budget : sc.time_budget;
  const RoadTracker road(sc.road, sc.goal_s + kIntentionLength + 15.0);
  const auto t0 = clock::now();
  auto wall = [&](double sim_t) {
    return t0 + std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(sim_t / speedup));
  };

  PlanSlot slot;
  std::mutex history_mu;
  std::vector<VehicleState> history{detail::initial_state(sc, cfg.jitter, seed)};
  double progress_s = 0.0;
  std::atomic<bool> stop{false};
  std::string planner_error;
  std::vector<std::shared_ptr<const PlanHandle>> plans;

  std::thread planner_thread([&] {
    for (std::uint64_t k = 0; !stop.load(); ++k) {
      const double t = static_cast<double>(k) * cfg.plan_period;
      std::this_thread::sleep_until(wall(t));
      if (stop.load()) break;
      PlanRequest req;
      {
        std::lock_guard lock(history_mu);
        req = detail::make_request(sc, road, history, t, dt, progress_s);
      }
      auto h = std::make_shared<PlanHandle>();
      h->id = k;
      h->anchor = req.state.pose();
      h->t_start = t;
      try {
        h->trajectory = planner.plan(req);
      } catch (const Error& e) {
        planner_error = e.what();
        stop = true;
        break;
      }
      h->guard = ~h->id;
      std::this_thread::sleep_until(wall(t + cfg.latency));
      plans.push_back(h);
      slot.publish(std::move(h));
    }
  });

  SimResult res;
  detail::Judge judge{sc, cfg, road};
  TrajectoryTracker tracker(cfg.gains, cfg.limits);
  std::int64_t last_plan = -1;
  for (std::int64_t n = 0; !stop.load(); ++n) {
    const double t = static_cast<double>(n) * dt;
    res.end_time = t;
    if (t >= budget) {
      res.outcome = Outcome::timeout;
      break;
    }
    std::this_thread::sleep_until(wall(t));
    TraceRow row;
    row.t = t;
    {
      std::lock_guard lock(history_mu);
      row.state = history.back();
    }
    if (const auto plan = slot.latest()) {
      if (!plan->intact()) ++res.torn_reads;
      const double age = t - plan->t_start;
      if (static_cast<std::int64_t>(plan->id) != last_plan) {
        res.first_use_age.push_back(age);
        last_plan = static_cast<std::int64_t>(plan->id);
      }
      row.cmd = tracker.control(plan->trajectory, age, plan->anchor.to_local(row.state.pose()), row.state.v, &row.errors);
      row.plan_id = last_plan;
    }
    res.trace.push_back(row);
    const auto next = step_plant(row.state, row.cmd, dt, cfg.limits);
    const auto end = judge.check(next, t + dt, res);
    {
      std::lock_guard lock(history_mu);
      history.push_back(next);
      progress_s = judge.progress_s;
    }
    if (end) {
      res.outcome = end->first;
      res.reason = end->second;
      res.end_time = t + dt;
      break;
    }
  }
  stop = true;
  planner_thread.join();
  if (!planner_error.empty()) {
    res.outcome = Outcome::failed;
    res.reason = "planner: " + planner_error;
  }
  res.plans = std::move(plans);
  return res;
}

// ---------------------------------------------------------------------------
// Scenario suite and latency sweeps

/// The 30-scenario closed-loop suite: ten each of straight, turn and stop.
inline std::vector<SimScenario> standard_suite() {
  std::vector<SimScenario> out;
  for (int i = 0; i < 10; ++i) {
    SimScenario s;
    s.name = "straight_" + std::to_string(i);
    s.family = ManeuverFamily::straight;
    s.cruise_speed = 4.0 + 0.4 * i;
    s.start_speed = s.cruise_speed * (0.6 + 0.04 * i);
    s.start_offset = 0.4 * ((i % 3) - 1);
    s.goal_s = 45.0 + 2.0 * i;
    s.time_budget = s.goal_s / s.cruise_speed + 10.0;
    out.push_back(s);
  }
  for (int i = 0; i < 10; ++i) {
    SimScenario s;
    s.name = "turn_" + std::to_string(i);
    s.family = ManeuverFamily::turn;
    const double kappa = (i % 2 == 0 ? 1.0 : -1.0) * (0.06 + 0.01 * (i / 2));
    const double start = 8.0 + i;
    const double length = (kPi / 2.0) / std::abs(kappa);
    s.road = PathGeometry(kappa, start, length);
    s.cruise_speed = std::min(6.0, std::sqrt(2.0 / std::abs(kappa)));
    s.start_speed = s.cruise_speed;
    s.goal_s = start + length + 15.0;
    s.time_budget = s.goal_s / s.cruise_speed + 10.0;
    out.push_back(s);
  }
  for (int i = 0; i < 10; ++i) {
    SimScenario s;
    s.name = "stop_" + std::to_string(i);
    s.family = ManeuverFamily::stop;
    s.cruise_speed = 4.0 + 0.3 * i;
    s.start_speed = s.cruise_speed;
    const double obstacle_s = 18.0 + i;
    s.obstacles.push_back({{{obstacle_s, 0.0}, 0.5}, 4.0 + 0.3 * i});
    s.goal_s = obstacle_s + 15.0;
    s.time_budget = 30.0;
    out.push_back(s);
  }
  return out;
}

inline io::json scenario_to_json(const SimScenario& s) {
  io::json obstacles = io::json::array();
  for (const auto& o : s.obstacles)
    obstacles.push_back({{"x", o.shape.center.x()},
                         {"y", o.shape.center.y()},
                         {"radius", o.shape.radius},
                         {"clear_time", std::isfinite(o.clear_time) ? io::json(o.clear_time) : io::json(nullptr)}});
  return {{"name", s.name},
          {"family", to_string(s.family)},
          {"curvature", s.road.curvature()},
          {"turn_start", s.road.turn_start()},
          {"turn_length", std::isfinite(s.road.turn_length()) ? io::json(s.road.turn_length()) : io::json(nullptr)},
          {"start_offset", s.start_offset},
          {"start_heading_offset", s.start_heading_offset},
          {"start_speed", s.start_speed},
          {"cruise_speed", s.cruise_speed},
          {"goal_s", s.goal_s},
          {"time_budget", s.time_budget},
          {"obstacles", obstacles}};
}

inline SimScenario scenario_from_json(const io::json& j) {
  SimScenario s;
  s.name = io::get_field<std::string>(j, "name");
  s.family = maneuver_family_from_string(io::get_field<std::string>(j, "family"));
  const double kappa = io::get_field<double>(j, "curvature");
  if (std::abs(kappa) > kMaxCurvature) throw Error("bad value for field 'curvature'");
  const double len = j.contains("turn_length") && !j.at("turn_length").is_null()
                         ? io::get_field<double>(j, "turn_length")
                         : std::numeric_limits<double>::infinity();
  s.road = PathGeometry(kappa, io::get_field<double>(j, "turn_start"), len);
  s.start_offset = io::get_field<double>(j, "start_offset");
  s.start_heading_offset = io::get_field<double>(j, "start_heading_offset");
  s.start_speed = io::get_field<double>(j, "start_speed");
  s.cruise_speed = io::get_field<double>(j, "cruise_speed");
  s.goal_s = io::get_field<double>(j, "goal_s");
  s.time_budget = io::get_field<double>(j, "time_budget");
  for (const auto& o : io::get_field<io::json>(j, "obstacles")) {
    SimObstacle so;
    so.shape = {{io::get_field<double>(o, "x"), io::get_field<double>(o, "y")}, io::get_field<double>(o, "radius")};
    if (o.contains("clear_time") && !o.at("clear_time").is_null())
      so.clear_time = io::get_field<double>(o, "clear_time");
    s.obstacles.push_back(so);
  }
  return s;
}

struct LatencyRow {
  double latency = 0.0;
  std::size_t successes = 0;
  std::size_t runs = 0;

  double rate() const { return runs ? static_cast<double>(successes) / static_cast<double>(runs) : 0.0; }
};

inline std::vector<LatencyRow> sweep_latency(Planner& planner, std::span<const SimScenario> scenarios,
                                             std::span<const double> latencies, std::span<const std::uint64_t> seeds,
                                             SimConfig cfg = {},
                                             const std::function<void(const SimScenario&, double, std::uint64_t,
                                                                      const SimResult&)>& on_run = {}) {
  if (scenarios.empty() || latencies.empty() || seeds.empty()) throw Error("latency sweep needs non-empty sets");
  std::vector<LatencyRow> out;
  for (double latency : latencies) {
    cfg.latency = latency;
    LatencyRow row{latency, 0, 0};
    for (const auto& sc : scenarios)
      for (auto seed : seeds) {
        const auto r = run_episode(planner, sc, cfg, seed);
        row.successes += r.outcome == Outcome::success;
        ++row.runs;
        if (on_run) on_run(sc, latency, seed, r);
      }
    out.push_back(row);
  }
  return out;
}

/// Same table as sweep_latency, fanned out over `jobs` threads with one
/// planner per run from `make_planner`.
inline std::vector<LatencyRow> sweep_latency(const std::function<std::unique_ptr<Planner>()>& make_planner,
                                             std::span<const SimScenario> scenarios,
                                             std::span<const double> latencies, std::span<const std::uint64_t> seeds,
                                             const SimConfig& cfg, unsigned jobs) {
  if (scenarios.empty() || latencies.empty() || seeds.empty()) throw Error("latency sweep needs non-empty sets");
  const std::size_t per = scenarios.size() * seeds.size();
  std::vector<char> ok(latencies.size() * per, 0);
  parallel_for(ok.size(), jobs, [&](std::size_t i) {
    SimConfig c = cfg;
    c.latency = latencies[i / per];
    const auto& sc = scenarios[(i % per) / seeds.size()];
    auto planner = make_planner();
    ok[i] = run_episode(*planner, sc, c, seeds[i % seeds.size()]).outcome == Outcome::success;
  });
  std::vector<LatencyRow> out;
  for (std::size_t l = 0; l < latencies.size(); ++l) {
    LatencyRow row{latencies[l], 0, per};
    for (std::size_t k = 0; k < per; ++k) row.successes += ok[l * per + k] != 0;
    out.push_back(row);
  }
  return out;
}

inline std::string latency_csv(std::span<const LatencyRow> rows) {
  std::string out = "latency_ms,success_rate,successes,runs\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.0f,%.6f,%zu,%zu\n", r.latency * 1000.0, r.rate(), r.successes, r.runs);
    out += buf;
  }
  return out;
}

inline std::string trace_csv(const SimResult& r) {
  std::string out = "t,x,y,psi,v,throttle,brake,steering,e,theta_e,e_d,e_v,plan_id\n";
  char buf[512];
  for (const auto& row : r.trace) {
    std::snprintf(buf, sizeof buf, "%.4f,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%lld\n",
                  row.t, row.state.x, row.state.y, row.state.psi, row.state.v, row.cmd.throttle, row.cmd.brake,
                  row.cmd.steering, row.errors.e, row.errors.theta_e, row.errors.e_d, row.errors.e_v,
                  static_cast<long long>(row.plan_id));
    out += buf;
  }
  return out;
}

/// Outcome summary with every published plan, for replay.
inline io::json outcome_json(const SimScenario& sc, const SimResult& r, double latency, std::uint64_t seed) {
  io::json plans = io::json::array();
  for (const auto& p : r.plans)
    plans.push_back({{"id", p->id},
                     {"t_start", p->t_start},
                     {"anchor", {p->anchor.position.x(), p->anchor.position.y(), p->anchor.heading}},
                     {"trajectory", trajectory_to_json(p->trajectory)}});
  return {{"scenario", sc.name},
          {"outcome", to_string(r.outcome)},
          {"reason", r.reason},
          {"end_time", r.end_time},
          {"latency", latency},
          {"seed", seed},
          {"max_lateral_deviation", r.max_lateral_deviation},
          {"plans", plans}};
}

}  // namespace neurotraj
