#include "neurotraj/simulator.hpp"

#include <gtest/gtest.h>

using namespace neurotraj;

namespace {

SimScenario plain_straight() {
  SimScenario s;
  s.name = "plain";
  s.start_speed = s.cruise_speed = 5.0;
  s.goal_s = 40.0;
  s.time_budget = 20.0;
  return s;
}

SimConfig quiet() {
  SimConfig c;
  c.jitter = {0.0, 0.0, 0.0};
  return c;
}

// Tracks a fixed trajectory with the plant alone, returning lateral errors.
std::vector<std::pair<double, double>> track(const ContinuousTrajectory& traj, VehicleState s, double duration) {
  TrajectoryTracker tracker;
  std::vector<std::pair<double, double>> out;
  const double dt = 0.02;
  for (int n = 0; n * dt < duration; ++n) {
    TrackingErrors err;
    const auto cmd = tracker.control(traj, n * dt, s.pose(), s.v, &err);
    out.emplace_back(n * dt, err.e);
    s = step_plant(s, cmd, dt);
  }
  return out;
}

ContinuousTrajectory long_fit(const std::function<FitSample(double)>& f, double horizon) {
  std::vector<FitSample> samples;
  for (int k = 0; k <= 200; ++k) samples.push_back(f(horizon * k / 200.0));
  return fit_trajectory(samples, fixed_dictionary(32, horizon));
}

}  // namespace

TEST(StepPlant, Examples) {
  const VehicleState s{0.0, 0.0, 0.0, 1.0};
  const auto n = step_plant(s, {}, 0.1);
  EXPECT_DOUBLE_EQ(n.x, 0.1);
  EXPECT_EQ(n.y, 0.0);
  EXPECT_EQ(n.psi, 0.0);
  EXPECT_EQ(n.v, 1.0);

  const auto stopped = step_plant(VehicleState{}, ControlCommand{0.0, 1.0, 0.0}, 0.02);
  EXPECT_EQ(stopped.v, 0.0);
  EXPECT_THROW(step_plant(s, {}, 0.0), Error);
}

TEST(StepPlant, CircleClosesAfterOnePeriod) {
  const double v = 5.0, delta = 0.2, L = 2.6, dt = 0.02;
  const double omega = v * std::tan(delta) / L;
  const double period = 2 * kPi / omega;
  const int steps = static_cast<int>(std::round(period / dt));
  VehicleState s{0.0, 0.0, 0.0, v};
  for (int i = 0; i < steps; ++i) s = step_plant(s, {0.0, 0.0, delta}, dt);
  // Heading advances exactly omega*dt per step; the only error is rounding
  // the period to whole steps.
  EXPECT_NEAR(wrap_angle(s.psi), wrap_angle(omega * steps * dt), 1e-9);
  EXPECT_LT(std::abs(wrap_angle(s.psi)), omega * dt);
  // Euler position drift over one lap is O(v * dt) per unit angle.
  EXPECT_LT(std::hypot(s.x, s.y), v * dt * 2 * kPi);
}

TEST(ControllerConvergence, StraightFromOneMeterOffset) {
  const auto traj = long_fit([](double t) { return FitSample{t, {5.0 * t, 0.0}, {5.0, 0.0}, {0.0, 0.0}}; }, 12.0);
  const auto errs = track(traj, {0.0, 1.0, 0.0, 5.0}, 10.0);
  double worst_after_5 = 0.0, overshoot = 0.0;
  for (auto [t, e] : errs) {
    if (t >= 5.0) worst_after_5 = std::max(worst_after_5, std::abs(e));
    overshoot = std::max(overshoot, -e);
  }
  EXPECT_LT(worst_after_5, 0.1);
  EXPECT_LT(overshoot, 0.2);
}

TEST(ControllerConvergence, CircleSteadyState) {
  const double r = 10.0, v = 5.0, w = v / r;
  const auto traj = long_fit(
      [&](double t) {
        return FitSample{t,
                         {r * std::sin(w * t), r * (1 - std::cos(w * t))},
                         {v * std::cos(w * t), v * std::sin(w * t)},
                         {-v * w * std::sin(w * t), v * w * std::cos(w * t)}};
      },
      12.0);
  const auto errs = track(traj, {0.0, 0.0, 0.0, 5.0}, 10.0);
  double worst = 0.0;
  for (auto [t, e] : errs)
    if (t >= 3.0) worst = std::max(worst, std::abs(e));
  EXPECT_LT(worst, 0.15);
}

TEST(RunEpisode, OracleStraightSucceedsWithSmallDeviation) {
  OraclePlanner oracle;
  const auto r = run_episode(oracle, plain_straight(), quiet(), 1);
  EXPECT_EQ(r.outcome, Outcome::success) << r.reason;
  EXPECT_LT(r.max_lateral_deviation, 0.15);
  EXPECT_EQ(r.torn_reads, 0u);
}

TEST(RunEpisode, ZeroBudgetTimesOut) {
  OraclePlanner oracle;
  auto cfg = quiet();
  cfg.time_budget = 0.0;
  const auto r = run_episode(oracle, plain_straight(), cfg, 1);
  EXPECT_EQ(r.outcome, Outcome::timeout);
  EXPECT_TRUE(r.trace.empty());
}

TEST(RunEpisode, LatencyToleratedByOracleAndPlansAreStale) {
  OraclePlanner oracle;
  auto cfg = quiet();
  cfg.latency = 0.4;
  const auto r = run_episode(oracle, plain_straight(), cfg, 2);
  EXPECT_EQ(r.outcome, Outcome::success) << r.reason;
  ASSERT_FALSE(r.first_use_age.empty());
  for (double age : r.first_use_age) EXPECT_GE(age, 0.4 - 1e-9);
  // Nothing is tracked before the first plan arrives.
  for (const auto& row : r.trace)
    if (row.t < 0.4 - 1e-9) EXPECT_EQ(row.plan_id, -1);
}

TEST(RunEpisode, BitReproducible) {
  OraclePlanner oracle;
  auto cfg = SimConfig{};
  cfg.latency = 0.25;
  const auto sc = standard_suite()[12];
  const auto a = run_episode(oracle, sc, cfg, 9), b = run_episode(oracle, sc, cfg, 9);
  EXPECT_EQ(trace_csv(a), trace_csv(b));
  EXPECT_EQ(outcome_json(sc, a, 0.25, 9).dump(), outcome_json(sc, b, 0.25, 9).dump());
  const auto c = run_episode(oracle, sc, cfg, 10);
  EXPECT_NE(trace_csv(a), trace_csv(c));
}

TEST(RunEpisode, ObstacleCollisionIsDetected) {
  // A planner that ignores everything and drives straight at 5 m/s.
  struct Blind final : Planner {
    ContinuousTrajectory plan(const PlanRequest&) override {
      std::vector<FitSample> s;
      for (int k = 0; k <= 30; ++k) s.push_back({0.1 * k, {0.5 * k, 0.0}, {5.0, 0.0}, {0.0, 0.0}});
      return fit_trajectory(s, fixed_dictionary(16, 3.0));
    }
    std::string name() const override { return "blind"; }
  } blind;
  auto sc = plain_straight();
  sc.obstacles.push_back({{{15.0, 0.0}, 0.5}});
  const auto r = run_episode(blind, sc, quiet(), 0);
  EXPECT_EQ(r.outcome, Outcome::collision);
  EXPECT_EQ(r.reason, "hit obstacle");
}

TEST(RunEpisode, PlannerErrorMarksFailed) {
  struct Broken final : Planner {
    ContinuousTrajectory plan(const PlanRequest&) override { throw Error("intention path leaves the grid"); }
    std::string name() const override { return "broken"; }
  } broken;
  const auto r = run_episode(broken, plain_straight(), quiet(), 0);
  EXPECT_EQ(r.outcome, Outcome::failed);
  EXPECT_NE(r.reason.find("intention path"), std::string::npos);
}

TEST(RenderRequestWindow, MatchesGeometry) {
  const auto sc = standard_suite()[25];  // stop scenario
  RoadTracker road(sc.road, 80.0);
  std::vector<VehicleState> history{{0.0, 0.0, 0.0, 4.0}};
  const auto req = detail::make_request(sc, road, history, 0.0, 0.02, 0.0);
  const auto maps = render_request_window(req, {});
  ASSERT_EQ(maps.size(), 4u);
  // The obstacle sits on the centerline ahead; once it clears, only the goal
  // term remains there.
  auto later = req;
  later.window_times.fill(100.0);
  const auto clear = render_request_window(later, {});
  const auto cell = maps.back().spec.cell_of(sc.obstacles[0].shape.center);
  ASSERT_TRUE(cell.has_value());
  EXPECT_NEAR(clear.back().at(*cell) - maps.back().at(*cell), 1.0, 1e-9);
}

TEST(StandardSuite, OracleSucceedsEverywhereAtZeroLatency) {
  OraclePlanner oracle;
  const auto suite = standard_suite();
  ASSERT_EQ(suite.size(), 30u);
  for (const auto& sc : suite) {
    const auto r = run_episode(oracle, sc, SimConfig{}, 1);
    EXPECT_EQ(r.outcome, Outcome::success) << sc.name << ": " << to_string(r.outcome) << " " << r.reason;
  }
}

TEST(StandardSuite, ScenarioJsonRoundTrip) {
  for (const auto& sc : standard_suite()) {
    const auto back = scenario_from_json(io::json::parse(scenario_to_json(sc).dump()));
    EXPECT_EQ(scenario_to_json(back), scenario_to_json(sc));
  }
}

TEST(SweepLatency, OracleIsMonotoneSmoke) {
  OraclePlanner oracle;
  const auto suite = standard_suite();
  const std::vector<SimScenario> some{suite[0], suite[13], suite[27]};
  const std::vector<double> lat{0.0, 0.8};
  const std::vector<std::uint64_t> seeds{1, 2};
  const auto rows = sweep_latency(oracle, some, lat, seeds);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].rate(), 1.0);
  EXPECT_GE(rows[0].rate(), rows[1].rate());
  EXPECT_EQ(latency_csv(rows).substr(0, 35), "latency_ms,success_rate,successes,r");
  EXPECT_THROW(sweep_latency(oracle, std::span<const SimScenario>{}, lat, seeds), Error);
}

TEST(Realtime, TwoThreadsNoTornReads) {
  OraclePlanner oracle;
  auto cfg = quiet();
  cfg.latency = 0.1;
  cfg.time_budget = 3.0;
  const auto r = run_episode_realtime(oracle, plain_straight(), cfg, 0, 4.0);
  EXPECT_EQ(r.torn_reads, 0u);
  EXPECT_FALSE(r.plans.empty());
  for (double age : r.first_use_age) EXPECT_GE(age, 0.1 - 1e-9);
  EXPECT_NE(r.outcome, Outcome::failed) << r.reason;
}
