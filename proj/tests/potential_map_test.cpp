#include "neurotraj/potential_map.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace neurotraj;

namespace {

IntentionPath straight_centerline(const GridSpec& spec) {
  IntentionPath p;
  for (double x = 0.25; x < spec.length_x(); x += 0.5) p.points.push_back({x, 0.0});
  return p;
}

// Brute-force goal potential: per-cell polyline distance, direct 2-D
// convolution with the square-truncated Gaussian, peak normalization.
std::vector<double> brute_force_goal(const IntentionPath& path, const GridSpec& spec,
                                     double half_width, double sigma) {
  std::vector<double> mask(spec.size(), 0.0);
  for (int r = 0; r < spec.rows; ++r)
    for (int c = 0; c < spec.cols; ++c) {
      const Vec2 p = spec.center({r, c});
      double best = 1e300;
      for (std::size_t i = 0; i + 1 < path.points.size(); ++i) {
        const Vec2 a = path.points[i], b = path.points[i + 1];
        const double t = std::clamp((p - a).dot(b - a) / (b - a).squaredNorm(), 0.0, 1.0);
        best = std::min(best, (p - (a + t * (b - a))).norm());
      }
      mask[spec.flat({r, c})] = best <= half_width ? 1.0 : 0.0;
    }
  const int radius = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> out(spec.size(), 0.0);
  double peak = 0.0;
  for (int r = 0; r < spec.rows; ++r)
    for (int c = 0; c < spec.cols; ++c) {
      double acc = 0.0;
      for (int dr = -radius; dr <= radius; ++dr)
        for (int dc = -radius; dc <= radius; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= spec.rows || cc < 0 || cc >= spec.cols) continue;
          acc += mask[spec.flat({rr, cc})] * std::exp(-(dr * dr + dc * dc) / (2 * sigma * sigma));
        }
      out[spec.flat({r, c})] = acc;
      peak = std::max(peak, acc);
    }
  for (auto& v : out) v /= peak;
  return out;
}

}  // namespace

TEST(GridSpec, DefaultCoverage) {
  GridSpec spec;
  EXPECT_DOUBLE_EQ(spec.length_x(), 32.0);
  EXPECT_DOUBLE_EQ(spec.length_y(), 32.0);
  EXPECT_TRUE(spec.contains({0.0, -16.0}));
  EXPECT_FALSE(spec.contains({32.0, 0.0}));
  EXPECT_FALSE(spec.contains({-0.01, 0.0}));
  EXPECT_FALSE(spec.contains({5.0, 16.0}));
}

TEST(GridSpec, CellCenterRoundTripIsExact) {
  GridSpec spec;
  for (int r = 0; r < spec.rows; ++r)
    for (int c = 0; c < spec.cols; ++c) {
      const auto back = spec.cell_of(spec.center({r, c}));
      ASSERT_TRUE(back.has_value());
      ASSERT_EQ(*back, (CellIndex{r, c}));
    }
}

TEST(GoalPotential, StraightCenterlinePeaksOnCenterRowsAndDecays) {
  GridSpec spec;
  const auto map = build_goal_potential(straight_centerline(spec), spec);
  const double peak = *std::max_element(map.values.begin(), map.values.end());
  EXPECT_DOUBLE_EQ(peak, 1.0);
  for (int c = 8; c < spec.cols - 8; ++c) {
    EXPECT_DOUBLE_EQ(map.at(31, c), 1.0);
    EXPECT_DOUBLE_EQ(map.at(32, c), 1.0);
    // Mask covers rows 30..33; truncation radius is 6 cells beyond that.
    for (int r = 32; r < 39; ++r) EXPECT_GT(map.at(r, c), map.at(r + 1, c)) << r;
    for (int r = 40; r < spec.rows; ++r) EXPECT_EQ(map.at(r, c), 0.0);
    for (int d = 0; d < 20; ++d) EXPECT_DOUBLE_EQ(map.at(31 - d, c), map.at(32 + d, c));
  }
}

TEST(GoalPotential, SinglePointGivesRadialBump) {
  GridSpec spec;
  const CellIndex center{20, 30};
  IntentionPath path{{spec.center(center)}};
  const auto map = build_goal_potential(path, spec);
  EXPECT_DOUBLE_EQ(map.at(center), 1.0);
  // Half-width 1.0 m covers the 4-neighbours at 0.5 m and diagonals at 0.707 m,
  // plus cells at 1.0 m; the mask is symmetric so the bump is too.
  for (int d = 1; d < 6; ++d) {
    EXPECT_DOUBLE_EQ(map.at(center.row + d, center.col), map.at(center.row - d, center.col));
    EXPECT_DOUBLE_EQ(map.at(center.row, center.col + d), map.at(center.row, center.col - d));
    EXPECT_DOUBLE_EQ(map.at(center.row + d, center.col), map.at(center.row, center.col + d));
    EXPECT_LT(map.at(center.row + d, center.col), map.at(center.row + d - 1, center.col));
  }
}

TEST(GoalPotential, LShapeMatchesBruteForceConvolution) {
  GridSpec spec;
  const std::vector<Vec2> corners{{0.3, 0.1}, {14.2, 0.1}, {14.2, 9.7}};
  const auto path = IntentionPath::densified(corners, 0.5);
  const auto map = build_goal_potential(path, spec);
  const auto oracle = brute_force_goal(path, spec, 1.0, 2.0);
  for (std::size_t i = 0; i < oracle.size(); ++i) ASSERT_NEAR(map.values[i], oracle[i], 1e-12) << i;
}

TEST(GoalPotential, InvariantUnderResamplingThatKeepsMask) {
  GridSpec spec;
  const std::vector<Vec2> sparse{{0.3, 0.1}, {20.3, 3.1}};
  IntentionPath coarse{sparse};
  const auto fine = IntentionPath::densified(sparse, 0.25);
  ASSERT_EQ(rasterize_path(coarse, spec, 1.0), rasterize_path(fine, spec, 1.0));
  EXPECT_EQ(build_goal_potential(coarse, spec), build_goal_potential(fine, spec));
}

TEST(GoalPotential, Errors) {
  GridSpec spec;
  try {
    build_goal_potential(IntentionPath{}, spec);
    FAIL() << "expected error";
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "empty intention path");
  }
  EXPECT_THROW(build_goal_potential(IntentionPath{{{-1.0, 0.0}}}, spec), Error);
  EXPECT_THROW(build_goal_potential(IntentionPath{{{5.0, 20.0}}}, spec), Error);
}

TEST(ObstaclePotential, EmptyAndSingle) {
  GridSpec spec;
  const auto empty = build_obstacle_potential({}, spec);
  EXPECT_TRUE(std::all_of(empty.values.begin(), empty.values.end(), [](double v) { return v == 0.0; }));
  const std::vector<CellIndex> one{{10, 12}};
  const auto single = build_obstacle_potential(one, spec);
  EXPECT_DOUBLE_EQ(single.at(10, 12), 1.0);
  EXPECT_NEAR(single.at(10, 13), std::exp(-0.25 / (2 * 1.5 * 1.5)), 1e-15);
}

TEST(ObstaclePotential, TwoCellsIsPerCellMaxOfGaussians) {
  GridSpec spec;
  const std::vector<CellIndex> cells{{30, 20}, {34, 23}};
  const auto map = build_obstacle_potential(cells, spec);
  for (int r = 0; r < spec.rows; ++r)
    for (int c = 0; c < spec.cols; ++c) {
      const Vec2 p = spec.center({r, c});
      double expect = 0.0;
      for (const auto& o : cells) {
        const double d = (p - spec.center(o)).norm();
        expect = std::max(expect, std::exp(-d * d / (2 * 1.5 * 1.5)));
      }
      ASSERT_NEAR(map.at(r, c), expect, 1e-15);
    }
}

TEST(ObstaclePotential, OutOfBoundsCellIsError) {
  GridSpec spec;
  const std::vector<CellIndex> bad{{64, 0}};
  EXPECT_THROW(build_obstacle_potential(bad, spec), Error);
}

TEST(Compose, Examples) {
  GridSpec spec;
  const auto goal = build_goal_potential(straight_centerline(spec), spec);
  EXPECT_EQ(compose(goal, PotentialMap(spec)), goal);

  PotentialMap obstacle(spec);
  obstacle.at(3, 4) = 1.0;
  EXPECT_DOUBLE_EQ(compose(PotentialMap(spec), obstacle).at(3, 4), -1.0);

  PotentialMap g(spec), o(spec);
  g.at(1, 1) = 0.6;
  o.at(1, 1) = 0.9;
  EXPECT_NEAR(compose(g, o).at(1, 1), -0.3, 1e-15);

  GridSpec other = spec;
  other.cell_size = 0.25;
  EXPECT_THROW(compose(PotentialMap(spec), PotentialMap(other)), Error);
}

TEST(PotentialMapProperties, RandomInputsStayInBoundsAndComposeIsMonotone) {
  GridSpec spec;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ux(0.0, 31.9), uy(-15.9, 15.9);
  std::uniform_int_distribution<int> cell(0, 63), count(0, 6);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<Vec2> corners;
    for (int i = 0; i < 3; ++i) corners.push_back({ux(rng), uy(rng)});
    const auto goal = build_goal_potential(IntentionPath::densified(corners, 0.5), spec);
    std::vector<CellIndex> occ;
    for (int i = count(rng); i > 0; --i) occ.push_back({cell(rng), cell(rng)});
    const auto obst = build_obstacle_potential(occ, spec);
    const auto c = compose(goal, obst);
    for (std::size_t i = 0; i < spec.size(); ++i) {
      ASSERT_GE(goal.values[i], 0.0);
      ASSERT_LE(goal.values[i], 1.0);
      ASSERT_GE(obst.values[i], 0.0);
      ASSERT_LE(obst.values[i], 1.0);
      ASSERT_GE(c.values[i], -1.0);
      ASSERT_LE(c.values[i], 1.0);
    }
    auto bumped = goal;
    const std::size_t k = static_cast<std::size_t>(cell(rng)) * 64 + cell(rng);
    bumped.values[k] += 0.3;
    ASSERT_GE(compose(bumped, obst).values[k], c.values[k]);
  }
}

TEST(PotentialMapIo, RoundTripAndTruncation) {
  GridSpec spec;
  const auto map = compose(build_goal_potential(straight_centerline(spec), spec),
                           build_obstacle_potential(std::vector<CellIndex>{{32, 20}}, spec));
  const auto bytes = encode_potential_map(map);
  EXPECT_EQ(decode_potential_map(bytes), map);
  EXPECT_THROW(decode_potential_map(bytes.substr(0, bytes.size() - 5)), Error);
  EXPECT_THROW(decode_potential_map("{\"rows\": 2}\n"), Error);

  const auto pgm = encode_pgm(map);
  EXPECT_EQ(pgm.rfind("P5\n64 64\n255\n", 0), 0u);
  EXPECT_EQ(pgm.size(), std::string("P5\n64 64\n255\n").size() + 64 * 64);
}
