#pragma once

// Bird's-eye potential maps: goal attraction rasterized from an intention
// path, obstacle repulsion from occupied cells, and their signed composition.
//
// Grid convention: rows index the lateral axis (y), columns the longitudinal
// axis (x). Cell (r, c) covers
//   x in [origin.x + c * cell_size, origin.x + (c + 1) * cell_size)
//   y in [origin.y + r * cell_size, origin.y + (r + 1) * cell_size)
// and its representative point is the cell center.

#include "neurotraj/common.hpp"
#include "neurotraj/io.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace neurotraj {

struct CellIndex {
  int row = 0;
  int col = 0;
  friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

struct GridSpec {
  int rows = 64;
  int cols = 64;
  double cell_size = 0.5;
  /// Vehicle-frame coordinates of the outer corner of cell (0, 0).
  Vec2 origin{0.0, -16.0};

  friend bool operator==(const GridSpec& a, const GridSpec& b) {
    return a.rows == b.rows && a.cols == b.cols && a.cell_size == b.cell_size &&
           a.origin == b.origin;
  }

  double length_x() const { return cols * cell_size; }
  double length_y() const { return rows * cell_size; }
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }

  bool in_bounds(const CellIndex& c) const {
    return c.row >= 0 && c.row < rows && c.col >= 0 && c.col < cols;
  }
  bool contains(const Vec2& p) const {
    return p.x() >= origin.x() && p.x() < origin.x() + length_x() && p.y() >= origin.y() &&
           p.y() < origin.y() + length_y();
  }
  Vec2 center(const CellIndex& c) const {
    return {origin.x() + (c.col + 0.5) * cell_size, origin.y() + (c.row + 0.5) * cell_size};
  }
  /// Cell containing p; nullopt outside the grid.
  std::optional<CellIndex> cell_of(const Vec2& p) const {
    if (!contains(p)) return std::nullopt;
    CellIndex c{static_cast<int>(std::floor((p.y() - origin.y()) / cell_size)),
                static_cast<int>(std::floor((p.x() - origin.x()) / cell_size))};
    c.row = std::clamp(c.row, 0, rows - 1);
    c.col = std::clamp(c.col, 0, cols - 1);
    return c;
  }
  std::size_t flat(const CellIndex& c) const {
    return static_cast<std::size_t>(c.row) * cols + c.col;
  }
};

/// Parameters left open by the method description; fixed here, overridable.
struct PotentialConfig {
  double lane_half_width = 1.0;  // m, mask radius around the intention path
  double goal_sigma_cells = 2.0;
  double obstacle_sigma = 1.5;  // m
};

struct PotentialMap {
  GridSpec spec;
  std::vector<double> values;  // row-major, rows x cols

  PotentialMap() = default;
  explicit PotentialMap(const GridSpec& s, double fill = 0.0) : spec(s), values(s.size(), fill) {}

  double& at(int row, int col) { return values[static_cast<std::size_t>(row) * spec.cols + col]; }
  double at(int row, int col) const {
    return values[static_cast<std::size_t>(row) * spec.cols + col];
  }
  double at(const CellIndex& c) const { return at(c.row, c.col); }

  friend bool operator==(const PotentialMap&, const PotentialMap&) = default;
};

struct IntentionPath {
  std::vector<Vec2> points;

  double arclength() const {
    double s = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) s += (points[i] - points[i - 1]).norm();
    return s;
  }

  /// Inserts points so that consecutive spacing does not exceed max_spacing.
  static IntentionPath densified(std::span<const Vec2> polyline, double max_spacing) {
    IntentionPath out;
    if (polyline.empty()) return out;
    out.points.push_back(polyline.front());
    for (std::size_t i = 1; i < polyline.size(); ++i) {
      const Vec2 a = polyline[i - 1], b = polyline[i];
      const int pieces = std::max(1, static_cast<int>(std::ceil((b - a).norm() / max_spacing)));
      for (int k = 1; k <= pieces; ++k) out.points.push_back(a + (b - a) * (double(k) / pieces));
    }
    return out;
  }
};

namespace detail {

inline double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

inline std::vector<double> gaussian_kernel_1d(double sigma, int radius) {
  std::vector<double> k(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
  return k;
}

}  // namespace detail

/// Cells whose centers lie within `half_width` of the path polyline.
inline std::vector<std::uint8_t> rasterize_path(const IntentionPath& path, const GridSpec& spec,
                                                double half_width) {
  std::vector<std::uint8_t> mask(spec.size(), 0);
  const auto& pts = path.points;
  auto mark_segment = [&](const Vec2& a, const Vec2& b) {
    const double cs = spec.cell_size;
    const int c0 = std::max(0, int(std::floor((std::min(a.x(), b.x()) - half_width - spec.origin.x()) / cs)));
    const int c1 = std::min(spec.cols - 1, int(std::floor((std::max(a.x(), b.x()) + half_width - spec.origin.x()) / cs)));
    const int r0 = std::max(0, int(std::floor((std::min(a.y(), b.y()) - half_width - spec.origin.y()) / cs)));
    const int r1 = std::min(spec.rows - 1, int(std::floor((std::max(a.y(), b.y()) + half_width - spec.origin.y()) / cs)));
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        const CellIndex cell{r, c};
        if (detail::point_segment_distance(spec.center(cell), a, b) <= half_width)
          mask[spec.flat(cell)] = 1;
      }
  };
  if (pts.size() == 1) mark_segment(pts[0], pts[0]);
  for (std::size_t i = 1; i < pts.size(); ++i) mark_segment(pts[i - 1], pts[i]);
  return mask;
}

/// Goal-guided potential: the path's binary lane mask smoothed by a truncated
/// Gaussian (radius 3 sigma) and rescaled so the peak equals 1.
inline PotentialMap build_goal_potential(const IntentionPath& path, const GridSpec& spec,
                                         const PotentialConfig& cfg = {}) {
  if (path.points.empty()) throw Error("empty intention path");
  for (const auto& p : path.points)
    if (!spec.contains(p)) throw Error("intention path point out of grid bounds");

  const auto mask = rasterize_path(path, spec, cfg.lane_half_width);
  const int radius = static_cast<int>(std::ceil(3.0 * cfg.goal_sigma_cells));
  const auto kernel = detail::gaussian_kernel_1d(cfg.goal_sigma_cells, radius);

  // Separable smoothing with zero padding: along columns, then along rows.
  std::vector<double> tmp(spec.size(), 0.0);
  for (int r = 0; r < spec.rows; ++r)
    for (int c = 0; c < spec.cols; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const int cc = c + k;
        if (cc >= 0 && cc < spec.cols && mask[spec.flat({r, cc})]) acc += kernel[k + radius];
      }
      tmp[spec.flat({r, c})] = acc;
    }
  PotentialMap out(spec);
  for (int r = 0; r < spec.rows; ++r)
    for (int c = 0; c < spec.cols; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const int rr = r + k;
        if (rr >= 0 && rr < spec.rows) acc += kernel[k + radius] * tmp[spec.flat({rr, c})];
      }
      out.at(r, c) = acc;
    }
  const double peak = *std::max_element(out.values.begin(), out.values.end());
  if (peak > 0.0)
    for (auto& v : out.values) v = std::clamp(v / peak, 0.0, 1.0);
  return out;
}

inline PotentialMap build_obstacle_potential(std::span<const CellIndex> occupied,
                                             const GridSpec& spec,
                                             const PotentialConfig& cfg = {}) {
  PotentialMap out(spec);
  for (const auto& o : occupied)
    if (!spec.in_bounds(o))
      throw Error("obstacle cell (" + std::to_string(o.row) + ", " + std::to_string(o.col) +
                  ") out of grid bounds");
  if (occupied.empty()) return out;
  const double inv = 1.0 / (2.0 * cfg.obstacle_sigma * cfg.obstacle_sigma);
  for (int r = 0; r < spec.rows; ++r)
    for (int c = 0; c < spec.cols; ++c) {
      const Vec2 p = spec.center({r, c});
      double best = 0.0;
      for (const auto& o : occupied) best = std::max(best, std::exp(-(p - spec.center(o)).squaredNorm() * inv));
      out.at(r, c) = best;
    }
  return out;
}

/// Signed combination: clamp(goal - obstacle, -1, 1) per cell.
inline PotentialMap compose(const PotentialMap& goal, const PotentialMap& obstacle) {
  if (!(goal.spec == obstacle.spec)) throw Error("potential map grid spec mismatch");
  PotentialMap out(goal.spec);
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = std::clamp(goal.values[i] - obstacle.values[i], -1.0, 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline io::json grid_spec_to_json(const GridSpec& s) {
  return {{"rows", s.rows},
          {"cols", s.cols},
          {"cell_size", s.cell_size},
          {"origin", {s.origin.x(), s.origin.y()}}};
}

inline GridSpec grid_spec_from_json(const io::json& j) {
  GridSpec s;
  s.rows = io::get_field<int>(j, "rows");
  s.cols = io::get_field<int>(j, "cols");
  s.cell_size = io::get_field<double>(j, "cell_size");
  const auto o = io::get_field<std::vector<double>>(j, "origin");
  if (o.size() != 2) throw Error("bad value for field 'origin'");
  s.origin = {o[0], o[1]};
  if (s.rows <= 0 || s.cols <= 0 || !(s.cell_size > 0.0)) throw Error("bad grid dimensions");
  return s;
}

inline std::string encode_potential_map(const PotentialMap& map) {
  io::HeaderedBlob blob;
  blob.header = grid_spec_to_json(map.spec);
  blob.header["format"] = "neurotraj.potential_map";
  io::append_f64_le(blob.payload, map.values);
  return blob.encode();
}

inline PotentialMap decode_potential_map(std::string_view bytes) {
  const auto blob = io::HeaderedBlob::decode(bytes);
  PotentialMap map(grid_spec_from_json(blob.header));
  if (blob.payload.size() != map.values.size() * 8)
    throw Error("potential map payload truncated or oversized");
  io::read_f64_le(blob.payload, map.values);
  return map;
}

inline void write_potential_map(const io::fs::path& path, const PotentialMap& map) {
  io::write_file_atomic(path, encode_potential_map(map));
}

inline PotentialMap read_potential_map(const io::fs::path& path) {
  try {
    return decode_potential_map(io::read_file(path));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

/// Binary PGM, drawn as seen from above: forward (+x) up, left (+y) left.
/// Values map affinely from [-1, 1] to [0, 255].
inline std::string encode_pgm(const PotentialMap& map) {
  const int width = map.spec.rows, height = map.spec.cols;
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (int i = 0; i < height; ++i) {
    const int col = map.spec.cols - 1 - i;
    for (int j = 0; j < width; ++j) {
      const int row = map.spec.rows - 1 - j;
      const double v = std::clamp(map.at(row, col), -1.0, 1.0);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround((v + 1.0) * 127.5))));
    }
  }
  return out;
}

}  // namespace neurotraj
