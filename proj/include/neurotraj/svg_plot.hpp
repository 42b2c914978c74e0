#pragma once

// Minimal deterministic SVG line plots for predictions, latency sweeps and
// training logs.

#include "neurotraj/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace neurotraj::plot {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // source line of each row

  std::optional<std::size_t> find(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  }

  std::size_t column(const std::string& name) const {
    if (auto c = find(name)) return *c;
    throw Error("csv has no column '" + name + "'");
  }

  double number(std::size_t row, std::size_t col) const {
    const std::string& cell = rows[row][col];
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (cell.empty() || end != cell.c_str() + cell.size() || !std::isfinite(v))
      throw Error("line " + std::to_string(line_numbers[row]) + ": '" + cell + "' is not a finite number");
    return v;
  }
};

/// Plain comma-separated values without quoting; blank lines are skipped.
inline CsvTable parse_csv(std::string_view text) {
  CsvTable t;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      cells.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (t.header.empty()) {
      t.header = std::move(cells);
      continue;
    }
    if (cells.size() != t.header.size())
      throw Error("line " + std::to_string(line_no) + ": expected " + std::to_string(t.header.size()) +
                  " fields, got " + std::to_string(cells.size()));
    t.rows.push_back(std::move(cells));
    t.line_numbers.push_back(line_no);
  }
  if (t.header.empty()) throw Error("line 1: missing csv header");
  return t;
}

struct Series {
  std::string name;
  std::string color;
  std::vector<Vec2> points;
  double width = 2.0;
  bool markers = false;
};

struct Figure {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  bool equal_aspect = false;
  std::string background = "#ffffff";
  std::string foreground = "#222222";
  std::optional<std::pair<double, double>> y_range;
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s = buf;
  if (s == "-0.00") s = "0.00";
  return s;
}

inline std::string tick_label(double v, double step) {
  char buf[32];
  const int decimals = step >= 1.0 ? 0 : static_cast<int>(std::ceil(-std::log10(step) - 1e-9));
  std::snprintf(buf, sizeof buf, "%.*f", decimals, std::abs(v) < step * 1e-9 ? 0.0 : v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline double nice_step(double range) {
  const double raw = range / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0})
    if (raw <= m * mag * (1.0 + 1e-9)) return m * mag;
  return 10.0 * mag;
}

struct Axis {
  double lo, hi, step;
};

inline Axis nice_axis(double lo, double hi) {
  if (!(hi > lo)) {
    const double pad = std::max(std::abs(lo) * 0.1, 1.0);
    lo -= pad;
    hi += pad;
  }
  const double step = nice_step(hi - lo);
  return {std::floor(lo / step + 1e-9) * step, std::ceil(hi / step - 1e-9) * step, step};
}

}  // namespace detail

inline std::string render_svg(const Figure& fig) {
  constexpr double W = 640, H = 480, left = 70, right = 150, top = 40, bottom = 60;
  const double pw = W - left - right, ph = H - top - bottom;
  std::string out;
  auto add = [&](const std::string& s) { out += s; };
  add("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"480\" viewBox=\"0 0 640 480\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n");
  add("<rect width=\"640\" height=\"480\" fill=\"" + fig.background + "\"/>\n");
  add("<text x=\"" + detail::fmt(left + pw / 2) + "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\" fill=\"" +
      fig.foreground + "\">" + detail::escape(fig.title) + "</text>\n");

  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo, ylo = xlo, yhi = -xlo;
  for (const auto& s : fig.series)
    for (const auto& p : s.points) {
      xlo = std::min(xlo, p.x());
      xhi = std::max(xhi, p.x());
      ylo = std::min(ylo, p.y());
      yhi = std::max(yhi, p.y());
    }
  const bool empty = !std::isfinite(xlo);
  if (empty) {
    xlo = ylo = 0.0;
    xhi = yhi = 1.0;
  }
  if (fig.y_range) {
    ylo = std::min(ylo, fig.y_range->first);
    yhi = std::max(yhi, fig.y_range->second);
  }
  if (fig.equal_aspect && !empty) {
    // Grow the narrower span so one metre is the same length on both axes.
    const double sx = (xhi - xlo) / pw, sy = (yhi - ylo) / ph, s = std::max({sx, sy, 1e-9});
    const double cx = 0.5 * (xlo + xhi), cy = 0.5 * (ylo + yhi);
    xlo = cx - 0.5 * s * pw;
    xhi = cx + 0.5 * s * pw;
    ylo = cy - 0.5 * s * ph;
    yhi = cy + 0.5 * s * ph;
  }
  const auto ax = detail::nice_axis(xlo, xhi);
  const auto ay = detail::nice_axis(ylo, yhi);
  auto X = [&](double x) { return left + (x - ax.lo) / (ax.hi - ax.lo) * pw; };
  auto Y = [&](double y) { return top + ph - (y - ay.lo) / (ay.hi - ay.lo) * ph; };

  add("<rect x=\"" + detail::fmt(left) + "\" y=\"" + detail::fmt(top) + "\" width=\"" + detail::fmt(pw) +
      "\" height=\"" + detail::fmt(ph) + "\" fill=\"none\" stroke=\"" + fig.foreground + "\"/>\n");
  add("<g stroke=\"" + fig.foreground + "\" stroke-opacity=\"0.2\">\n");
  for (double v = ax.lo; v <= ax.hi + ax.step * 1e-6; v += ax.step)
    add("<line x1=\"" + detail::fmt(X(v)) + "\" y1=\"" + detail::fmt(top) + "\" x2=\"" + detail::fmt(X(v)) +
        "\" y2=\"" + detail::fmt(top + ph) + "\"/>\n");
  for (double v = ay.lo; v <= ay.hi + ay.step * 1e-6; v += ay.step)
    add("<line x1=\"" + detail::fmt(left) + "\" y1=\"" + detail::fmt(Y(v)) + "\" x2=\"" + detail::fmt(left + pw) +
        "\" y2=\"" + detail::fmt(Y(v)) + "\"/>\n");
  add("</g>\n<g fill=\"" + fig.foreground + "\">\n");
  for (double v = ax.lo; v <= ax.hi + ax.step * 1e-6; v += ax.step)
    add("<text x=\"" + detail::fmt(X(v)) + "\" y=\"" + detail::fmt(top + ph + 16) + "\" text-anchor=\"middle\">" +
        detail::tick_label(v, ax.step) + "</text>\n");
  for (double v = ay.lo; v <= ay.hi + ay.step * 1e-6; v += ay.step)
    add("<text x=\"" + detail::fmt(left - 6) + "\" y=\"" + detail::fmt(Y(v) + 4) + "\" text-anchor=\"end\">" +
        detail::tick_label(v, ay.step) + "</text>\n");
  add("<text x=\"" + detail::fmt(left + pw / 2) + "\" y=\"" + detail::fmt(H - 18) + "\" text-anchor=\"middle\">" +
      detail::escape(fig.x_label) + "</text>\n");
  add("<text transform=\"translate(18," + detail::fmt(top + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
      detail::escape(fig.y_label) + "</text>\n");
  add("</g>\n");

  if (empty) {
    add("<text x=\"" + detail::fmt(left + pw / 2) + "\" y=\"" + detail::fmt(top + ph / 2) +
        "\" text-anchor=\"middle\" font-size=\"16\" fill=\"" + fig.foreground + "\">no data</text>\n");
  }
  for (const auto& s : fig.series) {
    if (s.points.empty()) continue;
    std::string pts;
    for (const auto& p : s.points) pts += (pts.empty() ? "" : " ") + detail::fmt(X(p.x())) + "," + detail::fmt(Y(p.y()));
    add("<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"" + detail::fmt(s.width) +
        "\" points=\"" + pts + "\"/>\n");
    if (s.markers)
      for (const auto& p : s.points)
        add("<circle cx=\"" + detail::fmt(X(p.x())) + "\" cy=\"" + detail::fmt(Y(p.y())) + "\" r=\"3\" fill=\"" +
            s.color + "\"/>\n");
  }
  double ly = top + 10;
  for (const auto& s : fig.series) {
    const double lx = left + pw + 12;
    add("<line x1=\"" + detail::fmt(lx) + "\" y1=\"" + detail::fmt(ly) + "\" x2=\"" + detail::fmt(lx + 24) +
        "\" y2=\"" + detail::fmt(ly) + "\" stroke=\"" + s.color + "\" stroke-width=\"" + detail::fmt(s.width) + "\"/>\n");
    add("<text x=\"" + detail::fmt(lx + 30) + "\" y=\"" + detail::fmt(ly + 4) + "\" fill=\"" + fig.foreground + "\">" +
        detail::escape(s.name) + "</text>\n");
    ly += 20;
  }
  add("</svg>\n");
  return out;
}

enum class PlotKind { trajectory, latency_curve, training_curve };

inline PlotKind plot_kind_from_string(const std::string& s) {
  if (s == "trajectory") return PlotKind::trajectory;
  if (s == "latency-curve") return PlotKind::latency_curve;
  if (s == "training-curve") return PlotKind::training_curve;
  throw Error("unknown plot kind '" + s + "'");
}

/// Expects columns label_x, label_y, pred_x, pred_y and optionally `episode`.
/// Without `episode` selection the first episode in the file is drawn.
inline Figure trajectory_figure(const CsvTable& t, std::optional<std::string> episode = std::nullopt) {
  const auto lx = t.column("label_x"), ly = t.column("label_y"), px = t.column("pred_x"), py = t.column("pred_y");
  const auto ec = t.find("episode");
  if (ec && !episode && !t.rows.empty()) episode = t.rows.front()[*ec];
  Figure f;
  f.title = episode ? "Trajectory " + *episode : "Trajectory";
  f.x_label = "x [m]";
  f.y_label = "y [m]";
  f.equal_aspect = true;
  f.background = "#1e1e1e";
  f.foreground = "#dddddd";
  Series label{"ground truth", "#ffffff", {}, 2.5, false};
  Series pred{"prediction", "#ff7f0e", {}, 2.0, false};
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (ec && episode && t.rows[r][*ec] != *episode) continue;
    label.points.emplace_back(t.number(r, lx), t.number(r, ly));
    pred.points.emplace_back(t.number(r, px), t.number(r, py));
  }
  f.series = {std::move(label), std::move(pred)};
  return f;
}

/// Expects latency_ms and success_rate; rows are drawn in latency order.
inline Figure latency_figure(const CsvTable& t) {
  const auto lc = t.column("latency_ms"), sc = t.column("success_rate");
  Figure f;
  f.title = "Success rate under latency";
  f.x_label = "latency [ms]";
  f.y_label = "success rate";
  f.y_range = {0.0, 1.0};
  Series s{"success rate", "#1f77b4", {}, 2.0, true};
  for (std::size_t r = 0; r < t.rows.size(); ++r) s.points.emplace_back(t.number(r, lc), t.number(r, sc));
  std::stable_sort(s.points.begin(), s.points.end(), [](const Vec2& a, const Vec2& b) { return a.x() < b.x(); });
  f.series = {std::move(s)};
  return f;
}

/// Expects epoch, train_loss, val_loss.
inline Figure training_figure(const CsvTable& t) {
  const auto ec = t.column("epoch"), tc = t.column("train_loss"), vc = t.column("val_loss");
  Figure f;
  f.title = "Training curve";
  f.x_label = "epoch";
  f.y_label = "loss";
  Series tr{"train loss", "#1f77b4", {}, 2.0, false};
  Series va{"validation loss", "#d62728", {}, 2.0, false};
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    tr.points.emplace_back(t.number(r, ec), t.number(r, tc));
    va.points.emplace_back(t.number(r, ec), t.number(r, vc));
  }
  f.series = {std::move(tr), std::move(va)};
  return f;
}

inline std::string plot_csv(std::string_view csv, PlotKind kind, std::optional<std::string> episode = std::nullopt) {
  const auto table = parse_csv(csv);
  switch (kind) {
    case PlotKind::trajectory: return render_svg(trajectory_figure(table, std::move(episode)));
    case PlotKind::latency_curve: return render_svg(latency_figure(table));
    case PlotKind::training_curve: return render_svg(training_figure(table));
  }
  throw Error("unknown plot kind");
}

}  // namespace neurotraj::plot
