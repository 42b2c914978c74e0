#pragma once

// Open-loop displacement and speed errors between a predicted trajectory and
// an expert label, matched by time.

#include "neurotraj/scenario.hpp"
#include "neurotraj/trajectory.hpp"

#include <span>
#include <string>
#include <vector>

namespace neurotraj {

struct MetricsReport {
  double E_ad = 0.0;  // average displacement, m
  double E_fd = 0.0;  // final displacement, m
  double E_x = 0.0;   // mean |longitudinal error|, m
  double E_y = 0.0;   // mean |lateral error|, m
  double E_v = 0.0;   // mean |speed error|, m/s
  std::size_t n_samples = 0;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

inline MetricsReport evaluate(const ContinuousTrajectory& traj, std::span<const TrajectorySample> label) {
  if (label.empty()) throw Error("cannot evaluate against an empty label");
  MetricsReport r;
  for (const auto& s : label) {
    const auto p = eval(traj, s.t);
    const Vec2 d = p.position - s.position;
    r.E_ad += d.norm();
    r.E_x += std::abs(d.x());
    r.E_y += std::abs(d.y());
    r.E_v += std::abs(p.speed() - s.speed);
  }
  const double n = static_cast<double>(label.size());
  r.E_ad /= n;
  r.E_x /= n;
  r.E_y /= n;
  r.E_v /= n;
  r.E_fd = (eval(traj, label.back().t).position - label.back().position).norm();
  r.n_samples = label.size();
  return r;
}

inline MetricsReport evaluate(const ContinuousTrajectory& traj, const Episode& ep) {
  return evaluate(traj, std::span<const TrajectorySample>(ep.label));
}

/// Sample-count-weighted mean of per-episode reports.
inline MetricsReport aggregate(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw Error("cannot aggregate zero reports");
  MetricsReport out;
  for (const auto& r : reports) {
    const double w = static_cast<double>(r.n_samples);
    out.E_ad += w * r.E_ad;
    out.E_fd += w * r.E_fd;
    out.E_x += w * r.E_x;
    out.E_y += w * r.E_y;
    out.E_v += w * r.E_v;
    out.n_samples += r.n_samples;
  }
  if (out.n_samples == 0) throw Error("cannot aggregate reports without samples");
  const double n = static_cast<double>(out.n_samples);
  out.E_ad /= n;
  out.E_fd /= n;
  out.E_x /= n;
  out.E_y /= n;
  out.E_v /= n;
  return out;
}

inline std::string metrics_csv_header() { return "episode,E_ad,E_fd,E_x,E_y,E_v,n_samples\n"; }

inline std::string metrics_csv_row(const std::string& name, const MetricsReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%.9g,%.9g,%.9g,%zu\n", name.c_str(), r.E_ad, r.E_fd, r.E_x, r.E_y,
                r.E_v, r.n_samples);
  return buf;
}

}  // namespace neurotraj
