#pragma once

// Continuous trajectory as a linear combination of sinusoidal basis functions
// of normalized time tau = t / T:
//
//   p_a(t)  =  sum_i w_i^a cos(omega_i tau + phi_i) + b^a
//   v_a(t)  = -(1/T)   sum_i w_i^a omega_i   sin(omega_i tau + phi_i)
//   a_a(t)  = -(1/T^2) sum_i w_i^a omega_i^2 cos(omega_i tau + phi_i)
//
// for a in {x, y}. Frequencies and phases are shared by both axes. The
// derivatives are exact; nothing here differentiates numerically.

#include "neurotraj/common.hpp"
#include "neurotraj/io.hpp"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace neurotraj {

/// Activation used as the basis. `leaky_relu` exists for the ablation that
/// swaps the sinusoid out; its second derivative is identically zero.
enum class BasisKind { cosine, leaky_relu };

inline constexpr double kBasisLeakySlope = 0.2;

struct KinematicState {
  Vec2 position{0.0, 0.0};
  Vec2 velocity{0.0, 0.0};
  Vec2 acceleration{0.0, 0.0};
  /// Set when t fell outside [0, T].
  bool extrapolated = false;

  double speed() const { return velocity.norm(); }
};

struct ContinuousTrajectory {
  double horizon = 3.0;  // T, seconds
  BasisKind basis = BasisKind::cosine;
  std::vector<double> omega;  // rad per unit normalized time
  std::vector<double> phase;
  std::vector<double> wx, wy;
  double bx = 0.0, by = 0.0;

  ContinuousTrajectory() = default;
  explicit ContinuousTrajectory(std::size_t m, double t_horizon = 3.0,
                                BasisKind kind = BasisKind::cosine)
      : horizon(t_horizon), basis(kind), omega(m, 0.0), phase(m, 0.0), wx(m, 0.0), wy(m, 0.0) {}

  std::size_t size() const { return omega.size(); }

  bool valid() const {
    auto finite = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    const std::size_t m = omega.size();
    return horizon > 0.0 && std::isfinite(horizon) && phase.size() == m && wx.size() == m &&
           wy.size() == m && finite(omega) && finite(phase) && finite(wx) && finite(wy) &&
           std::isfinite(bx) && std::isfinite(by);
  }

  friend bool operator==(const ContinuousTrajectory&, const ContinuousTrajectory&) = default;
};

namespace detail {

/// f(z), f'(z), f''(z) for the basis activation.
struct BasisValues {
  double f, df, d2f;
};

inline BasisValues basis_values(BasisKind kind, double z) {
  if (kind == BasisKind::cosine) {
    const double c = std::cos(z), s = std::sin(z);
    return {c, -s, -c};
  }
  return z > 0.0 ? BasisValues{z, 1.0, 0.0} : BasisValues{kBasisLeakySlope * z, kBasisLeakySlope, 0.0};
}

}  // namespace detail

inline KinematicState eval(const ContinuousTrajectory& traj, double t) {
  const double inv_t = 1.0 / traj.horizon;
  const double tau = t * inv_t;
  KinematicState s;
  s.extrapolated = t < 0.0 || t > traj.horizon;
  double px = traj.bx, py = traj.by, vx = 0.0, vy = 0.0, ax = 0.0, ay = 0.0;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const double w = traj.omega[i];
    const auto f = detail::basis_values(traj.basis, w * tau + traj.phase[i]);
    px += traj.wx[i] * f.f;
    py += traj.wy[i] * f.f;
    vx += traj.wx[i] * w * f.df;
    vy += traj.wy[i] * w * f.df;
    ax += traj.wx[i] * w * w * f.d2f;
    ay += traj.wy[i] * w * w * f.d2f;
  }
  s.position = {px, py};
  s.velocity = Vec2{vx, vy} * inv_t;
  s.acceleration = Vec2{ax, ay} * (inv_t * inv_t);
  return s;
}

inline std::vector<KinematicState> eval_batch(const ContinuousTrajectory& traj,
                                              std::span<const double> times) {
  std::vector<KinematicState> out;
  out.reserve(times.size());
  for (double t : times) out.push_back(eval(traj, t));
  return out;
}

/// Signed curvature from the analytic first and second derivatives.
inline double curvature(const KinematicState& s) {
  const double speed2 = s.velocity.squaredNorm();
  if (speed2 < kMinSpeed * kMinSpeed) throw Error("curvature undefined at near-zero speed");
  const Vec2& d1 = s.velocity;
  const Vec2& d2 = s.acceleration;
  return (d1.x() * d2.y() - d1.y() * d2.x()) / std::pow(speed2, 1.5);
}

inline double curvature(const ContinuousTrajectory& traj, double t) {
  return curvature(eval(traj, t));
}

/// Gradient of a scalar with respect to every trajectory coefficient.
struct TrajectoryGrad {
  std::vector<double> omega, phase, wx, wy;
  double bx = 0.0, by = 0.0;

  explicit TrajectoryGrad(std::size_t m = 0) : omega(m, 0.0), phase(m, 0.0), wx(m, 0.0), wy(m, 0.0) {}

  bool all_zero() const {
    auto z = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
    };
    return z(omega) && z(phase) && z(wx) && z(wy) && bx == 0.0 && by == 0.0;
  }
};

/// Upstream gradient of some scalar w.r.t. the evaluated kinematic state.
struct KinematicGrad {
  Vec2 position{0.0, 0.0};
  Vec2 velocity{0.0, 0.0};
  Vec2 acceleration{0.0, 0.0};
};

/// Chain rule through eval() at time t; accumulates into `grad`.
inline void backward_through_eval(const ContinuousTrajectory& traj, double t,
                                  const KinematicGrad& up, TrajectoryGrad& grad) {
  const double inv_t = 1.0 / traj.horizon;
  const double inv_t2 = inv_t * inv_t;
  const double tau = t * inv_t;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const double w = traj.omega[i];
    const auto f = detail::basis_values(traj.basis, w * tau + traj.phase[i]);
    // f''' is needed for d(acceleration)/dz; for cos it is sin(z) = -f'.
    const double d3f = traj.basis == BasisKind::cosine ? -f.df : 0.0;
    const double gpx = up.position.x(), gpy = up.position.y();
    const double gvx = up.velocity.x() * inv_t, gvy = up.velocity.y() * inv_t;
    const double gax = up.acceleration.x() * inv_t2, gay = up.acceleration.y() * inv_t2;

    grad.wx[i] += gpx * f.f + gvx * w * f.df + gax * w * w * f.d2f;
    grad.wy[i] += gpy * f.f + gvy * w * f.df + gay * w * w * f.d2f;

    const double sum_p = gpx * traj.wx[i] + gpy * traj.wy[i];
    const double sum_v = gvx * traj.wx[i] + gvy * traj.wy[i];
    const double sum_a = gax * traj.wx[i] + gay * traj.wy[i];
    const double dz = sum_p * f.df + sum_v * w * f.d2f + sum_a * w * w * d3f;
    const double domega_explicit = sum_v * f.df + sum_a * 2.0 * w * f.d2f;

    grad.omega[i] += domega_explicit + dz * tau;
    grad.phase[i] += dz;
  }
  grad.bx += up.position.x();
  grad.by += up.position.y();
}

// ---------------------------------------------------------------------------
// Least-squares fitting with a fixed frequency/phase dictionary. Used by the
// scripted expert planner and by tests that need a trajectory matching known
// geometry.

struct FitSample {
  double t = 0.0;
  Vec2 position{0.0, 0.0};
  Vec2 velocity{0.0, 0.0};
  Vec2 acceleration{0.0, 0.0};
};

struct FitWeights {
  double position = 1.0;
  double velocity = 0.5;
  double acceleration = 0.1;
  double ridge = 1e-9;
};

/// Frequencies 0.5, 1.0, ... paired with phases 0 and -pi/2 (cos and sin).
inline ContinuousTrajectory fixed_dictionary(std::size_t m, double horizon) {
  ContinuousTrajectory traj(m, horizon);
  for (std::size_t i = 0; i < m; ++i) {
    traj.omega[i] = 0.5 * static_cast<double>(i / 2 + 1);
    traj.phase[i] = (i % 2 == 0) ? 0.0 : -kPi / 2.0;
  }
  return traj;
}

/// Fits weights and biases of `dictionary` (frequencies and phases kept) to
/// samples by regularized linear least squares.
inline ContinuousTrajectory fit_trajectory(std::span<const FitSample> samples,
                                           ContinuousTrajectory dictionary,
                                           const FitWeights& wts = {}) {
  require(!samples.empty(), "fit_trajectory needs samples");
  const std::size_t m = dictionary.size();
  const Eigen::Index n_cols = static_cast<Eigen::Index>(m) + 1;
  const Eigen::Index n_rows = static_cast<Eigen::Index>(samples.size()) * 3;
  Eigen::MatrixXd design = Eigen::MatrixXd::Zero(n_rows, n_cols);
  Eigen::MatrixXd target(n_rows, 2);
  const double inv_t = 1.0 / dictionary.horizon;
  const double sp = std::sqrt(wts.position), sv = std::sqrt(wts.velocity), sa = std::sqrt(wts.acceleration);
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto& smp = samples[k];
    const double tau = smp.t * inv_t;
    const Eigen::Index r = static_cast<Eigen::Index>(3 * k);
    for (std::size_t i = 0; i < m; ++i) {
      const double w = dictionary.omega[i];
      const auto f = detail::basis_values(dictionary.basis, w * tau + dictionary.phase[i]);
      const auto c = static_cast<Eigen::Index>(i);
      design(r, c) = sp * f.f;
      design(r + 1, c) = sv * w * f.df * inv_t;
      design(r + 2, c) = sa * w * w * f.d2f * inv_t * inv_t;
    }
    design(r, n_cols - 1) = sp;
    target.row(r) << sp * smp.position.x(), sp * smp.position.y();
    target.row(r + 1) << sv * smp.velocity.x(), sv * smp.velocity.y();
    target.row(r + 2) << sa * smp.acceleration.x(), sa * smp.acceleration.y();
  }
  Eigen::MatrixXd normal = design.transpose() * design;
  normal.diagonal().array() += wts.ridge;
  const Eigen::MatrixXd sol = normal.ldlt().solve(design.transpose() * target);
  for (std::size_t i = 0; i < m; ++i) {
    dictionary.wx[i] = sol(static_cast<Eigen::Index>(i), 0);
    dictionary.wy[i] = sol(static_cast<Eigen::Index>(i), 1);
  }
  dictionary.bx = sol(n_cols - 1, 0);
  dictionary.by = sol(n_cols - 1, 1);
  return dictionary;
}

// ---------------------------------------------------------------------------
// Serialization

inline io::json trajectory_to_json(const ContinuousTrajectory& t) {
  return {{"horizon", t.horizon},
          {"basis", t.basis == BasisKind::cosine ? "cos" : "leaky_relu"},
          {"M", t.size()},
          {"omega", t.omega},
          {"phase", t.phase},
          {"wx", t.wx},
          {"wy", t.wy},
          {"bx", t.bx},
          {"by", t.by}};
}

inline ContinuousTrajectory trajectory_from_json(const io::json& j) {
  ContinuousTrajectory t;
  t.horizon = io::get_field<double>(j, "horizon");
  const auto basis = io::get_field<std::string>(j, "basis");
  if (basis == "cos") t.basis = BasisKind::cosine;
  else if (basis == "leaky_relu") t.basis = BasisKind::leaky_relu;
  else throw Error("bad value for field 'basis'");
  const auto m = io::get_field<std::size_t>(j, "M");
  t.omega = io::get_field<std::vector<double>>(j, "omega");
  t.phase = io::get_field<std::vector<double>>(j, "phase");
  t.wx = io::get_field<std::vector<double>>(j, "wx");
  t.wy = io::get_field<std::vector<double>>(j, "wy");
  t.bx = io::get_field<double>(j, "bx");
  t.by = io::get_field<double>(j, "by");
  if (t.omega.size() != m || !t.valid()) throw Error("inconsistent trajectory coefficients");
  return t;
}

}  // namespace neurotraj
