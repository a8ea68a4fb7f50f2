#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <vector>

#include "ablab/rng.hpp"

namespace ablab {

/// Square pump pulse with linear rise/fall ramps, optionally repeating.
/// gamma(t) = 0 before t_on; ramps up over tau_rf; holds gamma_peak; ramps
/// down so that the pulse ends at t_on + tau_pulse.
struct DriveSchedule {
  double gamma_peak = 0.0;
  double t_on = 0.0;
  double tau_pulse = std::numeric_limits<double>::infinity();
  double tau_rf = 0.0;
  double pulse_period = 0.0;  // 0 = single pulse; otherwise R_p^-1

  static DriveSchedule constant(double gamma, double t_on = 0.0) {
    DriveSchedule d;
    d.gamma_peak = gamma;
    d.t_on = t_on;
    return d;
  }

  double operator()(double t) const;
  void validate() const;
};

/// Piecewise-constant function of time (analyzer settings).
struct PiecewiseConstant {
  double initial = 0.0;
  std::vector<std::pair<double, double>> steps;  // (time, new value), sorted

  static PiecewiseConstant constant(double v) { return {v, {}}; }
  double operator()(double t) const {
    double v = initial;
    for (const auto& [ts, val] : steps) {
      if (t < ts) break;
      v = val;
    }
    return v;
  }
};

struct SettingSchedule {
  PiecewiseConstant a = PiecewiseConstant::constant(0.0);
  PiecewiseConstant b = PiecewiseConstant::constant(0.0);
};

/// One integrated hidden-angle time series on the uniform grid t_k = k*h,
/// h = tau / n_substeps, covering [0, duration]. samples[0..N] hold the
/// random history; target_samples and gamma_samples record the inputs seen
/// at each grid node (for diagnostics and CSV export).
struct Trajectory {
  double tau = 0.0;
  int n_substeps = 0;
  double grid_step = 0.0;
  Eigen::ArrayXd samples;
  Eigen::ArrayXd target_samples;
  Eigen::ArrayXd gamma_samples;
  bool divergence_flag = false;
  std::uint64_t history_seed = 0;

  double time_of(Eigen::Index k) const { return static_cast<double>(k) * grid_step; }
  Eigen::Index size() const { return samples.size(); }
};

enum class Regime { Monotonic, Critical, DampedOscillatory, Divergent };

/// Deviation (in rad, unwrapped) beyond which a trajectory is flagged divergent.
inline constexpr double kDivergenceBound = 1.0e3;

/// Forward-Euler integration of the delayed-reaction equation
///   d alpha/dt = -gamma(t - tau) * [alpha(t - tau) - target(t - tau/2)]
/// by the method of steps. history must hold exactly n_substeps+1 samples
/// covering [0, tau]; n_substeps must be even (so tau/2 lands on the grid)
/// and >= 2. Delayed reads are exact grid lookups, no interpolation.
Trajectory integrate(double tau, int n_substeps, const DriveSchedule& drive,
                     const PiecewiseConstant& target, const Eigen::ArrayXd& history,
                     double duration);

/// Constant-coefficient regime classification from the product gamma*tau.
Regime classify_regime(double gamma_tau);

/// Times (t >= tau) where wrap(alpha(t) - target) changes sign, linearly
/// interpolated between grid nodes.
std::vector<double> crossing_times(const Trajectory& traj, double target);

/// First time the wrapped deviation from the local target drops to
/// (1 - fraction) of its t = tau value and stays there for at least tau.
std::optional<double> settle_time(const Trajectory& traj, double fraction);

/// History of n_substeps+1 iid draws, uniform over the full circle centered
/// on the given angle: (center - pi, center + pi]. Centering picks the
/// unwrapped representative symmetric about the target, which is what makes
/// the pre-reaction stage drift-free for any target.
Eigen::ArrayXd random_history(Rng& rng, int n_substeps, double center);

/// CSV export: header comments (tau, N, seed), then t, alpha[, beta], gamma_t.
void write_trajectory_csv(std::ostream& os, const Trajectory& alpha,
                          const Trajectory* beta = nullptr);

}  // namespace ablab
