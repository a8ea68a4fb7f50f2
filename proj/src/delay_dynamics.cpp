#include "ablab/delay_dynamics.hpp"

#include <cmath>
#include <stdexcept>

#include "ablab/angle.hpp"

namespace ablab {

void DriveSchedule::validate() const {
  if (gamma_peak < 0.0) throw std::invalid_argument("gamma_peak must be >= 0");
  if (tau_pulse <= 0.0) throw std::invalid_argument("tau_pulse must be > 0");
  if (tau_rf < 0.0) throw std::invalid_argument("tau_rf must be >= 0");
  if (std::isfinite(tau_pulse) && tau_rf > 0.5 * tau_pulse)
    throw std::invalid_argument("tau_rf must be <= tau_pulse / 2");
  if (pulse_period < 0.0) throw std::invalid_argument("pulse_period must be >= 0");
  if (pulse_period > 0.0 && (!std::isfinite(tau_pulse) || tau_pulse > pulse_period))
    throw std::invalid_argument("tau_pulse must be <= pulse_period when repeating");
}

double DriveSchedule::operator()(double t) const {
  double u = t - t_on;
  if (pulse_period > 0.0 && u >= 0.0) u = std::fmod(u, pulse_period);
  if (u < 0.0) return 0.0;
  if (!std::isfinite(tau_pulse)) {
    if (tau_rf > 0.0 && u < tau_rf) return gamma_peak * (u / tau_rf);
    return gamma_peak;
  }
  if (u >= tau_pulse) return 0.0;
  if (tau_rf > 0.0) {
    if (u < tau_rf) return gamma_peak * (u / tau_rf);
    if (u > tau_pulse - tau_rf) return gamma_peak * ((tau_pulse - u) / tau_rf);
  }
  return gamma_peak;
}

Trajectory integrate(double tau, int n_substeps, const DriveSchedule& drive,
                     const PiecewiseConstant& target, const Eigen::ArrayXd& history,
                     double duration) {
  if (tau <= 0.0) throw std::invalid_argument("tau must be > 0");
  if (n_substeps < 2 || n_substeps % 2 != 0)
    throw std::invalid_argument("n_substeps must be even and >= 2");
  if (history.size() != n_substeps + 1)
    throw std::invalid_argument("history must hold n_substeps + 1 samples");
  if (duration < tau) throw std::invalid_argument("duration must be >= tau");
  drive.validate();

  const int n = n_substeps;
  const double h = tau / n;
  const auto total = static_cast<Eigen::Index>(std::llround(duration / h));

  Trajectory traj;
  traj.tau = tau;
  traj.n_substeps = n;
  traj.grid_step = h;
  traj.samples.resize(total + 1);
  traj.target_samples.resize(total + 1);
  traj.gamma_samples.resize(total + 1);
  traj.samples.head(n + 1) = history;

  for (Eigen::Index k = 0; k <= total; ++k) {
    const double t = static_cast<double>(k) * h;
    traj.target_samples[k] = target(t);
    traj.gamma_samples[k] = drive(t);
  }

  const int half = n / 2;
  for (Eigen::Index k = n; k < total; ++k) {
    const double g = traj.gamma_samples[k - n];                 // gamma(t - tau)
    const double a_mid = traj.target_samples[k - half];         // target(t - tau/2)
    const double force = traj.samples[k - n] - a_mid;           // unwrapped mismatch
    traj.samples[k + 1] = traj.samples[k] - h * g * force;
    if (!std::isfinite(traj.samples[k + 1]) ||
        std::abs(traj.samples[k + 1] - traj.target_samples[k + 1]) > kDivergenceBound) {
      traj.divergence_flag = true;
      // Fill the rest with the last finite value so exports stay well formed.
      double last = std::isfinite(traj.samples[k + 1]) ? traj.samples[k + 1]
                                                       : traj.samples[k];
      traj.samples.tail(total - k).setConstant(last);
      break;
    }
  }
  return traj;
}

Regime classify_regime(double gamma_tau) {
  if (gamma_tau < 0.0) throw std::invalid_argument("gamma*tau must be >= 0");
  constexpr double tol = 1.0e-9;
  const double critical = 1.0 / std::exp(1.0);
  const double divergent = 0.5 * kPi;
  if (std::abs(gamma_tau - critical) <= tol) return Regime::Critical;
  if (gamma_tau < critical) return Regime::Monotonic;
  if (gamma_tau >= divergent) return Regime::Divergent;
  return Regime::DampedOscillatory;
}

std::vector<double> crossing_times(const Trajectory& traj, double target) {
  std::vector<double> out;
  const Eigen::Index start = traj.n_substeps;  // t = tau
  double prev = wrap_pi(traj.samples[start] - target);
  for (Eigen::Index k = start + 1; k < traj.size(); ++k) {
    const double cur = wrap_pi(traj.samples[k] - target);
    if ((prev < 0.0 && cur >= 0.0) || (prev > 0.0 && cur <= 0.0)) {
      const double t0 = traj.time_of(k - 1);
      const double frac = prev / (prev - cur);
      out.push_back(t0 + frac * traj.grid_step);
    }
    prev = cur;
  }
  return out;
}

std::optional<double> settle_time(const Trajectory& traj, double fraction) {
  if (fraction <= 0.0 || fraction >= 1.0)
    throw std::invalid_argument("fraction must be in (0, 1)");
  const Eigen::Index start = traj.n_substeps;
  const double initial =
      std::abs(wrap_pi(traj.samples[start] - traj.target_samples[start]));
  if (initial == 0.0) return traj.time_of(start);
  const double bound = (1.0 - fraction) * initial;
  const Eigen::Index hold = traj.n_substeps;  // must stay settled for >= tau
  Eigen::Index run = 0;
  for (Eigen::Index k = start; k < traj.size(); ++k) {
    const double dev = std::abs(wrap_pi(traj.samples[k] - traj.target_samples[k]));
    if (dev <= bound) {
      ++run;
      if (run > hold) return traj.time_of(k - hold);
    } else {
      run = 0;
    }
  }
  return std::nullopt;
}

Eigen::ArrayXd random_history(Rng& rng, int n_substeps, double center) {
  Eigen::ArrayXd h(n_substeps + 1);
  for (Eigen::Index i = 0; i < h.size(); ++i)
    h[i] = center + rng.uniform(-kPi, kPi);
  return h;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& alpha,
                          const Trajectory* beta) {
  os << "# tau=" << alpha.tau << " n_substeps=" << alpha.n_substeps
     << " seed=" << alpha.history_seed << "\n";
  os << (beta ? "t,alpha,beta,gamma_t\n" : "t,alpha,gamma_t\n");
  for (Eigen::Index k = 0; k < alpha.size(); ++k) {
    os << alpha.time_of(k) << ',' << alpha.samples[k];
    if (beta) os << ',' << beta->samples[k];
    os << ',' << alpha.gamma_samples[k] << '\n';
  }
}

}  // namespace ablab
