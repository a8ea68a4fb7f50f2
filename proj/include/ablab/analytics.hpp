#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>

#include "ablab/hv_core.hpp"

namespace ablab {

/// Width of the single-Gaussian approximation to the two-sided efficiency,
/// delta = 0.7561 * Delta. (This is the operative numeric constant; it is
/// what makes sqrt(pi)*delta evaluate to 1.34*Delta.)
inline constexpr double kDeltaCoefficient = 0.7561;
/// sqrt(pi) * 0.7561 = 1.34...: mean efficiency per unit mismatch range.
double mean_eta_coefficient();

struct ApproxParams {
  double gamma = 0.0;        // reaction rate (1/time)
  double delta_width = 0.1;  // acceptance width Delta
  double tau = 1.0;          // reaction delay
  double alpha_tau = 0.0;    // hidden angle at t = tau
  double target_a = 0.0;     // local setting
};

/// Exponential-relaxation approximation of the hidden angle (valid for
/// gamma*tau <= 1/e): alpha(t) = a + [alpha(tau) - a] * exp(-gamma (t - tau)).
double alpha_approx(double t, const ApproxParams& p);

/// Single-Gaussian efficiency along the approximate trajectory:
/// exp(-[alpha(tau)-a]^2 exp(-2 gamma (t-tau)) / delta^2).
double eta_approx(double t, const ApproxParams& p);

/// Mismatch-averaged efficiency, sqrt(pi)*delta*exp(gamma (t-tau)),
/// clamped to <= 1.
double mean_eta_approx(double t, const ApproxParams& p);

struct FitResult {
  double delta_est = 0.0;
  double gamma_est = 0.0;
  double eta0 = 0.0;
  double slope = 0.0;
  double correction_factor = 1.0;
};

/// Closed-form inversion of the linearized efficiency model
///   eta(t) ~ 1.34 * Delta * (1 + Gamma (t - tau)) / correction_factor:
/// Delta_hat = factor * eta0 / 1.34, Gamma_hat = slope / eta0 (the factor
/// cancels in Gamma_hat).
FitResult invert_fit(double eta0_measured, double slope_measured,
                     double correction_factor);

/// Independent numeric oracle for the coincidence probability: average the
/// exact per-pair detection product over the hidden angle (uniform on the
/// circle), both pair families and both substates weighted equally.
/// Composite Simpson with node doubling to 1e-8; the slit indicator is
/// handled by integrating over its support exactly.
double quadrature_oracle_coincidence(const DetectionModel& model, double a, double b,
                                     Port port_a, Port port_b);

/// Numeric average of a one-argument function over a centered uniform
/// mismatch range of the given half-width (Simpson, node doubling to 1e-10).
double quadrature_mean(const std::function<double(double)>& f, double half_width);

/// Coincidence counts of one setting pair, indexed [port_A][port_B] with
/// 0 = plus, 1 = minus.
struct SettingCounts {
  double n[2][2] = {{0.0, 0.0}, {0.0, 0.0}};
  double total() const { return n[0][0] + n[0][1] + n[1][0] + n[1][1]; }
};

struct ChshEstimate {
  double s = 0.0;
  double stderr_ = 0.0;
};

/// CHSH from four settings ordered (a,b), (a,b'), (a',b), (a',b'):
/// S = E(a,b) - E(a,b') + E(a',b) + E(a',b') with
/// E = (N++ + N-- - N+- - N-+)/N; binomial error propagation.
ChshEstimate chsh_from_counts(const std::array<SettingCounts, 4>& counts);

/// Inversion of a measured efficiency-vs-time curve into (Delta, Gamma).
/// Stages: plateau level eta0 over the pre-reaction window [tau, 2 tau];
/// growth rate r from an OLS slope over [2 tau, 2 tau + 1/r] (fixed point,
/// slope divided by the segment mean so exponential growth is read exactly);
/// Gamma_hat = r exp(-r tau), undoing the delay-induced speedup of the true
/// relaxation rate; Delta_hat from eta0 via the initial-mismatch average
/// g0 = eta0/(2 - eta0) and the chosen normalization range.
enum class MismatchRange { FullCircle, UnitRange };

struct CurveFit {
  FitResult linearized;  // the plain eta0/slope inversion, for reference
  double rate = 0.0;     // fitted exponential growth rate r
  double delta_est = 0.0;
  double gamma_est = 0.0;
  double eta0 = 0.0;
  double slope = 0.0;
};

CurveFit fit_efficiency_curve(const Eigen::ArrayXd& times, const Eigen::ArrayXd& eta,
                              double tau, MismatchRange range,
                              double correction_factor = 1.0);

}  // namespace ablab
