#include "ablab/analytics.hpp"

#include <cmath>
#include <stdexcept>

#include "ablab/angle.hpp"

namespace ablab {

namespace {

double simpson(const std::function<double(double)>& f, double lo, double hi, int n) {
  // n intervals, n even
  const double h = (hi - lo) / n;
  double acc = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) acc += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

double simpson_adaptive(const std::function<double(double)>& f, double lo, double hi,
                        double tol, int n_start) {
  double prev = simpson(f, lo, hi, n_start);
  for (int n = 2 * n_start; n <= (1 << 22); n *= 2) {
    const double cur = simpson(f, lo, hi, n);
    if (std::abs(cur - prev) < tol) return cur;
    prev = cur;
  }
  return prev;
}

double cos_sq(double x) {
  const double c = std::cos(x);
  return c * c;
}
double sin_sq(double x) {
  const double s = std::sin(x);
  return s * s;
}

struct Ols {
  double slope = 0.0;
  double intercept = 0.0;
  double mean_y = 0.0;
  int n = 0;
};

Ols ols_segment(const Eigen::ArrayXd& t, const Eigen::ArrayXd& y, double lo, double hi) {
  double st = 0, sy = 0, stt = 0, sty = 0;
  int n = 0;
  for (Eigen::Index k = 0; k < t.size(); ++k) {
    if (t[k] < lo || t[k] > hi) continue;
    st += t[k];
    sy += y[k];
    stt += t[k] * t[k];
    sty += t[k] * y[k];
    ++n;
  }
  Ols o;
  o.n = n;
  if (n < 2) return o;
  const double det = n * stt - st * st;
  if (det == 0.0) return o;
  o.slope = (n * sty - st * sy) / det;
  o.intercept = (sy * stt - st * sty) / det;
  o.mean_y = sy / n;
  return o;
}

}  // namespace

double mean_eta_coefficient() { return std::sqrt(kPi) * kDeltaCoefficient; }

double alpha_approx(double t, const ApproxParams& p) {
  if (t < p.tau) throw std::invalid_argument("t must be >= tau");
  return p.target_a +
         (p.alpha_tau - p.target_a) * std::exp(-p.gamma * (t - p.tau));
}

double eta_approx(double t, const ApproxParams& p) {
  if (t < p.tau) throw std::invalid_argument("t must be >= tau");
  const double delta = kDeltaCoefficient * p.delta_width;
  const double m0 = p.alpha_tau - p.target_a;
  return std::exp(-m0 * m0 * std::exp(-2.0 * p.gamma * (t - p.tau)) / (delta * delta));
}

double mean_eta_approx(double t, const ApproxParams& p) {
  if (t < p.tau) throw std::invalid_argument("t must be >= tau");
  const double delta = kDeltaCoefficient * p.delta_width;
  return std::min(std::sqrt(kPi) * delta * std::exp(p.gamma * (t - p.tau)), 1.0);
}

FitResult invert_fit(double eta0_measured, double slope_measured,
                     double correction_factor) {
  if (eta0_measured <= 0.0) throw std::invalid_argument("eta0 must be > 0");
  if (slope_measured <= 0.0) throw std::invalid_argument("slope must be > 0");
  if (correction_factor < 1.0)
    throw std::invalid_argument("correction_factor must be >= 1");
  FitResult r;
  r.eta0 = eta0_measured;
  r.slope = slope_measured;
  r.correction_factor = correction_factor;
  r.delta_est = correction_factor * eta0_measured / mean_eta_coefficient();
  r.gamma_est = slope_measured / eta0_measured;  // the factor cancels
  return r;
}

double quadrature_oracle_coincidence(const DetectionModel& model, double a, double b,
                                     Port port_a, Port port_b) {
  model.validate();
  const double delta = model.delta;
  const double sign_a = port_a == Port::Plus ? 1.0 : -1.0;
  const double sign_b = port_b == Port::Plus ? 1.0 : -1.0;
  // Malus response of the requested port, per substate: substate + favors
  // cos^2 in the + port; substate - swaps the two ports.
  auto malus = [](double mismatch, double port_sign, Substate sub) {
    const bool aligned = (port_sign > 0.0) == (sub == Substate::Plus);
    return aligned ? cos_sq(mismatch) : sin_sq(mismatch);
  };
  // Gate response: the gated station fires only in the port matching the
  // substate.
  auto gate_fires = [&](double port_sign, Substate sub) {
    return (port_sign > 0.0) == (sub == Substate::Plus);
  };

  auto gate_value = [&](double mu) {
    const double m = wrap_pi(mu);
    if (model.kind == ModelKind::Slit) return std::abs(m) <= 0.5 * delta ? 1.0 : 0.0;
    return std::exp(-m * m / (delta * delta));
  };

  // Alpha family integrand in mu = lambda - a; Beta family in nu = lambda - b.
  auto alpha_term = [&](double mu) {
    double acc = 0.0;
    for (Substate sub : {Substate::Plus, Substate::Minus}) {
      const double pa = gate_fires(sign_a, sub) ? gate_value(mu) : 0.0;
      const double pb = malus((b - a) - mu, sign_b, sub);
      acc += 0.5 * pa * pb;
    }
    return acc;
  };
  auto beta_term = [&](double nu) {
    double acc = 0.0;
    for (Substate sub : {Substate::Plus, Substate::Minus}) {
      const double pb = gate_fires(sign_b, sub) ? gate_value(nu) : 0.0;
      const double pa = malus((a - b) - nu, sign_a, sub);
      acc += 0.5 * pa * pb;
    }
    return acc;
  };

  constexpr double tol = 1e-9;
  constexpr int n_start = 1 << 14;
  double integral = 0.0;
  if (model.kind == ModelKind::Slit) {
    // Restrict to the slit support, where the integrand is smooth.
    const double half = std::min(0.5 * delta, kPi);
    integral += simpson_adaptive(alpha_term, -half, half, tol, n_start);
    integral += simpson_adaptive(beta_term, -half, half, tol, n_start);
  } else {
    integral += simpson_adaptive(alpha_term, -kPi, kPi, tol, n_start);
    integral += simpson_adaptive(beta_term, -kPi, kPi, tol, n_start);
  }
  // Each family carries weight 1/2, and the hidden angle is uniform on 2*pi.
  return 0.5 * integral / kTwoPi;
}

double quadrature_mean(const std::function<double(double)>& f, double half_width) {
  if (half_width <= 0.0) throw std::invalid_argument("half_width must be > 0");
  const double integral =
      simpson_adaptive(f, -half_width, half_width, 1e-10, 1 << 12);
  return integral / (2.0 * half_width);
}

ChshEstimate chsh_from_counts(const std::array<SettingCounts, 4>& counts) {
  double e[4], var_sum = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double n = counts[i].total();
    if (n <= 0.0) throw std::invalid_argument("setting " + std::to_string(i) +
                                              " has no counts");
    e[i] = (counts[i].n[0][0] + counts[i].n[1][1] - counts[i].n[0][1] -
            counts[i].n[1][0]) /
           n;
    var_sum += (1.0 - e[i] * e[i]) / n;
  }
  return {e[0] - e[1] + e[2] + e[3], std::sqrt(var_sum)};
}

CurveFit fit_efficiency_curve(const Eigen::ArrayXd& times, const Eigen::ArrayXd& eta,
                              double tau, MismatchRange range,
                              double correction_factor) {
  if (times.size() != eta.size() || times.size() < 4)
    throw std::invalid_argument("curve too short to fit");
  if (tau <= 0.0) throw std::invalid_argument("tau must be > 0");

  CurveFit fit;
  // Plateau before the reaction reaches the source and back: mean over
  // [tau, 2 tau].
  double sum = 0.0;
  int n0 = 0;
  for (Eigen::Index k = 0; k < times.size(); ++k) {
    if (times[k] < tau || times[k] > 2.0 * tau) continue;
    sum += eta[k];
    ++n0;
  }
  if (n0 == 0) throw std::invalid_argument("no samples in the plateau window");
  fit.eta0 = sum / n0;
  if (fit.eta0 <= 0.0) throw std::invalid_argument("plateau level is not positive");

  // Exponential growth rate by fixed point: on [2 tau, 2 tau + 1/r], the OLS
  // slope divided by the segment mean reads the log-derivative of an
  // exponential essentially exactly.
  const double t_max = times[times.size() - 1];
  double r = 1.0 / tau;
  Ols seg;
  for (int it = 0; it < 40; ++it) {
    const double hi = std::min(2.0 * tau + 1.0 / r, t_max);
    seg = ols_segment(times, eta, 2.0 * tau, hi);
    if (seg.n < 2 || seg.mean_y <= 0.0 || seg.slope <= 0.0) break;
    const double r_new = seg.slope / seg.mean_y;
    if (std::abs(r_new - r) < 1e-9 * r) {
      r = r_new;
      break;
    }
    r = r_new;
  }
  if (!(r > 0.0) || seg.n < 2 || seg.slope <= 0.0)
    throw std::invalid_argument("no rising segment found");
  fit.rate = r;
  fit.slope = seg.slope;

  // The measured rate is the delayed equation's relaxation rate, which runs
  // faster than the bare coupling; invert r = gamma * exp(r * tau).
  fit.gamma_est = r * std::exp(-r * tau);

  // Acceptance width from the plateau: eta0 = 2 g0 / (1 + g0) with g0 the
  // mean acceptance over the initial mismatch distribution.
  const double eta0_corrected = std::min(correction_factor * fit.eta0, 1.999);
  const double g0 = eta0_corrected / (2.0 - eta0_corrected);
  fit.delta_est = range == MismatchRange::FullCircle ? 2.0 * std::sqrt(kPi) * g0
                                                     : g0 / std::sqrt(kPi);
  fit.linearized = invert_fit(fit.eta0, fit.slope, correction_factor);
  return fit;
}

}  // namespace ablab
