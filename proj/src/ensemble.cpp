#include "ablab/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ablab/angle.hpp"

namespace ablab {

namespace {

constexpr double kSpeedOfLight = 299792458.0;  // m/s

Eigen::ArrayXd spread_history(Rng& rng, int n_substeps, double center,
                              InitialSpread spread) {
  if (spread == InitialSpread::FullCircle)
    return random_history(rng, n_substeps, center);
  Eigen::ArrayXd h(n_substeps + 1);
  for (Eigen::Index i = 0; i < h.size(); ++i)
    h[i] = center + rng.uniform(-0.5, 0.5);
  return h;
}

struct PulseSeeds {
  std::uint64_t alpha, beta, emission, carryover;
};

PulseSeeds seeds_for(std::uint64_t master, int pulse_index) {
  const auto k = static_cast<std::uint64_t>(pulse_index);
  return {Rng::derive(master, 4 * k), Rng::derive(master, 4 * k + 1),
          Rng::derive(master, 4 * k + 2), Rng::derive(master, 4 * k + 3)};
}

struct PulsePair {
  Trajectory alpha;
  Trajectory beta;
};

PulsePair integrate_pulse(const PulseEnsembleParams& p, int pulse_index,
                          const std::optional<std::pair<double, double>>& carried) {
  const auto s = seeds_for(p.master_seed, pulse_index);
  Eigen::ArrayXd ha, hb;
  if (carried) {
    ha = Eigen::ArrayXd::Constant(p.n_substeps + 1, carried->first);
    hb = Eigen::ArrayXd::Constant(p.n_substeps + 1, carried->second);
  } else {
    Rng ra(s.alpha), rb(s.beta);
    ha = spread_history(ra, p.n_substeps, p.settings.a(0.0), p.initial_spread);
    hb = spread_history(rb, p.n_substeps, p.settings.b(0.0), p.initial_spread);
  }
  PulsePair out;
  out.alpha = integrate(p.tau, p.n_substeps, p.drive, p.settings.a, ha, p.duration);
  out.beta = integrate(p.tau, p.n_substeps, p.drive, p.settings.b, hb, p.duration);
  out.alpha.history_seed = s.alpha;
  out.beta.history_seed = s.beta;
  return out;
}

PulseEfficiency evaluate_pulse(const PulseEnsembleParams& p, const PulsePair& pair) {
  const auto n = pair.alpha.size();
  PulseEfficiency eff;
  eff.times.resize(n);
  eff.gate_a.resize(n);
  eff.gate_b.resize(n);
  eff.divergent = pair.alpha.divergence_flag || pair.beta.divergence_flag;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double t = pair.alpha.time_of(k);
    eff.times[k] = t;
    eff.gate_a[k] = p.model.gate(wrap_pi(pair.alpha.samples[k] - p.settings.a(t)));
    eff.gate_b[k] = p.model.gate(wrap_pi(pair.beta.samples[k] - p.settings.b(t)));
  }
  eff.eta_a = (eff.gate_a + eff.gate_b) / (1.0 + eff.gate_a);
  eff.eta_b = (eff.gate_a + eff.gate_b) / (1.0 + eff.gate_b);
  return eff;
}

}  // namespace

void PulseEnsembleParams::validate() const {
  if (n_pulses < 1) throw std::invalid_argument("n_pulses must be >= 1");
  model.validate();
  drive.validate();
  if (memory_tau_d) {
    if (*memory_tau_d <= 0.0) throw std::invalid_argument("memory_tau_d must be > 0");
    if (drive.pulse_period <= 0.0)
      throw std::invalid_argument("memory carryover requires a pulse period");
  }
  if (duration < tau) throw std::invalid_argument("duration must be >= tau");
}

PulseEfficiency pulse_efficiency(const PulseEnsembleParams& params, int pulse_index) {
  params.validate();
  if (pulse_index < 0 || pulse_index >= params.n_pulses)
    throw std::invalid_argument("pulse_index out of range");
  return evaluate_pulse(params, integrate_pulse(params, pulse_index, std::nullopt));
}

EfficiencyCurve ensemble_efficiency(const PulseEnsembleParams& params, Station station,
                                    AverageMode mode) {
  params.validate();
  const bool memory = params.memory_tau_d.has_value();
  Eigen::ArrayXd sum, sumsq, num, den;
  Eigen::Index n_bins = 0;
  int divergent = 0;
  std::optional<std::pair<double, double>> carried;
  for (int k = 0; k < params.n_pulses; ++k) {
    const auto pair = integrate_pulse(params, k, carried);
    const auto eff = evaluate_pulse(params, pair);
    if (n_bins == 0) {
      n_bins = eff.times.size();
      sum = sumsq = num = Eigen::ArrayXd::Zero(n_bins);
      den = Eigen::ArrayXd::Zero(n_bins);
    }
    const Eigen::ArrayXd& eta = station == Station::A ? eff.eta_a : eff.eta_b;
    const Eigen::ArrayXd& own_gate = station == Station::A ? eff.gate_a : eff.gate_b;
    sum += eta;
    sumsq += eta.square();
    num += eff.gate_a + eff.gate_b;
    den += 1.0 + own_gate;
    if (eff.divergent) ++divergent;
    if (memory) {
      Rng rng(seeds_for(params.master_seed, k).carryover);
      const double gap = std::max(params.drive.pulse_period - params.duration, 0.0);
      const auto co = memory_carryover(
          {pair.alpha.samples[pair.alpha.size() - 1],
           pair.beta.samples[pair.beta.size() - 1]},
          gap, *params.memory_tau_d, rng);
      carried = co.carried ? std::optional(std::pair{co.alpha, co.beta}) : std::nullopt;
    }
  }
  const double n = params.n_pulses;
  EfficiencyCurve curve;
  curve.bin_centers = Eigen::ArrayXd::LinSpaced(n_bins, 0.0,
                                                (n_bins - 1) * (params.tau / params.n_substeps));
  const Eigen::ArrayXd mean = sum / n;
  // Sample standard error of the per-pulse ratios; for Pooled it is kept as a
  // dispersion estimate of the underlying per-pulse values.
  Eigen::ArrayXd var = (sumsq / n - mean.square()).max(0.0);
  curve.eta_stderr = (var / std::max(n - 1.0, 1.0)).sqrt();
  curve.eta_mean = mode == AverageMode::PerPulseMean
                       ? mean
                       : (num / den.max(1e-300)).eval();
  curve.n_contributing = Eigen::ArrayXi::Constant(n_bins, params.n_pulses);
  curve.divergent_fraction = divergent / n;
  return curve;
}

CarryoverResult memory_carryover(std::pair<double, double> prev_final, double gap,
                                 double tau_d, Rng& rng) {
  if (tau_d <= 0.0) throw std::invalid_argument("tau_d must be > 0");
  if (gap < 0.0) throw std::invalid_argument("gap must be >= 0");
  CarryoverResult out;
  out.carried = rng.uniform() < std::exp(-gap / tau_d);
  if (out.carried) {
    out.alpha = prev_final.first;
    out.beta = prev_final.second;
  }
  return out;
}

void PhotonStreamParams::validate() const {
  base.validate();
  if (emission_prob_per_bin < 0.0 || emission_prob_per_bin > 1.0)
    throw std::invalid_argument("emission_prob_per_bin must be in [0, 1]");
  if (tau_res <= 0.0) throw std::invalid_argument("tau_res must be > 0");
  if (pulse_period < base.duration)
    throw std::invalid_argument("pulse_period must cover the pulse duration");
  if (time_unit_s <= 0.0) throw std::invalid_argument("time_unit_s must be > 0");
}

timetag::RunFile generate_photon_stream(const PhotonStreamParams& params) {
  params.validate();
  const PulseEnsembleParams& p = params.base;
  const auto period_ticks =
      static_cast<std::int64_t>(std::llround(params.pulse_period / params.tau_res));
  const auto bins_per_pulse =
      static_cast<std::int64_t>(std::floor(p.duration / params.tau_res));
  const double h = p.tau / p.n_substeps;

  timetag::RunFile run;
  run.header.tau_res_s = params.tau_res * params.time_unit_s;
  run.header.rp_hz = 1.0 / (params.pulse_period * params.time_unit_s);
  run.header.tau_pulse_s =
      std::min(p.duration, std::isfinite(p.drive.tau_pulse) ? p.drive.tau_pulse
                                                            : p.duration) *
      params.time_unit_s;
  run.header.l_m = p.tau * params.time_unit_s * kSpeedOfLight;
  run.header.duration_s = p.n_pulses * params.pulse_period * params.time_unit_s;
  run.header.setting_a_rad = p.settings.a(0.0);
  run.header.setting_b_rad = p.settings.b(0.0);
  run.header.seed = p.master_seed;

  for (int k = 0; k < p.n_pulses; ++k) {
    const std::int64_t pulse_start = k * period_ticks;
    run.events.push_back({timetag::Channel::Pulse, pulse_start});
    if (params.emission_prob_per_bin <= 0.0) continue;
    const auto pair = integrate_pulse(p, k, std::nullopt);
    Rng rng(seeds_for(p.master_seed, k).emission);
    for (std::int64_t j = 0; j < bins_per_pulse; ++j) {
      if (rng.uniform() >= params.emission_prob_per_bin) continue;
      const double t = (static_cast<double>(j) + 0.5) * params.tau_res;
      const HiddenPair photon{
          rng.uniform() < 0.5 ? PairType::Alpha : PairType::Beta, 0.0,
          rng.uniform() < 0.5 ? Substate::Plus : Substate::Minus};
      const auto node = std::min<Eigen::Index>(
          static_cast<Eigen::Index>(std::llround(t / h)), pair.alpha.size() - 1);
      HiddenPair carrier = photon;
      carrier.value = photon.type == PairType::Alpha ? pair.alpha.samples[node]
                                                     : pair.beta.samples[node];
      const auto pa =
          detection_probabilities(carrier, Station::A, p.settings.a(t), p.model);
      const auto pb =
          detection_probabilities(carrier, Station::B, p.settings.b(t), p.model);
      const Outcome oa = sample_outcome(pa, rng.uniform());
      const Outcome ob = sample_outcome(pb, rng.uniform());
      const std::int64_t tick = pulse_start + j;
      if (oa == Outcome::Plus) run.events.push_back({timetag::Channel::APlus, tick});
      if (oa == Outcome::Minus) run.events.push_back({timetag::Channel::AMinus, tick});
      if (ob == Outcome::Plus) run.events.push_back({timetag::Channel::BPlus, tick});
      if (ob == Outcome::Minus) run.events.push_back({timetag::Channel::BMinus, tick});
    }
  }
  return run;
}

double plateau_level(const EfficiencyCurve& curve, double t_lo, double t_hi) {
  double sum = 0.0;
  int n = 0;
  for (Eigen::Index k = 0; k < curve.bin_centers.size(); ++k) {
    if (curve.bin_centers[k] < t_lo || curve.bin_centers[k] > t_hi) continue;
    sum += curve.eta_mean[k];
    ++n;
  }
  if (n == 0) throw std::invalid_argument("empty plateau window");
  return sum / n;
}

std::vector<double> curve_peaks(const EfficiencyCurve& curve, double min_separation) {
  const Eigen::Index n = curve.bin_centers.size();
  if (n < 3) return {};
  const double dt = curve.bin_centers[1] - curve.bin_centers[0];
  const auto half = std::max<Eigen::Index>(
      1, static_cast<Eigen::Index>(std::llround(min_separation / dt)));
  // Noise floor: a peak must rise above its surroundings by more than the
  // ensemble scatter.
  std::vector<double> errs(curve.eta_stderr.data(), curve.eta_stderr.data() + n);
  std::nth_element(errs.begin(), errs.begin() + n / 2, errs.end());
  const double floor_ = std::max(3.0 * errs[n / 2], 1e-4);

  std::vector<double> peaks;
  for (Eigen::Index k = half; k + half < n; ++k) {
    const double v = curve.eta_mean[k];
    bool is_max = true;
    double min_around = v;
    for (Eigen::Index j = k - half; j <= k + half; ++j) {
      if (j == k) continue;
      if (curve.eta_mean[j] > v) {
        is_max = false;
        break;
      }
      min_around = std::min(min_around, curve.eta_mean[j]);
    }
    if (is_max && v - min_around > floor_) {
      if (peaks.empty() || curve.bin_centers[k] - peaks.back() >= min_separation)
        peaks.push_back(curve.bin_centers[k]);
    }
  }
  return peaks;
}

std::vector<SweepRow> distance_sweep(const PulseEnsembleParams& base,
                                     const std::vector<double>& tau_values,
                                     SweepMode mode) {
  if (tau_values.size() < 2) throw std::invalid_argument("need at least two tau values");
  std::vector<SweepRow> rows;
  for (const double tau : tau_values) {
    PulseEnsembleParams p = base;
    p.tau = tau;
    p.duration = base.duration / base.tau * tau;  // same window in units of tau
    if (mode == SweepMode::GammaTauFixed)
      p.drive.gamma_peak = base.drive.gamma_peak * base.tau / tau;
    const auto curve = ensemble_efficiency(p, Station::A, AverageMode::PerPulseMean);

    SweepRow row;
    row.tau = tau;
    const Eigen::Index n = curve.bin_centers.size();
    const Eigen::Index tail = std::max<Eigen::Index>(n / 10, 1);
    const double plateau = curve.eta_mean.tail(tail).mean();
    const double band = 0.05 * std::abs(plateau);
    Eigen::Index last_outside = -1;
    Eigen::Index start = p.n_substeps;  // t = tau
    for (Eigen::Index k = start; k < n; ++k)
      if (std::abs(curve.eta_mean[k] - plateau) > band) last_outside = k;
    if (last_outside >= 0 && last_outside + 1 < n)
      row.saturation_time = curve.bin_centers[last_outside + 1];

    const auto peaks = curve_peaks(curve, 0.5 * tau);
    if (peaks.size() >= 2) {
      std::vector<double> gaps;
      for (std::size_t i = 1; i < peaks.size(); ++i)
        gaps.push_back(peaks[i] - peaks[i - 1]);
      std::nth_element(gaps.begin(), gaps.begin() + gaps.size() / 2, gaps.end());
      // The efficiency depends on the squared mismatch, so it peaks twice per
      // oscillation cycle; the underlying period is twice the peak spacing.
      row.oscillation_period = 2.0 * gaps[gaps.size() / 2];
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace ablab
