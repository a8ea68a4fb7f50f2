#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "ablab/delay_dynamics.hpp"
#include "ablab/hv_core.hpp"
#include "ablab/rng.hpp"
#include "ablab/timetag.hpp"

namespace ablab {

/// Distribution of the hidden angles over the pre-reaction interval.
/// FullCircle: uniform over one full turn around the local target.
/// UnitInterval: uniform in [target - 1/2, target + 1/2].
enum class InitialSpread { FullCircle, UnitInterval };

/// How per-pulse efficiencies are combined into one curve.
/// PerPulseMean: mean of the per-pulse ratio (each pulse weighted equally).
/// Pooled: ratio of summed numerators to summed denominators, which is what
/// counting coincidences and singles over many pulses actually measures.
enum class AverageMode { PerPulseMean, Pooled };

struct PulseEnsembleParams {
  int n_pulses = 1000;
  double tau = 1.0;
  int n_substeps = 500;
  DetectionModel model = DetectionModel::gaussian(0.1);
  DriveSchedule drive;
  SettingSchedule settings;
  std::uint64_t master_seed = 1;
  std::optional<double> memory_tau_d;  // opt-in carryover between pulses
  InitialSpread initial_spread = InitialSpread::FullCircle;
  double duration = 10.0;  // integration window per pulse, same unit as tau

  void validate() const;
};

struct EfficiencyCurve {
  Eigen::ArrayXd bin_centers;
  Eigen::ArrayXd eta_mean;
  Eigen::ArrayXd eta_stderr;
  Eigen::ArrayXi n_contributing;
  double divergent_fraction = 0.0;
};

struct PulseEfficiency {
  Eigen::ArrayXd times;
  Eigen::ArrayXd eta_a;
  Eigen::ArrayXd eta_b;
  Eigen::ArrayXd gate_a;  // acceptance factor at A, needed for pooling
  Eigen::ArrayXd gate_b;
  bool divergent = false;
};

/// One pulse: integrate fresh alpha/beta trajectories (seeds derived from
/// master_seed and pulse_index) and evaluate the two-sided efficiency
///   eta_A(t) = [g(alpha - a) + g(beta - b)] / [1 + g(alpha - a)]
/// pointwise with wrapped mismatches, where g is the model's acceptance.
PulseEfficiency pulse_efficiency(const PulseEnsembleParams& params, int pulse_index);

/// Average of pulse_efficiency over all pulses. Deterministic for a given
/// master_seed regardless of evaluation order. Divergent pulses are included
/// and counted in divergent_fraction.
EfficiencyCurve ensemble_efficiency(const PulseEnsembleParams& params,
                                    Station station = Station::A,
                                    AverageMode mode = AverageMode::PerPulseMean);

/// Start of the next pulse given the previous pulse's final hidden angles:
/// with probability exp(-gap / tau_d) the previous values survive the
/// inter-pulse gap, otherwise the state has decayed back to random.
struct CarryoverResult {
  bool carried = false;
  double alpha = 0.0;
  double beta = 0.0;
};
CarryoverResult memory_carryover(std::pair<double, double> prev_final, double gap,
                                 double tau_d, Rng& rng);

struct PhotonStreamParams {
  PulseEnsembleParams base;
  double emission_prob_per_bin = 0.02;
  double tau_res = 0.01;       // detection bin width = one timestamp tick
  double pulse_period = 20.0;  // R_p^-1, same unit as tau
  double time_unit_s = 1.0;    // seconds per model time unit

  void validate() const;
};

/// Event-level counterpart of ensemble_efficiency: per pulse and per tau_res
/// bin, emit a pair with the stated probability, draw its family/substate,
/// read the hidden angle off that pulse's trajectory, and sample the two
/// detections independently. Detections are timestamped on the tick grid;
/// a pulse marker is emitted at each pulse start.
timetag::RunFile generate_photon_stream(const PhotonStreamParams& params);

enum class SweepMode { GammaFixed, GammaTauFixed };

struct SweepRow {
  double tau = 0.0;
  std::optional<double> saturation_time;    // first entry into the 5% band
  std::optional<double> oscillation_period; // from peak spacing, if oscillatory
};

/// Run the ensemble at each tau and extract how long the mean efficiency
/// takes to saturate and, when oscillatory, the oscillation period.
/// GammaTauFixed rescales gamma as tau changes so the regime is preserved;
/// GammaFixed keeps gamma and lets the regime drift.
std::vector<SweepRow> distance_sweep(const PulseEnsembleParams& base,
                                     const std::vector<double>& tau_values,
                                     SweepMode mode);

/// Helpers shared with the fit: plateau level over the pre-reaction stage and
/// peak positions of a noisy curve.
double plateau_level(const EfficiencyCurve& curve, double t_lo, double t_hi);
std::vector<double> curve_peaks(const EfficiencyCurve& curve, double min_separation);

}  // namespace ablab
