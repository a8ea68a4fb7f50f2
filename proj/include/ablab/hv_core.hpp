#pragma once

#include <cstdint>

#include "ablab/angle.hpp"

namespace ablab {

enum class PairType { Alpha, Beta };
enum class Substate { Plus, Minus };
enum class Station { A, B };
enum class Port { Plus, Minus };
enum class Outcome { Plus, Minus, None };
enum class ModelKind { Slit, Gaussian };

/// One emitted photon pair: which family it belongs to, the hidden angle it
/// carries (unwrapped radians) and the +/- substate.
struct HiddenPair {
  PairType type;
  double value;
  Substate substate;
};

/// Acceptance ("gate") model of the slit station, either the sharp slit of
/// width delta or the smooth Gaussian condition.
struct DetectionModel {
  ModelKind kind = ModelKind::Gaussian;
  double delta = 0.1;

  static DetectionModel slit(double delta) { return {ModelKind::Slit, delta}; }
  static DetectionModel gaussian(double delta) { return {ModelKind::Gaussian, delta}; }

  /// Throws std::invalid_argument on an out-of-range width.
  void validate() const;

  /// Acceptance probability for a wrapped mismatch between hidden angle and
  /// local setting.
  double gate(double mismatch) const;
};

struct PortProbabilities {
  double p_plus = 0.0;
  double p_minus = 0.0;
  double total() const { return p_plus + p_minus; }
};

/// Per-port detection probabilities of one pair at one station. Alpha pairs
/// are gated at A and follow the Malus law at B; beta pairs mirror that.
PortProbabilities detection_probabilities(const HiddenPair& pair, Station station,
                                          double setting, const DetectionModel& model);

/// Closed-form slit-model coincidence probability for the given port pair.
double coincidence_probability_slit(double a, double b, Port port_a, Port port_b,
                                    double delta);

/// 2*sqrt(2) * sin(delta)/delta.
double chsh_closed_form(double delta);

/// eta = 2p / (1+p).
double efficiency_static(double p);

/// Turn port probabilities into an outcome with one uniform draw in [0,1).
/// Left-closed intervals: PLUS if u < p+, MINUS if p+ <= u < p+ + p-.
Outcome sample_outcome(const PortProbabilities& probs, double uniform_draw);

}  // namespace ablab
