#include "ablab/hv_core.hpp"

#include <cmath>
#include <stdexcept>

namespace ablab {

void DetectionModel::validate() const {
  if (!std::isfinite(delta) || delta <= 0.0)
    throw std::invalid_argument("DetectionModel: delta must be positive and finite");
  if (kind == ModelKind::Slit && delta > kTwoPi)
    throw std::invalid_argument("DetectionModel: slit delta must be <= 2*pi");
}

double DetectionModel::gate(double mismatch) const {
  const double m = wrap_pi(mismatch);
  if (kind == ModelKind::Slit) return std::abs(m) <= 0.5 * delta ? 1.0 : 0.0;
  // Gaussian acceptance, un-normalized by design: g(0) = 1.
  return std::exp(-m * m / (delta * delta));
}

namespace {

PortProbabilities gated(const HiddenPair& pair, double setting, const DetectionModel& model) {
  const double g = model.gate(pair.value - setting);
  return pair.substate == Substate::Plus ? PortProbabilities{g, 0.0}
                                         : PortProbabilities{0.0, g};
}

PortProbabilities malus(const HiddenPair& pair, double setting) {
  const double c = std::cos(setting - pair.value);
  const double s = std::sin(setting - pair.value);
  const double c2 = c * c;
  const double s2 = s * s;
  return pair.substate == Substate::Plus ? PortProbabilities{c2, s2}
                                         : PortProbabilities{s2, c2};
}

}  // namespace

PortProbabilities detection_probabilities(const HiddenPair& pair, Station station,
                                          double setting, const DetectionModel& model) {
  model.validate();
  const bool gate_station =
      (pair.type == PairType::Alpha) == (station == Station::A);
  return gate_station ? gated(pair, setting, model) : malus(pair, setting);
}

double coincidence_probability_slit(double a, double b, Port port_a, Port port_b,
                                    double delta) {
  if (delta <= 0.0 || delta > kTwoPi)
    throw std::invalid_argument("coincidence_probability_slit: delta out of (0, 2*pi]");
  const double d = a - b;
  const double trig = (port_a == port_b) ? std::cos(d) : std::sin(d);
  return (std::sin(delta) * trig * trig + 0.5 * (delta - std::sin(delta))) /
         (4.0 * std::numbers::pi);
}

double chsh_closed_form(double delta) {
  if (delta == 0.0) return 2.0 * std::numbers::sqrt2;
  return 2.0 * std::numbers::sqrt2 * std::sin(delta) / delta;
}

double efficiency_static(double p) {
  if (p < 0.0 || p > 1.0)
    throw std::invalid_argument("efficiency_static: p must be in [0,1]");
  return 2.0 * p / (1.0 + p);
}

Outcome sample_outcome(const PortProbabilities& probs, double uniform_draw) {
  if (uniform_draw < probs.p_plus) return Outcome::Plus;
  if (uniform_draw < probs.p_plus + probs.p_minus) return Outcome::Minus;
  return Outcome::None;
}

}  // namespace ablab
