#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ablab/hv_core.hpp"

namespace ablab::timetag {

enum class Channel { APlus, AMinus, BPlus, BMinus, Pulse };

std::string channel_name(Channel c);
std::optional<Channel> parse_channel(const std::string& name);

struct EventRecord {
  Channel channel;
  std::int64_t timestamp;  // in units of tau_res ticks

  bool operator==(const EventRecord&) const = default;
};

/// Run-file header. All times in seconds; settings in radians. The reaction
/// delay tau = L/c is derived, never stored.
struct RunHeader {
  int format_version = 1;
  double tau_res_s = 0.0;    // timestamp resolution (tick length)
  double rp_hz = 0.0;        // pump pulse rate
  double tau_pulse_s = 0.0;  // pump pulse duration
  double l_m = 0.0;          // source-station distance
  double duration_s = 0.0;
  double setting_a_rad = 0.0;
  double setting_b_rad = 0.0;
  std::string source = "SIMULATED";  // SIMULATED or EXTERNAL
  std::uint64_t seed = 0;

  double tau_s() const;            // L / c
  std::int64_t period_ticks() const;  // round(R_p^-1 / tau_res)
};

struct RunFile {
  RunHeader header;
  std::vector<EventRecord> events;  // nondecreasing timestamps
};

void write_run(std::ostream& os, const RunFile& run);
void write_run(const std::string& path, const RunFile& run);

/// Throws std::runtime_error naming the offending line on malformed headers,
/// unknown channel tags, or timestamp regressions.
RunFile read_run(std::istream& is);
RunFile read_run(const std::string& path);

/// Events of one channel, in file order.
std::vector<EventRecord> events_on(const RunFile& run, Channel c);
/// All detections of one station (both ports merged), in time order.
std::vector<EventRecord> station_events(const RunFile& run, Station s);

struct CoincidencePair {
  std::size_t index_a = 0;  // indices into the input vectors
  std::size_t index_b = 0;
  std::int64_t time_a = 0;
  std::int64_t time_b = 0;
};

/// Greedy earliest-first matching of two sorted streams: pair each event with
/// the nearest unmatched partner within +/- window ticks, consuming events in
/// time order so every event is used at most once.
std::vector<CoincidencePair> match_coincidences(const std::vector<EventRecord>& side_a,
                                                const std::vector<EventRecord>& side_b,
                                                std::int64_t window);

struct OffsetHistogram {
  std::int64_t bin_width = 1;                 // ticks
  std::map<std::int64_t, std::int64_t> counts;  // bin index -> count
  std::int64_t orphans = 0;  // events more than one pulse period past a marker
};

/// Histogram event offsets relative to the nearest preceding pulse marker.
/// Throws if markers is empty.
OffsetHistogram bin_relative_to_pulses(const std::vector<EventRecord>& events,
                                       const std::vector<EventRecord>& markers,
                                       std::int64_t bin_width,
                                       std::int64_t period_ticks);

struct TimeBinnedEstimate {
  double bin_center_s = 0.0;  // relative to pulse start
  std::int64_t singles_a = 0;
  std::int64_t singles_b = 0;
  double coincidences = 0.0;  // fractional after accidental correction
  double eta = 0.0;
  double eta_err = 0.0;
  std::optional<double> s_chsh;
  std::optional<double> s_chsh_err;
  bool low_count = false;
};

/// Time-resolved detection efficiency eta(t) = pooled coincidences / pooled
/// singles at the given station, binned by delay after the pump pulse and
/// pooled over all runs. Bins with zero singles are omitted. If
/// correct_accidentals is set, the offset-window estimate (below) is
/// subtracted from the per-bin coincidence counts first.
std::vector<TimeBinnedEstimate> efficiency_timeseries(const std::vector<RunFile>& runs,
                                                      Station station,
                                                      std::int64_t window,
                                                      std::int64_t bin_width,
                                                      bool correct_accidentals = false,
                                                      int offset_windows = 4);

/// Per-bin CHSH S(t) from four runs covering the settings
/// (a,b), (a,b'), (a',b), (a',b'). Bins with fewer than 10 coincidences in
/// any setting are kept but flagged low_count. Throws if a setting pair is
/// missing.
std::vector<TimeBinnedEstimate> chsh_timeseries(const std::vector<RunFile>& runs,
                                                std::int64_t window,
                                                std::int64_t bin_width);

struct CorrectedBin {
  std::int64_t bin = 0;  // offset-bin index
  double raw = 0.0;
  double accidental = 0.0;
  double corrected = 0.0;
  bool clamped = false;
};

/// Shifted-window accidental estimate: re-run the coincidence matching with
/// side B delayed by k pulse periods for k = 1..offset_windows, histogram the
/// shifted matches the same way, average over k, and subtract per bin.
std::vector<CorrectedBin> accidental_correction(const RunFile& run, std::int64_t window,
                                                std::int64_t bin_width,
                                                int offset_windows);

struct ExperimentPlan {
  double tau_res = 0.0;      // timestamp resolution (s)
  double tau_rf = 0.0;       // pump rise/fall time (s)
  double tau = 0.0;          // reaction delay L/c (s)
  double tau_pulse = 0.0;    // pump pulse duration (s)
  double rp_inverse = 0.0;   // pulse period (s)
  double tau_d_assumed = 0.0;  // assumed memory decay time (s)
};

enum class PlanSeverity { Ok, Warning, Violation };

struct PlanFinding {
  std::string check;  // e.g. "tau_res < tau"
  PlanSeverity severity = PlanSeverity::Ok;
  double ratio = 0.0;
  std::string message;
};

/// Timing-hierarchy checks: tau_res < tau (strict), then tau_rf << tau,
/// tau << tau_pulse, tau_pulse << rp_inverse, tau_d << rp_inverse, where
/// "<<" passes at ratio >= 10, warns in [3, 10), and violates below 3.
std::vector<PlanFinding> plan_check(const ExperimentPlan& plan);

}  // namespace ablab::timetag
