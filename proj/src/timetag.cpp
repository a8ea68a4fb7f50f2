#include "ablab/timetag.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "ablab/analytics.hpp"

namespace ablab::timetag {

namespace {

constexpr double kSpeedOfLight = 299792458.0;  // m/s

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

[[noreturn]] void parse_fail(std::size_t line, const std::string& what) {
  throw std::runtime_error("line " + std::to_string(line) + ": " + what);
}

}  // namespace

std::string channel_name(Channel c) {
  switch (c) {
    case Channel::APlus: return "A+";
    case Channel::AMinus: return "A-";
    case Channel::BPlus: return "B+";
    case Channel::BMinus: return "B-";
    case Channel::Pulse: return "P";
  }
  return "?";
}

std::optional<Channel> parse_channel(const std::string& name) {
  if (name == "A+") return Channel::APlus;
  if (name == "A-") return Channel::AMinus;
  if (name == "B+") return Channel::BPlus;
  if (name == "B-") return Channel::BMinus;
  if (name == "P") return Channel::Pulse;
  return std::nullopt;
}

double RunHeader::tau_s() const { return l_m / kSpeedOfLight; }

std::int64_t RunHeader::period_ticks() const {
  return static_cast<std::int64_t>(std::llround(1.0 / (rp_hz * tau_res_s)));
}

void write_run(std::ostream& os, const RunFile& run) {
  const RunHeader& h = run.header;
  os << "# format_version=" << h.format_version << '\n';
  os << "# tau_res_s=" << fmt_double(h.tau_res_s) << '\n';
  os << "# rp_hz=" << fmt_double(h.rp_hz) << '\n';
  os << "# tau_pulse_s=" << fmt_double(h.tau_pulse_s) << '\n';
  os << "# L_m=" << fmt_double(h.l_m) << '\n';
  os << "# duration_s=" << fmt_double(h.duration_s) << '\n';
  os << "# setting_a_rad=" << fmt_double(h.setting_a_rad) << '\n';
  os << "# setting_b_rad=" << fmt_double(h.setting_b_rad) << '\n';
  os << "# source=" << h.source << '\n';
  os << "# seed=" << h.seed << '\n';
  for (const auto& e : run.events)
    os << channel_name(e.channel) << ',' << e.timestamp << '\n';
}

void write_run(const std::string& path, const RunFile& run) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  write_run(os, run);
}

RunFile read_run(std::istream& is) {
  RunFile run;
  std::string line;
  std::size_t lineno = 0;
  std::int64_t last_ts = std::numeric_limits<std::int64_t>::min();
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::string body = line.substr(1);
      const auto start = body.find_first_not_of(' ');
      if (start == std::string::npos) parse_fail(lineno, "empty header line");
      body = body.substr(start);
      const auto eq = body.find('=');
      if (eq == std::string::npos) parse_fail(lineno, "header line without '='");
      const std::string key = body.substr(0, eq);
      const std::string val = body.substr(eq + 1);
      RunHeader& h = run.header;
      try {
        if (key == "format_version") h.format_version = std::stoi(val);
        else if (key == "tau_res_s") h.tau_res_s = std::stod(val);
        else if (key == "rp_hz") h.rp_hz = std::stod(val);
        else if (key == "tau_pulse_s") h.tau_pulse_s = std::stod(val);
        else if (key == "L_m") h.l_m = std::stod(val);
        else if (key == "duration_s") h.duration_s = std::stod(val);
        else if (key == "setting_a_rad") h.setting_a_rad = std::stod(val);
        else if (key == "setting_b_rad") h.setting_b_rad = std::stod(val);
        else if (key == "source") h.source = val;
        else if (key == "seed") h.seed = std::stoull(val);
        else parse_fail(lineno, "unknown header key '" + key + "'");
      } catch (const std::invalid_argument&) {
        parse_fail(lineno, "malformed header value for '" + key + "'");
      }
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) parse_fail(lineno, "event line without ','");
    const auto ch = parse_channel(line.substr(0, comma));
    if (!ch) parse_fail(lineno, "unknown channel tag '" + line.substr(0, comma) + "'");
    std::int64_t ts = 0;
    const char* first = line.data() + comma + 1;
    const char* last = line.data() + line.size();
    const auto res = std::from_chars(first, last, ts);
    if (res.ec != std::errc{} || res.ptr != last)
      parse_fail(lineno, "malformed timestamp");
    if (ts < last_ts) parse_fail(lineno, "timestamp regression");
    last_ts = ts;
    run.events.push_back({*ch, ts});
  }
  return run;
}

RunFile read_run(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  return read_run(is);
}

std::vector<EventRecord> events_on(const RunFile& run, Channel c) {
  std::vector<EventRecord> out;
  for (const auto& e : run.events)
    if (e.channel == c) out.push_back(e);
  return out;
}

std::vector<EventRecord> station_events(const RunFile& run, Station s) {
  std::vector<EventRecord> out;
  const Channel plus = s == Station::A ? Channel::APlus : Channel::BPlus;
  const Channel minus = s == Station::A ? Channel::AMinus : Channel::BMinus;
  for (const auto& e : run.events)
    if (e.channel == plus || e.channel == minus) out.push_back(e);
  return out;
}

std::vector<CoincidencePair> match_coincidences(const std::vector<EventRecord>& side_a,
                                                const std::vector<EventRecord>& side_b,
                                                std::int64_t window) {
  if (window < 0) throw std::invalid_argument("window must be >= 0");
  std::vector<CoincidencePair> out;
  std::size_t i = 0, j = 0;
  while (i < side_a.size() && j < side_b.size()) {
    const std::int64_t ta = side_a[i].timestamp;
    const std::int64_t tb = side_b[j].timestamp;
    if (std::llabs(ta - tb) <= window) {
      out.push_back({i, j, ta, tb});
      ++i;
      ++j;
    } else if (ta < tb) {
      ++i;
    } else {
      ++j;
    }
  }
  return out;
}

OffsetHistogram bin_relative_to_pulses(const std::vector<EventRecord>& events,
                                       const std::vector<EventRecord>& markers,
                                       std::int64_t bin_width,
                                       std::int64_t period_ticks) {
  if (markers.empty()) throw std::invalid_argument("no pulse markers");
  if (bin_width < 1) throw std::invalid_argument("bin_width must be >= 1");
  OffsetHistogram hist;
  hist.bin_width = bin_width;
  std::vector<std::int64_t> marker_times;
  marker_times.reserve(markers.size());
  for (const auto& m : markers) marker_times.push_back(m.timestamp);
  for (const auto& e : events) {
    auto it = std::upper_bound(marker_times.begin(), marker_times.end(), e.timestamp);
    if (it == marker_times.begin()) {
      ++hist.orphans;
      continue;
    }
    const std::int64_t offset = e.timestamp - *std::prev(it);
    if (offset > period_ticks) {
      ++hist.orphans;
      continue;
    }
    ++hist.counts[offset / bin_width];
  }
  return hist;
}

namespace {

/// Offset bin of a timestamp relative to the preceding marker, or -1.
std::int64_t offset_bin(std::int64_t ts, const std::vector<std::int64_t>& marker_times,
                        std::int64_t bin_width, std::int64_t period_ticks) {
  auto it = std::upper_bound(marker_times.begin(), marker_times.end(), ts);
  if (it == marker_times.begin()) return -1;
  const std::int64_t offset = ts - *std::prev(it);
  if (offset < 0 || offset > period_ticks) return -1;
  return offset / bin_width;
}

std::vector<std::int64_t> marker_times_of(const RunFile& run) {
  std::vector<std::int64_t> out;
  for (const auto& e : run.events)
    if (e.channel == Channel::Pulse) out.push_back(e.timestamp);
  return out;
}

}  // namespace

std::vector<TimeBinnedEstimate> efficiency_timeseries(const std::vector<RunFile>& runs,
                                                      Station station,
                                                      std::int64_t window,
                                                      std::int64_t bin_width,
                                                      bool correct_accidentals,
                                                      int offset_windows) {
  if (runs.empty()) throw std::invalid_argument("need at least one run");
  std::map<std::int64_t, std::int64_t> singles_a, singles_b;
  std::map<std::int64_t, double> coinc;
  double tau_res = runs.front().header.tau_res_s;
  for (const auto& run : runs) {
    const auto markers = marker_times_of(run);
    if (markers.empty()) throw std::invalid_argument("run has no pulse markers");
    const std::int64_t period = run.header.period_ticks();
    const auto ev_a = station_events(run, Station::A);
    const auto ev_b = station_events(run, Station::B);
    for (const auto& e : ev_a) {
      const auto b = offset_bin(e.timestamp, markers, bin_width, period);
      if (b >= 0) ++singles_a[b];
    }
    for (const auto& e : ev_b) {
      const auto b = offset_bin(e.timestamp, markers, bin_width, period);
      if (b >= 0) ++singles_b[b];
    }
    const auto pairs = match_coincidences(ev_a, ev_b, window);
    for (const auto& p : pairs) {
      const std::int64_t ts = station == Station::A ? p.time_a : p.time_b;
      const auto b = offset_bin(ts, markers, bin_width, period);
      if (b >= 0) coinc[b] += 1.0;
    }
    if (correct_accidentals) {
      for (const auto& cb : accidental_correction(run, window, bin_width, offset_windows))
        coinc[cb.bin] -= cb.accidental;
    }
  }
  std::vector<TimeBinnedEstimate> out;
  const auto& singles = station == Station::A ? singles_a : singles_b;
  for (const auto& [bin, n_single] : singles) {
    if (n_single <= 0) continue;
    TimeBinnedEstimate est;
    est.bin_center_s = (static_cast<double>(bin) + 0.5) * static_cast<double>(bin_width) * tau_res;
    est.singles_a = singles_a.count(bin) ? singles_a.at(bin) : 0;
    est.singles_b = singles_b.count(bin) ? singles_b.at(bin) : 0;
    double c = coinc.count(bin) ? coinc.at(bin) : 0.0;
    if (c < 0.0) c = 0.0;
    est.coincidences = c;
    const double n = static_cast<double>(n_single);
    est.eta = c / n;
    const double p = std::clamp(est.eta, 0.0, 1.0);
    est.eta_err = std::sqrt(p * (1.0 - p) / n);
    out.push_back(est);
  }
  return out;
}

std::vector<TimeBinnedEstimate> chsh_timeseries(const std::vector<RunFile>& runs,
                                                std::int64_t window,
                                                std::int64_t bin_width) {
  if (runs.size() != 4) throw std::invalid_argument("need exactly four runs");
  std::set<double> a_vals, b_vals;
  for (const auto& r : runs) {
    a_vals.insert(r.header.setting_a_rad);
    b_vals.insert(r.header.setting_b_rad);
  }
  if (a_vals.size() != 2 || b_vals.size() != 2)
    throw std::invalid_argument("runs must cover two settings per station");
  const double a0 = *a_vals.begin(), a1 = *std::next(a_vals.begin());
  const double b0 = *b_vals.begin(), b1 = *std::next(b_vals.begin());
  // setting index: 0=(a,b) 1=(a,b') 2=(a',b) 3=(a',b')
  auto setting_index = [&](const RunHeader& h) {
    const int ia = h.setting_a_rad == a0 ? 0 : 1;
    const int ib = h.setting_b_rad == b0 ? 0 : 1;
    return ia * 2 + ib;
  };
  std::array<const RunFile*, 4> by_setting{};
  for (const auto& r : runs) by_setting[setting_index(r.header)] = &r;
  for (int s = 0; s < 4; ++s)
    if (!by_setting[s])
      throw std::invalid_argument("missing setting pair index " + std::to_string(s));

  // per setting, per bin: counts[portA][portB]
  std::array<std::map<std::int64_t, std::array<std::array<double, 2>, 2>>, 4> counts;
  double tau_res = runs.front().header.tau_res_s;
  for (int s = 0; s < 4; ++s) {
    const RunFile& run = *by_setting[s];
    const auto markers = marker_times_of(run);
    if (markers.empty()) throw std::invalid_argument("run has no pulse markers");
    const std::int64_t period = run.header.period_ticks();
    const auto ev_a = station_events(run, Station::A);
    const auto ev_b = station_events(run, Station::B);
    for (const auto& p : match_coincidences(ev_a, ev_b, window)) {
      const int pa = ev_a[p.index_a].channel == Channel::APlus ? 0 : 1;
      const int pb = ev_b[p.index_b].channel == Channel::BPlus ? 0 : 1;
      const auto bin = offset_bin(p.time_a, markers, bin_width, period);
      if (bin >= 0) counts[s][bin][pa][pb] += 1.0;
    }
  }
  std::set<std::int64_t> bins;
  for (const auto& m : counts)
    for (const auto& [bin, _] : m) bins.insert(bin);

  std::vector<TimeBinnedEstimate> out;
  for (const auto bin : bins) {
    TimeBinnedEstimate est;
    est.bin_center_s = (static_cast<double>(bin) + 0.5) * static_cast<double>(bin_width) * tau_res;
    std::array<SettingCounts, 4> sc{};
    bool any_empty = false;
    double total = 0.0;
    for (int s = 0; s < 4; ++s) {
      const auto it = counts[s].find(bin);
      double n_setting = 0.0;
      if (it != counts[s].end()) {
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j) {
            sc[s].n[i][j] = it->second[i][j];
            n_setting += it->second[i][j];
          }
      }
      if (n_setting < 10.0) est.low_count = true;
      if (n_setting <= 0.0) any_empty = true;
      total += n_setting;
    }
    est.coincidences = total;
    if (!any_empty) {
      const auto ch = chsh_from_counts(sc);
      est.s_chsh = ch.s;
      est.s_chsh_err = ch.stderr_;
    }
    out.push_back(est);
  }
  return out;
}

std::vector<CorrectedBin> accidental_correction(const RunFile& run, std::int64_t window,
                                                std::int64_t bin_width,
                                                int offset_windows) {
  if (offset_windows < 1) throw std::invalid_argument("offset_windows must be >= 1");
  const auto markers = marker_times_of(run);
  if (markers.empty()) throw std::invalid_argument("run has no pulse markers");
  const std::int64_t period = run.header.period_ticks();
  const auto ev_a = station_events(run, Station::A);
  auto ev_b = station_events(run, Station::B);

  std::map<std::int64_t, double> raw, shifted;
  for (const auto& p : match_coincidences(ev_a, ev_b, window)) {
    const auto bin = offset_bin(p.time_a, markers, bin_width, period);
    if (bin >= 0) raw[bin] += 1.0;
  }
  for (int k = 1; k <= offset_windows; ++k) {
    std::vector<EventRecord> delayed = ev_b;
    for (auto& e : delayed) e.timestamp += static_cast<std::int64_t>(k) * period;
    for (const auto& p : match_coincidences(ev_a, delayed, window)) {
      const auto bin = offset_bin(p.time_a, markers, bin_width, period);
      if (bin >= 0) shifted[bin] += 1.0 / offset_windows;
    }
  }
  std::set<std::int64_t> bins;
  for (const auto& [b, _] : raw) bins.insert(b);
  for (const auto& [b, _] : shifted) bins.insert(b);
  std::vector<CorrectedBin> out;
  for (const auto b : bins) {
    CorrectedBin cb;
    cb.bin = b;
    cb.raw = raw.count(b) ? raw.at(b) : 0.0;
    cb.accidental = shifted.count(b) ? shifted.at(b) : 0.0;
    cb.corrected = cb.raw - cb.accidental;
    if (cb.corrected < 0.0) {
      cb.corrected = 0.0;
      cb.clamped = true;
    }
    out.push_back(cb);
  }
  return out;
}

std::vector<PlanFinding> plan_check(const ExperimentPlan& plan) {
  for (double v : {plan.tau_res, plan.tau_rf, plan.tau, plan.tau_pulse,
                   plan.rp_inverse, plan.tau_d_assumed})
    if (!(v > 0.0)) throw std::invalid_argument("plan fields must be positive");

  std::vector<PlanFinding> out;
  {
    PlanFinding f;
    f.check = "tau_res < tau";
    f.ratio = plan.tau / plan.tau_res;
    f.severity = plan.tau_res < plan.tau ? PlanSeverity::Ok : PlanSeverity::Violation;
    f.message = f.severity == PlanSeverity::Ok
                    ? "timestamp resolution finer than the reaction delay"
                    : "timestamp resolution coarser than the reaction delay";
    out.push_back(f);
  }
  auto much_less = [&](const std::string& name, double small, double big) {
    PlanFinding f;
    f.check = name;
    f.ratio = big / small;
    if (f.ratio >= 10.0) {
      f.severity = PlanSeverity::Ok;
      f.message = "separation factor >= 10";
    } else if (f.ratio >= 3.0) {
      f.severity = PlanSeverity::Warning;
      f.message = "separation factor between 3 and 10";
    } else {
      f.severity = PlanSeverity::Violation;
      f.message = "separation factor below 3";
    }
    out.push_back(f);
  };
  much_less("tau_rf << tau", plan.tau_rf, plan.tau);
  much_less("tau << tau_pulse", plan.tau, plan.tau_pulse);
  much_less("tau_pulse << rp_inverse", plan.tau_pulse, plan.rp_inverse);
  much_less("tau_d << rp_inverse", plan.tau_d_assumed, plan.rp_inverse);
  return out;
}

}  // namespace ablab::timetag
