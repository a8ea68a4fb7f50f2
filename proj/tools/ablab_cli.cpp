// Command-line front end: simulate trajectories and ensembles, generate and
// analyze time-tag files, run fits, check experiment plans, and run distance
// sweeps. All outputs are CSV / key=value text plus a manifest with content
// hashes, so every run is reproducible from its config.

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ablab/analytics.hpp"
#include "ablab/angle.hpp"
#include "ablab/delay_dynamics.hpp"
#include "ablab/ensemble.hpp"
#include "ablab/hv_core.hpp"
#include "ablab/timetag.hpp"

namespace fs = std::filesystem;
using namespace ablab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitThreshold = 3;

/// Time quantities require a unit suffix (ns, us, ms, s); returns seconds.
double parse_time(const std::string& raw, const std::string& key) {
  auto fail = [&](const std::string& why) -> double {
    throw std::invalid_argument(key + ": " + why + " (got '" + raw + "')");
  };
  double scale = 0.0;
  std::string num;
  if (raw.size() > 2 && raw.compare(raw.size() - 2, 2, "ns") == 0) {
    scale = 1e-9;
    num = raw.substr(0, raw.size() - 2);
  } else if (raw.size() > 2 && raw.compare(raw.size() - 2, 2, "us") == 0) {
    scale = 1e-6;
    num = raw.substr(0, raw.size() - 2);
  } else if (raw.size() > 2 && raw.compare(raw.size() - 2, 2, "ms") == 0) {
    scale = 1e-3;
    num = raw.substr(0, raw.size() - 2);
  } else if (raw.size() > 1 && raw.back() == 's') {
    scale = 1.0;
    num = raw.substr(0, raw.size() - 1);
  } else {
    return fail("time values need a unit suffix (ns, us, ms, s)");
  }
  try {
    std::size_t pos = 0;
    const double v = std::stod(num, &pos);
    if (pos != num.size()) return fail("malformed number");
    return v * scale;
  } catch (const std::exception&) {
    return fail("malformed number");
  }
}

std::uint64_t fnv1a_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot hash " + path.string());
  std::uint64_t h = 1469598103934665603ULL;
  char buf[4096];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
    if (!is) break;
  }
  return h;
}

/// Options with precedence defaults < config file < command-line flags, and
/// rejection of unknown config keys.
class OptionSet {
 public:
  explicit OptionSet(CLI::App* cmd) : cmd_(cmd) {
    cmd->add_option("--config", config_path_, "key=value config file");
    cmd->add_option("--out", out_dir_, "output directory")->capture_default_str();
    seed_opt_ = cmd->add_option("--seed", seed_flag_, "master random seed");
  }

  void add(const std::string& key, const std::string& def, const std::string& desc) {
    defaults_[key] = def;
    std::string flag = "--" + key;
    for (auto& c : flag)
      if (c == '_') c = '-';
    flag_values_[key] = def;
    flag_opts_[key] = cmd_->add_option(flag, flag_values_[key], desc + " [" + def + "]");
  }

  /// Resolve precedence; call after CLI11 parsing.
  void finalize() {
    values_ = defaults_;
    if (!config_path_.empty()) {
      std::ifstream is(config_path_);
      if (!is) throw std::invalid_argument("cannot open config " + config_path_);
      std::string line;
      std::size_t lineno = 0;
      while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
          throw std::invalid_argument("config line " + std::to_string(lineno) +
                                      ": expected key=value");
        const std::string key = line.substr(0, eq);
        if (key == "seed") {
          if (seed_opt_->count() == 0) seed_flag_ = std::stoull(line.substr(eq + 1));
          continue;
        }
        if (!defaults_.count(key))
          throw std::invalid_argument("config line " + std::to_string(lineno) +
                                      ": unknown key '" + key + "'");
        values_[key] = line.substr(eq + 1);
      }
    }
    for (const auto& [key, opt] : flag_opts_)
      if (opt->count() > 0) values_[key] = flag_values_[key];
  }

  const std::string& str(const std::string& key) const { return values_.at(key); }
  double num(const std::string& key) const {
    try {
      return std::stod(values_.at(key));
    } catch (const std::exception&) {
      throw std::invalid_argument(key + ": malformed number '" + values_.at(key) + "'");
    }
  }
  long integer(const std::string& key) const {
    return static_cast<long>(std::llround(num(key)));
  }
  double time_s(const std::string& key) const {
    return parse_time(values_.at(key), key);
  }
  std::uint64_t seed() const { return seed_flag_; }
  fs::path out_dir() const { return out_dir_; }

  void write_manifest(const std::string& command,
                      const std::vector<fs::path>& outputs) const {
    fs::create_directories(out_dir_);
    std::ofstream os(out_dir_ / "manifest.txt");
    os << "command=" << command << '\n';
    os << "seed=" << seed_flag_ << '\n';
    for (const auto& [k, v] : values_) os << k << '=' << v << '\n';
    for (const auto& p : outputs) {
      char hex[32];
      std::snprintf(hex, sizeof hex, "%016llx",
                    static_cast<unsigned long long>(fnv1a_file(p)));
      os << "output " << p.filename().string() << " fnv1a=" << hex << '\n';
    }
  }

  fs::path out_file(const std::string& name) const {
    fs::create_directories(out_dir_);
    return out_dir_ / name;
  }

 private:
  CLI::App* cmd_;
  std::string config_path_;
  fs::path out_dir_ = ".";
  std::uint64_t seed_flag_ = 1;
  CLI::Option* seed_opt_ = nullptr;
  std::map<std::string, std::string> defaults_, values_, flag_values_;
  std::map<std::string, CLI::Option*> flag_opts_;
};

void add_dynamics_keys(OptionSet& os) {
  os.add("tau", "100ns", "reaction delay tau = L/c");
  os.add("gamma_tau", "0.2", "dimensionless coupling gamma*tau");
  os.add("n_substeps", "500", "grid steps per tau (even)");
  os.add("duration_tau", "10", "integration window in units of tau");
  os.add("setting_a", "0", "analyzer setting a (rad)");
  os.add("setting_b", "0.39269908169872414", "analyzer setting b (rad)");
}

void add_model_keys(OptionSet& os) {
  os.add("model", "gaussian", "acceptance model: gaussian | slit");
  os.add("delta", "0.31622776601683794", "acceptance width Delta (rad)");
}

void add_ensemble_keys(OptionSet& os) {
  add_dynamics_keys(os);
  add_model_keys(os);
  os.add("n_pulses", "1000", "number of pulses in the ensemble");
  os.add("initial_spread", "full", "initial mismatch spread: full | unit");
  os.add("average", "per-pulse", "averaging: per-pulse | pooled");
  os.add("station", "A", "station whose efficiency is reported: A | B");
}

PulseEnsembleParams ensemble_params(const OptionSet& os) {
  PulseEnsembleParams p;
  p.tau = os.time_s("tau");
  p.n_substeps = static_cast<int>(os.integer("n_substeps"));
  p.duration = os.num("duration_tau") * p.tau;
  p.drive = DriveSchedule::constant(os.num("gamma_tau") / p.tau);
  p.settings.a = PiecewiseConstant::constant(os.num("setting_a"));
  p.settings.b = PiecewiseConstant::constant(os.num("setting_b"));
  p.master_seed = os.seed();
  const std::string model = os.str("model");
  if (model == "gaussian")
    p.model = DetectionModel::gaussian(os.num("delta"));
  else if (model == "slit")
    p.model = DetectionModel::slit(os.num("delta"));
  else
    throw std::invalid_argument("model: expected gaussian or slit");
  const std::string spread = os.str("initial_spread");
  if (spread == "full")
    p.initial_spread = InitialSpread::FullCircle;
  else if (spread == "unit")
    p.initial_spread = InitialSpread::UnitInterval;
  else
    throw std::invalid_argument("initial_spread: expected full or unit");
  if (os.str("n_pulses") != "")
    p.n_pulses = static_cast<int>(os.integer("n_pulses"));
  return p;
}

Station station_of(const OptionSet& os) {
  const std::string s = os.str("station");
  if (s == "A" || s == "a") return Station::A;
  if (s == "B" || s == "b") return Station::B;
  throw std::invalid_argument("station: expected A or B");
}

int cmd_trajectory(OptionSet& os) {
  os.finalize();
  const double tau = os.time_s("tau");
  const int n = static_cast<int>(os.integer("n_substeps"));
  const double duration = os.num("duration_tau") * tau;
  const auto drive = DriveSchedule::constant(os.num("gamma_tau") / tau);
  const auto a = PiecewiseConstant::constant(os.num("setting_a"));
  const auto b = PiecewiseConstant::constant(os.num("setting_b"));

  Eigen::ArrayXd ha, hb;
  std::uint64_t sa = Rng::derive(os.seed(), 0), sb = Rng::derive(os.seed(), 1);
  if (os.str("history") == "random") {
    Rng ra(sa), rb(sb);
    ha = random_history(ra, n, a(0.0));
    hb = random_history(rb, n, b(0.0));
  } else if (os.str("history") == "constant") {
    ha = Eigen::ArrayXd::Constant(n + 1, os.num("alpha0"));
    hb = Eigen::ArrayXd::Constant(n + 1, os.num("beta0"));
  } else {
    throw std::invalid_argument("history: expected random or constant");
  }
  auto alpha = integrate(tau, n, drive, a, ha, duration);
  auto beta = integrate(tau, n, drive, b, hb, duration);
  alpha.history_seed = sa;
  beta.history_seed = sb;

  const auto path = os.out_file("trajectory.csv");
  std::ofstream out(path);
  write_trajectory_csv(out, alpha, &beta);
  out.close();
  os.write_manifest("trajectory", {path});
  std::cout << "wrote " << path.string()
            << (alpha.divergence_flag || beta.divergence_flag ? " (divergent)" : "")
            << '\n';
  return kExitOk;
}

int cmd_ensemble(OptionSet& os) {
  os.finalize();
  auto p = ensemble_params(os);
  const auto mode = os.str("average") == "pooled" ? AverageMode::Pooled
                    : os.str("average") == "per-pulse"
                        ? AverageMode::PerPulseMean
                        : throw std::invalid_argument(
                              "average: expected per-pulse or pooled");
  const auto curve = ensemble_efficiency(p, station_of(os), mode);

  const auto path = os.out_file("ensemble.csv");
  std::ofstream out(path);
  out << "t_s,eta_mean,eta_stderr,n\n";
  for (Eigen::Index k = 0; k < curve.bin_centers.size(); ++k)
    out << curve.bin_centers[k] << ',' << curve.eta_mean[k] << ','
        << curve.eta_stderr[k] << ',' << curve.n_contributing[k] << '\n';
  out.close();
  os.write_manifest("ensemble", {path});
  std::cout << "wrote " << path.string() << " divergent_fraction="
            << curve.divergent_fraction << '\n';
  if (curve.divergent_fraction > os.num("max_divergent_fraction")) {
    std::cerr << "divergent fraction exceeds bound\n";
    return kExitThreshold;
  }
  return kExitOk;
}

int cmd_generate(OptionSet& os) {
  os.finalize();
  PhotonStreamParams p;
  p.base = ensemble_params(os);
  p.emission_prob_per_bin = os.num("emission_prob");
  p.tau_res = os.time_s("tau_res");
  p.pulse_period = os.time_s("pulse_period");
  p.time_unit_s = 1.0;
  if (p.emission_prob_per_bin > 0.1)
    std::cerr << "warning: emission_prob > 0.1, double emissions per bin are "
                 "no longer negligible\n";
  const auto run = generate_photon_stream(p);
  const auto path = os.out_file(os.str("out_name"));
  timetag::write_run(path.string(), run);
  os.write_manifest("generate", {path});
  std::cout << "wrote " << path.string() << " (" << run.events.size()
            << " events)\n";
  return kExitOk;
}

int cmd_analyze(OptionSet& os, const std::vector<std::string>& inputs) {
  os.finalize();
  if (inputs.empty()) throw std::invalid_argument("analyze needs input run files");
  std::vector<timetag::RunFile> runs;
  for (const auto& f : inputs) runs.push_back(timetag::read_run(f));
  const auto window = os.integer("window");
  const auto bin_width = os.integer("bin_width");
  const bool accidentals = os.str("accidentals") == "on";

  std::vector<fs::path> outputs;
  const auto eta = timetag::efficiency_timeseries(
      runs, station_of(os), window, bin_width, accidentals,
      static_cast<int>(os.integer("offset_windows")));
  const auto eta_path = os.out_file("eta_timeseries.csv");
  {
    std::ofstream out(eta_path);
    out << "t_s,eta,eta_err,singles_a,singles_b,coincidences\n";
    for (const auto& b : eta)
      out << b.bin_center_s << ',' << b.eta << ',' << b.eta_err << ','
          << b.singles_a << ',' << b.singles_b << ',' << b.coincidences << '\n';
  }
  outputs.push_back(eta_path);

  if (runs.size() == 4) {
    const auto chsh = timetag::chsh_timeseries(runs, window, bin_width);
    const auto chsh_path = os.out_file("chsh_timeseries.csv");
    std::ofstream out(chsh_path);
    out << "t_s,s_chsh,s_err,coincidences,low_count\n";
    for (const auto& b : chsh) {
      out << b.bin_center_s << ',';
      if (b.s_chsh) out << *b.s_chsh << ',' << *b.s_chsh_err;
      else out << ",";
      out << ',' << b.coincidences << ',' << (b.low_count ? 1 : 0) << '\n';
    }
    outputs.push_back(chsh_path);
  }
  os.write_manifest("analyze", outputs);
  std::cout << "wrote " << outputs.size() << " file(s) to "
            << os.out_dir().string() << '\n';
  return kExitOk;
}

int cmd_fit(OptionSet& os, const std::vector<std::string>& inputs) {
  os.finalize();
  if (inputs.size() != 1) throw std::invalid_argument("fit needs one input CSV");
  std::ifstream is(inputs[0]);
  if (!is) throw std::invalid_argument("cannot open " + inputs[0]);
  std::vector<double> t, y;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#' || std::isalpha(line[0])) continue;
    std::istringstream ls(line);
    std::string ts, ys;
    if (!std::getline(ls, ts, ',') || !std::getline(ls, ys, ',')) continue;
    t.push_back(std::stod(ts));
    y.push_back(std::stod(ys));
  }
  Eigen::ArrayXd times = Eigen::Map<Eigen::ArrayXd>(t.data(), t.size());
  Eigen::ArrayXd eta = Eigen::Map<Eigen::ArrayXd>(y.data(), y.size());
  const double tau = os.time_s("tau");
  const auto range = os.str("range") == "full" ? MismatchRange::FullCircle
                     : os.str("range") == "unit"
                         ? MismatchRange::UnitRange
                         : throw std::invalid_argument("range: expected full or unit");
  const auto fit = fit_efficiency_curve(times, eta, tau, range, os.num("factor"));

  const auto path = os.out_file("fit.txt");
  std::ofstream out(path);
  out << "eta0=" << fit.eta0 << '\n';
  out << "slope_per_s=" << fit.slope << '\n';
  out << "rate_per_s=" << fit.rate << '\n';
  out << "delta_est=" << fit.delta_est << '\n';
  out << "gamma_est_per_s=" << fit.gamma_est << '\n';
  out << "linearized_delta_est=" << fit.linearized.delta_est << '\n';
  out << "linearized_gamma_est_per_s=" << fit.linearized.gamma_est << '\n';
  out << "correction_factor=" << fit.linearized.correction_factor << '\n';
  out.close();
  std::cout << std::ifstream(path).rdbuf();
  os.write_manifest("fit", {path});
  return kExitOk;
}

int cmd_plan(OptionSet& os) {
  os.finalize();
  timetag::ExperimentPlan plan;
  plan.tau_res = os.time_s("tau_res");
  plan.tau_rf = os.time_s("tau_rf");
  plan.tau = os.time_s("tau");
  plan.tau_pulse = os.time_s("tau_pulse");
  plan.rp_inverse = os.time_s("rp_inverse");
  plan.tau_d_assumed = os.time_s("tau_d");
  const auto findings = timetag::plan_check(plan);

  const auto path = os.out_file("plan.txt");
  std::ofstream out(path);
  bool violated = false;
  for (const auto& f : findings) {
    const char* sev = f.severity == timetag::PlanSeverity::Ok        ? "ok"
                      : f.severity == timetag::PlanSeverity::Warning ? "warning"
                                                                     : "violation";
    out << sev << ' ' << f.check << " ratio=" << f.ratio << " : " << f.message
        << '\n';
    violated = violated || f.severity == timetag::PlanSeverity::Violation;
  }
  out.close();
  std::cout << std::ifstream(path).rdbuf();
  os.write_manifest("plan", {path});
  return violated ? kExitThreshold : kExitOk;
}

int cmd_sweep(OptionSet& os) {
  os.finalize();
  auto base = ensemble_params(os);
  std::vector<double> taus;
  std::stringstream ss(os.str("tau_values"));
  std::string item;
  while (std::getline(ss, item, ','))
    taus.push_back(parse_time(item, "tau_values"));
  const std::string mode_s = os.str("mode");
  const auto mode = mode_s == "gamma-fixed" ? SweepMode::GammaFixed
                    : mode_s == "gamma-tau-fixed"
                        ? SweepMode::GammaTauFixed
                        : throw std::invalid_argument(
                              "mode: expected gamma-fixed or gamma-tau-fixed");
  const auto rows = distance_sweep(base, taus, mode);

  const auto path = os.out_file("sweep.csv");
  std::ofstream out(path);
  out << "tau_s,saturation_time_s,oscillation_period_s\n";
  for (const auto& r : rows) {
    out << r.tau << ',';
    if (r.saturation_time) out << *r.saturation_time;
    out << ',';
    if (r.oscillation_period) out << *r.oscillation_period;
    out << '\n';
  }
  out.close();
  std::cout << std::ifstream(path).rdbuf();
  os.write_manifest("sweep", {path});
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Delayed-reaction hidden-variable laboratory"};
  app.require_subcommand(1);

  auto* c_traj = app.add_subcommand("trajectory", "integrate one (alpha, beta) pair");
  OptionSet o_traj(c_traj);
  add_dynamics_keys(o_traj);
  o_traj.add("history", "random", "pre-reaction history: random | constant");
  o_traj.add("alpha0", "0", "constant-history value for alpha");
  o_traj.add("beta0", "0", "constant-history value for beta");

  auto* c_ens = app.add_subcommand("ensemble", "mean efficiency over many pulses");
  OptionSet o_ens(c_ens);
  add_ensemble_keys(o_ens);
  o_ens.add("max_divergent_fraction", "1", "exit 3 if exceeded");

  auto* c_gen = app.add_subcommand("generate", "simulate a time-tag run file");
  OptionSet o_gen(c_gen);
  add_ensemble_keys(o_gen);
  o_gen.add("emission_prob", "0.02", "pair-emission probability per tau_res bin");
  o_gen.add("tau_res", "2ns", "timestamp resolution");
  o_gen.add("pulse_period", "4us", "pump pulse period R_p^-1");
  o_gen.add("out_name", "run.tt", "output file name");

  std::vector<std::string> analyze_inputs, fit_inputs;
  auto* c_ana = app.add_subcommand("analyze", "time-resolved eta / CHSH from run files");
  OptionSet o_ana(c_ana);
  c_ana->add_option("files", analyze_inputs, "input run files");
  o_ana.add("window", "1", "coincidence window (ticks)");
  o_ana.add("bin_width", "1", "pulse-relative bin width (ticks)");
  o_ana.add("station", "A", "station whose efficiency is reported: A | B");
  o_ana.add("accidentals", "off", "offset-window correction: on | off");
  o_ana.add("offset_windows", "4", "number of offset windows");

  auto* c_fit = app.add_subcommand("fit", "invert an efficiency curve to (Delta, Gamma)");
  OptionSet o_fit(c_fit);
  c_fit->add_option("file", fit_inputs, "input CSV (t, eta)");
  o_fit.add("tau", "100ns", "reaction delay used by the fit");
  o_fit.add("range", "full", "initial mismatch range: full | unit");
  o_fit.add("factor", "1", "instrumental correction factor (>= 1)");

  auto* c_plan = app.add_subcommand("plan", "check the timing hierarchy of a plan");
  OptionSet o_plan(c_plan);
  o_plan.add("tau_res", "2ns", "timestamp resolution");
  o_plan.add("tau_rf", "2ns", "pump rise/fall time");
  o_plan.add("tau", "200ns", "reaction delay L/c");
  o_plan.add("tau_pulse", "2us", "pump pulse duration");
  o_plan.add("rp_inverse", "20us", "pump pulse period");
  o_plan.add("tau_d", "1us", "assumed memory decay time");

  auto* c_sweep = app.add_subcommand("sweep", "saturation time / period vs tau");
  OptionSet o_sweep(c_sweep);
  add_ensemble_keys(o_sweep);
  o_sweep.add("tau_values", "100ns,200ns", "comma-separated tau values");
  o_sweep.add("mode", "gamma-tau-fixed", "gamma-fixed | gamma-tau-fixed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (c_traj->parsed()) return cmd_trajectory(o_traj);
    if (c_ens->parsed()) return cmd_ensemble(o_ens);
    if (c_gen->parsed()) return cmd_generate(o_gen);
    if (c_ana->parsed()) return cmd_analyze(o_ana, analyze_inputs);
    if (c_fit->parsed()) return cmd_fit(o_fit, fit_inputs);
    if (c_plan->parsed()) return cmd_plan(o_plan);
    if (c_sweep->parsed()) return cmd_sweep(o_sweep);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}
