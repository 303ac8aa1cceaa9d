#pragma once

// Scenario files, engine dispatch, steady-state extraction and sweeps.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "wgfb/errors.hpp"
#include "wgfb/feedback.hpp"
#include "wgfb/heisenberg.hpp"
#include "wgfb/pulse.hpp"

namespace wgfb {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kSchemaVersion = 1;

enum class Method { Mps, Heisenberg, Both };

struct PulseSpec {
  PulseShape shape;
  unsigned photons = 1;
};

struct Numerics {
  double dt = 0.05;  ///< MPS time step, ps
  double h = 0.01;   ///< Heisenberg RK4 step, ps
  double cutoff = 1e-8;
  std::size_t max_bond = 512;
  std::optional<std::size_t> p;  ///< defaults to photons + 1 (at least 2)
  Coupling coupling = Coupling::Matched;
  double truncation_alarm = 1e-3;
};

struct Scenario {
  Method method = Method::Mps;
  double gamma = 4.0;
  double tau = 2.0;
  double phi_over_2pi = 0.0;
  double t_max = 100.0;
  bool feedback = true;
  cplx c_g = 0.0, c_e = 1.0;
  std::optional<PulseSpec> pulse;
  Numerics numerics;
  std::string trace_path = "trace.csv";
  std::string summary_path = "summary.json";
  std::vector<std::string> warnings;

  unsigned photons() const { return pulse ? pulse->photons : 0u; }
  std::size_t bin_dim() const { return numerics.p.value_or(std::max<std::size_t>(2, photons() + 1)); }

  PhysicsParams physics(double step) const {
    PhysicsParams pp;
    pp.gamma = gamma;
    pp.tau = tau;
    pp.phi = 2.0 * std::numbers::pi * phi_over_2pi;
    pp.dt = step;
    pp.t_max = t_max;
    pp.feedback = feedback;
    return pp;
  }

  std::size_t delay_steps_mps() const { return PhysicsParams::delay_steps_for(tau, numerics.dt); }
  std::size_t delay_steps_heisenberg() const { return PhysicsParams::delay_steps_for(tau, numerics.h); }
};

inline const char* to_string(Method m) {
  switch (m) {
    case Method::Mps: return "mps";
    case Method::Heisenberg: return "heisenberg";
    default: return "both";
  }
}

namespace detail {

using nlohmann::json;

/// 1-based line of the first occurrence of "key" in the source text.
inline std::size_t key_line(const std::string& text, const std::string& key) {
  const auto pos = text.find('"' + key + '"');
  if (pos == std::string::npos) return 0;
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
}

class Reader {
 public:
  explicit Reader(const std::string& text) : text_(text) {}

  [[noreturn]] void fail(const std::string& path, const std::string& msg) const {
    const auto leaf = path.substr(path.find_last_of('.') + 1);
    const auto line = key_line(text_, leaf);
    throw ConfigError((line ? "line " + std::to_string(line) + ": " : std::string()) + "'" + path + "': " + msg);
  }

  void check_keys(const json& obj, const std::string& prefix, const std::set<std::string>& allowed) const {
    if (!obj.is_object()) fail(prefix.empty() ? "<root>" : prefix, "expected an object");
    for (const auto& [k, v] : obj.items()) {
      (void)v;
      if (!allowed.count(k)) fail(join(prefix, k), "unknown key");
    }
  }

  double number(const json& obj, const std::string& prefix, const std::string& key, std::optional<double> def) const {
    if (!obj.contains(key)) {
      if (!def) fail(join(prefix, key), "missing required field");
      return *def;
    }
    const auto& v = obj.at(key);
    if (!v.is_number()) fail(join(prefix, key), "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) fail(join(prefix, key), "must be finite");
    return x;
  }

  bool boolean(const json& obj, const std::string& prefix, const std::string& key, bool def) const {
    if (!obj.contains(key)) return def;
    if (!obj.at(key).is_boolean()) fail(join(prefix, key), "expected true or false");
    return obj.at(key).get<bool>();
  }

  std::string string(const json& obj, const std::string& prefix, const std::string& key,
                     std::optional<std::string> def) const {
    if (!obj.contains(key)) {
      if (!def) fail(join(prefix, key), "missing required field");
      return *def;
    }
    if (!obj.at(key).is_string()) fail(join(prefix, key), "expected a string");
    return obj.at(key).get<std::string>();
  }

  cplx complex(const json& obj, const std::string& prefix, const std::string& key) const {
    if (!obj.contains(key)) fail(join(prefix, key), "missing required field");
    const auto& v = obj.at(key);
    if (v.is_number()) return v.get<double>();
    if (v.is_array() && v.size() == 2 && v[0].is_number() && v[1].is_number())
      return {v[0].get<double>(), v[1].get<double>()};
    fail(join(prefix, key), "expected a number or [re, im]");
  }

  static std::string join(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
  }

 private:
  const std::string& text_;
};

}  // namespace detail

/// Parse and validate a scenario. Errors name the offending key and line.
inline Scenario parse_scenario(const std::string& text) {
  using nlohmann::json;
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
  const detail::Reader rd(text);
  rd.check_keys(root, "",
                {"schema_version", "method", "gamma", "tau", "phi_over_2pi", "t_max", "feedback", "initial", "pulse",
                 "numerics", "outputs"});
  Scenario s;
  if (root.contains("schema_version")) {
    const double v = rd.number(root, "", "schema_version", std::nullopt);
    if (v != kSchemaVersion) rd.fail("schema_version", "unsupported version " + std::to_string(v));
  }
  const auto method = rd.string(root, "", "method", std::nullopt);
  if (method == "mps")
    s.method = Method::Mps;
  else if (method == "heisenberg")
    s.method = Method::Heisenberg;
  else if (method == "both")
    s.method = Method::Both;
  else
    rd.fail("method", "expected one of mps, heisenberg, both");
  s.gamma = rd.number(root, "", "gamma", std::nullopt);
  s.tau = rd.number(root, "", "tau", std::nullopt);
  s.phi_over_2pi = rd.number(root, "", "phi_over_2pi", std::nullopt);
  s.t_max = rd.number(root, "", "t_max", 100.0);
  s.feedback = rd.boolean(root, "", "feedback", true);
  if (!(s.gamma >= 0.0)) rd.fail("gamma", "must be >= 0");
  if (!(s.tau > 0.0)) rd.fail("tau", "must be > 0");
  if (!(s.t_max > 0.0)) rd.fail("t_max", "must be > 0");

  if (!root.contains("initial")) rd.fail("initial", "missing required field");
  const auto& init = root.at("initial");
  if (init.is_string()) {
    const auto v = init.get<std::string>();
    if (v == "ground") {
      s.c_g = 1.0;
      s.c_e = 0.0;
    } else if (v == "excited") {
      s.c_g = 0.0;
      s.c_e = 1.0;
    } else {
      rd.fail("initial", "expected ground, excited or {c_g, c_e}");
    }
  } else {
    rd.check_keys(init, "initial", {"c_g", "c_e"});
    s.c_g = rd.complex(init, "initial", "c_g");
    s.c_e = rd.complex(init, "initial", "c_e");
    if (std::abs(std::norm(s.c_g) + std::norm(s.c_e) - 1.0) > 1e-12) rd.fail("initial", "|c_g|^2 + |c_e|^2 must be 1");
  }

  if (root.contains("pulse") && !root.at("pulse").is_null()) {
    const auto& pj = root.at("pulse");
    const auto shape = rd.string(pj, "pulse", "shape", std::nullopt);
    PulseSpec ps;
    if (shape == "rectangular") {
      rd.check_keys(pj, "pulse", {"shape", "t_start", "duration", "photons"});
      ps.shape = RectangularPulse{rd.number(pj, "pulse", "t_start", std::nullopt),
                                  rd.number(pj, "pulse", "duration", std::nullopt)};
    } else if (shape == "gaussian") {
      rd.check_keys(pj, "pulse", {"shape", "center", "width", "half_window", "photons"});
      GaussianPulse g;
      g.width = rd.number(pj, "pulse", "width", std::nullopt);
      g.half_window = rd.number(pj, "pulse", "half_window", 5.0);
      g.center = rd.number(pj, "pulse", "center", g.half_window * g.width);
      ps.shape = g;
    } else {
      rd.fail("pulse.shape", "expected rectangular or gaussian");
    }
    const double n = rd.number(pj, "pulse", "photons", std::nullopt);
    if (n < 0 || n != std::floor(n)) rd.fail("pulse.photons", "must be a non-negative integer");
    ps.photons = static_cast<unsigned>(n);
    try {
      validate(ps.shape);
    } catch (const ContractViolation& e) {
      rd.fail("pulse", e.what());
    }
    if (support(ps.shape).first < 0.0) rd.fail("pulse", "pulse support starts before t = 0");
    if (ps.photons > 0) s.pulse = ps;
  }

  if (root.contains("numerics")) {
    const auto& nj = root.at("numerics");
    rd.check_keys(nj, "numerics", {"dt", "h", "cutoff", "max_bond", "p", "coupling", "truncation_alarm"});
    auto& nu = s.numerics;
    nu.dt = rd.number(nj, "numerics", "dt", nu.dt);
    nu.h = rd.number(nj, "numerics", "h", nu.h);
    nu.cutoff = rd.number(nj, "numerics", "cutoff", nu.cutoff);
    const double mb = rd.number(nj, "numerics", "max_bond", static_cast<double>(nu.max_bond));
    if (mb < 1 || mb != std::floor(mb)) rd.fail("numerics.max_bond", "must be a positive integer");
    nu.max_bond = static_cast<std::size_t>(mb);
    if (nj.contains("p")) {
      const double p = rd.number(nj, "numerics", "p", std::nullopt);
      if (p < 2 || p != std::floor(p)) rd.fail("numerics.p", "must be an integer >= 2");
      nu.p = static_cast<std::size_t>(p);
    }
    const auto c = rd.string(nj, "numerics", "coupling", "matched");
    if (c == "matched")
      nu.coupling = Coupling::Matched;
    else if (c == "bare")
      nu.coupling = Coupling::Bare;
    else
      rd.fail("numerics.coupling", "expected matched or bare");
    nu.truncation_alarm = rd.number(nj, "numerics", "truncation_alarm", nu.truncation_alarm);
    if (!(nu.dt > 0.0)) rd.fail("numerics.dt", "must be > 0");
    if (!(nu.h > 0.0)) rd.fail("numerics.h", "must be > 0");
    if (!(nu.cutoff >= 0.0 && nu.cutoff < 1.0)) rd.fail("numerics.cutoff", "must lie in [0, 1)");
  }
  if (root.contains("outputs")) {
    const auto& oj = root.at("outputs");
    rd.check_keys(oj, "outputs", {"trace", "summary"});
    s.trace_path = rd.string(oj, "outputs", "trace", s.trace_path);
    s.summary_path = rd.string(oj, "outputs", "summary", s.summary_path);
  }

  // derived integers
  try {
    if (s.method != Method::Heisenberg) (void)s.delay_steps_mps();
  } catch (const ContractViolation& e) {
    rd.fail(root.contains("numerics") ? "numerics.dt" : "tau", e.what());
  }
  try {
    if (s.method != Method::Mps) (void)s.delay_steps_heisenberg();
  } catch (const ContractViolation& e) {
    rd.fail(root.contains("numerics") ? "numerics.h" : "tau", e.what());
  }
  if (s.method != Method::Heisenberg && s.bin_dim() < s.photons() + 1u)
    rd.fail("numerics.p", "bin dimension too small for " + std::to_string(s.photons()) + " photons");
  if (s.pulse && std::abs(s.c_e) > 0.0) s.warnings.push_back("pulse drives an emitter that is not initially in the ground state");
  if (s.method != Method::Mps && std::abs(s.c_g) > 0.0 && std::abs(s.c_e) > 0.0)
    rd.fail("initial", "the Heisenberg engine needs a definite initial level (ground or excited)");
  return s;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

/// Canonical JSON with every default filled in.
inline nlohmann::json to_json(const Scenario& s) {
  using nlohmann::json;
  json j;
  j["schema_version"] = kSchemaVersion;
  j["method"] = to_string(s.method);
  j["gamma"] = s.gamma;
  j["tau"] = s.tau;
  j["phi_over_2pi"] = s.phi_over_2pi;
  j["t_max"] = s.t_max;
  j["feedback"] = s.feedback;
  if (s.c_g == cplx(1.0) && s.c_e == cplx(0.0))
    j["initial"] = "ground";
  else if (s.c_g == cplx(0.0) && s.c_e == cplx(1.0))
    j["initial"] = "excited";
  else
    j["initial"] = {{"c_g", {s.c_g.real(), s.c_g.imag()}}, {"c_e", {s.c_e.real(), s.c_e.imag()}}};
  if (s.pulse) {
    json p;
    if (const auto* r = std::get_if<RectangularPulse>(&s.pulse->shape)) {
      p = {{"shape", "rectangular"}, {"t_start", r->t_start}, {"duration", r->duration}};
    } else {
      const auto& g = std::get<GaussianPulse>(s.pulse->shape);
      p = {{"shape", "gaussian"}, {"center", g.center}, {"width", g.width}, {"half_window", g.half_window}};
    }
    p["photons"] = s.pulse->photons;
    j["pulse"] = p;
  }
  const auto& nu = s.numerics;
  j["numerics"] = {{"dt", nu.dt},
                   {"h", nu.h},
                   {"cutoff", nu.cutoff},
                   {"max_bond", nu.max_bond},
                   {"p", s.bin_dim()},
                   {"coupling", nu.coupling == Coupling::Matched ? "matched" : "bare"},
                   {"truncation_alarm", nu.truncation_alarm}};
  j["outputs"] = {{"trace", s.trace_path}, {"summary", s.summary_path}};
  return j;
}

inline std::string config_hash(const Scenario& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : to_json(s).dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

struct SteadyStateReport {
  double value = 0.0;
  double t_a = 0.0, t_b = 0.0;  ///< averaging window, ps
  bool converged = false;
  double residual = 0.0;        ///< max |x - value| over the window
};

/// Mean over the final window of length max(tau, 10 ps).
inline SteadyStateReport extract_steady_state(const std::vector<double>& times, const std::vector<double>& values,
                                              double tau, double pulse_end = 0.0) {
  if (times.size() != values.size() || times.size() < 2) throw ContractViolation("steady state: trace is empty");
  const double t_end = times.back();
  const double width = std::max(tau, 10.0);
  if (t_end - pulse_end < 5.0 * tau || t_end - times.front() < width)
    throw ContractViolation("steady state: trace ends at " + std::to_string(t_end) +
                            " ps, too short for the averaging window");
  SteadyStateReport r;
  r.t_b = t_end;
  r.t_a = t_end - width;
  double sum = 0.0;
  std::size_t cnt = 0;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (times[i] >= r.t_a - 1e-9) {
      sum += values[i];
      ++cnt;
    }
  r.value = sum / static_cast<double>(cnt);
  for (std::size_t i = 0; i < times.size(); ++i)
    if (times[i] >= r.t_a - 1e-9) r.residual = std::max(r.residual, std::abs(values[i] - r.value));
  r.converged = r.residual < 0.05 * std::abs(r.value) || std::abs(r.value) < 1e-4;
  return r;
}

/// Least-squares slope of log(x) against t over the part of the trace with
/// x > floor.
inline std::optional<double> fit_decay_rate(const std::vector<double>& times, const std::vector<double>& values,
                                            double floor = 1e-10) {
  double st = 0, sy = 0, stt = 0, sty = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(values[i] > floor)) break;
    const double y = std::log(values[i]);
    st += times[i];
    sy += y;
    stt += times[i] * times[i];
    sty += times[i] * y;
    ++n;
  }
  if (n < 3) return std::nullopt;
  const double dn = static_cast<double>(n);
  return (dn * sty - st * sy) / (dn * stt - st * st);
}

struct EngineRun {
  std::string engine;
  TraceRecord trace;
  double step = 0.0;
  double max_hermiticity_error = 0.0;
};

inline double pulse_end(const Scenario& s) { return s.pulse ? support(s.pulse->shape).second : 0.0; }

inline EngineRun run_mps(const Scenario& s) {
  MpsRunConfig c;
  c.physics = s.physics(s.numerics.dt);
  c.c_g = s.c_g;
  c.c_e = s.c_e;
  if (s.pulse) {
    c.pulse = s.pulse->shape;
    c.photons = s.pulse->photons;
  }
  c.p = s.bin_dim();
  c.policy = {s.numerics.max_bond, s.numerics.cutoff};
  c.coupling = s.numerics.coupling;
  c.truncation_alarm = s.numerics.truncation_alarm;
  return {"mps", run_mps_simulation(c), s.numerics.dt, 0.0};
}

inline EngineRun run_heisenberg(const Scenario& s) {
  HeisenbergConfig c;
  c.physics = s.physics(s.numerics.h);
  c.photons = s.photons();
  c.initial = std::abs(s.c_e) > 0.0 ? Level::Excited : Level::Ground;
  if (s.pulse) c.drive = s.pulse->shape;
  auto r = integrate_dde(c);
  return {"heisenberg", std::move(r.record), s.numerics.h, r.max_hermiticity_error};
}

struct RunResult {
  std::vector<EngineRun> runs;
  std::vector<std::optional<SteadyStateReport>> steady;  ///< empty when the trace is too short
  std::optional<double> max_abs_diff;  ///< both engines, on the MPS grid
  std::optional<double> decay_rate;    ///< fitted d log<E>/dt, vacuum + excited only
  std::vector<std::string> warnings;
};

inline std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(12) << x;
  return os.str();
}

/// Heisenberg values on the MPS time grid; requires dt to be a multiple of h.
inline std::vector<double> resample(const TraceRecord& fine, double h, const TraceRecord& coarse, double dt) {
  const double r = dt / h;
  const auto stride = static_cast<std::size_t>(std::llround(r));
  if (std::abs(r - static_cast<double>(stride)) > 1e-9 * r)
    throw ContractViolation("both: the MPS step must be a multiple of the Heisenberg step");
  std::vector<double> out(coarse.size());
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    const std::size_t j = i * stride;
    if (j >= fine.size()) throw ContractViolation("both: Heisenberg trace shorter than MPS trace");
    out[i] = fine.excitation[j];
  }
  return out;
}

inline RunResult run_scenario(const Scenario& s) {
  RunResult res;
  res.warnings = s.warnings;
  if (s.method != Method::Heisenberg) res.runs.push_back(run_mps(s));
  if (s.method != Method::Mps) res.runs.push_back(run_heisenberg(s));
  for (const auto& r : res.runs) {
    for (const auto& w : r.trace.warnings) res.warnings.push_back(r.engine + ": " + w);
    try {
      res.steady.push_back(extract_steady_state(r.trace.times, r.trace.excitation, s.tau, pulse_end(s)));
    } catch (const ContractViolation& e) {
      res.steady.emplace_back();
      res.warnings.push_back(r.engine + ": no steady state, " + e.what());
    }
  }
  if (s.method == Method::Both) {
    const auto hv = resample(res.runs[1].trace, res.runs[1].step, res.runs[0].trace, res.runs[0].step);
    double m = 0.0;
    for (std::size_t i = 0; i < hv.size(); ++i) m = std::max(m, std::abs(hv[i] - res.runs[0].trace.excitation[i]));
    res.max_abs_diff = m;
  }
  if (!s.pulse && s.c_e == cplx(1.0)) {
    const auto& r = res.runs.back();
    res.decay_rate = fit_decay_rate(r.trace.times, r.trace.excitation);
  }
  return res;
}

inline void write_trace(std::ostream& os, const Scenario& s, const RunResult& res) {
  os << std::setprecision(12);
  if (s.method == Method::Both) {
    const auto& m = res.runs[0];
    const auto hv = resample(res.runs[1].trace, res.runs[1].step, m.trace, m.step);
    os << "t_ps,excitation,max_bond,norm_drift,excitation_heisenberg,abs_diff\n";
    for (std::size_t i = 0; i < m.trace.size(); ++i)
      os << m.trace.times[i] << ',' << m.trace.excitation[i] << ',' << m.trace.max_bond[i] << ','
         << m.trace.norm_drift[i] << ',' << hv[i] << ',' << std::abs(hv[i] - m.trace.excitation[i]) << '\n';
    return;
  }
  const auto& r = res.runs[0];
  os << "t_ps,excitation,max_bond,norm_drift\n";
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    os << r.trace.times[i] << ',' << r.trace.excitation[i] << ',';
    if (r.engine == "mps") os << r.trace.max_bond[i] << ',' << r.trace.norm_drift[i];
    else os << ',';
    os << '\n';
  }
}

inline nlohmann::json summary_json(const Scenario& s, const RunResult& res) {
  using nlohmann::json;
  json j;
  j["provenance"] = {{"config_hash", config_hash(s)}, {"engine", to_string(s.method)}, {"version", kVersion}};
  j["config"] = to_json(s);
  json engines = json::array();
  for (std::size_t i = 0; i < res.runs.size(); ++i) {
    const auto& r = res.runs[i];
    json st = nullptr;
    if (const auto& x = res.steady[i])
      st = {{"value", x->value}, {"window", {x->t_a, x->t_b}}, {"converged", x->converged}, {"residual", x->residual}};
    json e = {{"engine", r.engine}, {"step_ps", r.step}, {"steady_state", st},
              {"final_excitation", r.trace.excitation.back()}};
    if (r.engine == "mps") {
      const auto it = std::max_element(r.trace.max_bond.begin(), r.trace.max_bond.end());
      e["peak_bond"] = *it;
      e["peak_bond_time_ps"] = r.trace.times[static_cast<std::size_t>(it - r.trace.max_bond.begin())];
      e["discarded_weight_total"] = r.trace.discarded_total;
      e["final_norm_drift"] = r.trace.norm_drift.back();
    } else {
      e["max_hermiticity_error"] = r.max_hermiticity_error;
    }
    engines.push_back(e);
  }
  j["engines"] = engines;
  j["steady_state"] = engines[0]["steady_state"];
  if (res.max_abs_diff) j["max_abs_diff"] = *res.max_abs_diff;
  if (res.decay_rate) j["decay_rate_fit"] = *res.decay_rate;
  j["warnings"] = res.warnings;
  return j;
}

inline void write_outputs(const Scenario& s, const RunResult& res, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto tp = dir / s.trace_path, sp = dir / s.summary_path;
  if (tp.has_parent_path()) std::filesystem::create_directories(tp.parent_path());
  if (sp.has_parent_path()) std::filesystem::create_directories(sp.parent_path());
  std::ofstream t(tp);
  if (!t) throw ConfigError("cannot write " + tp.string());
  write_trace(t, s, res);
  std::ofstream j(sp);
  if (!j) throw ConfigError("cannot write " + sp.string());
  j << summary_json(s, res).dump(2) << '\n';
}

// ---- sweeps ----

struct SweepAxis {
  std::vector<double> gamma_tau;
  std::vector<unsigned> photons;
};

/// "a:b:step" inclusive of b (within half a step).
inline std::vector<double> parse_range(const std::string& spec) {
  std::vector<double> parts;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ':')) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("range '" + spec + "': '" + item + "' is not a number");
    }
  }
  if (parts.size() == 1) return parts;
  if (parts.size() != 3 || !(parts[2] > 0.0) || parts[1] < parts[0])
    throw ConfigError("range '" + spec + "': expected start:stop:step with step > 0");
  std::vector<double> out;
  const auto n = static_cast<std::size_t>(std::floor((parts[1] - parts[0]) / parts[2] + 0.5));
  for (std::size_t i = 0; i <= n; ++i) out.push_back(parts[0] + static_cast<double>(i) * parts[2]);
  return out;
}

inline std::vector<unsigned> parse_photons(const std::string& spec) {
  std::vector<unsigned> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long v = std::stol(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(static_cast<unsigned>(v));
    } catch (const std::exception&) {
      throw ConfigError("photon list '" + spec + "': '" + item + "' is not a non-negative integer");
    }
  }
  if (out.empty()) throw ConfigError("photon list is empty");
  return out;
}

/// Largest step <= `step` that divides tau.
inline double fit_step(double tau, double step) {
  const double n = std::ceil(tau / step - 1e-9);
  return tau / n;
}

/// The base scenario at one (gamma tau, n) point: gamma fixed, tau varied.
/// n = 0 means the excited emitter without a pulse; n > 0 drives the ground
/// state with the base pulse shape.
inline Scenario sweep_cell(const Scenario& base, double gamma_tau, unsigned n) {
  if (!(base.gamma > 0.0)) throw ConfigError("sweep: gamma must be > 0");
  Scenario s = base;
  s.warnings.clear();
  s.tau = gamma_tau / base.gamma;
  s.numerics.dt = fit_step(s.tau, base.numerics.dt);
  s.numerics.h = fit_step(s.tau, base.numerics.h);
  if (n == 0) {
    s.pulse.reset();
    s.c_g = 0.0;
    s.c_e = 1.0;
  } else {
    if (!base.pulse) throw ConfigError("sweep: photon numbers > 0 need a pulse in the base scenario");
    s.pulse->photons = n;
    s.c_g = 1.0;
    s.c_e = 0.0;
  }
  if (!base.numerics.p) s.numerics.p.reset();
  if (s.method == Method::Both) s.method = Method::Heisenberg;
  return s;
}

struct SweepRow {
  double gamma_tau = 0.0;
  double tau = 0.0;
  unsigned photons = 0;
  double step = 0.0;
  std::optional<SteadyStateReport> steady;
  std::string error;
};

inline std::size_t worker_count() {
  if (const char* env = std::getenv("SIM_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs every cell in a pool of independent workers. A failing cell records
/// its error and the sweep continues. Rows come back in axis order.
template <class OnCell = std::nullptr_t>
std::vector<SweepRow> sweep(const Scenario& base, const SweepAxis& axis, std::size_t workers = worker_count(),
                            OnCell on_cell = nullptr) {
  std::vector<SweepRow> rows;
  for (unsigned n : axis.photons)
    for (double gt : axis.gamma_tau) rows.push_back({gt, gt / base.gamma, n, 0.0, std::nullopt, {}});
  std::atomic<std::size_t> next{0};
  std::mutex cb_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < rows.size(); i = next++) {
      auto& row = rows[i];
      try {
        const Scenario s = sweep_cell(base, row.gamma_tau, row.photons);
        row.step = s.method == Method::Mps ? s.numerics.dt : s.numerics.h;
        const auto r = s.method == Method::Mps ? run_mps(s) : run_heisenberg(s);
        row.steady = extract_steady_state(r.trace.times, r.trace.excitation, s.tau, pulse_end(s));
        if constexpr (!std::is_same_v<OnCell, std::nullptr_t>) {
          std::lock_guard lock(cb_mutex);
          on_cell(s, r, row);
        }
      } catch (const std::exception& e) {
        row.error = e.what();
      }
    }
  };
  const std::size_t nw = std::max<std::size_t>(1, std::min(workers, rows.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < nw; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return rows;
}

inline void write_sweep_table(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << std::setprecision(12) << "gamma_tau,tau_ps,photons,step_ps,steady_state,converged,residual,error\n";
  for (const auto& r : rows) {
    os << r.gamma_tau << ',' << r.tau << ',' << r.photons << ',' << r.step << ',';
    if (r.steady)
      os << r.steady->value << ',' << (r.steady->converged ? "true" : "false") << ',' << r.steady->residual;
    else
      os << ",,";
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    os << ',' << err << '\n';
  }
}

}  // namespace wgfb
