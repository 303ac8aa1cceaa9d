#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>

#include "wgfb/scenario.hpp"

namespace fs = std::filesystem;

namespace {

std::string cell_name(const wgfb::SweepRow& r) {
  std::ostringstream os;
  os << "gt" << std::fixed << std::setprecision(4) << r.gamma_tau << "_n" << r.photons << ".csv";
  return os.str();
}

int cmd_run(const std::string& config, const std::string& out) {
  const auto s = wgfb::load_scenario(config);
  const auto res = wgfb::run_scenario(s);
  wgfb::write_outputs(s, res, out);
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
  for (std::size_t i = 0; i < res.runs.size(); ++i) {
    std::cout << res.runs[i].engine << ": ";
    if (const auto& st = res.steady[i])
      std::cout << "steady state " << wgfb::fmt(st->value) << (st->converged ? " (converged)" : " (not converged)")
                << " over [" << st->t_a << ", " << st->t_b << "] ps\n";
    else
      std::cout << "no steady state\n";
  }
  if (res.max_abs_diff) std::cout << "max |mps - heisenberg| " << wgfb::fmt(*res.max_abs_diff) << '\n';
  std::cout << "wrote " << (fs::path(out) / s.trace_path).string() << ", " << (fs::path(out) / s.summary_path).string()
            << '\n';
  return 0;
}

int cmd_validate(const std::string& config) {
  const auto s = wgfb::load_scenario(config);
  for (const auto& w : s.warnings) std::cerr << "warning: " << w << '\n';
  std::cout << wgfb::to_json(s).dump(2) << '\n';
  if (s.method != wgfb::Method::Heisenberg) std::cout << "mps delay steps l = " << s.delay_steps_mps() << '\n';
  if (s.method != wgfb::Method::Mps) std::cout << "heisenberg delay steps l = " << s.delay_steps_heisenberg() << '\n';
  std::cout << "config hash " << wgfb::config_hash(s) << '\n';
  return 0;
}

int cmd_sweep(const std::string& config, const std::string& axis, const std::string& photons, const std::string& out,
              bool traces) {
  const auto base = wgfb::load_scenario(config);
  const auto eq = axis.find('=');
  if (eq == std::string::npos || axis.substr(0, eq) != "gamma_tau")
    throw wgfb::ConfigError("--axis must be gamma_tau=start:stop:step");
  wgfb::SweepAxis ax{wgfb::parse_range(axis.substr(eq + 1)), {}};
  ax.photons = photons.empty() ? std::vector<unsigned>{base.photons()} : wgfb::parse_photons(photons);
  fs::create_directories(fs::path(out) / "cells");

  auto on_cell = [&](const wgfb::Scenario& s, const wgfb::EngineRun& r, const wgfb::SweepRow& row) {
    std::cerr << "cell gamma_tau=" << row.gamma_tau << " n=" << row.photons << " -> " << row.steady->value << '\n';
    if (!traces) return;
    wgfb::RunResult rr;
    rr.runs.push_back(r);
    std::ofstream f(fs::path(out) / "cells" / cell_name(row));
    wgfb::write_trace(f, s, rr);
  };
  const auto rows = wgfb::sweep(base, ax, wgfb::worker_count(), on_cell);
  std::ofstream table(fs::path(out) / "sweep.csv");
  wgfb::write_sweep_table(table, rows);
  wgfb::write_sweep_table(std::cout, rows);
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.error.empty() ? 0 : 1;
  if (failed) std::cerr << failed << " cell(s) failed\n";
  return failed ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Emitter with delayed coherent feedback: MPS and Heisenberg engines"};
  app.require_subcommand(1);
  app.set_version_flag("--version", wgfb::kVersion);

  std::string config, out = ".", axis, photons;
  bool traces = false;
  auto* run = app.add_subcommand("run", "Run one scenario and write trace + summary");
  run->add_option("config", config, "Scenario JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out, "Output directory");

  auto* sw = app.add_subcommand("sweep", "Steady state over gamma*tau and photon number");
  sw->add_option("config", config, "Base scenario JSON")->required()->check(CLI::ExistingFile);
  sw->add_option("--axis", axis, "gamma_tau=start:stop:step")->required();
  sw->add_option("--photons", photons, "Comma-separated photon numbers (0 = excited emitter, no pulse)");
  sw->add_option("--out", out, "Output directory");
  sw->add_flag("--traces", traces, "Also write each cell's trace to OUT/cells/");

  auto* val = app.add_subcommand("validate", "Parse a scenario and print it with defaults filled in");
  val->add_option("config", config, "Scenario JSON")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config, out);
    if (*sw) return cmd_sweep(config, axis, photons, out, traces);
    return cmd_validate(config);
  } catch (const wgfb::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const wgfb::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
