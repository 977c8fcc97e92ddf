// phaseslip: solve | ratio-scan | devices | validate
//
// Exit codes: 0 success, 1 domain or numerical failure, 2 configuration error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "phaseslip/pipeline.hpp"

namespace ps = phaseslip;
namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config;
  std::string out;
  bool no_cache = false;
  int workers = 0;
  std::vector<std::string> devices;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
  sub->add_option("--out", f.out, "output directory (overrides output_dir)");
  sub->add_flag("--no-cache", f.no_cache, "ignore and do not write the trajectory cache");
  sub->add_option("--workers", f.workers, "concurrent sweep points")->check(CLI::Range(1, 256));
  sub->add_option("--device", f.devices, "device name from the table (repeatable for devices)");
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  f << s;
}

template <class F>
std::string render(F&& f) {
  std::ostringstream s;
  f(s);
  return s.str();
}

void finish(const std::string& cmd, const ps::RunConfig& c, const fs::path& dir, const std::vector<std::string>& files,
            const std::vector<std::string>& warnings) {
  write_text(dir / "metadata.json", ps::run_metadata(cmd, c, dir, files, warnings).dump(2) + "\n");
}

int cmd_solve(const ps::RunConfig& c, const fs::path& dir, const ps::TrajectoryCache& cache, ps::Log& log) {
  const auto cp = ps::params_from_config(c);
  const auto r = ps::run_point(cp, c.grid, ps::probe_grid(c, cp.omega0), cache, log);
  const auto key = ps::TrajectoryCache::key(ps::SolverParams::from(cp), r.traj.grid, c.grid);

  write_text(dir / "trajectory.csv", render([&](std::ostream& o) { ps::write_trajectory(o, r.traj, key); }));
  write_text(dir / "spectral.csv", render([&](std::ostream& o) {
               o.precision(17);
               o << "omega,re_dphi0,im_dphi0\n";
               for (std::size_t i = 0; i < r.spec.omegas.size(); ++i)
                 o << r.spec.omegas[i] << ',' << r.spec.values[i].real() << ',' << r.spec.values[i].imag() << '\n';
             }));
  ps::json fit = {{"p", r.fit.p},
                  {"alpha", r.fit.alpha},
                  {"window_lo", r.fit.window_lo},
                  {"window_hi", r.fit.window_hi},
                  {"w_scale", r.fit.w_scale},
                  {"rms_residual", r.fit.rms_residual},
                  {"warnings", r.fit.warnings}};
  write_text(dir / "continuation.json", fit.dump(2) + "\n");
  write_text(dir / "mode_factors.csv", render([&](std::ostream& o) { ps::write_mode_factors(o, r.modes); }));
  write_text(dir / "rates.csv", render([&](std::ostream& o) { ps::write_rates(o, r.rates); }));

  std::ostringstream s;
  s.precision(10);
  s << "omega0 " << cp.omega0 << " GHz, E_C " << cp.E_C << ", E_J " << cp.E_J << ", gamma0 " << cp.gamma0
    << ", z " << cp.z << "\n"
    << "v " << cp.v << ", delta " << cp.delta << ", modes " << r.modes.omegas.size() << ", T " << cp.T << " GHz\n"
    << "solver " << ps::to_string(r.traj.method) << ": iterations " << r.traj.iterations << ", residual "
    << r.traj.residual << ", equation residual " << r.traj.equation_residual << "\n"
    << "grid: tau_max " << r.traj.grid.tau_max << " ns, points " << r.traj.grid.n_points << "\n"
    << "antisymmetry error " << r.traj.antisymmetry_error() << ", tail coefficient " << r.traj.tail_coefficient()
    << "\n"
    << "continuation p=" << r.fit.p << " rms " << r.fit.rms_residual << " coefficients";
  for (double a : r.fit.alpha) s << ' ' << a;
  s << "\n"
    << "dS1 " << r.action.dS1 << ", dS2 " << r.action.dS2 << ", dS_apprx " << r.action.dS_apprx << "\n"
    << "lambda0 " << r.rates.lambda0 << ", lambda_star " << r.rates.lambda_star << "\n";
  for (const auto& w : r.warnings) s << "warning: " << w << "\n";
  write_text(dir / "summary.txt", s.str());

  finish("solve", c, dir,
         {"trajectory.csv", "spectral.csv", "continuation.json", "mode_factors.csv", "rates.csv", "summary.txt"},
         r.warnings);
  std::cout << s.str();
  return 0;
}

int cmd_scan(const ps::RunConfig& c, const fs::path& dir, const ps::TrajectoryCache& cache, ps::Log& log) {
  const auto rows = ps::ratio_scan(c, cache, log);
  write_text(dir / "ratio_scan.csv", render([&](std::ostream& o) { ps::write_scan_csv(o, rows); }));
  std::vector<std::string> warnings;
  int failed = 0;
  for (const auto& r : rows)
    if (r.status.rfind("error", 0) == 0) {
      ++failed;
      warnings.push_back("gamma_ratio " + ps::fmt(r.gamma_ratio, 4) + ": " + r.status);
    }
  finish("ratio-scan", c, dir, {"ratio_scan.csv"}, warnings);
  for (const auto& r : rows)
    std::printf("gamma0/omega0=%-6g ratio=%-10.6g f2=%-10.6g action=%-10.6g %s\n", r.gamma_ratio, r.ratio,
                r.f2_ratio, r.action_ratio, r.status.c_str());
  return failed ? 1 : 0;
}

int cmd_devices(const ps::RunConfig& c, const std::vector<std::string>& only, const fs::path& dir,
                const ps::TrajectoryCache& cache, ps::Log& log) {
  const auto table = ps::load_device_table(c.device_table);
  for (const auto& n : only) ps::find_device(table, n);
  const auto res = ps::device_sweeps(c, table, only, cache, log);
  fs::create_directories(dir / "devices");
  std::vector<std::string> files{"devices_summary.csv"};
  std::vector<std::string> warnings;
  int failed = 0;
  for (const auto& d : res) {
    const std::string f = "devices/" + d.row.name + ".csv";
    write_text(dir / f, render([&](std::ostream& o) { ps::write_device_csv(o, d); }));
    files.push_back(f);
    for (const auto& w : d.warnings) warnings.push_back(d.row.name + ": " + w);
    for (const auto& w : d.skipped) warnings.push_back(d.row.name + ": skipped " + w);
    if (!d.error.empty()) ++failed;
  }
  write_text(dir / "devices_summary.csv", render([&](std::ostream& o) { ps::write_devices_summary(o, res); }));
  finish("devices", c, dir, files, warnings);
  for (const auto& d : res)
    std::printf("%-3s points=%zu skipped=%zu baseline_gap=%.4g %s\n", d.row.name.c_str(), d.points.size(),
                d.skipped.size(), d.baseline_gap(), d.error.empty() ? "ok" : ("error: " + d.error).c_str());
  return failed ? 1 : 0;
}

int cmd_validate(const ps::RunConfig& c, const fs::path& dir, const ps::TrajectoryCache& cache, ps::Log& log) {
  const auto checks = ps::validate(c, cache, log);
  const auto report = ps::validation_report(checks, c.hash);
  write_text(dir / "validation.json", report.dump(2) + "\n");
  finish("validate", c, dir, {"validation.json"}, {});
  std::printf("config hash %s\n", c.hash.c_str());
  for (const auto& k : checks)
    std::printf("%s %-3s %-40s measured=%-12.4g tol=%-10.3g %s\n", k.pass ? "PASS" : "FAIL", k.id.c_str(),
                k.name.c_str(), k.measured, k.tolerance, k.detail.c_str());
  return report["all_pass"].get<bool>() ? 0 : 1;
}

void error_record(const std::optional<fs::path>& dir, const std::string& cmd, const std::string& kind,
                  const std::string& msg) {
  ps::json e = {{"command", cmd}, {"error_type", kind}, {"message", msg}};
  std::cerr << e.dump() << "\n";
  if (!dir) return;
  std::error_code ec;
  fs::create_directories(*dir, ec);
  if (!ec) write_text(*dir / "error.json", e.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Phase-slip decay rates of a transmon coupled to a Josephson junction array"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("phaseslip ") + ps::kVersion);
  Flags f;
  auto* solve = app.add_subcommand("solve", "instanton, spectral function, continuation and rates at one point");
  auto* scan = app.add_subcommand("ratio-scan", "on-resonance rate ratio against the baseline versus gamma0/omega0");
  auto* devices = app.add_subcommand("devices", "per-device on-resonance rate sweeps with uncertainty bands");
  auto* validate = app.add_subcommand("validate", "invariant and convergence checks");
  for (auto* s : {solve, scan, devices, validate}) add_common(s, f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();

  std::optional<fs::path> dir;
  if (!f.out.empty()) dir = f.out;
  try {
    auto cfg = ps::load_config(f.config.empty() ? std::nullopt : std::optional<std::string>(f.config),
                               ps::process_environment());
    if (!f.out.empty()) cfg["output_dir"] = f.out;
    if (f.no_cache) cfg["cache"] = false;
    if (f.workers > 0) cfg["workers"] = f.workers;
    if (cmd == "solve" && !f.devices.empty()) {
      if (f.devices.size() > 1) throw ps::ConfigError("solve takes a single --device");
      cfg["device"] = f.devices.front();
    }
    const auto c = ps::typed_config(cfg);
    dir = fs::path(c.output_dir);
    fs::create_directories(*dir);
    const ps::TrajectoryCache cache(*dir / "cache", c.cache);
    ps::Log log;
    if (cmd == "solve") return cmd_solve(c, *dir, cache, log);
    if (cmd == "ratio-scan") return cmd_scan(c, *dir, cache, log);
    if (cmd == "devices") return cmd_devices(c, f.devices, *dir, cache, log);
    return cmd_validate(c, *dir, cache, log);
  } catch (const ps::ConfigError& e) {
    error_record(dir, cmd, "config", e.what());
    return 2;
  } catch (const ps::ConvergenceError& e) {
    error_record(dir, cmd, "convergence", e.what());
    return 1;
  } catch (const ps::DomainError& e) {
    error_record(dir, cmd, "domain", e.what());
    return 1;
  } catch (const std::exception& e) {
    error_record(dir, cmd, "runtime", e.what());
    return 1;
  }
}
