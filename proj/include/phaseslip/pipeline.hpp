#pragma once

// Run orchestration: trajectory cache, per-point pipeline, the coupling scan,
// the device sweep and the validation suite, plus their CSV writers.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>
#include <boost/version.hpp>

#include "phaseslip/action_rates.hpp"
#include "phaseslip/config.hpp"
#include "phaseslip/continuation.hpp"
#include "phaseslip/device_model.hpp"
#include "phaseslip/errors.hpp"
#include "phaseslip/instanton_solver.hpp"
#include "phaseslip/special_functions.hpp"

namespace phaseslip {

namespace fs = std::filesystem;

// All progress lines go through one mutex so concurrent points never interleave.
class Log {
 public:
  explicit Log(std::ostream* os = &std::cerr) : os_(os) {}
  void operator()(const std::string& line) {
    if (!os_) return;
    std::lock_guard<std::mutex> g(m_);
    *os_ << line << '\n';
  }

 private:
  std::ostream* os_;
  std::mutex m_;
};

inline std::string fmt(double x, int prec = 12) {
  std::ostringstream s;
  s.precision(prec);
  s << x;
  return s.str();
}

// Runs body(i) for i in [0, n) on up to `workers` threads. Results must be
// written to slot i by the body; nothing here depends on completion order.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& body) {
  const int nw = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (nw == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < nw; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) body(i);
    });
  for (auto& t : pool) t.join();
}

// ---- trajectory cache --------------------------------------------------------

class TrajectoryCache {
 public:
  TrajectoryCache() = default;
  TrajectoryCache(fs::path dir, bool enabled) : dir_(std::move(dir)), enabled_(enabled) {}
  bool enabled() const { return enabled_; }

  static std::string key(const SolverParams& sp, const TimeGrid& g, const GridSettings& gs) {
    std::ostringstream s;
    s.precision(17);
    s << "w0=" << sp.omega0 << ";g0=" << sp.gamma0 << ";v=" << sp.v << ";sym=" << static_cast<int>(sp.symbol)
      << ";L=" << g.tau_max << ";n=" << g.n_points << ";method=" << gs.method << ";tol=" << gs.tol;
    return hex64(fnv1a(s.str()));
  }

  std::optional<Trajectory> load(const std::string& k, const SolverParams& sp, const TimeGrid& g) const {
    if (!enabled_) return std::nullopt;
    std::ifstream f(dir_ / (k + ".csv"));
    if (!f) return std::nullopt;
    std::string stored;
    Trajectory raw;
    try {
      raw = read_trajectory(f, &stored);
    } catch (const std::exception&) {
      return std::nullopt;  // unreadable entry: recompute and overwrite
    }
    if (stored != k || raw.grid.n_points != g.n_points) return std::nullopt;
    const int h = g.half();
    std::vector<double> half(raw.dphi0.begin() + h, raw.dphi0.end());
    auto t = make_trajectory(g, half, raw.method, sp);
    t.residual = raw.residual;
    t.equation_residual = raw.equation_residual;
    t.iterations = raw.iterations;
    t.warnings = raw.warnings;
    return t;
  }

  void store(const std::string& k, const Trajectory& t) const {
    if (!enabled_) return;
    fs::create_directories(dir_);
    std::ostringstream tid;
    tid << std::this_thread::get_id();
    const fs::path tmp = dir_ / (k + ".tmp" + tid.str());
    {
      std::ofstream f(tmp);
      write_trajectory(f, t, k);
    }
    fs::rename(tmp, dir_ / (k + ".csv"));
  }

 private:
  fs::path dir_;
  bool enabled_ = false;
};

inline SolveOptions solve_options(const GridSettings& gs) {
  SolveOptions o;
  o.tol = gs.tol;
  return o;
}

inline TimeGrid time_grid(double omega0, const GridSettings& gs) {
  return TimeGrid::make(omega0, gs.tau_max_w0, gs.dtau_w0);
}

inline Trajectory obtain_trajectory(const SolverParams& sp, const TimeGrid& g, const GridSettings& gs,
                                    const TrajectoryCache& cache, Log& log) {
  const std::string k = TrajectoryCache::key(sp, g, gs);
  if (auto hit = cache.load(k, sp, g)) {
    log("cache hit " + k + " (gamma0=" + fmt(sp.gamma0, 6) + ")");
    return *hit;
  }
  Trajectory t = gs.method == "integro_differential" ? solve_integro_differential(sp, g, solve_options(gs))
                                                      : solve_iterative(sp, g, solve_options(gs));
  log("solver " + gs.method + " gamma0=" + fmt(sp.gamma0, 6) + " iterations=" + std::to_string(t.iterations) +
      " residual=" + fmt(t.residual, 3));
  cache.store(k, t);
  return t;
}

// ---- one parameter point -----------------------------------------------------

struct PointResult {
  CircuitParams cp;
  Trajectory traj;
  SpectralFunction spec;
  ContinuationFit fit;
  ModeFactors modes;
  ActionCorrection action;
  RateResult rates;
  std::vector<std::string> warnings;
};

inline SelfEnergyOptions self_energy_options(const GridSettings& gs) {
  SelfEnergyOptions o;
  o.scheme = gs.scheme == "direct" ? Scheme::direct : Scheme::stabilized;
  o.omega_c_frac = gs.omega_c_frac;
  o.M = gs.M;
  return o;
}

inline FitOptions fit_options(const GridSettings& gs) {
  FitOptions o;
  o.p = gs.p;
  o.window_lo_w0 = gs.window_lo_w0;
  o.window_hi_w0 = gs.window_hi_w0;
  return o;
}

inline PointResult run_point(const CircuitParams& cp, const GridSettings& gs, const std::vector<double>& probes,
                             const TrajectoryCache& cache, Log& log) {
  PointResult r;
  r.cp = cp;
  const auto sp = SolverParams::from(cp);
  r.traj = obtain_trajectory(sp, time_grid(cp.omega0, gs), gs, cache, log);
  r.spec = matsubara_transform(r.traj);
  r.fit = fit_bracket(r.spec, sp, fit_options(gs));
  r.modes = mode_factors(r.spec, r.fit, build_mode_grid(cp), cp, gs.f_max_w0 * cp.omega0);
  r.action = action_correction(r.traj, r.modes, cp);
  r.rates = decay_rate(probes, r.modes, r.fit, r.action, cp, self_energy_options(gs));
  r.warnings = cp.warnings;
  r.warnings.insert(r.warnings.end(), r.traj.warnings.begin(), r.traj.warnings.end());
  r.warnings.insert(r.warnings.end(), r.fit.warnings.begin(), r.fit.warnings.end());
  return r;
}

inline ParamOptions param_options(double omega0, const GridSettings& gs, double T_mK,
                                  std::optional<double> E_J = std::nullopt) {
  ParamOptions o;
  o.v = gs.v_w0 * omega0;
  o.delta = gs.delta;
  o.E_J = E_J;
  o.T = mK_to_GHz(T_mK);
  return o;
}

inline const DeviceRow& find_device(const std::vector<DeviceRow>& table, const std::string& name) {
  for (const auto& r : table)
    if (r.name == name) return r;
  throw ConfigError("device '" + name + "' is not in the device table");
}

// Circuit for `solve`: a named device, an explicit z, or a coupling ratio (0 = decoupled).
inline CircuitParams params_from_config(const RunConfig& c) {
  auto opt = param_options(c.omega0, c.grid, c.T_mK, c.E_J);
  if (c.device) {
    const auto table = load_device_table(c.device_table);
    return device_params(find_device(table, *c.device), c.omega0, opt);
  }
  if (c.z) return make_params(c.omega0, c.E_C, *c.z, opt);
  if (c.gamma_ratio == 0.0) {
    if (!opt.delta) opt.delta = c.omega0 / 50.0;
    return make_params(c.omega0, c.E_C, std::numeric_limits<double>::infinity(), opt);
  }
  return make_params_from_gamma(c.omega0, c.E_C, c.gamma_ratio * c.omega0, opt);
}

inline std::vector<double> probe_grid(const RunConfig& c, double omega0) {
  std::vector<double> w(c.probe_n);
  for (int i = 0; i < c.probe_n; ++i)
    w[i] = omega0 * (c.probe_n == 1 ? c.probe_lo_w0
                                    : c.probe_lo_w0 + (c.probe_hi_w0 - c.probe_lo_w0) * i / (c.probe_n - 1));
  return w;
}

// ---- coupling scan -----------------------------------------------------------

struct ScanRow {
  double gamma_ratio = 0.0, z = 0.0, gamma0 = 0.0, delta = 0.0;
  double gamma_in = NAN, gamma_in_apprx = NAN, ratio = NAN;
  double f2_ratio = NAN, action_ratio = NAN, remainder_ratio = NAN;
  double dS1 = NAN, dS2 = NAN, dS_apprx = NAN;
  std::string status = "ok";
};

// On-resonance rate against the baseline for each coupling, split as
// ratio = f^2 ratio * exp(-2 dS) ratio * remainder.
inline std::vector<ScanRow> ratio_scan(const RunConfig& c, const TrajectoryCache& cache, Log& log) {
  std::vector<ScanRow> rows(c.scan_ratios.size());
  parallel_for(rows.size(), c.workers, [&](std::size_t i) {
    ScanRow& row = rows[i];
    row.gamma_ratio = c.scan_ratios[i];
    try {
      const double w0 = c.scan_omega0;
      const auto cp = make_params_from_gamma(w0, c.scan_E_C, row.gamma_ratio * w0,
                                             param_options(w0, c.grid, c.scan_T_mK));
      row.z = cp.z;
      row.gamma0 = cp.gamma0;
      row.delta = cp.delta;
      const auto r = run_point(cp, c.grid, {w0}, cache, log);
      const auto& a = r.action;
      row.gamma_in = r.rates.gamma_in[0];
      row.gamma_in_apprx = r.rates.gamma_in_apprx[0];
      row.ratio = row.gamma_in / row.gamma_in_apprx;
      row.f2_ratio = std::pow(r.rates.f[0] / r.rates.f_apprx[0], 2);
      row.action_ratio = std::exp(-2.0 * (a.dS() - a.dS_apprx));
      row.remainder_ratio = row.ratio / (row.f2_ratio * row.action_ratio);
      row.dS1 = a.dS1;
      row.dS2 = a.dS2;
      row.dS_apprx = a.dS_apprx;
      if (!r.rates.flags[0].empty()) row.status = r.rates.flags[0];
    } catch (const std::exception& e) {
      row.status = std::string("error: ") + e.what();
      log("scan point " + fmt(row.gamma_ratio, 4) + " failed: " + e.what());
    }
  });
  return rows;
}

inline std::string csv_cell(std::string s) {
  for (auto& ch : s)
    if (ch == ',' || ch == '\n') ch = ' ';
  return s;
}

inline void write_scan_csv(std::ostream& os, const std::vector<ScanRow>& rows) {
  os << "gamma_ratio,z,gamma0,delta,gamma_in,gamma_in_apprx,ratio,f2_ratio,action_ratio,remainder_ratio,"
        "dS1,dS2,dS_apprx,status\n";
  for (const auto& r : rows)
    os << fmt(r.gamma_ratio) << ',' << fmt(r.z) << ',' << fmt(r.gamma0) << ',' << fmt(r.delta) << ','
       << fmt(r.gamma_in) << ',' << fmt(r.gamma_in_apprx) << ',' << fmt(r.ratio) << ',' << fmt(r.f2_ratio) << ','
       << fmt(r.action_ratio) << ',' << fmt(r.remainder_ratio) << ',' << fmt(r.dS1) << ',' << fmt(r.dS2) << ','
       << fmt(r.dS_apprx) << ',' << csv_cell(r.status) << '\n';
}

// ---- device sweep ------------------------------------------------------------

struct DevicePoint {
  double omega0 = 0.0, E_J = 0.0, gamma_ratio = 0.0;
  double value = NAN, band_low = NAN, band_high = NAN, baseline = NAN;  // Gamma^in / Delta
  std::string flags;
};

struct DeviceResult {
  DeviceRow row;
  std::vector<DevicePoint> points;
  std::vector<std::string> skipped;  // sweep points outside the transmon regime
  std::vector<std::string> warnings;
  std::string error;
  double ec_ej_ref = 0.0;  // at the middle of the sweep

  // mean |ln(numerical / baseline)| over the curve
  double baseline_gap() const {
    double s = 0.0;
    for (const auto& p : points) s += std::abs(std::log(p.value / p.baseline));
    return points.empty() ? NAN : s / points.size();
  }
};

inline std::vector<double> device_sweep(const RunConfig& c) {
  std::vector<double> w(c.dev_n);
  for (int i = 0; i < c.dev_n; ++i)
    w[i] = c.dev_n == 1 ? c.dev_w_min : c.dev_w_min + (c.dev_w_max - c.dev_w_min) * i / (c.dev_n - 1);
  return w;
}

// Center first, then the four (z, E_C) corners.
inline std::array<std::pair<double, double>, 5> corner_scales(double b) {
  return {{{1.0, 1.0}, {1.0 - b, 1.0 - b}, {1.0 - b, 1.0 + b}, {1.0 + b, 1.0 - b}, {1.0 + b, 1.0 + b}}};
}

inline std::vector<DeviceResult> device_sweeps(const RunConfig& c, const std::vector<DeviceRow>& table,
                                               const std::vector<std::string>& only, const TrajectoryCache& cache,
                                               Log& log) {
  std::vector<DeviceResult> out;
  const auto sweep = device_sweep(c);
  const double w_ref = 0.5 * (c.dev_w_min + c.dev_w_max);
  const auto corners = corner_scales(c.dev_band);

  // validity: E_C/E_J at the reference frequency; the largest in the table is flagged
  std::vector<double> ratio_ref(table.size(), NAN);
  for (std::size_t d = 0; d < table.size(); ++d) {
    try {
      ratio_ref[d] = table[d].E_C_GHz / EJ_from_omega0(w_ref, table[d].E_C_GHz);
    } catch (const std::exception&) {
      ratio_ref[d] = std::numeric_limits<double>::infinity();
    }
  }
  std::size_t worst = 0;
  for (std::size_t d = 1; d < table.size(); ++d)
    if (ratio_ref[d] > ratio_ref[worst]) worst = d;

  struct Job {
    std::size_t dev, pt, corner;
    CircuitParams cp;
    double gid = NAN, bid = NAN;
    std::string flags, error;
  };
  std::vector<Job> jobs;
  for (std::size_t d = 0; d < table.size(); ++d) {
    const auto& row = table[d];
    if (!only.empty() && std::find(only.begin(), only.end(), row.name) == only.end()) continue;
    DeviceResult res;
    res.row = row;
    res.ec_ej_ref = ratio_ref[d];
    for (auto& w : check_device_row(row)) res.warnings.push_back(w);
    if (d == worst)
      res.warnings.push_back("largest E_C/E_J in the table (" + fmt(ratio_ref[d], 3) + " at omega0=" +
                             fmt(w_ref, 4) + " GHz): semiclassical transmon treatment least reliable");
    const std::size_t dev_index = out.size();
    for (double w0 : sweep) {
      std::vector<CircuitParams> set;
      std::string why;
      for (const auto& [zs, es] : corners) {
        try {
          auto cp = device_params(row, w0, param_options(w0, c.grid, c.dev_T_mK), zs, es);
          if (cp.E_J < cp.E_C) why = "E_J < E_C";
          set.push_back(std::move(cp));
        } catch (const std::exception& e) {
          why = e.what();
        }
        if (!why.empty()) break;
      }
      if (!why.empty()) {
        res.skipped.push_back("omega0=" + fmt(w0, 6) + ": " + why);
        continue;
      }
      DevicePoint pt;
      pt.omega0 = w0;
      pt.E_J = set[0].E_J;
      pt.gamma_ratio = set[0].gamma0 / w0;
      const std::size_t pi = res.points.size();
      res.points.push_back(pt);
      for (std::size_t k = 0; k < set.size(); ++k) jobs.push_back({dev_index, pi, k, set[k], NAN, NAN, {}, {}});
    }
    out.push_back(std::move(res));
  }

  parallel_for(jobs.size(), c.workers, [&](std::size_t j) {
    Job& job = jobs[j];
    try {
      const auto r = run_point(job.cp, c.grid, {job.cp.omega0}, cache, log);
      job.gid = r.rates.gamma_in[0] / job.cp.delta;
      job.bid = r.rates.gamma_in_apprx[0] / job.cp.delta;
      job.flags = r.rates.flags[0];
    } catch (const std::exception& e) {
      job.error = e.what();
    }
  });

  for (const auto& job : jobs) {
    auto& res = out[job.dev];
    auto& pt = res.points[job.pt];
    if (!job.error.empty()) {
      if (res.error.empty()) res.error = "omega0=" + fmt(job.cp.omega0, 6) + ": " + job.error;
      continue;
    }
    if (job.corner == 0) {
      pt.value = job.gid;
      pt.baseline = job.bid;
      pt.flags = job.flags;
    }
    pt.band_low = std::isnan(pt.band_low) ? job.gid : std::min(pt.band_low, job.gid);
    pt.band_high = std::isnan(pt.band_high) ? job.gid : std::max(pt.band_high, job.gid);
  }
  // a device with any failed corner keeps no partial curve
  for (auto& res : out)
    if (!res.error.empty()) {
      res.points.clear();
      log("device " + res.row.name + " failed: " + res.error);
    }
  return out;
}

inline void write_device_csv(std::ostream& os, const DeviceResult& d) {
  os << "omega0,E_J,E_C_over_E_J,gamma0_over_omega0,gamma_in_over_delta,band_low,band_high,"
        "baseline_over_delta,ratio,flags\n";
  for (const auto& p : d.points)
    os << fmt(p.omega0) << ',' << fmt(p.E_J) << ',' << fmt(d.row.E_C_GHz / p.E_J) << ',' << fmt(p.gamma_ratio) << ','
       << fmt(p.value) << ',' << fmt(p.band_low) << ',' << fmt(p.band_high) << ',' << fmt(p.baseline) << ','
       << fmt(p.value / p.baseline) << ',' << csv_cell(p.flags) << '\n';
}

inline void write_devices_summary(std::ostream& os, const std::vector<DeviceResult>& ds) {
  os << "device,z,E_C,gamma0,n_points,n_skipped,baseline_gap,E_C_over_E_J_ref,status,warnings\n";
  for (const auto& d : ds) {
    std::string w;
    for (const auto& s : d.warnings) w += (w.empty() ? "" : "; ") + s;
    os << d.row.name << ',' << fmt(d.row.z) << ',' << fmt(d.row.E_C_GHz) << ',' << fmt(d.row.Gamma0_GHz) << ','
       << d.points.size() << ',' << d.skipped.size() << ',' << fmt(d.baseline_gap()) << ',' << fmt(d.ec_ej_ref)
       << ',' << (d.error.empty() ? "ok" : csv_cell("error: " + d.error)) << ',' << csv_cell(w) << '\n';
  }
}

// ---- validation suite --------------------------------------------------------

struct Check {
  std::string id, name;
  double measured = NAN, tolerance = NAN;
  bool pass = false;
  std::string detail;
};

namespace detail {

inline double on_resonance_per_delta(const CircuitParams& cp, const GridSettings& gs, const TrajectoryCache& cache,
                                     Log& log) {
  const auto r = run_point(cp, gs, {cp.omega0}, cache, log);
  return r.rates.gamma_in[0] / cp.delta;
}

inline Check run_check(std::string id, std::string name, double tol, const std::function<double(std::string&)>& f) {
  Check c{std::move(id), std::move(name), NAN, tol, false, ""};
  try {
    c.measured = f(c.detail);
    c.pass = std::isfinite(c.measured) && c.measured <= tol;
  } catch (const std::exception& e) {
    c.detail = std::string("error: ") + e.what();
  }
  return c;
}

}  // namespace detail

// Invariant and convergence checks at the configured circuit.
inline std::vector<Check> validate(const RunConfig& c, const TrajectoryCache& cache, Log& log) {
  std::vector<Check> out;
  const double pi = std::numbers::pi;
  auto cp_or = [&]() { return params_from_config(c); };

  out.push_back(detail::run_check("K1", "kernel_vs_quadrature_oracle", 1e-8, [](std::string& d) {
    double worst = 0.0;
    const KernelParams ps[] = {{400.0, 0.8}, {50.0, 3.0}, {1500.0, 0.05}};
    for (const auto& p : ps)
      for (double x = 1e-3; x <= 50.0; x *= 3.0) {
        const double tau = x / p.v;
        worst = std::max(worst, std::abs(kernel_K(tau, p) / kernel_K_quadrature_oracle(tau, p).value - 1.0));
      }
    d = "max relative error over v|tau| in [1e-3, 50]";
    return worst;
  }));

  Trajectory base;
  bool have_base = false;
  out.push_back(detail::run_check("S1", "iterative_vs_integro_differential", 1e-4 * pi, [&](std::string& d) {
    const auto cp = cp_or();
    const auto sp = SolverParams::from(cp);
    const auto g = time_grid(cp.omega0, c.grid);
    GridSettings gi = c.grid, ge = c.grid;
    gi.method = "iterative";
    ge.method = "integro_differential";
    base = obtain_trajectory(sp, g, gi, cache, log);
    have_base = true;
    const auto other = obtain_trajectory(sp, g, ge, cache, log);
    double e = 0.0;
    for (std::size_t i = 0; i < base.dphi0.size(); ++i) e = std::max(e, std::abs(base.dphi0[i] - other.dphi0[i]));
    d = "sup-norm trajectory difference";
    return e;
  }));
  out.push_back(detail::run_check("S2", "antisymmetry", 1e-8, [&](std::string& d) {
    if (!have_base) throw DomainError("no trajectory (S1 failed)");
    d = "max |dphi0(tau) + dphi0(-tau)|";
    return base.antisymmetry_error();
  }));
  out.push_back(detail::run_check("S3", "inverse_tau_tail", 0.15, [&](std::string& d) {
    if (!have_base) throw DomainError("no trajectory (S1 failed)");
    if (base.sup_norm() == 0.0) {
      d = "trivial trajectory";
      return 0.0;
    }
    double worst = 0.0;
    tail_regime_ok(base, 0.15, &worst);
    d = "max |log-slope - 1| over the last grid decade";
    return worst;
  }));
  out.push_back(detail::run_check("L1", "linearized_bracket_unity", 1e-6, [&](std::string& d) {
    const auto cp = cp_or();
    const auto sp = SolverParams::from(cp);
    const auto t = dphi0_apprx_trajectory(time_grid(cp.omega0, c.grid), sp);
    const auto s = matsubara_transform(t);
    const auto w = window_points(s, c.grid.window_lo_w0 * cp.omega0, c.grid.window_hi_w0 * cp.omega0);
    double e = 0.0;
    for (double b : bracket_series(s, sp, w)) e = std::max(e, std::abs(b - 1.0));
    d = "max |B - 1| over the fit window with the closed-form trajectory";
    return e;
  }));
  out.push_back(detail::run_check("L2", "second_order_action_at_zero_deviation", 0.0, [&](std::string& d) {
    const auto cp = cp_or();
    const auto g = time_grid(cp.omega0, c.grid);
    const auto t = make_trajectory(g, std::vector<double>(g.half() + 1, 0.0), SolveMethod::closed_form,
                                   SolverParams::from(cp));
    d = "|dS2| for dphi0 = 0 (must vanish exactly)";
    return std::abs(delta_S2(t, cp));
  }));
  out.push_back(detail::run_check("R1", "sinh_resummation_identity", 1e-10, [](std::string& d) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      const auto [lhs, rhs] = sinh_resummation_identity({u(rng), u(rng)}, {u(rng), u(rng)});
      worst = std::max(worst, std::abs(lhs - rhs) / std::max(std::abs(rhs), 1e-300));
    }
    d = "max relative error on 50 random complex pairs";
    return worst;
  }));

  // convergence of the on-resonance Gamma^in / Delta under refinement
  double ref = NAN;
  auto refine = [&](const std::string& id, const std::string& name,
                    const std::function<void(CircuitParams&, GridSettings&)>& mod) {
    out.push_back(detail::run_check(id, name, 0.02, [&](std::string& d) {
      auto cp = cp_or();
      if (!(cp.gamma0 > 0.0)) {
        d = "decoupled circuit: rate vanishes identically";
        return 0.0;
      }
      if (std::isnan(ref)) ref = detail::on_resonance_per_delta(cp, c.grid, cache, log);
      GridSettings gs = c.grid;
      mod(cp, gs);
      const double v = detail::on_resonance_per_delta(cp, gs, cache, log);
      d = "relative change of on-resonance Gamma^in/Delta (" + fmt(ref, 6) + " -> " + fmt(v, 6) + ")";
      return std::abs(v / ref - 1.0);
    }));
  };
  refine("C1", "dtau_halving", [](CircuitParams&, GridSettings& gs) { gs.dtau_w0 /= 2.0; });
  refine("C2", "tau_max_doubling", [](CircuitParams&, GridSettings& gs) { gs.tau_max_w0 *= 2.0; });
  refine("C3", "delta_halving", [](CircuitParams& cp, GridSettings&) {
    cp.delta /= 2.0;
    cp.n_modes *= 2;
  });
  refine("C4", "v_doubling", [](CircuitParams& cp, GridSettings&) { cp.v *= 2.0; });
  return out;
}

inline json validation_report(const std::vector<Check>& checks, const std::string& hash) {
  json j;
  j["config_hash"] = hash;
  j["all_pass"] = std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
  j["checks"] = json::array();
  for (const auto& c : checks)
    j["checks"].push_back({{"id", c.id},
                           {"name", c.name},
                           {"measured", std::isfinite(c.measured) ? json(c.measured) : json(nullptr)},
                           {"tolerance", c.tolerance},
                           {"pass", c.pass},
                           {"detail", c.detail}});
  return j;
}

// ---- metadata ----------------------------------------------------------------

inline std::string file_hash(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return hex64(fnv1a(s.str()));
}

inline json run_metadata(const std::string& command, const RunConfig& c, const fs::path& dir,
                         const std::vector<std::string>& files, const std::vector<std::string>& warnings) {
  json j;
  j["tool"] = "phaseslip";
  j["version"] = kVersion;
  j["command"] = command;
  j["config_hash"] = c.hash;
  j["config"] = c.effective;
  j["libraries"] = {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                  "." + std::to_string(EIGEN_MINOR_VERSION)},
                    {"boost", BOOST_LIB_VERSION},
                    {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                          std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                          std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
  j["files"] = json::object();
  for (const auto& f : files) j["files"][f] = file_hash(dir / f);
  j["warnings"] = warnings;
  return j;
}

}  // namespace phaseslip
