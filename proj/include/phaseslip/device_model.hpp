#pragma once

// Circuit parameters, derived scales, photon mode grids and phase shifts.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/tools/roots.hpp>

#include "phaseslip/errors.hpp"
#include "phaseslip/special_functions.hpp"

namespace phaseslip {

// Resistance quantum h/(2e)^2 in kOhm.
inline constexpr double kResistanceQuantumKOhm = 6.4530;

inline double mK_to_GHz(double T_mK) { return T_mK * 1e-3 * kBoltzmannGHzPerK; }

// ---- transmon spectrum -----------------------------------------------------

inline double transmon_gap(double E_J, double E_C, double q_g) {
  const auto e = mathieu_pair(E_J / (2.0 * E_C), q_g, 2);
  return (e[1] - e[0]) * E_C;
}

// Resonance averaged over the two extreme offset charges.
inline double omega0_from_EJ(double E_J, double E_C) {
  if (!(E_J >= 0.0) || !(E_C > 0.0)) throw DomainError("omega0_from_EJ: need E_J >= 0, E_C > 0");
  return 0.5 * (transmon_gap(E_J, E_C, 1.0) + transmon_gap(E_J, E_C, 0.0));
}

inline double EJ_from_omega0(double omega0, double E_C) {
  if (!(omega0 > 0.0) || !(E_C > 0.0)) throw DomainError("EJ_from_omega0: need omega0, E_C > 0");
  const double floor_value = omega0_from_EJ(0.0, E_C);
  if (!(omega0 > floor_value))
    throw DomainError("EJ_from_omega0: omega0 below the E_J = 0 value 2 E_C (no bracket)");
  auto f = [&](double ej) { return omega0_from_EJ(ej, E_C) - omega0; };
  double hi = (omega0 + E_C) * (omega0 + E_C) / (8.0 * E_C) * 1.5 + E_C;
  while (f(hi) < 0.0) hi *= 2.0;
  std::uintmax_t max_iter = 200;
  auto tol = [](double a, double b) { return std::abs(b - a) < 1e-11 * std::max(1.0, std::abs(a)); };
  const auto [a, b] = boost::math::tools::toms748_solve(f, 0.0, hi, f(0.0), f(hi), tol, max_iter);
  const double ej = 0.5 * (a + b);
  if (std::abs(f(ej)) > 1e-8) throw ConvergenceError("EJ_from_omega0: root not reached", f(ej));
  return ej;
}

enum class LambdaMethod { exact, wkb };

// Charge dispersion of the lowest band.
inline double lambda0(double E_J, double E_C, LambdaMethod method = LambdaMethod::exact) {
  if (!(E_J >= 0.0) || !(E_C > 0.0)) throw DomainError("lambda0: need E_J >= 0, E_C > 0");
  if (method == LambdaMethod::wkb) {
    return 8.0 / std::sqrt(std::numbers::pi) * std::pow(8.0 * E_J * E_J * E_J * E_C, 0.25) *
           std::exp(-std::sqrt(8.0 * E_J / E_C));
  }
  const double chi = E_J / (2.0 * E_C);
  const double e1 = mathieu_pair(chi, 1.0, 2)[0];
  const double e0 = mathieu_pair(chi, 0.0, 2)[0];
  return 0.5 * (e1 - e0) * E_C;
}

struct LambdaStar {
  double value = 0.0;
  bool applicable = false;  // false for z <= 1
};

inline LambdaStar lambda_star(double lambda0_value, double omega0, double z) {
  if (!(z > 1.0)) return {0.0, false};
  if (lambda0_value <= 0.0) return {0.0, true};
  const double e = 1.0 / (1.0 - 1.0 / z);
  return {std::pow(lambda0_value / std::pow(omega0, 1.0 / z), e), true};
}

// ---- parameters ------------------------------------------------------------

struct CircuitParams {
  double omega0 = 0.0;
  double E_C = 0.0;
  double E_J = 0.0;
  double gamma0 = 0.0;
  double z = 0.0;
  double v = 0.0;
  double delta = 0.0;
  double T = 0.0;
  long n_modes = 0;
  std::vector<std::string> warnings;

  KernelParams kernel() const { return {v, gamma0}; }
  double S0() const { return std::sqrt(8.0 * E_J / E_C); }
  // Classical Josephson energy consistent with the bare instanton at omega0.
  double EJ_classical() const { return omega0 * omega0 / (8.0 * E_C); }
};

struct ParamOptions {
  std::optional<double> v;      // default 50 omega0
  std::optional<double> delta;  // default min(omega0/50, gamma0/4)
  std::optional<double> E_J;    // default: inverted from omega0
  double T = 0.0;               // GHz
};

// Builds parameters from the measured inputs (omega0, E_C, z). gamma0 is
// derived from 4 E_C / (pi z); E_J from the averaged Mathieu gap.
inline CircuitParams make_params(double omega0, double E_C, double z, const ParamOptions& opt = {}) {
  if (!(omega0 > 0.0) || !(E_C > 0.0) || !(z > 0.0))
    throw DomainError("make_params: omega0, E_C, z must be positive");
  if (opt.T < 0.0) throw DomainError("make_params: T must be >= 0");
  CircuitParams p;
  p.omega0 = omega0;
  p.E_C = E_C;
  p.z = z;
  p.gamma0 = 4.0 * E_C / (std::numbers::pi * z);
  p.E_J = opt.E_J ? *opt.E_J : EJ_from_omega0(omega0, E_C);
  p.v = opt.v.value_or(50.0 * omega0);
  p.delta = opt.delta.value_or(std::min(omega0 / 50.0, p.gamma0 / 4.0));
  p.T = opt.T;
  if (!(p.v > 0.0) || !(p.delta > 0.0)) throw DomainError("make_params: v and delta must be positive");
  p.n_modes = std::lround(std::numbers::pi * p.v / p.delta);
  if (p.delta >= p.gamma0 || p.delta >= p.omega0)
    p.warnings.push_back("mode spacing not small against gamma0/omega0 (continuum regime violated)");
  if (p.E_J < p.E_C) p.warnings.push_back("E_J < E_C: outside the transmon regime");
  if (!p.kernel().well_separated()) p.warnings.push_back("v < 10 gamma0");
  return p;
}

// Same, but with gamma0 given directly (z follows from the consistency relation).
inline CircuitParams make_params_from_gamma(double omega0, double E_C, double gamma0,
                                            const ParamOptions& opt = {}) {
  if (!(gamma0 > 0.0)) throw DomainError("make_params_from_gamma: gamma0 must be positive");
  return make_params(omega0, E_C, 4.0 * E_C / (std::numbers::pi * gamma0), opt);
}

// ---- phase shifts ----------------------------------------------------------

inline double phase_shift_full(double omega, const CircuitParams& p) {
  if (!(omega > 0.0) || omega > 2.0 * p.v) throw DomainError("phase_shift_full: omega outside (0, 2v]");
  const double r = omega / (2.0 * p.v);
  const double num = omega * p.gamma0 * std::sqrt(1.0 - r * r);
  const double den = p.omega0 * p.omega0 - (1.0 - p.gamma0 / (2.0 * p.v)) * omega * omega;
  return std::atan2(num, den);
}

inline double phase_shift_bulk(double omega, const CircuitParams& p) {
  if (!(omega > 0.0) || omega > 2.0 * p.v) throw DomainError("phase_shift_bulk: omega outside (0, 2v]");
  const double r = omega / (2.0 * p.v);
  return std::atan2(omega * p.v * std::sqrt(1.0 - r * r), p.v * p.v - 0.5 * omega * omega);
}

// ---- mode grid -------------------------------------------------------------

enum class GridKind { full_system, bulk };

struct ModeGrid {
  std::vector<double> omegas;
  GridKind kind = GridKind::full_system;
  double delta = 0.0;
  std::size_t size() const { return omegas.size(); }
};

// Uniform grid (m + 1/2) Delta up to the band edge.
inline ModeGrid build_mode_grid(double delta, double v, GridKind kind = GridKind::full_system) {
  if (!(delta > 0.0) || !(v > 0.0)) throw DomainError("build_mode_grid: delta, v must be positive");
  ModeGrid g;
  g.kind = kind;
  g.delta = delta;
  const double edge = 2.0 * v;
  const auto count = static_cast<std::size_t>(std::floor(edge / delta - 0.5)) + 1;
  g.omegas.reserve(count);
  for (std::size_t m = 0; m < count; ++m) {
    const double w = (m + 0.5) * delta;
    if (w > edge) break;
    g.omegas.push_back(w);
  }
  return g;
}

inline ModeGrid build_mode_grid(const CircuitParams& p) { return build_mode_grid(p.delta, p.v); }

// ---- device table ----------------------------------------------------------

struct DeviceRow {
  std::string name;
  double Z_kOhm = 0.0;
  double z = 0.0;
  double E_C_GHz = 0.0;
  double Gamma0_GHz = 0.0;
};

inline std::vector<DeviceRow> parse_device_table(std::istream& in) {
  std::vector<DeviceRow> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      if (line.rfind("name,Z_kOhm,z,E_C_GHz,Gamma0_GHz", 0) != 0)
        throw ConfigError("device table: unexpected header '" + line + "'");
      continue;
    }
    std::stringstream ss(line);
    DeviceRow r;
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw ConfigError("device table: expected 5 columns in '" + line + "'");
    try {
      r.name = cells[0];
      r.Z_kOhm = std::stod(cells[1]);
      r.z = std::stod(cells[2]);
      r.E_C_GHz = std::stod(cells[3]);
      r.Gamma0_GHz = std::stod(cells[4]);
    } catch (const std::exception&) {
      throw ConfigError("device table: non-numeric entry in '" + line + "'");
    }
    rows.push_back(r);
  }
  return rows;
}

inline std::vector<DeviceRow> load_device_table(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open device table " + path);
  return parse_device_table(f);
}

// Checks the table row against gamma0 = 4 E_C / (pi z) and z = Z / R_Q at the
// table's two-digit rounding.
inline std::vector<std::string> check_device_row(const DeviceRow& r, double rel_tol = 0.03) {
  std::vector<std::string> issues;
  if (!(r.z > 0.0) || !(r.E_C_GHz > 0.0) || !(r.Gamma0_GHz > 0.0) || !(r.Z_kOhm > 0.0)) {
    issues.push_back(r.name + ": non-positive entry");
    return issues;
  }
  const double g = 4.0 * r.E_C_GHz / (std::numbers::pi * r.z);
  if (std::abs(g / r.Gamma0_GHz - 1.0) > rel_tol) issues.push_back(r.name + ": Gamma0 inconsistent with 4E_C/(pi z)");
  if (std::abs(r.Z_kOhm / kResistanceQuantumKOhm / r.z - 1.0) > rel_tol)
    issues.push_back(r.name + ": z inconsistent with Z/R_Q");
  return issues;
}

inline CircuitParams device_params(const DeviceRow& r, double omega0, const ParamOptions& opt = {},
                                   double z_scale = 1.0, double EC_scale = 1.0) {
  auto p = make_params(omega0, r.E_C_GHz * EC_scale, r.z * z_scale, opt);
  for (auto& w : check_device_row(r)) p.warnings.push_back(w);
  return p;
}

}  // namespace phaseslip
