#pragma once

// Analytic continuation of the trajectory's Matsubara data to real frequency
// and the per-mode overlap factors f_k, f~_k built from it.

#include <cmath>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "phaseslip/device_model.hpp"
#include "phaseslip/errors.hpp"
#include "phaseslip/instanton_solver.hpp"

namespace phaseslip {

// Even polynomial sum_l alpha_l x^l in x = w / w_scale (odd orders are absent).
struct ContinuationFit {
  int p = 6;
  std::vector<double> alpha;  // alpha_0, alpha_2, ..., alpha_p
  double window_lo = 0.0, window_hi = 0.0;  // GHz
  double w_scale = 1.0;                     // GHz (omega0)
  double rms_residual = 0.0;                // relative to the mean |data|
  std::vector<std::string> warnings;

  // Value on the Matsubara axis.
  double eval_matsubara(double w) const {
    const double x2 = (w / w_scale) * (w / w_scale);
    double s = 0.0, xp = 1.0;
    for (double a : alpha) {
      s += a * xp;
      xp *= x2;
    }
    return s;
  }
  // Continued to real frequency: (i w)^l -> alpha_l (-1)^{l/2} w^l.
  double eval_real(double w) const {
    const double x2 = -(w / w_scale) * (w / w_scale);
    double s = 0.0, xp = 1.0;
    for (double a : alpha) {
      s += a * xp;
      xp *= x2;
    }
    return s;
  }
};

struct FitOptions {
  int p = 6;
  double window_lo_w0 = 0.05;
  double window_hi_w0 = 3.0;
  bool unit_leading = true;  // the bracket tends to 1: check alpha_0 in [0.5, 1.5] and rms < 1e-3
};

// B(w) = (w^2 + G0 w + w0^2)/(w^2 + w0^2) (1 + dphi0(iw)/phi0^(0)(iw)) on the given w > 0.
inline std::vector<double> bracket_series(const SpectralFunction& s, const SolverParams& p,
                                          const std::vector<double>& omegas) {
  std::vector<double> B(omegas.size());
  for (std::size_t i = 0; i < omegas.size(); ++i) {
    const double w = omegas[i];
    if (!(w > 0.0)) throw DomainError("bracket_series: omegas must be positive");
    const cplx ratio = s.interpolate(w) / phi0_bare_matsubara(w, p.omega0);
    if (std::abs(ratio.imag()) > 1e-6)
      throw DomainError("bracket_series: dphi0/phi0 not real (parity violation upstream)");
    const double w2 = w * w, w02 = p.omega0 * p.omega0;
    B[i] = (w2 + p.gamma0 * w + w02) / (w2 + w02) * (1.0 + ratio.real());
  }
  return B;
}

// Positive spectral-grid frequencies inside the fit window.
inline std::vector<double> window_points(const SpectralFunction& s, double lo, double hi) {
  std::vector<double> w;
  for (double x : s.omegas)
    if (x > 0.0 && x >= lo * (1 - 1e-12) && x <= hi * (1 + 1e-12)) w.push_back(x);
  return w;
}

inline ContinuationFit fit_continuation(const std::vector<double>& omegas, const std::vector<double>& values,
                                        double w_scale, const FitOptions& o = {}) {
  if (o.p % 2 || o.p < 4 || o.p > 10) throw DomainError("fit_continuation: p must be even, 4 <= p <= 10");
  if (omegas.size() != values.size()) throw DomainError("fit_continuation: size mismatch");
  const double lo = o.window_lo_w0 * w_scale, hi = o.window_hi_w0 * w_scale;
  std::vector<int> idx;
  for (std::size_t i = 0; i < omegas.size(); ++i)
    if (omegas[i] >= lo * (1 - 1e-12) && omegas[i] <= hi * (1 + 1e-12)) idx.push_back(static_cast<int>(i));
  const int ncoef = o.p / 2 + 1;
  if (static_cast<int>(idx.size()) < 2 * ncoef) throw DomainError("fit_continuation: too few points in window");
  Eigen::MatrixXd A(idx.size(), ncoef);
  Eigen::VectorXd b(idx.size());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const double x2 = std::pow(omegas[idx[r]] / w_scale, 2);
    double xp = 1.0;
    for (int c = 0; c < ncoef; ++c) {
      A(r, c) = xp;
      xp *= x2;
    }
    b[r] = values[idx[r]];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  if (qr.rank() < ncoef) throw DomainError("fit_continuation: ill-conditioned even-power system");
  const Eigen::VectorXd coef = qr.solve(b);
  ContinuationFit f;
  f.p = o.p;
  f.alpha.assign(coef.data(), coef.data() + ncoef);
  f.window_lo = lo;
  f.window_hi = hi;
  f.w_scale = w_scale;
  f.rms_residual = std::sqrt((A * coef - b).squaredNorm() / idx.size()) / b.cwiseAbs().mean();
  if (o.unit_leading) {
    if (f.alpha[0] < 0.5 || f.alpha[0] > 1.5) throw DomainError("fit_continuation: alpha_0 outside [0.5, 1.5]");
    // Solved brackets are not exactly even polynomials once G0/w0 >~ 0.1; flag rather than refuse.
    if (f.rms_residual >= 1e-3)
      f.warnings.push_back("continuation fit rms residual " + std::to_string(f.rms_residual) +
                           " >= 1e-3 of the bracket; f_k carry continuation uncertainty");
  }
  return f;
}

// Convenience: bracket of a solved trajectory fitted on its spectral grid.
inline ContinuationFit fit_bracket(const SpectralFunction& s, const SolverParams& p, const FitOptions& o = {}) {
  const auto w = window_points(s, o.window_lo_w0 * p.omega0, o.window_hi_w0 * p.omega0);
  return fit_continuation(w, bracket_series(s, p, w), p.omega0, o);
}

// Degree (4/4) even rational cross-check, (a0 + a2 x^2 + a4 x^4)/(1 + b2 x^2 + b4 x^4),
// fitted by linearized least squares with two Sanathanan-Koerner reweightings.
struct RationalFit {
  double a[3] = {0, 0, 0}, b[3] = {1, 0, 0};
  double w_scale = 1.0;
  double eval_real(double w) const {
    const double y = -(w / w_scale) * (w / w_scale);
    return (a[0] + a[1] * y + a[2] * y * y) / (b[0] + b[1] * y + b[2] * y * y);
  }
};

inline RationalFit fit_rational(const std::vector<double>& omegas, const std::vector<double>& values,
                                double w_scale) {
  const int n = static_cast<int>(omegas.size());
  RationalFit r;
  r.w_scale = w_scale;
  std::vector<double> weight(n, 1.0);
  for (int pass = 0; pass < 3; ++pass) {
    Eigen::MatrixXd A(n, 5);
    Eigen::VectorXd rhs(n);
    for (int i = 0; i < n; ++i) {
      const double y = std::pow(omegas[i] / w_scale, 2), w = weight[i];
      A.row(i) << w, w * y, w * y * y, -w * values[i] * y, -w * values[i] * y * y;
      rhs[i] = w * values[i];
    }
    const Eigen::VectorXd c = A.colPivHouseholderQr().solve(rhs);
    r.a[0] = c[0];
    r.a[1] = c[1];
    r.a[2] = c[2];
    r.b[1] = c[3];
    r.b[2] = c[4];
    for (int i = 0; i < n; ++i) {
      const double y = std::pow(omegas[i] / w_scale, 2);
      weight[i] = 1.0 / std::abs(1.0 + r.b[1] * y + r.b[2] * y * y);
    }
  }
  return r;
}

// ---- closed-form factors ----------------------------------------------------------

// (w0^2 - w^2) / cos(pi w / 2 w0), with the removable 0/0 at w0 expanded to second order.
inline double resonance_ratio(double w, double w0) {
  const double u = w - w0;
  const double eps = std::numbers::pi * u / (2.0 * w0);
  if (std::abs(u) < 1e-3 * w0) return (2.0 * w0 + u) * (2.0 * w0 / std::numbers::pi) / (1.0 - eps * eps / 6.0);
  return (w0 * w0 - w * w) / std::cos(std::numbers::pi * w / (2.0 * w0));
}

// f_k^apprx = sqrt(2 Delta / (z w)) (w0^2 - w^2) / (cos(pi w/2w0) sqrt((w0^2-w^2)^2 + (G0 w)^2)).
inline double f_apprx(double w, const CircuitParams& p) {
  if (!(w > 0.0) || w > 2.0 * p.v) throw DomainError("f_apprx: mode outside band");
  if (w >= 3.0 * p.omega0) throw DomainError("f_apprx: closed form has a pole at 3 omega0");
  if (std::isinf(p.z)) return 0.0;  // no array attached: 0 * inf at w0 otherwise
  const double d = p.omega0 * p.omega0 - w * w;
  return std::sqrt(2.0 * p.delta / (p.z * w)) * resonance_ratio(w, p.omega0) / std::hypot(d, p.gamma0 * w);
}

inline double f_tilde_apprx(double w, const CircuitParams& p) {
  const double a = std::numbers::pi * w / (2.0 * p.omega0);
  if (a > 700.0) return 0.0;
  return std::sqrt(2.0 * p.delta / (p.z * w)) / std::cosh(a);
}

// Generic form: (1/pi) sqrt(2 Delta w / z) sqrt((w^2+w0^2)/(G0 w) |dphi|^2 + |phi|^2),
// phi the full transform phi0^(0) + dphi0.
inline double f_tilde_generic(double w, cplx dphi, cplx phi, const CircuitParams& p) {
  const double drift = (p.gamma0 > 0.0) ? (w * w + p.omega0 * p.omega0) / (p.gamma0 * w) * std::norm(dphi) : 0.0;
  return std::sqrt(2.0 * p.delta * w / p.z) / std::numbers::pi * std::sqrt(drift + std::norm(phi));
}

// Specialized form in terms of the real ratio rho = dphi0/phi0^(0).
inline double f_tilde_from_ratio(double w, double rho, const CircuitParams& p) {
  const double drift = (p.gamma0 > 0.0) ? (w * w + p.omega0 * p.omega0) / (p.gamma0 * w) * rho * rho : 0.0;
  return f_tilde_apprx(w, p) * std::sqrt(drift + (1.0 + rho) * (1.0 + rho));
}

// ---- per-mode factors -------------------------------------------------------------------

struct ModeFactors {
  std::vector<double> omegas;
  std::vector<double> f, f_apprx, f_tilde, f_tilde_apprx;
  double f_max = 0.0;  // f, f_apprx are evaluated for omega <= f_max and 0 above
};

inline double default_f_max(const CircuitParams& p) { return 2.5 * p.omega0; }

inline std::vector<double> f_factors(const ContinuationFit& fit, const std::vector<double>& omegas,
                                     const CircuitParams& p) {
  std::vector<double> f(omegas.size());
  for (std::size_t i = 0; i < omegas.size(); ++i) f[i] = f_apprx(omegas[i], p) * fit.eval_real(omegas[i]);
  return f;
}

inline std::vector<double> f_tilde_factors(const SpectralFunction& s, const std::vector<double>& omegas,
                                           const CircuitParams& p) {
  std::vector<double> out(omegas.size());
  for (std::size_t i = 0; i < omegas.size(); ++i) {
    const double w = omegas[i];
    const cplx d = s.interpolate(w, true);
    const double a = std::numbers::pi * w / (2.0 * p.omega0);
    const cplx phi0 = (a > 700.0) ? cplx(0.0) : phi0_bare_matsubara(w, p.omega0);
    out[i] = f_tilde_generic(w, d, phi0 + d, p);
  }
  return out;
}

// All factors on a mode grid. f is restricted to omega <= f_max (the probe region);
// f~ covers every mode up to the band edge (it enters the action sum).
inline ModeFactors mode_factors(const SpectralFunction& s, const ContinuationFit& fit, const ModeGrid& modes,
                                const CircuitParams& p, double f_max = -1.0) {
  ModeFactors m;
  m.omegas = modes.omegas;
  m.f_max = f_max > 0.0 ? f_max : default_f_max(p);
  const std::size_t n = m.omegas.size();
  m.f.assign(n, 0.0);
  m.f_apprx.assign(n, 0.0);
  m.f_tilde = f_tilde_factors(s, m.omegas, p);
  m.f_tilde_apprx.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = m.omegas[i];
    m.f_tilde_apprx[i] = f_tilde_apprx(w, p);
    if (w <= m.f_max) {
      m.f_apprx[i] = f_apprx(w, p);
      m.f[i] = m.f_apprx[i] * fit.eval_real(w);
    }
  }
  return m;
}

// Baseline factors: f = f^apprx, f~ = f~^apprx.
inline ModeFactors baseline_factors(const ModeGrid& modes, const CircuitParams& p, double f_max = -1.0) {
  ModeFactors m;
  m.omegas = modes.omegas;
  m.f_max = f_max > 0.0 ? f_max : default_f_max(p);
  const std::size_t n = m.omegas.size();
  m.f.assign(n, 0.0);
  m.f_apprx.assign(n, 0.0);
  m.f_tilde.resize(n);
  m.f_tilde_apprx.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = m.omegas[i];
    m.f_tilde[i] = m.f_tilde_apprx[i] = f_tilde_apprx(w, p);
    if (w <= m.f_max) m.f[i] = m.f_apprx[i] = f_apprx(w, p);
  }
  return m;
}

inline void write_mode_factors(std::ostream& os, const ModeFactors& m) {
  os.precision(17);
  os << "omega,f,f_tilde,f_apprx,f_tilde_apprx\n";
  for (std::size_t i = 0; i < m.omegas.size(); ++i)
    os << m.omegas[i] << "," << m.f[i] << "," << m.f_tilde[i] << "," << m.f_apprx[i] << "," << m.f_tilde_apprx[i]
       << "\n";
}

// ---- generic-potential route -----------------------------------------------------------

// G(w) = i w (w^2 + G0 w + w0^2) phi(iw): real, even, and free of the resonance pole.
inline double generic_series_value(double w, cplx phi, const CircuitParams& p) {
  const cplx g = cplx(0.0, w) * (w * w + p.gamma0 * w + p.omega0 * p.omega0) * phi;
  if (std::abs(g.imag()) > 1e-6 * std::max(1.0, std::abs(g.real())))
    throw DomainError("generic_series_value: i w phi(iw) not real (parity violation upstream)");
  return g.real();
}

// Defaults differ from the bracket fit: G still carries the bare transform's
// higher poles (3 w0 for the cosine well), so the window is narrower and the order higher.
inline FitOptions generic_fit_options() { return FitOptions{10, 0.05, 1.5, false}; }

// f_k = (1/pi) sqrt(2 Delta w/z) [(w0^2-w^2)^2 + (G0 w)^2]^{-1/2} G_cont(w) / w.
inline std::vector<double> f_factors_generic(const std::vector<double>& fit_omegas, const std::vector<cplx>& phi,
                                             const std::vector<double>& modes, const CircuitParams& p,
                                             const FitOptions& o = generic_fit_options(),
                                             ContinuationFit* fit_out = nullptr) {
  if (fit_omegas.size() != phi.size()) throw DomainError("f_factors_generic: size mismatch");
  std::vector<double> G(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i) G[i] = generic_series_value(fit_omegas[i], phi[i], p);
  const auto fit = fit_continuation(fit_omegas, G, p.omega0, o);
  if (fit_out) *fit_out = fit;
  std::vector<double> f(modes.size());
  for (std::size_t i = 0; i < modes.size(); ++i) {
    const double w = modes[i];
    const double d = p.omega0 * p.omega0 - w * w;
    f[i] = std::sqrt(2.0 * p.delta * w / p.z) / std::numbers::pi / std::hypot(d, p.gamma0 * w) * fit.eval_real(w) / w;
  }
  return f;
}

}  // namespace phaseslip
