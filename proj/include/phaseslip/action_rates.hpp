#pragma once
// Action corrections, the resummed self-energy and inelastic decay rates.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "phaseslip/continuation.hpp"
#include "phaseslip/device_model.hpp"
#include "phaseslip/errors.hpp"
#include "phaseslip/instanton_solver.hpp"
#include "phaseslip/special_functions.hpp"

namespace phaseslip {

struct ActionCorrection {
  double dS1 = 0.0, dS2 = 0.0, dS_apprx = 0.0, S0 = 0.0;
  double dS() const { return dS1 + dS2; }
};

// 1/2 sum f~^2 over the full grid.
inline double delta_S1(const ModeFactors& m) {
  double s = 0.0;
  for (double x : m.f_tilde) s += x * x;
  return 0.5 * s;
}

inline double delta_S_apprx(const ModeFactors& m) {
  double s = 0.0;
  for (double x : m.f_tilde_apprx) s += x * x;
  return 0.5 * s;
}

namespace detail {

// x - sin x without cancellation.
inline double x_minus_sin(double x) {
  if (std::abs(x) > 0.2) return x - std::sin(x);
  const double x2 = x * x;
  double term = x * x2 / 6.0, s = 0.0;
  for (int k = 1; k < 12; ++k) {
    s += term;
    term *= -x2 / ((2.0 * k + 2.0) * (2.0 * k + 3.0));
  }
  return s;
}

}  // namespace detail

// Bracket of the delta S2 integral per unit E_J:
// cos 2(p+d) - cos 2p + 2 sin(2p) d + 2 d^2, arranged so nothing cancels at O(d), O(d^2).
inline double delta_S2_integrand(double phi_bare, double d) {
  const double s = std::sin(phi_bare), sd = std::sin(d);
  return 2.0 * detail::x_minus_sin(d) * (d + sd) + 4.0 * s * s * sd * sd +
         std::sin(2.0 * phi_bare) * detail::x_minus_sin(2.0 * d);
}

// -E_J int [...] dtau. The trajectory obeys w0^2 = 8 E_J E_C, so E_J is the classical one.
// Far field: the bracket tends to (2/3) d^4 with d = c/tau, hence the c^4 / L^3 tail.
inline double delta_S2(const Trajectory& t, const CircuitParams& p) {
  const auto& g = t.grid;
  const std::size_t n = t.dphi0.size();
  if (n < 3) throw DomainError("delta_S2: trajectory too short");
  const double h = g.dtau(), w0 = t.params.omega0;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = delta_S2_integrand(phi0_bare(g.tau(static_cast<int>(i)), w0), t.dphi0[i]);
    s += (i == 0 || i + 1 == n) ? 0.5 * f : f;
  }
  s *= h;
  const double c = t.tail_coefficient(), L = g.tau_max;
  s += (4.0 / 9.0) * std::pow(c, 4) / (L * L * L);
  return -p.EJ_classical() * s;
}

// Generic potential: int [V(p+d) - V(p) - V'(p) d - kappa d^2 / 2] dtau, kappa = C0 w0^2.
// Tail from the d^4 law: 2 g(L) L / 3 over both ends.
inline double delta_S2_generic(const std::vector<double>& taus, const std::vector<double>& phi_bare,
                               const std::vector<double>& dphi, const std::function<double(double)>& V,
                               const std::function<double(double)>& dV, double kappa) {
  const std::size_t n = taus.size();
  if (n < 3 || phi_bare.size() != n || dphi.size() != n) throw DomainError("delta_S2_generic: size mismatch");
  auto g = [&](std::size_t i) {
    const double p = phi_bare[i], d = dphi[i];
    return V(p + d) - V(p) - dV(p) * d - 0.5 * kappa * d * d;
  };
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) s += 0.5 * (taus[i + 1] - taus[i]) * (g(i) + g(i + 1));
  s += (g(0) * std::abs(taus[0]) + g(n - 1) * std::abs(taus[n - 1])) / 3.0;
  return s;
}

inline ActionCorrection action_correction(const Trajectory& t, const ModeFactors& m, const CircuitParams& p) {
  ActionCorrection a;
  a.S0 = p.S0();
  a.dS1 = delta_S1(m);
  a.dS2 = delta_S2(t, p);
  a.dS_apprx = delta_S_apprx(m);
  return a;
}

// ---- self-energy -----------------------------------------------------------

enum class Scheme { direct, stabilized };
inline const char* to_string(Scheme s) { return s == Scheme::direct ? "direct" : "stabilized"; }

struct SelfEnergyOptions {
  Scheme scheme = Scheme::stabilized;
  double omega_c_frac = 0.75;   // split point in (1/2, 1)
  int M = 5;                    // expansion terms at T > 0
  double cap_T = 40.0;          // modes above w + max(cap_T T, cap_frac w) cannot be reached
  double cap_frac = 0.25;
  double taper_frac = 0.4;      // cosine taper on the last fraction of [0, t_max]
  int points_per_period = 16;
  double rel_tol = 1e-4;        // Simpson vs half-step Simpson
  int max_refine = 4;
  double max_log_dynamic_range = std::log(1e6);  // direct scheme refuses beyond this
};

struct SelfEnergyResult {
  double im_pi = 0.0;
  double quadrature_error = 0.0;  // Richardson estimate, absolute
  double tail_amplitude = 0.0;    // max |integrand| on the taper / max overall
  double log_dynamic_range = 0.0;
  long n_time = 0;
};

namespace detail {

struct Mode {
  double w, f2, nB;
};

// Simpson over uniform samples (odd count) and the same with every other sample.
inline std::pair<double, double> simpson_pair(const std::vector<double>& y, double h) {
  const std::size_t n = y.size() - 1;
  auto simpson = [&](std::size_t stride) {
    double s = y[0] + y[n];
    for (std::size_t i = stride, k = 1; i < n; i += stride, ++k) s += (k % 2 ? 4.0 : 2.0) * y[i];
    return s * h * stride / 3.0;
  };
  return {simpson(1), simpson(2)};
}

}  // namespace detail

// Im Pi_R(w) = -lambda0^2 e^{-2 dS} Im int_0^inf sin(w t) exp(-sum [f^2 {...} - f^2]) dt.
//
// The mode sum is discrete with spacing delta, so the time signal recurs; integrating to
// t_max = 2 pi / delta with a window that vanishes there maps the lines onto the continuum
// density exactly for slowly varying spectra (Poisson summation).
inline SelfEnergyResult self_energy_im(double omega, const std::vector<double>& mode_omegas,
                                       const std::vector<double>& f, double delta, double lambda0_value,
                                       double dS, double T, const SelfEnergyOptions& o = {}) {
  if (!(omega > 0.0)) throw DomainError("self_energy_im: omega must be > 0");
  if (!(delta > 0.0)) throw DomainError("self_energy_im: delta must be > 0");
  if (mode_omegas.size() != f.size()) throw DomainError("self_energy_im: size mismatch");
  if (T < 0.0) throw DomainError("self_energy_im: T must be >= 0");
  if (!(o.omega_c_frac > 0.5 && o.omega_c_frac < 1.0)) throw DomainError("self_energy_im: need 1/2 < w_c/w < 1");
  if (o.M < 1) throw DomainError("self_energy_im: M >= 1");
  if (o.scheme == Scheme::stabilized && T > omega / 3.0)
    throw DomainError("self_energy_im: stabilized expansion needs T << omega");

  const double cap = omega + std::max(o.cap_T * T, o.cap_frac * omega);
  const double wc = o.omega_c_frac * omega;
  std::vector<detail::Mode> low, high;
  double S_low = 0.0, S_high = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double w = mode_omegas[i];
    if (w > cap || f[i] == 0.0) continue;
    const detail::Mode m{w, f[i] * f[i], bose_occupation(w, T)};
    if (w < wc) {
      low.push_back(m);
      S_low += m.f2;
    } else {
      high.push_back(m);
      S_high += m.f2;
    }
  }

  SelfEnergyResult r;
  r.log_dynamic_range = S_high;
  if (o.scheme == Scheme::direct && S_high > o.max_log_dynamic_range)
    throw DomainError("self_energy_im: direct scheme integrand spans e^" + std::to_string(S_high) +
                      "; use the stabilized scheme");

  const double t_max = 2.0 * std::numbers::pi / delta;
  const double t_taper = (1.0 - o.taper_frac) * t_max;
  const double w_hi = omega + 2.0 * cap;
  long n = 4 * static_cast<long>(std::ceil(t_max * w_hi * o.points_per_period / (2.0 * std::numbers::pi) / 4.0));
  const bool zero_T = (T == 0.0);

  for (int attempt = 0;; ++attempt) {
    const double h = t_max / static_cast<double>(n);
    std::vector<double> y(static_cast<std::size_t>(n) + 1);
    std::vector<cplx> ph_low(low.size(), 1.0), rot_low(low.size()), ph_high(high.size(), 1.0),
        rot_high(high.size());
    for (std::size_t k = 0; k < low.size(); ++k) rot_low[k] = std::polar(1.0, -low[k].w * h);
    for (std::size_t k = 0; k < high.size(); ++k) rot_high[k] = std::polar(1.0, -high[k].w * h);
    double peak = 0.0, tail_peak = 0.0;

    for (long j = 0; j <= n; ++j) {
      const double t = j * h;
      cplx ex_low = 0.0, sig_high = 0.0;  // -sum_low f^2 (1 - e^{-iwt}), sum_high f^2 e^{-iwt}
      double thermal = 0.0;                // -sum 2 f^2 n (1 - cos wt)
      for (std::size_t k = 0; k < low.size(); ++k) {
        const auto& m = low[k];
        ex_low -= m.f2 * (1.0 - ph_low[k]);
        if (!zero_T) thermal -= 2.0 * m.f2 * m.nB * (1.0 - ph_low[k].real());
        ph_low[k] *= rot_low[k];
      }
      for (std::size_t k = 0; k < high.size(); ++k) {
        const auto& m = high[k];
        sig_high += m.f2 * ph_high[k];
        if (!zero_T) thermal -= 2.0 * m.f2 * m.nB * (1.0 - ph_high[k].real());
        ph_high[k] *= rot_high[k];
      }
      if ((j & 255) == 255) {
        for (auto& z : ph_low) z /= std::abs(z);
        for (auto& z : ph_high) z /= std::abs(z);
      }
      // all factors below are measured relative to e^{S_low}
      double val;
      if (o.scheme == Scheme::direct) {
        const cplx g = std::exp(ex_low + thermal + sig_high);
        val = -std::sin(omega * t) * g.imag();
      } else if (zero_T) {
        // the zero-photon constant (e^{-S_low} here) only feeds delta(w); drop it exactly
        const cplx g = std::exp(ex_low) * (1.0 + sig_high) - std::exp(-S_low);
        val = 0.5 * (std::polar(1.0, omega * t) * g).real();
      } else {
        cplx series = 1.0, term = 1.0;
        for (int m = 1; m <= o.M; ++m) {
          term *= sig_high / static_cast<double>(m);
          series += term;
        }
        const cplx g = std::exp(ex_low + thermal) * series;
        val = -std::sin(omega * t) * g.imag();
      }
      peak = std::max(peak, std::abs(val));
      if (t > t_taper) tail_peak = std::max(tail_peak, std::abs(val));
      const double wgt = t <= t_taper ? 1.0 : 0.5 * (1.0 + std::cos(std::numbers::pi * (t - t_taper) / (t_max - t_taper)));
      y[static_cast<std::size_t>(j)] = wgt * val;
    }

    const auto [fine, coarse] = detail::simpson_pair(y, h);
    const double err = std::abs(fine - coarse) / 15.0;
    const double log_pref = 2.0 * std::log(lambda0_value) - 2.0 * dS + S_low;
    const double scale = std::exp(log_pref);
    r.im_pi = scale * fine;
    r.quadrature_error = scale * err;
    r.tail_amplitude = peak > 0.0 ? tail_peak / peak : 0.0;
    r.n_time = n + 1;
    if (err <= o.rel_tol * std::abs(fine) || err <= 1e-14 * peak * t_max) return r;
    if (attempt >= o.max_refine)
      throw ConvergenceError("self_energy_im: time integral not converged (relative error " +
                                 std::to_string(err / std::abs(fine)) + ", tail amplitude " +
                                 std::to_string(r.tail_amplitude) + ")",
                             err / std::abs(fine));
    n *= 2;
  }
}

// ---- decay rates -----------------------------------------------------------

struct RateResult {
  std::vector<double> omegas, gamma_in, gamma_in_apprx, im_pi, im_pi_apprx, f, f_apprx;
  std::vector<std::string> flags;  // ';'-joined per point, empty when valid
  ActionCorrection action;
  double lambda0 = 0.0, lambda_star = 0.0;
};

// Gamma^in = 2 f^2 Im Pi_R at each probe. The baseline uses f^apprx, f~^apprx and dS^apprx.
// Probe points are independent; they are spread over `workers` threads and stored in order.
inline RateResult decay_rate(const std::vector<double>& probes, const ModeFactors& m, const ContinuationFit& fit,
                             const ActionCorrection& a, const CircuitParams& p, const SelfEnergyOptions& o = {},
                             int workers = 1) {
  RateResult r;
  r.omegas = probes;
  r.action = a;
  r.lambda0 = lambda0(p.E_J, p.E_C);
  const auto ls = lambda_star(r.lambda0, p.omega0, p.z);
  r.lambda_star = ls.applicable ? ls.value : 0.0;
  const std::size_t n = probes.size();
  r.gamma_in.assign(n, 0.0);
  r.gamma_in_apprx.assign(n, 0.0);
  r.im_pi.assign(n, 0.0);
  r.im_pi_apprx.assign(n, 0.0);
  r.f.assign(n, 0.0);
  r.f_apprx.assign(n, 0.0);
  r.flags.assign(n, "");
  std::vector<std::string> errors(n);

  auto one = [&](std::size_t i) {
    try {
      const double w = probes[i];
      r.f_apprx[i] = f_apprx(w, p);
      r.f[i] = r.f_apprx[i] * fit.eval_real(w);
      r.im_pi[i] = self_energy_im(w, m.omegas, m.f, p.delta, r.lambda0, a.dS(), p.T, o).im_pi;
      r.im_pi_apprx[i] = self_energy_im(w, m.omegas, m.f_apprx, p.delta, r.lambda0, a.dS_apprx, p.T, o).im_pi;
      r.gamma_in[i] = 2.0 * r.f[i] * r.f[i] * r.im_pi[i];
      r.gamma_in_apprx[i] = 2.0 * r.f_apprx[i] * r.f_apprx[i] * r.im_pi_apprx[i];
      std::string fl;
      if (std::max({w, p.T, p.gamma0}) < 10.0 * r.lambda_star) fl += "lambda_star_margin;";
      if (r.gamma_in[i] / p.delta >= 1.0) fl += "rate_over_delta;";
      if (!fl.empty()) fl.pop_back();
      r.flags[i] = fl;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  };
  const int nw = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (nw == 1) {
    for (std::size_t i = 0; i < n; ++i) one(i);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < nw; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = static_cast<std::size_t>(w); i < n; i += static_cast<std::size_t>(nw)) one(i);
      });
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!errors[i].empty()) throw DomainError("decay_rate at omega=" + std::to_string(probes[i]) + ": " + errors[i]);
  return r;
}

inline void write_rates(std::ostream& os, const RateResult& r) {
  os << "omega,gamma_in,gamma_in_apprx,im_pi,im_pi_apprx,f,f_apprx,flags\n";
  os.precision(12);
  for (std::size_t i = 0; i < r.omegas.size(); ++i)
    os << r.omegas[i] << ',' << r.gamma_in[i] << ',' << r.gamma_in_apprx[i] << ',' << r.im_pi[i] << ','
       << r.im_pi_apprx[i] << ',' << r.f[i] << ',' << r.f_apprx[i] << ',' << r.flags[i] << '\n';
}

// ---- resummation -----------------------------------------------------------

// Truncated sum over N_out + N_in odd >= 3 of s_out^a s_in^b / (a! b!) against
// sinh(s_out + s_in) - s_out - s_in.
inline std::pair<cplx, cplx> sinh_resummation_identity(cplx s_out, cplx s_in, int N_max = 30) {
  if (std::abs(s_out) > 5.0 || std::abs(s_in) > 5.0) throw DomainError("sinh_resummation_identity: |sigma| <= 5");
  std::vector<cplx> po(N_max + 1), pi(N_max + 1);  // s^k / k!
  po[0] = pi[0] = 1.0;
  for (int k = 1; k <= N_max; ++k) {
    po[k] = po[k - 1] * s_out / static_cast<double>(k);
    pi[k] = pi[k - 1] * s_in / static_cast<double>(k);
  }
  cplx lhs = 0.0;
  for (int a = 0; a <= N_max; ++a)
    for (int b = 0; a + b <= N_max; ++b)
      if ((a + b) % 2 == 1 && a + b >= 3) lhs += po[a] * pi[b];
  const cplx s = s_out + s_in;
  return {lhs, std::sinh(s) - s};
}

}  // namespace phaseslip
