#pragma once

// Euclidean instanton trajectory of a transmon coupled to a semi-infinite
// array: phi0 = phi0^(0) + dphi0. Two independent solvers (fixed-point
// iteration with the array response applied in frequency space, and the
// integro-differential kernel equation) plus the tail-corrected Matsubara
// transform.
//
// Fourier convention: f(iw) = int dtau e^{-i w tau} f(tau), which gives
// phi0^(0)(iw) = pi / (i w cosh(pi w / 2 w0)).

#include <algorithm>
#include <cmath>
#include <complex>
#include <array>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>
#include <boost/numeric/odeint.hpp>

#include "phaseslip/device_model.hpp"
#include "phaseslip/errors.hpp"
#include "phaseslip/special_functions.hpp"

namespace phaseslip {

// ---- parameters -------------------------------------------------------------

// Dissipative symbol r(w) = v G0 - K^(w) of the array. `linear` is the
// small-w form G0 |w| (i.e. phi1 = (1 - |w|/v) phi0).
enum class FrictionSymbol { exact, linear };

struct SolverParams {
  double omega0 = 0.0;
  double gamma0 = 0.0;  // may be 0 (decoupled transmon)
  double v = 0.0;
  FrictionSymbol symbol = FrictionSymbol::exact;

  static SolverParams from(const CircuitParams& p, FrictionSymbol s = FrictionSymbol::exact) {
    return {p.omega0, p.gamma0, p.v, s};
  }
  void validate() const {
    if (!(omega0 > 0.0) || !(v > 0.0) || !(gamma0 >= 0.0))
      throw DomainError("SolverParams: need omega0 > 0, v > 0, gamma0 >= 0");
  }
  double r(double w) const {
    if (gamma0 == 0.0) return 0.0;
    if (symbol == FrictionSymbol::linear) return gamma0 * std::abs(w);
    return friction_symbol(w, KernelParams{v, gamma0});
  }
};

// ---- bare instanton -----------------------------------------------------------

inline double phi0_bare(double tau, double omega0) { return 2.0 * std::atan(std::exp(omega0 * tau)); }

inline double phi0_bare_dot(double tau, double omega0) { return omega0 / std::cosh(omega0 * tau); }

inline cplx phi0_bare_matsubara(double omega, double omega0) {
  if (omega == 0.0) throw DomainError("phi0_bare_matsubara: omega = 0 (zero mode)");
  const double a = std::numbers::pi * omega / (2.0 * omega0);
  if (std::abs(a) > 700.0) return {0.0, 0.0};
  return cplx(0.0, -std::numbers::pi / (omega * std::cosh(a)));
}

// ---- grids --------------------------------------------------------------------

struct TimeGrid {
  double tau_max = 0.0;
  int n_points = 0;  // odd, includes tau = 0

  static TimeGrid make(double omega0, double tau_max_w0 = 100.0, double dtau_w0 = 0.02) {
    TimeGrid g;
    g.tau_max = tau_max_w0 / omega0;
    int half = static_cast<int>(std::ceil(tau_max_w0 / dtau_w0 - 1e-9));
    if (half % 2) ++half;  // even number of half-grid intervals for Simpson
    g.n_points = 2 * half + 1;
    return g;
  }
  void validate() const {
    if (!(tau_max > 0.0) || n_points < 5 || n_points % 2 == 0)
      throw DomainError("TimeGrid: need tau_max > 0 and odd n_points >= 5");
  }
  int half() const { return (n_points - 1) / 2; }
  double dtau() const { return 2.0 * tau_max / (n_points - 1); }
  double tau(int i) const { return -tau_max + i * dtau(); }
  std::vector<double> taus() const {
    std::vector<double> t(n_points);
    for (int i = 0; i < n_points; ++i) t[i] = tau(i);
    t[half()] = 0.0;
    return t;
  }
};

enum class SolveMethod { iterative, integro_differential, closed_form };

inline std::string to_string(SolveMethod m) {
  switch (m) {
    case SolveMethod::iterative: return "iterative";
    case SolveMethod::integro_differential: return "integro_differential";
    default: return "closed_form";
  }
}

struct Trajectory {
  TimeGrid grid;
  std::vector<double> dphi0;  // on the full symmetric grid
  double residual = 0.0;           // convergence measure the solver iterated on
  double equation_residual = 0.0;  // sup |D2 y - nl - R y - F| / w0^2
  int iterations = 0;
  SolveMethod method = SolveMethod::iterative;
  SolverParams params;
  std::vector<std::string> warnings;

  // Half-grid view: index k >= 0 maps to tau = k dtau.
  double at_half(int k) const { return dphi0[grid.half() + k]; }
  double tail_coefficient() const { return grid.tau_max * dphi0.back(); }
  double antisymmetry_error() const {
    double e = 0.0;
    const int h = grid.half();
    for (int k = 0; k <= h; ++k) e = std::max(e, std::abs(dphi0[h + k] + dphi0[h - k]));
    return e;
  }
  double sup_norm() const {
    double e = 0.0;
    for (double x : dphi0) e = std::max(e, std::abs(x));
    return e;
  }
};

inline Trajectory make_trajectory(const TimeGrid& grid, const std::vector<double>& half_values,
                                  SolveMethod method, const SolverParams& p) {
  const int h = grid.half();
  if (static_cast<int>(half_values.size()) != h + 1)
    throw DomainError("make_trajectory: half-grid size mismatch");
  Trajectory t;
  t.grid = grid;
  t.method = method;
  t.params = p;
  t.dphi0.assign(grid.n_points, 0.0);
  for (int k = 1; k <= h; ++k) {
    t.dphi0[h + k] = half_values[k];
    t.dphi0[h - k] = -half_values[k];
  }
  return t;
}

// ---- frequency-integral helpers ----------------------------------------------

namespace detail {

// out[i] ~ int_0^{w_max} g(w) sin(w t_i) dw sampled at w_j = j dw: trapezoid plus
// end corrections at 0 (g is assumed negligible at the top).
inline std::vector<double> sine_sum(const std::vector<double>& g, double dw, const std::vector<double>& t) {
  std::vector<double> out(t.size(), 0.0);
  const std::size_t n = g.size();
  for (std::size_t i = 0; i < t.size(); ++i) {
    const cplx step = std::polar(1.0, dw * t[i]);
    cplx e = 1.0;
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double w = (j + 1 == n) ? 0.5 : 1.0;
      s += w * g[j] * e.imag();
      e *= step;
      if ((j & 255u) == 255u) e = std::polar(1.0, dw * (j + 1) * t[i]);
    }
    // Euler-Maclaurin end corrections at w = 0, f = g sin(w t):
    // f'(0) = g0 t, f'''(0) = 3 g''(0) t - g0 t^3.
    const double ti = t[i];
    const double g2 = (n >= 3) ? (g[0] - 2.0 * g[1] + g[2]) / (dw * dw) : 0.0;
    const double f1 = g[0] * ti, f3 = 3.0 * g2 * ti - g[0] * ti * ti * ti;
    out[i] = s * dw + dw * dw / 12.0 * f1 - std::pow(dw, 4) / 720.0 * f3;
  }
  return out;
}

inline std::vector<double> half_taus(const TimeGrid& grid) {
  std::vector<double> t(grid.half() + 1);
  for (int k = 0; k <= grid.half(); ++k) t[k] = k * grid.dtau();
  return t;
}

// Frequency step and count for sine integrals resolving times up to t_span.
inline std::pair<double, int> frequency_sampling(double omega0, double w_max, double t_span) {
  const double dw = std::min(0.005 * omega0, std::numbers::pi / (8.0 * t_span));
  return {dw, static_cast<int>(std::ceil(w_max / dw)) + 1};
}

}  // namespace detail

// F(tau) = inverse transform of r(w) phi0^(0)(iw) = int_0^inf r(w) sin(w tau) / (w cosh(pi w / 2w0)) dw,
// truncated where the cosh factor has decayed below e^{-40}.
inline std::vector<double> forcing_term_half(const TimeGrid& grid, const SolverParams& p) {
  const auto t = detail::half_taus(grid);
  if (p.gamma0 == 0.0) return std::vector<double>(t.size(), 0.0);
  const double w_max = 80.0 * p.omega0 / std::numbers::pi;
  const auto [dw, n] = detail::frequency_sampling(p.omega0, w_max, 4.0 * grid.tau_max);
  std::vector<double> g(n);
  g[0] = p.gamma0;  // r(w)/w -> G0
  for (int j = 1; j < n; ++j) {
    const double w = j * dw;
    g[j] = p.r(w) / (w * std::cosh(std::numbers::pi * w / (2.0 * p.omega0)));
  }
  return detail::sine_sum(g, dw, t);
}

inline std::vector<double> forcing_term(const TimeGrid& grid, const SolverParams& p) {
  const auto half = forcing_term_half(grid, p);
  std::vector<double> full(grid.n_points);
  const int h = grid.half();
  for (int k = 0; k <= h; ++k) {
    full[h + k] = half[k];
    full[h - k] = -half[k];
  }
  full[h] = 0.0;
  return full;
}

// Linearized-limit solution: inverse transform of
//   -G0|w| / (w^2 + G0|w| + w0^2) phi0^(0)(iw)
//   = -G0 int_0^inf sin(w tau) / ((w^2 + G0 w + w0^2) cosh(pi w / 2w0)) dw.
inline Trajectory dphi0_apprx_trajectory(const TimeGrid& grid, const SolverParams& p) {
  const auto t = detail::half_taus(grid);
  std::vector<double> half(t.size(), 0.0);
  if (p.gamma0 > 0.0) {
    const double w_max = 80.0 * p.omega0 / std::numbers::pi;
    const auto [dw, n] = detail::frequency_sampling(p.omega0, w_max, 4.0 * grid.tau_max);
    std::vector<double> g(n);
    for (int j = 0; j < n; ++j) {
      const double w = j * dw;
      g[j] = -p.gamma0 / ((w * w + p.gamma0 * w + p.omega0 * p.omega0) *
                          std::cosh(std::numbers::pi * w / (2.0 * p.omega0)));
    }
    half = detail::sine_sum(g, dw, t);
    half[0] = 0.0;
  }
  auto traj = make_trajectory(grid, half, SolveMethod::closed_form, p);
  return traj;
}

// ---- shared half-line machinery ---------------------------------------------
//
// Unknowns y_k = dphi0(k h), k = 1..N, y_0 = 0 by antisymmetry. At tau_max = N h
// the tail c/tau is imposed through a ghost point, y_{N+1} = y_{N-1} - 2h y_N / L,
// i.e. y'(L) = -y(L)/L.

struct SolveOptions {
  double tol = 1e-8;       // outer: sup-norm change; integro: scaled residual
  int max_iter = 100;
  int anderson_depth = 5;  // 0 disables acceleration
  double newton_tol = 1e-12;
  int newton_max_iter = 50;
};

namespace detail {

struct HalfProblem {
  int N = 0;
  double h = 0.0, L = 0.0, w0 = 0.0;
  std::vector<double> tau, a;  // a = 2 phi0^(0)(tau)

  HalfProblem(const TimeGrid& g, double omega0) : N(g.half()), h(g.dtau()), L(g.tau_max), w0(omega0) {
    tau = half_taus(g);
    a.resize(N + 1);
    for (int k = 0; k <= N; ++k) a[k] = 2.0 * phi0_bare(tau[k], omega0);
  }

  // (w0^2/2)[sin(a + 2y) - sin a], written without cancellation.
  double nl(int k, double y) const { return w0 * w0 * std::cos(a[k] + y) * std::sin(y); }
  double nl_prime(int k, double y) const { return w0 * w0 * std::cos(a[k] + 2.0 * y); }

  double d2(const std::vector<double>& y, int k) const {
    const double left = y[k - 1];
    const double right = (k == N) ? y[N - 1] - 2.0 * h * y[N] / L : y[k + 1];
    return (right - 2.0 * y[k] + left) / (h * h);
  }
};

// Thomas algorithm; sub[k] couples k to k-1, sup[k] couples k to k+1 (indices 1..N).
inline std::vector<double> tridiag_solve(std::vector<double> sub, std::vector<double> dia,
                                         std::vector<double> sup, std::vector<double> rhs, int N) {
  for (int k = 2; k <= N; ++k) {
    const double m = sub[k] / dia[k - 1];
    dia[k] -= m * sup[k - 1];
    rhs[k] -= m * rhs[k - 1];
  }
  std::vector<double> x(N + 1, 0.0);
  x[N] = rhs[N] / dia[N];
  for (int k = N - 1; k >= 1; --k) x[k] = (rhs[k] - sup[k] * x[k + 1]) / dia[k];
  return x;
}

inline double sup_abs(const std::vector<double>& v, int from = 1) {
  double m = 0.0;
  for (std::size_t k = from; k < v.size(); ++k) m = std::max(m, std::abs(v[k]));
  return m;
}

// Solves D2 y - nl(y) - mu y = b by damped Newton (tridiagonal Jacobian).
inline std::vector<double> newton_local(const HalfProblem& P, double mu, const std::vector<double>& b,
                                        std::vector<double> y, const SolveOptions& o) {
  const int N = P.N;
  const double scale = P.w0 * P.w0;
  auto residual = [&](const std::vector<double>& x) {
    std::vector<double> G(N + 1, 0.0);
    for (int k = 1; k <= N; ++k) G[k] = P.d2(x, k) - P.nl(k, x[k]) - mu * x[k] - b[k];
    return G;
  };
  auto G = residual(y);
  double g = sup_abs(G) / scale;
  const double ih2 = 1.0 / (P.h * P.h);
  for (int it = 0; it < o.newton_max_iter && g > o.newton_tol; ++it) {
    std::vector<double> sub(N + 1, ih2), sup(N + 1, ih2), dia(N + 1), rhs(N + 1);
    for (int k = 1; k <= N; ++k) {
      dia[k] = -2.0 * ih2 - P.nl_prime(k, y[k]) - mu;
      rhs[k] = -G[k];
    }
    dia[N] -= 2.0 / (P.h * P.L);
    sub[N] = 2.0 * ih2;
    const auto dy = tridiag_solve(sub, dia, sup, rhs, N);
    double step = 1.0;
    for (int ls = 0;; ++ls) {
      std::vector<double> trial(y);
      for (int k = 1; k <= N; ++k) trial[k] += step * dy[k];
      const auto Gt = residual(trial);
      const double gt = sup_abs(Gt) / scale;
      if (gt < g || ls >= 30) {
        if (!(gt < g) && ls >= 30) throw ConvergenceError("Newton line search failed", g);
        y = std::move(trial);
        G = Gt;
        g = gt;
        break;
      }
      step *= 0.5;
    }
  }
  if (g > std::max(o.newton_tol, 1e-9)) throw ConvergenceError("Newton did not converge", g);
  return y;
}

// Applies the array response R = r(|w|) (symbol) to an odd half-line function
// with tail c/tau beyond L. R m, m = tau/(tau^2 + b^2), is precomputed since the
// split x = rho + c m leaves rho decaying like 1/tau^3.
class SpectralFriction {
 public:
  SpectralFriction(const HalfProblem& P, const SolverParams& p) : P_(P), b_(1.0 / p.omega0) {
    const int N = P.N;
    nfft_ = 1;
    while (nfft_ < 16 * N) nfft_ *= 2;
    symbol_.resize(nfft_);
    const double dw = 2.0 * std::numbers::pi / (nfft_ * P.h);
    for (int k = 0; k < nfft_; ++k) {
      const int kk = (k <= nfft_ / 2) ? k : k - nfft_;
      symbol_[k] = p.r(std::abs(kk * dw));
    }
    // R m = int_0^inf r(w) e^{-b w} sin(w tau) dw.
    const auto [dws, n] = frequency_sampling(p.omega0, 45.0 * p.omega0, 4.0 * P.L);
    std::vector<double> g(n);
    for (int j = 0; j < n; ++j) g[j] = p.r(j * dws) * std::exp(-b_ * j * dws);
    Rm_ = sine_sum(g, dws, P.tau);
  }

  double m(double t) const { return t / (t * t + b_ * b_); }

  std::vector<double> apply(const std::vector<double>& y) const {
    const int N = P_.N;
    const double c = P_.L * y[N];
    std::vector<cplx> buf(nfft_, 0.0);
    const int half = nfft_ / 2;
    for (int j = 1; j < half; ++j) {
      const double t = j * P_.h;
      const double rho = (j <= N) ? y[j] - c * m(t) : c * b_ * b_ / (t * (t * t + b_ * b_));
      buf[j] = rho;
      buf[nfft_ - j] = -rho;
    }
    std::vector<cplx> spec;
    fft_.fwd(spec, buf);
    for (int k = 0; k < nfft_; ++k) spec[k] *= symbol_[k];
    std::vector<cplx> back;
    fft_.inv(back, spec);
    std::vector<double> out(N + 1, 0.0);
    for (int j = 1; j <= N; ++j) out[j] = back[j].real() + c * Rm_[j];
    return out;
  }

 private:
  const HalfProblem& P_;
  double b_;
  int nfft_ = 0;
  std::vector<double> symbol_;
  std::vector<double> Rm_;
  mutable Eigen::FFT<double> fft_;
};

inline void check_boundary_regime(const Trajectory& t) {
  if (std::abs(t.dphi0.back()) >= 0.05)
    throw DomainError("boundary-regime violation: |dphi0(tau_max)| >= 0.05; increase tau_max");
}

// Anderson mixing on the fixed-point map x -> g(x).
class Anderson {
 public:
  explicit Anderson(int depth) : m_(depth) {}
  Eigen::VectorXd next(const Eigen::VectorXd& x, const Eigen::VectorXd& gx) {
    const Eigen::VectorXd f = gx - x;
    if (m_ <= 0) return gx;
    if (has_prev_) {
      dF_.push_back(f - f_prev_);
      dG_.push_back(gx - g_prev_);
      if (static_cast<int>(dF_.size()) > m_) {
        dF_.erase(dF_.begin());
        dG_.erase(dG_.begin());
      }
    }
    f_prev_ = f;
    g_prev_ = gx;
    has_prev_ = true;
    if (dF_.empty()) return gx;
    const int k = static_cast<int>(dF_.size());
    Eigen::MatrixXd F(f.size(), k), G(f.size(), k);
    for (int i = 0; i < k; ++i) {
      F.col(i) = dF_[i];
      G.col(i) = dG_[i];
    }
    const Eigen::VectorXd gamma = F.colPivHouseholderQr().solve(f);
    return gx - G * gamma;
  }
  void reset() {
    dF_.clear();
    dG_.clear();
    has_prev_ = false;
  }

 private:
  int m_;
  bool has_prev_ = false;
  Eigen::VectorXd f_prev_, g_prev_;
  std::vector<Eigen::VectorXd> dF_, dG_;
};

}  // namespace detail

// Fixed-point route. Each sweep solves
//   D2 y - nl(y) - vG0 y = F + R y_old - vG0 y_old,
// with R y_old the array response of the previous iterate (the phi1 update in
// frequency space), i.e. at the fixed point D2 y = nl(y) + R y + F.
inline Trajectory solve_iterative(const SolverParams& p, const TimeGrid& grid, const SolveOptions& o = {}) {
  p.validate();
  grid.validate();
  const detail::HalfProblem P(grid, p.omega0);
  const int N = P.N;
  if (p.gamma0 == 0.0) {
    auto t = make_trajectory(grid, std::vector<double>(N + 1, 0.0), SolveMethod::iterative, p);
    t.iterations = 1;
    return t;
  }
  const auto F = forcing_term_half(grid, p);
  const detail::SpectralFriction R(P, p);
  const double mu = p.v * p.gamma0;

  std::vector<double> y(N + 1, 0.0);
  detail::Anderson aa(o.anderson_depth);
  double change = 0.0;
  int it = 0;
  for (it = 1; it <= o.max_iter; ++it) {
    const auto Ry = R.apply(y);
    std::vector<double> b(N + 1, 0.0);
    for (int k = 1; k <= N; ++k) b[k] = F[k] + Ry[k] - mu * y[k];
    const auto gy = detail::newton_local(P, mu, b, y, o);
    change = 0.0;
    for (int k = 1; k <= N; ++k) change = std::max(change, std::abs(gy[k] - y[k]));
    if (change < o.tol) {
      y = gy;
      break;
    }
    Eigen::VectorXd xv = Eigen::Map<const Eigen::VectorXd>(y.data() + 1, N);
    Eigen::VectorXd gv = Eigen::Map<const Eigen::VectorXd>(gy.data() + 1, N);
    Eigen::VectorXd nx = aa.next(xv, gv);
    if (!nx.allFinite()) {
      aa.reset();
      nx = gv;
    }
    for (int k = 1; k <= N; ++k) y[k] = nx[k - 1];
  }
  if (it > o.max_iter) throw ConvergenceError("solve_iterative: max_iter exceeded", change);

  // Final residual of the full equation.
  const auto Ry = R.apply(y);
  double res = 0.0;
  for (int k = 1; k <= N; ++k)
    res = std::max(res, std::abs(P.d2(y, k) - P.nl(k, y[k]) - Ry[k] - F[k]));
  auto t = make_trajectory(grid, y, SolveMethod::iterative, p);
  t.iterations = it;
  t.residual = change;
  t.equation_residual = res / (p.omega0 * p.omega0);
  detail::check_boundary_regime(t);
  return t;
}

// ---- integro-differential route ----------------------------------------------

namespace detail {

inline const std::vector<std::pair<double, double>>& gauss_legendre_unit(int n) {
  // nodes/weights on [0, 1]
  static thread_local std::vector<std::vector<std::pair<double, double>>> cache(65);
  auto& c = cache.at(n);
  if (c.empty()) {
    for (int i = 1; i <= n; ++i) {
      double x = std::cos(std::numbers::pi * (i - 0.25) / (n + 0.5));
      double dp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
          const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        const double dx = p1 / dp;
        x -= dx;
        if (std::abs(dx) < 1e-16) break;
      }
      c.emplace_back(0.5 * (1.0 - x), 1.0 / ((1.0 - x * x) * dp * dp));
    }
  }
  return c;
}

// Product-integration weights for int K(tau - s) x(s) ds with x piecewise linear:
// W_m = h int_{-1}^{1} K((m + u) h)(1 - |u|) du, m = 0..M, plus the curvature
// constant C = (1/2) int K(s) d(s)(h - d(s)) ds (d = distance to the cell's left node)
// that restores second-order accuracy for the narrow kernel.
struct KernelWeights {
  std::vector<double> W;
  double curvature = 0.0;
};

inline KernelWeights kernel_weights(const KernelParams& kp, double h, int M) {
  KernelWeights out;
  out.W.assign(M + 1, 0.0);
  auto cell = [&](int m, auto&& fn) {  // int_0^1 K((m+u)h) fn(u) du
    const int n = (m < 64) ? 32 : 8;
    double s = 0.0;
    for (auto [u, w] : gauss_legendre_unit(n)) s += w * kernel_K((m + u) * h, kp) * fn(u);
    return s;
  };
  std::vector<double> right(M + 1), left(M + 1), mid(M + 1);
  for (int m = 0; m <= M; ++m) {
    right[m] = cell(m, [](double u) { return 1.0 - u; });  // hat centred at m, right half
    left[m] = cell(m, [](double u) { return u; });         // hat centred at m+1, left half
    mid[m] = cell(m, [](double u) { return u * (1.0 - u); });
  }
  out.W[0] = 2.0 * h * right[0];
  for (int m = 1; m <= M; ++m) out.W[m] = h * (right[m] + left[m - 1]);
  double c = 0.0;
  for (int m = M; m >= 0; --m) c += mid[m];
  // Ohmic tail beyond M h: K ~ G0/(pi s^2), int u(1-u) = 1/6.
  c += kp.gamma0 / (std::numbers::pi * h * h) / 6.0 / (M + 0.5);
  out.curvature = h * h * h * c;  // 2 (both sides) x 1/2
  return out;
}

}  // namespace detail

// Solves D2 y = nl(y) + (vG0 - K*) y + F directly, with the convolution on the
// grid out to 8 tau_max, the c/tau tail beyond tau_max and an Ohmic far field.
inline Trajectory solve_integro_differential(const SolverParams& p, const TimeGrid& grid,
                                             const SolveOptions& o = {}) {
  p.validate();
  grid.validate();
  const detail::HalfProblem P(grid, p.omega0);
  const int N = P.N;
  const double h = P.h, L = P.L;
  if (p.gamma0 == 0.0) {
    auto t = make_trajectory(grid, std::vector<double>(N + 1, 0.0), SolveMethod::integro_differential, p);
    t.iterations = 1;
    return t;
  }
  if (p.symbol != FrictionSymbol::exact)
    throw DomainError("solve_integro_differential: only the exact kernel is available");
  const KernelParams kp{p.v, p.gamma0};
  const int Ne = 8 * N;
  const double Le = Ne * h;
  const int M = Ne + N;
  const auto kw = detail::kernel_weights(kp, h, M);
  std::vector<double> W = kw.W;
  W[0] += 2.0 * kw.curvature / (h * h);
  W[1] -= kw.curvature / (h * h);

  // Row sums S_i = sum_{|j| <= Ne} W_{i-j}.
  std::vector<double> prefix(M + 2, 0.0);  // prefix[m+1] = sum_{k=0..m} W_k
  for (int m = 0; m <= M; ++m) prefix[m + 1] = prefix[m] + W[m];
  auto wsum = [&](int lo, int hi) {  // sum_{m=lo..hi} W_|m|
    auto upto = [&](int m) { return m < 0 ? 0.0 : prefix[m + 1]; };
    if (lo >= 0) return upto(hi) - upto(lo - 1);
    if (hi <= 0) return upto(-lo) - upto(-hi - 1);
    return upto(-lo) + upto(hi) - W[0];
  };
  std::vector<double> S(N + 1), T(N + 1, 0.0), farA(N + 1), farB(N + 1), farDiag(N + 1);
  for (int i = 1; i <= N; ++i) S[i] = wsum(i - Ne, i + Ne);
  // Tail nodes N < j <= Ne carry c/tau_j (and -c/tau_j mirrored).
  for (int i = 1; i <= N; ++i) {
    double acc = 0.0;
    for (int j = N + 1; j <= Ne; ++j) acc += (W[j - i] - W[i + j]) / (j * h);
    T[i] = acc;
  }
  const auto& gl = detail::gauss_legendre_unit(24);
  for (int i = 1; i <= N; ++i) {
    const double t = i * h;
    double A = 0.0, B = 0.0;
    for (auto [u, w] : gl) {
      A += w * u / ((Le - t * u) * (Le - t * u));
      B += w * u / ((Le + t * u) * (Le + t * u));
    }
    farA[i] = A;
    farB[i] = B;
    farDiag[i] = 1.0 / (Le - t) + 1.0 / (Le + t);
  }
  const double ohm = p.gamma0 / std::numbers::pi;

  // Near-field Toeplitz/Hankel product via FFT: conv_i = sum_{|j|<=N} W_{i-j} y_j.
  int nfft = 1;
  while (nfft < 6 * N + 2) nfft *= 2;
  Eigen::FFT<double> fft;
  std::vector<cplx> wbuf(nfft, 0.0), wspec;
  for (int m = -2 * N; m <= 2 * N; ++m) wbuf[(m + nfft) % nfft] = W[std::abs(m)];
  fft.fwd(wspec, wbuf);

  auto applyR = [&](const std::vector<double>& y) {
    std::vector<cplx> buf(nfft, 0.0), spec, back;
    for (int j = 1; j <= N; ++j) {
      buf[j] = y[j];
      buf[nfft - j] = -y[j];
    }
    fft.fwd(spec, buf);
    for (int k = 0; k < nfft; ++k) spec[k] *= wspec[k];
    fft.inv(back, spec);
    const double c = L * y[N];
    std::vector<double> out(N + 1, 0.0);
    for (int i = 1; i <= N; ++i)
      out[i] = S[i] * y[i] - back[i].real() - c * T[i] + ohm * (y[i] * farDiag[i] - c * (farA[i] - farB[i]));
    return out;
  };

  const auto F = forcing_term_half(grid, p);
  const double scale = p.omega0 * p.omega0;
  auto residual = [&](const std::vector<double>& y) {
    const auto Ry = applyR(y);
    std::vector<double> G(N + 1, 0.0);
    for (int k = 1; k <= N; ++k) G[k] = P.d2(y, k) - P.nl(k, y[k]) - Ry[k] - F[k];
    return G;
  };

  // Preconditioner: tridiagonal part of the Jacobian.
  const double ih2 = 1.0 / (h * h);
  auto precond_factory = [&](const std::vector<double>& y) {
    std::vector<double> sub(N + 1, ih2 + W[1]), sup(N + 1, ih2 + W[1]), dia(N + 1);
    for (int k = 1; k <= N; ++k)
      dia[k] = -2.0 * ih2 - P.nl_prime(k, y[k]) - (S[k] - W[0] + W[2 * k] + ohm * farDiag[k]);
    dia[N] -= 2.0 / (h * L);
    sub[N] = 2.0 * ih2 + W[1];
    return [=](const Eigen::VectorXd& r) {
      std::vector<double> rhs(N + 1, 0.0);
      for (int k = 1; k <= N; ++k) rhs[k] = r[k - 1];
      const auto x = detail::tridiag_solve(sub, dia, sup, rhs, N);
      return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(x.data() + 1, N));
    };
  };

  std::vector<double> y(N + 1, 0.0);
  auto G = residual(y);
  double g = detail::sup_abs(G) / scale;
  int it = 0;
  const double target = std::min(o.tol, 1e-9);
  for (it = 1; it <= o.newton_max_iter && g > target; ++it) {
    const auto Minv = precond_factory(y);
    auto J = [&](const Eigen::VectorXd& dv) {  // Jacobian-vector product
      std::vector<double> d(N + 1, 0.0);
      for (int k = 1; k <= N; ++k) d[k] = dv[k - 1];
      const auto Rd = applyR(d);
      Eigen::VectorXd out(N);
      for (int k = 1; k <= N; ++k) out[k - 1] = P.d2(d, k) - P.nl_prime(k, y[k]) * d[k] - Rd[k];
      return out;
    };
    Eigen::VectorXd rhs(N);
    for (int k = 1; k <= N; ++k) rhs[k - 1] = -G[k];
    // Right-preconditioned restarted GMRES.
    Eigen::VectorXd dx = Eigen::VectorXd::Zero(N);
    const int restart = 60;
    const double bnorm = rhs.norm();
    for (int cycle = 0; cycle < 20; ++cycle) {
      Eigen::VectorXd r0 = rhs - J(dx);
      const double beta = r0.norm();
      if (beta <= 1e-12 * bnorm) break;
      Eigen::MatrixXd V(N, restart + 1), Hm = Eigen::MatrixXd::Zero(restart + 1, restart);
      V.col(0) = r0 / beta;
      int k = 0;
      Eigen::VectorXd e1 = Eigen::VectorXd::Zero(restart + 1);
      e1[0] = beta;
      Eigen::VectorXd ycoef;
      for (k = 0; k < restart; ++k) {
        Eigen::VectorXd w = J(Minv(V.col(k)));
        for (int i = 0; i <= k; ++i) {
          Hm(i, k) = V.col(i).dot(w);
          w -= Hm(i, k) * V.col(i);
        }
        Hm(k + 1, k) = w.norm();
        if (Hm(k + 1, k) > 0) V.col(k + 1) = w / Hm(k + 1, k);
        ycoef = Hm.topLeftCorner(k + 2, k + 1).colPivHouseholderQr().solve(e1.head(k + 2));
        const double rn = (e1.head(k + 2) - Hm.topLeftCorner(k + 2, k + 1) * ycoef).norm();
        if (rn <= 1e-12 * bnorm || Hm(k + 1, k) == 0.0) {
          ++k;
          break;
        }
      }
      const int used = static_cast<int>(ycoef.size());
      dx += Minv(V.leftCols(used) * ycoef);
    }
    double step = 1.0;
    for (int ls = 0;; ++ls) {
      std::vector<double> trial(y);
      for (int k = 1; k <= N; ++k) trial[k] += step * dx[k - 1];
      const auto Gt = residual(trial);
      const double gt = detail::sup_abs(Gt) / scale;
      if (gt < g) {
        y = std::move(trial);
        G = Gt;
        g = gt;
        break;
      }
      if (ls >= 30) throw ConvergenceError("solve_integro_differential: line search failed", g);
      step *= 0.5;
    }
  }
  if (g > target) throw ConvergenceError("solve_integro_differential: Newton did not converge", g);
  auto t = make_trajectory(grid, y, SolveMethod::integro_differential, p);
  t.iterations = it;
  t.residual = g;
  t.equation_residual = g;
  detail::check_boundary_regime(t);
  return t;
}

// ---- Matsubara transform -------------------------------------------------------

enum class Parity { even, odd };

struct SpectralFunction {
  std::vector<double> omegas;  // nonnegative, ascending
  std::vector<cplx> values;
  Parity parity = Parity::odd;
  bool tail_corrected = false;
  double tail_coefficient = 0.0;

  double max_omega() const { return omegas.empty() ? 0.0 : omegas.back(); }

  // Local cubic (4-point Lagrange) interpolation; parity extends to w < 0.
  // Zero beyond the grid only if `zero_beyond` (the tabulated range is chosen to
  // end where the transform is negligible).
  cplx interpolate(double w, bool zero_beyond = false) const {
    const double aw = std::abs(w);
    const double sign = (w < 0.0 && parity == Parity::odd) ? -1.0 : 1.0;
    const std::size_t n = omegas.size();
    if (n < 4) throw DomainError("SpectralFunction: need at least 4 samples to interpolate");
    if (aw > omegas.back() * (1.0 + 1e-12)) {
      if (zero_beyond) return 0.0;
      throw DomainError("SpectralFunction: interpolation outside spectral span");
    }
    if (aw < omegas.front()) throw DomainError("SpectralFunction: interpolation below spectral span");
    auto it = std::upper_bound(omegas.begin(), omegas.end(), aw);
    std::size_t i = (it == omegas.begin()) ? 0 : static_cast<std::size_t>(it - omegas.begin()) - 1;
    std::size_t lo = (i == 0) ? 0 : i - 1;
    if (lo + 3 >= n) lo = n - 4;
    cplx acc = 0.0;
    for (std::size_t a = lo; a < lo + 4; ++a) {
      double l = 1.0;
      for (std::size_t b = lo; b < lo + 4; ++b)
        if (b != a) l *= (aw - omegas[b]) / (omegas[a] - omegas[b]);
      acc += l * values[a];
    }
    return sign * acc;
  }
};

// Uniform Matsubara grid 0, dw, 2dw, ... up to min(2v, 60 w0), dw = w0/50.
inline std::vector<double> spectral_grid(const SolverParams& p, double step_w0 = 0.02, double max_w0 = 60.0) {
  const double dw = step_w0 * p.omega0;
  const double top = std::min(2.0 * p.v, max_w0 * p.omega0);
  std::vector<double> w;
  for (int k = 0; k * dw <= top * (1.0 + 1e-12); ++k) w.push_back(k * dw);
  return w;
}

// Checks the 1/tau regime: local -tau d ln|y| / dtau within `tol` of 1 over the
// last decade of the grid.
inline bool tail_regime_ok(const Trajectory& t, double tol = 0.15, double* worst = nullptr) {
  const int N = t.grid.half();
  const double h = t.grid.dtau();
  double w = 0.0;
  for (int k = std::max(2, N / 10); k < N; ++k) {
    const double y0 = t.at_half(k - 1), y1 = t.at_half(k + 1), y = t.at_half(k);
    if (y == 0.0 || y0 * y1 <= 0.0) {
      w = std::numeric_limits<double>::infinity();
      break;
    }
    const double slope = -(k * h) * (std::log(std::abs(y1)) - std::log(std::abs(y0))) / (2.0 * h);
    w = std::max(w, std::abs(slope - 1.0));
  }
  if (worst) *worst = w;
  return w <= tol;
}

// dphi0(iw) = -2i [ Simpson int_0^L sin(w tau) dphi0 dtau + c Im Gamma(0, -i w L) ],
// the last term being the analytic transform of the c/tau tail beyond L.
inline SpectralFunction matsubara_transform(const Trajectory& t, const std::vector<double>& omegas,
                                            bool tail_correction = true, bool check_tail = true) {
  const int N = t.grid.half();
  if (N % 2) throw DomainError("matsubara_transform: half grid must have an even number of intervals");
  const bool trivial = t.sup_norm() == 0.0;
  if (check_tail && !trivial && !tail_regime_ok(t))
    throw DomainError("matsubara_transform: trajectory is not in the 1/tau regime near tau_max; increase tau_max");
  const double h = t.grid.dtau(), L = t.grid.tau_max;
  const double c = t.tail_coefficient();
  SpectralFunction s;
  s.omegas = omegas;
  s.parity = Parity::odd;
  s.tail_corrected = tail_correction;
  s.tail_coefficient = c;
  s.values.resize(omegas.size());
  for (std::size_t q = 0; q < omegas.size(); ++q) {
    const double w = omegas[q];
    if (w < 0.0) throw DomainError("matsubara_transform: omegas must be nonnegative");
    double acc = 0.0;
    if (w > 0.0) {
      const cplx step = std::polar(1.0, w * h);
      cplx e = step;
      for (int k = 1; k <= N; ++k) {
        const double wt = (k == N) ? 1.0 : ((k % 2) ? 4.0 : 2.0);
        acc += wt * e.imag() * t.at_half(k);
        e *= step;
        if ((k & 255) == 255) e = std::polar(1.0, w * h * (k + 1));
      }
      acc *= h / 3.0;
    }
    if (tail_correction) {
      const double im_e1 = (w == 0.0) ? std::numbers::pi / 2.0 : incomplete_gamma0(cplx(0.0, -w * L)).imag();
      acc += c * im_e1;
    }
    s.values[q] = cplx(0.0, -2.0 * acc);
  }
  return s;
}

inline SpectralFunction matsubara_transform(const Trajectory& t) {
  return matsubara_transform(t, spectral_grid(t.params));
}

// ---- generic bare instanton -----------------------------------------------------

struct BarePath {
  TimeGrid grid;
  std::vector<double> phi;     // phi0^(0) on the full grid, phi(0) = (phi_a + phi_b)/2
  std::vector<double> phidot;  // sqrt(2 (V - V_a) / C0)
  double phi_a = 0.0, phi_b = 0.0, C0 = 0.0;
};

// Zero-energy instanton of (C0/2) phi'^2 = V(phi) - V(phi_a), integrated outwards
// from the midpoint. Near the minima the velocity vanishes linearly, so the
// approach is exponential and the integrand never becomes singular.
inline BarePath solve_bare_generic(const std::function<double(double)>& V, double phi_a, double phi_b,
                                   double C0, const TimeGrid& grid) {
  grid.validate();
  if (!(C0 > 0.0) || !(phi_b > phi_a)) throw DomainError("solve_bare_generic: need C0 > 0 and phi_b > phi_a");
  const double Va = V(phi_a), Vb = V(phi_b);
  double vmax = 0.0;
  for (int i = 1; i < 200; ++i) {
    const double dv = V(phi_a + (phi_b - phi_a) * i / 200.0) - Va;
    if (!(dv > 0.0)) throw DomainError("solve_bare_generic: V must exceed V(phi_a) strictly between the minima");
    vmax = std::max(vmax, dv);
  }
  if (std::abs(Va - Vb) > 1e-10 * vmax) throw DomainError("solve_bare_generic: non-degenerate minima");

  namespace ode = boost::numeric::odeint;
  using state = std::array<double, 1>;
  auto rhs_dir = [&](double dir) {
    return [&, dir](const state& x, state& dx, double) {
      const double lo = std::min(phi_a, phi_b), hi = std::max(phi_a, phi_b);
      const double ph = std::clamp(x[0], lo, hi);
      dx[0] = dir * std::sqrt(std::max(0.0, 2.0 * (V(ph) - Va) / C0));
    };
  };
  BarePath out;
  out.grid = grid;
  out.phi_a = phi_a;
  out.phi_b = phi_b;
  out.C0 = C0;
  out.phi.assign(grid.n_points, 0.0);
  out.phidot.assign(grid.n_points, 0.0);
  const int h = grid.half();
  const double mid = 0.5 * (phi_a + phi_b);
  for (double dir : {1.0, -1.0}) {
    state x{mid};
    auto stepper = ode::make_dense_output(1e-13, 1e-13, ode::runge_kutta_dopri5<state>());
    std::vector<double> times(h + 1);
    for (int k = 0; k <= h; ++k) times[k] = k * grid.dtau();
    int k = 0;
    ode::integrate_times(stepper, rhs_dir(dir), x, times.begin(), times.end(), grid.dtau(),
                         [&](const state& s, double) {
                           const double ph = std::clamp(s[0], phi_a, phi_b);
                           const int idx = h + static_cast<int>(dir) * k;
                           out.phi[idx] = ph;
                           out.phidot[idx] = std::sqrt(std::max(0.0, 2.0 * (V(ph) - Va) / C0));
                           ++k;
                         });
  }
  return out;
}

// phi0^(0)(iw) = (1/(iw)) int e^{-i w tau} phidot dtau (trapezoid on the grid; phidot
// decays exponentially so the truncation is harmless).
inline cplx bare_path_matsubara(const BarePath& b, double w) {
  if (w == 0.0) throw DomainError("bare_path_matsubara: omega = 0 (zero mode)");
  const double h = b.grid.dtau();
  cplx acc = 0.0;
  for (int i = 0; i < b.grid.n_points; ++i) {
    const double wt = (i == 0 || i == b.grid.n_points - 1) ? 0.5 : 1.0;
    acc += wt * b.phidot[i] * std::polar(1.0, -w * b.grid.tau(i));
  }
  return acc * h / cplx(0.0, w);
}

// ---- serialization --------------------------------------------------------------

inline void write_trajectory(std::ostream& os, const Trajectory& t, const std::string& params_hash) {
  os << "# params_hash=" << params_hash << "\n";
  os << "# method=" << to_string(t.method) << "\n";
  os.precision(17);
  os << "# residual=" << t.residual << "\n";
  os << "# equation_residual=" << t.equation_residual << "\n";
  os << "# iterations=" << t.iterations << "\n";
  os << "# tau_max=" << t.grid.tau_max << "\n";
  os << "# n_points=" << t.grid.n_points << "\n";
  os << "# omega0=" << t.params.omega0 << "\n# gamma0=" << t.params.gamma0 << "\n# v=" << t.params.v << "\n";
  for (const auto& w : t.warnings) os << "# warning=" << w << "\n";
  os << "tau,dphi0\n";
  for (int i = 0; i < t.grid.n_points; ++i) {
    const double tau = (i == t.grid.half()) ? 0.0 : t.grid.tau(i);
    os << tau << "," << t.dphi0[i] << "\n";
  }
}

inline Trajectory read_trajectory(std::istream& is, std::string* params_hash = nullptr) {
  Trajectory t;
  std::string line;
  std::vector<double> vals;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = line.substr(2, eq - 2), val = line.substr(eq + 1);
      if (key == "params_hash" && params_hash) *params_hash = val;
      else if (key == "method")
        t.method = val == "iterative" ? SolveMethod::iterative
                   : val == "integro_differential" ? SolveMethod::integro_differential
                                                    : SolveMethod::closed_form;
      else if (key == "residual") t.residual = std::stod(val);
      else if (key == "equation_residual") t.equation_residual = std::stod(val);
      else if (key == "iterations") t.iterations = std::stoi(val);
      else if (key == "tau_max") t.grid.tau_max = std::stod(val);
      else if (key == "n_points") t.grid.n_points = std::stoi(val);
      else if (key == "omega0") t.params.omega0 = std::stod(val);
      else if (key == "gamma0") t.params.gamma0 = std::stod(val);
      else if (key == "v") t.params.v = std::stod(val);
      else if (key == "warning") t.warnings.push_back(val);
      continue;
    }
    if (line.rfind("tau,", 0) == 0) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ConfigError("trajectory file: malformed row '" + line + "'");
    vals.push_back(std::stod(line.substr(comma + 1)));
  }
  if (static_cast<int>(vals.size()) != t.grid.n_points || t.grid.n_points == 0)
    throw ConfigError("trajectory file: row count does not match n_points");
  t.dphi0 = std::move(vals);
  return t;
}

}  // namespace phaseslip
