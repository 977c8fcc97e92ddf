#pragma once

// Special functions used by the instanton pipeline: modified Struve L2,
// modified Bessel I2, the array friction kernel K(tau), the exponential
// integral Gamma(0, z), Mathieu-type transmon levels, Bose occupation.
//
// All functions are pure. Units: hbar = e = a = 1, frequencies in GHz,
// times in ns.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "phaseslip/errors.hpp"

namespace phaseslip {

using cplx = std::complex<double>;

// k_B / h in GHz per kelvin.
inline constexpr double kBoltzmannGHzPerK = 20.836619;

// Above this argument the kernel uses the asymptotic expansion of L2 - I2.
// Below it, the power series is summed in extended precision.
inline constexpr double kKernelSwitchX = 20.0;

// Largest argument accepted by struve_L2 / bessel_I2 (e^x overflow guard).
inline constexpr double kOverflowGuardX = 700.0;

struct KernelParams {
  double v = 0.0;       // array velocity (GHz, lattice spacing 1)
  double gamma0 = 0.0;  // inverse RC time (GHz)

  void validate() const {
    if (!(v > 0.0) || !(gamma0 > 0.0))
      throw DomainError("KernelParams: v and gamma0 must be positive");
  }
  bool well_separated() const { return v >= 10.0 * gamma0; }
};

namespace detail {

// Extended-precision power series of I2 and L2 (all terms positive).
inline long double bessel_I2_series(long double x) {
  const long double h = x / 2;
  const long double h2 = h * h;
  long double term = h2 / 2;  // m = 0: (x/2)^2 / (0! 2!)
  long double sum = term;
  for (int m = 1; m < 500; ++m) {
    term *= h2 / (static_cast<long double>(m) * (m + 2));
    sum += term;
    if (term < sum * 1e-21L) break;
  }
  return sum;
}

inline long double struve_L2_series(long double x) {
  const long double h = x / 2;
  const long double h2 = h * h;
  // k = 0: (x/2)^3 / (Gamma(3/2) Gamma(7/2)); Gamma(3/2)Gamma(7/2) = 15 pi / 16
  long double term = h2 * h / (15.0L * std::numbers::pi_v<long double> / 16.0L);
  long double sum = term;
  for (int k = 1; k < 500; ++k) {
    term *= h2 / ((k + 0.5L) * (k + 2.5L));
    sum += term;
    if (term < sum * 1e-21L) break;
  }
  return sum;
}

// Asymptotic series for (L2(x) - I2(x))/x + 2/(3 pi), optimally truncated.
// Equals (1/(pi x)) sum_{k>=1} t_k with t_1 = 2/x and
// t_{k+1} = -t_k (k + 1/2)(3/2 - k) (2/x)^2.
inline double struve_bessel_gap_asymptotic(double x) {
  double t = 2.0 / x;
  double sum = t;
  const double q = 4.0 / (x * x);
  for (int k = 1; k < 200; ++k) {
    const double next = -t * (k + 0.5) * (1.5 - k) * q;
    if (std::abs(next) >= std::abs(t)) break;
    t = next;
    sum += t;
    if (std::abs(t) < 1e-18 * std::abs(sum)) break;
  }
  return sum / (std::numbers::pi * x);
}

// Hankel expansion of e^{-x} I2(x) for large x.
inline double bessel_I2_scaled_asymptotic(double x) {
  const double mu = 16.0;
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k < 60; ++k) {
    const double odd = 2.0 * k - 1.0;
    const double next = -term * (mu - odd * odd) / (k * 8.0 * x);
    if (std::abs(next) >= std::abs(term)) break;
    term = next;
    sum += term;
    if (std::abs(term) < 1e-17 * std::abs(sum)) break;
  }
  return sum / std::sqrt(2.0 * std::numbers::pi * x);
}

}  // namespace detail

inline double bessel_I2(double x) {
  if (x < 0.0 || std::isnan(x)) throw DomainError("bessel_I2: x must be >= 0");
  if (x == 0.0) return 0.0;
  if (x > kOverflowGuardX) throw DomainError("bessel_I2: x above overflow guard");
  if (x <= 30.0) return static_cast<double>(detail::bessel_I2_series(x));
  return std::exp(x) * detail::bessel_I2_scaled_asymptotic(x);
}

// Accurate to ~1e-12 relative for x <= 30 (series); above 30 it is assembled
// from I2 and the algebraic asymptote of L2 - I2, relative error ~e^{-x}.
inline double struve_L2(double x) {
  if (x < 0.0 || std::isnan(x)) throw DomainError("struve_L2: x must be >= 0");
  if (x == 0.0) return 0.0;
  if (x > kOverflowGuardX) throw DomainError("struve_L2: x above overflow guard");
  if (x <= 30.0) return static_cast<double>(detail::struve_L2_series(x));
  const double gap = x * (detail::struve_bessel_gap_asymptotic(x) - 2.0 / (3.0 * std::numbers::pi));
  return bessel_I2(x) + gap;
}

// Friction kernel of the semi-infinite array,
//   K(tau) = v G0 [ (L2(2v|tau|) - I2(2v|tau|))/|tau| + 4v/(3 pi) ].
// With x = 2v|tau| this is 2 v^2 G0 [ (L2 - I2)/x + 2/(3 pi) ].
inline double kernel_K(double tau, const KernelParams& p) {
  const double x = 2.0 * p.v * std::abs(tau);
  const double scale = 2.0 * p.v * p.v * p.gamma0;
  if (x == 0.0) return scale * 2.0 / (3.0 * std::numbers::pi);
  if (x <= kKernelSwitchX) {
    const long double lx = x;
    const long double gap = (detail::struve_L2_series(lx) - detail::bessel_I2_series(lx)) / lx +
                            2.0L / (3.0L * std::numbers::pi_v<long double>);
    return scale * static_cast<double>(gap);
  }
  return scale * detail::struve_bessel_gap_asymptotic(x);
}

// Frequency response of the kernel, K^(w) = int K(tau) e^{-i w tau} dtau,
// in closed form: v G0 [1 + 2a^2 - 2a sqrt(1 + a^2)], a = |w|/(2v).
inline double kernel_K_fourier(double omega, const KernelParams& p) {
  const double a = std::abs(omega) / (2.0 * p.v);
  return p.v * p.gamma0 * (1.0 + 2.0 * a * a - 2.0 * a * std::sqrt(1.0 + a * a));
}

// Dissipative symbol v G0 - K^(w) = G0 |w| (sqrt(1 + a^2) - a); reduces to
// the Ohmic G0 |w| for |w| << v.
inline double friction_symbol(double omega, const KernelParams& p) {
  const double a = std::abs(omega) / (2.0 * p.v);
  return p.gamma0 * std::abs(omega) / (std::sqrt(1.0 + a * a) + a);
}

struct QuadratureEstimate {
  double value;
  double error;
};

// Test-only oracle: K(tau) = (G0/pi) int_0^{2v} w sqrt(1 - (w/2v)^2) e^{-w|tau|} dw,
// evaluated with the substitution w = 2v sin(theta) by adaptive Gauss-Kronrod.
// n_points bounds the total number of kernel samples.
inline QuadratureEstimate kernel_K_quadrature_oracle(double tau, const KernelParams& p,
                                                     int n_points = 4000,
                                                     double rel_tol = 1e-13) {
  if (n_points < 1000) throw DomainError("kernel_K_quadrature_oracle: n_points must be >= 1000");
  const double x = 2.0 * p.v * std::abs(tau);
  auto f = [x](double th) {
    const double s = std::sin(th);
    const double c = std::cos(th);
    return s * c * c * std::exp(-x * s);
  };
  const unsigned depth = static_cast<unsigned>(std::ceil(std::log2(n_points / 61.0))) + 1;
  double err = 0.0;
  const double val = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      f, 0.0, std::numbers::pi / 2, depth, rel_tol, &err);
  const double scale = 4.0 * p.v * p.v * p.gamma0 / std::numbers::pi;
  if (err > 1e3 * rel_tol * std::abs(val) && err > 1e-300) {
    throw ConvergenceError("kernel_K_quadrature_oracle: error estimate " + std::to_string(err), err);
  }
  return {scale * val, scale * err};
}

// Exponential integral Gamma(0, z) = E1(z) on the principal branch.
// Power series for |z| < 2, modified-Lentz continued fraction elsewhere.
// Relative accuracy ~1e-13 for |arg z| <= 3 pi / 4.
inline cplx incomplete_gamma0(cplx z) {
  if (z == cplx(0.0, 0.0)) throw DomainError("incomplete_gamma0: z = 0");
  constexpr double euler_gamma = 0.57721566490153286061;
  const bool near_negative_axis = z.real() < 0.0 && std::abs(z.imag()) < -z.real();
  if (std::abs(z) < 2.0 || (near_negative_axis && std::abs(z) < 40.0)) {
    using lc = std::complex<long double>;
    const lc lz(z.real(), z.imag());
    lc term(1.0L, 0.0L);
    lc sum(0.0L, 0.0L);
    for (int k = 1; k < 1000; ++k) {
      term *= -lz / static_cast<long double>(k);
      const lc add = term / static_cast<long double>(k);
      sum += add;
      if (std::abs(add) < 1e-21L * std::abs(sum)) break;
    }
    const lc r = -static_cast<long double>(euler_gamma) - std::log(lz) - sum;
    return {static_cast<double>(r.real()), static_cast<double>(r.imag())};
  }
  const double tiny = 1e-300;
  cplx b = z + 1.0;
  cplx c = 1.0 / tiny;
  cplx d = 1.0 / b;
  cplx h = d;
  for (int i = 1; i < 2000000; ++i) {
    const double an = -static_cast<double>(i) * i;
    b += 2.0;
    d = 1.0 / (an * d + b);
    c = b + an / c;
    const cplx del = c * d;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) return h * std::exp(-z);
  }
  throw ConvergenceError("incomplete_gamma0: continued fraction did not converge", std::abs(z));
}

// Lowest n_levels eigen-energies (units of E_C) of
//   H = E_C (Q - q_g)^2 - E_J cos(2 phi),  chi = E_J / (2 E_C),
// by diagonalising the charge basis: diagonal (2n - q_g)^2, off-diagonal -chi.
inline std::vector<double> mathieu_pair(double chi, double q_g, int n_levels) {
  if (!(chi >= 0.0)) throw DomainError("mathieu_pair: chi must be >= 0");
  if (n_levels < 2) throw DomainError("mathieu_pair: n_levels must be >= 2");
  auto levels = [&](int n_cut) {
    const int dim = 2 * n_cut + 1;
    Eigen::VectorXd diag(dim);
    Eigen::VectorXd off = Eigen::VectorXd::Constant(dim - 1, -chi);
    for (int i = 0; i < dim; ++i) {
      const double q = 2.0 * (i - n_cut) - q_g;
      diag(i) = q * q;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, off, Eigen::EigenvaluesOnly);
    std::vector<double> out(es.eigenvalues().data(), es.eigenvalues().data() + n_levels);
    return out;
  };
  int n_cut = std::max(10, n_levels + static_cast<int>(std::sqrt(chi)) + 4);
  auto prev = levels(n_cut);
  for (int attempt = 0; attempt < 60; ++attempt) {
    n_cut += 5;
    auto next = levels(n_cut);
    const double change = std::abs(next.back() - prev.back());
    if (change < 1e-10) return next;
    prev = std::move(next);
  }
  throw ConvergenceError("mathieu_pair: charge cutoff escalation did not converge", 0.0);
}

// Bose-Einstein occupation 1/(e^{w/T} - 1); exactly 0 at T = 0.
inline double bose_occupation(double omega, double T) {
  if (!(omega > 0.0)) throw DomainError("bose_occupation: omega must be > 0");
  if (T < 0.0) throw DomainError("bose_occupation: T must be >= 0");
  if (T == 0.0) return 0.0;
  const double r = omega / T;
  if (r > 700.0) return 0.0;
  return 1.0 / std::expm1(r);
}

}  // namespace phaseslip
