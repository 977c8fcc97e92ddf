#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "phaseslip/device_model.hpp"

using namespace phaseslip;

TEST(Omega0FromEJ, PerturbativeAndLimits) {
  const double EC = 0.8;
  EXPECT_NEAR(omega0_from_EJ(50 * EC, EC) / (std::sqrt(8 * 50.0) * EC - EC), 1.0, 0.01);
  // E_J = 0: gaps 4 E_C (q_g = 0) and 0 (q_g = 1).
  EXPECT_NEAR(omega0_from_EJ(0.0, EC), 2 * EC, 1e-12);
  double prev = omega0_from_EJ(0.0, EC);
  for (int i = 1; i <= 60; ++i) {
    const double w = omega0_from_EJ(i * 1.5 * EC, EC);
    EXPECT_GT(w, prev);
    prev = w;
  }
}

TEST(EJFromOmega0, RoundTrip) {
  const double EC = 1.3;
  for (double r : {2.0, 5.0, 20.0, 50.0, 100.0}) {
    const double ej = r * EC;
    EXPECT_NEAR(EJ_from_omega0(omega0_from_EJ(ej, EC), EC) / ej, 1.0, 1e-6) << r;
  }
  const double ej = EJ_from_omega0(8.0, 0.74);
  EXPECT_NEAR(omega0_from_EJ(ej, 0.74), 8.0, 1e-8);
  EXPECT_THROW(EJ_from_omega0(1.9 * EC, EC), DomainError);
}

TEST(Lambda0, ExactLimitsAndWkb) {
  EXPECT_NEAR(lambda0(0.0, 1.0), 0.5, 1e-12);
  const double r10 = std::abs(lambda0(10.0, 1.0, LambdaMethod::wkb) / lambda0(10.0, 1.0) - 1.0);
  const double r25 = std::abs(lambda0(25.0, 1.0, LambdaMethod::wkb) / lambda0(25.0, 1.0) - 1.0);
  EXPECT_LT(r25, r10);
  double prev = lambda0(0.0, 1.0);
  for (int i = 1; i <= 40; ++i) {
    const double l = lambda0(i * 1.0, 1.0);
    EXPECT_LT(l, prev);
    prev = l;
  }
}

TEST(LambdaStar, Limits) {
  EXPECT_FALSE(lambda_star(0.01, 8.0, 0.9).applicable);
  EXPECT_EQ(lambda_star(0.01, 8.0, 1.0).value, 0.0);
  EXPECT_NEAR(lambda_star(0.01, 8.0, 1e9).value, 0.01, 1e-9);
  EXPECT_EQ(lambda_star(0.0, 8.0, 2.0).value, 0.0);
  // z = 2: lambda* = (lambda0 / sqrt(omega0))^2
  EXPECT_NEAR(lambda_star(0.02, 4.0, 2.0).value, 0.0001, 1e-15);
}

TEST(CircuitParams, ConsistencyRelation) {
  const auto p = make_params(8.0, 1.6, 1.3);
  EXPECT_NEAR(p.gamma0 * p.z * std::numbers::pi / (4 * p.E_C), 1.0, 1e-12);
  EXPECT_NEAR(p.v, 400.0, 1e-12);
  EXPECT_NEAR(p.delta, std::min(8.0 / 50, p.gamma0 / 4), 1e-15);
  const auto q = make_params_from_gamma(8.0, 1.6, 0.8);
  EXPECT_NEAR(q.gamma0, 0.8, 1e-12);
  EXPECT_NEAR(q.gamma0 * q.z * std::numbers::pi / (4 * q.E_C), 1.0, 1e-12);
}

TEST(CircuitParams, Warnings) {
  ParamOptions o;
  o.delta = 2.0;
  const auto p = make_params(8.0, 1.6, 1.3, o);
  EXPECT_FALSE(p.warnings.empty());
  ParamOptions o2;
  o2.v = 5.0;
  const auto q = make_params(8.0, 1.6, 0.5, o2);
  bool has_v = false;
  for (auto& w : q.warnings) has_v |= w.find("v <") != std::string::npos;
  EXPECT_TRUE(has_v);
  EXPECT_THROW(make_params(8.0, 1.6, -1.0), DomainError);
}

TEST(DeviceTable, AllRowsConstruct) {
  const auto rows = load_device_table(std::string(PHASESLIP_DATA_DIR) + "/table1.csv");
  ASSERT_EQ(rows.size(), 8u);
  EXPECT_EQ(rows[0].name, "1a");
  EXPECT_DOUBLE_EQ(rows[0].z, 0.81);
  EXPECT_DOUBLE_EQ(rows[0].E_C_GHz, 0.66);
  EXPECT_DOUBLE_EQ(rows[0].Gamma0_GHz, 1.03);
  for (const auto& r : rows) {
    EXPECT_TRUE(check_device_row(r).empty()) << r.name;
    const auto p = device_params(r, 8.0);
    EXPECT_NEAR(p.gamma0 / r.Gamma0_GHz, 1.0, 0.03) << r.name;
    EXPECT_NEAR(p.gamma0 * p.z * std::numbers::pi / (4 * p.E_C), 1.0, 1e-10);
  }
  std::istringstream bad("name,Z_kOhm,z,E_C_GHz,Gamma0_GHz\nx,1,2\n");
  EXPECT_THROW(parse_device_table(bad), ConfigError);
}

TEST(PhaseShift, FullLimits) {
  auto p = make_params(8.0, 1.6, 1.0);
  EXPECT_LT(phase_shift_full(1e-6, p), 1e-6);
  // On resonance of the approximate form; the exact form is off by O(gamma0/v).
  EXPECT_NEAR(phase_shift_full(p.omega0, p), std::numbers::pi / 2, 3 * p.gamma0 / p.v);
  double prev = 0.0;
  for (double w = 0.05; w < 2 * p.v; w *= 1.05) {
    const double d = phase_shift_full(w, p);
    EXPECT_GT(d, 0.0);
    EXPECT_LT(d, std::numbers::pi);
    if (w < 4 * p.omega0) EXPECT_GT(d, prev);
    prev = d;
  }
  for (double w : {2.0, 6.0, 11.0}) {
    const double c = std::cos(phase_shift_full(w, p));
    const double a = (p.omega0 * p.omega0 - w * w) /
                     std::hypot(p.omega0 * p.omega0 - w * w, p.gamma0 * w);
    EXPECT_NEAR(c, a, 5 * w / p.v);
  }
  EXPECT_THROW(phase_shift_full(2.1 * p.v, p), DomainError);
  EXPECT_THROW(phase_shift_full(0.0, p), DomainError);
}

TEST(PhaseShift, BulkLimits) {
  auto p = make_params(8.0, 1.6, 1.0);
  EXPECT_LT(phase_shift_bulk(1e-6, p), 1e-6);
  EXPECT_NEAR(phase_shift_bulk(std::sqrt(2.0) * p.v, p), std::numbers::pi / 2, 1e-12);
  for (double w : {0.1, 1.0, 4.0}) {
    const double s = std::sin(phase_shift_bulk(w, p));
    const double r = w / p.v;
    const double approx = r * r * (1 - std::pow(w / (2 * p.v), 2));
    EXPECT_NEAR(s * s / approx, 1.0, 2 * r * r);
  }
}

TEST(ModeGrid, Arithmetic) {
  const auto g = build_mode_grid(0.2, 100.0);
  EXPECT_NEAR(g.omegas.front(), 0.1, 1e-15);
  EXPECT_LE(g.omegas.back(), 200.0);
  EXPECT_NEAR(static_cast<double>(g.size()), 2 * 100.0 / 0.2, 1.0);
  const auto h = build_mode_grid(0.1, 100.0);
  EXPECT_NEAR(static_cast<double>(h.size()), 2.0 * g.size(), 1.0);
  for (std::size_t i = 1; i < h.size(); ++i) ASSERT_GT(h.omegas[i], h.omegas[i - 1]);
}
