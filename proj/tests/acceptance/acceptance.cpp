// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <string>

#include "phaseslip/pipeline.hpp"

using namespace phaseslip;

namespace {

constexpr double kW0 = 8.0, kEC = 1.6;

// tolerances
constexpr double kKernelRel = 1e-8, kKernelAsym = 0.01, kKernelSeconds = 10;
constexpr double kSolverAgree = 1e-4 * std::numbers::pi, kSolverSeconds = 300;
constexpr double kAntisym = 1e-8, kTailSpread = 0.15;
constexpr double kBracketUnity = 1e-6, kFRecovery = 5e-3;
constexpr double kWeakCoupling = 0.05, kWeakSeconds = 120;
constexpr double kNeighbourFactor = 3.0;
constexpr double kResummation = 1e-10, kResummationSeconds = 1;
constexpr double kSchemes = 0.01, kSplit = 5e-3;
constexpr double kSpectrum = 0.01, kRoundTrip = 1e-6;
constexpr double kRobust = 0.02, kRobustSeconds = 1200;
constexpr double kDevicesSeconds = 1800;

Log quiet(nullptr);
const TrajectoryCache no_cache;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const char* name, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("%s %2d %-28s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), s);
  std::fflush(stdout);
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string g(double x) { return fmt(x, 4); }

CircuitParams at_ratio(double r, const ParamOptions& o = {}) { return make_params_from_gamma(kW0, kEC, r * kW0, o); }

const PointResult& solved(double r) {
  static std::map<double, PointResult> memo;
  auto it = memo.find(r);
  if (it == memo.end()) it = memo.emplace(r, run_point(at_ratio(r), GridSettings{}, {kW0}, no_cache, quiet)).first;
  return it->second;
}

double rate_ratio(const PointResult& p) { return p.rates.gamma_in[0] / p.rates.gamma_in_apprx[0]; }

std::map<double, Trajectory> iterative_trajectories;

}  // namespace

int main() {
  criterion(1, "kernel_exactness", [] {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> lv(std::log(5.0), std::log(2000.0)), lg(std::log(0.01), std::log(10.0)),
        lx(std::log(1e-3), std::log(50.0)), la(std::log(20.0), std::log(50.0));
    double worst = 0.0, worst_asym = 0.0;
    for (int pair = 0; pair < 20; ++pair) {
      const KernelParams p{std::exp(lv(rng)), std::exp(lg(rng))};
      for (int j = 0; j < 25; ++j) {
        const double tau = std::exp(lx(rng)) / p.v;
        worst = std::max(worst, std::abs(kernel_K(tau, p) / kernel_K_quadrature_oracle(tau, p).value - 1.0));
        const double ta = std::exp(la(rng)) * 1.0001 / p.v;
        worst_asym = std::max(worst_asym,
                              std::abs(kernel_K(ta, p) / (p.gamma0 / (std::numbers::pi * ta * ta)) - 1.0));
      }
    }
    const double s = elapsed_since(t0);
    return Outcome{worst < kKernelRel && worst_asym < kKernelAsym && s < kKernelSeconds,
                   "max rel err " + g(worst) + ", asymptote dev " + g(worst_asym)};
  });

  criterion(2, "solver_cross_validation", [] {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (double r : {0.1, 0.3, 0.5}) {
      const auto sp = SolverParams::from(at_ratio(r));
      const auto grid = TimeGrid::make(kW0);
      auto a = solve_iterative(sp, grid);
      const auto b = solve_integro_differential(sp, grid);
      for (std::size_t i = 0; i < a.dphi0.size(); ++i) worst = std::max(worst, std::abs(a.dphi0[i] - b.dphi0[i]));
      iterative_trajectories.emplace(r, std::move(a));
    }
    const double s = elapsed_since(t0);
    return Outcome{worst < kSolverAgree && s < kSolverSeconds, "sup-norm difference " + g(worst)};
  });

  criterion(3, "antisymmetry_and_tail", [] {
    if (iterative_trajectories.empty()) throw DomainError("no trajectories");
    double anti = 0.0, spread = 0.0;
    for (const auto& [r, t] : iterative_trajectories) {
      anti = std::max(anti, t.antisymmetry_error());
      const int h = t.grid.half();
      const double c = t.tail_coefficient();
      for (int k = h / 10; k <= h; ++k) spread = std::max(spread, std::abs(k * t.grid.dtau() * t.at_half(k) / c - 1.0));
    }
    return Outcome{anti < kAntisym && spread < kTailSpread,
                   "antisymmetry " + g(anti) + ", tau*dphi0 spread over last decade " + g(spread)};
  });

  criterion(4, "linearized_limit_recovery", [] {
    double bmax = 0.0, fmax = 0.0;
    for (double r : {0.1, 0.3}) {
      const auto cp = at_ratio(r);
      const auto sp = SolverParams::from(cp);
      const auto t = dphi0_apprx_trajectory(TimeGrid::make(kW0), sp);
      const auto s = matsubara_transform(t);
      const auto fit = fit_bracket(s, sp);
      for (double b : bracket_series(s, sp, window_points(s, 0.05 * kW0, 3.0 * kW0)))
        bmax = std::max(bmax, std::abs(b - 1.0));
      std::vector<double> w;
      for (int i = 0; i <= 180; ++i) w.push_back((0.2 + 0.01 * i) * kW0);
      const auto f = f_factors(fit, w, cp);
      for (std::size_t i = 0; i < w.size(); ++i) fmax = std::max(fmax, std::abs(f[i] / f_apprx(w[i], cp) - 1.0));
    }
    const auto cp = at_ratio(0.3);
    const auto grid = TimeGrid::make(kW0);
    const double s2 = delta_S2(make_trajectory(grid, std::vector<double>(grid.half() + 1, 0.0), SolveMethod::closed_form,
                                               SolverParams::from(cp)),
                               cp);
    return Outcome{bmax < kBracketUnity && fmax < kFRecovery && s2 == 0.0,
                   "max|B-1| " + g(bmax) + ", max|f/f_apprx-1| " + g(fmax) + ", dS2(0) " + g(s2 + 0.0)};
  });

  criterion(5, "weak_coupling_limit", [] {
    const auto t0 = std::chrono::steady_clock::now();
    const double r = rate_ratio(solved(0.01));
    const double s = elapsed_since(t0);
    return Outcome{std::abs(r - 1.0) < kWeakCoupling && s < kWeakSeconds, "ratio at 0.01: " + g(r)};
  });

  criterion(6, "enhancement_trend", [] {
    const double a = rate_ratio(solved(0.1)), b = rate_ratio(solved(0.25)), c = rate_ratio(solved(0.5));
    const auto& p = solved(0.5);
    const double f2 = std::pow(p.rates.f[0] / p.rates.f_apprx[0], 2);
    const double act = std::exp(-2.0 * (p.action.dS() - p.action.dS_apprx));
    return Outcome{a > 1.0 && a < b && b < c && f2 > 1.0 && act > 1.0,
                   "ratios " + g(a) + " < " + g(b) + " < " + g(c) + "; at 0.5 f2 " + g(f2) + ", action " + g(act)};
  });

  criterion(7, "resonance_behavior", [] {
    const auto& p = solved(0.3);
    std::vector<double> w;
    for (int i = -500; i <= 500; ++i) w.push_back(kW0 * (1.0 + 1e-4 * i));
    const auto f = f_factors(p.fit, w, p.cp);
    bool finite = true;
    double worst = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      finite = finite && std::isfinite(f[i]);
      if (i == 0 || i + 1 == f.size()) continue;
      worst = std::max(worst, std::abs(f[i]) / std::max(std::abs(f[i - 1]), std::abs(f[i + 1])));
    }
    std::vector<double> probes;
    for (int i = 0; i <= 60; ++i) probes.push_back((0.7 + 0.01 * i) * kW0);
    const auto r = decay_rate(probes, p.modes, p.fit, p.action, p.cp);
    const auto it = std::max_element(r.gamma_in.begin(), r.gamma_in.end());
    const double peak = probes[static_cast<std::size_t>(it - r.gamma_in.begin())];
    return Outcome{finite && worst < kNeighbourFactor && std::abs(peak - kW0) < p.cp.gamma0 / 2,
                   "max |f|/neighbours " + g(worst) + ", peak at " + g(peak) + " GHz (gamma0/2 = " +
                       g(p.cp.gamma0 / 2) + ")"};
  });

  criterion(8, "resummation_identity", [] {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      const auto [lhs, rhs] = sinh_resummation_identity({u(rng), u(rng)}, {u(rng), u(rng)});
      worst = std::max(worst, std::abs(lhs - rhs) / std::abs(rhs));
    }
    const double s = elapsed_since(t0);
    return Outcome{worst < kResummation && s < kResummationSeconds, "max rel err " + g(worst)};
  });

  criterion(9, "scheme_equivalence", [] {
    const auto& p = solved(0.2);
    const double l0 = lambda0(p.cp.E_J, p.cp.E_C), w = 0.6 * kW0;
    SelfEnergyOptions st, di, lo, hi;
    di.scheme = Scheme::direct;
    lo.omega_c_frac = 0.6;
    hi.omega_c_frac = 0.9;
    auto im = [&](const SelfEnergyOptions& o) {
      return self_energy_im(w, p.modes.omegas, p.modes.f, p.cp.delta, l0, p.action.dS(), 0.0, o).im_pi;
    };
    const double d1 = std::abs(im(st) / im(di) - 1.0), d2 = std::abs(im(lo) / im(hi) - 1.0);
    return Outcome{d1 < kSchemes && d2 < kSplit, "direct vs stabilized " + g(d1) + ", split 0.6 vs 0.9 " + g(d2)};
  });

  criterion(10, "spectrum", [] {
    const double ec = 1.0;
    const double pert = std::abs(omega0_from_EJ(50 * ec, ec) / (std::sqrt(8.0 * 50 * ec * ec) - ec) - 1.0);
    double trip = 0.0;
    for (double r : {2.0, 5.0, 20.0, 50.0, 100.0})
      trip = std::max(trip, std::abs(EJ_from_omega0(omega0_from_EJ(r * ec, ec), ec) / (r * ec) - 1.0));
    const double d10 = std::abs(lambda0(10 * ec, ec, LambdaMethod::wkb) / lambda0(10 * ec, ec) - 1.0);
    const double d25 = std::abs(lambda0(25 * ec, ec, LambdaMethod::wkb) / lambda0(25 * ec, ec) - 1.0);
    return Outcome{pert < kSpectrum && trip < kRoundTrip && d25 < d10,
                   "omega0 vs perturbative " + g(pert) + ", round trip " + g(trip) + ", WKB dev " + g(d25) +
                       " (25) < " + g(d10) + " (10)"};
  });

  criterion(11, "discretization_robustness", [] {
    const auto t0 = std::chrono::steady_clock::now();
    // Gamma^in / Delta: the rate per level spacing is the quantity that converges as Delta -> 0
    auto rate = [](const CircuitParams& cp, const GridSettings& gs) {
      return run_point(cp, gs, {kW0}, no_cache, quiet).rates.gamma_in[0] / cp.delta;
    };
    const double ref = solved(0.3).rates.gamma_in[0] / solved(0.3).cp.delta;
    std::string detail;
    bool ok = true;
    auto check = [&](const std::string& label, double v) {
      const double d = v / ref - 1.0;
      ok = ok && std::abs(d) < kRobust;
      detail += label + " " + (d >= 0 ? "+" : "") + g(100 * d) + "%  ";
    };
    GridSettings gs;
    ParamOptions half;
    half.delta = solved(0.3).cp.delta / 2;
    check("delta/2", rate(at_ratio(0.3, half), gs));
    ParamOptions wide;
    wide.v = 100.0 * kW0;
    check("2v", rate(at_ratio(0.3, wide), gs));
    GridSettings fine = gs;
    fine.dtau_w0 /= 2;
    check("dtau/2", rate(at_ratio(0.3), fine));
    GridSettings longer = gs;
    longer.tau_max_w0 *= 2;
    check("2tau_max", rate(at_ratio(0.3), longer));
    for (int p : {4, 8}) {
      GridSettings q = gs;
      q.p = p;
      check("p=" + std::to_string(p), rate(at_ratio(0.3), q));
    }
    const double s = elapsed_since(t0);
    return Outcome{ok && s < kRobustSeconds, detail};
  });

  criterion(12, "device_pipeline", [] {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cfg = typed_config(load_config(std::nullopt, {}));
    const auto table = load_device_table(cfg.device_table);
    const auto res = device_sweeps(cfg, table, {}, no_cache, quiet);
    bool complete = res.size() == 8;
    double gap_a = 0.0, gap_b = 0.0, max_b = 0.0, min_a = 1e300;
    int na = 0, nb = 0;
    std::string flagged;
    for (const auto& d : res) {
      complete = complete && d.error.empty() && !d.points.empty();
      for (const auto& p : d.points)
        complete = complete && std::isfinite(p.value) && std::isfinite(p.baseline) && p.band_low <= p.value &&
                   p.value <= p.band_high && p.band_low < p.band_high;
      const double gap = d.baseline_gap();
      if (d.row.name.back() == 'a') {
        gap_a += gap;
        ++na;
        min_a = std::min(min_a, gap);
      } else {
        gap_b += gap;
        ++nb;
        max_b = std::max(max_b, gap);
      }
      for (const auto& w : d.warnings)
        if (w.find("E_C/E_J") != std::string::npos) flagged += d.row.name;
    }
    gap_a /= std::max(na, 1);
    gap_b /= std::max(nb, 1);
    const double s = elapsed_since(t0);
    return Outcome{complete && gap_b < gap_a && flagged == "4a" && s < kDevicesSeconds,
                   "8 devices complete: " + std::string(complete ? "yes" : "no") + ", mean |ln(num/base)| b " +
                       g(gap_b) + " vs a " + g(gap_a) + " (max b " + g(max_b) + ", min a " + g(min_a) +
                       "), E_C/E_J warning on '" + flagged + "'"};
  });

  std::printf("%d of 12 criteria failed\n", failures);
  return failures ? 1 : 0;
}
