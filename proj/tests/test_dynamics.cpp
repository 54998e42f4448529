#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "vstab/case_io.hpp"
#include "vstab/dynamics.hpp"
#include "vstab/helm.hpp"
#include "vstab/power_flow.hpp"

using namespace vstab;

namespace {

constexpr double kSvcB = 1.2817;  // holds the 3-bus SVC bus near 1.05 p.u. at s = 0

DaeSystem three_bus() {
  const Case c = load_case("threebus");
  return DaeSystem(c.network, c.machines, 3, c.network.loading_direction());
}

DaeSystem ieee39() {
  const Case c = load_case("ieee39");
  return DaeSystem(c.network, c.machines, std::nullopt,
                   c.network.loading_direction());
}

void check_jacobian(const DaeSystem& dae, const Eigen::VectorXd& x,
                    const Eigen::VectorXd& y, const DaeInputs& in) {
  const oracle::JacobianErrors e = oracle::jacobian_errors(dae, x, y, in);
  CHECK(e.fx < 1e-6);
  CHECK(e.fy < 1e-6);
  CHECK(e.gx < 1e-6);
  CHECK(e.gy < 1e-6);
  CHECK(e.gu < 1e-6);
}

}  // namespace

TEST_CASE("DAE dimensions") {
  const DaeSystem d3 = three_bus();
  CHECK(d3.state_count() == 11);
  CHECK(d3.algebraic_count() == 6);
  CHECK(d3.input_count() == 1);
  const DaeSystem d39 = ieee39();
  CHECK(d39.machine_count() == 10);
  CHECK(d39.state_count() == 110);
  CHECK(d39.algebraic_count() == 78);

  const Case c = load_case("threebus");
  std::vector<MachineModel> misplaced = c.machines;
  misplaced[0].bus = 2;
  CHECK_THROWS_AS(DaeSystem(c.network, misplaced, 3, c.network.loading_direction()),
                  InvalidArgument);
  CHECK_THROWS_AS(DaeSystem(c.network, {}, 3, c.network.loading_direction()),
                  InvalidArgument);
}

TEST_CASE("equilibrium back-solve") {
  for (bool big : {false, true}) {
    DaeSystem dae = big ? ieee39() : three_bus();
    const double s = big ? 1.0 : 0.05;
    const Equilibrium eq = find_equilibrium(dae, s, big ? 0.0 : kSvcB);
    CHECK(dae.f(eq.x, eq.y).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(dae.g(eq.x, eq.y, eq.inputs).cwiseAbs().maxCoeff() < 1e-9);
    for (int m = 0; m < dae.machine_count(); ++m) {
      CHECK(eq.x[kStatesPerUnit * m + state::kOmega] == 1.0);
    }
    // With u = 0 the algebraic residual is the static power-flow mismatch;
    // several machines share the load change by governor gain.
    Network net = dae.network();
    if (dae.svc_bus()) net = set_shunt(net, 3, kSvcB);
    const Eigen::VectorXd& k = dae.loading_direction();
    const PowerFlowSolution pf =
        big ? solve_distributed(net, s, k, governor_participation(dae))
            : solve_cold(net, s, k);
    const int n = dae.bus_count();
    for (int i = 0; i < n; ++i) {
      CHECK(eq.y[n + i] == doctest::Approx(std::abs(pf.voltage[i])).epsilon(1e-12));
    }
    if (big) {
      // Each unit's extra output over the base case is proportional to 1/R.
      const PowerFlowSolution base = solve_cold(net, 0.0, k);
      const double total = (pf.injection - base.injection).real().sum() +
                           (dae.load_power(eq.inputs).real().sum() -
                            dae.load_power(DaeInputs{0.0, {}, 0.0}).real().sum());
      double inv_r = 0.0;
      for (const MachineData& md : dae.machines()) inv_r += 1.0 / md.r;
      for (const MachineData& md : dae.machines()) {
        const double extra = pf.injection[md.bus].real() - base.injection[md.bus].real();
        CHECK(extra == doctest::Approx(total * (1.0 / md.r) / inv_r).epsilon(1e-8));
      }
    }
  }
  DaeSystem dae = three_bus();
  CHECK_THROWS_AS(find_equilibrium(dae, 5.0, kSvcB), InitializationCollapse);
}

TEST_CASE("analytic Jacobian blocks match finite differences") {
  {
    DaeSystem dae = three_bus();
    Equilibrium eq = find_equilibrium(dae, 0.05, kSvcB);
    eq.inputs.u << 0.01;
    eq.x[state::kOmega] = 1.001;  // off-equilibrium point exercises every term
    check_jacobian(dae, eq.x, eq.y, eq.inputs);
  }
  {
    DaeSystem dae = ieee39();
    Equilibrium eq = find_equilibrium(dae, 1.0, 0.0);
    eq.inputs.u.setConstant(0.005);
    check_jacobian(dae, eq.x, eq.y, eq.inputs);
  }
}

TEST_CASE("linearization structure and small-signal stability") {
  DaeSystem dae = ieee39();
  const Equilibrium eq = find_equilibrium(dae, 0.0, 0.0);
  const LinearizedSystem lin = linearize(dae, eq.x, eq.y, eq.inputs);
  // g_u touches only the balance rows of load buses.
  const int n = dae.bus_count();
  for (int r = 0; r < 2 * n; ++r) {
    const int bus = r % n;
    const bool is_load = std::find(dae.load_buses().begin(), dae.load_buses().end(),
                                   bus) != dae.load_buses().end();
    if (!is_load) CHECK(lin.blocks.gu.row(r).cwiseAbs().maxCoeff() == 0.0);
  }
  // A uniform rotation of every angle is a null direction of A_s; all other
  // modes are damped.
  const Eigen::VectorXcd ev = Eigen::EigenSolver<Eigen::MatrixXd>(lin.as).eigenvalues();
  int zero = 0;
  double worst = -1e9;
  for (auto e : ev) {
    if (std::abs(e) < 1e-6) {
      ++zero;
    } else {
      worst = std::max(worst, e.real());
    }
  }
  CHECK(zero == 1);
  CHECK(worst < 0.0);
}

TEST_CASE("approaching the nose drives an eigenvalue toward the origin") {
  DaeSystem dae = three_bus();
  const Case c = load_case("threebus");
  const Network net = set_shunt(c.network, 3, kSvcB);
  const double s_c =
      find_critical_loading(net, solve_newton(net), net.loading_direction()).s_c;
  auto closest = [&](double s) {
    const Equilibrium eq = find_equilibrium(dae, s, kSvcB);
    const Eigen::VectorXcd ev =
        Eigen::EigenSolver<Eigen::MatrixXd>(linearize(dae, eq.x, eq.y, eq.inputs).as)
            .eigenvalues();
    double best = 1e9;
    for (auto e : ev) {
      if (std::abs(e) > 1e-6) best = std::min(best, std::abs(e.real()));
    }
    return best;
  };
  const double far = closest(0.5 * s_c), near = closest(0.999 * s_c);
  CHECK(near < 0.5 * far);
}

TEST_CASE("zero-noise integration stays at equilibrium") {
  DaeSystem dae = three_bus();
  const Equilibrium eq = find_equilibrium(dae, 0.0, kSvcB);
  IntegrationOptions opt;
  opt.horizon = 100.0;
  opt.record_every = 0;
  const IntegrationResult r = integrate(dae, eq, nullptr, nullptr, opt);
  CHECK_FALSE(r.collapse);
  CHECK(r.steps == 10000);
  CHECK((r.x_end - eq.x).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("PMU sampling pattern averages 30 Hz") {
  std::vector<long> steps;
  for (long n = 0; n <= 30; ++n) {
    if (is_sample_step(n, 0.01, 30.0)) steps.push_back(n);
  }
  CHECK(steps == std::vector<long>{0, 3, 6, 10, 13, 16, 20, 23, 26, 30});
  int count = 0;
  for (long n = 0; n < 300; ++n) count += is_sample_step(n, 0.01, 30.0);
  CHECK(count == 90);
}

TEST_CASE("collapse detection") {
  CHECK_FALSE(detect_collapse(Eigen::MatrixXd::Identity(3, 3), 1.0));
  Eigen::MatrixXd singular = Eigen::MatrixXd::Ones(3, 3);
  const auto r = detect_collapse(singular, 2.0);
  REQUIRE(r);
  CHECK(r->trigger == CollapseTrigger::kConditionNumber);
  CHECK(r->time == 2.0);

  // Step the loading past the static nose: the algebraic equations lose
  // their solution within the same second.
  DaeSystem dae = three_bus();
  const Case c = load_case("threebus");
  const Network net = set_shunt(c.network, 3, kSvcB);
  const double s_c =
      find_critical_loading(net, solve_newton(net), net.loading_direction()).s_c;
  const Equilibrium eq = find_equilibrium(dae, 0.95 * s_c, kSvcB);
  NoiseRealization noise;
  noise.fast_dt = 0.01;
  noise.buses = dae.load_bus_ids();
  noise.fast = Eigen::MatrixXd::Zero(1001, 1);
  noise.slow_dt = 1.0;
  noise.slow = {0.0, 0.06 * s_c};  // jump at t = 1 s to 1.01 s_c
  IntegrationOptions opt;
  opt.horizon = 10.0;
  opt.s_offset = 0.95 * s_c;
  const IntegrationResult res = integrate(dae, eq, &noise, nullptr, opt);
  REQUIRE(res.collapse);
  CHECK(res.collapse->time >= 1.0);
  CHECK(res.collapse->time < 2.0);
}

TEST_CASE("integration is deterministic") {
  DaeSystem dae = three_bus();
  const Equilibrium eq = find_equilibrium(dae, 0.0, kSvcB);
  NoiseRealization noise;
  noise.fast_dt = 0.01;
  noise.buses = dae.load_bus_ids();
  OUParams p{Eigen::VectorXd::Ones(1), Eigen::VectorXd::Constant(1, 0.02), noise.buses};
  noise.fast = simulate_ou(p, 0.01, 2000, 5);
  IntegrationOptions opt;
  opt.horizon = 20.0;
  opt.record_every = 1;
  const IntegrationResult a = integrate(dae, eq, &noise, nullptr, opt);
  const IntegrationResult b = integrate(dae, eq, &noise, nullptr, opt);
  REQUIRE(a.trajectory.size() == b.trajectory.size());
  for (size_t i = 0; i < a.trajectory.size(); ++i) {
    CHECK(a.trajectory[i].y == b.trajectory[i].y);
    CHECK(a.trajectory[i].x == b.trajectory[i].x);
  }
  CHECK(a.max_mismatch < 1e-8);
}

TEST_CASE("voltage deviations scale linearly with small noise") {
  DaeSystem dae = three_bus();
  const Equilibrium eq = find_equilibrium(dae, 0.0, kSvcB);
  const std::vector<double> eps{1e-4, 3e-4, 1e-3, 3e-3, 1e-2};
  const int n = 20000;
  std::vector<double> spread;
  for (double e : eps) {
    NoiseRealization noise;
    noise.fast_dt = 0.01;
    noise.buses = dae.load_bus_ids();
    OUParams p{Eigen::VectorXd::Ones(1), Eigen::VectorXd::Constant(1, e), noise.buses};
    noise.fast = simulate_ou(p, 0.01, n, 11);
    IntegrationOptions opt;
    opt.horizon = n * 0.01;
    opt.record_every = 1;
    const IntegrationResult r = integrate(dae, eq, &noise, nullptr, opt);
    double ss = 0.0;
    const int bus = dae.network().index_of(2);
    for (const auto& pt : r.trajectory) {
      const double d = pt.y[dae.bus_count() + bus] - eq.y[dae.bus_count() + bus];
      ss += d * d;
    }
    spread.push_back(std::sqrt(ss / r.trajectory.size()));
  }
  // Least-squares line through the origin; R^2 of the fit.
  double sxy = 0, sxx = 0, syy = 0, mean = 0;
  for (size_t i = 0; i < eps.size(); ++i) {
    sxy += eps[i] * spread[i];
    sxx += eps[i] * eps[i];
    mean += spread[i] / eps.size();
  }
  const double slope = sxy / sxx;
  double res = 0;
  for (size_t i = 0; i < eps.size(); ++i) {
    res += std::pow(spread[i] - slope * eps[i], 2);
    syy += std::pow(spread[i] - mean, 2);
  }
  CHECK(1.0 - res / syy > 0.99);
  // Same realization shape, so the ratio is nearly exact.
  CHECK(spread[4] / spread[0] == doctest::Approx(100.0).epsilon(0.02));
}
