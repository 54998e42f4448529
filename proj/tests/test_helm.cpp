#include <cmath>

#include "doctest.h"
#include "vstab/case_io.hpp"
#include "vstab/error.hpp"
#include "vstab/helm.hpp"

using namespace vstab;

namespace {

struct Fixture39 {
  Case c = load_case("ieee39");
  Eigen::VectorXd k = c.network.loading_direction();
  PowerFlowSolution base = solve_newton(c.network);
};

const Fixture39& ieee39() {
  static const Fixture39 f;
  return f;
}

double nose_39() {
  static const double s_c =
      find_critical_loading(ieee39().c.network, ieee39().base, ieee39().k).s_c;
  return s_c;
}

}  // namespace

TEST_CASE("pade recovers simple rational functions") {
  Eigen::VectorXcd constant = Eigen::VectorXcd::Zero(9);
  constant[0] = Complex(0.7, 0.1);
  const PadePair pc = pade(constant);
  CHECK(pc.a.size() == 1);
  CHECK(pc.b.size() == 1);
  CHECK(std::abs(pc.value(3.0) - Complex(0.7, 0.1)) < 1e-15);

  const double alpha = 0.8;
  Eigen::VectorXcd geometric(11);
  for (int n = 0; n < 11; ++n) geometric[n] = std::pow(alpha, n);
  const PadePair pg = pade(geometric);
  CHECK(pg.b.size() == 2);
  CHECK(pg.a.size() == 1);
  CHECK(std::abs(pg.value(0.5) - 1.0 / (1.0 - alpha * 0.5)) < 1e-13);
  CHECK(std::abs(pg.value(3.0) - 1.0 / (1.0 - alpha * 3.0)) < 1e-12);
}

TEST_CASE("polynomial roots") {
  // (x - 1)(x - 2)(x + 3) = x^3 - 7x + 6
  Eigen::VectorXcd c(4);
  c << 6.0, -7.0, 0.0, 1.0;
  Eigen::VectorXcd r = polynomial_roots(c);
  std::vector<double> re;
  for (auto z : r) re.push_back(z.real());
  std::sort(re.begin(), re.end());
  CHECK(re[0] == doctest::Approx(-3.0));
  CHECK(re[1] == doctest::Approx(1.0));
  CHECK(re[2] == doctest::Approx(2.0));
}

TEST_CASE("zero loading direction keeps voltages constant") {
  const auto& f = ieee39();
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(f.c.network.bus_count());
  const PowerSeriesSet ps = embed_and_recurse(f.c.network, f.base, zero, 11);
  CHECK(ps.v.bottomRows(10).cwiseAbs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(find_critical_loading(f.c.network, f.base, zero),
                  InvalidArgument);
}

TEST_CASE("series invariants on the 39-bus case") {
  const auto& f = ieee39();
  const PowerSeriesSet ps = embed_and_recurse(f.c.network, f.base, f.k, 41);
  CHECK(ps.terms() == 41);
  for (size_t j = 0; j < ps.pq.size(); ++j) {
    CHECK(std::abs(ps.v(0, j) - f.base.voltage[ps.pq[j]]) == 0.0);
    for (int n = 0; n < ps.terms(); ++n) {
      Complex acc = 0.0;
      for (int m = 0; m <= n; ++m) acc += ps.v(m, j) * std::conj(ps.w(n - m, j));
      CHECK(std::abs(acc - (n == 0 ? 1.0 : 0.0)) < 1e-12);
    }
  }
  // Order-n residual of the embedded equation at every PQ bus.
  const Eigen::MatrixXcd y = build_admittance_matrix(f.c.network);
  const Eigen::VectorXcd s0 = scheduled_injection(f.c.network, 0.0, f.k);
  const int nb = f.c.network.bus_count();
  for (int n = 1; n < 6; ++n) {
    Eigen::VectorXcd vn = Eigen::VectorXcd::Zero(nb);
    for (size_t j = 0; j < ps.pq.size(); ++j) vn[ps.pq[j]] = ps.v(n, j);
    const Eigen::VectorXcd lhs = y * vn;
    for (size_t j = 0; j < ps.pq.size(); ++j) {
      const int i = ps.pq[j];
      const Complex ds = -f.c.network.bus(i).base_load * f.k[i];
      const Complex rhs = std::conj(s0[i]) * ps.w(n, j) +
                          std::conj(ds) * ps.w(n - 1, j);
      CHECK(std::abs(lhs[i] - rhs) < 1e-10);
    }
  }
}

TEST_CASE("two-bus series matches closed-form derivatives and nose") {
  const Case c = load_case("twobus");
  const Network& net = c.network;
  const Eigen::VectorXd k = net.loading_direction();
  const PowerFlowSolution base = solve_newton(net);
  const Bus& load = net.bus(1);
  const double p0 = load.base_load.real();
  const TwoBusSystem oracle(1.0 / net.branches()[0].impedance,
                            p0 / std::abs(load.base_load), 0.0);
  const PowerSeriesSet ps = embed_and_recurse(net, base, k, 41);
  const Eigen::VectorXcd mag2 = squared_magnitude_series(ps.v.col(0));
  // d|V|^2/ds and (1/2) d^2|V|^2/ds^2 from the closed form.
  auto u = [&](double s) { return std::pow(*oracle.voltage(p0 * (1 + s)), 2); };
  const double h = 1e-4;
  const double d1 = 2.0 * *oracle.voltage(p0) *
                    oracle.voltage_sensitivity(p0) * p0;
  const double d2 = (u(h) - 2 * u(0.0) + u(-h)) / (h * h) / 2.0;
  CHECK(mag2[0].real() == doctest::Approx(u(0.0)).epsilon(1e-9));
  CHECK(mag2[1].real() == doctest::Approx(d1).epsilon(1e-9));
  CHECK(mag2[2].real() == doctest::Approx(d2).epsilon(1e-5));

  const CriticalLoading cl = find_critical_loading(net, base, k);
  const double s_exact = oracle.max_power() / p0 - 1.0;
  CHECK(cl.s_c == doctest::Approx(s_exact).epsilon(1e-3));
}

TEST_CASE("39-bus critical loading and Newton cross-check") {
  const auto& f = ieee39();
  const double s_c = nose_39();
  CHECK(s_c == doctest::Approx(1.99).epsilon(0.05 / 1.99));
  PowerFlowOptions pf;
  pf.generators = GeneratorModel::kFixedPhasor;
  CHECK_NOTHROW(solve_newton(f.c.network, 0.999 * s_c, f.k, f.base.voltage, pf));
  // Just past the nose no operating point exists.
  const PvCurve past = pv_curve_newton(f.c.network, f.k, {0.99 * s_c, 1.01 * s_c}, f.base);
  CHECK(past.first_failure == std::optional<size_t>(1));

  // Convergence in the number of terms.
  HelmOptions few;
  few.terms = 21;
  const double s21 = find_critical_loading(f.c.network, f.base, f.k, few).s_c;
  CHECK(std::abs(s21 - s_c) / s_c < 1e-3);

  // Uniform rotation of every base-case angle leaves s_c unchanged.
  PowerFlowSolution rotated = f.base;
  rotated.voltage *= std::polar(1.0, 0.3);
  const double s_rot = find_critical_loading(f.c.network, rotated, f.k).s_c;
  CHECK(std::abs(s_rot - s_c) / s_c < 1e-6);
}

TEST_CASE("39-bus analytic PV curves agree with Newton") {
  const auto& f = ieee39();
  const double s_c = nose_39();
  const PowerSeriesSet ps = embed_and_recurse(f.c.network, f.base, f.k, 41);
  const std::vector<PadePair> pades = pade_all(ps);

  // Each approximant reproduces its series (bus 20 is the unloading bus).
  const int bus20 = f.c.network.index_of(20);
  for (const PadePair& p : pades) {
    if (p.bus != bus20) continue;
    const auto col = std::find(ps.pq.begin(), ps.pq.end(), bus20) - ps.pq.begin();
    const Eigen::VectorXcd re = p.expansion(ps.terms());
    for (int n = 0; n < ps.terms(); ++n) {
      CHECK(std::abs(re[n] - ps.v(n, col)) < 1e-10);
    }
  }

  const Eigen::VectorXcd at0 = evaluate_voltages(ps, pades, 0.0);
  CHECK((at0 - f.base.voltage).cwiseAbs().maxCoeff() < 1e-14);

  std::vector<double> fracs = {0.1, 0.3, 0.5, 0.6, 0.7, 0.8, 0.85, 0.9,
                               0.93, 0.95, 0.97, 0.98, 0.99};
  std::vector<double> grid;
  for (double fr : fracs) grid.push_back(fr * s_c);
  grid.insert(grid.begin() + 3, 1.0);  // s = 1.0 lies between 0.3 and 0.5 s_c
  std::sort(grid.begin(), grid.end());
  const PvCurve nr = pv_curve_newton(f.c.network, f.k, grid, f.base);
  REQUIRE_FALSE(nr.first_failure);

  std::vector<double> upper_errors;
  for (const PvPoint& pt : nr.points) {
    const Eigen::VectorXcd vp = evaluate_voltages(ps, pades, pt.s);
    const double err =
        (vp.cwiseAbs() - pt.solution->voltage.cwiseAbs()).cwiseAbs().maxCoeff();
    CAPTURE(pt.s);
    if (pt.s <= 0.9 * s_c + 1e-12) CHECK(err < 1e-6);
    if (pt.s >= 0.5 * s_c - 1e-12) upper_errors.push_back(err);
    if (pt.s <= 0.5 * s_c + 1e-12) {
      const Eigen::VectorXcd vs = evaluate_voltages(ps, pt.s, SeriesEvaluation::kSeries);
      CHECK((vs - vp).cwiseAbs().maxCoeff() < 1e-8);
    }
    // Bus 20 sheds load: its curve is the flattest of all load buses.
    const Eigen::VectorXd drop = f.base.voltage.cwiseAbs() - vp.cwiseAbs();
    for (int i : ps.pq) {
      if (i != bus20 && f.k[i] > 0.0) CHECK(drop[bus20] < drop[i]);
    }
  }
  // Truncation error grows toward the bifurcation; differences below the
  // 1e-12 round-off floor are not ordered.
  for (size_t i = 1; i < upper_errors.size(); ++i) {
    CHECK(upper_errors[i] >= upper_errors[i - 1] - 1e-12);
  }
}

TEST_CASE("unloading direction has no critical loading") {
  const auto& f = ieee39();
  Eigen::VectorXd k = Eigen::VectorXd::Zero(f.c.network.bus_count());
  k[f.c.network.index_of(20)] = -0.2;
  try {
    const double s = find_critical_loading(f.c.network, f.base, k).s_c;
    CHECK(s > 4.9);  // only reachable once the load has vanished
  } catch (const NoCriticalLoading&) {
    CHECK(true);
  }
}
