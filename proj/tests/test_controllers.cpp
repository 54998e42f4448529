#include <cstdio>
#include <fstream>
#include <cmath>
#include <random>

#include "doctest.h"
#include "vstab/case_io.hpp"
#include "vstab/controllers.hpp"
#include "vstab/error.hpp"
#include "vstab/power_flow.hpp"

using namespace vstab;

namespace {

SampleBuffer filled(const std::vector<double>& v) {
  SampleBuffer b(static_cast<int>(v.size()));
  for (double x : v) b.push(x);
  return b;
}

ControllerConfig config(ControllerKind kind, std::vector<int> monitored = {2}) {
  ControllerConfig c;
  c.kind = kind;
  c.svc_bus = 3;
  c.monitored = std::move(monitored);
  c.v_ref = 1.0;
  return c;
}

CriticalVarianceSet thresholds(std::vector<int> ids, std::vector<double> v) {
  CriticalVarianceSet s;
  s.bus_ids = std::move(ids);
  s.variance = Eigen::Map<Eigen::VectorXd>(v.data(), v.size());
  return s;
}

}  // namespace

TEST_CASE("buffered average filter") {
  CHECK(*baf(filled(std::vector<double>(90, 1.0))) == doctest::Approx(1.0).epsilon(1e-15));
  std::vector<double> alt(90);
  for (int i = 0; i < 90; ++i) alt[i] = i % 2 ? 1.01 : 0.99;
  CHECK(std::abs(*baf(filled(alt)) - 1.0) < 1e-14);
  std::vector<double> ramp(90);
  for (int i = 0; i < 90; ++i) ramp[i] = 0.98 + 0.02 * i / 89.0;
  CHECK(std::abs(*baf(filled(ramp)) - 0.99) < 1e-6);

  SampleBuffer partial(90);
  for (int i = 0; i < 89; ++i) partial.push(1.0);
  CHECK_FALSE(baf(partial).has_value());
  CHECK_FALSE(bvf(partial, FilterConfig{}).has_value());
}

TEST_CASE("sample buffer keeps the most recent values") {
  SampleBuffer b(3);
  for (double v : {1.0, 2.0, 3.0, 4.0, 5.0}) b.push(v);
  CHECK(b.values() == std::vector<double>{3.0, 4.0, 5.0});
  CHECK_THROWS_AS(SampleBuffer(0), InvalidArgument);
}

TEST_CASE("filter geometry") {
  FilterConfig f;
  CHECK(f.buffer_length() == 90);
  CHECK_NOTHROW(f.validate());
  f.sgf_frame = 88;
  CHECK_THROWS_AS(f.validate(), InvalidArgument);
  f.sgf_frame = 91;
  CHECK_THROWS_AS(f.validate(), InvalidArgument);
  f.sgf_frame = 5;
  f.sgf_order = 5;
  CHECK_THROWS_AS(f.validate(), InvalidArgument);

  FilterConfig g;
  CHECK_THROWS_AS(detrend_sgf(std::vector<double>(50, 1.0), g), InvalidArgument);
}

TEST_CASE("Savitzky-Golay detrending reproduces low-order polynomials") {
  FilterConfig f;
  std::vector<double> lin(90), quad(90);
  for (int i = 0; i < 90; ++i) {
    const double t = i / 30.0;
    lin[i] = 0.97 + 0.004 * t;
    quad[i] = 1.01 - 0.003 * t + 0.0015 * t * t;
  }
  for (double r : detrend_sgf(lin, f)) CHECK(std::abs(r) < 1e-10);
  for (double r : detrend_sgf(quad, f)) CHECK(std::abs(r) < 1e-10);
  CHECK(*bvf(filled(quad), f) < 1e-12);
  CHECK(*bvf(filled(std::vector<double>(90, 0.95)), f) < 1e-24);

  // Short frames use the edge fits; still exact on quadratics.
  FilterConfig shortf;
  shortf.sgf_frame = 21;
  for (double r : detrend_sgf(quad, shortf)) CHECK(std::abs(r) < 1e-10);
}

TEST_CASE("smoothing matrix rows sum to one") {
  const Eigen::MatrixXd s = sgf_matrix(90, 2, 89);
  CHECK((s.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(sgf_matrix(10, 2, 11), InvalidArgument);
}

TEST_CASE("residual variance of a noisy ramp") {
  // Many windows of ramp + white noise: the population variance of the
  // residual, averaged over windows, is sigma^2 times the fraction of
  // degrees of freedom left after the fit. With a 89-sample frame on a
  // 90-sample window that is close to (90 - 3) / 90, i.e. within 10%.
  FilterConfig f;
  const double sigma = 1e-3;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n01;
  double acc = 0.0;
  const int windows = 400;
  for (int w = 0; w < windows; ++w) {
    SampleBuffer b(90);
    for (int i = 0; i < 90; ++i) b.push(0.98 + 2e-4 * i + sigma * n01(rng));
    acc += *bvf(b, f);
  }
  const double mean = acc / windows;
  CHECK(std::abs(mean / (sigma * sigma) - 1.0) < 0.10);
}

TEST_CASE("step gate") {
  CHECK(step_gate(0.5) == 0.5);
  CHECK(step_gate(-0.5) == 0.0);
  CHECK(step_gate(0.0) == 0.0);
  for (double x : {-2.0, -1e-9, 0.0, 3e-7, 4.0}) {
    CHECK(step_gate(step_gate(x)) == step_gate(x));
  }
}

TEST_CASE("controller kinds round-trip") {
  for (ControllerKind k : {ControllerKind::kRBC, ControllerKind::kMBC, ControllerKind::kVBC}) {
    CHECK(controller_kind_from_string(to_string(k)) == k);
  }
  CHECK(controller_kind_from_string("vbc") == ControllerKind::kVBC);
  CHECK_THROWS_AS(controller_kind_from_string("pid"), InvalidArgument);
}

TEST_CASE("regulator-based law") {
  ControllerConfig c = config(ControllerKind::kRBC);
  c.k_r = 5.0;
  CHECK(rbc_update(c.v_ref, c) == 0.0);
  CHECK(rbc_update(c.v_ref - 0.01, c) == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("susceptance limits") {
  SvcState svc{4.0, 0.0, false};
  const double applied = apply_susceptance_change(svc, 25.0, 0.0, 10.0, 3.0);
  CHECK(svc.b == 10.0);
  CHECK(applied == 6.0);
  CHECK(svc.saturated);
  CHECK(svc.last_update == 3.0);
  apply_susceptance_change(svc, -1.0, 0.0, 10.0, 6.0);
  CHECK(svc.b == 9.0);
  CHECK_FALSE(svc.saturated);
  apply_susceptance_change(svc, -100.0, 0.0, 10.0, 9.0);
  CHECK(svc.b == 0.0);
  CHECK(svc.saturated);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-5.0, 5.0);
  SvcState s{1.0, 0.0, false};
  for (int i = 0; i < 1000; ++i) {
    apply_susceptance_change(s, d(rng), 0.5, 2.5, i);
    CHECK(s.b >= 0.5);
    CHECK(s.b <= 2.5);
  }
}

TEST_CASE("mean-based law") {
  ControllerConfig c = config(ControllerKind::kMBC, {2, 5});
  c.k_r = 5.0;
  c.k_m = 10.0;
  const double local = 0.995;
  CHECK(mbc_update(local, {0.99, 1.02}, c) == rbc_update(local, c));
  CHECK(mbc_update(local, {c.mu_crit, 1.0}, c) == rbc_update(local, c));
  CHECK(mbc_update(local, {c.mu_crit - 0.02, 1.0}, c) - rbc_update(local, c) ==
        doctest::Approx(0.2).epsilon(1e-9));
  c.k_m = 0.0;
  CHECK(mbc_update(local, {0.5, 0.7}, c) == rbc_update(local, c));
}

TEST_CASE("variance-based law") {
  ControllerConfig c = config(ControllerKind::kVBC, {2, 5});
  c.k_r = 5.0;
  c.k_m = 10.0;
  c.k_v = 2000.0;
  c.sigma2_crit = thresholds({5, 2}, {2e-5, 1e-5});
  CHECK_NOTHROW(c.validate());
  const double local = 0.99;
  const std::vector<double> means{0.97, 0.995};

  SUBCASE("gates closed") {
    CHECK(vbc_update(local, means, {0.9e-5, 1.9e-5}, c) == mbc_update(local, means, c));
  }
  SUBCASE("zero gain") {
    c.k_v = 0.0;
    CHECK(vbc_update(local, means, {1.0, 1.0}, c) == mbc_update(local, means, c));
  }
  SUBCASE("thresholds are matched by bus id") {
    // bus 2 over its 1e-5 threshold by 1e-5, bus 5 under its 2e-5.
    CHECK(vbc_update(local, means, {2e-5, 1.5e-5}, c) - mbc_update(local, means, c) ==
          doctest::Approx(2000.0 * 1e-5).epsilon(1e-9));
  }
  SUBCASE("missing threshold") {
    c.sigma2_crit = thresholds({2}, {1e-5});
    CHECK_THROWS_AS(vbc_update(local, means, {1.0, 1.0}, c), InvalidArgument);
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c.sigma2_crit.reset();
    CHECK_THROWS_AS(vbc_update(local, means, {1.0, 1.0}, c), InvalidArgument);
  }
}

TEST_CASE("high-mean, high-variance window") {
  // Voltages sit above 0.99 so the magnitude terms are silent, but the
  // window is noisy: only the variance law reacts.
  ControllerConfig c = config(ControllerKind::kVBC);
  c.k_r = 5.0;
  c.k_m = 10.0;
  c.k_v = 2000.0;
  c.sigma2_crit = thresholds({2}, {1e-5});
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  SampleBuffer local(90), remote(90);
  for (int i = 0; i < 90; ++i) {
    local.push(1.0 + 1e-4 * n01(rng));
    remote.push(0.995 + 0.01 * n01(rng));
  }
  const double lm = *baf(local);
  const std::vector<double> means{*baf(remote)};
  const std::vector<double> vars{*bvf(remote, c.filter)};
  REQUIRE(means[0] > 0.99);
  const double d_mbc = mbc_update(lm, means, c);
  const double d_vbc = vbc_update(lm, means, vars, c);
  CHECK(std::abs(d_mbc) < 0.01);
  CHECK(d_vbc > 0.1);
  CHECK(d_vbc > 10.0 * std::abs(d_mbc));
}

TEST_CASE("containment of the three laws") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    ControllerConfig c = config(ControllerKind::kVBC, {2, 4, 6});
    c.k_r = 10.0 * u(rng);
    c.k_m = 10.0 * u(rng);
    c.k_v = 1e4 * u(rng);
    c.sigma2_crit = thresholds({2, 4, 6}, {1e-5 * u(rng), 1e-5 * u(rng), 1e-5 * u(rng)});
    const double local = 0.95 + 0.05 * u(rng);  // <= V_ref
    std::vector<double> means, vars;
    for (int i = 0; i < 3; ++i) {
      means.push_back(0.9 + 0.15 * u(rng));
      vars.push_back(3e-5 * u(rng));
    }
    const double r = rbc_update(local, c);
    const double m = mbc_update(local, means, c);
    const double v = vbc_update(local, means, vars, c);
    CHECK(m >= r);
    CHECK(v >= m);
  }
}

TEST_CASE("configuration validation") {
  ControllerConfig c = config(ControllerKind::kRBC);
  c.b_min = 2.0;
  c.b_max = 1.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = config(ControllerKind::kMBC);
  c.k_m = -1.0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = config(ControllerKind::kVBC);
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  CHECK_THROWS_AS(SvcController(c, 1.0), InvalidArgument);
  c = config(ControllerKind::kRBC);
  CHECK_THROWS_AS(SvcController(c, 11.0), InvalidArgument);
}

TEST_CASE("SVC susceptance for a voltage target") {
  const Case c = load_case("threebus");
  for (double target : {1.0, 1.05}) {
    const double b = initial_svc_susceptance(c.network, 3, target);
    const Network with = set_shunt(c.network, 3, b);
    const PowerFlowSolution pf = solve_cold(with, 0.0, with.loading_direction());
    CHECK(pf.magnitude(with.index_of(3)) == doctest::Approx(target).epsilon(1e-8));
  }
  CHECK_THROWS_AS(initial_svc_susceptance(c.network, 2, 1.0), InvalidArgument);
}

TEST_CASE("controller object: no action on underfull buffers, then the law") {
  ControllerConfig c = config(ControllerKind::kRBC);
  c.k_r = 5.0;
  SvcController ctl(c, 1.0);
  const std::vector<int> idx{2, 1};  // svc bus index, monitored bus index
  Eigen::VectorXd v(3);
  v << 1.0, 0.97, 0.99;
  for (int i = 0; i < 45; ++i) ctl.sample(idx, v);
  CHECK(ctl.fire(3.0) == 1.0);
  CHECK_FALSE(ctl.log().back().acted);
  for (int i = 0; i < 45; ++i) ctl.sample(idx, v);
  CHECK(ctl.fire(6.0) == doctest::Approx(1.05).epsilon(1e-12));
  const ControlRecord& r = ctl.log().back();
  CHECK(r.acted);
  CHECK(r.local_mean == doctest::Approx(0.99));
  CHECK(r.means.at(0) == doctest::Approx(0.97));
  CHECK(r.variances.at(0) < 1e-20);
}

TEST_CASE("controller log CSV") {
  ControllerConfig c = config(ControllerKind::kMBC, {2});
  SvcController ctl(c, 1.0);
  ctl.fire(3.0);
  const std::string path = "controller_log_test.csv";
  write_control_log_csv(ctl.log(), ctl.config(), path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "t,controller,local_mean,mean_2,var_2,threshold_2,delta_b_requested,"
        "delta_b,b_svc,saturated,acted");
  std::string row;
  std::getline(in, row);
  CHECK(row.rfind("3,MBC,", 0) == 0);
  std::remove(path.c_str());
  CHECK_THROWS_AS(write_control_log_csv(ctl.log(), ctl.config(), "/nonexistent/dir/x.csv"),
                  IoError);
}

namespace {

struct ThreeBusRig {
  Case c = load_case("threebus");
  double b0 = initial_svc_susceptance(c.network, 3, 1.0);
  DaeSystem dae{c.network, c.machines, 3, c.network.loading_direction()};
  OUParams ou{Eigen::VectorXd::Constant(1, 10.0), Eigen::VectorXd::Constant(1, 0.02),
              dae.load_bus_ids()};
  VbcOrchestrator orchestrator() const {
    return VbcOrchestrator{c.network, dae, ou, 0.99, 30.0, 5e-6};
  }
};

}  // namespace

TEST_CASE("threshold refresh pipeline") {
  ThreeBusRig rig;
  VbcOrchestrator orch = rig.orchestrator();
  const auto a = orch.refresh(rig.b0, {2}, 0.0);
  const auto again = orch.refresh(rig.b0, {2}, 0.0);
  CHECK(a.thresholds.variance[0] == again.thresholds.variance[0]);
  CHECK(a.s_c > a.thresholds.s_m);
  CHECK(a.thresholds.s_m > 0.0);

  // More support moves the nose out and changes the thresholds.
  const auto b = orch.refresh(rig.b0 + 0.3, {2}, 0.0);
  CHECK(b.s_c > a.s_c);
  CHECK(std::abs(b.thresholds.variance[0] / a.thresholds.variance[0] - 1.0) > 1e-3);
}

TEST_CASE("controller refreshes on accumulated susceptance change") {
  ThreeBusRig rig;
  ControllerConfig c = config(ControllerKind::kVBC);
  c.k_r = 5.0;
  SvcController ctl(c, rig.b0, rig.orchestrator());
  const std::vector<int> idx{2, 1};
  Eigen::VectorXd v(3);
  v << 1.0, 0.99, 1.0;
  for (int i = 0; i < 90; ++i) ctl.sample(idx, v);
  ctl.fire(3.0);  // initial refresh, no change requested
  CHECK(ctl.refresh_count() == 1);
  const double first = ctl.config().sigma2_crit->variance[0];
  ctl.fire(6.0);
  CHECK(ctl.refresh_count() == 1);
  CHECK(ctl.config().sigma2_crit->variance[0] == first);

  v(2) = 0.98;  // 0.02 deficit at K_r = 5: 0.1 p.u. step
  for (int i = 0; i < 90; ++i) ctl.sample(idx, v);
  ctl.fire(9.0);
  ctl.fire(12.0);
  CHECK(ctl.refresh_count() == 2);
  CHECK(ctl.config().sigma2_crit->variance[0] != first);
  CHECK(ctl.warnings().empty());
}

TEST_CASE("failed refresh keeps the previous thresholds") {
  ThreeBusRig rig;
  VbcOrchestrator orch = rig.orchestrator();
  orch.diffusion = 1.0;  // s_m far below zero: no admissible margin
  ControllerConfig c = config(ControllerKind::kVBC);
  c.sigma2_crit = thresholds({2}, {3e-5});
  SvcController ctl(c, rig.b0, orch);
  ctl.fire(3.0);
  CHECK(ctl.refresh_count() == 0);
  REQUIRE(ctl.warnings().size() == 1);
  CHECK(ctl.warnings()[0].find("no_admissible_margin") != std::string::npos);
  CHECK(ctl.config().sigma2_crit->variance[0] == 3e-5);
}

TEST_CASE("firing cadence in simulation") {
  ThreeBusRig rig;
  DaeSystem dae = rig.dae;
  const Equilibrium eq = find_equilibrium(dae, 0.0, rig.b0);
  ControllerConfig c = config(ControllerKind::kRBC);
  c.k_r = 0.2;
  SvcController ctl(c, rig.b0);
  const ControllerHook hook = ctl.hook(rig.c.network);
  IntegrationOptions opt;
  opt.horizon = 30.0;
  opt.record_every = 1;
  const IntegrationResult res = integrate(dae, eq, nullptr, &hook, opt);
  REQUIRE_FALSE(res.collapse);
  REQUIRE(ctl.log().size() == 10);
  for (size_t i = 0; i < ctl.log().size(); ++i) {
    CHECK(ctl.log()[i].t == doctest::Approx(3.0 * (i + 1)).epsilon(1e-12));
  }
  // b only changes at firing instants.
  for (size_t i = 1; i < res.trajectory.size(); ++i) {
    if (res.trajectory[i].b_svc != res.trajectory[i - 1].b_svc) {
      const double t = res.trajectory[i].t;
      CHECK(std::abs(t / 3.0 - std::round(t / 3.0)) < 1e-9);
    }
  }
}
