#include "vstab/power_flow.hpp"

#include <cmath>
#include <sstream>

#include "vstab/error.hpp"

namespace vstab {

namespace {

struct Layout {
  std::vector<int> angle;      // buses whose angle is unknown
  std::vector<int> magnitude;  // buses whose magnitude is unknown
  int distributed = -1;        // reference bus index when its P is an equation
};

Layout unknowns(const Network& net, GeneratorModel model,
                const Eigen::VectorXd& participation) {
  Layout l;
  if (model == GeneratorModel::kVoltageControlled && participation.size() > 0) {
    if (participation.size() != net.bus_count()) {
      throw InvalidArgument("participation vector length does not match bus count");
    }
    l.distributed = net.reference_index();
  }
  for (int i = 0; i < net.bus_count(); ++i) {
    const BusKind kind = net.bus(i).kind;
    if (kind == BusKind::kPQ) {
      l.angle.push_back(i);
      l.magnitude.push_back(i);
    } else if (kind == BusKind::kPV &&
               model == GeneratorModel::kVoltageControlled) {
      l.angle.push_back(i);
    }
  }
  return l;
}

double max_mismatch(const Eigen::VectorXcd& ds, const Layout& l) {
  double worst = 0.0;
  if (l.distributed >= 0) worst = std::abs(ds[l.distributed].real());
  for (int i : l.angle) worst = std::max(worst, std::abs(ds[i].real()));
  for (int i : l.magnitude) worst = std::max(worst, std::abs(ds[i].imag()));
  return worst;
}

}  // namespace

Eigen::VectorXcd scheduled_injection(const Network& network, double s,
                                     const Eigen::VectorXd& k) {
  const int n = network.bus_count();
  if (k.size() != n) {
    throw InvalidArgument("loading direction has " + std::to_string(k.size()) +
                          " entries, network has " + std::to_string(n) +
                          " buses");
  }
  Eigen::VectorXcd out(n);
  for (int i = 0; i < n; ++i) {
    const Bus& b = network.bus(i);
    out[i] = Complex(b.generation, 0.0) - b.base_load * (1.0 + s * k[i]);
  }
  return out;
}

Eigen::VectorXcd flat_start(const Network& network) {
  Eigen::VectorXcd v(network.bus_count());
  for (int i = 0; i < network.bus_count(); ++i) {
    const Bus& b = network.bus(i);
    v[i] = b.voltage_setpoint ? *b.voltage_setpoint : 1.0;
  }
  return v;
}

PowerFlowSolution solve_newton(const Network& network,
                               const Eigen::MatrixXcd& ybus, double s,
                               const Eigen::VectorXd& k,
                               const Eigen::VectorXcd& initial,
                               const PowerFlowOptions& options) {
  const int n = network.bus_count();
  if (initial.size() != n) {
    throw InvalidArgument("initial voltage vector has wrong length");
  }
  const Eigen::VectorXcd spec0 = scheduled_injection(network, s, k);
  const Layout l = unknowns(network, options.generators, options.participation);
  const int na = static_cast<int>(l.angle.size());
  const int nm = static_cast<int>(l.magnitude.size());
  // With a distributed slack the reference P row and the share lambda join
  // the system as the last equation / unknown.
  const int nd = l.distributed >= 0 ? 1 : 0;
  double lambda = 0.0;
  auto spec_at = [&](double lam) {
    Eigen::VectorXcd out = spec0;
    if (nd) {
      for (int i = 0; i < n; ++i) {
        if (network.bus(i).kind == BusKind::kPQ && options.participation[i] != 0.0) {
          throw InvalidArgument("participation must be zero on PQ buses");
        }
        out[i] += options.participation[i] * lam;
      }
    }
    return out;
  };
  Eigen::VectorXcd spec = spec_at(lambda);

  Eigen::VectorXd va = initial.array().arg();
  Eigen::VectorXd vm = initial.array().abs();
  if (options.generators == GeneratorModel::kVoltageControlled) {
    for (int i = 0; i < n; ++i) {
      const Bus& b = network.bus(i);
      if (b.kind != BusKind::kPQ) vm[i] = *b.voltage_setpoint;
    }
  }

  auto phasors = [&] {
    Eigen::VectorXcd v(n);
    for (int i = 0; i < n; ++i) v[i] = std::polar(vm[i], va[i]);
    return v;
  };

  Eigen::VectorXcd v = phasors();
  Eigen::VectorXcd current = ybus * v;
  Eigen::VectorXcd ds =
      v.cwiseProduct(current.conjugate()) - spec;
  double mismatch = max_mismatch(ds, l);
  int iter = 0;
  while (mismatch > options.tolerance) {
    if (!std::isfinite(mismatch) || iter >= options.max_iterations) {
      std::ostringstream msg;
      msg << "Newton power flow did not converge at s=" << s << " after "
          << iter << " iterations (max mismatch " << mismatch << " p.u.)";
      throw PowerFlowDivergence(msg.str(), mismatch, iter);
    }
    // Complex-form derivatives of S = V conj(Y V).
    const Eigen::VectorXcd unit = v.array() / vm.array().cast<Complex>();
    Eigen::MatrixXcd ds_dva(n, n), ds_dvm(n, n);
    for (int c = 0; c < n; ++c) {
      for (int r = 0; r < n; ++r) {
        ds_dva(r, c) = Complex(0, -1) * v[r] * std::conj(ybus(r, c) * v[c]);
        ds_dvm(r, c) = v[r] * std::conj(ybus(r, c) * unit[c]);
      }
      ds_dva(c, c) += Complex(0, 1) * v[c] * std::conj(current[c]);
      ds_dvm(c, c) += std::conj(current[c]) * unit[c];
    }
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(na + nm + nd, na + nm + nd);
    Eigen::VectorXd rhs(na + nm + nd);
    for (int a = 0; a < na; ++a) {
      const int r = l.angle[a];
      rhs[a] = -ds[r].real();
      for (int b = 0; b < na; ++b) jac(a, b) = ds_dva(r, l.angle[b]).real();
      for (int b = 0; b < nm; ++b) {
        jac(a, na + b) = ds_dvm(r, l.magnitude[b]).real();
      }
    }
    for (int a = 0; a < nm; ++a) {
      const int r = l.magnitude[a];
      rhs[na + a] = -ds[r].imag();
      for (int b = 0; b < na; ++b) {
        jac(na + a, b) = ds_dva(r, l.angle[b]).imag();
      }
      for (int b = 0; b < nm; ++b) {
        jac(na + a, na + b) = ds_dvm(r, l.magnitude[b]).imag();
      }
    }
    if (nd) {
      const int r = l.distributed;
      const int row = na + nm;
      rhs[row] = -ds[r].real();
      for (int b = 0; b < na; ++b) jac(row, b) = ds_dva(r, l.angle[b]).real();
      for (int b = 0; b < nm; ++b) jac(row, na + b) = ds_dvm(r, l.magnitude[b]).real();
      // d(mismatch)/d(lambda) = -alpha on every P row.
      for (int a = 0; a < na; ++a) jac(a, row) = -options.participation[l.angle[a]];
      jac(row, row) = -options.participation[r];
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
    if (!lu.isInvertible()) {
      throw PowerFlowDivergence("singular power flow Jacobian at s=" +
                                    std::to_string(s),
                                mismatch, iter);
    }
    const Eigen::VectorXd dx = lu.solve(rhs);
    for (int a = 0; a < na; ++a) va[l.angle[a]] += dx[a];
    for (int a = 0; a < nm; ++a) vm[l.magnitude[a]] += dx[na + a];
    if (nd) {
      lambda += dx[na + nm];
      spec = spec_at(lambda);
    }
    ++iter;

    v = phasors();
    current = ybus * v;
    ds = v.cwiseProduct(current.conjugate()) - spec;
    mismatch = max_mismatch(ds, l);
  }

  PowerFlowSolution sol;
  sol.voltage = v;
  sol.injection = v.cwiseProduct(current.conjugate());
  sol.iterations = iter;
  sol.max_mismatch = mismatch;
  sol.slack_share = lambda;
  return sol;
}

Network with_slack_dispatch(const Network& network,
                            const PowerFlowSolution& solution, double s,
                            const Eigen::VectorXd& k) {
  const int ref = network.reference_index();
  Bus b = network.bus(ref);
  const double load = (b.base_load * (1.0 + s * k[ref])).real();
  b.generation = solution.injection[ref].real() + load;
  return network.with_bus(ref, b);
}

Eigen::VectorXd normalized_participation(const Network& network,
                                         const Eigen::VectorXd& weight) {
  if (weight.size() != network.bus_count()) {
    throw InvalidArgument("participation weight length does not match bus count");
  }
  Eigen::VectorXd a = weight;
  for (int i = 0; i < network.bus_count(); ++i) {
    if (network.bus(i).kind == BusKind::kPQ) a[i] = 0.0;
  }
  const double total = a.sum();
  if (!(total > 0.0)) throw InvalidArgument("participation weights sum to zero");
  return a / total;
}

PowerFlowSolution solve_newton(const Network& network, double s,
                               const Eigen::VectorXd& k,
                               const Eigen::VectorXcd& initial,
                               const PowerFlowOptions& options) {
  return solve_newton(network, build_admittance_matrix(network), s, k, initial,
                      options);
}

PowerFlowSolution solve_newton(const Network& network,
                               const PowerFlowOptions& options) {
  return solve_cold(network, 0.0, network.loading_direction(), options);
}

Eigen::VectorXcd dc_start(const Network& network, double s,
                          const Eigen::VectorXd& k) {
  const int n = network.bus_count();
  const int ref = network.reference_index();
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n, n);
  for (const Branch& br : network.branches()) {
    if (!br.in_service || br.impedance.imag() == 0.0) continue;
    const int f = network.index_of(br.from), t = network.index_of(br.to);
    const double y = 1.0 / br.impedance.imag();
    b(f, f) += y;
    b(t, t) += y;
    b(f, t) -= y;
    b(t, f) -= y;
  }
  const Eigen::VectorXd p = scheduled_injection(network, s, k).real();
  // Ground the reference bus and solve the remaining rows.
  b.row(ref).setZero();
  b.col(ref).setZero();
  b(ref, ref) = 1.0;
  Eigen::VectorXd rhs = p;
  rhs[ref] = 0.0;
  const Eigen::VectorXd theta = b.fullPivLu().solve(rhs);
  Eigen::VectorXcd v = flat_start(network);
  for (int i = 0; i < n; ++i) v[i] = std::polar(std::abs(v[i]), theta[i]);
  return v;
}

PowerFlowSolution solve_cold(const Network& network, double s,
                             const Eigen::VectorXd& k,
                             const PowerFlowOptions& options) {
  const Eigen::MatrixXcd y = build_admittance_matrix(network);
  try {
    return solve_newton(network, y, s, k, flat_start(network), options);
  } catch (const PowerFlowDivergence&) {
  }
  try {
    return solve_newton(network, y, s, k, dc_start(network, s, k), options);
  } catch (const PowerFlowDivergence&) {
  }
  // Ramp: solve at s = 0 and walk up with warm starts. The final solve's
  // failure propagates.
  Eigen::VectorXcd guess = dc_start(network, 0.0, k);
  constexpr int kSteps = 20;
  for (int step = 0; step < kSteps; ++step) {
    guess = solve_newton(network, y, s * step / kSteps, k, guess, options).voltage;
  }
  return solve_newton(network, y, s, k, guess, options);
}

PowerFlowSolution solve_distributed(const Network& network, double s,
                                    const Eigen::VectorXd& k,
                                    const Eigen::VectorXd& participation,
                                    const PowerFlowOptions& options) {
  PowerFlowOptions single = options;
  single.participation.resize(0);
  const PowerFlowSolution base = solve_cold(network, 0.0, k, single);
  if (s == 0.0) return base;
  const Network net = with_slack_dispatch(network, base, 0.0, k);
  const Eigen::MatrixXcd y = build_admittance_matrix(net);
  PowerFlowOptions shared = options;
  shared.participation = participation;
  try {
    return solve_newton(net, y, s, k, base.voltage, shared);
  } catch (const PowerFlowDivergence&) {
  }
  // Continuation with step halving; gives up when the step gets tiny.
  Eigen::VectorXcd guess = base.voltage;
  double at = 0.0, step = s / 20.0;
  while (true) {
    const double next = std::abs(s - at) <= std::abs(step) ? s : at + step;
    try {
      PowerFlowSolution sol = solve_newton(net, y, next, k, guess, shared);
      if (next == s) return sol;
      guess = sol.voltage;
      at = next;
    } catch (const PowerFlowDivergence& e) {
      step *= 0.5;
      if (std::abs(step) < 1e-4 * std::abs(s)) throw;
    }
  }
}

PvCurve pv_curve_newton(const Network& network, const Eigen::VectorXd& k,
                        const std::vector<double>& s_grid,
                        const PowerFlowSolution& base,
                        const PowerFlowOptions& options) {
  PowerFlowOptions opts = options;
  opts.generators = GeneratorModel::kFixedPhasor;
  const Eigen::MatrixXcd y = build_admittance_matrix(network);
  PvCurve curve;
  Eigen::VectorXcd guess = base.voltage;
  for (size_t i = 0; i < s_grid.size(); ++i) {
    if (i > 0 && !(s_grid[i] > s_grid[i - 1])) {
      throw InvalidArgument("PV-curve loading grid must be increasing");
    }
    PvPoint p;
    p.s = s_grid[i];
    try {
      p.solution = solve_newton(network, y, p.s, k, guess, opts);
      guess = p.solution->voltage;
    } catch (const PowerFlowDivergence& e) {
      p.failure_mismatch = e.mismatch();
      if (!curve.first_failure) curve.first_failure = i;
    }
    curve.points.push_back(std::move(p));
  }
  return curve;
}

PvCurve pv_curve_newton(const Network& network, const Eigen::VectorXd& k,
                        const std::vector<double>& s_grid) {
  const PowerFlowSolution base = solve_newton(network);
  return pv_curve_newton(network, k, s_grid, base);
}

// --- closed-form two-bus system ---------------------------------------------

TwoBusSystem::TwoBusSystem(Complex line_admittance, double power_factor,
                           double shunt_susceptance, double source_voltage) {
  if (std::abs(line_admittance) == 0.0) {
    throw InvalidArgument("line admittance must be nonzero");
  }
  if (!(power_factor > 0.0 && power_factor <= 1.0)) {
    throw InvalidArgument("power factor must lie in (0, 1]");
  }
  const Complex z = 1.0 / line_admittance;
  // Thevenin equivalent seen from the load bus.
  const Complex denom = 1.0 + z * Complex(0.0, shunt_susceptance);
  const Complex eth = source_voltage / denom;
  const Complex zth = z / denom;
  thevenin_e2_ = std::norm(eth);
  rth_ = zth.real();
  xth_ = zth.imag();
  tan_phi_ = std::tan(std::acos(power_factor));
}

double TwoBusSystem::max_power() const {
  const double a = rth_ + xth_ * tan_phi_;
  const double zabs = std::hypot(rth_, xth_);
  return thevenin_e2_ /
         (2.0 * (a + zabs * std::sqrt(1.0 + tan_phi_ * tan_phi_)));
}

double TwoBusSystem::nose_voltage() const {
  const double p = max_power();
  return std::sqrt(
      (thevenin_e2_ - 2.0 * p * (rth_ + xth_ * tan_phi_)) / 2.0);
}

double TwoBusSystem::open_circuit_voltage() const {
  return std::sqrt(thevenin_e2_);
}

// V^4 + (2(R P + X Q) - E^2) V^2 + |Z|^2 (P^2 + Q^2) = 0
std::optional<double> TwoBusSystem::voltage(double p, bool high_branch) const {
  const double q = p * tan_phi_;
  const double b = 2.0 * (rth_ * p + xth_ * q) - thevenin_e2_;
  const double c = (rth_ * rth_ + xth_ * xth_) * (p * p + q * q);
  double disc = b * b - 4.0 * c;
  if (disc < 0.0) {
    // Tolerate round-off exactly at the nose.
    if (disc > -1e-12 * b * b) {
      disc = 0.0;
    } else {
      return std::nullopt;
    }
  }
  const double root = std::sqrt(disc);
  const double v2 = high_branch ? (-b + root) / 2.0 : (-b - root) / 2.0;
  if (v2 < 0.0) return std::nullopt;
  return std::sqrt(v2);
}

double TwoBusSystem::voltage_sensitivity(double p) const {
  // Implicit differentiation of F(V^2, P) = 0 with u = V^2.
  const auto v = voltage(p, true);
  if (!v) throw InvalidArgument("load beyond the nose of the PV curve");
  const double u = (*v) * (*v);
  const double k2 = 1.0 + tan_phi_ * tan_phi_;
  const double z2 = rth_ * rth_ + xth_ * xth_;
  const double a = rth_ + xth_ * tan_phi_;
  const double b = 2.0 * a * p - thevenin_e2_;
  const double df_du = 2.0 * u + b;
  const double df_dp = 2.0 * a * u + 2.0 * z2 * k2 * p;
  const double du_dp = -df_dp / df_du;
  return du_dp / (2.0 * (*v));
}

TwoBusPvCurve TwoBusSystem::curve(int points) const {
  if (points < 2) throw InvalidArgument("need at least two curve points");
  TwoBusPvCurve out;
  out.nose_p = max_power();
  out.nose_v = nose_voltage();
  out.open_circuit_v = open_circuit_voltage();
  for (int i = 0; i < points; ++i) {
    const double p = out.nose_p * i / (points - 1);
    TwoBusPoint pt;
    pt.p = p;
    pt.v_high = voltage(p, true).value_or(out.nose_v);
    pt.v_low = voltage(p, false).value_or(out.nose_v);
    out.points.push_back(pt);
  }
  return out;
}

TwoBusPvCurve two_bus_pv_curve(Complex line_admittance, double power_factor,
                               double shunt_susceptance, int points) {
  return TwoBusSystem(line_admittance, power_factor, shunt_susceptance)
      .curve(points);
}

}  // namespace vstab
