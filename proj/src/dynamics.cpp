#include "vstab/dynamics.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "vstab/power_flow.hpp"

namespace vstab {

namespace {

using namespace state;

// Stator quantities of one machine and their partial derivatives with
// respect to (delta, theta, V, e'q, e'd).
enum Var { kD = 0, kT = 1, kV = 2, kQ = 3, kE = 4 };
using Partials = std::array<double, 5>;

struct Stator {
  double vd, vq, id, iq, pe, qg;
  Partials dpe, dqg, did, diq;
};

Stator stator(const MachineData& m, double delta, double eq, double ed,
              double theta, double v) {
  Stator s;
  const double a = delta - theta;
  const double sa = std::sin(a), ca = std::cos(a);
  s.vd = v * sa;
  s.vq = v * ca;
  s.id = (eq - s.vq) / m.xd1;
  s.iq = (s.vd - ed) / m.xq1;
  s.pe = s.vd * s.id + s.vq * s.iq;
  s.qg = s.vq * s.id - s.vd * s.iq;
  const Partials dvd{s.vq, -s.vq, sa, 0.0, 0.0};
  const Partials dvq{-s.vd, s.vd, ca, 0.0, 0.0};
  for (int k = 0; k < 5; ++k) {
    s.did[k] = -dvq[k] / m.xd1;
    s.diq[k] = dvd[k] / m.xq1;
  }
  s.did[kQ] += 1.0 / m.xd1;
  s.diq[kE] -= 1.0 / m.xq1;
  for (int k = 0; k < 5; ++k) {
    s.dpe[k] = dvd[k] * s.id + s.vd * s.did[k] + dvq[k] * s.iq + s.vq * s.diq[k];
    s.dqg[k] = dvq[k] * s.id + s.vq * s.did[k] - dvd[k] * s.iq - s.vd * s.diq[k];
  }
  return s;
}

MachineData to_system_base(const MachineModel& mm, int bus, double base) {
  const double ratio = base / mm.mva;  // impedances scale by S_base / S_mach
  MachineData m;
  m.bus = bus;
  m.h = mm.h / ratio;
  m.d = mm.damping / ratio;
  m.xd = mm.xd * ratio;
  m.xq = mm.xq * ratio;
  m.xd1 = mm.xd1 * ratio;
  m.xq1 = mm.xq1 * ratio;
  m.td01 = mm.td01;
  m.tq01 = mm.tq01;
  m.avr = mm.avr;
  m.r = mm.gov.r * ratio;
  m.gov = mm.gov;
  return m;
}

}  // namespace

DaeSystem::DaeSystem(const Network& network,
                     const std::vector<MachineModel>& machines,
                     std::optional<int> svc_bus_id, const Eigen::VectorXd& k)
    : network_(network), ybus_(build_admittance_matrix(network)), k_(k) {
  if (k_.size() == 0) k_ = network_.loading_direction();
  if (k_.size() != network_.bus_count()) {
    throw InvalidArgument("loading direction length does not match bus count");
  }
  std::set<int> with_machine;
  for (const MachineModel& mm : machines) {
    const int i = network_.index_of(mm.bus);
    if (network_.bus(i).kind == BusKind::kPQ) {
      throw InvalidArgument("machine at PQ bus " + std::to_string(mm.bus));
    }
    if (!with_machine.insert(i).second) {
      throw InvalidArgument("two machines at bus " + std::to_string(mm.bus));
    }
    machines_.push_back(to_system_base(mm, i, network_.base_mva()));
  }
  for (int i = 0; i < network_.bus_count(); ++i) {
    if (network_.bus(i).kind != BusKind::kPQ && !with_machine.count(i)) {
      throw InvalidArgument("generator bus " +
                            std::to_string(network_.bus(i).id) +
                            " has no machine model");
    }
    if (std::abs(network_.bus(i).base_load) > 0.0) load_buses_.push_back(i);
  }
  if (svc_bus_id) {
    const int i = network_.index_of(*svc_bus_id);
    if (network_.bus(i).kind != BusKind::kPQ) {
      throw InvalidArgument("SVC bus must be a PQ bus");
    }
    svc_bus_ = i;
  }
  setpoints_.vref = Eigen::VectorXd::Ones(machine_count());
  setpoints_.pref = Eigen::VectorXd::Zero(machine_count());
}

std::vector<int> DaeSystem::load_bus_ids() const {
  std::vector<int> ids;
  for (int i : load_buses_) ids.push_back(network_.bus(i).id);
  return ids;
}

void DaeSystem::set_setpoints(Setpoints sp) {
  if (sp.vref.size() != machine_count() || sp.pref.size() != machine_count()) {
    throw InvalidArgument("setpoint vectors must have one entry per machine");
  }
  setpoints_ = std::move(sp);
}

Eigen::VectorXcd DaeSystem::voltages(const Eigen::VectorXd& y) const {
  const int n = bus_count();
  Eigen::VectorXcd v(n);
  for (int i = 0; i < n; ++i) v[i] = std::polar(y[n + i], y[i]);
  return v;
}

Eigen::VectorXcd DaeSystem::load_power(const DaeInputs& in) const {
  if (in.u.size() != 0 && in.u.size() != input_count()) {
    throw InvalidArgument("fluctuation vector has wrong length");
  }
  Eigen::VectorXcd s(bus_count());
  for (int i = 0; i < bus_count(); ++i) {
    s[i] = network_.bus(i).base_load * (1.0 + in.s * k_[i]);
  }
  if (in.u.size() != 0) {
    for (int c = 0; c < input_count(); ++c) s[load_buses_[c]] *= 1.0 + in.u[c];
  }
  return s;
}

Eigen::VectorXd DaeSystem::f(const Eigen::VectorXd& x,
                             const Eigen::VectorXd& y) const {
  const int n = bus_count();
  Eigen::VectorXd out(state_count());
  for (int m = 0; m < machine_count(); ++m) {
    const MachineData& md = machines_[m];
    const AvrParams& a = md.avr;
    const GovernorParams& gv = md.gov;
    const int o = kStatesPerUnit * m;
    const Stator st = stator(md, x[o + kDelta], x[o + kEq], x[o + kEd],
                             y[md.bus], y[n + md.bus]);
    const double w = x[o + kOmega];
    const double pm = x[o + kGov3] + gv.t3 / gv.t5 * x[o + kGov2];
    out[o + kDelta] = kOmegaBase * (w - 1.0);
    out[o + kOmega] = (pm - st.pe - md.d * (w - 1.0)) / (2.0 * md.h);
    out[o + kEq] = (-x[o + kEq] - (md.xd - md.xd1) * st.id + x[o + kEfd]) / md.td01;
    out[o + kEd] = (-x[o + kEd] + (md.xq - md.xq1) * st.iq) / md.tq01;
    out[o + kVm] = (y[n + md.bus] - x[o + kVm]) / a.tr;
    out[o + kVr] = (-x[o + kVr] + a.ka * (setpoints_.vref[m] - x[o + kVm] -
                                          a.kf / a.tf * x[o + kEfd] + x[o + kRf])) /
                   a.ta;
    out[o + kEfd] = (-a.ke * x[o + kEfd] + x[o + kVr]) / a.te;
    out[o + kRf] = (-x[o + kRf] + a.kf / a.tf * x[o + kEfd]) / a.tf;
    out[o + kGov1] =
        (setpoints_.pref[m] + (1.0 - w) / md.r - x[o + kGov1]) / gv.ts;
    out[o + kGov2] = (x[o + kGov1] - x[o + kGov2]) / gv.tc;
    out[o + kGov3] = ((1.0 - gv.t3 / gv.t5) * x[o + kGov2] - x[o + kGov3]) / gv.t5;
  }
  return out;
}

Eigen::VectorXd DaeSystem::g(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                             const DaeInputs& in) const {
  const int n = bus_count();
  const Eigen::VectorXcd v = voltages(y);
  Eigen::VectorXcd s = -(v.cwiseProduct((ybus_ * v).conjugate())) - load_power(in);
  for (int m = 0; m < machine_count(); ++m) {
    const MachineData& md = machines_[m];
    const int o = kStatesPerUnit * m;
    const Stator st = stator(md, x[o + kDelta], x[o + kEq], x[o + kEd],
                             y[md.bus], y[n + md.bus]);
    s[md.bus] += Complex(st.pe, st.qg);
  }
  if (svc_bus_) {
    const double vs = y[n + *svc_bus_];
    s[*svc_bus_] += Complex(0.0, in.b_svc * vs * vs);
  }
  Eigen::VectorXd out(2 * n);
  out.head(n) = s.real();
  out.tail(n) = s.imag();
  return out;
}

JacobianBlocks DaeSystem::jacobian(const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& y,
                                   const DaeInputs& in) const {
  const int n = bus_count();
  const int nx = state_count();
  JacobianBlocks j;
  j.fx = Eigen::MatrixXd::Zero(nx, nx);
  j.fy = Eigen::MatrixXd::Zero(nx, 2 * n);
  j.gx = Eigen::MatrixXd::Zero(2 * n, nx);
  j.gy = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  j.gu = Eigen::MatrixXd::Zero(2 * n, input_count());

  for (int m = 0; m < machine_count(); ++m) {
    const MachineData& md = machines_[m];
    const AvrParams& a = md.avr;
    const GovernorParams& gv = md.gov;
    const int o = kStatesPerUnit * m;
    const int bt = md.bus, bv = n + md.bus;
    const Stator st = stator(md, x[o + kDelta], x[o + kEq], x[o + kEd], y[bt], y[bv]);
    const double h2 = 2.0 * md.h;

    j.fx(o + kDelta, o + kOmega) = kOmegaBase;

    j.fx(o + kOmega, o + kOmega) = -md.d / h2;
    j.fx(o + kOmega, o + kGov3) = 1.0 / h2;
    j.fx(o + kOmega, o + kGov2) = gv.t3 / gv.t5 / h2;
    j.fx(o + kOmega, o + kDelta) = -st.dpe[kD] / h2;
    j.fx(o + kOmega, o + kEq) = -st.dpe[kQ] / h2;
    j.fx(o + kOmega, o + kEd) = -st.dpe[kE] / h2;
    j.fy(o + kOmega, bt) = -st.dpe[kT] / h2;
    j.fy(o + kOmega, bv) = -st.dpe[kV] / h2;

    const double cd = -(md.xd - md.xd1) / md.td01;
    j.fx(o + kEq, o + kDelta) = cd * st.did[kD];
    j.fx(o + kEq, o + kEq) = -1.0 / md.td01 + cd * st.did[kQ];
    j.fx(o + kEq, o + kEd) = cd * st.did[kE];
    j.fx(o + kEq, o + kEfd) = 1.0 / md.td01;
    j.fy(o + kEq, bt) = cd * st.did[kT];
    j.fy(o + kEq, bv) = cd * st.did[kV];

    const double cq = (md.xq - md.xq1) / md.tq01;
    j.fx(o + kEd, o + kDelta) = cq * st.diq[kD];
    j.fx(o + kEd, o + kEd) = -1.0 / md.tq01 + cq * st.diq[kE];
    j.fx(o + kEd, o + kEq) = cq * st.diq[kQ];
    j.fy(o + kEd, bt) = cq * st.diq[kT];
    j.fy(o + kEd, bv) = cq * st.diq[kV];

    j.fx(o + kVm, o + kVm) = -1.0 / a.tr;
    j.fy(o + kVm, bv) = 1.0 / a.tr;

    j.fx(o + kVr, o + kVr) = -1.0 / a.ta;
    j.fx(o + kVr, o + kVm) = -a.ka / a.ta;
    j.fx(o + kVr, o + kEfd) = -a.ka * a.kf / (a.tf * a.ta);
    j.fx(o + kVr, o + kRf) = a.ka / a.ta;

    j.fx(o + kEfd, o + kEfd) = -a.ke / a.te;
    j.fx(o + kEfd, o + kVr) = 1.0 / a.te;

    j.fx(o + kRf, o + kRf) = -1.0 / a.tf;
    j.fx(o + kRf, o + kEfd) = a.kf / (a.tf * a.tf);

    j.fx(o + kGov1, o + kOmega) = -1.0 / (md.r * gv.ts);
    j.fx(o + kGov1, o + kGov1) = -1.0 / gv.ts;
    j.fx(o + kGov2, o + kGov1) = 1.0 / gv.tc;
    j.fx(o + kGov2, o + kGov2) = -1.0 / gv.tc;
    j.fx(o + kGov3, o + kGov2) = (1.0 - gv.t3 / gv.t5) / gv.t5;
    j.fx(o + kGov3, o + kGov3) = -1.0 / gv.t5;

    // Injection of the machine into its bus balance.
    j.gx(bt, o + kDelta) = st.dpe[kD];
    j.gx(bt, o + kEq) = st.dpe[kQ];
    j.gx(bt, o + kEd) = st.dpe[kE];
    j.gx(bv, o + kDelta) = st.dqg[kD];
    j.gx(bv, o + kEq) = st.dqg[kQ];
    j.gx(bv, o + kEd) = st.dqg[kE];
    j.gy(bt, bt) += st.dpe[kT];
    j.gy(bt, bv) += st.dpe[kV];
    j.gy(bv, bt) += st.dqg[kT];
    j.gy(bv, bv) += st.dqg[kV];
  }

  // Network: minus the derivatives of S = V conj(Y V).
  const Eigen::VectorXcd v = voltages(y);
  const Eigen::VectorXcd current = ybus_ * v;
  for (int c = 0; c < n; ++c) {
    const Complex unit = v[c] / y[n + c];
    for (int r = 0; r < n; ++r) {
      Complex dva = Complex(0, -1) * v[r] * std::conj(ybus_(r, c) * v[c]);
      Complex dvm = v[r] * std::conj(ybus_(r, c) * unit);
      if (r == c) {
        dva += Complex(0, 1) * v[c] * std::conj(current[c]);
        dvm += std::conj(current[c]) * unit;
      }
      j.gy(r, c) -= dva.real();
      j.gy(n + r, c) -= dva.imag();
      j.gy(r, n + c) -= dvm.real();
      j.gy(n + r, n + c) -= dvm.imag();
    }
  }
  if (svc_bus_) {
    j.gy(n + *svc_bus_, n + *svc_bus_) += 2.0 * in.b_svc * y[n + *svc_bus_];
  }
  for (int c = 0; c < input_count(); ++c) {
    const int i = load_buses_[c];
    const Complex s0 = network_.bus(i).base_load * (1.0 + in.s * k_[i]);
    j.gu(i, c) = -s0.real();
    j.gu(n + i, c) = -s0.imag();
  }
  return j;
}

Eigen::VectorXd governor_participation(const DaeSystem& dae) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(dae.bus_count());
  for (const MachineData& md : dae.machines()) w[md.bus] += 1.0 / md.r;
  return normalized_participation(dae.network(), w);
}

Equilibrium find_equilibrium(DaeSystem& dae, double s, double b_svc) {
  Network net = dae.network();
  if (dae.svc_bus()) {
    const int i = *dae.svc_bus();
    net = set_shunt(net, net.bus(i).id, net.bus(i).shunt_susceptance + b_svc);
  }
  const Eigen::VectorXd& k = dae.loading_direction();
  PowerFlowSolution pf;
  try {
    pf = dae.machine_count() > 1
             ? solve_distributed(net, s, k, governor_participation(dae))
             : solve_cold(net, s, k);
  } catch (const PowerFlowDivergence& e) {
    std::ostringstream msg;
    msg << "no power-flow solution at loading s=" << s << ": " << e.what();
    throw InitializationCollapse(msg.str());
  }

  const int n = dae.bus_count();
  Equilibrium eq;
  eq.inputs.s = s;
  eq.inputs.u = Eigen::VectorXd::Zero(dae.input_count());
  eq.inputs.b_svc = b_svc;
  eq.y.resize(2 * n);
  for (int i = 0; i < n; ++i) {
    eq.y[i] = std::arg(pf.voltage[i]);
    eq.y[n + i] = std::abs(pf.voltage[i]);
  }
  const Eigen::VectorXcd load = dae.load_power(eq.inputs);
  eq.x = Eigen::VectorXd::Zero(dae.state_count());
  Setpoints sp;
  sp.vref.resize(dae.machine_count());
  sp.pref.resize(dae.machine_count());
  for (int m = 0; m < dae.machine_count(); ++m) {
    const MachineData& md = dae.machines()[m];
    const int o = kStatesPerUnit * m;
    const Complex v = pf.voltage[md.bus];
    const Complex sg = pf.injection[md.bus] + load[md.bus];
    const Complex current = std::conj(sg / v);
    const double delta = std::arg(v + Complex(0.0, md.xq) * current);
    const double vd = std::abs(v) * std::sin(delta - std::arg(v));
    const double vq = std::abs(v) * std::cos(delta - std::arg(v));
    const double id = std::abs(current) * std::sin(delta - std::arg(current));
    const double iq = std::abs(current) * std::cos(delta - std::arg(current));
    const double ed = (md.xq - md.xq1) * iq;
    const double eqp = vq + md.xd1 * id;
    const double efd = eqp + (md.xd - md.xd1) * id;
    const double pm = vd * id + vq * iq;
    const AvrParams& a = md.avr;
    eq.x[o + kDelta] = delta;
    eq.x[o + kOmega] = 1.0;
    eq.x[o + kEq] = eqp;
    eq.x[o + kEd] = ed;
    eq.x[o + kVm] = std::abs(v);
    eq.x[o + kVr] = a.ke * efd;
    eq.x[o + kEfd] = efd;
    eq.x[o + kRf] = a.kf / a.tf * efd;
    eq.x[o + kGov1] = pm;
    eq.x[o + kGov2] = pm;
    eq.x[o + kGov3] = (1.0 - md.gov.t3 / md.gov.t5) * pm;
    sp.vref[m] = std::abs(v) + a.ke * efd / a.ka;
    sp.pref[m] = pm;
  }
  dae.set_setpoints(sp);
  eq.setpoints = sp;
  return eq;
}

LinearizedSystem linearize(const DaeSystem& dae, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& y, const DaeInputs& in) {
  LinearizedSystem lin;
  lin.blocks = dae.jacobian(x, y, in);
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(lin.blocks.gy);
  if (!(lu.rcond() > 1e-14)) {
    throw NumericalError("algebraic singularity: g_y is singular");
  }
  lin.as = lin.blocks.fx - lin.blocks.fy * lu.solve(lin.blocks.gx);
  return lin;
}

const char* to_string(CollapseTrigger t) {
  return t == CollapseTrigger::kNewtonFailure ? "newton_failure"
                                              : "condition_number";
}

std::optional<CollapseReport> detect_collapse(const Eigen::MatrixXd& gy,
                                              double time, double limit) {
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(gy);
  const double rc = lu.rcond();
  const double cond = rc > 0.0 ? 1.0 / rc : std::numeric_limits<double>::infinity();
  if (std::isfinite(cond) && cond <= limit) return std::nullopt;
  CollapseReport r;
  r.time = time;
  r.trigger = CollapseTrigger::kConditionNumber;
  r.condition = cond;
  return r;
}

bool is_sample_step(long step, double dt, double rate) {
  // Sample j is taken at step floor(j / (rate dt)); step n is a sample step
  // iff some j maps onto it.
  const double per = 1.0 / (rate * dt);  // steps per sample (10/3 for 30 Hz)
  const long j = static_cast<long>(std::ceil(step / per - 1e-9));
  return static_cast<long>(std::floor(j * per + 1e-9)) == step;
}

namespace {

class StepSolver {
 public:
  StepSolver(const DaeSystem& dae, const IntegrationOptions& opt)
      : dae_(dae), opt_(opt), nx_(dae.state_count()), ny_(dae.algebraic_count()) {}

  // Returns false on Newton failure; `report` is filled on condition trigger.
  bool step(const Eigen::VectorXd& x0, const Eigen::VectorXd& y0,
            const Eigen::VectorXd& f0, const DaeInputs& in, double t_new,
            Eigen::VectorXd& x1, Eigen::VectorXd& y1,
            std::optional<CollapseReport>& report) {
    for (int attempt = 0; attempt < 2; ++attempt) {
      x1 = x0;
      y1 = y0;
      if (attempt == 1) stale_ = true;  // retry with a fresh Jacobian
      if (stale_ || since_refresh_ >= kRefreshSteps) {
        if (!refactor(x1, y1, in, t_new, report)) return false;
      }
      if (newton(x0, f0, in, t_new, x1, y1, report)) {
        ++since_refresh_;
        return true;
      }
      if (report) return false;
    }
    return false;
  }

  int factorizations() const { return factorizations_; }
  double last_algebraic_residual() const { return last_g_; }

 private:
  static constexpr int kRefreshSteps = 100;

  bool refactor(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                const DaeInputs& in, double t, std::optional<CollapseReport>& report) {
    const JacobianBlocks j = dae_.jacobian(x, y, in);
    report = detect_collapse(j.gy, t, opt_.condition_limit);
    if (report) return false;
    const double h2 = opt_.dt / 2.0;
    Eigen::MatrixXd m(nx_ + ny_, nx_ + ny_);
    m.topLeftCorner(nx_, nx_) = Eigen::MatrixXd::Identity(nx_, nx_) - h2 * j.fx;
    m.topRightCorner(nx_, ny_) = -h2 * j.fy;
    m.bottomLeftCorner(ny_, nx_) = j.gx;
    m.bottomRightCorner(ny_, ny_) = j.gy;
    lu_.compute(m);
    ++factorizations_;
    stale_ = false;
    since_refresh_ = 0;
    return true;
  }

  bool newton(const Eigen::VectorXd& x0, const Eigen::VectorXd& f0,
              const DaeInputs& in, double t, Eigen::VectorXd& x1,
              Eigen::VectorXd& y1, std::optional<CollapseReport>& report) {
    const double h2 = opt_.dt / 2.0;
    Eigen::VectorXd res(nx_ + ny_);
    double prev = std::numeric_limits<double>::infinity();
    int fresh_iters = 0, stale_iters = 0;
    bool fresh = since_refresh_ == 0;
    for (int total = 0; total < 4 * opt_.max_newton_iterations; ++total) {
      res.head(nx_) = x1 - x0 - h2 * (dae_.f(x1, y1) + f0);
      const Eigen::VectorXd gres = dae_.g(x1, y1, in);
      res.tail(ny_) = gres;
      const double norm = res.cwiseAbs().maxCoeff();
      if (!std::isfinite(norm)) return false;
      if (norm <= opt_.newton_tolerance) {
        last_g_ = gres.cwiseAbs().maxCoeff();
        return true;
      }
      if (fresh) {
        if (++fresh_iters > opt_.max_newton_iterations) return false;
      } else if (++stale_iters > 6 || norm > 0.5 * prev) {
        // Reused Jacobian is not contracting well enough: refresh it here.
        if (!refactor(x1, y1, in, t, report)) return false;
        fresh = true;
        fresh_iters = 1;
      }
      prev = norm;
      const Eigen::VectorXd dz = lu_.solve(-res);
      x1 += dz.head(nx_);
      y1 += dz.tail(ny_);
    }
    return false;
  }

  const DaeSystem& dae_;
  const IntegrationOptions& opt_;
  const int nx_, ny_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  bool stale_ = true;
  int since_refresh_ = 0;
  int factorizations_ = 0;
  double last_g_ = 0.0;
};

}  // namespace

IntegrationResult integrate(const DaeSystem& dae, const Equilibrium& start,
                            const NoiseRealization* noise,
                            const ControllerHook* controller,
                            const IntegrationOptions& options) {
  if (!(options.dt > 0.0) || !(options.horizon >= 0.0)) {
    throw InvalidArgument("integration needs dt > 0 and a non-negative horizon");
  }
  const long total_steps = std::lround(options.horizon / options.dt);
  if (noise) {
    if (noise->buses != dae.load_bus_ids()) {
      throw InvalidArgument("noise realization buses do not match the load buses");
    }
    if (noise->fast.rows() < total_steps + 1) {
      throw InvalidArgument("noise realization is shorter than the horizon");
    }
    if (std::abs(noise->fast_dt - options.dt) > 1e-12) {
      throw InvalidArgument("noise step differs from the integration step");
    }
  }
  long fire_every = 0;
  if (controller && controller->fire) {
    fire_every = std::lround(controller->period / options.dt);
    if (fire_every <= 0) throw InvalidArgument("controller period too short");
  }

  auto inputs_at = [&](long step, double b) {
    DaeInputs in;
    const double t = step * options.dt;
    in.s = options.s_offset + (noise ? noise->slow_at(t) : 0.0);
    in.u = noise ? Eigen::VectorXd(noise->fast.row(step).transpose())
                 : Eigen::VectorXd::Zero(dae.input_count());
    in.b_svc = b;
    return in;
  };

  IntegrationResult result;
  StepSolver solver(dae, options);
  Eigen::VectorXd x = start.x, y = start.y;
  double b = start.inputs.b_svc;
  DaeInputs in = inputs_at(0, b);
  Eigen::VectorXd fx = dae.f(x, y);
  const int n = dae.bus_count();

  for (long step = 0;; ++step) {
    const double t = step * options.dt;
    if (controller && controller->sample &&
        is_sample_step(step, options.dt, options.pmu_rate)) {
      controller->sample(t, y.tail(n));
    }
    if (fire_every > 0 && step > 0 && step % fire_every == 0) {
      SystemSnapshot snap{t, &x, &y, in};
      b = controller->fire(snap);
    }
    if (options.record_every > 0 && step % options.record_every == 0) {
      result.trajectory.push_back({t, x, y, b, in.s, in.u});
    }
    if (step >= total_steps) break;

    const DaeInputs next = inputs_at(step + 1, b);
    Eigen::VectorXd x1, y1;
    std::optional<CollapseReport> report;
    const double t1 = (step + 1) * options.dt;
    if (!solver.step(x, y, fx, next, t1, x1, y1, report)) {
      if (!report) {
        report = CollapseReport{};
        report->trigger = CollapseTrigger::kNewtonFailure;
      }
      report->time = t1;
      report->last_converged = t;
      report->last_y = y;
      result.collapse = report;
      result.end_time = t;
      break;
    }
    x = std::move(x1);
    y = std::move(y1);
    in = next;
    fx = dae.f(x, y);
    result.max_mismatch = std::max(result.max_mismatch, solver.last_algebraic_residual());
    ++result.steps;
    result.end_time = t1;
  }
  result.x_end = x;
  result.y_end = y;
  result.b_svc_end = b;
  result.factorizations = solver.factorizations();
  return result;
}

void write_trajectory_csv(const DaeSystem& dae,
                          const std::vector<TrajectorySample>& trajectory,
                          const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write trajectory '" + path + "'");
  const int n = dae.bus_count();
  out << "t";
  for (int i = 0; i < n; ++i) out << ",V_" << dae.network().bus(i).id;
  for (int i = 0; i < n; ++i) out << ",theta_" << dae.network().bus(i).id;
  out << ",b_svc,s,P_load,Q_load\n";
  out << std::setprecision(10);
  for (const TrajectorySample& smp : trajectory) {
    out << smp.t;
    for (int i = 0; i < n; ++i) out << "," << smp.y[n + i];
    for (int i = 0; i < n; ++i) out << "," << smp.y[i];
    DaeInputs in{smp.s, smp.u, smp.b_svc};
    const Complex load = dae.load_power(in).sum();
    out << "," << smp.b_svc << "," << smp.s << "," << load.real() << ","
        << load.imag() << "\n";
  }
  if (!out) throw IoError("failed writing trajectory '" + path + "'");
}

}  // namespace vstab
