#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vstab/error.hpp"
#include "vstab/grid.hpp"
#include "vstab/machine.hpp"
#include "vstab/stochastic.hpp"

namespace vstab {

/// The loading at which a dynamic case is initialised has no power-flow
/// solution.
class InitializationCollapse : public Error {
 public:
  explicit InitializationCollapse(const std::string& what)
      : Error("collapse_at_initialization", what) {}
};

/// Offsets of the eleven states inside one machine's block of x.
namespace state {
constexpr int kDelta = 0, kOmega = 1, kEq = 2, kEd = 3;     // machine
constexpr int kVm = 4, kVr = 5, kEfd = 6, kRf = 7;          // exciter
constexpr int kGov1 = 8, kGov2 = 9, kGov3 = 10;             // governor
}  // namespace state

/// Operating inputs of the algebraic equations.
struct DaeInputs {
  double s = 0.0;          // slow loading factor
  Eigen::VectorXd u;       // fast fluctuation per load bus (empty = zero)
  double b_svc = 0.0;      // SVC susceptance [p.u.]
};

/// Controller setpoints back-solved at initialisation.
struct Setpoints {
  Eigen::VectorXd vref;  // exciter reference per machine
  Eigen::VectorXd pref;  // governor power reference per machine
};

/// Machine parameters converted to the system base.
struct MachineData {
  int bus = 0;  // bus index
  double h, d, xd, xq, xd1, xq1, td01, tq01;
  AvrParams avr;
  double r;  // droop on system base
  GovernorParams gov;
};

struct JacobianBlocks {
  Eigen::MatrixXd fx, fy, gx, gy, gu;
};

/// x' = f(x, y),  0 = g(x, y, u). States per machine follow `state::`;
/// algebraic variables are y = [theta_0..theta_{N-1}, V_0..V_{N-1}] and g is
/// [P balance; Q balance] per bus. Stator currents are eliminated in closed
/// form rather than kept as algebraic unknowns.
class DaeSystem {
 public:
  static constexpr double kOmegaBase = 2.0 * 3.14159265358979323846 * 60.0;

  DaeSystem(const Network& network, const std::vector<MachineModel>& machines,
            std::optional<int> svc_bus_id, const Eigen::VectorXd& k);

  int state_count() const { return kStatesPerUnit * machine_count(); }
  int algebraic_count() const { return 2 * network_.bus_count(); }
  int input_count() const { return static_cast<int>(load_buses_.size()); }
  int machine_count() const { return static_cast<int>(machines_.size()); }
  int bus_count() const { return network_.bus_count(); }

  const Network& network() const { return network_; }
  const Eigen::MatrixXcd& admittance() const { return ybus_; }
  const std::vector<MachineData>& machines() const { return machines_; }
  /// Bus indices carrying load, in input (column) order.
  const std::vector<int>& load_buses() const { return load_buses_; }
  std::vector<int> load_bus_ids() const;
  std::optional<int> svc_bus() const { return svc_bus_; }
  const Eigen::VectorXd& loading_direction() const { return k_; }

  const Setpoints& setpoints() const { return setpoints_; }
  void set_setpoints(Setpoints sp);

  Eigen::VectorXd f(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const;
  Eigen::VectorXd g(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                    const DaeInputs& in) const;
  JacobianBlocks jacobian(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                          const DaeInputs& in) const;

  /// Complex load S_0 (1 + s k)(1 + u) at every bus.
  Eigen::VectorXcd load_power(const DaeInputs& in) const;
  /// Complex voltages from y.
  Eigen::VectorXcd voltages(const Eigen::VectorXd& y) const;

 private:
  Network network_;
  Eigen::MatrixXcd ybus_;
  std::vector<MachineData> machines_;
  std::vector<int> load_buses_;
  std::optional<int> svc_bus_;
  Eigen::VectorXd k_;
  Setpoints setpoints_;
};

/// Per-bus governor gains 1/R (system base), normalised: the share of a
/// load change each machine picks up in the quasi-steady state.
Eigen::VectorXd governor_participation(const DaeSystem& dae);

struct Equilibrium {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  DaeInputs inputs;
  Setpoints setpoints;
};

/// Power flow at loading s (with the SVC shunt folded in), then machine,
/// exciter and governor states back-solved. With several machines the load
/// change from the s = 0 base case is shared by governor participation;
/// a single machine is the slack. Installs the resulting setpoints on `dae`. Throws
/// InitializationCollapse when the power flow has no solution.
Equilibrium find_equilibrium(DaeSystem& dae, double s, double b_svc = 0.0);

struct LinearizedSystem {
  JacobianBlocks blocks;
  Eigen::MatrixXd as;  // f_x - f_y g_y^{-1} g_x
};

/// Throws NumericalError ("algebraic singularity") when g_y is singular.
LinearizedSystem linearize(const DaeSystem& dae, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& y, const DaeInputs& in);

enum class CollapseTrigger { kNewtonFailure, kConditionNumber };
const char* to_string(CollapseTrigger t);

struct CollapseReport {
  double time = 0.0;           // time of the failed step
  double last_converged = 0.0; // time of the last good step
  CollapseTrigger trigger = CollapseTrigger::kNewtonFailure;
  Eigen::VectorXd last_y;
  double condition = 0.0;      // estimated cond(g_y) when known
};

/// Condition check used by the integrator; returns a report when the
/// estimate exceeds `limit`.
std::optional<CollapseReport> detect_collapse(const Eigen::MatrixXd& gy,
                                              double time, double limit = 1e10);

struct TrajectorySample {
  double t = 0.0;
  Eigen::VectorXd x;
  Eigen::VectorXd y;
  double b_svc = 0.0;
  double s = 0.0;
  Eigen::VectorXd u;
};

/// What a controller sees when it fires.
struct SystemSnapshot {
  double t = 0.0;
  const Eigen::VectorXd* x = nullptr;
  const Eigen::VectorXd* y = nullptr;
  DaeInputs inputs;
};

/// Hook interface: `sample` receives 30 Hz PMU voltage magnitudes, `fire` is
/// called every `period` seconds and returns the SVC susceptance to hold
/// until the next firing.
struct ControllerHook {
  double period = 3.0;
  std::function<void(double t, const Eigen::VectorXd& vmag)> sample;
  std::function<double(const SystemSnapshot&)> fire;
};

struct IntegrationOptions {
  double dt = 0.01;
  double horizon = 100.0;
  double newton_tolerance = 1e-8;
  int max_newton_iterations = 25;
  double condition_limit = 1e10;
  double s_offset = 0.0;   // added to the noise's slow trajectory
  int record_every = 10;   // trajectory decimation in steps; 0 disables
  double pmu_rate = 30.0;  // Hz
};

struct IntegrationResult {
  std::vector<TrajectorySample> trajectory;
  std::optional<CollapseReport> collapse;
  double end_time = 0.0;
  Eigen::VectorXd x_end, y_end;
  double b_svc_end = 0.0;
  int steps = 0;
  int factorizations = 0;
  double max_mismatch = 0.0;  // worst algebraic residual over accepted steps
};

/// Step indices at which a `rate` Hz sampler fires on a 1/dt grid: the
/// nearest step at or below each sample instant (3, 3, 4 pattern for 30 Hz
/// on 100 Hz).
bool is_sample_step(long step, double dt, double rate);

/// Simultaneous trapezoidal integration of the DAE with Newton on [x; y].
/// Noise rows are indexed by step; the fluctuation of step n+1 is held over
/// (t_n, t_{n+1}]. Collapse is a result, not an error.
IntegrationResult integrate(const DaeSystem& dae, const Equilibrium& start,
                            const NoiseRealization* noise,
                            const ControllerHook* controller,
                            const IntegrationOptions& options);

/// CSV with t, per-bus |V| and angle, b_svc, and total P/Q load.
void write_trajectory_csv(const DaeSystem& dae,
                          const std::vector<TrajectorySample>& trajectory,
                          const std::string& path);

}  // namespace vstab
