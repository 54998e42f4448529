#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "vstab/grid.hpp"

namespace vstab {

/// How generator buses are held during a solve.
enum class GeneratorModel {
  /// PV buses hold |V| and scheduled P; the reference bus is the slack.
  kVoltageControlled,
  /// Every PV/reference bus keeps the complex voltage of the initial guess.
  /// This is the embedding used by continuation: generator angles frozen at
  /// the base case, load picked up according to electrical distance.
  kFixedPhasor,
};

struct PowerFlowOptions {
  double tolerance = 1e-10;  // max |dS| [p.u.]
  int max_iterations = 25;
  GeneratorModel generators = GeneratorModel::kVoltageControlled;
  /// Distributed slack for voltage-controlled solves: when non-empty (one
  /// entry per bus, zero on PQ buses), the reference bus keeps only its
  /// angle and every generator bus i produces P_i + alpha_i * lambda, with
  /// the scalar lambda solved for. Empty: the reference bus takes all.
  Eigen::VectorXd participation;
};

struct PowerFlowSolution {
  Eigen::VectorXcd voltage;    // complex bus voltages
  Eigen::VectorXcd injection;  // net complex injection S_i = V_i conj(I_i)
  int iterations = 0;
  double max_mismatch = 0.0;
  double slack_share = 0.0;  // lambda of a distributed-slack solve

  double magnitude(int i) const { return std::abs(voltage[i]); }
  double angle(int i) const { return std::arg(voltage[i]); }
};

/// Scheduled injections for loading factor s: gen - S_0 (1 + s k).
Eigen::VectorXcd scheduled_injection(const Network& network, double s,
                                     const Eigen::VectorXd& k);

/// Flat start: setpoint magnitudes on generator buses, 1 p.u. elsewhere,
/// zero angles.
Eigen::VectorXcd flat_start(const Network& network);

/// DC estimate of the angles (series reactances only) with flat
/// magnitudes; a better cold start for heavily loaded networks.
Eigen::VectorXcd dc_start(const Network& network, double s,
                          const Eigen::VectorXd& k);

/// Cold solve without a caller-supplied guess: flat start, then DC start,
/// then a warm-started ramp of the loading from zero.
PowerFlowSolution solve_cold(const Network& network, double s,
                             const Eigen::VectorXd& k,
                             const PowerFlowOptions& options = {});

/// Copy of `network` whose reference bus schedules the active power it
/// delivers in `solution`, so that a distributed-slack solve about that
/// point starts from lambda = 0.
Network with_slack_dispatch(const Network& network,
                            const PowerFlowSolution& solution, double s,
                            const Eigen::VectorXd& k);

/// Participation factors from a per-bus weight (e.g. governor gains), zero
/// on PQ buses and normalised to sum to one.
Eigen::VectorXd normalized_participation(const Network& network,
                                         const Eigen::VectorXd& weight);

/// Quasi-steady solve: single-slack base case at s = 0, then the load change
/// shared among generator buses by `participation` (distributed slack),
/// reached by continuation from the base case when a direct solve fails.
PowerFlowSolution solve_distributed(const Network& network, double s,
                                    const Eigen::VectorXd& k,
                                    const Eigen::VectorXd& participation,
                                    const PowerFlowOptions& options = {});

/// Polar Newton-Raphson with a dense Jacobian refactored every iteration.
/// Throws PowerFlowDivergence (carrying the final mismatch) when the
/// iteration cap is hit or the Jacobian is singular.
PowerFlowSolution solve_newton(const Network& network, double s,
                               const Eigen::VectorXd& k,
                               const Eigen::VectorXcd& initial,
                               const PowerFlowOptions& options = {});
PowerFlowSolution solve_newton(const Network& network,
                               const PowerFlowOptions& options = {});

/// Same as solve_newton but on a caller-supplied admittance matrix.
PowerFlowSolution solve_newton(const Network& network,
                               const Eigen::MatrixXcd& ybus, double s,
                               const Eigen::VectorXd& k,
                               const Eigen::VectorXcd& initial,
                               const PowerFlowOptions& options);

struct PvPoint {
  double s = 0.0;
  std::optional<PowerFlowSolution> solution;  // empty when Newton diverged
  double failure_mismatch = 0.0;
};

struct PvCurve {
  std::vector<PvPoint> points;
  /// Index of the first point that failed to converge, if any.
  std::optional<size_t> first_failure;
};

/// Trace voltages along the loading direction k over an increasing s grid,
/// warm-starting each point from the last converged one. Generator phasors
/// are frozen at `base` (fixed-phasor embedding).
PvCurve pv_curve_newton(const Network& network, const Eigen::VectorXd& k,
                        const std::vector<double>& s_grid,
                        const PowerFlowSolution& base,
                        const PowerFlowOptions& options = {});
/// Convenience overload solving the base case first.
PvCurve pv_curve_newton(const Network& network, const Eigen::VectorXd& k,
                        const std::vector<double>& s_grid);

/// Closed-form PV curve of a source behind a line feeding a constant power
/// factor load with a shunt capacitor at the load bus.
struct TwoBusPoint {
  double p = 0.0;
  double v_high = 0.0;
  double v_low = 0.0;
};

struct TwoBusPvCurve {
  std::vector<TwoBusPoint> points;  // P from 0 up to the nose
  double nose_p = 0.0;
  double nose_v = 0.0;
  double open_circuit_v = 0.0;
};

class TwoBusSystem {
 public:
  /// `power_factor` in (0, 1], lagging load.
  TwoBusSystem(Complex line_admittance, double power_factor,
               double shunt_susceptance, double source_voltage = 1.0);

  double max_power() const;
  double nose_voltage() const;
  double open_circuit_voltage() const;
  /// High- (upper) or low-voltage branch magnitude at active load p; empty
  /// beyond the nose.
  std::optional<double> voltage(double p, bool high_branch = true) const;
  /// dV/dP along the high-voltage branch (finite below the nose).
  double voltage_sensitivity(double p) const;

  TwoBusPvCurve curve(int points = 200) const;

 private:
  double thevenin_e2_ = 0.0;  // |E_th|^2
  double rth_ = 0.0;
  double xth_ = 0.0;
  double tan_phi_ = 0.0;
};

TwoBusPvCurve two_bus_pv_curve(Complex line_admittance, double power_factor,
                               double shunt_susceptance, int points = 200);

}  // namespace vstab
