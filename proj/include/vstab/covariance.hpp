#pragma once

#include <vector>

#include <Eigen/Dense>

#include "vstab/dynamics.hpp"
#include "vstab/stochastic.hpp"

namespace vstab {

/// Linear system dz/dt = A z + B xi over z = [dx; du], with the algebraic
/// response dy = K z.
///
/// Every angle in the model can be shifted uniformly without changing any
/// flow, so A_s carries a zero eigenvalue. The reduced form measures rotor
/// angles against the first machine and drops that machine's angle, which
/// leaves angles in `K`'s output relative to it as well; magnitudes are
/// unaffected.
struct AugmentedSystem {
  Eigen::MatrixXd a;
  Eigen::MatrixXd b;
  Eigen::MatrixXd k;
  int state_count = 0;  // rows of z belonging to dx (after reduction)
  int input_count = 0;  // rows of z belonging to du
  std::vector<int> state_index;  // z row -> index into x (-1 for inputs)
};

/// A = [[A_s, -f_y g_y^-1 g_u], [0, -E]], B = [[0], [diag(sigma)]].
/// `ou.buses` must list the DAE's load buses in input order.
/// Throws NumericalError on a singular g_y.
AugmentedSystem build_augmented(const DaeSystem& dae,
                                const LinearizedSystem& lin,
                                const OUParams& ou);

/// Solves A X + X A^T + B B^T = 0 with a complex Schur (Bartels-Stewart)
/// method; the result is symmetrised. Throws UnstableEquilibrium when A has
/// an eigenvalue with real part above -1e-8 (the variance is unbounded).
Eigen::MatrixXd solve_lyapunov(const Eigen::MatrixXd& a,
                               const Eigen::MatrixXd& b);

/// max |A X + X A^T + B B^T| / max |B B^T| (0 when B = 0).
double lyapunov_residual(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                         const Eigen::MatrixXd& x);

struct CovarianceResult {
  double s = 0.0;
  Eigen::MatrixXd state;      // sigma_z^2
  Eigen::MatrixXd algebraic;  // sigma_y^2
  Eigen::VectorXd voltage_variance;  // per bus index, p.u.^2
};

/// sigma_y^2 = K sigma_z^2 K^T and its |V| diagonal.
CovarianceResult algebraic_covariance(const Eigen::MatrixXd& state_cov,
                                      const AugmentedSystem& aug,
                                      int bus_count);

/// Equilibrium -> linearisation -> Lyapunov -> algebraic covariance at
/// loading s with the SVC held at `b_svc`.
CovarianceResult predict_covariance(DaeSystem& dae, double s, double b_svc,
                                    const OUParams& ou);

struct CriticalVarianceSet {
  std::vector<int> bus_ids;
  Eigen::VectorXd variance;  // p.u.^2 per monitored bus
  double s_m = 0.0;
  double estimate_time = 0.0;  // simulation time of the state estimate
};

/// Predicted |V| variances of the monitored buses at the margin loading s_m.
/// Throws NoAdmissibleMargin when no equilibrium exists at s_m.
CriticalVarianceSet critical_variances(DaeSystem& dae, double s_m,
                                       double b_svc, const OUParams& ou,
                                       const std::vector<int>& monitored_ids,
                                       double estimate_time = 0.0);

/// First-order propagation of a power variance through dV/dP.
inline double delta_method_variance(double dv_dp, double power_variance) {
  return dv_dp * dv_dp * power_variance;
}

}  // namespace vstab
