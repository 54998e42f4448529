#include "vstab/covariance.hpp"

#include <Eigen/Eigenvalues>

#include "vstab/error.hpp"

namespace vstab {

AugmentedSystem build_augmented(const DaeSystem& dae,
                                const LinearizedSystem& lin,
                                const OUParams& ou) {
  if (ou.buses != dae.load_bus_ids()) {
    throw InvalidArgument("fluctuation buses must match the load buses in order");
  }
  ou.validate();
  const JacobianBlocks& j = lin.blocks;
  Eigen::PartialPivLU<Eigen::MatrixXd> gy(j.gy);
  const double rcond = gy.rcond();
  if (!(rcond > 1e-14)) {
    throw NumericalError("algebraic singularity: g_y is singular (rcond " +
                         std::to_string(rcond) + ")");
  }
  const Eigen::MatrixXd gy_gx = gy.solve(j.gx);
  const Eigen::MatrixXd gy_gu = gy.solve(j.gu);

  // Reduction: x = Q x_r (first rotor angle pinned at zero); x_r = P x with
  // every other rotor angle measured against the first.
  const int nx = dae.state_count();
  const int nm = dae.machine_count();
  const int ref = state::kDelta;  // first machine's angle
  std::vector<int> keep;
  for (int i = 0; i < nx; ++i) {
    if (i != ref) keep.push_back(i);
  }
  const int nr = static_cast<int>(keep.size());
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(nx, nr);
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(nr, nx);
  for (int c = 0; c < nr; ++c) {
    q(keep[c], c) = 1.0;
    p(c, keep[c]) = 1.0;
  }
  for (int m = 1; m < nm; ++m) {
    const int row = static_cast<int>(
        std::find(keep.begin(), keep.end(), kStatesPerUnit * m + state::kDelta) -
        keep.begin());
    p(row, ref) = -1.0;
  }

  const int nu = dae.input_count();
  AugmentedSystem aug;
  aug.state_count = nr;
  aug.input_count = nu;
  aug.a = Eigen::MatrixXd::Zero(nr + nu, nr + nu);
  aug.a.topLeftCorner(nr, nr) = p * lin.as * q;
  aug.a.topRightCorner(nr, nu) = -p * j.fy * gy_gu;
  for (int i = 0; i < nu; ++i) aug.a(nr + i, nr + i) = -ou.e[i];
  aug.b = Eigen::MatrixXd::Zero(nr + nu, nu);
  for (int i = 0; i < nu; ++i) aug.b(nr + i, i) = ou.sigma[i];
  aug.k.resize(dae.algebraic_count(), nr + nu);
  aug.k.leftCols(nr) = -gy_gx * q;
  aug.k.rightCols(nu) = -gy_gu;
  aug.state_index = keep;
  aug.state_index.resize(nr + nu, -1);
  return aug;
}

Eigen::MatrixXd solve_lyapunov(const Eigen::MatrixXd& a,
                               const Eigen::MatrixXd& b) {
  const int n = static_cast<int>(a.rows());
  if (a.cols() != n || b.rows() != n) {
    throw InvalidArgument("solve_lyapunov: dimension mismatch");
  }
  if (n == 0) return Eigen::MatrixXd();
  Eigen::ComplexSchur<Eigen::MatrixXd> schur(a);
  const Eigen::MatrixXcd& t = schur.matrixT();
  const Eigen::MatrixXcd& u = schur.matrixU();
  double worst = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) worst = std::max(worst, t(i, i).real());
  if (worst > -1e-8) {
    throw UnstableEquilibrium(
        "unstable equilibrium, variance undefined/divergent (max Re eig " +
        std::to_string(worst) +
        "); the predicted variance grows without bound as the equilibrium "
        "approaches a singularity");
  }
  // T Y + Y T^H = -U^H B B^T U, solved column by column from the right.
  const Eigen::MatrixXcd c = -(u.adjoint() * (b * b.transpose()) * u);
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  for (int col = n - 1; col >= 0; --col) {
    Eigen::VectorXcd rhs = c.col(col);
    for (int k = col + 1; k < n; ++k) rhs -= y.col(k) * std::conj(t(col, k));
    Eigen::MatrixXcd shifted = t;
    shifted.diagonal().array() += std::conj(t(col, col));
    y.col(col) = shifted.triangularView<Eigen::Upper>().solve(rhs);
  }
  const Eigen::MatrixXd x = (u * y * u.adjoint()).real();
  return 0.5 * (x + x.transpose());
}

double lyapunov_residual(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                         const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd bb = b * b.transpose();
  const double scale = bb.cwiseAbs().maxCoeff();
  if (scale == 0.0) return 0.0;
  return (a * x + x * a.transpose() + bb).cwiseAbs().maxCoeff() / scale;
}

CovarianceResult algebraic_covariance(const Eigen::MatrixXd& state_cov,
                                      const AugmentedSystem& aug,
                                      int bus_count) {
  CovarianceResult r;
  r.state = state_cov;
  r.algebraic = aug.k * state_cov * aug.k.transpose();
  r.algebraic = 0.5 * (r.algebraic + r.algebraic.transpose());
  r.voltage_variance = r.algebraic.diagonal().tail(bus_count);
  return r;
}

CovarianceResult predict_covariance(DaeSystem& dae, double s, double b_svc,
                                    const OUParams& ou) {
  const Equilibrium eq = find_equilibrium(dae, s, b_svc);
  const LinearizedSystem lin = linearize(dae, eq.x, eq.y, eq.inputs);
  const AugmentedSystem aug = build_augmented(dae, lin, ou);
  CovarianceResult r = algebraic_covariance(solve_lyapunov(aug.a, aug.b), aug,
                                            dae.bus_count());
  r.s = s;
  return r;
}

CriticalVarianceSet critical_variances(DaeSystem& dae, double s_m,
                                       double b_svc, const OUParams& ou,
                                       const std::vector<int>& monitored_ids,
                                       double estimate_time) {
  CovarianceResult cov;
  try {
    cov = predict_covariance(dae, s_m, b_svc, ou);
  } catch (const InitializationCollapse& e) {
    throw NoAdmissibleMargin(
        "no equilibrium at the margin loading s_m = " + std::to_string(s_m) +
        "; reduce the margin (lower s_m): " + e.what());
  }
  CriticalVarianceSet set;
  set.bus_ids = monitored_ids;
  set.s_m = s_m;
  set.estimate_time = estimate_time;
  set.variance.resize(static_cast<int>(monitored_ids.size()));
  for (size_t i = 0; i < monitored_ids.size(); ++i) {
    set.variance[i] =
        cov.voltage_variance[dae.network().index_of(monitored_ids[i])];
  }
  return set;
}

}  // namespace vstab
