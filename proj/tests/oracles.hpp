#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance runner.

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "vstab/dynamics.hpp"

namespace oracle {

/// Dense solve of vec(AX + XA^T) = -vec(BB^T) via (I (x) A + A (x) I).
inline Eigen::MatrixXd kronecker_lyapunov(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const int n = static_cast<int>(a.rows());
  Eigen::MatrixXd big = Eigen::MatrixXd::Zero(n * n, n * n);
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      big.block(i * n, j * n, n, n) += id(i, j) * a + a(i, j) * id;
    }
  }
  const Eigen::MatrixXd q = -(b * b.transpose());
  const Eigen::VectorXd x =
      big.fullPivLu().solve(Eigen::Map<const Eigen::VectorXd>(q.data(), n * n));
  return Eigen::Map<const Eigen::MatrixXd>(x.data(), n, n);
}

/// Random n x n system with every eigenvalue of A left of -0.1.
inline void random_stable_system(std::mt19937_64& rng, int n, Eigen::MatrixXd& a,
                                 Eigen::MatrixXd& b) {
  std::normal_distribution<double> n01;
  a.resize(n, n);
  b.resize(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      a(i, j) = n01(rng);
      b(i, j) = n01(rng);
    }
  }
  const double shift = Eigen::EigenSolver<Eigen::MatrixXd>(a).eigenvalues().real().maxCoeff();
  a.diagonal().array() -= shift + 0.1 + std::abs(n01(rng));
}

/// Largest relative deviation (max |analytic - fd| / max(1, max |analytic|))
/// per Jacobian block, from central differences of f and g.
struct JacobianErrors {
  double fx = 0, fy = 0, gx = 0, gy = 0, gu = 0;
  double worst() const { return std::max({fx, fy, gx, gy, gu}); }
};

inline JacobianErrors jacobian_errors(const vstab::DaeSystem& dae, const Eigen::VectorXd& x,
                                      const Eigen::VectorXd& y, const vstab::DaeInputs& in,
                                      double h = 1e-6) {
  const vstab::JacobianBlocks j = dae.jacobian(x, y, in);
  Eigen::MatrixXd fx(j.fx.rows(), j.fx.cols()), gx(j.gx.rows(), j.gx.cols());
  Eigen::MatrixXd fy(j.fy.rows(), j.fy.cols()), gy(j.gy.rows(), j.gy.cols());
  Eigen::MatrixXd gu(j.gu.rows(), j.gu.cols());
  for (int c = 0; c < x.size(); ++c) {
    Eigen::VectorXd xp = x, xm = x;
    xp[c] += h;
    xm[c] -= h;
    fx.col(c) = (dae.f(xp, y) - dae.f(xm, y)) / (2 * h);
    gx.col(c) = (dae.g(xp, y, in) - dae.g(xm, y, in)) / (2 * h);
  }
  for (int c = 0; c < y.size(); ++c) {
    Eigen::VectorXd yp = y, ym = y;
    yp[c] += h;
    ym[c] -= h;
    fy.col(c) = (dae.f(x, yp) - dae.f(x, ym)) / (2 * h);
    gy.col(c) = (dae.g(x, yp, in) - dae.g(x, ym, in)) / (2 * h);
  }
  for (int c = 0; c < in.u.size(); ++c) {
    vstab::DaeInputs ip = in, im = in;
    ip.u[c] += h;
    im.u[c] -= h;
    gu.col(c) = (dae.g(x, y, ip) - dae.g(x, y, im)) / (2 * h);
  }
  auto rel = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& fd) {
    if (a.size() == 0) return 0.0;
    return (a - fd).cwiseAbs().maxCoeff() / std::max(1.0, a.cwiseAbs().maxCoeff());
  };
  return {rel(j.fx, fx), rel(j.fy, fy), rel(j.gx, gx), rel(j.gy, gy), rel(j.gu, gu)};
}

/// Fraction of random walks (step variance 2 D dt) started `gap` below an
/// absorbing boundary that have not reached it after `horizon`. Between
/// grid points the walk is a Brownian bridge; it crosses the boundary with
/// probability exp(-2 (g - x_i)(g - x_{i+1}) / (2 D dt)), so the estimate has
/// no discretisation bias.
inline double first_passage_survival(double gap, double d, double horizon, int paths,
                                     int steps, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double var = 2.0 * d * horizon / steps;
  const double sd = std::sqrt(var);
  int alive = 0;
  for (int p = 0; p < paths; ++p) {
    double x = 0.0;
    bool hit = false;
    for (int k = 0; k < steps && !hit; ++k) {
      const double next = x + sd * n01(rng);
      if (next >= gap) {
        hit = true;
      } else if (u01(rng) < std::exp(-2.0 * (gap - x) * (gap - next) / var)) {
        hit = true;
      }
      x = next;
    }
    alive += hit ? 0 : 1;
  }
  return static_cast<double>(alive) / paths;
}

}  // namespace oracle
