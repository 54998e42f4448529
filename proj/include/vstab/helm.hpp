#pragma once

#include <vector>

#include <Eigen/Dense>

#include "vstab/grid.hpp"
#include "vstab/power_flow.hpp"

namespace vstab {

/// Holomorphic voltage series about an expansion point s0. Coefficients are
/// stored order-major: v(n, j) is V[n] of the j-th PQ bus.
struct PowerSeriesSet {
  std::vector<int> pq;          // bus indices, one column each
  Eigen::MatrixXcd v;           // V[n], n = 0..terms-1
  Eigen::MatrixXcd w;           // W[n] with W(s) = 1 / conj(V(conj s))
  Eigen::VectorXcd base;        // full-bus voltages at s0
  Eigen::VectorXd k;            // loading direction
  double s0 = 0.0;              // expansion point

  int terms() const { return static_cast<int>(v.rows()); }
  /// Raw series value for PQ column j at loading s.
  Complex series_value(int column, double s) const;
};

/// Rational approximant A(t)/B(t) in the scaled variable t = s / scale.
struct PadePair {
  int bus = -1;  // bus index, -1 if not tied to a bus
  Eigen::VectorXcd a;
  Eigen::VectorXcd b;  // b[0] == 1
  double scale = 1.0;

  Complex value(double s) const;
  /// Taylor coefficients of A/B in s, orders 0..count-1.
  Eigen::VectorXcd expansion(int count) const;
  /// Numerator roots in s.
  Eigen::VectorXcd numerator_roots() const;
  bool degree_reduced = false;
};

struct CriticalLoading {
  double s_c = 0.0;
  int bus = -1;                              // index of the limiting bus
  std::vector<Eigen::VectorXcd> bus_roots;   // numerator roots per PQ bus
  std::vector<double> stage_estimates;       // one per refinement stage
  double single_stage = 0.0;                 // estimate from the base series
};

struct HelmOptions {
  int terms = 41;
  double pade_tolerance = 1e-14;
  int max_stages = 8;
  double rebase_fraction = 0.9;
  double stage_tolerance = 1e-8;  // relative change that stops refinement
};

/// Series recursion about the base case. Generator buses keep their base
/// complex voltage; each order costs one solve with a fixed matrix.
/// Throws NumericalError when that matrix is singular.
PowerSeriesSet embed_and_recurse(const Network& network,
                                 const PowerFlowSolution& base,
                                 const Eigen::VectorXd& k, int terms = 41);
/// Same, expanding about a solved operating point at loading s0.
PowerSeriesSet embed_and_recurse(const Network& network,
                                 const Eigen::VectorXcd& voltage_at_s0,
                                 double s0, const Eigen::VectorXd& k,
                                 int terms);

/// Robust Padé approximant of diagonal type (m, m), m = (N-1)/2, with SVD
/// degree reduction. Coefficients are rescaled by the ratio of the last two
/// terms before fitting.
PadePair pade(const Eigen::VectorXcd& coefficients, double tolerance = 1e-14);
PadePair pade(const Eigen::VectorXcd& coefficients, int m, int n,
              double tolerance = 1e-14);
std::vector<PadePair> pade_all(const PowerSeriesSet& series,
                               double tolerance = 1e-14);

/// Roots of sum_i c[i] x^i via companion-matrix eigenvalues.
Eigen::VectorXcd polynomial_roots(const Eigen::VectorXcd& c);

/// Smallest positive real numerator root over a set of approximants.
/// Throws NoCriticalLoading when none qualifies.
CriticalLoading critical_loading(const std::vector<PadePair>& pades);

/// Coefficients of |V(s)|^2 = V(s) conj(V(s)) for real s.
Eigen::VectorXcd squared_magnitude_series(const Eigen::VectorXcd& v);

/// Full driver: series of |V|^2 per bus, Padé, smallest positive real root,
/// then repeated re-expansion closer to the nose until the estimate settles.
CriticalLoading find_critical_loading(const Network& network,
                                      const PowerFlowSolution& base,
                                      const Eigen::VectorXd& k,
                                      const HelmOptions& options = {});

enum class SeriesEvaluation { kSeries, kPade };

/// Full-bus voltages at loading s.
Eigen::VectorXcd evaluate_voltages(const PowerSeriesSet& series, double s,
                                   SeriesEvaluation how = SeriesEvaluation::kPade,
                                   double tolerance = 1e-14);
Eigen::VectorXcd evaluate_voltages(const PowerSeriesSet& series,
                                   const std::vector<PadePair>& pades,
                                   double s);

}  // namespace vstab
