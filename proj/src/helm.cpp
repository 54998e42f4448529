#include "vstab/helm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "vstab/error.hpp"

namespace vstab {

Complex PowerSeriesSet::series_value(int column, double s) const {
  const double t = s - s0;
  Complex acc = 0.0;
  for (int n = terms() - 1; n >= 0; --n) acc = acc * t + v(n, column);
  return acc;
}

namespace {

Complex horner(const Eigen::VectorXcd& c, Complex x) {
  Complex acc = 0.0;
  for (Eigen::Index i = c.size() - 1; i >= 0; --i) acc = acc * x + c[i];
  return acc;
}

}  // namespace

Complex PadePair::value(double s) const {
  const double t = s / scale;
  const Complex den = horner(b, t);
  if (std::abs(den) <= 1e-14 * b.cwiseAbs().sum()) {
    std::ostringstream msg;
    msg << "Padé denominator vanishes at s=" << s;
    throw NumericalError(msg.str());
  }
  return horner(a, t) / den;
}

Eigen::VectorXcd PadePair::expansion(int count) const {
  // A = B * C  =>  c[n] = a[n] - sum_{i>=1} b[i] c[n-i]   (b[0] == 1)
  Eigen::VectorXcd c(count);
  for (int n = 0; n < count; ++n) {
    Complex acc = n < a.size() ? a[n] : Complex(0.0);
    for (int i = 1; i <= n && i < b.size(); ++i) acc -= b[i] * c[n - i];
    c[n] = acc;
  }
  for (int n = 0; n < count; ++n) c[n] /= std::pow(scale, n);
  return c;
}

Eigen::VectorXcd PadePair::numerator_roots() const {
  return polynomial_roots(a) * scale;
}

Eigen::VectorXcd polynomial_roots(const Eigen::VectorXcd& c) {
  Eigen::Index deg = c.size() - 1;
  while (deg > 0 && c[deg] == Complex(0.0)) --deg;
  Eigen::Index low = 0;  // zero roots from vanishing low-order terms
  while (low < deg && c[low] == Complex(0.0)) ++low;
  const Eigen::Index n = deg - low;
  Eigen::VectorXcd roots(deg);
  for (Eigen::Index i = 0; i < low; ++i) roots[i] = 0.0;
  if (n == 0) return roots;
  Eigen::MatrixXcd companion = Eigen::MatrixXcd::Zero(n, n);
  for (Eigen::Index i = 1; i < n; ++i) companion(i, i - 1) = 1.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    companion(i, n - 1) = -c[low + i] / c[deg];
  }
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(companion, false);
  if (es.info() != Eigen::Success) {
    throw NumericalError("companion eigenvalue iteration failed");
  }
  roots.tail(n) = es.eigenvalues();
  return roots;
}

PadePair pade(const Eigen::VectorXcd& coefficients, int m, int n,
              double tolerance) {
  if (m < 0 || n < 0 || coefficients.size() < m + n + 1) {
    throw InvalidArgument("Padé degrees exceed the available coefficients");
  }
  const Eigen::Index len = m + n + 1;
  const double scale_tol = tolerance * coefficients.head(len).norm();
  PadePair out;
  Eigen::VectorXcd a, b;
  const int m0 = m, n0 = n;
  // Degree reduction loop (Gonnet, Güttel and Trefethen, 2013).
  while (true) {
    if (n == 0) {
      a = coefficients.head(m + 1);
      b = Eigen::VectorXcd::Ones(1);
      break;
    }
    Eigen::MatrixXcd z = Eigen::MatrixXcd::Zero(m + n + 1, n + 1);
    for (int i = 0; i <= m + n; ++i) {
      for (int j = 0; j <= std::min(i, n); ++j) z(i, j) = coefficients[i - j];
    }
    const Eigen::MatrixXcd tail = z.bottomRows(n);
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(tail, Eigen::ComputeFullV);
    const Eigen::VectorXd sv = svd.singularValues();
    int rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i) rank += sv[i] > scale_tol;
    if (rank == n) {
      b = svd.matrixV().col(n);
      a = z.topRows(m + 1) * b;
      // Strip common powers of s and trailing denominator noise.
      Eigen::Index lead = 0;
      while (lead < b.size() - 1 && std::abs(b[lead]) <= tolerance) ++lead;
      Eigen::Index last = b.size() - 1;
      while (last > lead && std::abs(b[last]) <= tolerance) --last;
      b = Eigen::VectorXcd(b.segment(lead, last - lead + 1));
      a = Eigen::VectorXcd(a.tail(a.size() - lead));
      break;
    }
    m -= n - rank;
    n = rank;
  }
  Eigen::Index top = a.size() - 1;
  while (top > 0 && std::abs(a[top]) <= scale_tol) --top;
  a = Eigen::VectorXcd(a.head(top + 1));
  out.a = a / b[0];
  out.b = b / b[0];
  out.degree_reduced = (out.a.size() - 1 < m0) || (out.b.size() - 1 < n0);
  return out;
}

PadePair pade(const Eigen::VectorXcd& coefficients, double tolerance) {
  const Eigen::Index count = coefficients.size();
  if (count < 3 || count % 2 == 0) {
    throw InvalidArgument("Padé needs an odd number of terms >= 3");
  }
  const int m = static_cast<int>((count - 1) / 2);
  double scale = 1.0;
  const double last = std::abs(coefficients[count - 1]);
  const double prev = std::abs(coefficients[count - 2]);
  if (last > 0.0 && prev > 0.0) scale = prev / last;
  Eigen::VectorXcd scaled = coefficients;
  double f = 1.0;
  for (Eigen::Index i = 0; i < count; ++i, f *= scale) scaled[i] *= f;
  PadePair p = pade(scaled, m, m, tolerance);
  p.scale = scale;
  return p;
}

std::vector<PadePair> pade_all(const PowerSeriesSet& series,
                               double tolerance) {
  std::vector<PadePair> out;
  for (size_t j = 0; j < series.pq.size(); ++j) {
    PadePair p = pade(series.v.col(static_cast<Eigen::Index>(j)), tolerance);
    p.bus = series.pq[j];
    out.push_back(std::move(p));
  }
  return out;
}

PowerSeriesSet embed_and_recurse(const Network& network,
                                 const Eigen::VectorXcd& voltage_at_s0,
                                 double s0, const Eigen::VectorXd& k,
                                 int terms) {
  if (terms < 1) throw InvalidArgument("term count must be positive");
  const int nbus = network.bus_count();
  if (k.size() != nbus || voltage_at_s0.size() != nbus) {
    throw InvalidArgument("vector length does not match bus count");
  }
  PowerSeriesSet out;
  out.base = voltage_at_s0;
  out.k = k;
  out.s0 = s0;
  for (int i = 0; i < nbus; ++i) {
    if (network.bus(i).kind == BusKind::kPQ) out.pq.push_back(i);
  }
  const int npq = static_cast<int>(out.pq.size());
  out.v = Eigen::MatrixXcd::Zero(terms, npq);
  out.w = Eigen::MatrixXcd::Zero(terms, npq);
  if (npq == 0) return out;

  const Eigen::MatrixXcd y = build_admittance_matrix(network);
  // S_i(s) = S_i(s0) + (s - s0) dS_i with dS_i = -S_load,i k_i.
  const Eigen::VectorXcd inj = scheduled_injection(network, s0, k);
  Eigen::VectorXcd s_conj(npq), ds_conj(npq), v0(npq), w0(npq);
  Eigen::MatrixXcd ypp(npq, npq);
  for (int a = 0; a < npq; ++a) {
    const int i = out.pq[a];
    s_conj[a] = std::conj(inj[i]);
    ds_conj[a] = std::conj(-network.bus(i).base_load * k[i]);
    v0[a] = voltage_at_s0[i];
    w0[a] = 1.0 / v0[a];
    for (int b = 0; b < npq; ++b) ypp(a, b) = y(i, out.pq[b]);
  }

  // Y V[n] + diag(S* conj(W0)^2) conj(V[n]) = rhs_n, split into real and
  // imaginary parts: the conj(V[n]) coupling enters through W[n].
  Eigen::VectorXcd diag(npq);
  for (int a = 0; a < npq; ++a) diag[a] = s_conj[a] * std::pow(std::conj(w0[a]), 2);
  Eigen::MatrixXd m(2 * npq, 2 * npq);
  m.topLeftCorner(npq, npq) = ypp.real();
  m.topRightCorner(npq, npq) = -ypp.imag();
  m.bottomLeftCorner(npq, npq) = ypp.imag();
  m.bottomRightCorner(npq, npq) = ypp.real();
  for (int a = 0; a < npq; ++a) {
    m(a, a) += diag[a].real();
    m(a, npq + a) += diag[a].imag();
    m(npq + a, a) += diag[a].imag();
    m(npq + a, npq + a) -= diag[a].real();
  }
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(m);
  if (!(lu.rcond() > 1e-14)) {
    throw NumericalError(
        "singular recursion matrix: the expansion point is at a bifurcation");
  }

  out.v.row(0) = v0.transpose();
  Eigen::MatrixXcd w(terms, npq);  // W = 1/V, holomorphic
  w.row(0) = w0.transpose();
  Eigen::VectorXd rhs(2 * npq);
  for (int n = 1; n < terms; ++n) {
    for (int a = 0; a < npq; ++a) {
      Complex conv = 0.0;
      for (int q = 1; q < n; ++q) conv += out.v(q, a) * w(n - q, a);
      const Complex r = -s_conj[a] * std::conj(w0[a]) * std::conj(conv) +
                        ds_conj[a] * std::conj(w(n - 1, a));
      rhs[a] = r.real();
      rhs[npq + a] = r.imag();
    }
    const Eigen::VectorXd x = lu.solve(rhs);
    for (int a = 0; a < npq; ++a) {
      out.v(n, a) = Complex(x[a], x[npq + a]);
      Complex conv = 0.0;
      for (int q = 1; q <= n; ++q) conv += out.v(q, a) * w(n - q, a);
      w(n, a) = -w0[a] * conv;
    }
  }
  out.w = w.conjugate();
  return out;
}

PowerSeriesSet embed_and_recurse(const Network& network,
                                 const PowerFlowSolution& base,
                                 const Eigen::VectorXd& k, int terms) {
  return embed_and_recurse(network, base.voltage, 0.0, k, terms);
}

Eigen::VectorXcd squared_magnitude_series(const Eigen::VectorXcd& v) {
  Eigen::VectorXcd out(v.size());
  for (Eigen::Index n = 0; n < v.size(); ++n) {
    Complex acc = 0.0;
    for (Eigen::Index i = 0; i <= n; ++i) acc += v[i] * std::conj(v[n - i]);
    out[n] = acc.real();
  }
  return out;
}

namespace {

bool is_positive_real(Complex r) {
  return r.real() > 0.0 && std::abs(r.imag()) / (1.0 + std::abs(r.real())) < 1e-6;
}

// One stage: roots of the |V|^2 approximants about the series' expansion
// point. Returns the loading increment (relative to s0) of the first root.
CriticalLoading stage_roots(const PowerSeriesSet& series, double tolerance) {
  std::vector<PadePair> pades;
  for (size_t j = 0; j < series.pq.size(); ++j) {
    const Eigen::VectorXcd mag2 =
        squared_magnitude_series(series.v.col(static_cast<Eigen::Index>(j)));
    if (mag2.tail(mag2.size() - 1).cwiseAbs().maxCoeff() < 1e-14) continue;
    PadePair p = pade(mag2, tolerance);
    p.bus = series.pq[j];
    pades.push_back(std::move(p));
  }
  return critical_loading(pades);
}

}  // namespace

CriticalLoading critical_loading(const std::vector<PadePair>& pades) {
  CriticalLoading out;
  out.s_c = std::numeric_limits<double>::infinity();
  for (const PadePair& p : pades) {
    const Eigen::VectorXcd roots =
        p.a.size() > 1 ? p.numerator_roots() : Eigen::VectorXcd();
    out.bus_roots.push_back(roots);
    for (Eigen::Index i = 0; i < roots.size(); ++i) {
      if (is_positive_real(roots[i]) && roots[i].real() < out.s_c) {
        out.s_c = roots[i].real();
        out.bus = p.bus;
      }
    }
  }
  if (!std::isfinite(out.s_c)) {
    throw NoCriticalLoading(
        "no positive real numerator root: this loading direction does not "
        "reach a saddle-node within the series' reach");
  }
  out.single_stage = out.s_c;
  out.stage_estimates = {out.s_c};
  return out;
}

CriticalLoading find_critical_loading(const Network& network,
                                      const PowerFlowSolution& base,
                                      const Eigen::VectorXd& k,
                                      const HelmOptions& options) {
  if (options.terms < 3 || options.terms % 2 == 0) {
    throw InvalidArgument("HELM term count must be odd and >= 3");
  }
  if (k.size() != network.bus_count()) {
    throw InvalidArgument("loading direction length does not match bus count");
  }
  if (k.cwiseAbs().maxCoeff() == 0.0) {
    throw InvalidArgument("loading direction is identically zero");
  }
  const Eigen::MatrixXcd y = build_admittance_matrix(network);
  PowerFlowOptions pf;
  pf.generators = GeneratorModel::kFixedPhasor;

  PowerSeriesSet series =
      embed_and_recurse(network, base.voltage, 0.0, k, options.terms);
  CriticalLoading first = stage_roots(series, options.pade_tolerance);
  CriticalLoading result = first;
  result.stage_estimates.clear();
  result.stage_estimates.push_back(first.s_c);

  double s0 = 0.0;
  double estimate = first.s_c;
  Eigen::VectorXcd voltage = base.voltage;
  for (int stage = 1; stage < options.max_stages; ++stage) {
    const double reach = estimate - s0;
    // Re-expand closer to the nose; back off if Newton cannot get there.
    bool moved = false;
    for (double frac = options.rebase_fraction; frac > 0.1; frac *= 0.5) {
      const double s1 = s0 + frac * reach;
      try {
        voltage = solve_newton(network, y, s1, k, voltage, pf).voltage;
        s0 = s1;
        moved = true;
        break;
      } catch (const PowerFlowDivergence&) {
      }
    }
    if (!moved) break;
    CriticalLoading next;
    try {
      series = embed_and_recurse(network, voltage, s0, k, options.terms);
      next = stage_roots(series, options.pade_tolerance);
    } catch (const Error&) {
      break;
    }
    const double updated = s0 + next.s_c;
    result.stage_estimates.push_back(updated);
    result.bus = next.bus;
    result.bus_roots = next.bus_roots;
    for (auto& roots : result.bus_roots) roots.array() += s0;
    const double change = std::abs(updated - estimate);
    estimate = updated;
    if (change <= options.stage_tolerance * (1.0 + std::abs(estimate))) break;
  }
  result.s_c = estimate;
  result.single_stage = first.s_c;
  return result;
}

Eigen::VectorXcd evaluate_voltages(const PowerSeriesSet& series,
                                   const std::vector<PadePair>& pades,
                                   double s) {
  Eigen::VectorXcd v = series.base;
  for (size_t j = 0; j < series.pq.size(); ++j) {
    v[series.pq[j]] = pades.at(j).value(s - series.s0);
  }
  return v;
}

Eigen::VectorXcd evaluate_voltages(const PowerSeriesSet& series, double s,
                                   SeriesEvaluation how, double tolerance) {
  if (how == SeriesEvaluation::kPade) {
    return evaluate_voltages(series, pade_all(series, tolerance), s);
  }
  Eigen::VectorXcd v = series.base;
  for (size_t j = 0; j < series.pq.size(); ++j) {
    v[series.pq[j]] = series.series_value(static_cast<int>(j), s);
  }
  return v;
}

}  // namespace vstab
