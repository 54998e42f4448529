#pragma once

#include <stdexcept>
#include <string>

namespace vstab {

/// Base class for every error raised by the toolkit. `kind()` is a stable,
/// machine-readable class name used by the CLI exit path.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& what) : Error("schema", what) {}
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what)
      : Error("invalid_argument", what) {}
};

class NetworkError : public Error {
 public:
  explicit NetworkError(const std::string& what) : Error("network", what) {}
};

/// Newton power flow did not converge. Carries the last mismatch, which
/// callers use as a collapse signal.
class PowerFlowDivergence : public Error {
 public:
  PowerFlowDivergence(const std::string& what, double mismatch, int iterations)
      : Error("powerflow_divergence", what),
        mismatch_(mismatch),
        iterations_(iterations) {}
  double mismatch() const { return mismatch_; }
  int iterations() const { return iterations_; }

 private:
  double mismatch_;
  int iterations_;
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error("numerical", what) {}
};

/// The equilibrium is unstable or singular, so a stationary covariance does
/// not exist.
class UnstableEquilibrium : public Error {
 public:
  explicit UnstableEquilibrium(const std::string& what)
      : Error("unstable_equilibrium", what) {}
};

class NoAdmissibleMargin : public Error {
 public:
  explicit NoAdmissibleMargin(const std::string& what)
      : Error("no_admissible_margin", what) {}
};

/// Continuation found no positive real numerator root: the loading direction
/// does not lead to collapse within the series' reach.
class NoCriticalLoading : public Error {
 public:
  explicit NoCriticalLoading(const std::string& what)
      : Error("no_critical_loading", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

}  // namespace vstab
