#pragma once

#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vstab/covariance.hpp"
#include "vstab/dynamics.hpp"
#include "vstab/helm.hpp"
#include "vstab/stochastic.hpp"

namespace vstab {

struct FilterConfig {
  double window = 3.0;  // T_w [s]
  double rate = 30.0;   // PMU rate [Hz]
  int sgf_order = 2;
  int sgf_frame = 89;   // samples, odd

  int buffer_length() const;
  /// Throws InvalidArgument on a non-positive window/rate, an even frame,
  /// a frame longer than the buffer, or order >= frame.
  void validate() const;
};

/// Fixed-capacity FIFO of the most recent samples, oldest first.
class SampleBuffer {
 public:
  explicit SampleBuffer(int capacity = 90);
  void push(double v);
  bool full() const { return static_cast<int>(data_.size()) == capacity_; }
  int capacity() const { return capacity_; }
  std::vector<double> values() const { return {data_.begin(), data_.end()}; }
  void clear() { data_.clear(); }

 private:
  int capacity_;
  std::deque<double> data_;
};

/// Buffered average filter; empty until the buffer is full (no action).
std::optional<double> baf(const SampleBuffer& buffer);

/// Savitzky-Golay smoothing weights: row i holds the weights giving the
/// smoothed value at position i of a `length`-sample series. Interior rows
/// use the centred frame; the first and last half-frame are evaluated on the
/// polynomial fitted to the first/last full frame.
Eigen::MatrixXd sgf_matrix(int length, int order, int frame);

/// series - SGF-smoothed series.
std::vector<double> detrend_sgf(const std::vector<double>& series,
                                const FilterConfig& cfg);

/// Buffered variance filter: population variance of the SGF residual.
std::optional<double> bvf(const SampleBuffer& buffer, const FilterConfig& cfg);

inline double step_gate(double x) { return x >= 0.0 ? x : 0.0; }

enum class ControllerKind { kRBC, kMBC, kVBC };
const char* to_string(ControllerKind kind);
ControllerKind controller_kind_from_string(const std::string& text);

struct ControllerConfig {
  ControllerKind kind = ControllerKind::kRBC;
  double k_r = 5.0;
  double k_m = 10.0;
  double k_v = 0.0;
  double v_ref = 1.0;
  double mu_crit = 0.98;
  std::optional<CriticalVarianceSet> sigma2_crit;
  double b_min = 0.0;
  double b_max = 10.0;
  int svc_bus = 0;             // local terminal measurement V_t
  std::vector<int> monitored;  // WAMS buses (ids)
  FilterConfig filter;

  /// Throws InvalidArgument when b_min >= b_max, a gain is negative, or a
  /// VBC lacks thresholds for one of its monitored buses.
  void validate() const;
};

struct SvcState {
  double b = 0.0;
  double last_update = 0.0;
  bool saturated = false;
};

/// Applies a requested change, clamping b into [b_min, b_max]. Returns the
/// change actually applied and sets the saturation flag when clamped.
double apply_susceptance_change(SvcState& svc, double delta, double b_min,
                                double b_max, double t);

/// The three laws as pure functions of the buffer statistics. `means` and
/// `variances` are per monitored bus (same order as cfg.monitored).
double rbc_update(double local_mean, const ControllerConfig& cfg);
double mbc_update(double local_mean, const std::vector<double>& means,
                  const ControllerConfig& cfg);
double vbc_update(double local_mean, const std::vector<double>& means,
                  const std::vector<double>& variances,
                  const ControllerConfig& cfg);

/// One controller firing, for the per-window log.
struct ControlRecord {
  double t = 0.0;
  ControllerKind kind = ControllerKind::kRBC;
  double local_mean = 0.0;
  std::vector<double> means;
  std::vector<double> variances;
  std::vector<double> thresholds;
  double requested = 0.0;
  double applied = 0.0;
  double b_svc = 0.0;
  bool saturated = false;
  bool acted = false;  // false when a buffer was not yet full
};

void write_control_log_csv(const std::vector<ControlRecord>& log,
                           const ControllerConfig& cfg, const std::string& path);

/// Susceptance that holds the SVC bus at `v_target` at loading s (the bus
/// is solved as a voltage-controlled bus with zero active power and
/// b = Q / V^2). A non-empty `participation` shares the load change from
/// s = 0 among generators, as in the dynamic equilibria.
double initial_svc_susceptance(const Network& network, int svc_bus,
                               double v_target, double s = 0.0,
                               const Eigen::VectorXd& participation = {});

/// Algorithm 1: on a new state estimate, recompute s_c by HELM continuation
/// with the present SVC susceptance, the margin loading s_m from the
/// first-passage law, and the critical variances at s_m.
struct VbcOrchestrator {
  Network network;  // without the SVC shunt
  DaeSystem dae;
  OUParams ou;
  double sp_star = 0.99;
  double horizon = 600.0;  // first-passage look-ahead [s]
  double diffusion = 0.0;  // D of the slow loading walk [1/s]
  double refresh_db = 0.05;
  int refresh_windows = 10;
  HelmOptions helm;

  struct Refresh {
    CriticalVarianceSet thresholds;
    double s_c = 0.0;
  };
  /// Throws on any stage failure; callers keep the previous thresholds.
  Refresh refresh(double b_svc, const std::vector<int>& monitored,
                  double estimate_time);
};

/// Stateful SVC controller wired into the integrator through a hook.
class SvcController {
 public:
  SvcController(ControllerConfig cfg, double b_initial,
                std::optional<VbcOrchestrator> orchestrator = std::nullopt);

  /// Hook bound to this object; bus voltage vectors are indexed by bus
  /// index of `network`.
  ControllerHook hook(const Network& network);

  /// Feeds one PMU sample vector (|V| per bus index).
  void sample(const std::vector<int>& indices, const Eigen::VectorXd& vmag);
  /// One firing at time t; returns the susceptance to hold.
  double fire(double t);

  const ControllerConfig& config() const { return cfg_; }
  const SvcState& svc() const { return svc_; }
  const std::vector<ControlRecord>& log() const { return log_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  int refresh_count() const { return refreshes_; }
  double last_critical_loading() const { return last_s_c_; }

 private:
  void maybe_refresh(double t);

  ControllerConfig cfg_;
  SvcState svc_;
  std::optional<VbcOrchestrator> orch_;
  SampleBuffer local_;
  std::vector<SampleBuffer> wams_;
  std::vector<ControlRecord> log_;
  std::vector<std::string> warnings_;
  double db_since_refresh_ = 0.0;
  int windows_since_refresh_ = 0;
  int refreshes_ = 0;
  bool pending_initial_refresh_ = true;
  double last_s_c_ = 0.0;
};

}  // namespace vstab
