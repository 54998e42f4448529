#include "vstab/controllers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "vstab/error.hpp"
#include "vstab/power_flow.hpp"

namespace vstab {

int FilterConfig::buffer_length() const {
  return static_cast<int>(std::lround(window * rate));
}

void FilterConfig::validate() const {
  if (!(window > 0.0) || !(rate > 0.0)) {
    throw InvalidArgument("filter window and sample rate must be > 0");
  }
  if (sgf_frame % 2 == 0 || sgf_frame < 1) {
    throw InvalidArgument("Savitzky-Golay frame length must be odd");
  }
  if (sgf_frame > buffer_length()) {
    throw InvalidArgument("Savitzky-Golay frame (" + std::to_string(sgf_frame) +
                          ") is longer than the buffer (" +
                          std::to_string(buffer_length()) + ")");
  }
  if (sgf_order < 0 || sgf_order >= sgf_frame) {
    throw InvalidArgument("Savitzky-Golay order must be in [0, frame)");
  }
}

SampleBuffer::SampleBuffer(int capacity) : capacity_(capacity) {
  if (capacity <= 0) throw InvalidArgument("buffer capacity must be > 0");
}

void SampleBuffer::push(double v) {
  if (static_cast<int>(data_.size()) == capacity_) data_.pop_front();
  data_.push_back(v);
}

std::optional<double> baf(const SampleBuffer& buffer) {
  if (!buffer.full()) return std::nullopt;
  double sum = 0.0;
  for (double v : buffer.values()) sum += v;
  return sum / buffer.capacity();
}

Eigen::MatrixXd sgf_matrix(int length, int order, int frame) {
  if (frame % 2 == 0 || frame > length || order >= frame || order < 0) {
    throw InvalidArgument("invalid Savitzky-Golay geometry");
  }
  const int half = frame / 2;
  // Least-squares projector onto polynomials of `order` over one frame,
  // positions scaled to [-1, 1] for conditioning.
  Eigen::MatrixXd vander(frame, order + 1);
  for (int r = 0; r < frame; ++r) {
    const double z = half > 0 ? static_cast<double>(r - half) / half : 0.0;
    double p = 1.0;
    for (int c = 0; c <= order; ++c, p *= z) vander(r, c) = p;
  }
  const Eigen::MatrixXd hat =
      vander * vander.colPivHouseholderQr().solve(Eigen::MatrixXd::Identity(frame, frame));
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(length, length);
  for (int i = 0; i < length; ++i) {
    if (i < half) {
      s.block(i, 0, 1, frame) = hat.row(i);
    } else if (i >= length - half) {
      s.block(i, length - frame, 1, frame) = hat.row(i - (length - frame));
    } else {
      s.block(i, i - half, 1, frame) = hat.row(half);
    }
  }
  return s;
}

namespace {

// The smoothing matrix depends only on the geometry; cache the last one.
const Eigen::MatrixXd& cached_sgf(int length, int order, int frame) {
  thread_local int l = -1, o = -1, f = -1;
  thread_local Eigen::MatrixXd m;
  if (l != length || o != order || f != frame) {
    m = sgf_matrix(length, order, frame);
    l = length;
    o = order;
    f = frame;
  }
  return m;
}

}  // namespace

std::vector<double> detrend_sgf(const std::vector<double>& series,
                                const FilterConfig& cfg) {
  const int n = static_cast<int>(series.size());
  if (cfg.sgf_frame > n) {
    throw InvalidArgument("Savitzky-Golay frame is longer than the series");
  }
  const Eigen::Map<const Eigen::VectorXd> x(series.data(), n);
  const Eigen::VectorXd r = x - cached_sgf(n, cfg.sgf_order, cfg.sgf_frame) * x;
  return {r.data(), r.data() + n};
}

std::optional<double> bvf(const SampleBuffer& buffer, const FilterConfig& cfg) {
  if (!buffer.full()) return std::nullopt;
  const std::vector<double> r = detrend_sgf(buffer.values(), cfg);
  double mean = 0.0;
  for (double v : r) mean += v;
  mean /= r.size();
  double ss = 0.0;
  for (double v : r) ss += (v - mean) * (v - mean);
  return ss / r.size();
}

const char* to_string(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::kRBC:
      return "RBC";
    case ControllerKind::kMBC:
      return "MBC";
    case ControllerKind::kVBC:
      return "VBC";
  }
  return "?";
}

ControllerKind controller_kind_from_string(const std::string& text) {
  if (text == "RBC" || text == "rbc") return ControllerKind::kRBC;
  if (text == "MBC" || text == "mbc") return ControllerKind::kMBC;
  if (text == "VBC" || text == "vbc") return ControllerKind::kVBC;
  throw InvalidArgument("unknown controller kind '" + text + "'");
}

void ControllerConfig::validate() const {
  if (!(b_min < b_max)) throw InvalidArgument("SVC limits need b_min < b_max");
  if (k_r < 0.0 || k_m < 0.0 || k_v < 0.0) {
    throw InvalidArgument("controller gains must be non-negative");
  }
  filter.validate();
  if (kind == ControllerKind::kVBC) {
    if (!sigma2_crit) {
      throw InvalidArgument("VBC requires critical variances");
    }
    for (int id : monitored) {
      if (std::find(sigma2_crit->bus_ids.begin(), sigma2_crit->bus_ids.end(), id) ==
          sigma2_crit->bus_ids.end()) {
        throw InvalidArgument("missing critical variance for monitored bus " +
                              std::to_string(id));
      }
    }
  }
}

double apply_susceptance_change(SvcState& svc, double delta, double b_min,
                                double b_max, double t) {
  const double target = svc.b + delta;
  const double clamped = std::clamp(target, b_min, b_max);
  svc.saturated = clamped != target;
  const double applied = clamped - svc.b;
  svc.b = clamped;
  svc.last_update = t;
  return applied;
}

double rbc_update(double local_mean, const ControllerConfig& cfg) {
  return cfg.k_r * (cfg.v_ref - local_mean);
}

double mbc_update(double local_mean, const std::vector<double>& means,
                  const ControllerConfig& cfg) {
  double wams = 0.0;
  for (double m : means) wams += step_gate(cfg.mu_crit - m);
  return rbc_update(local_mean, cfg) + cfg.k_m * wams;
}

double vbc_update(double local_mean, const std::vector<double>& means,
                  const std::vector<double>& variances,
                  const ControllerConfig& cfg) {
  if (!cfg.sigma2_crit) throw InvalidArgument("VBC requires critical variances");
  if (variances.size() != cfg.monitored.size()) {
    throw InvalidArgument("one variance per monitored bus is required");
  }
  double excess = 0.0;
  for (size_t i = 0; i < cfg.monitored.size(); ++i) {
    const auto& ids = cfg.sigma2_crit->bus_ids;
    const auto it = std::find(ids.begin(), ids.end(), cfg.monitored[i]);
    if (it == ids.end()) {
      throw InvalidArgument("missing critical variance for monitored bus " +
                            std::to_string(cfg.monitored[i]));
    }
    excess += step_gate(variances[i] - cfg.sigma2_crit->variance[it - ids.begin()]);
  }
  return mbc_update(local_mean, means, cfg) + cfg.k_v * excess;
}

void write_control_log_csv(const std::vector<ControlRecord>& log,
                           const ControllerConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write controller log '" + path + "'");
  out << std::setprecision(17);
  out << "t,controller,local_mean";
  for (int id : cfg.monitored) out << ",mean_" << id;
  for (int id : cfg.monitored) out << ",var_" << id;
  for (int id : cfg.monitored) out << ",threshold_" << id;
  out << ",delta_b_requested,delta_b,b_svc,saturated,acted\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const ControlRecord& r : log) {
    out << r.t << ',' << to_string(r.kind) << ',' << r.local_mean;
    for (size_t i = 0; i < cfg.monitored.size(); ++i) {
      out << ',' << (i < r.means.size() ? r.means[i] : nan);
    }
    for (size_t i = 0; i < cfg.monitored.size(); ++i) {
      out << ',' << (i < r.variances.size() ? r.variances[i] : nan);
    }
    for (size_t i = 0; i < cfg.monitored.size(); ++i) {
      out << ',' << (i < r.thresholds.size() ? r.thresholds[i] : nan);
    }
    out << ',' << r.requested << ',' << r.applied << ',' << r.b_svc << ','
        << (r.saturated ? 1 : 0) << ',' << (r.acted ? 1 : 0) << '\n';
  }
}

double initial_svc_susceptance(const Network& network, int svc_bus,
                               double v_target, double s,
                               const Eigen::VectorXd& participation) {
  const int idx = network.index_of(svc_bus);
  Bus bus = network.bus(idx);
  if (bus.kind != BusKind::kPQ) {
    throw InvalidArgument("SVC bus " + std::to_string(svc_bus) + " must be a PQ bus");
  }
  if (bus.base_load != Complex(0.0, 0.0) || bus.generation != 0.0) {
    throw InvalidArgument("SVC bus must carry no load or generation");
  }
  bus.kind = BusKind::kPV;
  bus.voltage_setpoint = v_target;
  bus.shunt_susceptance = 0.0;
  const Network pv = network.with_bus(idx, bus);
  const PowerFlowSolution pf =
      participation.size() > 0
          ? solve_distributed(pv, s, pv.loading_direction(), participation)
          : solve_cold(pv, s, pv.loading_direction());
  // The injection the voltage-controlled bus needs is the shunt's output.
  return pf.injection[idx].imag() / (v_target * v_target);
}

VbcOrchestrator::Refresh VbcOrchestrator::refresh(double b_svc,
                                                  const std::vector<int>& monitored,
                                                  double estimate_time) {
  if (!dae.svc_bus()) throw InvalidArgument("orchestration needs an SVC bus");
  const int svc_id = network.bus(*dae.svc_bus()).id;
  const Network with_svc = set_shunt(network, svc_id, b_svc);
  const Eigen::VectorXd k = dae.loading_direction();
  const PowerFlowSolution base = solve_cold(with_svc, 0.0, k);
  Refresh r;
  r.s_c = find_critical_loading(with_svc, base, k, helm).s_c;
  const double s_m = margin_loading(FirstPassageSpec{r.s_c, sp_star, horizon, diffusion});
  r.thresholds = critical_variances(dae, s_m, b_svc, ou, monitored, estimate_time);
  return r;
}

SvcController::SvcController(ControllerConfig cfg, double b_initial,
                             std::optional<VbcOrchestrator> orchestrator)
    : cfg_(std::move(cfg)),
      orch_(std::move(orchestrator)),
      local_(cfg_.filter.buffer_length()) {
  cfg_.filter.validate();
  if (!(cfg_.b_min < cfg_.b_max)) throw InvalidArgument("SVC limits need b_min < b_max");
  if (b_initial < cfg_.b_min || b_initial > cfg_.b_max) {
    throw InvalidArgument("initial susceptance outside the SVC limits");
  }
  svc_.b = b_initial;
  for (size_t i = 0; i < cfg_.monitored.size(); ++i) {
    wams_.emplace_back(cfg_.filter.buffer_length());
  }
  if (cfg_.kind == ControllerKind::kVBC && !orch_) cfg_.validate();
  pending_initial_refresh_ = cfg_.kind == ControllerKind::kVBC && orch_.has_value();
}

ControllerHook SvcController::hook(const Network& network) {
  std::vector<int> idx{network.index_of(cfg_.svc_bus)};
  for (int id : cfg_.monitored) idx.push_back(network.index_of(id));
  ControllerHook h;
  h.period = cfg_.filter.window;
  h.sample = [this, idx](double, const Eigen::VectorXd& vmag) { sample(idx, vmag); };
  h.fire = [this](const SystemSnapshot& snap) { return fire(snap.t); };
  return h;
}

void SvcController::sample(const std::vector<int>& indices,
                           const Eigen::VectorXd& vmag) {
  local_.push(vmag[indices.at(0)]);
  for (size_t i = 0; i < wams_.size(); ++i) wams_[i].push(vmag[indices.at(i + 1)]);
}

void SvcController::maybe_refresh(double t) {
  if (!orch_) return;
  const bool due = pending_initial_refresh_ ||
                   db_since_refresh_ > orch_->refresh_db ||
                   windows_since_refresh_ >= orch_->refresh_windows;
  if (!due) return;
  try {
    const VbcOrchestrator::Refresh r = orch_->refresh(svc_.b, cfg_.monitored, t);
    cfg_.sigma2_crit = r.thresholds;
    last_s_c_ = r.s_c;
    ++refreshes_;
  } catch (const Error& e) {
    std::ostringstream msg;
    msg << "t=" << t << ": threshold refresh failed, keeping previous thresholds ("
        << e.kind() << ": " << e.what() << ")";
    warnings_.push_back(msg.str());
  }
  pending_initial_refresh_ = false;
  db_since_refresh_ = 0.0;
  windows_since_refresh_ = 0;
}

double SvcController::fire(double t) {
  ++windows_since_refresh_;
  if (cfg_.kind == ControllerKind::kVBC) maybe_refresh(t);

  ControlRecord rec;
  rec.t = t;
  rec.kind = cfg_.kind;
  const std::optional<double> local = baf(local_);
  bool ready = local.has_value();
  for (const SampleBuffer& b : wams_) ready = ready && b.full();
  if (!ready || (cfg_.kind == ControllerKind::kVBC && !cfg_.sigma2_crit)) {
    rec.b_svc = svc_.b;
    rec.saturated = svc_.saturated;
    log_.push_back(rec);
    return svc_.b;
  }
  rec.local_mean = *local;
  for (size_t i = 0; i < wams_.size(); ++i) {
    rec.means.push_back(*baf(wams_[i]));
    rec.variances.push_back(*bvf(wams_[i], cfg_.filter));
    if (cfg_.sigma2_crit) {
      const auto& ids = cfg_.sigma2_crit->bus_ids;
      const auto it = std::find(ids.begin(), ids.end(), cfg_.monitored[i]);
      rec.thresholds.push_back(it == ids.end()
                                   ? std::numeric_limits<double>::quiet_NaN()
                                   : cfg_.sigma2_crit->variance[it - ids.begin()]);
    }
  }
  switch (cfg_.kind) {
    case ControllerKind::kRBC:
      rec.requested = rbc_update(rec.local_mean, cfg_);
      break;
    case ControllerKind::kMBC:
      rec.requested = mbc_update(rec.local_mean, rec.means, cfg_);
      break;
    case ControllerKind::kVBC:
      rec.requested = vbc_update(rec.local_mean, rec.means, rec.variances, cfg_);
      break;
  }
  rec.applied = apply_susceptance_change(svc_, rec.requested, cfg_.b_min, cfg_.b_max, t);
  db_since_refresh_ += std::abs(rec.applied);
  rec.b_svc = svc_.b;
  rec.saturated = svc_.saturated;
  rec.acted = true;
  log_.push_back(rec);
  return svc_.b;
}

}  // namespace vstab
