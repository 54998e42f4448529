#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace vstab {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11). Draw i of a
/// stream is a pure function of (seed, stream, i), which is what makes noise
/// replay and per-bus independence cheap.
class Philox {
 public:
  using Block = std::array<uint32_t, 4>;
  static Block generate(Block counter, std::array<uint32_t, 2> key);
};

/// Standard-normal stream keyed by (seed, stream id). Box-Muller on 53-bit
/// uniforms; each Philox block yields two normals.
class NormalStream {
 public:
  NormalStream(uint64_t seed, uint32_t stream);
  double next();
  /// Normal number `index` of this stream, without touching the cursor.
  double at(uint64_t index) const;
  uint64_t position() const { return position_; }

 private:
  std::array<uint32_t, 2> key_;
  uint32_t stream_;
  uint64_t position_ = 0;
};

/// Fast load noise du = -E u dt + Sigma dW, one independent process per bus.
struct OUParams {
  Eigen::VectorXd e;      // inverse correlation times [1/s], > 0
  Eigen::VectorXd sigma;  // driving intensities, >= 0
  std::vector<int> buses; // bus ids, one per component

  void validate() const;
  /// sigma^2 / (2 e), componentwise.
  Eigen::VectorXd stationary_variance() const;
};

/// Euler-Maruyama path, rows are time steps (n_steps + 1 rows incl. u0).
Eigen::MatrixXd simulate_ou(const OUParams& params, double dt, int n_steps,
                            uint64_t seed, const Eigen::VectorXd& u0 = {});

/// Slow loading drift: s[0] = 0 and i.i.d. Gaussian steps of variance
/// 2 D step_interval (2D per step for the default 1 s interval).
struct WienerParams {
  double d = 0.0;              // diffusion [loading^2 / s]
  double step_interval = 1.0;  // [s]
};

std::vector<double> simulate_wiener(const WienerParams& params, int n_steps,
                                    uint64_t seed);
/// Deterministic override: s[k] = rate * k * step_interval.
std::vector<double> ramp_trajectory(double rate, double step_interval,
                                    int n_steps);

/// SP = erf(gap / sqrt(4 D dt)). Limit convention: gap == 0 gives 0,
/// otherwise D * dt == 0 gives 1.
double survival_probability(double gap, double d, double horizon);

struct FirstPassageSpec {
  double s_c = 0.0;
  double sp_star = 0.99;
  double horizon = 600.0;  // [s]
  double d = 0.0;
};

/// s_m = s_c - sqrt(4 D dt) erfinv(SP*). Throws NoAdmissibleMargin when the
/// result is not positive.
double margin_loading(const FirstPassageSpec& spec);
double collapse_probability(double survival);

/// Inverse error function on (-1, 1), accurate to a few ulp of erf.
double erfinv(double x);

/// Maximum-likelihood D from a recorded slow trajectory.
double estimate_diffusion(const std::vector<double>& trajectory,
                          double step_interval);

/// Recorded noise, replayed identically for every controller.
struct NoiseRealization {
  uint64_t seed = 0;
  double fast_dt = 0.01;
  std::vector<int> buses;
  Eigen::MatrixXd fast;  // rows: time steps, cols: buses
  double slow_dt = 1.0;
  std::vector<double> slow;

  double duration() const { return fast_dt * std::max<Eigen::Index>(fast.rows() - 1, 0); }
  /// Slow loading at time t (piecewise constant between slow steps).
  double slow_at(double t) const;
};

void write_noise_binary(const NoiseRealization& noise, const std::string& path);
NoiseRealization read_noise_binary(const std::string& path);
void write_noise_csv(const NoiseRealization& noise, const std::string& path);
NoiseRealization read_noise_csv(const std::string& path);
/// Dispatch on extension: ".csv" or anything else as binary.
void write_noise(const NoiseRealization& noise, const std::string& path);
NoiseRealization read_noise(const std::string& path);

}  // namespace vstab
