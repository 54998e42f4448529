#include "vstab/stochastic.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include "vstab/error.hpp"

namespace vstab {

Philox::Block Philox::generate(Block ctr, std::array<uint32_t, 2> key) {
  constexpr uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
  constexpr uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const uint64_t p0 = static_cast<uint64_t>(kM0) * ctr[0];
    const uint64_t p1 = static_cast<uint64_t>(kM1) * ctr[2];
    ctr = {static_cast<uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
           static_cast<uint32_t>(p1),
           static_cast<uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
           static_cast<uint32_t>(p0)};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

NormalStream::NormalStream(uint64_t seed, uint32_t stream)
    : key_{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)},
      stream_(stream) {}

double NormalStream::at(uint64_t index) const {
  const uint64_t block = index / 2;
  const Philox::Block r = Philox::generate(
      {static_cast<uint32_t>(block), static_cast<uint32_t>(block >> 32),
       stream_, 0u},
      key_);
  // Two 53-bit uniforms; u1 in (0, 1] keeps the log finite.
  const uint64_t a = (static_cast<uint64_t>(r[0]) << 21) ^ (r[1] >> 11);
  const uint64_t b = (static_cast<uint64_t>(r[2]) << 21) ^ (r[3] >> 11);
  constexpr double kInv53 = 1.0 / 9007199254740992.0;
  const double u1 = (static_cast<double>(a & ((1ull << 53) - 1)) + 1.0) * kInv53;
  const double u2 = static_cast<double>(b & ((1ull << 53) - 1)) * kInv53;
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  return index % 2 == 0 ? radius * std::cos(angle) : radius * std::sin(angle);
}

double NormalStream::next() { return at(position_++); }

void OUParams::validate() const {
  if (e.size() != sigma.size() ||
      (!buses.empty() && static_cast<Eigen::Index>(buses.size()) != e.size())) {
    throw InvalidArgument("OU parameter vectors have inconsistent lengths");
  }
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    if (!(e[i] > 0.0)) throw InvalidArgument("OU rates E must be > 0");
    if (!(sigma[i] >= 0.0)) throw InvalidArgument("OU Sigma must be >= 0");
  }
}

Eigen::VectorXd OUParams::stationary_variance() const {
  return sigma.array().square() / (2.0 * e.array());
}

Eigen::MatrixXd simulate_ou(const OUParams& params, double dt, int n_steps,
                            uint64_t seed, const Eigen::VectorXd& u0) {
  params.validate();
  if (!(dt > 0.0)) throw InvalidArgument("OU step dt must be > 0");
  if (n_steps < 0) throw InvalidArgument("negative step count");
  const Eigen::Index m = params.e.size();
  Eigen::MatrixXd u(n_steps + 1, m);
  if (u0.size() == 0) {
    u.row(0).setZero();
  } else if (u0.size() == m) {
    u.row(0) = u0.transpose();
  } else {
    throw InvalidArgument("OU initial state has wrong length");
  }
  const double root_dt = std::sqrt(dt);
  for (Eigen::Index j = 0; j < m; ++j) {
    NormalStream xi(seed, static_cast<uint32_t>(j));
    const double e = params.e[j], s = params.sigma[j];
    for (int k = 0; k < n_steps; ++k) {
      u(k + 1, j) = u(k, j) - e * u(k, j) * dt + s * root_dt * xi.next();
    }
  }
  return u;
}

std::vector<double> simulate_wiener(const WienerParams& params, int n_steps,
                                    uint64_t seed) {
  if (!(params.d >= 0.0)) throw InvalidArgument("diffusion D must be >= 0");
  if (!(params.step_interval > 0.0)) {
    throw InvalidArgument("Wiener step interval must be > 0");
  }
  std::vector<double> s(static_cast<size_t>(std::max(n_steps, 0)) + 1, 0.0);
  const double step_sd = std::sqrt(2.0 * params.d * params.step_interval);
  // Stream id far away from the per-bus fast-noise streams.
  NormalStream xi(seed, 0x80000000u);
  for (int k = 0; k < n_steps; ++k) s[k + 1] = s[k] + step_sd * xi.next();
  return s;
}

std::vector<double> ramp_trajectory(double rate, double step_interval,
                                    int n_steps) {
  std::vector<double> s(static_cast<size_t>(std::max(n_steps, 0)) + 1);
  for (size_t k = 0; k < s.size(); ++k) {
    s[k] = rate * static_cast<double>(k) * step_interval;
  }
  return s;
}

double survival_probability(double gap, double d, double horizon) {
  if (gap < 0.0) throw InvalidArgument("loading gap must be >= 0");
  if (d < 0.0 || horizon < 0.0) {
    throw InvalidArgument("D and horizon must be >= 0");
  }
  if (gap == 0.0) return 0.0;
  if (d == 0.0 || horizon == 0.0) return 1.0;
  return std::erf(gap / std::sqrt(4.0 * d * horizon));
}

double erfinv(double x) {
  if (!(x > -1.0 && x < 1.0)) {
    if (x == 1.0) return std::numeric_limits<double>::infinity();
    if (x == -1.0) return -std::numeric_limits<double>::infinity();
    throw InvalidArgument("erfinv argument must lie in [-1, 1]");
  }
  if (x == 0.0) return 0.0;
  // Initial guess (Giles, "Approximating the erfinv function", 2010), then
  // Halley steps on erf(y) - x.
  const double w = -std::log((1.0 - x) * (1.0 + x));
  double y;
  if (w < 5.0) {
    const double t = w - 2.5;
    double p = 2.81022636e-08;
    for (double c : {3.43273939e-07, -3.5233877e-06, -4.39150654e-06,
                     0.00021858087, -0.00125372503, -0.00417768164,
                     0.246640727, 1.50140941}) {
      p = p * t + c;
    }
    y = p * x;
  } else {
    const double t = std::sqrt(w) - 3.0;
    double p = -0.000200214257;
    for (double c : {0.000100950558, 0.00134934322, -0.00367342844,
                     0.00573950773, -0.0076224613, 0.00943887047, 1.00167406,
                     2.83297682}) {
      p = p * t + c;
    }
    y = p * x;
  }
  const double two_over_sqrt_pi = 2.0 / std::sqrt(std::numbers::pi);
  for (int i = 0; i < 4; ++i) {
    const double f = std::erf(y) - x;
    const double df = two_over_sqrt_pi * std::exp(-y * y);
    if (df == 0.0) break;
    const double step = f / df;
    y -= step / (1.0 + y * step);  // Halley: f'' = -2 y f'
    if (std::abs(step) < 1e-17 * std::abs(y)) break;
  }
  return y;
}

double margin_loading(const FirstPassageSpec& spec) {
  if (!(spec.sp_star > 0.0 && spec.sp_star < 1.0)) {
    throw InvalidArgument("survival target SP* must lie in (0, 1)");
  }
  if (!(spec.s_c > 0.0)) throw InvalidArgument("s_c must be > 0");
  if (!(spec.d >= 0.0) || !(spec.horizon > 0.0)) {
    throw InvalidArgument("need D >= 0 and a positive horizon");
  }
  const double s_m =
      spec.s_c - std::sqrt(4.0 * spec.d * spec.horizon) * erfinv(spec.sp_star);
  if (!(s_m > 0.0)) {
    std::ostringstream msg;
    msg << "no admissible margin: SP*=" << spec.sp_star << " with D=" << spec.d
        << " over " << spec.horizon << " s requires s_m=" << s_m << " <= 0";
    throw NoAdmissibleMargin(msg.str());
  }
  return s_m;
}

double collapse_probability(double survival) {
  if (!(survival >= 0.0 && survival <= 1.0)) {
    throw InvalidArgument("survival probability must lie in [0, 1]");
  }
  return 1.0 - survival;
}

double estimate_diffusion(const std::vector<double>& trajectory,
                          double step_interval) {
  if (trajectory.size() < 2) {
    throw InvalidArgument("need at least two samples to estimate D");
  }
  if (!(step_interval > 0.0)) throw InvalidArgument("step must be > 0");
  double sum = 0.0;
  for (size_t i = 1; i < trajectory.size(); ++i) {
    const double d = trajectory[i] - trajectory[i - 1];
    sum += d * d;
  }
  return sum / static_cast<double>(trajectory.size() - 1) / (2.0 * step_interval);
}

double NoiseRealization::slow_at(double t) const {
  if (slow.empty()) return 0.0;
  const double idx = std::floor(t / slow_dt + 1e-9);
  if (idx <= 0.0) return slow.front();
  const size_t i = static_cast<size_t>(idx);
  return i < slow.size() ? slow[i] : slow.back();
}

// --- persistence ------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'V', 'S', 'T', 'N', 'O', 'I', 'S', '1'};

template <typename T>
void put(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("truncated noise file");
  return value;
}

}  // namespace

void write_noise_binary(const NoiseRealization& noise,
                        const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write noise file '" + path + "'");
  out.write(kMagic, sizeof kMagic);
  put<uint64_t>(out, noise.seed);
  put<double>(out, noise.fast_dt);
  put<uint64_t>(out, static_cast<uint64_t>(noise.fast.rows()));
  put<uint64_t>(out, noise.buses.size());
  for (int b : noise.buses) put<int32_t>(out, b);
  for (Eigen::Index r = 0; r < noise.fast.rows(); ++r) {
    for (Eigen::Index c = 0; c < noise.fast.cols(); ++c) {
      put<double>(out, noise.fast(r, c));
    }
  }
  put<double>(out, noise.slow_dt);
  put<uint64_t>(out, noise.slow.size());
  for (double s : noise.slow) put<double>(out, s);
  if (!out) throw IoError("failed writing noise file '" + path + "'");
}

NoiseRealization read_noise_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open noise file '" + path + "'");
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw IoError("'" + path + "' is not a noise file");
  }
  NoiseRealization n;
  n.seed = get<uint64_t>(in);
  n.fast_dt = get<double>(in);
  const uint64_t rows = get<uint64_t>(in);
  const uint64_t cols = get<uint64_t>(in);
  if (cols > (1u << 20) || rows > (1ull << 32)) {
    throw IoError("implausible noise file dimensions");
  }
  for (uint64_t i = 0; i < cols; ++i) n.buses.push_back(get<int32_t>(in));
  n.fast.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < n.fast.rows(); ++r) {
    for (Eigen::Index c = 0; c < n.fast.cols(); ++c) n.fast(r, c) = get<double>(in);
  }
  n.slow_dt = get<double>(in);
  const uint64_t ns = get<uint64_t>(in);
  if (ns > (1ull << 32)) throw IoError("implausible noise file dimensions");
  n.slow.resize(ns);
  for (auto& s : n.slow) s = get<double>(in);
  return n;
}

// CSV layout: a header line "# seed=.. fast_dt=.. slow_dt=.. buses=a;b;c",
// a column line, then one row per fast step "t,s,u_a,u_b,...". The slow
// trajectory is stored on its own rows tagged "slow,k,value".
void write_noise_csv(const NoiseRealization& noise, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write noise file '" + path + "'");
  out << std::setprecision(17);
  out << "# seed=" << noise.seed << " fast_dt=" << noise.fast_dt
      << " slow_dt=" << noise.slow_dt << " buses=";
  for (size_t i = 0; i < noise.buses.size(); ++i) {
    out << (i ? ";" : "") << noise.buses[i];
  }
  out << "\n";
  out << "kind,index";
  for (int b : noise.buses) out << ",u_" << b;
  out << "\n";
  for (Eigen::Index r = 0; r < noise.fast.rows(); ++r) {
    out << "fast," << r;
    for (Eigen::Index c = 0; c < noise.fast.cols(); ++c) {
      out << "," << noise.fast(r, c);
    }
    out << "\n";
  }
  for (size_t k = 0; k < noise.slow.size(); ++k) {
    out << "slow," << k << "," << noise.slow[k] << "\n";
  }
  if (!out) throw IoError("failed writing noise file '" + path + "'");
}

NoiseRealization read_noise_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open noise file '" + path + "'");
  NoiseRealization n;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# ", 0) != 0) {
    throw IoError("noise CSV is missing its header line");
  }
  std::istringstream header(line.substr(2));
  std::string field;
  while (header >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
    if (key == "seed") n.seed = std::stoull(value);
    else if (key == "fast_dt") n.fast_dt = std::stod(value);
    else if (key == "slow_dt") n.slow_dt = std::stod(value);
    else if (key == "buses") {
      std::istringstream ids(value);
      std::string id;
      while (std::getline(ids, id, ';')) {
        if (!id.empty()) n.buses.push_back(std::stoi(id));
      }
    }
  }
  std::getline(in, line);  // column names
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream cells(line);
    std::string kind, cell;
    std::getline(cells, kind, ',');
    std::getline(cells, cell, ',');  // index
    std::vector<double> values;
    while (std::getline(cells, cell, ',')) values.push_back(std::stod(cell));
    if (kind == "fast") {
      if (values.size() != n.buses.size()) {
        throw IoError("noise CSV row has the wrong number of columns");
      }
      rows.push_back(std::move(values));
    } else if (kind == "slow") {
      if (values.size() != 1) throw IoError("malformed slow row in noise CSV");
      n.slow.push_back(values[0]);
    } else {
      throw IoError("unknown row kind '" + kind + "' in noise CSV");
    }
  }
  n.fast.resize(static_cast<Eigen::Index>(rows.size()),
                static_cast<Eigen::Index>(n.buses.size()));
  for (size_t r = 0; r < rows.size(); ++r) {
    for (size_t c = 0; c < rows[r].size(); ++c) n.fast(r, c) = rows[r][c];
  }
  return n;
}

namespace {
bool is_csv(const std::string& path) {
  return path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0;
}
}  // namespace

void write_noise(const NoiseRealization& noise, const std::string& path) {
  is_csv(path) ? write_noise_csv(noise, path) : write_noise_binary(noise, path);
}

NoiseRealization read_noise(const std::string& path) {
  return is_csv(path) ? read_noise_csv(path) : read_noise_binary(path);
}

}  // namespace vstab
