#pragma once

#include <complex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace vstab {

using Complex = std::complex<double>;

enum class BusKind { kPQ, kPV, kReference };

const char* to_string(BusKind kind);
BusKind bus_kind_from_string(const std::string& text);

/// One network bus. All electrical quantities are per-unit on the network's
/// MVA base.
struct Bus {
  int id = 0;
  BusKind kind = BusKind::kPQ;
  /// Voltage magnitude setpoint; present only on PV and reference buses.
  std::optional<double> voltage_setpoint;
  /// Constant-power demand S_0 = P + jQ (positive = consumption).
  Complex base_load{0.0, 0.0};
  /// Fixed shunt susceptance B_s (positive = capacitive).
  double shunt_susceptance = 0.0;
  /// Default loading rate k_i used when scaling load along S_0 (1 + s k).
  double loading_rate = 0.0;
  /// Scheduled active generation, PV buses only (reference bus is slack).
  double generation = 0.0;
};

/// pi-model branch. The optional off-nominal ratio sits on the `from` side.
struct Branch {
  int from = 0;
  int to = 0;
  Complex impedance{0.0, 0.0};
  /// Total line charging, split equally between the two ends.
  double shunt_charging = 0.0;
  double tap_ratio = 1.0;
  bool in_service = true;

  Complex series_admittance() const { return 1.0 / impedance; }
};

/// Immutable network. Construction validates the bus/branch invariants;
/// connectivity is checked when the admittance matrix is built.
class Network {
 public:
  Network(std::vector<Bus> buses, std::vector<Branch> branches,
          double base_mva = 100.0);

  const std::vector<Bus>& buses() const { return buses_; }
  const std::vector<Branch>& branches() const { return branches_; }
  double base_mva() const { return base_mva_; }

  int bus_count() const { return static_cast<int>(buses_.size()); }
  const Bus& bus(int index) const { return buses_.at(index); }
  /// Dense index of a bus id; throws InvalidArgument for unknown ids.
  int index_of(int bus_id) const;
  bool has_bus(int bus_id) const { return index_.count(bus_id) > 0; }
  int reference_index() const { return reference_index_; }

  /// Loading direction vector k (dense order) taken from the buses.
  Eigen::VectorXd loading_direction() const;
  /// Net complex power injection at zero loading: generation - load.
  Eigen::VectorXcd base_injection() const;

  /// Copy with a replaced bus list entry / branch list.
  Network with_bus(int index, const Bus& bus) const;
  Network with_branches(std::vector<Branch> branches) const;

 private:
  std::vector<Bus> buses_;
  std::vector<Branch> branches_;
  double base_mva_;
  std::unordered_map<int, int> index_;
  int reference_index_ = -1;
};

/// Bus admittance matrix Y (dense, bus order of the network).
/// Throws NetworkError when in-service branches leave a bus group isolated.
Eigen::MatrixXcd build_admittance_matrix(const Network& network);

/// Returns groups of dense bus indices connected through in-service branches.
std::vector<std::vector<int>> connected_components(const Network& network);

/// Replace the fixed shunt susceptance at one bus.
Network set_shunt(const Network& network, int bus_id, double susceptance);

/// Convert a loading-direction map {bus id -> k} into a dense vector.
Eigen::VectorXd direction_from_map(const Network& network,
                                   const std::unordered_map<int, double>& k);

}  // namespace vstab
