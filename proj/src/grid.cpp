#include "vstab/grid.hpp"

#include <algorithm>
#include <queue>
#include <sstream>

#include "vstab/error.hpp"

namespace vstab {

const char* to_string(BusKind kind) {
  switch (kind) {
    case BusKind::kPQ:
      return "PQ";
    case BusKind::kPV:
      return "PV";
    case BusKind::kReference:
      return "reference";
  }
  return "?";
}

BusKind bus_kind_from_string(const std::string& text) {
  if (text == "PQ" || text == "pq") return BusKind::kPQ;
  if (text == "PV" || text == "pv") return BusKind::kPV;
  if (text == "reference" || text == "ref" || text == "slack") {
    return BusKind::kReference;
  }
  throw SchemaError("unknown bus kind '" + text + "'");
}

Network::Network(std::vector<Bus> buses, std::vector<Branch> branches,
                 double base_mva)
    : buses_(std::move(buses)),
      branches_(std::move(branches)),
      base_mva_(base_mva) {
  if (buses_.empty()) throw NetworkError("network has no buses");
  if (!(base_mva_ > 0.0)) throw NetworkError("base_mva must be positive");
  for (int i = 0; i < bus_count(); ++i) {
    const Bus& b = buses_[i];
    if (!index_.emplace(b.id, i).second) {
      throw NetworkError("duplicate bus id " + std::to_string(b.id));
    }
    if (b.kind == BusKind::kReference) {
      if (reference_index_ >= 0) {
        throw NetworkError("more than one reference bus (ids " +
                           std::to_string(buses_[reference_index_].id) +
                           ", " + std::to_string(b.id) + ")");
      }
      reference_index_ = i;
    }
    if (b.kind == BusKind::kPQ && b.voltage_setpoint) {
      throw NetworkError("PQ bus " + std::to_string(b.id) +
                         " carries a voltage setpoint");
    }
    if (b.kind != BusKind::kPQ) {
      if (!b.voltage_setpoint) {
        throw NetworkError("bus " + std::to_string(b.id) +
                           " needs a voltage setpoint");
      }
      if (b.loading_rate != 0.0) {
        throw NetworkError("loading rate must be zero on generator bus " +
                           std::to_string(b.id));
      }
    }
  }
  if (reference_index_ < 0) throw NetworkError("network has no reference bus");
  for (const Branch& br : branches_) {
    if (!index_.count(br.from) || !index_.count(br.to)) {
      throw NetworkError("branch " + std::to_string(br.from) + "-" +
                         std::to_string(br.to) + " references unknown bus");
    }
    if (br.from == br.to) {
      throw NetworkError("branch from and to are both bus " +
                         std::to_string(br.from));
    }
    if (br.in_service && br.impedance == Complex(0.0, 0.0)) {
      throw NetworkError("branch " + std::to_string(br.from) + "-" +
                         std::to_string(br.to) + " has zero impedance");
    }
    if (!(br.tap_ratio > 0.0)) {
      throw NetworkError("branch tap ratio must be positive");
    }
  }
}

int Network::index_of(int bus_id) const {
  auto it = index_.find(bus_id);
  if (it == index_.end()) {
    throw InvalidArgument("unknown bus id " + std::to_string(bus_id));
  }
  return it->second;
}

Eigen::VectorXd Network::loading_direction() const {
  Eigen::VectorXd k(bus_count());
  for (int i = 0; i < bus_count(); ++i) k[i] = buses_[i].loading_rate;
  return k;
}

Eigen::VectorXcd Network::base_injection() const {
  Eigen::VectorXcd s(bus_count());
  for (int i = 0; i < bus_count(); ++i) {
    s[i] = Complex(buses_[i].generation, 0.0) - buses_[i].base_load;
  }
  return s;
}

Network Network::with_bus(int index, const Bus& bus) const {
  std::vector<Bus> buses = buses_;
  buses.at(index) = bus;
  return Network(std::move(buses), branches_, base_mva_);
}

Network Network::with_branches(std::vector<Branch> branches) const {
  return Network(buses_, std::move(branches), base_mva_);
}

std::vector<std::vector<int>> connected_components(const Network& network) {
  const int n = network.bus_count();
  std::vector<std::vector<int>> adjacency(n);
  for (const Branch& br : network.branches()) {
    if (!br.in_service) continue;
    const int f = network.index_of(br.from);
    const int t = network.index_of(br.to);
    adjacency[f].push_back(t);
    adjacency[t].push_back(f);
  }
  std::vector<int> label(n, -1);
  std::vector<std::vector<int>> components;
  for (int start = 0; start < n; ++start) {
    if (label[start] >= 0) continue;
    const int id = static_cast<int>(components.size());
    components.emplace_back();
    std::queue<int> frontier;
    frontier.push(start);
    label[start] = id;
    while (!frontier.empty()) {
      const int u = frontier.front();
      frontier.pop();
      components[id].push_back(u);
      for (int v : adjacency[u]) {
        if (label[v] < 0) {
          label[v] = id;
          frontier.push(v);
        }
      }
    }
    std::sort(components[id].begin(), components[id].end());
  }
  return components;
}

Eigen::MatrixXcd build_admittance_matrix(const Network& network) {
  const auto components = connected_components(network);
  if (components.size() > 1) {
    // Report the first component that does not contain the reference bus.
    const int ref = network.reference_index();
    for (const auto& comp : components) {
      if (std::find(comp.begin(), comp.end(), ref) != comp.end()) continue;
      std::ostringstream msg;
      msg << "network is disconnected; isolated buses {";
      for (size_t i = 0; i < comp.size(); ++i) {
        msg << (i ? ", " : "") << network.bus(comp[i]).id;
      }
      msg << "}";
      throw NetworkError(msg.str());
    }
  }

  const int n = network.bus_count();
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  for (const Branch& br : network.branches()) {
    if (!br.in_service) continue;
    const int f = network.index_of(br.from);
    const int t = network.index_of(br.to);
    const Complex ys = br.series_admittance();
    const Complex ych(0.0, br.shunt_charging / 2.0);
    const double tap = br.tap_ratio;
    y(f, f) += (ys + ych) / (tap * tap);
    y(t, t) += ys + ych;
    y(f, t) -= ys / tap;
    y(t, f) -= ys / tap;
  }
  for (int i = 0; i < n; ++i) {
    y(i, i) += Complex(0.0, network.bus(i).shunt_susceptance);
  }
  return y;
}

Network set_shunt(const Network& network, int bus_id, double susceptance) {
  const int i = network.index_of(bus_id);
  Bus b = network.bus(i);
  b.shunt_susceptance = susceptance;
  return network.with_bus(i, b);
}

Eigen::VectorXd direction_from_map(const Network& network,
                                   const std::unordered_map<int, double>& k) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(network.bus_count());
  for (const auto& [id, rate] : k) out[network.index_of(id)] = rate;
  return out;
}

}  // namespace vstab
