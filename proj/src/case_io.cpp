#include "vstab/case_io.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "vstab/error.hpp"
#include "json_reader.hpp"

namespace vstab {

using nlohmann::json;

using detail::ObjectReader;

namespace {

AvrParams parse_avr(const json& j, const std::string& path) {
  ObjectReader r(j, path, {"ka", "ta", "ke", "te", "kf", "tf", "tr"});
  AvrParams a;
  a.ka = r.number("ka");
  a.ta = r.number("ta");
  a.ke = r.number("ke");
  a.te = r.number("te");
  a.kf = r.number("kf");
  a.tf = r.number("tf");
  a.tr = r.number("tr");
  for (double t : {a.ta, a.te, a.tf, a.tr}) {
    if (!(t > 0.0)) ObjectReader::fail(path, "time constants must be > 0");
  }
  return a;
}

GovernorParams parse_gov(const json& j, const std::string& path) {
  ObjectReader r(j, path, {"r", "ts", "tc", "t3", "t5"});
  GovernorParams g;
  g.r = r.number("r");
  g.ts = r.number("ts");
  g.tc = r.number("tc");
  g.t3 = r.number("t3");
  g.t5 = r.number("t5");
  if (!(g.r > 0.0)) ObjectReader::fail(path + "/r", "droop must be > 0");
  for (double t : {g.ts, g.tc, g.t5}) {
    if (!(t > 0.0)) ObjectReader::fail(path, "time constants must be > 0");
  }
  return g;
}

MachineModel parse_machine(const json& j, const std::string& path,
                           double base_mva) {
  ObjectReader r(j, path,
                 {"bus", "p_gen", "mva", "H", "D", "xd", "xq", "xd1", "xq1",
                  "Td01", "Tq01", "avr", "gov"});
  MachineModel m;
  m.bus = r.integer("bus");
  m.generation = r.number("p_gen") / base_mva;
  m.mva = r.number("mva");
  m.h = r.number("H");
  m.damping = r.number("D");
  m.xd = r.number("xd");
  m.xq = r.number("xq");
  m.xd1 = r.number("xd1");
  m.xq1 = r.number("xq1");
  m.td01 = r.number("Td01");
  m.tq01 = r.number("Tq01");
  m.avr = parse_avr(r.at("avr"), r.child("avr"));
  m.gov = parse_gov(r.at("gov"), r.child("gov"));
  if (!(m.mva > 0.0)) ObjectReader::fail(r.child("mva"), "must be > 0");
  if (!(m.h > 0.0)) ObjectReader::fail(r.child("H"), "must be > 0");
  if (!(m.td01 > 0.0) || !(m.tq01 > 0.0)) {
    ObjectReader::fail(path, "open-circuit time constants must be > 0");
  }
  if (!(m.xd1 > 0.0) || !(m.xq1 > 0.0)) {
    ObjectReader::fail(path, "transient reactances must be > 0");
  }
  return m;
}

}  // namespace

Case parse_case(const json& doc, const std::string& name) {
  ObjectReader top(doc, "", {"name", "notes", "base_mva", "buses", "branches",
                             "machines"});
  const double base = top.number("base_mva");
  if (!(base > 0.0)) ObjectReader::fail("/base_mva", "must be > 0");

  const json& jbuses = top.array("buses");
  if (jbuses.empty()) ObjectReader::fail("/buses", "bus list is empty");
  std::vector<Bus> buses;
  std::set<int> seen;
  for (size_t i = 0; i < jbuses.size(); ++i) {
    const std::string path = "/buses/" + std::to_string(i);
    ObjectReader r(jbuses[i], path,
                   {"id", "kind", "v_set", "p_load", "q_load", "b_shunt",
                    "k_rate"});
    Bus b;
    b.id = r.integer("id");
    if (!seen.insert(b.id).second) {
      ObjectReader::fail(path + "/id",
                         "duplicate bus id " + std::to_string(b.id));
    }
    try {
      b.kind = bus_kind_from_string(r.string("kind"));
    } catch (const SchemaError& e) {
      ObjectReader::fail(path + "/kind", e.what());
    }
    if (r.has("v_set")) b.voltage_setpoint = r.number("v_set");
    b.base_load = Complex(r.number("p_load"), r.number("q_load")) / base;
    b.shunt_susceptance = r.number("b_shunt") / base;
    b.loading_rate = r.number("k_rate");
    buses.push_back(b);
  }

  std::vector<Branch> branches;
  const json& jbranches = top.array("branches");
  for (size_t i = 0; i < jbranches.size(); ++i) {
    const std::string path = "/branches/" + std::to_string(i);
    ObjectReader r(jbranches[i], path,
                   {"from", "to", "r", "x", "b", "status", "ratio"});
    Branch br;
    br.from = r.integer("from");
    br.to = r.integer("to");
    br.impedance = Complex(r.number("r"), r.number("x"));
    br.shunt_charging = r.number("b");
    br.in_service = r.integer("status") != 0;
    br.tap_ratio = r.number_or("ratio", 1.0);
    branches.push_back(br);
  }

  std::vector<MachineModel> machines;
  if (top.has("machines")) {
    const json& jm = top.array("machines");
    for (size_t i = 0; i < jm.size(); ++i) {
      machines.push_back(
          parse_machine(jm[i], "/machines/" + std::to_string(i), base));
    }
  }
  // Scheduled generation lives with the machine record.
  std::set<int> machine_buses;
  for (const MachineModel& m : machines) {
    auto it = std::find_if(buses.begin(), buses.end(),
                           [&](const Bus& b) { return b.id == m.bus; });
    if (it == buses.end()) {
      ObjectReader::fail("/machines", "machine at unknown bus " +
                                          std::to_string(m.bus));
    }
    if (!machine_buses.insert(m.bus).second) {
      ObjectReader::fail("/machines",
                         "two machines at bus " + std::to_string(m.bus));
    }
    it->generation = m.generation;
  }

  std::string case_name = name;
  if (top.has("name")) case_name = top.string("name");
  try {
    Network net(std::move(buses), std::move(branches), base);
    return Case{case_name, std::move(net), std::move(machines)};
  } catch (const NetworkError& e) {
    throw SchemaError(std::string("invalid network: ") + e.what());
  }
}

Case parse_case_text(const std::string& text, const std::string& name) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("malformed case document: ") + e.what());
  }
  return parse_case(doc, name);
}

json serialize_case(const Case& c) {
  const Network& net = c.network;
  const double base = net.base_mva();
  json doc;
  if (!c.name.empty()) doc["name"] = c.name;
  doc["base_mva"] = base;
  json buses = json::array();
  for (const Bus& b : net.buses()) {
    json jb;
    jb["id"] = b.id;
    jb["kind"] = to_string(b.kind);
    if (b.voltage_setpoint) jb["v_set"] = *b.voltage_setpoint;
    jb["p_load"] = b.base_load.real() * base;
    jb["q_load"] = b.base_load.imag() * base;
    jb["b_shunt"] = b.shunt_susceptance * base;
    jb["k_rate"] = b.loading_rate;
    buses.push_back(jb);
  }
  doc["buses"] = buses;
  json branches = json::array();
  for (const Branch& br : net.branches()) {
    json j;
    j["from"] = br.from;
    j["to"] = br.to;
    j["r"] = br.impedance.real();
    j["x"] = br.impedance.imag();
    j["b"] = br.shunt_charging;
    j["status"] = br.in_service ? 1 : 0;
    if (br.tap_ratio != 1.0) j["ratio"] = br.tap_ratio;
    branches.push_back(j);
  }
  doc["branches"] = branches;
  json machines = json::array();
  for (const MachineModel& m : c.machines) {
    json j;
    j["bus"] = m.bus;
    j["p_gen"] = m.generation * base;
    j["mva"] = m.mva;
    j["H"] = m.h;
    j["D"] = m.damping;
    j["xd"] = m.xd;
    j["xq"] = m.xq;
    j["xd1"] = m.xd1;
    j["xq1"] = m.xq1;
    j["Td01"] = m.td01;
    j["Tq01"] = m.tq01;
    j["avr"] = {{"ka", m.avr.ka}, {"ta", m.avr.ta}, {"ke", m.avr.ke},
                {"te", m.avr.te}, {"kf", m.avr.kf}, {"tf", m.avr.tf},
                {"tr", m.avr.tr}};
    j["gov"] = {{"r", m.gov.r},   {"ts", m.gov.ts}, {"tc", m.gov.tc},
                {"t3", m.gov.t3}, {"t5", m.gov.t5}};
    machines.push_back(j);
  }
  doc["machines"] = machines;
  return doc;
}

Case load_case(const std::string& name_or_path) {
  for (const std::string& n : bundled_case_names()) {
    if (n == name_or_path) return parse_case_text(bundled_case_text(n), n);
  }
  std::ifstream in(name_or_path);
  if (!in) {
    throw IoError("cannot open case '" + name_or_path +
                  "' (not a bundled case name or readable file)");
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_case_text(buffer.str(),
                         std::filesystem::path(name_or_path).stem().string());
}

}  // namespace vstab
