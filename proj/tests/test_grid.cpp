#include <cmath>

#include "doctest.h"
#include "vstab/case_io.hpp"
#include "vstab/error.hpp"
#include "vstab/grid.hpp"

using namespace vstab;

namespace {

Network small_net(std::vector<Branch> branches) {
  std::vector<Bus> buses(3);
  buses[0].id = 1;
  buses[0].kind = BusKind::kReference;
  buses[0].voltage_setpoint = 1.0;
  buses[1].id = 2;
  buses[1].base_load = {0.5, 0.1};
  buses[2].id = 3;
  buses[2].shunt_susceptance = 0.3;
  return Network(buses, std::move(branches));
}

Branch line(int f, int t, Complex z, double b = 0.0) {
  Branch br;
  br.from = f;
  br.to = t;
  br.impedance = z;
  br.shunt_charging = b;
  return br;
}

}  // namespace

TEST_CASE("admittance matrix of a pi-model chain") {
  const Complex z12(0.01, 0.1), z23(0.02, 0.2);
  const Network net = small_net({line(1, 2, z12, 0.04), line(2, 3, z23)});
  const Eigen::MatrixXcd y = build_admittance_matrix(net);
  const Complex y12 = 1.0 / z12, y23 = 1.0 / z23;
  CHECK(std::abs(y(0, 0) - (y12 + Complex(0, 0.02))) < 1e-12);
  CHECK(std::abs(y(1, 1) - (y12 + y23 + Complex(0, 0.02))) < 1e-12);
  CHECK(std::abs(y(2, 2) - (y23 + Complex(0, 0.3))) < 1e-12);
  CHECK(std::abs(y(0, 1) + y12) < 1e-12);
  CHECK(std::abs(y(1, 2) + y23) < 1e-12);
  CHECK(std::abs(y(0, 2)) == 0.0);
  CHECK((y - y.transpose()).norm() < 1e-14);
}

TEST_CASE("off-nominal tap scales the from side") {
  Branch br = line(1, 2, {0.0, 0.1});
  br.tap_ratio = 1.05;
  const Network net = small_net({br, line(2, 3, {0.0, 0.2})});
  const Eigen::MatrixXcd y = build_admittance_matrix(net);
  const Complex ys = 1.0 / Complex(0.0, 0.1);
  CHECK(std::abs(y(0, 0) - ys / (1.05 * 1.05)) < 1e-12);
  CHECK(std::abs(y(0, 1) + ys / 1.05) < 1e-12);
}

TEST_CASE("disconnected network names the isolated buses") {
  const Network net = small_net({line(1, 2, {0.0, 0.1})});
  try {
    build_admittance_matrix(net);
    FAIL("expected a network error");
  } catch (const NetworkError& e) {
    CHECK(std::string(e.what()).find("{3}") != std::string::npos);
    CHECK(e.kind() == "network");
  }
}

TEST_CASE("out-of-service branch is dropped") {
  Branch off = line(1, 3, {0.0, 0.05});
  off.in_service = false;
  const Network net = small_net({line(1, 2, {0.0, 0.1}), line(2, 3, {0.0, 0.2}), off});
  const Eigen::MatrixXcd y = build_admittance_matrix(net);
  CHECK(std::abs(y(0, 2)) == 0.0);
}

TEST_CASE("network validation") {
  std::vector<Bus> buses(2);
  buses[0].id = 1;
  buses[0].kind = BusKind::kReference;
  buses[0].voltage_setpoint = 1.0;
  buses[1].id = 1;
  CHECK_THROWS_AS(Network(buses, {}), NetworkError);
  buses[1].id = 2;
  buses[1].kind = BusKind::kReference;
  buses[1].voltage_setpoint = 1.0;
  CHECK_THROWS_AS(Network(buses, {}), NetworkError);
  buses[1].kind = BusKind::kPV;
  buses[1].loading_rate = 1.0;
  CHECK_THROWS_AS(Network(buses, {}), NetworkError);
}

TEST_CASE("bundled cases load and round-trip") {
  const auto names = bundled_case_names();
  CHECK(names.size() == 4);
  for (const std::string& name : names) {
    CAPTURE(name);
    const Case c = load_case(name);
    CHECK(c.network.bus_count() > 1);
    CHECK_NOTHROW(build_admittance_matrix(c.network));
    const Case again = parse_case(serialize_case(c));
    CHECK(again.network.bus_count() == c.network.bus_count());
    const Eigen::MatrixXcd d =
        build_admittance_matrix(again.network) - build_admittance_matrix(c.network);
    CHECK(d.norm() < 1e-12);
    CHECK(again.machines.size() == c.machines.size());
  }
  const Case c39 = load_case("ieee39");
  CHECK(c39.network.bus_count() == 39);
  CHECK(c39.machines.size() == 10);
  CHECK(load_case("ieee39_svc").network.bus_count() == 40);
}

TEST_CASE("schema errors carry the field path") {
  const std::string good = bundled_case_text("twobus");
  auto doc = nlohmann::json::parse(good);
  doc["buses"][1]["bogus"] = 1;
  try {
    parse_case(doc);
    FAIL("expected schema error");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("/buses/1/bogus") != std::string::npos);
  }
  doc = nlohmann::json::parse(good);
  doc["buses"][0].erase("kind");
  CHECK_THROWS_AS(parse_case(doc), SchemaError);
  doc = nlohmann::json::parse(good);
  doc["buses"] = nlohmann::json::array();
  CHECK_THROWS_AS(parse_case(doc), SchemaError);
  CHECK_THROWS_AS(parse_case_text("{not json"), SchemaError);
  CHECK_THROWS_AS(load_case("/nonexistent/case.json"), IoError);
}
