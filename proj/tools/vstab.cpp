// vstab: command-line front end to the voltage-stability toolkit.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "CLI11.hpp"
#include "json.hpp"

#include "vstab/case_io.hpp"
#include "vstab/covariance.hpp"
#include "vstab/dynamics.hpp"
#include "vstab/error.hpp"
#include "vstab/harness.hpp"
#include "vstab/helm.hpp"
#include "vstab/power_flow.hpp"
#include "vstab/stochastic.hpp"

using namespace vstab;
using nlohmann::json;

namespace {

constexpr double kRadToDeg = 180.0 / 3.14159265358979323846;

// Stable exit status per error class; 1 is left for unexpected failures and
// 2 for command-line usage errors.
int exit_code(const std::string& kind) {
  static const std::map<std::string, int> codes = {
      {"schema", 3},
      {"invalid_argument", 4},
      {"io", 5},
      {"network", 6},
      {"powerflow_divergence", 7},
      {"numerical", 8},
      {"unstable_equilibrium", 9},
      {"no_admissible_margin", 10},
      {"no_critical_loading", 11},
      {"collapse_at_initialization", 12},
  };
  const auto it = codes.find(kind);
  return it == codes.end() ? 13 : it->second;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

double to_number(const std::string& text, const std::string& what) {
  try {
    size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::logic_error&) {
    throw InvalidArgument("cannot read " + what + " from '" + text + "'");
  }
}

// "bus,k" rows (header optional); buses not listed get k = 0.
Eigen::VectorXd read_direction(const Network& network, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open loading-direction file '" + path + "'");
  std::unordered_map<int, double> k;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split(line, ',');
    if (row == 1 && cells.size() == 2 && cells[0] == "bus") continue;
    if (cells.size() != 2) {
      throw SchemaError(path + ":" + std::to_string(row) + ": expected 'bus,k'");
    }
    k[static_cast<int>(to_number(cells[0], "bus id"))] = to_number(cells[1], "k");
  }
  return direction_from_map(network, k);
}

struct GridInput {
  Case grid;
  Eigen::VectorXd k;
};

// Optional SVC susceptance folded into the network as a fixed shunt.
GridInput load_grid(const std::string& name, const std::string& kfile, int svc_id = 0,
                    std::optional<double> b = std::nullopt) {
  GridInput g{load_case(name), {}};
  if (b) {
    if (svc_id == 0) throw InvalidArgument("--b needs --svc");
    g.grid.network = set_shunt(g.grid.network, svc_id, *b);
  }
  g.k = kfile.empty() ? g.grid.network.loading_direction()
                      : read_direction(g.grid.network, kfile);
  return g;
}

std::vector<int> parse_ids(const std::string& text, char sep) {
  std::vector<int> ids;
  for (const std::string& s : split(text, sep)) {
    if (!s.empty()) ids.push_back(static_cast<int>(to_number(s, "bus id")));
  }
  return ids;
}

// "e=10,sigma=0.02[,buses=2;3]" over the load buses of `dae`.
OUParams parse_ou(const std::string& text, const DaeSystem& dae) {
  double e = 10.0, sigma = 0.02;
  std::vector<int> buses;
  for (const std::string& item : split(text, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw InvalidArgument("--ou expects key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    if (key == "e") {
      e = to_number(value, "OU e");
    } else if (key == "sigma") {
      sigma = to_number(value, "OU sigma");
    } else if (key == "buses") {
      buses = parse_ids(value, ';');
    } else {
      throw InvalidArgument("unknown --ou key '" + key + "'");
    }
  }
  OUParams ou;
  ou.buses = dae.load_bus_ids();
  ou.e = Eigen::VectorXd::Constant(ou.buses.size(), e);
  ou.sigma = Eigen::VectorXd::Zero(ou.buses.size());
  for (size_t i = 0; i < ou.buses.size(); ++i) {
    if (buses.empty() || std::count(buses.begin(), buses.end(), ou.buses[i])) ou.sigma[i] = sigma;
  }
  for (int id : buses) {
    if (!std::count(ou.buses.begin(), ou.buses.end(), id)) {
      throw InvalidArgument("noise bus " + std::to_string(id) + " carries no load");
    }
  }
  ou.validate();
  return ou;
}

// Dynamic model with the SVC (if any) as a controlled shunt rather than a
// fixed one.
struct DynamicInput {
  GridInput in;
  std::optional<int> svc;
  double b = 0.0;
  DaeSystem dae;
};

DynamicInput load_dynamic(const std::string& name, const std::string& kfile, int svc_id,
                          std::optional<double> b) {
  GridInput in = load_grid(name, kfile);
  if (in.grid.machines.empty()) {
    throw InvalidArgument("case '" + name + "' has no machine data");
  }
  std::optional<int> svc;
  double b_svc = 0.0;
  Network net = in.grid.network;
  if (svc_id != 0) {
    svc = svc_id;
    b_svc = b.value_or(net.bus(net.index_of(svc_id)).shunt_susceptance);
    net = set_shunt(net, svc_id, 0.0);
  } else if (b) {
    throw InvalidArgument("--b needs --svc");
  }
  DaeSystem dae(net, in.grid.machines, svc, in.k);
  return {std::move(in), svc, b_svc, std::move(dae)};
}

std::ostream& open_out(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) throw IoError("cannot write '" + path + "'");
  return file;
}

void print_result_row(std::ostream& out, const RunResult& r) {
  out << r.label << ',' << to_string(r.kind) << ',' << r.seed << ','
      << (r.collapsed ? 1 : 0) << ',' << r.survival_time << ',' << r.load_increase_pct
      << ',' << r.final_b << '\n';
}

void print_summary(const ComparisonReport& rep) {
  std::cout << "label,runs,collapses,mean_survival,mean_load_increase_pct\n";
  for (const ControllerSummary& s : rep.summaries) {
    std::cout << s.label << ',' << s.runs << ',' << s.collapses << ',' << s.mean_survival
              << ',' << s.mean_load_increase << '\n';
  }
  for (const PairDelta& d : rep.deltas) {
    std::cout << "delta " << d.better << " - " << d.worse << ": mean " << d.mean << " s\n";
  }
  std::cout << "ordering verdict " << rep.ordering_verdict << " ("
            << std::lround(rep.ordering_verdict * rep.seeds.size()) << "/" << rep.seeds.size()
            << " seeds), load ordering agreement " << rep.load_ordering_agreement << "\n";
}

void add_overrides(CLI::App* cmd, ScenarioOverrides& o) {
  cmd->add_option("--horizon", o.horizon, "simulated time [s]");
  cmd->add_option("--dt", o.dt, "integration step [s]");
  cmd->add_option("--sigma", o.ou_sigma, "OU intensity");
  cmd->add_option("--drift-rate", o.drift_rate, "monotone drift rate [1/s]");
  cmd->add_option("--out", o.output_dir, "directory for trajectory and log files");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Voltage-stability toolkit: power flow, HELM continuation, "
               "stochastic load models, dynamic simulation and SVC controllers."};
  app.require_subcommand(1);

  // powerflow
  std::string case_name, kfile, out_path;
  double scale = 0.0;
  int svc_id = 0;
  std::optional<double> b_svc;
  auto* pf = app.add_subcommand("powerflow", "Newton power flow at loading s");
  pf->add_option("case", case_name, "bundled case name or case file")->required();
  pf->add_option("--scale", scale, "loading factor s");
  pf->add_option("--kfile", kfile, "loading direction, CSV 'bus,k'");
  pf->add_option("--svc", svc_id, "SVC bus id");
  pf->add_option("--b", b_svc, "SVC susceptance [p.u.]");
  pf->add_option("--out", out_path, "CSV output (default stdout)");
  pf->callback([&] {
    const GridInput g = load_grid(case_name, kfile, svc_id, b_svc);
    const PowerFlowSolution sol = solve_cold(g.grid.network, scale, g.k);
    std::ofstream file;
    std::ostream& out = open_out(out_path, file);
    out << std::setprecision(12) << "bus,vm,va_deg,p,q\n";
    for (int i = 0; i < g.grid.network.bus_count(); ++i) {
      out << g.grid.network.bus(i).id << ',' << sol.magnitude(i) << ','
          << sol.angle(i) * kRadToDeg << ',' << sol.injection[i].real() << ','
          << sol.injection[i].imag() << '\n';
    }
  });

  // cpf
  int terms = 41, points = 100;
  std::optional<double> smax;
  bool validate = false;
  auto* cpf = app.add_subcommand("cpf", "HELM continuation: PV curves and critical loading");
  cpf->add_option("case", case_name, "bundled case name or case file")->required();
  cpf->add_option("--kfile", kfile, "loading direction, CSV 'bus,k'");
  cpf->add_option("--terms", terms, "series terms")->check(CLI::Range(3, 201));
  cpf->add_option("--smax", smax, "last loading of the curve (default 0.99 s_c)");
  cpf->add_option("--points", points, "curve points")->check(CLI::Range(2, 100000));
  cpf->add_option("--out", out_path, "curve CSV (s, bus, vm, va_deg)");
  cpf->add_flag("--validate", validate, "compare with Newton and print the error curve");
  cpf->add_option("--svc", svc_id, "SVC bus id");
  cpf->add_option("--b", b_svc, "SVC susceptance [p.u.]");
  cpf->callback([&] {
    const GridInput g = load_grid(case_name, kfile, svc_id, b_svc);
    const Network& net = g.grid.network;
    const PowerFlowSolution base = solve_cold(net, 0.0, g.k);
    HelmOptions opt;
    opt.terms = terms;
    const CriticalLoading cl = find_critical_loading(net, base, g.k, opt);
    const PowerSeriesSet ps = embed_and_recurse(net, base, g.k, terms);
    const std::vector<PadePair> pades = pade_all(ps);
    const double last = smax.value_or(0.99 * cl.s_c);
    std::vector<double> grid;
    for (int i = 0; i < points; ++i) grid.push_back(last * i / (points - 1));

    if (!out_path.empty()) {
      std::ofstream file;
      std::ostream& out = open_out(out_path, file);
      out << std::setprecision(12) << "s,bus,vm,va_deg\n";
      for (double s : grid) {
        const Eigen::VectorXcd v = evaluate_voltages(ps, pades, s);
        for (int i = 0; i < net.bus_count(); ++i) {
          out << s << ',' << net.bus(i).id << ',' << std::abs(v[i]) << ','
              << std::arg(v[i]) * kRadToDeg << '\n';
        }
      }
    }
    std::cout << std::setprecision(10) << "s_c " << cl.s_c << " (limiting bus "
              << net.bus(cl.bus).id << ", single-stage estimate " << cl.single_stage
              << ", " << cl.stage_estimates.size() << " stages)\n";
    if (validate) {
      std::vector<double> nr_grid(grid.begin() + 1, grid.end());
      const PvCurve nr = pv_curve_newton(net, g.k, nr_grid, base);
      std::cout << "s,max_abs_dv\n" << std::setprecision(6);
      for (const PvPoint& pt : nr.points) {
        if (!pt.solution) break;
        const Eigen::VectorXcd v = evaluate_voltages(ps, pades, pt.s);
        const double err =
            (v.cwiseAbs() - pt.solution->voltage.cwiseAbs()).cwiseAbs().maxCoeff();
        std::cout << pt.s << ',' << err << '\n';
      }
      if (nr.first_failure) {
        std::cout << "# Newton failed from s = " << nr.points[*nr.first_failure].s << "\n";
      }
    }
  });

  // noise
  std::string scenario_name;
  uint64_t seed = 1;
  std::optional<double> horizon;
  auto* noise = app.add_subcommand("noise", "Record or inspect load-noise realizations");
  noise->require_subcommand(1);
  auto* gen = noise->add_subcommand("gen", "Write the noise a scenario uses for one seed");
  gen->add_option("scenario", scenario_name, "bundled scenario name or file")->required();
  gen->add_option("--seed", seed, "realization seed");
  gen->add_option("--horizon", horizon, "duration [s] (default: the scenario's)");
  gen->add_option("--out", out_path, "output file (.csv, otherwise binary)")->required();
  gen->callback([&] {
    Scenario s = load_scenario(scenario_name);
    if (horizon) s.horizon = *horizon;
    s.validate();
    const NoiseRealization n = scenario_noise(prepare_scenario(s), seed);
    write_noise(n, out_path);
    std::cout << "wrote " << n.fast.rows() << " fast x " << n.fast.cols() << " buses, "
              << n.slow.size() << " slow steps to " << out_path << "\n";
  });
  std::string noise_path;
  auto* inspect = noise->add_subcommand("inspect", "Summarize a noise file");
  inspect->add_option("file", noise_path, "noise file")->required();
  inspect->callback([&] {
    const NoiseRealization n = read_noise(noise_path);
    std::cout << std::setprecision(8) << "seed " << n.seed << "\nfast dt " << n.fast_dt
              << " s, " << n.fast.rows() << " steps (" << n.duration() << " s)\n"
              << "slow dt " << n.slow_dt << " s, " << n.slow.size() << " steps";
    if (!n.slow.empty()) std::cout << ", s from " << n.slow.front() << " to " << n.slow.back();
    std::cout << "\nbus,mean,variance\n";
    for (Eigen::Index j = 0; j < n.fast.cols(); ++j) {
      const Eigen::VectorXd c = n.fast.col(j);
      const double mean = c.mean();
      const double var = c.size() > 1 ? (c.array() - mean).square().sum() / (c.size() - 1) : 0.0;
      std::cout << n.buses[j] << ',' << mean << ',' << var << '\n';
    }
  });

  // covariance
  std::string ou_text = "e=10,sigma=0.02";
  auto* cov = app.add_subcommand("covariance", "Predicted stationary voltage variances");
  cov->add_option("case", case_name, "bundled case name or case file")->required();
  cov->add_option("--scale", scale, "loading factor s");
  cov->add_option("--kfile", kfile, "loading direction, CSV 'bus,k'");
  cov->add_option("--ou", ou_text, "OU noise: e=..,sigma=..[,buses=a;b]");
  cov->add_option("--svc", svc_id, "SVC bus id");
  cov->add_option("--b", b_svc, "SVC susceptance [p.u.] (default: the case's shunt)");
  cov->add_option("--out", out_path, "CSV output (default stdout)");
  cov->callback([&] {
    DynamicInput d = load_dynamic(case_name, kfile, svc_id, b_svc);
    const OUParams ou = parse_ou(ou_text, d.dae);
    const CovarianceResult r = predict_covariance(d.dae, scale, d.b, ou);
    std::ofstream file;
    std::ostream& out = open_out(out_path, file);
    out << std::setprecision(12) << "bus,variance,std\n";
    for (int i = 0; i < d.dae.bus_count(); ++i) {
      out << d.dae.network().bus(i).id << ',' << r.voltage_variance[i] << ','
          << std::sqrt(std::max(r.voltage_variance[i], 0.0)) << '\n';
    }
  });

  // margin
  double sp = 0.99, look_ahead = 600.0, diffusion = 0.0;
  std::string monitored_text;
  auto* margin = app.add_subcommand("margin", "Critical loading, margin and critical variances");
  margin->add_option("case", case_name, "bundled case name or case file")->required();
  margin->add_option("--kfile", kfile, "loading direction, CSV 'bus,k'");
  margin->add_option("--sp", sp, "target survival probability")->check(CLI::Range(0.0, 1.0));
  margin->add_option("--horizon", look_ahead, "look-ahead [s]");
  margin->add_option("--diffusion", diffusion, "loading diffusion D [1/s]")->required();
  margin->add_option("--ou", ou_text, "OU noise: e=..,sigma=..[,buses=a;b]");
  margin->add_option("--svc", svc_id, "SVC bus id");
  margin->add_option("--b", b_svc, "SVC susceptance [p.u.] (default: the case's shunt)");
  margin->add_option("--monitored", monitored_text, "bus ids a,b,... (default: load buses)");
  margin->callback([&] {
    DynamicInput d = load_dynamic(case_name, kfile, svc_id, b_svc);
    Network net = d.dae.network();
    if (d.svc) net = set_shunt(net, *d.svc, d.b);
    const PowerFlowSolution base = solve_cold(net, 0.0, d.in.k);
    const double s_c = find_critical_loading(net, base, d.in.k).s_c;
    const double s_m = margin_loading({s_c, sp, look_ahead, diffusion});
    std::cout << std::setprecision(10) << "s_c " << s_c << "\ns_m " << s_m << "\n";
    const OUParams ou = parse_ou(ou_text, d.dae);
    const std::vector<int> monitored =
        monitored_text.empty() ? d.dae.load_bus_ids() : parse_ids(monitored_text, ',');
    const CriticalVarianceSet set = critical_variances(d.dae, s_m, d.b, ou, monitored);
    std::cout << "bus,sigma2_crit\n";
    for (size_t i = 0; i < set.bus_ids.size(); ++i) {
      std::cout << set.bus_ids[i] << ',' << set.variance[i] << '\n';
    }
  });

  // simulate
  std::string controller = "vbc";
  ScenarioOverrides sim_o;
  auto* sim = app.add_subcommand("simulate", "One controller, one seed");
  sim->add_option("scenario", scenario_name, "bundled scenario name or file")->required();
  sim->add_option("--controller", controller, "rbc|mbc|vbc")
      ->check(CLI::IsMember({"rbc", "mbc", "vbc", "RBC", "MBC", "VBC"}));
  sim->add_option("--seed", seed, "noise seed");
  add_overrides(sim, sim_o);
  sim->callback([&] {
    Scenario s = load_scenario(scenario_name);
    apply_overrides(s, sim_o);
    const RunResult r = run_scenario(s, controller_kind_from_string(controller), seed);
    std::cout << std::setprecision(10)
              << "label,kind,seed,collapsed,survival_time,load_increase_pct,final_b\n";
    print_result_row(std::cout, r);
    if (!r.trajectory_path.empty()) {
      std::cout << "trajectory " << r.trajectory_path << "\ncontrol log " << r.control_log_path
                << "\n";
    }
  });

  // compare
  ScenarioOverrides cmp_o;
  auto* cmp = app.add_subcommand("compare", "Every controller on shared noise, seeds 1..k");
  cmp->add_option("scenario", scenario_name, "bundled scenario name or file")->required();
  cmp->add_option("--seeds", cmp_o.seed_count, "number of seeds (default: the scenario's)");
  add_overrides(cmp, cmp_o);
  cmp->callback([&] {
    Scenario s = load_scenario(scenario_name);
    apply_overrides(s, cmp_o);
    const ComparisonReport rep = compare_controllers(s);
    std::cout << std::setprecision(10)
              << "label,kind,seed,collapsed,survival_time,load_increase_pct,final_b\n";
    for (const RunResult& r : rep.results) print_result_row(std::cout, r);
    print_summary(rep);
    if (!s.output_dir.empty()) {
      export_report(rep, s.output_dir);
      std::cout << "report written to " << s.output_dir << "\n";
    }
  });

  // report
  std::string report_dir;
  auto* report = app.add_subcommand("report", "Summarize an exported comparison");
  report->add_option("dir", report_dir, "directory holding results.csv")->required();
  report->callback([&] {
    const std::vector<RunResult> results = read_results_csv(report_dir + "/results.csv");
    std::vector<std::string> labels;
    for (const RunResult& r : results) {
      if (std::find(labels.begin(), labels.end(), r.label) == labels.end()) {
        labels.push_back(r.label);
      }
    }
    std::string name;
    std::ifstream summary(report_dir + "/summary.json");
    if (summary) {
      try {
        name = json::parse(summary).value("scenario", "");
      } catch (const json::exception&) {
        throw SchemaError(report_dir + "/summary.json is not valid JSON");
      }
    }
    const ComparisonReport rep = summarize(name, labels, results);
    std::cout << std::setprecision(10) << "scenario " << (name.empty() ? "?" : name) << "\n";
    print_summary(rep);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "vstab: error[" << e.kind() << "]: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "vstab: error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
