#include "vstab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "json_reader.hpp"
#include "vstab/error.hpp"

namespace vstab {

using detail::ObjectReader;
using nlohmann::json;

const char* to_string(DriftMode mode) {
  return mode == DriftMode::kMonotone ? "monotone" : "wiener";
}

void Scenario::validate() const {
  if (case_id.empty()) throw InvalidArgument("scenario has no case");
  if (!(horizon > 0.0) || !(dt > 0.0)) {
    throw InvalidArgument("scenario horizon and dt must be > 0");
  }
  if (record_every < 0) throw InvalidArgument("record_every must be >= 0");
  if (!(drift.step > 0.0)) throw InvalidArgument("drift step must be > 0");
  if (drift.mode == DriftMode::kWiener && drift.diffusion < 0.0) {
    throw InvalidArgument("drift diffusion must be >= 0");
  }
  if (!(ou_e > 0.0) || ou_sigma < 0.0) {
    throw InvalidArgument("OU needs e > 0 and sigma >= 0");
  }
  if (controllers.empty()) throw InvalidArgument("scenario has no controllers");
  std::vector<std::string> labels;
  for (const ControllerSpec& c : controllers) {
    if (std::find(labels.begin(), labels.end(), c.label) != labels.end()) {
      throw InvalidArgument("duplicate controller label '" + c.label + "'");
    }
    labels.push_back(c.label);
    if (!(c.config.b_min < c.config.b_max)) {
      throw InvalidArgument("controller '" + c.label + "': b_min >= b_max");
    }
    if (c.config.kind == ControllerKind::kVBC && !(margin.diffusion > 0.0)) {
      throw InvalidArgument("VBC needs a positive margin diffusion");
    }
    c.config.filter.validate();
  }
  if (b_initial) {
    for (const ControllerSpec& c : controllers) {
      if (*b_initial < c.config.b_min || *b_initial > c.config.b_max) {
        throw InvalidArgument("initial susceptance outside the limits of '" +
                              c.label + "'");
      }
    }
  }
}

namespace {

const std::set<std::string> kControllerFields = {
    "label", "kind",  "k_r",       "k_m",  "k_v",    "v_ref",     "mu_crit",
    "b_min", "b_max", "monitored", "window", "rate", "sgf_order", "sgf_frame"};

ControllerSpec parse_controller(const json& j, const std::string& path) {
  ObjectReader r(j, path, kControllerFields);
  ControllerSpec spec;
  ControllerConfig& c = spec.config;
  try {
    c.kind = controller_kind_from_string(r.string("kind"));
  } catch (const InvalidArgument& e) {
    ObjectReader::fail(path + "/kind", e.what());
  }
  spec.label = r.has("label") ? r.string("label") : to_string(c.kind);
  c.k_r = r.number_or("k_r", c.k_r);
  c.k_m = r.number_or("k_m", c.k_m);
  if (r.has("k_v")) {
    const json& kv = r.at("k_v");
    if (kv.is_string() && kv.get<std::string>() == "auto") {
      spec.k_v_auto = true;
    } else {
      c.k_v = r.number("k_v");
    }
  }
  c.v_ref = r.number_or("v_ref", c.v_ref);
  c.mu_crit = r.number_or("mu_crit", c.mu_crit);
  c.b_min = r.number_or("b_min", c.b_min);
  c.b_max = r.number_or("b_max", c.b_max);
  if (r.has("monitored")) c.monitored = r.integers("monitored");
  c.filter.window = r.number_or("window", c.filter.window);
  c.filter.rate = r.number_or("rate", c.filter.rate);
  if (r.has("sgf_order")) c.filter.sgf_order = r.integer("sgf_order");
  if (r.has("sgf_frame")) c.filter.sgf_frame = r.integer("sgf_frame");
  return spec;
}

json controller_json(const ControllerSpec& spec) {
  const ControllerConfig& c = spec.config;
  json j = {{"label", spec.label},
            {"kind", to_string(c.kind)},
            {"k_r", c.k_r},
            {"k_m", c.k_m},
            {"v_ref", c.v_ref},
            {"mu_crit", c.mu_crit},
            {"b_min", c.b_min},
            {"b_max", c.b_max},
            {"monitored", c.monitored},
            {"window", c.filter.window},
            {"rate", c.filter.rate},
            {"sgf_order", c.filter.sgf_order},
            {"sgf_frame", c.filter.sgf_frame}};
  if (spec.k_v_auto) {
    j["k_v"] = "auto";
  } else {
    j["k_v"] = c.k_v;
  }
  return j;
}

}  // namespace

Scenario parse_scenario(const json& doc) {
  ObjectReader top(doc, "",
                   {"name", "notes", "case", "svc", "loading", "drift", "ou",
                    "margin", "controller_defaults", "controllers", "horizon",
                    "dt", "record_every", "seeds", "output_dir"});
  Scenario s;
  if (top.has("name")) s.name = top.string("name");
  s.case_id = top.string("case");

  ObjectReader svc(top.at("svc"), "/svc", {"bus", "v_target", "b_initial"});
  s.svc_bus = svc.integer("bus");
  s.v_target = svc.number_or("v_target", s.v_target);
  if (svc.has("b_initial")) s.b_initial = svc.number("b_initial");

  if (top.has("loading")) {
    ObjectReader l(top.at("loading"), "/loading", {"buses", "s0"});
    if (l.has("buses")) s.loading_buses = l.integers("buses");
    s.s0 = l.number_or("s0", s.s0);
  }
  if (top.has("drift")) {
    ObjectReader d(top.at("drift"), "/drift", {"mode", "rate", "diffusion", "step"});
    if (d.has("mode")) {
      const std::string mode = d.string("mode");
      if (mode == "monotone") {
        s.drift.mode = DriftMode::kMonotone;
      } else if (mode == "wiener") {
        s.drift.mode = DriftMode::kWiener;
      } else {
        ObjectReader::fail("/drift/mode", "expected 'monotone' or 'wiener'");
      }
    }
    s.drift.rate = d.number_or("rate", s.drift.rate);
    s.drift.diffusion = d.number_or("diffusion", s.drift.diffusion);
    s.drift.step = d.number_or("step", s.drift.step);
  }
  if (top.has("ou")) {
    ObjectReader o(top.at("ou"), "/ou", {"e", "sigma", "buses"});
    s.ou_e = o.number_or("e", s.ou_e);
    s.ou_sigma = o.number_or("sigma", s.ou_sigma);
    if (o.has("buses")) s.noise_buses = o.integers("buses");
  }
  if (top.has("margin")) {
    ObjectReader m(top.at("margin"), "/margin",
                   {"sp_star", "horizon", "diffusion", "refresh_db", "refresh_windows"});
    s.margin.sp_star = m.number_or("sp_star", s.margin.sp_star);
    s.margin.horizon = m.number_or("horizon", s.margin.horizon);
    s.margin.diffusion = m.number_or("diffusion", s.margin.diffusion);
    s.margin.refresh_db = m.number_or("refresh_db", s.margin.refresh_db);
    if (m.has("refresh_windows")) s.margin.refresh_windows = m.integer("refresh_windows");
  }

  json defaults = json::object();
  if (top.has("controller_defaults")) {
    defaults = top.at("controller_defaults");
    ObjectReader(defaults, "/controller_defaults", kControllerFields);
  }
  const json& list = top.array("controllers");
  for (size_t i = 0; i < list.size(); ++i) {
    const std::string path = "/controllers/" + std::to_string(i);
    if (!list[i].is_object()) ObjectReader::fail(path, "expected an object");
    json merged = defaults;
    merged.update(list[i]);
    ControllerSpec spec = parse_controller(merged, path);
    spec.config.svc_bus = s.svc_bus;
    s.controllers.push_back(std::move(spec));
  }

  s.horizon = top.number_or("horizon", s.horizon);
  s.dt = top.number_or("dt", s.dt);
  if (top.has("record_every")) s.record_every = top.integer("record_every");
  if (top.has("seeds")) {
    s.seeds.clear();
    for (const json& v : top.array("seeds")) {
      if (!v.is_number_integer() || v.get<int64_t>() < 0) {
        ObjectReader::fail("/seeds", "expected non-negative integers");
      }
      s.seeds.push_back(v.get<uint64_t>());
    }
  }
  if (top.has("output_dir")) s.output_dir = top.string("output_dir");
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw SchemaError(std::string("invalid scenario: ") + e.what());
  }
  return s;
}

json serialize_scenario(const Scenario& s) {
  json doc;
  doc["name"] = s.name;
  doc["case"] = s.case_id;
  doc["svc"] = {{"bus", s.svc_bus}, {"v_target", s.v_target}};
  if (s.b_initial) doc["svc"]["b_initial"] = *s.b_initial;
  doc["loading"] = {{"buses", s.loading_buses}, {"s0", s.s0}};
  doc["drift"] = {{"mode", to_string(s.drift.mode)},
                  {"rate", s.drift.rate},
                  {"diffusion", s.drift.diffusion},
                  {"step", s.drift.step}};
  doc["ou"] = {{"e", s.ou_e}, {"sigma", s.ou_sigma}, {"buses", s.noise_buses}};
  doc["margin"] = {{"sp_star", s.margin.sp_star},
                   {"horizon", s.margin.horizon},
                   {"diffusion", s.margin.diffusion},
                   {"refresh_db", s.margin.refresh_db},
                   {"refresh_windows", s.margin.refresh_windows}};
  json list = json::array();
  for (const ControllerSpec& c : s.controllers) list.push_back(controller_json(c));
  doc["controllers"] = list;
  doc["horizon"] = s.horizon;
  doc["dt"] = s.dt;
  doc["record_every"] = s.record_every;
  doc["seeds"] = s.seeds;
  if (!s.output_dir.empty()) doc["output_dir"] = s.output_dir;
  return doc;
}

Scenario load_scenario(const std::string& name_or_path) {
  std::string text;
  for (const std::string& n : bundled_scenario_names()) {
    if (n == name_or_path) text = bundled_scenario_text(n);
  }
  if (text.empty()) {
    std::ifstream in(name_or_path);
    if (!in) {
      throw IoError("cannot open scenario '" + name_or_path +
                    "' (not a bundled scenario name or readable file)");
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    text = buffer.str();
  }
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("malformed scenario document: ") + e.what());
  }
  return parse_scenario(doc);
}

void apply_overrides(Scenario& s, const ScenarioOverrides& o) {
  if (o.horizon) s.horizon = *o.horizon;
  if (o.dt) s.dt = *o.dt;
  if (o.ou_sigma) s.ou_sigma = *o.ou_sigma;
  if (o.drift_rate) s.drift.rate = *o.drift_rate;
  if (o.seed_count) {
    if (*o.seed_count <= 0) throw InvalidArgument("seed count must be > 0");
    s.seeds.clear();
    for (int i = 1; i <= *o.seed_count; ++i) s.seeds.push_back(i);
  }
  if (o.seed) s.seeds = {*o.seed};
  if (o.output_dir) s.output_dir = *o.output_dir;
  s.validate();
}

namespace {

Case scenario_case(const Scenario& s) {
  Case c = load_case(s.case_id);
  if (!s.loading_buses.empty()) {
    Network net = c.network;
    for (int i = 0; i < net.bus_count(); ++i) {
      Bus b = net.bus(i);
      const bool on = std::find(s.loading_buses.begin(), s.loading_buses.end(),
                                b.id) != s.loading_buses.end();
      b.loading_rate = on ? 1.0 : 0.0;
      net = net.with_bus(i, b);
    }
    for (int id : s.loading_buses) net.index_of(id);  // throws for unknown ids
    c.network = std::move(net);
  }
  return c;
}

OUParams scenario_ou(const Scenario& s, const DaeSystem& dae) {
  const std::vector<int> ids = dae.load_bus_ids();
  OUParams ou;
  ou.buses = ids;
  ou.e = Eigen::VectorXd::Constant(ids.size(), s.ou_e);
  ou.sigma = Eigen::VectorXd::Zero(ids.size());
  for (int id : s.noise_buses) {
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) {
      throw InvalidArgument("noise bus " + std::to_string(id) + " carries no load");
    }
  }
  for (size_t i = 0; i < ids.size(); ++i) {
    const bool on = s.noise_buses.empty() ||
                    std::find(s.noise_buses.begin(), s.noise_buses.end(), ids[i]) !=
                        s.noise_buses.end();
    if (on) ou.sigma[i] = s.ou_sigma;
  }
  return ou;
}

// Percentage growth of the active load on the buses that ramp.
double load_increase_pct(const DaeSystem& dae, double s) {
  const Eigen::VectorXd& k = dae.loading_direction();
  double moving = 0.0, base = 0.0;
  for (int i = 0; i < dae.bus_count(); ++i) {
    if (k[i] == 0.0) continue;
    const double p = dae.network().bus(i).base_load.real();
    moving += k[i] * p;
    base += p;
  }
  return base > 0.0 ? 100.0 * s * moving / base : 0.0;
}

}  // namespace

PreparedScenario prepare_scenario(const Scenario& scenario) {
  scenario.validate();
  Case grid = scenario_case(scenario);
  const Eigen::VectorXd k = grid.network.loading_direction();
  DaeSystem dae(grid.network, grid.machines, scenario.svc_bus, k);
  OUParams ou = scenario_ou(scenario, dae);
  const double b0 = scenario.b_initial
                        ? *scenario.b_initial
                        : initial_svc_susceptance(grid.network, scenario.svc_bus,
                                                  scenario.v_target, scenario.s0,
                                                  dae.machine_count() > 1
                                                      ? governor_participation(dae)
                                                      : Eigen::VectorXd());
  VbcOrchestrator orch{grid.network, dae, ou, scenario.margin.sp_star,
                       scenario.margin.horizon, scenario.margin.diffusion,
                       scenario.margin.refresh_db, scenario.margin.refresh_windows,
                       HelmOptions{}};

  std::optional<VbcOrchestrator::Refresh> initial;
  std::vector<ControllerConfig> configs;
  for (const ControllerSpec& spec : scenario.controllers) {
    ControllerConfig cfg = spec.config;
    cfg.svc_bus = scenario.svc_bus;
    if (cfg.kind == ControllerKind::kVBC) {
      // Thresholds for the buses this controller monitors, in its order.
      const VbcOrchestrator::Refresh r = orch.refresh(b0, cfg.monitored, 0.0);
      if (!initial) initial = r;
      CriticalVarianceSet t = r.thresholds;
      if (spec.k_v_auto) {
        if (!(t.variance.minCoeff() > 0.0)) {
          throw InvalidArgument("controller '" + spec.label +
                                "': automatic k_v needs positive critical variances "
                                "(no load noise reaches the monitored buses)");
        }
        cfg.k_v = cfg.k_m * 0.02 / t.variance.mean();
      }
      cfg.sigma2_crit = std::move(t);
    }
    cfg.validate();
    configs.push_back(std::move(cfg));
  }
  return PreparedScenario{scenario,         std::move(grid), std::move(dae),
                          std::move(ou),    b0,              std::move(orch),
                          std::move(initial), std::move(configs)};
}

NoiseRealization scenario_noise(const PreparedScenario& p, uint64_t seed) {
  const Scenario& s = p.scenario;
  const long steps = std::lround(s.horizon / s.dt);
  NoiseRealization noise;
  noise.seed = seed;
  noise.fast_dt = s.dt;
  noise.buses = p.ou.buses;
  noise.fast = simulate_ou(p.ou, s.dt, static_cast<int>(steps), seed);
  noise.slow_dt = s.drift.step;
  const int slow_steps = static_cast<int>(std::ceil(s.horizon / s.drift.step)) + 1;
  noise.slow = s.drift.mode == DriftMode::kMonotone
                   ? ramp_trajectory(s.drift.rate, s.drift.step, slow_steps)
                   : simulate_wiener({s.drift.diffusion, s.drift.step}, slow_steps, seed);
  return noise;
}

RunResult run_prepared(const PreparedScenario& p, size_t index,
                       const NoiseRealization& noise) {
  const Scenario& s = p.scenario;
  if (index >= p.configs.size()) throw InvalidArgument("no such controller");
  const ControllerConfig& cfg = p.configs[index];
  const std::string& label = s.controllers[index].label;

  DaeSystem dae = p.dae;
  const Equilibrium eq = find_equilibrium(dae, s.s0, p.b_initial);
  SvcController ctl(cfg, p.b_initial,
                    cfg.kind == ControllerKind::kVBC
                        ? std::optional<VbcOrchestrator>(p.orchestrator)
                        : std::nullopt);
  const ControllerHook hook = ctl.hook(dae.network());
  IntegrationOptions opt;
  opt.dt = s.dt;
  opt.horizon = s.horizon;
  opt.s_offset = s.s0;
  opt.record_every = s.record_every;
  const IntegrationResult res = integrate(dae, eq, &noise, &hook, opt);

  RunResult r;
  r.label = label;
  r.kind = cfg.kind;
  r.seed = noise.seed;
  r.collapsed = res.collapse.has_value();
  r.survival_time = r.collapsed ? res.collapse->time : s.horizon;
  const double t_last = r.collapsed ? res.collapse->last_converged : s.horizon;
  r.load_increase_pct = load_increase_pct(dae, s.s0 + noise.slow_at(t_last));
  r.final_b = res.b_svc_end;

  const std::string prefix = label + "/seed" + std::to_string(noise.seed) + "/";
  const Network& net = dae.network();
  std::vector<int> shown{cfg.svc_bus};
  for (int id : cfg.monitored) {
    if (id != cfg.svc_bus) shown.push_back(id);
  }
  const int n = dae.bus_count();
  for (const TrajectorySample& smp : res.trajectory) {
    for (int id : shown) {
      r.series.push_back({smp.t, prefix + "V_" + std::to_string(id),
                          smp.y[n + net.index_of(id)]});
    }
    r.series.push_back({smp.t, prefix + "b_svc", smp.b_svc});
    r.series.push_back({smp.t, prefix + "s", smp.s});
    const DaeInputs in{smp.s, smp.u, smp.b_svc};
    r.series.push_back({smp.t, prefix + "P_load", dae.load_power(in).sum().real()});
  }
  for (const ControlRecord& rec : ctl.log()) {
    if (!rec.acted) continue;
    for (size_t i = 0; i < cfg.monitored.size(); ++i) {
      const std::string id = std::to_string(cfg.monitored[i]);
      r.series.push_back({rec.t, prefix + "mean_" + id, rec.means[i]});
      r.series.push_back({rec.t, prefix + "var_" + id, rec.variances[i]});
      if (i < rec.thresholds.size()) {
        r.series.push_back({rec.t, prefix + "threshold_" + id, rec.thresholds[i]});
      }
    }
  }

  if (!s.output_dir.empty()) {
    std::filesystem::create_directories(s.output_dir);
    const std::string stem = s.output_dir + "/" + label + "_seed" + std::to_string(noise.seed);
    r.trajectory_path = stem + "_trajectory.csv";
    r.control_log_path = stem + "_control.csv";
    write_trajectory_csv(dae, res.trajectory, r.trajectory_path);
    write_control_log_csv(ctl.log(), cfg, r.control_log_path);
  }
  return r;
}

RunResult run_scenario(const Scenario& scenario, ControllerKind kind, uint64_t seed) {
  size_t index = scenario.controllers.size();
  for (size_t i = 0; i < scenario.controllers.size(); ++i) {
    if (scenario.controllers[i].config.kind == kind) {
      index = i;
      break;
    }
  }
  if (index == scenario.controllers.size()) {
    throw InvalidArgument(std::string("scenario has no ") + to_string(kind) + " controller");
  }
  // Only the selected controller needs preparing (and its thresholds).
  Scenario one = scenario;
  one.controllers = {scenario.controllers[index]};
  const PreparedScenario p = prepare_scenario(one);
  return run_prepared(p, 0, scenario_noise(p, seed));
}

const RunResult& ComparisonReport::result(uint64_t seed, const std::string& label) const {
  for (const RunResult& r : results) {
    if (r.seed == seed && r.label == label) return r;
  }
  throw InvalidArgument("no result for " + label + " on seed " + std::to_string(seed));
}

ComparisonReport summarize(std::string scenario, std::vector<std::string> labels,
                           std::vector<RunResult> results) {
  ComparisonReport rep;
  rep.scenario = std::move(scenario);
  rep.labels = std::move(labels);
  rep.results = std::move(results);
  for (const RunResult& r : rep.results) {
    if (std::find(rep.seeds.begin(), rep.seeds.end(), r.seed) == rep.seeds.end()) {
      rep.seeds.push_back(r.seed);
    }
  }
  for (const std::string& label : rep.labels) {
    ControllerSummary sum;
    sum.label = label;
    for (const RunResult& r : rep.results) {
      if (r.label != label) continue;
      sum.kind = r.kind;
      sum.mean_survival += r.survival_time;
      sum.mean_load_increase += r.load_increase_pct;
      sum.collapses += r.collapsed ? 1 : 0;
      ++sum.runs;
    }
    if (sum.runs > 0) {
      sum.mean_survival /= sum.runs;
      sum.mean_load_increase /= sum.runs;
    }
    rep.summaries.push_back(sum);
  }
  for (size_t i = 0; i < rep.labels.size(); ++i) {
    for (size_t j = i + 1; j < rep.labels.size(); ++j) {
      PairDelta d;
      d.better = rep.labels[j];
      d.worse = rep.labels[i];
      for (uint64_t seed : rep.seeds) {
        d.per_seed.push_back(rep.result(seed, d.better).survival_time -
                             rep.result(seed, d.worse).survival_time);
      }
      for (double v : d.per_seed) d.mean += v;
      if (!d.per_seed.empty()) d.mean /= d.per_seed.size();
      rep.deltas.push_back(std::move(d));
    }
  }
  int ordered = 0, agreeing = 0;
  for (uint64_t seed : rep.seeds) {
    bool strict = true, agree = true;
    for (size_t i = 0; i < rep.labels.size(); ++i) {
      const RunResult& a = rep.result(seed, rep.labels[i]);
      for (size_t j = i + 1; j < rep.labels.size(); ++j) {
        const RunResult& b = rep.result(seed, rep.labels[j]);
        if (!(b.survival_time > a.survival_time)) strict = false;
        const auto sign = [](double x) { return (x > 0.0) - (x < 0.0); };
        if (sign(b.survival_time - a.survival_time) !=
            sign(b.load_increase_pct - a.load_increase_pct)) {
          agree = false;
        }
      }
    }
    ordered += strict ? 1 : 0;
    agreeing += agree ? 1 : 0;
  }
  if (!rep.seeds.empty()) {
    rep.ordering_verdict = static_cast<double>(ordered) / rep.seeds.size();
    rep.load_ordering_agreement = static_cast<double>(agreeing) / rep.seeds.size();
  }
  return rep;
}

ComparisonReport compare_controllers(const Scenario& scenario) {
  if (scenario.controllers.size() < 2) {
    throw InvalidArgument("a comparison needs at least two controllers");
  }
  const PreparedScenario p = prepare_scenario(scenario);
  std::vector<RunResult> results;
  for (uint64_t seed : scenario.seeds) {
    const NoiseRealization noise = scenario_noise(p, seed);
    for (size_t i = 0; i < p.configs.size(); ++i) {
      results.push_back(run_prepared(p, i, noise));
    }
  }
  std::vector<std::string> labels;
  for (const ControllerSpec& c : scenario.controllers) labels.push_back(c.label);
  return summarize(scenario.name, std::move(labels), std::move(results));
}

json report_summary_json(const ComparisonReport& rep) {
  json j;
  j["scenario"] = rep.scenario;
  j["labels"] = rep.labels;
  j["seeds"] = rep.seeds;
  j["controllers"] = json::array();
  for (const ControllerSummary& s : rep.summaries) {
    j["controllers"].push_back({{"label", s.label},
                                {"kind", to_string(s.kind)},
                                {"mean_survival", s.mean_survival},
                                {"mean_load_increase_pct", s.mean_load_increase},
                                {"collapses", s.collapses},
                                {"runs", s.runs}});
  }
  j["deltas"] = json::array();
  for (const PairDelta& d : rep.deltas) {
    j["deltas"].push_back({{"better", d.better},
                           {"worse", d.worse},
                           {"mean", d.mean},
                           {"per_seed", d.per_seed}});
  }
  j["ordering_verdict"] = rep.ordering_verdict;
  j["load_ordering_agreement"] = rep.load_ordering_agreement;
  return j;
}

namespace {

const char* kResultsHeader =
    "label,kind,seed,collapsed,survival_time,load_increase_pct,final_b,trajectory,"
    "control_log";

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void export_report(const ComparisonReport& rep, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const auto open = [&](const std::string& name) {
    std::ofstream out(dir + "/" + name);
    if (!out) throw IoError("cannot write '" + dir + "/" + name + "'");
    out << std::setprecision(17);
    return out;
  };
  {
    std::ofstream out = open("results.csv");
    out << kResultsHeader << '\n';
    for (const RunResult& r : rep.results) {
      out << r.label << ',' << to_string(r.kind) << ',' << r.seed << ','
          << (r.collapsed ? 1 : 0) << ',' << r.survival_time << ','
          << r.load_increase_pct << ',' << r.final_b << ',' << r.trajectory_path
          << ',' << r.control_log_path << '\n';
    }
    if (!out) throw IoError("failed writing results.csv in '" + dir + "'");
  }
  {
    std::ofstream out = open("summary.json");
    out << report_summary_json(rep).dump(2) << '\n';
  }
  {
    std::ofstream out = open("series.csv");
    out << "t,series,value\n";
    for (const RunResult& r : rep.results) {
      for (const SeriesPoint& p : r.series) {
        out << p.t << ',' << p.series << ',' << p.value << '\n';
      }
    }
    if (!out) throw IoError("failed writing series.csv in '" + dir + "'");
  }
}

std::vector<RunResult> read_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open results '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader) {
    throw SchemaError(path + ": unexpected results header");
  }
  std::vector<RunResult> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const std::vector<std::string> c = split_csv(line);
    if (c.size() != 9) {
      throw SchemaError(path + ":" + std::to_string(row) + ": expected 9 columns");
    }
    try {
      RunResult r;
      r.label = c[0];
      r.kind = controller_kind_from_string(c[1]);
      r.seed = std::stoull(c[2]);
      r.collapsed = c[3] == "1";
      r.survival_time = std::stod(c[4]);
      r.load_increase_pct = std::stod(c[5]);
      r.final_b = std::stod(c[6]);
      r.trajectory_path = c[7];
      r.control_log_path = c[8];
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw SchemaError(path + ":" + std::to_string(row) + ": malformed row");
    }
  }
  return out;
}

}  // namespace vstab
