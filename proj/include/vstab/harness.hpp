#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "vstab/case_io.hpp"
#include "vstab/controllers.hpp"
#include "vstab/dynamics.hpp"
#include "vstab/stochastic.hpp"

namespace vstab {

enum class DriftMode { kMonotone, kWiener };
const char* to_string(DriftMode mode);

/// Slow loading drift, sampled every `step` seconds and held in between.
struct DriftSpec {
  DriftMode mode = DriftMode::kMonotone;
  double rate = 5e-4;       // monotone: ds/dt [1/s]
  double diffusion = 0.0;   // wiener: D [1/s]
  double step = 0.01;       // [s]
};

/// First-passage margin and refresh policy used by the variance controller.
struct MarginSpec {
  double sp_star = 0.99;
  double horizon = 600.0;   // look-ahead [s]
  double diffusion = 0.0;   // D assumed by the margin [1/s]
  double refresh_db = 0.05;
  int refresh_windows = 10;
};

/// One controller of a comparison. `k_v_auto` replaces k_v by the tuning
/// recipe K_v = K_m * 0.02 / sigma2_crit(initial), i.e. the variance term
/// matches the magnitude term of a 0.02 p.u. deficit when the measured
/// variance is twice its threshold.
struct ControllerSpec {
  std::string label;
  ControllerConfig config;
  bool k_v_auto = false;
};

struct Scenario {
  std::string name;
  std::string case_id;
  int svc_bus = 0;
  double v_target = 1.0;             // sets the initial susceptance...
  std::optional<double> b_initial;   // ...unless given explicitly
  std::vector<int> loading_buses;    // k = 1 on these; empty keeps the case's k
  double s0 = 0.0;                   // loading at t = 0
  DriftSpec drift;
  double ou_e = 10.0;
  double ou_sigma = 0.02;
  std::vector<int> noise_buses;      // empty = every load bus
  MarginSpec margin;
  std::vector<ControllerSpec> controllers;
  double horizon = 600.0;
  double dt = 0.01;
  int record_every = 10;             // trajectory decimation [steps]
  std::vector<uint64_t> seeds{1};
  std::string output_dir;            // empty: nothing written

  /// Throws InvalidArgument on inconsistent settings.
  void validate() const;
};

/// Strict parse; unknown fields are rejected with their JSON path.
Scenario parse_scenario(const nlohmann::json& doc);
nlohmann::json serialize_scenario(const Scenario& scenario);
/// Bundled scenario by name, or a scenario file by path.
Scenario load_scenario(const std::string& name_or_path);
std::vector<std::string> bundled_scenario_names();
const std::string& bundled_scenario_text(const std::string& name);

/// Command-line overrides; set fields win over the file.
struct ScenarioOverrides {
  std::optional<double> horizon;
  std::optional<double> dt;
  std::optional<double> ou_sigma;
  std::optional<double> drift_rate;
  std::optional<int> seed_count;     // seeds 1..k
  std::optional<uint64_t> seed;      // a single seed
  std::optional<std::string> output_dir;
};
void apply_overrides(Scenario& scenario, const ScenarioOverrides& overrides);

/// Case, DAE, initial susceptance and resolved controller configs shared by
/// every run of a scenario.
struct PreparedScenario {
  Scenario scenario;
  Case grid;                 // network with the scenario's loading direction
  DaeSystem dae;
  OUParams ou;
  double b_initial = 0.0;
  VbcOrchestrator orchestrator;
  std::optional<VbcOrchestrator::Refresh> initial_thresholds;
  std::vector<ControllerConfig> configs;  // one per scenario controller
};

/// Throws InitializationCollapse when the base case is infeasible.
PreparedScenario prepare_scenario(const Scenario& scenario);

/// Noise for one seed; every controller of a comparison replays it.
NoiseRealization scenario_noise(const PreparedScenario& prepared, uint64_t seed);

/// One (t, series, value) row of the plot table.
struct SeriesPoint {
  double t = 0.0;
  std::string series;
  double value = 0.0;
};

struct RunResult {
  std::string label;
  ControllerKind kind = ControllerKind::kRBC;
  uint64_t seed = 0;
  bool collapsed = false;
  double survival_time = 0.0;       // bifurcation time, or the horizon
  double load_increase_pct = 0.0;   // at the last converged step
  double final_b = 0.0;
  std::string trajectory_path;
  std::string control_log_path;
  std::vector<SeriesPoint> series;  // not part of the results table
};

/// Runs controller `index` of the scenario on the given noise.
RunResult run_prepared(const PreparedScenario& prepared, size_t index,
                       const NoiseRealization& noise);
/// Runs the first controller of kind `kind`.
RunResult run_scenario(const Scenario& scenario, ControllerKind kind,
                       uint64_t seed);

struct ControllerSummary {
  std::string label;
  ControllerKind kind = ControllerKind::kRBC;
  double mean_survival = 0.0;
  double mean_load_increase = 0.0;
  int collapses = 0;
  int runs = 0;
};

struct PairDelta {
  std::string better;  // later in the controller list
  std::string worse;
  std::vector<double> per_seed;  // survival(better) - survival(worse)
  double mean = 0.0;
};

struct ComparisonReport {
  std::string scenario;
  std::vector<std::string> labels;  // expected ascending survival order
  std::vector<uint64_t> seeds;
  std::vector<RunResult> results;   // seed-major, then controller order
  std::vector<ControllerSummary> summaries;
  std::vector<PairDelta> deltas;
  /// Fraction of seeds whose survival strictly increases along `labels`.
  double ordering_verdict = 0.0;
  /// Fraction of seeds whose load-increase ranking equals the survival one.
  double load_ordering_agreement = 0.0;

  const RunResult& result(uint64_t seed, const std::string& label) const;
};

/// Means, deltas and verdicts from per-run results.
ComparisonReport summarize(std::string scenario, std::vector<std::string> labels,
                           std::vector<RunResult> results);

/// Runs every controller on every seed with shared noise per seed.
ComparisonReport compare_controllers(const Scenario& scenario);

/// Writes results.csv, summary.json and series.csv (t, series, value) into
/// `dir`, creating it if needed.
void export_report(const ComparisonReport& report, const std::string& dir);
std::vector<RunResult> read_results_csv(const std::string& path);
nlohmann::json report_summary_json(const ComparisonReport& report);

}  // namespace vstab
