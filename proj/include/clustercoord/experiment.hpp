#pragma once

// Experiment orchestration: configuration, controller simulation, report
// files, comparison tables, parameter sweeps, ADMM iteration histograms and
// timing runs.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "clustercoord/admm.hpp"
#include "clustercoord/lyapunov.hpp"
#include "clustercoord/model.hpp"
#include "clustercoord/offline.hpp"
#include "clustercoord/traces.hpp"

namespace clustercoord {

class ExperimentError : public Error {
 public:
  using Error::Error;
};

enum class ControllerKind { Offline, Greedy, NoSharing, Proposed, Traditional, Admm };

const char* to_string(ControllerKind kind);
ControllerKind controller_from_string(const std::string& name);
/// Controllers that promise to keep every queue and battery in bounds.
bool guarantees_bounds(ControllerKind kind);

struct ControllerConfig {
  ControllerKind kind = ControllerKind::Proposed;
  std::optional<double> V;                // default: upper end of the admissible interval
  std::optional<double> price_threshold;  // greedy only; default: median buy price
  double share_scale = 1.0;               // multiplies every sharing cap
  // ADMM knobs.
  double rho = 1.0;
  int max_iterations = 20000;
  double tol = 1e-4;
  bool warm_start = false;
  bool record_iterations = false;  // write iterations.jsonl
};

struct TraceSource {
  std::optional<std::filesystem::path> csv_dir;
  int slots = 500;  // horizon; csv traces are cut to this length
  SynthShape shape;
};

struct ExperimentConfig {
  Cluster cluster;
  TraceSource trace;
  ControllerConfig controller;
  std::filesystem::path out_dir = "out";
  std::uint64_t seed = 1;
  /// Also solve the horizon LP and audit the measured gap.
  bool audit_gap = false;
  /// Battery level at the start, per back end; empty means delta.
  std::vector<double> initial_battery;

  void validate() const;
};

/// Reference setup: three back ends, two front ends, every link present.
nlohmann::json default_config_json();
/// Missing keys fall back to default_config_json(). Relative csv paths
/// resolve against `base_dir`.
ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json config_to_json(const ExperimentConfig& config);
/// Applies `dotted.key=value`; the value is parsed as JSON when it can be,
/// otherwise taken as a string. Unknown keys are rejected.
void apply_override(nlohmann::json& j, const std::string& assignment);
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

TraceSet make_traces(const ExperimentConfig& config);
/// Cluster with sharing caps scaled by the controller's share_scale.
Cluster effective_cluster(const ExperimentConfig& config);

struct SlotRecord {
  int slot = 0;
  CostBreakdown cost;
  double accumulated = 0.0;
  SystemState state_after;
  int violations = 0;
  int admm_iterations = 0;  // zero for other controllers
  bool truncated = false;
};

struct GapAudit {
  double offline_objective = 0.0;
  double measured = 0.0;  // (F_controller - F_offline) / T
  double bound = 0.0;     // (N1 + N2 + N3) / V
  bool holds() const { return measured <= bound; }
};

struct RunReport {
  ControllerKind controller = ControllerKind::Proposed;
  std::string controller_name;
  int slots = 0;
  LyapunovParams params;
  SystemState initial;
  std::vector<Decision> decisions;
  std::vector<SlotRecord> records;
  CostBreakdown total;
  double total_cost = 0.0;
  int violation_count = 0;
  std::vector<std::string> violation_messages;  // first few, with slot index
  std::vector<double> slot_seconds;             // wall clock, kept out of the main outputs
  int admm_truncated_slots = 0;
  std::optional<GapAudit> gap;
  std::optional<double> price_threshold;  // greedy
};

/// Simulates the configured controller over the trace. Errors from the
/// library are rethrown as ExperimentError naming the controller and slot.
/// `iteration_log` receives one JSON line per ADMM iteration when given.
RunReport run_experiment(const ExperimentConfig& config, const TraceSet& traces,
                         std::ostream* iteration_log = nullptr);
RunReport run_experiment(const ExperimentConfig& config);

/// Recomputes costs from the stored decisions and checks the accumulated
/// series against them. Returns the problems found.
std::vector<std::string> verify_report(const RunReport& report, const TraceSet& traces, const Cluster& cluster);

/// slots.csv, summary.json and timing.csv in `dir`.
void write_report(const RunReport& report, const std::filesystem::path& dir);
nlohmann::json report_summary(const RunReport& report);

struct ComparisonRow {
  std::string controller;
  CostBreakdown cost;
  double total = 0.0;
  std::optional<double> relative;  // percent of the offline total
  int violations = 0;
};

struct Comparison {
  std::vector<ComparisonRow> rows;
  std::vector<RunReport> runs;
};

/// Runs each controller on the same trace. The relative column is defined
/// only when an offline row is present with a positive total.
Comparison compare_algorithms(const ExperimentConfig& config, const std::vector<ControllerKind>& controllers);
std::string format_comparison(const Comparison& cmp);
void write_comparison_csv(const Comparison& cmp, const std::filesystem::path& path);

enum class SweepParameter { V, ShareScale };
SweepParameter sweep_parameter_from_string(const std::string& name);

struct SweepEntry {
  double value = 0.0;
  std::optional<std::string> skipped;  // reason, when the value was not run
  std::optional<RunReport> run;
};

struct SweepReport {
  SweepParameter parameter = SweepParameter::V;
  std::vector<SweepEntry> entries;
  double V_lo = 0.0, V_hi = 0.0;
};

/// One run per value. V values outside the admissible interval are skipped
/// with a reason; negative share scales likewise.
SweepReport sweep(const ExperimentConfig& config, SweepParameter parameter, const std::vector<double>& values);
/// Maps fractions in (0, 1] onto [V_lo, V_hi] relative to the largest one.
std::vector<double> admissible_v_grid(const LyapunovParams& params, const std::vector<double>& fractions);
void write_sweep(const SweepReport& report, const std::filesystem::path& dir);

/// Per-slot P2 optimum at each share scale along one trajectory, all with
/// the parameters of the unscaled cluster.
struct ShareAudit {
  std::vector<double> scales;
  std::vector<std::vector<double>> objective;  // [slot][scale]
  int worst_slot = -1;
  double worst_increase = 0.0;  // largest rise from one scale to the next
  bool monotone(double tol = 1e-9) const { return worst_increase <= tol; }
};
ShareAudit share_scale_audit(const ExperimentConfig& config, const TraceSet& traces, const RunReport& run,
                             const std::vector<double>& scales);

struct HistogramOptions {
  int bucket_width = 10;
  std::vector<int> thresholds{10, 20, 50, 100, 200, 500, 1000, 2000, 5000};
  double target = 0.21;  // acceptable fraction of slots above the threshold
};

struct IterationHistogram {
  std::vector<int> counts;  // per slot
  std::vector<std::pair<int, int>> buckets;  // (lower edge, slots)
  std::vector<std::pair<int, double>> exceed;  // (threshold, fraction of slots with count > threshold)
  int recommended = 0;  // smallest N with exceed fraction <= target
};

IterationHistogram iteration_histogram(const std::vector<int>& counts, const HistogramOptions& options = {});
/// Reads iterations.jsonl files; a slot's count is its largest n.
std::vector<int> load_iteration_counts(const std::vector<std::filesystem::path>& files);

struct ScalePoint {
  int backends = 0, frontends = 0;
  double untruncated_seconds = 0.0, truncated_seconds = 0.0;
  double untruncated_per_agent = 0.0, truncated_per_agent = 0.0;  // per agent per slot
  int untruncated_iterations = 0, truncated_iterations = 0;
  int truncated_slots = 0;
  double ratio() const { return untruncated_seconds > 0.0 ? truncated_seconds / untruncated_seconds : 0.0; }
};

struct ScaleOptions {
  int truncation = 50;
  int repeats = 3;  // timing is the minimum over repeats
};

/// Builds a uniform cluster of each size from the config's first front and
/// back end, then times untruncated and truncated ADMM on a synthetic trace.
std::vector<ScalePoint> scalability_sweep(const ExperimentConfig& config, const std::vector<int>& backends,
                                          const std::vector<int>& frontends, const ScaleOptions& options = {});
void write_scale_csv(const std::vector<ScalePoint>& points, const std::filesystem::path& path);

}  // namespace clustercoord
