#pragma once

// RMSE evaluation against Newton-Raphson references, the mode x aggregator x
// regime ablation table, and the NR-vs-PIGNN timing harness.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pignn/model.hpp"
#include "pignn/synth.hpp"

namespace pignn {

struct EvalOptions {
  UnrollMode mode = UnrollMode::CapsLs;
  std::size_t K = 10;
  LsConfig ls;
  /// Include PV magnitudes in the voltage RMSE (they are fixed, so their error is zero).
  bool include_pv_voltage = false;
  std::size_t batch_size = 16;
};

struct ScenarioError {
  std::uint64_t index = 0;
  std::size_t n = 0;
  double sse_v = 0.0;
  std::size_t count_v = 0;
  double sse_theta_deg = 0.0;
  std::size_t count_theta = 0;
  double merit_initial = 0.0;
  double merit_final = 0.0;
};

struct EvalResult {
  std::string mode;
  std::string regime;
  double rmse_v = 0.0;          // p.u.
  double rmse_theta_deg = 0.0;  // degrees
  std::size_t scenarios = 0;
  double median_merit_reduction = 0.0;  // 1 - F_K / F_0
  std::vector<ScenarioError> per_scenario;
};

/// Label of a scenario set: the common regime, or "HV+MV" when mixed.
std::string regime_label(std::span<const Scenario> scenarios);

/// Error of one predicted state against the scenario reference. Slack buses
/// are excluded from both terms and PV buses from the voltage term unless
/// include_pv_voltage; excluded entries must carry zero error.
ScenarioError scenario_error(const Scenario& scenario, const State& predicted, bool include_pv_voltage);

/// Pools per-scenario errors into one result.
EvalResult summarize(std::vector<ScenarioError> errors, std::string mode, std::string regime);

EvalResult rmse_eval(const ModelParams& params, std::span<const Scenario> dataset, const EvalOptions& options);

// ---------------------------------------------------------------------------
// Ablation table: rows are (mode, aggregator), columns are (regime, V | theta).

inline constexpr const char* kAblationModes[] = {"base", "caps", "ls", "caps_ls"};
inline constexpr const char* kAblationRegimes[] = {"HV", "MV", "HV+MV"};

struct AblationTable {
  std::vector<std::string> row_labels;     // e.g. "caps_ls/attn"
  std::vector<std::string> column_labels;  // e.g. "HV:V", "HV:theta"
  std::vector<std::vector<std::optional<double>>> cells;

  std::size_t rows() const { return cells.size(); }
  std::size_t cols() const { return column_labels.size(); }
  std::optional<double> at(const std::string& mode, AggregatorKind kind, const std::string& regime,
                           bool theta) const;
  /// Missing cells are written as the gap marker.
  void write_csv(std::ostream& out) const;
};

inline constexpr const char* kGapMarker = "n/a";

/// models maps (aggregator, regime label) to trained parameters; datasets maps
/// regime labels to test sets. Absent combinations become gaps.
AblationTable ablation_matrix(const std::map<std::pair<AggregatorKind, std::string>, const ModelParams*>& models,
                              const std::map<std::string, std::vector<Scenario>>& datasets,
                              const EvalOptions& base_options);

// ---------------------------------------------------------------------------
// Timing harness.

inline constexpr const char* kSolverNr = "NR";
inline constexpr const char* kSolverMlp = "PIGNN-MLP";
inline constexpr const char* kSolverAttnLs = "PIGNN-Attn-LS";

struct BenchRecord {
  std::size_t n = 0;
  std::string solver;
  std::string regime;  // single | multi
  std::size_t scenarios = 0;
  std::size_t workers = 1;
  std::size_t micro_batch = 1;  // scenarios per PIGNN forward pass (largest batch)
  double median_seconds = 0.0;
  std::vector<double> repeats;

  double throughput() const { return median_seconds > 0.0 ? static_cast<double>(scenarios) / median_seconds : 0.0; }
};

struct BenchOptions {
  std::size_t warmup = 2;
  std::size_t repeats = 5;
  std::size_t K = 10;
  LsConfig ls;
  std::size_t workers = 1;         // NR farm size
  std::size_t node_budget = 4096;  // PIGNN micro-batch budget in buses
  std::uint64_t seed = 1;
  Regime grid_regime = Regime::HV;
  NrOptions nr;
};

/// Median of `repeats` timed calls after `warmup` untimed ones.
std::vector<double> time_repeats(const std::function<void()>& fn, std::size_t warmup, std::size_t repeats);
double median(std::vector<double> values);

inline constexpr double kMinSetpointScale = 1.0 / 1024.0;
/// NR iteration limit while searching for a solvable setpoint scale.
inline constexpr std::size_t kScreenIterations = 10;

/// Scenario of exactly n buses for timing and size sweeps. Each draw is
/// retried with P, Q and V_set - 1 halved (down to kMinSetpointScale) until
/// NR converges within kScreenIterations; the accepted draw is then solved
/// with `nr`.
Scenario bench_scenario(Regime regime, std::size_t n, std::uint64_t seed, const NrOptions& nr = {});

/// Greedy first-fit by descending size under a bus budget; returns groups of
/// indices into `sizes`. Throws when one item exceeds the budget.
std::vector<std::vector<std::size_t>> pack_micro_batches(std::span<const std::size_t> sizes, std::size_t budget);

/// Per size: NR (single worker) and both PIGNN variants at batch 1.
std::vector<BenchRecord> bench_single(std::span<const std::size_t> sizes, const ModelParams& mlp,
                                      const ModelParams& attn, const BenchOptions& options);

/// Per size: NR farm over `count` scenarios, PIGNN streaming micro-batches,
/// and PIGNN batch-1 over the same scenarios for reference.
std::vector<BenchRecord> bench_multi(std::span<const std::size_t> sizes, std::size_t count, const ModelParams& mlp,
                                     const ModelParams& attn, const BenchOptions& options);

/// Frozen-model RMSE on synthesized grids of each size.
std::vector<EvalResult> size_generalization(const ModelParams& params, std::span<const std::size_t> sizes,
                                            std::size_t count_per_size, std::uint64_t seed,
                                            const EvalOptions& options, Regime regime = Regime::HV);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

// ---------------------------------------------------------------------------
// CSV.

void write_eval_csv(std::ostream& out, std::span<const EvalResult> results, const std::string& model);
void write_bench_csv(std::ostream& out, std::span<const BenchRecord> records);
/// Plot-ready long format: n, solver, regime, median_seconds.
void write_bench_long_csv(std::ostream& out, std::span<const BenchRecord> records);

}  // namespace pignn
