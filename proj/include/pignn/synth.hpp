#pragma once

// Random MV/HV grid and operating-point synthesis with Newton-Raphson
// reference solutions and Tukey outlier filtering.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pignn/acpf.hpp"
#include "pignn/grid.hpp"
#include "pignn/random.hpp"

namespace pignn {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double x) const { return x >= lo && x <= hi; }
  double sample(Rng& rng) const { return rng.uniform(lo, hi); }
};

/// Engineering-unit parameter ranges for one voltage regime.
struct RegimeRanges {
  Regime regime = Regime::HV;
  double v_base = 0.0;  // V
  double s_base = 0.0;  // VA
  Interval length_km;
  Interval r_per_km;  // ohm/km
  Interval x_per_km;  // ohm/km
  Interval c_per_km;  // nF/km
  Interval p_mw;
  Interval q_mvar;
  Interval v_set{0.9, 1.1};  // p.u., Slack and PV

  static RegimeRanges mv();
  static RegimeRanges hv();
  static RegimeRanges of(Regime regime);
};

struct SynthConfig {
  double pv_probability = 0.2;
  double extra_edge_fraction = 0.2;
  std::size_t max_draws = 50;
  double frequency_hz = kDefaultFrequencyHz;
  /// Shrinks the drawn operating point toward the flat profile: P, Q and
  /// V_set - 1 of every bus are multiplied by it after sampling.
  double setpoint_scale = 1.0;
  NrOptions nr;
};

struct Scenario {
  Grid grid;  // p.u.
  State initial_state;
  State reference_state;
  NrReport nr_report;
  std::uint64_t seed = 0;
  std::uint64_t index = 0;  // slot in the requesting corpus; drives the split
  Regime regime = Regime::HV;
};

using EdgeList = std::vector<std::pair<std::size_t, std::size_t>>;

/// Uniform random spanning tree (Pruefer sequence) plus floor(fraction*n)
/// distinct non-tree pairs. Pairs are stored with first < second.
EdgeList sample_topology(std::size_t n, Rng& rng, double extra_edge_fraction = 0.2);

/// Bus 0 is Slack; every other bus is PV with the given probability.
std::vector<BusType> assign_bus_types(std::size_t n, Rng& rng, double pv_probability = 0.2);

struct OperatingPoint {
  std::vector<EngineeringBus> buses;
  State initial_state;
};

OperatingPoint sample_operating_point(const RegimeRanges& ranges, std::span<const BusType> types, Rng& rng);

enum class Rejection { None, NonConvergent, Disconnected, Degenerate };
const char* to_string(Rejection r);

struct SynthesisOutcome {
  std::optional<Scenario> scenario;
  Rejection rejection = Rejection::None;
  std::string detail;
};

/// One draw: topology, types, parameters, operating point, p.u. conversion
/// and NR reference. Deterministic in `seed`.
SynthesisOutcome synthesize_scenario(Regime regime, std::size_t n, std::uint64_t seed, const SynthConfig& cfg = {});

struct Fences {
  double low = 0.0;
  double high = 0.0;
};

/// Linear-interpolation quantile between order statistics (q in [0,1]).
double quantile(std::vector<double> values, double q);

struct IqrResult {
  std::vector<Scenario> kept;
  std::vector<Scenario> dropped;
  Fences fences;
};

/// Tukey filter over the pooled per-bus reference voltage magnitudes.
IqrResult iqr_filter(std::vector<Scenario> scenarios);
Fences iqr_fences(const std::vector<Scenario>& scenarios);
bool within_fences(const Scenario& scenario, const Fences& fences);

struct SynthReport {
  std::size_t requested = 0;
  std::size_t draws = 0;
  std::size_t accepted = 0;
  std::size_t non_convergent = 0;
  std::size_t disconnected = 0;
  std::size_t degenerate = 0;
  std::size_t iqr_dropped = 0;
  std::size_t unfilled = 0;  // slots that exhausted max_draws
  Fences fences;

  double acceptance_rate() const { return draws == 0 ? 0.0 : static_cast<double>(accepted) / draws; }
};

struct CorpusRequest {
  Regime regime = Regime::HV;
  std::size_t n_min = 4;
  std::size_t n_max = 32;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  bool iqr = true;
  SynthConfig synth;
};

struct Corpus {
  std::vector<Scenario> scenarios;  // ordered by slot index
  SynthReport report;
};

/// Synthesizes `count` slots (each retrying up to max_draws draws), applies
/// the IQR filter and refills dropped slots with new draws checked against the
/// frozen fences, so that up to `count` scenarios are returned.
Corpus synthesize_corpus(const CorpusRequest& request);

/// Every invariant a stored scenario must satisfy; empty when valid.
std::vector<std::string> check_scenario(const Scenario& scenario, double tol = 1e-8);

}  // namespace pignn
