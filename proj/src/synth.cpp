#include "pignn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>

#include "pignn/parallel.hpp"

namespace pignn {

RegimeRanges RegimeRanges::mv() {
  RegimeRanges r;
  r.regime = Regime::MV;
  r.v_base = 10e3;
  r.s_base = 10e6;
  r.length_km = {1.0, 20.0};
  r.r_per_km = {0.5, 0.6};
  r.x_per_km = {0.3, 0.35};
  r.c_per_km = {8.0, 14.0};
  r.p_mw = {-5.0, 5.0};
  r.q_mvar = {-2.0, 2.0};
  return r;
}

RegimeRanges RegimeRanges::hv() {
  RegimeRanges r;
  r.regime = Regime::HV;
  r.v_base = 110e3;
  r.s_base = 100e6;
  r.length_km = {1.0, 50.0};
  r.r_per_km = {0.15, 0.2};
  r.x_per_km = {0.35, 0.45};
  r.c_per_km = {8.0, 10.0};
  r.p_mw = {-300.0, 300.0};
  r.q_mvar = {-150.0, 150.0};
  return r;
}

RegimeRanges RegimeRanges::of(Regime regime) { return regime == Regime::MV ? mv() : hv(); }

EdgeList sample_topology(std::size_t n, Rng& rng, double extra_edge_fraction) {
  EdgeList edges;
  if (n < 2) return edges;
  auto add = [&](std::size_t a, std::size_t b) { edges.emplace_back(std::min(a, b), std::max(a, b)); };

  if (n == 2) {
    add(0, 1);
  } else {
    // Pruefer decoding gives a uniformly random labelled tree.
    std::vector<std::size_t> code(n - 2);
    for (auto& c : code) c = rng.index(n);
    std::vector<std::size_t> degree(n, 1);
    for (auto c : code) ++degree[c];
    std::set<std::size_t> leaves;
    for (std::size_t i = 0; i < n; ++i)
      if (degree[i] == 1) leaves.insert(i);
    for (auto c : code) {
      const auto leaf = *leaves.begin();
      leaves.erase(leaves.begin());
      add(leaf, c);
      if (--degree[c] == 1) leaves.insert(c);
    }
    const auto u = *leaves.begin();
    const auto w = *std::next(leaves.begin());
    add(u, w);
  }

  const std::size_t max_edges = n * (n - 1) / 2;
  std::size_t extra = static_cast<std::size_t>(std::floor(extra_edge_fraction * static_cast<double>(n)));
  extra = std::min(extra, max_edges - edges.size());
  std::set<std::pair<std::size_t, std::size_t>> present(edges.begin(), edges.end());
  while (extra > 0) {
    const auto a = rng.index(n);
    const auto b = rng.index(n);
    if (a == b) continue;
    const std::pair key{std::min(a, b), std::max(a, b)};
    if (!present.insert(key).second) continue;
    edges.push_back(key);
    --extra;
  }
  return edges;
}

std::vector<BusType> assign_bus_types(std::size_t n, Rng& rng, double pv_probability) {
  std::vector<BusType> types(n, BusType::PQ);
  if (n == 0) return types;
  types[0] = BusType::Slack;
  for (std::size_t i = 1; i < n; ++i) types[i] = rng.bernoulli(pv_probability) ? BusType::PV : BusType::PQ;
  return types;
}

OperatingPoint sample_operating_point(const RegimeRanges& ranges, std::span<const BusType> types, Rng& rng) {
  OperatingPoint op;
  op.buses.resize(types.size());
  op.initial_state.v.assign(types.size(), 1.0);
  op.initial_state.theta.assign(types.size(), 0.0);
  for (std::size_t i = 0; i < types.size(); ++i) {
    auto& bus = op.buses[i];
    bus.kind = types[i];
    switch (types[i]) {
      case BusType::Slack:
        bus.v_set = ranges.v_set.sample(rng);
        bus.theta_set = 0.0;
        op.initial_state.v[i] = bus.v_set;
        break;
      case BusType::PV:
        bus.p_mw = ranges.p_mw.sample(rng);
        bus.v_set = ranges.v_set.sample(rng);
        op.initial_state.v[i] = bus.v_set;
        break;
      case BusType::PQ:
        bus.p_mw = ranges.p_mw.sample(rng);
        bus.q_mvar = ranges.q_mvar.sample(rng);
        bus.v_set = 1.0;
        break;
    }
  }
  return op;
}

const char* to_string(Rejection r) {
  switch (r) {
    case Rejection::None: return "none";
    case Rejection::NonConvergent: return "non-convergent";
    case Rejection::Disconnected: return "disconnected";
    case Rejection::Degenerate: return "degenerate";
  }
  return "?";
}

SynthesisOutcome synthesize_scenario(Regime regime, std::size_t n, std::uint64_t seed, const SynthConfig& cfg) {
  SynthesisOutcome out;
  if (n < 2) {
    out.rejection = Rejection::Degenerate;
    out.detail = "grid needs at least two buses";
    return out;
  }
  Rng rng(seed);
  const auto ranges = RegimeRanges::of(regime);
  const auto edges = sample_topology(n, rng, cfg.extra_edge_fraction);
  const auto types = assign_bus_types(n, rng, cfg.pv_probability);

  EngineeringGrid eng;
  eng.v_base = ranges.v_base;
  eng.s_base = ranges.s_base;
  eng.regime = regime;
  for (auto [a, b] : edges) {
    EngineeringLine line;
    line.from = a;
    line.to = b;
    line.length_km = ranges.length_km.sample(rng);
    line.r_ohm_per_km = ranges.r_per_km.sample(rng);
    line.x_ohm_per_km = ranges.x_per_km.sample(rng);
    line.c_nf_per_km = ranges.c_per_km.sample(rng);
    eng.lines.push_back(line);
  }
  auto op = sample_operating_point(ranges, types, rng);
  eng.buses = std::move(op.buses);
  if (cfg.setpoint_scale != 1.0)
    for (std::size_t i = 0; i < n; ++i) {
      auto& b = eng.buses[i];
      b.p_mw *= cfg.setpoint_scale;
      b.q_mvar *= cfg.setpoint_scale;
      if (b.kind != BusType::PQ) {
        b.v_set = 1.0 + cfg.setpoint_scale * (b.v_set - 1.0);
        op.initial_state.v[i] = b.v_set;
      }
    }

  if (!is_connected(n, edges)) {
    out.rejection = Rejection::Disconnected;
    out.detail = "topology not connected";
    return out;
  }

  Scenario sc;
  sc.grid = to_per_unit(eng, cfg.frequency_hz);
  sc.initial_state = std::move(op.initial_state);
  sc.seed = seed;
  sc.regime = regime;
  AdmittanceMatrix y;
  try {
    y = build_admittance(sc.grid);
  } catch (const std::invalid_argument& e) {
    out.rejection = std::string(e.what()) == "disconnected" ? Rejection::Disconnected : Rejection::Degenerate;
    out.detail = e.what();
    return out;
  }
  auto [solution, report] = nr_solve(sc.grid, y, sc.initial_state, cfg.nr);
  if (!report.converged) {
    out.rejection = Rejection::NonConvergent;
    out.detail = report.reason;
    return out;
  }
  for (double v : solution.v) {
    if (!(v > 0.0)) {
      out.rejection = Rejection::NonConvergent;
      out.detail = "non-physical voltage in solution";
      return out;
    }
  }
  sc.reference_state = std::move(solution);
  sc.nr_report = std::move(report);
  out.scenario = std::move(sc);
  return out;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

Fences iqr_fences(const std::vector<Scenario>& scenarios) {
  if (scenarios.empty()) throw std::invalid_argument("IQR filter needs a non-empty corpus");
  std::vector<double> pooled;
  for (const auto& sc : scenarios) pooled.insert(pooled.end(), sc.reference_state.v.begin(), sc.reference_state.v.end());
  const double q1 = quantile(pooled, 0.25);
  const double q3 = quantile(pooled, 0.75);
  const double iqr = q3 - q1;
  return {q1 - 1.5 * iqr, q3 + 1.5 * iqr};
}

bool within_fences(const Scenario& scenario, const Fences& fences) {
  return std::all_of(scenario.reference_state.v.begin(), scenario.reference_state.v.end(),
                     [&](double v) { return v >= fences.low && v <= fences.high; });
}

IqrResult iqr_filter(std::vector<Scenario> scenarios) {
  IqrResult result;
  result.fences = iqr_fences(scenarios);
  for (auto& sc : scenarios) {
    if (within_fences(sc, result.fences))
      result.kept.push_back(std::move(sc));
    else
      result.dropped.push_back(std::move(sc));
  }
  return result;
}

namespace {

struct SlotResult {
  std::optional<Scenario> scenario;
  std::size_t draws = 0;
  std::size_t non_convergent = 0;
  std::size_t disconnected = 0;
  std::size_t degenerate = 0;
};

SlotResult fill_slot(const CorpusRequest& req, std::uint64_t index) {
  SlotResult slot;
  const auto slot_seed = derive_seed(req.seed, index);
  Rng size_rng(slot_seed);
  const auto n = req.n_min + static_cast<std::size_t>(size_rng.index(req.n_max - req.n_min + 1));
  for (std::size_t attempt = 0; attempt < req.synth.max_draws; ++attempt) {
    ++slot.draws;
    auto outcome = synthesize_scenario(req.regime, n, derive_seed(slot_seed, attempt + 1), req.synth);
    switch (outcome.rejection) {
      case Rejection::None:
        outcome.scenario->index = index;
        slot.scenario = std::move(outcome.scenario);
        return slot;
      case Rejection::NonConvergent: ++slot.non_convergent; break;
      case Rejection::Disconnected: ++slot.disconnected; break;
      case Rejection::Degenerate: ++slot.degenerate; break;
    }
  }
  return slot;
}

void tally(SynthReport& report, const SlotResult& slot) {
  report.draws += slot.draws;
  report.non_convergent += slot.non_convergent;
  report.disconnected += slot.disconnected;
  report.degenerate += slot.degenerate;
  if (slot.scenario)
    ++report.accepted;
  else
    ++report.unfilled;
}

std::vector<SlotResult> fill_slots(const CorpusRequest& req, std::uint64_t first, std::size_t count) {
  std::vector<SlotResult> slots(count);
  parallel_for(count, req.workers, [&](std::size_t i) { slots[i] = fill_slot(req, first + i); });
  return slots;
}

}  // namespace

Corpus synthesize_corpus(const CorpusRequest& req) {
  if (req.n_min < 2 || req.n_max < req.n_min) throw std::invalid_argument("invalid grid size range");
  Corpus corpus;
  auto& report = corpus.report;
  report.requested = req.count;

  std::vector<Scenario> accepted;
  for (auto& slot : fill_slots(req, 0, req.count)) {
    tally(report, slot);
    if (slot.scenario) accepted.push_back(std::move(*slot.scenario));
  }
  if (!req.iqr || accepted.empty()) {
    corpus.scenarios = std::move(accepted);
    return corpus;
  }

  auto filtered = iqr_filter(std::move(accepted));
  report.fences = filtered.fences;
  report.iqr_dropped = filtered.dropped.size();
  corpus.scenarios = std::move(filtered.kept);

  // Refill dropped slots against the frozen fences; bounded by one extra pass
  // over the requested count.
  std::uint64_t next_index = req.count;
  const std::uint64_t last_index = 2 * static_cast<std::uint64_t>(req.count);
  while (corpus.scenarios.size() + report.unfilled < req.count && next_index < last_index) {
    const auto want = std::min<std::uint64_t>(req.count - report.unfilled - corpus.scenarios.size(),
                                              last_index - next_index);
    auto slots = fill_slots(req, next_index, static_cast<std::size_t>(want));
    next_index += want;
    for (auto& slot : slots) {
      tally(report, slot);
      if (!slot.scenario) {
        --report.unfilled;  // refill slots do not count as unfilled requests
        continue;
      }
      if (within_fences(*slot.scenario, report.fences))
        corpus.scenarios.push_back(std::move(*slot.scenario));
      else
        ++report.iqr_dropped;
    }
  }
  return corpus;
}

std::vector<std::string> check_scenario(const Scenario& sc, double tol) {
  std::vector<std::string> issues;
  const auto report = validate_grid(sc.grid);
  issues.insert(issues.end(), report.issues.begin(), report.issues.end());
  if (!report.valid()) return issues;

  if (!sc.nr_report.converged) issues.emplace_back("reference not converged");
  const auto y = build_admittance(sc.grid);
  const double f = merit_at(sc.grid, y, sc.reference_state);
  if (!(f <= tol)) issues.push_back("reference merit " + std::to_string(f) + " above tolerance");

  const auto ranges = RegimeRanges::of(sc.regime);
  if (sc.grid.v_base != ranges.v_base || sc.grid.s_base != ranges.s_base) issues.emplace_back("unexpected bases");
  const double z_base = Bases{sc.grid.v_base, sc.grid.s_base}.z_base();
  const double omega = 2.0 * std::numbers::pi * kDefaultFrequencyHz;
  auto within = [](double value, double lo, double hi) {
    const double slack = 1e-9 * std::max(std::abs(lo), std::abs(hi));
    return value >= lo - slack && value <= hi + slack;
  };
  const auto& L = ranges.length_km;
  for (const auto& line : sc.grid.lines) {
    const double r_ohm = line.r * z_base;
    const double x_ohm = line.x * z_base;
    const double c_nf = line.b_total / (omega * z_base) * 1e9;
    const bool ok = within(r_ohm, ranges.r_per_km.lo * L.lo, ranges.r_per_km.hi * L.hi) &&
                    within(x_ohm, ranges.x_per_km.lo * L.lo, ranges.x_per_km.hi * L.hi) &&
                    within(c_nf, ranges.c_per_km.lo * L.lo, ranges.c_per_km.hi * L.hi) &&
                    within(r_ohm / x_ohm, ranges.r_per_km.lo / ranges.x_per_km.hi,
                           ranges.r_per_km.hi / ranges.x_per_km.lo);
    if (!ok) issues.push_back("line parameters outside regime ranges");
  }
  for (const auto& bus : sc.grid.buses) {
    const double p_mw = bus.p_set * sc.grid.s_base / 1e6;
    const double q_mvar = bus.q_set * sc.grid.s_base / 1e6;
    if (!within(p_mw, ranges.p_mw.lo, ranges.p_mw.hi) || !within(q_mvar, ranges.q_mvar.lo, ranges.q_mvar.hi))
      issues.push_back("setpoint outside regime ranges at bus " + std::to_string(bus.id));
    if (bus.kind != BusType::PQ && !within(bus.v_set, ranges.v_set.lo, ranges.v_set.hi))
      issues.push_back("voltage setpoint outside range at bus " + std::to_string(bus.id));
  }
  for (std::size_t i = 0; i < sc.grid.size(); ++i) {
    const auto& bus = sc.grid.buses[i];
    if (bus.kind != BusType::PQ && sc.reference_state.v[i] != bus.v_set)
      issues.push_back("fixed voltage changed at bus " + std::to_string(i));
  }
  return issues;
}

}  // namespace pignn
