#include "pignn/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "pignn/parallel.hpp"
#include "pignn/trainer.hpp"

namespace pignn {

std::string regime_label(std::span<const Scenario> scenarios) {
  bool mv = false, hv = false;
  for (const auto& s : scenarios) (s.regime == Regime::MV ? mv : hv) = true;
  if (mv && hv) return "HV+MV";
  return mv ? "MV" : "HV";
}

ScenarioError scenario_error(const Scenario& scenario, const State& predicted, bool include_pv_voltage) {
  const auto& ref = scenario.reference_state;
  const auto n = scenario.grid.size();
  if (predicted.size() != n) throw std::invalid_argument("prediction size does not match scenario");
  ScenarioError e;
  e.index = scenario.index;
  e.n = n;
  for (std::size_t i = 0; i < n; ++i) {
    const auto kind = scenario.grid.buses[i].kind;
    const double dv = predicted.v[i] - ref.v[i];
    const double dth = wrap_angle(predicted.theta[i] - ref.theta[i]) * 180.0 / std::numbers::pi;
    const bool v_counted = kind == BusType::PQ || (kind == BusType::PV && include_pv_voltage);
    const bool theta_counted = kind != BusType::Slack;
    if (!v_counted && dv != 0.0) throw std::logic_error("fixed voltage magnitude drifted at bus " + std::to_string(i));
    if (!theta_counted && dth != 0.0) throw std::logic_error("slack angle drifted at bus " + std::to_string(i));
    if (v_counted) {
      e.sse_v += dv * dv;
      ++e.count_v;
    }
    if (theta_counted) {
      e.sse_theta_deg += dth * dth;
      ++e.count_theta;
    }
  }
  return e;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of empty set");
  std::sort(values.begin(), values.end());
  const auto m = values.size() / 2;
  return values.size() % 2 == 1 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

EvalResult summarize(std::vector<ScenarioError> errors, std::string mode, std::string regime) {
  if (errors.empty()) throw std::invalid_argument("empty dataset");
  EvalResult r;
  r.mode = std::move(mode);
  r.regime = std::move(regime);
  r.scenarios = errors.size();
  double sv = 0.0, st = 0.0;
  std::size_t cv = 0, ct = 0;
  std::vector<double> reductions;
  for (const auto& e : errors) {
    sv += e.sse_v;
    cv += e.count_v;
    st += e.sse_theta_deg;
    ct += e.count_theta;
    reductions.push_back(e.merit_initial > 0.0 ? 1.0 - e.merit_final / e.merit_initial : 0.0);
  }
  r.rmse_v = cv ? std::sqrt(sv / static_cast<double>(cv)) : 0.0;
  r.rmse_theta_deg = ct ? std::sqrt(st / static_cast<double>(ct)) : 0.0;
  r.median_merit_reduction = median(reductions);
  r.per_scenario = std::move(errors);
  return r;
}

EvalResult rmse_eval(const ModelParams& params, std::span<const Scenario> dataset, const EvalOptions& options) {
  if (dataset.empty()) throw std::invalid_argument("empty dataset");
  if (options.mode == UnrollMode::Train) throw std::invalid_argument("evaluation needs an inference mode");
  std::vector<ScenarioError> errors;
  const auto bs = std::max<std::size_t>(1, options.batch_size);
  for (std::size_t lo = 0; lo < dataset.size(); lo += bs) {
    const auto hi = std::min(dataset.size(), lo + bs);
    std::vector<const Scenario*> chunk;
    for (auto i = lo; i < hi; ++i) chunk.push_back(&dataset[i]);
    State s0;
    const auto batch = pack(chunk, s0);
    const auto traj = unroll(batch, s0, params, options.K, options.mode, options.ls);
    const auto& last = traj.steps.back();
    for (std::size_t g = 0; g < chunk.size(); ++g) {
      auto e = scenario_error(*chunk[g], slice_state(batch, last.state, g), options.include_pv_voltage);
      e.merit_initial = traj.steps.front().merit[g];
      e.merit_final = last.merit[g];
      errors.push_back(e);
    }
  }
  return summarize(std::move(errors), mode_label(options.mode), regime_label(dataset));
}

// ---------------------------------------------------------------------------

std::optional<double> AblationTable::at(const std::string& mode, AggregatorKind kind, const std::string& regime,
                                        bool theta) const {
  const auto row = mode + "/" + to_string(kind);
  const auto col = regime + (theta ? ":theta" : ":V");
  const auto r = std::find(row_labels.begin(), row_labels.end(), row);
  const auto c = std::find(column_labels.begin(), column_labels.end(), col);
  if (r == row_labels.end() || c == column_labels.end()) throw std::out_of_range("no ablation cell " + row + " " + col);
  return cells[static_cast<std::size_t>(r - row_labels.begin())][static_cast<std::size_t>(c - column_labels.begin())];
}

void AblationTable::write_csv(std::ostream& out) const {
  out << "row";
  for (const auto& c : column_labels) out << ',' << c;
  out << '\n';
  const auto old = out.precision(9);
  for (std::size_t r = 0; r < cells.size(); ++r) {
    out << row_labels[r];
    for (const auto& cell : cells[r]) {
      out << ',';
      if (cell) out << *cell;
      else out << kGapMarker;
    }
    out << '\n';
  }
  out.precision(old);
}

AblationTable ablation_matrix(const std::map<std::pair<AggregatorKind, std::string>, const ModelParams*>& models,
                              const std::map<std::string, std::vector<Scenario>>& datasets,
                              const EvalOptions& base_options) {
  AblationTable t;
  for (const char* regime : kAblationRegimes) {
    t.column_labels.push_back(std::string(regime) + ":V");
    t.column_labels.push_back(std::string(regime) + ":theta");
  }
  for (const char* mode : kAblationModes) {
    for (auto kind : {AggregatorKind::MLP, AggregatorKind::Attention}) {
      t.row_labels.push_back(std::string(mode) + "/" + to_string(kind));
      std::vector<std::optional<double>> row;
      for (const char* regime : kAblationRegimes) {
        const auto m = models.find({kind, regime});
        const auto d = datasets.find(regime);
        if (m == models.end() || m->second == nullptr || d == datasets.end() || d->second.empty()) {
          row.emplace_back();
          row.emplace_back();
          continue;
        }
        auto opts = base_options;
        opts.mode = mode_from_label(mode);
        const auto r = rmse_eval(*m->second, d->second, opts);
        row.emplace_back(r.rmse_v);
        row.emplace_back(r.rmse_theta_deg);
      }
      t.cells.push_back(std::move(row));
    }
  }
  return t;
}

// ---------------------------------------------------------------------------

std::vector<double> time_repeats(const std::function<void()>& fn, std::size_t warmup, std::size_t repeats) {
  if (repeats == 0) throw std::invalid_argument("need at least one timed repeat");
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::vector<double> t;
  for (std::size_t i = 0; i < repeats; ++i) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  return t;
}

Scenario bench_scenario(Regime regime, std::size_t n, std::uint64_t seed, const NrOptions& nr) {
  SynthConfig screen;
  screen.nr = nr;
  screen.nr.max_iter = std::min(nr.max_iter, kScreenIterations);
  for (std::uint64_t attempt = 0; attempt < 200; ++attempt) {
    const auto draw_seed = derive_seed(seed, n * 1000 + attempt);
    // Large random grids are overloaded at full setpoints; shrink them
    // toward flat on the same draw until a power-flow solution exists.
    for (screen.setpoint_scale = 1.0; screen.setpoint_scale >= kMinSetpointScale; screen.setpoint_scale *= 0.5) {
      auto out = synthesize_scenario(regime, n, draw_seed, screen);
      if (out.scenario) {
        if (screen.nr.max_iter == nr.max_iter) return std::move(*out.scenario);
        auto full = screen;
        full.nr = nr;
        auto again = synthesize_scenario(regime, n, draw_seed, full);
        if (again.scenario) return std::move(*again.scenario);
      }
      if (out.rejection != Rejection::NonConvergent) break;
    }
  }
  throw std::runtime_error("no converged scenario of size " + std::to_string(n) + " after 200 draws");
}

std::vector<std::vector<std::size_t>> pack_micro_batches(std::span<const std::size_t> sizes, std::size_t budget) {
  std::vector<std::size_t> order(sizes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return sizes[a] > sizes[b]; });
  std::vector<std::vector<std::size_t>> bins;
  std::vector<std::size_t> load;
  for (auto i : order) {
    if (sizes[i] > budget)
      throw std::invalid_argument("micro-batch budget of " + std::to_string(budget) + " buses is smaller than a " +
                                  std::to_string(sizes[i]) + "-bus scenario");
    std::size_t b = 0;
    while (b < bins.size() && load[b] + sizes[i] > budget) ++b;
    if (b == bins.size()) {
      bins.emplace_back();
      load.push_back(0);
    }
    bins[b].push_back(i);
    load[b] += sizes[i];
  }
  return bins;
}

namespace {

struct Prepared {
  GraphBatch batch;
  State state0;
};

Prepared prepare(std::span<const Scenario* const> scenarios) {
  Prepared p;
  p.batch = pack(scenarios, p.state0);
  return p;
}

BenchRecord record(std::size_t n, std::string solver, std::string regime, std::size_t scenarios,
                   std::size_t workers, std::size_t micro_batch, std::vector<double> times) {
  BenchRecord r{n, std::move(solver), std::move(regime), scenarios, workers, micro_batch, 0.0, std::move(times)};
  r.median_seconds = median(r.repeats);
  return r;
}

void solve_nr(const Scenario& s, const AdmittanceMatrix& y, const NrOptions& nr) {
  const auto out = nr_solve(s.grid, y, s.initial_state, nr);
  if (!out.second.converged) throw std::runtime_error("benchmark NR solve did not converge: " + out.second.reason);
}

}  // namespace

std::vector<BenchRecord> bench_single(std::span<const std::size_t> sizes, const ModelParams& mlp,
                                      const ModelParams& attn, const BenchOptions& options) {
  std::vector<BenchRecord> out;
  for (const auto n : sizes) {
    const auto sc = bench_scenario(options.grid_regime, n, options.seed, options.nr);
    const auto y = build_admittance(sc.grid);
    const Scenario* one[] = {&sc};
    const auto prep = prepare(one);

    out.push_back(record(n, kSolverNr, "single", 1, 1, 1,
                         time_repeats([&] { solve_nr(sc, y, options.nr); }, options.warmup, options.repeats)));
    out.push_back(record(n, kSolverMlp, "single", 1, 1, 1, time_repeats([&] {
                           unroll(prep.batch, prep.state0, mlp, options.K, UnrollMode::Plain, options.ls);
                         }, options.warmup, options.repeats)));
    out.push_back(record(n, kSolverAttnLs, "single", 1, 1, 1, time_repeats([&] {
                           unroll(prep.batch, prep.state0, attn, options.K, UnrollMode::CapsLs, options.ls);
                         }, options.warmup, options.repeats)));
  }
  return out;
}

std::vector<BenchRecord> bench_multi(std::span<const std::size_t> sizes, std::size_t count, const ModelParams& mlp,
                                     const ModelParams& attn, const BenchOptions& options) {
  if (count == 0) throw std::invalid_argument("bench_multi needs at least one scenario per size");
  std::vector<BenchRecord> out;
  for (const auto n : sizes) {
    if (n > options.node_budget)
      throw std::invalid_argument("micro-batch budget of " + std::to_string(options.node_budget) +
                                  " buses is smaller than a " + std::to_string(n) + "-bus scenario");
    std::vector<Scenario> scs(count);
    parallel_for(count, options.workers, [&](std::size_t i) {
      scs[i] = bench_scenario(options.grid_regime, n, derive_seed(derive_seed(options.seed, n), i), options.nr);
      scs[i].index = i;
    });

    std::vector<AdmittanceMatrix> ys;
    for (const auto& s : scs) ys.push_back(build_admittance(s.grid));
    out.push_back(record(n, kSolverNr, "multi", count, options.workers, 1, time_repeats([&] {
                           parallel_for(count, options.workers, [&](std::size_t i) { solve_nr(scs[i], ys[i], options.nr); });
                         }, options.warmup, options.repeats)));

    std::vector<std::size_t> node_counts;
    for (const auto& s : scs) node_counts.push_back(s.grid.size());
    const auto bins = pack_micro_batches(node_counts, options.node_budget);
    std::vector<Prepared> streamed, single;
    std::size_t widest = 0;
    for (const auto& bin : bins) {
      std::vector<const Scenario*> members;
      for (auto i : bin) members.push_back(&scs[i]);
      streamed.push_back(prepare(members));
      widest = std::max(widest, bin.size());
    }
    for (const auto& s : scs) {
      const Scenario* one[] = {&s};
      single.push_back(prepare(one));
    }

    auto run = [&](const std::vector<Prepared>& parts, const ModelParams& params, UnrollMode mode) {
      return time_repeats([&] {
        for (const auto& p : parts) unroll(p.batch, p.state0, params, options.K, mode, options.ls);
      }, options.warmup, options.repeats);
    };
    out.push_back(record(n, kSolverMlp, "multi", count, 1, widest, run(streamed, mlp, UnrollMode::Plain)));
    out.push_back(record(n, kSolverMlp, "multi", count, 1, 1, run(single, mlp, UnrollMode::Plain)));
    out.push_back(record(n, kSolverAttnLs, "multi", count, 1, widest, run(streamed, attn, UnrollMode::CapsLs)));
    out.push_back(record(n, kSolverAttnLs, "multi", count, 1, 1, run(single, attn, UnrollMode::CapsLs)));
  }
  return out;
}

std::vector<EvalResult> size_generalization(const ModelParams& params, std::span<const std::size_t> sizes,
                                            std::size_t count_per_size, std::uint64_t seed,
                                            const EvalOptions& options, Regime regime) {
  std::vector<EvalResult> out;
  for (const auto n : sizes) {
    std::vector<Scenario> scs;
    for (std::size_t i = 0; i < count_per_size; ++i) {
      scs.push_back(bench_scenario(regime, n, derive_seed(seed, i)));
      scs.back().index = i;
    }
    auto r = rmse_eval(params, scs, options);
    r.regime = std::string(to_string(regime)) + ":" + std::to_string(n);
    out.push_back(std::move(r));
  }
  return out;
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("need at least two points for a slope");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

void write_eval_csv(std::ostream& out, std::span<const EvalResult> results, const std::string& model) {
  const auto old = out.precision(9);
  out << "model,regime,mode,scenarios,rmse_v_pu,rmse_theta_deg,median_merit_reduction\n";
  for (const auto& r : results)
    out << model << ',' << r.regime << ',' << r.mode << ',' << r.scenarios << ',' << r.rmse_v << ','
        << r.rmse_theta_deg << ',' << r.median_merit_reduction << '\n';
  out.precision(old);
}

void write_bench_csv(std::ostream& out, std::span<const BenchRecord> records) {
  std::size_t max_rep = 0;
  for (const auto& r : records) max_rep = std::max(max_rep, r.repeats.size());
  const auto old = out.precision(9);
  out << "n,solver,regime,scenarios,workers,micro_batch,median_seconds,throughput";
  for (std::size_t i = 0; i < max_rep; ++i) out << ",repeat_" << i;
  out << '\n';
  for (const auto& r : records) {
    out << r.n << ',' << r.solver << ',' << r.regime << ',' << r.scenarios << ',' << r.workers << ','
        << r.micro_batch << ',' << r.median_seconds << ',' << r.throughput();
    for (std::size_t i = 0; i < max_rep; ++i) {
      out << ',';
      if (i < r.repeats.size()) out << r.repeats[i];
    }
    out << '\n';
  }
  out.precision(old);
}

void write_bench_long_csv(std::ostream& out, std::span<const BenchRecord> records) {
  const auto old = out.precision(9);
  out << "n,solver,regime,median_seconds\n";
  for (const auto& r : records) {
    auto solver = r.solver;
    if (r.regime == "multi" && r.solver != kSolverNr && r.micro_batch == 1) solver += "-batch1";
    out << r.n << ',' << solver << ',' << r.regime << ',' << r.median_seconds << '\n';
  }
  out.precision(old);
}

}  // namespace pignn
