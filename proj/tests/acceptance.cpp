// Acceptance runner: one PASS/FAIL line per criterion, tolerances fixed here.
// Usage: pignn_acceptance [criterion ...]   (all when none given)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pignn/eval.hpp"
#include "pignn/io.hpp"
#include "pignn/random.hpp"
#include "support.hpp"

using namespace pignn;
namespace fs = std::filesystem;

namespace {

// Criterion 1
constexpr std::size_t kOracleScenarios = 200;
constexpr double kOracleTol = 1e-7;
// Criterion 2
constexpr std::size_t kJacobianPairs = 100;
constexpr double kJacobianStep = 1e-6;
constexpr double kJacobianTol = 1e-5;
// Criterion 3
constexpr double kGradStep = 1e-6;
constexpr double kGradTol = 1e-4;
// Criterion 4
constexpr std::size_t kLsPairs = 1000;
// Criteria 5 and 6
constexpr std::size_t kCorpus = 2000;
constexpr std::uint64_t kCorpusSeed = 7;
constexpr double kTrainLr = 3e-3;
constexpr std::size_t kTrainEpochs = 400;
constexpr std::size_t kK = 10;
constexpr double kAttnVsMlpRatio = 1.10;
constexpr double kMeritReduction = 0.90;
// Criterion 7
constexpr double kNrSlopeMin = 1.5;
constexpr double kPignnSlopeMax = 1.5;
constexpr std::size_t kMultiCount = 4;
// Criterion 8
constexpr std::size_t kSynthCount = 1000;
constexpr double kAcceptanceRate = 0.80;
// Runtime budgets (seconds)
constexpr double kMinute = 60.0;

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [violated]");
  }
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

void note(const std::string& line) {
  std::printf("    %s\n", line.c_str());
  std::fflush(stdout);
}

Corpus corpus(Regime regime, std::size_t n_min, std::size_t n_max, std::size_t count, std::uint64_t seed) {
  CorpusRequest req;
  req.regime = regime;
  req.n_min = n_min;
  req.n_max = n_max;
  req.count = count;
  req.seed = seed;
  req.workers = default_workers();
  return synthesize_corpus(req);
}

double median_of(std::vector<double> v) { return median(std::move(v)); }

// ---------------------------------------------------------------------------

Verdict oracle_equivalence() {
  const auto t0 = Clock::now();
  Verdict out;
  std::vector<Scenario> scs;
  for (auto regime : {Regime::HV, Regime::MV}) {
    auto c = corpus(regime, 2, 6, kOracleScenarios / 2, 101);
    for (auto& s : c.scenarios) scs.push_back(std::move(s));
  }
  double worst_v = 0.0, worst_t = 0.0;
  std::size_t nr_fail = 0, gs_fail = 0;
  for (const auto& sc : scs) {
    const auto y = build_admittance(sc.grid);
    const auto [x, rep] = nr_solve(sc.grid, y, sc.initial_state);
    if (!rep.converged) {
      ++nr_fail;
      continue;
    }
    const auto gs = testing::gauss_seidel(sc.grid, sc.initial_state);
    if (!gs) {
      ++gs_fail;
      continue;
    }
    for (std::size_t i = 0; i < sc.grid.size(); ++i) {
      worst_v = std::max(worst_v, std::abs(x.v[i] - gs->v[i]));
      worst_t = std::max(worst_t, testing::angle_distance(x.theta[i], gs->theta[i]));
    }
  }
  const double dt = since(t0);
  out.require(scs.size() == kOracleScenarios, std::to_string(scs.size()) + " scenarios (N <= 6, HV and MV)");
  out.require(nr_fail == 0 && gs_fail == 0,
              "unsolved: NR " + std::to_string(nr_fail) + ", Gauss-Seidel " + std::to_string(gs_fail));
  out.require(worst_v <= kOracleTol, "max |dV| " + fmt("%.2e", worst_v));
  out.require(worst_t <= kOracleTol, "max |dtheta| " + fmt("%.2e", worst_t));
  out.require(dt < kMinute, fmt("%.1f s", dt));
  return out;
}

Verdict jacobian_correctness() {
  const auto t0 = Clock::now();
  Verdict out;
  Rng rng(2024);
  double worst = 0.0;
  for (std::size_t t = 0; t < kJacobianPairs; ++t) {
    const std::size_t n = 2 + rng.index(11);
    Grid g;
    for (std::size_t i = 0; i < n; ++i) {
      const auto kind = i == 0 ? BusType::Slack : (rng.bernoulli(0.3) ? BusType::PV : BusType::PQ);
      g.buses.push_back(Bus{i, kind, rng.uniform(-1, 1), rng.uniform(-0.5, 0.5), rng.uniform(0.95, 1.05), 0.0});
    }
    for (std::size_t i = 1; i < n; ++i)
      g.lines.push_back(Line{static_cast<std::size_t>(rng.index(i)), i, rng.uniform(0.001, 0.2),
                             rng.uniform(0.01, 0.5), rng.uniform(0.0, 0.1)});
    for (std::size_t e = 0; e < n / 3; ++e) {
      const auto a = static_cast<std::size_t>(rng.index(n));
      const auto b = static_cast<std::size_t>(rng.index(n));
      if (a != b) g.lines.push_back(Line{a, b, rng.uniform(0.001, 0.2), rng.uniform(0.01, 0.5), 0.0});
    }
    State s;
    for (std::size_t i = 0; i < n; ++i) {
      s.v.push_back(rng.uniform(0.8, 1.2));
      s.theta.push_back(rng.uniform(-0.6, 0.6));
    }
    const auto jac = assemble_jacobian(build_admittance(g), s, bus_types(g));
    const auto rows_p = jac.theta_buses;
    const auto rows_q = jac.v_buses;
    std::vector<std::pair<bool, std::size_t>> cols;
    for (auto b : jac.theta_buses) cols.emplace_back(false, b);
    for (auto b : jac.v_buses) cols.emplace_back(true, b);
    Eigen::MatrixXd fd(jac.matrix.rows(), jac.matrix.cols());
    for (std::size_t c = 0; c < cols.size(); ++c) {
      auto plus = s, minus = s;
      (cols[c].first ? plus.v : plus.theta)[cols[c].second] += kJacobianStep;
      (cols[c].first ? minus.v : minus.theta)[cols[c].second] -= kJacobianStep;
      const auto sp = testing::complex_power(g, plus);
      const auto sm = testing::complex_power(g, minus);
      for (std::size_t r = 0; r < rows_p.size(); ++r)
        fd(static_cast<long>(r), static_cast<long>(c)) =
            (sp[rows_p[r]].real() - sm[rows_p[r]].real()) / (2 * kJacobianStep);
      for (std::size_t r = 0; r < rows_q.size(); ++r)
        fd(static_cast<long>(rows_p.size() + r), static_cast<long>(c)) =
            (sp[rows_q[r]].imag() - sm[rows_q[r]].imag()) / (2 * kJacobianStep);
    }
    if (fd.size() == 0) continue;
    const double rel = (jac.matrix - fd).cwiseAbs().maxCoeff() / fd.cwiseAbs().maxCoeff();
    worst = std::max(worst, rel);
  }
  const double dt = since(t0);
  out.require(worst <= kJacobianTol, std::to_string(kJacobianPairs) + " pairs, N in [2,12], max rel error " +
                                         fmt("%.2e", worst));
  out.require(dt < kMinute, fmt("%.1f s", dt));
  return out;
}

Verdict autodiff_correctness() {
  const auto t0 = Clock::now();
  Verdict out;
  double worst = 0.0;
  std::size_t tensors = 0, floor_passes = 0, failed = 0;
  for (auto regime : {Regime::HV, Regime::MV}) {
    std::optional<Scenario> sc;
    for (std::uint64_t seed = 40; !sc; ++seed) sc = synthesize_scenario(regime, 4, seed).scenario;
    State s0;
    const Scenario* one[] = {&*sc};
    const auto batch = pack(one, s0);
    for (auto kind : {AggregatorKind::MLP, AggregatorKind::Attention}) {
      ModelConfig mc;
      mc.kind = kind;
      ModelParams params(mc, 17);
      auto leaves = params.tensors();
      const auto reports = ad::gradient_check(
          leaves,
          [&](ad::Tape& tape) {
            const auto traj = unroll_train(tape, batch, s0, params, 3);
            return batch_physics_loss(tape, batch, traj, 0.9).loss;
          },
          kGradStep, kGradTol);
      for (std::size_t p = 0; p < reports.size(); ++p) {
        ++tensors;
        const auto& r = reports[p];
        if (!r.passed) {
          ++failed;
          note(std::string("gradient mismatch: ") + to_string(regime) + " " + to_string(kind) + " " +
               params.entries()[p].first + " rel " + fmt("%.2e", r.max_rel_error));
        }
        if (r.max_rel_error <= kGradTol) worst = std::max(worst, r.max_rel_error);
        else if (r.passed) ++floor_passes;
      }
    }
  }
  const double dt = since(t0);
  out.require(failed == 0, std::to_string(tensors) + " tensors (4 buses, K=3, both aggregators, HV and MV), " +
                               std::to_string(failed) + " failed");
  out.require(true, "max rel error " + fmt("%.2e", worst) + ", " + std::to_string(floor_passes) +
                        " structurally zero gradients within rounding");
  out.require(dt < kMinute, fmt("%.1f s", dt));
  return out;
}

Verdict line_search_contract() {
  const auto t0 = Clock::now();
  Verdict out;
  const LsConfig cfg;
  Rng rng(77);
  std::vector<Scenario> scs;
  for (auto regime : {Regime::HV, Regime::MV}) {
    auto c = corpus(regime, 4, 10, 25, 303 + static_cast<int>(regime));
    for (auto& s : c.scenarios) scs.push_back(std::move(s));
  }
  std::size_t accepted = 0, fallback = 0, rejected = 0, violations = 0;
  for (std::size_t trial = 0; trial < kLsPairs; ++trial) {
    const auto& sc = scs[trial % scs.size()];
    const auto y = build_admittance(sc.grid);
    const auto n = sc.grid.size();
    State s = sc.reference_state;
    std::vector<double> dth(n), dv(n), m(n * 4), dm(n * 4);
    const double spread = rng.uniform(0.0, 0.2);
    for (std::size_t i = 0; i < n; ++i) {
      s.v[i] = std::clamp(s.v[i] + rng.uniform(-spread, spread), cfg.v_min, cfg.v_max);
      s.theta[i] = wrap_angle(s.theta[i] + rng.uniform(-2 * spread, 2 * spread));
      // helpful, harmful and random directions
      const double gain = rng.bernoulli(0.5) ? rng.uniform(0.0, 2.0) : rng.uniform(-2.0, 0.0);
      dth[i] = rng.bernoulli(0.2) ? rng.uniform(-0.3, 0.3) : gain * (sc.reference_state.theta[i] - s.theta[i]);
      dv[i] = rng.bernoulli(0.2) ? rng.uniform(-0.1, 0.1) : gain * (sc.reference_state.v[i] - s.v[i]);
    }
    std::tie(dth, dv) = apply_caps(dth, dv, s.v, cfg);
    for (auto& x : m) x = rng.uniform(-1, 1);
    for (auto& x : dm) x = rng.uniform(-1, 1);
    auto f = [&](const State& t) { return merit_at(sc.grid, y, t); };
    const auto r = line_search_step(s, m, dth, dv, dm, f, cfg);
    bool ok = true;
    if (r.accepted) {
      ++accepted;
      if (r.fallback) {
        ++fallback;
        ok = r.alpha == cfg.alpha_min && r.merit_after < r.merit_before;
      } else {
        ok = r.merit_after <= (1 - cfg.c1 * r.alpha) * r.merit_before;
      }
      ok = ok && r.merit_after == f(r.state) && r.merit_before == f(s);
    } else {
      ++rejected;
      ok = r.state == s && r.latent == m && r.alpha == 0.0;
    }
    for (double v : r.state.v) ok = ok && v >= cfg.v_min && v <= cfg.v_max;
    for (double t : r.state.theta) ok = ok && t > -std::numbers::pi && t <= std::numbers::pi;
    if (!ok) ++violations;
  }
  const double dt = since(t0);
  out.require(violations == 0, std::to_string(kLsPairs) + " pairs: " + std::to_string(accepted) + " accepted (" +
                                   std::to_string(fallback) + " via alpha_min), " + std::to_string(rejected) +
                                   " rejected, " + std::to_string(violations) + " contract violations");
  out.require(accepted > 0 && rejected > 0 && fallback > 0, "all three branches exercised");
  out.require(dt < kMinute, fmt("%.1f s", dt));
  return out;
}

// Criteria 5 and 6 share one training run per aggregator.
struct Trained {
  SplitSets sets;
  ModelParams mlp, attn;
  double seconds = 0.0;
};

const Trained& trained() {
  static const Trained t = [] {
    Trained out;
    const auto t0 = Clock::now();
    const auto c = corpus(Regime::HV, 4, 8, kCorpus, kCorpusSeed);
    out.sets = split_corpus(c.scenarios);
    note("corpus " + std::to_string(c.scenarios.size()) + " HV scenarios (train " +
         std::to_string(out.sets.train.size()) + ", val " + std::to_string(out.sets.val.size()) + ", test " +
         std::to_string(out.sets.test.size()) + ")");
    for (auto kind : {AggregatorKind::MLP, AggregatorKind::Attention}) {
      ModelConfig mc;
      mc.kind = kind;
      TrainConfig tc;
      tc.K = kK;
      tc.lr_max = kTrainLr;
      tc.epochs = kTrainEpochs;
      const auto t1 = Clock::now();
      auto r = train(out.sets.train, out.sets.val, mc, tc);
      note(std::string(to_string(kind)) + ": val loss " + fmt("%.3e", r.initial_val_loss) + " -> " +
           fmt("%.3e", r.best_val_loss) + " (best epoch " + std::to_string(r.best_epoch) + ", " +
           fmt("%.0f s", since(t1)) + ")" + (r.diverged ? " diverged: " + r.message : ""));
      (kind == AggregatorKind::MLP ? out.mlp : out.attn) = std::move(r.best);
    }
    out.seconds = since(t0);
    return out;
  }();
  return t;
}

EvalResult evaluate(const ModelParams& params, UnrollMode mode) {
  EvalOptions opts;
  opts.mode = mode;
  opts.K = kK;
  return rmse_eval(params, trained().sets.test, opts);
}

Verdict ablation_ordering() {
  Verdict out;
  const auto& t = trained();
  std::map<std::pair<AggregatorKind, UnrollMode>, EvalResult> r;
  for (auto kind : {AggregatorKind::MLP, AggregatorKind::Attention}) {
    const auto& p = kind == AggregatorKind::MLP ? t.mlp : t.attn;
    std::string line = std::string(to_string(kind)) + " rmse_v:";
    for (const char* label : kAblationModes) {
      const auto mode = mode_from_label(label);
      r[{kind, mode}] = evaluate(p, mode);
      line += std::string(" ") + label + " " + fmt("%.4e", r[{kind, mode}].rmse_v);
    }
    note(line);
  }
  const auto v = [&](AggregatorKind k, UnrollMode m) { return r.at({k, m}).rmse_v; };
  const auto A = AggregatorKind::Attention, M = AggregatorKind::MLP;
  out.require(v(A, UnrollMode::CapsLs) < v(A, UnrollMode::Plain),
              "(a) attn caps_ls " + fmt("%.4e", v(A, UnrollMode::CapsLs)) + " < base " +
                  fmt("%.4e", v(A, UnrollMode::Plain)));
  out.require(v(A, UnrollMode::CapsLs) <= v(A, UnrollMode::Plain) && v(M, UnrollMode::CapsLs) <= v(M, UnrollMode::Plain),
              "(b) caps_ls <= base for both (mlp " + fmt("%.4e", v(M, UnrollMode::CapsLs)) + " vs " +
                  fmt("%.4e", v(M, UnrollMode::Plain)) + ")");
  const double ratio = v(A, UnrollMode::CapsLs) / v(M, UnrollMode::CapsLs);
  out.require(ratio <= kAttnVsMlpRatio, "(c) attn/mlp caps_ls ratio " + fmt("%.3f", ratio));
  out.require(t.seconds < 60 * kMinute, "corpus and training " + fmt("%.0f s", t.seconds));
  return out;
}

Verdict merit_reduction() {
  Verdict out;
  const auto r = evaluate(trained().attn, UnrollMode::CapsLs);
  out.require(r.median_merit_reduction >= kMeritReduction,
              "attn caps_ls median reduction of F over " + std::to_string(r.scenarios) + " test scenarios " +
                  fmt("%.4f", r.median_merit_reduction));
  return out;
}

Verdict scaling_shape() {
  const auto t0 = Clock::now();
  Verdict out;
  const std::vector<std::size_t> sizes = {64, 128, 256, 512, 1024};
  ModelConfig mc;
  mc.kind = AggregatorKind::MLP;
  const ModelParams mlp(mc, 1);
  mc.kind = AggregatorKind::Attention;
  const ModelParams attn(mc, 1);
  BenchOptions opts;
  opts.K = kK;
  opts.workers = default_workers();

  const auto single = bench_single(sizes, mlp, attn, opts);
  std::vector<double> x(sizes.begin(), sizes.end());
  for (const char* solver : {kSolverNr, kSolverMlp, kSolverAttnLs}) {
    std::vector<double> y;
    for (const auto& rec : single)
      if (rec.solver == solver) y.push_back(rec.median_seconds);
    const double slope = loglog_slope(x, y);
    std::string times;
    for (double s : y) times += " " + fmt("%.3g", s);
    note(std::string(solver) + " single medians (s):" + times);
    if (std::string(solver) == kSolverNr) out.require(slope > kNrSlopeMin, "NR slope " + fmt("%.2f", slope));
    else out.require(slope < kPignnSlopeMax, std::string(solver) + " slope " + fmt("%.2f", slope));
  }

  const auto multi = bench_multi(sizes, kMultiCount, mlp, attn, opts);
  bool streaming_wins = true;
  for (const auto n : sizes)
    for (const char* solver : {kSolverMlp, kSolverAttnLs}) {
      double stream = 0.0, one = 0.0;
      for (const auto& rec : multi) {
        if (rec.n != n || rec.solver != solver) continue;
        (rec.micro_batch == 1 ? one : stream) = rec.throughput();
      }
      // At one scenario per micro-batch both runs are the same computation.
      if (stream == 0.0) stream = one;
      note("N=" + std::to_string(n) + " " + solver + " throughput streaming " + fmt("%.1f", stream) + "/s, batch-1 " +
           fmt("%.1f", one) + "/s");
      streaming_wins = streaming_wins && stream >= one;
    }
  out.require(streaming_wins, "multi: streaming throughput >= batch-1 at every N (" + std::to_string(kMultiCount) +
                                  " scenarios per N)");
  const double dt = since(t0);
  out.require(dt < 15 * kMinute, fmt("%.0f s", dt));
  return out;
}

Verdict synthesis_integrity() {
  const auto t0 = Clock::now();
  Verdict out;
  std::map<Regime, std::vector<double>> rx;
  std::size_t bad = 0;
  for (auto regime : {Regime::HV, Regime::MV}) {
    const auto c = corpus(regime, 4, 8, kSynthCount, 808);
    const auto& r = c.report;
    for (const auto& sc : c.scenarios) {
      bool ok = validate_grid(sc.grid).valid() && sc.nr_report.converged && check_scenario(sc).empty();
      // residual of the stored reference through the complex-arithmetic oracle
      const auto s = testing::complex_power(sc.grid, sc.reference_state);
      for (std::size_t i = 0; i < sc.grid.size(); ++i) {
        const auto& b = sc.grid.buses[i];
        if (b.kind != BusType::Slack) ok = ok && std::abs(s[i].real() - b.p_set) <= 1e-8;
        if (b.kind == BusType::PQ) ok = ok && std::abs(s[i].imag() - b.q_set) <= 1e-8;
      }
      if (!ok) ++bad;
      for (const auto& l : sc.grid.lines) rx[regime].push_back(l.r / l.x);
    }
    out.require(r.acceptance_rate() >= kAcceptanceRate,
                std::string(to_string(regime)) + " acceptance " + fmt("%.1f%%", 100 * r.acceptance_rate()) + " (" +
                    std::to_string(r.accepted) + "/" + std::to_string(r.draws) + " draws, " +
                    std::to_string(r.non_convergent) + " non-convergent, " + std::to_string(c.scenarios.size()) +
                    " kept)");
  }
  out.require(bad == 0, std::to_string(bad) + " accepted scenarios failing validity, convergence or range checks");
  const double mv = median_of(rx[Regime::MV]), hv = median_of(rx[Regime::HV]);
  out.require(mv > hv, "median R/X MV " + fmt("%.3f", mv) + " > HV " + fmt("%.3f", hv));
  const double dt = since(t0);
  out.require(dt < 5 * kMinute, fmt("%.0f s", dt));
  return out;
}

Verdict determinism() {
  Verdict out;
  const auto root = fs::temp_directory_path() / "pignn_acceptance_determinism";
  fs::remove_all(root);
  for (int run = 0; run < 2; ++run) {
    const auto c = corpus(Regime::MV, 4, 8, 150, 99);
    save_splits(root / std::to_string(run), split_corpus(c.scenarios));
  }
  bool same = true;
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl"})
    same = same && read_file(root / "0" / f) == read_file(root / "1" / f);
  out.require(same, "synth: byte-identical split files");

  const auto train_set = load_dataset(root / "0" / "train.jsonl");
  const auto val_set = load_dataset(root / "0" / "val.jsonl");
  for (auto kind : {AggregatorKind::MLP, AggregatorKind::Attention}) {
    ModelConfig mc;
    mc.kind = kind;
    TrainConfig tc;
    tc.epochs = 4;
    tc.seed = 3;
    std::vector<std::vector<double>> curves;
    std::vector<std::string> ckpts;
    for (int run = 0; run < 2; ++run) {
      const auto r = train(train_set, val_set, mc, tc);
      std::vector<double> curve;
      for (const auto& e : r.log) {
        curve.push_back(e.train_loss);
        curve.push_back(e.val_loss);
      }
      curves.push_back(curve);
      ckpts.push_back(checkpoint_to_json({r.best, {}, tc, r.best_val_loss, r.best_epoch}));
    }
    out.require(curves[0] == curves[1] && ckpts[0] == ckpts[1],
                std::string("train ") + to_string(kind) + ": bit-identical loss curves and checkpoints");
  }
  fs::remove_all(root);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  app.add_option("criteria", only, "criteria to run (default: all)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"oracle equivalence (NR vs Gauss-Seidel)", oracle_equivalence},
      {"Jacobian vs central differences", jacobian_correctness},
      {"loss gradients vs central differences", autodiff_correctness},
      {"line-search contract", line_search_contract},
      {"ablation ordering", ablation_ordering},
      {"merit reduction at inference", merit_reduction},
      {"scaling shape", scaling_shape},
      {"synthesis integrity", synthesis_integrity},
      {"determinism", determinism},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    std::printf("[%d] %s\n", id, criteria[i].first.c_str());
    std::fflush(stdout);
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("threw: ") + e.what();
    }
    std::printf("%s criterion %d: %s\n", v.pass ? "PASS" : "FAIL", id, v.detail.c_str());
    std::fflush(stdout);
    if (!v.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
