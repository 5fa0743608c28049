// Command-line front end: synth | train | eval | bench | nr.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pignn/eval.hpp"
#include "pignn/io.hpp"

namespace fs = std::filesystem;
using namespace pignn;

namespace {

struct SynthArgs {
  std::string regime = "HV";
  std::size_t n_min = 4;
  std::size_t n_max = 32;
  std::size_t count = 0;
  std::string out;
};

int cmd_synth(const SynthArgs& a, const RunConfig& cfg) {
  CorpusRequest req;
  req.regime = regime_from_string(a.regime);
  req.n_min = a.n_min;
  req.n_max = a.n_max;
  req.count = a.count;
  req.seed = cfg.train.seed;
  req.workers = cfg.bench.workers;
  req.iqr = cfg.iqr;
  req.synth = cfg.synth;
  const auto corpus = synthesize_corpus(req);
  if (corpus.scenarios.empty()) {
    std::cerr << "synth: zero scenarios accepted\n";
    return 1;
  }
  const auto sets = split_corpus(corpus.scenarios);
  save_splits(a.out, sets);
  write_file(fs::path(a.out) / "report.json", report_json(corpus.report, req));
  const auto& r = corpus.report;
  std::cout << "wrote " << corpus.scenarios.size() << " scenarios (train " << sets.train.size() << ", val "
            << sets.val.size() << ", test " << sets.test.size() << ") to " << a.out << "\n"
            << "draws " << r.draws << ", accepted " << r.accepted << ", dropped: non-convergent " << r.non_convergent
            << ", disconnected " << r.disconnected << ", degenerate " << r.degenerate << ", iqr " << r.iqr_dropped
            << "\n";
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string model = "attn";
  std::string out;
  std::string log;
};

int cmd_train(const TrainArgs& a, RunConfig cfg) {
  cfg.model.kind = aggregator_from_string(a.model);
  const auto train_set = load_dataset(fs::path(a.data) / "train.jsonl");
  const auto val_set = load_dataset(fs::path(a.data) / "val.jsonl");

  std::ofstream log;
  if (!a.log.empty()) {
    log.open(a.log);
    if (!log) throw std::runtime_error("cannot write " + a.log);
    log << "epoch,lr,train_loss,val_loss,wall_time\n";
    log.precision(17);
  }
  const auto result = train(train_set, val_set, cfg.model, cfg.train, cfg.ls, [&](const EpochLog& e) {
    std::printf("epoch %zu lr %.3e train %.6e val %.6e (%.2fs)\n", e.epoch, e.lr, e.train_loss, e.val_loss,
                e.wall_time);
    std::fflush(stdout);
    if (log) log << e.epoch << ',' << e.lr << ',' << e.train_loss << ',' << e.val_loss << ',' << e.wall_time << '\n';
  });
  Checkpoint ckpt{result.best, cfg.ls, cfg.train, result.best_val_loss, result.best_epoch};
  save_checkpoint(a.out, ckpt);
  std::printf("best epoch %zu val %.6e -> %s\n", result.best_epoch, result.best_val_loss, a.out.c_str());
  if (result.diverged) {
    std::cerr << "train: " << result.message << " (kept last good checkpoint)\n";
    return 2;
  }
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::vector<std::string> data;
  std::string mode = "caps_ls";
  std::string out;
};

int cmd_eval(const EvalArgs& a, const RunConfig& cfg) {
  std::vector<UnrollMode> modes;
  if (a.mode == "all") {
    for (const char* m : kAblationModes) modes.push_back(mode_from_label(m));
  } else {
    modes.push_back(mode_from_label(a.mode));
  }
  const auto ckpt = load_checkpoint(a.checkpoint);
  std::vector<EvalResult> results;
  for (const auto& path : a.data) {
    const auto scs = load_dataset(path);
    for (auto mode : modes) {
      EvalOptions opts;
      opts.mode = mode;
      opts.K = cfg.train.K;
      opts.ls = ckpt.ls;
      opts.include_pv_voltage = cfg.include_pv_voltage;
      opts.batch_size = cfg.eval_batch;
      results.push_back(rmse_eval(ckpt.params, scs, opts));
    }
  }
  std::ostringstream csv;
  write_eval_csv(csv, results, to_string(ckpt.params.kind()));
  if (a.out.empty()) std::cout << csv.str();
  else write_file(a.out, csv.str());
  return 0;
}

struct BenchArgs {
  std::string regime = "single";
  std::string mlp;
  std::string attn;
  std::string out;
  std::string long_out;
};

int cmd_bench(const BenchArgs& a, const RunConfig& cfg) {
  const auto sizes = parse_size_list(cfg.bench_sizes);
  auto mlp_cfg = cfg.model;
  mlp_cfg.kind = AggregatorKind::MLP;
  auto attn_cfg = cfg.model;
  attn_cfg.kind = AggregatorKind::Attention;
  // Timing does not depend on trained values; untrained weights are used
  // when no checkpoint is given.
  const ModelParams mlp = a.mlp.empty() ? ModelParams(mlp_cfg, cfg.train.seed) : load_checkpoint(a.mlp).params;
  const ModelParams attn = a.attn.empty() ? ModelParams(attn_cfg, cfg.train.seed) : load_checkpoint(a.attn).params;
  auto opts = cfg.bench;
  opts.K = cfg.train.K;
  opts.ls = cfg.ls;
  opts.nr = cfg.synth.nr;
  std::vector<BenchRecord> records;
  if (a.regime == "single") records = bench_single(sizes, mlp, attn, opts);
  else if (a.regime == "multi") records = bench_multi(sizes, cfg.bench_count, mlp, attn, opts);
  else throw CLI::ValidationError("--regime", "expected single or multi");

  std::ostringstream csv;
  write_bench_csv(csv, records);
  if (a.out.empty()) std::cout << csv.str();
  else write_file(a.out, csv.str());
  if (!a.long_out.empty()) {
    std::ostringstream lf;
    write_bench_long_csv(lf, records);
    write_file(a.long_out, lf.str());
  }
  return 0;
}

struct NrArgs {
  std::string data;
  std::size_t line = 0;
  bool json = false;
};

int cmd_nr(const NrArgs& a, const RunConfig& cfg) {
  const auto text = read_file(a.data);
  std::istringstream in(text);
  std::string record;
  for (std::size_t i = 0; i <= a.line; ++i) {
    if (!std::getline(in, record)) throw std::runtime_error("no record " + std::to_string(a.line) + " in " + a.data);
  }
  const auto sc = scenario_from_line(record);
  const auto y = build_admittance(sc.grid);
  const auto [state, report] = nr_solve(sc.grid, y, sc.initial_state, cfg.synth.nr);
  if (a.json) {
    nlohmann::json j = {{"converged", report.converged},   {"iterations", report.iterations},
                        {"final_merit", report.final_merit}, {"reason", report.reason},
                        {"wall_time", report.wall_time},     {"merit_trail", report.merit_trail},
                        {"v", state.v},                      {"theta", state.theta}};
    std::cout << j.dump(2) << "\n";
  } else {
    std::printf("n=%zu regime=%s\n", sc.grid.size(), to_string(sc.regime));
    for (std::size_t k = 0; k < report.merit_trail.size(); ++k)
      std::printf("iter %2zu merit %.6e\n", k, report.merit_trail[k]);
    std::printf("%s after %zu iterations (%s), final merit %.3e, %.3f ms\n",
                report.converged ? "converged" : "NOT converged", report.iterations, report.reason.c_str(),
                report.final_merit, report.wall_time * 1e3);
  }
  return report.converged ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Physics-informed GNN power-flow toolkit"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_path;
  try {
    if (const auto path = find_config_arg(argc, argv)) cfg = load_run_config(*path);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "synthesize, solve, filter and split a scenario corpus");
  register_run_config(*s, cfg, &config_path);
  s->add_option("--regime", synth.regime, "MV or HV")->capture_default_str();
  s->add_option("--n-min", synth.n_min, "smallest grid")->capture_default_str();
  s->add_option("--n-max", synth.n_max, "largest grid")->capture_default_str();
  s->add_option("--count", synth.count, "scenarios to produce")->required();
  s->add_option("--out", synth.out, "output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model on <data>/train.jsonl with <data>/val.jsonl");
  register_run_config(*t, cfg, &config_path);
  t->add_option("--data", tr.data, "dataset directory")->required();
  t->add_option("--model", tr.model, "mlp or attn")->capture_default_str();
  t->add_option("--out", tr.out, "checkpoint path")->required();
  t->add_option("--log", tr.log, "per-epoch CSV log");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "RMSE against the stored references");
  register_run_config(*e, cfg, &config_path);
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint path")->required();
  e->add_option("--data", ev.data, "dataset files")->required();
  e->add_option("--mode", ev.mode, "base, caps, ls, caps_ls or all")->capture_default_str();
  e->add_option("--out", ev.out, "CSV path (stdout when omitted)");

  BenchArgs bn;
  auto* b = app.add_subcommand("bench", "NR vs PIGNN timing");
  register_run_config(*b, cfg, &config_path);
  b->add_option("--regime", bn.regime, "single or multi")->capture_default_str();
  b->add_option("--mlp", bn.mlp, "MLP checkpoint (optional)");
  b->add_option("--attn", bn.attn, "attention checkpoint (optional)");
  b->add_option("--out", bn.out, "CSV path (stdout when omitted)");
  b->add_option("--long-out", bn.long_out, "plot-ready long-format CSV");

  NrArgs nr;
  auto* n = app.add_subcommand("nr", "standalone Newton-Raphson solve of one stored scenario");
  register_run_config(*n, cfg, &config_path);
  n->add_option("--data", nr.data, "dataset or single-record file")->required();
  n->add_option("--line", nr.line, "record index (0-based)")->capture_default_str();
  n->add_flag("--json", nr.json, "machine-readable report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  }

  try {
    cfg.validate();
    if (*s) return cmd_synth(synth, cfg);
    if (*t) return cmd_train(tr, cfg);
    if (*e) return cmd_eval(ev, cfg);
    if (*b) return cmd_bench(bn, cfg);
    if (*n) return cmd_nr(nr, cfg);
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
