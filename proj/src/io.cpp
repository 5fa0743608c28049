#include "pignn/io.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string_view>

#include "CLI11.hpp"
#include "json.hpp"

namespace pignn {

using nlohmann::json;

namespace {

json state_json(const State& s) { return {{"v", s.v}, {"theta", s.theta}}; }

State state_from(const json& j) { return {j.at("v").get<std::vector<double>>(), j.at("theta").get<std::vector<double>>()}; }

}  // namespace

std::string scenario_to_line(const Scenario& sc) {
  json buses = json::array();
  for (const auto& b : sc.grid.buses)
    buses.push_back({{"id", b.id}, {"type", to_string(b.kind)}, {"p", b.p_set}, {"q", b.q_set}, {"v_set", b.v_set},
                     {"theta_set", b.theta_set}});
  json lines = json::array();
  for (const auto& l : sc.grid.lines)
    lines.push_back({{"from", l.from}, {"to", l.to}, {"r", l.r}, {"x", l.x}, {"b", l.b_total}});
  const auto& nr = sc.nr_report;
  json j = {
      {"schema", kDatasetSchema},
      {"regime", to_string(sc.regime)},
      {"seed", sc.seed},
      {"index", sc.index},
      {"v_base", sc.grid.v_base},
      {"s_base", sc.grid.s_base},
      {"buses", buses},
      {"lines", lines},
      {"initial", state_json(sc.initial_state)},
      {"reference", state_json(sc.reference_state)},
      {"nr",
       {{"converged", nr.converged},
        {"iterations", nr.iterations},
        {"final_merit", nr.final_merit},
        {"reason", nr.reason},
        {"merit_trail", nr.merit_trail}}},
  };
  return j.dump();
}

Scenario scenario_from_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed scenario record: ") + e.what());
  }
  try {
    const int schema = j.at("schema").get<int>();
    if (schema != kDatasetSchema)
      throw std::runtime_error("dataset schema " + std::to_string(schema) + " is not supported (expected " +
                               std::to_string(kDatasetSchema) + ")");
    Scenario sc;
    sc.regime = regime_from_string(j.at("regime").get<std::string>());
    sc.seed = j.at("seed").get<std::uint64_t>();
    sc.index = j.at("index").get<std::uint64_t>();
    sc.grid.regime = sc.regime;
    sc.grid.v_base = j.at("v_base").get<double>();
    sc.grid.s_base = j.at("s_base").get<double>();
    for (const auto& b : j.at("buses")) {
      Bus bus;
      bus.id = b.at("id").get<std::size_t>();
      bus.kind = bus_type_from_string(b.at("type").get<std::string>());
      bus.p_set = b.at("p").get<double>();
      bus.q_set = b.at("q").get<double>();
      bus.v_set = b.at("v_set").get<double>();
      bus.theta_set = b.at("theta_set").get<double>();
      sc.grid.buses.push_back(bus);
    }
    for (const auto& l : j.at("lines"))
      sc.grid.lines.push_back({l.at("from").get<std::size_t>(), l.at("to").get<std::size_t>(), l.at("r").get<double>(),
                               l.at("x").get<double>(), l.at("b").get<double>()});
    sc.initial_state = state_from(j.at("initial"));
    sc.reference_state = state_from(j.at("reference"));
    const auto& nr = j.at("nr");
    sc.nr_report.converged = nr.at("converged").get<bool>();
    sc.nr_report.iterations = nr.at("iterations").get<std::size_t>();
    sc.nr_report.final_merit = nr.at("final_merit").get<double>();
    sc.nr_report.reason = nr.at("reason").get<std::string>();
    sc.nr_report.merit_trail = nr.at("merit_trail").get<std::vector<double>>();
    const auto n = sc.grid.size();
    if (sc.initial_state.size() != n || sc.reference_state.size() != n)
      throw std::runtime_error("state length does not match bus count");
    return sc;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed scenario record: ") + e.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void save_dataset(const std::filesystem::path& path, std::span<const Scenario> scenarios) {
  std::string text;
  for (const auto& s : scenarios) {
    text += scenario_to_line(s);
    text += '\n';
  }
  write_file(path, text);
}

std::vector<Scenario> load_dataset(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<Scenario> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(scenario_from_line(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!out.back().nr_report.converged)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": stored scenario is not converged");
  }
  return out;
}

const char* to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_of(std::uint64_t index) { return static_cast<Split>(mix_seed(index) % 3); }

SplitSets split_corpus(std::span<const Scenario> scenarios) {
  SplitSets sets;
  for (const auto& s : scenarios) {
    switch (split_of(s.index)) {
      case Split::Train: sets.train.push_back(s); break;
      case Split::Val: sets.val.push_back(s); break;
      case Split::Test: sets.test.push_back(s); break;
    }
  }
  return sets;
}

void save_splits(const std::filesystem::path& dir, const SplitSets& sets) {
  save_dataset(dir / "train.jsonl", sets.train);
  save_dataset(dir / "val.jsonl", sets.val);
  save_dataset(dir / "test.jsonl", sets.test);
}

std::string report_json(const SynthReport& r, const CorpusRequest& req) {
  json j = {
      {"regime", to_string(req.regime)},
      {"n_min", req.n_min},
      {"n_max", req.n_max},
      {"seed", req.seed},
      {"requested", r.requested},
      {"draws", r.draws},
      {"accepted", r.accepted},
      {"acceptance_rate", r.acceptance_rate()},
      {"dropped", {{"non_convergent", r.non_convergent},
                   {"disconnected", r.disconnected},
                   {"degenerate", r.degenerate},
                   {"iqr", r.iqr_dropped}}},
      {"unfilled", r.unfilled},
      {"iqr_fences", {r.fences.low, r.fences.high}},
  };
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

namespace {

json model_config_json(const ModelConfig& c) {
  return {{"kind", to_string(c.kind)},
          {"d_model", c.d_model},
          {"heads", c.heads},
          {"layers", c.layers},
          {"channels", c.channels},
          {"hidden", c.hidden},
          {"edge_hidden", c.edge_hidden},
          {"leaky_slope", c.leaky_slope},
          {"edge_log_features", c.edge_log_features},
          {"residual_asinh", c.residual_asinh}};
}

ModelConfig model_config_from(const json& j) {
  ModelConfig c;
  c.kind = aggregator_from_string(j.at("kind").get<std::string>());
  c.d_model = j.at("d_model").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.channels = j.at("channels").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.edge_hidden = j.at("edge_hidden").get<std::size_t>();
  c.leaky_slope = j.at("leaky_slope").get<double>();
  c.edge_log_features = j.at("edge_log_features").get<bool>();
  c.residual_asinh = j.at("residual_asinh").get<bool>();
  return c;
}

json ls_json(const LsConfig& c) {
  return {{"alpha0", c.alpha0},           {"c1", c.c1},           {"rho", c.rho},
          {"alpha_min", c.alpha_min},     {"d_theta_max", c.d_theta_max}, {"d_v_frac", c.d_v_frac},
          {"v_min", c.v_min},             {"v_max", c.v_max}};
}

LsConfig ls_from(const json& j) {
  LsConfig c;
  c.alpha0 = j.at("alpha0").get<double>();
  c.c1 = j.at("c1").get<double>();
  c.rho = j.at("rho").get<double>();
  c.alpha_min = j.at("alpha_min").get<double>();
  c.d_theta_max = j.at("d_theta_max").get<double>();
  c.d_v_frac = j.at("d_v_frac").get<double>();
  c.v_min = j.at("v_min").get<double>();
  c.v_max = j.at("v_max").get<double>();
  return c;
}

json train_json(const TrainConfig& c) {
  return {{"gamma", c.gamma},
          {"K", c.K},
          {"batch_size", c.batch_size},
          {"weight_decay", c.weight_decay},
          {"lr_max", c.lr_max},
          {"lr_min", c.lr_min},
          {"cosine_period", c.cosine_period},
          {"cosine_restart", c.cosine_restart},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"grad_clip", c.grad_clip},
          {"caps", c.caps}};
}

TrainConfig train_from(const json& j) {
  TrainConfig c;
  c.gamma = j.at("gamma").get<double>();
  c.K = j.at("K").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.lr_max = j.at("lr_max").get<double>();
  c.lr_min = j.at("lr_min").get<double>();
  c.cosine_period = j.at("cosine_period").get<std::size_t>();
  c.cosine_restart = j.at("cosine_restart").get<bool>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.grad_clip = j.at("grad_clip").get<double>();
  c.caps = j.at("caps").get<bool>();
  return c;
}

}  // namespace

std::string checkpoint_to_json(const Checkpoint& ckpt) {
  json params = json::array();
  for (const auto& [name, t] : ckpt.params.entries())
    params.push_back({{"name", name},
                      {"shape", {t.rows(), t.cols()}},
                      {"values", std::vector<double>(t.values().begin(), t.values().end())}});
  json j = {{"schema", kCheckpointSchema},
            {"feature_layout", "V,theta,dP,dQ,m"},
            {"model", model_config_json(ckpt.params.config())},
            {"line_search", ls_json(ckpt.ls)},
            {"train", train_json(ckpt.train)},
            {"best_val_loss", ckpt.best_val_loss},
            {"best_epoch", ckpt.best_epoch},
            {"params", params}};
  return j.dump() + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
  try {
    const auto j = json::parse(text);
    const int schema = j.at("schema").get<int>();
    if (schema != kCheckpointSchema)
      throw std::runtime_error("checkpoint schema " + std::to_string(schema) + " is not supported (expected " +
                               std::to_string(kCheckpointSchema) + ")");
    if (j.at("feature_layout").get<std::string>() != "V,theta,dP,dQ,m")
      throw std::runtime_error("unsupported checkpoint feature layout");
    Checkpoint ckpt;
    ckpt.params = ModelParams(model_config_from(j.at("model")), 0);
    ckpt.ls = ls_from(j.at("line_search"));
    ckpt.train = train_from(j.at("train"));
    ckpt.best_val_loss = j.at("best_val_loss").get<double>();
    ckpt.best_epoch = j.at("best_epoch").get<std::size_t>();
    const auto& ps = j.at("params");
    if (ps.size() != ckpt.params.entries().size())
      throw std::runtime_error("checkpoint parameter count does not match the architecture");
    for (const auto& p : ps) {
      const auto shape = p.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2) throw std::runtime_error("parameter shapes must be two-dimensional");
      ckpt.params.assign(p.at("name").get<std::string>(), {shape[0], shape[1]},
                         p.at("values").get<std::vector<double>>());
    }
    return ckpt;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("checkpoint does not match its architecture: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, checkpoint_to_json(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_json(read_file(path)); }

// ---------------------------------------------------------------------------

void RunConfig::validate() const {
  train.validate();
  ls.validate();
  if (!(synth.pv_probability >= 0.0 && synth.pv_probability <= 1.0))
    throw std::invalid_argument("pv_probability must lie in [0, 1]");
  if (synth.max_draws == 0) throw std::invalid_argument("max_draws must be positive");
  if (!(synth.frequency_hz > 0.0)) throw std::invalid_argument("frequency_hz must be positive");
  if (bench.repeats == 0) throw std::invalid_argument("bench_repeats must be positive");
  if (bench.workers == 0) throw std::invalid_argument("workers must be positive");
  parse_size_list(bench_sizes);
}

namespace {

template <typename T>
void key(CLI::App& app, const std::string& name, T& target, const std::string& help) {
  app.add_option("--" + name, target, help)->capture_default_str();
}

}  // namespace

void register_run_config(CLI::App& app, RunConfig& c, std::string* config_path) {
  if (config_path) {
    // Loaded by the caller before parsing (see find_config_arg).
    app.add_option("--config", *config_path, "key = value file; command-line options override it");
  } else {
    app.set_config("--config");
    app.allow_config_extras(CLI::config_extras_mode::error);
  }

  key(app, "gamma", c.train.gamma, "loss discount");
  key(app, "K", c.train.K, "unrolled correction steps (training and inference)");
  key(app, "batch_size", c.train.batch_size, "scenarios per block-diagonal batch");
  key(app, "weight_decay", c.train.weight_decay, "AdamW decoupled weight decay");
  key(app, "lr_max", c.train.lr_max, "cosine schedule peak");
  key(app, "lr_min", c.train.lr_min, "cosine schedule floor");
  key(app, "cosine_period", c.train.cosine_period, "epochs per cosine cycle");
  key(app, "cosine_restart", c.train.cosine_restart, "restart the cosine cycle every period");
  key(app, "epochs", c.train.epochs, "training epochs");
  key(app, "seed", c.train.seed, "master seed for initialization and shuffling");
  key(app, "grad_clip", c.train.grad_clip, "global gradient norm limit (0 disables)");
  key(app, "train_caps", c.train.caps, "apply step caps and voltage bounds while training");

  key(app, "d_model", c.model.d_model, "latent and attention width");
  key(app, "heads", c.model.heads, "attention heads");
  key(app, "layers", c.model.layers, "attention layers per correction step");
  key(app, "channels", c.model.channels, "DeepSets message channels");
  key(app, "hidden", c.model.hidden, "update and message network width");
  key(app, "edge_hidden", c.model.edge_hidden, "edge-bias network width");
  key(app, "leaky_slope", c.model.leaky_slope, "leaky ReLU negative slope");
  key(app, "edge_log_features", c.model.edge_log_features, "signed log1p on admittance edge features");
  key(app, "residual_asinh", c.model.residual_asinh, "asinh compression of residual features");

  key(app, "alpha0", c.ls.alpha0, "initial line-search step");
  key(app, "c1", c.ls.c1, "sufficient-decrease constant");
  key(app, "rho", c.ls.rho, "backtracking factor");
  key(app, "alpha_min", c.ls.alpha_min, "smallest line-search step");
  key(app, "d_theta_max", c.ls.d_theta_max, "angle step cap (rad)");
  key(app, "d_v_frac", c.ls.d_v_frac, "magnitude step cap as a fraction of V");
  key(app, "v_min", c.ls.v_min, "lower voltage bound (p.u.)");
  key(app, "v_max", c.ls.v_max, "upper voltage bound (p.u.)");

  key(app, "pv_probability", c.synth.pv_probability, "probability that a non-slack bus is PV");
  key(app, "extra_edge_fraction", c.synth.extra_edge_fraction, "extra non-tree edges per bus");
  key(app, "max_draws", c.synth.max_draws, "draws per requested scenario before giving up");
  key(app, "frequency_hz", c.synth.frequency_hz, "system frequency for line charging");
  key(app, "nr_tol", c.synth.nr.tol, "Newton-Raphson merit tolerance (p.u.)");
  key(app, "nr_max_iter", c.synth.nr.max_iter, "Newton-Raphson iteration limit");
  key(app, "iqr", c.iqr, "apply the Tukey voltage filter per regime");

  key(app, "include_pv_voltage", c.include_pv_voltage, "count PV magnitudes in the voltage RMSE");
  key(app, "eval_batch", c.eval_batch, "scenarios per evaluation batch");

  key(app, "bench_warmup", c.bench.warmup, "untimed warmup cycles");
  key(app, "bench_repeats", c.bench.repeats, "timed repeat cycles");
  key(app, "workers", c.bench.workers, "NR farm and synthesis workers");
  key(app, "node_budget", c.bench.node_budget, "buses per PIGNN micro-batch");
  // Config files hand a comma list over as an array; join it back.
  app.add_option("--bench_sizes", c.bench_sizes, "comma-separated grid sizes")
      ->capture_default_str()
      ->expected(1, CLI::detail::expected_max_vector_size)
      ->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::Join);
  key(app, "bench_count", c.bench_count, "scenarios per size in the multi-scenario harness");
}

std::vector<std::string> run_config_keys() {
  CLI::App app;
  RunConfig c;
  register_run_config(app, c);
  std::vector<std::string> keys;
  for (const auto* opt : app.get_options()) {
    const auto name = opt->get_single_name();
    if (name != "help" && name != "config") keys.push_back(name);
  }
  return keys;
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  CLI::App app;
  register_run_config(app, c);
  std::istringstream in(text);
  try {
    app.parse_from_stream(in);
  } catch (const CLI::ParseError& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_file(path)); }

std::optional<std::string> find_config_arg(int argc, const char* const* argv) {
  std::optional<std::string> found;
  for (int i = 1; i < argc; ++i) {
    const std::string_view arg = argv[i];
    if (arg == "--") break;
    if (arg == "--config") {
      if (i + 1 >= argc) throw std::invalid_argument("--config needs a file");
      found = argv[++i];
    } else if (arg.starts_with("--config=")) {
      found = std::string(arg.substr(9));
    }
  }
  return found;
}

std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != item.size() || v == 0) throw std::invalid_argument("bad size '" + item + "' in list '" + text + "'");
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("empty size list");
  return out;
}

}  // namespace pignn
