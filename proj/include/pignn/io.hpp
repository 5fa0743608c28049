#pragma once

// Dataset, checkpoint and configuration files.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pignn/eval.hpp"
#include "pignn/model.hpp"
#include "pignn/parallel.hpp"
#include "pignn/synth.hpp"
#include "pignn/trainer.hpp"

namespace CLI {
class App;
}

namespace pignn {

inline constexpr int kDatasetSchema = 1;
inline constexpr int kCheckpointSchema = 1;

// ---------------------------------------------------------------------------
// Datasets: one JSON record per line.

std::string scenario_to_line(const Scenario& scenario);
/// Throws std::runtime_error on malformed records or schema mismatch.
Scenario scenario_from_line(const std::string& line);

void save_dataset(const std::filesystem::path& path, std::span<const Scenario> scenarios);
std::vector<Scenario> load_dataset(const std::filesystem::path& path);

enum class Split { Train = 0, Val = 1, Test = 2 };
const char* to_string(Split split);
/// Stable 1:1:1 assignment from the scenario's slot index.
Split split_of(std::uint64_t index);

struct SplitSets {
  std::vector<Scenario> train, val, test;
};
SplitSets split_corpus(std::span<const Scenario> scenarios);

/// Writes <dir>/train.jsonl, val.jsonl and test.jsonl.
void save_splits(const std::filesystem::path& dir, const SplitSets& sets);
std::string report_json(const SynthReport& report, const CorpusRequest& request);

// ---------------------------------------------------------------------------
// Checkpoints.

struct Checkpoint {
  ModelParams params;
  LsConfig ls;
  TrainConfig train;
  double best_val_loss = 0.0;
  std::size_t best_epoch = 0;
};

std::string checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Run configuration: every knob as a flat key, loadable from a key = value
// file and overridable on the command line under the same name.

struct RunConfig {
  RunConfig() { bench.workers = default_workers(); }

  TrainConfig train;
  ModelConfig model;
  LsConfig ls;
  SynthConfig synth;
  bool iqr = true;
  bool include_pv_voltage = false;
  std::size_t eval_batch = 16;
  BenchOptions bench;
  std::string bench_sizes = "64,128,256,512,1024";
  std::size_t bench_count = 256;

  void validate() const;
};

/// Registers every RunConfig key as an option of `app`. With config_path null
/// --config is a CLI11 config file (top-level apps only); otherwise it is a
/// plain option and the caller loads the file before parsing.
void register_run_config(CLI::App& app, RunConfig& cfg, std::string* config_path = nullptr);

/// Value of the last --config argument, if any.
std::optional<std::string> find_config_arg(int argc, const char* const* argv);

/// Parses a config file alone. Unknown keys are rejected.
RunConfig load_run_config(const std::filesystem::path& path);
/// Parses "key = value" text as a config file would.
RunConfig parse_run_config(const std::string& text);

/// All registered keys, in registration order.
std::vector<std::string> run_config_keys();

std::vector<std::size_t> parse_size_list(const std::string& text);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

}  // namespace pignn
