#pragma once

// Unrolled residual-to-update operator: physics features, DeepSets and
// edge-aware attention aggregators, update decoding, step caps and the
// backtracking line-search correction.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pignn/acpf.hpp"
#include "pignn/autodiff.hpp"
#include "pignn/batch.hpp"

namespace pignn {

enum class AggregatorKind { MLP, Attention };
const char* to_string(AggregatorKind kind);
AggregatorKind aggregator_from_string(const std::string& text);

struct ModelConfig {
  AggregatorKind kind = AggregatorKind::Attention;
  std::size_t d_model = 16;  // latent width d and attention model width
  std::size_t heads = 4;
  std::size_t layers = 1;    // attention layers per correction step
  std::size_t channels = 4;  // DeepSets message channels
  std::size_t hidden = 16;   // update and message network width
  std::size_t edge_hidden = 16;
  double leaky_slope = 0.01;
  /// Signed log1p on admittance edge features; raw values otherwise.
  bool edge_log_features = true;
  /// asinh compression of the residual feature columns; raw p.u. otherwise.
  bool residual_asinh = false;

  std::size_t feature_width() const { return 4 + d_model; }
  bool operator==(const ModelConfig&) const = default;
};

/// All trainable tensors of one variant, in a fixed named order.
class ModelParams {
 public:
  ModelParams() = default;
  ModelParams(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  AggregatorKind kind() const { return config_.kind; }

  const ad::Tensor& at(const std::string& name) const;
  std::vector<std::pair<std::string, ad::Tensor>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, ad::Tensor>>& entries() const { return entries_; }
  std::vector<ad::Tensor> tensors() const;
  std::size_t parameter_count() const;

  /// Deep copy (new leaves with the same values).
  ModelParams clone() const;
  /// Used when loading checkpoints; shapes must match the architecture.
  void assign(const std::string& name, ad::Shape shape, std::vector<double> values);

 private:
  void add(const std::string& name, ad::Shape shape, std::vector<double> values);

  ModelConfig config_;
  std::vector<std::pair<std::string, ad::Tensor>> entries_;
};

struct LsConfig {
  double alpha0 = 1.0;
  double c1 = 1e-4;
  double rho = 0.5;
  double alpha_min = 0.05;
  double d_theta_max = 0.3;  // rad
  double d_v_frac = 0.10;    // of the current magnitude
  double v_min = 0.8;
  double v_max = 1.2;

  /// Throws std::invalid_argument when the constants are inconsistent.
  void validate() const;
  bool operator==(const LsConfig&) const = default;
};

enum class UnrollMode { Train, Plain, Caps, CapsLs, Ls };
const char* to_string(UnrollMode mode);

/// Evaluation-mode labels used by the CLI and reports: base, caps, ls, caps_ls.
UnrollMode mode_from_label(const std::string& label);
const char* mode_label(UnrollMode mode);

// ---------------------------------------------------------------------------
// Building blocks (also exercised directly by the tests).

/// [V, theta, dP, dQ, m] per node; residual columns optionally asinh-compressed.
ad::Tensor phys_features(ad::Tape& tape, const ad::Tensor& v, const ad::Tensor& theta, const ad::Tensor& dp,
                         const ad::Tensor& dq, const ad::Tensor& latent, bool residual_asinh = false);

/// Edge features per directed edge (E x 4), transformed per the config.
ad::Tensor edge_features(const GraphBatch& batch, const ModelConfig& config);

ad::Tensor mlp_aggregate(ad::Tape& tape, const ad::Tensor& features, const ad::Tensor& edge_feats,
                         const GraphBatch& batch, const ModelParams& params);

struct AttentionOutput {
  ad::Tensor context;  // N x d
  ad::Tensor weights;  // E x H, softmax over the in-edges of each receiving node
};

AttentionOutput attn_aggregate(ad::Tape& tape, const ad::Tensor& features, const ad::Tensor& edge_feats,
                               const GraphBatch& batch, const ModelParams& params);

struct Proposal {
  ad::Tensor dtheta;  // N x 1
  ad::Tensor dv;      // N x 1
  ad::Tensor dm;      // N x d
};

/// Update network on [x_i, ctx_i] with Slack/PV masking of the outputs.
Proposal propose_update(ad::Tape& tape, const ad::Tensor& features, const ad::Tensor& context,
                        const GraphBatch& batch, const ModelParams& params);

/// One full correction step from features to masked proposals.
Proposal correction_step(ad::Tape& tape, const ad::Tensor& features, const ad::Tensor& edge_feats,
                         const GraphBatch& batch, const ModelParams& params);

/// |dtheta| <= d_theta_max and |dv| <= d_v_frac * V elementwise.
std::pair<std::vector<double>, std::vector<double>> apply_caps(std::span<const double> dtheta,
                                                               std::span<const double> dv,
                                                               std::span<const double> v, const LsConfig& cfg);

struct LineSearchResult {
  State state;
  std::vector<double> latent;
  double alpha = 0.0;  // step applied; 0 when rejected
  bool accepted = false;
  bool fallback = false;  // accepted through the alpha_min strict-decrease branch
  double merit_before = 0.0;
  double merit_after = 0.0;
};

using MeritFn = std::function<double(const State&)>;

/// Backtracking with update caps already applied to the proposal. The state
/// is wrapped and clipped before the search.
LineSearchResult line_search_step(const State& state, std::span<const double> latent,
                                  std::span<const double> dtheta, std::span<const double> dv,
                                  std::span<const double> dm, const MeritFn& merit_fn, const LsConfig& cfg);

// ---------------------------------------------------------------------------
// Unrolling.

struct StepRecord {
  State state;                  // concatenated over the batch
  std::vector<double> merit;    // per graph
  std::vector<double> alpha;    // per graph, step used to reach this state (empty at k = 0)
  std::vector<bool> accepted;   // per graph (empty at k = 0)
};

struct Trajectory {
  std::vector<StepRecord> steps;  // K + 1 entries
  std::vector<double> final_latent;
};

/// Inference unroll. Plain: wrap only. Caps: caps, wrap and clip. Ls / CapsLs:
/// line search per graph (with caps for CapsLs).
Trajectory unroll(const GraphBatch& batch, const State& state0, const ModelParams& params, std::size_t K,
                  UnrollMode mode, const LsConfig& cfg = {});

/// Differentiable unroll used for training (caps and bounds, no line search).
/// Returns per-step masked residual tensors evaluated after each update, k = 0..K-1.
struct TrainTrajectory {
  std::vector<ad::Tensor> dp;  // N x 1 each
  std::vector<ad::Tensor> dq;
  ad::Tensor v;
  ad::Tensor theta;
};

TrainTrajectory unroll_train(ad::Tape& tape, const GraphBatch& batch, const State& state0,
                             const ModelParams& params, std::size_t K, const LsConfig& cfg = {},
                             bool caps = true);

/// Differentiable masked mismatch of every node.
std::pair<ad::Tensor, ad::Tensor> residual_tensors(ad::Tape& tape, const GraphBatch& batch, const ad::Tensor& v,
                                                   const ad::Tensor& theta);

}  // namespace pignn
