#pragma once

// Label-free training of the unrolled solver against the discounted
// physics loss: AdamW, cosine schedule, block-diagonal mini-batches.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pignn/model.hpp"
#include "pignn/synth.hpp"

namespace pignn {

struct TrainConfig {
  double gamma = 0.9;
  std::size_t K = 10;
  std::size_t batch_size = 16;
  double weight_decay = 1e-3;
  double lr_max = 1e-4;
  double lr_min = 1e-6;
  std::size_t cosine_period = 20;
  bool cosine_restart = true;  // false: one anneal over the first period, then lr_min
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  double grad_clip = 1.0;  // global norm; 0 disables
  bool caps = true;        // caps and voltage bounds inside the differentiable unroll
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// Discounted sum of per-step mean mismatches, oldest step weighted least.
double physics_loss(std::span<const double> step_means, double gamma);

struct BatchLoss {
  ad::Tensor loss;                  // mean of the per-scenario losses
  std::vector<double> per_scenario;
};

BatchLoss batch_physics_loss(ad::Tape& tape, const GraphBatch& batch, const TrainTrajectory& traj, double gamma);

/// Physics loss of each scenario under the training unroll, without gradients.
std::vector<double> scenario_losses(const ModelParams& params, std::span<const Scenario> scenarios,
                                    const TrainConfig& cfg, const LsConfig& ls = {});
double mean_loss(const ModelParams& params, std::span<const Scenario> scenarios, const TrainConfig& cfg,
                 const LsConfig& ls = {});

double cosine_lr(std::size_t epoch, const TrainConfig& cfg);

/// One AdamW update of a flat array with bias-corrected moments and weight
/// decay applied directly to the weights. t counts from 1.
void adamw_update(std::span<double> w, std::span<const double> grad, std::span<double> m, std::span<double> v,
                  double lr, double weight_decay, double beta1, double beta2, double eps, std::size_t t);

class AdamW {
 public:
  AdamW(const ModelParams& params, const TrainConfig& cfg);
  /// grads holds one array per parameter, in entry order.
  void step(ModelParams& params, std::span<const std::vector<double>> grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  double weight_decay_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Scales all gradients so their global norm is at most max_norm; returns
/// the norm before scaling.
double clip_grad_norm(std::span<std::vector<double>> grads, double max_norm);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double wall_time = 0.0;
};

struct TrainResult {
  ModelParams best;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  double initial_train_loss = 0.0;
  double initial_val_loss = 0.0;
  std::vector<EpochLog> log;
  bool diverged = false;
  std::string message;
};

/// Shuffled mini-batch epochs; keeps the parameters with the lowest
/// validation loss. A non-finite loss stops training with the last good
/// checkpoint.
TrainResult train(std::span<const Scenario> train_set, std::span<const Scenario> val_set, const ModelConfig& model,
                  const TrainConfig& cfg, const LsConfig& ls = {},
                  const std::function<void(const EpochLog&)>& on_epoch = {});

/// Packs scenarios into one batch; state0 receives the concatenated initial states.
GraphBatch pack(std::span<const Scenario* const> scenarios, State& state0);

}  // namespace pignn
