#include "pignn/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace pignn {

void TrainConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
  if (K == 0) throw std::invalid_argument("K must be at least 1");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (cosine_period == 0) throw std::invalid_argument("cosine_period must be positive");
  if (!(lr_max >= lr_min && lr_min >= 0.0)) throw std::invalid_argument("need 0 <= lr_min <= lr_max");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
  if (!(grad_clip >= 0.0)) throw std::invalid_argument("grad_clip must be non-negative");
}

double physics_loss(std::span<const double> step_means, double gamma) {
  if (step_means.empty()) throw std::invalid_argument("empty trajectory");
  const auto K = step_means.size();
  double loss = 0.0;
  for (std::size_t k = 0; k < K; ++k) loss += std::pow(gamma, static_cast<double>(K - 1 - k)) * step_means[k];
  return loss;
}

BatchLoss batch_physics_loss(ad::Tape& tape, const GraphBatch& batch, const TrainTrajectory& traj, double gamma) {
  const auto K = traj.dp.size();
  if (K == 0) throw std::invalid_argument("empty trajectory");
  const auto B = batch.num_graphs;
  const auto inv_n = ad::Tensor::column(batch.inv_graph_size);

  ad::Tensor per_graph;
  for (std::size_t k = 0; k < K; ++k) {
    const auto sq = tape.add(tape.square(traj.dp[k]), tape.square(traj.dq[k]));
    const auto step = tape.mul(tape.scatter_add_rows(sq, batch.node_graph, B), inv_n);
    const auto weighted = tape.scale(step, std::pow(gamma, static_cast<double>(K - 1 - k)));
    per_graph = k == 0 ? weighted : tape.add(per_graph, weighted);
  }
  BatchLoss out;
  out.per_scenario.assign(per_graph.values().begin(), per_graph.values().end());
  out.loss = tape.mean(per_graph);
  return out;
}

GraphBatch pack(std::span<const Scenario* const> scenarios, State& state0) {
  std::vector<const Grid*> grids;
  std::vector<const State*> states;
  for (const auto* s : scenarios) {
    grids.push_back(&s->grid);
    states.push_back(&s->initial_state);
  }
  state0 = concat_states(states);
  return block_diag_batch(grids);
}

std::vector<double> scenario_losses(const ModelParams& params, std::span<const Scenario> scenarios,
                                    const TrainConfig& cfg, const LsConfig& ls) {
  std::vector<double> out;
  out.reserve(scenarios.size());
  for (std::size_t lo = 0; lo < scenarios.size(); lo += cfg.batch_size) {
    const auto hi = std::min(scenarios.size(), lo + cfg.batch_size);
    std::vector<const Scenario*> chunk;
    for (auto i = lo; i < hi; ++i) chunk.push_back(&scenarios[i]);
    State s0;
    const auto batch = pack(chunk, s0);
    ad::Tape tape(false);
    const auto traj = unroll_train(tape, batch, s0, params, cfg.K, ls, cfg.caps);
    const auto bl = batch_physics_loss(tape, batch, traj, cfg.gamma);
    out.insert(out.end(), bl.per_scenario.begin(), bl.per_scenario.end());
  }
  return out;
}

double mean_loss(const ModelParams& params, std::span<const Scenario> scenarios, const TrainConfig& cfg,
                 const LsConfig& ls) {
  if (scenarios.empty()) throw std::invalid_argument("cannot evaluate the loss of an empty set");
  const auto l = scenario_losses(params, scenarios, cfg, ls);
  return std::accumulate(l.begin(), l.end(), 0.0) / static_cast<double>(l.size());
}

double cosine_lr(std::size_t epoch, const TrainConfig& cfg) {
  const auto period = static_cast<double>(cfg.cosine_period);
  const double e = cfg.cosine_restart ? static_cast<double>(epoch % cfg.cosine_period)
                                      : std::min(static_cast<double>(epoch), period);
  return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * e / period));
}

void adamw_update(std::span<double> w, std::span<const double> grad, std::span<double> m, std::span<double> v,
                  double lr, double weight_decay, double beta1, double beta2, double eps, std::size_t t) {
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    w[i] -= lr * weight_decay * w[i];
    w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
  }
}

AdamW::AdamW(const ModelParams& params, const TrainConfig& cfg)
    : weight_decay_(cfg.weight_decay), beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.eps) {
  for (const auto& [name, t] : params.entries()) {
    m_.emplace_back(t.size(), 0.0);
    v_.emplace_back(t.size(), 0.0);
  }
}

void AdamW::step(ModelParams& params, std::span<const std::vector<double>> grads, double lr) {
  auto& entries = params.entries();
  if (grads.size() != entries.size()) throw std::invalid_argument("gradient count does not match parameters");
  ++t_;
  for (std::size_t p = 0; p < entries.size(); ++p)
    adamw_update(entries[p].second.mutable_values(), grads[p], m_[p], v_[p], lr, weight_decay_, beta1_, beta2_,
                 eps_, t_);
}

double clip_grad_norm(std::span<std::vector<double>> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double x : g) sq += x * x;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads)
      for (double& x : g) x *= s;
  }
  return norm;
}

TrainResult train(std::span<const Scenario> train_set, std::span<const Scenario> val_set, const ModelConfig& model,
                  const TrainConfig& cfg, const LsConfig& ls, const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  ls.validate();
  if (train_set.empty()) throw std::invalid_argument("empty training split");
  if (val_set.empty()) throw std::invalid_argument("empty validation split");

  ModelParams params(model, derive_seed(cfg.seed, 0));
  AdamW opt(params, cfg);
  Rng shuffle_rng(derive_seed(cfg.seed, 1));

  TrainResult result;
  result.initial_train_loss = mean_loss(params, train_set, cfg, ls);
  result.initial_val_loss = mean_loss(params, val_set, cfg, ls);
  result.best = params.clone();
  result.best_val_loss = result.initial_val_loss;
  double best_seen = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = cosine_lr(epoch, cfg);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.index(i)]);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const auto hi = std::min(order.size(), lo + cfg.batch_size);
      std::vector<const Scenario*> chunk;
      for (auto i = lo; i < hi; ++i) chunk.push_back(&train_set[order[i]]);
      State s0;
      const auto batch = pack(chunk, s0);

      for (auto& [name, t] : params.entries()) t.zero_grad();
      ad::Tape tape;
      const auto traj = unroll_train(tape, batch, s0, params, cfg.K, ls, cfg.caps);
      const auto bl = batch_physics_loss(tape, batch, traj, cfg.gamma);
      const double value = bl.loss.item();
      if (!std::isfinite(value)) {
        result.diverged = true;
        result.message = "non-finite training loss at epoch " + std::to_string(epoch);
        return result;
      }
      tape.backward(bl.loss);
      std::vector<std::vector<double>> grads;
      for (const auto& [name, t] : params.entries()) grads.emplace_back(t.grad().begin(), t.grad().end());
      clip_grad_norm(grads, cfg.grad_clip);
      opt.step(params, grads, lr);
      loss_sum += value * static_cast<double>(chunk.size());
      seen += chunk.size();
    }

    EpochLog rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.val_loss = mean_loss(params, val_set, cfg, ls);
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(rec.val_loss)) {
      result.diverged = true;
      result.message = "non-finite validation loss at epoch " + std::to_string(epoch);
      return result;
    }
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val_loss < best_seen) {
      best_seen = rec.val_loss;
      result.best = params.clone();
      result.best_epoch = epoch;
      result.best_val_loss = rec.val_loss;
    }
  }
  return result;
}

}  // namespace pignn
