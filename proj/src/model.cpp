#include "pignn/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pignn/random.hpp"

namespace pignn {

using ad::Shape;
using ad::Tape;
using ad::Tensor;

const char* to_string(AggregatorKind kind) { return kind == AggregatorKind::MLP ? "mlp" : "attn"; }

AggregatorKind aggregator_from_string(const std::string& text) {
  if (text == "mlp") return AggregatorKind::MLP;
  if (text == "attn" || text == "attention") return AggregatorKind::Attention;
  throw std::invalid_argument("unknown model kind '" + text + "' (expected mlp or attn)");
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

std::vector<double> glorot(std::size_t fan_in, std::size_t fan_out, double gain, Rng& rng) {
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> w(fan_in * fan_out);
  for (auto& x : w) x = rng.uniform(-limit, limit);
  return w;
}

}  // namespace

ModelParams::ModelParams(ModelConfig config, std::uint64_t seed) : config_(config) {
  const auto d = config_.d_model;
  const auto h = config_.hidden;
  const auto in = config_.feature_width();
  if (d == 0 || h == 0 || config_.heads == 0 || config_.layers == 0)
    throw std::invalid_argument("model dimensions must be positive");
  if (config_.kind == AggregatorKind::Attention && d % config_.heads != 0)
    throw std::invalid_argument("d_model must be divisible by heads");
  Rng rng(seed);

  auto dense = [&](const std::string& name, std::size_t fi, std::size_t fo, double gain, bool bias) {
    add(name + ".w", {fi, fo}, glorot(fi, fo, gain, rng));
    if (bias) add(name + ".b", {1, fo}, std::vector<double>(fo, 0.0));
  };

  if (config_.kind == AggregatorKind::MLP) {
    dense("msg1", in + kEdgeFeatureWidth, h, 1.0, true);
    dense("msg2", h, config_.channels, 1.0, true);
    dense("msg_proj", config_.channels, d, 1.0, false);
  } else {
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const std::string p = "attn" + std::to_string(l);
      const auto width = l == 0 ? in : d;
      dense(p + ".q", width, d, 1.0, false);
      dense(p + ".k", width, d, 1.0, false);
      dense(p + ".v", width, d, 1.0, false);
      dense(p + ".o", d, d, 1.0, false);
      dense(p + ".edge1", kEdgeFeatureWidth, config_.edge_hidden, 1.0, true);
      dense(p + ".edge2", config_.edge_hidden, config_.heads, 1.0, true);
    }
  }
  dense("upd1", in + d, h, 1.0, true);
  dense("upd2", h, h, 1.0, true);
  // Small output layer so the untrained operator starts with modest steps.
  dense("upd3", h, 2 + d, 0.1, true);
}

void ModelParams::add(const std::string& name, Shape shape, std::vector<double> values) {
  entries_.emplace_back(name, Tensor::parameter(shape, std::move(values)));
}

const Tensor& ModelParams::at(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw std::out_of_range("no parameter named '" + name + "'");
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  out.config_ = config_;
  for (const auto& [n, t] : entries_)
    out.add(n, t.shape(), std::vector<double>(t.values().begin(), t.values().end()));
  return out;
}

void ModelParams::assign(const std::string& name, Shape shape, std::vector<double> values) {
  for (auto& [n, t] : entries_) {
    if (n != name) continue;
    if (!(t.shape() == shape) || values.size() != shape.size())
      throw std::invalid_argument("parameter '" + name + "' expects shape " + t.shape().str() + ", got " +
                                  shape.str());
    t = Tensor::parameter(shape, std::move(values));
    return;
  }
  throw std::invalid_argument("unknown parameter '" + name + "' for this architecture");
}

// ---------------------------------------------------------------------------
// Configs and modes

void LsConfig::validate() const {
  if (!(alpha_min > 0.0 && alpha_min < alpha0)) throw std::invalid_argument("need 0 < alpha_min < alpha0");
  if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("need 0 < rho < 1");
  if (!(c1 > 0.0 && c1 < 1.0)) throw std::invalid_argument("need 0 < c1 < 1");
  if (!(d_theta_max > 0.0) || !(d_v_frac > 0.0)) throw std::invalid_argument("caps must be positive");
  if (!(v_min > 0.0 && v_min < v_max)) throw std::invalid_argument("need 0 < v_min < v_max");
}

const char* to_string(UnrollMode mode) {
  switch (mode) {
    case UnrollMode::Train: return "train";
    case UnrollMode::Plain: return "infer_plain";
    case UnrollMode::Caps: return "infer_caps";
    case UnrollMode::CapsLs: return "infer_caps_ls";
    case UnrollMode::Ls: return "infer_ls";
  }
  return "?";
}

UnrollMode mode_from_label(const std::string& label) {
  if (label == "base") return UnrollMode::Plain;
  if (label == "caps") return UnrollMode::Caps;
  if (label == "ls") return UnrollMode::Ls;
  if (label == "caps_ls") return UnrollMode::CapsLs;
  throw std::invalid_argument("unknown mode '" + label + "' (expected base, caps, ls or caps_ls)");
}

const char* mode_label(UnrollMode mode) {
  switch (mode) {
    case UnrollMode::Plain: return "base";
    case UnrollMode::Caps: return "caps";
    case UnrollMode::Ls: return "ls";
    case UnrollMode::CapsLs: return "caps_ls";
    case UnrollMode::Train: return "train";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Forward pieces

Tensor phys_features(Tape& tape, const Tensor& v, const Tensor& theta, const Tensor& dp, const Tensor& dq,
                     const Tensor& latent, bool residual_asinh) {
  if (residual_asinh) {
    const Tensor parts[] = {v, theta, tape.asinh(dp), tape.asinh(dq), latent};
    return tape.concat_cols(parts);
  }
  const Tensor parts[] = {v, theta, dp, dq, latent};
  return tape.concat_cols(parts);
}

Tensor edge_features(const GraphBatch& batch, const ModelConfig& config) {
  std::vector<double> f = batch.edge_raw;
  if (config.edge_log_features) {
    for (std::size_t e = 0; e < batch.num_edges(); ++e) {
      for (std::size_t c = 0; c < 3; ++c) {
        double& x = f[e * kEdgeFeatureWidth + c];
        x = std::copysign(std::log1p(std::abs(x)), x);
      }
    }
  }
  return Tensor::constant({batch.num_edges(), kEdgeFeatureWidth}, std::move(f));
}

Tensor mlp_aggregate(Tape& tape, const Tensor& features, const Tensor& edge_feats, const GraphBatch& batch,
                     const ModelParams& params) {
  const double slope = params.config().leaky_slope;
  const Tensor parts[] = {tape.gather_rows(features, batch.edge_src), edge_feats};
  const auto in = tape.concat_cols(parts);
  const auto h = tape.leaky_relu(tape.affine(in, params.at("msg1.w"), params.at("msg1.b")), slope);
  const auto phi = tape.affine(h, params.at("msg2.w"), params.at("msg2.b"));
  const auto agg = tape.scatter_add_rows(phi, batch.edge_dst, batch.num_nodes());
  return tape.matmul(agg, params.at("msg_proj.w"));
}

namespace {

// d x H indicator summing each head's d_h columns.
Tensor head_indicator(std::size_t d, std::size_t heads) {
  const auto dh = d / heads;
  std::vector<double> s(d * heads, 0.0);
  for (std::size_t c = 0; c < d; ++c) s[c * heads + c / dh] = 1.0;
  return Tensor::constant({d, heads}, std::move(s));
}

Tensor head_expander(std::size_t d, std::size_t heads) {
  const auto dh = d / heads;
  std::vector<double> s(heads * d, 0.0);
  for (std::size_t c = 0; c < d; ++c) s[(c / dh) * d + c] = 1.0;
  return Tensor::constant({heads, d}, std::move(s));
}

}  // namespace

AttentionOutput attn_aggregate(Tape& tape, const Tensor& features, const Tensor& edge_feats,
                               const GraphBatch& batch, const ModelParams& params) {
  const auto& cfg = params.config();
  const auto d = cfg.d_model;
  const auto heads = cfg.heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(d / heads));
  const auto reduce = head_indicator(d, heads);
  const auto expand = head_expander(d, heads);
  const auto n = batch.num_nodes();

  AttentionOutput out;
  Tensor x = features;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string p = "attn" + std::to_string(l);
    const auto q = tape.matmul(x, params.at(p + ".q.w"));
    const auto k = tape.matmul(x, params.at(p + ".k.w"));
    const auto v = tape.matmul(x, params.at(p + ".v.w"));

    const auto qe = tape.gather_rows(q, batch.edge_dst);
    const auto ke = tape.gather_rows(k, batch.edge_src);
    const auto ve = tape.gather_rows(v, batch.edge_src);
    const auto dot = tape.scale(tape.matmul(tape.mul(qe, ke), reduce), inv_sqrt_dh);

    const auto eh = tape.leaky_relu(tape.affine(edge_feats, params.at(p + ".edge1.w"), params.at(p + ".edge1.b")),
                                    cfg.leaky_slope);
    const auto beta = tape.affine(eh, params.at(p + ".edge2.w"), params.at(p + ".edge2.b"));

    const auto alpha = tape.segment_softmax(tape.add(dot, beta), batch.edge_dst, n);
    const auto msg = tape.mul(tape.matmul(alpha, expand), ve);
    const auto agg = tape.scatter_add_rows(msg, batch.edge_dst, n);
    x = tape.matmul(agg, params.at(p + ".o.w"));
    out.weights = alpha;
  }
  out.context = x;
  return out;
}

Proposal propose_update(Tape& tape, const Tensor& features, const Tensor& context, const GraphBatch& batch,
                        const ModelParams& params) {
  const double slope = params.config().leaky_slope;
  const Tensor parts[] = {features, context};
  const auto in = tape.concat_cols(parts);
  const auto h1 = tape.leaky_relu(tape.affine(in, params.at("upd1.w"), params.at("upd1.b")), slope);
  const auto h2 = tape.leaky_relu(tape.affine(h1, params.at("upd2.w"), params.at("upd2.b")), slope);
  const auto o = tape.affine(h2, params.at("upd3.w"), params.at("upd3.b"));
  const auto theta_free = Tensor::column(batch.theta_free);
  const auto v_free = Tensor::column(batch.v_free);
  return {tape.mul(tape.slice_cols(o, 0, 1), theta_free), tape.mul(tape.slice_cols(o, 1, 1), v_free),
          tape.slice_cols(o, 2, params.config().d_model)};
}

Proposal correction_step(Tape& tape, const Tensor& features, const Tensor& edge_feats, const GraphBatch& batch,
                         const ModelParams& params) {
  const auto ctx = params.kind() == AggregatorKind::MLP
                       ? mlp_aggregate(tape, features, edge_feats, batch, params)
                       : attn_aggregate(tape, features, edge_feats, batch, params).context;
  return propose_update(tape, features, ctx, batch, params);
}

std::pair<std::vector<double>, std::vector<double>> apply_caps(std::span<const double> dtheta,
                                                               std::span<const double> dv,
                                                               std::span<const double> v, const LsConfig& cfg) {
  std::vector<double> t(dtheta.size()), m(dv.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::clamp(dtheta[i], -cfg.d_theta_max, cfg.d_theta_max);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double cap = cfg.d_v_frac * std::abs(v[i]);
    m[i] = std::clamp(dv[i], -cap, cap);
  }
  return {std::move(t), std::move(m)};
}

// ---------------------------------------------------------------------------
// Line search

namespace {

State trial_state(const State& s, std::span<const double> dtheta, std::span<const double> dv, double alpha,
                  const LsConfig& cfg) {
  State t = s;
  for (std::size_t i = 0; i < t.size(); ++i) {
    t.theta[i] = wrap_angle(s.theta[i] + alpha * dtheta[i]);
    t.v[i] = std::clamp(s.v[i] + alpha * dv[i], cfg.v_min, cfg.v_max);
  }
  return t;
}

}  // namespace

LineSearchResult line_search_step(const State& state, std::span<const double> latent,
                                  std::span<const double> dtheta, std::span<const double> dv,
                                  std::span<const double> dm, const MeritFn& merit_fn, const LsConfig& cfg) {
  LineSearchResult r;
  r.state.theta = wrap_angle(state.theta);
  r.state.v = clip_voltage(state.v, cfg.v_min, cfg.v_max);
  r.latent.assign(latent.begin(), latent.end());
  const double fk = merit_fn(r.state);
  r.merit_before = fk;
  r.merit_after = fk;

  double alpha = cfg.alpha0;
  State trial = trial_state(r.state, dtheta, dv, alpha, cfg);
  double f = merit_fn(trial);
  while (!(f <= (1.0 - cfg.c1 * alpha) * fk)) {
    alpha *= cfg.rho;
    if (alpha < cfg.alpha_min) break;
    trial = trial_state(r.state, dtheta, dv, alpha, cfg);
    f = merit_fn(trial);
  }

  if (alpha < cfg.alpha_min) {
    alpha = cfg.alpha_min;
    trial = trial_state(r.state, dtheta, dv, alpha, cfg);
    f = merit_fn(trial);
    if (!(f < fk)) return r;
    r.fallback = true;
  }
  r.accepted = true;
  r.alpha = alpha;
  r.state = std::move(trial);
  r.merit_after = f;
  for (std::size_t i = 0; i < r.latent.size(); ++i) r.latent[i] += alpha * dm[i];
  return r;
}

// ---------------------------------------------------------------------------
// Residuals on the tape

std::pair<Tensor, Tensor> residual_tensors(Tape& tape, const GraphBatch& batch, const Tensor& v,
                                           const Tensor& theta) {
  const auto n = batch.num_nodes();
  const auto e = batch.num_edges();
  const auto g = Tensor::constant({e, 1}, batch.edge_g);
  const auto b = Tensor::constant({e, 1}, batch.edge_b);

  const auto vd = tape.gather_rows(v, batch.edge_dst);
  const auto vs = tape.gather_rows(v, batch.edge_src);
  const auto diff = tape.sub(tape.gather_rows(theta, batch.edge_dst), tape.gather_rows(theta, batch.edge_src));
  const auto c = tape.cos(diff);
  const auto s = tape.sin(diff);
  const auto vv = tape.mul(vd, vs);
  const auto pe = tape.mul(vv, tape.add(tape.mul(g, c), tape.mul(b, s)));
  const auto qe = tape.mul(vv, tape.sub(tape.mul(g, s), tape.mul(b, c)));

  const auto v2 = tape.square(v);
  const auto p = tape.add(tape.scatter_add_rows(pe, batch.edge_dst, n), tape.mul(v2, Tensor::column(batch.g_diag)));
  const auto q = tape.sub(tape.scatter_add_rows(qe, batch.edge_dst, n), tape.mul(v2, Tensor::column(batch.b_diag)));

  const auto dp = tape.mul(tape.sub(Tensor::column(batch.p_set), p), Tensor::column(batch.p_mask));
  const auto dq = tape.mul(tape.sub(Tensor::column(batch.q_set), q), Tensor::column(batch.q_mask));
  return {dp, dq};
}

// ---------------------------------------------------------------------------
// Unrolling

namespace {

void check_finite(std::span<const double> xs, const char* what, std::size_t k) {
  for (double x : xs)
    if (!std::isfinite(x))
      throw std::runtime_error(std::string("non-finite ") + what + " at unroll step " + std::to_string(k));
}

std::vector<double> merits(const GraphBatch& batch, const State& s) {
  std::vector<double> out(batch.num_graphs);
  for (std::size_t g = 0; g < batch.num_graphs; ++g) {
    const auto lo = batch.node_offset[g];
    const auto len = batch.graph_size(g);
    out[g] = graph_merit(batch, g, std::span(s.v).subspan(lo, len), std::span(s.theta).subspan(lo, len));
  }
  return out;
}

}  // namespace

Trajectory unroll(const GraphBatch& batch, const State& state0, const ModelParams& params, std::size_t K,
                  UnrollMode mode, const LsConfig& cfg) {
  if (mode == UnrollMode::Train) throw std::invalid_argument("use unroll_train for the training mode");
  const auto n = batch.num_nodes();
  if (state0.size() != n) throw std::invalid_argument("state size does not match batch");
  const auto d = params.config().d_model;
  const bool caps = mode == UnrollMode::Caps || mode == UnrollMode::CapsLs;
  const bool ls = mode == UnrollMode::Ls || mode == UnrollMode::CapsLs;
  const bool clip = caps || ls;

  State s = state0;
  s.theta = wrap_angle(s.theta);
  if (clip) s.v = clip_voltage(s.v, cfg.v_min, cfg.v_max);
  std::vector<double> m(n * d, 0.0);
  const auto edges = edge_features(batch, params.config());

  Trajectory traj;
  traj.steps.push_back({s, merits(batch, s), {}, {}});
  std::vector<double> dp(n), dq(n);

  for (std::size_t k = 0; k < K; ++k) {
    batch_residuals(batch, s.v, s.theta, dp, dq);
    Tape tape(false);
    const auto x = phys_features(tape, Tensor::column(s.v), Tensor::column(s.theta), Tensor::column(dp),
                                 Tensor::column(dq), Tensor::constant({n, d}, m),
                                 params.config().residual_asinh);
    const auto prop = correction_step(tape, x, edges, batch, params);
    std::vector<double> dth(prop.dtheta.values().begin(), prop.dtheta.values().end());
    std::vector<double> dv(prop.dv.values().begin(), prop.dv.values().end());
    const auto dm = prop.dm.values();
    check_finite(dth, "angle update", k);
    check_finite(dv, "voltage update", k);
    check_finite(dm, "latent update", k);
    if (caps) std::tie(dth, dv) = apply_caps(dth, dv, s.v, cfg);

    StepRecord rec;
    if (ls) {
      rec.alpha.resize(batch.num_graphs);
      rec.accepted.resize(batch.num_graphs);
      rec.merit.resize(batch.num_graphs);
      for (std::size_t g = 0; g < batch.num_graphs; ++g) {
        const auto lo = batch.node_offset[g];
        const auto len = batch.graph_size(g);
        const State local = slice_state(batch, s, g);
        auto merit_fn = [&](const State& t) { return graph_merit(batch, g, t.v, t.theta); };
        const auto res = line_search_step(local, std::span<const double>(m).subspan(lo * d, len * d),
                                          std::span<const double>(dth).subspan(lo, len),
                                          std::span<const double>(dv).subspan(lo, len), dm.subspan(lo * d, len * d),
                                          merit_fn, cfg);
        std::copy(res.state.v.begin(), res.state.v.end(), s.v.begin() + static_cast<std::ptrdiff_t>(lo));
        std::copy(res.state.theta.begin(), res.state.theta.end(), s.theta.begin() + static_cast<std::ptrdiff_t>(lo));
        std::copy(res.latent.begin(), res.latent.end(), m.begin() + static_cast<std::ptrdiff_t>(lo * d));
        rec.alpha[g] = res.alpha;
        rec.accepted[g] = res.accepted;
        rec.merit[g] = res.merit_after;
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        s.theta[i] = wrap_angle(s.theta[i] + dth[i]);
        s.v[i] += dv[i];
        if (clip) s.v[i] = std::clamp(s.v[i], cfg.v_min, cfg.v_max);
      }
      for (std::size_t i = 0; i < m.size(); ++i) m[i] += dm[i];
      rec.alpha.assign(batch.num_graphs, 1.0);
      rec.accepted.assign(batch.num_graphs, true);
      rec.merit = merits(batch, s);
    }
    check_finite(s.v, "voltage", k);
    rec.state = s;
    traj.steps.push_back(std::move(rec));
  }
  traj.final_latent = std::move(m);
  return traj;
}

TrainTrajectory unroll_train(Tape& tape, const GraphBatch& batch, const State& state0, const ModelParams& params,
                             std::size_t K, const LsConfig& cfg, bool caps) {
  const auto n = batch.num_nodes();
  if (state0.size() != n) throw std::invalid_argument("state size does not match batch");
  const auto d = params.config().d_model;

  TrainTrajectory out;
  out.theta = Tensor::column(wrap_angle(state0.theta));
  out.v = Tensor::column(clip_voltage(state0.v, cfg.v_min, cfg.v_max));
  Tensor m = Tensor::constant({n, d}, 0.0);
  const auto edges = edge_features(batch, params.config());
  const auto frac = Tensor::constant({n, 1}, cfg.d_v_frac);

  auto [dp, dq] = residual_tensors(tape, batch, out.v, out.theta);
  for (std::size_t k = 0; k < K; ++k) {
    const auto x = phys_features(tape, out.v, out.theta, dp, dq, m, params.config().residual_asinh);
    const auto prop = correction_step(tape, x, edges, batch, params);
    auto dth = prop.dtheta;
    auto dv = prop.dv;
    if (caps) {
      dth = tape.clamp(dth, -cfg.d_theta_max, cfg.d_theta_max);
      dv = tape.clamp_abs(dv, tape.mul(out.v, frac));
    }
    out.theta = tape.wrap_angle(tape.add(out.theta, dth));
    out.v = tape.clamp(tape.add(out.v, dv), cfg.v_min, cfg.v_max);
    m = tape.add(m, prop.dm);
    std::tie(dp, dq) = residual_tensors(tape, batch, out.v, out.theta);
    out.dp.push_back(dp);
    out.dq.push_back(dq);
  }
  return out;
}

}  // namespace pignn
