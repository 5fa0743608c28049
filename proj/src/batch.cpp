#include "pignn/batch.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pignn {

namespace {

void append_grid(GraphBatch& batch, const Grid& grid) {
  const auto y = build_admittance(grid);
  const std::size_t base = batch.num_nodes();
  const std::size_t g = batch.num_graphs;
  const std::size_t n = grid.size();

  for (std::size_t i = 0; i < n; ++i) {
    const auto& bus = grid.buses[i];
    batch.node_graph.push_back(g);
    batch.types.push_back(bus.kind);
    batch.p_set.push_back(bus.p_set);
    batch.q_set.push_back(bus.q_set);
    batch.g_diag.push_back(y(i, i).real());
    batch.b_diag.push_back(y(i, i).imag());
    const bool p_defined = bus.kind != BusType::Slack;
    const bool q_defined = bus.kind == BusType::PQ;
    batch.p_mask.push_back(p_defined ? 1.0 : 0.0);
    batch.q_mask.push_back(q_defined ? 1.0 : 0.0);
    batch.theta_free.push_back(p_defined ? 1.0 : 0.0);
    batch.v_free.push_back(q_defined ? 1.0 : 0.0);
  }
  batch.inv_graph_size.push_back(1.0 / static_cast<double>(n));

  auto add_edge = [&](std::size_t src, std::size_t dst, const Branch& br, double direction) {
    const Complex off = y(dst, src);
    batch.edge_src.push_back(base + src);
    batch.edge_dst.push_back(base + dst);
    batch.edge_g.push_back(off.real());
    batch.edge_b.push_back(off.imag());
    batch.edge_raw.insert(batch.edge_raw.end(), {br.y_series.real(), br.y_series.imag(), br.b_half, direction});
  };
  for (const auto& br : y.branches()) {
    add_edge(br.from, br.to, br, 0.0);
    add_edge(br.to, br.from, br, 1.0);
  }

  ++batch.num_graphs;
  batch.node_offset.push_back(batch.num_nodes());
  batch.edge_offset.push_back(batch.num_edges());
}

}  // namespace

GraphBatch block_diag_batch(std::span<const Grid* const> grids) {
  if (grids.empty()) throw std::invalid_argument("cannot batch zero grids");
  GraphBatch batch;
  for (const Grid* grid : grids) append_grid(batch, *grid);
  return batch;
}

GraphBatch block_diag_batch(const Grid& grid) {
  const Grid* one[] = {&grid};
  return block_diag_batch(one);
}

State concat_states(std::span<const State* const> states) {
  State out;
  for (const State* s : states) {
    out.v.insert(out.v.end(), s->v.begin(), s->v.end());
    out.theta.insert(out.theta.end(), s->theta.begin(), s->theta.end());
  }
  return out;
}

State slice_state(const GraphBatch& batch, const State& state, std::size_t g) {
  const auto lo = static_cast<std::ptrdiff_t>(batch.node_offset[g]);
  const auto hi = static_cast<std::ptrdiff_t>(batch.node_offset[g + 1]);
  return {std::vector<double>(state.v.begin() + lo, state.v.begin() + hi),
          std::vector<double>(state.theta.begin() + lo, state.theta.begin() + hi)};
}

namespace {

// Injections of nodes [lo, hi) using edges [elo, ehi). v, theta, p and q are
// indexed relative to lo.
void injections_range(const GraphBatch& b, std::size_t lo, std::size_t hi, std::size_t elo, std::size_t ehi,
                      std::span<const double> v, std::span<const double> theta, std::span<double> p,
                      std::span<double> q) {
  for (std::size_t i = lo; i < hi; ++i) {
    const double vi = v[i - lo];
    p[i - lo] = vi * vi * b.g_diag[i];
    q[i - lo] = -vi * vi * b.b_diag[i];
  }
  for (std::size_t e = elo; e < ehi; ++e) {
    const auto i = b.edge_dst[e] - lo;
    const auto k = b.edge_src[e] - lo;
    const double d = theta[i] - theta[k];
    const double c = std::cos(d);
    const double s = std::sin(d);
    const double vv = v[i] * v[k];
    p[i] += vv * (b.edge_g[e] * c + b.edge_b[e] * s);
    q[i] += vv * (b.edge_g[e] * s - b.edge_b[e] * c);
  }
}

}  // namespace

void batch_residuals(const GraphBatch& batch, std::span<const double> v, std::span<const double> theta,
                     std::span<double> dp, std::span<double> dq) {
  const auto n = batch.num_nodes();
  injections_range(batch, 0, n, 0, batch.num_edges(), v, theta, dp, dq);
  for (std::size_t i = 0; i < n; ++i) {
    dp[i] = batch.p_mask[i] != 0.0 ? batch.p_set[i] - dp[i] : 0.0;
    dq[i] = batch.q_mask[i] != 0.0 ? batch.q_set[i] - dq[i] : 0.0;
  }
}

double graph_merit(const GraphBatch& batch, std::size_t g, std::span<const double> v,
                   std::span<const double> theta) {
  const auto lo = batch.node_offset[g];
  const auto hi = batch.node_offset[g + 1];
  if (v.size() != hi - lo || theta.size() != hi - lo) throw std::invalid_argument("graph state size mismatch");
  std::vector<double> p(hi - lo), q(hi - lo);
  injections_range(batch, lo, hi, batch.edge_offset[g], batch.edge_offset[g + 1], v, theta, p, q);
  double f = 0.0;
  for (std::size_t i = lo; i < hi; ++i) {
    if (batch.p_mask[i] != 0.0) f = std::max(f, std::abs(batch.p_set[i] - p[i - lo]));
    if (batch.q_mask[i] != 0.0) f = std::max(f, std::abs(batch.q_set[i] - q[i - lo]));
  }
  return f;
}

}  // namespace pignn
