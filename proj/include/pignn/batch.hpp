#pragma once

// Block-diagonal packing of several grids into one disconnected graph.

#include <cstddef>
#include <span>
#include <vector>

#include "pignn/acpf.hpp"
#include "pignn/grid.hpp"

namespace pignn {

inline constexpr std::size_t kEdgeFeatureWidth = 4;

/// Concatenated nodes and directed edges of B grids. Each merged branch
/// contributes two scored directions: from->to with flag 0 and to->from with
/// flag 1. Edges of graph g occupy [edge_offset[g], edge_offset[g+1]).
struct GraphBatch {
  std::size_t num_graphs = 0;
  std::vector<std::size_t> node_offset{0};
  std::vector<std::size_t> edge_offset{0};
  std::vector<std::size_t> node_graph;

  // Per node.
  std::vector<BusType> types;
  std::vector<double> p_set, q_set, g_diag, b_diag;
  std::vector<double> p_mask, q_mask;  // 1 where the residual is defined
  std::vector<double> theta_free;      // 1 for PV and PQ
  std::vector<double> v_free;          // 1 for PQ
  std::vector<double> inv_graph_size;  // per graph, 1/N

  // Per directed edge; messages flow src -> dst, dst is the receiving bus.
  std::vector<std::size_t> edge_src, edge_dst;
  std::vector<double> edge_g, edge_b;  // off-diagonal admittance Y[dst][src]
  std::vector<double> edge_raw;        // [Re y, Im y, b_half, direction] per edge

  std::size_t num_nodes() const { return types.size(); }
  std::size_t num_edges() const { return edge_src.size(); }
  std::size_t graph_size(std::size_t g) const { return node_offset[g + 1] - node_offset[g]; }
};

/// Packs grids in order; node and edge offsets follow the input order.
GraphBatch block_diag_batch(std::span<const Grid* const> grids);
GraphBatch block_diag_batch(const Grid& grid);

/// Concatenates per-grid states in batch order.
State concat_states(std::span<const State* const> states);
State slice_state(const GraphBatch& batch, const State& state, std::size_t g);

/// Masked mismatch of every node (setpoint minus computed).
void batch_residuals(const GraphBatch& batch, std::span<const double> v, std::span<const double> theta,
                     std::span<double> dp, std::span<double> dq);

/// Merit of graph g; v and theta hold only that graph's buses (local indexing).
double graph_merit(const GraphBatch& batch, std::size_t g, std::span<const double> v, std::span<const double> theta);

}  // namespace pignn
