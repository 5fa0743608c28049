#include "pignn/grid.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <queue>
#include <set>
#include <stdexcept>

namespace pignn {

const char* to_string(BusType type) {
  switch (type) {
    case BusType::Slack: return "Slack";
    case BusType::PV: return "PV";
    case BusType::PQ: return "PQ";
  }
  return "?";
}

const char* to_string(Regime regime) { return regime == Regime::MV ? "MV" : "HV"; }

BusType bus_type_from_string(const std::string& text) {
  if (text == "Slack") return BusType::Slack;
  if (text == "PV") return BusType::PV;
  if (text == "PQ") return BusType::PQ;
  throw std::invalid_argument("unknown bus type '" + text + "'");
}

Regime regime_from_string(const std::string& text) {
  if (text == "MV") return Regime::MV;
  if (text == "HV") return Regime::HV;
  throw std::invalid_argument("unknown regime '" + text + "'");
}

PiParams line_pi_params(const Line& line) {
  const Complex z(line.r, line.x);
  if (z == Complex(0.0, 0.0)) throw std::invalid_argument("degenerate line");
  return {1.0 / z, 0.5 * line.b_total};
}

bool is_connected(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  if (n <= 1) return true;
  std::vector<std::vector<std::size_t>> adj(n);
  for (auto [a, b] : edges) {
    if (a >= n || b >= n) continue;
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::vector<bool> seen(n, false);
  std::queue<std::size_t> frontier;
  frontier.push(0);
  seen[0] = true;
  std::size_t visited = 1;
  while (!frontier.empty()) {
    const auto u = frontier.front();
    frontier.pop();
    for (auto w : adj[u]) {
      if (!seen[w]) {
        seen[w] = true;
        ++visited;
        frontier.push(w);
      }
    }
  }
  return visited == n;
}

namespace {

std::vector<std::pair<std::size_t, std::size_t>> edge_pairs(const Grid& grid) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  edges.reserve(grid.lines.size());
  for (const auto& line : grid.lines) edges.emplace_back(line.from, line.to);
  return edges;
}

std::size_t count_slack(const Grid& grid) {
  std::size_t count = 0;
  for (const auto& bus : grid.buses)
    if (bus.kind == BusType::Slack) ++count;
  return count;
}

}  // namespace

std::vector<Branch> merge_branches(const Grid& grid) {
  std::vector<Branch> branches;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> index;
  for (const auto& line : grid.lines) {
    const auto pi = line_pi_params(line);
    const auto key = std::minmax(line.from, line.to);
    auto [it, inserted] = index.try_emplace({key.first, key.second}, branches.size());
    if (inserted) {
      branches.push_back({line.from, line.to, pi.y_series, pi.b_half});
    } else {
      branches[it->second].y_series += pi.y_series;
      branches[it->second].b_half += pi.b_half;
    }
  }
  return branches;
}

AdmittanceMatrix::AdmittanceMatrix(std::size_t n)
    : n_(n), dense_(Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n))),
      rows_(n) {}

AdmittanceMatrix build_admittance(const Grid& grid) {
  const auto n = grid.size();
  if (count_slack(grid) != 1) throw std::invalid_argument("bus typing");
  for (const auto& line : grid.lines) {
    if (line.from >= n || line.to >= n || line.from == line.to)
      throw std::invalid_argument("invalid line endpoints");
  }
  if (!is_connected(n, edge_pairs(grid))) throw std::invalid_argument("disconnected");

  AdmittanceMatrix y(n);
  y.branches_ = merge_branches(grid);
  for (const auto& br : y.branches_) {
    const auto i = static_cast<Eigen::Index>(br.from);
    const auto j = static_cast<Eigen::Index>(br.to);
    y.dense_(i, j) -= br.y_series;
    y.dense_(j, i) -= br.y_series;
    y.dense_(i, i) += br.y_series + Complex(0.0, br.b_half);
    y.dense_(j, j) += br.y_series + Complex(0.0, br.b_half);
  }
  // Neighbour rows in branch order so that kernels sum in a label-independent order.
  for (const auto& br : y.branches_) {
    y.rows_[br.from].push_back({br.to, y.dense_(static_cast<Eigen::Index>(br.from), static_cast<Eigen::Index>(br.to))});
    y.rows_[br.to].push_back({br.from, y.dense_(static_cast<Eigen::Index>(br.to), static_cast<Eigen::Index>(br.from))});
  }
  return y;
}

Grid to_per_unit(const EngineeringGrid& eng, double frequency_hz) {
  if (!(eng.v_base > 0.0) || !(eng.s_base > 0.0))
    throw std::invalid_argument("per-unit bases must be positive");
  const Bases bases{eng.v_base, eng.s_base};
  const double z_base = bases.z_base();
  const double omega = 2.0 * std::numbers::pi * frequency_hz;

  Grid grid;
  grid.v_base = eng.v_base;
  grid.s_base = eng.s_base;
  grid.regime = eng.regime;
  grid.buses.reserve(eng.buses.size());
  for (std::size_t i = 0; i < eng.buses.size(); ++i) {
    const auto& b = eng.buses[i];
    grid.buses.push_back({i, b.kind, b.p_mw * 1e6 / eng.s_base, b.q_mvar * 1e6 / eng.s_base, b.v_set,
                          b.theta_set});
  }
  grid.lines.reserve(eng.lines.size());
  for (const auto& l : eng.lines) {
    Line line;
    line.from = l.from;
    line.to = l.to;
    line.r = l.r_ohm_per_km * l.length_km / z_base;
    line.x = l.x_ohm_per_km * l.length_km / z_base;
    line.b_total = omega * l.c_nf_per_km * 1e-9 * l.length_km * z_base;
    grid.lines.push_back(line);
  }
  return grid;
}

EngineeringGrid to_engineering(const Grid& grid, double frequency_hz) {
  if (!(grid.v_base > 0.0) || !(grid.s_base > 0.0))
    throw std::invalid_argument("per-unit bases must be positive");
  const Bases bases{grid.v_base, grid.s_base};
  const double z_base = bases.z_base();
  const double omega = 2.0 * std::numbers::pi * frequency_hz;

  EngineeringGrid eng;
  eng.v_base = grid.v_base;
  eng.s_base = grid.s_base;
  eng.regime = grid.regime;
  for (const auto& b : grid.buses)
    eng.buses.push_back({b.kind, b.p_set * grid.s_base / 1e6, b.q_set * grid.s_base / 1e6, b.v_set, b.theta_set});
  for (const auto& l : grid.lines) {
    eng.lines.push_back({l.from, l.to, l.r * z_base, l.x * z_base, l.b_total / (omega * z_base) * 1e9, 1.0});
  }
  return eng;
}

GridReport validate_grid(const Grid& grid) {
  GridReport report;
  const auto n = grid.size();
  report.slack_count = count_slack(grid);
  if (n == 0) report.issues.emplace_back("empty grid");
  if (report.slack_count != 1)
    report.issues.push_back("bus typing: " + std::to_string(report.slack_count) + " slack buses");

  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& line : grid.lines) {
    if (line.from >= n || line.to >= n) {
      report.issues.emplace_back("line endpoint out of range");
      continue;
    }
    if (line.from == line.to) {
      ++report.self_loops;
      continue;
    }
    if (!seen.insert(std::minmax(line.from, line.to)).second) ++report.duplicate_edges;
    if (!(line.r >= 0.0) || !(line.x > 0.0) || !(line.b_total >= 0.0) || !std::isfinite(line.r) ||
        !std::isfinite(line.x) || !std::isfinite(line.b_total))
      report.issues.push_back("line parameters out of range: " + std::to_string(line.from) + "-" +
                              std::to_string(line.to));
  }
  if (report.self_loops > 0) report.issues.push_back("self loops: " + std::to_string(report.self_loops));
  if (report.duplicate_edges > 0)
    report.issues.push_back("duplicate edges: " + std::to_string(report.duplicate_edges));

  report.connected = is_connected(n, edge_pairs(grid));
  if (!report.connected) report.issues.emplace_back("disconnected");

  for (const auto& bus : grid.buses) {
    if (!std::isfinite(bus.p_set) || !std::isfinite(bus.q_set))
      report.issues.push_back("non-finite setpoint at bus " + std::to_string(bus.id));
    if (bus.kind != BusType::PQ && !(bus.v_set >= 0.8 && bus.v_set <= 1.2))
      report.issues.push_back("voltage setpoint out of range at bus " + std::to_string(bus.id));
  }
  return report;
}

}  // namespace pignn
