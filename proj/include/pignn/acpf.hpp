#pragma once

// Power injections, mismatch residuals, merit, polar Jacobian and the
// Newton-Raphson reference solver.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pignn/grid.hpp"

namespace pignn {

struct State {
  std::vector<double> v;      // p.u.
  std::vector<double> theta;  // rad

  std::size_t size() const { return v.size(); }
  bool operator==(const State&) const = default;
};

struct Injections {
  std::vector<double> p;
  std::vector<double> q;
};

/// Mismatch (setpoint minus computed). Entries outside the masks are exactly 0.
struct Residual {
  std::vector<double> dp;
  std::vector<double> dq;
  std::vector<bool> p_mask;  // PV and PQ
  std::vector<bool> q_mask;  // PQ
};

/// Reduced Jacobian over unknowns [theta at PV+PQ, V at PQ] and equations
/// [P at PV+PQ, Q at PQ], laid out as [[H, N], [M, L]].
struct Jacobian {
  Eigen::MatrixXd matrix;
  std::vector<std::size_t> theta_buses;
  std::vector<std::size_t> v_buses;

  std::size_t dim() const { return theta_buses.size() + v_buses.size(); }
};

struct NrReport {
  bool converged = false;
  std::size_t iterations = 0;
  double final_merit = 0.0;
  double wall_time = 0.0;  // seconds
  std::string reason;
  std::vector<double> merit_trail;
};

struct NrOptions {
  double tol = 1e-8;
  std::size_t max_iter = 30;
};

Injections compute_injections(const AdmittanceMatrix& y, const State& state);
Residual compute_residuals(const Grid& grid, const AdmittanceMatrix& y, const State& state);

/// max(||dP||_inf, ||dQ||_inf) over the masked entries; 0 when nothing is unknown.
double merit(const Residual& residual);

/// Convenience: merit of a state without keeping the residual.
double merit_at(const Grid& grid, const AdmittanceMatrix& y, const State& state);

Jacobian assemble_jacobian(const AdmittanceMatrix& y, const State& state, std::span<const BusType> types);

std::pair<State, NrReport> nr_solve(const Grid& grid, const AdmittanceMatrix& y, const State& state0,
                                    const NrOptions& options = {});

/// Maps to (-pi, pi]. Values already inside the interval are returned unchanged.
double wrap_angle(double theta);
std::vector<double> wrap_angle(std::span<const double> theta);

std::vector<double> clip_voltage(std::span<const double> v, double v_min, double v_max);

std::vector<BusType> bus_types(const Grid& grid);

/// V = v_set, theta = theta_set at Slack/PV, flat elsewhere.
State flat_start(const Grid& grid);

}  // namespace pignn
