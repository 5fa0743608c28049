#pragma once

// Independent oracles and small fixtures shared by the tests and the
// acceptance runner. Nothing here calls into the solver under test.

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <vector>

#include "pignn/acpf.hpp"
#include "pignn/grid.hpp"

namespace pignn::testing {

inline Grid two_bus(double r, double x, double b, double p2 = 0.0, double q2 = 0.0) {
  Grid g;
  g.buses = {Bus{0, BusType::Slack, 0.0, 0.0, 1.0, 0.0}, Bus{1, BusType::PQ, p2, q2, 1.0, 0.0}};
  g.lines = {Line{0, 1, r, x, b}};
  return g;
}

/// Dense Y straight from the pi-model definition, no branch merging logic.
inline std::vector<std::vector<std::complex<double>>> reference_ybus(const Grid& g) {
  const auto n = g.size();
  std::vector<std::vector<std::complex<double>>> y(n, std::vector<std::complex<double>>(n));
  for (const auto& l : g.lines) {
    const std::complex<double> ys = 1.0 / std::complex<double>(l.r, l.x);
    const std::complex<double> sh(0.0, l.b_total / 2.0);
    y[l.from][l.from] += ys + sh;
    y[l.to][l.to] += ys + sh;
    y[l.from][l.to] -= ys;
    y[l.to][l.from] -= ys;
  }
  return y;
}

/// S_i = V_i conj(sum_k Y_ik V_k) evaluated with complex arithmetic.
inline std::vector<std::complex<double>> complex_power(const Grid& g, const State& s) {
  const auto y = reference_ybus(g);
  const auto n = g.size();
  std::vector<std::complex<double>> u(n), out(n);
  for (std::size_t i = 0; i < n; ++i) u[i] = std::polar(s.v[i], s.theta[i]);
  for (std::size_t i = 0; i < n; ++i) {
    std::complex<double> current = 0.0;
    for (std::size_t k = 0; k < n; ++k) current += y[i][k] * u[k];
    out[i] = u[i] * std::conj(current);
  }
  return out;
}

/// Classic Gauss-Seidel fixed-point power flow. PV buses take their reactive
/// power from the current iterate and are rescaled to the magnitude setpoint.
/// Returns nullopt when the sweep does not settle within max_sweeps.
inline std::optional<State> gauss_seidel(const Grid& g, State s, double tol = 1e-13,
                                         std::size_t max_sweeps = 200000) {
  const auto y = reference_ybus(g);
  const auto n = g.size();
  std::vector<std::complex<double>> u(n);
  for (std::size_t i = 0; i < n; ++i) u[i] = std::polar(s.v[i], s.theta[i]);
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double change = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& bus = g.buses[i];
      if (bus.kind == BusType::Slack) continue;
      std::complex<double> others = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        if (k != i) others += y[i][k] * u[k];
      double q = bus.q_set;
      if (bus.kind == BusType::PV) q = std::imag(u[i] * std::conj(others + y[i][i] * u[i]));
      const std::complex<double> s_set(bus.p_set, q);
      auto next = (std::conj(s_set) / std::conj(u[i]) - others) / y[i][i];
      if (bus.kind == BusType::PV) next = std::polar(bus.v_set, std::arg(next));
      change = std::max(change, std::abs(next - u[i]));
      u[i] = next;
      if (!std::isfinite(u[i].real()) || !std::isfinite(u[i].imag())) return std::nullopt;
    }
    if (change < tol) {
      for (std::size_t i = 0; i < n; ++i) {
        s.v[i] = std::abs(u[i]);
        s.theta[i] = std::arg(u[i]);
      }
      return s;
    }
  }
  return std::nullopt;
}

inline double angle_distance(double a, double b) {
  const double d = std::remainder(a - b, 2.0 * 3.14159265358979323846);
  return std::abs(d);
}

}  // namespace pignn::testing
