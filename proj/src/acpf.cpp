#include "pignn/acpf.hpp"

#include "pignn/angles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace pignn {

namespace {

std::vector<Complex> phasors(const State& state) {
  std::vector<Complex> u(state.size());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = std::polar(state.v[i], state.theta[i]);
  return u;
}

bool all_finite(const State& s) {
  auto finite = [](double x) { return std::isfinite(x); };
  return std::all_of(s.v.begin(), s.v.end(), finite) && std::all_of(s.theta.begin(), s.theta.end(), finite);
}

}  // namespace

Injections compute_injections(const AdmittanceMatrix& y, const State& state) {
  const auto n = y.size();
  if (state.v.size() != n || state.theta.size() != n)
    throw std::invalid_argument("state dimension does not match admittance matrix");
  const auto u = phasors(state);
  Injections out{std::vector<double>(n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    Complex current = y(i, i) * u[i];
    for (const auto& e : y.row(i)) current += e.value * u[e.col];
    const Complex s = u[i] * std::conj(current);
    out.p[i] = s.real();
    out.q[i] = s.imag();
  }
  return out;
}

Residual compute_residuals(const Grid& grid, const AdmittanceMatrix& y, const State& state) {
  const auto n = grid.size();
  const auto inj = compute_injections(y, state);
  Residual r{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), std::vector<bool>(n, false),
             std::vector<bool>(n, false)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto& bus = grid.buses[i];
    if (bus.kind != BusType::Slack) {
      r.p_mask[i] = true;
      r.dp[i] = bus.p_set - inj.p[i];
    }
    if (bus.kind == BusType::PQ) {
      r.q_mask[i] = true;
      r.dq[i] = bus.q_set - inj.q[i];
    }
  }
  return r;
}

double merit(const Residual& residual) {
  double f = 0.0;
  for (std::size_t i = 0; i < residual.dp.size(); ++i) {
    if (residual.p_mask[i]) f = std::max(f, std::abs(residual.dp[i]));
    if (residual.q_mask[i]) f = std::max(f, std::abs(residual.dq[i]));
  }
  return f;
}

double merit_at(const Grid& grid, const AdmittanceMatrix& y, const State& state) {
  return merit(compute_residuals(grid, y, state));
}

Jacobian assemble_jacobian(const AdmittanceMatrix& y, const State& state, std::span<const BusType> types) {
  const auto n = y.size();
  Jacobian jac;
  std::vector<long> theta_col(n, -1);
  std::vector<long> v_col(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (types[i] != BusType::Slack) {
      theta_col[i] = static_cast<long>(jac.theta_buses.size());
      jac.theta_buses.push_back(i);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (types[i] == BusType::PQ) {
      v_col[i] = static_cast<long>(jac.theta_buses.size() + jac.v_buses.size());
      jac.v_buses.push_back(i);
    }
  }
  const auto dim = static_cast<Eigen::Index>(jac.dim());
  jac.matrix = Eigen::MatrixXd::Zero(dim, dim);

  const auto inj = compute_injections(y, state);
  const auto& v = state.v;
  const auto& th = state.theta;

  // Row index of the P equation equals theta_col, of the Q equation equals v_col.
  for (std::size_t i = 0; i < n; ++i) {
    const long rp = theta_col[i];
    const long rq = v_col[i];
    if (rp < 0) continue;
    const double gii = y(i, i).real();
    const double bii = y(i, i).imag();

    jac.matrix(rp, rp) = -inj.q[i] - bii * v[i] * v[i];
    if (rq >= 0) {
      jac.matrix(rp, rq) = inj.p[i] / v[i] + gii * v[i];
      jac.matrix(rq, rp) = inj.p[i] - gii * v[i] * v[i];
      jac.matrix(rq, rq) = inj.q[i] / v[i] - bii * v[i];
    }
    for (const auto& e : y.row(i)) {
      const auto k = e.col;
      const double g = e.value.real();
      const double b = e.value.imag();
      const double d = th[i] - th[k];
      const double c = std::cos(d);
      const double s = std::sin(d);
      const double a1 = g * s - b * c;
      const double a2 = g * c + b * s;
      if (theta_col[k] >= 0) {
        jac.matrix(rp, theta_col[k]) += v[i] * v[k] * a1;
        if (rq >= 0) jac.matrix(rq, theta_col[k]) += -v[i] * v[k] * a2;
      }
      if (v_col[k] >= 0) {
        jac.matrix(rp, v_col[k]) += v[i] * a2;
        if (rq >= 0) jac.matrix(rq, v_col[k]) += v[i] * a1;
      }
    }
  }
  return jac;
}

std::pair<State, NrReport> nr_solve(const Grid& grid, const AdmittanceMatrix& y, const State& state0,
                                    const NrOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const auto types = bus_types(grid);
  State x = state0;
  NrReport report;

  auto finish = [&](bool converged, std::string reason) {
    report.converged = converged;
    report.reason = std::move(reason);
    report.final_merit = report.merit_trail.empty() ? 0.0 : report.merit_trail.back();
    report.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return std::pair{x, report};
  };

  for (double vi : x.v)
    if (!(vi > 0.0)) return finish(false, "non-positive initial voltage");

  for (std::size_t iter = 0;; ++iter) {
    if (!all_finite(x)) return finish(false, "non-finite state");
    const auto r = compute_residuals(grid, y, x);
    const double f = merit(r);
    report.merit_trail.push_back(f);
    report.iterations = iter;
    if (!std::isfinite(f)) return finish(false, "non-finite mismatch");
    if (f <= options.tol) return finish(true, "converged");
    if (iter >= options.max_iter) return finish(false, "iteration limit");

    const auto jac = assemble_jacobian(y, x, types);
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(jac.dim()));
    for (std::size_t a = 0; a < jac.theta_buses.size(); ++a) rhs(static_cast<Eigen::Index>(a)) = r.dp[jac.theta_buses[a]];
    const auto off = jac.theta_buses.size();
    for (std::size_t a = 0; a < jac.v_buses.size(); ++a) rhs(static_cast<Eigen::Index>(off + a)) = r.dq[jac.v_buses[a]];

    Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac.matrix);
    if (!(lu.rcond() > 1e-14)) return finish(false, "singular Jacobian");
    const Eigen::VectorXd step = lu.solve(rhs);
    if (!step.allFinite()) return finish(false, "singular Jacobian");

    for (std::size_t a = 0; a < jac.theta_buses.size(); ++a) {
      const auto i = jac.theta_buses[a];
      x.theta[i] = wrap_angle(x.theta[i] + step(static_cast<Eigen::Index>(a)));
    }
    for (std::size_t a = 0; a < jac.v_buses.size(); ++a) {
      const auto i = jac.v_buses[a];
      x.v[i] += step(static_cast<Eigen::Index>(off + a));
    }
  }
}

double wrap_angle(double theta) { return wrap_to_pi(theta); }

std::vector<double> wrap_angle(std::span<const double> theta) {
  std::vector<double> out(theta.size());
  std::transform(theta.begin(), theta.end(), out.begin(), [](double t) { return wrap_angle(t); });
  return out;
}

std::vector<double> clip_voltage(std::span<const double> v, double v_min, double v_max) {
  std::vector<double> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [=](double x) { return std::clamp(x, v_min, v_max); });
  return out;
}

std::vector<BusType> bus_types(const Grid& grid) {
  std::vector<BusType> types;
  types.reserve(grid.size());
  for (const auto& b : grid.buses) types.push_back(b.kind);
  return types;
}

State flat_start(const Grid& grid) {
  State s{std::vector<double>(grid.size(), 1.0), std::vector<double>(grid.size(), 0.0)};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto& b = grid.buses[i];
    if (b.kind != BusType::PQ) s.v[i] = b.v_set;
    if (b.kind == BusType::Slack) s.theta[i] = b.theta_set;
  }
  return s;
}

}  // namespace pignn
