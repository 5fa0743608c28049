#include "doctest.h"

#include <cmath>
#include <numbers>

#include "pignn/acpf.hpp"
#include "pignn/random.hpp"
#include "pignn/synth.hpp"
#include "support.hpp"

using namespace pignn;
using pignn::testing::two_bus;

namespace {

Residual make_residual(std::vector<double> dp, std::vector<double> dq) {
  Residual r;
  r.p_mask.assign(dp.size(), true);
  r.q_mask.assign(dq.size(), true);
  r.p_mask[0] = r.q_mask[0] = false;
  r.dp = std::move(dp);
  r.dq = std::move(dq);
  return r;
}

struct Case {
  Grid grid;
  State state;
};

Case random_case(std::size_t n, Rng& rng) {
  Case c;
  for (std::size_t i = 0; i < n; ++i) {
    BusType t = i == 0 ? BusType::Slack : (rng.bernoulli(0.3) ? BusType::PV : BusType::PQ);
    c.grid.buses.push_back(Bus{i, t, rng.uniform(-1, 1), rng.uniform(-0.5, 0.5), rng.uniform(0.95, 1.05), 0.0});
  }
  for (std::size_t i = 1; i < n; ++i)
    c.grid.lines.push_back(Line{static_cast<std::size_t>(rng.index(i)), i, rng.uniform(0.001, 0.05),
                                rng.uniform(0.02, 0.3), rng.uniform(0.0, 0.05)});
  for (std::size_t i = 0; i < n; ++i) {
    c.state.v.push_back(rng.uniform(0.85, 1.15));
    c.state.theta.push_back(rng.uniform(-0.5, 0.5));
  }
  return c;
}

}  // namespace

TEST_CASE("compute_injections: examples") {
  const State flat{{1.0, 1.0}, {0.0, 0.0}};
  {
    const auto s = compute_injections(build_admittance(two_bus(0.0, 0.1, 0.0)), flat);
    CHECK(std::abs(s.p[0]) < 1e-12);
    CHECK(std::abs(s.p[1]) < 1e-12);
    CHECK(std::abs(s.q[0]) < 1e-12);
    CHECK(std::abs(s.q[1]) < 1e-12);
  }
  {
    const auto s = compute_injections(build_admittance(two_bus(0.0, 0.1, 0.02)), flat);
    // S = V conj(Y V) = conj(j b/2): charging shows up as negative absorbed Q
    CHECK(s.q[0] == doctest::Approx(-0.01));
    CHECK(s.q[1] == doctest::Approx(-0.01));
    const auto ref = testing::complex_power(two_bus(0.0, 0.1, 0.02), flat);
    CHECK(s.q[0] == doctest::Approx(ref[0].imag()));
    CHECK(std::abs(s.p[0]) < 1e-12);
  }
  {
    const State st{{1.0, 1.0}, {0.0, -0.1}};
    const auto s = compute_injections(build_admittance(two_bus(0.0, 0.1, 0.0)), st);
    CHECK(s.p[0] == doctest::Approx(std::sin(0.1) / 0.1));
    CHECK(s.p[1] == doctest::Approx(-std::sin(0.1) / 0.1));
    CHECK(s.p[0] == doctest::Approx(0.9983).epsilon(1e-4));
  }
}

TEST_CASE("compute_injections: agrees with complex arithmetic") {
  Rng rng(21);
  for (int t = 0; t < 30; ++t) {
    const auto c = random_case(2 + rng.index(9), rng);
    const auto s = compute_injections(build_admittance(c.grid), c.state);
    const auto ref = testing::complex_power(c.grid, c.state);
    for (std::size_t i = 0; i < c.grid.size(); ++i) {
      CHECK(std::abs(s.p[i] - ref[i].real()) < 1e-10);
      CHECK(std::abs(s.q[i] - ref[i].imag()) < 1e-10);
    }
  }
}

TEST_CASE("compute_residuals: examples") {
  SUBCASE("slack only") {
    Grid g;
    g.buses = {Bus{0, BusType::Slack, 0, 0, 1.0, 0.0}};
    const auto r = compute_residuals(g, build_admittance(g), State{{1.0}, {0.0}});
    CHECK(r.dp == std::vector<double>{0.0});
    CHECK(r.dq == std::vector<double>{0.0});
    CHECK(merit(r) == 0.0);
  }
  SUBCASE("flat start, one load") {
    const auto g = two_bus(0.0, 0.1, 0.0, -0.5, 0.0);
    const auto r = compute_residuals(g, build_admittance(g), flat_start(g));
    CHECK(r.dp[0] == 0.0);
    CHECK(r.dq[0] == 0.0);
    CHECK(r.dp[1] == doctest::Approx(-0.5));
    CHECK(std::abs(r.dq[1]) < 1e-12);
  }
  SUBCASE("PV has no reactive residual") {
    auto g = two_bus(0.0, 0.1, 0.02, 0.3, 0.7);
    g.buses[1].kind = BusType::PV;
    const auto r = compute_residuals(g, build_admittance(g), flat_start(g));
    CHECK(r.dq[1] == 0.0);
    CHECK_FALSE(r.q_mask[1]);
    CHECK(r.p_mask[1]);
  }
}

TEST_CASE("merit: infinity norm over masked entries") {
  CHECK(merit(make_residual({0, -0.5}, {0, 0})) == 0.5);
  CHECK(merit(make_residual({0, 0.1}, {0, -0.3})) == 0.3);
  auto r = make_residual({0, 0.1}, {0, -0.3});
  r.q_mask[1] = false;
  CHECK(merit(r) == 0.1);
}

TEST_CASE("assemble_jacobian: two-bus flat start") {
  const auto g = two_bus(0.0, 0.1, 0.0, -0.5, 0.0);
  const auto j = assemble_jacobian(build_admittance(g), flat_start(g), bus_types(g));
  REQUIRE(j.dim() == 2);
  CHECK(j.matrix(0, 0) == doctest::Approx(10.0));
}

TEST_CASE("assemble_jacobian: slack and PV only has no V block") {
  auto g = two_bus(0.0, 0.1, 0.0, 0.2, 0.0);
  g.buses[1].kind = BusType::PV;
  const auto j = assemble_jacobian(build_admittance(g), flat_start(g), bus_types(g));
  CHECK(j.v_buses.empty());
  CHECK(j.theta_buses.size() == 1);
  CHECK(j.matrix.rows() == 1);
  CHECK(j.matrix.cols() == 1);
}

TEST_CASE("assemble_jacobian: central differences of the injections") {
  Rng rng(8);
  constexpr double h = 1e-6;
  for (int t = 0; t < 100; ++t) {
    const auto c = random_case(2 + rng.index(11), rng);
    const auto y = build_admittance(c.grid);
    const auto types = bus_types(c.grid);
    const auto jac = assemble_jacobian(y, c.state, types);
    const auto rows_p = jac.theta_buses;  // P equations at PV and PQ
    const auto rows_q = jac.v_buses;      // Q equations at PQ
    std::vector<std::pair<bool, std::size_t>> cols;
    for (auto b : jac.theta_buses) cols.emplace_back(false, b);
    for (auto b : jac.v_buses) cols.emplace_back(true, b);
    for (std::size_t c_idx = 0; c_idx < cols.size(); ++c_idx) {
      auto plus = c.state, minus = c.state;
      auto& xp = cols[c_idx].first ? plus.v : plus.theta;
      auto& xm = cols[c_idx].first ? minus.v : minus.theta;
      xp[cols[c_idx].second] += h;
      xm[cols[c_idx].second] -= h;
      const auto sp = compute_injections(y, plus);
      const auto sm = compute_injections(y, minus);
      for (std::size_t r = 0; r < rows_p.size() + rows_q.size(); ++r) {
        const bool is_q = r >= rows_p.size();
        const auto bus = is_q ? rows_q[r - rows_p.size()] : rows_p[r];
        const double fd = is_q ? (sp.q[bus] - sm.q[bus]) / (2 * h) : (sp.p[bus] - sm.p[bus]) / (2 * h);
        const double an = jac.matrix(static_cast<long>(r), static_cast<long>(c_idx));
        CHECK(std::abs(an - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("nr_solve: two-bus load matches Gauss-Seidel") {
  const auto g = two_bus(0.0, 0.1, 0.0, -0.5, -0.2);
  const auto y = build_admittance(g);
  const auto [sol, rep] = nr_solve(g, y, flat_start(g));
  REQUIRE(rep.converged);
  CHECK(rep.final_merit <= 1e-8);
  const auto gs = testing::gauss_seidel(g, flat_start(g));
  REQUIRE(gs.has_value());
  CHECK(std::abs(sol.v[1] - gs->v[1]) <= 1e-8);
  CHECK(std::abs(sol.theta[1] - gs->theta[1]) <= 1e-8);
}

TEST_CASE("nr_solve: starting at the solution") {
  const auto g = two_bus(0.0, 0.1, 0.0, -0.5, -0.2);
  const auto y = build_admittance(g);
  const auto first = nr_solve(g, y, flat_start(g)).first;
  const auto [again, rep] = nr_solve(g, y, first);
  CHECK(rep.converged);
  CHECK(rep.iterations <= 1);
  CHECK(rep.final_merit <= 1e-8);
}

TEST_CASE("nr_solve: infeasible load is reported, not thrown") {
  const auto g = two_bus(0.0, 0.1, 0.0, -100.0, 0.0);
  const auto y = build_admittance(g);
  const auto [sol, rep] = nr_solve(g, y, flat_start(g));
  CHECK_FALSE(rep.converged);
  CHECK_FALSE(rep.reason.empty());
  CHECK_FALSE(testing::gauss_seidel(g, flat_start(g), 1e-13, 20000).has_value());
}

TEST_CASE("nr_solve on synthesized scenarios: fixed buses, monotone tail, residual") {
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto out = synthesize_scenario(seed % 2 ? Regime::MV : Regime::HV, 4 + seed % 9, seed);
    if (!out.scenario) continue;
    const auto& sc = *out.scenario;
    const auto& g = sc.grid;
    const auto& ref = sc.reference_state;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (g.buses[i].kind != BusType::PQ) CHECK(ref.v[i] == g.buses[i].v_set);
      if (g.buses[i].kind == BusType::Slack) CHECK(ref.theta[i] == g.buses[i].theta_set);
      CHECK(ref.theta[i] > -std::numbers::pi);
      CHECK(ref.theta[i] <= std::numbers::pi);
    }
    const auto& trail = sc.nr_report.merit_trail;
    bool tail = false;
    for (std::size_t k = 1; k < trail.size(); ++k) {
      if (trail[k - 1] < 1e-2) tail = true;
      if (tail) CHECK(trail[k] < trail[k - 1]);
    }
    CHECK(merit_at(g, build_admittance(g), ref) <= 1e-8);
    ++checked;
  }
  CHECK(checked > 20);
}

TEST_CASE("wrap_angle and clip_voltage") {
  CHECK(wrap_angle(3 * std::numbers::pi / 2) == doctest::Approx(-std::numbers::pi / 2));
  CHECK(wrap_angle(0.0) == 0.0);
  CHECK(wrap_angle(-std::numbers::pi) == std::numbers::pi);
  CHECK(wrap_angle(std::numbers::pi) == std::numbers::pi);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform(-50, 50);
    const double w = wrap_angle(x);
    CHECK(w > -std::numbers::pi);
    CHECK(w <= std::numbers::pi);
    CHECK(testing::angle_distance(w, x) < 1e-12);
  }
  const std::vector<double> v{1.3, 0.7, 1.0};
  CHECK(clip_voltage(v, 0.8, 1.2) == std::vector<double>{1.2, 0.8, 1.0});
}
