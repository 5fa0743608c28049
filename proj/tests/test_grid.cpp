#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pignn/grid.hpp"
#include "pignn/random.hpp"
#include "support.hpp"

using namespace pignn;
using pignn::testing::two_bus;

namespace {

bool has_issue(const GridReport& r, const std::string& needle) {
  return std::any_of(r.issues.begin(), r.issues.end(),
                     [&](const std::string& s) { return s.find(needle) != std::string::npos; });
}

Grid random_grid(std::size_t n, Rng& rng) {
  Grid g;
  for (std::size_t i = 0; i < n; ++i) g.buses.push_back(Bus{i, i == 0 ? BusType::Slack : BusType::PQ});
  for (std::size_t i = 1; i < n; ++i) {
    const auto parent = static_cast<std::size_t>(rng.index(i));
    g.lines.push_back(Line{parent, i, rng.uniform(0.0, 0.05), rng.uniform(0.01, 0.3), rng.uniform(0.0, 0.05)});
  }
  // a few extra chords, some parallel to tree edges
  for (int k = 0; k < 3; ++k) {
    const auto a = static_cast<std::size_t>(rng.index(n));
    const auto b = static_cast<std::size_t>(rng.index(n));
    if (a != b) g.lines.push_back(Line{a, b, rng.uniform(0.0, 0.05), rng.uniform(0.01, 0.3), rng.uniform(0.0, 0.05)});
  }
  return g;
}

}  // namespace

TEST_CASE("line_pi_params: reciprocal and half shunt") {
  const auto a = line_pi_params(Line{0, 1, 0.01, 0.1, 0.02});
  const Complex oracle = 1.0 / Complex(0.01, 0.1);
  CHECK(a.y_series.real() == doctest::Approx(0.990099).epsilon(1e-6));
  CHECK(a.y_series.imag() == doctest::Approx(-9.90099).epsilon(1e-6));
  CHECK(std::abs(a.y_series - oracle) < 1e-14);
  CHECK(a.b_half == 0.01);

  const auto b = line_pi_params(Line{0, 1, 0.0, 1.0, 0.0});
  CHECK(b.y_series == Complex(0.0, -1.0));
  CHECK(b.b_half == 0.0);

  CHECK_THROWS_WITH(line_pi_params(Line{0, 1, 0.0, 0.0, 0.0}), "degenerate line");
}

TEST_CASE("build_admittance: two-bus examples") {
  const auto y = build_admittance(two_bus(0.0, 0.1, 0.0));
  CHECK(std::abs(y(0, 0) - Complex(0, -10)) < 1e-12);
  CHECK(std::abs(y(1, 1) - Complex(0, -10)) < 1e-12);
  CHECK(std::abs(y(0, 1) - Complex(0, 10)) < 1e-12);
  CHECK(std::abs(y(1, 0) - Complex(0, 10)) < 1e-12);

  const auto ys = build_admittance(two_bus(0.0, 0.1, 0.02));
  CHECK(std::abs(ys(0, 0) - Complex(0, -9.99)) < 1e-12);
  CHECK(std::abs(ys(1, 1) - Complex(0, -9.99)) < 1e-12);
}

TEST_CASE("build_admittance: errors") {
  Grid g = two_bus(0.0, 0.1, 0.0);
  g.lines.clear();
  CHECK_THROWS_WITH(build_admittance(g), "disconnected");

  Grid two_slack = two_bus(0.0, 0.1, 0.0);
  two_slack.buses[1].kind = BusType::Slack;
  CHECK_THROWS_WITH(build_admittance(two_slack), "bus typing");
}

TEST_CASE("build_admittance: parallel lines add") {
  Grid g = two_bus(0.0, 0.1, 0.02);
  g.lines.push_back(Line{1, 0, 0.0, 0.2, 0.04});
  const auto y = build_admittance(g);
  // -j10 - j5 series, j0.01 + j0.02 shunt
  CHECK(std::abs(y(0, 0) - Complex(0, -15 + 0.03)) < 1e-12);
  CHECK(std::abs(y(0, 1) - Complex(0, 15)) < 1e-12);
  CHECK(y.branches().size() == 1);
}

TEST_CASE("build_admittance: matches the pi-model definition, symmetric, row identity") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = 2 + static_cast<std::size_t>(rng.index(10));
    const auto g = random_grid(n, rng);
    const auto y = build_admittance(g);
    const auto ref = testing::reference_ybus(g);
    std::vector<double> shunt(n, 0.0);
    for (const auto& l : g.lines) {
      shunt[l.from] += l.b_total / 2;
      shunt[l.to] += l.b_total / 2;
    }
    for (std::size_t i = 0; i < n; ++i) {
      Complex off = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(std::abs(y(i, j) - ref[i][j]) <= 1e-12 * (1 + std::abs(ref[i][j])));
        CHECK(y(i, j) == y(j, i));
        if (j != i) off -= y(i, j);
      }
      const Complex lhs = y(i, i) - Complex(0, shunt[i]);
      CHECK(std::abs(lhs - off) <= 1e-12 * std::max(1.0, std::abs(off)));
    }
  }
}

TEST_CASE("build_admittance: permutation equivariance") {
  Rng rng(5);
  const auto g = random_grid(7, rng);
  std::vector<std::size_t> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  // keep the slack first so typing stays valid either way
  std::reverse(perm.begin() + 1, perm.end());
  Grid h = g;
  for (std::size_t i = 0; i < 7; ++i) {
    h.buses[perm[i]] = g.buses[i];
    h.buses[perm[i]].id = perm[i];
  }
  for (auto& l : h.lines) {
    l.from = perm[l.from];
    l.to = perm[l.to];
  }
  const auto yg = build_admittance(g);
  const auto yh = build_admittance(h);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j) CHECK(std::abs(yg(i, j) - yh(perm[i], perm[j])) < 1e-12);
}

TEST_CASE("to_per_unit: bases and conversions") {
  CHECK(Bases{110e3, 100e6}.z_base() == doctest::Approx(121.0));

  EngineeringGrid mv;
  mv.v_base = 10e3;
  mv.s_base = 10e6;
  mv.buses = {EngineeringBus{BusType::Slack, 0, 0, 1.0}, EngineeringBus{BusType::PQ, -5.0, 2.0}};
  mv.lines = {EngineeringLine{0, 1, 0.5, 0.3, 10.0, 10.0}};
  const auto g = to_per_unit(mv);
  CHECK(g.lines[0].r == doctest::Approx(0.5));
  CHECK(g.lines[0].x == doctest::Approx(0.3));
  // b = omega C L Z_base with omega = 2 pi 50
  CHECK(g.lines[0].b_total == doctest::Approx(2 * 3.14159265358979 * 50 * 10e-9 * 10 * 10.0));
  CHECK(g.buses[1].p_set == doctest::Approx(-0.5));
  CHECK(g.buses[1].q_set == doctest::Approx(0.2));

  EngineeringGrid hv;
  hv.v_base = 110e3;
  hv.s_base = 100e6;
  hv.buses = {EngineeringBus{BusType::Slack}, EngineeringBus{BusType::PQ, 300.0, 0.0}};
  hv.lines = {EngineeringLine{0, 1, 0.15, 0.4, 9.0, 30.0}};
  CHECK(to_per_unit(hv).buses[1].p_set == doctest::Approx(3.0));

  EngineeringGrid bad = hv;
  bad.s_base = 0.0;
  CHECK_THROWS_AS(to_per_unit(bad), std::invalid_argument);
}

TEST_CASE("per-unit round trip") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    EngineeringGrid e;
    e.v_base = trial % 2 ? 10e3 : 110e3;
    e.s_base = trial % 2 ? 10e6 : 100e6;
    e.buses = {EngineeringBus{BusType::Slack, 0, 0, 1.02}, EngineeringBus{BusType::PQ, rng.uniform(-5, 5), rng.uniform(-2, 2)},
               EngineeringBus{BusType::PV, rng.uniform(-5, 5), 0.0, 0.97}};
    e.lines = {EngineeringLine{0, 1, rng.uniform(0.1, 0.6), rng.uniform(0.3, 0.45), rng.uniform(8, 14), 1.0},
               EngineeringLine{1, 2, rng.uniform(0.1, 0.6), rng.uniform(0.3, 0.45), rng.uniform(8, 14), 1.0}};
    const auto back = to_engineering(to_per_unit(e));
    for (std::size_t i = 0; i < e.buses.size(); ++i) {
      CHECK(back.buses[i].p_mw == doctest::Approx(e.buses[i].p_mw).epsilon(1e-12));
      CHECK(back.buses[i].q_mvar == doctest::Approx(e.buses[i].q_mvar).epsilon(1e-12));
    }
    for (std::size_t k = 0; k < e.lines.size(); ++k) {
      CHECK(back.lines[k].r_ohm_per_km == doctest::Approx(e.lines[k].r_ohm_per_km).epsilon(1e-12));
      CHECK(back.lines[k].x_ohm_per_km == doctest::Approx(e.lines[k].x_ohm_per_km).epsilon(1e-12));
      CHECK(back.lines[k].c_nf_per_km == doctest::Approx(e.lines[k].c_nf_per_km).epsilon(1e-12));
    }
  }
}

TEST_CASE("validate_grid") {
  Grid chain;
  chain.buses = {Bus{0, BusType::Slack}, Bus{1, BusType::PQ}, Bus{2, BusType::PQ}};
  chain.lines = {Line{0, 1, 0.01, 0.1, 0}, Line{1, 2, 0.01, 0.1, 0}};
  CHECK(validate_grid(chain).valid());

  Grid split;
  split.buses = {Bus{0, BusType::Slack}, Bus{1, BusType::PQ}, Bus{2, BusType::PQ}, Bus{3, BusType::PQ}};
  split.lines = {Line{0, 1, 0.01, 0.1, 0}};
  const auto r = validate_grid(split);
  CHECK_FALSE(r.connected);
  CHECK(has_issue(r, "disconnected"));

  Grid two_slack = chain;
  two_slack.buses[2].kind = BusType::Slack;
  const auto t = validate_grid(two_slack);
  CHECK(t.slack_count == 2);
  CHECK(has_issue(t, "bus typing"));

  Grid dup = chain;
  dup.lines.push_back(Line{2, 1, 0.01, 0.1, 0});
  dup.lines.push_back(Line{1, 1, 0.01, 0.1, 0});
  const auto d = validate_grid(dup);
  CHECK(d.duplicate_edges == 1);
  CHECK(d.self_loops == 1);

  Grid neg = chain;
  neg.lines[0].x = -0.1;
  CHECK(has_issue(validate_grid(neg), "out of range"));
}
