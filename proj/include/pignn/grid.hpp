#pragma once

// Static network description: buses, pi-model lines, per-unit conversion and
// nodal admittance assembly.

#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pignn {

using Complex = std::complex<double>;

enum class BusType { Slack, PV, PQ };
enum class Regime { MV, HV };

const char* to_string(BusType type);
const char* to_string(Regime regime);
BusType bus_type_from_string(const std::string& text);
Regime regime_from_string(const std::string& text);

struct Bus {
  std::size_t id = 0;
  BusType kind = BusType::PQ;
  double p_set = 0.0;      // p.u., generation positive
  double q_set = 0.0;      // p.u.
  double v_set = 1.0;      // p.u., Slack and PV
  double theta_set = 0.0;  // rad, Slack

  bool operator==(const Bus&) const = default;
};

/// Pi-model line in per-unit. `b_total` is the full charging susceptance,
/// split half per line end.
struct Line {
  std::size_t from = 0;
  std::size_t to = 0;
  double r = 0.0;
  double x = 0.0;
  double b_total = 0.0;

  bool operator==(const Line&) const = default;
};

struct Grid {
  std::vector<Bus> buses;
  std::vector<Line> lines;
  double v_base = 1.0;  // V
  double s_base = 1.0;  // VA
  Regime regime = Regime::HV;

  std::size_t size() const { return buses.size(); }
  bool operator==(const Grid&) const = default;
};

struct PiParams {
  Complex y_series;
  double b_half = 0.0;
};

/// Series admittance and half-shunt of one line. Throws std::invalid_argument
/// ("degenerate line") when the series impedance is zero.
PiParams line_pi_params(const Line& line);

/// One undirected branch after merging parallel lines. Orientation follows
/// the first line seen between the pair.
struct Branch {
  std::size_t from = 0;
  std::size_t to = 0;
  Complex y_series;
  double b_half = 0.0;
};

/// Dense complex nodal admittance with a compressed neighbour view used by
/// the O(E) injection kernels.
class AdmittanceMatrix {
 public:
  AdmittanceMatrix() = default;
  explicit AdmittanceMatrix(std::size_t n);

  std::size_t size() const { return n_; }
  const Complex& operator()(std::size_t i, std::size_t j) const { return dense_(i, j); }
  const Eigen::MatrixXcd& dense() const { return dense_; }

  /// Off-diagonal nonzeros of row i as (column, Y_ij) pairs.
  struct Entry {
    std::size_t col;
    Complex value;
  };
  const std::vector<Entry>& row(std::size_t i) const { return rows_[i]; }
  const std::vector<Branch>& branches() const { return branches_; }

 private:
  friend AdmittanceMatrix build_admittance(const Grid& grid);

  std::size_t n_ = 0;
  Eigen::MatrixXcd dense_;
  std::vector<std::vector<Entry>> rows_;
  std::vector<Branch> branches_;
};

/// Throws std::invalid_argument with "bus typing" or "disconnected" when the
/// grid invariants are violated.
AdmittanceMatrix build_admittance(const Grid& grid);

/// Parallel lines merged into single branches, in first-seen order.
std::vector<Branch> merge_branches(const Grid& grid);

// Engineering-unit description, as drawn by the scenario sampler.
struct EngineeringBus {
  BusType kind = BusType::PQ;
  double p_mw = 0.0;
  double q_mvar = 0.0;
  double v_set = 1.0;  // already p.u.
  double theta_set = 0.0;
};

struct EngineeringLine {
  std::size_t from = 0;
  std::size_t to = 0;
  double r_ohm_per_km = 0.0;
  double x_ohm_per_km = 0.0;
  double c_nf_per_km = 0.0;
  double length_km = 0.0;
};

struct EngineeringGrid {
  std::vector<EngineeringBus> buses;
  std::vector<EngineeringLine> lines;
  double v_base = 1.0;
  double s_base = 1.0;
  Regime regime = Regime::HV;
};

inline constexpr double kDefaultFrequencyHz = 50.0;

struct Bases {
  double v_base;
  double s_base;

  double z_base() const { return v_base * v_base / s_base; }
  double y_base() const { return s_base / (v_base * v_base); }
};

Grid to_per_unit(const EngineeringGrid& grid, double frequency_hz = kDefaultFrequencyHz);

/// Inverse of to_per_unit. Lines come back with length 1 km so the per-km
/// fields carry the line totals.
EngineeringGrid to_engineering(const Grid& grid, double frequency_hz = kDefaultFrequencyHz);

struct GridReport {
  bool connected = true;
  std::size_t slack_count = 0;
  std::size_t duplicate_edges = 0;
  std::size_t self_loops = 0;
  std::vector<std::string> issues;

  bool valid() const { return issues.empty(); }
};

GridReport validate_grid(const Grid& grid);

/// Breadth-first reachability from node 0 over an undirected edge list.
bool is_connected(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges);

}  // namespace pignn
