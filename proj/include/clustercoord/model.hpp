#pragma once

// Domain model of a regional data-center cluster: front ends that admit
// workload, back ends that process it and balance energy from the grid,
// PV, a battery and bilateral sharing with the other back ends.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace clustercoord {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// Dense row-major I x I matrix used for sharing capacities and trades.
class SquareMatrix {
 public:
  SquareMatrix() = default;
  explicit SquareMatrix(std::size_t n, double fill = 0.0) : n_(n), data_(n * n, fill) {}

  std::size_t size() const { return n_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * n_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * n_ + c]; }
  double row_sum(std::size_t r) const;
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  bool operator==(const SquareMatrix&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<double> data_;
};

/// A front-end to back-end transfer link (an element of Omega).
struct Link {
  int front = 0;
  int back = 0;
  double capacity = 0.0;        // M_ij, workload per slot
  double bandwidth_cost = 0.0;  // alpha_ij, $ per workload unit
};

struct ClusterTopology {
  int backends = 0;
  int frontends = 0;
  std::vector<Link> links;
  SquareMatrix sharing_cap;  // U_bar, symmetric with zero diagonal

  std::vector<int> links_of_front(int j) const;
  std::vector<int> links_of_back(int i) const;
  /// Sum of M_ij over the back ends linked to front end j.
  double front_link_capacity(int j) const;
  /// Sum of M_ij over the front ends linked to back end i.
  double back_link_capacity(int i) const;
  int pair_count() const { return backends * (backends - 1) / 2; }

  void validate() const;
};

struct FrontEndParams {
  double queue_cap = 0.0;    // Q_j^F
  double reject_cost = 0.0;  // gamma_j
  double arrival_max = 0.0;  // A_{j,max}
};

struct BackEndParams {
  double queue_cap = 0.0;    // Q_i^B
  double process_cap = 0.0;  // E_i
  double charge_max = 0.0;   // C_i
  double discharge_max = 0.0;
  double battery_min = 0.0;
  double battery_max = 0.0;
  double wear_cost = 0.0;  // beta_i
};

/// Topology plus every static parameter block.
struct Cluster {
  ClusterTopology topology;
  std::vector<FrontEndParams> front;
  std::vector<BackEndParams> back;
  double eta_charge = 1.0;
  double eta_discharge = 1.0;

  int backends() const { return topology.backends; }
  int frontends() const { return topology.frontends; }
  std::size_t link_count() const { return topology.links.size(); }
  double max_process_cap() const;

  void validate() const;
};

/// Exogenous data revealed at the start of a slot.
struct SlotInput {
  std::vector<double> arrivals;    // A_j(t)
  std::vector<double> pv;          // z_i(t)
  std::vector<double> price_buy;   // p^b_i(t)
  std::vector<double> price_sell;  // p^s_i(t)
  double price_trade = 0.0;        // p^t(t)

  void validate(const Cluster& cluster) const;
};

/// Worst-case prices declared for a trace.
struct PriceBounds {
  double buy_max = 0.0;   // P^b_max
  double sell_min = 0.0;  // P^s_min
};

struct SystemState {
  int slot = 0;
  std::vector<double> q_front;
  std::vector<double> q_back;
  std::vector<double> battery;
  // Virtual queues; meaning depends on the controller mode.
  std::vector<double> h_front;
  std::vector<double> h_back;
  std::vector<double> battery_gap;  // l_i

  /// Empty queues and the given battery levels; virtual queues zeroed.
  static SystemState initial(const Cluster& cluster, const std::vector<double>& battery);
};

struct Decision {
  std::vector<double> accept;    // a_j
  std::vector<double> transfer;  // m_ij, indexed by link
  std::vector<double> process;   // e_i
  std::vector<double> buy;       // x_i
  std::vector<double> sell;      // y_i
  std::vector<double> charge;    // c_i
  std::vector<double> discharge; // d_i
  SquareMatrix share;            // u_ik, energy bought by i from k

  static Decision zero(const Cluster& cluster);
};

struct CostBreakdown {
  double grid = 0.0;
  double battery = 0.0;
  double transfer = 0.0;
  double work = 0.0;

  double total() const { return grid + battery + transfer + work; }
  CostBreakdown& operator+=(const CostBreakdown& o);
};

enum class BoundKind { FrontQueue, BackQueue, Battery };

struct BoundViolation {
  BoundKind kind;
  int index = 0;
  double value = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

std::string describe(const BoundViolation& v);

struct QueueUpdate {
  std::vector<double> q_front;
  std::vector<double> q_back;
  std::vector<BoundViolation> violations;
};

struct BatteryUpdate {
  std::vector<double> levels;
  std::vector<BoundViolation> violations;
};

inline constexpr double kStateSlack = 1e-9;
inline constexpr double kFeasibilityTol = 1e-6;

/// Applies the FIFO queue recursions without clamping. Violations beyond
/// kStateSlack are reported, never corrected.
QueueUpdate step_queues(const SystemState& state, const Decision& decision, const Cluster& cluster);

BatteryUpdate step_battery(const SystemState& state, const Decision& decision, const Cluster& cluster);

CostBreakdown slot_cost(const Decision& decision, const SlotInput& input, const Cluster& cluster);

/// x - y + d - c + z + sum_k u_ik - e per back end.
std::vector<double> power_balance_residual(const Decision& decision, const SlotInput& input);

struct FeasibilityReport {
  std::vector<std::string> problems;
  bool ok() const { return problems.empty(); }
};

/// Checks the per-slot box constraints, antisymmetry of u and power balance.
FeasibilityReport check_decision(const Decision& decision, const SlotInput& input, const Cluster& cluster,
                                 double tol = kFeasibilityTol);

struct AssumptionCheck {
  std::string name;  // "A1".."A4"
  int index = 0;     // front end for A1, back end otherwise
  double lhs = 0.0;
  double rhs = 0.0;
  bool passed = false;
  /// lhs - rhs for A1..A3, rhs - lhs for A4; negative when violated.
  double margin = 0.0;
};

struct AssumptionReport {
  std::vector<AssumptionCheck> checks;
  bool all_passed() const;
  std::string summary() const;
};

/// Evaluates the capacity and price assumptions the online controller relies on.
AssumptionReport check_assumptions(const Cluster& cluster, const PriceBounds& prices);

}  // namespace clustercoord
