#pragma once

// Benchmarks with hindsight or without lookahead: the full-horizon LP and a
// myopic threshold-charging policy.

#include <vector>

#include "clustercoord/lp.hpp"
#include "clustercoord/model.hpp"
#include "clustercoord/traces.hpp"

namespace clustercoord {

/// Largest horizon the dense simplex is allowed to take on.
inline constexpr int kMaxHorizon = 2000;

struct SlotColumns {
  std::vector<int> accept, transfer, process, buy, sell, charge, discharge;
  std::vector<int> share;  // one per unordered pair (i<k), -1 when the cap is zero
  // State after the slot.
  std::vector<int> q_front, q_back, battery;
};

struct HorizonProblem {
  LinearProgram lp;
  std::vector<SlotColumns> slots;
  int T = 0;
};

/// Horizon LP over T slots from the given initial state. Every slot carries
/// its decision block and the state it leads to; the objective is the sum of
/// per-slot costs.
HorizonProblem build_p1(const TraceSet& traces, const Cluster& cluster, const SystemState& initial, int T);

struct Trajectory {
  std::vector<Decision> decisions;
  std::vector<SystemState> states;  // T + 1 entries, states[0] is the start
  std::vector<CostBreakdown> costs;
  double total_cost = 0.0;
};

struct OfflineResult {
  Trajectory trajectory;
  double objective = 0.0;  // LP optimum
  int iterations = 0;
};

/// Solves the horizon LP. Throws InvalidInput when the program is infeasible.
OfflineResult solve_offline(const TraceSet& traces, const Cluster& cluster, const SystemState& initial, int T,
                            const LpOptions& options = {});

/// Median of every buy price in the trace.
double median_buy_price(const TraceSet& traces);

struct GreedyStep {
  Decision decision;
  /// Back ends whose forced charge was cut to the battery headroom.
  std::vector<int> reduced_charge;
};

/// One slot of the threshold policy: back ends with p^b below the threshold
/// charge at the full rate (capped by headroom), then the single-slot cost is
/// minimised with next-state bounds enforced.
GreedyStep greedy_step(const SystemState& state, const SlotInput& input, const Cluster& cluster,
                       double price_threshold);

/// Index of an unordered pair (i<k) in the per-pair column layout.
int pair_index(int i, int k, int backends);

}  // namespace clustercoord
