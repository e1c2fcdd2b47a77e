#pragma once

// Online drift-plus-penalty controller with shifted (bounded) virtual queues,
// plus the rectified-queue variant used as a baseline.

#include <optional>
#include <string>
#include <vector>

#include "clustercoord/lp.hpp"
#include "clustercoord/model.hpp"

namespace clustercoord {

class InfeasibleParameters : public Error {
 public:
  using Error::Error;
};

/// Raised when a bounded-mode step leaves the physical bounds.
class ProofViolation : public Error {
 public:
  using Error::Error;
};

enum class QueueMode { Bounded, Traditional };

const char* to_string(QueueMode mode);

struct DriftConstants {
  double n1 = 0.0;
  double n2 = 0.0;
  double n3 = 0.0;
  double sum() const { return n1 + n2 + n3; }
};

/// One lower-bound term on V with the entity it came from.
struct VRequirement {
  std::string name;
  int index = 0;
  double value = 0.0;
};

struct LyapunovParams {
  std::vector<double> theta;  // per front end
  std::vector<double> phi;    // per back end
  std::vector<double> delta;  // per back end
  std::vector<double> r;      // per back end
  double V = 0.0;
  double V_lo = 0.0;
  double V_hi = 0.0;
  std::vector<VRequirement> lower_terms;
  DriftConstants drift;
  QueueMode mode = QueueMode::Bounded;
};

struct DeriveOptions {
  std::optional<double> V;  // overrides the default V = V_hi
  QueueMode mode = QueueMode::Bounded;
};

DriftConstants drift_constants(const Cluster& cluster);

/// Chooses theta, phi, delta, r and V so that the bounded-mode controller
/// keeps every queue and battery inside its limits. In traditional mode an
/// override outside the admissible interval is accepted since no bound is
/// promised there.
LyapunovParams derive_params(const Cluster& cluster, const PriceBounds& prices, const DeriveOptions& options = {});

/// (N1 + N2 + N3) / V.
double gap_bound(const LyapunovParams& params);

/// Start state: empty queues, batteries at delta unless given.
SystemState initial_online_state(const Cluster& cluster, const LyapunovParams& params,
                                 const std::vector<double>& battery = {});

/// Refreshes h and l of `next`. Bounded mode derives them from the physical
/// state; traditional mode applies the rectified recursion to prev's h.
void update_virtual_queues(SystemState& next, const SystemState& prev, const Decision& decision,
                           const Cluster& cluster, const LyapunovParams& params);

/// Column indices of the per-slot program.
struct P2Layout {
  std::vector<int> accept, transfer, process, buy, sell, charge, discharge;
  struct Pair {
    int i = 0;
    int k = 0;
    int col = 0;
  };
  std::vector<Pair> share;  // one column per unordered pair with positive cap
};

struct P2Program {
  LinearProgram lp;
  P2Layout layout;
};

/// Linear program minimising g(t) + V f(t) over one slot. Queue and battery
/// limits are left out; sharing is one column per pair (u_ki = -u_ik).
P2Program build_p2(const SystemState& state, const SlotInput& input, const Cluster& cluster,
                   const LyapunovParams& params);

Decision decision_from_p2(const P2Program& prog, const std::vector<double>& x, const Cluster& cluster);

/// g(t) + V f(t) evaluated for a decision.
double p2_objective(const Decision& decision, const SystemState& state, const SlotInput& input,
                    const Cluster& cluster, const LyapunovParams& params);

struct P2Result {
  Decision decision;
  double objective = 0.0;
  int iterations = 0;
};

P2Result solve_p2(const SystemState& state, const SlotInput& input, const Cluster& cluster,
                  const LyapunovParams& params);

struct StepOutcome {
  SystemState next;
  CostBreakdown cost;
  std::vector<BoundViolation> violations;
};

/// Applies a decision: physical dynamics, bound audit, virtual queues.
/// Bounded mode throws ProofViolation when `strict` and a bound breaks.
StepOutcome advance_state(const SystemState& state, const Decision& decision, const SlotInput& input,
                          const Cluster& cluster, const LyapunovParams& params, bool strict);

struct OnlineStep {
  Decision decision;
  StepOutcome outcome;
  double p2_objective = 0.0;
};

OnlineStep online_step(const SystemState& state, const SlotInput& input, const Cluster& cluster,
                       const LyapunovParams& params);

}  // namespace clustercoord
