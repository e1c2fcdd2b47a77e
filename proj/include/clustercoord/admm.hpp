#pragma once

// Consensus ADMM for the per-slot program: front ends own (a, m), back ends
// own (m', e, x, y, c, d, u) and the grid owns u'. Copies are reconciled
// through scaled duals lambda (m = m') and mu (u = u').

#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "clustercoord/lyapunov.hpp"
#include "clustercoord/model.hpp"

namespace clustercoord {

struct ConsensusState {
  std::vector<double> m, m_prime, lambda;  // per link
  SquareMatrix u, u_prime, mu;
  double rho = 1.0;
  int n = 0;

  static ConsensusState initial(const Cluster& cluster, double rho);
};

struct FrontEndSolution {
  double accept = 0.0;
  std::vector<double> transfer;  // over links_of_front(j), in that order
  double objective = 0.0;        // own cost terms, penalty excluded
};

struct BackEndSolution {
  std::vector<double> transfer;  // m' over links_of_back(i)
  double process = 0.0, buy = 0.0, sell = 0.0, charge = 0.0, discharge = 0.0;
  std::vector<double> share;  // u_ik for every k (zero at k == i)
  double objective = 0.0;
};

FrontEndSolution front_end_solve(int j, const SystemState& state, const SlotInput& input, const Cluster& cluster,
                                 const LyapunovParams& params, const ConsensusState& cs);

BackEndSolution back_end_solve(int i, const SystemState& state, const SlotInput& input, const Cluster& cluster,
                               const LyapunovParams& params, const ConsensusState& cs);

/// u' = projection of (u + mu) onto boxed antisymmetric matrices.
SquareMatrix grid_solve(const ConsensusState& cs, const SquareMatrix& cap);

/// lambda += m - m', mu += u - u', n += 1.
void dual_update(ConsensusState& cs);

struct AdmmIteration {
  int n = 0;
  double primal_m = 0.0;  // max |m - m'|
  double primal_u = 0.0;  // max |u - u'|
  double dual = 0.0;      // max change of m' and u' over the sweep
  double objective = 0.0; // sum of agent objectives
};

struct RepairReport {
  std::vector<double> balance_gap;   // per back end, before repair
  std::vector<double> accept_shift;  // per front end, a_hat - a
  std::vector<int> scaled_fronts;    // front ends whose transfers were scaled down
};

struct AdmmReport {
  int iterations = 0;
  bool converged = false;
  bool truncated = false;
  std::vector<AdmmIteration> history;
  RepairReport repair;
  std::vector<double> front_objectives, back_objectives;
  /// g(t) + V f(t) of the returned decision.
  double objective = 0.0;
};

struct AdmmOptions {
  double rho = 1.0;
  int max_iterations = 20000;  // the truncation threshold N
  double tol = 1e-4;
  /// Trade price for the sharing terms; defaults to the slot's own.
  std::optional<double> trade_price;
  std::function<void(const AdmmIteration&)> on_iteration;
};

struct AdmmResult {
  Decision decision;
  AdmmReport report;
  ConsensusState consensus;
};

/// Iterates front ends, back ends and the grid until primal and dual
/// residuals fall below tol or max_iterations is reached, then maps the
/// consensus copies to a feasible decision through truncation_repair.
/// `warm` carries duals and copies over from a previous slot.
AdmmResult run_admm(const SystemState& state, const SlotInput& input, const Cluster& cluster,
                    const LyapunovParams& params, const AdmmOptions& options = {},
                    const ConsensusState* warm = nullptr);

/// Builds a feasible decision from agent outputs: u := u', m := m', the
/// balance gap goes to x (shortfall) or y (surplus), and a is reset when the
/// front queue would leave [0, Q_F]. Acceptance above A_j is clamped and the
/// front end's transfers scaled down to match.
Decision truncation_repair(const SystemState& state, const SlotInput& input, const Cluster& cluster,
                           const Decision& raw, const SquareMatrix& u_prime, RepairReport* report = nullptr);

/// One JSON object per line: slot, n, residuals, objective.
void write_iteration_jsonl(std::ostream& out, int slot, const AdmmIteration& it);

}  // namespace clustercoord
