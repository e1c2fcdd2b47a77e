#pragma once

// Closed-form and multiplier-search kernels for the distributed subproblems.

#include <span>
#include <vector>

#include "clustercoord/model.hpp"

namespace clustercoord {

/// One coordinate of
///   min sum_k (1/2 quad_k v_k^2 + linear_k v_k)
///   s.t. sum_k weight_k v_k = rhs,  lo_k <= v_k <= hi_k.
/// Coordinates with weight 0 do not enter the balance. Linear coordinates
/// (quad == 0) may have an infinite bound.
struct BalanceCoordinate {
  double quad = 0.0;
  double linear = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double weight = 0.0;
};

struct BalanceSolution {
  std::vector<double> v;
  double multiplier = 0.0;  // nu at the optimum
  double objective = 0.0;
  int search_steps = 0;
};

class BalanceInfeasible : public Error {
 public:
  BalanceInfeasible(double rhs, double lo, double hi);
  double achievable_lo;
  double achievable_hi;
};

/// Solves the diagonal QP above through its balance multiplier. The
/// aggregate response sum_k weight_k v_k(nu) is nondecreasing in nu and
/// piecewise linear, so the search bisects over its sorted breakpoints and
/// then solves the bracketing affine piece exactly. Linear coordinates tied
/// at the optimal multiplier share the remaining imbalance in index order.
BalanceSolution solve_balance_subproblem(std::span<const BalanceCoordinate> coords, double rhs);

/// Euclidean projection onto antisymmetric matrices with |u_ik| <= cap_ik:
/// per pair u_ik = clamp((v_ik - v_ki) / 2, -cap, cap), u_ki = -u_ik.
SquareMatrix project_pairwise_antisymmetric(const SquareMatrix& v, const SquareMatrix& cap);

}  // namespace clustercoord
