#pragma once

// Bounded-variable revised simplex over equality-form linear programs:
//
//   minimize  c'x + offset   subject to  A x = b,  lo <= x <= hi.
//
// The basis inverse is kept dense and updated in product form; periodic
// reinversion bounds error growth. Storage of A is column-sparse.

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "clustercoord/model.hpp"

namespace clustercoord {

class NumericalFailure : public Error {
 public:
  using Error::Error;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct LpEntry {
  int row = 0;
  double value = 0.0;
};

class LinearProgram {
 public:
  int add_variable(std::string name, double lo, double hi, double cost);
  int add_row(double rhs, std::string name = {});
  /// Accumulates into A(row, col).
  void add_coefficient(int row, int col, double value);

  /// Columns tried, in order, as the starting basic variable of `row`.
  /// A valid hint lets the solver skip the artificial phase.
  void set_basis_hint(int row, std::vector<int> candidates);

  int variable_count() const { return static_cast<int>(cost_.size()); }
  int row_count() const { return static_cast<int>(rhs_.size()); }

  const std::vector<double>& cost() const { return cost_; }
  const std::vector<double>& lower() const { return lo_; }
  const std::vector<double>& upper() const { return hi_; }
  const std::vector<double>& rhs() const { return rhs_; }
  const std::vector<LpEntry>& column(int col) const { return columns_[col]; }
  const std::string& variable_name(int col) const { return names_[col]; }
  const std::string& row_name(int row) const { return row_names_[row]; }
  const std::vector<std::vector<int>>& basis_hint() const { return hint_; }

  double& cost(int col) { return cost_[col]; }
  double& lower(int col) { return lo_[col]; }
  double& upper(int col) { return hi_[col]; }
  double& rhs(int row) { return rhs_[row]; }

  double objective_offset = 0.0;

  /// Throws DimensionMismatch / InvalidInput on malformed programs.
  void validate() const;

  /// Value of c'x + offset.
  double evaluate(const std::vector<double>& x) const;
  /// Largest |(A x - b)_r|.
  double equality_residual(const std::vector<double>& x) const;
  /// Largest bound violation of x.
  double bound_violation(const std::vector<double>& x) const;

 private:
  std::vector<double> cost_, lo_, hi_, rhs_;
  std::vector<std::vector<LpEntry>> columns_;
  std::vector<std::string> names_, row_names_;
  std::vector<std::vector<int>> hint_;
};

enum class LpStatus { Optimal, Infeasible, Unbounded };

const char* to_string(LpStatus status);

struct LpSolution {
  LpStatus status = LpStatus::Infeasible;
  std::vector<double> x;
  /// Row duals y with reduced costs c - A'y (phase-two basis).
  std::vector<double> duals;
  double objective = 0.0;
  int iterations = 0;
  bool used_hint = false;
};

struct LpProgress {
  int phase = 0;
  int iterations = 0;
  double objective = 0.0;
};

struct LpOptions {
  double primal_tol = 1e-9;
  double dual_tol = 1e-9;
  double pivot_tol = 1e-9;
  /// Consecutive degenerate pivots before switching to Bland's rule.
  int stall_limit = 30;
  /// 0 picks a default from the problem size.
  int refactor_period = 0;
  int max_iterations = 0;
  double max_condition = 1e13;
  std::function<void(const LpProgress&)> on_phase_end;
};

/// Solves the program; returns Optimal, Infeasible or Unbounded. Throws
/// NumericalFailure when the basis becomes singular or ill-conditioned and
/// DimensionMismatch for malformed input.
LpSolution solve_lp(const LinearProgram& lp, const LpOptions& options = {});

}  // namespace clustercoord
