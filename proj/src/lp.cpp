#include "clustercoord/lp.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace clustercoord {

int LinearProgram::add_variable(std::string name, double lo, double hi, double cost) {
  cost_.push_back(cost);
  lo_.push_back(lo);
  hi_.push_back(hi);
  columns_.emplace_back();
  names_.push_back(std::move(name));
  return static_cast<int>(cost_.size()) - 1;
}

int LinearProgram::add_row(double rhs, std::string name) {
  rhs_.push_back(rhs);
  row_names_.push_back(std::move(name));
  hint_.emplace_back();
  return static_cast<int>(rhs_.size()) - 1;
}

void LinearProgram::add_coefficient(int row, int col, double value) {
  if (row < 0 || row >= row_count() || col < 0 || col >= variable_count())
    throw DimensionMismatch(fmt::format("coefficient ({}, {}) outside a {}x{} program", row, col, row_count(),
                                        variable_count()));
  for (auto& e : columns_[col]) {
    if (e.row == row) {
      e.value += value;
      return;
    }
  }
  columns_[col].push_back({row, value});
}

void LinearProgram::set_basis_hint(int row, std::vector<int> candidates) {
  if (row < 0 || row >= row_count()) throw DimensionMismatch(fmt::format("hint for unknown row {}", row));
  hint_[row] = std::move(candidates);
}

void LinearProgram::validate() const {
  const auto n = cost_.size();
  if (lo_.size() != n || hi_.size() != n || columns_.size() != n || names_.size() != n)
    throw DimensionMismatch("variable arrays have inconsistent lengths");
  for (std::size_t j = 0; j < n; ++j) {
    if (std::isnan(lo_[j]) || std::isnan(hi_[j]) || !std::isfinite(cost_[j]))
      throw InvalidInput(fmt::format("variable {} has a NaN bound or non-finite cost", names_[j]));
    if (lo_[j] > hi_[j])
      throw InvalidInput(fmt::format("variable {} has lo {} > hi {}", names_[j], lo_[j], hi_[j]));
    for (const auto& e : columns_[j]) {
      if (e.row < 0 || e.row >= row_count()) throw DimensionMismatch(fmt::format("column {} has a bad row", j));
      if (!std::isfinite(e.value)) throw InvalidInput(fmt::format("column {} has a non-finite entry", j));
    }
  }
  for (double b : rhs_)
    if (!std::isfinite(b)) throw InvalidInput("non-finite right-hand side");
}

double LinearProgram::evaluate(const std::vector<double>& x) const {
  double s = objective_offset;
  for (std::size_t j = 0; j < cost_.size(); ++j) s += cost_[j] * x[j];
  return s;
}

double LinearProgram::equality_residual(const std::vector<double>& x) const {
  std::vector<double> r(rhs_.size());
  for (std::size_t j = 0; j < columns_.size(); ++j)
    for (const auto& e : columns_[j]) r[e.row] += e.value * x[j];
  double worst = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) worst = std::max(worst, std::abs(r[i] - rhs_[i]));
  return worst;
}

double LinearProgram::bound_violation(const std::vector<double>& x) const {
  double worst = 0.0;
  for (std::size_t j = 0; j < cost_.size(); ++j) {
    worst = std::max(worst, lo_[j] - x[j]);
    worst = std::max(worst, x[j] - hi_[j]);
  }
  return worst;
}

const char* to_string(LpStatus status) {
  switch (status) {
    case LpStatus::Optimal:
      return "optimal";
    case LpStatus::Infeasible:
      return "infeasible";
    case LpStatus::Unbounded:
      return "unbounded";
  }
  return "?";
}

namespace {

enum class VarState : unsigned char { Basic, AtLower, AtUpper, FreeZero, Fixed };

class Simplex {
 public:
  Simplex(const LinearProgram& lp, const LpOptions& opt)
      : lp_(lp), opt_(opt), m_(lp.row_count()), n_(lp.variable_count()), total_(n_ + m_) {
    lo_.resize(total_);
    hi_.resize(total_);
    x_.assign(total_, 0.0);
    cost_.assign(total_, 0.0);
    state_.assign(total_, VarState::AtLower);
    pos_.assign(total_, -1);
    head_.assign(m_, -1);
    sigma_.assign(m_, 1.0);
    for (int j = 0; j < n_; ++j) {
      lo_[j] = lp.lower()[j];
      hi_[j] = lp.upper()[j];
    }
    for (int i = 0; i < m_; ++i) {
      lo_[n_ + i] = 0.0;
      hi_[n_ + i] = kInf;
    }
    double bmax = 0.0;
    for (double b : lp.rhs()) bmax = std::max(bmax, std::abs(b));
    rhs_scale_ = 1.0 + bmax;
    double cmax = 0.0;
    for (double c : lp.cost()) cmax = std::max(cmax, std::abs(c));
    dual_tol_ = opt.dual_tol * (1.0 + cmax);
    period_ = opt.refactor_period > 0 ? opt.refactor_period : std::max(64, std::min(m_, 400));
    max_iter_ = opt.max_iterations > 0 ? opt.max_iterations : 50 * (m_ + n_) + 1000;
  }

  LpSolution run() {
    LpSolution sol;
    place_nonbasics();
    bool phase_one_needed = true;
    if (try_hint()) {
      sol.used_hint = true;
      phase_one_needed = artificial_mass() > feas_tol();
    } else {
      artificial_start();
    }

    if (phase_one_needed) {
      set_phase_costs(1);
      const auto st = iterate(1);
      (void)st;
      if (artificial_mass() > feas_tol()) {
        sol.status = LpStatus::Infeasible;
        sol.iterations = iterations_;
        sol.x.assign(x_.begin(), x_.begin() + n_);
        return sol;
      }
    }
    retire_artificials();
    set_phase_costs(2);
    const bool bounded = iterate(2);
    sol.iterations = iterations_;
    if (!bounded) {
      sol.status = LpStatus::Unbounded;
      sol.x.assign(x_.begin(), x_.begin() + n_);
      return sol;
    }
    finalize(sol);
    return sol;
  }

 private:
  const LinearProgram& lp_;
  LpOptions opt_;
  int m_, n_, total_;
  std::vector<double> lo_, hi_, x_, cost_;
  std::vector<VarState> state_;
  std::vector<int> pos_, head_;
  std::vector<double> sigma_;
  std::vector<double> binv_;
  std::vector<double> y_;
  std::vector<double> alpha_;
  double rhs_scale_ = 1.0;
  double dual_tol_ = 1e-9;
  int period_ = 64;
  int max_iter_ = 0;
  int iterations_ = 0;
  int since_refactor_ = 0;

  double feas_tol() const { return 1e-9 * rhs_scale_ * std::max(1, m_); }

  template <class F>
  void for_column(int col, F&& f) const {
    if (col < n_) {
      for (const auto& e : lp_.column(col)) f(e.row, e.value);
    } else {
      f(col - n_, sigma_[col - n_]);
    }
  }

  void place_nonbasic(int j) {
    if (lo_[j] == hi_[j]) {
      state_[j] = VarState::Fixed;
      x_[j] = lo_[j];
    } else if (std::isfinite(lo_[j])) {
      state_[j] = VarState::AtLower;
      x_[j] = lo_[j];
    } else if (std::isfinite(hi_[j])) {
      state_[j] = VarState::AtUpper;
      x_[j] = hi_[j];
    } else {
      state_[j] = VarState::FreeZero;
      x_[j] = 0.0;
    }
    pos_[j] = -1;
  }

  void place_nonbasics() {
    for (int j = 0; j < n_; ++j) place_nonbasic(j);
    for (int i = 0; i < m_; ++i) {
      state_[n_ + i] = VarState::Fixed;
      x_[n_ + i] = 0.0;
    }
  }

  std::vector<double> residual_excluding_basis() const {
    std::vector<double> r(lp_.rhs());
    for (int j = 0; j < total_; ++j) {
      if (state_[j] == VarState::Basic || x_[j] == 0.0) continue;
      for_column(j, [&](int row, double v) { r[row] -= v * x_[j]; });
    }
    return r;
  }

  void make_basic(int r, int col) {
    head_[r] = col;
    pos_[col] = r;
    state_[col] = VarState::Basic;
  }

  bool try_hint() {
    const auto& hint = lp_.basis_hint();
    bool any = false;
    for (const auto& h : hint) any = any || !h.empty();
    if (!any) return false;
    const auto res = residual_excluding_basis();
    std::vector<char> taken(n_, 0);
    for (int r = 0; r < m_; ++r) {
      int chosen = -1;
      for (int c : hint[r]) {
        if (c < 0 || c >= n_ || taken[c]) continue;
        double a = 0.0;
        for (const auto& e : lp_.column(c))
          if (e.row == r) a = e.value;
        if (a == 0.0) continue;
        if (chosen < 0) chosen = c;
        if (res[r] == 0.0 || (a > 0.0) == (res[r] > 0.0)) {
          chosen = c;
          break;
        }
      }
      if (chosen >= 0) {
        taken[chosen] = 1;
        x_[chosen] = 0.0;
        make_basic(r, chosen);
      } else {
        sigma_[r] = res[r] >= 0.0 ? 1.0 : -1.0;
        lo_[n_ + r] = 0.0;
        hi_[n_ + r] = kInf;
        make_basic(r, n_ + r);
      }
    }
    if (!refactor(false)) {
      reset_basis();
      return false;
    }
    recompute_primal();
    for (int r = 0; r < m_; ++r) {
      const int j = head_[r];
      const double tol = opt_.primal_tol * (1.0 + std::abs(x_[j]));
      if (x_[j] < lo_[j] - tol || x_[j] > hi_[j] + tol) {
        reset_basis();
        return false;
      }
    }
    return true;
  }

  void reset_basis() {
    for (int r = 0; r < m_; ++r) head_[r] = -1;
    place_nonbasics();
  }

  void artificial_start() {
    place_nonbasics();
    const auto res = residual_excluding_basis();
    for (int r = 0; r < m_; ++r) {
      sigma_[r] = res[r] >= 0.0 ? 1.0 : -1.0;
      lo_[n_ + r] = 0.0;
      hi_[n_ + r] = kInf;
      make_basic(r, n_ + r);
      x_[n_ + r] = std::abs(res[r]);
    }
    binv_.assign(static_cast<std::size_t>(m_) * m_, 0.0);
    for (int r = 0; r < m_; ++r) binv_[static_cast<std::size_t>(r) * m_ + r] = sigma_[r];
    since_refactor_ = 0;
  }

  double artificial_mass() const {
    double s = 0.0;
    for (int i = 0; i < m_; ++i) s += std::abs(x_[n_ + i]);
    return s;
  }

  void retire_artificials() {
    for (int i = 0; i < m_; ++i) {
      const int j = n_ + i;
      lo_[j] = 0.0;
      hi_[j] = 0.0;
      if (state_[j] != VarState::Basic) {
        state_[j] = VarState::Fixed;
        x_[j] = 0.0;
      }
    }
  }

  void set_phase_costs(int phase) {
    for (int j = 0; j < total_; ++j) {
      if (phase == 1)
        cost_[j] = j >= n_ ? 1.0 : 0.0;
      else
        cost_[j] = j < n_ ? lp_.cost()[j] : 0.0;
    }
    recompute_duals();
  }

  // Gauss-Jordan inversion of the current basis with partial pivoting.
  bool refactor(bool throw_on_singular = true) {
    const std::size_t m = static_cast<std::size_t>(m_);
    std::vector<double> work(m * m, 0.0);
    for (int r = 0; r < m_; ++r)
      for_column(head_[r], [&](int row, double v) { work[static_cast<std::size_t>(row) * m + r] = v; });
    binv_.assign(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i) binv_[i * m + i] = 1.0;
    std::vector<std::size_t> nz_work, nz_inv;
    for (std::size_t k = 0; k < m; ++k) {
      std::size_t p = k;
      double best = std::abs(work[k * m + k]);
      for (std::size_t i = k + 1; i < m; ++i) {
        const double v = std::abs(work[i * m + k]);
        if (v > best) {
          best = v;
          p = i;
        }
      }
      if (best < 1e-12) {
        if (throw_on_singular) throw NumericalFailure("basis matrix is singular");
        return false;
      }
      if (p != k) {
        std::swap_ranges(work.begin() + p * m, work.begin() + (p + 1) * m, work.begin() + k * m);
        std::swap_ranges(binv_.begin() + p * m, binv_.begin() + (p + 1) * m, binv_.begin() + k * m);
      }
      const double inv_piv = 1.0 / work[k * m + k];
      nz_work.clear();
      nz_inv.clear();
      for (std::size_t c = k; c < m; ++c) {
        if (work[k * m + c] != 0.0) {
          work[k * m + c] *= inv_piv;
          nz_work.push_back(c);
        }
      }
      for (std::size_t c = 0; c < m; ++c) {
        if (binv_[k * m + c] != 0.0) {
          binv_[k * m + c] *= inv_piv;
          nz_inv.push_back(c);
        }
      }
      for (std::size_t i = 0; i < m; ++i) {
        if (i == k) continue;
        const double f = work[i * m + k];
        if (f == 0.0) continue;
        double* wi = &work[i * m];
        const double* wk = &work[k * m];
        for (std::size_t c : nz_work) wi[c] -= f * wk[c];
        wi[k] = 0.0;
        double* bi = &binv_[i * m];
        const double* bk = &binv_[k * m];
        for (std::size_t c : nz_inv) bi[c] -= f * bk[c];
      }
    }
    since_refactor_ = 0;
    return true;
  }

  void recompute_primal() {
    const auto r = residual_excluding_basis();
    const std::size_t m = static_cast<std::size_t>(m_);
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      const double* row = &binv_[i * m];
      for (std::size_t k = 0; k < m; ++k) s += row[k] * r[k];
      x_[head_[i]] = s;
    }
  }

  void recompute_duals() {
    const std::size_t m = static_cast<std::size_t>(m_);
    y_.assign(m, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
      const double c = cost_[head_[r]];
      if (c == 0.0) continue;
      const double* row = &binv_[r * m];
      for (std::size_t k = 0; k < m; ++k) y_[k] += c * row[k];
    }
  }

  double reduced_cost(int j) const {
    double d = cost_[j];
    for_column(j, [&](int row, double v) { d -= y_[row] * v; });
    return d;
  }

  void ftran(int col) {
    const std::size_t m = static_cast<std::size_t>(m_);
    alpha_.assign(m, 0.0);
    for_column(col, [&](int row, double v) {
      for (std::size_t i = 0; i < m; ++i) alpha_[i] += binv_[i * m + row] * v;
    });
  }

  double objective() const {
    double s = 0.0;
    for (int j = 0; j < total_; ++j) s += cost_[j] * x_[j];
    return s;
  }

  struct Entering {
    int col = -1;
    double dir = 0.0;
    double d = 0.0;
  };

  Entering choose_entering(bool bland) const {
    Entering best;
    double best_score = 0.0;
    for (int j = 0; j < total_; ++j) {
      const auto s = state_[j];
      if (s == VarState::Basic || s == VarState::Fixed) continue;
      const double d = reduced_cost(j);
      double dir = 0.0;
      if (s == VarState::AtLower && d < -dual_tol_)
        dir = 1.0;
      else if (s == VarState::AtUpper && d > dual_tol_)
        dir = -1.0;
      else if (s == VarState::FreeZero && std::abs(d) > dual_tol_)
        dir = d < 0.0 ? 1.0 : -1.0;
      if (dir == 0.0) continue;
      if (bland) return {j, dir, d};
      if (std::abs(d) > best_score) {
        best_score = std::abs(d);
        best = {j, dir, d};
      }
    }
    return best;
  }

  struct Leaving {
    int row = -1;  // -1 with finite theta means a bound flip
    double theta = kInf;
    bool to_upper = false;
  };

  Leaving ratio_test(const Entering& in, bool bland) const {
    Leaving out;
    const int q = in.col;
    if (std::isfinite(lo_[q]) && std::isfinite(hi_[q])) out.theta = hi_[q] - lo_[q];
    double best_pivot = 0.0;
    int best_index = total_;
    for (int r = 0; r < m_; ++r) {
      const double a = alpha_[r];
      if (std::abs(a) <= opt_.pivot_tol) continue;
      const double rate = -in.dir * a;
      const int j = head_[r];
      double lim;
      bool to_upper;
      if (rate < 0.0) {
        if (!std::isfinite(lo_[j])) continue;
        lim = (x_[j] - lo_[j]) / -rate;
        to_upper = false;
      } else {
        if (!std::isfinite(hi_[j])) continue;
        lim = (hi_[j] - x_[j]) / rate;
        to_upper = true;
      }
      lim = std::max(lim, 0.0);
      const double tie = 1e-12 * (1.0 + std::min(lim, out.theta));
      bool take = false;
      if (lim < out.theta - tie) {
        take = true;
      } else if (lim <= out.theta + tie && out.row >= 0) {
        take = bland ? j < best_index : std::abs(a) > best_pivot;
      } else if (lim <= out.theta + tie && out.row < 0 && std::isfinite(out.theta)) {
        // Prefer a basis change over a flip of equal length.
        take = true;
      }
      if (take) {
        out.row = r;
        out.theta = lim;
        out.to_upper = to_upper;
        best_pivot = std::abs(a);
        best_index = j;
      }
    }
    return out;
  }

  void pivot(int r, int q, double d_q) {
    const std::size_t m = static_cast<std::size_t>(m_);
    const double ar = alpha_[r];
    double* row_r = &binv_[static_cast<std::size_t>(r) * m];
    // Dual update uses the old row r.
    const double step = d_q / ar;
    std::vector<std::size_t> nz;
    nz.reserve(m);
    for (std::size_t k = 0; k < m; ++k) {
      if (row_r[k] != 0.0) {
        nz.push_back(k);
        y_[k] += step * row_r[k];
      }
    }
    const double inv = 1.0 / ar;
    for (std::size_t k : nz) row_r[k] *= inv;
    for (std::size_t i = 0; i < m; ++i) {
      if (static_cast<int>(i) == r) continue;
      const double f = alpha_[i];
      if (f == 0.0) continue;
      double* row_i = &binv_[i * m];
      for (std::size_t k : nz) row_i[k] -= f * row_r[k];
    }
    const int leaving = head_[r];
    pos_[leaving] = -1;
    make_basic(r, q);
    ++since_refactor_;
  }

  // Returns false when phase two detects an unbounded ray.
  bool iterate(int phase) {
    int stall = 0;
    bool fresh = false;
    while (true) {
      if (iterations_ >= max_iter_)
        throw NumericalFailure(fmt::format("simplex iteration limit {} reached", max_iter_));
      if (since_refactor_ >= period_) {
        refactor();
        recompute_primal();
        recompute_duals();
        fresh = true;
      }
      const bool bland = stall > opt_.stall_limit;
      const Entering in = choose_entering(bland);
      if (in.col < 0) {
        if (!fresh) {
          refactor();
          recompute_primal();
          recompute_duals();
          fresh = true;
          continue;
        }
        break;
      }
      ftran(in.col);
      Leaving out = ratio_test(in, bland);
      if (out.row >= 0 && std::abs(alpha_[out.row]) < 1e-7 && !fresh) {
        refactor();
        recompute_primal();
        recompute_duals();
        fresh = true;
        continue;
      }
      if (!std::isfinite(out.theta)) {
        if (!fresh) {
          refactor();
          recompute_primal();
          recompute_duals();
          fresh = true;
          continue;
        }
        if (phase == 1) throw NumericalFailure("unbounded direction in the feasibility phase");
        return false;
      }
      ++iterations_;
      fresh = false;
      stall = out.theta <= 1e-12 ? stall + 1 : 0;
      const double theta = out.theta;
      const int q = in.col;
      if (theta != 0.0) {
        for (int r = 0; r < m_; ++r)
          if (alpha_[r] != 0.0) x_[head_[r]] -= in.dir * theta * alpha_[r];
      }
      if (out.row < 0) {
        // Bound flip of the entering variable.
        if (in.dir > 0) {
          x_[q] = hi_[q];
          state_[q] = VarState::AtUpper;
        } else {
          x_[q] = lo_[q];
          state_[q] = VarState::AtLower;
        }
        continue;
      }
      const double xq = x_[q] + in.dir * theta;
      const int leaving = head_[out.row];
      pivot(out.row, q, in.d);
      x_[q] = xq;
      if (lo_[leaving] == hi_[leaving]) {
        state_[leaving] = VarState::Fixed;
        x_[leaving] = lo_[leaving];
      } else if (out.to_upper) {
        state_[leaving] = VarState::AtUpper;
        x_[leaving] = hi_[leaving];
      } else {
        state_[leaving] = VarState::AtLower;
        x_[leaving] = lo_[leaving];
      }
    }
    if (opt_.on_phase_end) opt_.on_phase_end({phase, iterations_, objective()});
    return true;
  }

  void finalize(LpSolution& sol) {
    refactor();
    recompute_primal();
    recompute_duals();
    for (int r = 0; r < m_; ++r) {
      const int j = head_[r];
      const double tol = 1e-9 * (1.0 + std::abs(x_[j]));
      if (x_[j] < lo_[j] && x_[j] >= lo_[j] - tol) x_[j] = lo_[j];
      if (x_[j] > hi_[j] && x_[j] <= hi_[j] + tol) x_[j] = hi_[j];
    }
    sol.x.assign(x_.begin(), x_.begin() + n_);
    const double eq = lp_.equality_residual(sol.x);
    const double bound = lp_.bound_violation(sol.x);
    if (eq > 1e-8 * rhs_scale_ || bound > 1e-9)
      throw NumericalFailure(
          fmt::format("simplex solution drifted: equality residual {}, bound violation {}", eq, bound));
    const double cond = condition_estimate();
    if (cond > opt_.max_condition)
      throw NumericalFailure(fmt::format("basis condition estimate {} exceeds {}", cond, opt_.max_condition));
    sol.status = LpStatus::Optimal;
    sol.objective = lp_.evaluate(sol.x);
    sol.duals = y_;
  }

  double condition_estimate() const {
    const std::size_t m = static_cast<std::size_t>(m_);
    std::vector<double> colsum(m, 0.0), invsum(m, 0.0);
    for (int r = 0; r < m_; ++r) for_column(head_[r], [&](int, double v) { colsum[r] += std::abs(v); });
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < m; ++k) invsum[k] += std::abs(binv_[i * m + k]);
    double a = 0.0, b = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      a = std::max(a, colsum[k]);
      b = std::max(b, invsum[k]);
    }
    return a * b;
  }
};

}  // namespace

LpSolution solve_lp(const LinearProgram& lp, const LpOptions& options) {
  lp.validate();
  if (lp.row_count() == 0) {
    // Pure box problem.
    LpSolution sol;
    sol.x.resize(lp.variable_count());
    for (int j = 0; j < lp.variable_count(); ++j) {
      const double c = lp.cost()[j];
      const double lo = lp.lower()[j], hi = lp.upper()[j];
      double v;
      if (c > 0.0)
        v = lo;
      else if (c < 0.0)
        v = hi;
      else
        v = std::isfinite(lo) ? lo : (std::isfinite(hi) ? hi : 0.0);
      if (!std::isfinite(v)) {
        sol.status = LpStatus::Unbounded;
        return sol;
      }
      sol.x[j] = v;
    }
    sol.status = LpStatus::Optimal;
    sol.objective = lp.evaluate(sol.x);
    return sol;
  }
  Simplex simplex(lp, options);
  return simplex.run();
}

}  // namespace clustercoord
