#include "clustercoord/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "clustercoord/lp.hpp"

namespace clustercoord {

BalanceInfeasible::BalanceInfeasible(double rhs, double lo, double hi)
    : Error(fmt::format("balance target {} outside the achievable interval [{}, {}]", rhs, lo, hi)),
      achievable_lo(lo),
      achievable_hi(hi) {}

namespace {

constexpr double kBalanceTol = 1e-8;

double clamp_box(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

// Minimiser of 1/2 q v^2 + kappa v over [lo, hi] when q > 0.
double quad_response(const BalanceCoordinate& c, double nu) {
  return clamp_box((nu * c.weight - c.linear) / c.quad, c.lo, c.hi);
}

// Aggregate response with tied linear coordinates pushed to their smallest
// (side < 0) or largest (side > 0) contribution.
double aggregate(std::span<const BalanceCoordinate> coords, double nu, int side) {
  double s = 0.0;
  for (const auto& c : coords) {
    if (c.weight == 0.0) continue;
    if (c.quad > 0.0) {
      s += c.weight * quad_response(c, nu);
      continue;
    }
    const double bp = c.linear / c.weight;
    const double lo_contrib = std::min(c.weight * c.lo, c.weight * c.hi);
    const double hi_contrib = std::max(c.weight * c.lo, c.weight * c.hi);
    if (nu < bp)
      s += c.weight > 0.0 ? c.weight * c.lo : c.weight * c.hi;
    else if (nu > bp)
      s += c.weight > 0.0 ? c.weight * c.hi : c.weight * c.lo;
    else
      s += side < 0 ? lo_contrib : hi_contrib;
  }
  return s;
}

// Slope of the aggregate response at a point strictly between breakpoints.
double slope_at(std::span<const BalanceCoordinate> coords, double nu) {
  double s = 0.0;
  for (const auto& c : coords) {
    if (c.weight == 0.0 || c.quad <= 0.0) continue;
    const double raw = (nu * c.weight - c.linear) / c.quad;
    if (raw > c.lo && raw < c.hi) s += c.weight * c.weight / c.quad;
  }
  return s;
}

}  // namespace

BalanceSolution solve_balance_subproblem(std::span<const BalanceCoordinate> coords, double rhs) {
  double reach_lo = 0.0, reach_hi = 0.0;
  for (std::size_t k = 0; k < coords.size(); ++k) {
    const auto& c = coords[k];
    if (!(c.quad >= 0.0) || std::isnan(c.lo) || std::isnan(c.hi) || c.lo > c.hi || !std::isfinite(c.linear))
      throw InvalidInput(fmt::format("balance coordinate {} is malformed", k));
    if (c.quad == 0.0 && c.weight == 0.0 &&
        ((c.linear > 0.0 && !std::isfinite(c.lo)) || (c.linear < 0.0 && !std::isfinite(c.hi))))
      throw InvalidInput(fmt::format("balance coordinate {} is unbounded below", k));
    if (c.weight == 0.0) continue;
    reach_lo += std::min(c.weight * c.lo, c.weight * c.hi);
    reach_hi += std::max(c.weight * c.lo, c.weight * c.hi);
  }
  if (rhs < reach_lo - kBalanceTol || rhs > reach_hi + kBalanceTol) throw BalanceInfeasible(rhs, reach_lo, reach_hi);

  BalanceSolution sol;
  sol.v.assign(coords.size(), 0.0);

  std::vector<double> breaks;
  for (const auto& c : coords) {
    if (c.weight == 0.0) continue;
    if (c.quad == 0.0) {
      breaks.push_back(c.linear / c.weight);
    } else {
      for (double bound : {c.lo, c.hi})
        if (std::isfinite(bound)) breaks.push_back((c.linear + c.quad * bound) / c.weight);
    }
  }
  std::sort(breaks.begin(), breaks.end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());

  // Multiplier, plus a probe strictly inside the affine piece containing it
  // (equal to nu when nu sits on a breakpoint).
  double nu = 0.0;
  double probe = 0.0;
  bool on_break = false;

  auto solve_piece = [&](double anchor, double anchor_value, double test) {
    const double slope = slope_at(coords, test);
    probe = test;
    nu = slope > 0.0 ? anchor + (rhs - anchor_value) / slope : anchor;
  };

  if (breaks.empty()) {
    solve_piece(0.0, aggregate(coords, 0.0, 0), 0.0);
  } else {
    // First breakpoint whose right limit reaches rhs.
    std::size_t lo = 0, hi = breaks.size();
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      ++sol.search_steps;
      if (aggregate(coords, breaks[mid], +1) >= rhs)
        hi = mid;
      else
        lo = mid + 1;
    }
    const std::size_t k = lo;
    if (k == breaks.size()) {
      const double b = breaks.back();
      const double step = std::max(1.0, std::abs(b));
      solve_piece(b, aggregate(coords, b, +1), b + step);
      nu = std::max(nu, b);
    } else if (aggregate(coords, breaks[k], -1) <= rhs) {
      nu = probe = breaks[k];
      on_break = true;
    } else if (k == 0) {
      const double b = breaks.front();
      const double step = std::max(1.0, std::abs(b));
      solve_piece(b, aggregate(coords, b, -1), b - step);
      nu = std::min(nu, b);
    } else {
      const double left = breaks[k - 1], right = breaks[k];
      solve_piece(left, aggregate(coords, left, +1), 0.5 * (left + right));
      nu = clamp_box(nu, left, right);
    }
  }
  sol.multiplier = nu;

  std::vector<std::size_t> tied;
  double achieved = 0.0;
  for (std::size_t k = 0; k < coords.size(); ++k) {
    const auto& c = coords[k];
    double v;
    if (c.weight == 0.0) {
      if (c.quad > 0.0)
        v = clamp_box(-c.linear / c.quad, c.lo, c.hi);
      else if (c.linear > 0.0)
        v = c.lo;
      else if (c.linear < 0.0)
        v = c.hi;
      else
        v = clamp_box(0.0, c.lo, c.hi);
      sol.v[k] = v;
      continue;
    }
    if (c.quad > 0.0) {
      v = quad_response(c, nu);
    } else {
      const double bp = c.linear / c.weight;
      if (on_break && bp == nu) {
        tied.push_back(k);
        v = clamp_box(0.0, c.lo, c.hi);
      } else if (probe < bp) {
        v = c.weight > 0.0 ? c.lo : c.hi;
      } else {
        v = c.weight > 0.0 ? c.hi : c.lo;
      }
    }
    sol.v[k] = v;
    achieved += c.weight * v;
  }

  // Tied coordinates absorb the imbalance; any rounding leftover goes to the
  // first coordinate with room.
  double remaining = rhs - achieved;
  auto absorb = [&](std::size_t k) {
    const auto& c = coords[k];
    const double target = clamp_box(sol.v[k] + remaining / c.weight, c.lo, c.hi);
    remaining -= c.weight * (target - sol.v[k]);
    sol.v[k] = target;
  };
  for (std::size_t k : tied) {
    if (remaining == 0.0) break;
    absorb(k);
  }
  if (std::abs(remaining) > 0.0 && std::abs(remaining) <= kBalanceTol) {
    for (std::size_t k = 0; k < coords.size() && remaining != 0.0; ++k)
      if (coords[k].weight != 0.0) absorb(k);
  }
  if (!(std::abs(remaining) <= kBalanceTol))
    throw NumericalFailure(fmt::format("balance multiplier search left residual {}", remaining));

  for (std::size_t k = 0; k < coords.size(); ++k) {
    const auto& c = coords[k];
    sol.objective += 0.5 * c.quad * sol.v[k] * sol.v[k] + c.linear * sol.v[k];
  }
  return sol;
}

SquareMatrix project_pairwise_antisymmetric(const SquareMatrix& v, const SquareMatrix& cap) {
  if (v.size() != cap.size()) throw DimensionMismatch("projection input and capacity sizes differ");
  const std::size_t n = v.size();
  SquareMatrix out(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = i + 1; k < n; ++k) {
      const double c = cap(i, k);
      const double w = clamp_box(0.5 * (v(i, k) - v(k, i)), -c, c);
      out(i, k) = w;
      out(k, i) = -w;
    }
  }
  return out;
}

}  // namespace clustercoord
