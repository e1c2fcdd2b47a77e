#include <doctest.h>

#include <cmath>
#include <random>

#include "clustercoord/kernels.hpp"
#include "clustercoord/lp.hpp"
#include "epigraph.hpp"
#include "generators.hpp"
#include "oracles.hpp"

using namespace clustercoord;


TEST_CASE("quadratic coordinate with a feasible unconstrained optimum") {
  // 1/2 (v - 3)^2 up to a constant.
  const std::vector<BalanceCoordinate> cs{{1.0, -3.0, 0.0, 10.0, 1.0}};
  const auto sol = solve_balance_subproblem(cs, 3.0);
  CHECK(sol.v[0] == doctest::Approx(3.0));
  CHECK(sol.multiplier == doctest::Approx(0.0));
}

TEST_CASE("linear coordinates use the cheaper direction") {
  // buy (cost 3, weight +1) and sell (gain 1, weight -1) against demand 2.
  const std::vector<BalanceCoordinate> cs{{0.0, 3.0, 0.0, kInf, 1.0}, {0.0, -1.0, 0.0, kInf, -1.0}};
  const auto sol = solve_balance_subproblem(cs, 2.0);
  CHECK(sol.v[0] == doctest::Approx(2.0));
  CHECK(sol.v[1] == doctest::Approx(0.0));
}

TEST_CASE("tied linear coordinates share the imbalance") {
  const std::vector<BalanceCoordinate> cs{{0.0, 1.0, 0.0, 1.0, 1.0}, {0.0, 1.0, 0.0, 5.0, 1.0}};
  const auto sol = solve_balance_subproblem(cs, 3.0);
  CHECK(sol.v[0] + sol.v[1] == doctest::Approx(3.0));
  CHECK(sol.objective == doctest::Approx(3.0));
}

TEST_CASE("infeasible balance reports the achievable interval") {
  const std::vector<BalanceCoordinate> cs{{1.0, 0.0, 0.0, 2.0, 1.0}, {0.0, 1.0, -1.0, 1.0, 1.0}};
  try {
    solve_balance_subproblem(cs, 10.0);
    FAIL("expected infeasibility");
  } catch (const BalanceInfeasible& e) {
    CHECK(e.achievable_lo == doctest::Approx(-1.0));
    CHECK(e.achievable_hi == doctest::Approx(3.0));
  }
}

TEST_CASE("unbounded off-balance coordinate is rejected") {
  const std::vector<BalanceCoordinate> cs{{0.0, -1.0, 0.0, kInf, 0.0}, {1.0, 0.0, 0.0, 1.0, 1.0}};
  CHECK_THROWS_AS(solve_balance_subproblem(cs, 0.5), InvalidInput);
}

TEST_CASE("balance solver matches the epigraph oracle on random instances") {
  std::mt19937_64 rng(99173);
  for (int trial = 0; trial < 60; ++trial) {
    double rhs = 0.0;
    const auto cs = gen::random_balance_instance(rng, rhs);
    const auto sol = solve_balance_subproblem(cs, rhs);
    CHECK(std::abs(gen::balance(cs, sol.v) - rhs) <= 1e-8);
    for (std::size_t k = 0; k < cs.size(); ++k) {
      CHECK(sol.v[k] >= cs[k].lo);
      CHECK(sol.v[k] <= cs[k].hi);
    }
    const double ref = oracle::epigraph_optimum(cs, rhs);
    CHECK(std::abs(sol.objective - ref) <= 1e-6 * (1.0 + std::abs(ref)));
  }
}

TEST_CASE("active-set enumeration is exact on small balance problems") {
  // Two quadratic coordinates sharing a unit balance: v = (0.5, 0.5).
  const std::vector<BalanceCoordinate> two{{1.0, 0.0, 0.0, 1.0, 1.0}, {1.0, 0.0, 0.0, 1.0, 1.0}};
  CHECK(oracle::active_set_optimum(two, 1.0) == doctest::Approx(0.25));
  // Cheap linear coordinate saturates, quadratic one absorbs the rest.
  const std::vector<BalanceCoordinate> mixed{{0.0, -1.0, 0.0, 0.4, 1.0}, {2.0, 0.0, 0.0, 5.0, 1.0}};
  CHECK(oracle::active_set_optimum(mixed, 1.0) == doctest::Approx(-0.4 + 0.36));
  CHECK_THROWS(oracle::active_set_optimum(two, 3.0));

  std::mt19937_64 rng(5150);
  for (int trial = 0; trial < 100; ++trial) {
    double rhs = 0.0;
    const auto cs = gen::random_balance_instance(rng, rhs);
    const double exact = oracle::active_set_optimum(cs, rhs);
    CHECK(std::abs(solve_balance_subproblem(cs, rhs).objective - exact) <= 1e-9 * (1.0 + std::abs(exact)));
    CHECK(std::abs(oracle::epigraph_optimum(cs, rhs) - exact) <= 1e-6 * (1.0 + std::abs(exact)));
  }
}

TEST_CASE("no feasible pairwise move improves the balance solution") {
  std::mt19937_64 rng(4411);
  for (int trial = 0; trial < 200; ++trial) {
    double rhs = 0.0;
    const auto cs = gen::random_balance_instance(rng, rhs);
    const auto sol = solve_balance_subproblem(cs, rhs);
    const double base = gen::objective(cs, sol.v);
    for (std::size_t a = 0; a < cs.size(); ++a) {
      // Off-balance coordinates move alone.
      for (std::size_t b = 0; b < cs.size(); ++b) {
        if (a == b && cs[a].weight != 0.0) continue;
        if (a != b && (cs[a].weight == 0.0 || cs[b].weight == 0.0)) continue;
        for (double eps : {1e-4, -1e-4, 0.1, -0.1}) {
          auto v = sol.v;
          v[a] += eps / (a == b ? 1.0 : cs[a].weight);
          if (a != b) v[b] -= eps / cs[b].weight;
          if (v[a] < cs[a].lo || v[a] > cs[a].hi || v[b] < cs[b].lo || v[b] > cs[b].hi) continue;
          CHECK(gen::objective(cs, v) >= base - 1e-8);
        }
      }
    }
  }
}

TEST_CASE("pairwise antisymmetric projection") {
  SquareMatrix cap(2);
  cap(0, 1) = cap(1, 0) = 10.0;
  SquareMatrix v(2);
  SUBCASE("interior") {
    v(0, 1) = 4.0;
    v(1, 0) = -2.0;
    const auto u = project_pairwise_antisymmetric(v, cap);
    CHECK(u(0, 1) == 3.0);
    CHECK(u(1, 0) == -3.0);
    // Grid search over the scalar pair variable.
    double best = 1e300, arg = 0.0;
    for (int g = -20000; g <= 20000; ++g) {
      const double w = g * 5e-4;
      const double d = (4.0 - w) * (4.0 - w) + (-2.0 + w) * (-2.0 + w);
      if (d < best) best = d, arg = w;
    }
    CHECK(arg == doctest::Approx(3.0));
  }
  SUBCASE("symmetric part vanishes") {
    v(0, 1) = v(1, 0) = 5.0;
    CHECK(project_pairwise_antisymmetric(v, cap)(0, 1) == 0.0);
  }
  SUBCASE("clamp") {
    cap(0, 1) = cap(1, 0) = 1.0;
    v(0, 1) = 4.0;
    v(1, 0) = -4.0;
    CHECK(project_pairwise_antisymmetric(v, cap)(0, 1) == 1.0);
  }
  SUBCASE("zero input") {
    const auto u = project_pairwise_antisymmetric(v, cap);
    CHECK(u(0, 1) == 0.0);
    CHECK(u(1, 0) == 0.0);
  }
}

TEST_CASE("projection is antisymmetric and non-expansive") {
  std::mt19937_64 rng(31337);
  const std::size_t n = 4;
  SquareMatrix cap(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = i + 1; k < n; ++k) cap(i, k) = cap(k, i) = oracle::uniform(rng, 0.0, 3.0);
  auto random_matrix = [&] {
    SquareMatrix m(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k)
        if (i != k) m(i, k) = oracle::uniform(rng, -6.0, 6.0);
    return m;
  };
  auto dist = [&](const SquareMatrix& a, const SquareMatrix& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k) s += (a(i, k) - b(i, k)) * (a(i, k) - b(i, k));
    return std::sqrt(s);
  };
  for (int trial = 0; trial < 500; ++trial) {
    const auto a = random_matrix(), b = random_matrix();
    const auto pa = project_pairwise_antisymmetric(a, cap), pb = project_pairwise_antisymmetric(b, cap);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(pa(i, i) == 0.0);
      for (std::size_t k = 0; k < n; ++k) CHECK(pa(i, k) == -pa(k, i));
    }
    CHECK(dist(pa, pb) <= dist(a, b) + 1e-12);
  }
}
