#include <doctest.h>

#include <cmath>
#include <random>

#include "clustercoord/lyapunov.hpp"
#include "fixtures.hpp"

using namespace clustercoord;

namespace {

// Re-evaluates every requirement on V and r from scratch.
bool requirements_hold(const Cluster& c, const PriceBounds& pb, const LyapunovParams& p) {
  const double ec = c.eta_charge, ed = c.eta_discharge, V = p.V;
  const auto& topo = c.topology;
  bool ok = V > 0.0;
  for (const auto& link : topo.links) {
    const int j = link.front, i = link.back;
    double sum_front = 0.0, sum_back = 0.0;
    for (const auto& o : topo.links) {
      if (o.front == j) sum_front += o.capacity;
      if (o.back == i) sum_back += o.capacity;
    }
    ok = ok && V * link.bandwidth_cost >= sum_front - p.theta[j] + p.phi[i] - 1e-9;
    ok = ok && V * link.bandwidth_cost >=
                   c.front[j].queue_cap - c.back[i].queue_cap + sum_back - p.theta[j] + p.phi[i] - 1e-9;
  }
  for (int i = 0; i < c.backends(); ++i) {
    const auto& b = c.back[i];
    const double r = p.r[i];
    ok = ok && pb.buy_max * ed - b.wear_cost * ed < r && r < (pb.sell_min + b.wear_cost) / ec;
    ok = ok && V * pb.sell_min >= b.process_cap - p.phi[i] - 1e-9;
    ok = ok && V * (pb.sell_min + b.wear_cost - ec * r) >= ec * (p.delta[i] + ec * b.charge_max - b.battery_max) - 1e-9;
    ok = ok && V * (-pb.buy_max + b.wear_cost + r / ed) >= (b.battery_min + b.discharge_max / ed - p.delta[i]) / ed - 1e-9;
  }
  for (int j = 0; j < c.frontends(); ++j)
    ok = ok && V * c.front[j].reject_cost <= c.front[j].queue_cap - c.front[j].arrival_max - p.theta[j] + 1e-9;
  return ok;
}

SystemState state_with(const Cluster& c, const LyapunovParams& p, std::vector<double> qf, std::vector<double> qb,
                       std::vector<double> b) {
  auto s = SystemState::initial(c, b);
  s.q_front = std::move(qf);
  s.q_back = std::move(qb);
  update_virtual_queues(s, s, Decision::zero(c), c, p);
  return s;
}

}  // namespace

TEST_CASE("parameter recipe") {
  auto c = fixtures::uniform_cluster(2, 1);
  SUBCASE("theta from the largest processing rate and the front-end links") {
    c.back[0].process_cap = 10.0;
    c.topology.links = {{0, 0, 1.0, 0.1}, {0, 1, 1.0, 0.1}};
    const auto p = derive_params(c, fixtures::kPrices);
    CHECK(p.theta[0] == doctest::Approx(12.0));
  }
  SUBCASE("delta in kWh") {
    c.back[0].battery_max = 85000.0;
    c.back[0].charge_max = 4.0;
    const auto p = derive_params(c, fixtures::kPrices);
    CHECK(p.delta[0] == doctest::Approx(84996.4));
  }
  SUBCASE("default V is the upper end of the interval") {
    const auto p = derive_params(c, fixtures::kPrices);
    CHECK(p.V == p.V_hi);
    CHECK(p.V_lo <= p.V_hi);
    CHECK(requirements_hold(c, fixtures::kPrices, p));
  }
  SUBCASE("empty battery offset interval names the back end") {
    c.back[1].wear_cost = 0.0;
    c.back[0].wear_cost = 0.0;
    CHECK_THROWS_WITH_AS(derive_params(c, {1.0, 0.1}), doctest::Contains("back end 0"), InfeasibleParameters);
  }
  SUBCASE("queue capacity too small for any V") {
    c.front[0].queue_cap = 12.0;
    CHECK_THROWS_AS(derive_params(c, fixtures::kPrices), InfeasibleParameters);
  }
  SUBCASE("override outside the interval is refused in bounded mode only") {
    const auto p = derive_params(c, fixtures::kPrices);
    CHECK_THROWS_AS(derive_params(c, fixtures::kPrices, {p.V_hi * 2.0, QueueMode::Bounded}), InfeasibleParameters);
    CHECK(derive_params(c, fixtures::kPrices, {p.V_hi * 2.0, QueueMode::Traditional}).V == p.V_hi * 2.0);
  }
}

TEST_CASE("derived parameters satisfy every requirement on random feasible instances") {
  std::mt19937_64 rng(515);
  int accepted = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const int I = 1 + static_cast<int>(rng() % 3), J = 1 + static_cast<int>(rng() % 2);
    auto c = fixtures::uniform_cluster(I, J, oracle::uniform(rng, 0.5, 4.0), oracle::uniform(rng, 0.0, 3.0));
    for (auto& l : c.topology.links) l.bandwidth_cost = oracle::uniform(rng, 0.01, 0.5);
    for (auto& f : c.front) f = {oracle::uniform(rng, 30.0, 300.0), oracle::uniform(rng, 0.2, 2.0), oracle::uniform(rng, 1.0, 8.0)};
    for (auto& b : c.back) {
      b.queue_cap = oracle::uniform(rng, 30.0, 300.0);
      b.process_cap = oracle::uniform(rng, 1.0, 10.0);
      b.charge_max = oracle::uniform(rng, 0.0, 6.0);
      b.discharge_max = oracle::uniform(rng, 0.0, 6.0);
      b.battery_min = oracle::uniform(rng, 0.0, 20.0);
      b.battery_max = b.battery_min + oracle::uniform(rng, 15.0, 100.0);
      b.wear_cost = oracle::uniform(rng, 0.0, 0.1);
    }
    const PriceBounds pb{oracle::uniform(rng, 0.05, 0.2), oracle::uniform(rng, 0.0, 0.05)};
    if (!check_assumptions(c, pb).all_passed()) continue;
    LyapunovParams p;
    try {
      p = derive_params(c, pb);
    } catch (const InfeasibleParameters&) {
      continue;
    }
    ++accepted;
    CHECK(requirements_hold(c, pb, p));
    auto lo = p;
    lo.V = std::max(p.V_lo, 1e-6);
    CHECK(requirements_hold(c, pb, lo));
  }
  CHECK(accepted > 50);
}

TEST_CASE("drift constants and gap bound") {
  Cluster c = fixtures::uniform_cluster(1, 1);
  c.front[0].arrival_max = 4.0;
  c.back[0].process_cap = 5.0;
  c.back[0].charge_max = 0.0;
  c.back[0].discharge_max = 0.0;
  c.topology.links[0].capacity = 3.0;
  auto n = drift_constants(c);
  CHECK(n.n1 == doctest::Approx(8.0));
  CHECK(n.n3 == 0.0);
  c.topology.links[0].capacity = 5.0;
  n = drift_constants(c);
  CHECK(n.n2 == doctest::Approx(12.5));

  LyapunovParams p;
  p.drift = {8.0, 12.5, 0.0};
  p.V = 10.0;
  CHECK(gap_bound(p) == doctest::Approx(2.05));
  double last = gap_bound(p);
  for (double v : {100.0, 1e3, 1e6}) {
    p.V = v;
    CHECK(gap_bound(p) < last);
    last = gap_bound(p);
  }
  CHECK(last < 1e-4);
  p.V = 0.0;
  CHECK_THROWS_AS(gap_bound(p), InvalidInput);
}

TEST_CASE("virtual queue updates") {
  const auto c = fixtures::uniform_cluster(1, 1);
  auto p = derive_params(c, fixtures::kPrices);
  SUBCASE("bounded front queue is shifted") {
    const auto s = state_with(c, p, {0.0}, {0.0}, {p.delta[0] + p.r[0] * p.V});
    CHECK(s.h_front[0] == doctest::Approx(-p.theta[0]));
    CHECK(s.battery_gap[0] == doctest::Approx(0.0));
  }
  SUBCASE("rectified queue floors at zero") {
    p.mode = QueueMode::Traditional;
    auto prev = SystemState::initial(c, {50.0});
    auto d = Decision::zero(c);
    d.accept[0] = 2.0;
    d.transfer[0] = 5.0;
    auto next = prev;
    update_virtual_queues(next, prev, d, c, p);
    CHECK(next.h_front[0] == 0.0);
    CHECK(next.h_back[0] == doctest::Approx(5.0));
  }
}

TEST_CASE("per-slot program") {
  const auto c = fixtures::uniform_cluster(2, 1);
  const auto p = derive_params(c, fixtures::kPrices);
  SUBCASE("census") {
    const auto c1 = fixtures::uniform_cluster(1, 1);
    const auto prog = build_p2(SystemState::initial(c1, {50.0}), fixtures::flat_input(c1, 1, 0, 0.1, 0.05), c1,
                               derive_params(c1, fixtures::kPrices));
    CHECK(prog.lp.row_count() == 1);
    CHECK(prog.layout.share.empty());
  }
  SUBCASE("fixed point: nothing to do at the battery target") {
    auto s = SystemState::initial(c, {p.delta[0] + p.r[0] * p.V, p.delta[1] + p.r[1] * p.V});
    update_virtual_queues(s, s, Decision::zero(c), c, p);
    const auto res = solve_p2(s, fixtures::flat_input(c, 0.0, 0.0, 0.1, 0.05), c, p);
    const auto& d = res.decision;
    for (int i = 0; i < 2; ++i) {
      CHECK(d.process[i] == 0.0);
      CHECK(d.charge[i] == 0.0);
      CHECK(d.discharge[i] == 0.0);
      CHECK(d.buy[i] == 0.0);
      CHECK(d.sell[i] == 0.0);
    }
    for (double m : d.transfer) CHECK(m == 0.0);
  }
  SUBCASE("zero virtual queues leave V times the cost") {
    auto s = SystemState::initial(c, {50.0, 50.0});
    std::mt19937_64 rng(3);
    const auto in = fixtures::random_input(c, rng);
    auto prog = build_p2(s, in, c, p);
    const auto sol = solve_lp(prog.lp);
    REQUIRE(sol.status == LpStatus::Optimal);
    const auto d = decision_from_p2(prog, sol.x, c);
    CHECK(sol.objective == doctest::Approx(p.V * slot_cost(d, in, c).total()));
    CHECK(check_decision(d, in, c).ok());
  }
  SUBCASE("objective evaluation agrees with the program") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 30; ++trial) {
      auto s = state_with(c, p, {oracle::uniform(rng, 0, 150)}, {oracle::uniform(rng, 0, 150), oracle::uniform(rng, 0, 150)},
                          {oracle::uniform(rng, 10, 85), oracle::uniform(rng, 10, 85)});
      const auto in = fixtures::random_input(c, rng);
      const auto res = solve_p2(s, in, c, p);
      CHECK(res.objective == doctest::Approx(p2_objective(res.decision, s, in, c, p)).epsilon(1e-9));
    }
  }
}

TEST_CASE("forced values in each state interval") {
  const auto c = fixtures::uniform_cluster(3, 2);
  const auto p = derive_params(c, fixtures::kPrices);
  const auto& f = c.front[0];
  const auto& b = c.back[0];
  const double sum_front = c.topology.front_link_capacity(0), sum_back = c.topology.back_link_capacity(0);
  const double ec = c.eta_charge, ed = c.eta_discharge;
  std::mt19937_64 rng(2718);

  // Entity 0 is pinned into an interval; the others are drawn anywhere valid.
  auto draw = [&](double qf0, double qb0, double b0) {
    std::vector<double> qf{qf0, oracle::uniform(rng, 0.0, f.queue_cap)};
    std::vector<double> qb{qb0, oracle::uniform(rng, 0.0, b.queue_cap), oracle::uniform(rng, 0.0, b.queue_cap)};
    std::vector<double> bat{b0, oracle::uniform(rng, b.battery_min, b.battery_max),
                            oracle::uniform(rng, b.battery_min, b.battery_max)};
    return state_with(c, p, qf, qb, bat);
  };
  auto any_qf = [&] { return oracle::uniform(rng, 0.0, f.queue_cap); };
  auto any_qb = [&] { return oracle::uniform(rng, 0.0, b.queue_cap); };
  auto any_b = [&] { return oracle::uniform(rng, b.battery_min, b.battery_max); };
  const auto front0 = c.topology.links_of_front(0), back0 = c.topology.links_of_back(0);

  for (int trial = 0; trial < 40; ++trial) {
    const auto in = fixtures::random_input(c, rng);
    {
      const auto s = draw(oracle::uniform(rng, 0.0, sum_front), any_qb(), any_b());
      const auto d = solve_p2(s, in, c, p).decision;
      for (int l : front0) CHECK(d.transfer[l] == 0.0);
    }
    {
      const auto s = draw(oracle::uniform(rng, sum_front, f.queue_cap - f.arrival_max), any_qb(), any_b());
      const auto out = advance_state(s, solve_p2(s, in, c, p).decision, in, c, p, false);
      CHECK(out.next.q_front[0] >= -kStateSlack);
      CHECK(out.next.q_front[0] <= f.queue_cap + kStateSlack);
    }
    {
      const auto s = draw(oracle::uniform(rng, f.queue_cap - f.arrival_max, f.queue_cap), any_qb(), any_b());
      CHECK(solve_p2(s, in, c, p).decision.accept[0] == 0.0);
    }
    {
      const auto s = draw(any_qf(), oracle::uniform(rng, 0.0, b.process_cap), any_b());
      CHECK(solve_p2(s, in, c, p).decision.process[0] == 0.0);
    }
    {
      const auto s = draw(any_qf(), oracle::uniform(rng, b.process_cap, b.queue_cap - sum_back), any_b());
      const auto out = advance_state(s, solve_p2(s, in, c, p).decision, in, c, p, false);
      CHECK(out.next.q_back[0] >= -kStateSlack);
      CHECK(out.next.q_back[0] <= b.queue_cap + kStateSlack);
    }
    {
      const auto s = draw(any_qf(), oracle::uniform(rng, b.queue_cap - sum_back, b.queue_cap), any_b());
      const auto d = solve_p2(s, in, c, p).decision;
      for (int l : back0) CHECK(d.transfer[l] == 0.0);
    }
    {
      const auto s = draw(any_qf(), any_qb(), oracle::uniform(rng, b.battery_min, b.battery_min + b.discharge_max / ed));
      CHECK(solve_p2(s, in, c, p).decision.discharge[0] == 0.0);
    }
    {
      const auto s = draw(any_qf(), any_qb(),
                          oracle::uniform(rng, b.battery_min + b.discharge_max / ed, b.battery_max - ec * b.charge_max));
      const auto out = advance_state(s, solve_p2(s, in, c, p).decision, in, c, p, false);
      CHECK(out.next.battery[0] >= b.battery_min - kStateSlack);
      CHECK(out.next.battery[0] <= b.battery_max + kStateSlack);
    }
    {
      const auto s = draw(any_qf(), any_qb(), oracle::uniform(rng, b.battery_max - ec * b.charge_max, b.battery_max));
      CHECK(solve_p2(s, in, c, p).decision.charge[0] == 0.0);
    }
  }
}

TEST_CASE("bounded controller stays inside every limit") {
  std::mt19937_64 rng(77);
  for (int I : {1, 2, 3}) {
    const auto c = fixtures::uniform_cluster(I, 2);
    const auto p = derive_params(c, fixtures::kPrices);
    auto s = initial_online_state(c, p);
    for (int t = 0; t < 300; ++t) {
      const auto in = fixtures::random_input(c, rng);
      auto step = online_step(s, in, c, p);
      CHECK(step.outcome.violations.empty());
      s = std::move(step.outcome.next);
    }
  }
}

TEST_CASE("rectified queues overflow under persistent overload") {
  auto c = fixtures::uniform_cluster(2, 1);
  // Processing is the bottleneck and rejection is expensive.
  for (auto& b : c.back) b.process_cap = 1.0;
  c.front[0].arrival_max = 8.0;
  c.front[0].queue_cap = 120.0;
  const auto bounded = derive_params(c, fixtures::kPrices);
  const auto p = derive_params(c, fixtures::kPrices, {4.0 * bounded.V_hi, QueueMode::Traditional});
  auto s = initial_online_state(c, p);
  int excursions = 0;
  for (int t = 0; t < 400; ++t) {
    auto in = fixtures::flat_input(c, 8.0, 1.0, 0.1, 0.05);
    auto step = online_step(s, in, c, p);
    for (const auto& v : step.outcome.violations)
      if (v.kind == BoundKind::FrontQueue) ++excursions;
    s = std::move(step.outcome.next);
  }
  CHECK(excursions > 0);
}

TEST_CASE("larger sharing caps never raise the per-slot optimum") {
  std::mt19937_64 rng(404);
  auto base = fixtures::uniform_cluster(3, 2);
  const auto p = derive_params(base, fixtures::kPrices);
  for (int trial = 0; trial < 40; ++trial) {
    const auto s = state_with(base, p, {oracle::uniform(rng, 0, 150), oracle::uniform(rng, 0, 150)},
                              {oracle::uniform(rng, 0, 150), oracle::uniform(rng, 0, 150), oracle::uniform(rng, 0, 150)},
                              {oracle::uniform(rng, 10, 85), oracle::uniform(rng, 10, 85), oracle::uniform(rng, 10, 85)});
    const auto in = fixtures::random_input(base, rng);
    double last = kInf;
    for (double scale : {0.0, 0.5, 1.0, 2.0}) {
      auto c = base;
      for (auto& v : c.topology.sharing_cap.raw()) v *= scale;
      const double obj = solve_p2(s, in, c, p).objective;
      CHECK(obj <= last + 1e-9 * (1.0 + std::abs(last)));
      last = obj;
    }
  }
}
