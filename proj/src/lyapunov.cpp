#include "clustercoord/lyapunov.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace clustercoord {

const char* to_string(QueueMode mode) { return mode == QueueMode::Bounded ? "bounded" : "traditional"; }

DriftConstants drift_constants(const Cluster& cluster) {
  DriftConstants n;
  const auto& topo = cluster.topology;
  for (int j = 0; j < cluster.frontends(); ++j) {
    const double a = cluster.front[j].arrival_max, m = topo.front_link_capacity(j);
    n.n1 += 0.5 * std::max(a * a, m * m);
  }
  for (int i = 0; i < cluster.backends(); ++i) {
    const auto& b = cluster.back[i];
    const double m = topo.back_link_capacity(i);
    n.n2 += 0.5 * std::max(b.process_cap * b.process_cap, m * m);
    const double c = cluster.eta_charge * b.charge_max, d = b.discharge_max / cluster.eta_discharge;
    n.n3 += 0.5 * std::max(c * c, d * d);
  }
  return n;
}

LyapunovParams derive_params(const Cluster& cluster, const PriceBounds& prices, const DeriveOptions& options) {
  cluster.validate();
  const auto& topo = cluster.topology;
  const int I = cluster.backends(), J = cluster.frontends();
  const double ec = cluster.eta_charge, ed = cluster.eta_discharge;
  const double e_max = cluster.max_process_cap();

  LyapunovParams p;
  p.mode = options.mode;
  p.theta.resize(J);
  p.phi.resize(I);
  p.delta.resize(I);
  p.r.resize(I);
  for (int j = 0; j < J; ++j) p.theta[j] = e_max + topo.front_link_capacity(j);
  for (int i = 0; i < I; ++i) {
    const auto& b = cluster.back[i];
    p.phi[i] = b.process_cap;
    p.delta[i] = b.battery_max - ec * b.charge_max;
    const double r_lo = prices.buy_max * ed - b.wear_cost * ed;
    const double r_hi = (prices.sell_min + b.wear_cost) / ec;
    if (!(r_lo < r_hi))
      throw InfeasibleParameters(
          fmt::format("back end {}: battery offset interval ({}, {}) is empty", i, r_lo, r_hi));
    p.r[i] = 0.5 * (r_lo + r_hi);
  }

  p.V_hi = kInf;
  int hi_index = -1;
  for (int j = 0; j < J; ++j) {
    const auto& f = cluster.front[j];
    const double v = (f.queue_cap - f.arrival_max - p.theta[j]) / f.reject_cost;
    if (v < p.V_hi) {
      p.V_hi = v;
      hi_index = j;
    }
  }

  auto require = [&](std::string name, int index, double value) { p.lower_terms.push_back({std::move(name), index, value}); };
  require("positive", 0, 0.0);
  for (const auto& link : topo.links) {
    const int j = link.front, i = link.back;
    require("front-transfer", j, (topo.front_link_capacity(j) - p.theta[j] + p.phi[i]) / link.bandwidth_cost);
    require("back-transfer", i,
            (cluster.front[j].queue_cap - cluster.back[i].queue_cap + topo.back_link_capacity(i) - p.theta[j] +
             p.phi[i]) /
                link.bandwidth_cost);
  }
  for (int i = 0; i < I; ++i) {
    const auto& b = cluster.back[i];
    const double num = b.process_cap - p.phi[i];
    if (num > 0.0 && !(prices.sell_min > 0.0))
      throw InfeasibleParameters(fmt::format("back end {}: processing term needs a positive sell price", i));
    require("process", i, num > 0.0 ? num / prices.sell_min : 0.0);
    require("charge", i,
            ec * (p.delta[i] + ec * b.charge_max - b.battery_max) / (prices.sell_min + b.wear_cost - ec * p.r[i]));
    require("discharge", i,
            (b.battery_min + b.discharge_max / ed - p.delta[i]) / ed /
                (-prices.buy_max + b.wear_cost + p.r[i] / ed));
  }
  const VRequirement* binding = &p.lower_terms.front();
  for (const auto& t : p.lower_terms)
    if (t.value > binding->value) binding = &t;
  p.V_lo = binding->value;

  if (options.mode == QueueMode::Bounded) {
    if (!(p.V_hi > 0.0))
      throw InfeasibleParameters(fmt::format("front end {}: upper bound on V is {} (queue capacity too small)",
                                             hi_index, p.V_hi));
    if (p.V_lo > p.V_hi)
      throw InfeasibleParameters(fmt::format("admissible V interval is empty: {} term of entity {} needs V >= {}, "
                                             "front end {} caps V at {}",
                                             binding->name, binding->index, p.V_lo, hi_index, p.V_hi));
  }
  p.V = options.V.value_or(p.V_hi);
  if (!(p.V > 0.0) || !std::isfinite(p.V)) throw InfeasibleParameters(fmt::format("V must be positive, got {}", p.V));
  if (options.mode == QueueMode::Bounded && (p.V < p.V_lo || p.V > p.V_hi))
    throw InfeasibleParameters(fmt::format("V = {} outside the admissible interval [{}, {}]", p.V, p.V_lo, p.V_hi));
  p.drift = drift_constants(cluster);
  return p;
}

double gap_bound(const LyapunovParams& params) {
  if (!(params.V > 0.0)) throw InvalidInput("gap bound needs V > 0");
  return params.drift.sum() / params.V;
}

SystemState initial_online_state(const Cluster& cluster, const LyapunovParams& params,
                                 const std::vector<double>& battery) {
  auto s = SystemState::initial(cluster, battery.empty() ? params.delta : battery);
  const Decision none = Decision::zero(cluster);
  // Traditional queues start at zero; bounded ones follow the physical state.
  auto prev = s;
  update_virtual_queues(s, prev, none, cluster, params);
  return s;
}

void update_virtual_queues(SystemState& next, const SystemState& prev, const Decision& decision,
                           const Cluster& cluster, const LyapunovParams& params) {
  const int I = cluster.backends(), J = cluster.frontends();
  const auto& links = cluster.topology.links;
  next.h_front.resize(J);
  next.h_back.resize(I);
  next.battery_gap.resize(I);
  if (params.mode == QueueMode::Bounded) {
    for (int j = 0; j < J; ++j) next.h_front[j] = next.q_front[j] - params.theta[j];
    for (int i = 0; i < I; ++i) next.h_back[i] = next.q_back[i] - params.phi[i];
  } else if (&next != &prev) {
    std::vector<double> hf = prev.h_front, hb = prev.h_back;
    hf.resize(J, 0.0);
    hb.resize(I, 0.0);
    for (int j = 0; j < J; ++j) hf[j] += decision.accept[j];
    for (int i = 0; i < I; ++i) hb[i] -= decision.process[i];
    for (std::size_t l = 0; l < links.size(); ++l) {
      hf[links[l].front] -= decision.transfer[l];
      hb[links[l].back] += decision.transfer[l];
    }
    for (int j = 0; j < J; ++j) next.h_front[j] = std::max(hf[j], 0.0);
    for (int i = 0; i < I; ++i) next.h_back[i] = std::max(hb[i], 0.0);
  }
  for (int i = 0; i < I; ++i) next.battery_gap[i] = next.battery[i] - (params.delta[i] + params.r[i] * params.V);
}

P2Program build_p2(const SystemState& state, const SlotInput& input, const Cluster& cluster,
                   const LyapunovParams& params) {
  input.validate(cluster);
  const int I = cluster.backends(), J = cluster.frontends();
  const double V = params.V, ec = cluster.eta_charge, ed = cluster.eta_discharge;
  const auto& links = cluster.topology.links;
  P2Program prog;
  auto& lp = prog.lp;
  auto& L = prog.layout;

  for (int j = 0; j < J; ++j) {
    const auto& f = cluster.front[j];
    L.accept.push_back(lp.add_variable(fmt::format("a[{}]", j), 0.0, input.arrivals[j],
                                       state.h_front[j] - V * f.reject_cost));
    lp.objective_offset += V * f.reject_cost * input.arrivals[j];
  }
  for (std::size_t l = 0; l < links.size(); ++l) {
    const auto& link = links[l];
    L.transfer.push_back(lp.add_variable(fmt::format("m[{},{}]", link.front, link.back), 0.0, link.capacity,
                                         -state.h_front[link.front] + state.h_back[link.back] +
                                             V * link.bandwidth_cost));
  }
  for (int i = 0; i < I; ++i) {
    const auto& b = cluster.back[i];
    const double l = state.battery_gap[i];
    L.process.push_back(lp.add_variable(fmt::format("e[{}]", i), 0.0, b.process_cap, -state.h_back[i]));
    L.buy.push_back(lp.add_variable(fmt::format("x[{}]", i), 0.0, kInf, V * input.price_buy[i]));
    L.sell.push_back(lp.add_variable(fmt::format("y[{}]", i), 0.0, kInf, -V * input.price_sell[i]));
    L.charge.push_back(lp.add_variable(fmt::format("c[{}]", i), 0.0, b.charge_max, l * ec + V * b.wear_cost));
    L.discharge.push_back(
        lp.add_variable(fmt::format("d[{}]", i), 0.0, b.discharge_max, -l / ed + V * b.wear_cost));
  }
  const auto& cap = cluster.topology.sharing_cap;
  for (int i = 0; i < I; ++i)
    for (int k = i + 1; k < I; ++k)
      if (cap(i, k) > 0.0)
        L.share.push_back({i, k, lp.add_variable(fmt::format("u[{},{}]", i, k), -cap(i, k), cap(i, k), 0.0)});

  for (int i = 0; i < I; ++i) {
    const int row = lp.add_row(-input.pv[i], fmt::format("balance[{}]", i));
    lp.add_coefficient(row, L.buy[i], 1.0);
    lp.add_coefficient(row, L.sell[i], -1.0);
    lp.add_coefficient(row, L.discharge[i], 1.0);
    lp.add_coefficient(row, L.charge[i], -1.0);
    lp.add_coefficient(row, L.process[i], -1.0);
    lp.set_basis_hint(row, {L.sell[i], L.buy[i]});
  }
  for (const auto& pr : L.share) {
    lp.add_coefficient(pr.i, pr.col, 1.0);
    lp.add_coefficient(pr.k, pr.col, -1.0);
  }
  return prog;
}

Decision decision_from_p2(const P2Program& prog, const std::vector<double>& x, const Cluster& cluster) {
  const auto& L = prog.layout;
  auto d = Decision::zero(cluster);
  for (int j = 0; j < cluster.frontends(); ++j) d.accept[j] = x[L.accept[j]];
  for (std::size_t l = 0; l < L.transfer.size(); ++l) d.transfer[l] = x[L.transfer[l]];
  for (int i = 0; i < cluster.backends(); ++i) {
    d.process[i] = x[L.process[i]];
    d.buy[i] = x[L.buy[i]];
    d.sell[i] = x[L.sell[i]];
    d.charge[i] = x[L.charge[i]];
    d.discharge[i] = x[L.discharge[i]];
  }
  for (const auto& pr : L.share) {
    d.share(pr.i, pr.k) = x[pr.col];
    d.share(pr.k, pr.i) = -x[pr.col];
  }
  return d;
}

double p2_objective(const Decision& decision, const SystemState& state, const SlotInput& input,
                    const Cluster& cluster, const LyapunovParams& params) {
  const auto& links = cluster.topology.links;
  double g = 0.0;
  for (int j = 0; j < cluster.frontends(); ++j) g += state.h_front[j] * decision.accept[j];
  for (std::size_t l = 0; l < links.size(); ++l)
    g += (state.h_back[links[l].back] - state.h_front[links[l].front]) * decision.transfer[l];
  for (int i = 0; i < cluster.backends(); ++i) {
    g -= state.h_back[i] * decision.process[i];
    g += state.battery_gap[i] *
         (cluster.eta_charge * decision.charge[i] - decision.discharge[i] / cluster.eta_discharge);
  }
  return g + params.V * slot_cost(decision, input, cluster).total();
}

P2Result solve_p2(const SystemState& state, const SlotInput& input, const Cluster& cluster,
                  const LyapunovParams& params) {
  const auto prog = build_p2(state, input, cluster, params);
  const auto sol = solve_lp(prog.lp);
  if (sol.status != LpStatus::Optimal)
    throw NumericalFailure(fmt::format("slot {}: per-slot program is {}", state.slot, to_string(sol.status)));
  return {decision_from_p2(prog, sol.x, cluster), sol.objective, sol.iterations};
}

StepOutcome advance_state(const SystemState& state, const Decision& decision, const SlotInput& input,
                          const Cluster& cluster, const LyapunovParams& params, bool strict) {
  StepOutcome out;
  auto q = step_queues(state, decision, cluster);
  auto b = step_battery(state, decision, cluster);
  out.next = state;
  out.next.slot = state.slot + 1;
  out.next.q_front = std::move(q.q_front);
  out.next.q_back = std::move(q.q_back);
  out.next.battery = std::move(b.levels);
  out.violations = std::move(q.violations);
  out.violations.insert(out.violations.end(), b.violations.begin(), b.violations.end());
  update_virtual_queues(out.next, state, decision, cluster, params);
  out.cost = slot_cost(decision, input, cluster);
  if (strict && params.mode == QueueMode::Bounded && !out.violations.empty())
    throw ProofViolation(fmt::format("slot {}: bounded controller left the feasible region: {}", state.slot,
                                     describe(out.violations.front())));
  return out;
}

OnlineStep online_step(const SystemState& state, const SlotInput& input, const Cluster& cluster,
                       const LyapunovParams& params) {
  auto res = solve_p2(state, input, cluster, params);
  OnlineStep step;
  step.outcome = advance_state(state, res.decision, input, cluster, params, true);
  step.decision = std::move(res.decision);
  step.p2_objective = res.objective;
  return step;
}

}  // namespace clustercoord
