#include "clustercoord/offline.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace clustercoord {

int pair_index(int i, int k, int backends) {
  if (i > k) std::swap(i, k);
  // Row-major position in the strict upper triangle.
  return i * backends - i * (i + 1) / 2 + (k - i - 1);
}

namespace {

// Where a state value comes from: a fixed number (the start) or a column.
struct StateRef {
  std::vector<int> q_front, q_back, battery;  // -1 means constant
  const SystemState* constants = nullptr;
};

SlotColumns add_slot(LinearProgram& lp, const Cluster& cluster, const SlotInput& input, const StateRef& prev,
                     int t) {
  const int I = cluster.backends(), J = cluster.frontends();
  const auto& links = cluster.topology.links;
  const auto& cap = cluster.topology.sharing_cap;
  const double ec = cluster.eta_charge, ed = cluster.eta_discharge;
  SlotColumns s;

  for (int j = 0; j < J; ++j) {
    const double g = cluster.front[j].reject_cost;
    s.accept.push_back(lp.add_variable(fmt::format("a[{}][{}]", t, j), 0.0, input.arrivals[j], -g));
    lp.objective_offset += g * input.arrivals[j];
  }
  for (const auto& link : links)
    s.transfer.push_back(lp.add_variable(fmt::format("m[{}][{},{}]", t, link.front, link.back), 0.0, link.capacity,
                                         link.bandwidth_cost));
  for (int i = 0; i < I; ++i) {
    const auto& b = cluster.back[i];
    s.process.push_back(lp.add_variable(fmt::format("e[{}][{}]", t, i), 0.0, b.process_cap, 0.0));
    s.buy.push_back(lp.add_variable(fmt::format("x[{}][{}]", t, i), 0.0, kInf, input.price_buy[i]));
    s.sell.push_back(lp.add_variable(fmt::format("y[{}][{}]", t, i), 0.0, kInf, -input.price_sell[i]));
    s.charge.push_back(lp.add_variable(fmt::format("c[{}][{}]", t, i), 0.0, b.charge_max, b.wear_cost));
    s.discharge.push_back(lp.add_variable(fmt::format("d[{}][{}]", t, i), 0.0, b.discharge_max, b.wear_cost));
  }
  for (int i = 0; i < I; ++i)
    for (int k = i + 1; k < I; ++k)
      s.share.push_back(cap(i, k) > 0.0
                            ? lp.add_variable(fmt::format("u[{}][{},{}]", t, i, k), -cap(i, k), cap(i, k), 0.0)
                            : -1);
  for (int j = 0; j < J; ++j)
    s.q_front.push_back(lp.add_variable(fmt::format("qF[{}][{}]", t + 1, j), 0.0, cluster.front[j].queue_cap, 0.0));
  for (int i = 0; i < I; ++i) {
    const auto& b = cluster.back[i];
    s.q_back.push_back(lp.add_variable(fmt::format("qB[{}][{}]", t + 1, i), 0.0, b.queue_cap, 0.0));
    s.battery.push_back(lp.add_variable(fmt::format("b[{}][{}]", t + 1, i), b.battery_min, b.battery_max, 0.0));
  }

  // Power balance.
  for (int i = 0; i < I; ++i) {
    const int row = lp.add_row(-input.pv[i], fmt::format("balance[{}][{}]", t, i));
    lp.add_coefficient(row, s.buy[i], 1.0);
    lp.add_coefficient(row, s.sell[i], -1.0);
    lp.add_coefficient(row, s.discharge[i], 1.0);
    lp.add_coefficient(row, s.charge[i], -1.0);
    lp.add_coefficient(row, s.process[i], -1.0);
    for (int k = 0; k < I; ++k) {
      if (k == i) continue;
      const int col = s.share[pair_index(i, k, I)];
      if (col >= 0) lp.add_coefficient(row, col, i < k ? 1.0 : -1.0);
    }
    lp.set_basis_hint(row, {s.sell[i], s.buy[i]});
  }

  // next - prev - inflow + outflow = 0, with a constant prev moved to the rhs.
  auto dynamics = [&](int next_col, int prev_col, double prev_value, const std::string& name) {
    const int row = lp.add_row(prev_col < 0 ? prev_value : 0.0, name);
    lp.add_coefficient(row, next_col, 1.0);
    if (prev_col >= 0) lp.add_coefficient(row, prev_col, -1.0);
    lp.set_basis_hint(row, {next_col});
    return row;
  };
  std::vector<int> front_rows(J), back_rows(I);
  for (int j = 0; j < J; ++j) {
    front_rows[j] = dynamics(s.q_front[j], prev.q_front[j], prev.constants ? prev.constants->q_front[j] : 0.0,
                             fmt::format("front[{}][{}]", t, j));
    lp.add_coefficient(front_rows[j], s.accept[j], -1.0);
  }
  for (int i = 0; i < I; ++i) {
    back_rows[i] = dynamics(s.q_back[i], prev.q_back[i], prev.constants ? prev.constants->q_back[i] : 0.0,
                            fmt::format("back[{}][{}]", t, i));
    lp.add_coefficient(back_rows[i], s.process[i], 1.0);
  }
  for (std::size_t l = 0; l < links.size(); ++l) {
    lp.add_coefficient(front_rows[links[l].front], s.transfer[l], 1.0);
    lp.add_coefficient(back_rows[links[l].back], s.transfer[l], -1.0);
  }
  for (int i = 0; i < I; ++i) {
    const int row = dynamics(s.battery[i], prev.battery[i], prev.constants ? prev.constants->battery[i] : 0.0,
                             fmt::format("battery[{}][{}]", t, i));
    lp.add_coefficient(row, s.charge[i], -ec);
    lp.add_coefficient(row, s.discharge[i], 1.0 / ed);
  }
  return s;
}

StateRef constant_ref(const SystemState& initial, const Cluster& cluster) {
  StateRef ref;
  ref.q_front.assign(cluster.frontends(), -1);
  ref.q_back.assign(cluster.backends(), -1);
  ref.battery.assign(cluster.backends(), -1);
  ref.constants = &initial;
  return ref;
}

Decision extract_decision(const SlotColumns& s, const std::vector<double>& x, const Cluster& cluster) {
  const int I = cluster.backends();
  auto d = Decision::zero(cluster);
  for (std::size_t j = 0; j < s.accept.size(); ++j) d.accept[j] = x[s.accept[j]];
  for (std::size_t l = 0; l < s.transfer.size(); ++l) d.transfer[l] = x[s.transfer[l]];
  for (int i = 0; i < I; ++i) {
    d.process[i] = x[s.process[i]];
    d.buy[i] = x[s.buy[i]];
    d.sell[i] = x[s.sell[i]];
    d.charge[i] = x[s.charge[i]];
    d.discharge[i] = x[s.discharge[i]];
  }
  for (int i = 0; i < I; ++i)
    for (int k = i + 1; k < I; ++k) {
      const int col = s.share[pair_index(i, k, I)];
      if (col < 0) continue;
      d.share(i, k) = x[col];
      d.share(k, i) = -x[col];
    }
  return d;
}

}  // namespace

HorizonProblem build_p1(const TraceSet& traces, const Cluster& cluster, const SystemState& initial, int T) {
  cluster.validate();
  if (T <= 0) throw InvalidInput("horizon must have at least one slot");
  if (T > kMaxHorizon) throw InvalidInput(fmt::format("horizon {} exceeds the dense-solver cap {}", T, kMaxHorizon));
  if (traces.slots() < T) throw TraceError(fmt::format("trace too short: {} slots for a horizon of {}", traces.slots(), T));
  HorizonProblem hp;
  hp.T = T;
  StateRef prev = constant_ref(initial, cluster);
  for (int t = 0; t < T; ++t) {
    const auto in = traces.slot(t);
    in.validate(cluster);
    hp.slots.push_back(add_slot(hp.lp, cluster, in, prev, t));
    prev.q_front = hp.slots.back().q_front;
    prev.q_back = hp.slots.back().q_back;
    prev.battery = hp.slots.back().battery;
    prev.constants = nullptr;
  }
  return hp;
}

OfflineResult solve_offline(const TraceSet& traces, const Cluster& cluster, const SystemState& initial, int T,
                            const LpOptions& options) {
  const auto hp = build_p1(traces, cluster, initial, T);
  const auto sol = solve_lp(hp.lp, options);
  if (sol.status != LpStatus::Optimal)
    throw InvalidInput(fmt::format("horizon program is {}", to_string(sol.status)));
  OfflineResult res;
  res.objective = sol.objective;
  res.iterations = sol.iterations;
  auto& tr = res.trajectory;
  tr.states.push_back(initial);
  for (int t = 0; t < T; ++t) {
    const auto& s = hp.slots[t];
    tr.decisions.push_back(extract_decision(s, sol.x, cluster));
    tr.costs.push_back(slot_cost(tr.decisions.back(), traces.slot(t), cluster));
    tr.total_cost += tr.costs.back().total();
    SystemState next = tr.states.back();
    next.slot = t + 1;
    for (std::size_t j = 0; j < s.q_front.size(); ++j) next.q_front[j] = sol.x[s.q_front[j]];
    for (std::size_t i = 0; i < s.q_back.size(); ++i) {
      next.q_back[i] = sol.x[s.q_back[i]];
      next.battery[i] = sol.x[s.battery[i]];
    }
    tr.states.push_back(std::move(next));
  }
  return res;
}

double median_buy_price(const TraceSet& traces) {
  std::vector<double> all;
  for (const auto& row : traces.price_buy) all.insert(all.end(), row.begin(), row.end());
  if (all.empty()) throw TraceError("no buy prices");
  std::sort(all.begin(), all.end());
  const std::size_t n = all.size();
  return n % 2 == 1 ? all[n / 2] : 0.5 * (all[n / 2 - 1] + all[n / 2]);
}

GreedyStep greedy_step(const SystemState& state, const SlotInput& input, const Cluster& cluster,
                       double price_threshold) {
  input.validate(cluster);
  LinearProgram lp;
  const auto s = add_slot(lp, cluster, input, constant_ref(state, cluster), state.slot);
  GreedyStep out;
  for (int i = 0; i < cluster.backends(); ++i) {
    if (!(input.price_buy[i] < price_threshold)) continue;
    const auto& b = cluster.back[i];
    const double headroom = std::max(0.0, (b.battery_max - state.battery[i]) / cluster.eta_charge);
    const double forced = std::min(b.charge_max, headroom);
    if (forced < b.charge_max) out.reduced_charge.push_back(i);
    lp.lower(s.charge[i]) = forced;
    lp.upper(s.charge[i]) = forced;
  }
  const auto sol = solve_lp(lp);
  if (sol.status != LpStatus::Optimal)
    throw InvalidInput(fmt::format("slot {}: greedy program is {}", state.slot, to_string(sol.status)));
  out.decision = extract_decision(s, sol.x, cluster);
  return out;
}

}  // namespace clustercoord
