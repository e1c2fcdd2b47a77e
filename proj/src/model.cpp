#include "clustercoord/model.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace clustercoord {

double SquareMatrix::row_sum(std::size_t r) const {
  double s = 0.0;
  for (std::size_t c = 0; c < n_; ++c) s += (*this)(r, c);
  return s;
}

std::vector<int> ClusterTopology::links_of_front(int j) const {
  std::vector<int> out;
  for (int l = 0; l < static_cast<int>(links.size()); ++l)
    if (links[l].front == j) out.push_back(l);
  return out;
}

std::vector<int> ClusterTopology::links_of_back(int i) const {
  std::vector<int> out;
  for (int l = 0; l < static_cast<int>(links.size()); ++l)
    if (links[l].back == i) out.push_back(l);
  return out;
}

double ClusterTopology::front_link_capacity(int j) const {
  double s = 0.0;
  for (const auto& link : links)
    if (link.front == j) s += link.capacity;
  return s;
}

double ClusterTopology::back_link_capacity(int i) const {
  double s = 0.0;
  for (const auto& link : links)
    if (link.back == i) s += link.capacity;
  return s;
}

void ClusterTopology::validate() const {
  if (backends <= 0 || frontends <= 0)
    throw InvalidInput(fmt::format("topology needs at least one front end and back end (I={}, J={})", backends,
                                   frontends));
  std::vector<int> front_deg(frontends, 0), back_deg(backends, 0);
  for (std::size_t l = 0; l < links.size(); ++l) {
    const auto& link = links[l];
    if (link.front < 0 || link.front >= frontends || link.back < 0 || link.back >= backends)
      throw InvalidInput(fmt::format("link {} references an unknown node ({}, {})", l, link.front, link.back));
    if (!(link.capacity > 0.0)) throw InvalidInput(fmt::format("link {} has non-positive capacity", l));
    if (!(link.bandwidth_cost > 0.0)) throw InvalidInput(fmt::format("link {} has non-positive bandwidth cost", l));
    for (std::size_t o = 0; o < l; ++o)
      if (links[o].front == link.front && links[o].back == link.back)
        throw InvalidInput(fmt::format("duplicate link ({}, {})", link.front, link.back));
    ++front_deg[link.front];
    ++back_deg[link.back];
  }
  for (int j = 0; j < frontends; ++j)
    if (front_deg[j] == 0) throw InvalidInput(fmt::format("front end {} has no link", j));
  for (int i = 0; i < backends; ++i)
    if (back_deg[i] == 0) throw InvalidInput(fmt::format("back end {} has no link", i));
  if (sharing_cap.size() != static_cast<std::size_t>(backends))
    throw DimensionMismatch(fmt::format("sharing capacity is {}x{}, expected {}x{}", sharing_cap.size(),
                                        sharing_cap.size(), backends, backends));
  for (int i = 0; i < backends; ++i) {
    if (sharing_cap(i, i) != 0.0) throw InvalidInput(fmt::format("sharing capacity diagonal {} is nonzero", i));
    for (int k = 0; k < backends; ++k) {
      if (sharing_cap(i, k) < 0.0) throw InvalidInput(fmt::format("negative sharing capacity ({}, {})", i, k));
      if (sharing_cap(i, k) != sharing_cap(k, i))
        throw InvalidInput(fmt::format("sharing capacity is not symmetric at ({}, {})", i, k));
    }
  }
}

double Cluster::max_process_cap() const {
  double e = 0.0;
  for (const auto& b : back) e = std::max(e, b.process_cap);
  return e;
}

void Cluster::validate() const {
  topology.validate();
  if (front.size() != static_cast<std::size_t>(frontends()))
    throw DimensionMismatch(fmt::format("{} front-end parameter blocks for {} front ends", front.size(), frontends()));
  if (back.size() != static_cast<std::size_t>(backends()))
    throw DimensionMismatch(fmt::format("{} back-end parameter blocks for {} back ends", back.size(), backends()));
  for (std::size_t j = 0; j < front.size(); ++j) {
    const auto& f = front[j];
    if (!(f.queue_cap > 0.0)) throw InvalidInput(fmt::format("front end {}: queue capacity must be positive", j));
    if (!(f.reject_cost > 0.0)) throw InvalidInput(fmt::format("front end {}: rejection cost must be positive", j));
    if (f.arrival_max < 0.0) throw InvalidInput(fmt::format("front end {}: negative arrival bound", j));
  }
  for (std::size_t i = 0; i < back.size(); ++i) {
    const auto& b = back[i];
    if (!(b.queue_cap > 0.0)) throw InvalidInput(fmt::format("back end {}: queue capacity must be positive", i));
    if (!(b.process_cap > 0.0)) throw InvalidInput(fmt::format("back end {}: processing capacity must be positive", i));
    if (b.charge_max < 0.0 || b.discharge_max < 0.0)
      throw InvalidInput(fmt::format("back end {}: negative charge/discharge rate", i));
    if (!(b.battery_min < b.battery_max)) throw InvalidInput(fmt::format("back end {}: empty battery range", i));
    if (b.wear_cost < 0.0) throw InvalidInput(fmt::format("back end {}: negative wear cost", i));
  }
  if (!(eta_charge > 0.0 && eta_charge <= 1.0) || !(eta_discharge > 0.0 && eta_discharge <= 1.0))
    throw InvalidInput("battery efficiencies must lie in (0, 1]");
}

void SlotInput::validate(const Cluster& cluster) const {
  const auto I = static_cast<std::size_t>(cluster.backends());
  const auto J = static_cast<std::size_t>(cluster.frontends());
  if (arrivals.size() != J || pv.size() != I || price_buy.size() != I || price_sell.size() != I)
    throw DimensionMismatch("slot input dimensions do not match the cluster");
  double sell_max = -INFINITY, buy_min = INFINITY;
  for (std::size_t j = 0; j < J; ++j)
    if (arrivals[j] < 0.0) throw InvalidInput(fmt::format("negative arrivals at front end {}", j));
  for (std::size_t i = 0; i < I; ++i) {
    if (pv[i] < 0.0) throw InvalidInput(fmt::format("negative PV at back end {}", i));
    if (price_sell[i] > price_buy[i])
      throw InvalidInput(fmt::format("back end {}: sell price {} exceeds buy price {}", i, price_sell[i], price_buy[i]));
    sell_max = std::max(sell_max, price_sell[i]);
    buy_min = std::min(buy_min, price_buy[i]);
  }
  if (price_trade < sell_max || price_trade > buy_min)
    throw InvalidInput(
        fmt::format("sharing price {} outside [{}, {}]", price_trade, sell_max, buy_min));
}

SystemState SystemState::initial(const Cluster& cluster, const std::vector<double>& battery) {
  if (battery.size() != static_cast<std::size_t>(cluster.backends()))
    throw DimensionMismatch("initial battery vector has the wrong length");
  SystemState s;
  s.slot = 0;
  s.q_front.assign(cluster.frontends(), 0.0);
  s.q_back.assign(cluster.backends(), 0.0);
  s.battery = battery;
  s.h_front.assign(cluster.frontends(), 0.0);
  s.h_back.assign(cluster.backends(), 0.0);
  s.battery_gap.assign(cluster.backends(), 0.0);
  return s;
}

Decision Decision::zero(const Cluster& cluster) {
  const auto I = static_cast<std::size_t>(cluster.backends());
  Decision d;
  d.accept.assign(cluster.frontends(), 0.0);
  d.transfer.assign(cluster.link_count(), 0.0);
  d.process.assign(I, 0.0);
  d.buy.assign(I, 0.0);
  d.sell.assign(I, 0.0);
  d.charge.assign(I, 0.0);
  d.discharge.assign(I, 0.0);
  d.share = SquareMatrix(I);
  return d;
}

CostBreakdown& CostBreakdown::operator+=(const CostBreakdown& o) {
  grid += o.grid;
  battery += o.battery;
  transfer += o.transfer;
  work += o.work;
  return *this;
}

std::string describe(const BoundViolation& v) {
  const char* what = v.kind == BoundKind::FrontQueue  ? "front-end queue"
                     : v.kind == BoundKind::BackQueue ? "back-end queue"
                                                      : "battery level";
  return fmt::format("{} {} = {} outside [{}, {}]", what, v.index, v.value, v.lo, v.hi);
}

namespace {

void check_range(std::vector<BoundViolation>& out, BoundKind kind, int index, double value, double lo, double hi) {
  if (value < lo - kStateSlack || value > hi + kStateSlack) out.push_back({kind, index, value, lo, hi});
}

}  // namespace

QueueUpdate step_queues(const SystemState& state, const Decision& decision, const Cluster& cluster) {
  const auto& topo = cluster.topology;
  QueueUpdate out;
  out.q_front = state.q_front;
  out.q_back = state.q_back;
  for (int j = 0; j < cluster.frontends(); ++j) out.q_front[j] += decision.accept[j];
  for (std::size_t l = 0; l < topo.links.size(); ++l) {
    out.q_front[topo.links[l].front] -= decision.transfer[l];
    out.q_back[topo.links[l].back] += decision.transfer[l];
  }
  for (int i = 0; i < cluster.backends(); ++i) out.q_back[i] -= decision.process[i];
  for (int j = 0; j < cluster.frontends(); ++j)
    check_range(out.violations, BoundKind::FrontQueue, j, out.q_front[j], 0.0, cluster.front[j].queue_cap);
  for (int i = 0; i < cluster.backends(); ++i)
    check_range(out.violations, BoundKind::BackQueue, i, out.q_back[i], 0.0, cluster.back[i].queue_cap);
  return out;
}

BatteryUpdate step_battery(const SystemState& state, const Decision& decision, const Cluster& cluster) {
  BatteryUpdate out;
  out.levels = state.battery;
  for (int i = 0; i < cluster.backends(); ++i) {
    out.levels[i] += cluster.eta_charge * decision.charge[i] - decision.discharge[i] / cluster.eta_discharge;
    const auto& b = cluster.back[i];
    check_range(out.violations, BoundKind::Battery, i, out.levels[i], b.battery_min, b.battery_max);
  }
  return out;
}

CostBreakdown slot_cost(const Decision& decision, const SlotInput& input, const Cluster& cluster) {
  CostBreakdown cost;
  for (int i = 0; i < cluster.backends(); ++i) {
    cost.grid += input.price_buy[i] * decision.buy[i] - input.price_sell[i] * decision.sell[i];
    cost.battery += cluster.back[i].wear_cost * (decision.charge[i] + decision.discharge[i]);
  }
  const auto& links = cluster.topology.links;
  for (std::size_t l = 0; l < links.size(); ++l) cost.transfer += links[l].bandwidth_cost * decision.transfer[l];
  for (int j = 0; j < cluster.frontends(); ++j)
    cost.work += cluster.front[j].reject_cost * (input.arrivals[j] - decision.accept[j]);
  return cost;
}

std::vector<double> power_balance_residual(const Decision& decision, const SlotInput& input) {
  const std::size_t I = decision.process.size();
  std::vector<double> r(I);
  for (std::size_t i = 0; i < I; ++i) {
    r[i] = decision.buy[i] - decision.sell[i] + decision.discharge[i] - decision.charge[i] + input.pv[i] +
           decision.share.row_sum(i) - decision.process[i];
  }
  return r;
}

FeasibilityReport check_decision(const Decision& decision, const SlotInput& input, const Cluster& cluster,
                                 double tol) {
  FeasibilityReport rep;
  auto box = [&](const char* name, int idx, double v, double lo, double hi) {
    if (!(v >= lo - tol && v <= hi + tol))
      rep.problems.push_back(fmt::format("{}[{}] = {} outside [{}, {}]", name, idx, v, lo, hi));
  };
  const int I = cluster.backends();
  const int J = cluster.frontends();
  if (decision.accept.size() != static_cast<std::size_t>(J) || decision.process.size() != static_cast<std::size_t>(I) ||
      decision.transfer.size() != cluster.link_count() || decision.share.size() != static_cast<std::size_t>(I)) {
    rep.problems.emplace_back("decision dimensions do not match the cluster");
    return rep;
  }
  for (int j = 0; j < J; ++j) box("a", j, decision.accept[j], 0.0, input.arrivals[j]);
  const auto& links = cluster.topology.links;
  for (std::size_t l = 0; l < links.size(); ++l) box("m", static_cast<int>(l), decision.transfer[l], 0.0, links[l].capacity);
  for (int i = 0; i < I; ++i) {
    const auto& b = cluster.back[i];
    box("e", i, decision.process[i], 0.0, b.process_cap);
    box("x", i, decision.buy[i], 0.0, INFINITY);
    box("y", i, decision.sell[i], 0.0, INFINITY);
    box("c", i, decision.charge[i], 0.0, b.charge_max);
    box("d", i, decision.discharge[i], 0.0, b.discharge_max);
    if (decision.share(i, i) != 0.0) rep.problems.push_back(fmt::format("u[{},{}] is nonzero", i, i));
    for (int k = 0; k < I; ++k) {
      if (k == i) continue;
      const double cap = cluster.topology.sharing_cap(i, k);
      if (!(std::abs(decision.share(i, k)) <= cap + tol))
        rep.problems.push_back(fmt::format("u[{},{}] = {} exceeds +-{}", i, k, decision.share(i, k), cap));
      if (decision.share(i, k) + decision.share(k, i) != 0.0)
        rep.problems.push_back(fmt::format("u[{},{}] + u[{},{}] != 0", i, k, k, i));
    }
  }
  const auto res = power_balance_residual(decision, input);
  for (int i = 0; i < I; ++i)
    if (!(std::abs(res[i]) <= tol)) rep.problems.push_back(fmt::format("power balance residual {} at back end {}", res[i], i));
  return rep;
}

bool AssumptionReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const AssumptionCheck& c) { return c.passed; });
}

std::string AssumptionReport::summary() const {
  std::string out;
  for (const auto& c : checks) {
    if (c.passed) continue;
    out += fmt::format("{} fails at index {} ({} vs {}, margin {}); ", c.name, c.index, c.lhs, c.rhs, c.margin);
  }
  return out.empty() ? "all assumptions hold" : out;
}

AssumptionReport check_assumptions(const Cluster& cluster, const PriceBounds& prices) {
  AssumptionReport rep;
  const auto& topo = cluster.topology;
  for (int j = 0; j < cluster.frontends(); ++j) {
    const auto& f = cluster.front[j];
    const double rhs = f.arrival_max + topo.front_link_capacity(j);
    rep.checks.push_back({"A1", j, f.queue_cap, rhs, f.queue_cap >= rhs, f.queue_cap - rhs});
  }
  for (int i = 0; i < cluster.backends(); ++i) {
    const auto& b = cluster.back[i];
    const double rhs = b.process_cap + topo.back_link_capacity(i);
    rep.checks.push_back({"A2", i, b.queue_cap, rhs, b.queue_cap >= rhs, b.queue_cap - rhs});
  }
  const double ec = cluster.eta_charge;
  const double ed = cluster.eta_discharge;
  for (int i = 0; i < cluster.backends(); ++i) {
    const auto& b = cluster.back[i];
    const double lhs = b.battery_max - b.battery_min;
    const double rhs = ec * b.charge_max + b.discharge_max / ed;
    rep.checks.push_back({"A3", i, lhs, rhs, lhs >= rhs, lhs - rhs});
  }
  for (int i = 0; i < cluster.backends(); ++i) {
    const auto& b = cluster.back[i];
    const double lhs = prices.buy_max * ec * ed;
    const double rhs = prices.sell_min + b.wear_cost * (1.0 + ec * ed);
    rep.checks.push_back({"A4", i, lhs, rhs, lhs < rhs, rhs - lhs});
  }
  return rep;
}

}  // namespace clustercoord
