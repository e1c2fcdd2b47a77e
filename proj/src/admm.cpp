#include "clustercoord/admm.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <fmt/format.h>
#include <json.hpp>

#include "clustercoord/kernels.hpp"

namespace clustercoord {

ConsensusState ConsensusState::initial(const Cluster& cluster, double rho) {
  ConsensusState cs;
  const auto L = cluster.link_count();
  const auto I = static_cast<std::size_t>(cluster.backends());
  cs.m.assign(L, 0.0);
  cs.m_prime.assign(L, 0.0);
  cs.lambda.assign(L, 0.0);
  cs.u = cs.u_prime = cs.mu = SquareMatrix(I);
  cs.rho = rho;
  return cs;
}

FrontEndSolution front_end_solve(int j, const SystemState& state, const SlotInput& input, const Cluster& cluster,
                                 const LyapunovParams& params, const ConsensusState& cs) {
  const auto& f = cluster.front[j];
  const double V = params.V, h = state.h_front[j];
  FrontEndSolution out;
  out.accept = h - V * f.reject_cost > 0.0 ? 0.0 : input.arrivals[j];
  out.objective = (h - V * f.reject_cost) * out.accept + V * f.reject_cost * input.arrivals[j];
  for (int l : cluster.topology.links_of_front(j)) {
    const auto& link = cluster.topology.links[l];
    const double slope = V * link.bandwidth_cost - h;
    const double m = std::clamp(cs.m_prime[l] - cs.lambda[l] - slope / cs.rho, 0.0, link.capacity);
    out.transfer.push_back(m);
    out.objective += slope * m;
  }
  return out;
}

BackEndSolution back_end_solve(int i, const SystemState& state, const SlotInput& input, const Cluster& cluster,
                               const LyapunovParams& params, const ConsensusState& cs) {
  const auto& b = cluster.back[i];
  const double V = params.V, h = state.h_back[i], l = state.battery_gap[i];
  const double rho = cs.rho, pt = input.price_trade;
  const int I = cluster.backends();
  const auto links = cluster.topology.links_of_back(i);
  const auto& cap = cluster.topology.sharing_cap;

  std::vector<BalanceCoordinate> coords;
  for (int k : links) {
    const auto& link = cluster.topology.links[k];
    coords.push_back({rho, h - rho * (cs.m[k] + cs.lambda[k]), 0.0, link.capacity, 0.0});
  }
  const std::size_t base = coords.size();
  coords.push_back({0.0, -h, 0.0, b.process_cap, -1.0});
  coords.push_back({0.0, V * input.price_buy[i], 0.0, kInf, 1.0});
  coords.push_back({0.0, -V * input.price_sell[i], 0.0, kInf, -1.0});
  coords.push_back({0.0, l * cluster.eta_charge + V * b.wear_cost, 0.0, b.charge_max, -1.0});
  coords.push_back({0.0, -l / cluster.eta_discharge + V * b.wear_cost, 0.0, b.discharge_max, 1.0});
  for (int k = 0; k < I; ++k) {
    if (k == i) continue;
    coords.push_back({rho, V * pt + rho * (cs.mu(i, k) - cs.u_prime(i, k)), -cap(i, k), cap(i, k), 1.0});
  }
  const auto sol = solve_balance_subproblem(coords, -input.pv[i]);

  BackEndSolution out;
  for (std::size_t k = 0; k < links.size(); ++k) out.transfer.push_back(sol.v[k]);
  out.process = sol.v[base];
  out.buy = sol.v[base + 1];
  out.sell = sol.v[base + 2];
  out.charge = sol.v[base + 3];
  out.discharge = sol.v[base + 4];
  out.share.assign(I, 0.0);
  std::size_t pos = base + 5;
  for (int k = 0; k < I; ++k)
    if (k != i) out.share[k] = sol.v[pos++];

  // Own cost terms only; the penalties belong to the Lagrangian.
  double obj = -h * out.process + V * input.price_buy[i] * out.buy - V * input.price_sell[i] * out.sell +
               coords[base + 3].linear * out.charge + coords[base + 4].linear * out.discharge;
  for (double m : out.transfer) obj += h * m;
  for (int k = 0; k < I; ++k) obj += V * pt * out.share[k];
  out.objective = obj;
  return out;
}

SquareMatrix grid_solve(const ConsensusState& cs, const SquareMatrix& cap) {
  SquareMatrix v(cs.u.size());
  for (std::size_t r = 0; r < v.size(); ++r)
    for (std::size_t c = 0; c < v.size(); ++c) v(r, c) = cs.u(r, c) + cs.mu(r, c);
  return project_pairwise_antisymmetric(v, cap);
}

void dual_update(ConsensusState& cs) {
  for (std::size_t k = 0; k < cs.lambda.size(); ++k) cs.lambda[k] += cs.m[k] - cs.m_prime[k];
  auto& mu = cs.mu.raw();
  const auto &u = cs.u.raw(), &up = cs.u_prime.raw();
  for (std::size_t k = 0; k < mu.size(); ++k) mu[k] += u[k] - up[k];
  ++cs.n;
}

Decision truncation_repair(const SystemState& state, const SlotInput& input, const Cluster& cluster,
                           const Decision& raw, const SquareMatrix& u_prime, RepairReport* report) {
  Decision d = raw;
  d.share = u_prime;
  const int I = cluster.backends(), J = cluster.frontends();
  RepairReport rep;
  rep.balance_gap = power_balance_residual(d, input);
  for (int i = 0; i < I; ++i) {
    const double gap = rep.balance_gap[i];
    if (gap < 0.0)
      d.buy[i] -= gap;
    else
      d.sell[i] += gap;
    if (d.buy[i] < 0.0 || d.sell[i] < 0.0)
      throw NumericalFailure(fmt::format("back end {}: repaired grid exchange is negative", i));
  }
  rep.accept_shift.assign(J, 0.0);
  for (int j = 0; j < J; ++j) {
    const auto mine = cluster.topology.links_of_front(j);
    double out = 0.0;
    for (int l : mine) out += d.transfer[l];
    const double q = state.q_front[j];
    const double cap = cluster.front[j].queue_cap;
    const double next = q + d.accept[j] - out;
    double a = d.accept[j];
    if (next < 0.0)
      a = out - q;
    else if (next > cap)
      a = cap - q + out;
    a = std::clamp(a, 0.0, input.arrivals[j]);
    if (q + a - out < 0.0) {
      // Even full acceptance cannot cover the transfers: scale them down.
      const double scale = out > 0.0 ? (q + a) / out : 0.0;
      for (int l : mine) d.transfer[l] *= scale;
      rep.scaled_fronts.push_back(j);
    }
    rep.accept_shift[j] = a - d.accept[j];
    d.accept[j] = a;
  }
  if (report) *report = std::move(rep);
  return d;
}

AdmmResult run_admm(const SystemState& state, const SlotInput& input, const Cluster& cluster,
                    const LyapunovParams& params, const AdmmOptions& options, const ConsensusState* warm) {
  if (!(options.rho > 0.0)) throw InvalidInput("rho must be positive");
  if (options.max_iterations < 1) throw InvalidInput("iteration limit must be at least 1");
  if (!(options.tol > 0.0)) throw InvalidInput("tolerance must be positive");
  input.validate(cluster);

  SlotInput in = input;
  if (options.trade_price) in.price_trade = *options.trade_price;
  const int I = cluster.backends(), J = cluster.frontends();
  const auto& topo = cluster.topology;

  AdmmResult res;
  auto& cs = res.consensus;
  cs = warm ? *warm : ConsensusState::initial(cluster, options.rho);
  cs.rho = options.rho;
  cs.n = 0;
  auto& rep = res.report;
  std::vector<FrontEndSolution> fronts(J);
  std::vector<BackEndSolution> backs(I);

  for (int n = 0; n < options.max_iterations; ++n) {
    // Every agent in a tier reads the same snapshot.
    for (int j = 0; j < J; ++j) {
      try {
        fronts[j] = front_end_solve(j, state, in, cluster, params, cs);
      } catch (const Error& e) {
        throw Error(fmt::format("iteration {}: front end {}: {}", n, j, e.what()));
      }
    }
    for (int j = 0; j < J; ++j) {
      const auto mine = topo.links_of_front(j);
      for (std::size_t k = 0; k < mine.size(); ++k) cs.m[mine[k]] = fronts[j].transfer[k];
    }
    for (int i = 0; i < I; ++i) {
      try {
        backs[i] = back_end_solve(i, state, in, cluster, params, cs);
      } catch (const Error& e) {
        throw Error(fmt::format("iteration {}: back end {}: {}", n, i, e.what()));
      }
    }
    double dual = 0.0;
    for (int i = 0; i < I; ++i) {
      const auto mine = topo.links_of_back(i);
      for (std::size_t k = 0; k < mine.size(); ++k) {
        dual = std::max(dual, std::abs(backs[i].transfer[k] - cs.m_prime[mine[k]]));
        cs.m_prime[mine[k]] = backs[i].transfer[k];
      }
      for (int k = 0; k < I; ++k) cs.u(i, k) = backs[i].share[k];
    }
    const auto up = grid_solve(cs, topo.sharing_cap);
    for (std::size_t k = 0; k < up.raw().size(); ++k)
      dual = std::max(dual, std::abs(up.raw()[k] - cs.u_prime.raw()[k]));
    cs.u_prime = up;

    AdmmIteration it;
    it.n = n + 1;
    for (std::size_t k = 0; k < cs.m.size(); ++k) it.primal_m = std::max(it.primal_m, std::abs(cs.m[k] - cs.m_prime[k]));
    for (std::size_t k = 0; k < cs.u.raw().size(); ++k)
      it.primal_u = std::max(it.primal_u, std::abs(cs.u.raw()[k] - cs.u_prime.raw()[k]));
    it.dual = dual;
    for (const auto& f : fronts) it.objective += f.objective;
    for (const auto& b : backs) it.objective += b.objective;
    dual_update(cs);
    rep.history.push_back(it);
    if (options.on_iteration) options.on_iteration(it);
    rep.iterations = n + 1;
    if (std::max(it.primal_m, it.primal_u) <= options.tol && it.dual <= options.tol) {
      rep.converged = true;
      break;
    }
  }
  rep.truncated = !rep.converged;

  Decision raw = Decision::zero(cluster);
  raw.transfer = cs.m_prime;
  for (int j = 0; j < J; ++j) raw.accept[j] = fronts[j].accept;
  for (int i = 0; i < I; ++i) {
    raw.process[i] = backs[i].process;
    raw.buy[i] = backs[i].buy;
    raw.sell[i] = backs[i].sell;
    raw.charge[i] = backs[i].charge;
    raw.discharge[i] = backs[i].discharge;
  }
  res.decision = truncation_repair(state, input, cluster, raw, cs.u_prime, &rep.repair);
  for (const auto& f : fronts) rep.front_objectives.push_back(f.objective);
  for (const auto& b : backs) rep.back_objectives.push_back(b.objective);
  rep.objective = p2_objective(res.decision, state, input, cluster, params);
  return res;
}

void write_iteration_jsonl(std::ostream& out, int slot, const AdmmIteration& it) {
  nlohmann::ordered_json j;
  j["slot"] = slot;
  j["n"] = it.n;
  j["primal_m"] = it.primal_m;
  j["primal_u"] = it.primal_u;
  j["dual"] = it.dual;
  j["objective"] = it.objective;
  out << j.dump() << '\n';
}

}  // namespace clustercoord
