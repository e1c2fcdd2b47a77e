#pragma once

#include <random>

#include "clustercoord/model.hpp"
#include "oracles.hpp"

namespace fixtures {

using clustercoord::Cluster;

// Fully linked cluster with uniform parameters.
inline Cluster uniform_cluster(int backends, int frontends, double link_cap = 3.0, double share_cap = 2.0) {
  Cluster c;
  c.topology.backends = backends;
  c.topology.frontends = frontends;
  for (int j = 0; j < frontends; ++j)
    for (int i = 0; i < backends; ++i) c.topology.links.push_back({j, i, link_cap, 0.1 + 0.05 * (i + j)});
  c.topology.sharing_cap = clustercoord::SquareMatrix(backends);
  for (int i = 0; i < backends; ++i)
    for (int k = 0; k < backends; ++k)
      if (i != k) c.topology.sharing_cap(i, k) = share_cap;
  c.front.assign(frontends, {200.0, 1.0, 4.0});
  c.back.assign(backends, {200.0, 5.0, 4.0, 6.0, 10.0, 85.0, 0.06});
  c.eta_charge = 0.9;
  c.eta_discharge = 0.95;
  return c;
}

inline clustercoord::SlotInput flat_input(const Cluster& c, double arrivals, double pv, double buy, double sell) {
  clustercoord::SlotInput in;
  in.arrivals.assign(c.frontends(), arrivals);
  in.pv.assign(c.backends(), pv);
  in.price_buy.assign(c.backends(), buy);
  in.price_sell.assign(c.backends(), sell);
  in.price_trade = 0.5 * (buy + sell);
  return in;
}

inline constexpr clustercoord::PriceBounds kPrices{0.12, 0.03};

// Arrivals, PV and prices drawn inside the declared bounds.
inline clustercoord::SlotInput random_input(const Cluster& c, std::mt19937_64& rng,
                                            clustercoord::PriceBounds prices = kPrices, double pv_max = 6.0) {
  clustercoord::SlotInput in;
  for (const auto& f : c.front) in.arrivals.push_back(oracle::uniform(rng, 0.0, f.arrival_max));
  double min_buy = prices.buy_max;
  for (int i = 0; i < c.backends(); ++i) {
    in.pv.push_back(oracle::uniform(rng, 0.0, pv_max));
    in.price_buy.push_back(oracle::uniform(rng, prices.sell_min, prices.buy_max));
    min_buy = std::min(min_buy, in.price_buy.back());
  }
  double max_sell = 0.0;
  for (int i = 0; i < c.backends(); ++i) {
    in.price_sell.push_back(oracle::uniform(rng, prices.sell_min, min_buy));
    max_sell = std::max(max_sell, in.price_sell.back());
  }
  in.price_trade = 0.5 * (max_sell + min_buy);
  return in;
}

}  // namespace fixtures
