#include "clustercoord/traces.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace clustercoord {

namespace fs = std::filesystem;

namespace {

constexpr const char* kHeader = "slot,entity_id,value";
constexpr SeriesKind kKinds[] = {SeriesKind::Arrivals, SeriesKind::Pv, SeriesKind::PriceBuy, SeriesKind::PriceSell};

// Slack for comparisons against analytic bounds.
bool exceeds(double v, double bound) { return v > bound + 1e-12 * std::max(1.0, std::abs(bound)); }

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class T>
bool parse_field(std::string_view s, T& out) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace

double default_trade_price(const std::vector<double>& buy, const std::vector<double>& sell) {
  return 0.5 * (*std::max_element(sell.begin(), sell.end()) + *std::min_element(buy.begin(), buy.end()));
}

SlotInput TraceSet::slot(int t) const {
  if (t < 0 || t >= slots()) throw TraceError(fmt::format("slot {} outside a {}-slot trace", t, slots()));
  SlotInput in{arrivals[t], pv[t], price_buy[t], price_sell[t], 0.0};
  in.price_trade = default_trade_price(in.price_buy, in.price_sell);
  return in;
}

void TraceSet::audit() const {
  const int T = slots(), J = frontends(), I = backends();
  if (T == 0) throw TraceError("trace has no slots");
  if (static_cast<int>(pv.size()) != T || static_cast<int>(price_buy.size()) != T ||
      static_cast<int>(price_sell.size()) != T)
    throw TraceError(fmt::format("series lengths differ: arrivals {}, pv {}, buy {}, sell {}", T, pv.size(),
                                 price_buy.size(), price_sell.size()));
  if (static_cast<int>(arrival_max.size()) != J)
    throw TraceError(fmt::format("{} declared arrival bounds for {} front ends", arrival_max.size(), J));
  for (int t = 0; t < T; ++t) {
    if (static_cast<int>(arrivals[t].size()) != J || static_cast<int>(pv[t].size()) != I ||
        static_cast<int>(price_buy[t].size()) != I || static_cast<int>(price_sell[t].size()) != I)
      throw TraceError(fmt::format("slot {}: entity count differs from slot 0", t));
    for (int j = 0; j < J; ++j) {
      if (arrivals[t][j] < 0.0 || exceeds(arrivals[t][j], arrival_max[j]))
        throw TraceError(fmt::format("slot {}: arrivals {} at front end {} outside [0, {}]", t, arrivals[t][j], j,
                                     arrival_max[j]));
    }
    for (int i = 0; i < I; ++i) {
      if (pv[t][i] < 0.0) throw TraceError(fmt::format("slot {}: negative PV at back end {}", t, i));
      if (exceeds(price_buy[t][i], prices.buy_max))
        throw TraceError(fmt::format("slot {}: buy price {} at back end {} above declared {}", t, price_buy[t][i], i,
                                     prices.buy_max));
      if (exceeds(prices.sell_min, price_sell[t][i]))
        throw TraceError(fmt::format("slot {}: sell price {} at back end {} below declared {}", t,
                                     price_sell[t][i], i, prices.sell_min));
      if (price_sell[t][i] > price_buy[t][i])
        throw TraceError(fmt::format("slot {}: sell price {} exceeds buy price {} at back end {}", t,
                                     price_sell[t][i], price_buy[t][i], i));
    }
  }
}

TraceSet TraceSet::prefix(int T) const {
  if (T > slots()) throw TraceError(fmt::format("need {} slots, trace has {}", T, slots()));
  TraceSet out = *this;
  out.arrivals.resize(T);
  out.pv.resize(T);
  out.price_buy.resize(T);
  out.price_sell.resize(T);
  return out;
}

const char* to_string(SeriesKind kind) {
  switch (kind) {
    case SeriesKind::Arrivals: return "arrivals";
    case SeriesKind::Pv: return "pv";
    case SeriesKind::PriceBuy: return "price_buy";
    case SeriesKind::PriceSell: return "price_sell";
  }
  return "?";
}

std::string series_file(SeriesKind kind) { return std::string(to_string(kind)) + ".csv"; }

const char* to_string(Unit unit) {
  switch (unit) {
    case Unit::Requests: return "requests";
    case Unit::kWh: return "kWh";
    case Unit::MWh: return "MWh";
    case Unit::DollarPerKWh: return "$/kWh";
    case Unit::DollarPerMWh: return "$/MWh";
  }
  return "?";
}

Unit unit_from_string(const std::string& s) {
  for (Unit u : {Unit::Requests, Unit::kWh, Unit::MWh, Unit::DollarPerKWh, Unit::DollarPerMWh})
    if (s == to_string(u)) return u;
  throw TraceError(fmt::format("unknown unit '{}'", s));
}

double unit_scale(Unit unit) {
  switch (unit) {
    case Unit::MWh: return 1000.0;
    case Unit::DollarPerMWh: return 1e-3;
    default: return 1.0;
  }
}

std::vector<std::vector<double>> load_series_csv(const fs::path& path, Unit unit) {
  std::ifstream in(path);
  if (!in) throw TraceError(fmt::format("cannot open {}", path.string()));
  std::string line;
  if (!std::getline(in, line)) throw TraceError(fmt::format("{}: empty file", path.string()));
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader) throw TraceError(fmt::format("{}:1: header must be '{}'", path.string(), kHeader));

  struct Row {
    long slot;
    long entity;
    double value;
  };
  std::vector<Row> rows;
  long max_slot = -1, max_entity = -1;
  for (int lineno = 2; std::getline(in, line); ++lineno) {
    if (line.empty() || line == "\r") continue;
    std::string_view sv(line);
    const auto c1 = sv.find(','), c2 = c1 == std::string_view::npos ? c1 : sv.find(',', c1 + 1);
    Row r{};
    if (c2 == std::string_view::npos || sv.find(',', c2 + 1) != std::string_view::npos ||
        !parse_field(sv.substr(0, c1), r.slot) || !parse_field(sv.substr(c1 + 1, c2 - c1 - 1), r.entity) ||
        !parse_field(sv.substr(c2 + 1), r.value) || !std::isfinite(r.value) || r.slot < 0 || r.entity < 0)
      throw TraceError(fmt::format("{}:{}: malformed row '{}'", path.string(), lineno, line));
    r.value *= unit_scale(unit);
    max_slot = std::max(max_slot, r.slot);
    max_entity = std::max(max_entity, r.entity);
    rows.push_back(r);
  }
  if (rows.empty()) throw TraceError(fmt::format("{}: no data rows", path.string()));
  const auto T = static_cast<std::size_t>(max_slot + 1), n = static_cast<std::size_t>(max_entity + 1);
  if (rows.size() != T * n)
    throw TraceError(fmt::format("{}: {} rows for {} slots x {} entities", path.string(), rows.size(), T, n));
  std::vector<std::vector<double>> out(T, std::vector<double>(n, std::nan("")));
  for (const auto& r : rows) {
    auto& cell = out[r.slot][r.entity];
    if (!std::isnan(cell))
      throw TraceError(fmt::format("{}: duplicate entry for slot {} entity {}", path.string(), r.slot, r.entity));
    cell = r.value;
  }
  return out;
}

void write_series_csv(const fs::path& path, const std::vector<std::vector<double>>& series) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TraceError(fmt::format("cannot write {}", path.string()));
  out << kHeader << '\n';
  for (std::size_t t = 0; t < series.size(); ++t)
    for (std::size_t k = 0; k < series[t].size(); ++k) out << t << ',' << k << ',' << format_number(series[t][k]) << '\n';
}

TraceSet load_trace_csv(const fs::path& dir) {
  const auto sidecar_path = dir / "trace.json";
  std::ifstream sin(sidecar_path);
  if (!sin) throw TraceError(fmt::format("missing sidecar {}", sidecar_path.string()));
  nlohmann::json meta;
  try {
    sin >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw TraceError(fmt::format("{}: {}", sidecar_path.string(), e.what()));
  }
  TraceSet tr;
  try {
    const auto& units = meta.at("units");
    const Unit energy = unit_from_string(units.value("pv", "kWh"));
    const Unit price = unit_from_string(units.value("price", "$/kWh"));
    if (energy != Unit::kWh && energy != Unit::MWh) throw TraceError("pv unit must be kWh or MWh");
    if (price != Unit::DollarPerKWh && price != Unit::DollarPerMWh) throw TraceError("price unit must be $/kWh or $/MWh");
    tr.arrivals = load_series_csv(dir / series_file(SeriesKind::Arrivals), Unit::Requests);
    tr.pv = load_series_csv(dir / series_file(SeriesKind::Pv), energy);
    tr.price_buy = load_series_csv(dir / series_file(SeriesKind::PriceBuy), price);
    tr.price_sell = load_series_csv(dir / series_file(SeriesKind::PriceSell), price);
    const auto& bounds = meta.at("bounds");
    tr.arrival_max = bounds.at("arrival_max").get<std::vector<double>>();
    tr.prices.buy_max = bounds.at("buy_max").get<double>() * unit_scale(price);
    tr.prices.sell_min = bounds.at("sell_min").get<double>() * unit_scale(price);
    tr.provenance = meta.value("provenance", "");
  } catch (const nlohmann::json::exception& e) {
    throw TraceError(fmt::format("{}: {}", sidecar_path.string(), e.what()));
  }
  tr.audit();
  return tr;
}

void write_trace_csv(const fs::path& dir, const TraceSet& traces) {
  fs::create_directories(dir);
  write_series_csv(dir / series_file(SeriesKind::Arrivals), traces.arrivals);
  write_series_csv(dir / series_file(SeriesKind::Pv), traces.pv);
  write_series_csv(dir / series_file(SeriesKind::PriceBuy), traces.price_buy);
  write_series_csv(dir / series_file(SeriesKind::PriceSell), traces.price_sell);
  nlohmann::ordered_json meta;
  meta["provenance"] = traces.provenance;
  meta["units"] = {{"arrivals", "requests"}, {"pv", "kWh"}, {"price", "$/kWh"}};
  meta["bounds"] = {{"arrival_max", traces.arrival_max},
                    {"buy_max", traces.prices.buy_max},
                    {"sell_min", traces.prices.sell_min}};
  std::ofstream out(dir / "trace.json", std::ios::binary);
  out << meta.dump(2) << '\n';
}

TraceSet synth_generate(std::uint64_t seed, int T, int frontends, int backends, const SynthShape& s) {
  if (T <= 0 || frontends <= 0 || backends <= 0 || s.slots_per_day <= 0)
    throw InvalidInput("synthetic trace needs positive sizes");
  const double buy_lo = s.price_base - s.price_amplitude - s.price_noise;
  const double buy_hi = s.price_base + s.price_amplitude + s.price_noise;
  if (!(buy_lo > 0.0)) throw InvalidInput("synthetic buy price can reach zero");
  if (!(s.sell_fraction >= 0.0) || s.sell_fraction * buy_hi > buy_lo)
    throw InvalidInput("sell fraction too high: a sell price could exceed another back end's buy price");
  if (s.arrival_base < 0.0 || s.arrival_amplitude < 0.0 || s.arrival_noise < 0.0 || s.pv_peak < 0.0 ||
      s.pv_noise < 0.0)
    throw InvalidInput("synthetic amplitudes must be nonnegative");

  std::mt19937_64 rng(seed);
  auto noise = [&](double amp) { return amp * (2.0 * (static_cast<double>(rng() >> 11) * 0x1.0p-53) - 1.0); };
  const double two_pi = 2.0 * std::numbers::pi;
  auto phase = [&](int k, int n) { return n > 1 ? s.phase_spread * k / (n - 1) : 0.0; };

  TraceSet tr;
  tr.provenance = fmt::format("synthetic seed={} T={} J={} I={}", seed, T, frontends, backends);
  const double arrival_hi = s.arrival_base + s.arrival_amplitude + s.arrival_noise;
  tr.arrival_max.assign(frontends, arrival_hi);
  tr.prices = {buy_hi, s.sell_fraction * buy_lo};
  for (int t = 0; t < T; ++t) {
    const double day = static_cast<double>(t) / s.slots_per_day;
    std::vector<double> a(frontends), z(backends), pb(backends), ps(backends);
    for (int j = 0; j < frontends; ++j) {
      const double v = s.arrival_base + s.arrival_amplitude * std::sin(two_pi * (day + phase(j, frontends)));
      a[j] = std::clamp(v + noise(s.arrival_noise), 0.0, arrival_hi);
    }
    for (int i = 0; i < backends; ++i) {
      const double sun = std::sin(two_pi * (day - 0.25 + 0.1 * phase(i, backends)));
      const double n = noise(s.pv_noise);
      z[i] = sun > 0.0 ? std::max(0.0, s.pv_peak * sun + n) : 0.0;
      const double p = s.price_base + s.price_amplitude * std::sin(two_pi * (day + phase(i, backends)));
      pb[i] = std::clamp(p + noise(s.price_noise), buy_lo, buy_hi);
      ps[i] = s.sell_fraction * pb[i];
    }
    tr.arrivals.push_back(std::move(a));
    tr.pv.push_back(std::move(z));
    tr.price_buy.push_back(std::move(pb));
    tr.price_sell.push_back(std::move(ps));
  }
  tr.audit();
  return tr;
}

}  // namespace clustercoord
