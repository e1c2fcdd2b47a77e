#pragma once

// Exogenous time series (arrivals, PV, prices) with declared bounds, CSV
// ingestion and a reproducible synthetic generator.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "clustercoord/model.hpp"

namespace clustercoord {

class TraceError : public Error {
 public:
  using Error::Error;
};

/// Series are indexed [slot][entity].
struct TraceSet {
  std::vector<std::vector<double>> arrivals;    // per front end
  std::vector<std::vector<double>> pv;          // per back end
  std::vector<std::vector<double>> price_buy;   // per back end
  std::vector<std::vector<double>> price_sell;  // per back end

  std::vector<double> arrival_max;  // declared, per front end
  PriceBounds prices;               // declared
  std::string provenance;

  int slots() const { return static_cast<int>(arrivals.size()); }
  int frontends() const { return arrivals.empty() ? 0 : static_cast<int>(arrivals.front().size()); }
  int backends() const { return pv.empty() ? 0 : static_cast<int>(pv.front().size()); }

  /// Slot input with the trade price at the midpoint of
  /// (max sell price, min buy price).
  SlotInput slot(int t) const;

  /// Length consistency, sell <= buy, and declared bounds dominating the data.
  void audit() const;
  /// First T slots.
  TraceSet prefix(int T) const;
};

/// Trade price default: midpoint of (max_i p^s_i, min_i p^b_i).
double default_trade_price(const std::vector<double>& buy, const std::vector<double>& sell);

enum class SeriesKind { Arrivals, Pv, PriceBuy, PriceSell };

const char* to_string(SeriesKind kind);
/// File stem used for a series kind, e.g. "price_buy".
std::string series_file(SeriesKind kind);

/// Unit of a series file. Energies normalise to kWh, prices to $/kWh.
enum class Unit { Requests, kWh, MWh, DollarPerKWh, DollarPerMWh };

const char* to_string(Unit unit);
Unit unit_from_string(const std::string& s);
/// Factor applied to raw values to reach the internal unit.
double unit_scale(Unit unit);

/// Reads one `slot,entity_id,value` file into [slot][entity].
std::vector<std::vector<double>> load_series_csv(const std::filesystem::path& path, Unit unit = Unit::kWh);
void write_series_csv(const std::filesystem::path& path, const std::vector<std::vector<double>>& series);

/// Loads arrivals.csv, pv.csv, price_buy.csv, price_sell.csv and the
/// trace.json sidecar (units, declared bounds, provenance) from `dir`.
TraceSet load_trace_csv(const std::filesystem::path& dir);
/// Writes normalised files (kWh, $/kWh) plus the sidecar.
void write_trace_csv(const std::filesystem::path& dir, const TraceSet& traces);

/// Shape of the synthetic generator. Every amplitude is per slot.
struct SynthShape {
  int slots_per_day = 288;
  double arrival_base = 2.0;
  double arrival_amplitude = 1.5;
  double arrival_noise = 0.5;
  double pv_peak = 4.0;
  double pv_noise = 0.5;
  double price_base = 0.06;
  double price_amplitude = 0.02;
  double price_noise = 0.005;
  double sell_fraction = 0.35;
  double phase_spread = 0.25;  // per-entity phase offset, fraction of a day
};

/// Deterministic in `seed`. Declared bounds are the analytic maxima of the
/// generators, so the audit always passes.
TraceSet synth_generate(std::uint64_t seed, int T, int frontends, int backends, const SynthShape& shape = {});

}  // namespace clustercoord
