#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "clustercoord/traces.hpp"
#include "fixtures.hpp"

using namespace clustercoord;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("clustercoord_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_small_dir(const fs::path& dir, const std::string& pv_unit, const std::string& sell_rows) {
  write_text(dir / "arrivals.csv", "slot,entity_id,value\n0,0,1\n1,0,2\n2,0,0.5\n");
  write_text(dir / "pv.csv", "slot,entity_id,value\n0,0,0\n1,0,0.002\n2,0,0.001\n");
  write_text(dir / "price_buy.csv", "slot,entity_id,value\n0,0,0.1\n1,0,0.08\n2,0,0.09\n");
  write_text(dir / "price_sell.csv", "slot,entity_id,value\n" + sell_rows);
  write_text(dir / "trace.json", R"({"provenance": "hand", "units": {"pv": ")" + pv_unit +
                                     R"(", "price": "$/kWh"}, "bounds": {"arrival_max": [3], "buy_max": 0.1, "sell_min": 0.01}})");
}

}  // namespace

TEST_CASE("loading a small trace directory") {
  const auto dir = scratch("small");
  SUBCASE("well formed") {
    write_small_dir(dir, "kWh", "0,0,0.05\n1,0,0.04\n2,0,0.03\n");
    const auto tr = load_trace_csv(dir);
    CHECK(tr.slots() == 3);
    CHECK(tr.frontends() == 1);
    CHECK(tr.backends() == 1);
    CHECK(tr.arrivals[1][0] == 2.0);
    CHECK(tr.provenance == "hand");
  }
  SUBCASE("MWh energies are scaled to kWh") {
    write_small_dir(dir, "MWh", "0,0,0.05\n1,0,0.04\n2,0,0.03\n");
    const auto tr = load_trace_csv(dir);
    CHECK(tr.pv[1][0] == doctest::Approx(2.0));
  }
  SUBCASE("sell above buy names the slot") {
    write_small_dir(dir, "kWh", "0,0,0.05\n1,0,0.09\n2,0,0.03\n");
    CHECK_THROWS_WITH_AS(load_trace_csv(dir), doctest::Contains("slot 1"), TraceError);
  }
  SUBCASE("malformed row reports the line") {
    write_small_dir(dir, "kWh", "0,0,0.05\n1,0,\n2,0,0.03\n");
    CHECK_THROWS_WITH_AS(load_trace_csv(dir), doctest::Contains(":3:"), TraceError);
  }
  SUBCASE("declared bound exceeded") {
    write_small_dir(dir, "kWh", "0,0,0.05\n1,0,0.04\n2,0,0.03\n");
    write_text(dir / "arrivals.csv", "slot,entity_id,value\n0,0,1\n1,0,4\n2,0,0.5\n");
    CHECK_THROWS_AS(load_trace_csv(dir), TraceError);
  }
  SUBCASE("length mismatch across files") {
    write_small_dir(dir, "kWh", "0,0,0.05\n1,0,0.04\n");
    CHECK_THROWS_AS(load_trace_csv(dir), TraceError);
  }
  SUBCASE("wrong header") {
    write_small_dir(dir, "kWh", "0,0,0.05\n1,0,0.04\n2,0,0.03\n");
    write_text(dir / "pv.csv", "t,i,v\n0,0,0\n");
    CHECK_THROWS_AS(load_trace_csv(dir), TraceError);
  }
}

TEST_CASE("normalised files round-trip byte for byte") {
  const auto dir = scratch("roundtrip");
  const auto tr = synth_generate(42, 50, 2, 3);
  write_trace_csv(dir, tr);
  const auto again = load_trace_csv(dir);
  const auto dir2 = scratch("roundtrip2");
  write_trace_csv(dir2, again);
  for (const char* f : {"arrivals.csv", "pv.csv", "price_buy.csv", "price_sell.csv", "trace.json"})
    CHECK(read_text(dir / f) == read_text(dir2 / f));
  CHECK(again.price_buy == tr.price_buy);
  CHECK(again.arrivals == tr.arrivals);
}

TEST_CASE("synthetic generator") {
  SUBCASE("same seed gives the same traces") {
    const auto a = synth_generate(7, 100, 2, 3), b = synth_generate(7, 100, 2, 3);
    CHECK(a.arrivals == b.arrivals);
    CHECK(a.pv == b.pv);
    CHECK(a.price_buy == b.price_buy);
    CHECK(synth_generate(8, 100, 2, 3).arrivals != a.arrivals);
  }
  SUBCASE("noise-free shapes are exact sinusoids with tight bounds") {
    SynthShape s;
    s.arrival_noise = s.pv_noise = s.price_noise = 0.0;
    s.phase_spread = 0.0;
    const auto tr = synth_generate(1, 288, 1, 1, s);
    double peak = 0.0;
    for (int t = 0; t < 288; ++t) {
      const double w = 2.0 * std::numbers::pi * t / 288.0;
      CHECK(tr.arrivals[t][0] == doctest::Approx(s.arrival_base + s.arrival_amplitude * std::sin(w)));
      peak = std::max(peak, tr.arrivals[t][0]);
    }
    CHECK(peak == doctest::Approx(tr.arrival_max[0]));
  }
  SUBCASE("bound audit passes for many seeds") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) CHECK_NOTHROW(synth_generate(seed, 300, 2, 3).audit());
  }
  SUBCASE("default shapes satisfy the assumptions on the reference cluster") {
    const auto tr = synth_generate(3, 10, 2, 3);
    const auto c = fixtures::uniform_cluster(3, 2);
    CHECK(check_assumptions(c, tr.prices).all_passed());
  }
  SUBCASE("sell fraction that breaks the price ordering is refused") {
    SynthShape s;
    s.sell_fraction = 0.9;
    CHECK_THROWS_AS(synth_generate(1, 10, 1, 2, s), InvalidInput);
  }
}
