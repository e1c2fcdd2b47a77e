#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "clustercoord/experiment.hpp"

using namespace clustercoord;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config(int slots, ControllerKind kind = ControllerKind::Proposed) {
  auto cfg = config_from_json({{"trace", {{"slots", slots}}}});
  cfg.controller.kind = kind;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("clustercoord_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("configuration") {
  SUBCASE("defaults describe the reference cluster") {
    const auto cfg = config_from_json(nlohmann::json::object());
    CHECK(cfg.cluster.backends() == 3);
    CHECK(cfg.cluster.frontends() == 2);
    CHECK(cfg.cluster.link_count() == 6);
    CHECK(cfg.trace.slots == 500);
    CHECK(cfg.controller.kind == ControllerKind::Proposed);
    CHECK(cfg.initial_battery.empty());
    cfg.validate();
  }
  SUBCASE("overrides reach nested keys and parse values") {
    auto j = nlohmann::json::object();
    apply_override(j, "controller.name=admm");
    apply_override(j, "controller.max_iterations=50");
    apply_override(j, "cluster.back.process_cap=2.5");
    apply_override(j, "initial_battery=[10, 20, 30]");
    const auto cfg = config_from_json(j);
    CHECK(cfg.controller.kind == ControllerKind::Admm);
    CHECK(cfg.controller.max_iterations == 50);
    CHECK(cfg.cluster.back[2].process_cap == 2.5);
    CHECK(cfg.initial_battery == std::vector<double>{10, 20, 30});
  }
  SUBCASE("unknown keys and malformed assignments are refused") {
    auto j = nlohmann::json::object();
    CHECK_THROWS_AS(apply_override(j, "controller.speed=3"), InvalidInput);
    CHECK_THROWS_AS(apply_override(j, "controller.rho"), InvalidInput);
    CHECK_THROWS_AS(config_from_json({{"controller", {{"name", "fastest"}}}}), InvalidInput);
  }
  SUBCASE("knobs are checked against the controller") {
    auto cfg = small_config(10, ControllerKind::Offline);
    cfg.controller.V = 5.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
    cfg = small_config(10);
    cfg.controller.share_scale = -1.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
    cfg = small_config(10);
    cfg.controller.price_threshold = 0.05;
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
    cfg = small_config(10);
    cfg.trace.csv_dir = "/nonexistent/trace";
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
    cfg = small_config(10);
    cfg.initial_battery = {5.0, 50.0, 50.0};
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
  }
  SUBCASE("round trip through JSON") {
    auto cfg = small_config(40, ControllerKind::Greedy);
    cfg.controller.price_threshold = 0.055;
    cfg.initial_battery = {12, 13, 14};
    const auto back = config_from_json(config_to_json(cfg));
    CHECK(config_to_json(back) == config_to_json(cfg));
  }
}

TEST_CASE("run_experiment") {
  SUBCASE("offline report matches the horizon LP") {
    const auto cfg = small_config(3, ControllerKind::Offline);
    const auto tr = make_traces(cfg);
    const auto rep = run_experiment(cfg, tr);
    const auto off = solve_offline(tr, cfg.cluster, rep.initial, 3);
    CHECK(rep.total_cost == doctest::Approx(off.objective).epsilon(1e-9));
    CHECK(rep.violation_count == 0);
  }
  SUBCASE("bounded controller stays in bounds over 500 slots") {
    const auto cfg = small_config(500);
    const auto tr = make_traces(cfg);
    const auto rep = run_experiment(cfg, tr);
    CHECK(rep.violation_count == 0);
    CHECK(verify_report(rep, tr, cfg.cluster).empty());
  }
  SUBCASE("rectified queues overflow the front end under overload") {
    auto cfg = small_config(500, ControllerKind::Traditional);
    for (auto& b : cfg.cluster.back) b.process_cap = 1.0;
    const auto tr = make_traces(cfg);
    cfg.controller.V = 4.0 * derive_params(cfg.cluster, tr.prices).V_hi;
    const auto rep = run_experiment(cfg, tr);
    int front = 0;
    for (const auto& m : rep.violation_messages) front += m.find("front-end queue") != std::string::npos;
    CHECK(front > 0);
    CHECK_FALSE(guarantees_bounds(rep.controller));
  }
  SUBCASE("accumulated series is the prefix sum and tampering is caught") {
    const auto cfg = small_config(30, ControllerKind::Greedy);
    const auto tr = make_traces(cfg);
    auto rep = run_experiment(cfg, tr);
    REQUIRE(rep.price_threshold);
    CHECK(*rep.price_threshold == median_buy_price(tr));
    CHECK(verify_report(rep, tr, cfg.cluster).empty());
    rep.records[7].accumulated += 1e-3;
    CHECK(verify_report(rep, tr, cfg.cluster).size() == 1);
    rep.decisions[3].buy[0] += 1.0;
    CHECK(verify_report(rep, tr, cfg.cluster).size() >= 2);
  }
  SUBCASE("errors name the controller") {
    auto cfg = small_config(5);
    cfg.controller.V = 1e6;
    try {
      run_experiment(cfg);
      FAIL("expected an error");
    } catch (const ExperimentError& e) {
      CHECK(std::string(e.what()).find("proposed") != std::string::npos);
    }
  }
  SUBCASE("ADMM run records iterations and logs them") {
    auto cfg = small_config(20, ControllerKind::Admm);
    cfg.controller.max_iterations = 30;
    std::ostringstream log;
    const auto rep = run_experiment(cfg, make_traces(cfg), &log);
    int lines = 0, total = 0;
    for (const auto& r : rep.records) total += r.admm_iterations;
    std::istringstream in(log.str());
    for (std::string l; std::getline(in, l);) ++lines;
    CHECK(lines == total);
    CHECK(rep.violation_count == 0);
  }
}

TEST_CASE("report files are reproducible") {
  const auto cfg = small_config(25, ControllerKind::Admm);
  const auto a = scratch("repro_a"), b = scratch("repro_b");
  write_report(run_experiment(cfg), a);
  write_report(run_experiment(cfg), b);
  CHECK(slurp(a / "slots.csv") == slurp(b / "slots.csv"));
  CHECK(slurp(a / "summary.json") == slurp(b / "summary.json"));
  CHECK(fs::exists(a / "timing.csv"));
  const auto summary = nlohmann::json::parse(slurp(a / "summary.json"));
  CHECK(summary.at("slots") == 25);
  CHECK(summary.contains("admm"));
  std::ifstream csv(a / "slots.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header.rfind("slot,f_grid,f_batt,f_tran,f_work,f,accumulated", 0) == 0);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("comparison table") {
  SUBCASE("all-zero trace gives zero costs and no relative column") {
    auto cfg = small_config(4);
    cfg.trace.shape.arrival_base = cfg.trace.shape.arrival_amplitude = cfg.trace.shape.arrival_noise = 0.0;
    cfg.trace.shape.pv_peak = cfg.trace.shape.pv_noise = 0.0;
    const auto cmp = compare_algorithms(cfg, {ControllerKind::Offline, ControllerKind::Proposed});
    for (const auto& r : cmp.rows) {
      CHECK(r.total == 0.0);
      CHECK_FALSE(r.relative);
    }
    CHECK(format_comparison(cmp).find("—") != std::string::npos);
  }
  SUBCASE("offline is the cheapest row") {
    const auto cfg = small_config(60);
    const auto cmp = compare_algorithms(cfg, {ControllerKind::Offline, ControllerKind::Greedy,
                                              ControllerKind::NoSharing, ControllerKind::Proposed});
    REQUIRE(cmp.rows.size() == 4);
    for (const auto& r : cmp.rows) CHECK(cmp.rows[0].total <= r.total + 1e-9);
    if (cmp.rows[0].relative) CHECK(*cmp.rows[0].relative == doctest::Approx(100.0));
    const auto path = scratch("cmp.csv");
    write_comparison_csv(cmp, path);
    CHECK(slurp(path).rfind("controller,f_batt,f_grid,f_tran,f_work,f,relative_percent", 0) == 0);
    fs::remove(path);
  }
  SUBCASE("sharing never raises the per-slot objective") {
    const auto cfg = small_config(80);
    const auto tr = make_traces(cfg);
    const auto run = run_experiment(cfg, tr);
    const auto audit = share_scale_audit(cfg, tr, run, {1.0, 0.0});
    CHECK(audit.scales == std::vector<double>{0.0, 1.0});
    CHECK(audit.monotone());
  }
}

TEST_CASE("sweeps") {
  auto cfg = small_config(60);
  SUBCASE("empty value list") {
    const auto rep = sweep(cfg, SweepParameter::V, {});
    CHECK(rep.entries.empty());
  }
  SUBCASE("inadmissible V values are skipped with a reason") {
    const auto p = derive_params(cfg.cluster, make_traces(cfg).prices);
    const auto rep = sweep(cfg, SweepParameter::V, {p.V_hi * 2.0, p.V_hi});
    REQUIRE(rep.entries.size() == 2);
    REQUIRE(rep.entries[0].skipped);
    CHECK(rep.entries[0].skipped->find("admissible") != std::string::npos);
    CHECK_FALSE(rep.entries[0].run);
    CHECK(rep.entries[1].run);
  }
  SUBCASE("V grid maps onto the admissible interval") {
    LyapunovParams p;
    p.V_lo = 10.0;
    p.V_hi = 110.0;
    const auto g = admissible_v_grid(p, {0.02, 0.05, 0.1, 0.18});
    CHECK(g.back() == doctest::Approx(110.0));
    CHECK(g.front() == doctest::Approx(10.0 + 100.0 * 0.02 / 0.18));
    CHECK_THROWS_AS(admissible_v_grid(p, {0.0, 0.1}), InvalidInput);
  }
  SUBCASE("share scale sweep writes one run per value") {
    const auto rep = sweep(cfg, SweepParameter::ShareScale, {0.0, 1.0, -1.0});
    CHECK(rep.entries[2].skipped);
    CHECK(rep.entries[0].run->total_cost >= rep.entries[1].run->total_cost - 1e-9);
    const auto dir = scratch("sweep");
    write_sweep(rep, dir);
    CHECK(fs::exists(dir / "sweep.csv"));
    CHECK(fs::exists(dir / "run_0" / "slots.csv"));
    fs::remove_all(dir);
  }
  CHECK_THROWS_AS(sweep_parameter_from_string("rho"), InvalidInput);
}

TEST_CASE("iteration histogram") {
  SUBCASE("exceed fraction") {
    HistogramOptions o;
    o.thresholds = {50};
    const auto h = iteration_histogram({3, 3, 60}, o);
    REQUIRE(h.exceed.size() == 1);
    CHECK(h.exceed[0].second == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("recommendation stays below the largest count") {
    const auto h = iteration_histogram({5, 12, 49, 30, 7});
    CHECK(h.recommended <= 50);
    HistogramOptions strict;
    strict.target = 0.0;
    CHECK(iteration_histogram({5, 12, 49, 30, 7}, strict).recommended == 49);
    HistogramOptions loose;
    loose.target = 0.4;
    CHECK(iteration_histogram({5, 12, 49, 30, 7}, loose).recommended == 12);
  }
  SUBCASE("buckets") {
    HistogramOptions o;
    o.bucket_width = 10;
    const auto h = iteration_histogram({1, 9, 10, 25}, o);
    CHECK(h.buckets == std::vector<std::pair<int, int>>{{0, 2}, {10, 1}, {20, 1}});
  }
  SUBCASE("counts from iteration logs") {
    const auto path = scratch("iters.jsonl");
    {
      std::ofstream out(path);
      for (int n = 1; n <= 3; ++n) write_iteration_jsonl(out, 0, {n, 0, 0, 0, 0});
      for (int n = 1; n <= 7; ++n) write_iteration_jsonl(out, 1, {n, 0, 0, 0, 0});
    }
    CHECK(load_iteration_counts({path}) == std::vector<int>{3, 7});
    fs::remove(path);
    CHECK_THROWS_AS(load_iteration_counts({path}), InvalidInput);
  }
}

TEST_CASE("scalability sweep") {
  auto cfg = small_config(10, ControllerKind::Admm);
  cfg.controller.tol = 1e-3;
  ScaleOptions o;
  o.truncation = 20;
  o.repeats = 1;
  const auto pts = scalability_sweep(cfg, {2}, {3}, o);
  REQUIRE(pts.size() == 1);
  CHECK(pts[0].truncated_iterations <= pts[0].untruncated_iterations);
  CHECK(pts[0].truncated_per_agent > 0.0);
  CHECK(std::isfinite(pts[0].untruncated_per_agent));

  cfg.trace.slots = 2;
  const auto big = scalability_sweep(cfg, {20}, {2}, o);
  CHECK(std::isfinite(big[0].truncated_per_agent));
  CHECK_THROWS_AS(scalability_sweep(cfg, {21}, {2}, o), InvalidInput);
}
