// Command-line front end: run / compare / sweep / histogram / scale.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "clustercoord/experiment.hpp"

namespace fs = std::filesystem;
using namespace clustercoord;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string controller;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON configuration file")->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "output directory");
  app->add_option("--seed", c.seed, "random seed of the synthetic trace");
  app->add_option("--controller", c.controller, "offline, greedy, no_sharing, proposed, traditional or admm");
  app->add_option("--override", c.overrides, "dotted.key=value applied on top of the configuration");
}

ExperimentConfig resolve(const Common& c) {
  auto overrides = c.overrides;
  if (c.seed) overrides.push_back(fmt::format("seed={}", *c.seed));
  if (!c.controller.empty()) overrides.push_back(fmt::format("controller.name=\"{}\"", c.controller));
  auto cfg = load_config(c.config, overrides);
  if (!c.out.empty()) cfg.out_dir = c.out;
  return cfg;
}

void save_config(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  std::ofstream(cfg.out_dir / "config.json") << config_to_json(cfg).dump(2) << '\n';
}

// Integrity and bound checks shared by run and compare. Returns the exit code.
int audit_run(const RunReport& r, const TraceSet& traces, const ExperimentConfig& cfg) {
  int code = 0;
  ExperimentConfig c = cfg;
  c.controller.kind = r.controller;
  if (r.controller == ControllerKind::NoSharing) c.controller.share_scale = 0.0;
  for (const auto& p : verify_report(r, traces, effective_cluster(c))) {
    std::cerr << r.controller_name << ": report integrity: " << p << '\n';
    code = 3;
  }
  if (r.violation_count > 0) {
    std::cerr << fmt::format("{}: {} bound violations\n", r.controller_name, r.violation_count);
    for (const auto& m : r.violation_messages) std::cerr << "  " << m << '\n';
    if (guarantees_bounds(r.controller) && code == 0) code = 2;
  }
  return code;
}

int cmd_run(const Common& common) {
  const auto cfg = resolve(common);
  const auto traces = make_traces(cfg);
  save_config(cfg);
  std::ofstream log;
  if (cfg.controller.kind == ControllerKind::Admm && cfg.controller.record_iterations)
    log.open(cfg.out_dir / "iterations.jsonl", std::ios::binary);
  const auto rep = run_experiment(cfg, traces, log.is_open() ? &log : nullptr);
  write_report(rep, cfg.out_dir);
  std::cout << fmt::format("{}: {} slots, f = {:.6f} (grid {:.6f}, battery {:.6f}, transfer {:.6f}, work {:.6f})\n",
                           rep.controller_name, rep.slots, rep.total_cost, rep.total.grid, rep.total.battery,
                           rep.total.transfer, rep.total.work);
  if (rep.controller == ControllerKind::Admm)
    std::cout << fmt::format("admm: {} of {} slots truncated\n", rep.admm_truncated_slots, rep.slots);
  if (rep.gap)
    std::cout << fmt::format("gap audit: measured {:.6g} per slot, bound {:.6g} ({})\n", rep.gap->measured,
                             rep.gap->bound, rep.gap->holds() ? "holds" : "exceeded");
  std::cout << "wrote " << cfg.out_dir.string() << '\n';
  return audit_run(rep, traces, cfg);
}

int cmd_compare(const Common& common, const std::vector<std::string>& names) {
  const auto cfg = resolve(common);
  std::vector<ControllerKind> kinds;
  for (const auto& n : names) kinds.push_back(controller_from_string(n));
  const auto traces = make_traces(cfg);
  save_config(cfg);
  const auto cmp = compare_algorithms(cfg, kinds);
  std::cout << format_comparison(cmp);
  write_comparison_csv(cmp, cfg.out_dir / "comparison.csv");
  int code = 0;
  for (const auto& r : cmp.runs) {
    write_report(r, cfg.out_dir / r.controller_name);
    code = std::max(code, audit_run(r, traces, cfg));
  }
  return code;
}

int cmd_sweep(const Common& common, const std::string& param, std::vector<double> values,
              const std::vector<double>& fractions, bool audit) {
  const auto cfg = resolve(common);
  const auto p = sweep_parameter_from_string(param);
  if (!fractions.empty()) {
    if (p != SweepParameter::V) throw InvalidInput("--fractions applies to V sweeps only");
    const auto traces = make_traces(cfg);
    for (double v : admissible_v_grid(derive_params(effective_cluster(cfg), traces.prices), fractions))
      values.push_back(v);
  }
  save_config(cfg);
  const auto rep = sweep(cfg, p, values);
  write_sweep(rep, cfg.out_dir);
  std::cout << fmt::format("{:>14} {:>14} {:>14} {:>14}\n", param, "f", "f_grid", "f_batt");
  for (const auto& e : rep.entries) {
    if (e.skipped)
      std::cout << fmt::format("{:>14.6g} skipped: {}\n", e.value, *e.skipped);
    else
      std::cout << fmt::format("{:>14.6g} {:>14.6f} {:>14.6f} {:>14.6f}\n", e.value, e.run->total_cost,
                               e.run->total.grid, e.run->total.battery);
  }
  if (audit && p == SweepParameter::ShareScale && !values.empty()) {
    ExperimentConfig base = cfg;
    base.controller.kind = ControllerKind::Proposed;
    base.controller.share_scale = 1.0;
    const auto traces = make_traces(base);
    const auto run = run_experiment(base, traces);
    const auto a = share_scale_audit(base, traces, run, values);
    std::ofstream out(cfg.out_dir / "share_audit.csv", std::ios::binary);
    out << "slot";
    for (double s : a.scales) out << ",scale_" << s;
    out << '\n';
    for (std::size_t t = 0; t < a.objective.size(); ++t) {
      out << t;
      for (double v : a.objective[t]) out << ',' << fmt::format("{}", v);
      out << '\n';
    }
    std::cout << fmt::format("per-slot objective {} in the share scale (worst rise {:.3g} at slot {})\n",
                             a.monotone() ? "non-increasing" : "NOT monotone", a.worst_increase, a.worst_slot);
    if (!a.monotone()) return 4;
  }
  return 0;
}

int cmd_histogram(const std::vector<std::string>& files, const std::string& out, HistogramOptions opts) {
  std::vector<fs::path> paths(files.begin(), files.end());
  const auto h = iteration_histogram(load_iteration_counts(paths), opts);
  nlohmann::ordered_json j;
  j["slots"] = h.counts.size();
  nlohmann::ordered_json b = nlohmann::ordered_json::array();
  for (const auto& [lo, c] : h.buckets) b.push_back({{"from", lo}, {"to", lo + opts.bucket_width}, {"slots", c}});
  j["buckets"] = b;
  nlohmann::ordered_json e = nlohmann::ordered_json::array();
  for (const auto& [n, f] : h.exceed) e.push_back({{"threshold", n}, {"fraction", f}});
  j["exceed"] = e;
  j["target"] = opts.target;
  j["recommended"] = h.recommended;
  for (const auto& [n, f] : h.exceed) std::cout << fmt::format("N = {:>5}: {:6.2f}% of slots exceed\n", n, 100.0 * f);
  std::cout << fmt::format("smallest N with at most {:.0f}% of slots above it: {}\n", 100.0 * opts.target,
                           h.recommended);
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream(fs::path(out) / "histogram.json") << j.dump(2) << '\n';
  }
  return 0;
}

int cmd_scale(const Common& common, const std::vector<int>& backends, const std::vector<int>& frontends,
              const ScaleOptions& opts) {
  const auto cfg = resolve(common);
  save_config(cfg);
  const auto pts = scalability_sweep(cfg, backends, frontends, opts);
  write_scale_csv(pts, cfg.out_dir / "scale.csv");
  std::cout << fmt::format("{:>3} {:>3} {:>14} {:>14} {:>8} {:>10}\n", "I", "J", "full s/agent", "cut s/agent",
                           "ratio", "truncated");
  for (const auto& p : pts)
    std::cout << fmt::format("{:>3} {:>3} {:>14.3e} {:>14.3e} {:>8.3f} {:>10}\n", p.backends, p.frontends,
                             p.untruncated_per_agent, p.truncated_per_agent, p.ratio(), p.truncated_slots);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cluster energy and workload coordination experiments"};
  app.require_subcommand(1);

  Common run_c, cmp_c, sweep_c, scale_c;
  auto* run = app.add_subcommand("run", "simulate one controller");
  add_common(run, run_c);

  auto* cmp = app.add_subcommand("compare", "run several controllers on one trace");
  add_common(cmp, cmp_c);
  std::vector<std::string> names{"offline", "greedy", "no_sharing", "proposed", "admm"};
  cmp->add_option("--controllers", names, "controllers to compare")->delimiter(',');

  auto* sw = app.add_subcommand("sweep", "vary V or the sharing-cap scale");
  add_common(sw, sweep_c);
  std::string param = "V";
  std::vector<double> values, fractions;
  bool audit = false;
  sw->add_option("--param", param, "V or U_bar_scale")->required();
  sw->add_option("--values", values, "parameter values")->delimiter(',');
  sw->add_option("--fractions", fractions, "V grid as fractions mapped onto the admissible interval")->delimiter(',');
  sw->add_flag("--audit", audit, "for U_bar_scale, also check the per-slot objective slot by slot");

  auto* hist = app.add_subcommand("histogram", "iteration counts from iterations.jsonl files");
  std::vector<std::string> files;
  std::string hist_out;
  HistogramOptions hopts;
  hist->add_option("files", files, "iteration logs")->required()->check(CLI::ExistingFile);
  hist->add_option("--out", hist_out, "directory for histogram.json");
  hist->add_option("--target", hopts.target, "acceptable fraction of slots above N");
  hist->add_option("--bucket", hopts.bucket_width, "bucket width");
  hist->add_option("--thresholds", hopts.thresholds, "candidate truncation thresholds")->delimiter(',');

  auto* sc = app.add_subcommand("scale", "time truncated against untruncated ADMM");
  add_common(sc, scale_c);
  std::vector<int> backends{2, 3, 5}, frontends{2, 3};
  ScaleOptions sopts;
  sc->add_option("--backends", backends, "values of I")->delimiter(',');
  sc->add_option("--frontends", frontends, "values of J")->delimiter(',');
  sc->add_option("--truncation", sopts.truncation, "iteration cap N of the truncated variant");
  sc->add_option("--repeats", sopts.repeats, "timing repeats (minimum is kept)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(run_c);
    if (*cmp) return cmd_compare(cmp_c, names);
    if (*sw) return cmd_sweep(sweep_c, param, values, fractions, audit);
    if (*hist) return cmd_histogram(files, hist_out, hopts);
    if (*sc) return cmd_scale(scale_c, backends, frontends, sopts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
