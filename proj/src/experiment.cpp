#include "clustercoord/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

namespace clustercoord {

namespace fs = std::filesystem;
using nlohmann::json;
using ordered = nlohmann::ordered_json;

namespace {

constexpr std::size_t kMaxViolationMessages = 20;

struct KindName {
  ControllerKind kind;
  const char* name;
};
constexpr KindName kKindNames[] = {
    {ControllerKind::Offline, "offline"},         {ControllerKind::Greedy, "greedy"},
    {ControllerKind::NoSharing, "no_sharing"},    {ControllerKind::Proposed, "proposed"},
    {ControllerKind::Traditional, "traditional"}, {ControllerKind::Admm, "admm"},
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ExperimentError(fmt::format("cannot write {}", path.string()));
  return out;
}

// Objects merge key by key; anything else replaces.
void merge_into(json& base, const json& patch) {
  if (!base.is_object() || !patch.is_object()) {
    base = patch;
    return;
  }
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (base.contains(it.key()))
      merge_into(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  return j.at(key).get<T>();
}

template <class T>
std::optional<T> get_optional(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

FrontEndParams front_from_json(const json& j) {
  return {j.at("queue_cap").get<double>(), j.at("reject_cost").get<double>(), j.at("arrival_max").get<double>()};
}

BackEndParams back_from_json(const json& j) {
  BackEndParams b;
  b.queue_cap = j.at("queue_cap").get<double>();
  b.process_cap = j.at("process_cap").get<double>();
  b.charge_max = j.at("charge_max").get<double>();
  b.discharge_max = j.at("discharge_max").get<double>();
  b.battery_min = j.at("battery_min").get<double>();
  b.battery_max = j.at("battery_max").get<double>();
  b.wear_cost = j.at("wear_cost").get<double>();
  return b;
}

json front_to_json(const FrontEndParams& f) {
  return {{"queue_cap", f.queue_cap}, {"reject_cost", f.reject_cost}, {"arrival_max", f.arrival_max}};
}

json back_to_json(const BackEndParams& b) {
  return {{"queue_cap", b.queue_cap},         {"process_cap", b.process_cap}, {"charge_max", b.charge_max},
          {"discharge_max", b.discharge_max}, {"battery_min", b.battery_min}, {"battery_max", b.battery_max},
          {"wear_cost", b.wear_cost}};
}

template <class T, class F>
std::vector<T> entities_from_json(const json& j, int count, const char* what, F parse) {
  std::vector<T> out;
  if (j.is_array()) {
    if (static_cast<int>(j.size()) != count)
      throw DimensionMismatch(fmt::format("{} lists {} entries, expected {}", what, j.size(), count));
    for (const auto& e : j) out.push_back(parse(e));
  } else {
    out.assign(count, parse(j));
  }
  return out;
}

Cluster cluster_from_json(const json& j) {
  Cluster c;
  auto& topo = c.topology;
  topo.backends = j.at("backends").get<int>();
  topo.frontends = j.at("frontends").get<int>();
  if (topo.backends <= 0 || topo.frontends <= 0)
    throw InvalidInput(fmt::format("cluster needs positive sizes (I={}, J={})", topo.backends, topo.frontends));
  c.eta_charge = j.at("eta_charge").get<double>();
  c.eta_discharge = j.at("eta_discharge").get<double>();
  c.front = entities_from_json<FrontEndParams>(j.at("front"), topo.frontends, "front", front_from_json);
  c.back = entities_from_json<BackEndParams>(j.at("back"), topo.backends, "back", back_from_json);

  const auto& links = j.at("links");
  if (links.is_array()) {
    for (const auto& l : links)
      topo.links.push_back({l.at("front").get<int>(), l.at("back").get<int>(), l.at("capacity").get<double>(),
                            l.at("bandwidth_cost").get<double>()});
  } else {
    // Fully connected; the cost grows with the index distance from the origin.
    const double cap = j.at("link_capacity").get<double>();
    const double cost = j.at("bandwidth_cost").get<double>();
    const double step = j.at("bandwidth_cost_step").get<double>();
    for (int f = 0; f < topo.frontends; ++f)
      for (int b = 0; b < topo.backends; ++b) topo.links.push_back({f, b, cap, cost + step * (f + b)});
  }

  const auto n = static_cast<std::size_t>(topo.backends);
  topo.sharing_cap = SquareMatrix(n);
  const auto& share = j.at("sharing_cap");
  if (share.is_number()) {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < n; ++k)
        if (r != k) topo.sharing_cap(r, k) = share.get<double>();
  } else {
    if (share.size() != n) throw DimensionMismatch(fmt::format("sharing_cap has {} rows, expected {}", share.size(), n));
    for (std::size_t r = 0; r < n; ++r) {
      if (share[r].size() != n)
        throw DimensionMismatch(fmt::format("sharing_cap row {} has {} entries, expected {}", r, share[r].size(), n));
      for (std::size_t k = 0; k < n; ++k) topo.sharing_cap(r, k) = share[r][k].get<double>();
    }
  }
  return c;
}

json cluster_to_json(const Cluster& c) {
  json j;
  j["backends"] = c.backends();
  j["frontends"] = c.frontends();
  j["eta_charge"] = c.eta_charge;
  j["eta_discharge"] = c.eta_discharge;
  j["front"] = json::array();
  for (const auto& f : c.front) j["front"].push_back(front_to_json(f));
  j["back"] = json::array();
  for (const auto& b : c.back) j["back"].push_back(back_to_json(b));
  j["links"] = json::array();
  for (const auto& l : c.topology.links)
    j["links"].push_back({{"front", l.front}, {"back", l.back}, {"capacity", l.capacity}, {"bandwidth_cost", l.bandwidth_cost}});
  json rows = json::array();
  for (std::size_t r = 0; r < c.topology.sharing_cap.size(); ++r) {
    json row = json::array();
    for (std::size_t k = 0; k < c.topology.sharing_cap.size(); ++k) row.push_back(c.topology.sharing_cap(r, k));
    rows.push_back(row);
  }
  j["sharing_cap"] = rows;
  return j;
}

json shape_to_json(const SynthShape& s) {
  return {{"slots_per_day", s.slots_per_day},   {"arrival_base", s.arrival_base},
          {"arrival_amplitude", s.arrival_amplitude}, {"arrival_noise", s.arrival_noise},
          {"pv_peak", s.pv_peak},               {"pv_noise", s.pv_noise},
          {"price_base", s.price_base},         {"price_amplitude", s.price_amplitude},
          {"price_noise", s.price_noise},       {"sell_fraction", s.sell_fraction},
          {"phase_spread", s.phase_spread}};
}

SynthShape shape_from_json(const json& j) {
  SynthShape s;
  s.slots_per_day = j.at("slots_per_day").get<int>();
  s.arrival_base = j.at("arrival_base").get<double>();
  s.arrival_amplitude = j.at("arrival_amplitude").get<double>();
  s.arrival_noise = j.at("arrival_noise").get<double>();
  s.pv_peak = j.at("pv_peak").get<double>();
  s.pv_noise = j.at("pv_noise").get<double>();
  s.price_base = j.at("price_base").get<double>();
  s.price_amplitude = j.at("price_amplitude").get<double>();
  s.price_noise = j.at("price_noise").get<double>();
  s.sell_fraction = j.at("sell_fraction").get<double>();
  s.phase_spread = j.at("phase_spread").get<double>();
  return s;
}

std::string num(double v) { return fmt::format("{}", v); }

void scale_sharing(Cluster& c, double scale) {
  for (auto& v : c.topology.sharing_cap.raw()) v *= scale;
}

}  // namespace

const char* to_string(ControllerKind kind) {
  for (const auto& k : kKindNames)
    if (k.kind == kind) return k.name;
  return "unknown";
}

ControllerKind controller_from_string(const std::string& name) {
  for (const auto& k : kKindNames)
    if (name == k.name) return k.kind;
  throw InvalidInput(fmt::format("unknown controller '{}' (offline, greedy, no_sharing, proposed, traditional, admm)", name));
}

bool guarantees_bounds(ControllerKind kind) { return kind != ControllerKind::Traditional; }

void ExperimentConfig::validate() const {
  cluster.validate();
  const auto& c = controller;
  if (!(c.share_scale >= 0.0)) throw InvalidInput(fmt::format("share_scale must be >= 0, got {}", c.share_scale));
  if (trace.slots <= 0) throw InvalidInput(fmt::format("trace.slots must be positive, got {}", trace.slots));
  if (trace.csv_dir && !fs::is_directory(*trace.csv_dir))
    throw InvalidInput(fmt::format("trace directory {} does not exist", trace.csv_dir->string()));
  if (c.V && !(*c.V > 0.0)) throw InvalidInput(fmt::format("V must be positive, got {}", *c.V));
  const bool online = c.kind == ControllerKind::Proposed || c.kind == ControllerKind::NoSharing ||
                      c.kind == ControllerKind::Traditional || c.kind == ControllerKind::Admm;
  if (c.V && !online) throw InvalidInput(fmt::format("V does not apply to the {} controller", to_string(c.kind)));
  if (c.price_threshold && c.kind != ControllerKind::Greedy)
    throw InvalidInput("price_threshold applies to the greedy controller only");
  if (c.kind == ControllerKind::NoSharing && c.share_scale != 1.0 && c.share_scale != 0.0)
    throw InvalidInput("no_sharing fixes the share scale at 0");
  if (c.kind == ControllerKind::Admm) {
    if (!(c.rho > 0.0)) throw InvalidInput(fmt::format("rho must be positive, got {}", c.rho));
    if (c.max_iterations < 1) throw InvalidInput("max_iterations must be at least 1");
    if (!(c.tol > 0.0)) throw InvalidInput(fmt::format("tol must be positive, got {}", c.tol));
  }
  if (!initial_battery.empty()) {
    if (static_cast<int>(initial_battery.size()) != cluster.backends())
      throw DimensionMismatch(fmt::format("initial_battery lists {} levels for {} back ends", initial_battery.size(),
                                          cluster.backends()));
    for (int i = 0; i < cluster.backends(); ++i) {
      const auto& b = cluster.back[i];
      if (!(initial_battery[i] >= b.battery_min && initial_battery[i] <= b.battery_max))
        throw InvalidInput(fmt::format("initial battery {} of back end {} outside [{}, {}]", initial_battery[i], i,
                                       b.battery_min, b.battery_max));
    }
  }
  if (c.kind == ControllerKind::Offline && trace.slots > kMaxHorizon)
    throw InvalidInput(fmt::format("offline horizon {} exceeds {}", trace.slots, kMaxHorizon));
}

json default_config_json() {
  json j;
  j["seed"] = 1;
  j["out"] = "out";
  j["audit_gap"] = false;
  j["initial_battery"] = nullptr;
  j["cluster"] = {
      {"backends", 3},
      {"frontends", 2},
      {"eta_charge", 0.9},
      {"eta_discharge", 0.95},
      {"front", {{"queue_cap", 200.0}, {"reject_cost", 1.0}, {"arrival_max", 4.0}}},
      {"back",
       {{"queue_cap", 200.0},
        {"process_cap", 5.0},
        {"charge_max", 4.0},
        {"discharge_max", 6.0},
        {"battery_min", 10.0},
        {"battery_max", 85.0},
        {"wear_cost", 0.06}}},
      {"links", nullptr},
      {"link_capacity", 3.0},
      {"bandwidth_cost", 0.1},
      {"bandwidth_cost_step", 0.05},
      {"sharing_cap", 2.0},
  };
  j["trace"] = {{"csv", nullptr}, {"slots", 500}, {"synthetic", shape_to_json(SynthShape{})}};
  j["controller"] = {{"name", "proposed"}, {"V", nullptr},       {"price_threshold", nullptr},
                     {"share_scale", 1.0}, {"rho", 1.0},          {"max_iterations", 20000},
                     {"tol", 1e-4},        {"warm_start", false}, {"record_iterations", false}};
  return j;
}

ExperimentConfig config_from_json(const json& user, const fs::path& base_dir) {
  json j = default_config_json();
  merge_into(j, user);
  ExperimentConfig cfg;
  try {
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.out_dir = j.at("out").get<std::string>();
    cfg.audit_gap = j.at("audit_gap").get<bool>();
    cfg.cluster = cluster_from_json(j.at("cluster"));
    const auto& ib = j.at("initial_battery");
    if (ib.is_number())
      cfg.initial_battery.assign(cfg.cluster.backends(), ib.get<double>());
    else if (ib.is_array())
      cfg.initial_battery = ib.get<std::vector<double>>();
    const auto& t = j.at("trace");
    if (auto csv = get_optional<std::string>(t, "csv")) {
      fs::path p(*csv);
      cfg.trace.csv_dir = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    }
    cfg.trace.slots = t.at("slots").get<int>();
    cfg.trace.shape = shape_from_json(t.at("synthetic"));
    const auto& c = j.at("controller");
    cfg.controller.kind = controller_from_string(c.at("name").get<std::string>());
    cfg.controller.V = get_optional<double>(c, "V");
    cfg.controller.price_threshold = get_optional<double>(c, "price_threshold");
    cfg.controller.share_scale = get_or(c, "share_scale", 1.0);
    cfg.controller.rho = get_or(c, "rho", 1.0);
    cfg.controller.max_iterations = get_or(c, "max_iterations", 20000);
    cfg.controller.tol = get_or(c, "tol", 1e-4);
    cfg.controller.warm_start = get_or(c, "warm_start", false);
    cfg.controller.record_iterations = get_or(c, "record_iterations", false);
  } catch (const json::exception& e) {
    throw InvalidInput(fmt::format("configuration: {}", e.what()));
  }
  if (cfg.controller.kind == ControllerKind::NoSharing) cfg.controller.share_scale = 0.0;
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["out"] = cfg.out_dir.string();
  j["audit_gap"] = cfg.audit_gap;
  j["initial_battery"] = cfg.initial_battery.empty() ? json(nullptr) : json(cfg.initial_battery);
  j["cluster"] = cluster_to_json(cfg.cluster);
  j["trace"] = {{"csv", cfg.trace.csv_dir ? json(cfg.trace.csv_dir->string()) : json(nullptr)},
                {"slots", cfg.trace.slots},
                {"synthetic", shape_to_json(cfg.trace.shape)}};
  const auto& c = cfg.controller;
  j["controller"] = {{"name", to_string(c.kind)},
                     {"V", c.V ? json(*c.V) : json(nullptr)},
                     {"price_threshold", c.price_threshold ? json(*c.price_threshold) : json(nullptr)},
                     {"share_scale", c.share_scale},
                     {"rho", c.rho},
                     {"max_iterations", c.max_iterations},
                     {"tol", c.tol},
                     {"warm_start", c.warm_start},
                     {"record_iterations", c.record_iterations}};
  return j;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw InvalidInput(fmt::format("override '{}' is not of the form key=value", assignment));
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);

  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);

  // Keys are checked against the schema of the defaults.
  const json schema = default_config_json();
  const json* s = &schema;
  json* target = &j;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (!s->is_object() || !s->contains(parts[k])) throw InvalidInput(fmt::format("unknown configuration key '{}'", key));
    s = &s->at(parts[k]);
    if (k + 1 < parts.size()) {
      if (!target->contains(parts[k]) || !(*target)[parts[k]].is_object()) (*target)[parts[k]] = json::object();
      target = &(*target)[parts[k]];
    }
  }
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  (*target)[parts.back()] = value;
}

ExperimentConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  json j = json::object();
  fs::path base;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw InvalidInput(fmt::format("cannot open configuration {}", path.string()));
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw InvalidInput(fmt::format("{}: {}", path.string(), e.what()));
    }
    base = path.parent_path();
  }
  for (const auto& o : overrides) apply_override(j, o);
  return config_from_json(j, base);
}

TraceSet make_traces(const ExperimentConfig& cfg) {
  const auto& c = cfg.cluster;
  TraceSet tr;
  if (cfg.trace.csv_dir) {
    tr = load_trace_csv(*cfg.trace.csv_dir);
    if (tr.slots() < cfg.trace.slots)
      throw TraceError(fmt::format("trace has {} slots, configuration asks for {}", tr.slots(), cfg.trace.slots));
    tr = tr.prefix(cfg.trace.slots);
  } else {
    tr = synth_generate(cfg.seed, cfg.trace.slots, c.frontends(), c.backends(), cfg.trace.shape);
  }
  if (tr.frontends() != c.frontends() || tr.backends() != c.backends())
    throw DimensionMismatch(fmt::format("trace has J={}, I={}; cluster has J={}, I={}", tr.frontends(), tr.backends(),
                                        c.frontends(), c.backends()));
  for (int j = 0; j < c.frontends(); ++j)
    if (tr.arrival_max[j] > c.front[j].arrival_max)
      throw TraceError(fmt::format("front end {}: trace arrival bound {} exceeds the configured {}", j, tr.arrival_max[j],
                                   c.front[j].arrival_max));
  return tr;
}

Cluster effective_cluster(const ExperimentConfig& cfg) {
  Cluster c = cfg.cluster;
  scale_sharing(c, cfg.controller.kind == ControllerKind::NoSharing ? 0.0 : cfg.controller.share_scale);
  return c;
}

RunReport run_experiment(const ExperimentConfig& cfg, const TraceSet& traces, std::ostream* iteration_log) {
  cfg.validate();
  const auto& cc = cfg.controller;
  const std::string name = to_string(cc.kind);
  const int T = cfg.trace.slots;
  if (traces.slots() < T) throw TraceError(fmt::format("trace has {} slots, need {}", traces.slots(), T));
  const Cluster cluster = effective_cluster(cfg);

  RunReport rep;
  rep.controller = cc.kind;
  rep.controller_name = name;
  rep.slots = T;
  int t = -1;
  try {
    DeriveOptions opts;
    opts.V = cc.V;
    opts.mode = cc.kind == ControllerKind::Traditional ? QueueMode::Traditional : QueueMode::Bounded;
    rep.params = derive_params(cluster, traces.prices, opts);
    rep.initial = initial_online_state(cluster, rep.params, cfg.initial_battery);

    std::optional<OfflineResult> offline;
    if (cc.kind == ControllerKind::Offline || cfg.audit_gap)
      offline = solve_offline(traces, cluster, rep.initial, T);
    if (cc.kind == ControllerKind::Greedy) rep.price_threshold = cc.price_threshold.value_or(median_buy_price(traces));

    AdmmOptions admm;
    admm.rho = cc.rho;
    admm.max_iterations = cc.max_iterations;
    admm.tol = cc.tol;
    std::optional<ConsensusState> warm;

    SystemState state = rep.initial;
    double acc = 0.0;
    for (t = 0; t < T; ++t) {
      const auto in = traces.slot(t);
      const auto start = std::chrono::steady_clock::now();
      Decision d;
      SlotRecord rec;
      rec.slot = t;
      switch (cc.kind) {
        case ControllerKind::Offline:
          d = offline->trajectory.decisions[t];
          break;
        case ControllerKind::Greedy:
          d = greedy_step(state, in, cluster, *rep.price_threshold).decision;
          break;
        case ControllerKind::Proposed:
        case ControllerKind::NoSharing:
        case ControllerKind::Traditional:
          d = solve_p2(state, in, cluster, rep.params).decision;
          break;
        case ControllerKind::Admm: {
          if (iteration_log)
            admm.on_iteration = [&](const AdmmIteration& it) { write_iteration_jsonl(*iteration_log, t, it); };
          auto r = run_admm(state, in, cluster, rep.params, admm, cc.warm_start && warm ? &*warm : nullptr);
          rec.admm_iterations = r.report.iterations;
          rec.truncated = r.report.truncated;
          rep.admm_truncated_slots += r.report.truncated ? 1 : 0;
          if (cc.warm_start) warm = std::move(r.consensus);
          d = std::move(r.decision);
          break;
        }
      }
      auto out = advance_state(state, d, in, cluster, rep.params, false);
      rep.slot_seconds.push_back(seconds_since(start));
      rec.cost = out.cost;
      acc += out.cost.total();
      rec.accumulated = acc;
      rec.violations = static_cast<int>(out.violations.size());
      for (const auto& v : out.violations)
        if (rep.violation_messages.size() < kMaxViolationMessages)
          rep.violation_messages.push_back(fmt::format("slot {}: {}", t, describe(v)));
      rep.violation_count += rec.violations;
      rep.total += out.cost;
      rec.state_after = out.next;
      state = std::move(out.next);
      rep.decisions.push_back(std::move(d));
      rep.records.push_back(std::move(rec));
    }
    t = -1;
    rep.total_cost = acc;
    if (cfg.audit_gap) {
      GapAudit g;
      g.offline_objective = offline->objective;
      g.measured = (acc - g.offline_objective) / T;
      g.bound = gap_bound(rep.params);
      rep.gap = g;
    }
  } catch (const ExperimentError&) {
    throw;
  } catch (const Error& e) {
    if (t >= 0) throw ExperimentError(fmt::format("{}: slot {}: {}", name, t, e.what()));
    throw ExperimentError(fmt::format("{}: {}", name, e.what()));
  }
  return rep;
}

RunReport run_experiment(const ExperimentConfig& cfg) { return run_experiment(cfg, make_traces(cfg)); }

std::vector<std::string> verify_report(const RunReport& rep, const TraceSet& traces, const Cluster& cluster) {
  std::vector<std::string> problems;
  if (rep.decisions.size() != rep.records.size())
    problems.push_back(fmt::format("{} decisions for {} slot records", rep.decisions.size(), rep.records.size()));
  double acc = 0.0;
  int violations = 0;
  const std::size_t n = std::min(rep.decisions.size(), rep.records.size());
  for (std::size_t t = 0; t < n; ++t) {
    const auto cost = slot_cost(rep.decisions[t], traces.slot(static_cast<int>(t)), cluster);
    acc += cost.total();
    const auto& rec = rep.records[t];
    if (std::abs(cost.total() - rec.cost.total()) > 1e-9 * (1.0 + std::abs(cost.total())))
      problems.push_back(fmt::format("slot {}: recorded cost {} but decision costs {}", t, rec.cost.total(), cost.total()));
    if (std::abs(acc - rec.accumulated) > 1e-9 * (1.0 + std::abs(acc)))
      problems.push_back(fmt::format("slot {}: accumulated {} but prefix sum is {}", t, rec.accumulated, acc));
    violations += rec.violations;
  }
  if (std::abs(acc - rep.total_cost) > 1e-9 * (1.0 + std::abs(acc)))
    problems.push_back(fmt::format("total {} but recomputed {}", rep.total_cost, acc));
  if (violations != rep.violation_count)
    problems.push_back(fmt::format("violation counter {} but slots sum to {}", rep.violation_count, violations));
  return problems;
}

ordered report_summary_ordered(const RunReport& rep) {
  ordered j;
  j["controller"] = rep.controller_name;
  j["slots"] = rep.slots;
  j["cost"] = {{"f_grid", rep.total.grid},
               {"f_batt", rep.total.battery},
               {"f_tran", rep.total.transfer},
               {"f_work", rep.total.work},
               {"f", rep.total_cost}};
  j["violations"] = rep.violation_count;
  j["violation_messages"] = rep.violation_messages;
  const auto& p = rep.params;
  j["params"] = {{"V", p.V},
                 {"V_lo", p.V_lo},
                 {"V_hi", p.V_hi},
                 {"mode", to_string(p.mode)},
                 {"N1", p.drift.n1},
                 {"N2", p.drift.n2},
                 {"N3", p.drift.n3},
                 {"theta", p.theta},
                 {"phi", p.phi},
                 {"delta", p.delta},
                 {"r", p.r}};
  if (rep.price_threshold) j["price_threshold"] = *rep.price_threshold;
  if (rep.controller == ControllerKind::Admm) {
    std::vector<int> counts;
    for (const auto& r : rep.records) counts.push_back(r.admm_iterations);
    const auto h = iteration_histogram(counts);
    long total = 0;
    for (int c : counts) total += c;
    ordered a;
    a["truncated_slots"] = rep.admm_truncated_slots;
    a["total_iterations"] = total;
    a["max_iterations"] = counts.empty() ? 0 : *std::max_element(counts.begin(), counts.end());
    a["recommended_truncation"] = h.recommended;
    ordered ex = ordered::array();
    for (const auto& [n, f] : h.exceed) ex.push_back({{"threshold", n}, {"fraction", f}});
    a["exceed"] = ex;
    ordered b = ordered::array();
    for (const auto& [lo, c] : h.buckets) b.push_back({{"from", lo}, {"slots", c}});
    a["histogram"] = b;
    j["admm"] = a;
  }
  if (rep.gap)
    j["gap_audit"] = {{"offline_objective", rep.gap->offline_objective},
                      {"measured", rep.gap->measured},
                      {"bound", rep.gap->bound},
                      {"holds", rep.gap->holds()}};
  return j;
}

json report_summary(const RunReport& rep) { return json::parse(report_summary_ordered(rep).dump()); }

void write_report(const RunReport& rep, const fs::path& dir) {
  fs::create_directories(dir);
  {
    auto out = open_output(dir / "slots.csv");
    const int J = rep.initial.q_front.size(), I = rep.initial.q_back.size();
    out << "slot,f_grid,f_batt,f_tran,f_work,f,accumulated,violations,admm_iterations,truncated";
    for (int j = 0; j < J; ++j) out << ",q_front_" << j;
    for (int i = 0; i < I; ++i) out << ",q_back_" << i;
    for (int i = 0; i < I; ++i) out << ",battery_" << i;
    out << '\n';
    for (const auto& r : rep.records) {
      out << r.slot << ',' << num(r.cost.grid) << ',' << num(r.cost.battery) << ',' << num(r.cost.transfer) << ','
          << num(r.cost.work) << ',' << num(r.cost.total()) << ',' << num(r.accumulated) << ',' << r.violations << ','
          << r.admm_iterations << ',' << (r.truncated ? 1 : 0);
      for (double v : r.state_after.q_front) out << ',' << num(v);
      for (double v : r.state_after.q_back) out << ',' << num(v);
      for (double v : r.state_after.battery) out << ',' << num(v);
      out << '\n';
    }
  }
  {
    auto out = open_output(dir / "summary.json");
    out << report_summary_ordered(rep).dump(2) << '\n';
  }
  {
    auto out = open_output(dir / "timing.csv");
    out << "slot,seconds\n";
    for (std::size_t t = 0; t < rep.slot_seconds.size(); ++t) out << t << ',' << num(rep.slot_seconds[t]) << '\n';
  }
}

Comparison compare_algorithms(const ExperimentConfig& config, const std::vector<ControllerKind>& controllers) {
  const auto traces = make_traces(config);
  Comparison cmp;
  for (auto kind : controllers) {
    ExperimentConfig c = config;
    c.controller.kind = kind;
    if (kind != ControllerKind::Greedy) c.controller.price_threshold.reset();
    const bool online = kind == ControllerKind::Proposed || kind == ControllerKind::NoSharing ||
                        kind == ControllerKind::Traditional || kind == ControllerKind::Admm;
    if (!online) c.controller.V.reset();
    c.controller.share_scale = kind == ControllerKind::NoSharing ? 0.0 : config.controller.share_scale;
    cmp.runs.push_back(run_experiment(c, traces));
    const auto& r = cmp.runs.back();
    cmp.rows.push_back({r.controller_name, r.total, r.total_cost, std::nullopt, r.violation_count});
  }
  const auto off = std::find_if(cmp.rows.begin(), cmp.rows.end(), [](const auto& r) { return r.controller == "offline"; });
  if (off != cmp.rows.end() && off->total > 0.0) {
    const double base = off->total;
    for (auto& r : cmp.rows) r.relative = 100.0 * r.total / base;
  }
  return cmp;
}

std::string format_comparison(const Comparison& cmp) {
  std::string s = fmt::format("{:<12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>10} {:>10}\n", "controller", "f_batt",
                              "f_grid", "f_tran", "f_work", "f", "vs_offline", "violations");
  for (const auto& r : cmp.rows) {
    const std::string rel = r.relative ? fmt::format("{:.2f}%", *r.relative) : "—";
    s += fmt::format("{:<12} {:>12.4f} {:>12.4f} {:>12.4f} {:>12.4f} {:>12.4f} {:>10} {:>10}\n", r.controller,
                     r.cost.battery, r.cost.grid, r.cost.transfer, r.cost.work, r.total, rel, r.violations);
  }
  return s;
}

void write_comparison_csv(const Comparison& cmp, const fs::path& path) {
  auto out = open_output(path);
  out << "controller,f_batt,f_grid,f_tran,f_work,f,relative_percent,violations\n";
  for (const auto& r : cmp.rows)
    out << r.controller << ',' << num(r.cost.battery) << ',' << num(r.cost.grid) << ',' << num(r.cost.transfer) << ','
        << num(r.cost.work) << ',' << num(r.total) << ',' << (r.relative ? num(*r.relative) : "—") << ','
        << r.violations << '\n';
}

SweepParameter sweep_parameter_from_string(const std::string& name) {
  if (name == "V") return SweepParameter::V;
  if (name == "U_bar_scale" || name == "share_scale") return SweepParameter::ShareScale;
  throw InvalidInput(fmt::format("unknown sweep parameter '{}' (V, U_bar_scale)", name));
}

SweepReport sweep(const ExperimentConfig& config, SweepParameter parameter, const std::vector<double>& values) {
  SweepReport rep;
  rep.parameter = parameter;
  if (values.empty()) return rep;
  const auto traces = make_traces(config);
  const auto ref = derive_params(effective_cluster(config), traces.prices);
  rep.V_lo = ref.V_lo;
  rep.V_hi = ref.V_hi;
  for (double v : values) {
    SweepEntry e;
    e.value = v;
    ExperimentConfig c = config;
    if (parameter == SweepParameter::V) {
      if (config.controller.kind == ControllerKind::Offline || config.controller.kind == ControllerKind::Greedy) {
        e.skipped = fmt::format("V does not apply to the {} controller", to_string(config.controller.kind));
      } else if (config.controller.kind != ControllerKind::Traditional && (!(v >= ref.V_lo) || !(v <= ref.V_hi))) {
        e.skipped = fmt::format("V = {} outside the admissible interval [{}, {}]", v, ref.V_lo, ref.V_hi);
      }
      c.controller.V = v;
    } else {
      if (!(v >= 0.0)) e.skipped = fmt::format("share scale {} is negative", v);
      if (config.controller.kind == ControllerKind::NoSharing) c.controller.kind = ControllerKind::Proposed;
      c.controller.share_scale = v;
    }
    if (!e.skipped) e.run = run_experiment(c, traces);
    rep.entries.push_back(std::move(e));
  }
  return rep;
}

std::vector<double> admissible_v_grid(const LyapunovParams& params, const std::vector<double>& fractions) {
  if (fractions.empty()) return {};
  const double top = *std::max_element(fractions.begin(), fractions.end());
  if (!(top > 0.0)) throw InvalidInput("V grid fractions must include a positive value");
  std::vector<double> out;
  for (double f : fractions) {
    if (!(f > 0.0)) throw InvalidInput(fmt::format("V grid fraction {} is not positive", f));
    out.push_back(params.V_lo + (f / top) * (params.V_hi - params.V_lo));
  }
  return out;
}

void write_sweep(const SweepReport& rep, const fs::path& dir) {
  fs::create_directories(dir);
  const char* pname = rep.parameter == SweepParameter::V ? "V" : "U_bar_scale";
  auto out = open_output(dir / "sweep.csv");
  out << pname << ",status,f,f_grid,f_batt,f_tran,f_work,violations\n";
  ordered summary = ordered::array();
  for (std::size_t k = 0; k < rep.entries.size(); ++k) {
    const auto& e = rep.entries[k];
    ordered s;
    s["value"] = e.value;
    if (e.skipped) {
      out << num(e.value) << ",skipped,,,,,,\n";
      s["skipped"] = *e.skipped;
    } else {
      const auto& r = *e.run;
      out << num(e.value) << ",ok," << num(r.total_cost) << ',' << num(r.total.grid) << ',' << num(r.total.battery)
          << ',' << num(r.total.transfer) << ',' << num(r.total.work) << ',' << r.violation_count << '\n';
      const auto sub = dir / fmt::format("run_{}", k);
      write_report(r, sub);
      s["run"] = sub.filename().string();
      s["f"] = r.total_cost;
    }
    summary.push_back(s);
  }
  auto js = open_output(dir / "sweep.json");
  ordered top;
  top["parameter"] = pname;
  top["V_lo"] = rep.V_lo;
  top["V_hi"] = rep.V_hi;
  top["entries"] = summary;
  js << top.dump(2) << '\n';
}

ShareAudit share_scale_audit(const ExperimentConfig& config, const TraceSet& traces, const RunReport& run,
                             const std::vector<double>& scales) {
  ShareAudit a;
  a.scales = scales;
  std::sort(a.scales.begin(), a.scales.end());
  std::vector<Cluster> clusters;
  for (double s : a.scales) {
    Cluster c = config.cluster;
    scale_sharing(c, s);
    clusters.push_back(std::move(c));
  }
  for (std::size_t t = 0; t < run.records.size(); ++t) {
    const SystemState& state = t == 0 ? run.initial : run.records[t - 1].state_after;
    const auto in = traces.slot(static_cast<int>(t));
    std::vector<double> row;
    for (const auto& c : clusters) row.push_back(solve_p2(state, in, c, run.params).objective);
    for (std::size_t k = 1; k < row.size(); ++k) {
      const double rise = (row[k] - row[k - 1]) / (1.0 + std::abs(row[k - 1]));
      if (rise > a.worst_increase) {
        a.worst_increase = rise;
        a.worst_slot = static_cast<int>(t);
      }
    }
    a.objective.push_back(std::move(row));
  }
  return a;
}

IterationHistogram iteration_histogram(const std::vector<int>& counts, const HistogramOptions& options) {
  if (options.bucket_width < 1) throw InvalidInput("bucket width must be at least 1");
  if (!(options.target >= 0.0 && options.target <= 1.0)) throw InvalidInput("target fraction must lie in [0, 1]");
  IterationHistogram h;
  h.counts = counts;
  if (counts.empty()) return h;
  std::map<int, int> buckets;
  for (int c : counts) ++buckets[(c / options.bucket_width) * options.bucket_width];
  h.buckets.assign(buckets.begin(), buckets.end());
  const double n = static_cast<double>(counts.size());
  for (int th : options.thresholds) {
    const auto over = std::count_if(counts.begin(), counts.end(), [th](int c) { return c > th; });
    h.exceed.emplace_back(th, static_cast<double>(over) / n);
  }
  // Up to floor(target * n) slots may stay above the recommendation.
  std::vector<int> sorted = counts;
  std::sort(sorted.begin(), sorted.end());
  const auto allowed = static_cast<std::size_t>(std::floor(options.target * n + 1e-12));
  h.recommended = allowed >= sorted.size() ? 0 : sorted[sorted.size() - allowed - 1];
  return h;
}

std::vector<int> load_iteration_counts(const std::vector<fs::path>& files) {
  std::vector<int> counts;
  for (const auto& path : files) {
    std::ifstream in(path);
    if (!in) throw InvalidInput(fmt::format("cannot open {}", path.string()));
    std::map<int, int> per_slot;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.contains("slot") || !j.contains("n"))
        throw InvalidInput(fmt::format("{}:{}: not an iteration record", path.string(), lineno));
      int& c = per_slot[j.at("slot").get<int>()];
      c = std::max(c, j.at("n").get<int>());
    }
    for (const auto& [slot, c] : per_slot) counts.push_back(c);
  }
  return counts;
}

namespace {

Cluster uniform_like(const Cluster& tmpl, int backends, int frontends) {
  Cluster c;
  c.topology.backends = backends;
  c.topology.frontends = frontends;
  c.front.assign(frontends, tmpl.front.front());
  c.back.assign(backends, tmpl.back.front());
  c.eta_charge = tmpl.eta_charge;
  c.eta_discharge = tmpl.eta_discharge;
  const auto& l0 = tmpl.topology.links.front();
  for (int f = 0; f < frontends; ++f)
    for (int b = 0; b < backends; ++b) c.topology.links.push_back({f, b, l0.capacity, l0.bandwidth_cost});
  double share = 0.0;
  if (tmpl.backends() > 1) share = tmpl.topology.sharing_cap(0, 1);
  c.topology.sharing_cap = SquareMatrix(backends);
  for (int i = 0; i < backends; ++i)
    for (int k = 0; k < backends; ++k)
      if (i != k) c.topology.sharing_cap(i, k) = share;
  return c;
}

struct AdmmRun {
  double seconds = 0.0;
  int iterations = 0;
  int truncated = 0;
};

AdmmRun time_admm(const ExperimentConfig& cfg, const TraceSet& tr, int repeats) {
  AdmmRun best;
  for (int r = 0; r < std::max(1, repeats); ++r) {
    const auto rep = run_experiment(cfg, tr);
    double secs = 0.0;
    int its = 0;
    for (std::size_t t = 0; t < rep.records.size(); ++t) {
      secs += rep.slot_seconds[t];
      its += rep.records[t].admm_iterations;
    }
    if (r == 0 || secs < best.seconds) best.seconds = secs;
    best.iterations = its;
    best.truncated = rep.admm_truncated_slots;
  }
  return best;
}

}  // namespace

std::vector<ScalePoint> scalability_sweep(const ExperimentConfig& config, const std::vector<int>& backends,
                                          const std::vector<int>& frontends, const ScaleOptions& options) {
  if (options.truncation < 1) throw InvalidInput("truncation threshold must be at least 1");
  std::vector<ScalePoint> out;
  for (int I : backends)
    for (int J : frontends) {
      if (I < 1 || J < 1 || I > 20 || J > 20)
        throw InvalidInput(fmt::format("size I={}, J={} outside 1..20", I, J));
      ExperimentConfig c = config;
      c.cluster = uniform_like(config.cluster, I, J);
      c.trace.csv_dir.reset();
      c.controller.kind = ControllerKind::Admm;
      c.controller.record_iterations = false;
      const auto tr = make_traces(c);
      ScalePoint p;
      p.backends = I;
      p.frontends = J;
      c.controller.max_iterations = config.controller.max_iterations;
      const auto full = time_admm(c, tr, options.repeats);
      c.controller.max_iterations = options.truncation;
      const auto cut = time_admm(c, tr, options.repeats);
      const double per = static_cast<double>(I + J + 1) * c.trace.slots;
      p.untruncated_seconds = full.seconds;
      p.truncated_seconds = cut.seconds;
      p.untruncated_per_agent = full.seconds / per;
      p.truncated_per_agent = cut.seconds / per;
      p.untruncated_iterations = full.iterations;
      p.truncated_iterations = cut.iterations;
      p.truncated_slots = cut.truncated;
      out.push_back(p);
    }
  return out;
}

void write_scale_csv(const std::vector<ScalePoint>& points, const fs::path& path) {
  auto out = open_output(path);
  out << "backends,frontends,untruncated_seconds,truncated_seconds,untruncated_per_agent,truncated_per_agent,"
         "untruncated_iterations,truncated_iterations,truncated_slots,ratio\n";
  for (const auto& p : points)
    out << p.backends << ',' << p.frontends << ',' << num(p.untruncated_seconds) << ',' << num(p.truncated_seconds)
        << ',' << num(p.untruncated_per_agent) << ',' << num(p.truncated_per_agent) << ',' << p.untruncated_iterations
        << ',' << p.truncated_iterations << ',' << p.truncated_slots << ',' << num(p.ratio()) << '\n';
}

}  // namespace clustercoord
