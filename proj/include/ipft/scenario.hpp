#pragma once

// Scenario configuration and the end-to-end pipeline the CLI drives:
// warm-up trace, pooled model training, HBES model search, single runs,
// threshold tuning and the IPFT-vs-RFT comparison.

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ipft/composite_model.hpp"
#include "ipft/edge_sim.hpp"
#include "ipft/hbes_tuner.hpp"
#include "ipft/ipft_controller.hpp"
#include "ipft/metrics_report.hpp"

namespace ipft {

inline constexpr int kScenarioSchemaVersion = 1;

enum class ControllerMode { rft, ipft };

inline std::string_view to_string(ControllerMode m) { return m == ControllerMode::rft ? "RFT" : "IPFT"; }

inline ControllerMode parse_controller_mode(std::string_view s) {
  if (s == "RFT" || s == "rft") return ControllerMode::rft;
  if (s == "IPFT" || s == "ipft") return ControllerMode::ipft;
  fail(ErrorCode::config_invalid, "unknown controller mode '" + std::string(s) + "'");
}

enum class TraceSource { simulation, profile, file };

inline std::string_view to_string(TraceSource s) {
  switch (s) {
    case TraceSource::simulation: return "simulation";
    case TraceSource::profile: return "profile";
    case TraceSource::file: return "file";
  }
  return "";
}

struct TraceSettings {
  // simulation: monitoring of a persistence-driven IPFT warm-up run;
  // profile: the gaussian-mixture synthesizer; file: a CSV on disk.
  TraceSource source = TraceSource::simulation;
  std::string path;
  double hours = 72.0;
  TraceProfile profile;
};

struct ModelSettings {
  NumericalHyperparams numerical{.epochs = 30};
  NominalHyperparams nominal;
  int horizon = 10;  // monitor steps
  double test_fraction = 0.2;
  std::string path;  // trained model to load; empty = <out>/model.json
};

struct TuneSettings {
  HbesConfig hbes;
  int max_epochs = 10;  // search-time cap on the epochs hyperparameter
};

struct GridSettings {
  GridSpec spec;
  double tuning_hours = 48.0;  // length of the separate tuning run
};

struct ScenarioConfig {
  int schema_version = kScenarioSchemaVersion;
  std::string name = "default";
  std::uint64_t seed = 1;
  double duration_hours = 168.0;
  SimConfig sim;
  ControllerMode mode = ControllerMode::ipft;
  ThresholdConfig thresholds;
  IpftOptions ipft;
  GridSettings grid;
  TraceSettings trace;
  ModelSettings model;
  TuneSettings tune;
  MetricForm metric_form = MetricForm::ratio;
  bool desk_scale = false;
};

inline void validate(const ScenarioConfig& c) {
  if (c.schema_version != kScenarioSchemaVersion)
    fail(ErrorCode::config_invalid, "unsupported schema_version " + std::to_string(c.schema_version));
  if (!(c.duration_hours > 0.0)) fail(ErrorCode::config_invalid, "duration_hours must be positive");
  if (!(c.trace.hours > 0.0)) fail(ErrorCode::config_invalid, "trace.hours must be positive");
  if (!(c.grid.tuning_hours > 0.0)) fail(ErrorCode::config_invalid, "grid.tuning_hours must be positive");
  if (c.trace.source == TraceSource::file && c.trace.path.empty())
    fail(ErrorCode::config_invalid, "trace.source 'file' needs trace.path");
  if (c.model.horizon < 1) fail(ErrorCode::config_invalid, "model.horizon must be >= 1");
  if (!(c.model.test_fraction > 0.0 && c.model.test_fraction < 1.0))
    fail(ErrorCode::config_invalid, "model.test_fraction must lie in (0, 1)");
  if (c.tune.max_epochs < 1) fail(ErrorCode::config_invalid, "tune.max_epochs must be >= 1");
  if (c.ipft.cooldown < 0.0 || c.ipft.decommission_hold < 0.0 || c.ipft.priority_bias < 0.0)
    fail(ErrorCode::config_invalid, "controller timings and bias must be non-negative");
  if (c.grid.spec.lower.empty() || c.grid.spec.upper.empty()) fail(ErrorCode::config_invalid, "empty threshold grid");
  try {
    validate(c.sim);
    validate(c.thresholds);
    validate(c.model.numerical);
    validate(c.tune.hbes);
    validate(c.trace.profile);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::config_invalid) throw;
    fail(ErrorCode::config_invalid, e.what());
  }
}

/// 24 h run on the same fleet. The per-day load is unchanged, so the
/// fleet that serves it stays at its full size.
inline ScenarioConfig desk_scaled(ScenarioConfig c) {
  c.desk_scale = true;
  c.duration_hours = 24.0;
  c.grid.tuning_hours = 24.0;
  c.tune.hbes.n_pop = std::min<std::size_t>(c.tune.hbes.n_pop, 4);
  c.tune.hbes.top_n = std::min(c.tune.hbes.top_n, c.tune.hbes.n_pop);
  c.tune.hbes.iterations = std::min<std::size_t>(c.tune.hbes.iterations, 4);
  c.tune.hbes.bo_budget = std::min(c.tune.hbes.bo_budget, c.tune.hbes.n_pop * c.tune.hbes.iterations);
  c.tune.hbes.bo_warm_start = std::min(c.tune.hbes.bo_warm_start, c.tune.hbes.bo_budget);
  c.tune.max_epochs = std::min(c.tune.max_epochs, 5);
  return c;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

// Strict reader: every key of an object must be consumed.
class Reader {
 public:
  Reader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(ErrorCode::config_invalid, where() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::config_invalid, where(key) + ": " + e.what());
    }
  }

  template <class T, class Parse>
  void get_as(const char* key, T& out, Parse parse) {
    std::string s;
    get(key, s);
    if (!s.empty()) out = parse(s);
  }

  bool has(const char* key) const { return j_.contains(key); }

  Reader child(const char* key) {
    seen_.insert(key);
    return Reader(j_.at(key), where(key));
  }

  const nlohmann::json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) fail(ErrorCode::config_invalid, "unknown key " + where(k.c_str()));
  }

  std::string where(const char* key = nullptr) const {
    return key ? (path_.empty() ? std::string(key) : path_ + "." + key) : (path_.empty() ? "config" : path_);
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::vector<double> read_grid_axis(const nlohmann::json& j, const std::string& where) {
  // [lo, hi, step] or {"values": [...]}
  try {
    if (j.is_object()) return j.at("values").get<std::vector<double>>();
    auto v = j.get<std::vector<double>>();
    if (v.size() != 3) fail(ErrorCode::config_invalid, where + " must be [lo, hi, step]");
    return grid_values(v[0], v[1], v[2]);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::config_invalid, where + ": " + e.what());
  }
}

}  // namespace detail

inline void read_workload(detail::Reader r, WorkloadProfile& w) {
  r.get("base_rate", w.base_rate);
  if (r.has("components")) {
    w.components.clear();
    for (const auto& c : r.raw("components")) {
      detail::Reader cr(c, r.where("components[]"));
      RateComponent rc;
      cr.get("mean_hour", rc.mean_hour);
      cr.get("std_hours", rc.std_hours);
      cr.get("peak_rate", rc.peak_rate);
      cr.finish();
      w.components.push_back(rc);
    }
  }
  r.get("mean_mi", w.mean_mi);
  r.get("sigma_log", w.sigma_log);
  r.get("min_mi", w.min_mi);
  r.get("large_fraction", w.large_fraction);
  r.get("large_min_mi", w.large_min_mi);
  r.get("large_max_mi", w.large_max_mi);
  r.get("mean_input_bytes", w.mean_input_bytes);
  r.get("mean_output_bytes", w.mean_output_bytes);
  r.finish();
}

inline void read_profile(detail::Reader r, TraceProfile& p) {
  if (r.has("components")) {
    p.components.clear();
    for (const auto& c : r.raw("components")) {
      detail::Reader cr(c, r.where("components[]"));
      MixtureComponent mc;
      cr.get("mean_hour", mc.mean_hour);
      cr.get("std_hours", mc.std_hours);
      cr.get("amplitude", mc.amplitude);
      cr.finish();
      p.components.push_back(mc);
    }
  }
  r.get("baseline_cpu", p.baseline_cpu);
  r.get("noise", p.noise);
  r.get("nodes", p.nodes);
  r.get("step_seconds", p.step_seconds);
  r.get("node_spread", p.node_spread);
  r.finish();
}

inline ScenarioConfig scenario_from_json(const nlohmann::json& j) {
  ScenarioConfig c;
  detail::Reader r(j, "");
  if (!j.contains("schema_version")) fail(ErrorCode::config_invalid, "missing schema_version");
  r.get("schema_version", c.schema_version);
  if (c.schema_version != kScenarioSchemaVersion)
    fail(ErrorCode::config_invalid, "unsupported schema_version " + std::to_string(c.schema_version));
  r.get("name", c.name);
  r.get("seed", c.seed);
  r.get("duration_hours", c.duration_hours);
  r.get_as("scheduler", c.sim.scheduler, parse_scheduler);
  r.get_as("metric_form", c.metric_form, [](const std::string& s) {
    if (s == "ratio") return MetricForm::ratio;
    if (s == "exponential") return MetricForm::exponential;
    fail(ErrorCode::config_invalid, "unknown metric_form '" + s + "'");
  });
  if (r.has("fleet")) {
    auto f = r.child("fleet");
    f.get("active", c.sim.active_nodes);
    f.get("reserve", c.sim.reserve_nodes);
    f.get("mips", c.sim.mips);
    f.get("slots", c.sim.slots);
    f.get("deploy_delay", c.sim.deploy_delay);
    f.get("monitor_interval", c.sim.monitor_interval);
    f.get("batch_interval", c.sim.batch_interval);
    f.get("fault_threshold", c.sim.fault_threshold);
    f.finish();
  }
  if (r.has("workload")) read_workload(r.child("workload"), c.sim.workload);
  if (r.has("controller")) {
    auto k = r.child("controller");
    k.get_as("mode", c.mode, parse_controller_mode);
    k.get("lower", c.thresholds.lower);
    k.get("upper", c.thresholds.upper);
    k.get_as("metric", c.thresholds.metric, [](const std::string& s) {
      if (s == "cpu") return DecisionMetric::cpu;
      if (s == "any") return DecisionMetric::any;
      fail(ErrorCode::config_invalid, "unknown decision metric '" + s + "'");
    });
    k.get("cooldown", c.ipft.cooldown);
    k.get("priority_bias", c.ipft.priority_bias);
    k.get("avoid_hot_nodes", c.ipft.avoid_hot_nodes);
    k.get("max_decommissions_per_tick", c.ipft.max_decommissions_per_tick);
    k.get("decommission_hold", c.ipft.decommission_hold);
    k.finish();
  }
  c.grid.spec.metric = c.thresholds.metric;
  if (r.has("grid")) {
    auto g = r.child("grid");
    if (g.has("lower")) c.grid.spec.lower = detail::read_grid_axis(g.raw("lower"), g.where("lower"));
    if (g.has("upper")) c.grid.spec.upper = detail::read_grid_axis(g.raw("upper"), g.where("upper"));
    g.get("reliability_weight", c.grid.spec.reliability_weight);
    g.get("maintainability_weight", c.grid.spec.maintainability_weight);
    g.get("tuning_hours", c.grid.tuning_hours);
    g.finish();
  }
  if (r.has("trace")) {
    auto t = r.child("trace");
    t.get_as("source", c.trace.source, [](const std::string& s) {
      if (s == "simulation") return TraceSource::simulation;
      if (s == "profile") return TraceSource::profile;
      if (s == "file") return TraceSource::file;
      fail(ErrorCode::config_invalid, "unknown trace source '" + s + "'");
    });
    t.get("path", c.trace.path);
    t.get("hours", c.trace.hours);
    if (t.has("profile")) read_profile(t.child("profile"), c.trace.profile);
    t.finish();
  }
  if (r.has("model")) {
    auto m = r.child("model");
    if (m.has("numerical")) {
      auto n = m.child("numerical");
      auto& h = c.model.numerical;
      n.get("recurrent_layers", h.recurrent_layers);
      n.get("ff_layers_global", h.ff_layers_global);
      n.get("ff_layers_head", h.ff_layers_head);
      n.get("neurons", h.neurons);
      n.get("lookback", h.lookback);
      n.get("epochs", h.epochs);
      n.get("batch_size", h.batch_size);
      n.get("dropout", h.dropout);
      n.get("learning_rate", h.learning_rate);
      n.finish();
    }
    if (m.has("nominal")) {
      auto n = m.child("nominal");
      std::string kind(to_string(c.model.nominal.recurrent_kind)), act(nn::to_string(c.model.nominal.activation)),
          opt(nn::to_string(c.model.nominal.optimizer));
      n.get("recurrent", kind);
      n.get("activation", act);
      n.get("optimizer", opt);
      n.finish();
      try {
        c.model.nominal = parse_nominal(kind, act, opt);
      } catch (const Error& e) {
        fail(ErrorCode::config_invalid, e.what());
      }
    }
    m.get("horizon", c.model.horizon);
    m.get("test_fraction", c.model.test_fraction);
    m.get("path", c.model.path);
    m.finish();
  }
  if (r.has("tune")) {
    auto t = r.child("tune");
    auto& h = c.tune.hbes;
    t.get("n_pop", h.n_pop);
    t.get("top_n", h.top_n);
    t.get("iterations", h.iterations);
    t.get("sigma0", h.sigma0);
    t.get("decay", h.decay);
    t.get("bo_budget", h.bo_budget);
    t.get("bo_warm_start", h.bo_warm_start);
    t.get("length_scale", h.length_scale);
    t.get("noise", h.noise);
    t.get("max_epochs", c.tune.max_epochs);
    t.finish();
  }
  r.finish();
  validate(c);
  return c;
}

inline nlohmann::json scenario_to_json(const ScenarioConfig& c) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& k : c.sim.workload.components)
    comps.push_back({{"mean_hour", k.mean_hour}, {"std_hours", k.std_hours}, {"peak_rate", k.peak_rate}});
  nlohmann::json prof_comps = nlohmann::json::array();
  for (const auto& k : c.trace.profile.components)
    prof_comps.push_back({{"mean_hour", k.mean_hour}, {"std_hours", k.std_hours}, {"amplitude", k.amplitude}});
  const auto& w = c.sim.workload;
  const auto& h = c.model.numerical;
  const auto& b = c.tune.hbes;
  return {
      {"schema_version", c.schema_version},
      {"name", c.name},
      {"seed", c.seed},
      {"duration_hours", c.duration_hours},
      {"scheduler", to_string(c.sim.scheduler)},
      {"metric_form", c.metric_form == MetricForm::ratio ? "ratio" : "exponential"},
      {"fleet",
       {{"active", c.sim.active_nodes},
        {"reserve", c.sim.reserve_nodes},
        {"mips", c.sim.mips},
        {"slots", c.sim.slots},
        {"deploy_delay", c.sim.deploy_delay},
        {"monitor_interval", c.sim.monitor_interval},
        {"batch_interval", c.sim.batch_interval},
        {"fault_threshold", c.sim.fault_threshold}}},
      {"workload",
       {{"base_rate", w.base_rate},
        {"components", comps},
        {"mean_mi", w.mean_mi},
        {"sigma_log", w.sigma_log},
        {"min_mi", w.min_mi},
        {"large_fraction", w.large_fraction},
        {"large_min_mi", w.large_min_mi},
        {"large_max_mi", w.large_max_mi},
        {"mean_input_bytes", w.mean_input_bytes},
        {"mean_output_bytes", w.mean_output_bytes}}},
      {"controller",
       {{"mode", to_string(c.mode)},
        {"lower", c.thresholds.lower},
        {"upper", c.thresholds.upper},
        {"metric", c.thresholds.metric == DecisionMetric::cpu ? "cpu" : "any"},
        {"cooldown", c.ipft.cooldown},
        {"priority_bias", c.ipft.priority_bias},
        {"avoid_hot_nodes", c.ipft.avoid_hot_nodes},
        {"max_decommissions_per_tick", c.ipft.max_decommissions_per_tick},
        {"decommission_hold", c.ipft.decommission_hold}}},
      {"grid",
       {{"lower", {{"values", c.grid.spec.lower}}},
        {"upper", {{"values", c.grid.spec.upper}}},
        {"reliability_weight", c.grid.spec.reliability_weight},
        {"maintainability_weight", c.grid.spec.maintainability_weight},
        {"tuning_hours", c.grid.tuning_hours}}},
      {"trace",
       {{"source", to_string(c.trace.source)},
        {"path", c.trace.path},
        {"hours", c.trace.hours},
        {"profile",
         {{"components", prof_comps},
          {"baseline_cpu", c.trace.profile.baseline_cpu},
          {"noise", c.trace.profile.noise},
          {"nodes", c.trace.profile.nodes},
          {"step_seconds", c.trace.profile.step_seconds},
          {"node_spread", c.trace.profile.node_spread}}}}},
      {"model",
       {{"numerical",
         {{"recurrent_layers", h.recurrent_layers},
          {"ff_layers_global", h.ff_layers_global},
          {"ff_layers_head", h.ff_layers_head},
          {"neurons", h.neurons},
          {"lookback", h.lookback},
          {"epochs", h.epochs},
          {"batch_size", h.batch_size},
          {"dropout", h.dropout},
          {"learning_rate", h.learning_rate}}},
        {"nominal",
         {{"recurrent", to_string(c.model.nominal.recurrent_kind)},
          {"activation", nn::to_string(c.model.nominal.activation)},
          {"optimizer", nn::to_string(c.model.nominal.optimizer)}}},
        {"horizon", c.model.horizon},
        {"test_fraction", c.model.test_fraction},
        {"path", c.model.path}}},
      {"tune",
       {{"n_pop", b.n_pop},
        {"top_n", b.top_n},
        {"iterations", b.iterations},
        {"sigma0", b.sigma0},
        {"decay", b.decay},
        {"bo_budget", b.bo_budget},
        {"bo_warm_start", b.bo_warm_start},
        {"length_scale", b.length_scale},
        {"noise", b.noise},
        {"max_epochs", c.tune.max_epochs}}},
  };
}

inline ScenarioConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::missing_artifact, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::config_invalid, path.string() + ": " + e.what());
  }
  return scenario_from_json(j);
}

// ---------------------------------------------------------------------------
// Seeds

enum class SeedStream : std::uint64_t { evaluation = 0, warmup = 1, training = 2, tuning = 3, search = 4 };

/// Independent seed per pipeline stage (splitmix64 of seed and stream).
inline std::uint64_t stage_seed(std::uint64_t seed, SeedStream stream) {
  if (stream == SeedStream::evaluation) return seed;
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(stream) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline SimConfig sim_config(const ScenarioConfig& c, SchedulerPolicy policy, std::uint64_t seed, double hours) {
  SimConfig s = c.sim;
  s.scheduler = policy;
  s.seed = seed;
  s.duration = hours * 3600.0;
  return s;
}

// ---------------------------------------------------------------------------
// Trace and models

/// Training trace per the config's source. The simulated trace is the
/// monitoring of a warm-up run whose controller uses persistence
/// predictions, so it covers both consolidated and replicated fleets.
inline Trace training_trace(const ScenarioConfig& c) {
  switch (c.trace.source) {
    case TraceSource::simulation: {
      auto cfg = sim_config(c, c.sim.scheduler, stage_seed(c.seed, SeedStream::warmup), c.trace.hours);
      SimWorld w(cfg);
      IpftController ctl(std::make_shared<PersistencePredictor>(), c.thresholds, c.ipft);
      w.set_controller(&ctl);
      w.run();
      return w.monitoring();
    }
    case TraceSource::profile: {
      auto p = c.trace.profile;
      p.duration_seconds = static_cast<std::int64_t>(c.trace.hours * 3600.0);
      return synthesize_trace(p, stage_seed(c.seed, SeedStream::warmup));
    }
    case TraceSource::file: {
      std::ifstream in(c.trace.path);
      if (!in) fail(ErrorCode::missing_artifact, "cannot open trace " + c.trace.path);
      return parse_trace(in);
    }
  }
  fail(ErrorCode::config_invalid, "trace source");
}

inline std::shared_ptr<LookbackDatasets> lookback_datasets(const ScenarioConfig& c, const Trace& trace,
                                                            std::size_t max_lookback) {
  return std::make_shared<LookbackDatasets>(trace, c.model.horizon, static_cast<int>(c.sim.monitor_interval),
                                            max_lookback, fleet_slots());
}

struct TrainedModel {
  CompositeModel model;
  TrainReport train;
  EvaluationReport test;
  EvaluationReport persistence;
};

inline nlohmann::json evaluation_to_json(const EvaluationReport& e) {
  return {{"rmse", e.rmse},
          {"mae", e.mae},
          {"aggregate_rmse", e.aggregate_rmse},
          {"aggregate_mae", e.aggregate_mae},
          {"samples", e.samples}};
}

/// One pooled model for the whole fleet, trained on the chronological
/// search split and scored on the trailing test split.
inline TrainedModel train_pooled(const ScenarioConfig& c, const Trace& trace) {
  const auto& h = c.model.numerical;
  auto data = lookback_datasets(c, trace, static_cast<std::size_t>(h.lookback));
  const auto& pooled = data->get(h.lookback);
  auto search = search_split(pooled, c.model.test_fraction);
  auto test = test_split(pooled, c.model.test_fraction);
  const auto seed = stage_seed(c.seed, SeedStream::training);
  auto model = build_model(h, c.model.nominal, IoDims{}, seed);
  auto [trained, report] = train(std::move(model), search, seed);
  TrainedModel out{std::move(trained), std::move(report), {}, {}};
  out.test = evaluate(out.model, test);
  out.persistence = evaluate_persistence(test, *out.model.scaler, static_cast<std::size_t>(h.lookback));
  return out;
}

struct TunedModel {
  HbesResult search;
  CompositeModel model;
  EvaluationReport test;
  EvaluationReport persistence;
};

/// HBES over the numerical ranges and the nominal catalog. The returned
/// model is the best individual retrained on the full search split with
/// its own epoch count.
inline TunedModel tune_model(const ScenarioConfig& c, const Trace& trace) {
  auto ranges = default_numerical_ranges();
  auto max_lookback = static_cast<std::size_t>(ranges[4].hi);
  auto data = lookback_datasets(c, trace, max_lookback);
  TrainingObjectiveOptions opts;
  opts.test_fraction = c.model.test_fraction;
  opts.max_epochs = c.tune.max_epochs;
  opts.seed = stage_seed(c.seed, SeedStream::training);
  auto hbes = c.tune.hbes;
  hbes.seed = stage_seed(c.seed, SeedStream::search);
  TunedModel out;
  out.search = hbes_run(hbes, ranges, training_objective(data, opts));
  auto num = numerical_from_values(out.search.best.decoded);
  const auto& pooled = data->get(num.lookback);
  auto model = build_model(num, out.search.best.nominal, IoDims{}, opts.seed, out.search.best.genotype);
  out.model = train(std::move(model), search_split(pooled, opts.test_fraction), opts.seed).first;
  auto test = test_split(pooled, opts.test_fraction);
  out.test = evaluate(out.model, test);
  out.persistence = evaluate_persistence(test, *out.model.scaler, static_cast<std::size_t>(num.lookback));
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::missing_artifact, "cannot write " + path.string());
  out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::missing_artifact, "missing artifact " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline CompositeModel load_model(const std::filesystem::path& path) {
  auto text = read_text(path);
  try {
    return model_from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::missing_artifact, path.string() + " is not a model: " + e.what());
  }
}

inline std::shared_ptr<ModelBank> pooled_bank(CompositeModel m) {
  auto bank = std::make_shared<ModelBank>();
  bank->set_pooled(std::make_shared<CompositeModel>(std::move(m)));
  return bank;
}

// ---------------------------------------------------------------------------
// Runs

struct RunOptions {
  bool log_tasks = false;
  bool keep_world_logs = true;
};

struct RunResult {
  RunReport report;
  std::vector<SimEvent> events;
  std::vector<FaultEpisode> episodes;
  std::vector<DecisionRecord> decisions;
  std::vector<ConservationSample> conservation;
  Trace monitoring;
};

/// One run of `policy` under the given controller. IPFT needs a predictor.
inline RunResult run_once(const ScenarioConfig& c, SchedulerPolicy policy, ControllerMode mode,
                          const ThresholdConfig& thresholds, std::shared_ptr<const Predictor> predictor,
                          std::uint64_t seed, double hours, const RunOptions& opt = {}) {
  auto cfg = sim_config(c, policy, seed, hours);
  cfg.log_tasks = opt.log_tasks;
  SimWorld w(cfg);
  RftController rft;
  std::optional<IpftController> ipft;
  if (mode == ControllerMode::ipft) {
    if (!predictor) fail(ErrorCode::missing_artifact, "IPFT mode needs a trained model");
    ipft.emplace(std::move(predictor), thresholds, c.ipft);
    w.set_controller(&*ipft);
  } else {
    w.set_controller(&rft);
  }
  w.run();
  RunResult r;
  r.report = make_report(w, c.name, std::string(to_string(mode)), c.metric_form);
  if (mode == ControllerMode::ipft) {
    r.report.lower_threshold = thresholds.lower;
    r.report.upper_threshold = thresholds.upper;
  }
  if (opt.keep_world_logs) {
    r.events = w.log();
    r.episodes = w.episodes();
    r.conservation = w.conservation();
    r.monitoring = w.monitoring();
    r.decisions = ipft ? ipft->log() : rft.log();
  }
  return r;
}

/// Threshold grid for one scheduler, evaluated on a tuning run that uses
/// its own seed so the comparison day is never seen while tuning.
inline GridResult tune_grid(const ScenarioConfig& c, SchedulerPolicy policy, std::shared_ptr<const Predictor> predictor) {
  const auto seed = stage_seed(c.seed, SeedStream::tuning);
  return tune_thresholds(c.grid.spec, [&](const ThresholdConfig& t) {
    auto cfg = sim_config(c, policy, seed, c.grid.tuning_hours);
    SimWorld w(cfg);
    IpftController ctl(predictor, t, c.ipft);
    w.set_controller(&ctl);
    w.run();
    return CellOutcome{ft_metrics(w.episodes(), 0.0, cfg.duration, c.metric_form), ctl.replications(),
                       ctl.decommissions()};
  });
}

struct SchedulerComparison {
  SchedulerPolicy scheduler = SchedulerPolicy::round_robin;
  GridResult grid;
  RunReport rft;
  RunReport ipft;
};

inline constexpr std::array<SchedulerPolicy, 3> kAllSchedulers = {
    SchedulerPolicy::round_robin, SchedulerPolicy::min_min, SchedulerPolicy::max_min};

/// RFT and tuned IPFT on the evaluation seed for every scheduler.
inline std::vector<SchedulerComparison> compare_all(const ScenarioConfig& c, std::shared_ptr<const Predictor> predictor) {
  std::vector<SchedulerComparison> out;
  RunOptions quiet{false, false};
  for (auto policy : kAllSchedulers) {
    SchedulerComparison s;
    s.scheduler = policy;
    s.grid = tune_grid(c, policy, predictor);
    s.rft = run_once(c, policy, ControllerMode::rft, c.thresholds, nullptr, c.seed, c.duration_hours, quiet).report;
    s.ipft = run_once(c, policy, ControllerMode::ipft, s.grid.best, predictor, c.seed, c.duration_hours, quiet).report;
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<RunReport> comparison_rows(const std::vector<SchedulerComparison>& cmp) {
  std::vector<RunReport> rows;
  for (const auto& s : cmp) {
    rows.push_back(s.rft);
    rows.push_back(s.ipft);
  }
  return rows;
}

/// Fixed-width text rendering of a comparison in the reference layout.
inline std::string comparison_table(std::span<const RunReport> rows) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-14s %9s %9s %12s %16s\n", "", "MTTF", "MTTR", "Reliability", "Maintainability");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-14s %9.3f %9.3f %12.3f %16.3f\n", (r.mode + " " + r.scheduler).c_str(),
                  r.metrics.mttf, r.metrics.mttr, r.metrics.reliability, r.metrics.maintainability);
    out << line;
  }
  return out.str();
}

}  // namespace ipft
