// ipft: synth | train | tune | simulate | compare | report

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <iostream>

#include "ipft/scenario.hpp"

namespace fs = std::filesystem;
using namespace ipft;

namespace {

struct Args {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  bool desk_scale = false;
};

ScenarioConfig resolve(const Args& a) {
  ScenarioConfig c = a.config.empty() ? ScenarioConfig{} : load_scenario(a.config);
  if (a.seed) c.seed = *a.seed;
  if (a.desk_scale) c = desk_scaled(std::move(c));
  validate(c);
  return c;
}

void say(const std::string& msg) { std::cout << msg << std::endl; }

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << std::fixed << v;
  return s.str();
}

fs::path trace_input(const ScenarioConfig& c, const fs::path& out) {
  if (c.trace.source == TraceSource::file) return c.trace.path;
  return out / "trace.csv";
}

Trace load_trace(const fs::path& p) {
  std::ifstream in(p);
  if (!in) fail(ErrorCode::missing_artifact, "missing trace " + p.string() + " (run synth first)");
  return parse_trace(in);
}

std::shared_ptr<ModelBank> model_input(const ScenarioConfig& c, const fs::path& out) {
  fs::path p = c.model.path.empty() ? out / "model.json" : fs::path(c.model.path);
  if (!fs::exists(p)) fail(ErrorCode::missing_artifact, "IPFT needs a trained model; missing " + p.string());
  return pooled_bank(load_model(p));
}

void write_json(const fs::path& p, const nlohmann::json& j) { write_text(p, j.dump(2) + "\n"); }

nlohmann::json model_scores(const EvaluationReport& model, const EvaluationReport& persistence) {
  return {{"model", evaluation_to_json(model)}, {"persistence", evaluation_to_json(persistence)}};
}

// ---------------------------------------------------------------------------

void cmd_synth(const ScenarioConfig& c, const fs::path& out) {
  auto trace = training_trace(c);
  write_text(out / "trace.csv", write_trace_csv(trace));
  write_json(out / "scenario.json", scenario_to_json(c));
  std::size_t rows = 0;
  for (const auto& [id, s] : trace.nodes) rows += s.size();
  say("synth: " + std::to_string(trace.nodes.size()) + " nodes, " + std::to_string(rows) + " samples from " +
      std::string(to_string(c.trace.source)) + " -> " + (out / "trace.csv").string());
}

void cmd_train(const ScenarioConfig& c, const fs::path& out) {
  auto trace = load_trace(trace_input(c, out));
  auto t = train_pooled(c, trace);
  write_json(out / "model.json", model_to_json(t.model));
  auto report = train_report_to_json(t.train);
  report["test"] = model_scores(t.test, t.persistence);
  write_json(out / "train_report.json", report);
  say("train: " + describe(t.model.nominal) + " best epoch " + std::to_string(t.train.best_epoch) + ", test RMSE " +
      fmt(t.test.aggregate_rmse) + " (persistence " + fmt(t.persistence.aggregate_rmse) + ") -> " +
      (out / "model.json").string());
}

void cmd_tune(const ScenarioConfig& c, const fs::path& out) {
  validate(c.tune.hbes);
  auto trace = load_trace(trace_input(c, out));
  auto t = tune_model(c, trace);
  auto ranges = default_numerical_ranges();
  write_text(out / "tuning_history.csv", history_csv(t.search, ranges));
  write_json(out / "model.json", model_to_json(t.model));
  nlohmann::json best_values = nlohmann::json::object();
  for (std::size_t i = 0; i < ranges.size(); ++i) best_values[ranges[i].name] = t.search.best.decoded[i];
  write_json(out / "tune_report.json", {{"best_fitness", t.search.best.fitness},
                                        {"best_nominal", describe(t.search.best.nominal)},
                                        {"best_numerical", best_values},
                                        {"best_per_iteration", t.search.best_per_iteration},
                                        {"evaluations", t.search.history.size()},
                                        {"budget_exhausted", t.search.budget_exhausted},
                                        {"test", model_scores(t.test, t.persistence)}});
  say("tune: " + std::to_string(t.search.history.size()) + " individuals, best fitness " +
      fmt(t.search.best.fitness, 6) + " (" + describe(t.search.best.nominal) + "), test RMSE " +
      fmt(t.test.aggregate_rmse) + " -> " + (out / "model.json").string());
}

void cmd_simulate(const ScenarioConfig& c, const fs::path& out) {
  std::shared_ptr<ModelBank> bank;
  if (c.mode == ControllerMode::ipft) bank = model_input(c, out);
  RunOptions opt;
  opt.log_tasks = true;
  auto r = run_once(c, c.sim.scheduler, c.mode, c.thresholds, bank, c.seed, c.duration_hours, opt);
  write_text(out / "events.csv", event_log_csv(r.events));
  write_text(out / "episodes.csv", episode_csv(r.episodes));
  write_text(out / "decisions.csv", decision_log_csv(r.decisions));
  write_text(out / "monitoring.csv", write_trace_csv(r.monitoring));
  write_text(out / "hourly.csv", hourly_csv(r.report));
  write_json(out / "report.json", report_to_json(r.report));
  const auto& m = r.report.metrics;
  say("simulate: " + std::string(to_string(c.mode)) + " " + r.report.scheduler + " " +
      std::to_string(r.report.tasks_generated) + " tasks, " + std::to_string(m.episodes) + " episodes, MTTF " +
      fmt(m.mttf, 3) + " MTTR " + fmt(m.mttr, 3) + " R " + fmt(m.reliability, 3) + " M " + fmt(m.maintainability, 3));
}

void cmd_compare(const ScenarioConfig& c, const fs::path& out) {
  auto bank = model_input(c, out);
  auto cmp = compare_all(c, bank);
  auto rows = comparison_rows(cmp);
  nlohmann::json reports = nlohmann::json::array();
  for (const auto& r : rows) reports.push_back(report_to_json(r));
  for (const auto& s : cmp) write_text(out / ("grid_" + std::string(to_string(s.scheduler)) + ".csv"), grid_csv(s.grid));
  write_text(out / "comparison.csv", comparison_csv(rows));
  write_json(out / "comparison.json", reports);
  auto table = comparison_table(rows);
  write_text(out / "table.txt", table);
  std::cout << table;
  for (const auto& s : cmp)
    say("tuned " + std::string(to_string(s.scheduler)) + ": lower " + fmt(s.grid.best.lower, 2) + " upper " +
        fmt(s.grid.best.upper, 2));
}

void cmd_report(const ScenarioConfig&, const fs::path& out) {
  std::vector<RunReport> rows;
  auto load = [&](const fs::path& p) {
    auto j = nlohmann::json::parse(read_text(p));
    if (j.is_array())
      for (const auto& r : j) rows.push_back(report_from_json(r));
    else
      rows.push_back(report_from_json(j));
  };
  if (fs::exists(out / "comparison.json")) load(out / "comparison.json");
  if (fs::exists(out / "report.json")) load(out / "report.json");
  if (rows.empty()) fail(ErrorCode::missing_artifact, "no run reports in " + out.string() + " (run simulate or compare)");
  write_text(out / "summary.csv", comparison_csv(rows));
  for (const auto& r : rows)
    write_text(out / "hourly" / (r.mode + "_" + r.scheduler + ".csv"), hourly_csv(r));
  auto table = comparison_table(rows);
  write_text(out / "summary.txt", table);
  std::cout << table;
}

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::config_invalid: return 2;
    case ErrorCode::missing_artifact: return 3;
    default: return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prediction-driven proactive fault tolerance for edge fleets"};
  app.require_subcommand(1);
  Args args;
  using Handler = void (*)(const ScenarioConfig&, const fs::path&);
  const std::vector<std::tuple<std::string, std::string, Handler>> commands = {
      {"synth", "write the training trace (trace.csv)", cmd_synth},
      {"train", "train the pooled utilization model (model.json)", cmd_train},
      {"tune", "HBES model search (tuning_history.csv, model.json)", cmd_tune},
      {"simulate", "one run with the configured scheduler and controller", cmd_simulate},
      {"compare", "RFT vs tuned IPFT for every scheduler", cmd_compare},
      {"report", "summarize run reports found in --out", cmd_report},
  };
  std::uint64_t seed = 0;
  for (const auto& [name, help, fn] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", args.config, "scenario JSON (defaults when omitted)")->check(CLI::ExistingFile);
    sub->add_option("--out", args.out, "output directory")->capture_default_str();
    sub->add_option("--seed", seed, "overrides the config seed");
    sub->add_flag("--desk-scale", args.desk_scale, "24 h run with a small model search");
  }
  CLI11_PARSE(app, argc, argv);
  for (const auto* sub : app.get_subcommands())
    if (sub->count("--seed")) args.seed = seed;

  try {
    auto cfg = resolve(args);
    fs::create_directories(args.out);
    const auto* sub = app.get_subcommands().front();
    for (const auto& [name, help, fn] : commands)
      if (sub->get_name() == name) fn(cfg, args.out);
  } catch (const Error& e) {
    std::cerr << "ipft: " << e.what() << std::endl;
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "ipft: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
