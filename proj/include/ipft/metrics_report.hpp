#pragma once

// Fault-tolerance metrics computed from fault-episode logs, prediction
// error metrics, and the JSON/CSV run reports.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ipft/error.hpp"
#include "ipft/trace_ingest.hpp"
#include "json.hpp"

namespace ipft {

struct FaultEpisode {
  std::size_t node = 0;
  double start = 0.0;
  double end = 0.0;
  std::size_t violations = 0;

  double length() const { return end - start; }
  bool operator==(const FaultEpisode&) const = default;
};

inline std::vector<FaultEpisode> sorted_by_start(std::vector<FaultEpisode> episodes) {
  std::stable_sort(episodes.begin(), episodes.end(), [](const auto& a, const auto& b) {
    if (a.start != b.start) return a.start < b.start;
    if (a.end != b.end) return a.end < b.end;
    return a.node < b.node;
  });
  return episodes;
}

/// Mean length of the fault-free intervals of the run [begin, end], with
/// episodes pooled across nodes: the interval before the first episode, the
/// gaps between consecutive episodes and the trailing interval all count,
/// overlapping episodes contribute a zero-length gap. Returns the run length
/// when no episode occurred.
inline double mttf(std::span<const FaultEpisode> episodes, double begin, double end) {
  if (episodes.empty()) return end - begin;
  auto sorted = sorted_by_start({episodes.begin(), episodes.end()});
  double total = 0.0;
  double covered_until = begin;
  for (const auto& e : sorted) {
    total += std::max(0.0, e.start - covered_until);
    covered_until = std::max(covered_until, e.end);
  }
  total += std::max(0.0, end - covered_until);
  return total / static_cast<double>(sorted.size() + 1);
}

inline double mttf(std::span<const FaultEpisode> episodes, double duration) { return mttf(episodes, 0.0, duration); }

/// Mean episode length; 0 when there were none.
inline double mttr(std::span<const FaultEpisode> episodes) {
  if (episodes.empty()) return 0.0;
  double total = 0.0;
  for (const auto& e : episodes) total += e.length();
  return total / static_cast<double>(episodes.size());
}

/// ratio:        R = MTTF / (MTTF + t0),     M = t0 / (t0 + MTTR)
/// exponential:  R = exp(-t0 / MTTF),        M = 1 - exp(-t0 / MTTR)
enum class MetricForm { ratio, exponential };

inline constexpr double kReferenceSeconds = 1.0;

inline double reliability(double mttf_seconds, MetricForm form = MetricForm::ratio, double t0 = kReferenceSeconds) {
  if (std::isinf(mttf_seconds)) return 1.0;
  if (mttf_seconds <= 0.0) return 0.0;
  return form == MetricForm::ratio ? mttf_seconds / (mttf_seconds + t0) : std::exp(-t0 / mttf_seconds);
}

inline double maintainability(double mttr_seconds, MetricForm form = MetricForm::ratio, double t0 = kReferenceSeconds) {
  if (mttr_seconds <= 0.0) return 1.0;
  if (std::isinf(mttr_seconds)) return 0.0;
  return form == MetricForm::ratio ? t0 / (t0 + mttr_seconds) : 1.0 - std::exp(-t0 / mttr_seconds);
}

struct FtMetrics {
  double mttf = 0.0;
  double mttr = 0.0;
  double reliability = 1.0;
  double maintainability = 1.0;
  std::size_t episodes = 0;

  bool operator==(const FtMetrics&) const = default;
};

/// All four metrics from the episode log alone. A run without episodes
/// reports reliability and maintainability 1.
inline FtMetrics ft_metrics(std::span<const FaultEpisode> episodes, double begin, double end,
                            MetricForm form = MetricForm::ratio) {
  FtMetrics m;
  m.mttf = mttf(episodes, begin, end);
  m.mttr = mttr(episodes);
  m.episodes = episodes.size();
  if (episodes.empty()) return m;
  m.reliability = reliability(m.mttf, form);
  m.maintainability = maintainability(m.mttr, form);
  return m;
}

/// Per-window metrics with episodes clipped to each window.
inline std::vector<FtMetrics> windowed_ft_metrics(std::span<const FaultEpisode> episodes, double begin, double end,
                                                  double window, MetricForm form = MetricForm::ratio) {
  std::vector<FtMetrics> out;
  for (double w = begin; w < end; w += window) {
    double we = std::min(end, w + window);
    std::vector<FaultEpisode> clipped;
    for (const auto& e : episodes) {
      if (e.end < w || e.start >= we) continue;
      if (e.end == w && e.start < w) continue;
      auto c = e;
      c.start = std::max(c.start, w);
      c.end = std::min(c.end, we);
      clipped.push_back(c);
    }
    out.push_back(ft_metrics(clipped, w, we, form));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prediction quality

struct PredictionMetrics {
  std::vector<double> rmse;  // per column
  std::vector<double> mae;
  double aggregate_rmse = 0.0;
  double aggregate_mae = 0.0;
  std::size_t samples = 0;
};

/// `preds` and `targets` are row-major N x dims.
inline PredictionMetrics prediction_metrics(std::span<const double> preds, std::span<const double> targets,
                                            std::size_t dims) {
  if (preds.size() != targets.size() || dims == 0 || preds.size() % dims != 0)
    fail(ErrorCode::shape_mismatch, "prediction/target shapes");
  if (preds.empty()) fail(ErrorCode::empty_dataset, "no predictions to score");
  PredictionMetrics m;
  m.samples = preds.size() / dims;
  m.rmse.assign(dims, 0.0);
  m.mae.assign(dims, 0.0);
  double sq = 0.0, ab = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    double r = preds[i] - targets[i];
    m.rmse[i % dims] += r * r;
    m.mae[i % dims] += std::fabs(r);
    sq += r * r;
    ab += std::fabs(r);
  }
  const double n = static_cast<double>(m.samples);
  for (std::size_t d = 0; d < dims; ++d) {
    m.rmse[d] = std::sqrt(m.rmse[d] / n);
    m.mae[d] /= n;
  }
  m.aggregate_rmse = std::sqrt(sq / static_cast<double>(preds.size()));
  m.aggregate_mae = ab / static_cast<double>(preds.size());
  return m;
}

// ---------------------------------------------------------------------------
// Reports

struct HourlyPoint {
  double start = 0.0;
  FtMetrics metrics;
  std::size_t active_nodes = 0;
};

struct RunReport {
  std::string scenario;
  std::string mode;       // "RFT" or "IPFT"
  std::string scheduler;  // "RR", "MinMin", "MaxMin"
  FtMetrics metrics;
  double duration = 0.0;
  std::uint64_t tasks_generated = 0;
  std::uint64_t tasks_completed = 0;
  std::uint64_t tasks_in_flight = 0;
  std::uint64_t task_faults = 0;
  std::uint64_t replications = 0;
  std::uint64_t decommissions = 0;
  std::uint64_t migrations = 0;
  std::uint64_t reserve_exhausted = 0;
  double node_on_seconds = 0.0;
  std::vector<HourlyPoint> hourly;
  double lower_threshold = 0.0;
  double upper_threshold = 0.0;
};

inline nlohmann::json ft_to_json(const FtMetrics& m) {
  return {{"mttf", m.mttf},
          {"mttr", m.mttr},
          {"reliability", m.reliability},
          {"maintainability", m.maintainability},
          {"episodes", m.episodes}};
}

inline FtMetrics ft_from_json(const nlohmann::json& j) {
  FtMetrics m;
  m.mttf = j.at("mttf").get<double>();
  m.mttr = j.at("mttr").get<double>();
  m.reliability = j.at("reliability").get<double>();
  m.maintainability = j.at("maintainability").get<double>();
  m.episodes = j.at("episodes").get<std::size_t>();
  return m;
}

inline nlohmann::json report_to_json(const RunReport& r) {
  nlohmann::json hourly = nlohmann::json::array();
  for (const auto& h : r.hourly)
    hourly.push_back({{"start", h.start}, {"active_nodes", h.active_nodes}, {"metrics", ft_to_json(h.metrics)}});
  return {{"schema", "ipft-run-report"},
          {"version", 1},
          {"scenario", r.scenario},
          {"mode", r.mode},
          {"scheduler", r.scheduler},
          {"metrics", ft_to_json(r.metrics)},
          {"duration", r.duration},
          {"tasks",
           {{"generated", r.tasks_generated},
            {"completed", r.tasks_completed},
            {"in_flight", r.tasks_in_flight},
            {"faulted", r.task_faults}}},
          {"replications", r.replications},
          {"decommissions", r.decommissions},
          {"migrations", r.migrations},
          {"reserve_exhausted", r.reserve_exhausted},
          {"node_on_seconds", r.node_on_seconds},
          {"thresholds", {{"lower", r.lower_threshold}, {"upper", r.upper_threshold}}},
          {"hourly", std::move(hourly)}};
}

inline RunReport report_from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != "ipft-run-report") fail(ErrorCode::config_invalid, "not a run report");
  RunReport r;
  r.scenario = j.at("scenario").get<std::string>();
  r.mode = j.at("mode").get<std::string>();
  r.scheduler = j.at("scheduler").get<std::string>();
  r.metrics = ft_from_json(j.at("metrics"));
  r.duration = j.at("duration").get<double>();
  const auto& t = j.at("tasks");
  r.tasks_generated = t.at("generated").get<std::uint64_t>();
  r.tasks_completed = t.at("completed").get<std::uint64_t>();
  r.tasks_in_flight = t.at("in_flight").get<std::uint64_t>();
  r.task_faults = t.at("faulted").get<std::uint64_t>();
  r.replications = j.at("replications").get<std::uint64_t>();
  r.decommissions = j.at("decommissions").get<std::uint64_t>();
  r.migrations = j.at("migrations").get<std::uint64_t>();
  r.reserve_exhausted = j.at("reserve_exhausted").get<std::uint64_t>();
  r.node_on_seconds = j.at("node_on_seconds").get<double>();
  r.lower_threshold = j.at("thresholds").at("lower").get<double>();
  r.upper_threshold = j.at("thresholds").at("upper").get<double>();
  for (const auto& h : j.at("hourly"))
    r.hourly.push_back({h.at("start").get<double>(), ft_from_json(h.at("metrics")), h.at("active_nodes").get<std::size_t>()});
  return r;
}

inline std::string comparison_csv_header() {
  return "scenario,mode,scheduler,mttf,mttr,reliability,maintainability,tasks,replications,decommissions";
}

inline std::string comparison_csv(std::span<const RunReport> reports) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  out << comparison_csv_header() << '\n';
  for (const auto& r : reports)
    out << r.scenario << ',' << r.mode << ',' << r.scheduler << ',' << r.metrics.mttf << ',' << r.metrics.mttr << ','
        << r.metrics.reliability << ',' << r.metrics.maintainability << ',' << r.tasks_generated << ','
        << r.replications << ',' << r.decommissions << '\n';
  return out.str();
}

inline std::string hourly_csv(const RunReport& r) {
  std::ostringstream out;
  out.precision(6);
  out << "hour_start,active_nodes,episodes,mttf,mttr,reliability,maintainability\n";
  for (const auto& h : r.hourly)
    out << h.start << ',' << h.active_nodes << ',' << h.metrics.episodes << ',' << h.metrics.mttf << ','
        << h.metrics.mttr << ',' << h.metrics.reliability << ',' << h.metrics.maintainability << '\n';
  return out.str();
}

}  // namespace ipft
