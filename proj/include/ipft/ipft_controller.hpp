#pragma once

// Dual-threshold controller. Every monitor tick each active node's
// horizon-max utilization is predicted and classified: below the lower
// threshold the node is decommissioned, above the upper threshold it is
// replicated, in between nothing happens. Predictions also bias the
// offloading policy away from nodes expected to run hot. The reactive
// baseline replicates a node when a fault episode opens on it.

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ipft/composite_model.hpp"
#include "ipft/edge_sim.hpp"
#include "ipft/error.hpp"

namespace ipft {

enum class ActionKind { no_action, decommission, replicate };

inline std::string_view to_string(ActionKind k) {
  switch (k) {
    case ActionKind::no_action: return "NoAction";
    case ActionKind::decommission: return "Decommission";
    case ActionKind::replicate: return "Replicate";
  }
  return "";
}

struct Action {
  ActionKind kind = ActionKind::no_action;
  std::size_t node = 0;
  double time = 0.0;

  bool operator==(const Action&) const = default;
};

/// cpu: the predicted CPU fraction drives the rule. any: the largest of
/// the predicted CPU/RAM/disk fractions does, so any hot resource
/// replicates and a node is decommissioned only when all are low.
enum class DecisionMetric { cpu, any };

struct ThresholdConfig {
  double lower = 0.2;
  double upper = 0.8;
  DecisionMetric metric = DecisionMetric::cpu;
};

inline void validate(const ThresholdConfig& t) {
  if (!(t.lower >= 0.0 && t.lower < 1.0 && t.upper > 0.0 && t.upper <= 1.0))
    fail(ErrorCode::config_invalid, "thresholds must satisfy 0 <= lower < 1 and 0 < upper <= 1");
  if (!(t.lower < t.upper)) fail(ErrorCode::config_invalid, "lower threshold must be below upper");
}

/// Classifies a utilization fraction. Boundary values are NoAction.
inline ActionKind decide(double fraction, const ThresholdConfig& t) {
  if (std::isnan(fraction) || fraction < 0.0) fail(ErrorCode::invalid_prediction, "prediction must be finite and >= 0");
  if (fraction < t.lower) return ActionKind::decommission;
  if (fraction > t.upper) return ActionKind::replicate;
  return ActionKind::no_action;
}

/// Utilization fraction of a per-metric prediction in percent units.
inline double decision_value(std::span<const double> prediction, DecisionMetric metric) {
  if (prediction.size() < 3) fail(ErrorCode::shape_mismatch, "prediction needs cpu, ram and disk");
  for (double v : prediction)
    if (std::isnan(v) || v < 0.0) fail(ErrorCode::invalid_prediction, "prediction must be finite and >= 0");
  double pct = prediction[0];
  if (metric == DecisionMetric::any) pct = std::max({prediction[0], prediction[1], prediction[2]});
  return pct / 100.0;
}

inline ActionKind decide(std::span<const double> prediction, const ThresholdConfig& t) {
  return decide(decision_value(prediction, t.metric), t);
}

// ---------------------------------------------------------------------------
// Predictors

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::size_t lookback(const std::string& node) const = 0;
  /// Horizon-max per metric, original units. `window` is the node's last
  /// lookback samples (row-major, oldest first), `global` the fleet
  /// feature vector at the anchor.
  virtual std::vector<double> predict(const std::string& node, std::span<const double> window,
                                      std::span<const double> global) const = 0;
};

/// The horizon max is the max over the last `window` samples.
class PersistencePredictor : public Predictor {
 public:
  explicit PersistencePredictor(std::size_t lookback = 8, std::size_t window = 8) : lookback_(lookback), window_(window) {
    if (lookback == 0) fail(ErrorCode::config_invalid, "lookback must be >= 1");
  }
  std::size_t lookback(const std::string&) const override { return lookback_; }
  std::vector<double> predict(const std::string&, std::span<const double> window,
                              std::span<const double>) const override {
    return persistence_forecast(window, kMetricCount, window_);
  }

 private:
  std::size_t lookback_;
  std::size_t window_;
};

/// Trained models keyed by node id, with an optional pooled model used for
/// nodes that have none of their own.
class ModelBank : public Predictor {
 public:
  void set(const std::string& node, std::shared_ptr<const CompositeModel> m) { per_node_[node] = std::move(m); }
  void set_pooled(std::shared_ptr<const CompositeModel> m) { pooled_ = std::move(m); }
  bool empty() const { return per_node_.empty() && !pooled_; }
  const std::map<std::string, std::shared_ptr<const CompositeModel>>& per_node() const { return per_node_; }
  const std::shared_ptr<const CompositeModel>& pooled() const { return pooled_; }

  const CompositeModel& model_for(const std::string& node) const {
    auto it = per_node_.find(node);
    if (it != per_node_.end()) return *it->second;
    if (!pooled_) fail(ErrorCode::missing_artifact, "no trained model for " + node);
    return *pooled_;
  }

  std::size_t lookback(const std::string& node) const override {
    return static_cast<std::size_t>(model_for(node).numerical.lookback);
  }
  std::vector<double> predict(const std::string& node, std::span<const double> window,
                              std::span<const double> global) const override {
    return ipft::predict(model_for(node), window, global);
  }

 private:
  std::map<std::string, std::shared_ptr<const CompositeModel>> per_node_;
  std::shared_ptr<const CompositeModel> pooled_;
};

// ---------------------------------------------------------------------------
// Proactive controller

struct DecisionRecord {
  double time = 0.0;
  std::size_t node = 0;
  std::vector<double> prediction;  // empty on cold start
  ActionKind action = ActionKind::no_action;
  std::string outcome;  // issued, cooldown, hold, deferred, cold_start, reserve_exhausted, last_node_protected, none
};

struct IpftOptions {
  double cooldown = 600.0;  // seconds between replications of one node
  double priority_bias = 1.0;  // completion-time weight = 1 + bias * predicted fraction
  bool avoid_hot_nodes = false; // round robin skips nodes predicted above upper
  std::size_t max_decommissions_per_tick = 1;  // lowest predictions first; 0 = no limit
  double decommission_hold = 600.0;  // no decommission this soon after the fleet's latest replication
};

/// Stages 1-3 of one tick without touching the world: one record per
/// active node, in id order.
inline std::vector<DecisionRecord> ipft_tick(const SimWorld& w, const Predictor& predictor, const ThresholdConfig& t,
                                             double now) {
  std::vector<DecisionRecord> out;
  auto global = make_global_features(w.current_slots(), static_cast<std::int64_t>(std::llround(now)));
  for (auto id : w.active_ids()) {
    DecisionRecord r;
    r.time = now;
    r.node = id;
    const auto& name = w.node(id).name;
    auto window = w.recent_window(id, predictor.lookback(name));
    if (!window) {
      r.outcome = "cold_start";
      out.push_back(std::move(r));
      continue;
    }
    r.prediction = predictor.predict(name, *window, global);
    for (auto& v : r.prediction) v = std::max(0.0, v);  // regressors can dip below 0 on idle nodes
    r.action = decide(r.prediction, t);
    r.outcome = "none";
    out.push_back(std::move(r));
  }
  return out;
}

class IpftController : public Controller {
 public:
  IpftController(std::shared_ptr<const Predictor> predictor, ThresholdConfig thresholds, IpftOptions options = {})
      : predictor_(std::move(predictor)), t_(thresholds), opt_(options) {
    if (!predictor_) fail(ErrorCode::missing_artifact, "IPFT needs a predictor");
    validate(t_);
  }

  void on_tick(SimWorld& w, double now) override {
    auto records = ipft_tick(w, *predictor_, t_, now);
    std::vector<double> weights(w.nodes().size(), 1.0);
    std::vector<char> avoid(w.nodes().size(), 0);
    for (const auto& r : records) {
      if (r.prediction.empty()) continue;
      weights[r.node] = 1.0 + opt_.priority_bias * std::min(1.0, decision_value(r.prediction, t_.metric));
      avoid[r.node] = opt_.avoid_hot_nodes && r.action == ActionKind::replicate;
    }
    w.set_weights(std::move(weights));
    w.set_avoid(std::move(avoid));

    // Stage 4
    std::vector<std::pair<double, std::size_t>> low;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].action == ActionKind::decommission)
        low.push_back({decision_value(records[i].prediction, t_.metric), i});
    std::stable_sort(low.begin(), low.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<char> allowed(records.size(), 0);
    for (std::size_t k = 0; k < low.size(); ++k)
      allowed[low[k].second] = opt_.max_decommissions_per_tick == 0 || k < opt_.max_decommissions_per_tick;

    for (std::size_t i = 0; i < records.size(); ++i) {
      auto& r = records[i];
      if (r.action == ActionKind::replicate) {
        auto last = last_replication_.find(r.node);
        if (last != last_replication_.end() && now - last->second < opt_.cooldown) {
          r.outcome = "cooldown";
        } else {
          try {
            w.replicate_node(r.node, now);
            last_replication_[r.node] = now;
            last_fleet_replication_ = now;
            r.outcome = "issued";
            ++replications_;
          } catch (const Error& e) {
            if (e.code() != ErrorCode::reserve_exhausted) throw;
            r.outcome = "reserve_exhausted";
          }
        }
      } else if (r.action == ActionKind::decommission && last_fleet_replication_ &&
                 now - *last_fleet_replication_ < opt_.decommission_hold) {
        r.outcome = "hold";
      } else if (r.action == ActionKind::decommission && !allowed[i]) {
        r.outcome = "deferred";
      } else if (r.action == ActionKind::decommission) {
        try {
          w.decommission_node(r.node, now);
          r.outcome = "issued";
          ++decommissions_;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::last_node_protected) throw;
          r.outcome = "last_node_protected";
        }
      }
      log_.push_back(std::move(r));
    }
  }

  const std::vector<DecisionRecord>& log() const { return log_; }
  const ThresholdConfig& thresholds() const { return t_; }
  std::size_t replications() const { return replications_; }
  std::size_t decommissions() const { return decommissions_; }

 private:
  std::shared_ptr<const Predictor> predictor_;
  ThresholdConfig t_;
  IpftOptions opt_;
  std::map<std::size_t, double> last_replication_;
  std::optional<double> last_fleet_replication_;
  std::vector<DecisionRecord> log_;
  std::size_t replications_ = 0;
  std::size_t decommissions_ = 0;
};

// ---------------------------------------------------------------------------
// Reactive baseline

/// Replicate for every episode start in `events` whose node has no
/// replication in flight; repeated starts for one node yield one action.
inline std::vector<Action> rft_tick(std::span<const SimEvent> events, const SimWorld& w) {
  std::vector<Action> out;
  for (const auto& e : events) {
    if (e.kind != "episode_start" || !e.node) continue;
    if (w.has_pending_replication(*e.node)) continue;
    if (std::any_of(out.begin(), out.end(), [&](const Action& a) { return a.node == *e.node; })) continue;
    out.push_back({ActionKind::replicate, *e.node, e.time});
  }
  return out;
}

class RftController : public Controller {
 public:
  void on_episode_start(SimWorld& w, std::size_t node, double now) override {
    SimEvent e{now, "episode_start", node, std::nullopt, ""};
    for (const auto& a : rft_tick(std::span<const SimEvent>(&e, 1), w)) {
      DecisionRecord r{now, a.node, {}, a.kind, "issued"};
      try {
        w.replicate_node(a.node, now);
        ++replications_;
      } catch (const Error& err) {
        if (err.code() != ErrorCode::reserve_exhausted) throw;
        r.outcome = "reserve_exhausted";
      }
      log_.push_back(std::move(r));
    }
  }

  const std::vector<DecisionRecord>& log() const { return log_; }
  std::size_t replications() const { return replications_; }

 private:
  std::vector<DecisionRecord> log_;
  std::size_t replications_ = 0;
};

// ---------------------------------------------------------------------------
// Replay and grid search

/// Replications the rule would issue on recorded predictions, honouring the
/// per-node cooldown. Cold-start records are skipped.
inline std::size_t replay_replications(std::span<const DecisionRecord> recorded, const ThresholdConfig& t,
                                       double cooldown = 600.0) {
  std::map<std::size_t, double> last;
  std::size_t n = 0;
  for (const auto& r : recorded) {
    if (r.prediction.empty() || decide(r.prediction, t) != ActionKind::replicate) continue;
    auto it = last.find(r.node);
    if (it != last.end() && r.time - it->second < cooldown) continue;
    last[r.node] = r.time;
    ++n;
  }
  return n;
}

/// Evenly spaced values lo, lo+step, ... <= hi (inclusive within 1e-9).
inline std::vector<double> grid_values(double lo, double hi, double step) {
  if (!(step > 0.0)) fail(ErrorCode::config_invalid, "grid step must be positive");
  std::vector<double> v;
  for (int k = 0;; ++k) {
    double x = lo + k * step;
    if (x > hi + 1e-9) break;
    v.push_back(std::round(x * 1e9) / 1e9);
  }
  return v;
}

struct GridSpec {
  std::vector<double> lower = grid_values(0.1, 0.3, 0.05);
  std::vector<double> upper = grid_values(0.5, 0.9, 0.1);
  double reliability_weight = 1.0;
  double maintainability_weight = 1.0;
  DecisionMetric metric = DecisionMetric::cpu;
};

struct GridCell {
  double lower = 0.0;
  double upper = 0.0;
  bool skipped = false;
  FtMetrics metrics;
  double score = 0.0;
  std::size_t replications = 0;
  std::size_t decommissions = 0;
};

struct GridResult {
  ThresholdConfig best;
  std::size_t best_index = 0;
  std::vector<GridCell> table;  // |lower| x |upper|, row-major by lower
};

struct CellOutcome {
  FtMetrics metrics;
  std::size_t replications = 0;
  std::size_t decommissions = 0;
};

/// Runs `cell` for every (lower, upper) with lower < upper and returns the
/// cell maximizing the weighted reliability + maintainability. Ties keep
/// the first cell in row-major order.
inline GridResult tune_thresholds(const GridSpec& grid, const std::function<CellOutcome(const ThresholdConfig&)>& cell) {
  if (grid.lower.empty() || grid.upper.empty()) fail(ErrorCode::empty_grid, "threshold grid has no cells");
  GridResult out;
  bool any = false;
  for (double lo : grid.lower)
    for (double up : grid.upper) {
      GridCell c;
      c.lower = lo;
      c.upper = up;
      if (!(lo < up) || lo < 0.0 || up > 1.0) {
        c.skipped = true;
        out.table.push_back(c);
        continue;
      }
      ThresholdConfig t{lo, up, grid.metric};
      auto r = cell(t);
      c.metrics = r.metrics;
      c.replications = r.replications;
      c.decommissions = r.decommissions;
      c.score = grid.reliability_weight * r.metrics.reliability + grid.maintainability_weight * r.metrics.maintainability;
      if (!any || c.score > out.table[out.best_index].score) {
        out.best_index = out.table.size();
        out.best = t;
      }
      any = true;
      out.table.push_back(c);
    }
  if (!any) fail(ErrorCode::empty_grid, "every grid cell has lower >= upper");
  return out;
}

inline std::string grid_csv(const GridResult& g) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed << "lower,upper,status,mttf,mttr,reliability,maintainability,score,replications,decommissions,best\n";
  for (std::size_t i = 0; i < g.table.size(); ++i) {
    const auto& c = g.table[i];
    out << c.lower << ',' << c.upper << ',' << (c.skipped ? "skipped" : "evaluated") << ',';
    if (c.skipped) {
      out << ",,,,,,,0\n";
      continue;
    }
    out << c.metrics.mttf << ',' << c.metrics.mttr << ',' << c.metrics.reliability << ',' << c.metrics.maintainability
        << ',' << c.score << ',' << c.replications << ',' << c.decommissions << ',' << (i == g.best_index) << '\n';
  }
  return out.str();
}

inline std::string decision_log_csv(std::span<const DecisionRecord> log) {
  std::ostringstream out;
  out.precision(4);
  out << std::fixed << "time,node";
  for (auto name : kMetricNames) out << ",pred_" << name;
  out << ",action,outcome\n";
  for (const auto& r : log) {
    out << r.time << ',' << node_name(r.node);
    for (std::size_t m = 0; m < kMetricCount; ++m) {
      out << ',';
      if (m < r.prediction.size()) out << r.prediction[m];
    }
    out << ',' << to_string(r.action) << ',' << r.outcome << '\n';
  }
  return out.str();
}

}  // namespace ipft
