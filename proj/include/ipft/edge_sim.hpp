#pragma once

// Discrete-event edge cluster. Tasks arrive from a diurnal workload, are
// offloaded to active nodes by RoundRobin, MinMin or MaxMin, and run under
// processor sharing with a bounded number of concurrent slots per node. A
// task whose time on its node exceeds the latency bound is a process fault;
// consecutive faulty completions on a node form one fault episode. Nodes can
// be replicated from a reserve pool (with a deployment delay) and
// decommissioned. Every 60 s the cluster records a monitoring sample per
// node.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ipft/error.hpp"
#include "ipft/metrics_report.hpp"
#include "ipft/trace_ingest.hpp"

namespace ipft {

// ---------------------------------------------------------------------------
// Workload

struct TaskSpec {
  std::uint64_t id = 0;
  double arrival = 0.0;
  double mi = 0.0;  // million instructions
  double input_bytes = 0.0;
  double output_bytes = 0.0;
};

/// One gaussian bump of the arrival rate over the 24 h clock.
struct RateComponent {
  double mean_hour = 12.0;
  double std_hours = 1.0;
  double peak_rate = 1.0;  // tasks/s added at the bump centre
};

struct WorkloadProfile {
  double base_rate = 0.4;  // tasks/s at every hour
  std::vector<RateComponent> components{{12.0, 1.5, 7.93}, {19.0, 1.5, 4.95}, {9.0, 0.75, 0.79}};
  double mean_mi = 300.0;   // median of the lognormal body
  double sigma_log = 0.3;   // lognormal shape of the body
  double min_mi = 20.0;
  double large_fraction = 0.03;
  double large_min_mi = 1100.0;
  double large_max_mi = 2500.0;
  double mean_input_bytes = 20000.0;
  double mean_output_bytes = 4000.0;
};

inline void validate(const WorkloadProfile& p) {
  for (const auto& c : p.components) {
    if (!(c.std_hours > 0.0)) fail(ErrorCode::invalid_profile, "rate component std must be positive");
    if (c.peak_rate < 0.0) fail(ErrorCode::invalid_profile, "negative rate component");
  }
  if (p.base_rate < 0.0) fail(ErrorCode::invalid_profile, "negative base rate");
  if (!(p.mean_mi > 0.0) || p.sigma_log < 0.0 || !(p.min_mi > 0.0))
    fail(ErrorCode::invalid_profile, "task length distribution");
  if (p.large_fraction < 0.0 || p.large_fraction > 1.0 || p.large_max_mi < p.large_min_mi || !(p.large_min_mi > 0.0))
    fail(ErrorCode::invalid_profile, "large task distribution");
  if (p.mean_input_bytes < 0.0 || p.mean_output_bytes < 0.0) fail(ErrorCode::invalid_profile, "negative payload");
}

/// Arrival rate (tasks/s) at simulation time t; t = 0 is midnight.
inline double arrival_rate(const WorkloadProfile& p, double t) {
  double hour = std::fmod(t / 3600.0, 24.0);
  double r = p.base_rate;
  for (const auto& c : p.components) {
    double d = std::fabs(hour - c.mean_hour);
    d = std::min(d, 24.0 - d);
    r += c.peak_rate * std::exp(-0.5 * d * d / (c.std_hours * c.std_hours));
  }
  return r;
}

/// Expected task count over [0, duration) by midpoint quadrature at 10 s.
inline double expected_task_count(const WorkloadProfile& p, double duration) {
  double total = 0.0;
  for (double t = 0.0; t < duration; t += 10.0) total += arrival_rate(p, t + std::min(5.0, 0.5 * (duration - t))) * std::min(10.0, duration - t);
  return total;
}

/// Non-homogeneous Poisson arrivals by thinning, deterministic per seed.
class WorkloadStream {
 public:
  WorkloadStream(WorkloadProfile profile, double duration, std::uint64_t seed)
      : p_(std::move(profile)), duration_(duration), rng_(seed) {
    validate(p_);
    rate_max_ = p_.base_rate;
    for (const auto& c : p_.components) rate_max_ += c.peak_rate;
  }

  std::optional<TaskSpec> next() {
    if (rate_max_ <= 0.0) return std::nullopt;
    std::exponential_distribution<double> gap(rate_max_);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (;;) {
      t_ += gap(rng_);
      if (t_ >= duration_) return std::nullopt;
      if (unit(rng_) * rate_max_ <= arrival_rate(p_, t_)) break;
    }
    TaskSpec task;
    task.id = next_id_++;
    task.arrival = t_;
    if (unit(rng_) < p_.large_fraction) {
      task.mi = p_.large_min_mi + unit(rng_) * (p_.large_max_mi - p_.large_min_mi);
    } else {
      std::normal_distribution<double> z(0.0, 1.0);
      task.mi = std::max(p_.min_mi, p_.mean_mi * std::exp(p_.sigma_log * z(rng_)));
    }
    task.input_bytes = p_.mean_input_bytes * (0.5 + unit(rng_));
    task.output_bytes = p_.mean_output_bytes * (0.5 + unit(rng_));
    return task;
  }

 private:
  WorkloadProfile p_;
  double duration_;
  std::mt19937_64 rng_;
  double rate_max_ = 0.0;
  double t_ = 0.0;
  std::uint64_t next_id_ = 0;
};

inline std::vector<TaskSpec> generate_workload(const WorkloadProfile& profile, double duration, std::uint64_t seed) {
  WorkloadStream s(profile, duration, seed);
  std::vector<TaskSpec> out;
  while (auto t = s.next()) out.push_back(*t);
  return out;
}

inline std::uint64_t count_workload(const WorkloadProfile& profile, double duration, std::uint64_t seed) {
  WorkloadStream s(profile, duration, seed);
  std::uint64_t n = 0;
  while (s.next()) ++n;
  return n;
}

// ---------------------------------------------------------------------------
// Offloading policies

enum class SchedulerPolicy { round_robin, min_min, max_min };

inline std::string_view to_string(SchedulerPolicy p) {
  switch (p) {
    case SchedulerPolicy::round_robin: return "RR";
    case SchedulerPolicy::min_min: return "MinMin";
    case SchedulerPolicy::max_min: return "MaxMin";
  }
  return "";
}

inline SchedulerPolicy parse_scheduler(std::string_view s) {
  if (s == "RR" || s == "RoundRobin" || s == "round_robin") return SchedulerPolicy::round_robin;
  if (s == "MinMin" || s == "min_min") return SchedulerPolicy::min_min;
  if (s == "MaxMin" || s == "max_min") return SchedulerPolicy::max_min;
  fail(ErrorCode::config_invalid, "unknown scheduler '" + std::string(s) + "'");
}

/// A candidate node as the batch heuristics see it.
struct NodeView {
  double ready = 0.0;   // seconds until the node's current backlog drains
  double speed = 1.0;   // MIPS
  double weight = 1.0;  // completion-time multiplier (priority bias)
  double last_used = 0.0;  // time of the node's latest assignment; breaks ties
};

struct Assignment {
  std::size_t task = 0;
  std::size_t node = 0;
};

/// MinMin / MaxMin over a batch. Completion time of task t on node n is
/// (ready_n + len_t / speed_n) * weight_n. Each round finds every pending
/// task's best node; MinMin commits the task whose best completion is
/// smallest, MaxMin the one whose best completion is largest. Task ties go to
/// the lower index. Node ties go to the least recently used node, then the
/// lower index; a node that takes a task becomes the most recently used.
inline std::vector<Assignment> schedule_batch(const std::vector<double>& lengths, std::vector<NodeView> nodes,
                                              SchedulerPolicy policy) {
  if (nodes.empty()) fail(ErrorCode::no_active_nodes, "no eligible node");
  if (policy == SchedulerPolicy::round_robin) fail(ErrorCode::config_invalid, "round robin is not a batch heuristic");
  const bool max_min = policy == SchedulerPolicy::max_min;
  std::vector<Assignment> out;
  std::vector<char> done(lengths.size(), 0);
  std::vector<double> best_ct(lengths.size());
  std::vector<std::size_t> best_node(lengths.size());
  for (std::size_t round = 0; round < lengths.size(); ++round) {
    std::size_t chosen = lengths.size();
    for (std::size_t t = 0; t < lengths.size(); ++t) {
      if (done[t]) continue;
      double ct_min = std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t n = 0; n < nodes.size(); ++n) {
        double ct = (nodes[n].ready + lengths[t] / nodes[n].speed) * nodes[n].weight;
        if (ct < ct_min || (ct == ct_min && nodes[n].last_used < nodes[arg].last_used)) ct_min = ct, arg = n;
      }
      best_ct[t] = ct_min;
      best_node[t] = arg;
      if (chosen == lengths.size() || (max_min ? ct_min > best_ct[chosen] : ct_min < best_ct[chosen])) chosen = t;
    }
    done[chosen] = 1;
    out.push_back({chosen, best_node[chosen]});
    auto& picked = nodes[best_node[chosen]];
    picked.ready += lengths[chosen] / picked.speed;
    picked.last_used = std::max_element(nodes.begin(), nodes.end(), [](const NodeView& a, const NodeView& b) {
                         return a.last_used < b.last_used;
                       })->last_used + 1.0;
  }
  return out;
}

/// Cycles through node ids in increasing order, skipping avoided nodes
/// unless every eligible node is avoided.
class RoundRobin {
 public:
  std::size_t pick(const std::vector<std::size_t>& eligible, const std::vector<char>& avoid = {}) {
    if (eligible.empty()) fail(ErrorCode::no_active_nodes, "no eligible node");
    auto avoided = [&](std::size_t id) { return id < avoid.size() && avoid[id]; };
    bool any_ok = std::any_of(eligible.begin(), eligible.end(), [&](std::size_t id) { return !avoided(id); });
    // eligible is sorted; start after the last pick
    auto start = std::upper_bound(eligible.begin(), eligible.end(), last_) - eligible.begin();
    if (!started_) start = 0;
    for (std::size_t k = 0; k < eligible.size(); ++k) {
      std::size_t id = eligible[(static_cast<std::size_t>(start) + k) % eligible.size()];
      if (any_ok && avoided(id)) continue;
      last_ = id;
      started_ = true;
      return id;
    }
    return eligible.front();
  }

 private:
  std::size_t last_ = 0;
  bool started_ = false;
};

// ---------------------------------------------------------------------------
// Fleet

enum class NodeStatus { reserve, deploying, active, draining, off };

inline std::string_view to_string(NodeStatus s) {
  switch (s) {
    case NodeStatus::reserve: return "reserve";
    case NodeStatus::deploying: return "deploying";
    case NodeStatus::active: return "active";
    case NodeStatus::draining: return "draining";
    case NodeStatus::off: return "off";
  }
  return "";
}

struct ResidentTask {
  TaskSpec task;
  double dispatch = -1.0;  // first assignment to a node; kept across migrations
  double remaining = 0.0;  // MI still to execute
};

struct NodeState {
  std::size_t id = 0;
  std::string name;
  NodeStatus status = NodeStatus::reserve;
  double ready_at = 0.0;
  double mips = 1000.0;
  std::size_t slots = 4;
  std::vector<ResidentTask> running;
  std::deque<ResidentTask> queue;
  std::optional<std::size_t> migrate_from;
  double activated_at = 0.0;
  double last_update = 0.0;
  double last_assigned = -1.0;
  std::uint64_t version = 0;
  // accumulators for the current monitoring step
  double busy = 0.0;
  double resident_area = 0.0;
  double net_sent = 0.0;
  double net_recv = 0.0;
  // lifetime counters
  std::uint64_t completed = 0;
  double on_seconds = 0.0;
  std::size_t samples_since_activation = 0;
  std::optional<FaultEpisode> open_episode;

  bool accepts_tasks() const { return status == NodeStatus::active; }
  bool powered() const { return status == NodeStatus::active || status == NodeStatus::draining; }
  double backlog_mi() const {
    double s = 0.0;
    for (const auto& r : running) s += r.remaining;
    for (const auto& q : queue) s += q.remaining;
    return s;
  }
  std::size_t resident() const { return running.size() + queue.size(); }
};

inline std::string node_name(std::size_t id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "node%02zu", id);
  return buf;
}

/// Fixed global-feature slot of every fleet node.
inline std::map<std::string, std::size_t> fleet_slots(std::size_t fleet = kFleetCapacity) {
  std::map<std::string, std::size_t> m;
  for (std::size_t i = 0; i < fleet; ++i) m.emplace(node_name(i), i);
  return m;
}

// ---------------------------------------------------------------------------
// Simulation

struct SimConfig {
  SchedulerPolicy scheduler = SchedulerPolicy::round_robin;
  std::size_t active_nodes = 5;
  std::size_t reserve_nodes = 15;
  double mips = 1000.0;
  std::size_t slots = 4;
  double fault_threshold = 1.0;  // seconds on the node
  double deploy_delay = 600.0;
  double monitor_interval = 60.0;
  double batch_interval = 1.0;  // MinMin / MaxMin batching period
  double duration = 86400.0;
  std::uint64_t seed = 0;
  WorkloadProfile workload;
  bool log_tasks = false;  // per-task arrival/dispatch/completion log lines
};

inline void validate(const SimConfig& c) {
  auto check = [](bool ok, const char* what) {
    if (!ok) fail(ErrorCode::config_invalid, what);
  };
  check(c.active_nodes >= 1, "at least one active node");
  check(c.active_nodes + c.reserve_nodes <= kFleetCapacity, "fleet exceeds capacity");
  check(c.mips > 0.0 && c.slots >= 1, "node capacity");
  check(c.fault_threshold > 0.0 && c.deploy_delay >= 0.0, "fault bound / deployment delay");
  check(c.monitor_interval > 0.0 && c.batch_interval > 0.0, "intervals must be positive");
  check(c.duration >= 0.0, "negative duration");
  validate(c.workload);
}

struct SimEvent {
  double time = 0.0;
  std::string kind;
  std::optional<std::size_t> node;
  std::optional<std::uint64_t> task;
  std::string detail;
};

struct ConservationSample {
  double time = 0.0;
  std::uint64_t generated = 0;
  std::uint64_t completed = 0;
  std::uint64_t in_flight = 0;
};

class SimWorld;

/// Receives the simulator's callbacks; the default does nothing.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual void on_tick(SimWorld&, double) {}
  virtual void on_episode_start(SimWorld&, std::size_t, double) {}
};

class SimWorld {
 public:
  using TaskSource = std::function<std::optional<TaskSpec>()>;

  explicit SimWorld(SimConfig cfg) : SimWorld(cfg, WorkloadStream(cfg.workload, cfg.duration, cfg.seed)) {}

  SimWorld(SimConfig cfg, std::vector<TaskSpec> tasks) : SimWorld(cfg, [tasks = std::move(tasks), i = std::size_t{0}]() mutable {
    return i < tasks.size() ? std::optional<TaskSpec>(tasks[i++]) : std::nullopt;
  }) {}

  SimWorld(SimConfig cfg, WorkloadStream stream)
      : SimWorld(cfg, [s = std::move(stream)]() mutable { return s.next(); }) {}

  SimWorld(SimConfig cfg, TaskSource source) : cfg_(std::move(cfg)), source_(std::move(source)) {
    validate(cfg_);
    const auto fleet = cfg_.active_nodes + cfg_.reserve_nodes;
    for (std::size_t i = 0; i < fleet; ++i) {
      NodeState n;
      n.id = i;
      n.name = node_name(i);
      n.mips = cfg_.mips;
      n.slots = cfg_.slots;
      n.status = i < cfg_.active_nodes ? NodeStatus::active : NodeStatus::reserve;
      nodes_.push_back(std::move(n));
      slots_.emplace(nodes_.back().name, i);
    }
    weights_.assign(fleet, 1.0);
    avoid_.assign(fleet, 0);
    pull_arrival();
    if (cfg_.monitor_interval <= cfg_.duration) push(cfg_.monitor_interval, Kind::monitor, 0, 0);
  }

  // -- event loop -----------------------------------------------------------

  bool done() const { return queue_.empty() || queue_.top().time > cfg_.duration; }

  /// Processes the earliest event; returns the events it emitted.
  std::vector<SimEvent> step() {
    std::vector<SimEvent> emitted;
    if (done()) return emitted;
    sink_ = &emitted;
    auto e = queue_.top();
    queue_.pop();
    clock_ = std::max(clock_, e.time);
    switch (e.kind) {
      case Kind::arrival: on_arrival(e.ref); break;
      case Kind::completion: on_completion(e.node, e.ref); break;
      case Kind::monitor: on_monitor(); break;
      case Kind::deployment: on_deployment(e.node); break;
      case Kind::batch: on_batch(); break;
    }
    sink_ = nullptr;
    return emitted;
  }

  /// Runs to the configured duration and closes the books.
  void run() {
    while (!done()) step();
    finish();
  }

  void finish() {
    if (finished_) return;
    finished_ = true;
    clock_ = std::max(clock_, cfg_.duration);
    for (auto& n : nodes_) {
      if (!n.powered()) continue;
      advance(n, cfg_.duration);
    }
    for (auto& n : nodes_) close_episode(n, cfg_.duration);
  }

  void set_controller(Controller* c) { controller_ = c; }

  // -- fleet actions --------------------------------------------------------

  /// Takes the lowest-id reserve (or switched-off) node into deployment; it
  /// becomes active deploy_delay later and then takes over half of the
  /// source node's queued tasks.
  std::size_t replicate_node(std::size_t source, double now) {
    std::optional<std::size_t> pick;
    for (const auto& n : nodes_)
      if (n.status == NodeStatus::reserve || n.status == NodeStatus::off) {
        pick = n.id;
        break;
      }
    if (!pick) {
      ++reserve_exhausted_;
      emit(now, "reserve_exhausted", source, std::nullopt, "");
      fail(ErrorCode::reserve_exhausted, "no reserve node left");
    }
    auto& n = nodes_[*pick];
    n.status = NodeStatus::deploying;
    n.ready_at = now + cfg_.deploy_delay;
    n.migrate_from = source;
    ++replications_;
    emit(now, "replicate", *pick, std::nullopt, "source=" + nodes_[source].name);
    push(n.ready_at, Kind::deployment, *pick, 0);
    return *pick;
  }

  /// Stops assignments to the node, hands its queued tasks back to the
  /// scheduler and switches it off once its running tasks finish.
  void decommission_node(std::size_t node, double now) {
    auto& n = nodes_.at(node);
    if (n.status != NodeStatus::active) fail(ErrorCode::config_invalid, n.name + " is not active");
    if (active_count() <= 1) fail(ErrorCode::last_node_protected, "refusing to decommission the last active node");
    advance(n, now);
    n.status = NodeStatus::draining;
    ++decommissions_;
    emit(now, "decommission", node, std::nullopt, "");
    std::deque<ResidentTask> moved;
    std::swap(moved, n.queue);
    for (auto& r : moved) {
      emit(now, "reschedule", node, r.task.id, "");
      dispatch(std::move(r), now);
    }
    if (n.running.empty()) switch_off(n, now);
    else reschedule_completion(n, now);
  }

  void set_weights(std::vector<double> w) {
    w.resize(nodes_.size(), 1.0);
    weights_ = std::move(w);
  }
  void set_avoid(std::vector<char> a) {
    a.resize(nodes_.size(), 0);
    avoid_ = std::move(a);
  }

  // -- observers ------------------------------------------------------------

  double clock() const { return clock_; }
  const SimConfig& config() const { return cfg_; }
  const std::vector<NodeState>& nodes() const { return nodes_; }
  const NodeState& node(std::size_t i) const { return nodes_.at(i); }
  const std::vector<FaultEpisode>& episodes() const { return episodes_; }
  const Trace& monitoring() const { return monitoring_; }
  const std::vector<SimEvent>& log() const { return log_; }
  const std::vector<ConservationSample>& conservation() const { return conservation_; }
  const std::map<std::string, std::size_t>& slots() const { return slots_; }
  const std::vector<double>& weights() const { return weights_; }

  std::uint64_t generated() const { return generated_; }
  std::uint64_t completed() const { return completed_; }
  std::uint64_t task_faults() const { return task_faults_; }
  std::uint64_t replications() const { return replications_; }
  std::uint64_t decommissions() const { return decommissions_; }
  std::uint64_t migrations() const { return migrations_; }
  std::uint64_t reserve_exhausted() const { return reserve_exhausted_; }
  std::uint64_t in_flight() const {
    std::uint64_t n = pending_.size();
    for (const auto& node : nodes_) n += node.resident();
    return n;
  }

  std::size_t active_count() const {
    return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const NodeState& n) { return n.accepts_tasks(); }));
  }
  std::vector<std::size_t> active_ids() const {
    std::vector<std::size_t> ids;
    for (const auto& n : nodes_)
      if (n.accepts_tasks()) ids.push_back(n.id);
    return ids;
  }

  bool has_pending_replication(std::size_t source) const {
    return std::any_of(nodes_.begin(), nodes_.end(), [&](const NodeState& n) {
      return n.status == NodeStatus::deploying && n.migrate_from == source;
    });
  }

  double node_on_seconds() const {
    double s = 0.0;
    for (const auto& n : nodes_) s += n.on_seconds;
    return s;
  }

  /// Latest monitoring samples of every powered node (slot layout), as the
  /// global feature input at the current tick.
  std::vector<std::optional<MetricVector>> current_slots() const {
    std::vector<std::optional<MetricVector>> slots(kFleetCapacity);
    for (const auto& n : nodes_) {
      if (!n.powered() || n.samples_since_activation == 0) continue;
      const auto it = monitoring_.nodes.find(n.name);
      if (it == monitoring_.nodes.end() || it->second.empty()) continue;
      slots[n.id] = it->second.back().values();
    }
    return slots;
  }

  /// The node's last `count` samples (row-major, oldest first). Only samples
  /// recorded since the node's latest activation count.
  std::optional<std::vector<double>> recent_window(std::size_t node, std::size_t count) const {
    const auto& n = nodes_.at(node);
    if (n.samples_since_activation < count) return std::nullopt;
    const auto& series = monitoring_.nodes.at(n.name);
    std::vector<double> w;
    w.reserve(count * kMetricCount);
    for (std::size_t i = series.size() - count; i < series.size(); ++i) {
      auto v = series[i].values();
      w.insert(w.end(), v.begin(), v.end());
    }
    return w;
  }

 private:
  enum class Kind : std::uint8_t { arrival, completion, monitor, deployment, batch };

  struct Event {
    double time;
    std::uint64_t seq;
    Kind kind;
    std::size_t node;
    std::uint64_t ref;  // node version for completions
  };

  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      if (a.time != b.time) return a.time > b.time;
      return a.seq > b.seq;
    }
  };

  void push(double t, Kind k, std::size_t node, std::uint64_t ref) { queue_.push({t, seq_++, k, node, ref}); }

  void emit(double t, std::string kind, std::optional<std::size_t> node, std::optional<std::uint64_t> task,
            std::string detail) {
    SimEvent e{t, std::move(kind), node, task, std::move(detail)};
    if (sink_) sink_->push_back(e);
    log_.push_back(std::move(e));
  }

  void pull_arrival() {
    if (auto t = source_()) {
      if (t->arrival > cfg_.duration) return;
      next_task_ = *t;
      push(t->arrival, Kind::arrival, 0, 0);
    }
  }

  // Brings the node's running tasks and accumulators forward to `now`.
  void advance(NodeState& n, double now) {
    double dt = now - n.last_update;
    if (dt > 0.0) {
      if (!n.running.empty()) {
        double rate = n.mips / static_cast<double>(n.running.size());
        for (auto& r : n.running) r.remaining -= dt * rate;
        n.busy += dt;
      }
      n.resident_area += dt * static_cast<double>(n.resident());
      if (n.powered()) n.on_seconds += dt;
    }
    n.last_update = now;
  }

  void reschedule_completion(NodeState& n, double now) {
    ++n.version;
    if (n.running.empty()) return;
    double rem = std::numeric_limits<double>::infinity();
    for (const auto& r : n.running) rem = std::min(rem, r.remaining);
    double k = static_cast<double>(n.running.size());
    push(now + std::max(0.0, rem) * k / n.mips, Kind::completion, n.id, n.version);
  }

  void fill_slots(NodeState& n) {
    while (n.running.size() < n.slots && !n.queue.empty()) {
      n.running.push_back(std::move(n.queue.front()));
      n.queue.pop_front();
    }
  }

  void place(std::size_t node, ResidentTask r, double now) {
    auto& n = nodes_[node];
    advance(n, now);
    if (r.dispatch < 0.0) r.dispatch = now;
    n.last_assigned = now;
    n.net_recv += r.task.input_bytes;
    if (cfg_.log_tasks) emit(now, "dispatch", node, r.task.id, "");
    if (n.running.size() < n.slots) n.running.push_back(std::move(r));
    else n.queue.push_back(std::move(r));
    reschedule_completion(n, now);
  }

  void dispatch(ResidentTask r, double now) {
    if (cfg_.scheduler == SchedulerPolicy::round_robin) {
      auto ids = active_ids();
      std::size_t node = rr_.pick(ids, avoid_);
      place(node, std::move(r), now);
      return;
    }
    if (pending_.empty()) {
      double next = std::ceil(now / cfg_.batch_interval) * cfg_.batch_interval;
      if (next <= now) next += cfg_.batch_interval;
      push(next, Kind::batch, 0, 0);
    }
    pending_.push_back(std::move(r));
  }

  void on_arrival(std::uint64_t) {
    TaskSpec t = next_task_;
    ++generated_;
    if (cfg_.log_tasks) emit(clock_, "arrival", std::nullopt, t.id, "");
    ResidentTask r{t, -1.0, t.mi};
    pull_arrival();
    dispatch(std::move(r), clock_);
  }

  void on_batch() {
    if (pending_.empty()) return;
    auto ids = active_ids();
    std::vector<NodeView> views;
    for (auto id : ids) {
      auto& n = nodes_[id];
      advance(n, clock_);
      views.push_back({n.backlog_mi() / n.mips, n.mips, weights_[id], n.last_assigned});
    }
    std::vector<double> lengths;
    for (const auto& r : pending_) lengths.push_back(r.remaining);
    auto plan = schedule_batch(lengths, views, cfg_.scheduler);
    auto batch = std::move(pending_);
    pending_.clear();
    for (const auto& a : plan) {
      place(ids[a.node], std::move(batch[a.task]), clock_);
    }
  }

  void on_completion(std::size_t node, std::uint64_t version) {
    auto& n = nodes_[node];
    if (version != n.version) return;  // superseded by a later change on this node
    advance(n, clock_);
    auto it = std::min_element(n.running.begin(), n.running.end(),
                               [](const ResidentTask& a, const ResidentTask& b) { return a.remaining < b.remaining; });
    ResidentTask done = std::move(*it);
    n.running.erase(it);
    ++n.completed;
    ++completed_;
    n.net_sent += done.task.output_bytes;
    const double elapsed = clock_ - done.dispatch;
    const bool fault = elapsed > cfg_.fault_threshold;
    if (cfg_.log_tasks) emit(clock_, fault ? "fault" : "complete", node, done.task.id, std::to_string(elapsed));
    if (fault) {
      ++task_faults_;
      if (!n.open_episode) {
        n.open_episode = FaultEpisode{node, clock_, clock_, 1};
        emit(clock_, "episode_start", node, done.task.id, "");
        if (controller_) controller_->on_episode_start(*this, node, clock_);
      } else {
        ++n.open_episode->violations;
      }
    } else {
      close_episode(n, clock_);
    }
    fill_slots(n);
    if (n.status == NodeStatus::draining && n.resident() == 0) {
      switch_off(n, clock_);
      return;
    }
    reschedule_completion(n, clock_);
  }

  void close_episode(NodeState& n, double now) {
    if (!n.open_episode) return;
    n.open_episode->end = now;
    episodes_.push_back(*n.open_episode);
    emit(now, "episode_end", n.id, std::nullopt, std::to_string(n.open_episode->violations));
    n.open_episode.reset();
  }

  void switch_off(NodeState& n, double now) {
    advance(n, now);
    close_episode(n, now);
    n.status = NodeStatus::off;
    ++n.version;
    emit(now, "off", n.id, std::nullopt, "");
  }

  void on_deployment(std::size_t node) {
    auto& n = nodes_[node];
    if (n.status != NodeStatus::deploying) return;
    n.status = NodeStatus::active;
    n.activated_at = clock_;
    n.last_update = clock_;
    n.busy = n.resident_area = n.net_sent = n.net_recv = 0.0;
    n.samples_since_activation = 0;
    emit(clock_, "active", node, std::nullopt, "");
    if (n.migrate_from) {
      auto& src = nodes_[*n.migrate_from];
      if (src.powered()) {
        advance(src, clock_);
        std::size_t move = src.queue.size() / 2;
        std::vector<ResidentTask> moved;
        for (std::size_t k = 0; k < move; ++k) {
          moved.push_back(std::move(src.queue.back()));
          src.queue.pop_back();
        }
        std::reverse(moved.begin(), moved.end());
        for (auto& r : moved) {
          ++migrations_;
          emit(clock_, "migrate", node, r.task.id, "from=" + src.name);
          place(node, std::move(r), clock_);
        }
        if (move > 0) reschedule_completion(src, clock_);
      }
      n.migrate_from.reset();
    }
  }

  void on_monitor() {
    const double t = clock_;
    const double span = cfg_.monitor_interval;
    for (auto& n : nodes_) {
      if (!n.powered()) continue;
      advance(n, t);
      ResourceSample s;
      s.timestamp = static_cast<std::int64_t>(std::llround(t));
      s.node_id = n.name;
      s.cpu = std::clamp(100.0 * n.busy / span, 0.0, 100.0);
      s.ram = std::clamp(20.0 + 5.0 * n.resident_area / span, 0.0, 100.0);
      s.disk = std::clamp(30.0 + 0.5 * static_cast<double>(n.id) + 1e-4 * static_cast<double>(n.completed % 10000), 0.0, 100.0);
      s.net_sent = n.net_sent;
      s.net_recv = n.net_recv;
      monitoring_.nodes[n.name].push_back(std::move(s));
      ++n.samples_since_activation;
      n.busy = n.resident_area = n.net_sent = n.net_recv = 0.0;
    }
    conservation_.push_back({t, generated_, completed_, in_flight()});
    emit(t, "tick", std::nullopt, std::nullopt, std::to_string(active_count()));
    if (t + cfg_.monitor_interval <= cfg_.duration + 1e-9) push(t + cfg_.monitor_interval, Kind::monitor, 0, 0);
    if (controller_) controller_->on_tick(*this, t);
  }

  SimConfig cfg_;
  TaskSource source_;
  std::vector<NodeState> nodes_;
  std::map<std::string, std::size_t> slots_;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  std::uint64_t seq_ = 0;
  double clock_ = 0.0;
  TaskSpec next_task_;
  std::vector<ResidentTask> pending_;
  RoundRobin rr_;
  std::vector<double> weights_;
  std::vector<char> avoid_;
  Controller* controller_ = nullptr;
  std::vector<SimEvent>* sink_ = nullptr;
  bool finished_ = false;

  std::vector<FaultEpisode> episodes_;
  Trace monitoring_;
  std::vector<SimEvent> log_;
  std::vector<ConservationSample> conservation_;
  std::uint64_t generated_ = 0;
  std::uint64_t completed_ = 0;
  std::uint64_t task_faults_ = 0;
  std::uint64_t replications_ = 0;
  std::uint64_t decommissions_ = 0;
  std::uint64_t migrations_ = 0;
  std::uint64_t reserve_exhausted_ = 0;
};

/// Detects a process fault from a task's time on its node.
inline bool is_fault(double seconds_on_node, double bound = 1.0) { return seconds_on_node > bound; }

/// Folds completion records of one node (time, seconds on node) into fault
/// episodes: an episode opens at the first violating completion and closes
/// at the next compliant one; an episode still open at `end` closes there.
inline std::vector<FaultEpisode> fold_episodes(std::size_t node, const std::vector<std::pair<double, double>>& completions,
                                               double end, double bound = 1.0) {
  std::vector<FaultEpisode> out;
  std::optional<FaultEpisode> open;
  for (const auto& [t, secs] : completions) {
    if (is_fault(secs, bound)) {
      if (!open) open = FaultEpisode{node, t, t, 0};
      ++open->violations;
    } else if (open) {
      open->end = t;
      out.push_back(*open);
      open.reset();
    }
  }
  if (open) {
    open->end = end;
    out.push_back(*open);
  }
  return out;
}

inline std::string event_log_csv(const std::vector<SimEvent>& log) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed << "time,event,node,task,detail\n";
  for (const auto& e : log) {
    out << e.time << ',' << e.kind << ',' << (e.node ? node_name(*e.node) : "") << ',';
    if (e.task) out << *e.task;
    out << ',' << e.detail << '\n';
  }
  return out.str();
}

inline std::string episode_csv(const std::vector<FaultEpisode>& episodes) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed << "node,start,end,violations\n";
  for (const auto& e : sorted_by_start(episodes)) out << node_name(e.node) << ',' << e.start << ',' << e.end << ',' << e.violations << '\n';
  return out.str();
}

/// Totals, metrics and the per-hour series of a finished world.
inline RunReport make_report(const SimWorld& w, std::string scenario, std::string mode, MetricForm form = MetricForm::ratio) {
  RunReport r;
  r.scenario = std::move(scenario);
  r.mode = std::move(mode);
  r.scheduler = std::string(to_string(w.config().scheduler));
  r.duration = w.config().duration;
  r.metrics = ft_metrics(w.episodes(), 0.0, r.duration, form);
  r.tasks_generated = w.generated();
  r.tasks_completed = w.completed();
  r.tasks_in_flight = w.in_flight();
  r.task_faults = w.task_faults();
  r.replications = w.replications();
  r.decommissions = w.decommissions();
  r.migrations = w.migrations();
  r.reserve_exhausted = w.reserve_exhausted();
  r.node_on_seconds = w.node_on_seconds();
  auto hourly = windowed_ft_metrics(w.episodes(), 0.0, r.duration, 3600.0, form);
  std::map<std::int64_t, std::size_t> active_at;
  for (const auto& [id, series] : w.monitoring().nodes)
    for (const auto& s : series) ++active_at[(s.timestamp - 1) / 3600];
  for (std::size_t h = 0; h < hourly.size(); ++h) {
    auto it = active_at.find(static_cast<std::int64_t>(h));
    std::size_t ticks = static_cast<std::size_t>(std::llround(3600.0 / w.config().monitor_interval));
    std::size_t mean_active = it == active_at.end() ? 0 : (it->second + ticks / 2) / std::max<std::size_t>(1, ticks);
    r.hourly.push_back({3600.0 * static_cast<double>(h), hourly[h], mean_active});
  }
  return r;
}

}  // namespace ipft
