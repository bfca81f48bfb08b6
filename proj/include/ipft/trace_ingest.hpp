#pragma once

// Monitoring traces: CSV ingestion, synthetic diurnal traces, min-max
// scaling and the (local window, global features, horizon-max) datasets the
// predictor trains on.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ipft/error.hpp"

namespace ipft {

inline constexpr std::size_t kMetricCount = 5;
inline constexpr std::size_t kFleetCapacity = 20;
inline constexpr std::size_t kDaysPerWeek = 7;
inline constexpr std::size_t kPartsOfDay = 4;

enum class Metric : std::size_t { cpu = 0, ram, disk, net_sent, net_recv };

inline constexpr std::array<std::string_view, kMetricCount> kMetricNames = {"cpu", "ram", "disk", "net_sent",
                                                                            "net_recv"};

using MetricVector = std::array<double, kMetricCount>;

struct ResourceSample {
  std::int64_t timestamp = 0;
  std::string node_id;
  double cpu = 0.0;
  double ram = 0.0;
  double disk = 0.0;
  double net_sent = 0.0;
  double net_recv = 0.0;

  MetricVector values() const { return {cpu, ram, disk, net_sent, net_recv}; }
};

using NodeSeries = std::vector<ResourceSample>;

/// Samples grouped per node; each series sorted by timestamp.
struct Trace {
  std::map<std::string, NodeSeries> nodes;

  std::size_t sample_count() const {
    std::size_t n = 0;
    for (const auto& [id, series] : nodes) n += series.size();
    return n;
  }
};

inline constexpr std::string_view kTraceHeader = "timestamp,node_id,cpu,ram,disk,net_sent,net_recv";

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

template <class T>
std::optional<T> parse_number(std::string_view s) {
  T value{};
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(value)) return std::nullopt;
  }
  return value;
}

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace detail

/// Parses the `timestamp,node_id,cpu,ram,disk,net_sent,net_recv` format.
inline Trace parse_trace(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  Trace trace;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto view = detail::trim(line);
    if (!have_header) {
      if (view.empty()) continue;
      if (view.size() >= 3 && static_cast<unsigned char>(view[0]) == 0xEF) view.remove_prefix(3);  // BOM
      if (view != kTraceHeader) fail(ErrorCode::malformed_row, "line 1: expected header '" + std::string(kTraceHeader) + "'");
      have_header = true;
      continue;
    }
    if (view.empty()) continue;
    auto fields = detail::split(view, ',');
    auto where = "line " + std::to_string(line_no);
    if (fields.size() != 7) fail(ErrorCode::malformed_row, where + ": expected 7 fields, got " + std::to_string(fields.size()));
    ResourceSample s;
    auto ts = detail::parse_number<std::int64_t>(fields[0]);
    if (!ts) fail(ErrorCode::malformed_row, where + ": non-numeric timestamp");
    s.timestamp = *ts;
    if (fields[1].empty()) fail(ErrorCode::malformed_row, where + ": empty node_id");
    s.node_id = std::string(fields[1]);
    std::array<double*, kMetricCount> slots = {&s.cpu, &s.ram, &s.disk, &s.net_sent, &s.net_recv};
    for (std::size_t m = 0; m < kMetricCount; ++m) {
      auto v = detail::parse_number<double>(fields[2 + m]);
      if (!v) fail(ErrorCode::malformed_row, where + ": non-numeric " + std::string(kMetricNames[m]));
      bool percent = m < 3;
      if (*v < 0.0 || (percent && *v > 100.0))
        fail(ErrorCode::malformed_row, where + ": " + std::string(kMetricNames[m]) + " out of range");
      *slots[m] = *v;
    }
    auto& series = trace.nodes[s.node_id];
    if (!series.empty() && s.timestamp <= series.back().timestamp)
      fail(ErrorCode::non_monotone_timestamps, where + ": node " + s.node_id + " timestamp " +
                                                   std::to_string(s.timestamp) + " after " +
                                                   std::to_string(series.back().timestamp));
    series.push_back(std::move(s));
    ++rows;
  }
  if (!have_header) fail(ErrorCode::empty_trace, "no header");
  if (rows == 0) fail(ErrorCode::empty_trace, "header only");
  return trace;
}

inline Trace parse_trace(std::string_view csv) {
  std::istringstream in{std::string(csv)};
  return parse_trace(in);
}

/// Rows ordered by (timestamp, node_id), which interleaves nodes the way a
/// monitoring scrape would.
inline std::string write_trace_csv(const Trace& trace) {
  std::vector<const ResourceSample*> rows;
  rows.reserve(trace.sample_count());
  for (const auto& [id, series] : trace.nodes)
    for (const auto& s : series) rows.push_back(&s);
  std::stable_sort(rows.begin(), rows.end(), [](const auto* a, const auto* b) {
    return a->timestamp != b->timestamp ? a->timestamp < b->timestamp : a->node_id < b->node_id;
  });
  std::ostringstream out;
  out.precision(10);
  out << kTraceHeader << '\n';
  for (const auto* s : rows)
    out << s->timestamp << ',' << s->node_id << ',' << s->cpu << ',' << s->ram << ',' << s->disk << ','
        << s->net_sent << ',' << s->net_recv << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Min-max scaling

/// Per-dimension min/max from the training split. A dimension whose range is
/// empty is flagged degenerate and scales to a constant 0.
struct ScalerParams {
  std::vector<double> min;
  std::vector<double> max;
  std::vector<bool> degenerate;

  std::size_t dims() const { return min.size(); }

  double apply(std::size_t dim, double v) const {
    if (degenerate[dim]) return 0.0;
    return (v - min[dim]) / (max[dim] - min[dim]);
  }
  double invert(std::size_t dim, double v) const {
    if (degenerate[dim]) return min[dim];
    return min[dim] + v * (max[dim] - min[dim]);
  }
};

inline ScalerParams fit_scaler(std::span<const double> series) {
  if (series.empty()) fail(ErrorCode::empty_dataset, "fit_scaler on empty series");
  auto [lo, hi] = std::minmax_element(series.begin(), series.end());
  return ScalerParams{{*lo}, {*hi}, {*hi == *lo}};
}

inline ScalerParams fit_scaler(std::span<const MetricVector> rows) {
  if (rows.empty()) fail(ErrorCode::empty_dataset, "fit_scaler on empty series");
  ScalerParams p;
  p.min.assign(kMetricCount, 0.0);
  p.max.assign(kMetricCount, 0.0);
  p.degenerate.assign(kMetricCount, false);
  for (std::size_t m = 0; m < kMetricCount; ++m) {
    double lo = rows[0][m], hi = rows[0][m];
    for (const auto& r : rows) {
      lo = std::min(lo, r[m]);
      hi = std::max(hi, r[m]);
    }
    p.min[m] = lo;
    p.max[m] = hi;
    p.degenerate[m] = hi == lo;
  }
  return p;
}

inline std::vector<double> apply_scaler(const ScalerParams& p, std::span<const double> series, std::size_t dim = 0) {
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) out[i] = p.apply(dim, series[i]);
  return out;
}

inline std::vector<double> invert_scaler(const ScalerParams& p, std::span<const double> series, std::size_t dim = 0) {
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) out[i] = p.invert(dim, series[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Global features
//
// Layout: capacity slots of (cpu, ram, disk, net_sent, net_recv, active flag),
// then day-of-week one-hot (Monday first), then part-of-day one-hot with four
// 6-hour buckets starting at 00:00 (night, morning, afternoon, evening).

inline constexpr std::size_t kSlotWidth = kMetricCount + 1;

inline constexpr std::size_t global_feature_width(std::size_t capacity = kFleetCapacity) {
  return capacity * kSlotWidth + kDaysPerWeek + kPartsOfDay;
}

inline std::size_t day_of_week(std::int64_t timestamp) {
  // 1970-01-01 was a Thursday (index 3 with Monday = 0).
  auto days = detail::floor_div(timestamp, 86400);
  return static_cast<std::size_t>(((days + 3) % 7 + 7) % 7);
}

inline double hour_of_day(std::int64_t timestamp) {
  auto secs = timestamp - detail::floor_div(timestamp, 86400) * 86400;
  return static_cast<double>(secs) / 3600.0;
}

inline std::size_t part_of_day(std::int64_t timestamp) {
  return std::min<std::size_t>(static_cast<std::size_t>(hour_of_day(timestamp) / 6.0), kPartsOfDay - 1);
}

/// `slots[i]` holds the current utilization of fleet slot i, or nullopt when
/// the slot is inactive.
inline std::vector<double> make_global_features(std::span<const std::optional<MetricVector>> slots,
                                                std::int64_t timestamp, std::size_t capacity = kFleetCapacity) {
  if (slots.size() > capacity) fail(ErrorCode::shape_mismatch, "more fleet slots than capacity");
  std::vector<double> f(global_feature_width(capacity), 0.0);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (!slots[i]) continue;
    for (std::size_t m = 0; m < kMetricCount; ++m) f[i * kSlotWidth + m] = (*slots[i])[m];
    f[i * kSlotWidth + kMetricCount] = 1.0;
  }
  auto base = capacity * kSlotWidth;
  f[base + day_of_week(timestamp)] = 1.0;
  f[base + kDaysPerWeek + part_of_day(timestamp)] = 1.0;
  return f;
}

/// Scales the slot metric entries with the per-metric scaler; flags and
/// calendar one-hots are already in [0,1].
inline void scale_global_features(std::span<double> features, const ScalerParams& metric_scaler,
                                  std::size_t capacity = kFleetCapacity) {
  for (std::size_t i = 0; i < capacity; ++i) {
    if (features[i * kSlotWidth + kMetricCount] == 0.0) continue;
    for (std::size_t m = 0; m < kMetricCount; ++m)
      features[i * kSlotWidth + m] = metric_scaler.apply(m, features[i * kSlotWidth + m]);
  }
}

// ---------------------------------------------------------------------------
// Windowed datasets

struct WindowConfig {
  int lookback = 8;
  int horizon = 10;
  int step_seconds = 60;
};

/// Samples stored row-major: local is N x lookback x local_dim, global is
/// N x global_dim, target is N x local_dim.
struct WindowedDataset {
  std::size_t lookback = 0;
  std::size_t local_dim = 0;
  std::size_t global_dim = 0;
  std::vector<double> local;
  std::vector<double> global;
  std::vector<double> target;
  std::vector<std::int64_t> anchor_time;
  std::optional<ScalerParams> scaler;

  std::size_t size() const { return local_dim == 0 || lookback == 0 ? 0 : local.size() / (lookback * local_dim); }
  bool empty() const { return size() == 0; }

  std::span<const double> local_window(std::size_t i) const {
    return {local.data() + i * lookback * local_dim, lookback * local_dim};
  }
  std::span<const double> global_features(std::size_t i) const {
    return {global.data() + i * global_dim, global_dim};
  }
  std::span<const double> target_row(std::size_t i) const { return {target.data() + i * local_dim, local_dim}; }

  void append(const WindowedDataset& other) {
    if (empty()) {
      lookback = other.lookback;
      local_dim = other.local_dim;
      global_dim = other.global_dim;
    } else if (other.lookback != lookback || other.local_dim != local_dim || other.global_dim != global_dim) {
      fail(ErrorCode::shape_mismatch, "appending datasets of different shape");
    }
    local.insert(local.end(), other.local.begin(), other.local.end());
    global.insert(global.end(), other.global.begin(), other.global.end());
    target.insert(target.end(), other.target.begin(), other.target.end());
    anchor_time.insert(anchor_time.end(), other.anchor_time.begin(), other.anchor_time.end());
  }

  /// Rows [begin, end) as a new dataset.
  WindowedDataset slice(std::size_t begin, std::size_t end) const {
    WindowedDataset out;
    out.lookback = lookback;
    out.local_dim = local_dim;
    out.global_dim = global_dim;
    out.scaler = scaler;
    auto lw = lookback * local_dim;
    out.local.assign(local.begin() + begin * lw, local.begin() + end * lw);
    out.global.assign(global.begin() + begin * global_dim, global.begin() + end * global_dim);
    out.target.assign(target.begin() + begin * local_dim, target.begin() + end * local_dim);
    if (!anchor_time.empty()) out.anchor_time.assign(anchor_time.begin() + begin, anchor_time.begin() + end);
    return out;
  }
};

/// One sample per anchor t in [max(L-1, min_anchor), n-H-1]: the local input
/// is steps t-L+1..t, the global input is the global vector at t and the
/// target is the per-dimension max over steps t+1..t+H. `global_series` may
/// be empty (global_dim 0). `timestamps`, when given, labels the anchors.
inline WindowedDataset make_windows(const std::vector<std::vector<double>>& series,
                                    const std::vector<std::vector<double>>& global_series, const WindowConfig& cfg,
                                    std::size_t min_anchor = 0, std::span<const std::int64_t> timestamps = {}) {
  if (cfg.lookback < 1 || cfg.horizon < 1) fail(ErrorCode::invalid_hyperparams, "lookback and horizon must be >= 1");
  const auto n = series.size();
  const auto lookback = static_cast<std::size_t>(cfg.lookback);
  const auto horizon = static_cast<std::size_t>(cfg.horizon);
  if (n < lookback + horizon)
    fail(ErrorCode::series_too_short, "series length " + std::to_string(n) + " < lookback + horizon " +
                                          std::to_string(lookback + horizon));
  if (!global_series.empty() && global_series.size() != n)
    fail(ErrorCode::shape_mismatch, "global series length differs from local series");
  WindowedDataset ds;
  ds.lookback = lookback;
  ds.local_dim = series.front().size();
  ds.global_dim = global_series.empty() ? 0 : global_series.front().size();
  const auto first = std::max(lookback - 1, min_anchor);
  for (std::size_t t = first; t + horizon < n; ++t) {
    for (std::size_t k = t + 1 - lookback; k <= t; ++k) {
      if (series[k].size() != ds.local_dim) fail(ErrorCode::shape_mismatch, "ragged local series");
      ds.local.insert(ds.local.end(), series[k].begin(), series[k].end());
    }
    if (ds.global_dim) ds.global.insert(ds.global.end(), global_series[t].begin(), global_series[t].end());
    for (std::size_t d = 0; d < ds.local_dim; ++d) {
      double m = series[t + 1][d];
      for (std::size_t k = t + 2; k <= t + horizon; ++k) m = std::max(m, series[k][d]);
      ds.target.push_back(m);
    }
    ds.anchor_time.push_back(timestamps.empty() ? static_cast<std::int64_t>(t) : timestamps[t]);
  }
  return ds;
}

/// Fits a per-metric scaler on the dataset's local windows.
inline ScalerParams fit_dataset_scaler(const WindowedDataset& ds) {
  if (ds.local_dim != kMetricCount) fail(ErrorCode::shape_mismatch, "dataset is not per-metric");
  std::vector<MetricVector> rows(ds.local.size() / kMetricCount);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t m = 0; m < kMetricCount; ++m) rows[i][m] = ds.local[i * kMetricCount + m];
  return fit_scaler(std::span<const MetricVector>(rows));
}

/// Scales local windows, targets and the slot part of the global features.
inline WindowedDataset scale_dataset(WindowedDataset ds, const ScalerParams& scaler) {
  if (ds.scaler) fail(ErrorCode::shape_mismatch, "dataset already scaled");
  for (std::size_t i = 0; i < ds.local.size(); ++i) ds.local[i] = scaler.apply(i % ds.local_dim, ds.local[i]);
  for (std::size_t i = 0; i < ds.target.size(); ++i) ds.target[i] = scaler.apply(i % ds.local_dim, ds.target[i]);
  if (ds.global_dim == global_feature_width()) {
    for (std::size_t i = 0; i < ds.size(); ++i)
      scale_global_features({ds.global.data() + i * ds.global_dim, ds.global_dim}, scaler);
  }
  ds.scaler = scaler;
  return ds;
}

inline WindowedDataset unscale_dataset(WindowedDataset ds) {
  if (!ds.scaler) return ds;
  const auto& s = *ds.scaler;
  for (std::size_t i = 0; i < ds.local.size(); ++i) ds.local[i] = s.invert(i % ds.local_dim, ds.local[i]);
  for (std::size_t i = 0; i < ds.target.size(); ++i) ds.target[i] = s.invert(i % ds.local_dim, ds.target[i]);
  if (ds.global_dim == global_feature_width()) {
    for (std::size_t i = 0; i < ds.size(); ++i) {
      auto* g = ds.global.data() + i * ds.global_dim;
      for (std::size_t slot = 0; slot < kFleetCapacity; ++slot) {
        if (g[slot * kSlotWidth + kMetricCount] == 0.0) continue;
        for (std::size_t m = 0; m < kMetricCount; ++m) g[slot * kSlotWidth + m] = s.invert(m, g[slot * kSlotWidth + m]);
      }
    }
  }
  ds.scaler.reset();
  return ds;
}

// ---------------------------------------------------------------------------
// Fleet-wide dataset construction

/// Node ids sorted lexicographically map to global feature slots.
inline std::map<std::string, std::size_t> slot_assignment(const Trace& trace, std::size_t capacity = kFleetCapacity) {
  std::map<std::string, std::size_t> slots;
  for (const auto& [id, series] : trace.nodes) {
    if (slots.size() == capacity) fail(ErrorCode::shape_mismatch, "trace has more nodes than fleet capacity");
    slots.emplace(id, slots.size());
  }
  return slots;
}

/// Global feature vector at every timestamp present in the trace.
/// `fixed_slots`, when given, overrides the lexicographic assignment (a
/// fleet whose nodes own fixed slots whether or not they appear).
inline std::map<std::int64_t, std::vector<double>> global_timeline(
    const Trace& trace, std::size_t capacity = kFleetCapacity,
    const std::map<std::string, std::size_t>* fixed_slots = nullptr) {
  auto slots = fixed_slots ? *fixed_slots : slot_assignment(trace, capacity);
  std::map<std::int64_t, std::vector<std::optional<MetricVector>>> state;
  for (const auto& [id, series] : trace.nodes) {
    for (const auto& s : series) {
      auto& row = state[s.timestamp];
      if (row.empty()) row.resize(capacity);
      row[slots.at(id)] = s.values();
    }
  }
  std::map<std::int64_t, std::vector<double>> out;
  for (const auto& [ts, row] : state) out.emplace(ts, make_global_features(row, ts, capacity));
  return out;
}

/// Splits a node series into runs of samples spaced exactly step_seconds
/// apart (a node that was switched off and on again yields two runs).
inline std::vector<std::span<const ResourceSample>> contiguous_runs(const NodeSeries& series, int step_seconds) {
  std::vector<std::span<const ResourceSample>> runs;
  std::size_t start = 0;
  for (std::size_t i = 1; i <= series.size(); ++i) {
    if (i == series.size() || series[i].timestamp - series[i - 1].timestamp != step_seconds) {
      runs.emplace_back(series.data() + start, i - start);
      start = i;
    }
  }
  return runs;
}

/// Raw (unscaled) windowed dataset per node. `min_anchor` offsets the first
/// anchor within each contiguous run so that datasets built with different
/// lookbacks share targets.
inline std::map<std::string, WindowedDataset> build_node_datasets(
    const Trace& trace, const WindowConfig& cfg, std::size_t min_anchor = 0,
    const std::map<std::string, std::size_t>* fixed_slots = nullptr) {
  auto timeline = global_timeline(trace, kFleetCapacity, fixed_slots);
  std::map<std::string, WindowedDataset> out;
  for (const auto& [id, series] : trace.nodes) {
    WindowedDataset all;
    all.lookback = static_cast<std::size_t>(cfg.lookback);
    all.local_dim = kMetricCount;
    all.global_dim = global_feature_width();
    for (auto run : contiguous_runs(series, cfg.step_seconds)) {
      if (run.size() < static_cast<std::size_t>(cfg.lookback + cfg.horizon) ||
          run.size() <= min_anchor + static_cast<std::size_t>(cfg.horizon))
        continue;
      std::vector<std::vector<double>> local;
      std::vector<std::vector<double>> global;
      std::vector<std::int64_t> ts;
      for (const auto& s : run) {
        auto v = s.values();
        local.emplace_back(v.begin(), v.end());
        global.push_back(timeline.at(s.timestamp));
        ts.push_back(s.timestamp);
      }
      all.append(make_windows(local, global, cfg, min_anchor, ts));
    }
    out.emplace(id, std::move(all));
  }
  return out;
}

/// All node datasets merged into one, rows ordered by anchor time (node
/// order breaks ties), so a chronological split is a split in time for the
/// whole fleet.
inline WindowedDataset pool_by_time(const std::map<std::string, WindowedDataset>& sets) {
  struct Row {
    std::int64_t t;
    const WindowedDataset* ds;
    std::size_t i;
  };
  std::vector<Row> rows;
  for (const auto& [id, ds] : sets)
    for (std::size_t i = 0; i < ds.size(); ++i) rows.push_back({ds.anchor_time.empty() ? 0 : ds.anchor_time[i], &ds, i});
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.t < b.t; });
  WindowedDataset out;
  for (const auto& [id, ds] : sets)
    if (!ds.empty()) {
      out.lookback = ds.lookback;
      out.local_dim = ds.local_dim;
      out.global_dim = ds.global_dim;
      break;
    }
  for (const auto& r : rows) {
    if (r.ds->lookback != out.lookback || r.ds->local_dim != out.local_dim || r.ds->global_dim != out.global_dim)
      fail(ErrorCode::shape_mismatch, "pooling datasets of different shape");
    auto w = r.ds->local_window(r.i);
    auto g = r.ds->global_features(r.i);
    auto y = r.ds->target_row(r.i);
    out.local.insert(out.local.end(), w.begin(), w.end());
    out.global.insert(out.global.end(), g.begin(), g.end());
    out.target.insert(out.target.end(), y.begin(), y.end());
    out.anchor_time.push_back(r.t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic traces

struct MixtureComponent {
  double mean_hour = 12.0;
  double std_hours = 2.0;
  double amplitude = 40.0;  // cpu percentage points at the component peak
};

struct TraceProfile {
  std::vector<MixtureComponent> components{{12.0, 1.5, 45.0}, {19.0, 2.0, 25.0}, {9.0, 1.0, 15.0}};
  double baseline_cpu = 10.0;
  double noise = 4.0;  // std of additive cpu noise
  int nodes = 5;
  std::int64_t start = 0;
  std::int64_t duration_seconds = 3 * 86400;
  int step_seconds = 60;
  double node_spread = 0.25;  // per-node load multiplier spread
};

inline void validate(const TraceProfile& p) {
  for (const auto& c : p.components)
    if (!(c.std_hours > 0.0)) fail(ErrorCode::invalid_profile, "mixture component std must be positive");
  if (p.nodes < 1 || static_cast<std::size_t>(p.nodes) > kFleetCapacity)
    fail(ErrorCode::invalid_profile, "node count outside [1, fleet capacity]");
  if (p.step_seconds < 1) fail(ErrorCode::invalid_profile, "step must be positive");
  if (p.duration_seconds < 0) fail(ErrorCode::invalid_profile, "negative duration");
  if (p.noise < 0.0) fail(ErrorCode::invalid_profile, "negative noise");
}

/// Circular gaussian bump over the 24 h clock.
inline double diurnal_bump(double hour, const MixtureComponent& c) {
  double d = std::fabs(hour - c.mean_hour);
  d = std::min(d, 24.0 - d);
  return c.amplitude * std::exp(-0.5 * d * d / (c.std_hours * c.std_hours));
}

inline double diurnal_level(double hour, std::span<const MixtureComponent> components) {
  double v = 0.0;
  for (const auto& c : components) v += diurnal_bump(hour, c);
  return v;
}

/// Per-node monitoring series from a gaussian-mixture diurnal profile.
/// Nodes are named node00, node01, ...
inline Trace synthesize_trace(const TraceProfile& profile, std::uint64_t seed) {
  validate(profile);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Trace trace;
  std::vector<double> load_scale(profile.nodes);
  for (auto& s : load_scale) s = 1.0 + profile.node_spread * (2.0 * unit(rng) - 1.0);
  const auto steps = profile.duration_seconds / profile.step_seconds;
  for (int n = 0; n < profile.nodes; ++n) {
    char name[16];
    std::snprintf(name, sizeof name, "node%02d", n);
    auto& series = trace.nodes[name];
    series.reserve(static_cast<std::size_t>(steps));
    double disk = 30.0 + 10.0 * unit(rng);
    for (std::int64_t k = 0; k < steps; ++k) {
      ResourceSample s;
      s.timestamp = profile.start + k * profile.step_seconds;
      s.node_id = name;
      double level = profile.baseline_cpu + load_scale[n] * diurnal_level(hour_of_day(s.timestamp), profile.components);
      s.cpu = std::clamp(level + profile.noise * gauss(rng), 0.0, 100.0);
      s.ram = std::clamp(20.0 + 0.5 * level + 0.5 * profile.noise * gauss(rng), 0.0, 100.0);
      disk = std::clamp(disk + 0.02 * profile.noise * gauss(rng), 0.0, 100.0);
      s.disk = disk;
      s.net_sent = std::max(0.0, 800.0 * level * (1.0 + 0.05 * profile.noise * gauss(rng) / 4.0));
      s.net_recv = std::max(0.0, 1200.0 * level * (1.0 + 0.05 * profile.noise * gauss(rng) / 4.0));
      series.push_back(std::move(s));
    }
  }
  return trace;
}

}  // namespace ipft
