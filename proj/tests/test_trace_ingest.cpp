#include <gtest/gtest.h>

#include <random>

#include "ipft/trace_ingest.hpp"

using namespace ipft;

namespace {

std::vector<std::vector<double>> scalar_series(std::initializer_list<double> v) {
  std::vector<std::vector<double>> out;
  for (double x : v) out.push_back({x});
  return out;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an ipft::Error";
  return ErrorCode::config_invalid;
}

}  // namespace

TEST(ParseTrace, SingleRow) {
  auto t = parse_trace("timestamp,node_id,cpu,ram,disk,net_sent,net_recv\n0,n1,50,20,10,100,200\n");
  ASSERT_EQ(t.nodes.size(), 1u);
  const auto& s = t.nodes.at("n1").at(0);
  EXPECT_EQ(s.timestamp, 0);
  EXPECT_DOUBLE_EQ(s.cpu, 50);
  EXPECT_DOUBLE_EQ(s.ram, 20);
  EXPECT_DOUBLE_EQ(s.net_recv, 200);
}

TEST(ParseTrace, Errors) {
  EXPECT_EQ(code_of([] { parse_trace("timestamp,node_id,cpu,ram,disk,net_sent,net_recv\n"); }), ErrorCode::empty_trace);
  EXPECT_EQ(code_of([] { parse_trace(""); }), ErrorCode::empty_trace);
  EXPECT_EQ(code_of([] {
              parse_trace("timestamp,node_id,cpu,ram,disk,net_sent,net_recv\n10,a,1,1,1,1,1\n5,a,1,1,1,1,1\n");
            }),
            ErrorCode::non_monotone_timestamps);
  EXPECT_EQ(code_of([] { parse_trace("timestamp,node_id,cpu,ram,disk,net_sent,net_recv\n0,a,1,1,1,1\n"); }),
            ErrorCode::malformed_row);
  EXPECT_EQ(code_of([] { parse_trace("timestamp,node_id,cpu,ram,disk,net_sent,net_recv\n0,a,x,1,1,1,1\n"); }),
            ErrorCode::malformed_row);
  EXPECT_EQ(code_of([] { parse_trace("timestamp,node_id,cpu,ram,disk,net_sent,net_recv\n0,a,101,1,1,1,1\n"); }),
            ErrorCode::malformed_row);
}

TEST(ParseTrace, GroupsAndCountsRows) {
  auto t = parse_trace(
      "timestamp,node_id,cpu,ram,disk,net_sent,net_recv\r\n"
      "0,b,1,2,3,4,5\r\n0,a,1,2,3,4,5\r\n60,a,2,2,3,4,5\r\n60,b,2,2,3,4,5\r\n");
  EXPECT_EQ(t.sample_count(), 4u);
  EXPECT_EQ(t.nodes.at("a").size(), 2u);
  EXPECT_EQ(t.nodes.at("a")[1].timestamp, 60);
}

TEST(ParseTrace, WriteThenParseIsIdentity) {
  TraceProfile p;
  p.duration_seconds = 3600;
  auto t = synthesize_trace(p, 3);
  auto back = parse_trace(write_trace_csv(t));
  ASSERT_EQ(back.nodes.size(), t.nodes.size());
  for (const auto& [id, series] : t.nodes) {
    ASSERT_EQ(back.nodes.at(id).size(), series.size());
    for (std::size_t i = 0; i < series.size(); ++i)
      for (std::size_t m = 0; m < kMetricCount; ++m)
        EXPECT_NEAR(back.nodes.at(id)[i].values()[m], series[i].values()[m], 1e-6 * (1 + series[i].values()[m]));
  }
}

TEST(Scaler, MinMax) {
  std::vector<double> x{0, 5, 10};
  auto p = fit_scaler(std::span<const double>(x));
  auto y = apply_scaler(p, x);
  EXPECT_DOUBLE_EQ(y[0], 0.0);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
  EXPECT_DOUBLE_EQ(y[2], 1.0);
  EXPECT_FALSE(p.degenerate[0]);
}

TEST(Scaler, DegenerateRangeMapsToZero) {
  std::vector<double> x{7, 7, 7};
  auto p = fit_scaler(std::span<const double>(x));
  EXPECT_TRUE(p.degenerate[0]);
  for (double v : apply_scaler(p, x)) EXPECT_EQ(v, 0.0);
  for (double v : invert_scaler(p, apply_scaler(p, x))) EXPECT_EQ(v, 7.0);
}

TEST(Scaler, InvertApplyIdentity) {
  std::vector<double> x{3.2, 8.1};
  auto p = fit_scaler(std::span<const double>(x));
  auto back = invert_scaler(p, apply_scaler(p, x));
  EXPECT_NEAR(back[0], 3.2, 1e-12);
  EXPECT_NEAR(back[1], 8.1, 1e-12);
}

TEST(Scaler, EmptyIsRejected) {
  std::vector<double> x;
  EXPECT_THROW(fit_scaler(std::span<const double>(x)), Error);
}

TEST(MakeWindows, ScalarExample) {
  // The anchor at value 5 would only see one of its two horizon steps, so it
  // produces no sample.
  auto ds = make_windows(scalar_series({1, 2, 3, 4, 5, 6}), {}, {3, 2, 60});
  ASSERT_EQ(ds.size(), 2u);
  std::vector<std::vector<double>> inputs = {{1, 2, 3}, {2, 3, 4}};
  std::vector<double> targets = {5, 6};
  for (std::size_t i = 0; i < 2; ++i) {
    auto w = ds.local_window(i);
    EXPECT_EQ(std::vector<double>(w.begin(), w.end()), inputs[i]);
    EXPECT_EQ(ds.target_row(i)[0], targets[i]);
  }
}

TEST(MakeWindows, MinimalConfig) {
  auto ds = make_windows(scalar_series({9, 4}), {}, {1, 1, 60});
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.local_window(0)[0], 9);
  EXPECT_EQ(ds.target_row(0)[0], 4);
}

TEST(MakeWindows, TooShort) {
  EXPECT_EQ(code_of([] { make_windows(scalar_series({1, 2, 3}), {}, {3, 1, 60}); }), ErrorCode::series_too_short);
}

// Window count and every target against a direct slice-max recomputation.
TEST(MakeWindows, PropertyCountAndSliceMax) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> len(2, 60), lk(1, 8), hz(1, 8), dim(1, 3);
  std::uniform_real_distribution<double> val(-5, 5);
  for (int trial = 0; trial < 200; ++trial) {
    int L = lk(rng), H = hz(rng), n = len(rng), d = dim(rng);
    if (n < L + H) continue;
    std::vector<std::vector<double>> s(n, std::vector<double>(d));
    for (auto& row : s)
      for (auto& x : row) x = val(rng);
    auto ds = make_windows(s, {}, {L, H, 60});
    ASSERT_EQ(ds.size(), static_cast<std::size_t>(n - L - H + 1));
    for (std::size_t i = 0; i < ds.size(); ++i) {
      std::size_t anchor = i + L - 1;
      for (int k = 0; k < d; ++k) {
        double m = -1e300;
        for (std::size_t j = anchor + 1; j <= anchor + H; ++j) m = std::max(m, s[j][k]);
        EXPECT_EQ(ds.target_row(i)[k], m);
        EXPECT_EQ(ds.local_window(i)[(L - 1) * d + k], s[anchor][k]);
      }
    }
  }
}

TEST(MakeWindows, ScaleThenInvertReproducesDataset) {
  TraceProfile p;
  p.duration_seconds = 6 * 3600;
  auto trace = synthesize_trace(p, 5);
  auto sets = build_node_datasets(trace, {6, 4, 60});
  const auto& raw = sets.at("node00");
  ASSERT_FALSE(raw.empty());
  auto scaled = scale_dataset(raw, fit_dataset_scaler(raw));
  for (double v : scaled.local) {
    EXPECT_GE(v, -1e-12);
    EXPECT_LE(v, 1.0 + 1e-12);
  }
  auto back = unscale_dataset(scaled);
  for (std::size_t i = 0; i < raw.local.size(); ++i) EXPECT_NEAR(back.local[i], raw.local[i], 1e-9 * (1 + std::fabs(raw.local[i])));
  for (std::size_t i = 0; i < raw.target.size(); ++i) EXPECT_NEAR(back.target[i], raw.target[i], 1e-9 * (1 + std::fabs(raw.target[i])));
  for (std::size_t i = 0; i < raw.global.size(); ++i) EXPECT_NEAR(back.global[i], raw.global[i], 1e-9 * (1 + std::fabs(raw.global[i])));
}

TEST(GlobalFeatures, LayoutAndOneHots) {
  std::vector<std::optional<MetricVector>> slots(kFleetCapacity);
  slots[2] = MetricVector{50, 20, 10, 1, 2};
  for (std::int64_t ts = 0; ts < 8 * 86400; ts += 3 * 3671) {
    auto f = make_global_features(slots, ts);
    ASSERT_EQ(f.size(), global_feature_width());
    auto base = kFleetCapacity * kSlotWidth;
    double dow = 0, pod = 0;
    for (std::size_t i = 0; i < kDaysPerWeek; ++i) dow += f[base + i];
    for (std::size_t i = 0; i < kPartsOfDay; ++i) pod += f[base + kDaysPerWeek + i];
    EXPECT_EQ(dow, 1.0);
    EXPECT_EQ(pod, 1.0);
    EXPECT_EQ(f[2 * kSlotWidth + 0], 50);
    EXPECT_EQ(f[2 * kSlotWidth + kMetricCount], 1.0);
    EXPECT_EQ(f[3 * kSlotWidth + kMetricCount], 0.0);
  }
}

TEST(GlobalFeatures, Calendar) {
  EXPECT_EQ(day_of_week(0), 3u);  // Thursday
  EXPECT_EQ(day_of_week(4 * 86400), 0u);
  EXPECT_EQ(part_of_day(0), 0u);
  EXPECT_EQ(part_of_day(6 * 3600), 1u);
  EXPECT_EQ(part_of_day(12 * 3600 + 1), 2u);
  EXPECT_EQ(part_of_day(23 * 3600), 3u);
}

TEST(Synthesize, DiurnalPeakAndDeterminism) {
  TraceProfile p;
  p.duration_seconds = 86400;
  auto a = synthesize_trace(p, 42);
  auto b = synthesize_trace(p, 42);
  EXPECT_EQ(write_trace_csv(a), write_trace_csv(b));
  double peak = 0, trough = 0;
  int np = 0, nt = 0;
  for (const auto& s : a.nodes.at("node00")) {
    double h = hour_of_day(s.timestamp);
    if (h >= 11 && h < 13) peak += s.cpu, ++np;
    if (h >= 2 && h < 4) trough += s.cpu, ++nt;
  }
  EXPECT_GT(peak / np, trough / nt);
}

TEST(Synthesize, ZeroAmplitudeIsConstant) {
  TraceProfile p;
  for (auto& c : p.components) c.amplitude = 0;
  p.noise = 0;
  p.duration_seconds = 7200;
  auto t = synthesize_trace(p, 1);
  for (const auto& [id, series] : t.nodes)
    for (const auto& s : series) {
      EXPECT_EQ(s.cpu, p.baseline_cpu);
      EXPECT_EQ(s.ram, series.front().ram);
      EXPECT_EQ(s.net_sent, series.front().net_sent);
    }
}

TEST(Synthesize, InvalidProfile) {
  TraceProfile p;
  p.components[0].std_hours = 0;
  EXPECT_EQ(code_of([&] { synthesize_trace(p, 1); }), ErrorCode::invalid_profile);
}

TEST(NodeDatasets, GapsSplitRuns) {
  std::string csv = "timestamp,node_id,cpu,ram,disk,net_sent,net_recv\n";
  for (int t = 0; t < 10; ++t) csv += std::to_string(t * 60) + ",a,1,1,1,1,1\n";
  for (int t = 20; t < 30; ++t) csv += std::to_string(t * 60) + ",a,1,1,1,1,1\n";
  auto trace = parse_trace(csv);
  auto runs = contiguous_runs(trace.nodes.at("a"), 60);
  ASSERT_EQ(runs.size(), 2u);
  auto ds = build_node_datasets(trace, {4, 2, 60}).at("a");
  EXPECT_EQ(ds.size(), 2u * (10 - 4 - 2 + 1));
}
