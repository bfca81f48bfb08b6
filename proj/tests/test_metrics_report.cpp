#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "ipft/metrics_report.hpp"

using namespace ipft;

namespace {

FaultEpisode ep(double s, double e, std::size_t node = 0) { return {node, s, e, 1}; }

// Unit-cell enumeration over integer time: uncovered cells between
// covered runs, summed, over (episodes + 1).
double mttf_by_cells(const std::vector<FaultEpisode>& eps, int duration) {
  std::vector<char> covered(static_cast<std::size_t>(duration), 0);
  for (const auto& e : eps)
    for (int c = static_cast<int>(e.start); c < static_cast<int>(e.end); ++c) covered[static_cast<std::size_t>(c)] = 1;
  int free_cells = static_cast<int>(std::count(covered.begin(), covered.end(), 0));
  return static_cast<double>(free_cells) / static_cast<double>(eps.size() + 1);
}

struct TableRow {
  double mttf, mttr, reliability, maintainability;
};

// Printed comparison table of the reference run.
const TableRow kTable[] = {
    {2.864, 19.657, 0.741, 0.048}, {9.506, 3.343, 0.904, 0.230},  {8.733, 36.169, 0.897, 0.026},
    {8.919, 5.656, 0.899, 0.150},  {3.721, 24.239, 0.788, 0.039}, {13.309, 7.425, 0.930, 0.118},
};

}  // namespace

TEST(Mttf, NoEpisodesIsDuration) { EXPECT_DOUBLE_EQ(mttf({}, 1000.0), 1000.0); }

TEST(Mttf, HandEnumeratedIntervals) {
  std::vector<FaultEpisode> e{ep(10, 12), ep(30, 31)};
  EXPECT_NEAR(mttf(e, 40.0), 37.0 / 3.0, 1e-12);
}

TEST(Mttf, BackToBackEpisodesCountZeroGap) {
  std::vector<FaultEpisode> e{ep(5, 6), ep(6, 8)};
  // intervals 5, 0, 2
  EXPECT_NEAR(mttf(e, 10.0), 7.0 / 3.0, 1e-12);
}

TEST(Mttf, PoolsAcrossNodes) {
  std::vector<FaultEpisode> e{ep(10, 20, 0), ep(15, 25, 1), ep(40, 41, 2)};
  EXPECT_NEAR(mttf(e, 50.0), mttf_by_cells(e, 50), 1e-12);
}

TEST(Mttf, MatchesCellEnumerationOnRandomLogs) {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> start(0, 190), len(0, 8), count(0, 12);
  for (int rep = 0; rep < 300; ++rep) {
    std::vector<FaultEpisode> e;
    int n = count(rng);
    for (int k = 0; k < n; ++k) {
      int s = start(rng);
      e.push_back(ep(s, s + len(rng), static_cast<std::size_t>(k % 3)));
    }
    EXPECT_NEAR(mttf(e, 200.0), mttf_by_cells(e, 200), 1e-9);
  }
}

TEST(Mttf, PermutationInvariant) {
  std::vector<FaultEpisode> e{ep(3, 4), ep(50, 58), ep(20, 21), ep(21, 30), ep(70, 71)};
  double m0 = mttf(e, 100.0), r0 = mttr(e);
  std::mt19937_64 rng(4);
  for (int k = 0; k < 20; ++k) {
    std::shuffle(e.begin(), e.end(), rng);
    EXPECT_DOUBLE_EQ(mttf(e, 100.0), m0);
    EXPECT_DOUBLE_EQ(mttr(e), r0);
  }
}

TEST(Mttr, Examples) {
  EXPECT_DOUBLE_EQ(mttr(std::vector<FaultEpisode>{ep(0, 2), ep(5, 6)}), 1.5);
  EXPECT_DOUBLE_EQ(mttr({}), 0.0);
  EXPECT_DOUBLE_EQ(mttr(std::vector<FaultEpisode>{ep(100, 112)}), 12.0);
}

TEST(Reliability, ReproducesPrintedTable) {
  for (const auto& row : kTable) {
    EXPECT_NEAR(reliability(row.mttf), row.reliability, 0.03) << row.mttf;
    EXPECT_NEAR(maintainability(row.mttr), row.maintainability, 0.03) << row.mttr;
    EXPECT_NEAR(reliability(row.mttf), row.mttf / (row.mttf + 1.0), 1e-15);
    EXPECT_NEAR(maintainability(row.mttr), 1.0 / (1.0 + row.mttr), 1e-15);
  }
}

TEST(Reliability, ExponentialForm) {
  EXPECT_NEAR(reliability(9.506, MetricForm::exponential), std::exp(-1.0 / 9.506), 1e-15);
  EXPECT_NEAR(maintainability(19.657, MetricForm::exponential), 1.0 - std::exp(-1.0 / 19.657), 1e-15);
  EXPECT_NEAR(maintainability(19.657, MetricForm::exponential), 0.0496, 1e-4);
}

TEST(Reliability, LimitsAndMonotonicity) {
  for (auto form : {MetricForm::ratio, MetricForm::exponential}) {
    EXPECT_DOUBLE_EQ(reliability(std::numeric_limits<double>::infinity(), form), 1.0);
    EXPECT_DOUBLE_EQ(maintainability(0.0, form), 1.0);
    EXPECT_GT(reliability(1e9, form), 0.999999);
    double prev_r = -1.0, prev_m = 2.0;
    for (double x = 0.1; x < 100.0; x *= 1.3) {
      double r = reliability(x, form), m = maintainability(x, form);
      EXPECT_GT(r, prev_r);
      EXPECT_LT(m, prev_m);
      EXPECT_GE(r, 0.0);
      EXPECT_LE(r, 1.0);
      EXPECT_GE(m, 0.0);
      EXPECT_LE(m, 1.0);
      prev_r = r;
      prev_m = m;
    }
  }
}

TEST(FtMetrics, ZeroEpisodeConvention) {
  auto m = ft_metrics({}, 0.0, 500.0);
  EXPECT_DOUBLE_EQ(m.mttf, 500.0);
  EXPECT_DOUBLE_EQ(m.mttr, 0.0);
  EXPECT_DOUBLE_EQ(m.reliability, 1.0);
  EXPECT_DOUBLE_EQ(m.maintainability, 1.0);
}

TEST(FtMetrics, WindowsClipEpisodes) {
  std::vector<FaultEpisode> e{ep(50, 70), ep(150, 151)};
  auto w = windowed_ft_metrics(e, 0.0, 200.0, 60.0);
  ASSERT_EQ(w.size(), 4u);
  EXPECT_EQ(w[0].episodes, 1u);
  EXPECT_DOUBLE_EQ(w[0].mttr, 10.0);
  EXPECT_EQ(w[1].episodes, 1u);
  EXPECT_DOUBLE_EQ(w[1].mttr, 10.0);
  EXPECT_EQ(w[2].episodes, 1u);
  EXPECT_EQ(w[3].episodes, 0u);
  EXPECT_DOUBLE_EQ(w[3].mttf, 20.0);
}

// ---------------------------------------------------------------------------

TEST(Prediction, PerfectIsZero) {
  std::vector<double> p{1, 2, 3, 4};
  auto m = prediction_metrics(p, p, 2);
  EXPECT_DOUBLE_EQ(m.aggregate_rmse, 0.0);
  EXPECT_DOUBLE_EQ(m.aggregate_mae, 0.0);
}

TEST(Prediction, SmallExample) {
  std::vector<double> p{2, 4}, t{1, 5};
  auto m = prediction_metrics(p, t, 1);
  EXPECT_DOUBLE_EQ(m.aggregate_rmse, 1.0);
  EXPECT_DOUBLE_EQ(m.aggregate_mae, 1.0);
}

TEST(Prediction, RmseAtLeastMae) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> p(30), t(30);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = g(rng), t[i] = g(rng);
    auto m = prediction_metrics(p, t, 3);
    EXPECT_GE(m.aggregate_rmse, m.aggregate_mae - 1e-12);
    for (std::size_t d = 0; d < 3; ++d) EXPECT_GE(m.rmse[d], m.mae[d] - 1e-12);
  }
}

TEST(Prediction, ShapeErrors) {
  std::vector<double> a{1, 2, 3}, b{1, 2};
  EXPECT_THROW(prediction_metrics(a, b, 1), Error);
  EXPECT_THROW(prediction_metrics(a, a, 2), Error);
  EXPECT_THROW(prediction_metrics({}, {}, 1), Error);
}

// ---------------------------------------------------------------------------

namespace {

RunReport sample_report(std::string mode, std::string sched) {
  RunReport r;
  r.scenario = "desk";
  r.mode = std::move(mode);
  r.scheduler = std::move(sched);
  std::vector<FaultEpisode> e{ep(10, 12.3), ep(30.1, 31), ep(77.7, 80.05)};
  r.metrics = ft_metrics(e, 0.0, 100.0);
  r.duration = 100.0;
  r.tasks_generated = 1234;
  r.tasks_completed = 1230;
  r.tasks_in_flight = 4;
  r.task_faults = 17;
  r.replications = 3;
  r.decommissions = 2;
  r.migrations = 9;
  r.node_on_seconds = 812.5;
  r.lower_threshold = 0.15;
  r.upper_threshold = 0.7;
  auto w = windowed_ft_metrics(e, 0.0, 100.0, 50.0);
  for (std::size_t i = 0; i < w.size(); ++i) r.hourly.push_back({50.0 * static_cast<double>(i), w[i], 3 + i});
  return r;
}

}  // namespace

TEST(Report, JsonRoundTripIsExact) {
  auto r = sample_report("IPFT", "MaxMin");
  auto text = report_to_json(r).dump();
  auto back = report_from_json(nlohmann::json::parse(text));
  EXPECT_EQ(back.metrics, r.metrics);
  EXPECT_EQ(back.scenario, r.scenario);
  EXPECT_EQ(back.tasks_generated, r.tasks_generated);
  EXPECT_EQ(back.migrations, r.migrations);
  ASSERT_EQ(back.hourly.size(), r.hourly.size());
  for (std::size_t i = 0; i < r.hourly.size(); ++i) {
    EXPECT_EQ(back.hourly[i].metrics, r.hourly[i].metrics);
    EXPECT_EQ(back.hourly[i].active_nodes, r.hourly[i].active_nodes);
  }
  EXPECT_EQ(report_to_json(back).dump(), text);
}

TEST(Report, RejectsForeignJson) {
  EXPECT_THROW(report_from_json(nlohmann::json{{"schema", "other"}}), Error);
}

TEST(Report, ComparisonTableLayout) {
  std::vector<RunReport> rows;
  for (auto s : {"RR", "MinMin", "MaxMin"})
    for (auto m : {"RFT", "IPFT"}) rows.push_back(sample_report(m, s));
  auto csv = comparison_csv(rows);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), comparison_csv_header());
  EXPECT_NE(csv.find("desk,RFT,RR,"), std::string::npos);
  EXPECT_NE(csv.find("desk,IPFT,MaxMin,"), std::string::npos);
  EXPECT_EQ(std::count(csv.begin(), csv.begin() + static_cast<long>(csv.find('\n')), ','), 9);
}

TEST(Report, HourlyRows) {
  auto r = sample_report("RFT", "RR");
  auto csv = hourly_csv(r);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(r.hourly.size() + 1));
}
