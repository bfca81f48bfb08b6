#include <gtest/gtest.h>

#include <random>

#include "ipft/composite_model.hpp"
#include "oracles.hpp"

using namespace ipft;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an ipft::Error";
  return ErrorCode::config_invalid;
}

NumericalHyperparams small_numerical() {
  NumericalHyperparams h;
  h.neurons = 4;
  h.lookback = 4;
  h.epochs = 5;
  h.batch_size = 16;
  h.dropout = 0.0;
  return h;
}

NetworkInput random_input(const IoDims& d, std::size_t steps, nn::Index batch, std::mt19937_64& rng) {
  NetworkInput in;
  for (std::size_t t = 0; t < steps; ++t) {
    nn::Matrix x(static_cast<nn::Index>(d.local_features), batch);
    oracle::randomize(x, rng);
    in.window.push_back(x);
  }
  in.global.resize(static_cast<nn::Index>(d.global_features), batch);
  oracle::randomize(in.global, rng);
  return in;
}

/// Dataset whose windows and targets are already in model units.
WindowedDataset scaled_dataset(std::size_t n, std::size_t lookback, std::mt19937_64& rng,
                               const std::function<double(std::size_t, std::size_t)>& target) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  WindowedDataset ds;
  ds.lookback = lookback;
  ds.local_dim = kMetricCount;
  ds.global_dim = global_feature_width();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < lookback * kMetricCount; ++k) ds.local.push_back(u(rng));
    for (std::size_t k = 0; k < ds.global_dim; ++k) ds.global.push_back(u(rng) < 0.1 ? 1.0 : 0.0);
    for (std::size_t m = 0; m < kMetricCount; ++m) ds.target.push_back(target(i, m));
    ds.anchor_time.push_back(static_cast<std::int64_t>(60 * i));
  }
  ScalerParams id;
  id.min.assign(kMetricCount, 0.0);
  id.max.assign(kMetricCount, 1.0);
  id.degenerate.assign(kMetricCount, false);
  ds.scaler = id;
  return ds;
}

double act(nn::Activation a, double v) {
  switch (a) {
    case nn::Activation::linear: return v;
    case nn::Activation::relu: return v > 0 ? v : 0;
    case nn::Activation::tanh: return std::tanh(v);
    case nn::Activation::sigmoid: return oracle::sig(v);
  }
  return v;
}

oracle::Vec dense(const nn::DenseLayer& l, const oracle::Vec& x) {
  oracle::Vec y(static_cast<std::size_t>(l.output_size()));
  for (long i = 0; i < l.output_size(); ++i) y[i] = act(l.activation, oracle::row_dot(l.weights, i, x) + l.bias(i));
  return y;
}

}  // namespace

TEST(BuildModel, ChannelLayout) {
  auto num = small_numerical();
  auto m = build_model(num, {RecurrentKind::gru, nn::Activation::tanh, nn::OptimizerKind::adam}, IoDims{}, 1);
  ASSERT_EQ(m.network.recurrent.size(), 1u);
  EXPECT_TRUE(std::holds_alternative<nn::GruCell>(m.network.recurrent[0]));
  EXPECT_EQ(m.network.local_dense.input_size(), 4);
  EXPECT_EQ(m.network.global_layers.front().input_size(), static_cast<nn::Index>(global_feature_width()));
  EXPECT_EQ(m.network.head_layers.front().input_size(), m.network.channel_a_width() + m.network.channel_b_width());
  EXPECT_EQ(m.network.output.output_size(), 5);
  EXPECT_EQ(m.network.output.activation, nn::Activation::linear);

  num.recurrent_layers = 2;
  num.ff_layers_global = 3;
  num.ff_layers_head = 2;
  auto l = build_model(num, {RecurrentKind::lstm, nn::Activation::relu, nn::OptimizerKind::sgd}, IoDims{}, 1);
  EXPECT_EQ(l.network.recurrent.size(), 2u);
  EXPECT_TRUE(std::holds_alternative<nn::LstmCell>(l.network.recurrent[1]));
  EXPECT_EQ(l.network.global_layers.size(), 3u);
  EXPECT_EQ(l.network.head_layers.size(), 2u);
}

TEST(BuildModel, DeterministicPerSeed) {
  auto a = build_model(small_numerical(), {}, IoDims{}, 42);
  auto b = build_model(small_numerical(), {}, IoDims{}, 42);
  auto c = build_model(small_numerical(), {}, IoDims{}, 43);
  EXPECT_EQ(model_to_json(a).dump(), model_to_json(b).dump());
  EXPECT_NE(model_to_json(a).dump(), model_to_json(c).dump());
}

TEST(BuildModel, RejectsOutOfCatalogValues) {
  EXPECT_EQ(code_of([] { parse_nominal("GRU", "softmax", "adam"); }), ErrorCode::invalid_hyperparams);
  EXPECT_EQ(code_of([] { parse_nominal("GRU", "linear", "adam"); }), ErrorCode::invalid_hyperparams);
  EXPECT_EQ(code_of([] { parse_nominal("RNN", "tanh", "adam"); }), ErrorCode::invalid_hyperparams);
  auto bad = small_numerical();
  bad.neurons = 200;
  EXPECT_EQ(code_of([&] { build_model(bad, {}, IoDims{}, 0); }), ErrorCode::invalid_hyperparams);
  EXPECT_EQ(nominal_catalog().size(), 12u);
}

// Full network against central differences on 3-metric inputs.
TEST(CompositeGradients, MatchFiniteDifferences) {
  for (auto kind : {RecurrentKind::gru, RecurrentKind::lstm}) {
    for (auto a : {nn::Activation::tanh, nn::Activation::sigmoid}) {
      auto num = small_numerical();
      num.recurrent_layers = 2;
      num.ff_layers_global = 2;
      num.ff_layers_head = 2;
      IoDims dims{3, 7, 3};
      auto m = build_model(num, {kind, a, nn::OptimizerKind::adam}, dims, 5);
      std::mt19937_64 rng(17);
      oracle::randomize_all(m.network, rng, 0.8);
      auto in = random_input(dims, 5, 3, rng);
      nn::Matrix target(3, 3);
      oracle::randomize(target, rng);
      auto grads = nn::zeros_like(m.network);
      ForwardCache cache;
      auto out = network_forward(m.network, in, &cache);
      auto l = nn::loss(nn::LossKind::mse, out, target);
      network_backward(m.network, cache, l.gradient, grads);
      auto err = oracle::max_gradient_error(nn::parameter_spans(m.network), nn::parameter_spans(grads), [&] {
        return nn::loss(nn::LossKind::mse, network_forward(m.network, in), target).value;
      });
      EXPECT_LT(err, 1e-4) << to_string(kind) << "/" << nn::to_string(a);
    }
  }
}

TEST(CompositeGradients, StaleCacheIsRejected) {
  auto m = build_model(small_numerical(), {}, IoDims{3, 4, 3}, 1);
  std::mt19937_64 rng(1);
  auto in = random_input(m.dims, 4, 2, rng);
  ForwardCache cache;
  auto out = network_forward(m.network, in, &cache);
  ++m.network.version;
  auto grads = nn::zeros_like(m.network);
  EXPECT_EQ(code_of([&] { network_backward(m.network, cache, out, grads); }), ErrorCode::stale_cache);
}

TEST(CompositeForward, ChannelIsolation) {
  auto m = build_model(small_numerical(), {}, IoDims{}, 2);
  std::mt19937_64 rng(3);
  auto in = random_input(m.dims, 4, 2, rng);
  auto other = in;
  other.global.setZero();
  ForwardCache c1, c2;
  network_forward(m.network, in, &c1);
  network_forward(m.network, other, &c2);
  const auto wa = m.network.channel_a_width();
  EXPECT_EQ(c1.head[0].input.topRows(wa), c2.head[0].input.topRows(wa));
  EXPECT_NE(c1.head[0].input.bottomRows(wa), c2.head[0].input.bottomRows(wa));

  auto third = in;
  for (auto& x : third.window) x.setZero();
  ForwardCache c3;
  network_forward(m.network, third, &c3);
  EXPECT_NE(c1.head[0].input.topRows(wa), c3.head[0].input.topRows(wa));
  EXPECT_EQ(c1.head[0].input.bottomRows(wa), c3.head[0].input.bottomRows(wa));
}

// predict() against a scalar forward pass that scales, runs the GRU step by
// step, applies each dense layer and inverts the scaler by hand.
TEST(Predict, MatchesManualForwardPass) {
  auto num = small_numerical();
  num.ff_layers_head = 2;
  auto m = build_model(num, {RecurrentKind::gru, nn::Activation::tanh, nn::OptimizerKind::adam}, IoDims{}, 8);
  std::mt19937_64 rng(4);
  oracle::randomize_all(m.network, rng, 0.5);
  ScalerParams s;
  s.min = {0, 10, 20, 0, 0};
  s.max = {100, 90, 40, 5e4, 8e4};
  s.degenerate.assign(5, false);
  m.scaler = s;

  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> window(4 * 5);
  for (std::size_t i = 0; i < window.size(); ++i) window[i] = s.min[i % 5] + u(rng) * (s.max[i % 5] - s.min[i % 5]);
  std::vector<std::optional<MetricVector>> slots(kFleetCapacity);
  slots[0] = MetricVector{40, 50, 30, 1e4, 2e4};
  slots[3] = MetricVector{70, 60, 25, 3e4, 1e4};
  auto global = make_global_features(slots, 86400 * 2 + 3600 * 13);

  auto y = predict(m, window, global);
  ASSERT_EQ(y.size(), 5u);

  const auto& cell = std::get<nn::GruCell>(m.network.recurrent[0]);
  oracle::Vec h(4, 0.0);
  for (std::size_t t = 0; t < 4; ++t) {
    oracle::Vec x(5);
    for (std::size_t d = 0; d < 5; ++d) x[d] = (window[t * 5 + d] - s.min[d]) / (s.max[d] - s.min[d]);
    h = oracle::gru_step(cell, x, h);
  }
  auto a = dense(m.network.local_dense, h);
  oracle::Vec g = global;
  for (std::size_t slot : {0u, 3u})
    for (std::size_t d = 0; d < 5; ++d) g[slot * 6 + d] = (g[slot * 6 + d] - s.min[d]) / (s.max[d] - s.min[d]);
  auto b = dense(m.network.global_layers[0], g);
  oracle::Vec z = a;
  z.insert(z.end(), b.begin(), b.end());
  for (const auto& l : m.network.head_layers) z = dense(l, z);
  auto out = dense(m.network.output, z);
  for (std::size_t d = 0; d < 5; ++d) {
    double expect = s.min[d] + out[d] * (s.max[d] - s.min[d]);
    EXPECT_NEAR(y[d], expect, 1e-10 * std::max(1.0, std::fabs(expect)));
  }

  EXPECT_EQ(code_of([&] { predict(m, std::span<const double>(window).first(15), global); }), ErrorCode::shape_mismatch);
}

TEST(Predict, SurvivesJsonRoundTrip) {
  auto m = build_model(small_numerical(), {RecurrentKind::lstm, nn::Activation::relu, nn::OptimizerKind::sgd}, IoDims{}, 3);
  ScalerParams s;
  s.min.assign(5, 0.0);
  s.max = {100, 100, 100, 1e5, 1e5};
  s.degenerate = {false, false, true, false, false};
  m.scaler = s;
  m.genotype = {0.1, 0.2};
  auto back = model_from_json(nn::Json::parse(model_to_json(m).dump()));
  EXPECT_EQ(back.genotype, m.genotype);
  EXPECT_EQ(back.nominal, m.nominal);
  EXPECT_EQ(back.numerical, m.numerical);
  std::vector<double> w(20, 30.0), g(global_feature_width(), 0.0);
  g[kFleetCapacity * kSlotWidth] = 1.0;
  g[kFleetCapacity * kSlotWidth + kDaysPerWeek] = 1.0;
  EXPECT_EQ(predict(m, w, g), predict(back, w, g));
}

TEST(Train, ConstantTargetIsLearned) {
  std::mt19937_64 rng(6);
  auto ds = scaled_dataset(400, 4, rng, [](std::size_t, std::size_t m) { return 0.2 + 0.1 * static_cast<double>(m); });
  auto num = small_numerical();
  num.epochs = 50;
  num.learning_rate = 1e-2;
  auto [m, r] = train(build_model(num, {}, IoDims{}, 1), ds, 1);
  EXPECT_EQ(r.train_loss.size(), 50u);
  EXPECT_LT(r.train_loss.back(), 1e-4);
}

TEST(Train, NoiseTargetsValidateAtTheirVariance) {
  std::mt19937_64 rng(7);
  std::mt19937_64 noise(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto ds = scaled_dataset(3000, 4, rng, [&](std::size_t, std::size_t) { return u(noise); });
  auto num = small_numerical();
  num.epochs = 10;
  auto [m, r] = train(build_model(num, {}, IoDims{}, 2), ds, 2);
  const std::size_t n_train = 2400;
  double mean = 0.0, var = 0.0;
  for (std::size_t i = n_train * kMetricCount; i < ds.target.size(); ++i) mean += ds.target[i];
  mean /= static_cast<double>(ds.target.size() - n_train * kMetricCount);
  for (std::size_t i = n_train * kMetricCount; i < ds.target.size(); ++i) var += std::pow(ds.target[i] - mean, 2);
  var /= static_cast<double>(ds.target.size() - n_train * kMetricCount);
  EXPECT_NEAR(r.best_validation_loss, var, 0.2 * var);
}

TEST(Train, ReproducibleAndBestEpochRetained) {
  std::mt19937_64 rng(9);
  auto ds = scaled_dataset(300, 4, rng, [](std::size_t i, std::size_t m) { return std::sin(0.1 * i + m); });
  auto num = small_numerical();
  num.dropout = 0.2;
  num.epochs = 8;
  auto [a, ra] = train(build_model(num, {}, IoDims{}, 4), ds, 11);
  auto [b, rb] = train(build_model(num, {}, IoDims{}, 4), ds, 11);
  EXPECT_EQ(model_to_json(a).dump(), model_to_json(b).dump());
  EXPECT_EQ(ra.validation_loss, rb.validation_loss);
  EXPECT_EQ(ra.validation_loss.size(), 8u);
  EXPECT_EQ(ra.best_validation_loss, *std::min_element(ra.validation_loss.begin(), ra.validation_loss.end()));
  EXPECT_EQ(ra.best_validation_loss, detail::mse_rows(a, ds, 240, 300));
}

TEST(Train, NeverReadsValidationTargets) {
  std::mt19937_64 rng(10);
  auto ds = scaled_dataset(200, 4, rng, [](std::size_t i, std::size_t m) { return 0.01 * static_cast<double>(i % 50) + 0.05 * m; });
  auto poisoned = ds;
  for (std::size_t i = 160 * kMetricCount; i < poisoned.target.size(); ++i) poisoned.target[i] = 1e6;
  TrainOptions opt;
  opt.keep_best_epoch = false;
  auto num = small_numerical();
  auto [a, ra] = train(build_model(num, {}, IoDims{}, 5), ds, 3, opt);
  auto [b, rb] = train(build_model(num, {}, IoDims{}, 5), poisoned, 3, opt);
  EXPECT_EQ(model_to_json(a).dump(), model_to_json(b).dump());
  EXPECT_EQ(ra.train_loss, rb.train_loss);
}

TEST(Train, FitsScalerOnTrainingRowsOnly) {
  TraceProfile p;
  p.nodes = 1;
  p.duration_seconds = 4 * 3600;
  auto raw = build_node_datasets(synthesize_trace(p, 2), {4, 3, 60}).at("node00");
  auto poisoned = raw;
  auto n_train = static_cast<std::size_t>(std::floor(raw.size() * 0.8));
  for (std::size_t i = n_train * raw.lookback * kMetricCount; i < poisoned.local.size(); ++i) poisoned.local[i] = 99.0;
  auto num = small_numerical();
  TrainOptions one;
  one.max_epochs = 1;
  auto [a, ra] = train(build_model(num, {}, IoDims{}, 1), raw, 1, one);
  auto [b, rb] = train(build_model(num, {}, IoDims{}, 1), poisoned, 1, one);
  EXPECT_EQ(ra.train_loss.size(), 1u);
  EXPECT_EQ(a.scaler->min, b.scaler->min);
  EXPECT_EQ(a.scaler->max, b.scaler->max);
}

TEST(Train, EmptySplitIsRejected) {
  WindowedDataset empty;
  empty.lookback = 4;
  empty.local_dim = 5;
  empty.global_dim = global_feature_width();
  EXPECT_EQ(code_of([&] { train(build_model(small_numerical(), {}, IoDims{}, 1), empty, 1); }), ErrorCode::empty_dataset);
  std::mt19937_64 rng(1);
  auto one = scaled_dataset(1, 4, rng, [](std::size_t, std::size_t) { return 0.0; });
  EXPECT_EQ(code_of([&] { train(build_model(small_numerical(), {}, IoDims{}, 1), one, 1); }), ErrorCode::empty_dataset);
}

TEST(Evaluate, PerfectPredictorAndTimings) {
  TraceProfile p;
  p.nodes = 1;
  p.duration_seconds = 3 * 3600;
  p.noise = 0.0;
  p.components.clear();  // flat series: the persistence forecast is exact
  auto raw = build_node_datasets(synthesize_trace(p, 1), {4, 3, 60}).at("node00");
  auto scaler = fit_dataset_scaler(raw);
  auto r = evaluate_persistence(raw, scaler, 1);
  for (double v : r.rmse) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(r.aggregate_mae, 0.0);

  auto num = small_numerical();
  TrainOptions one;
  one.max_epochs = 1;
  auto [m, tr] = train(build_model(num, {}, IoDims{}, 1), raw, 1, one);
  auto e = evaluate(m, raw);
  EXPECT_GT(e.single_inference_seconds, 0.0);
  EXPECT_GT(e.batch_inference_seconds, 0.0);
  EXPECT_EQ(e.rmse.size(), 5u);
  EXPECT_GE(e.aggregate_rmse, e.aggregate_mae);
}

TEST(Evaluate, TrainedModelBeatsPersistenceOnDiurnalData) {
  TraceProfile p;
  p.nodes = 2;
  p.duration_seconds = 2 * 86400;
  auto raw = pool_by_time(build_node_datasets(synthesize_trace(p, 12), {8, 10, 60}));
  auto n = raw.size() * 8 / 10;
  auto fit = raw.slice(0, n), test = raw.slice(n, raw.size());
  auto num = small_numerical();
  num.lookback = 8;
  num.neurons = 12;
  num.epochs = 10;
  num.learning_rate = 5e-3;
  auto [m, tr] = train(build_model(num, {}, IoDims{}, 3), fit, 3);
  auto model = evaluate(m, test);
  auto base = evaluate_persistence(test, *m.scaler, 8);
  EXPECT_LT(model.aggregate_rmse, base.aggregate_rmse);
}
