#pragma once

// Two-channel predictor: a recurrent channel over the node's own lookback
// window and a feed-forward channel over the fleet-wide global features,
// concatenated into a feed-forward head that emits the horizon max of every
// metric.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ipft/metrics_report.hpp"
#include "ipft/neural_core.hpp"
#include "ipft/trace_ingest.hpp"

namespace ipft {

enum class RecurrentKind { gru, lstm };

inline std::string_view to_string(RecurrentKind k) { return k == RecurrentKind::gru ? "GRU" : "LSTM"; }

inline RecurrentKind parse_recurrent_kind(std::string_view s) {
  if (s == "GRU" || s == "gru") return RecurrentKind::gru;
  if (s == "LSTM" || s == "lstm") return RecurrentKind::lstm;
  fail(ErrorCode::invalid_hyperparams, "unknown recurrent kind '" + std::string(s) + "'");
}

struct NumericalHyperparams {
  int recurrent_layers = 1;
  int ff_layers_global = 1;
  int ff_layers_head = 1;
  int neurons = 16;
  int lookback = 8;
  int epochs = 20;
  int batch_size = 32;
  double dropout = 0.1;
  double learning_rate = 3e-3;

  bool operator==(const NumericalHyperparams&) const = default;
};

struct NominalHyperparams {
  RecurrentKind recurrent_kind = RecurrentKind::gru;
  nn::Activation activation = nn::Activation::tanh;
  nn::OptimizerKind optimizer = nn::OptimizerKind::adam;

  bool operator==(const NominalHyperparams&) const = default;
};

inline std::string describe(const NominalHyperparams& n) {
  return std::string(to_string(n.recurrent_kind)) + "/" + std::string(nn::to_string(n.activation)) + "/" +
         std::string(nn::to_string(n.optimizer));
}

inline constexpr std::array<nn::Activation, 3> kHiddenActivations = {nn::Activation::relu, nn::Activation::tanh,
                                                                     nn::Activation::sigmoid};

/// Every nominal configuration, ordered by (recurrent kind, activation, optimizer).
inline std::vector<NominalHyperparams> nominal_catalog() {
  std::vector<NominalHyperparams> out;
  for (auto kind : {RecurrentKind::gru, RecurrentKind::lstm})
    for (auto act : kHiddenActivations)
      for (auto opt : {nn::OptimizerKind::sgd, nn::OptimizerKind::adam}) out.push_back({kind, act, opt});
  return out;
}

inline void validate(const NominalHyperparams& n) {
  if (std::find(kHiddenActivations.begin(), kHiddenActivations.end(), n.activation) == kHiddenActivations.end())
    fail(ErrorCode::invalid_hyperparams, "activation '" + std::string(nn::to_string(n.activation)) + "' not in catalog");
}

inline NominalHyperparams parse_nominal(std::string_view kind, std::string_view activation, std::string_view optimizer) {
  NominalHyperparams n{parse_recurrent_kind(kind), nn::parse_activation(activation), nn::parse_optimizer(optimizer)};
  validate(n);
  return n;
}

inline void validate(const NumericalHyperparams& h) {
  auto check = [](bool ok, const char* what) {
    if (!ok) fail(ErrorCode::invalid_hyperparams, what);
  };
  check(h.recurrent_layers >= 1 && h.recurrent_layers <= 2, "recurrent_layers outside [1,2]");
  check(h.ff_layers_global >= 1 && h.ff_layers_global <= 4, "ff_layers_global outside [1,4]");
  check(h.ff_layers_head >= 1 && h.ff_layers_head <= 4, "ff_layers_head outside [1,4]");
  check(h.neurons >= 4 && h.neurons <= 128, "neurons outside [4,128]");
  check(h.lookback >= 4 && h.lookback <= 32, "lookback outside [4,32]");
  check(h.epochs >= 5 && h.epochs <= 100, "epochs outside [5,100]");
  check(h.batch_size >= 8 && h.batch_size <= 128, "batch_size outside [8,128]");
  check(h.dropout >= 0.0 && h.dropout <= 0.5, "dropout outside [0,0.5]");
  check(h.learning_rate >= 1e-4 && h.learning_rate <= 1e-1, "learning_rate outside [1e-4,1e-1]");
}

struct IoDims {
  std::size_t local_features = kMetricCount;
  std::size_t global_features = global_feature_width();
  std::size_t outputs = kMetricCount;

  bool operator==(const IoDims&) const = default;
};

// ---------------------------------------------------------------------------
// Network

struct CompositeNetwork {
  std::vector<nn::RecurrentLayer> recurrent;  // channel A
  nn::DenseLayer local_dense;                 // channel A projection
  std::vector<nn::DenseLayer> global_layers;  // channel B
  std::vector<nn::DenseLayer> head_layers;
  nn::DenseLayer output;
  double dropout = 0.0;
  std::uint64_t version = 0;  // bumped on every parameter update

  nn::Index channel_a_width() const { return local_dense.output_size(); }
  nn::Index channel_b_width() const { return global_layers.back().output_size(); }
};

template <class N, class F>
  requires std::same_as<std::remove_const_t<N>, CompositeNetwork>
void visit_tensors(N& net, F&& f) {
  for (auto& l : net.recurrent) nn::visit_tensors(l, f);
  nn::visit_tensors(net.local_dense, f);
  for (auto& l : net.global_layers) nn::visit_tensors(l, f);
  for (auto& l : net.head_layers) nn::visit_tensors(l, f);
  nn::visit_tensors(net.output, f);
}

/// window[t] is local_features x batch for step t (oldest first); global is
/// global_features x batch.
struct NetworkInput {
  std::vector<nn::Matrix> window;
  nn::Matrix global;
};

struct ForwardCache {
  std::uint64_t version = 0;
  std::size_t steps = 0;
  std::vector<nn::SequenceCache> sequences;
  nn::DenseCache local;
  std::vector<nn::DenseCache> global;
  std::vector<nn::Matrix> global_masks;
  std::vector<nn::DenseCache> head;
  std::vector<nn::Matrix> head_masks;
  nn::DenseCache output;
};

inline nn::Matrix network_forward(const CompositeNetwork& net, const NetworkInput& in, ForwardCache* cache = nullptr,
                                  bool training = false, nn::Rng* rng = nullptr) {
  if (in.window.empty()) fail(ErrorCode::shape_mismatch, "empty lookback window");
  if (training && net.dropout > 0.0 && !rng) fail(ErrorCode::shape_mismatch, "training-mode dropout needs an rng");
  const auto batch = in.window.front().cols();
  if (in.global.cols() != batch) fail(ErrorCode::shape_mismatch, "global batch differs from window batch");
  if (cache) {
    *cache = ForwardCache{};
    cache->version = net.version;
    cache->steps = in.window.size();
    cache->sequences.resize(net.recurrent.size());
  }
  const nn::DropoutSpec drop{net.dropout, training};
  nn::Rng dummy;
  nn::Rng& r = rng ? *rng : dummy;

  const std::vector<nn::Matrix>* seq = &in.window;
  std::vector<nn::Matrix> hidden;
  for (std::size_t l = 0; l < net.recurrent.size(); ++l) {
    hidden = nn::run_sequence(net.recurrent[l], *seq, cache ? &cache->sequences[l] : nullptr);
    seq = &hidden;
  }
  nn::Matrix a = nn::dense_apply(net.local_dense, hidden.back(), cache ? &cache->local : nullptr);

  nn::Matrix b = in.global;
  for (const auto& layer : net.global_layers) {
    nn::DenseCache* c = cache ? &cache->global.emplace_back() : nullptr;
    nn::Matrix* mask = cache ? &cache->global_masks.emplace_back() : nullptr;
    b = nn::dropout_apply(drop, nn::dense_apply(layer, b, c), r, mask);
  }

  nn::Matrix z(a.rows() + b.rows(), batch);
  z.topRows(a.rows()) = a;
  z.bottomRows(b.rows()) = b;
  for (const auto& layer : net.head_layers) {
    nn::DenseCache* c = cache ? &cache->head.emplace_back() : nullptr;
    nn::Matrix* mask = cache ? &cache->head_masks.emplace_back() : nullptr;
    z = nn::dropout_apply(drop, nn::dense_apply(layer, z, c), r, mask);
  }
  return nn::dense_apply(net.output, z, cache ? &cache->output : nullptr);
}

/// Accumulates parameter gradients into `grads` (same shape as `net`).
inline void network_backward(const CompositeNetwork& net, const ForwardCache& cache, const nn::Matrix& d_out,
                             CompositeNetwork& grads) {
  if (cache.version != net.version) fail(ErrorCode::stale_cache, "network changed since the forward pass");
  nn::Matrix dz = nn::dense_backward(net.output, cache.output, d_out, grads.output);
  for (std::size_t l = net.head_layers.size(); l-- > 0;)
    dz = nn::dense_backward(net.head_layers[l], cache.head[l], dz.cwiseProduct(cache.head_masks[l]),
                            grads.head_layers[l]);
  const auto wa = net.channel_a_width();
  nn::Matrix db = dz.bottomRows(dz.rows() - wa);
  for (std::size_t l = net.global_layers.size(); l-- > 0;)
    db = nn::dense_backward(net.global_layers[l], cache.global[l], db.cwiseProduct(cache.global_masks[l]),
                            grads.global_layers[l]);
  nn::Matrix d_last = nn::dense_backward(net.local_dense, cache.local, dz.topRows(wa), grads.local_dense);
  std::vector<nn::Matrix> d_seq(cache.steps, nn::Matrix::Zero(d_last.rows(), d_last.cols()));
  d_seq.back() = d_last;
  for (std::size_t l = net.recurrent.size(); l-- > 0;)
    d_seq = nn::backprop_sequence(net.recurrent[l], cache.sequences[l], d_seq, grads.recurrent[l]);
}

// ---------------------------------------------------------------------------
// Model

struct CompositeModel {
  CompositeNetwork network;
  NumericalHyperparams numerical;
  NominalHyperparams nominal;
  IoDims dims;
  std::vector<double> genotype;
  std::optional<ScalerParams> scaler;
  std::uint64_t seed = 0;
};

/// Channel A = recurrent stack + one dense layer; channel B and the head are
/// dense/dropout stacks; the output layer is linear.
inline CompositeModel build_model(const NumericalHyperparams& num, const NominalHyperparams& nom, const IoDims& dims,
                                  std::uint64_t seed, std::vector<double> genotype = {}) {
  validate(num);
  validate(nom);
  if (dims.local_features == 0 || dims.global_features == 0 || dims.outputs == 0)
    fail(ErrorCode::shape_mismatch, "model dimensions must be positive");
  const auto n = static_cast<nn::Index>(num.neurons);
  CompositeModel m;
  m.numerical = num;
  m.nominal = nom;
  m.dims = dims;
  m.genotype = std::move(genotype);
  m.seed = seed;
  auto& net = m.network;
  net.dropout = num.dropout;
  auto in = static_cast<nn::Index>(dims.local_features);
  for (int l = 0; l < num.recurrent_layers; ++l) {
    if (nom.recurrent_kind == RecurrentKind::gru)
      net.recurrent.emplace_back(nn::make_gru(in, n));
    else
      net.recurrent.emplace_back(nn::make_lstm(in, n));
    in = n;
  }
  net.local_dense = nn::make_dense(n, n, nom.activation);
  in = static_cast<nn::Index>(dims.global_features);
  for (int l = 0; l < num.ff_layers_global; ++l) {
    net.global_layers.push_back(nn::make_dense(in, n, nom.activation));
    in = n;
  }
  in = 2 * n;
  for (int l = 0; l < num.ff_layers_head; ++l) {
    net.head_layers.push_back(nn::make_dense(in, n, nom.activation));
    in = n;
  }
  net.output = nn::make_dense(n, static_cast<nn::Index>(dims.outputs), nn::Activation::linear);
  nn::Rng rng(seed);
  nn::initialize(net, rng);
  return m;
}

/// Batch of rows from a dataset (already in model units).
inline NetworkInput make_input(const WindowedDataset& ds, std::span<const std::size_t> rows) {
  const auto b = static_cast<nn::Index>(rows.size());
  NetworkInput in;
  in.window.assign(ds.lookback, nn::Matrix(static_cast<nn::Index>(ds.local_dim), b));
  in.global.resize(static_cast<nn::Index>(ds.global_dim), b);
  for (nn::Index j = 0; j < b; ++j) {
    auto w = ds.local_window(rows[j]);
    for (std::size_t t = 0; t < ds.lookback; ++t)
      for (std::size_t d = 0; d < ds.local_dim; ++d) in.window[t](static_cast<nn::Index>(d), j) = w[t * ds.local_dim + d];
    auto g = ds.global_features(rows[j]);
    for (std::size_t d = 0; d < ds.global_dim; ++d) in.global(static_cast<nn::Index>(d), j) = g[d];
  }
  return in;
}

inline nn::Matrix make_targets(const WindowedDataset& ds, std::span<const std::size_t> rows) {
  nn::Matrix t(static_cast<nn::Index>(ds.local_dim), static_cast<nn::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    auto r = ds.target_row(rows[j]);
    for (std::size_t d = 0; d < ds.local_dim; ++d) t(static_cast<nn::Index>(d), static_cast<nn::Index>(j)) = r[d];
  }
  return t;
}

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
  double validation_fraction = 0.2;
  double clip_norm = 5.0;
  std::optional<int> max_epochs;  // caps the hyperparameter during search
  bool keep_best_epoch = true;
  nn::LossKind loss = nn::LossKind::mse;
};

struct TrainReport {
  std::vector<double> train_loss;
  std::vector<double> validation_loss;
  int best_epoch = -1;
  double best_validation_loss = 0.0;
  double wall_seconds = 0.0;
  std::vector<double> validation_rmse;  // per metric, original units
  std::vector<double> validation_mae;
  double aggregate_rmse = 0.0;  // scaled units
  double aggregate_mae = 0.0;
};

namespace detail {

inline void check_model_matches(const CompositeModel& m, const WindowedDataset& ds) {
  if (ds.lookback != static_cast<std::size_t>(m.numerical.lookback))
    fail(ErrorCode::shape_mismatch, "dataset lookback " + std::to_string(ds.lookback) + " != model lookback " +
                                        std::to_string(m.numerical.lookback));
  if (ds.local_dim != m.dims.local_features || ds.global_dim != m.dims.global_features)
    fail(ErrorCode::shape_mismatch, "dataset feature widths differ from the model");
}

inline std::vector<std::size_t> iota(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> v(end - begin);
  std::iota(v.begin(), v.end(), begin);
  return v;
}

/// Predictions (model units) for every row, batched.
inline nn::Matrix predict_rows(const CompositeModel& m, const WindowedDataset& ds, std::size_t begin,
                               std::size_t end, std::size_t batch = 256) {
  nn::Matrix out(static_cast<nn::Index>(m.dims.outputs), static_cast<nn::Index>(end - begin));
  for (std::size_t s = begin; s < end; s += batch) {
    auto rows = iota(s, std::min(end, s + batch));
    out.middleCols(static_cast<nn::Index>(s - begin), static_cast<nn::Index>(rows.size())) =
        network_forward(m.network, make_input(ds, rows));
  }
  return out;
}

inline double mse_rows(const CompositeModel& m, const WindowedDataset& ds, std::size_t begin, std::size_t end) {
  auto rows = iota(begin, end);
  auto pred = predict_rows(m, ds, begin, end);
  return (pred - make_targets(ds, rows)).squaredNorm() / static_cast<double>(pred.size());
}

}  // namespace detail

/// Chronological split: the first (1 - validation_fraction) of the rows
/// train, the rest validate. A raw dataset is scaled with a scaler fitted on
/// the training rows only. Gradient updates never read validation rows;
/// with keep_best_epoch the weights of the epoch with the lowest
/// validation loss are retained.
inline std::pair<CompositeModel, TrainReport> train(CompositeModel model, const WindowedDataset& dataset,
                                                    std::uint64_t seed, const TrainOptions& options = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  detail::check_model_matches(model, dataset);
  const auto n = dataset.size();
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * (1.0 - options.validation_fraction)));
  if (n == 0 || n_train == 0 || n_train == n) fail(ErrorCode::empty_dataset, "train/validation split leaves an empty side");

  WindowedDataset ds;
  if (dataset.scaler) {
    ds = dataset;
  } else {
    ds = scale_dataset(dataset, fit_dataset_scaler(dataset.slice(0, n_train)));
  }
  model.scaler = ds.scaler;

  auto& net = model.network;
  auto opt = nn::make_optimizer(model.nominal.optimizer, model.numerical.learning_rate);
  nn::Rng rng(seed);
  auto grads = nn::zeros_like(net);
  auto params = nn::parameter_spans(net);
  auto grad_spans = nn::parameter_spans(grads);

  int epochs = model.numerical.epochs;
  if (options.max_epochs) epochs = std::min(epochs, *options.max_epochs);
  const auto batch = static_cast<std::size_t>(model.numerical.batch_size);

  TrainReport report;
  CompositeNetwork best = net;
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order = detail::iota(0, n_train);
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t s = 0; s < n_train; s += batch) {
      std::span<const std::size_t> rows(order.data() + s, std::min(batch, n_train - s));
      auto in = make_input(ds, rows);
      ForwardCache cache;
      auto pred = network_forward(net, in, &cache, true, &rng);
      auto l = nn::loss(options.loss, pred, make_targets(ds, rows));
      epoch_loss += l.value * static_cast<double>(rows.size());
      for (auto& g : grad_spans) std::fill(g.begin(), g.end(), 0.0);
      network_backward(net, cache, l.gradient, grads);
      nn::clip_global_norm(grad_spans, options.clip_norm);
      nn::optimizer_step(opt, params, grad_spans);
      ++net.version;
    }
    report.train_loss.push_back(epoch_loss / static_cast<double>(n_train));
    double val = detail::mse_rows(model, ds, n_train, n);
    if (!std::isfinite(val)) val = std::numeric_limits<double>::max();
    report.validation_loss.push_back(val);
    if (val < best_loss) {
      best_loss = val;
      report.best_epoch = e;
      if (options.keep_best_epoch) best = net;
    }
  }
  if (options.keep_best_epoch && report.best_epoch >= 0) {
    auto version = net.version;
    net = best;
    net.version = version + 1;
  }
  report.best_validation_loss = options.keep_best_epoch ? best_loss : report.validation_loss.back();

  auto pred = detail::predict_rows(model, ds, n_train, n);
  auto target = make_targets(ds, detail::iota(n_train, n));
  nn::Matrix pred_t = pred.transpose(), target_t = target.transpose();  // row-major N x dims layout
  std::vector<double> p(pred_t.size()), t(target_t.size());
  for (nn::Index i = 0; i < pred_t.rows(); ++i)
    for (nn::Index j = 0; j < pred_t.cols(); ++j) {
      p[static_cast<std::size_t>(i * pred_t.cols() + j)] = pred_t(i, j);
      t[static_cast<std::size_t>(i * pred_t.cols() + j)] = target_t(i, j);
    }
  auto scaled = prediction_metrics(p, t, model.dims.outputs);
  report.aggregate_rmse = scaled.aggregate_rmse;
  report.aggregate_mae = scaled.aggregate_mae;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = model.scaler->invert(i % model.dims.outputs, p[i]);
    t[i] = model.scaler->invert(i % model.dims.outputs, t[i]);
  }
  auto raw = prediction_metrics(p, t, model.dims.outputs);
  report.validation_rmse = raw.rmse;
  report.validation_mae = raw.mae;
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(model), std::move(report)};
}

// ---------------------------------------------------------------------------
// Inference

/// Horizon-max prediction in original units for one raw lookback window
/// (lookback x local_features, row-major, oldest first) and the raw global
/// feature vector at the anchor.
inline std::vector<double> predict(const CompositeModel& m, std::span<const double> window,
                                   std::span<const double> global) {
  const auto lookback = static_cast<std::size_t>(m.numerical.lookback);
  if (window.size() != lookback * m.dims.local_features)
    fail(ErrorCode::shape_mismatch, "window length " + std::to_string(window.size() / m.dims.local_features) +
                                        " != lookback " + std::to_string(lookback));
  if (global.size() != m.dims.global_features) fail(ErrorCode::shape_mismatch, "global feature width");
  NetworkInput in;
  in.window.assign(lookback, nn::Matrix(static_cast<nn::Index>(m.dims.local_features), 1));
  for (std::size_t t = 0; t < lookback; ++t)
    for (std::size_t d = 0; d < m.dims.local_features; ++d) {
      double v = window[t * m.dims.local_features + d];
      in.window[t](static_cast<nn::Index>(d), 0) = m.scaler ? m.scaler->apply(d, v) : v;
    }
  std::vector<double> g(global.begin(), global.end());
  if (m.scaler && g.size() == global_feature_width()) scale_global_features(g, *m.scaler);
  in.global = Eigen::Map<const nn::Matrix>(g.data(), static_cast<nn::Index>(g.size()), 1);
  auto out = network_forward(m.network, in);
  std::vector<double> y(m.dims.outputs);
  for (std::size_t d = 0; d < y.size(); ++d)
    y[d] = m.scaler ? m.scaler->invert(d, out(static_cast<nn::Index>(d), 0)) : out(static_cast<nn::Index>(d), 0);
  return y;
}

struct EvaluationReport {
  std::vector<double> rmse;  // per metric, original units
  std::vector<double> mae;
  double aggregate_rmse = 0.0;  // over all scaled values
  double aggregate_mae = 0.0;
  double single_inference_seconds = 0.0;
  double batch_inference_seconds = 0.0;  // one batch of 100 predictions
  std::size_t samples = 0;
};

namespace detail {

/// Fills an EvaluationReport from raw-unit predictions and targets.
inline EvaluationReport score(std::span<const double> preds, std::span<const double> targets,
                              const ScalerParams& scaler, std::size_t dims) {
  EvaluationReport r;
  auto raw = prediction_metrics(preds, targets, dims);
  r.rmse = raw.rmse;
  r.mae = raw.mae;
  r.samples = raw.samples;
  std::vector<double> ps(preds.size()), ts(targets.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ps[i] = scaler.apply(i % dims, preds[i]);
    ts[i] = scaler.apply(i % dims, targets[i]);
  }
  auto sc = prediction_metrics(ps, ts, dims);
  r.aggregate_rmse = sc.aggregate_rmse;
  r.aggregate_mae = sc.aggregate_mae;
  return r;
}

}  // namespace detail

/// Scores a trained model on a raw (unscaled) test set.
inline EvaluationReport evaluate(const CompositeModel& m, const WindowedDataset& raw_test) {
  if (!m.scaler) fail(ErrorCode::empty_dataset, "model has no scaler; train it first");
  if (raw_test.empty()) fail(ErrorCode::empty_dataset, "empty test set");
  detail::check_model_matches(m, raw_test);
  auto ds = raw_test.scaler ? raw_test : scale_dataset(raw_test, *m.scaler);
  auto pred = detail::predict_rows(m, ds, 0, ds.size());
  std::vector<double> p(static_cast<std::size_t>(pred.size()));
  for (nn::Index j = 0; j < pred.cols(); ++j)
    for (nn::Index d = 0; d < pred.rows(); ++d)
      p[static_cast<std::size_t>(j * pred.rows() + d)] = m.scaler->invert(static_cast<std::size_t>(d), pred(d, j));
  auto targets = raw_test.scaler ? unscale_dataset(raw_test).target : raw_test.target;
  auto r = detail::score(p, targets, *m.scaler, m.dims.outputs);

  auto raw = raw_test.scaler ? unscale_dataset(raw_test) : raw_test;
  auto t0 = std::chrono::steady_clock::now();
  (void)predict(m, raw.local_window(0), raw.global_features(0));
  auto t1 = std::chrono::steady_clock::now();
  auto rows = detail::iota(0, std::min<std::size_t>(100, ds.size()));
  (void)network_forward(m.network, make_input(ds, rows));
  auto t2 = std::chrono::steady_clock::now();
  r.single_inference_seconds = std::max(std::chrono::duration<double>(t1 - t0).count(), 1e-9);
  r.batch_inference_seconds = std::max(std::chrono::duration<double>(t2 - t1).count(), 1e-9);
  return r;
}

/// Persistence baseline: the horizon max of each metric is predicted as the
/// max over the last `window` steps of the lookback.
inline std::vector<double> persistence_forecast(std::span<const double> lookback_window, std::size_t dims,
                                                std::size_t window) {
  const auto steps = lookback_window.size() / dims;
  window = std::min(std::max<std::size_t>(window, 1), steps);
  std::vector<double> y(dims, -std::numeric_limits<double>::infinity());
  for (std::size_t t = steps - window; t < steps; ++t)
    for (std::size_t d = 0; d < dims; ++d) y[d] = std::max(y[d], lookback_window[t * dims + d]);
  return y;
}

/// Scores the persistence baseline on a raw test set with the given scaler.
inline EvaluationReport evaluate_persistence(const WindowedDataset& raw_test, const ScalerParams& scaler,
                                             std::size_t window) {
  if (raw_test.empty()) fail(ErrorCode::empty_dataset, "empty test set");
  std::vector<double> p;
  p.reserve(raw_test.target.size());
  for (std::size_t i = 0; i < raw_test.size(); ++i) {
    auto y = persistence_forecast(raw_test.local_window(i), raw_test.local_dim, window);
    p.insert(p.end(), y.begin(), y.end());
  }
  return detail::score(p, raw_test.target, scaler, raw_test.local_dim);
}

// ---------------------------------------------------------------------------
// Serialization

inline nn::Json numerical_to_json(const NumericalHyperparams& h) {
  return {{"recurrent_layers", h.recurrent_layers}, {"ff_layers_global", h.ff_layers_global},
          {"ff_layers_head", h.ff_layers_head},     {"neurons", h.neurons},
          {"lookback", h.lookback},                 {"epochs", h.epochs},
          {"batch_size", h.batch_size},             {"dropout", h.dropout},
          {"learning_rate", h.learning_rate}};
}

inline NumericalHyperparams numerical_from_json(const nn::Json& j) {
  NumericalHyperparams h;
  h.recurrent_layers = j.at("recurrent_layers").get<int>();
  h.ff_layers_global = j.at("ff_layers_global").get<int>();
  h.ff_layers_head = j.at("ff_layers_head").get<int>();
  h.neurons = j.at("neurons").get<int>();
  h.lookback = j.at("lookback").get<int>();
  h.epochs = j.at("epochs").get<int>();
  h.batch_size = j.at("batch_size").get<int>();
  h.dropout = j.at("dropout").get<double>();
  h.learning_rate = j.at("learning_rate").get<double>();
  return h;
}

inline nn::Json nominal_to_json(const NominalHyperparams& n) {
  return {{"recurrent_kind", std::string(to_string(n.recurrent_kind))},
          {"activation", std::string(nn::to_string(n.activation))},
          {"optimizer", std::string(nn::to_string(n.optimizer))}};
}

inline NominalHyperparams nominal_from_json(const nn::Json& j) {
  return parse_nominal(j.at("recurrent_kind").get<std::string>(), j.at("activation").get<std::string>(),
                       j.at("optimizer").get<std::string>());
}

inline nn::Json scaler_to_json(const ScalerParams& s) {
  std::vector<int> degenerate(s.degenerate.begin(), s.degenerate.end());
  return {{"min", s.min}, {"max", s.max}, {"degenerate", degenerate}};
}

inline ScalerParams scaler_from_json(const nn::Json& j) {
  ScalerParams s;
  s.min = j.at("min").get<std::vector<double>>();
  s.max = j.at("max").get<std::vector<double>>();
  auto d = j.at("degenerate").get<std::vector<int>>();
  s.degenerate.assign(d.begin(), d.end());
  return s;
}

/// Layer list in forward order, each tagged with its role, plus the
/// hyperparameters and genotype the model was decoded from.
inline nn::Json model_to_json(const CompositeModel& m) {
  nn::Json layers = nn::Json::array();
  auto tag = [](nn::Json j, const char* role) {
    j["role"] = role;
    return j;
  };
  for (const auto& l : m.network.recurrent) layers.push_back(tag(nn::recurrent_to_json(l), "channel_a"));
  layers.push_back(tag(nn::dense_to_json(m.network.local_dense), "channel_a"));
  for (const auto& l : m.network.global_layers) layers.push_back(tag(nn::dense_to_json(l), "channel_b"));
  for (const auto& l : m.network.head_layers) layers.push_back(tag(nn::dense_to_json(l), "head"));
  layers.push_back(tag(nn::dense_to_json(m.network.output), "output"));
  nn::Json j{{"format", "ipft-composite-model"},
             {"version", 1},
             {"dropout", m.network.dropout},
             {"layers", std::move(layers)},
             {"numerical", numerical_to_json(m.numerical)},
             {"nominal", nominal_to_json(m.nominal)},
             {"dims",
              {{"local_features", m.dims.local_features},
               {"global_features", m.dims.global_features},
               {"outputs", m.dims.outputs}}},
             {"genotype", m.genotype},
             {"seed", m.seed}};
  if (m.scaler) j["scaler"] = scaler_to_json(*m.scaler);
  return j;
}

inline CompositeModel model_from_json(const nn::Json& j) {
  if (j.value("format", "") != "ipft-composite-model") fail(ErrorCode::shape_mismatch, "not a composite model");
  CompositeModel m;
  m.numerical = numerical_from_json(j.at("numerical"));
  m.nominal = nominal_from_json(j.at("nominal"));
  const auto& d = j.at("dims");
  m.dims = {d.at("local_features").get<std::size_t>(), d.at("global_features").get<std::size_t>(),
            d.at("outputs").get<std::size_t>()};
  m.genotype = j.at("genotype").get<std::vector<double>>();
  m.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("scaler")) m.scaler = scaler_from_json(j.at("scaler"));
  auto& net = m.network;
  net.dropout = j.at("dropout").get<double>();
  for (const auto& l : j.at("layers")) {
    const auto role = l.at("role").get<std::string>();
    const auto kind = l.at("kind").get<std::string>();
    if (role == "channel_a" && kind != "dense")
      net.recurrent.push_back(nn::recurrent_from_json(l));
    else if (role == "channel_a")
      net.local_dense = nn::dense_from_json(l);
    else if (role == "channel_b")
      net.global_layers.push_back(nn::dense_from_json(l));
    else if (role == "head")
      net.head_layers.push_back(nn::dense_from_json(l));
    else if (role == "output")
      net.output = nn::dense_from_json(l);
    else
      fail(ErrorCode::shape_mismatch, "unknown layer role '" + role + "'");
  }
  return m;
}

inline nn::Json train_report_to_json(const TrainReport& r) {
  return {{"train_loss", r.train_loss},
          {"validation_loss", r.validation_loss},
          {"best_epoch", r.best_epoch},
          {"best_validation_loss", r.best_validation_loss},
          {"wall_seconds", r.wall_seconds},
          {"validation_rmse", r.validation_rmse},
          {"validation_mae", r.validation_mae},
          {"aggregate_rmse", r.aggregate_rmse},
          {"aggregate_mae", r.aggregate_mae}};
}

}  // namespace ipft
