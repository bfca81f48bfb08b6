#pragma once

// Small differentiable-layer library. Matrices hold one sample per column,
// so a batch of B inputs of width n is an n x B matrix. Every forward pass
// can record a cache; the matching backward pass consumes it and
// accumulates parameter gradients into a structure of the same shape as the
// layer.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ipft/error.hpp"
#include "json.hpp"

namespace ipft::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using Rng = std::mt19937_64;
using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Activations

enum class Activation { linear, relu, tanh, sigmoid };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "linear";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "linear") return Activation::linear;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  fail(ErrorCode::invalid_hyperparams, "unknown activation '" + std::string(s) + "'");
}

inline Matrix sigmoid(const Matrix& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

inline Matrix activate(Activation a, const Matrix& pre) {
  switch (a) {
    case Activation::linear: return pre;
    case Activation::relu: return pre.cwiseMax(0.0);
    case Activation::tanh: return pre.array().tanh().matrix();
    case Activation::sigmoid: return sigmoid(pre);
  }
  return pre;
}

/// d(out)/d(pre), elementwise, given both the pre-activation and output.
inline Matrix activation_derivative(Activation a, const Matrix& pre, const Matrix& out) {
  switch (a) {
    case Activation::linear: return Matrix::Ones(pre.rows(), pre.cols());
    case Activation::relu: return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::tanh: return (1.0 - out.array().square()).matrix();
    case Activation::sigmoid: return (out.array() * (1.0 - out.array())).matrix();
  }
  return Matrix::Ones(pre.rows(), pre.cols());
}

namespace detail {

inline void check_shape(bool ok, const char* what) {
  if (!ok) fail(ErrorCode::shape_mismatch, what);
}

inline Matrix add_bias(Matrix m, const Vector& b) {
  m.colwise() += b;
  return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dense

struct DenseLayer {
  Matrix weights;  // out x in
  Vector bias;     // out
  Activation activation = Activation::linear;

  Index input_size() const { return weights.cols(); }
  Index output_size() const { return weights.rows(); }
};

template <class L, class F>
  requires std::same_as<std::remove_const_t<L>, DenseLayer>
void visit_tensors(L& layer, F&& f) {
  f("weights", layer.weights);
  f("bias", layer.bias);
}

inline DenseLayer make_dense(Index in, Index out, Activation activation) {
  return DenseLayer{Matrix::Zero(out, in), Vector::Zero(out), activation};
}

struct DenseCache {
  Matrix input;
  Matrix pre;
  Matrix output;
};

inline Matrix dense_apply(const DenseLayer& layer, const Matrix& x, DenseCache* cache = nullptr) {
  detail::check_shape(x.rows() == layer.input_size(), "dense input width");
  Matrix pre = detail::add_bias(layer.weights * x, layer.bias);
  Matrix out = activate(layer.activation, pre);
  if (cache) *cache = DenseCache{x, pre, out};
  return out;
}

/// Accumulates into `grads` and returns d(loss)/d(input).
inline Matrix dense_backward(const DenseLayer& layer, const DenseCache& cache, const Matrix& d_out, DenseLayer& grads) {
  Matrix d_pre = d_out.cwiseProduct(activation_derivative(layer.activation, cache.pre, cache.output));
  grads.weights.noalias() += d_pre * cache.input.transpose();
  grads.bias += d_pre.rowwise().sum();
  return layer.weights.transpose() * d_pre;
}

// ---------------------------------------------------------------------------
// GRU
//
//   r  = sigmoid(W_r x + U_r h + b_r)        reset gate
//   u  = sigmoid(W_u x + U_u h + b_u)        update gate
//   h' = tanh(W_h x + U_h (r * h) + b_h)     candidate state
//   h_new = u * h + (1 - u) * h'

struct GruCell {
  Matrix w_reset, u_reset;
  Vector b_reset;
  Matrix w_update, u_update;
  Vector b_update;
  Matrix w_cand, u_cand;
  Vector b_cand;

  Index input_size() const { return w_reset.cols(); }
  Index hidden_size() const { return w_reset.rows(); }
};

template <class G, class F>
  requires std::same_as<std::remove_const_t<G>, GruCell>
void visit_tensors(G& g, F&& f) {
  f("w_reset", g.w_reset);
  f("u_reset", g.u_reset);
  f("b_reset", g.b_reset);
  f("w_update", g.w_update);
  f("u_update", g.u_update);
  f("b_update", g.b_update);
  f("w_cand", g.w_cand);
  f("u_cand", g.u_cand);
  f("b_cand", g.b_cand);
}

inline GruCell make_gru(Index in, Index hidden) {
  GruCell c;
  c.w_reset = c.w_update = c.w_cand = Matrix::Zero(hidden, in);
  c.u_reset = c.u_update = c.u_cand = Matrix::Zero(hidden, hidden);
  c.b_reset = c.b_update = c.b_cand = Vector::Zero(hidden);
  return c;
}

struct GruStepCache {
  Matrix x, h, reset, update, cand, reset_h;
};

inline void check_cell(const GruCell& c, const Matrix& x, const Matrix& h) {
  detail::check_shape(x.rows() == c.input_size(), "gru input width");
  detail::check_shape(h.rows() == c.hidden_size() && h.cols() == x.cols(), "gru hidden shape");
  detail::check_shape(c.u_reset.rows() == c.hidden_size() && c.u_reset.cols() == c.hidden_size() &&
                          c.w_update.rows() == c.hidden_size() && c.w_update.cols() == c.input_size() &&
                          c.u_update.rows() == c.hidden_size() && c.u_update.cols() == c.hidden_size() &&
                          c.w_cand.rows() == c.hidden_size() && c.w_cand.cols() == c.input_size() &&
                          c.u_cand.rows() == c.hidden_size() && c.u_cand.cols() == c.hidden_size() &&
                          c.b_reset.size() == c.hidden_size() && c.b_update.size() == c.hidden_size() &&
                          c.b_cand.size() == c.hidden_size(),
                      "gru parameter shapes");
}

inline Matrix gru_step(const GruCell& c, const Matrix& x, const Matrix& h, GruStepCache* cache = nullptr) {
  check_cell(c, x, h);
  Matrix r = sigmoid(detail::add_bias(c.w_reset * x + c.u_reset * h, c.b_reset));
  Matrix u = sigmoid(detail::add_bias(c.w_update * x + c.u_update * h, c.b_update));
  Matrix rh = r.cwiseProduct(h);
  Matrix cand = detail::add_bias(c.w_cand * x + c.u_cand * rh, c.b_cand).array().tanh().matrix();
  Matrix h_new = (u.array() * h.array() + (1.0 - u.array()) * cand.array()).matrix();
  if (cache) *cache = GruStepCache{x, h, std::move(r), std::move(u), std::move(cand), std::move(rh)};
  return h_new;
}

/// Returns d(loss)/d(h_prev); d(loss)/d(x) goes to `dx`.
inline Matrix gru_step_backward(const GruCell& c, const GruStepCache& k, const Matrix& dh_new, GruCell& g,
                                Matrix& dx) {
  const auto& u = k.update;
  const auto& r = k.reset;
  Matrix d_u = dh_new.cwiseProduct(k.h - k.cand);
  Matrix d_cand = dh_new.cwiseProduct((1.0 - u.array()).matrix());
  Matrix dh = dh_new.cwiseProduct(u);

  Matrix d_cand_pre = d_cand.cwiseProduct((1.0 - k.cand.array().square()).matrix());
  g.w_cand.noalias() += d_cand_pre * k.x.transpose();
  g.u_cand.noalias() += d_cand_pre * k.reset_h.transpose();
  g.b_cand += d_cand_pre.rowwise().sum();
  Matrix d_rh = c.u_cand.transpose() * d_cand_pre;
  Matrix d_r = d_rh.cwiseProduct(k.h);
  dh += d_rh.cwiseProduct(r);

  Matrix d_u_pre = d_u.cwiseProduct((u.array() * (1.0 - u.array())).matrix());
  Matrix d_r_pre = d_r.cwiseProduct((r.array() * (1.0 - r.array())).matrix());
  g.w_update.noalias() += d_u_pre * k.x.transpose();
  g.u_update.noalias() += d_u_pre * k.h.transpose();
  g.b_update += d_u_pre.rowwise().sum();
  g.w_reset.noalias() += d_r_pre * k.x.transpose();
  g.u_reset.noalias() += d_r_pre * k.h.transpose();
  g.b_reset += d_r_pre.rowwise().sum();

  dx = c.w_reset.transpose() * d_r_pre + c.w_update.transpose() * d_u_pre + c.w_cand.transpose() * d_cand_pre;
  dh.noalias() += c.u_reset.transpose() * d_r_pre;
  dh.noalias() += c.u_update.transpose() * d_u_pre;
  return dh;
}

// ---------------------------------------------------------------------------
// LSTM
//
//   f, i, o = sigmoid(W x + U h + b) for the forget, input and output gates
//   C_bar   = tanh(W_c x + U_c h + b_c)      candidate information
//   c_new   = f * c + i * C_bar
//   h_new   = o * tanh(c_new)

struct LstmCell {
  Matrix w_forget, u_forget;
  Vector b_forget;
  Matrix w_input, u_input;
  Vector b_input;
  Matrix w_output, u_output;
  Vector b_output;
  Matrix w_cand, u_cand;
  Vector b_cand;

  Index input_size() const { return w_forget.cols(); }
  Index hidden_size() const { return w_forget.rows(); }
};

template <class G, class F>
  requires std::same_as<std::remove_const_t<G>, LstmCell>
void visit_tensors(G& g, F&& f) {
  f("w_forget", g.w_forget);
  f("u_forget", g.u_forget);
  f("b_forget", g.b_forget);
  f("w_input", g.w_input);
  f("u_input", g.u_input);
  f("b_input", g.b_input);
  f("w_output", g.w_output);
  f("u_output", g.u_output);
  f("b_output", g.b_output);
  f("w_cand", g.w_cand);
  f("u_cand", g.u_cand);
  f("b_cand", g.b_cand);
}

inline LstmCell make_lstm(Index in, Index hidden) {
  LstmCell c;
  c.w_forget = c.w_input = c.w_output = c.w_cand = Matrix::Zero(hidden, in);
  c.u_forget = c.u_input = c.u_output = c.u_cand = Matrix::Zero(hidden, hidden);
  c.b_forget = c.b_input = c.b_output = c.b_cand = Vector::Zero(hidden);
  return c;
}

struct LstmState {
  Matrix h;
  Matrix c;
};

struct LstmStepCache {
  Matrix x, h, c, forget, input, output, cand, c_new_tanh;
};

inline void check_cell(const LstmCell& c, const Matrix& x, const Matrix& h, const Matrix& cs) {
  const auto n = c.hidden_size();
  const auto in = c.input_size();
  detail::check_shape(x.rows() == in, "lstm input width");
  detail::check_shape(h.rows() == n && cs.rows() == n && h.cols() == x.cols() && cs.cols() == x.cols(),
                      "lstm state shape");
  bool ok = true;
  for (const Matrix* w : {&c.w_input, &c.w_output, &c.w_cand}) ok = ok && w->rows() == n && w->cols() == in;
  for (const Matrix* u : {&c.u_forget, &c.u_input, &c.u_output, &c.u_cand}) ok = ok && u->rows() == n && u->cols() == n;
  for (const Vector* b : {&c.b_forget, &c.b_input, &c.b_output, &c.b_cand}) ok = ok && b->size() == n;
  detail::check_shape(ok, "lstm parameter shapes");
}

inline LstmState lstm_step(const LstmCell& c, const Matrix& x, const Matrix& h, const Matrix& cs,
                           LstmStepCache* cache = nullptr) {
  check_cell(c, x, h, cs);
  Matrix f = sigmoid(detail::add_bias(c.w_forget * x + c.u_forget * h, c.b_forget));
  Matrix i = sigmoid(detail::add_bias(c.w_input * x + c.u_input * h, c.b_input));
  Matrix o = sigmoid(detail::add_bias(c.w_output * x + c.u_output * h, c.b_output));
  Matrix cand = detail::add_bias(c.w_cand * x + c.u_cand * h, c.b_cand).array().tanh().matrix();
  Matrix c_new = (f.array() * cs.array() + i.array() * cand.array()).matrix();
  Matrix c_tanh = c_new.array().tanh().matrix();
  Matrix h_new = o.cwiseProduct(c_tanh);
  if (cache) *cache = LstmStepCache{x, h, cs, std::move(f), std::move(i), std::move(o), std::move(cand), c_tanh};
  return {std::move(h_new), std::move(c_new)};
}

/// Takes gradients w.r.t. (h_new, c_new), returns them w.r.t. (h, c).
inline LstmState lstm_step_backward(const LstmCell& c, const LstmStepCache& k, const Matrix& dh_new,
                                    const Matrix& dc_new, LstmCell& g, Matrix& dx) {
  Matrix d_o = dh_new.cwiseProduct(k.c_new_tanh);
  Matrix dc = dc_new + dh_new.cwiseProduct(k.output).cwiseProduct((1.0 - k.c_new_tanh.array().square()).matrix());
  Matrix d_f = dc.cwiseProduct(k.c);
  Matrix d_i = dc.cwiseProduct(k.cand);
  Matrix d_cand = dc.cwiseProduct(k.input);
  Matrix dc_prev = dc.cwiseProduct(k.forget);

  auto gate_pre = [](const Matrix& d, const Matrix& gate) {
    return d.cwiseProduct((gate.array() * (1.0 - gate.array())).matrix()).eval();
  };
  Matrix d_f_pre = gate_pre(d_f, k.forget);
  Matrix d_i_pre = gate_pre(d_i, k.input);
  Matrix d_o_pre = gate_pre(d_o, k.output);
  Matrix d_c_pre = d_cand.cwiseProduct((1.0 - k.cand.array().square()).matrix());

  auto accumulate = [&](Matrix& gw, Matrix& gu, Vector& gb, const Matrix& d_pre) {
    gw.noalias() += d_pre * k.x.transpose();
    gu.noalias() += d_pre * k.h.transpose();
    gb += d_pre.rowwise().sum();
  };
  accumulate(g.w_forget, g.u_forget, g.b_forget, d_f_pre);
  accumulate(g.w_input, g.u_input, g.b_input, d_i_pre);
  accumulate(g.w_output, g.u_output, g.b_output, d_o_pre);
  accumulate(g.w_cand, g.u_cand, g.b_cand, d_c_pre);

  dx = c.w_forget.transpose() * d_f_pre + c.w_input.transpose() * d_i_pre + c.w_output.transpose() * d_o_pre +
       c.w_cand.transpose() * d_c_pre;
  Matrix dh = c.u_forget.transpose() * d_f_pre + c.u_input.transpose() * d_i_pre + c.u_output.transpose() * d_o_pre +
              c.u_cand.transpose() * d_c_pre;
  return {std::move(dh), std::move(dc_prev)};
}

// ---------------------------------------------------------------------------
// Recurrent layers over a sequence (zero initial state)

using RecurrentLayer = std::variant<GruCell, LstmCell>;

template <class L, class F>
  requires std::same_as<std::remove_const_t<L>, RecurrentLayer>
void visit_tensors(L& layer, F&& f) {
  std::visit([&](auto& cell) { visit_tensors(cell, f); }, layer);
}

inline Index hidden_size(const RecurrentLayer& layer) {
  return std::visit([](const auto& c) { return c.hidden_size(); }, layer);
}

inline Index input_size(const RecurrentLayer& layer) {
  return std::visit([](const auto& c) { return c.input_size(); }, layer);
}

struct SequenceCache {
  std::vector<GruStepCache> gru;
  std::vector<LstmStepCache> lstm;
};

/// Hidden state after every step.
inline std::vector<Matrix> run_sequence(const RecurrentLayer& layer, const std::vector<Matrix>& inputs,
                                        SequenceCache* cache = nullptr) {
  if (inputs.empty()) fail(ErrorCode::shape_mismatch, "empty input sequence");
  const auto batch = inputs.front().cols();
  const auto n = hidden_size(layer);
  std::vector<Matrix> outputs;
  outputs.reserve(inputs.size());
  if (cache) *cache = SequenceCache{};
  if (const auto* gru = std::get_if<GruCell>(&layer)) {
    Matrix h = Matrix::Zero(n, batch);
    for (const auto& x : inputs) {
      GruStepCache* step = nullptr;
      if (cache) step = &cache->gru.emplace_back();
      h = gru_step(*gru, x, h, step);
      outputs.push_back(h);
    }
  } else {
    const auto& lstm = std::get<LstmCell>(layer);
    LstmState s{Matrix::Zero(n, batch), Matrix::Zero(n, batch)};
    for (const auto& x : inputs) {
      LstmStepCache* step = nullptr;
      if (cache) step = &cache->lstm.emplace_back();
      s = lstm_step(lstm, x, s.h, s.c, step);
      outputs.push_back(s.h);
    }
  }
  return outputs;
}

/// Backpropagation through time. `d_outputs[t]` is the loss gradient w.r.t.
/// the hidden state emitted at step t; returns gradients w.r.t. the inputs.
inline std::vector<Matrix> backprop_sequence(const RecurrentLayer& layer, const SequenceCache& cache,
                                             const std::vector<Matrix>& d_outputs, RecurrentLayer& grads) {
  const auto steps = d_outputs.size();
  std::vector<Matrix> d_inputs(steps);
  if (const auto* gru = std::get_if<GruCell>(&layer)) {
    auto& g = std::get<GruCell>(grads);
    if (cache.gru.size() != steps) fail(ErrorCode::stale_cache, "sequence cache length mismatch");
    Matrix dh = Matrix::Zero(d_outputs.back().rows(), d_outputs.back().cols());
    for (std::size_t t = steps; t-- > 0;) {
      dh += d_outputs[t];
      dh = gru_step_backward(*gru, cache.gru[t], dh, g, d_inputs[t]);
    }
  } else {
    const auto& lstm = std::get<LstmCell>(layer);
    auto& g = std::get<LstmCell>(grads);
    if (cache.lstm.size() != steps) fail(ErrorCode::stale_cache, "sequence cache length mismatch");
    LstmState d{Matrix::Zero(d_outputs.back().rows(), d_outputs.back().cols()),
                Matrix::Zero(d_outputs.back().rows(), d_outputs.back().cols())};
    for (std::size_t t = steps; t-- > 0;) {
      d.h += d_outputs[t];
      d = lstm_step_backward(lstm, cache.lstm[t], d.h, d.c, g, d_inputs[t]);
    }
  }
  return d_inputs;
}

// ---------------------------------------------------------------------------
// Dropout (inverted scaling: survivors are multiplied by 1/(1-p))

struct DropoutSpec {
  double rate = 0.0;
  bool training = false;
};

inline Matrix dropout_apply(const DropoutSpec& spec, const Matrix& x, Rng& rng, Matrix* mask_out = nullptr) {
  if (spec.rate < 0.0 || spec.rate >= 1.0) fail(ErrorCode::invalid_hyperparams, "dropout rate outside [0,1)");
  if (!spec.training || spec.rate == 0.0) {
    if (mask_out) *mask_out = Matrix::Ones(x.rows(), x.cols());
    return x;
  }
  std::bernoulli_distribution keep(1.0 - spec.rate);
  const double scale = 1.0 / (1.0 - spec.rate);
  Matrix mask(x.rows(), x.cols());
  for (Index j = 0; j < x.cols(); ++j)
    for (Index i = 0; i < x.rows(); ++i) mask(i, j) = keep(rng) ? scale : 0.0;
  if (mask_out) *mask_out = mask;
  return x.cwiseProduct(mask);
}

// ---------------------------------------------------------------------------
// Losses (means over every element of the prediction matrix)

enum class LossKind { mse, mae, rmse };

struct LossResult {
  double value = 0.0;
  Matrix gradient;  // d(value)/d(predictions)
};

inline LossResult loss(LossKind kind, const Matrix& predictions, const Matrix& targets) {
  detail::check_shape(predictions.rows() == targets.rows() && predictions.cols() == targets.cols(), "loss operands");
  const auto n = static_cast<double>(predictions.size());
  if (n == 0) fail(ErrorCode::empty_dataset, "loss over zero elements");
  Matrix residual = predictions - targets;
  switch (kind) {
    case LossKind::mse:
      return {residual.squaredNorm() / n, 2.0 * residual / n};
    case LossKind::mae: {
      // Subgradient 0 at a zero residual.
      Matrix sign = residual.unaryExpr([](double r) { return r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0); });
      return {residual.cwiseAbs().sum() / n, sign / n};
    }
    case LossKind::rmse: {
      double rmse = std::sqrt(residual.squaredNorm() / n);
      if (rmse == 0.0) return {0.0, Matrix::Zero(residual.rows(), residual.cols())};
      return {rmse, residual / (n * rmse)};
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// Parameter visiting, initialization, optimizers

/// Flat views over every parameter tensor of `model`, in visiting order.
template <class M>
std::vector<std::span<double>> parameter_spans(M& model) {
  std::vector<std::span<double>> out;
  visit_tensors(model, [&](std::string_view, auto& t) { out.emplace_back(t.data(), static_cast<std::size_t>(t.size())); });
  return out;
}

template <class M>
std::size_t parameter_count(const M& model) {
  std::size_t n = 0;
  visit_tensors(model, [&](std::string_view, const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

template <class M>
M zeros_like(const M& model) {
  M z = model;
  visit_tensors(z, [](std::string_view, auto& t) { t.setZero(); });
  return z;
}

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
inline void glorot_uniform(Matrix& w, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Index j = 0; j < w.cols(); ++j)
    for (Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
}

/// Glorot for weight matrices, zeros for biases.
template <class M>
void initialize(M& model, Rng& rng) {
  visit_tensors(model, [&](std::string_view, auto& t) {
    if constexpr (std::is_same_v<std::remove_cvref_t<decltype(t)>, Vector>)
      t.setZero();
    else
      glorot_uniform(t, rng);
  });
}

enum class OptimizerKind { sgd, adam };

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  fail(ErrorCode::invalid_hyperparams, "unknown optimizer '" + std::string(s) + "'");
}

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

inline OptimizerState make_optimizer(OptimizerKind kind, double learning_rate) {
  if (!(learning_rate > 0.0)) fail(ErrorCode::invalid_hyperparams, "learning rate must be positive");
  OptimizerState s;
  s.kind = kind;
  s.learning_rate = learning_rate;
  return s;
}

inline void optimizer_step(OptimizerState& s, const std::vector<std::span<double>>& params,
                           const std::vector<std::span<double>>& grads) {
  if (params.size() != grads.size()) fail(ErrorCode::shape_mismatch, "parameter/gradient tensor count");
  if (s.kind == OptimizerKind::sgd) {
    for (std::size_t t = 0; t < params.size(); ++t)
      for (std::size_t i = 0; i < params[t].size(); ++i) params[t][i] -= s.learning_rate * grads[t][i];
    ++s.step;
    return;
  }
  if (s.first_moment.empty()) {
    for (const auto& p : params) {
      s.first_moment.emplace_back(p.size(), 0.0);
      s.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& m = s.first_moment[t];
    auto& v = s.second_moment[t];
    if (m.size() != params[t].size()) fail(ErrorCode::shape_mismatch, "optimizer moment shape");
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double g = grads[t][i];
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g;
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g * g;
      params[t][i] -= s.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + s.epsilon);
    }
  }
}

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
inline double clip_global_norm(const std::vector<std::span<double>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (const auto& g : grads)
      for (double& v : g) v *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// JSON form: {"rows", "cols", "data"} with row-major data.

template <class T>
Json tensor_to_json(const T& t) {
  Json data = Json::array();
  for (Index i = 0; i < t.rows(); ++i)
    for (Index j = 0; j < t.cols(); ++j) data.push_back(t(i, j));
  return Json{{"rows", t.rows()}, {"cols", t.cols()}, {"data", std::move(data)}};
}

template <class T>
void tensor_from_json(const Json& j, T& t) {
  const auto rows = j.at("rows").get<Index>();
  const auto cols = j.at("cols").get<Index>();
  const auto& data = j.at("data");
  if (data.size() != static_cast<std::size_t>(rows * cols)) fail(ErrorCode::shape_mismatch, "tensor data length");
  if constexpr (std::is_same_v<T, Vector>) {
    if (cols != 1) fail(ErrorCode::shape_mismatch, "vector tensor with cols != 1");
    t.resize(rows);
  } else {
    t.resize(rows, cols);
  }
  std::size_t k = 0;
  for (Index i = 0; i < rows; ++i)
    for (Index j2 = 0; j2 < cols; ++j2) t(i, j2) = data[k++].get<double>();
}

template <class L>
Json params_to_json(const L& layer) {
  Json params = Json::object();
  visit_tensors(layer, [&](std::string_view name, const auto& t) { params[std::string(name)] = tensor_to_json(t); });
  return params;
}

template <class L>
void params_from_json(const Json& params, L& layer) {
  visit_tensors(layer, [&](std::string_view name, auto& t) { tensor_from_json(params.at(std::string(name)), t); });
}

inline Json dense_to_json(const DenseLayer& l) {
  return Json{{"kind", "dense"},
              {"input", l.input_size()},
              {"output", l.output_size()},
              {"activation", std::string(to_string(l.activation))},
              {"params", params_to_json(l)}};
}

inline DenseLayer dense_from_json(const Json& j) {
  if (j.at("kind") != "dense") fail(ErrorCode::shape_mismatch, "expected a dense layer");
  auto l = make_dense(j.at("input").get<Index>(), j.at("output").get<Index>(),
                      parse_activation(j.at("activation").get<std::string>()));
  params_from_json(j.at("params"), l);
  return l;
}

inline Json recurrent_to_json(const RecurrentLayer& layer) {
  return Json{{"kind", std::holds_alternative<GruCell>(layer) ? "gru" : "lstm"},
              {"input", input_size(layer)},
              {"hidden", hidden_size(layer)},
              {"params", std::visit([](const auto& c) { return params_to_json(c); }, layer)}};
}

inline RecurrentLayer recurrent_from_json(const Json& j) {
  const auto kind = j.at("kind").get<std::string>();
  const auto in = j.at("input").get<Index>();
  const auto hidden = j.at("hidden").get<Index>();
  RecurrentLayer layer;
  if (kind == "gru")
    layer = make_gru(in, hidden);
  else if (kind == "lstm")
    layer = make_lstm(in, hidden);
  else
    fail(ErrorCode::shape_mismatch, "unknown recurrent kind '" + kind + "'");
  std::visit([&](auto& c) { params_from_json(j.at("params"), c); }, layer);
  return layer;
}

}  // namespace ipft::nn
