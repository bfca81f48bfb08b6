#pragma once

// Hybrid search: an evolution strategy moves a search point over the
// numerical genotype in [0,1]^n, and every individual picks its nominal
// hyperparameters with a Gaussian-process Bayesian optimization step over a
// store of observations shared by the whole population.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ipft/composite_model.hpp"
#include "ipft/error.hpp"
#include "ipft/trace_ingest.hpp"

namespace ipft {

using Genotype = std::vector<double>;

inline Genotype init_search_point(std::size_t n) {
  if (n == 0) fail(ErrorCode::invalid_dimension, "genotype dimension must be positive");
  return Genotype(n, 0.5);
}

/// Gaussian noise per coordinate, clamped to [0,1].
inline Genotype mutate(const Genotype& point, double sigma, nn::Rng& rng) {
  Genotype out(point);
  if (sigma <= 0.0) return out;
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& g : out) g = std::clamp(g + noise(rng), 0.0, 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// Search ranges

enum class RangeScale { integer, real, log };

struct ParamRange {
  std::string name;
  double lo = 0.0;
  double hi = 1.0;
  RangeScale scale = RangeScale::real;
};

inline double scale_coordinate(double g, const ParamRange& r) {
  g = std::clamp(g, 0.0, 1.0);
  switch (r.scale) {
    case RangeScale::integer: return std::round(r.lo + g * (r.hi - r.lo));
    case RangeScale::real: return r.lo + g * (r.hi - r.lo);
    case RangeScale::log:
      return std::clamp(std::exp(std::log(r.lo) + g * (std::log(r.hi) - std::log(r.lo))), r.lo, r.hi);
  }
  return r.lo;
}

inline std::vector<double> scale_values(const Genotype& point, const std::vector<ParamRange>& ranges) {
  if (point.size() != ranges.size()) fail(ErrorCode::invalid_dimension, "genotype and range counts differ");
  std::vector<double> out(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) out[i] = scale_coordinate(point[i], ranges[i]);
  return out;
}

/// Ranges over the numerical hyperparameters, in NumericalHyperparams order.
inline std::vector<ParamRange> default_numerical_ranges() {
  return {{"recurrent_layers", 1, 2, RangeScale::integer}, {"ff_layers_global", 1, 4, RangeScale::integer},
          {"ff_layers_head", 1, 4, RangeScale::integer},   {"neurons", 4, 128, RangeScale::integer},
          {"lookback", 4, 32, RangeScale::integer},        {"epochs", 5, 100, RangeScale::integer},
          {"batch_size", 8, 128, RangeScale::integer},     {"dropout", 0.0, 0.5, RangeScale::real},
          {"learning_rate", 1e-4, 1e-1, RangeScale::log}};
}

inline void validate(const std::vector<ParamRange>& ranges) {
  if (ranges.empty()) fail(ErrorCode::invalid_dimension, "no search ranges");
  for (const auto& r : ranges) {
    if (!(r.hi >= r.lo)) fail(ErrorCode::invalid_hyperparams, "range '" + r.name + "' has hi < lo");
    if (r.scale == RangeScale::log && !(r.lo > 0.0)) fail(ErrorCode::invalid_hyperparams, "log range '" + r.name + "' must be positive");
  }
}

inline NumericalHyperparams numerical_from_values(const std::vector<double>& v) {
  if (v.size() != 9) fail(ErrorCode::invalid_dimension, "expected 9 numerical hyperparameters");
  NumericalHyperparams h;
  h.recurrent_layers = static_cast<int>(v[0]);
  h.ff_layers_global = static_cast<int>(v[1]);
  h.ff_layers_head = static_cast<int>(v[2]);
  h.neurons = static_cast<int>(v[3]);
  h.lookback = static_cast<int>(v[4]);
  h.epochs = static_cast<int>(v[5]);
  h.batch_size = static_cast<int>(v[6]);
  h.dropout = v[7];
  h.learning_rate = v[8];
  return h;
}

inline NumericalHyperparams scale_genotype(const Genotype& point, const std::vector<ParamRange>& ranges) {
  return numerical_from_values(scale_values(point, ranges));
}

// ---------------------------------------------------------------------------
// Configuration

struct HbesConfig {
  std::size_t n_pop = 8;
  std::size_t top_n = 3;
  std::size_t iterations = 30;
  double sigma0 = 0.3;
  double decay = 0.9;
  std::size_t bo_budget = 240;     // N: store size after which BO stops proposing
  std::size_t bo_warm_start = 4;   // n0: random proposals until the store holds this many
  std::uint64_t seed = 0;
  double length_scale = 1.0;
  double noise = 1e-6;
};

inline void validate(const HbesConfig& c) {
  auto check = [](bool ok, const char* what) {
    if (!ok) fail(ErrorCode::config_invalid, what);
  };
  check(c.n_pop >= 1, "n_pop must be at least 1");
  check(c.top_n >= 1 && c.top_n <= c.n_pop, "top_n must lie in [1, n_pop]");
  check(c.iterations >= 1, "iterations must be at least 1");
  check(c.sigma0 >= 0.0, "sigma0 must be non-negative");
  check(c.decay > 0.0 && c.decay <= 1.0, "decay must lie in (0, 1]");
  check(c.bo_budget >= 1, "BO budget must be at least 1");
  check(c.bo_warm_start <= c.bo_budget, "warm-start count exceeds the BO budget");
  check(c.length_scale > 0.0 && c.noise >= 0.0, "kernel parameters");
}

inline double sigma_schedule(std::size_t iteration, const HbesConfig& c) {
  return c.sigma0 * std::pow(c.decay, static_cast<double>(iteration));
}

// ---------------------------------------------------------------------------
// Gaussian process over (one-hot nominal, genotype)

struct Posterior {
  double mean = 0.0;
  double sd = 0.0;
};

/// Zero-mean GP with a unit-variance RBF kernel over standardized targets.
class GaussianProcess {
 public:
  GaussianProcess(double length_scale = 1.0, double noise = 1e-6) : length_(length_scale), noise_(noise) {}

  void fit(std::vector<std::vector<double>> x, std::vector<double> y) {
    if (x.size() != y.size()) fail(ErrorCode::shape_mismatch, "GP inputs and targets differ in count");
    x_ = std::move(x);
    const auto n = static_cast<Eigen::Index>(y.size());
    if (n == 0) return;
    double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    y_mean_ = mean;
    y_scale_ = var > 0.0 ? std::sqrt(var) : 1.0;
    Eigen::VectorXd ys(n);
    for (Eigen::Index i = 0; i < n; ++i) ys(i) = (y[static_cast<std::size_t>(i)] - y_mean_) / y_scale_;
    Eigen::MatrixXd k(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j <= i; ++j) k(i, j) = k(j, i) = kernel(x_[i], x_[j]);
    for (double jitter = noise_;; jitter = std::max(1e-12, jitter * 10.0)) {
      Eigen::MatrixXd kk = k;
      kk.diagonal().array() += jitter;
      chol_.compute(kk);
      if (chol_.info() == Eigen::Success) break;
      if (jitter > 1.0) fail(ErrorCode::shape_mismatch, "GP covariance is not positive definite");
    }
    alpha_ = chol_.solve(ys);
  }

  Posterior predict(const std::vector<double>& x) const {
    if (x_.empty()) return {0.0, 1.0};
    const auto n = static_cast<Eigen::Index>(x_.size());
    Eigen::VectorXd ks(n);
    for (Eigen::Index i = 0; i < n; ++i) ks(i) = kernel(x, x_[i]);
    double mean = ks.dot(alpha_);
    double var = 1.0 - ks.dot(chol_.solve(ks));
    return {y_mean_ + y_scale_ * mean, y_scale_ * std::sqrt(std::max(0.0, var))};
  }

  double kernel(const std::vector<double>& a, const std::vector<double>& b) const {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
    return std::exp(-0.5 * d / (length_ * length_));
  }

 private:
  double length_;
  double noise_;
  std::vector<std::vector<double>> x_;
  double y_mean_ = 0.0;
  double y_scale_ = 1.0;
  Eigen::LLT<Eigen::MatrixXd> chol_;
  Eigen::VectorXd alpha_;
};

/// Minimization-form expected improvement over the incumbent `best`.
inline double expected_improvement(double best, const Posterior& p) {
  if (!(p.sd > 0.0)) return 0.0;
  double z = (best - p.mean) / p.sd;
  double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
  double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return (best - p.mean) * cdf + p.sd * pdf;
}

// ---------------------------------------------------------------------------
// Observation store

struct Observation {
  std::size_t candidate = 0;  // index into the candidate space
  Genotype genotype;
  double fitness = 0.0;
};

class NominalObservationStore {
 public:
  void append(Observation o) { observations_.push_back(std::move(o)); }

  std::optional<double> find(std::size_t candidate, const Genotype& g) const {
    for (const auto& o : observations_)
      if (o.candidate == candidate && o.genotype == g) return o.fitness;
    return std::nullopt;
  }

  const std::vector<Observation>& observations() const { return observations_; }
  std::size_t size() const { return observations_.size(); }
  bool empty() const { return observations_.empty(); }

  double best_fitness() const {
    double b = std::numeric_limits<double>::infinity();
    for (const auto& o : observations_) b = std::min(b, o.fitness);
    return b;
  }

 private:
  std::vector<Observation> observations_;
};

/// GP input: one-hot candidate index followed by the genotype.
inline std::vector<double> gp_features(std::size_t candidate, std::size_t candidates, const Genotype& g) {
  std::vector<double> x(candidates, 0.0);
  x[candidate] = 1.0;
  x.insert(x.end(), g.begin(), g.end());
  return x;
}

inline GaussianProcess fit_store(const NominalObservationStore& store, std::size_t candidates, double length_scale,
                                 double noise) {
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (const auto& o : store.observations()) {
    x.push_back(gp_features(o.candidate, candidates, o.genotype));
    y.push_back(o.fitness);
  }
  GaussianProcess gp(length_scale, noise);
  gp.fit(std::move(x), std::move(y));
  return gp;
}

struct Proposal {
  std::size_t candidate = 0;
  bool random = false;
  std::vector<double> scores;  // EI per candidate; empty for random proposals
};

/// Candidate with the largest expected improvement for the given genotype;
/// uniform at random while the store holds fewer than `warm_start`
/// observations. Ties go to the lower candidate index.
inline Proposal bo_propose(const NominalObservationStore& store, std::size_t candidates, const Genotype& g,
                           std::size_t warm_start, nn::Rng& rng, double length_scale = 1.0, double noise = 1e-6) {
  if (candidates == 0) fail(ErrorCode::empty_candidate_space, "no nominal candidates");
  if (store.size() < warm_start || store.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, candidates - 1);
    return {pick(rng), true, {}};
  }
  auto gp = fit_store(store, candidates, length_scale, noise);
  const double best = store.best_fitness();
  Proposal p;
  for (std::size_t c = 0; c < candidates; ++c) p.scores.push_back(expected_improvement(best, gp.predict(gp_features(c, candidates, g))));
  p.candidate = static_cast<std::size_t>(std::max_element(p.scores.begin(), p.scores.end()) - p.scores.begin());
  return p;
}

/// Candidate with the lowest posterior mean; used once the BO budget is spent.
inline std::size_t bo_exploit(const NominalObservationStore& store, std::size_t candidates, const Genotype& g,
                              double length_scale = 1.0, double noise = 1e-6) {
  if (candidates == 0) fail(ErrorCode::empty_candidate_space, "no nominal candidates");
  auto gp = fit_store(store, candidates, length_scale, noise);
  std::size_t best = 0;
  double best_mean = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < candidates; ++c) {
    double m = gp.predict(gp_features(c, candidates, g)).mean;
    if (m < best_mean) best_mean = m, best = c;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Search loop

struct ObjectiveResult {
  double fitness = 0.0;
  std::shared_ptr<CompositeModel> model;  // null for surrogate objectives
};

/// Fitness of (genotype, its scaled values, nominal choice); lower is better.
using Objective =
    std::function<ObjectiveResult(const Genotype&, const std::vector<double>&, const NominalHyperparams&)>;

enum class EvalStatus { evaluated, reused, budget_exhausted };

inline std::string_view to_string(EvalStatus s) {
  switch (s) {
    case EvalStatus::evaluated: return "evaluated";
    case EvalStatus::reused: return "reused";
    case EvalStatus::budget_exhausted: return "BudgetExhausted";
  }
  return "";
}

struct FitnessRecord {
  std::size_t iteration = 0;
  std::size_t individual = 0;
  Genotype genotype;
  std::vector<double> decoded;
  NominalHyperparams nominal;
  double fitness = 0.0;
  double wall_seconds = 0.0;
  double best_so_far = 0.0;
  bool random_proposal = false;
  EvalStatus status = EvalStatus::evaluated;
};

struct HbesResult {
  FitnessRecord best;
  std::shared_ptr<CompositeModel> best_model;
  std::vector<FitnessRecord> history;
  std::vector<double> best_per_iteration;
  std::vector<Genotype> search_points;  // point at the start of every iteration
  NominalObservationStore store;
  std::size_t budget_exhausted = 0;
};

/// The evolution strategy: every iteration mutates the search point n_pop
/// times, lets each individual choose its nominals through the shared
/// store, evaluates, and moves the point to the coordinate-wise mean of the
/// top_n genotypes. The best individual over all iterations is returned.
/// A fixed nominal skips the BO step.
inline HbesResult hbes_run(const HbesConfig& cfg, const std::vector<ParamRange>& ranges, const Objective& objective,
                           const std::vector<NominalHyperparams>& candidates = nominal_catalog(),
                           std::optional<NominalHyperparams> fixed_nominal = std::nullopt) {
  validate(cfg);
  validate(ranges);
  if (candidates.empty() && !fixed_nominal) fail(ErrorCode::empty_candidate_space, "no nominal candidates");
  nn::Rng rng(cfg.seed);
  HbesResult out;
  out.best.fitness = std::numeric_limits<double>::infinity();
  auto point = init_search_point(ranges.size());

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    out.search_points.push_back(point);
    const double sigma = sigma_schedule(it, cfg);
    std::vector<FitnessRecord> population;
    for (std::size_t i = 0; i < cfg.n_pop; ++i) {
      FitnessRecord r;
      r.iteration = it;
      r.individual = i;
      r.genotype = mutate(point, sigma, rng);
      r.decoded = scale_values(r.genotype, ranges);

      std::size_t cand = 0;
      if (fixed_nominal) {
        auto f = std::find(candidates.begin(), candidates.end(), *fixed_nominal);
        cand = f == candidates.end() ? 0 : static_cast<std::size_t>(f - candidates.begin());
        r.nominal = *fixed_nominal;
      } else {
        if (out.store.size() >= cfg.bo_budget) {
          cand = bo_exploit(out.store, candidates.size(), r.genotype, cfg.length_scale, cfg.noise);
          r.status = EvalStatus::budget_exhausted;
          ++out.budget_exhausted;
        } else {
          auto p = bo_propose(out.store, candidates.size(), r.genotype, cfg.bo_warm_start, rng, cfg.length_scale,
                              cfg.noise);
          cand = p.candidate;
          r.random_proposal = p.random;
        }
        r.nominal = candidates[cand];
      }

      if (auto seen = out.store.find(cand, r.genotype)) {
        r.fitness = *seen;
        r.status = EvalStatus::reused;
      } else {
        auto t0 = std::chrono::steady_clock::now();
        auto res = objective(r.genotype, r.decoded, r.nominal);
        r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        r.fitness = std::isfinite(res.fitness) ? res.fitness : std::numeric_limits<double>::max();
        if (r.status != EvalStatus::budget_exhausted) out.store.append({cand, r.genotype, r.fitness});
        if (r.fitness < out.best.fitness) out.best_model = res.model;
      }
      if (r.fitness < out.best.fitness) out.best = r;
      r.best_so_far = out.best.fitness;
      out.best.best_so_far = out.best.fitness;
      population.push_back(r);
      out.history.push_back(r);
    }
    out.best_per_iteration.push_back(out.best.fitness);

    std::vector<std::size_t> order(population.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return population[a].fitness < population[b].fitness; });
    Genotype next(point.size(), 0.0);
    for (std::size_t k = 0; k < cfg.top_n; ++k)
      for (std::size_t d = 0; d < next.size(); ++d) next[d] += population[order[k]].genotype[d];
    for (auto& v : next) v /= static_cast<double>(cfg.top_n);
    point = std::move(next);
  }
  return out;
}

inline std::string history_csv(const HbesResult& r, const std::vector<ParamRange>& ranges) {
  std::ostringstream out;
  out.precision(10);
  out << "iteration,individual,genotype";
  for (const auto& p : ranges) out << ',' << p.name;
  out << ",nominal,fitness,best_so_far,status,proposal,wall_seconds\n";
  for (const auto& h : r.history) {
    out << h.iteration << ',' << h.individual << ',';
    for (std::size_t i = 0; i < h.genotype.size(); ++i) out << (i ? ";" : "") << h.genotype[i];
    for (double v : h.decoded) out << ',' << v;
    out << ',' << describe(h.nominal) << ',' << h.fitness << ',' << h.best_so_far << ',' << to_string(h.status) << ','
        << (h.random_proposal ? "random" : "ei") << ',' << h.wall_seconds << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Model-training objective

/// Pooled raw datasets per lookback, all anchored from the same first step
/// so that every lookback predicts the same targets.
class LookbackDatasets {
 public:
  LookbackDatasets(Trace trace, int horizon, int step_seconds, std::size_t max_lookback,
                   std::optional<std::map<std::string, std::size_t>> slots = std::nullopt)
      : trace_(std::move(trace)),
        horizon_(horizon),
        step_(step_seconds),
        min_anchor_(max_lookback - 1),
        slots_(std::move(slots)) {}

  const WindowedDataset& get(int lookback) {
    auto it = cache_.find(lookback);
    if (it != cache_.end()) return it->second;
    auto sets = build_node_datasets(trace_, {lookback, horizon_, step_}, min_anchor_, slots_ ? &*slots_ : nullptr);
    auto pooled = pool_by_time(sets);
    if (pooled.empty()) fail(ErrorCode::empty_dataset, "trace too short for lookback " + std::to_string(lookback));
    return cache_.emplace(lookback, std::move(pooled)).first->second;
  }

  std::size_t min_anchor() const { return min_anchor_; }

 private:
  Trace trace_;
  int horizon_;
  int step_;
  std::size_t min_anchor_;
  std::optional<std::map<std::string, std::size_t>> slots_;
  std::map<int, WindowedDataset> cache_;
};

struct TrainingObjectiveOptions {
  double test_fraction = 0.2;      // trailing rows held out from the search entirely
  std::optional<int> max_epochs;   // search-time cap on the epochs hyperparameter
  std::uint64_t seed = 0;
};

/// Rows before the test split of a pooled dataset.
inline WindowedDataset search_split(const WindowedDataset& ds, double test_fraction) {
  auto n = static_cast<std::size_t>(std::floor(static_cast<double>(ds.size()) * (1.0 - test_fraction)));
  return ds.slice(0, n);
}

inline WindowedDataset test_split(const WindowedDataset& ds, double test_fraction) {
  auto n = static_cast<std::size_t>(std::floor(static_cast<double>(ds.size()) * (1.0 - test_fraction)));
  return ds.slice(n, ds.size());
}

/// Fitness = best validation MSE (scaled units) of a model trained on the
/// search split.
inline Objective training_objective(std::shared_ptr<LookbackDatasets> data, TrainingObjectiveOptions opts) {
  return [data, opts](const Genotype& g, const std::vector<double>& values, const NominalHyperparams& nom) {
    auto num = numerical_from_values(values);
    const auto& pooled = data->get(num.lookback);
    auto search = search_split(pooled, opts.test_fraction);
    auto model = build_model(num, nom, IoDims{}, opts.seed, g);
    TrainOptions to;
    to.max_epochs = opts.max_epochs;
    auto [trained, report] = train(std::move(model), search, opts.seed, to);
    return ObjectiveResult{report.best_validation_loss, std::make_shared<CompositeModel>(std::move(trained))};
  };
}

}  // namespace ipft
