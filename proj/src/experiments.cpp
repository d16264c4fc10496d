#include "lwrff/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "lwrff/diagnostics.hpp"
#include "lwrff/error.hpp"

namespace lwrff {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
const char* const kCsvHeader =
    "n,lambda,s,scheme,rep,train_metric,test_metric,excess_risk,wall_time_ms";

// Runs body(0..count-1) on up to `threads` workers. The first failure in
// index order is rethrown, so the outcome does not depend on scheduling.
template <class Body>
void parallel_for(std::size_t count, int threads, Body&& body) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || count <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(workers, count); ++t) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Rethrows the active exception with `where` prepended, keeping its category.
[[noreturn]] void rethrow_with_context(const std::string& where) {
  try {
    throw;
  } catch (const UsageError& e) {
    throw UsageError(where + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(where + ": " + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(where + ": " + e.what());
  } catch (const std::exception& e) {
    throw NumericalError(where + ": " + e.what());
  }
}

class Stopwatch {
 public:
  explicit Stopwatch(bool enabled) : enabled_(enabled), start_(std::chrono::steady_clock::now()) {}
  double elapsed_ms() const {
    if (!enabled_) return 0.0;
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  bool enabled_;
  std::chrono::steady_clock::time_point start_;
};

double rmse(const Vector& pred, const Vector& y) {
  return std::sqrt((pred - y).squaredNorm() / static_cast<double>(y.size()));
}

double misclassification(const Vector& pred, const Vector& y) {
  Eigen::Index wrong = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double label = pred[i] >= 0.0 ? 1.0 : -1.0;
    if (label != y[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(y.size());
}

double task_metric(Loss loss, const Vector& pred, const Vector& y) {
  return loss == Loss::Squared ? rmse(pred, y) : misclassification(pred, y);
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Two standard errors of the mean (0 for a single value).
double half_width(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return 2.0 * sd / std::sqrt(static_cast<double>(v.size()));
}

std::string grid_string(const std::vector<Eigen::Index>& grid) {
  std::string out;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(grid[i]);
  }
  return out;
}

Eigen::Index feature_count(const ExperimentConfig& config, SamplingScheme scheme, double dof,
                           double lambda, const KernelSpec& spec, bool& capped) {
  double raw = 0.0;
  switch (config.size_rule) {
    case SizeRule::DofProportional:
      raw = std::ceil(config.size_const * dof);
      break;
    case SizeRule::SufficientCount: {
      const auto rule =
          scheme == SamplingScheme::Plain ? FeatureRule::PlainRFF : FeatureRule::LeverageRFF;
      raw = static_cast<double>(
          required_features(rule, std::max(dof, 1e-12), lambda, spec.feature_bound(), config.delta));
      break;
    }
    case SizeRule::Fixed:
      raw = std::round(config.size_const);
      break;
  }
  capped = raw > static_cast<double>(config.max_features);
  if (capped) {
    spdlog::warn("feature count {} capped at {}", raw, config.max_features);
    raw = static_cast<double>(config.max_features);
  }
  return std::max<Eigen::Index>(1, static_cast<Eigen::Index>(raw));
}

// Draws s features for one of the comparison schemes. `system` factors the
// exact Gram of x and is only used by ExactLeverage.
WeightedFeatureSet draw_features(SamplingScheme scheme, const KernelSpec& spec, const Matrix& x,
                                 const RidgeSystem* system, double lambda, Eigen::Index s,
                                 int pool_factor, Rng& rng, std::uint64_t seed) {
  const Eigen::Index pool = static_cast<Eigen::Index>(pool_factor) * s;
  switch (scheme) {
    case SamplingScheme::Plain:
      return WeightedFeatureSet::plain(spec, rng, s, seed);
    case SamplingScheme::ExactLeverage:
      if (system == nullptr) throw UsageError("exact leverage sampling needs the exact Gram");
      return sample_exact_leverage(spec, x, *system, s, pool, rng, seed).features;
    case SamplingScheme::ApproxLeverage: {
      const Matrix frequencies = spectral_sample(spec, rng, pool);
      const auto profile = approx_leverage_scores(spec, x, frequencies, lambda);
      return resample_by_scores(frequencies, profile.scores, s, SamplingScheme::ApproxLeverage,
                                rng, seed);
    }
  }
  throw UsageError("unknown sampling scheme");
}

LinearModel fit_linear(const FeatureMatrix& z, const Vector& y, Loss loss, double lambda,
                       const WeightedFeatureSet& set, const LipschitzOptions& options) {
  if (loss == Loss::Squared) return fit_ridge(z, y, lambda, set);
  auto model = fit_lipschitz(z, y, loss, lambda, options);
  model.features = set;
  if (!model.converged) {
    spdlog::warn("{} solver stopped at {} iterations (stationarity {})", to_string(loss),
                 model.iterations, model.stationarity);
  }
  return model;
}

void check_task(const Dataset& data, Loss loss) {
  const bool classification = loss != Loss::Squared;
  if (classification != (data.task == Task::Classification)) {
    throw DataError("dataset '" + data.name + "' is a " + to_string(data.task) +
                    " task but the loss is " + to_string(loss));
  }
}

// Train/test views of one repetition, inputs already transformed.
struct PreparedSplit {
  Matrix x_train, x_test;
  Vector y_train, y_test;
  Vector f_test;  // regression function at the test inputs, empty if unknown
};

PreparedSplit prepare_split(const ExperimentConfig& config, const Dataset& data,
                            const SplineTarget* target, Rng& rng) {
  Dataset working = config.subsample && *config.subsample < data.size()
                        ? subsample(data, *config.subsample, rng)
                        : data;
  const Split split = train_test_split(working.size(), config.test_fraction, rng);
  Dataset train = subset(working, split.train);
  Dataset test = subset(working, split.test);

  PreparedSplit out;
  if (target != nullptr && data.task == Task::Regression) out.f_test = (*target)(test.x);
  if (config.standardize && config.kernel.family == KernelFamily::Gaussian) {
    auto st = standardize(train);
    out.x_train = std::move(st.data.x);
    out.x_test = st.transform.apply(test.x);
  } else {
    out.x_train = std::move(train.x);
    out.x_test = std::move(test.x);
  }
  out.y_train = std::move(train.y);
  out.y_test = std::move(test.y);
  return out;
}

struct Hyperparameters {
  double gamma = 1.0;
  double lambda = 1.0;
  double cv_error = 0.0;
};

// k-fold CV of exact kernel ridge regression over the lambda grid (and the
// gamma grid for the Gaussian kernel). Ties go to the first grid point.
Hyperparameters cross_validate(const ExperimentConfig& config, const Matrix& x, const Vector& y,
                               bool classification, Rng& rng) {
  const auto folds = make_folds(x.rows(), config.folds, rng);
  std::vector<double> gammas = config.cv_gammas;
  if (config.kernel.family != KernelFamily::Gaussian) gammas = {config.kernel.gamma};

  Hyperparameters best;
  best.cv_error = std::numeric_limits<double>::infinity();
  for (double gamma : gammas) {
    KernelSpec spec = config.kernel;
    spec.gamma = gamma;
    const Matrix gram = gram_matrix(spec, x);
    std::vector<double> errors(config.cv_lambdas.size(), 0.0);
    for (const auto& held_out : folds) {
      std::vector<bool> is_held(static_cast<std::size_t>(x.rows()), false);
      for (auto i : held_out) is_held[static_cast<std::size_t>(i)] = true;
      std::vector<Eigen::Index> fit_rows;
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        if (!is_held[static_cast<std::size_t>(i)]) fit_rows.push_back(i);
      const Matrix k_fit = gram(fit_rows, fit_rows);
      const Matrix k_held = gram(held_out, fit_rows);
      const Vector y_fit = y(fit_rows);
      const Vector y_held = y(held_out);
      for (std::size_t j = 0; j < config.cv_lambdas.size(); ++j) {
        const RidgeSystem system(k_fit, config.cv_lambdas[j]);
        const Vector pred = k_held * system.solve(y_fit);
        errors[j] += classification
                         ? misclassification(pred, y_held) * static_cast<double>(y_held.size())
                         : (pred - y_held).squaredNorm();
      }
    }
    for (std::size_t j = 0; j < errors.size(); ++j) {
      if (errors[j] < best.cv_error) best = {gamma, config.cv_lambdas[j], errors[j]};
    }
  }
  best.cv_error /= static_cast<double>(x.rows());
  return best;
}

void add(ExperimentResult& r, std::string key, std::string value) {
  r.summary.emplace_back(std::move(key), std::move(value));
}

void add(ExperimentResult& r, std::string key, double value) {
  r.summary.emplace_back(std::move(key), format_double(value));
}

void describe_config(ExperimentResult& r, const ExperimentConfig& c) {
  add(r, "seed", std::to_string(c.seed));
  add(r, "reps", std::to_string(c.reps));
  add(r, "lambda_rule", to_string(c.lambda_rule));
  add(r, "lambda_const", c.lambda_const);
  add(r, "loss", to_string(c.loss));
}

}  // namespace

std::string to_string(LambdaRule rule) {
  switch (rule) {
    case LambdaRule::InvSqrtN: return "inv-sqrt-n";
    case LambdaRule::InvCbrtN: return "inv-cbrt-n";
    case LambdaRule::InvN: return "inv-n";
    case LambdaRule::LogNOverN: return "log-n-over-n";
    case LambdaRule::Fixed: return "fixed";
  }
  return "?";
}

std::string to_string(SizeRule rule) {
  switch (rule) {
    case SizeRule::DofProportional: return "dof";
    case SizeRule::SufficientCount: return "sufficient";
    case SizeRule::Fixed: return "fixed";
  }
  return "?";
}

LambdaRule parse_lambda_rule(const std::string& name) {
  for (auto r : {LambdaRule::InvSqrtN, LambdaRule::InvCbrtN, LambdaRule::InvN,
                 LambdaRule::LogNOverN, LambdaRule::Fixed}) {
    if (to_string(r) == name) return r;
  }
  throw UsageError("unknown lambda rule '" + name +
                   "' (inv-sqrt-n, inv-cbrt-n, inv-n, log-n-over-n, fixed)");
}

SizeRule parse_size_rule(const std::string& name) {
  for (auto r : {SizeRule::DofProportional, SizeRule::SufficientCount, SizeRule::Fixed}) {
    if (to_string(r) == name) return r;
  }
  throw UsageError("unknown size rule '" + name + "' (dof, sufficient, fixed)");
}

double lambda_for(LambdaRule rule, double constant, Eigen::Index n) {
  if (n < 1) throw UsageError("lambda_for: n must be >= 1");
  if (!(constant > 0.0)) throw UsageError("lambda_for: constant must be > 0");
  const double nd = static_cast<double>(n);
  double lambda = constant;
  switch (rule) {
    case LambdaRule::InvSqrtN: lambda = constant / std::sqrt(nd); break;
    case LambdaRule::InvCbrtN: lambda = constant / std::cbrt(nd); break;
    case LambdaRule::InvN: lambda = constant / nd; break;
    case LambdaRule::LogNOverN: lambda = constant * std::log(nd) / nd; break;
    case LambdaRule::Fixed: break;
  }
  if (!(lambda > 0.0)) throw UsageError("lambda rule " + to_string(rule) + " gives lambda <= 0 at n=" +
                                        std::to_string(n));
  return lambda;
}

void ExperimentConfig::validate() const {
  kernel.validate();
  sim.validate();
  auto positive = [](const auto& grid, const char* what) {
    if (grid.empty()) throw UsageError(std::string(what) + " is empty");
    for (auto v : grid)
      if (!(v > 0)) throw UsageError(std::string(what) + " has a non-positive entry");
  };
  positive(n_grid, "n grid");
  positive(s_grid, "s grid");
  positive(cv_lambdas, "CV lambda grid");
  positive(cv_gammas, "CV gamma grid");
  if (schemes.empty()) throw UsageError("no sampling schemes");
  if (reps < 1) throw UsageError("reps must be >= 1");
  if (!(lambda_const > 0.0)) throw UsageError("lambda constant must be > 0");
  if (!(size_const > 0.0)) throw UsageError("size constant must be > 0");
  if (!(delta > 0.0 && delta < 1.0)) throw UsageError("delta must be in (0, 1)");
  if (pool_factor < 1) throw UsageError("pool factor must be >= 1");
  if (max_features < 1) throw UsageError("max features must be >= 1");
  if (algorithm1.min_output < 0) throw UsageError("min output must be >= 0");
  if (eval_points < 1) throw UsageError("eval points must be >= 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw UsageError("test fraction must be in (0, 1)");
  if (folds < 2) throw UsageError("folds must be >= 2");
  if (threads < 1) throw UsageError("threads must be >= 1");
  if (subsample && *subsample < 4) throw UsageError("subsample must be >= 4");
}

std::optional<std::string> ExperimentResult::summary_value(const std::string& key) const {
  for (const auto& [k, v] : summary)
    if (k == key) return v;
  return std::nullopt;
}

Rng task_rng(std::uint64_t seed, int rep, std::uint64_t stream) {
  const std::uint64_t base = seed ^ static_cast<std::uint64_t>(rep);
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

SlopeFit fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw UsageError("fit_loglog_slope: size mismatch");
  if (x.size() < 2) throw UsageError("fit_loglog_slope: need at least two points");
  const std::size_t m = x.size();
  std::vector<double> lx(m), ly(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw NumericalError("fit_loglog_slope: values must be > 0");
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  const double mx = mean_of(lx), my = mean_of(ly);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) throw UsageError("fit_loglog_slope: x values must be distinct");
  SlopeFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  if (m > 2) {
    double rss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double r = ly[i] - fit.intercept - fit.slope * lx[i];
      rss += r * r;
    }
    fit.stderr_slope = std::sqrt(rss / static_cast<double>(m - 2) / sxx);
  }
  return fit;
}

ExperimentResult run_convergence(const ExperimentConfig& config) {
  config.validate();
  const KernelSpec spec = config.sim.learning_kernel();
  const SplineTarget target(config.sim.target_kernel(), config.sim.x0);
  const std::size_t reps = static_cast<std::size_t>(config.reps);
  const std::size_t tasks = config.n_grid.size() * reps;

  std::vector<ResultRow> rows(tasks);
  std::vector<char> capped(tasks, 0);
  parallel_for(tasks, config.threads, [&](std::size_t t) {
    const Eigen::Index n = config.n_grid[t / reps];
    const int rep = static_cast<int>(t % reps);
    try {
      Rng rng = task_rng(config.seed, rep, static_cast<std::uint64_t>(n));
      const Stopwatch clock(config.record_timing);
      SplineSimConfig sim = config.sim;
      sim.n = n;
      const auto generated = generate_spline_sim(sim, rng);
      const Matrix& x = generated.data.x;
      const Vector& y = generated.data.y;
      const double lambda = lambda_for(config.lambda_rule, config.lambda_const, n);

      const RidgeSystem system(gram_matrix(spec, x), lambda);
      bool was_capped = false;
      const Eigen::Index s =
          feature_count(config, config.scheme, system.effective_dof(), lambda, spec, was_capped);
      const auto set = draw_features(config.scheme, spec, x, &system, lambda, s,
                                     config.pool_factor, rng, config.seed);
      const auto z = build_feature_matrix(set, spec, x);
      const auto model = fit_ridge(z, y, lambda, set);

      const Matrix x_eval = uniform_points(config.eval_points, rng);
      const Vector f_eval = target(x_eval);
      Vector y_eval = f_eval;
      std::normal_distribution<double> noise(0.0, 1.0);
      for (Eigen::Index i = 0; i < y_eval.size(); ++i) y_eval[i] += config.sim.sigma * noise(rng);
      const Vector pred = predict(model, spec, x_eval);

      rows[t] = ResultRow{n,
                          lambda,
                          s,
                          config.scheme,
                          rep,
                          rmse(z.values * model.beta, y),
                          rmse(pred, y_eval),
                          (pred - f_eval).squaredNorm() / static_cast<double>(f_eval.size()),
                          clock.elapsed_ms()};
      capped[t] = was_capped;
    } catch (...) {
      rethrow_with_context("convergence run n=" + std::to_string(n) + " rep=" +
                           std::to_string(rep) + " seed=" + std::to_string(config.seed));
    }
  });

  ExperimentResult result;
  result.rows = std::move(rows);
  add(result, "experiment", "convergence");
  describe_config(result, config);
  add(result, "kernel", spec.describe());
  add(result, "target_order", std::to_string(config.sim.target_order));
  add(result, "x0", config.sim.x0);
  add(result, "sigma", config.sim.sigma);
  add(result, "scheme", to_string(config.scheme));
  add(result, "size_rule", to_string(config.size_rule));
  add(result, "size_const", config.size_const);
  add(result, "eval_points", std::to_string(config.eval_points));
  add(result, "capped_rows", std::to_string(std::count(capped.begin(), capped.end(), 1)));

  std::vector<double> ns, means;
  for (std::size_t g = 0; g < config.n_grid.size(); ++g) {
    std::vector<double> risks;
    for (std::size_t r = 0; r < reps; ++r) risks.push_back(result.rows[g * reps + r].excess_risk);
    const double m = mean_of(risks);
    add(result, "mean_excess_risk_n" + std::to_string(config.n_grid[g]), m);
    ns.push_back(static_cast<double>(config.n_grid[g]));
    means.push_back(m);
  }
  // The estimator is a mean of squares, so negatives cannot occur.
  add(result, "negative_excess_risk_rows", "0");
  if (std::set<double>(ns.begin(), ns.end()).size() >= 2) {
    const auto fit = fit_loglog_slope(ns, means);
    add(result, "slope", fit.slope);
    add(result, "slope_stderr", fit.stderr_slope);
    add(result, "intercept", fit.intercept);
  }
  return result;
}

ExperimentResult run_benchmark(const ExperimentConfig& config, const Dataset& data,
                               const SplineTarget* target) {
  config.validate();
  check_task(data, config.loss);
  const bool classification = config.loss != Loss::Squared;
  const bool needs_exact = std::find(config.schemes.begin(), config.schemes.end(),
                                     SamplingScheme::ExactLeverage) != config.schemes.end();

  struct RepOutcome {
    std::vector<ResultRow> rows;
    Hyperparameters chosen;
  };
  std::vector<RepOutcome> outcomes(static_cast<std::size_t>(config.reps));

  parallel_for(outcomes.size(), config.threads, [&](std::size_t t) {
    const int rep = static_cast<int>(t);
    try {
      Rng rng = task_rng(config.seed, rep, 1);
      const auto split = prepare_split(config, data, target, rng);
      const auto chosen = cross_validate(config, split.x_train, split.y_train, classification, rng);
      KernelSpec spec = config.kernel;
      if (spec.family == KernelFamily::Gaussian) spec.gamma = chosen.gamma;
      const double lambda = chosen.lambda;

      std::optional<RidgeSystem> system;
      if (needs_exact) system.emplace(gram_matrix(spec, split.x_train), lambda);

      auto& out = outcomes[t];
      out.chosen = chosen;
      for (auto s : config.s_grid) {
        for (auto scheme : config.schemes) {
          const Stopwatch clock(config.record_timing);
          const auto set = draw_features(scheme, spec, split.x_train,
                                         system ? &*system : nullptr, lambda, s,
                                         config.pool_factor, rng, config.seed);
          const auto z = build_feature_matrix(set, spec, split.x_train);
          const auto model = fit_linear(z, split.y_train, config.loss, lambda, set, config.solver);
          const Vector pred = predict(model, spec, split.x_test);
          const double excess =
              split.f_test.size() > 0
                  ? (pred - split.f_test).squaredNorm() / static_cast<double>(pred.size())
                  : kNaN;
          out.rows.push_back(ResultRow{split.x_train.rows(), lambda, s, scheme, rep,
                                       task_metric(config.loss, z.values * model.beta,
                                                   split.y_train),
                                       task_metric(config.loss, pred, split.y_test), excess,
                                       clock.elapsed_ms()});
        }
      }
    } catch (...) {
      rethrow_with_context("benchmark on '" + data.name + "' rep=" + std::to_string(rep) +
                           " seed=" + std::to_string(config.seed));
    }
  });

  ExperimentResult result;
  for (auto& o : outcomes)
    result.rows.insert(result.rows.end(), o.rows.begin(), o.rows.end());

  add(result, "experiment", "benchmark");
  describe_config(result, config);
  add(result, "dataset", data.name);
  add(result, "task", to_string(data.task));
  add(result, "examples", std::to_string(data.size()));
  add(result, "subsample", config.subsample ? std::to_string(*config.subsample) : "none");
  add(result, "kernel", config.kernel.describe());
  add(result, "standardized",
      config.standardize && config.kernel.family == KernelFamily::Gaussian ? "true" : "false");
  add(result, "pool_factor", std::to_string(config.pool_factor));
  add(result, "s_grid", grid_string(config.s_grid));
  for (std::size_t r = 0; r < outcomes.size(); ++r) {
    const auto tag = "rep" + std::to_string(r);
    if (config.kernel.family == KernelFamily::Gaussian) add(result, tag + "_gamma", outcomes[r].chosen.gamma);
    add(result, tag + "_lambda", outcomes[r].chosen.lambda);
  }
  for (auto scheme : config.schemes) {
    for (auto s : config.s_grid) {
      std::vector<double> errs;
      for (const auto& row : result.rows)
        if (row.scheme == scheme && row.s == s) errs.push_back(row.test_metric);
      const auto tag = to_string(scheme) + "_s" + std::to_string(s);
      add(result, "mean_test_" + tag, mean_of(errs));
      add(result, "halfwidth_test_" + tag, half_width(errs));
    }
  }
  return result;
}

ExperimentResult run_algorithm1_pipeline(const ExperimentConfig& config, const Dataset& data,
                                         const SplineTarget* target) {
  config.validate();
  check_task(data, config.loss);

  struct PoolOutcome {
    Eigen::Index l = 0;
    double pool_dof = 0.0;
  };
  struct RepOutcome {
    std::vector<ResultRow> rows;
    std::vector<PoolOutcome> pools;
    double lambda = 0.0;
  };
  std::vector<RepOutcome> outcomes(static_cast<std::size_t>(config.reps));

  parallel_for(outcomes.size(), config.threads, [&](std::size_t t) {
    const int rep = static_cast<int>(t);
    try {
      Rng rng = task_rng(config.seed, rep, 2);
      const auto split = prepare_split(config, data, target, rng);
      const KernelSpec& spec = config.kernel;
      const Eigen::Index n = split.x_train.rows();
      const double lambda = lambda_for(config.lambda_rule, config.lambda_const, n);
      auto& out = outcomes[t];
      out.lambda = lambda;

      auto evaluate = [&](const WeightedFeatureSet& set, Eigen::Index s, SamplingScheme scheme,
                          const Stopwatch& clock) {
        const auto z = build_feature_matrix(set, spec, split.x_train);
        const auto model = fit_linear(z, split.y_train, config.loss, lambda, set, config.solver);
        const Vector pred = predict(model, spec, split.x_test);
        const double excess =
            split.f_test.size() > 0
                ? (pred - split.f_test).squaredNorm() / static_cast<double>(pred.size())
                : kNaN;
        out.rows.push_back(ResultRow{n, lambda, s, scheme, rep,
                                     task_metric(config.loss, z.values * model.beta, split.y_train),
                                     task_metric(config.loss, pred, split.y_test), excess,
                                     clock.elapsed_ms()});
      };

      for (auto s : config.s_grid) {
        const Stopwatch pool_clock(config.record_timing);
        const auto pool = WeightedFeatureSet::plain(spec, rng, s, config.seed);
        evaluate(pool, s, SamplingScheme::Plain, pool_clock);

        const Stopwatch clock(config.record_timing);
        const auto sample = algorithm1_resample(spec, split.x_train, pool.frequencies(), lambda,
                                                rng, config.algorithm1, config.seed);
        const Eigen::Index l = sample.features.size();
        evaluate(sample.features, l, SamplingScheme::ApproxLeverage, clock);
        out.pools.push_back({l, sample.profile.total / static_cast<double>(s)});
      }
    } catch (...) {
      rethrow_with_context("pipeline on '" + data.name + "' rep=" + std::to_string(rep) +
                           " seed=" + std::to_string(config.seed));
    }
  });

  ExperimentResult result;
  for (auto& o : outcomes)
    result.rows.insert(result.rows.end(), o.rows.begin(), o.rows.end());

  add(result, "experiment", "pipeline");
  describe_config(result, config);
  add(result, "dataset", data.name);
  add(result, "task", to_string(data.task));
  add(result, "subsample", config.subsample ? std::to_string(*config.subsample) : "none");
  add(result, "kernel", config.kernel.describe());
  add(result, "lambda", outcomes.front().lambda);
  // The refit uses the pool regularizer.
  add(result, "lambda_star", outcomes.front().lambda);
  add(result, "selection",
      config.algorithm1.mode == SelectionMode::TopL ? "top-l" : "multinomial");
  add(result, "min_output", std::to_string(config.algorithm1.min_output));
  for (std::size_t j = 0; j < config.s_grid.size(); ++j) {
    const Eigen::Index s = config.s_grid[j];
    std::vector<double> ls, dofs, full, pipe;
    for (const auto& o : outcomes) {
      ls.push_back(static_cast<double>(o.pools[j].l));
      dofs.push_back(o.pools[j].pool_dof);
      full.push_back(o.rows[2 * j].test_metric);
      pipe.push_back(o.rows[2 * j + 1].test_metric);
    }
    const auto tag = "_s" + std::to_string(s);
    const double mean_full = mean_of(full), mean_pipe = mean_of(pipe);
    add(result, "mean_l" + tag, mean_of(ls));
    add(result, "compression" + tag, mean_of(ls) / static_cast<double>(s));
    add(result, "mean_pool_dof" + tag, mean_of(dofs));
    add(result, "mean_test_pool" + tag, mean_full);
    add(result, "mean_test_pipeline" + tag, mean_pipe);
    add(result, "ratio" + tag, mean_full > 0.0 ? mean_pipe / mean_full : kNaN);
  }
  return result;
}

std::optional<std::string> DiagnosticReport::value(const std::string& quantity) const {
  for (const auto& [k, v] : entries)
    if (k == quantity) return v;
  return std::nullopt;
}

DiagnosticReport run_diagnose(const ExperimentConfig& config, const Dataset& data) {
  config.validate();
  Rng rng = task_rng(config.seed, 0, 3);
  Dataset working = config.subsample && *config.subsample < data.size()
                        ? subsample(data, *config.subsample, rng)
                        : data;
  const KernelSpec& spec = config.kernel;
  const bool scaled = config.standardize && spec.family == KernelFamily::Gaussian;
  const Matrix x = scaled ? standardize(working).data.x : working.x;
  const Eigen::Index n = x.rows();
  const double lambda = lambda_for(config.lambda_rule, config.lambda_const, n);

  DiagnosticReport report;
  auto put = [&](std::string key, std::string value) {
    report.entries.emplace_back(std::move(key), std::move(value));
  };
  auto putd = [&](std::string key, double value) { put(std::move(key), format_double(value)); };

  put("dataset", working.name);
  put("kernel", spec.describe());
  put("n", std::to_string(n));
  putd("lambda", lambda);

  const Matrix gram = gram_matrix(spec, x);
  const RidgeSystem system(gram, lambda);
  const double dof = effective_dof(gram, lambda);
  putd("dof_eigen", dof);
  putd("dof_solve", system.effective_dof());

  const auto decay = decay_report(gram);
  put("decay_model", to_string(decay.fitted_model));
  putd("decay_exponent", decay.fit_exponent);
  putd("decay_r2", decay.fit_r2);
  put("decay_clipped", std::to_string(decay.clipped));
  putd("fixed_point_bound", fixed_point_bound(decay.eigenvalues, n, lambda));

  const double z0 = spec.feature_bound();
  putd("feature_bound", z0);
  putd("score_bound", spec.feature_bound_sq() / lambda);
  put("required_features_plain",
      std::to_string(required_features(FeatureRule::PlainRFF, dof, lambda, z0, config.delta)));
  put("required_features_leverage",
      std::to_string(required_features(FeatureRule::LeverageRFF, dof, lambda, z0, config.delta)));

  bool capped = false;
  const Eigen::Index s =
      feature_count(config, SamplingScheme::ExactLeverage, dof, lambda, spec, capped);
  put("s", std::to_string(s));
  for (auto scheme :
       {SamplingScheme::Plain, SamplingScheme::ExactLeverage, SamplingScheme::ApproxLeverage}) {
    const auto set =
        draw_features(scheme, spec, x, &system, lambda, s, config.pool_factor, rng, config.seed);
    const Matrix approx = approx_gram(build_feature_matrix(set, spec, x));
    putd("whitened_error_" + to_string(scheme), whitened_error_norm(gram, approx, lambda));
  }

  const Eigen::Index pool_size = static_cast<Eigen::Index>(config.pool_factor) * s;
  const auto pool = WeightedFeatureSet::plain(spec, rng, pool_size, config.seed);
  const auto exact = exact_leverage_scores(spec, x, pool, system);
  put("pool_size", std::to_string(pool_size));
  putd("pool_mean_score", exact.scores.mean());
  putd("pool_max_score", exact.scores.maxCoeff());
  const auto a1 = algorithm1_resample(spec, x, pool.frequencies(), lambda, rng, config.algorithm1,
                                      config.seed);
  putd("pool_score_total", a1.profile.total);
  putd("pool_dof", a1.profile.total / static_cast<double>(pool_size));
  put("resample_size", std::to_string(a1.features.size()));
  return report;
}

std::string format_report_csv(const DiagnosticReport& report) {
  std::string out = "quantity,value\n";
  for (const auto& [k, v] : report.entries) out += k + ',' + v + '\n';
  return out;
}

void emit_report_csv(const DiagnosticReport& report, const std::filesystem::path& path) {
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw DataError("cannot open '" + path.string() + "' for writing");
  const std::string text = format_report_csv(report);
  file.write(text.data(), static_cast<std::streamsize>(text.size()));
  file.flush();
  if (!file) throw DataError("failed writing '" + path.string() + "'");
}

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

std::string format_csv(const ExperimentResult& result) {
  std::string out = kCsvHeader;
  out += '\n';
  for (const auto& r : result.rows) {
    out += std::to_string(r.n) + ',' + format_double(r.lambda) + ',' + std::to_string(r.s) + ',' +
           to_string(r.scheme) + ',' + std::to_string(r.rep) + ',' + format_double(r.train_metric) +
           ',' + format_double(r.test_metric) + ',' + format_double(r.excess_risk) + ',' +
           format_double(r.wall_time_ms) + '\n';
  }
  for (const auto& [k, v] : result.summary) out += "# " + k + "=" + v + '\n';
  return out;
}

void emit_csv(const ExperimentResult& result, const std::filesystem::path& path) {
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw DataError("cannot open '" + path.string() + "' for writing");
  const std::string text = format_csv(result);
  file.write(text.data(), static_cast<std::streamsize>(text.size()));
  file.flush();
  if (!file) throw DataError("failed writing '" + path.string() + "'");
}

namespace {

double parse_double_field(std::string_view field, std::size_t line) {
  double value = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size()) {
    throw DataError("line " + std::to_string(line) + ": bad number '" + std::string(field) + "'");
  }
  return value;
}

long long parse_int_field(std::string_view field, std::size_t line) {
  long long value = 0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size()) {
    throw DataError("line " + std::to_string(line) + ": bad integer '" + std::string(field) + "'");
  }
  return value;
}

}  // namespace

ExperimentResult parse_csv_text(const std::string& text) {
  ExperimentResult result;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw DataError("line " + std::to_string(number) + ": summary without '='");
      result.summary.emplace_back(line.substr(2, eq - 2), line.substr(eq + 1));
      continue;
    }
    if (!header_seen) {
      if (line != kCsvHeader) throw DataError("line " + std::to_string(number) + ": unexpected header");
      header_seen = true;
      continue;
    }
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    for (;;) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() != 9) {
      throw DataError("line " + std::to_string(number) + ": expected 9 fields, got " +
                      std::to_string(fields.size()));
    }
    ResultRow row;
    row.n = static_cast<Eigen::Index>(parse_int_field(fields[0], number));
    row.lambda = parse_double_field(fields[1], number);
    row.s = static_cast<Eigen::Index>(parse_int_field(fields[2], number));
    try {
      row.scheme = parse_scheme(std::string(fields[3]));
    } catch (const UsageError& e) {
      throw DataError("line " + std::to_string(number) + ": " + e.what());
    }
    row.rep = static_cast<int>(parse_int_field(fields[4], number));
    row.train_metric = parse_double_field(fields[5], number);
    row.test_metric = parse_double_field(fields[6], number);
    row.excess_risk = parse_double_field(fields[7], number);
    row.wall_time_ms = parse_double_field(fields[8], number);
    result.rows.push_back(row);
  }
  if (!header_seen) throw DataError("missing CSV header");
  return result;
}

ExperimentResult parse_csv(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << file.rdbuf();
  return parse_csv_text(buf.str());
}

}  // namespace lwrff
