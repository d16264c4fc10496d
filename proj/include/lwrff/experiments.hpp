#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lwrff/data.hpp"
#include "lwrff/estimators.hpp"
#include "lwrff/features.hpp"
#include "lwrff/kernels.hpp"

namespace lwrff {

/// lambda as a function of the training size n (c = lambda_const).
///   InvSqrtN: c / sqrt(n)   InvCbrtN: c / n^(1/3)   InvN: c / n
///   LogNOverN: c log(n) / n   Fixed: c
enum class LambdaRule { InvSqrtN, InvCbrtN, InvN, LogNOverN, Fixed };

/// Number of features s (c = size_const).
///   DofProportional: ceil(c * d) with d the effective dof of the exact Gram
///   SufficientCount: the sufficient count of required_features for the scheme
///   Fixed: round(c)
enum class SizeRule { DofProportional, SufficientCount, Fixed };

std::string to_string(LambdaRule rule);
std::string to_string(SizeRule rule);
LambdaRule parse_lambda_rule(const std::string& name);
SizeRule parse_size_rule(const std::string& name);

double lambda_for(LambdaRule rule, double constant, Eigen::Index n);

struct ExperimentConfig {
  // Learner kernel for benchmark and pipeline runs. The convergence
  // experiment always learns with sim.learning_kernel().
  KernelSpec kernel = KernelSpec::gaussian(1.0, 1);
  SamplingScheme scheme = SamplingScheme::ExactLeverage;
  // Schemes compared by the benchmark.
  std::vector<SamplingScheme> schemes{SamplingScheme::Plain, SamplingScheme::ExactLeverage};

  std::vector<Eigen::Index> n_grid{128, 256, 512, 1024, 2048, 4096};
  LambdaRule lambda_rule = LambdaRule::InvSqrtN;
  double lambda_const = 1.0;
  SizeRule size_rule = SizeRule::DofProportional;
  double size_const = 1.0;
  // Feature sweep of the benchmark; pool sizes of the pipeline.
  std::vector<Eigen::Index> s_grid{10, 20, 40, 80};
  // Hard cap on s from the size rule (SufficientCount can be huge).
  Eigen::Index max_features = 20000;

  int reps = 20;
  std::uint64_t seed = 0;
  Loss loss = Loss::Squared;
  double delta = 0.1;

  // Spectral pool of pool_factor * s draws for the leverage schemes.
  int pool_factor = 4;
  Algorithm1Options algorithm1{SelectionMode::Multinomial, 50};

  Eigen::Index eval_points = 10000;
  double test_fraction = 0.3;
  int folds = 5;
  std::vector<double> cv_lambdas{1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  std::vector<double> cv_gammas{0.0625, 0.25, 1.0, 4.0, 16.0};
  // Standardize inputs (Gaussian kernel only; the spline kernel is periodic on [0, 1)).
  bool standardize = true;
  std::optional<Eigen::Index> subsample;
  bool record_timing = false;
  int threads = 1;
  LipschitzOptions solver;

  SplineSimConfig sim;

  /// Throws UsageError on empty or non-positive grids, reps < 1, etc.
  void validate() const;
};

struct ResultRow {
  Eigen::Index n = 0;
  double lambda = 0.0;
  Eigen::Index s = 0;
  SamplingScheme scheme = SamplingScheme::Plain;
  int rep = 0;
  double train_metric = 0.0;
  double test_metric = 0.0;
  double excess_risk = 0.0;  // NaN when the regression function is unknown
  double wall_time_ms = 0.0;

  bool operator==(const ResultRow&) const = default;
};

struct ExperimentResult {
  std::vector<ResultRow> rows;
  // Ordered key/value pairs written as "# key=value" after the rows.
  std::vector<std::pair<std::string, std::string>> summary;

  std::optional<std::string> summary_value(const std::string& key) const;
};

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double stderr_slope = 0.0;
};

/// Least squares of log(y) on log(x). Needs two distinct x and positive values.
SlopeFit fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

/// Excess-risk rate on the spline simulation: for every (n, rep) draw data,
/// set lambda and s by rule, sample features, fit ridge, and measure the mean
/// squared deviation from the regression function on eval_points fresh inputs.
ExperimentResult run_convergence(const ExperimentConfig& config);

/// Per repetition: split, standardize, pick hyperparameters by k-fold CV of
/// exact kernel ridge regression, then fit every scheme at every s.
/// test_metric is RMSE (Squared loss) or the misclassification rate.
/// `target` enables the excess_risk column.
ExperimentResult run_benchmark(const ExperimentConfig& config, const Dataset& data,
                               const SplineTarget* target = nullptr);

/// Per repetition and pool size s: a plain pool fitted in full, then the
/// leverage resample of l features refitted on the same split.
ExperimentResult run_algorithm1_pipeline(const ExperimentConfig& config, const Dataset& data,
                                         const SplineTarget* target = nullptr);

/// Ordered (quantity, value) pairs.
struct DiagnosticReport {
  std::vector<std::pair<std::string, std::string>> entries;

  std::optional<std::string> value(const std::string& quantity) const;
};

/// Leverage, dof and concentration report at n = data size with lambda from
/// the rule: dof by both routes, Gram spectrum decay, the fixed-point bound,
/// sufficient feature counts, whitened approximation error per scheme at the
/// rule's s, exact score statistics over a spectral pool, and the resampled
/// output size on that pool.
DiagnosticReport run_diagnose(const ExperimentConfig& config, const Dataset& data);

/// "quantity,value" header and one line per entry.
std::string format_report_csv(const DiagnosticReport& report);
void emit_report_csv(const DiagnosticReport& report, const std::filesystem::path& path);

std::string format_csv(const ExperimentResult& result);
/// Throws DataError (with the path) when the file cannot be written.
void emit_csv(const ExperimentResult& result, const std::filesystem::path& path);

ExperimentResult parse_csv_text(const std::string& text);
ExperimentResult parse_csv(const std::filesystem::path& path);

/// 17 significant digits; "nan", "inf", "-inf" for non-finite values.
std::string format_double(double value);

/// Generator for one unit of work; identical for any thread count.
Rng task_rng(std::uint64_t seed, int rep, std::uint64_t stream = 0);

}  // namespace lwrff
