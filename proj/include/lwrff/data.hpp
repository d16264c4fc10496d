#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lwrff/kernels.hpp"
#include "lwrff/linalg.hpp"

namespace lwrff {

enum class Task { Regression, Classification };

std::string to_string(Task task);

struct Dataset {
  Matrix x;  // n x d
  Vector y;  // targets, or labels in {-1, +1}
  Task task = Task::Regression;
  std::string name;

  Eigen::Index size() const { return x.rows(); }
  Eigen::Index dim() const { return x.cols(); }
};

/// Reads "label idx:val idx:val ..." lines (1-based indices, missing
/// entries are zero; blank lines and lines starting with '#' are skipped).
/// Classification labels {0,1} or {1,2} are mapped to {-1,+1}; any other
/// pair of labels is rejected. Throws DataError with the line number for
/// malformed input, or if the file holds no examples. Out-of-order indices
/// are accepted with a log message.
Dataset parse_sparse_dataset(const std::filesystem::path& path, Task task);
Dataset parse_sparse_dataset_text(const std::string& text, Task task,
                                  const std::string& name = "<memory>");

/// Writes the dataset so that parse_sparse_dataset returns bitwise-equal
/// values (17 significant digits; the last column is always written).
void write_sparse_dataset(const Dataset& data, const std::filesystem::path& path);
std::string format_sparse_dataset(const Dataset& data);

/// Column transform x -> (x - mean) / scale. Constant columns map to 0.
struct Standardizer {
  Vector mean;
  Vector scale;
  std::vector<bool> constant;

  Matrix apply(const Matrix& x) const;
  bool any_constant() const;
};

struct Standardized {
  Dataset data;
  Standardizer transform;
};

/// Zero mean, unit (population) standard deviation per column. Needs n >= 2.
Standardized standardize(const Dataset& data);

/// Simulation with uniform inputs on [0, 1) and y = k_t(x, x0) + N(0, sigma^2).
/// The learner uses the spline kernel of order 2r.
struct SplineSimConfig {
  int target_order = 2;        // t
  int feature_half_order = 1;  // r
  double x0 = 0.5;
  double sigma = 0.3;
  Eigen::Index n = 1000;
  int truncation = 5000;

  void validate() const;
  KernelSpec learning_kernel() const { return KernelSpec::spline(2 * feature_half_order, truncation); }
  KernelSpec target_kernel() const { return KernelSpec::spline(target_order, truncation); }
};

/// The noiseless regression function f(x) = k_t(x, x0).
class SplineTarget {
 public:
  SplineTarget(KernelSpec kernel, double x0);
  Vector operator()(const Matrix& x) const;

 private:
  KernelSpec kernel_;
  double x0_;
};

struct SplineSim {
  Dataset data;
  SplineTarget target;
};

SplineSim generate_spline_sim(const SplineSimConfig& config, Rng& rng);

/// Uniform inputs on [0, 1) (n x 1) drawn from rng.
Matrix uniform_points(Eigen::Index n, Rng& rng);

/// Seeded shuffle of 0..n-1 cut into k folds whose sizes differ by at most one.
std::vector<std::vector<Eigen::Index>> make_folds(Eigen::Index n, int k, Rng& rng);

struct Split {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> test;
};

/// Seeded split with round(n * test_fraction) test rows (at least one of each).
Split train_test_split(Eigen::Index n, double test_fraction, Rng& rng);

Dataset subset(const Dataset& data, const std::vector<Eigen::Index>& rows);

/// Keeps the first `count` rows of a seeded permutation.
Dataset subsample(const Dataset& data, Eigen::Index count, Rng& rng);

}  // namespace lwrff
