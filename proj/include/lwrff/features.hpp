#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "lwrff/kernels.hpp"
#include "lwrff/linalg.hpp"

namespace lwrff {

enum class SamplingScheme { Plain, ExactLeverage, ApproxLeverage };

std::string to_string(SamplingScheme scheme);
SamplingScheme parse_scheme(const std::string& name);

/// Sampled frequencies with importance weights sqrt(p(v_i) / q(v_i)).
class WeightedFeatureSet {
 public:
  /// Throws UsageError unless weights are finite, strictly positive and
  /// there is one weight per frequency row (s >= 1).
  WeightedFeatureSet(Matrix frequencies, Vector weights, SamplingScheme scheme,
                     std::uint64_t source_seed);

  /// s spectral-measure draws with unit weights.
  static WeightedFeatureSet plain(const KernelSpec& spec, Rng& rng, Eigen::Index s,
                                  std::uint64_t source_seed = 0);

  const Matrix& frequencies() const { return frequencies_; }
  const Vector& weights() const { return weights_; }
  SamplingScheme scheme() const { return scheme_; }
  std::uint64_t source_seed() const { return source_seed_; }
  Eigen::Index size() const { return frequencies_.rows(); }

  WeightedFeatureSet with_weights(Vector weights) const;

 private:
  Matrix frequencies_;
  Vector weights_;
  SamplingScheme scheme_;
  std::uint64_t source_seed_;
};

/// n x D design matrix; column c of frequency i holds w_i z_c(v_i, x_j) / sqrt(s),
/// so that values * values^T is the Monte-Carlo kernel estimate.
struct FeatureMatrix {
  Matrix values;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

/// Per-feature ridge leverage scores over a pool.
struct LeverageProfile {
  Vector scores;   // one per pooled frequency
  double total = 0.0;  // sum of scores
  double dof = 0.0;    // effective degrees of freedom of the Gram used
  double lambda = 0.0;
};

FeatureMatrix build_feature_matrix(const WeightedFeatureSet& set, const KernelSpec& spec,
                                   const Matrix& x);

/// Z Z^T.
Matrix approx_gram(const FeatureMatrix& z);

/// sum_i mu_i / (mu_i + n lambda) over the eigenvalues mu_i of K.
/// Throws NumericalError if K has an eigenvalue below -1e-8 * n * max(1, mu_max).
double effective_dof(const Matrix& gram, double lambda);

/// The same quantity through a Cholesky solve: n - n lambda Tr[(K + n lambda I)^{-1}].
double effective_dof_solve(const Matrix& gram, double lambda);

/// score_i = w_i^2 z_{v_i}(x)^T (K + n lambda I)^{-1} z_{v_i}(x), exact Gram K.
LeverageProfile exact_leverage_scores(const KernelSpec& spec, const Matrix& x,
                                      const WeightedFeatureSet& pool, double lambda);
/// As above with a caller-provided factorization of K + n lambda I.
LeverageProfile exact_leverage_scores(const KernelSpec& spec, const Matrix& x,
                                      const WeightedFeatureSet& pool, const RidgeSystem& system);

/// Leverage scores of the pool against its own feature Gram:
/// p_i = diag( Z^T Z ((1/s) Z^T Z + n lambda I)^{-1} ) with unscaled Z.
/// Memory is O(s^2): Z^T Z is accumulated from row blocks of Z.
LeverageProfile approx_leverage_scores(const KernelSpec& spec, const Matrix& x,
                                       const Matrix& frequencies, double lambda);

/// Multinomial resampling (with replacement) of `count` pool entries with
/// probabilities scores / sum(scores). Weights sqrt((1/pool) / q_i) keep the
/// reweighted Gram an unbiased estimate of the pool Gram.
WeightedFeatureSet resample_by_scores(const Matrix& pool_frequencies, const Vector& scores,
                                      Eigen::Index count, SamplingScheme scheme, Rng& rng,
                                      std::uint64_t source_seed);

/// Deterministic variant: the `count` largest scores (stable index order on
/// ties), with the same importance weights.
WeightedFeatureSet select_top_scores(const Matrix& pool_frequencies, const Vector& scores,
                                     Eigen::Index count, SamplingScheme scheme,
                                     std::uint64_t source_seed);

struct LeverageSample {
  WeightedFeatureSet features;
  LeverageProfile profile;
};

/// Draws a spectral pool of `pool_size`, scores it against the exact Gram and
/// resamples s features.
LeverageSample sample_exact_leverage(const KernelSpec& spec, const Matrix& x, double lambda,
                                     Eigen::Index s, Eigen::Index pool_size, Rng& rng,
                                     std::uint64_t source_seed = 0);
LeverageSample sample_exact_leverage(const KernelSpec& spec, const Matrix& x,
                                     const RidgeSystem& system, Eigen::Index s,
                                     Eigen::Index pool_size, Rng& rng,
                                     std::uint64_t source_seed = 0);

enum class SelectionMode { Multinomial, TopL };

struct Algorithm1Options {
  SelectionMode mode = SelectionMode::Multinomial;
  // Lower bound on the output size before clamping to the pool size.
  Eigen::Index min_output = 0;
};

/// Output size l = round(max(sum p_i / s, min_output)) clamped to [1, s].
/// sum p_i / s is the effective dof of the pool Gram.
Eigen::Index algorithm1_output_size(const LeverageProfile& profile, Eigen::Index pool_size,
                                    Eigen::Index min_output = 0);

/// Approximate leverage weighted RFF on a given spectral pool: pool scores
/// p_i, output size l, then l draws (or the top l under SelectionMode::TopL).
LeverageSample algorithm1_resample(const KernelSpec& spec, const Matrix& x, const Matrix& pool,
                                   double lambda, Rng& rng, const Algorithm1Options& options = {},
                                   std::uint64_t source_seed = 0);

/// Same with a fresh pool of s spectral draws.
LeverageSample algorithm1_approx_leverage(const KernelSpec& spec, const Matrix& x, double lambda,
                                          Eigen::Index s, Rng& rng,
                                          const Algorithm1Options& options = {},
                                          std::uint64_t source_seed = 0);

}  // namespace lwrff
