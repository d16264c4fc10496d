#include "lwrff/features.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lwrff/error.hpp"

namespace lwrff {
namespace {

constexpr Eigen::Index kRowBlock = 256;

// Collapses per-column scores to per-frequency scores ([cos | sin] layout).
Vector per_frequency(const Vector& column_scores, Eigen::Index s) {
  if (column_scores.size() == s) return column_scores;
  return column_scores.head(s) + column_scores.tail(s);
}

}  // namespace

std::string to_string(SamplingScheme scheme) {
  switch (scheme) {
    case SamplingScheme::Plain: return "plain";
    case SamplingScheme::ExactLeverage: return "exact-leverage";
    case SamplingScheme::ApproxLeverage: return "approx-leverage";
  }
  return "unknown";
}

SamplingScheme parse_scheme(const std::string& name) {
  if (name == "plain") return SamplingScheme::Plain;
  if (name == "exact-leverage" || name == "exact") return SamplingScheme::ExactLeverage;
  if (name == "approx-leverage" || name == "approx") return SamplingScheme::ApproxLeverage;
  throw UsageError("unknown sampling scheme '" + name + "'");
}

WeightedFeatureSet::WeightedFeatureSet(Matrix frequencies, Vector weights, SamplingScheme scheme,
                                       std::uint64_t source_seed)
    : frequencies_(std::move(frequencies)),
      weights_(std::move(weights)),
      scheme_(scheme),
      source_seed_(source_seed) {
  if (frequencies_.rows() < 1) throw UsageError("feature set needs at least one frequency");
  if (weights_.size() != frequencies_.rows()) {
    throw UsageError("feature set needs exactly one weight per frequency");
  }
  for (Eigen::Index i = 0; i < weights_.size(); ++i) {
    if (!(weights_[i] > 0.0) || !std::isfinite(weights_[i])) {
      throw UsageError("feature weights must be finite and strictly positive");
    }
  }
}

WeightedFeatureSet WeightedFeatureSet::plain(const KernelSpec& spec, Rng& rng, Eigen::Index s,
                                             std::uint64_t source_seed) {
  return {spectral_sample(spec, rng, s), Vector::Ones(s), SamplingScheme::Plain, source_seed};
}

WeightedFeatureSet WeightedFeatureSet::with_weights(Vector weights) const {
  return {frequencies_, std::move(weights), scheme_, source_seed_};
}

FeatureMatrix build_feature_matrix(const WeightedFeatureSet& set, const KernelSpec& spec,
                                   const Matrix& x) {
  if (x.rows() < 1) throw DataError("build_feature_matrix: empty input");
  const Eigen::Index s = set.size();
  Matrix z = feature_block(spec, set.frequencies(), x);
  const double inv_sqrt_s = 1.0 / std::sqrt(static_cast<double>(s));
  const int per = spec.columns_per_frequency();
  for (int block = 0; block < per; ++block) {
    z.middleCols(block * s, s) *= (set.weights() * inv_sqrt_s).asDiagonal();
  }
  return {std::move(z)};
}

Matrix approx_gram(const FeatureMatrix& z) {
  Matrix k = Matrix::Zero(z.rows(), z.rows());
  k.selfadjointView<Eigen::Lower>().rankUpdate(z.values);
  return k.selfadjointView<Eigen::Lower>();
}

double effective_dof(const Matrix& gram, double lambda) {
  if (!(lambda > 0.0)) throw UsageError("effective_dof: lambda must be > 0");
  const Vector mu = symmetric_eigenvalues(gram);
  const double n = static_cast<double>(gram.rows());
  const double top = std::max(1.0, mu.maxCoeff());
  if (mu.minCoeff() < -1e-8 * n * top) {
    throw NumericalError("effective_dof: Gram matrix is not positive semi-definite");
  }
  double dof = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const double m = std::max(mu[i], 0.0);
    dof += m / (m + n * lambda);
  }
  return dof;
}

double effective_dof_solve(const Matrix& gram, double lambda) {
  return RidgeSystem(gram, lambda).effective_dof();
}

LeverageProfile exact_leverage_scores(const KernelSpec& spec, const Matrix& x,
                                      const WeightedFeatureSet& pool, double lambda) {
  const RidgeSystem system(gram_matrix(spec, x), lambda);
  return exact_leverage_scores(spec, x, pool, system);
}

LeverageProfile exact_leverage_scores(const KernelSpec& spec, const Matrix& x,
                                      const WeightedFeatureSet& pool, const RidgeSystem& system) {
  if (system.n() != x.rows()) throw UsageError("exact_leverage_scores: system size mismatch");
  const Matrix z = feature_block(spec, pool.frequencies(), x);
  const Matrix white = system.factor().whiten(z);
  Vector scores = per_frequency(white.colwise().squaredNorm().transpose(), pool.size());
  scores.array() *= pool.weights().array().square();

  LeverageProfile profile;
  profile.total = scores.sum();
  profile.scores = std::move(scores);
  profile.dof = system.effective_dof();
  profile.lambda = system.lambda();
  return profile;
}

LeverageProfile approx_leverage_scores(const KernelSpec& spec, const Matrix& x,
                                       const Matrix& frequencies, double lambda) {
  if (!(lambda > 0.0)) throw UsageError("approximate leverage scores need lambda > 0");
  const Eigen::Index n = x.rows();
  const Eigen::Index s = frequencies.rows();
  const double sd = static_cast<double>(s);
  const double nlam = static_cast<double>(n) * lambda;

  // Z^T Z as a sum of row outer products, one block of rows at a time.
  const Eigen::Index cols = s * spec.columns_per_frequency();
  Matrix ztz = Matrix::Zero(cols, cols);
  for (Eigen::Index start = 0; start < n; start += kRowBlock) {
    const Eigen::Index len = std::min(kRowBlock, n - start);
    const Matrix rows = feature_block(spec, frequencies, x.middleRows(start, len));
    ztz.selfadjointView<Eigen::Lower>().rankUpdate(rows.transpose());
  }
  ztz = ztz.selfadjointView<Eigen::Lower>();

  Matrix shifted = ztz / sd;
  shifted.diagonal().array() += nlam;
  const SpdFactor factor(shifted);
  const Matrix m = factor.solve(ztz);

  LeverageProfile profile;
  profile.scores = per_frequency(m.diagonal(), s);
  profile.total = profile.scores.sum();
  const Vector mu = symmetric_eigenvalues(ztz / sd);
  double dof = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const double v = std::max(mu[i], 0.0);
    dof += v / (v + nlam);
  }
  profile.dof = dof;
  profile.lambda = lambda;
  return profile;
}

namespace {

Vector normalized(const Vector& scores) {
  const double total = scores.sum();
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw NumericalError(
        "leverage scores are all zero or non-finite; lambda is too large for the numeric range");
  }
  if (scores.minCoeff() < 0.0) throw NumericalError("negative leverage score");
  return scores / total;
}

WeightedFeatureSet gather(const Matrix& pool, const Vector& q, const std::vector<Eigen::Index>& idx,
                          SamplingScheme scheme, std::uint64_t seed) {
  const double inv_pool = 1.0 / static_cast<double>(pool.rows());
  Matrix freqs(static_cast<Eigen::Index>(idx.size()), pool.cols());
  Vector weights(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    freqs.row(static_cast<Eigen::Index>(k)) = pool.row(idx[k]);
    weights[static_cast<Eigen::Index>(k)] = std::sqrt(inv_pool / q[idx[k]]);
  }
  return {std::move(freqs), std::move(weights), scheme, seed};
}

}  // namespace

WeightedFeatureSet resample_by_scores(const Matrix& pool_frequencies, const Vector& scores,
                                      Eigen::Index count, SamplingScheme scheme, Rng& rng,
                                      std::uint64_t source_seed) {
  if (count < 1) throw UsageError("resample_by_scores: count must be >= 1");
  if (scores.size() != pool_frequencies.rows()) {
    throw UsageError("resample_by_scores: one score per pooled frequency required");
  }
  const Vector q = normalized(scores);
  // Inverse-CDF draws against the cumulative distribution.
  std::vector<double> cdf(static_cast<std::size_t>(q.size()));
  std::partial_sum(q.data(), q.data() + q.size(), cdf.begin());
  std::uniform_real_distribution<double> unif(0.0, cdf.back());
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(count));
  for (auto& i : idx) {
    const double u = unif(rng);
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    // Skip zero-probability entries that share the cdf value.
    i = std::min<Eigen::Index>(it - cdf.begin(), q.size() - 1);
    while (q[i] == 0.0 && i > 0) --i;
  }
  return gather(pool_frequencies, q, idx, scheme, source_seed);
}

WeightedFeatureSet select_top_scores(const Matrix& pool_frequencies, const Vector& scores,
                                     Eigen::Index count, SamplingScheme scheme,
                                     std::uint64_t source_seed) {
  if (count < 1 || count > scores.size()) {
    throw UsageError("select_top_scores: count must lie in [1, pool size]");
  }
  const Vector q = normalized(scores);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(q.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return q[a] > q[b]; });
  order.resize(static_cast<std::size_t>(count));
  return gather(pool_frequencies, q, order, scheme, source_seed);
}

LeverageSample sample_exact_leverage(const KernelSpec& spec, const Matrix& x, double lambda,
                                     Eigen::Index s, Eigen::Index pool_size, Rng& rng,
                                     std::uint64_t source_seed) {
  const RidgeSystem system(gram_matrix(spec, x), lambda);
  return sample_exact_leverage(spec, x, system, s, pool_size, rng, source_seed);
}

LeverageSample sample_exact_leverage(const KernelSpec& spec, const Matrix& x,
                                     const RidgeSystem& system, Eigen::Index s,
                                     Eigen::Index pool_size, Rng& rng,
                                     std::uint64_t source_seed) {
  if (s < 1) throw UsageError("sample_exact_leverage: s must be >= 1");
  if (pool_size < s) throw UsageError("sample_exact_leverage: pool_size must be >= s");
  const auto pool = WeightedFeatureSet::plain(spec, rng, pool_size, source_seed);
  auto profile = exact_leverage_scores(spec, x, pool, system);
  auto features = resample_by_scores(pool.frequencies(), profile.scores, s,
                                     SamplingScheme::ExactLeverage, rng, source_seed);
  return {std::move(features), std::move(profile)};
}

Eigen::Index algorithm1_output_size(const LeverageProfile& profile, Eigen::Index pool_size,
                                    Eigen::Index min_output) {
  const double trace = profile.total / static_cast<double>(pool_size);
  const double l = std::round(std::max(trace, static_cast<double>(min_output)));
  return std::clamp<Eigen::Index>(static_cast<Eigen::Index>(l), 1, pool_size);
}

LeverageSample algorithm1_resample(const KernelSpec& spec, const Matrix& x, const Matrix& pool,
                                   double lambda, Rng& rng, const Algorithm1Options& options,
                                   std::uint64_t source_seed) {
  if (!(lambda > 0.0)) throw UsageError("algorithm1_resample: lambda must be > 0");
  if (pool.rows() < 1) throw UsageError("algorithm1_resample: empty pool");
  if (options.min_output < 0) throw UsageError("algorithm1_resample: min_output must be >= 0");
  auto profile = approx_leverage_scores(spec, x, pool, lambda);
  const Eigen::Index l = algorithm1_output_size(profile, pool.rows(), options.min_output);
  auto features = options.mode == SelectionMode::TopL
                      ? select_top_scores(pool, profile.scores, l, SamplingScheme::ApproxLeverage,
                                          source_seed)
                      : resample_by_scores(pool, profile.scores, l, SamplingScheme::ApproxLeverage,
                                           rng, source_seed);
  return {std::move(features), std::move(profile)};
}

LeverageSample algorithm1_approx_leverage(const KernelSpec& spec, const Matrix& x, double lambda,
                                          Eigen::Index s, Rng& rng,
                                          const Algorithm1Options& options,
                                          std::uint64_t source_seed) {
  if (!(lambda > 0.0)) throw UsageError("algorithm1_approx_leverage: lambda must be > 0");
  if (s < 1) throw UsageError("algorithm1_approx_leverage: s must be >= 1");
  const Matrix pool = spectral_sample(spec, rng, s);
  return algorithm1_resample(spec, x, pool, lambda, rng, options, source_seed);
}

}  // namespace lwrff
