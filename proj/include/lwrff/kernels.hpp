#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "lwrff/linalg.hpp"

namespace lwrff {

using Rng = std::mt19937_64;

enum class KernelFamily { Gaussian, SplineEven };

/// How a Gaussian frequency v becomes features of x.
///   CosPlusSin: one column, cos(v.x) + sin(v.x)
///   CosSinPair: two columns, cos(v.x) and sin(v.x)
enum class FeatureStyle { CosPlusSin, CosSinPair };

/// A shift-invariant kernel together with its decomposition
///   k(x, y) = E_{v ~ p}[z(v, x) z(v, y)].
///
/// Gaussian: k(x, y) = exp(-gamma |x - y|^2 / 2), frequencies v ~ N(0, gamma I_d),
/// features built from v.x (no 2*pi factor).
///
/// SplineEven of even order t on the unit circle:
///   k_t(x, y) = 1 + sum_{m=1}^{M} m^{-t} cos(2 pi m (x - y)),
/// with frequencies v ~ U[0, 1) and the half-order section
///   z(v, x) = 1 + sqrt(2) sum_{m=1}^{M} m^{-t/2} cos(2 pi m (v - x)).
/// Inputs are scalars; the kernel is 1-periodic so any real input is accepted
/// and reduced by the fractional part of the difference.
struct KernelSpec {
  KernelFamily family = KernelFamily::Gaussian;
  double gamma = 1.0;   // Gaussian: inverse squared lengthscale
  int dim = 1;          // Gaussian: input dimension
  int order = 2;        // SplineEven: even order t >= 2
  int truncation = 5000;  // SplineEven: number of series terms M
  FeatureStyle style = FeatureStyle::CosPlusSin;

  static KernelSpec gaussian(double gamma, int dim, FeatureStyle style = FeatureStyle::CosPlusSin);
  static KernelSpec spline(int order, int truncation = 5000);

  /// Throws UsageError if the parameters are out of range.
  void validate() const;

  int input_dim() const { return family == KernelFamily::Gaussian ? dim : 1; }
  int frequency_dim() const { return input_dim(); }
  /// Feature columns per sampled frequency (2 for CosSinPair, else 1).
  int columns_per_frequency() const {
    return family == KernelFamily::Gaussian && style == FeatureStyle::CosSinPair ? 2 : 1;
  }

  /// z0 with |z(v, x)| <= z0 for every coordinate of the feature vector.
  double feature_bound() const;
  /// Bound on |z_v(x)|^2 / n, i.e. the z0^2 entering the leverage score bound
  /// l(v) <= z0^2 / lambda. For CosSinPair this is 1 (cos^2 + sin^2).
  double feature_bound_sq() const;

  /// Sum_{m>M} m^{-t}: worst-case gap between the truncated and full spline series.
  double truncation_error_bound() const;

  std::string describe() const;
};

/// k(x, y). Throws DataError on dimension mismatch.
double eval_kernel(const KernelSpec& spec, const Eigen::Ref<const Vector>& x,
                   const Eigen::Ref<const Vector>& y);

/// Cross Gram matrix k(a_i, b_j) for row-point matrices a (n x d) and b (m x d).
Matrix cross_gram(const KernelSpec& spec, const Matrix& a, const Matrix& b);

/// Gram matrix k(x_i, x_j) of the rows of x.
Matrix gram_matrix(const KernelSpec& spec, const Matrix& x);

/// s frequencies from the spectral measure, one per row.
Matrix spectral_sample(const KernelSpec& spec, Rng& rng, Eigen::Index s);

/// Feature vector z(v, x) (length columns_per_frequency()).
Vector feature_value(const KernelSpec& spec, const Eigen::Ref<const Vector>& v,
                     const Eigen::Ref<const Vector>& x);

/// Unscaled feature block: entry (j, c) = z_c(v, x_j) where columns are laid
/// out frequency-major for scalar styles, and as [cos block | sin block] for
/// CosSinPair (column i and column s + i belong to frequency i).
Matrix feature_block(const KernelSpec& spec, const Matrix& frequencies, const Matrix& x);

/// Truncated cosine series 1 + coef * sum_{m=1}^{M} m^{-p} cos(2 pi m u).
double spline_series(double u, double power, int terms, double coef = 1.0);

}  // namespace lwrff
