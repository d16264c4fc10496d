#pragma once

#include <Eigen/Dense>

namespace lwrff {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Cholesky factorization of a symmetric positive definite matrix. If the
/// plain factorization fails, retries once with 1e-10 * trace / n added to
/// the diagonal and logs a warning.
class SpdFactor {
 public:
  explicit SpdFactor(const Matrix& a);

  Matrix solve(const Matrix& b) const { return llt_.solve(b); }
  Vector solve(const Vector& b) const { return llt_.solve(b); }

  /// L^{-1} b, so that ||L^{-1} b||^2 = b^T A^{-1} b.
  Matrix whiten(const Matrix& b) const;

  /// Tr[A^{-1}] = ||L^{-1}||_F^2.
  double inverse_trace() const;

  Eigen::Index size() const { return llt_.rows(); }
  bool jittered() const { return jitter_ > 0.0; }
  double jitter() const { return jitter_; }

 private:
  Eigen::LLT<Matrix> llt_;
  double jitter_ = 0.0;
};

/// The regularized system K + n*lambda*I for an n x n Gram matrix K.
class RidgeSystem {
 public:
  RidgeSystem(const Matrix& gram, double lambda);

  double lambda() const { return lambda_; }
  Eigen::Index n() const { return factor_.size(); }
  const SpdFactor& factor() const { return factor_; }

  /// (K + n lambda I)^{-1} b
  Matrix solve(const Matrix& b) const { return factor_.solve(b); }
  Vector solve(const Vector& b) const { return factor_.solve(b); }

  /// Tr[K (K + n lambda I)^{-1}] = n - n lambda Tr[(K + n lambda I)^{-1}].
  double effective_dof() const;

 private:
  double lambda_;
  SpdFactor factor_;
};

/// Symmetric eigenvalues in ascending order.
Vector symmetric_eigenvalues(const Matrix& a);

/// a^{-1/2} for symmetric PSD a, via eigendecomposition with eigenvalues
/// clipped at zero (clip events are logged). Zero eigenvalues must not occur
/// after clipping, so callers pass a shifted matrix.
Matrix inverse_sqrt(const Matrix& a);

/// Largest absolute eigenvalue of a symmetric matrix.
double spectral_norm_symmetric(const Matrix& a);

}  // namespace lwrff
