#include "lwrff/linalg.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "lwrff/error.hpp"

namespace lwrff {

SpdFactor::SpdFactor(const Matrix& a) {
  if (a.rows() != a.cols()) {
    throw UsageError("SpdFactor: matrix is not square");
  }
  llt_.compute(a);
  if (llt_.info() == Eigen::Success) return;

  const double n = static_cast<double>(a.rows());
  jitter_ = 1e-10 * std::max(a.trace(), 1.0) / n;
  spdlog::warn("Cholesky failed on {}x{} system; retrying with diagonal jitter {:.3e}",
               a.rows(), a.cols(), jitter_);
  Matrix shifted = a;
  shifted.diagonal().array() += jitter_;
  llt_.compute(shifted);
  if (llt_.info() != Eigen::Success) {
    throw NumericalError("SpdFactor: matrix is not positive definite even after jitter");
  }
}

Matrix SpdFactor::whiten(const Matrix& b) const {
  return llt_.matrixL().solve(b);
}

double SpdFactor::inverse_trace() const {
  // Column block [j0, j0 + b) of L^{-1} vanishes above row j0, so each block
  // only needs the trailing triangle of L.
  const Eigen::Index n = size();
  const Matrix& packed = llt_.matrixLLT();
  constexpr Eigen::Index kBlock = 256;
  double total = 0.0;
  for (Eigen::Index j0 = 0; j0 < n; j0 += kBlock) {
    const Eigen::Index m = n - j0;
    const Eigen::Index b = std::min(kBlock, m);
    Matrix block = Matrix::Identity(m, b);
    packed.bottomRightCorner(m, m).triangularView<Eigen::Lower>().solveInPlace(block);
    total += block.squaredNorm();
  }
  return total;
}

RidgeSystem::RidgeSystem(const Matrix& gram, double lambda)
    : lambda_(lambda), factor_([&] {
        if (!(lambda > 0.0)) throw UsageError("regularization lambda must be > 0");
        Matrix a = gram;
        a.diagonal().array() += static_cast<double>(gram.rows()) * lambda;
        return a;
      }()) {}

double RidgeSystem::effective_dof() const {
  const double n = static_cast<double>(factor_.size());
  return n - n * lambda_ * factor_.inverse_trace();
}

Vector symmetric_eigenvalues(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) {
    throw NumericalError("symmetric eigenvalue solver did not converge");
  }
  return es.eigenvalues();
}

Matrix inverse_sqrt(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  if (es.info() != Eigen::Success) {
    throw NumericalError("symmetric eigenvalue solver did not converge");
  }
  Vector ev = es.eigenvalues();
  Eigen::Index clipped = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < 0.0) {
      ev[i] = 0.0;
      ++clipped;
    }
  }
  if (clipped > 0) spdlog::debug("inverse_sqrt: clipped {} negative eigenvalues", clipped);
  if (ev.minCoeff() <= 0.0) throw NumericalError("inverse_sqrt: singular matrix");
  const Matrix& u = es.eigenvectors();
  return u * ev.cwiseSqrt().cwiseInverse().asDiagonal() * u.transpose();
}

double spectral_norm_symmetric(const Matrix& a) {
  const Vector ev = symmetric_eigenvalues(a);
  return std::max(std::abs(ev[0]), std::abs(ev[ev.size() - 1]));
}

}  // namespace lwrff
