#pragma once

#include <string>

#include "lwrff/linalg.hpp"

namespace lwrff {

/// Operator norm of (K + n lambda I)^{-1/2} (K~ - K) (K + n lambda I)^{-1/2}.
double whitened_error_norm(const Matrix& gram, const Matrix& approx, double lambda);

enum class FeatureRule { PlainRFF, LeverageRFF };

/// Sufficient feature counts (natural log):
///   LeverageRFF: ceil(5 d log(16 d / delta))
///   PlainRFF:    ceil(5 (z0^2 / lambda) log(16 d / delta))
long required_features(FeatureRule rule, double dof, double lambda, double z0, double delta);

/// min_{0 <= h <= n} (h/n) e7 / (n^2 lambda^2) + sqrt((1/n) sum_{i>h} eig_i)
/// for eigenvalues of K/n sorted nonincreasing. Entries past eigs.size()
/// count as zero.
double fixed_point_bound(const Vector& eigs, long n, double lambda, double e7 = 1.0);

enum class DecayModel { Exponential, Polynomial, Undetermined };

std::string to_string(DecayModel model);

struct DecayReport {
  Vector eigenvalues;  // of K/n, nonincreasing, clipped at zero
  DecayModel fitted_model = DecayModel::Undetermined;
  double fit_exponent = 0.0;  // slope of log eig vs i (exp) or vs log i (poly)
  double fit_r2 = 0.0;
  Eigen::Index clipped = 0;
};

/// Least-squares fits of log eig_i against i and against log i over the
/// eigenvalues above 1e-12; the better R^2 wins unless both are below 0.9.
DecayReport decay_report(const Matrix& gram);

/// Same fits starting from a spectrum (any order).
DecayReport decay_report_from_spectrum(const Vector& eigenvalues);

}  // namespace lwrff
