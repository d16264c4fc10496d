#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lwrff/features.hpp"
#include "lwrff/kernels.hpp"
#include "lwrff/linalg.hpp"

namespace lwrff {

enum class Loss { Squared, Hinge, Logistic };

std::string to_string(Loss loss);
Loss parse_loss(const std::string& name);

/// Linear model over a scaled feature matrix. beta lives in the scaled
/// coordinates of FeatureMatrix (so |beta|^2 equals s |beta_unscaled|^2).
struct LinearModel {
  Vector beta;
  double lambda = 0.0;
  Loss loss = Loss::Squared;
  std::optional<WeightedFeatureSet> features;

  // Solver report; only meaningful for the Lipschitz losses.
  int iterations = 0;
  bool converged = true;
  double stationarity = 0.0;  // gradient norm (logistic) or duality gap (hinge)
  std::vector<double> objective_trace;
};

/// Exact kernel ridge regression in dual form.
struct KRRModel {
  Vector alpha;
  double lambda = 0.0;
  Matrix train_points;
};

/// beta = (Z^T Z + n lambda I)^{-1} Z^T y via Cholesky.
LinearModel fit_ridge(const FeatureMatrix& z, const Vector& y, double lambda);

/// Same, remembering the feature set for prediction.
LinearModel fit_ridge(const FeatureMatrix& z, const Vector& y, double lambda,
                      const WeightedFeatureSet& features);

/// alpha = (K + n lambda I)^{-1} y.
KRRModel fit_krr_exact(const Matrix& gram, const Vector& y, double lambda,
                       Matrix train_points = {});

struct LipschitzOptions {
  int max_iterations = 20000;
  double tolerance = 1e-6;
};

/// Minimizes (1/n) sum loss(y_i, z_i^T beta) + lambda |beta|^2 for labels in
/// {-1, +1}. Both solvers are deterministic and full batch:
///   Logistic: gradient descent with backtracking; stops at |grad| <= tolerance.
///   Hinge: accelerated projected gradient on the box-constrained dual; stops
///   when the duality gap (a certificate that 0 is a subgradient) <= tolerance.
/// The returned beta is the best primal iterate, so objective_trace is
/// non-increasing. Throws DataError for labels outside {-1, +1}; a fit that
/// hits the iteration cap comes back with converged = false.
LinearModel fit_lipschitz(const FeatureMatrix& z, const Vector& y, Loss loss, double lambda,
                          const LipschitzOptions& options = {});

/// (1/n) sum loss(y_i, z_i^T beta) + lambda |beta|^2.
double regularized_objective(const FeatureMatrix& z, const Vector& y, Loss loss, double lambda,
                             const Vector& beta);

/// Gradient of the logistic objective above.
Vector logistic_gradient(const FeatureMatrix& z, const Vector& y, double lambda,
                         const Vector& beta);

/// Z(x_new) beta, rebuilding the columns from the stored feature set.
Vector predict(const LinearModel& model, const KernelSpec& spec, const Matrix& x_new);
/// sign(Z(x_new) beta) in {-1, +1}; zero maps to +1.
Vector predict_labels(const LinearModel& model, const KernelSpec& spec, const Matrix& x_new);
/// k(x_new, x_train) alpha.
Vector predict(const KRRModel& model, const KernelSpec& spec, const Matrix& x_new);

struct ApproxError {
  double error = 0.0;               // lambda f^T (K~ + n lambda I)^{-1} f
  double beta_norm_sq_scaled = 0.0;  // s |beta|^2 of the minimizer
};

/// Closed-form optimum of min_beta (1/n)|f - Z_q beta|^2 + lambda s |beta|^2.
ApproxError function_approx_error(const Vector& f, const FeatureMatrix& z, double lambda);

/// <y - f_hat, f_beta - f_hat> with f_hat = K (K + n lambda I)^{-1} y and
/// f_beta = K~ (K~ + n lambda I)^{-1} y, K~ = Z Z^T. Vanishes when K~ and K
/// induce the same fit, e.g. features that exactly factor K.
double orthogonality_check(const Matrix& gram, const FeatureMatrix& z, const Vector& y,
                           double lambda);

}  // namespace lwrff
