#include "lwrff/estimators.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

#include "lwrff/error.hpp"

namespace lwrff {
namespace {

void require_lambda(double lambda, const char* who) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw UsageError(std::string(who) + ": lambda must be > 0");
  }
}

void require_binary(const Vector& y) {
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i] != 1.0 && y[i] != -1.0) {
      throw DataError("fit_lipschitz: labels must be -1 or +1 (row " + std::to_string(i) + ")");
    }
  }
}

// log(1 + exp(-t)) without overflow.
double log1p_exp_neg(double t) {
  return t > 0.0 ? std::log1p(std::exp(-t)) : -t + std::log1p(std::exp(t));
}

// 1 / (1 + exp(t)).
double sigmoid_neg(double t) {
  if (t >= 0.0) {
    const double e = std::exp(-t);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(t));
}

LinearModel fit_logistic(const FeatureMatrix& z, const Vector& y, double lambda,
                         const LipschitzOptions& options) {
  LinearModel model;
  model.loss = Loss::Logistic;
  model.lambda = lambda;
  Vector beta = Vector::Zero(z.cols());
  double obj = regularized_objective(z, y, Loss::Logistic, lambda, beta);
  model.objective_trace.push_back(obj);

  const double n = static_cast<double>(z.rows());
  // Curvature bound of the smooth objective; the step adapts from there.
  const double lip = z.values.squaredNorm() / (4.0 * n) + 2.0 * lambda;
  double step = 1.0 / lip;
  model.converged = false;
  int it = 0;
  for (; it < options.max_iterations; ++it) {
    const Vector g = logistic_gradient(z, y, lambda, beta);
    model.stationarity = g.norm();
    if (model.stationarity <= options.tolerance) {
      model.converged = true;
      break;
    }
    const double gg = g.squaredNorm();
    step *= 2.0;
    Vector trial;
    double trial_obj = 0.0;
    for (int tries = 0; tries < 60; ++tries) {
      trial = beta - step * g;
      trial_obj = regularized_objective(z, y, Loss::Logistic, lambda, trial);
      if (trial_obj <= obj - 0.5 * step * gg) break;
      step *= 0.5;
    }
    if (!(trial_obj <= obj)) break;  // no further descent representable
    beta = std::move(trial);
    obj = trial_obj;
    model.objective_trace.push_back(obj);
  }
  model.iterations = it;
  model.beta = std::move(beta);
  return model;
}

// Dual of min (1/n) sum max(0, 1 - y_i z_i.beta) + lambda |beta|^2:
//   max_{a in [0,1]^n} (1/n) sum a_i - |w(a)|^2 / (4 lambda n^2),  w = Z^T (a .* y),
// with beta(a) = w(a) / (2 lambda n).
LinearModel fit_hinge(const FeatureMatrix& z, const Vector& y, double lambda,
                      const LipschitzOptions& options) {
  LinearModel model;
  model.loss = Loss::Hinge;
  model.lambda = lambda;
  const Eigen::Index n_rows = z.rows();
  const double n = static_cast<double>(n_rows);
  const Matrix yz = y.asDiagonal() * z.values;

  // Lipschitz constant of the dual gradient: sigma_max(YZ)^2 / (2 lambda n^2).
  const double sigma_sq =
      std::max(symmetric_eigenvalues(yz.transpose() * yz).maxCoeff(), 1e-300);
  const double step = 2.0 * lambda * n * n / sigma_sq;

  auto dual_value = [&](const Vector& a, const Vector& w) {
    return a.sum() / n - w.squaredNorm() / (4.0 * lambda * n * n);
  };

  Vector alpha = Vector::Zero(n_rows);
  Vector momentum = alpha;
  double t = 1.0;
  Vector best_beta = Vector::Zero(z.cols());
  double best_obj = regularized_objective(z, y, Loss::Hinge, lambda, best_beta);
  model.objective_trace.push_back(best_obj);
  double prev_dual = 0.0;
  model.converged = false;
  int it = 0;
  for (; it < options.max_iterations; ++it) {
    const Vector w_m = yz.transpose() * momentum;
    const Vector grad = Vector::Constant(n_rows, 1.0 / n) - yz * w_m / (2.0 * lambda * n * n);
    Vector next = (momentum + step * grad).cwiseMax(0.0).cwiseMin(1.0);

    const Vector w = yz.transpose() * next;
    const double dual = dual_value(next, w);
    const Vector beta = w / (2.0 * lambda * n);
    const double primal = regularized_objective(z, y, Loss::Hinge, lambda, beta);
    if (primal < best_obj) {
      best_obj = primal;
      best_beta = beta;
    }
    model.objective_trace.push_back(best_obj);
    model.stationarity = best_obj - dual;

    // Restart the momentum whenever the dual stops increasing.
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    if (dual < prev_dual) {
      momentum = next;
      t = 1.0;
    } else {
      momentum = next + ((t - 1.0) / t_next) * (next - alpha);
      t = t_next;
    }
    alpha = std::move(next);
    prev_dual = dual;
    if (model.stationarity <= options.tolerance) {
      model.converged = true;
      ++it;
      break;
    }
  }
  model.iterations = it;
  model.beta = std::move(best_beta);
  return model;
}

}  // namespace

std::string to_string(Loss loss) {
  switch (loss) {
    case Loss::Squared: return "squared";
    case Loss::Hinge: return "hinge";
    case Loss::Logistic: return "logistic";
  }
  return "unknown";
}

Loss parse_loss(const std::string& name) {
  if (name == "squared") return Loss::Squared;
  if (name == "hinge") return Loss::Hinge;
  if (name == "logistic") return Loss::Logistic;
  throw UsageError("unknown loss '" + name + "'");
}

LinearModel fit_ridge(const FeatureMatrix& z, const Vector& y, double lambda) {
  require_lambda(lambda, "fit_ridge");
  if (y.size() != z.rows()) throw DataError("fit_ridge: label count does not match rows");
  Matrix normal = Matrix::Zero(z.cols(), z.cols());
  normal.selfadjointView<Eigen::Lower>().rankUpdate(z.values.transpose());
  normal = normal.selfadjointView<Eigen::Lower>();
  normal.diagonal().array() += static_cast<double>(z.rows()) * lambda;
  const SpdFactor factor(normal);

  LinearModel model;
  model.beta = factor.solve(Vector(z.values.transpose() * y));
  model.lambda = lambda;
  model.loss = Loss::Squared;
  return model;
}

LinearModel fit_ridge(const FeatureMatrix& z, const Vector& y, double lambda,
                      const WeightedFeatureSet& features) {
  LinearModel model = fit_ridge(z, y, lambda);
  model.features = features;
  return model;
}

KRRModel fit_krr_exact(const Matrix& gram, const Vector& y, double lambda, Matrix train_points) {
  require_lambda(lambda, "fit_krr_exact");
  if (y.size() != gram.rows()) throw DataError("fit_krr_exact: label count does not match Gram");
  const RidgeSystem system(gram, lambda);
  return {system.solve(y), lambda, std::move(train_points)};
}

double regularized_objective(const FeatureMatrix& z, const Vector& y, Loss loss, double lambda,
                             const Vector& beta) {
  const Vector margin = z.values * beta;
  const double n = static_cast<double>(z.rows());
  double data = 0.0;
  for (Eigen::Index i = 0; i < margin.size(); ++i) {
    switch (loss) {
      case Loss::Squared: data += (y[i] - margin[i]) * (y[i] - margin[i]); break;
      case Loss::Hinge: data += std::max(0.0, 1.0 - y[i] * margin[i]); break;
      case Loss::Logistic: data += log1p_exp_neg(y[i] * margin[i]); break;
    }
  }
  return data / n + lambda * beta.squaredNorm();
}

Vector logistic_gradient(const FeatureMatrix& z, const Vector& y, double lambda,
                         const Vector& beta) {
  const Vector margin = z.values * beta;
  Vector coef(margin.size());
  for (Eigen::Index i = 0; i < margin.size(); ++i) {
    coef[i] = -y[i] * sigmoid_neg(y[i] * margin[i]);
  }
  return z.values.transpose() * coef / static_cast<double>(z.rows()) + 2.0 * lambda * beta;
}

LinearModel fit_lipschitz(const FeatureMatrix& z, const Vector& y, Loss loss, double lambda,
                          const LipschitzOptions& options) {
  require_lambda(lambda, "fit_lipschitz");
  if (y.size() != z.rows()) throw DataError("fit_lipschitz: label count does not match rows");
  require_binary(y);
  LinearModel model;
  switch (loss) {
    case Loss::Logistic: model = fit_logistic(z, y, lambda, options); break;
    case Loss::Hinge: model = fit_hinge(z, y, lambda, options); break;
    case Loss::Squared: throw UsageError("fit_lipschitz: use fit_ridge for the squared loss");
  }
  if (!model.converged) {
    spdlog::debug("fit_lipschitz({}): iteration cap {} reached, stationarity {:.3e}",
                  to_string(loss), options.max_iterations, model.stationarity);
  }
  return model;
}

Vector predict(const LinearModel& model, const KernelSpec& spec, const Matrix& x_new) {
  if (!model.features) throw UsageError("predict: model has no feature set attached");
  const FeatureMatrix z = build_feature_matrix(*model.features, spec, x_new);
  if (z.cols() != model.beta.size()) throw DataError("predict: feature count mismatch");
  return z.values * model.beta;
}

Vector predict_labels(const LinearModel& model, const KernelSpec& spec, const Matrix& x_new) {
  return predict(model, spec, x_new).unaryExpr([](double v) { return v < 0.0 ? -1.0 : 1.0; });
}

Vector predict(const KRRModel& model, const KernelSpec& spec, const Matrix& x_new) {
  if (model.train_points.rows() != model.alpha.size()) {
    throw UsageError("predict: KRR model has no training points attached");
  }
  return cross_gram(spec, x_new, model.train_points) * model.alpha;
}

ApproxError function_approx_error(const Vector& f, const FeatureMatrix& z, double lambda) {
  require_lambda(lambda, "function_approx_error");
  if (f.size() != z.rows()) throw DataError("function_approx_error: size mismatch");
  const RidgeSystem system(approx_gram(z), lambda);
  const Vector a = system.solve(f);
  const Vector beta = z.values.transpose() * a;  // push-through form of the minimizer
  return {lambda * f.dot(a), beta.squaredNorm()};
}

double orthogonality_check(const Matrix& gram, const FeatureMatrix& z, const Vector& y,
                           double lambda) {
  require_lambda(lambda, "orthogonality_check");
  const Matrix approx = approx_gram(z);
  const Vector f_hat = gram * RidgeSystem(gram, lambda).solve(y);
  const Vector f_beta = approx * RidgeSystem(approx, lambda).solve(y);
  return (y - f_hat).dot(f_beta - f_hat);
}

}  // namespace lwrff
