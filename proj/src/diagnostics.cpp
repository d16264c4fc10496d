#include "lwrff/diagnostics.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "lwrff/error.hpp"

namespace lwrff {
namespace {

struct LineFit {
  double slope = 0.0;
  double r2 = 0.0;
};

LineFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys) {
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return fit;
}

}  // namespace

double whitened_error_norm(const Matrix& gram, const Matrix& approx, double lambda) {
  if (!(lambda > 0.0)) throw UsageError("whitened_error_norm: lambda must be > 0");
  if (gram.rows() != approx.rows() || gram.cols() != approx.cols()) {
    throw UsageError("whitened_error_norm: matrix shapes differ");
  }
  Matrix shifted = gram;
  shifted.diagonal().array() += static_cast<double>(gram.rows()) * lambda;
  const Matrix w = inverse_sqrt(shifted);
  Matrix e = w * (approx - gram) * w;
  e = 0.5 * (e + e.transpose()).eval();
  return spectral_norm_symmetric(e);
}

long required_features(FeatureRule rule, double dof, double lambda, double z0, double delta) {
  if (!(dof > 0.0)) throw UsageError("required_features: dof must be > 0");
  if (!(delta > 0.0 && delta < 1.0)) throw UsageError("required_features: delta must be in (0, 1)");
  const double log_term = std::log(16.0 * dof / delta);
  double count = 0.0;
  if (rule == FeatureRule::LeverageRFF) {
    count = 5.0 * dof * log_term;
  } else {
    if (!(lambda > 0.0)) throw UsageError("required_features: lambda must be > 0");
    count = 5.0 * (z0 * z0 / lambda) * log_term;
  }
  return static_cast<long>(std::ceil(count));
}

double fixed_point_bound(const Vector& eigs, long n, double lambda, double e7) {
  if (n < 1) throw UsageError("fixed_point_bound: n must be >= 1");
  if (!(lambda > 0.0)) throw UsageError("fixed_point_bound: lambda must be > 0");
  const double nd = static_cast<double>(n);
  const Eigen::Index m = std::min<Eigen::Index>(eigs.size(), n);
  // suffix[h] = sum_{i >= h} eig_i (0-based), i.e. the tail beyond the top h.
  std::vector<double> suffix(static_cast<std::size_t>(n) + 1, 0.0);
  for (Eigen::Index i = m - 1; i >= 0; --i) {
    suffix[static_cast<std::size_t>(i)] = suffix[static_cast<std::size_t>(i) + 1] + std::max(eigs[i], 0.0);
  }
  const double head_unit = e7 / (nd * nd * nd * lambda * lambda);
  double best = std::numeric_limits<double>::infinity();
  for (long h = 0; h <= n; ++h) {
    const double value = static_cast<double>(h) * head_unit +
                         std::sqrt(suffix[static_cast<std::size_t>(h)] / nd);
    best = std::min(best, value);
  }
  return best;
}

std::string to_string(DecayModel model) {
  switch (model) {
    case DecayModel::Exponential: return "exponential";
    case DecayModel::Polynomial: return "polynomial";
    case DecayModel::Undetermined: return "undetermined";
  }
  return "unknown";
}

DecayReport decay_report_from_spectrum(const Vector& eigenvalues) {
  DecayReport report;
  std::vector<double> ev(eigenvalues.data(), eigenvalues.data() + eigenvalues.size());
  std::sort(ev.begin(), ev.end(), std::greater<>());
  for (double& v : ev) {
    if (v < 0.0) {
      v = 0.0;
      ++report.clipped;
    }
  }
  if (report.clipped > 0) {
    spdlog::debug("decay_report: clipped {} negative eigenvalues to zero", report.clipped);
  }
  report.eigenvalues = Eigen::Map<const Vector>(ev.data(), static_cast<Eigen::Index>(ev.size()));

  std::vector<double> idx, log_idx, log_ev;
  for (std::size_t i = 0; i < ev.size() && ev[i] > 1e-12; ++i) {
    idx.push_back(static_cast<double>(i + 1));
    log_idx.push_back(std::log(static_cast<double>(i + 1)));
    log_ev.push_back(std::log(ev[i]));
  }
  if (idx.size() < 3) return report;

  const LineFit expo = fit_line(idx, log_ev);
  const LineFit poly = fit_line(log_idx, log_ev);
  if (expo.r2 < 0.9 && poly.r2 < 0.9) {
    report.fit_r2 = std::max(expo.r2, poly.r2);
    return report;
  }
  if (expo.r2 >= poly.r2) {
    report.fitted_model = DecayModel::Exponential;
    report.fit_exponent = expo.slope;
    report.fit_r2 = expo.r2;
  } else {
    report.fitted_model = DecayModel::Polynomial;
    report.fit_exponent = poly.slope;
    report.fit_r2 = poly.r2;
  }
  return report;
}

DecayReport decay_report(const Matrix& gram) {
  return decay_report_from_spectrum(symmetric_eigenvalues(gram) /
                                    static_cast<double>(gram.rows()));
}

}  // namespace lwrff
