#include "lwrff/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include "lwrff/error.hpp"

namespace lwrff {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr Eigen::Index kBatch = 512;

// out[k] = 1 + coef * sum_m c_m cos(2 pi m u[k]) for a batch of offsets.
// cos/sin of the multiples are advanced by complex rotation, which keeps the
// rounding error linear in the number of terms.
void series_batch(const double* u, double* out, Eigen::Index count,
                  const std::vector<double>& coefs, double coef) {
  double c1[kBatch], s1[kBatch], c[kBatch], s[kBatch], acc[kBatch];
  for (Eigen::Index k = 0; k < count; ++k) {
    c1[k] = std::cos(kTwoPi * u[k]);
    s1[k] = std::sin(kTwoPi * u[k]);
    c[k] = c1[k];
    s[k] = s1[k];
    acc[k] = 0.0;
  }
  const std::size_t terms = coefs.size();
  for (std::size_t m = 0; m < terms; ++m) {
    const double w = coefs[m];
    for (Eigen::Index k = 0; k < count; ++k) acc[k] += w * c[k];
    if (m + 1 == terms) break;
    for (Eigen::Index k = 0; k < count; ++k) {
      const double cn = c[k] * c1[k] - s[k] * s1[k];
      const double sn = s[k] * c1[k] + c[k] * s1[k];
      c[k] = cn;
      s[k] = sn;
    }
  }
  for (Eigen::Index k = 0; k < count; ++k) out[k] = 1.0 + coef * acc[k];
}

std::vector<double> series_coefs(double power, int terms) {
  std::vector<double> coefs(static_cast<std::size_t>(terms));
  for (int m = 1; m <= terms; ++m) coefs[m - 1] = std::pow(static_cast<double>(m), -power);
  return coefs;
}

// Periodic offset reduced to [0, 1).
double wrap(double u) { return u - std::floor(u); }

void check_points(const KernelSpec& spec, Eigen::Index cols, const char* what) {
  if (cols != spec.input_dim()) {
    std::ostringstream os;
    os << what << ": point dimension " << cols << " does not match kernel dimension "
       << spec.input_dim();
    throw DataError(os.str());
  }
}

constexpr int kHarmonicChunk = 128;

// Columns sqrt(w_m) cos(2 pi m p_j) and sqrt(w_m) sin(2 pi m p_j) for m in
// [first, first + count), cos block first. Each chunk restarts the rotation
// from directly evaluated angles so the recurrence error stays bounded.
void harmonic_chunk(const Vector& p, int first, int count, double power, Matrix& out) {
  const Eigen::Index n = p.size();
  out.resize(n, 2 * count);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double c1 = std::cos(kTwoPi * p[j]);
    const double s1 = std::sin(kTwoPi * p[j]);
    const double a = kTwoPi * wrap(static_cast<double>(first) * p[j]);
    double c = std::cos(a), s = std::sin(a);
    for (int k = 0; k < count; ++k) {
      const double w = std::sqrt(std::pow(static_cast<double>(first + k), -power));
      out(j, k) = w * c;
      out(j, count + k) = w * s;
      const double cn = c * c1 - s * s1;
      s = s * c1 + c * s1;
      c = cn;
    }
  }
}

// 1 + coef * sum_{m=1}^{terms} m^{-power} cos(2 pi m (a_i - b_j)), built as a
// sum of low-rank products of the harmonic bases of a and b.
Matrix series_product(const Vector& a, const Vector& b, double power, int terms, double coef,
                      bool same_points) {
  Matrix out = Matrix::Zero(a.size(), b.size());
  Matrix fa, fb;
  for (int first = 1; first <= terms; first += kHarmonicChunk) {
    const int count = std::min(kHarmonicChunk, terms - first + 1);
    harmonic_chunk(a, first, count, power, fa);
    if (same_points) {
      out.selfadjointView<Eigen::Lower>().rankUpdate(fa, coef);
    } else {
      harmonic_chunk(b, first, count, power, fb);
      out.noalias() += coef * fa * fb.transpose();
    }
  }
  if (same_points) out.triangularView<Eigen::StrictlyUpper>() = out.transpose();
  out.array() += 1.0;
  return out;
}

}  // namespace

KernelSpec KernelSpec::gaussian(double gamma, int dim, FeatureStyle style) {
  KernelSpec spec;
  spec.family = KernelFamily::Gaussian;
  spec.gamma = gamma;
  spec.dim = dim;
  spec.style = style;
  spec.validate();
  return spec;
}

KernelSpec KernelSpec::spline(int order, int truncation) {
  KernelSpec spec;
  spec.family = KernelFamily::SplineEven;
  spec.order = order;
  spec.truncation = truncation;
  spec.dim = 1;
  spec.validate();
  return spec;
}

void KernelSpec::validate() const {
  if (family == KernelFamily::Gaussian) {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw UsageError("Gaussian kernel needs gamma > 0");
    if (dim < 1) throw UsageError("Gaussian kernel needs input dimension >= 1");
  } else {
    if (order < 2 || order % 2 != 0) throw UsageError("spline kernel order must be even and >= 2");
    if (truncation < 1) throw UsageError("spline kernel truncation must be >= 1");
  }
}

double KernelSpec::feature_bound() const {
  if (family == KernelFamily::Gaussian) {
    return style == FeatureStyle::CosPlusSin ? std::numbers::sqrt2 : 1.0;
  }
  double sum = 0.0;
  for (int m = truncation; m >= 1; --m) sum += std::pow(static_cast<double>(m), -0.5 * order);
  return 1.0 + std::numbers::sqrt2 * sum;
}

double KernelSpec::feature_bound_sq() const {
  const double z0 = feature_bound();
  return z0 * z0;
}

double KernelSpec::truncation_error_bound() const {
  if (family == KernelFamily::Gaussian) return 0.0;
  const double t = order;
  return std::pow(static_cast<double>(truncation), 1.0 - t) / (t - 1.0);
}

std::string KernelSpec::describe() const {
  std::ostringstream os;
  if (family == KernelFamily::Gaussian) {
    os << "gaussian(gamma=" << gamma << ",d=" << dim << ","
       << (style == FeatureStyle::CosPlusSin ? "cos+sin" : "cos,sin") << ")";
  } else {
    os << "spline(t=" << order << ",M=" << truncation << ")";
  }
  return os.str();
}

double spline_series(double u, double power, int terms, double coef) {
  const auto coefs = series_coefs(power, terms);
  const double w = wrap(u);
  double out = 0.0;
  series_batch(&w, &out, 1, coefs, coef);
  return out;
}

double eval_kernel(const KernelSpec& spec, const Eigen::Ref<const Vector>& x,
                   const Eigen::Ref<const Vector>& y) {
  if (x.size() != spec.input_dim() || y.size() != spec.input_dim()) {
    throw DataError("eval_kernel: point dimension does not match kernel");
  }
  if (spec.family == KernelFamily::Gaussian) {
    return std::exp(-0.5 * spec.gamma * (x - y).squaredNorm());
  }
  return spline_series(x[0] - y[0], spec.order, spec.truncation);
}

Matrix cross_gram(const KernelSpec& spec, const Matrix& a, const Matrix& b) {
  check_points(spec, a.cols(), "cross_gram");
  check_points(spec, b.cols(), "cross_gram");
  if (spec.family == KernelFamily::Gaussian) {
    const Vector an = a.rowwise().squaredNorm();
    const Vector bn = b.rowwise().squaredNorm();
    Matrix d2 = -2.0 * a * b.transpose();
    d2.colwise() += an;
    d2.rowwise() += bn.transpose();
    return (-0.5 * spec.gamma * d2.array().max(0.0)).exp().matrix();
  }
  return series_product(a.col(0), b.col(0), spec.order, spec.truncation, 1.0, false);
}

Matrix gram_matrix(const KernelSpec& spec, const Matrix& x) {
  check_points(spec, x.cols(), "gram_matrix");
  const Eigen::Index n = x.rows();
  if (n < 1) throw DataError("gram_matrix: empty point set");
  if (spec.family == KernelFamily::Gaussian) {
    Matrix k = cross_gram(spec, x, x);
    k.diagonal().setOnes();
    return (0.5 * (k + k.transpose())).eval();
  }
  return series_product(x.col(0), x.col(0), spec.order, spec.truncation, 1.0, true);
}

Matrix spectral_sample(const KernelSpec& spec, Rng& rng, Eigen::Index s) {
  if (s < 1) throw UsageError("spectral_sample: s must be >= 1");
  Matrix v(s, spec.frequency_dim());
  if (spec.family == KernelFamily::Gaussian) {
    std::normal_distribution<double> normal(0.0, std::sqrt(spec.gamma));
    for (Eigen::Index i = 0; i < s; ++i) {
      for (Eigen::Index c = 0; c < v.cols(); ++c) v(i, c) = normal(rng);
    }
  } else {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (Eigen::Index i = 0; i < s; ++i) v(i, 0) = unif(rng);
  }
  return v;
}

Vector feature_value(const KernelSpec& spec, const Eigen::Ref<const Vector>& v,
                     const Eigen::Ref<const Vector>& x) {
  if (x.size() != spec.input_dim() || v.size() != spec.frequency_dim()) {
    throw DataError("feature_value: dimension does not match kernel");
  }
  if (spec.family == KernelFamily::Gaussian) {
    const double a = v.dot(x);
    if (spec.style == FeatureStyle::CosPlusSin) return Vector::Constant(1, std::cos(a) + std::sin(a));
    Vector out(2);
    out << std::cos(a), std::sin(a);
    return out;
  }
  return Vector::Constant(
      1, spline_series(v[0] - x[0], 0.5 * spec.order, spec.truncation, std::numbers::sqrt2));
}

Matrix feature_block(const KernelSpec& spec, const Matrix& frequencies, const Matrix& x) {
  check_points(spec, x.cols(), "feature_block");
  if (frequencies.cols() != spec.frequency_dim()) {
    throw DataError("feature_block: frequency dimension does not match kernel");
  }
  const Eigen::Index s = frequencies.rows();
  if (spec.family == KernelFamily::Gaussian) {
    const Matrix proj = x * frequencies.transpose();
    if (spec.style == FeatureStyle::CosPlusSin) {
      return (proj.array().cos() + proj.array().sin()).matrix();
    }
    Matrix out(x.rows(), 2 * s);
    out.leftCols(s) = proj.array().cos().matrix();
    out.rightCols(s) = proj.array().sin().matrix();
    return out;
  }
  return series_product(x.col(0), frequencies.col(0), 0.5 * spec.order, spec.truncation,
                        std::numbers::sqrt2, false);
}

}  // namespace lwrff
