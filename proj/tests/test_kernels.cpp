#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lwrff/error.hpp"
#include "lwrff/kernels.hpp"
#include "oracles.hpp"

using namespace lwrff;

namespace {

Matrix column(std::initializer_list<double> values) {
  Matrix x(static_cast<Eigen::Index>(values.size()), 1);
  Eigen::Index i = 0;
  for (double v : values) x(i++, 0) = v;
  return x;
}

Vector point(std::initializer_list<double> values) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v[i++] = x;
  return v;
}

}  // namespace

TEST_CASE("gaussian kernel at zero distance is one") {
  const auto spec = KernelSpec::gaussian(1.0, 3);
  const Vector x = point({0.3, -1.2, 4.0});
  CHECK(eval_kernel(spec, x, x) == doctest::Approx(1.0).epsilon(1e-15));
  const Vector y = point({0.0, 0.0, 0.0});
  CHECK(eval_kernel(spec, x, y) ==
        doctest::Approx(std::exp(-0.5 * x.squaredNorm())).epsilon(1e-14));
}

TEST_CASE("spline kernel on the diagonal approaches 1 + zeta(2)") {
  const int m = 1000000;
  const auto spec = KernelSpec::spline(2, m);
  const Vector x = point({0.37});
  const double value = eval_kernel(spec, x, x);
  const double limit = 1.0 + std::numbers::pi * std::numbers::pi / 6.0;
  CHECK(value == doctest::Approx(2.6449341).epsilon(1e-6));
  // The remainder sum_{k>M} k^-2 lies in (1/(M+1), 1/M).
  CHECK(limit - value > 1.0 / (m + 1.0) - 1e-12);
  CHECK(limit - value < 1.0 / m + 1e-12);
}

TEST_CASE("order-2 spline matches its Bernoulli closed form within 2/M") {
  const int m = 5000;
  const auto spec = KernelSpec::spline(2, m);
  for (double u : {0.0, 0.013, 0.25, 0.5, 0.71, 0.999}) {
    const double value = eval_kernel(spec, point({u}), point({0.0}));
    CHECK(std::abs(value - oracle::spline2_closed(u)) <= 2.0 / m);
  }
}

TEST_CASE("spline kernel equals the term-by-term series") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int order : {2, 4, 6}) {
    const auto spec = KernelSpec::spline(order, 3000);
    for (int i = 0; i < 20; ++i) {
      const double a = unif(rng), b = unif(rng);
      const double value = eval_kernel(spec, point({a}), point({b}));
      CHECK(value == doctest::Approx(oracle::spline_series(a - b, order, 3000)).epsilon(1e-11));
    }
  }
}

TEST_CASE("spline inputs are reduced by the fractional part of the difference") {
  const auto spec = KernelSpec::spline(2, 200);
  const double inside = eval_kernel(spec, point({0.3}), point({0.1}));
  CHECK(eval_kernel(spec, point({1.3}), point({0.1})) == doctest::Approx(inside).epsilon(1e-12));
  CHECK(eval_kernel(spec, point({-0.7}), point({2.1})) == doctest::Approx(inside).epsilon(1e-12));
}

TEST_CASE("kernels are symmetric and bounded by the diagonal") {
  std::mt19937_64 rng(3);
  const auto gauss = KernelSpec::gaussian(2.0, 2);
  const auto spline = KernelSpec::spline(4, 500);
  std::normal_distribution<double> nd;
  for (int i = 0; i < 50; ++i) {
    const Vector x = point({nd(rng), nd(rng)}), y = point({nd(rng), nd(rng)});
    CHECK(eval_kernel(gauss, x, y) == eval_kernel(gauss, y, x));
    CHECK(eval_kernel(gauss, x, y) <= eval_kernel(gauss, x, x));
    const Vector a = point({nd(rng)}), b = point({nd(rng)});
    CHECK(eval_kernel(spline, a, b) == doctest::Approx(eval_kernel(spline, b, a)).epsilon(1e-13));
    CHECK(std::abs(eval_kernel(spline, a, b)) <= eval_kernel(spline, a, a) + 1e-12);
  }
}

TEST_CASE("dimension mismatch is a data error") {
  const auto spec = KernelSpec::gaussian(1.0, 2);
  CHECK_THROWS_AS(eval_kernel(spec, point({1.0}), point({1.0, 2.0})), DataError);
  CHECK_THROWS_AS(gram_matrix(spec, column({1.0, 2.0})), DataError);
  CHECK_THROWS_AS(feature_block(spec, Matrix::Zero(3, 1), Matrix::Zero(2, 2)), DataError);
  CHECK_THROWS_AS(gram_matrix(KernelSpec::spline(2, 10), Matrix::Zero(3, 2)), DataError);
}

TEST_CASE("invalid kernel parameters are usage errors") {
  CHECK_THROWS_AS(KernelSpec::gaussian(0.0, 1), UsageError);
  CHECK_THROWS_AS(KernelSpec::gaussian(1.0, 0), UsageError);
  CHECK_THROWS_AS(KernelSpec::spline(3, 10), UsageError);
  CHECK_THROWS_AS(KernelSpec::spline(0, 10), UsageError);
  CHECK_THROWS_AS(KernelSpec::spline(2, 0), UsageError);
}

TEST_CASE("gram matrix") {
  SUBCASE("single point") {
    const auto spec = KernelSpec::spline(2, 100);
    const Matrix k = gram_matrix(spec, column({0.4}));
    REQUIRE(k.rows() == 1);
    CHECK(k(0, 0) == doctest::Approx(oracle::spline_series(0.0, 2, 100)).epsilon(1e-12));
  }
  SUBCASE("gaussian gram is PSD on distinct points") {
    std::mt19937_64 rng(5);
    const Matrix x = oracle::random_matrix(120, 3, rng);
    const Matrix k = gram_matrix(KernelSpec::gaussian(0.5, 3), x);
    const double min_eig = Eigen::SelfAdjointEigenSolver<Matrix>(k).eigenvalues().minCoeff();
    CHECK(min_eig >= -1e-8 * 120);
    CHECK((k - k.transpose()).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("duplicated rows give identical rows") {
    const Matrix x = column({0.1, 0.7, 0.1, 0.33});
    for (const auto& spec : {KernelSpec::spline(2, 300), KernelSpec::gaussian(3.0, 1)}) {
      const Matrix k = gram_matrix(spec, x);
      CHECK((k.row(0) - k.row(2)).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
  SUBCASE("spline gram entries equal the direct series") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Matrix x(40, 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, 0) = unif(rng);
    const auto spec = KernelSpec::spline(2, 300);
    const Matrix k = gram_matrix(spec, x);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.rows(); ++j)
        worst = std::max(worst, std::abs(k(i, j) - oracle::spline_series(x(i, 0) - x(j, 0), 2, 300)));
    CHECK(worst <= 1e-11);
    CHECK((k - k.transpose()).cwiseAbs().maxCoeff() == 0.0);
    const double min_eig = Eigen::SelfAdjointEigenSolver<Matrix>(k).eigenvalues().minCoeff();
    CHECK(min_eig >= -1e-8 * 40);
  }
  SUBCASE("cross gram agrees with pointwise evaluation") {
    std::mt19937_64 rng(2);
    const Matrix a = oracle::random_matrix(7, 2, rng), b = oracle::random_matrix(5, 2, rng);
    const auto spec = KernelSpec::gaussian(1.5, 2);
    const Matrix k = cross_gram(spec, a, b);
    for (Eigen::Index i = 0; i < 7; ++i)
      for (Eigen::Index j = 0; j < 5; ++j)
        CHECK(k(i, j) == doctest::Approx(eval_kernel(spec, a.row(i).transpose(), b.row(j).transpose()))
                             .epsilon(1e-12));
  }
}

TEST_CASE("spectral sampling moments") {
  SUBCASE("gaussian covariance is gamma I") {
    const auto spec = KernelSpec::gaussian(4.0, 2);
    Rng rng(17);
    const Eigen::Index s = 100000;
    const Matrix v = spectral_sample(spec, rng, s);
    REQUIRE(v.rows() == s);
    REQUIRE(v.cols() == 2);
    for (Eigen::Index c = 0; c < 2; ++c) {
      const double mean = v.col(c).mean();
      const double var = (v.col(c).array() - mean).square().sum() / static_cast<double>(s - 1);
      // Standard error of a normal sample variance: sigma^2 sqrt(2 / (s - 1)).
      const double se = 4.0 * std::sqrt(2.0 / static_cast<double>(s - 1));
      CHECK(std::abs(var - 4.0) <= 3.0 * se);
    }
  }
  SUBCASE("spline frequencies are uniform (Kolmogorov-Smirnov)") {
    const auto spec = KernelSpec::spline(2, 10);
    Rng rng(23);
    const Eigen::Index s = 100000;
    Matrix v = spectral_sample(spec, rng, s);
    std::vector<double> xs(v.data(), v.data() + s);
    std::sort(xs.begin(), xs.end());
    double d = 0.0;
    for (Eigen::Index i = 0; i < s; ++i) {
      const double lo = static_cast<double>(i) / s, hi = static_cast<double>(i + 1) / s;
      d = std::max({d, std::abs(xs[i] - lo), std::abs(hi - xs[i])});
    }
    CHECK(d < 0.01);
    CHECK(xs.front() >= 0.0);
    CHECK(xs.back() < 1.0);
  }
  SUBCASE("fixed seed reproduces the draws") {
    for (const auto& spec : {KernelSpec::gaussian(2.0, 3), KernelSpec::spline(2, 10)}) {
      Rng a(99), b(99);
      CHECK(spectral_sample(spec, a, 50) == spectral_sample(spec, b, 50));
    }
  }
  CHECK_THROWS_AS(
      [] {
        Rng rng(1);
        spectral_sample(KernelSpec::spline(2, 10), rng, 0);
      }(),
      UsageError);
}

TEST_CASE("feature values") {
  SUBCASE("cos + sin at zero phase") {
    const auto spec = KernelSpec::gaussian(1.0, 2);
    const Vector z = feature_value(spec, point({1.0, -1.0}), point({0.5, 0.5}));
    REQUIRE(z.size() == 1);
    CHECK(z[0] == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("cos, sin pair") {
    const auto spec = KernelSpec::gaussian(1.0, 1, FeatureStyle::CosSinPair);
    const Vector z = feature_value(spec, point({2.0}), point({0.3}));
    REQUIRE(z.size() == 2);
    CHECK(z[0] == doctest::Approx(std::cos(0.6)));
    CHECK(z[1] == doctest::Approx(std::sin(0.6)));
  }
  SUBCASE("order-2 spline section at v = x is 1 + sqrt(2) H_100") {
    // The sqrt(2) makes E_v[z(v,x) z(v,y)] reproduce the kernel; without it
    // the non-constant part of the kernel comes out halved.
    const auto spec = KernelSpec::spline(2, 100);
    const Vector z = feature_value(spec, point({0.42}), point({0.42}));
    const double expected = 1.0 + std::numbers::sqrt2 * oracle::harmonic(100);
    CHECK(z[0] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(oracle::harmonic(100) == doctest::Approx(5.1873775).epsilon(1e-7));
  }
  SUBCASE("feature block matches feature_value column by column") {
    Rng rng(4);
    for (const auto& spec : {KernelSpec::gaussian(1.0, 2), KernelSpec::spline(4, 200),
                             KernelSpec::gaussian(1.0, 2, FeatureStyle::CosSinPair)}) {
      const Matrix v = spectral_sample(spec, rng, 6);
      Matrix x = spec.family == KernelFamily::Gaussian ? oracle::random_matrix(5, 2, rng)
                                                        : Matrix(column({0.1, 0.2, 0.9, 0.5, 0.0}));
      const Matrix block = feature_block(spec, v, x);
      const int k = spec.columns_per_frequency();
      REQUIRE(block.cols() == 6 * k);
      for (Eigen::Index j = 0; j < x.rows(); ++j) {
        for (Eigen::Index i = 0; i < 6; ++i) {
          const Vector z = feature_value(spec, v.row(i).transpose(), x.row(j).transpose());
          CHECK(block(j, i) == doctest::Approx(z[0]).epsilon(1e-11));
          if (k == 2) CHECK(block(j, 6 + i) == doctest::Approx(z[1]).epsilon(1e-11));
        }
      }
    }
  }
  SUBCASE("features respect the bound z0") {
    Rng rng(8);
    for (const auto& spec : {KernelSpec::gaussian(3.0, 2), KernelSpec::spline(2, 100),
                             KernelSpec::spline(4, 100),
                             KernelSpec::gaussian(3.0, 2, FeatureStyle::CosSinPair)}) {
      const Matrix v = spectral_sample(spec, rng, 200);
      const Matrix x = spec.family == KernelFamily::Gaussian ? oracle::random_matrix(30, 2, rng)
                                                              : spectral_sample(spec, rng, 30);
      CHECK(feature_block(spec, v, x).cwiseAbs().maxCoeff() <= spec.feature_bound() + 1e-12);
    }
    CHECK(KernelSpec::gaussian(1.0, 1).feature_bound() == doctest::Approx(std::numbers::sqrt2));
    CHECK(KernelSpec::gaussian(1.0, 1, FeatureStyle::CosSinPair).feature_bound() == 1.0);
    CHECK(KernelSpec::spline(2, 100).feature_bound() ==
          doctest::Approx(1.0 + std::numbers::sqrt2 * oracle::harmonic(100)));
  }
}

TEST_CASE("monte carlo feature products are unbiased for the kernel") {
  // s = 1e5 draws; the sample mean of z(v,x) z(v,y) must sit within three
  // standard errors of k(x, y).
  const Eigen::Index s = 100000;
  auto check_pair = [&](const KernelSpec& spec, const Matrix& pts, std::uint64_t seed) {
    Rng rng(seed);
    const Matrix v = spectral_sample(spec, rng, s);
    const Matrix z = feature_block(spec, v, pts);
    const int k = spec.columns_per_frequency();
    Vector prod(s);
    for (Eigen::Index i = 0; i < s; ++i) {
      prod[i] = z(0, i) * z(1, i);
      if (k == 2) prod[i] += z(0, s + i) * z(1, s + i);
    }
    const double mean = prod.mean();
    const double sd = std::sqrt((prod.array() - mean).square().sum() / static_cast<double>(s - 1));
    const double exact = eval_kernel(spec, pts.row(0).transpose(), pts.row(1).transpose());
    CHECK(std::abs(mean - exact) <= 3.0 * sd / std::sqrt(static_cast<double>(s)));
  };
  Matrix g(2, 2);
  g << 0.3, -0.4, 1.0, 0.2;
  check_pair(KernelSpec::gaussian(1.0, 2), g, 31);
  check_pair(KernelSpec::gaussian(1.0, 2, FeatureStyle::CosSinPair), g, 32);
  check_pair(KernelSpec::spline(2, 100), column({0.15, 0.6}), 33);
  check_pair(KernelSpec::spline(4, 100), column({0.9, 0.05}), 34);
}

TEST_CASE("truncation error bound dominates the series tail") {
  for (int order : {2, 4}) {
    for (int m : {10, 100, 1000}) {
      const auto spec = KernelSpec::spline(order, m);
      long double tail = 0.0L;
      for (int k = 4000000; k > m; --k) tail += std::pow(static_cast<long double>(k), -order);
      CHECK(static_cast<double>(tail) <= spec.truncation_error_bound());
    }
  }
  CHECK(KernelSpec::gaussian(1.0, 1).truncation_error_bound() == 0.0);
}

TEST_CASE("spline_series helper") {
  CHECK(spline_series(0.25, 2, 50) == doctest::Approx(oracle::spline_series(0.25, 2, 50)).epsilon(1e-13));
  CHECK(spline_series(0.25, 1, 50, 3.0) ==
        doctest::Approx(oracle::spline_series(0.25, 1, 50, 3.0)).epsilon(1e-13));
}
