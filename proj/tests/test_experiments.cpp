#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "lwrff/error.hpp"
#include "lwrff/experiments.hpp"
#include "oracles.hpp"

using namespace lwrff;

namespace {

ExperimentConfig small_convergence() {
  ExperimentConfig c;
  c.sim.truncation = 60;
  c.n_grid = {64, 128};
  c.reps = 3;
  c.eval_points = 400;
  return c;
}

Dataset small_sim(Eigen::Index n, std::uint64_t seed, SplineTarget* target = nullptr) {
  SplineSimConfig cfg;
  cfg.n = n;
  cfg.truncation = 60;
  Rng rng(seed);
  auto sim = generate_spline_sim(cfg, rng);
  if (target) *target = sim.target;
  return sim.data;
}

bool same_nan_aware(double a, double b) {
  return (std::isnan(a) && std::isnan(b)) || a == b;
}

}  // namespace

TEST_CASE("lambda and size rules") {
  CHECK(lambda_for(LambdaRule::InvSqrtN, 2.0, 400) == doctest::Approx(0.1));
  CHECK(lambda_for(LambdaRule::InvCbrtN, 1.0, 1000) == doctest::Approx(0.1));
  CHECK(lambda_for(LambdaRule::InvN, 1.0, 50) == doctest::Approx(0.02));
  CHECK(lambda_for(LambdaRule::LogNOverN, 1.0, 100) == doctest::Approx(std::log(100.0) / 100));
  CHECK(lambda_for(LambdaRule::Fixed, 0.3, 100) == 0.3);
  for (auto r : {LambdaRule::InvSqrtN, LambdaRule::InvCbrtN, LambdaRule::InvN, LambdaRule::LogNOverN,
                 LambdaRule::Fixed})
    CHECK(parse_lambda_rule(to_string(r)) == r);
  for (auto r : {SizeRule::DofProportional, SizeRule::SufficientCount, SizeRule::Fixed})
    CHECK(parse_size_rule(to_string(r)) == r);
  CHECK_THROWS_AS(parse_lambda_rule("sqrt"), UsageError);
  CHECK_THROWS_AS(parse_size_rule("many"), UsageError);
}

TEST_CASE("config validation") {
  ExperimentConfig c;
  CHECK_NOTHROW(c.validate());
  auto expect_usage = [](auto mutate) {
    ExperimentConfig bad;
    mutate(bad);
    CHECK_THROWS_AS(bad.validate(), UsageError);
  };
  expect_usage([](ExperimentConfig& b) { b.n_grid.clear(); });
  expect_usage([](ExperimentConfig& b) { b.n_grid = {0}; });
  expect_usage([](ExperimentConfig& b) { b.s_grid = {-3}; });
  expect_usage([](ExperimentConfig& b) { b.reps = 0; });
  expect_usage([](ExperimentConfig& b) { b.schemes.clear(); });
  expect_usage([](ExperimentConfig& b) { b.delta = 1.0; });
  expect_usage([](ExperimentConfig& b) { b.threads = 0; });
  expect_usage([](ExperimentConfig& b) { b.folds = 1; });
  expect_usage([](ExperimentConfig& b) { b.test_fraction = 0.0; });
  expect_usage([](ExperimentConfig& b) { b.lambda_const = -1.0; });
  expect_usage([](ExperimentConfig& b) { b.subsample = 2; });
}

TEST_CASE("log-log slope fit") {
  std::vector<double> x{128, 256, 512, 1024, 2048}, y;
  for (double v : x) y.push_back(3.5 * std::pow(v, -0.5));
  const auto fit = fit_loglog_slope(x, y);
  CHECK(std::abs(fit.slope + 0.5) <= 1e-6);
  CHECK(std::abs(fit.intercept - std::log(3.5)) <= 1e-6);
  CHECK(fit.stderr_slope <= 1e-9);

  // Noisy data: the OLS standard error formula against a direct computation.
  std::vector<double> yn{1.0, 0.8, 0.5, 0.45, 0.2};
  const auto noisy = fit_loglog_slope(x, yn);
  double mx = 0, my = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]) / 5;
    my += std::log(yn[i]) / 5;
  }
  double sxx = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
    sxy += (std::log(x[i]) - mx) * (std::log(yn[i]) - my);
  }
  const double b = sxy / sxx, a = my - b * mx;
  double rss = 0;
  for (size_t i = 0; i < x.size(); ++i) rss += std::pow(std::log(yn[i]) - a - b * std::log(x[i]), 2);
  CHECK(noisy.slope == doctest::Approx(b).epsilon(1e-12));
  CHECK(noisy.stderr_slope == doctest::Approx(std::sqrt(rss / 3 / sxx)).epsilon(1e-10));

  CHECK_THROWS_AS(fit_loglog_slope({1.0, 1.0}, {1.0, 2.0}), UsageError);
  CHECK_THROWS_AS(fit_loglog_slope({1.0, 2.0}, {1.0, 0.0}), NumericalError);
  CHECK_THROWS_AS(fit_loglog_slope({1.0, 2.0}, {1.0}), UsageError);
}

TEST_CASE("double formatting") {
  CHECK(format_double(0.1) == "0.10000000000000001");
  CHECK(format_double(2.0) == "2");
  CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
  CHECK(format_double(std::numeric_limits<double>::infinity()) == "inf");
  CHECK(format_double(-std::numeric_limits<double>::infinity()) == "-inf");
}

TEST_CASE("csv round trip") {
  ExperimentResult r;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  for (int i = 0; i < 10; ++i) {
    ResultRow row;
    row.n = 100 + i;
    row.lambda = std::exp(nd(rng));
    row.s = 3 * i + 1;
    row.scheme = static_cast<SamplingScheme>(i % 3);
    row.rep = i;
    row.train_metric = nd(rng);
    row.test_metric = nd(rng);
    row.excess_risk = i % 2 ? std::numeric_limits<double>::quiet_NaN() : std::abs(nd(rng));
    row.wall_time_ms = 0.0;
    r.rows.push_back(row);
  }
  r.summary = {{"slope", "-0.5"}, {"note", "a=b"}};
  const std::string text = format_csv(r);
  CHECK(text.rfind("n,lambda,s,scheme,rep,train_metric,test_metric,excess_risk,wall_time_ms\n", 0) == 0);
  CHECK(text.find('\r') == std::string::npos);
  const auto back = parse_csv_text(text);
  REQUIRE(back.rows.size() == r.rows.size());
  for (size_t i = 0; i < r.rows.size(); ++i) {
    const auto& a = r.rows[i];
    const auto& b = back.rows[i];
    CHECK(a.n == b.n);
    CHECK(a.lambda == b.lambda);
    CHECK(a.s == b.s);
    CHECK(a.scheme == b.scheme);
    CHECK(a.rep == b.rep);
    CHECK(a.train_metric == b.train_metric);
    CHECK(a.test_metric == b.test_metric);
    CHECK(same_nan_aware(a.excess_risk, b.excess_risk));
  }
  CHECK(back.summary == r.summary);
  CHECK(back.summary_value("note") == std::optional<std::string>("a=b"));
  CHECK_FALSE(back.summary_value("missing").has_value());
  CHECK(format_csv(back) == text);

  const auto path = std::filesystem::temp_directory_path() / "lwrff_rows.csv";
  emit_csv(r, path);
  CHECK(format_csv(parse_csv(path)) == text);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(parse_csv_text("wrong,header\n"), DataError);
  CHECK_THROWS_AS(parse_csv_text(text.substr(0, text.find('\n') + 1) + "1,2,3\n"), DataError);
  try {
    emit_csv(r, "/nonexistent/dir/x.csv");
    FAIL("expected a DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("/nonexistent/dir/x.csv") != std::string::npos);
  }
}

TEST_CASE("task generators") {
  Rng a = task_rng(5, 2, 1), b = task_rng(5, 2, 1), c = task_rng(5, 3, 1), d = task_rng(5, 2, 2);
  const auto va = a(), vb = b(), vc = c(), vd = d();
  CHECK(va == vb);
  CHECK(va != vc);
  CHECK(va != vd);
}

TEST_CASE("convergence experiment") {
  auto c = small_convergence();
  const auto result = run_convergence(c);
  CHECK(result.rows.size() == 2 * 3);
  std::set<Eigen::Index> ns;
  for (const auto& row : result.rows) {
    ns.insert(row.n);
    CHECK(row.excess_risk >= 0.0);
    CHECK(row.lambda == doctest::Approx(1.0 / std::sqrt(static_cast<double>(row.n))));
    CHECK(row.scheme == SamplingScheme::ExactLeverage);
    CHECK(row.s >= 1);
    CHECK(row.wall_time_ms == 0.0);
  }
  CHECK(ns == std::set<Eigen::Index>{64, 128});
  REQUIRE(result.summary_value("slope").has_value());
  REQUIRE(result.summary_value("mean_excess_risk_n64").has_value());
  CHECK(result.summary_value("negative_excess_risk_rows") == std::optional<std::string>("0"));

  c.threads = 4;
  CHECK(format_csv(run_convergence(c)) == format_csv(result));

  c.threads = 1;
  c.scheme = SamplingScheme::Plain;
  c.size_rule = SizeRule::Fixed;
  c.size_const = 7;
  for (const auto& row : run_convergence(c).rows) CHECK(row.s == 7);
}

TEST_CASE("benchmark") {
  SplineTarget target(KernelSpec::spline(2, 60), 0.5);
  const Dataset data = small_sim(150, 3, &target);
  ExperimentConfig c;
  c.kernel = KernelSpec::gaussian(1.0, 1);
  c.s_grid = {5, 10};
  c.reps = 2;
  c.cv_lambdas = {1e-3, 1e-1};
  c.cv_gammas = {1.0, 4.0};
  const auto result = run_benchmark(c, data, &target);
  CHECK(result.rows.size() == 2 * 2 * 2);
  for (const auto& row : result.rows) {
    CHECK(row.n == 105);
    CHECK((row.lambda == 1e-3 || row.lambda == 1e-1));
    CHECK(row.test_metric > 0.0);
    CHECK(std::isfinite(row.excess_risk));
  }
  const auto gamma = result.summary_value("rep0_gamma");
  REQUIRE(gamma.has_value());
  CHECK((*gamma == "1" || *gamma == "4"));
  CHECK(result.summary_value("mean_test_plain_s5").has_value());
  CHECK(result.summary_value("halfwidth_test_exact-leverage_s10").has_value());

  c.threads = 3;
  CHECK(format_csv(run_benchmark(c, data, &target)) == format_csv(result));

  // Without the target the excess risk is unknown.
  c.threads = 1;
  for (const auto& row : run_benchmark(c, data).rows) CHECK(std::isnan(row.excess_risk));
}

TEST_CASE("classification benchmark") {
  std::mt19937_64 rng(4);
  Dataset d;
  d.task = Task::Classification;
  d.x = oracle::random_matrix(120, 2, rng);
  d.y.resize(120);
  for (Eigen::Index i = 0; i < 120; ++i) d.y[i] = d.x(i, 0) * d.x(i, 1) > 0 ? 1.0 : -1.0;
  ExperimentConfig c;
  c.kernel = KernelSpec::gaussian(1.0, 2);
  c.s_grid = {20};
  c.reps = 1;
  c.cv_lambdas = {1e-3};
  c.cv_gammas = {1.0};
  for (auto loss : {Loss::Hinge, Loss::Logistic}) {
    c.loss = loss;
    const auto result = run_benchmark(c, d);
    for (const auto& row : result.rows) {
      CHECK(row.test_metric >= 0.0);
      CHECK(row.test_metric <= 1.0);
      // 36 test rows: the rate is a multiple of 1/36.
      CHECK(std::abs(row.test_metric * 36 - std::round(row.test_metric * 36)) <= 1e-9);
    }
  }
  c.loss = Loss::Squared;
  CHECK_THROWS_AS(run_benchmark(c, d), DataError);
}

TEST_CASE("pool resample pipeline") {
  SplineTarget target(KernelSpec::spline(2, 60), 0.5);
  const Dataset data = small_sim(300, 5, &target);
  ExperimentConfig c;
  c.kernel = KernelSpec::spline(2, 60);
  c.s_grid = {80};
  c.reps = 2;
  c.algorithm1.min_output = 20;
  const auto result = run_algorithm1_pipeline(c, data, &target);
  REQUIRE(result.rows.size() == 2 * 2);
  for (int r = 0; r < 2; ++r) {
    const auto& pool = result.rows[2 * r];
    const auto& refit = result.rows[2 * r + 1];
    CHECK(pool.scheme == SamplingScheme::Plain);
    CHECK(pool.s == 80);
    CHECK(refit.scheme == SamplingScheme::ApproxLeverage);
    CHECK(refit.s >= 20);
    CHECK(refit.s <= 80);
  }
  CHECK(result.summary_value("compression_s80").has_value());
  CHECK(result.summary_value("ratio_s80").has_value());
  c.threads = 2;
  CHECK(format_csv(run_algorithm1_pipeline(c, data, &target)) == format_csv(result));
}

TEST_CASE("diagnose report") {
  const Dataset data = small_sim(120, 6);
  ExperimentConfig c;
  c.kernel = KernelSpec::spline(2, 60);
  const auto report = run_diagnose(c, data);
  const auto eig = report.value("dof_eigen");
  const auto sol = report.value("dof_solve");
  REQUIRE(eig.has_value());
  REQUIRE(sol.has_value());
  CHECK(std::stod(*eig) == doctest::Approx(std::stod(*sol)).epsilon(1e-10));
  for (const char* key : {"lambda", "decay_model", "fixed_point_bound", "required_features_leverage",
                          "whitened_error_plain", "whitened_error_exact-leverage",
                          "resample_size"})
    CHECK(report.value(key).has_value());
  CHECK(format_report_csv(report).rfind("quantity,value\n", 0) == 0);
  CHECK(format_report_csv(run_diagnose(c, data)) == format_report_csv(report));
}
