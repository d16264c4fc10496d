#include "cli.hpp"

#include <algorithm>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "lwrff/data.hpp"
#include "lwrff/error.hpp"
#include "lwrff/experiments.hpp"

namespace lwrff::cli {

namespace {

struct Options {
  std::string kernel;
  double gamma = 1.0;
  int order = 2;
  int target_order = 2;
  int truncation = 5000;
  std::string features = "cos-plus-sin";
  std::vector<std::string> schemes;
  std::vector<long> n_grid;
  std::vector<long> s_grid;
  std::string lambda_rule = "inv-sqrt-n";
  double lambda_const = 1.0;
  std::string s_rule = "dof";
  double s_const = 1.0;
  int reps = 0;
  std::uint64_t seed = 0;
  std::string loss = "squared";
  std::string data;
  std::string task;
  std::string out;
  bool top_l = false;
  long min_output = 50;
  int threads = 1;
  long subsample = 0;
  bool record_timing = false;
  double sigma = 0.3;
  double x0 = 0.5;
  long n = 0;
  int pool_factor = 4;
  long eval_points = 10000;
  double delta = 0.1;
  bool no_standardize = false;
  std::string log_level = "warn";
};

void add_options(CLI::App& app, Options& o) {
  app.add_option("--kernel", o.kernel, "gaussian or spline")
      ->check(CLI::IsMember({"gaussian", "spline"}));
  app.add_option("--gamma", o.gamma, "Gaussian inverse squared lengthscale")->check(CLI::PositiveNumber);
  app.add_option("--order", o.order, "even order of the learner's spline kernel");
  app.add_option("--target-order", o.target_order, "even order of the simulated regression function");
  app.add_option("--truncation", o.truncation, "spline series terms")->check(CLI::PositiveNumber);
  app.add_option("--features", o.features, "Gaussian feature style")
      ->check(CLI::IsMember({"cos-plus-sin", "cos-sin-pair"}));
  app.add_option("--scheme", o.schemes, "plain, exact-leverage, approx-leverage")->delimiter(',');
  app.add_option("--n-grid", o.n_grid, "sample sizes")->delimiter(',');
  app.add_option("--s-grid", o.s_grid, "feature counts (benchmark) or pool sizes (pipeline)")
      ->delimiter(',');
  app.add_option("--lambda-rule", o.lambda_rule,
                 "inv-sqrt-n, inv-cbrt-n, inv-n, log-n-over-n, fixed");
  app.add_option("--lambda-const", o.lambda_const);
  app.add_option("--s-rule", o.s_rule, "dof, sufficient, fixed");
  app.add_option("--s-const", o.s_const);
  app.add_option("--reps", o.reps);
  app.add_option("--seed", o.seed);
  app.add_option("--loss", o.loss, "squared, hinge, logistic");
  app.add_option("--data", o.data, "sparse 'label idx:val' dataset");
  app.add_option("--task", o.task, "regression or classification (default from --loss)")
      ->check(CLI::IsMember({"regression", "classification"}));
  app.add_option("--out", o.out, "output CSV (stdout if omitted)");
  app.add_flag("--top-l", o.top_l, "keep the l highest pool scores instead of sampling");
  app.add_option("--min-output", o.min_output, "lower bound on the resampled feature count");
  app.add_option("--threads", o.threads)->check(CLI::PositiveNumber);
  app.add_option("--subsample", o.subsample, "rows kept per repetition");
  app.add_flag("--record-timing", o.record_timing, "fill wall_time_ms (output is then not reproducible)");
  app.add_option("--sigma", o.sigma, "simulation noise level");
  app.add_option("--x0", o.x0, "simulation target center");
  app.add_option("--n", o.n, "simulated dataset size when --data is absent");
  app.add_option("--pool-factor", o.pool_factor);
  app.add_option("--eval-points", o.eval_points);
  app.add_option("--delta", o.delta);
  app.add_flag("--no-standardize", o.no_standardize);
  app.add_option("--log-level", o.log_level)
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));
}

SplineSimConfig sim_config(const Options& o, Eigen::Index n) {
  if (o.order % 2 != 0) throw UsageError("--order must be even");
  SplineSimConfig sim;
  sim.target_order = o.target_order;
  sim.feature_half_order = o.order / 2;
  sim.x0 = o.x0;
  sim.sigma = o.sigma;
  sim.n = n;
  sim.truncation = o.truncation;
  sim.validate();
  return sim;
}

ExperimentConfig base_config(const Options& o, int default_reps) {
  ExperimentConfig c;
  if (!o.schemes.empty()) {
    c.schemes.clear();
    for (const auto& s : o.schemes) c.schemes.push_back(parse_scheme(s));
    c.scheme = c.schemes.front();
  }
  if (!o.n_grid.empty()) c.n_grid.assign(o.n_grid.begin(), o.n_grid.end());
  if (!o.s_grid.empty()) c.s_grid.assign(o.s_grid.begin(), o.s_grid.end());
  c.lambda_rule = parse_lambda_rule(o.lambda_rule);
  c.lambda_const = o.lambda_const;
  c.size_rule = parse_size_rule(o.s_rule);
  c.size_const = o.s_const;
  c.reps = o.reps > 0 ? o.reps : default_reps;
  if (o.reps < 0) throw UsageError("--reps must be >= 1");
  c.seed = o.seed;
  c.loss = parse_loss(o.loss);
  c.algorithm1.mode = o.top_l ? SelectionMode::TopL : SelectionMode::Multinomial;
  c.algorithm1.min_output = o.min_output;
  c.threads = o.threads;
  if (o.subsample != 0) c.subsample = o.subsample;
  c.record_timing = o.record_timing;
  c.pool_factor = o.pool_factor;
  c.eval_points = o.eval_points;
  c.delta = o.delta;
  c.standardize = !o.no_standardize;
  return c;
}

KernelSpec kernel_for(const Options& o, const std::string& fallback, int dim) {
  const std::string family = o.kernel.empty() ? fallback : o.kernel;
  if (family == "spline") return KernelSpec::spline(o.order, o.truncation);
  const auto style = o.features == "cos-sin-pair" ? FeatureStyle::CosSinPair : FeatureStyle::CosPlusSin;
  return KernelSpec::gaussian(o.gamma, dim, style);
}

// The dataset from --data, or a spline simulation of size --n.
struct Input {
  Dataset data;
  std::optional<SplineTarget> target;
};

Input load_input(const Options& o, Loss loss, Eigen::Index default_n) {
  Task task = loss == Loss::Squared ? Task::Regression : Task::Classification;
  if (!o.task.empty()) task = o.task == "regression" ? Task::Regression : Task::Classification;
  if (!o.data.empty()) return {parse_sparse_dataset(o.data, task), std::nullopt};
  if (task != Task::Regression) {
    throw UsageError("the built-in simulation is a regression task; pass --data for classification");
  }
  const auto sim = sim_config(o, o.n > 0 ? o.n : default_n);
  Rng rng = task_rng(o.seed, 0, 99);
  auto generated = generate_spline_sim(sim, rng);
  return {std::move(generated.data), std::move(generated.target)};
}

void write_output(const std::string& text, const Options& o, std::ostream& out,
                  const auto& emit) {
  if (o.out.empty()) {
    out << text;
  } else {
    emit(o.out);
  }
}

int simulate(const Options& o, std::ostream& out) {
  ExperimentConfig c = base_config(o, 20);
  if (o.schemes.size() > 1) throw UsageError("simulate takes a single --scheme");
  if (o.schemes.empty()) c.scheme = SamplingScheme::ExactLeverage;
  c.sim = sim_config(o, 1000);
  c.kernel = c.sim.learning_kernel();
  const auto result = run_convergence(c);
  write_output(format_csv(result), o, out, [&](const std::string& p) { emit_csv(result, p); });
  return kSuccess;
}

int benchmark(const Options& o, std::ostream& out) {
  ExperimentConfig c = base_config(o, 10);
  const auto input = load_input(o, c.loss, 1000);
  c.kernel = kernel_for(o, "gaussian", static_cast<int>(input.data.dim()));
  const auto result = run_benchmark(c, input.data, input.target ? &*input.target : nullptr);
  write_output(format_csv(result), o, out, [&](const std::string& p) { emit_csv(result, p); });
  return kSuccess;
}

int pipeline(const Options& o, std::ostream& out) {
  ExperimentConfig c = base_config(o, 10);
  if (o.s_grid.empty()) c.s_grid = {200};
  const auto input = load_input(o, c.loss, 1000);
  c.kernel = kernel_for(o, "spline", static_cast<int>(input.data.dim()));
  const auto result =
      run_algorithm1_pipeline(c, input.data, input.target ? &*input.target : nullptr);
  write_output(format_csv(result), o, out, [&](const std::string& p) { emit_csv(result, p); });
  return kSuccess;
}

int diagnose(const Options& o, std::ostream& out) {
  ExperimentConfig c = base_config(o, 1);
  const auto input = load_input(o, c.loss, 500);
  c.kernel = kernel_for(o, "spline", static_cast<int>(input.data.dim()));
  const auto report = run_diagnose(c, input.data);
  write_output(format_report_csv(report), o, out,
               [&](const std::string& p) { emit_report_csv(report, p); });
  return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Leverage weighted random Fourier feature experiments"};
  app.set_config("--config", "", "flat key=value file; command-line flags take precedence");
  app.require_subcommand(1);
  Options o;
  add_options(app, o);
  auto* sim = app.add_subcommand("simulate", "excess-risk convergence on the spline simulation");
  auto* bench = app.add_subcommand("benchmark", "plain vs leverage weighted features on a dataset");
  auto* pipe = app.add_subcommand("pipeline", "pool, resample and refit with approximate scores");
  auto* diag = app.add_subcommand("diagnose", "dof, leverage and concentration report");
  for (auto* sub : {sim, bench, pipe, diag}) sub->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream msg, help;
    const int code = app.exit(e, help, msg);
    out << help.str();
    err << msg.str();
    return code == 0 ? kSuccess : kUsage;
  }

  try {
    spdlog::set_level(spdlog::level::from_str(o.log_level));
    if (sim->parsed()) return simulate(o, out);
    if (bench->parsed()) return benchmark(o, out);
    if (pipe->parsed()) return pipeline(o, out);
    return diagnose(o, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::bad_alloc&) {
    err << "numerical failure: out of memory\n";
    return kNumerical;
  }
}

}  // namespace lwrff::cli
