#include "lwrff/data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string_view>

#include "lwrff/error.hpp"

namespace lwrff {
namespace {

struct Entry {
  long index;
  double value;
};

struct Row {
  double label;
  std::vector<Entry> entries;
};

[[noreturn]] void fail(const std::string& name, std::size_t line, const std::string& why) {
  std::ostringstream os;
  os << name << ":" << line << ": " << why;
  throw DataError(os.str());
}

bool parse_double(std::string_view text, double& out) {
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, out);
  return res.ec == std::errc() && res.ptr == end && std::isfinite(out);
}

bool parse_index(std::string_view text, long& out) {
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, out);
  return res.ec == std::errc() && res.ptr == end;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) tokens.push_back(line.substr(i, j - i));
    i = j;
  }
  return tokens;
}

void write_double(std::ostream& os, double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  os.write(buf, res.ptr - buf);
}

}  // namespace

std::string to_string(Task task) {
  return task == Task::Regression ? "regression" : "classification";
}

Dataset parse_sparse_dataset_text(const std::string& text, Task task, const std::string& name) {
  std::vector<Row> rows;
  long max_index = 0;
  std::size_t unordered_lines = 0;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tokens = split_ws(line);
    if (tokens.empty() || tokens.front().front() == '#') continue;

    Row row;
    if (!parse_double(tokens[0], row.label)) fail(name, line_no, "bad label '" + std::string(tokens[0]) + "'");
    std::set<long> seen;
    long prev = 0;
    bool ordered = true;
    for (std::size_t t = 1; t < tokens.size(); ++t) {
      const auto tok = tokens[t];
      const auto colon = tok.find(':');
      if (colon == std::string_view::npos) fail(name, line_no, "expected idx:val, got '" + std::string(tok) + "'");
      Entry e{};
      if (!parse_index(tok.substr(0, colon), e.index) || e.index < 1) {
        fail(name, line_no, "bad feature index in '" + std::string(tok) + "'");
      }
      if (!parse_double(tok.substr(colon + 1), e.value)) {
        fail(name, line_no, "bad feature value in '" + std::string(tok) + "'");
      }
      if (!seen.insert(e.index).second) {
        fail(name, line_no, "duplicate feature index " + std::to_string(e.index));
      }
      if (e.index < prev) ordered = false;
      prev = e.index;
      max_index = std::max(max_index, e.index);
      row.entries.push_back(e);
    }
    if (!ordered) ++unordered_lines;
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(name + ": no examples");
  if (unordered_lines > 0) {
    spdlog::info("{}: {} lines have feature indices out of order", name, unordered_lines);
  }

  Dataset data;
  data.name = name;
  data.task = task;
  data.x = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), max_index);
  data.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    data.y[r] = rows[i].label;
    for (const auto& e : rows[i].entries) data.x(r, e.index - 1) = e.value;
  }

  if (task == Task::Classification) {
    const std::set<double> labels(data.y.data(), data.y.data() + data.y.size());
    auto within = [&](double a, double b) {
      return std::all_of(labels.begin(), labels.end(), [&](double v) { return v == a || v == b; });
    };
    double negative = 0.0;
    if (within(-1.0, 1.0)) return data;
    if (within(0.0, 1.0)) {
      negative = 0.0;
    } else if (within(1.0, 2.0)) {
      negative = 1.0;
    } else {
      throw DataError(name + ": classification labels must be {-1,+1}, {0,1} or {1,2}");
    }
    spdlog::info("{}: mapping label {} -> -1, {} -> +1", name, negative, negative + 1.0);
    for (Eigen::Index i = 0; i < data.y.size(); ++i) data.y[i] = data.y[i] == negative ? -1.0 : 1.0;
  }
  return data;
}

Dataset parse_sparse_dataset(const std::filesystem::path& path, Task task) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_sparse_dataset_text(buf.str(), task, path.string());
}

std::string format_sparse_dataset(const Dataset& data) {
  std::ostringstream os;
  const Eigen::Index d = data.dim();
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    write_double(os, data.y[i]);
    for (Eigen::Index j = 0; j < d; ++j) {
      const double v = data.x(i, j);
      if (v == 0.0 && !std::signbit(v) && j + 1 != d) continue;
      os << ' ' << (j + 1) << ':';
      write_double(os, v);
    }
    os << '\n';
  }
  return os.str();
}

void write_sparse_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset '" + path.string() + "'");
  out << format_sparse_dataset(data);
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

Matrix Standardizer::apply(const Matrix& x) const {
  if (x.cols() != mean.size()) throw DataError("Standardizer: column count mismatch");
  Matrix out = (x.rowwise() - mean.transpose());
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    if (constant[static_cast<std::size_t>(j)]) {
      out.col(j).setZero();
    } else {
      out.col(j) /= scale[j];
    }
  }
  return out;
}

bool Standardizer::any_constant() const {
  return std::any_of(constant.begin(), constant.end(), [](bool c) { return c; });
}

Standardized standardize(const Dataset& data) {
  if (data.size() < 2) throw DataError("standardize: need at least two rows");
  Standardizer tr;
  const double n = static_cast<double>(data.size());
  tr.mean = data.x.colwise().mean().transpose();
  tr.scale = ((data.x.rowwise() - tr.mean.transpose()).colwise().squaredNorm() / n)
                 .cwiseSqrt()
                 .transpose();
  tr.constant.resize(static_cast<std::size_t>(data.dim()));
  for (Eigen::Index j = 0; j < data.dim(); ++j) {
    const double tol = 1e-12 * std::max(1.0, std::abs(tr.mean[j]));
    tr.constant[static_cast<std::size_t>(j)] = !(tr.scale[j] > tol);
  }
  if (tr.any_constant()) {
    spdlog::info("standardize({}): constant columns left at zero", data.name);
  }
  Standardized out{data, tr};
  out.data.x = tr.apply(data.x);
  return out;
}

void SplineSimConfig::validate() const {
  if (target_order < 2 || target_order % 2 != 0) throw UsageError("target order t must be even and >= 2");
  if (feature_half_order < 1) throw UsageError("feature half-order r must be >= 1");
  if (!(sigma >= 0.0)) throw UsageError("noise sigma must be >= 0");
  if (n < 1) throw UsageError("sample size must be >= 1");
  if (truncation < 1) throw UsageError("truncation must be >= 1");
}

SplineTarget::SplineTarget(KernelSpec kernel, double x0) : kernel_(std::move(kernel)), x0_(x0) {}

Vector SplineTarget::operator()(const Matrix& x) const {
  return cross_gram(kernel_, x, Matrix::Constant(1, 1, x0_)).col(0);
}

Matrix uniform_points(Eigen::Index n, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix x(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) x(i, 0) = unif(rng);
  return x;
}

SplineSim generate_spline_sim(const SplineSimConfig& config, Rng& rng) {
  config.validate();
  SplineTarget target(config.target_kernel(), config.x0);
  Dataset data;
  data.name = "spline-sim";
  data.task = Task::Regression;
  data.x = uniform_points(config.n, rng);
  data.y = target(data.x);
  if (config.sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, config.sigma);
    for (Eigen::Index i = 0; i < data.y.size(); ++i) data.y[i] += noise(rng);
  }
  return {std::move(data), std::move(target)};
}

std::vector<std::vector<Eigen::Index>> make_folds(Eigen::Index n, int k, Rng& rng) {
  if (k < 2) throw UsageError("make_folds: k must be >= 2");
  if (n < k) throw UsageError("make_folds: need n >= k");
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<Eigen::Index>> folds(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < perm.size(); ++i) folds[i % folds.size()].push_back(perm[i]);
  return folds;
}

Split train_test_split(Eigen::Index n, double test_fraction, Rng& rng) {
  if (n < 2) throw UsageError("train_test_split: need at least two rows");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw UsageError("train_test_split: test fraction must be in (0, 1)");
  }
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  auto n_test = static_cast<Eigen::Index>(std::llround(test_fraction * static_cast<double>(n)));
  n_test = std::clamp<Eigen::Index>(n_test, 1, n - 1);
  Split split;
  split.test.assign(perm.begin(), perm.begin() + n_test);
  split.train.assign(perm.begin() + n_test, perm.end());
  std::sort(split.test.begin(), split.test.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

Dataset subset(const Dataset& data, const std::vector<Eigen::Index>& rows) {
  Dataset out;
  out.name = data.name;
  out.task = data.task;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), data.dim());
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.x.row(static_cast<Eigen::Index>(i)) = data.x.row(rows[i]);
    out.y[static_cast<Eigen::Index>(i)] = data.y[rows[i]];
  }
  return out;
}

Dataset subsample(const Dataset& data, Eigen::Index count, Rng& rng) {
  if (count >= data.size()) return data;
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(data.size()));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  perm.resize(static_cast<std::size_t>(count));
  std::sort(perm.begin(), perm.end());
  return subset(data, perm);
}

}  // namespace lwrff
