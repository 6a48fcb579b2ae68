#include "actgraph/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "actgraph/error.hpp"

namespace actgraph {

namespace {

void check_training_set(std::size_t rows, std::span<const int> labels, std::size_t min_rows) {
  if (rows != labels.size()) throw DataError("training rows and labels differ in length");
  if (rows < min_rows)
    throw DegenerateError("training needs at least " + std::to_string(min_rows) + " examples");
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  if (pos == 0 || pos == static_cast<long>(labels.size()))
    throw DegenerateError("training labels contain a single class");
}

// Indices of rows in lexicographic (features, label) order.
std::vector<std::size_t> canonical_order(const std::vector<std::vector<double>>& rows, std::span<const int> labels) {
  std::vector<std::size_t> idx(rows.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (rows[a] != rows[b]) return rows[a] < rows[b];
    return labels[a] < labels[b];
  });
  return idx;
}

LinearFit fit_sorted(const std::vector<std::vector<double>>& rows, std::span<const int> labels,
                     const std::vector<std::size_t>& order, const TrainOptions& options) {
  const auto n = static_cast<Eigen::Index>(order.size());
  const auto d = static_cast<Eigen::Index>(rows[order.front()].size());

  Eigen::MatrixXd X(n, d + 1);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[order[i]];
    if (static_cast<Eigen::Index>(r.size()) != d) throw DataError("training rows differ in width");
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = r[j];
    y(i) = labels[order[i]] == 1 ? 1.0 : 0.0;
  }

  // Standardize; constant columns get zero weight.
  Eigen::VectorXd mean = X.leftCols(d).colwise().mean();
  Eigen::VectorXd scale(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    X.col(j).array() -= mean(j);
    const double sd = std::sqrt(X.col(j).squaredNorm() / static_cast<double>(n));
    scale(j) = sd > 1e-12 ? sd : 0.0;
    if (scale(j) > 0) X.col(j) /= scale(j);
    else X.col(j).setZero();
  }
  X.col(d).setOnes();

  Eigen::VectorXd reg = Eigen::VectorXd::Constant(d + 1, options.l2);
  reg(d) = 1e-10;

  auto loss = [&](const Eigen::VectorXd& w) {
    Eigen::VectorXd z = X * w;
    double f = 0.5 * (reg.array() * w.array().square()).sum();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double zi = z(i);
      // log(1 + exp(z)) - y z
      f += (zi > 0 ? zi + std::log1p(std::exp(-zi)) : std::log1p(std::exp(zi))) - y(i) * zi;
    }
    return f;
  };

  Eigen::VectorXd w = Eigen::VectorXd::Zero(d + 1);
  double f = loss(w);
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    Eigen::VectorXd z = X * w;
    Eigen::VectorXd p(n), s(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p(i) = 1.0 / (1.0 + std::exp(-z(i)));
      s(i) = p(i) * (1.0 - p(i));
    }
    Eigen::VectorXd grad = X.transpose() * (p - y) + reg.cwiseProduct(w);
    Eigen::MatrixXd H = X.transpose() * s.asDiagonal() * X;
    H.diagonal() += reg;
    Eigen::VectorXd step = H.ldlt().solve(grad);

    double t = 1.0;
    bool moved = false;
    while (t > 1e-12) {
      Eigen::VectorXd cand = w - t * step;
      const double fc = loss(cand);
      if (fc <= f - 1e-4 * t * grad.dot(step)) {
        w = cand;
        f = fc;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved || (t * step).lpNorm<Eigen::Infinity>() < 1e-10) break;
  }

  LinearFit out;
  out.weights.resize(d);
  out.bias = w(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    out.weights[j] = scale(j) > 0 ? w(j) / scale(j) : 0.0;
    out.bias -= out.weights[j] * mean(j);
  }
  return out;
}

double apply(const LinearFit& fit, const std::vector<double>& row) {
  double m = fit.bias;
  for (std::size_t j = 0; j < row.size(); ++j) m += fit.weights[j] * row[j];
  return m;
}

}  // namespace

LinearFit fit_logistic(const std::vector<std::vector<double>>& rows, std::span<const int> labels,
                       const TrainOptions& options) {
  check_training_set(rows.size(), labels, 2);
  return fit_sorted(rows, labels, canonical_order(rows, labels), options);
}

CalibratedLinear train_calibrated_linear(const std::vector<std::vector<double>>& rows, std::span<const int> labels,
                                         const TrainOptions& options) {
  check_training_set(rows.size(), labels, 10);
  const auto order = canonical_order(rows, labels);
  const int k = std::max(2, options.folds);

  std::vector<double> held_margins;
  std::vector<int> held_labels;
  for (int fold = 0; fold < k; ++fold) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < order.size(); ++i) (static_cast<int>(i % k) == fold ? test : train).push_back(order[i]);
    const auto pos = std::count_if(train.begin(), train.end(), [&](std::size_t i) { return labels[i] == 1; });
    if (test.empty() || pos == 0 || pos == static_cast<long>(train.size())) continue;
    const LinearFit fit = fit_sorted(rows, labels, train, options);
    for (auto i : test) {
      held_margins.push_back(apply(fit, rows[i]));
      held_labels.push_back(labels[i]);
    }
  }

  CalibratedLinear out;
  out.fit = fit_sorted(rows, labels, order, options);
  out.platt = fit_platt(held_margins, held_labels);
  return out;
}

LinearConcept train_relationship(const std::string& name, std::span<const RelationshipExample> examples,
                                 const TrainOptions& options) {
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  rows.reserve(examples.size());
  for (const auto& ex : examples) {
    const auto pf = pair_features(ex.a, ex.b);
    rows.emplace_back(pf.begin(), pf.end());
    labels.push_back(ex.label == 1 ? 1 : 0);
  }
  const auto trained = train_calibrated_linear(rows, labels, options);
  LinearConcept c;
  c.name = name;
  c.weights = trained.fit.weights;
  c.bias = trained.fit.bias;
  c.platt = trained.platt;
  c.feature_spec = pair_feature_names();
  return c;
}

ReIdModel train_reid(std::span<const ReIdExample> examples, const TrainOptions& options) {
  const std::size_t d = tracklet_feature_names().size();
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  rows.reserve(examples.size());
  for (const auto& ex : examples) {
    if (ex.x1.size() != d || ex.x2.size() != d) throw DataError("re-id example has the wrong feature width");
    // vec(x1 x2^T) laid out so that weight (i, j) multiplies x2[i] * x1[j].
    std::vector<double> row(d * d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) row[i * d + j] = ex.x2[i] * ex.x1[j];
    rows.push_back(std::move(row));
    labels.push_back(ex.label == 1 ? 1 : 0);
  }
  const auto trained = train_calibrated_linear(rows, labels, options);

  ReIdModel model;
  model.W.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      model.W(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = trained.fit.weights[i * d + j];
  // Both feature vectors start with a constant 1, so the bias lands on W(0,0).
  model.W(0, 0) += trained.fit.bias;
  model.platt = trained.platt;
  return model;
}

}  // namespace actgraph
