#include "popgraph/baselines.hpp"

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace popgraph {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::vector<std::size_t> masked_rows(const std::vector<bool>& mask) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) rows.push_back(i);
  }
  return rows;
}

RowMatrix gather(const Matrix& m, const std::vector<std::size_t>& rows) {
  RowMatrix out(rows.size(), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(rows[r], c);
  }
  return out;
}

// Mean cross-entropy + ridge/2 |W|^2, and its gradient.
double logistic_objective(const RowMatrix& x, const std::vector<std::size_t>& y, const RowMatrix& w,
                          const Eigen::RowVectorXd& b, double ridge, RowMatrix* grad_w, Eigen::RowVectorXd* grad_b) {
  const auto n = static_cast<double>(x.rows());
  RowMatrix logits = (x * w).rowwise() + b;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double top = logits.row(i).maxCoeff();
    auto row = logits.row(i);
    row.array() -= top;
    const double log_z = std::log(row.array().exp().sum());
    loss -= row(static_cast<Eigen::Index>(y[i])) - log_z;
    if (grad_w) {
      row = (row.array() - log_z).exp();  // softmax
      row(static_cast<Eigen::Index>(y[i])) -= 1.0;
    }
  }
  loss = loss / n + 0.5 * ridge * w.squaredNorm();
  if (grad_w) {
    *grad_w = x.transpose() * logits / n + ridge * w;
    *grad_b = logits.colwise().sum() / n;
  }
  return loss;
}

}  // namespace

Matrix LinearModel::predict(const Matrix& features) const {
  if (features.cols() != weights.rows()) {
    throw ShapeError("LinearModel: " + std::to_string(features.cols()) + " features, model expects " +
                     std::to_string(weights.rows()));
  }
  const std::size_t outputs = weights.cols();
  Matrix out(features.rows(), outputs);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    for (std::size_t o = 0; o < outputs; ++o) {
      double v = bias[o];
      for (std::size_t c = 0; c < features.cols(); ++c) v += features(i, c) * weights(c, o);
      out(i, o) = v;
    }
  }
  if (task == Task::classification) out = softmax_rows(out);
  return out;
}

LinearModel linear_fit(const Matrix& features, std::span<const double> labels, const std::vector<bool>& mask,
                       double ridge) {
  if (features.rows() != labels.size() || mask.size() != labels.size()) {
    throw ShapeError("linear_fit: features, labels and mask disagree in length");
  }
  if (ridge < 0.0) throw std::invalid_argument("linear_fit: ridge must be >= 0");
  const auto rows = masked_rows(mask);
  if (rows.size() < 2) throw std::invalid_argument("linear_fit: need at least 2 training rows");

  RowMatrix x = gather(features, rows);
  Eigen::VectorXd y(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) y[static_cast<Eigen::Index>(r)] = labels[rows[r]];
  const Eigen::RowVectorXd x_mean = x.colwise().mean();
  const double y_mean = y.mean();
  x.rowwise() -= x_mean;
  y.array() -= y_mean;

  const auto m = x.cols();
  Eigen::MatrixXd gram = x.transpose() * x;
  gram.diagonal().array() += ridge;
  const Eigen::VectorXd rhs = x.transpose() * y;
  Eigen::VectorXd w;
  if (ridge == 0.0) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
    if (lu.rank() < m) {
      throw std::invalid_argument("linear_fit: singular system (rank " + std::to_string(lu.rank()) + " of " +
                                  std::to_string(m) + "); use a positive ridge penalty");
    }
    w = lu.solve(rhs);
  } else {
    w = gram.ldlt().solve(rhs);
  }

  LinearModel model;
  model.task = Task::regression;
  model.weights = Matrix(static_cast<std::size_t>(m), 1);
  for (Eigen::Index c = 0; c < m; ++c) model.weights[static_cast<std::size_t>(c)] = w[c];
  model.bias = {y_mean - x_mean.dot(w)};
  return model;
}

LinearModel logistic_fit(const Matrix& features, std::span<const std::size_t> classes, std::size_t n_classes,
                         const std::vector<bool>& mask, const LogisticOptions& options) {
  if (features.rows() != classes.size() || mask.size() != classes.size()) {
    throw ShapeError("logistic_fit: features, labels and mask disagree in length");
  }
  if (n_classes < 2) throw std::invalid_argument("logistic_fit: need at least 2 classes");
  const auto rows = masked_rows(mask);
  if (rows.size() < 2) throw std::invalid_argument("logistic_fit: need at least 2 training rows");
  const RowMatrix x = gather(features, rows);
  std::vector<std::size_t> y(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    y[r] = classes[rows[r]];
    if (y[r] >= n_classes) throw std::invalid_argument("logistic_fit: class label out of range");
  }

  const auto m = x.cols();
  const auto c = static_cast<Eigen::Index>(n_classes);
  RowMatrix w = RowMatrix::Zero(m, c);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(c);
  RowMatrix gw;
  Eigen::RowVectorXd gb;
  double loss = logistic_objective(x, y, w, b, options.ridge, &gw, &gb);
  double step = 1.0;

  LinearModel model;
  model.task = Task::classification;
  model.converged = false;
  for (std::size_t it = 0; it < options.max_iterations; ++it) {
    const double g2 = gw.squaredNorm() + gb.squaredNorm();
    if (std::sqrt(g2) <= options.gradient_tolerance) {
      model.converged = true;
      model.iterations = it;
      break;
    }
    // Armijo backtracking, then let the step grow again.
    double next = 0.0;
    RowMatrix w_next;
    Eigen::RowVectorXd b_next;
    for (;;) {
      w_next = w - step * gw;
      b_next = b - step * gb;
      next = logistic_objective(x, y, w_next, b_next, options.ridge, nullptr, nullptr);
      if (next <= loss - 0.5 * step * g2 || step < 1e-12) break;
      step *= 0.5;
    }
    w = std::move(w_next);
    b = std::move(b_next);
    loss = logistic_objective(x, y, w, b, options.ridge, &gw, &gb);
    step *= 2.0;
    model.iterations = it + 1;
  }

  model.weights = Matrix(static_cast<std::size_t>(m), n_classes);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) model.weights(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = w(i, j);
  }
  model.bias.assign(b.data(), b.data() + c);
  return model;
}

MetricsRecord linear_experiment(const PreparedData& data, Task task, std::size_t n_classes, double ridge) {
  const auto start = std::chrono::steady_clock::now();
  const Matrix& x = data.features.value();
  LinearModel model = task == Task::regression
                          ? linear_fit(x, data.labels, data.masks.train, ridge)
                          : logistic_fit(x, data.classes, n_classes, data.masks.train, {.ridge = ridge});
  MetricsRecord record;
  record.method = "linear";
  fill_test_metrics(record, model.predict(x), data, task);
  if (!model.converged) {
    record.warnings.push_back("logistic fit stopped after " + std::to_string(model.iterations) +
                              " iterations without reaching the gradient tolerance");
  }
  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return record;
}

const char* to_string(FeatureSource source) {
  return source == FeatureSource::node_features ? "node_features" : "phenotypes";
}

EdgeList static_graph(const PreparedData& data, FeatureSource source, std::size_t k, DistanceMetric metric) {
  const Matrix& f = source == FeatureSource::node_features ? data.features.value() : data.phenotypes.value();
  return knn_static_graph(f, k, metric);
}

RunOutcome static_gcn_experiment(const PreparedData& data, FeatureSource source, std::size_t k,
                                 DistanceMetric metric, TrainConfig config) {
  const EdgeList edges = static_graph(data, source, k, metric);
  config.graph_mode = GraphMode::fixed;
  config.graph_loss_weight = 0.0;
  config.k = k;
  RunOutcome run = run_pipeline(data, config, edges);
  run.metrics.method = std::string("static_") + to_string(source);
  return run;
}

}  // namespace popgraph
