#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "popgraph/dataset.hpp"
#include "popgraph/trainer.hpp"

namespace popgraph {

inline constexpr double kDefaultRidge = 1e-3;

/// Affine model on node features. Regression has one output column; the
/// multinomial logistic model has one column per class.
struct LinearModel {
  Task task = Task::regression;
  Matrix weights;            // M x outputs
  std::vector<double> bias;  // outputs
  std::size_t iterations = 0;
  bool converged = true;

  std::size_t features() const { return weights.rows(); }
  /// N x outputs: predictions, or class probabilities for logistic models.
  Matrix predict(const Matrix& features) const;
};

/// Closed-form ridge regression on the masked rows. The bias is not
/// penalized. ridge = 0 on a rank-deficient design is an error.
LinearModel linear_fit(const Matrix& features, std::span<const double> labels, const std::vector<bool>& mask,
                       double ridge = kDefaultRidge);

struct LogisticOptions {
  double ridge = kDefaultRidge;
  double gradient_tolerance = 1e-6;
  std::size_t max_iterations = 200000;
};

/// Multinomial logistic regression by gradient descent with backtracking,
/// minimizing mean cross-entropy + ridge/2 * |W|^2.
LinearModel logistic_fit(const Matrix& features, std::span<const std::size_t> classes, std::size_t n_classes,
                         const std::vector<bool>& mask, const LogisticOptions& options = {});

/// Fits on the train split and reports test metrics.
MetricsRecord linear_experiment(const PreparedData& data, Task task, std::size_t n_classes,
                                double ridge = kDefaultRidge);

enum class FeatureSource { node_features, phenotypes };
const char* to_string(FeatureSource source);

/// Deterministic kNN graph over the chosen features.
EdgeList static_graph(const PreparedData& data, FeatureSource source, std::size_t k, DistanceMetric metric);

/// The same GCN trained on a fixed kNN graph with no graph loss.
RunOutcome static_gcn_experiment(const PreparedData& data, FeatureSource source, std::size_t k,
                                 DistanceMetric metric, TrainConfig config);

}  // namespace popgraph
