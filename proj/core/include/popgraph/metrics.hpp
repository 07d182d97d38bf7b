#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "popgraph/tensor.hpp"

namespace popgraph {

struct RegressionMetrics {
  double mae = 0.0;
  /// Empty when either vector has zero variance on the mask.
  std::optional<double> pearson_r;
};

RegressionMetrics evaluate_regression(std::span<const double> predictions, std::span<const double> labels,
                                      const std::vector<bool>& mask);

std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

struct ClassificationMetrics {
  double accuracy = 0.0;
  double macro_auc = 0.0;
  double macro_f1 = 0.0;
  std::vector<std::string> warnings;
};

/// Binary ROC AUC from scores by rank (tied scores get half credit).
double roc_auc(std::span<const double> scores, const std::vector<bool>& positive);

/// `probabilities` is N x C with rows summing to 1. Argmax ties resolve to the
/// lowest class index.
ClassificationMetrics evaluate_classification(const Matrix& probabilities, std::span<const std::size_t> classes,
                                              const std::vector<bool>& mask);

std::size_t argmax(std::span<const double> row);

}  // namespace popgraph
