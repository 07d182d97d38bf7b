#include "popgraph/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace popgraph {

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("pearson: need at least 2 samples");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

RegressionMetrics evaluate_regression(std::span<const double> predictions, std::span<const double> labels,
                                      const std::vector<bool>& mask) {
  if (predictions.size() != labels.size() || mask.size() != labels.size()) {
    throw std::invalid_argument("evaluate_regression: length mismatch");
  }
  std::vector<double> p, y;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    p.push_back(predictions[i]);
    y.push_back(labels[i]);
  }
  if (p.empty()) throw std::invalid_argument("evaluate_regression: empty mask");
  RegressionMetrics m;
  for (std::size_t i = 0; i < p.size(); ++i) m.mae += std::abs(p[i] - y[i]);
  m.mae /= static_cast<double>(p.size());
  if (p.size() >= 2) m.pearson_r = pearson(p, y);
  return m;
}

std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

double roc_auc(std::span<const double> scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw std::invalid_argument("roc_auc: length mismatch");
  // Mann-Whitney U with average ranks over tie groups.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(scores.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = avg;
    i = j + 1;
  }
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (positive[i]) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(scores.size()) - pos;
  if (pos == 0.0 || neg == 0.0) throw std::invalid_argument("roc_auc: need both positive and negative samples");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

ClassificationMetrics evaluate_classification(const Matrix& probabilities, std::span<const std::size_t> classes,
                                              const std::vector<bool>& mask) {
  const std::size_t n_classes = probabilities.cols();
  if (probabilities.rows() != classes.size() || mask.size() != classes.size()) {
    throw std::invalid_argument("evaluate_classification: length mismatch");
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    auto row = probabilities.row(i);
    const double total = std::accumulate(row.begin(), row.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-6) {
      throw std::invalid_argument("evaluate_classification: probability row " + std::to_string(i) + " sums to " +
                                  std::to_string(total));
    }
    rows.push_back(i);
  }
  if (rows.empty()) throw std::invalid_argument("evaluate_classification: empty mask");

  ClassificationMetrics m;
  std::vector<std::size_t> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0);
  std::size_t correct = 0;
  for (std::size_t i : rows) {
    const std::size_t pred = argmax(probabilities.row(i));
    const std::size_t truth = classes[i];
    if (pred == truth) {
      ++correct;
      ++tp[truth];
    } else {
      ++fp[pred];
      ++fn[truth];
    }
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(rows.size());

  double f1_sum = 0.0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const double denom = 2.0 * static_cast<double>(tp[c]) + static_cast<double>(fp[c] + fn[c]);
    f1_sum += denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
  }
  m.macro_f1 = f1_sum / static_cast<double>(n_classes);

  double auc_sum = 0.0;
  std::size_t auc_count = 0;
  std::vector<double> scores(rows.size());
  std::vector<bool> positive(rows.size());
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::size_t positives = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      scores[r] = probabilities(rows[r], c);
      positive[r] = classes[rows[r]] == c;
      positives += positive[r] ? 1 : 0;
    }
    if (positives == 0 || positives == rows.size()) {
      m.warnings.push_back("class " + std::to_string(c) + " has no " + (positives == 0 ? "positive" : "negative") +
                           " samples on the mask; skipped in macro-AUC");
      continue;
    }
    auc_sum += roc_auc(scores, positive);
    ++auc_count;
  }
  m.macro_auc = auc_count > 0 ? auc_sum / static_cast<double>(auc_count) : 0.0;
  return m;
}

}  // namespace popgraph
