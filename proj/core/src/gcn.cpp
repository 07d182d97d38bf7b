#include "popgraph/gcn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace popgraph {
namespace {

Tensor uniform_parameter(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(-bound, bound);
  return Tensor::parameter(std::move(m));
}

std::vector<std::size_t> masked_rows(const std::vector<bool>& mask) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) rows.push_back(i);
  }
  return rows;
}

}  // namespace

const char* to_string(Task task) { return task == Task::regression ? "regression" : "classification"; }

Task task_from_string(const std::string& s) {
  if (s == "regression") return Task::regression;
  if (s == "classification") return Task::classification;
  throw std::invalid_argument("unknown task '" + s + "' (expected regression or classification)");
}

GcnModel GcnModel::init(std::size_t features, std::size_t outputs, const GcnConfig& config, Rng& rng) {
  if (features == 0 || outputs == 0 || config.conv_units == 0 || config.fc_units == 0) {
    throw std::invalid_argument("GcnModel: all layer dimensions must be positive");
  }
  GcnModel m;
  m.w1 = uniform_parameter(features, config.conv_units, features, rng);
  m.w2 = uniform_parameter(config.conv_units, config.fc_units, config.conv_units, rng);
  m.b2 = uniform_parameter(1, config.fc_units, config.conv_units, rng);
  m.w3 = uniform_parameter(config.fc_units, outputs, config.fc_units, rng);
  m.b3 = uniform_parameter(1, outputs, config.fc_units, rng);
  return m;
}

Tensor gcn_forward(Tape& tape, const SparseMatrix& adjacency, const Tensor& features, const GcnModel& model) {
  if (adjacency.rows != adjacency.cols || adjacency.cols != features.rows()) {
    throw ShapeError("gcn_forward: adjacency " + Shape{adjacency.rows, adjacency.cols}.to_string() +
                     " does not match node features " + features.shape().to_string());
  }
  if (features.cols() != model.features()) {
    throw ShapeError("gcn_forward: node features " + features.shape().to_string() + " but model expects " +
                     std::to_string(model.features()) + " columns");
  }
  // (A X) W1 and A (X W1) are equal; propagate through the narrower operand.
  Tensor conv = features.cols() <= model.w1.cols() ? tape.matmul(tape.spmm(adjacency, features), model.w1)
                                                   : tape.spmm(adjacency, tape.matmul(features, model.w1));
  Tensor h1 = tape.relu(conv);
  Tensor h2 = tape.relu(tape.add_row(tape.matmul(h1, model.w2), model.b2));
  return tape.add_row(tape.matmul(h2, model.w3), model.b3);
}

Tensor huber_loss(Tape& tape, const Tensor& predictions, std::span<const double> labels, const std::vector<bool>& mask,
                  double delta) {
  if (predictions.cols() != 1 || predictions.rows() != labels.size() || mask.size() != labels.size()) {
    throw ShapeError("huber_loss: predictions " + predictions.shape().to_string() + ", " +
                     std::to_string(labels.size()) + " labels, mask of " + std::to_string(mask.size()));
  }
  const auto rows = masked_rows(mask);
  if (rows.empty()) throw std::invalid_argument("huber_loss: empty mask");
  Matrix target(rows.size(), 1);
  for (std::size_t i = 0; i < rows.size(); ++i) target[i] = labels[rows[i]];
  Tensor residual = tape.sub(tape.gather_rows(predictions, rows), Tensor::constant(std::move(target)));
  return tape.mean(tape.huber(residual, delta));
}

Tensor cross_entropy_loss(Tape& tape, const Tensor& logits, std::span<const std::size_t> classes,
                          const std::vector<bool>& mask) {
  if (logits.rows() != classes.size() || mask.size() != classes.size()) {
    throw ShapeError("cross_entropy_loss: logits " + logits.shape().to_string() + ", " +
                     std::to_string(classes.size()) + " labels, mask of " + std::to_string(mask.size()));
  }
  const auto rows = masked_rows(mask);
  if (rows.empty()) throw std::invalid_argument("cross_entropy_loss: empty mask");
  std::vector<std::size_t> truth(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) truth[i] = classes[rows[i]];
  Tensor log_probs = tape.log_softmax_rows(tape.gather_rows(logits, rows));
  return tape.scale(tape.mean(tape.pick(log_probs, truth)), -1.0);
}

double null_epsilon(std::span<const double> train_labels) {
  if (train_labels.empty()) throw std::invalid_argument("null_epsilon: no train labels");
  const double n = static_cast<double>(train_labels.size());
  const double mean = std::accumulate(train_labels.begin(), train_labels.end(), 0.0) / n;
  double mad = 0.0;
  for (double y : train_labels) mad += std::abs(y - mean);
  return mad / n;
}

double null_epsilon_classification(std::size_t n_classes) {
  if (n_classes < 2) throw std::invalid_argument("null_epsilon_classification: need at least 2 classes");
  return 1.0 - 1.0 / static_cast<double>(n_classes);
}

double regression_reward(double label, double prediction, double epsilon) {
  return std::abs(label - prediction) - epsilon;
}

double classification_reward(bool correct, std::size_t n_classes) {
  return (correct ? 0.0 : 1.0) - null_epsilon_classification(n_classes);
}

std::vector<double> node_rewards(const Matrix& outputs, Task task, std::span<const double> labels,
                                 std::span<const std::size_t> classes, double epsilon) {
  std::vector<double> rewards(outputs.rows());
  for (std::size_t i = 0; i < outputs.rows(); ++i) {
    if (task == Task::regression) {
      rewards[i] = regression_reward(labels[i], outputs(i, 0), epsilon);
    } else {
      auto row = outputs.row(i);
      const auto predicted = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      // epsilon for classification is the chance error rate, so this equals classification_reward.
      rewards[i] = (predicted == classes[i] ? 0.0 : 1.0) - epsilon;
    }
  }
  return rewards;
}

Tensor graph_loss(Tape& tape, const Tensor& edge_log_prob, std::span<const Edge> edges,
                  std::span<const double> rewards, const std::vector<bool>& mask) {
  if (edge_log_prob.rows() != edges.size() || edge_log_prob.cols() != 1) {
    throw ShapeError("graph_loss: " + std::to_string(edges.size()) + " edges but log-probabilities " +
                     edge_log_prob.shape().to_string());
  }
  Matrix coeff(edges.size(), 1);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const std::size_t src = edges[e].src;
    if (src >= rewards.size() || src >= mask.size()) throw ShapeError("graph_loss: edge source without a reward");
    coeff[e] = mask[src] ? rewards[src] : 0.0;
  }
  return tape.sum(tape.mul(edge_log_prob, Tensor::constant(std::move(coeff))));
}

std::string LossBreakdown::to_string() const {
  std::ostringstream out;
  out << "L_total=" << total << " L_gcn=" << gcn << " L_graph=" << graph << " reward[mean=" << reward_mean
      << " min=" << reward_min << " max=" << reward_max << "]";
  return out.str();
}

LossBreakdown total_loss(Tape& tape, const Tensor& gcn_loss, const Tensor& graph_loss_value, double lambda) {
  LossBreakdown b;
  b.gcn = gcn_loss.item();
  b.graph = graph_loss_value.item();
  b.total = b.gcn + lambda * b.graph;
  if (!std::isfinite(b.gcn) || !std::isfinite(b.graph) || !std::isfinite(b.total)) {
    throw NumericError("total_loss: non-finite loss (" + b.to_string() + ")");
  }
  b.total_tensor = lambda == 1.0 ? tape.add(gcn_loss, graph_loss_value)
                                 : tape.add(gcn_loss, tape.scale(graph_loss_value, lambda));
  b.total = b.total_tensor.item();
  return b;
}

void attach_reward_stats(LossBreakdown& breakdown, std::span<const double> rewards, const std::vector<bool>& mask) {
  double sum = 0.0, lo = INFINITY, hi = -INFINITY;
  std::size_t n = 0;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    if (!mask[i]) continue;
    sum += rewards[i];
    lo = std::min(lo, rewards[i]);
    hi = std::max(hi, rewards[i]);
    ++n;
  }
  if (n == 0) return;
  breakdown.reward_mean = sum / static_cast<double>(n);
  breakdown.reward_min = lo;
  breakdown.reward_max = hi;
}

}  // namespace popgraph
