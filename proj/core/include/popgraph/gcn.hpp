#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "popgraph/graph.hpp"
#include "popgraph/rng.hpp"
#include "popgraph/tape.hpp"

namespace popgraph {

enum class Task { regression, classification };

const char* to_string(Task task);
Task task_from_string(const std::string& s);

struct GcnConfig {
  std::size_t conv_units = 512;
  std::size_t fc_units = 128;
};

/// One graph convolution, one fully connected layer and a linear head:
///   H1 = relu(A X W1), H2 = relu(H1 W2 + b2), out = H2 W3 + b3.
struct GcnModel {
  Tensor w1;  // M x conv
  Tensor w2;  // conv x fc
  Tensor b2;  // 1 x fc
  Tensor w3;  // fc x outputs
  Tensor b3;  // 1 x outputs

  static GcnModel init(std::size_t features, std::size_t outputs, const GcnConfig& config, Rng& rng);

  std::size_t features() const { return w1.rows(); }
  std::size_t outputs() const { return w3.cols(); }
  std::vector<Tensor> parameters() const { return {w1, w2, b2, w3, b3}; }
};

/// N x outputs. For regression the single column is the prediction vector.
Tensor gcn_forward(Tape& tape, const SparseMatrix& adjacency, const Tensor& features, const GcnModel& model);

// ---------------------------------------------------------------------------
// Supervised losses

inline constexpr double kDefaultHuberDelta = 1.0;

/// Mean Huber loss of (pred - y) over masked nodes.
Tensor huber_loss(Tape& tape, const Tensor& predictions, std::span<const double> labels, const std::vector<bool>& mask,
                  double delta = kDefaultHuberDelta);

/// Mean negative log-softmax of the true class over masked nodes.
Tensor cross_entropy_loss(Tape& tape, const Tensor& logits, std::span<const std::size_t> classes,
                          const std::vector<bool>& mask);

// ---------------------------------------------------------------------------
// Rewards and the graph loss

/// Mean absolute error of the constant train-mean predictor.
double null_epsilon(std::span<const double> train_labels);
/// Error rate of a chance-level classifier, 1 - 1/n_classes.
double null_epsilon_classification(std::size_t n_classes);

/// |y - prediction| - epsilon. Negative when the prediction beats the null model.
double regression_reward(double label, double prediction, double epsilon);
/// (1 - [correct]) - (1 - 1/n_classes).
double classification_reward(bool correct, std::size_t n_classes);

/// Per-node rewards from frozen model outputs. Regression reads column 0;
/// classification takes the row argmax (lowest index on ties).
std::vector<double> node_rewards(const Matrix& outputs, Task task, std::span<const double> labels,
                                 std::span<const std::size_t> classes, double epsilon);

/// sum over edges (i -> j) with i in `mask` of rho_i * log p_ij. `edge_log_prob`
/// is E x 1, aligned with `edges`; rewards are constants.
Tensor graph_loss(Tape& tape, const Tensor& edge_log_prob, std::span<const Edge> edges,
                  std::span<const double> rewards, const std::vector<bool>& mask);

struct LossBreakdown {
  double total = 0.0;
  double gcn = 0.0;
  double graph = 0.0;
  double reward_mean = 0.0;
  double reward_min = 0.0;
  double reward_max = 0.0;
  Tensor total_tensor;

  std::string to_string() const;
};

/// total = L_gcn + lambda * L_graph. Throws NumericError carrying the
/// breakdown when any component is non-finite.
LossBreakdown total_loss(Tape& tape, const Tensor& gcn_loss, const Tensor& graph_loss_value, double lambda = 1.0);

void attach_reward_stats(LossBreakdown& breakdown, std::span<const double> rewards, const std::vector<bool>& mask);

}  // namespace popgraph
