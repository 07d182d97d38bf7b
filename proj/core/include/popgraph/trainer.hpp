#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "popgraph/attention.hpp"
#include "popgraph/dataset.hpp"
#include "popgraph/gcn.hpp"
#include "popgraph/graph.hpp"
#include "popgraph/metrics.hpp"
#include "popgraph/optimizer.hpp"

namespace popgraph {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Where the GCN's graph comes from each epoch.
enum class GraphMode {
  adaptive,  // Gumbel-Top-k over the learned attention kernel
  fixed,     // a caller-supplied edge list (static baselines)
  random,    // k uniformly random targets per node, redrawn per sample
};

const char* to_string(GraphMode mode);

/// How sampled edges enter the graph loss.
enum class GraphLossForm {
  normalized,  // rho_i * (log p_ij - log sum_l p_il): score function of the sampler
  kernel,      // rho_i * log p_ij with the raw kernel value
};

const char* to_string(GraphLossForm form);
GraphLossForm graph_loss_form_from_string(const std::string& s);

struct TrainConfig {
  Task task = Task::regression;
  AdamWHyper optimizer;  // learning rate 0.005 by default
  std::size_t epochs = 300;
  std::size_t patience = 30;  // 0 disables early stopping
  std::size_t k = 5;
  DistanceMetric metric = DistanceMetric::euclidean;
  GraphMode graph_mode = GraphMode::adaptive;
  std::size_t inference_samples = 8;
  double graph_loss_weight = 1.0;  // lambda
  GraphLossForm graph_loss_form = GraphLossForm::normalized;
  std::uint64_t seed = 0;
  GcnConfig gcn;
  std::size_t attention_hidden = 0;  // 0 -> 2 * (Q + S)
  double huber_delta = kDefaultHuberDelta;
  /// tau at initialisation; the kernel temperature is t = exp(tau).
  double initial_log_temperature = 4.0;
  std::size_t n_classes = 4;
  ScaleGradient attention_scale_gradient = ScaleGradient::through_min_max;
  /// When set, the attention MLP is bypassed and these weights are used.
  std::optional<std::vector<double>> frozen_attention;

  void validate() const;
};

/// Every gradient-bearing parameter of the pipeline.
struct PipelineModel {
  AttentionMlp attention;  // theta
  GcnModel gcn;            // psi
  Tensor log_temperature;  // tau

  static PipelineModel init(std::size_t phenotypes, std::size_t features, std::size_t outputs,
                            const TrainConfig& config, Rng& rng);

  /// theta, then psi, then tau.
  std::vector<Tensor> parameters() const;
  PipelineModel clone() const;
  double temperature() const;
};

/// Constant tensors and labels derived once from a normalized dataset.
struct PreparedData {
  Tensor features;    // N x M
  Tensor phenotypes;  // N x (Q+S)
  std::vector<double> labels;
  std::vector<std::size_t> classes;  // empty for regression
  SplitMasks masks;
  std::vector<PhenotypeInfo> phenotype_info;

  static PreparedData from(const PopulationDataset& dataset);
  std::size_t nodes() const { return labels.size(); }
};

/// Output of the attention half of the pipeline: a and F = a (.) (q || s).
struct GraphFeatures {
  Tensor attention;  // 1 x P
  Tensor weighted;   // N x P
  AttentionScale scale;
};

GraphFeatures compute_graph_features(Tape& tape, const PipelineModel& model, const PreparedData& data,
                                     const TrainConfig& config);

struct LossResult {
  LossBreakdown loss;
  Tensor outputs;  // N x outputs
  std::vector<double> rewards;
};

/// L = L_GCN + lambda * L_graph for a given edge set. Rewards come from the
/// current outputs unless `frozen_rewards` is supplied.
LossResult compute_loss(Tape& tape, const PipelineModel& model, const PreparedData& data, const TrainConfig& config,
                        const GraphFeatures& graph_features, std::span<const Edge> edges, double epsilon,
                        const std::vector<double>* frozen_rewards = nullptr);

/// The training objective on a fixed edge set with rewards held at the given
/// values. Replaying it reproduces the loss exactly, which is what finite
/// differences need.
Tensor surrogate_loss(Tape& tape, const PipelineModel& model, const PreparedData& data, const TrainConfig& config,
                      std::span<const Edge> edges, double epsilon, const std::vector<double>& rewards);

/// Log-probability matrix of the current model (no gradient tracking).
Matrix current_log_probabilities(const PipelineModel& model, const PreparedData& data, const TrainConfig& config);
AttentionVector current_attention(const PipelineModel& model, const PreparedData& data, const TrainConfig& config);

/// One graph according to config.graph_mode. For adaptive mode `sample`
/// receives the full draw including log-probabilities and noise.
EdgeList draw_graph(const PipelineModel& model, const PreparedData& data, const TrainConfig& config,
                    std::span<const Edge> fixed_edges, Rng& rng, SampledGraph* sample = nullptr);

/// Deterministic cosine kNN over the attention-weighted phenotypes. This is
/// the graph reported as "learned" for homophily and export.
EdgeList attention_knn_graph(const PipelineModel& model, const PreparedData& data, const TrainConfig& config);

/// Model outputs on a given graph, without recording gradients.
Matrix predict_outputs(const PipelineModel& model, const PreparedData& data, std::span<const Edge> edges);

double task_epsilon(const PreparedData& data, const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;
  double total = 0.0;
  double gcn = 0.0;
  double graph = 0.0;
  double val_metric = 0.0;
  double temperature = 0.0;
};

struct TrainResult {
  PipelineModel model;  // best-validation checkpoint
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  double best_val_metric = 0.0;
  double epsilon = 0.0;
};

/// End-to-end training. `fixed_edges` is required for GraphMode::fixed.
TrainResult train(const PreparedData& data, const TrainConfig& config, std::span<const Edge> fixed_edges = {});

/// Averages `samples` stochastic forward passes: mean predictions (N x 1) for
/// regression, mean softmax probabilities (N x C) for classification.
Matrix infer(const PipelineModel& model, const PreparedData& data, const TrainConfig& config, std::size_t samples,
             Rng& rng, std::span<const Edge> fixed_edges = {});

Matrix softmax_rows(const Matrix& logits);

struct MetricsRecord {
  Task task = Task::regression;
  std::string method;
  std::optional<double> mae;
  std::optional<double> pearson_r;
  std::optional<double> accuracy;
  std::optional<double> macro_auc;
  std::optional<double> macro_f1;
  std::optional<double> homophily;
  std::optional<double> sampled_homophily;  // one Gumbel draw, adaptive only
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  double epsilon = 0.0;
  double temperature = 0.0;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<std::string> warnings;
};

struct RunOutcome {
  TrainResult trained;
  MetricsRecord metrics;
  EdgeList final_graph;  // the graph whose homophily is reported
  std::optional<SampledGraph> final_sample;  // adaptive only
};

/// Trains, then evaluates on the test split with inference averaging.
RunOutcome run_pipeline(const PreparedData& data, const TrainConfig& config, std::span<const Edge> fixed_edges = {});

/// Test-split metrics for averaged outputs.
void fill_test_metrics(MetricsRecord& record, const Matrix& outputs, const PreparedData& data, Task task);

}  // namespace popgraph
