#include "popgraph/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace popgraph {
namespace {

std::vector<Tensor> trainable_parameters(const PipelineModel& model, const TrainConfig& config) {
  std::vector<Tensor> params;
  const bool adaptive = config.graph_mode == GraphMode::adaptive;
  if (adaptive && !config.frozen_attention) {
    for (auto& t : model.attention.parameters()) params.push_back(t);
  }
  for (auto& t : model.gcn.parameters()) params.push_back(t);
  if (adaptive) params.push_back(model.log_temperature);
  return params;
}

double validation_metric(const Matrix& outputs, const PreparedData& data, Task task, const std::vector<bool>& mask) {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    ++n;
    if (task == Task::regression) {
      total += std::abs(outputs(i, 0) - data.labels[i]);
    } else {
      total += argmax(outputs.row(i)) == data.classes[i] ? 1.0 : 0.0;
    }
  }
  return total / static_cast<double>(n);
}

bool improves(double candidate, double best, Task task) {
  return task == Task::regression ? candidate < best : candidate > best;
}

std::size_t output_width(const TrainConfig& config) {
  return config.task == Task::regression ? 1 : config.n_classes;
}

void check_inputs(const PreparedData& data, const TrainConfig& config, std::span<const Edge> fixed_edges) {
  config.validate();
  const std::size_t n = data.nodes();
  if (n < 2) throw TrainingError("train: need at least 2 nodes");
  if (config.k >= n) {
    throw TrainingError("train: k = " + std::to_string(config.k) + " must be below the node count " +
                        std::to_string(n));
  }
  if (data.masks.train.size() != n || data.masks.val.size() != n || data.masks.test.size() != n) {
    throw TrainingError("train: split masks do not cover every node");
  }
  if (data.masks.count_train() == 0) throw TrainingError("train: empty train split");
  if (config.task == Task::classification) {
    if (data.classes.size() != n) throw TrainingError("train: classification task without class labels");
    for (std::size_t c : data.classes) {
      if (c >= config.n_classes) {
        throw TrainingError("train: class label " + std::to_string(c) + " outside n_classes = " +
                            std::to_string(config.n_classes));
      }
    }
  }
  if (config.graph_mode == GraphMode::fixed && fixed_edges.empty()) {
    throw TrainingError("train: fixed graph mode needs an edge list");
  }
  if (config.frozen_attention && config.frozen_attention->size() != data.phenotypes.cols()) {
    throw TrainingError("train: frozen attention has " + std::to_string(config.frozen_attention->size()) +
                        " weights for " + std::to_string(data.phenotypes.cols()) + " phenotypes");
  }
}

}  // namespace

const char* to_string(GraphMode mode) {
  switch (mode) {
    case GraphMode::adaptive: return "adaptive";
    case GraphMode::fixed: return "fixed";
    case GraphMode::random: return "random";
  }
  return "?";
}

const char* to_string(GraphLossForm form) {
  return form == GraphLossForm::normalized ? "normalized" : "kernel";
}

GraphLossForm graph_loss_form_from_string(const std::string& s) {
  if (s == "normalized") return GraphLossForm::normalized;
  if (s == "kernel") return GraphLossForm::kernel;
  throw std::invalid_argument("unknown graph loss form '" + s + "' (expected normalized or kernel)");
}

void TrainConfig::validate() const {
  if (!(optimizer.learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning rate must be > 0");
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (k < 1) throw std::invalid_argument("TrainConfig: k must be >= 1");
  if (inference_samples < 1) throw std::invalid_argument("TrainConfig: inference samples must be >= 1");
  if (!std::isfinite(graph_loss_weight) || graph_loss_weight < 0.0) {
    throw std::invalid_argument("TrainConfig: graph loss weight must be finite and >= 0");
  }
  if (!(huber_delta > 0.0)) throw std::invalid_argument("TrainConfig: huber delta must be > 0");
  if (!std::isfinite(initial_log_temperature)) throw std::invalid_argument("TrainConfig: non-finite temperature");
  if (task == Task::classification && n_classes < 2) {
    throw std::invalid_argument("TrainConfig: classification needs n_classes >= 2");
  }
  if (optimizer.beta1 < 0.0 || optimizer.beta1 >= 1.0 || optimizer.beta2 < 0.0 || optimizer.beta2 >= 1.0) {
    throw std::invalid_argument("TrainConfig: betas must lie in [0, 1)");
  }
  if (frozen_attention) {
    for (double w : *frozen_attention) {
      if (!std::isfinite(w)) throw std::invalid_argument("TrainConfig: non-finite frozen attention weight");
    }
  }
}

PipelineModel PipelineModel::init(std::size_t phenotypes, std::size_t features, std::size_t outputs,
                                  const TrainConfig& config, Rng& rng) {
  PipelineModel m;
  m.attention = AttentionMlp::init(phenotypes, config.attention_hidden, rng);
  m.gcn = GcnModel::init(features, outputs, config.gcn, rng);
  m.log_temperature = Tensor::parameter(Matrix(1, 1, config.initial_log_temperature));
  return m;
}

std::vector<Tensor> PipelineModel::parameters() const {
  auto params = attention.parameters();
  for (auto& t : gcn.parameters()) params.push_back(t);
  params.push_back(log_temperature);
  return params;
}

PipelineModel PipelineModel::clone() const {
  PipelineModel m;
  m.attention = {attention.w1.clone(), attention.b1.clone(), attention.w2.clone(), attention.b2.clone()};
  m.gcn = {gcn.w1.clone(), gcn.w2.clone(), gcn.b2.clone(), gcn.w3.clone(), gcn.b3.clone()};
  m.log_temperature = log_temperature.clone();
  return m;
}

double PipelineModel::temperature() const { return std::exp(log_temperature.item()); }

PreparedData PreparedData::from(const PopulationDataset& dataset) {
  PreparedData d;
  d.features = Tensor::constant(dataset.features);
  d.phenotypes = Tensor::constant(dataset.phenotype_matrix());
  d.labels = dataset.labels;
  if (dataset.classes) d.classes = *dataset.classes;
  d.masks = dataset.masks;
  d.phenotype_info = dataset.phenotype_info();
  return d;
}

GraphFeatures compute_graph_features(Tape& tape, const PipelineModel& model, const PreparedData& data,
                                     const TrainConfig& config) {
  GraphFeatures gf;
  if (config.frozen_attention) {
    gf.attention = Tensor::constant(Matrix::row_vector(*config.frozen_attention));
    gf.scale = {0.0, 1.0};
  } else {
    Tensor raw = attention_forward(tape, data.phenotypes, model.attention);
    gf.attention = aggregate_attention(tape, raw, config.attention_scale_gradient, &gf.scale);
  }
  gf.weighted = weight_phenotypes(tape, gf.attention, data.phenotypes);
  return gf;
}

LossResult compute_loss(Tape& tape, const PipelineModel& model, const PreparedData& data, const TrainConfig& config,
                        const GraphFeatures& graph_features, std::span<const Edge> edges, double epsilon,
                        const std::vector<double>* frozen_rewards) {
  LossResult r;
  const SparseMatrix adjacency = symmetrize(edges, data.nodes());
  r.outputs = gcn_forward(tape, adjacency, data.features, model.gcn);
  Tensor supervised = config.task == Task::regression
                          ? huber_loss(tape, r.outputs, data.labels, data.masks.train, config.huber_delta)
                          : cross_entropy_loss(tape, r.outputs, data.classes, data.masks.train);
  if (frozen_rewards) {
    if (frozen_rewards->size() != data.nodes()) throw ShapeError("compute_loss: one reward per node expected");
    r.rewards = *frozen_rewards;
  } else {
    r.rewards = node_rewards(r.outputs.value(), config.task, data.labels, data.classes, epsilon);
  }

  Tensor graph_term = Tensor::scalar(0.0);
  if (config.graph_mode == GraphMode::adaptive && config.graph_loss_weight != 0.0) {
    Tensor logp = edge_log_probability(tape, graph_features.weighted, model.log_temperature, edges, config.metric);
    graph_term = graph_loss(tape, logp, edges, r.rewards, data.masks.train);
    if (config.graph_loss_form == GraphLossForm::normalized) {
      // Each sampled edge also pays rho_i times its row's log normalizer.
      Tensor lse = row_log_normalizer(tape, graph_features.weighted, model.log_temperature, config.metric);
      Matrix coef(1, data.nodes());
      for (const Edge& e : edges) {
        if (data.masks.train[e.src]) coef[e.src] -= r.rewards[e.src];
      }
      graph_term = tape.add(graph_term, tape.matmul(Tensor::constant(std::move(coef)), lse));
    }
  }
  r.loss = total_loss(tape, supervised, graph_term, config.graph_loss_weight);
  attach_reward_stats(r.loss, r.rewards, data.masks.train);
  return r;
}

Tensor surrogate_loss(Tape& tape, const PipelineModel& model, const PreparedData& data, const TrainConfig& config,
                      std::span<const Edge> edges, double epsilon, const std::vector<double>& rewards) {
  GraphFeatures gf = compute_graph_features(tape, model, data, config);
  return compute_loss(tape, model, data, config, gf, edges, epsilon, &rewards).loss.total_tensor;
}

Matrix current_log_probabilities(const PipelineModel& model, const PreparedData& data, const TrainConfig& config) {
  Tape tape;
  GraphFeatures gf = compute_graph_features(tape, model, data, config);
  return edge_log_probabilities(pairwise_distance(gf.weighted.value(), config.metric), model.temperature());
}

AttentionVector current_attention(const PipelineModel& model, const PreparedData& data, const TrainConfig& config) {
  Tape tape;
  GraphFeatures gf = compute_graph_features(tape, model, data, config);
  const auto w = gf.attention.value().values();
  return {std::vector<double>(w.begin(), w.end()), data.phenotype_info};
}

EdgeList draw_graph(const PipelineModel& model, const PreparedData& data, const TrainConfig& config,
                    std::span<const Edge> fixed_edges, Rng& rng, SampledGraph* sample) {
  switch (config.graph_mode) {
    case GraphMode::fixed: return EdgeList(fixed_edges.begin(), fixed_edges.end());
    case GraphMode::random: return random_graph(data.nodes(), config.k, rng);
    case GraphMode::adaptive: break;
  }
  SampledGraph drawn = gumbel_topk_sample(current_log_probabilities(model, data, config), config.k, rng);
  EdgeList edges = drawn.edges;
  if (sample) *sample = std::move(drawn);
  return edges;
}

EdgeList attention_knn_graph(const PipelineModel& model, const PreparedData& data, const TrainConfig& config) {
  Tape tape;
  const GraphFeatures gf = compute_graph_features(tape, model, data, config);
  return knn_static_graph(gf.weighted.value(), config.k, DistanceMetric::cosine);
}

Matrix predict_outputs(const PipelineModel& model, const PreparedData& data, std::span<const Edge> edges) {
  Tape tape;
  return gcn_forward(tape, symmetrize(edges, data.nodes()), data.features, model.gcn).value();
}

double task_epsilon(const PreparedData& data, const TrainConfig& config) {
  if (config.task == Task::classification) return null_epsilon_classification(config.n_classes);
  std::vector<double> train_labels;
  for (std::size_t i = 0; i < data.nodes(); ++i) {
    if (data.masks.train[i]) train_labels.push_back(data.labels[i]);
  }
  return null_epsilon(train_labels);
}

TrainResult train(const PreparedData& data, const TrainConfig& config, std::span<const Edge> fixed_edges) {
  check_inputs(data, config, fixed_edges);

  Rng init_rng = Rng::stream(config.seed, 0);
  Rng sample_rng = Rng::stream(config.seed, 1);

  TrainResult result;
  PipelineModel model =
      PipelineModel::init(data.phenotypes.cols(), data.features.cols(), output_width(config), config, init_rng);
  if (config.task == Task::regression) {
    double sum = 0.0;
    for (std::size_t i = 0; i < data.nodes(); ++i) sum += data.masks.train[i] ? data.labels[i] : 0.0;
    model.gcn.b3.mutable_value()[0] = sum / static_cast<double>(data.masks.count_train());
  }
  result.epsilon = task_epsilon(data, config);

  std::vector<Tensor> params = trainable_parameters(model, config);
  AdamW optimizer(config.optimizer);
  const std::vector<bool>& val_mask = data.masks.count_val() > 0 ? data.masks.val : data.masks.train;

  bool have_best = false;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    try {
      Tape tape;
      GraphFeatures gf;
      EdgeList edges;
      if (config.graph_mode == GraphMode::adaptive) {
        gf = compute_graph_features(tape, model, data, config);
        const Matrix log_prob =
            edge_log_probabilities(pairwise_distance(gf.weighted.value(), config.metric), model.temperature());
        edges = gumbel_topk_sample(log_prob, config.k, sample_rng).edges;
      } else {
        edges = draw_graph(model, data, config, fixed_edges, sample_rng);
      }
      LossResult loss = compute_loss(tape, model, data, config, gf, edges, result.epsilon);
      for (auto& p : params) p.zero_grad();
      tape.backward(loss.loss.total_tensor);
      optimizer.step(params);
      record.total = loss.loss.total;
      record.gcn = loss.loss.gcn;
      record.graph = loss.loss.graph;

      const EdgeList val_edges = draw_graph(model, data, config, fixed_edges, sample_rng);
      record.val_metric = validation_metric(predict_outputs(model, data, val_edges), data, config.task, val_mask);
      for (const auto& p : params) {
        if (!p.value().all_finite()) throw NumericError("parameter update produced a non-finite value");
      }
    } catch (const NumericError& e) {
      throw TrainingError("training aborted at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    record.temperature = model.temperature();
    result.history.push_back(record);
    result.epochs_run = epoch;

    if (!have_best || improves(record.val_metric, result.best_val_metric, config.task)) {
      have_best = true;
      result.best_val_metric = record.val_metric;
      result.best_epoch = epoch;
      if (config.patience > 0) result.model = model.clone();
    }
    if (config.patience > 0 && epoch - result.best_epoch >= config.patience) break;
  }
  if (config.patience == 0) result.model = model;
  return result;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row(r);
    auto o = out.row(r);
    const double top = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) total += o[c] = std::exp(in[c] - top);
    for (double& v : o) v /= total;
  }
  return out;
}

Matrix infer(const PipelineModel& model, const PreparedData& data, const TrainConfig& config, std::size_t samples,
             Rng& rng, std::span<const Edge> fixed_edges) {
  if (samples < 1) throw std::invalid_argument("infer: need at least one sample");
  Matrix mean;
  for (std::size_t s = 0; s < samples; ++s) {
    Matrix out = predict_outputs(model, data, draw_graph(model, data, config, fixed_edges, rng));
    if (config.task == Task::classification) out = softmax_rows(out);
    if (s == 0) {
      mean = std::move(out);
    } else {
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += out[i];
    }
  }
  for (double& v : mean.values()) v /= static_cast<double>(samples);
  return mean;
}

void fill_test_metrics(MetricsRecord& record, const Matrix& outputs, const PreparedData& data, Task task) {
  record.task = task;
  if (task == Task::regression) {
    const auto preds = outputs.column_values(0);
    const auto m = evaluate_regression(preds, data.labels, data.masks.test);
    record.mae = m.mae;
    record.pearson_r = m.pearson_r;
  } else {
    const auto m = evaluate_classification(outputs, data.classes, data.masks.test);
    record.accuracy = m.accuracy;
    record.macro_auc = m.macro_auc;
    record.macro_f1 = m.macro_f1;
    record.warnings.insert(record.warnings.end(), m.warnings.begin(), m.warnings.end());
  }
}

RunOutcome run_pipeline(const PreparedData& data, const TrainConfig& config, std::span<const Edge> fixed_edges) {
  const auto start = std::chrono::steady_clock::now();
  RunOutcome run;
  run.trained = train(data, config, fixed_edges);

  Rng inference_rng = Rng::stream(config.seed, 2);
  const Matrix outputs =
      infer(run.trained.model, data, config, config.inference_samples, inference_rng, fixed_edges);

  MetricsRecord& m = run.metrics;
  m.method = to_string(config.graph_mode);
  m.seed = config.seed;
  fill_test_metrics(m, outputs, data, config.task);

  const bool regression = config.task == Task::regression;
  std::vector<double> homophily_labels = data.labels;
  if (!regression) homophily_labels.assign(data.classes.begin(), data.classes.end());
  const HomophilyMode mode = regression ? HomophilyMode::regression : HomophilyMode::classification;
  if (config.graph_mode == GraphMode::adaptive) {
    SampledGraph sample;
    draw_graph(run.trained.model, data, config, fixed_edges, inference_rng, &sample);
    m.sampled_homophily = homophily_score(sample.edges, homophily_labels, mode);
    run.final_sample = std::move(sample);
    run.final_graph = attention_knn_graph(run.trained.model, data, config);
  } else {
    run.final_graph = draw_graph(run.trained.model, data, config, fixed_edges, inference_rng);
  }
  m.homophily = homophily_score(run.final_graph, homophily_labels, mode);

  m.history = run.trained.history;
  m.best_epoch = run.trained.best_epoch;
  m.epochs_run = run.trained.epochs_run;
  m.epsilon = run.trained.epsilon;
  m.temperature = run.trained.model.temperature();
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

}  // namespace popgraph
