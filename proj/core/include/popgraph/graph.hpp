#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "popgraph/rng.hpp"
#include "popgraph/tape.hpp"
#include "popgraph/tensor.hpp"

namespace popgraph {

enum class DistanceMetric { euclidean, cosine, hyperbolic };

const char* to_string(DistanceMetric metric);
DistanceMetric distance_metric_from_string(const std::string& s);

/// Inputs to the hyperbolic metric are scaled so the largest row norm is this.
inline constexpr double kPoincareMaxNorm = 1.0 - 1e-3;

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  bool operator==(const Edge&) const = default;
  auto operator<=>(const Edge&) const = default;
};

using EdgeList = std::vector<Edge>;

/// One Gumbel-Top-k draw. Edges are grouped by source in ascending order;
/// within a source they appear in descending perturbed-score order.
struct SampledGraph {
  std::size_t nodes = 0;
  std::size_t k = 0;
  EdgeList edges;
  std::vector<double> log_prob;  // noise-free log p_ij, one per edge
  Matrix noise;                  // the Gumbel perturbation that produced this draw
};

// ---------------------------------------------------------------------------
// Distances and the edge kernel

/// Scale mapping every row of `features` into the Poincare ball.
double poincare_scale(const Matrix& features);

double distance(std::span<const double> u, std::span<const double> v, DistanceMetric metric,
                double poincare_scale = 1.0);

/// Symmetric N x N distance matrix with zero diagonal.
Matrix pairwise_distance(const Matrix& features, DistanceMetric metric);

/// logP_ij = -t * D_ij^2. The log is formed directly, never through exp.
Matrix edge_log_probabilities(const Matrix& distances, double temperature);

/// Differentiable log p_ij = -exp(log_temperature) * d(f_src, f_dst)^2 for
/// the listed edges, as an E x 1 tensor on `tape`. For the hyperbolic metric
/// the Poincare rescaling factor is held constant during backward.
Tensor edge_log_probability(Tape& tape, const Tensor& weighted_features, const Tensor& log_temperature,
                            std::span<const Edge> edges, DistanceMetric metric);

/// log sum_{j != i} exp(logP_ij) per row as an N x 1 tensor. Subtracting it
/// from log p_ij gives the log-probability of i picking j in one draw.
Tensor row_log_normalizer(Tape& tape, const Tensor& weighted_features, const Tensor& log_temperature,
                          DistanceMetric metric);

// ---------------------------------------------------------------------------
// Graph construction

/// Gumbel-Top-k: per row, add i.i.d. Gumbel(0,1) noise to logP and keep the
/// k largest off-diagonal entries.
SampledGraph gumbel_topk_sample(const Matrix& log_prob, std::size_t k, Rng& rng);

/// Same selection with caller-supplied noise (zeros give deterministic kNN).
SampledGraph gumbel_topk_select(const Matrix& log_prob, std::size_t k, Matrix noise);

/// Deterministic k nearest neighbours (ascending distance, lower index on ties).
EdgeList knn_static_graph(const Matrix& features, std::size_t k, DistanceMetric metric);

/// k distinct uniformly chosen targets per node, excluding self.
EdgeList random_graph(std::size_t nodes, std::size_t k, Rng& rng);

/// D^{-1/2} (A + I) D^{-1/2} where A is the symmetrized union of `edges`.
SparseMatrix symmetrize(std::span<const Edge> edges, std::size_t nodes);

// ---------------------------------------------------------------------------
// Homophily and export

enum class HomophilyMode { regression, classification };

/// Regression: mean |y_i - y_j| over unique undirected edges (lower is more
/// homophilous). Classification: fraction of unique undirected edges joining
/// equal labels (higher is more homophilous).
double homophily_score(std::span<const Edge> edges, std::span<const double> labels, HomophilyMode mode);

enum class GraphFormat { dot, json };

/// Hex colour for `age` on a linear blue-to-red ramp over [lo, hi].
std::string age_color(double age, double lo, double hi);

std::string graph_to_dot(std::span<const Edge> edges, std::span<const double> labels);
std::string graph_to_json(std::span<const Edge> edges, std::span<const double> labels,
                          std::optional<std::span<const double>> log_prob = std::nullopt);

void export_graph(const SampledGraph& graph, std::span<const double> labels, const std::string& path,
                  GraphFormat format);
void export_graph(std::span<const Edge> edges, std::span<const double> labels, const std::string& path,
                  GraphFormat format);

struct ParsedGraph {
  std::vector<double> ages;
  EdgeList edges;
  std::optional<std::vector<double>> log_prob;
};
ParsedGraph parse_graph_json(const std::string& text);

}  // namespace popgraph
