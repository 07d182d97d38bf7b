#include "popgraph/graph.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace popgraph {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double kernel(double d, double temperature) { return -temperature * (d * d); }

// Squared distance and its gradient with respect to both operands.
// `gu`/`gv` receive d(d^2)/du and d(d^2)/dv; `scale` only affects hyperbolic.
double sq_distance_with_grad(std::span<const double> u, std::span<const double> v, DistanceMetric metric,
                             double scale, std::span<double> gu, std::span<double> gv) {
  const std::size_t n = u.size();
  switch (metric) {
    case DistanceMetric::euclidean: {
      const double d = distance(u, v, metric);
      for (std::size_t c = 0; c < n; ++c) {
        gu[c] = 2.0 * (u[c] - v[c]);
        gv[c] = -gu[c];
      }
      return d * d;
    }
    case DistanceMetric::cosine: {
      const double nu = std::sqrt(dot(u, u)), nv = std::sqrt(dot(v, v));
      if (nu == 0.0 || nv == 0.0) {
        std::fill(gu.begin(), gu.end(), 0.0);
        std::fill(gv.begin(), gv.end(), 0.0);
        return 1.0;
      }
      const double d = distance(u, v, metric);
      const double c = 1.0 - d;
      const double factor = -2.0 * d;  // d(d^2)/dc
      for (std::size_t k = 0; k < n; ++k) {
        gu[k] = factor * (v[k] / (nu * nv) - c * u[k] / (nu * nu));
        gv[k] = factor * (u[k] / (nu * nv) - c * v[k] / (nv * nv));
      }
      return d * d;
    }
    case DistanceMetric::hyperbolic: {
      double diff2 = 0.0, xx = 0.0, yy = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double x = scale * u[k], y = scale * v[k];
        diff2 += (x - y) * (x - y);
        xx += x * x;
        yy += y * y;
      }
      const double alpha = 1.0 - xx, beta = 1.0 - yy;
      const double d = distance(u, v, metric, scale);
      const double z = 1.0 + 2.0 * diff2 / (alpha * beta);
      // d(d^2)/dz = 2 arcosh(z) / sqrt(z^2 - 1), which tends to 2 as z -> 1.
      const double zm1 = z - 1.0;
      const double dd2_dz = zm1 > 1e-12 ? 2.0 * d / std::sqrt(zm1 * (z + 1.0)) : 2.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double x = scale * u[k], y = scale * v[k];
        const double dz_dx = 2.0 * (2.0 * (x - y) / (alpha * beta) + 2.0 * diff2 * x / (alpha * alpha * beta));
        const double dz_dy = 2.0 * (-2.0 * (x - y) / (alpha * beta) + 2.0 * diff2 * y / (alpha * beta * beta));
        gu[k] = dd2_dz * dz_dx * scale;
        gv[k] = dd2_dz * dz_dy * scale;
      }
      return d * d;
    }
  }
  return 0.0;
}

void check_k(std::size_t k, std::size_t nodes, const char* op) {
  if (k == 0) throw std::invalid_argument(std::string(op) + ": k must be at least 1");
  if (k >= nodes) {
    throw std::invalid_argument(std::string(op) + ": k = " + std::to_string(k) + " must be below the node count " +
                                std::to_string(nodes));
  }
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

std::pair<double, double> label_range(std::span<const double> labels) {
  if (labels.empty()) return {0.0, 0.0};
  auto [lo, hi] = std::minmax_element(labels.begin(), labels.end());
  return {*lo, *hi};
}

}  // namespace

const char* to_string(DistanceMetric metric) {
  switch (metric) {
    case DistanceMetric::euclidean: return "euclidean";
    case DistanceMetric::cosine: return "cosine";
    case DistanceMetric::hyperbolic: return "hyperbolic";
  }
  return "?";
}

DistanceMetric distance_metric_from_string(const std::string& s) {
  if (s == "euclidean") return DistanceMetric::euclidean;
  if (s == "cosine") return DistanceMetric::cosine;
  if (s == "hyperbolic") return DistanceMetric::hyperbolic;
  throw std::invalid_argument("unknown distance metric '" + s + "' (expected euclidean, cosine or hyperbolic)");
}

double poincare_scale(const Matrix& features) {
  double max_norm = 0.0;
  for (std::size_t r = 0; r < features.rows(); ++r) {
    auto row = features.row(r);
    max_norm = std::max(max_norm, std::sqrt(dot(row, row)));
  }
  return max_norm > 0.0 ? kPoincareMaxNorm / max_norm : 1.0;
}

double distance(std::span<const double> u, std::span<const double> v, DistanceMetric metric, double scale) {
  if (u.size() != v.size()) throw ShapeError("distance: operand lengths differ");
  switch (metric) {
    case DistanceMetric::euclidean: {
      double s = 0.0;
      for (std::size_t k = 0; k < u.size(); ++k) s += (u[k] - v[k]) * (u[k] - v[k]);
      return std::sqrt(s);
    }
    case DistanceMetric::cosine: {
      const double nu = std::sqrt(dot(u, u)), nv = std::sqrt(dot(v, v));
      if (nu == 0.0 || nv == 0.0) return 1.0;
      const double c = std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
      return 1.0 - c;
    }
    case DistanceMetric::hyperbolic: {
      double diff2 = 0.0, xx = 0.0, yy = 0.0;
      for (std::size_t k = 0; k < u.size(); ++k) {
        const double x = scale * u[k], y = scale * v[k];
        diff2 += (x - y) * (x - y);
        xx += x * x;
        yy += y * y;
      }
      const double z = 1.0 + 2.0 * diff2 / ((1.0 - xx) * (1.0 - yy));
      if (!std::isfinite(z) || xx >= 1.0 || yy >= 1.0) {
        throw NumericError("hyperbolic distance: operand outside the Poincare ball after rescaling");
      }
      return std::acosh(z);
    }
  }
  return 0.0;
}

Matrix pairwise_distance(const Matrix& features, DistanceMetric metric) {
  const std::size_t n = features.rows();
  if (n < 2) throw std::invalid_argument("pairwise_distance: need at least 2 rows");
  const double scale = metric == DistanceMetric::hyperbolic ? poincare_scale(features) : 1.0;
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = distance(features.row(i), features.row(j), metric, scale);
      out(i, j) = d;
      out(j, i) = d;
    }
  }
  if (!out.all_finite()) throw NumericError("pairwise_distance: non-finite distance");
  return out;
}

Matrix edge_log_probabilities(const Matrix& distances, double temperature) {
  Matrix out(distances.rows(), distances.cols());
  for (std::size_t i = 0; i < distances.size(); ++i) out[i] = kernel(distances[i], temperature);
  return out;
}

Tensor edge_log_probability(Tape& tape, const Tensor& weighted_features, const Tensor& log_temperature,
                            std::span<const Edge> edges, DistanceMetric metric) {
  if (log_temperature.shape() != Shape{1, 1}) {
    throw ShapeError("edge_log_probability: log temperature must be [1x1], got " +
                     log_temperature.shape().to_string());
  }
  const Matrix& f = weighted_features.value();
  const std::size_t width = f.cols();
  const double scale = metric == DistanceMetric::hyperbolic ? poincare_scale(f) : 1.0;
  const double temperature = std::exp(log_temperature.value()[0]);

  Matrix out(edges.size(), 1);
  Matrix grad_src(edges.size(), width), grad_dst(edges.size(), width);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (edges[e].src >= f.rows() || edges[e].dst >= f.rows()) {
      throw ShapeError("edge_log_probability: edge endpoint outside " + f.shape().to_string());
    }
    sq_distance_with_grad(f.row(edges[e].src), f.row(edges[e].dst), metric, scale, grad_src.row(e),
                          grad_dst.row(e));
    const double d = distance(f.row(edges[e].src), f.row(edges[e].dst), metric, scale);
    out[e] = kernel(d, temperature);
  }

  Matrix saved = out;
  auto fn = weighted_features.shared_node();
  auto tn = log_temperature.shared_node();
  std::vector<Edge> edge_copy(edges.begin(), edges.end());
  const Tensor inputs[] = {weighted_features, log_temperature};
  return tape.custom(
      "edge_log_prob", std::move(out), inputs,
      [fn, tn, edge_copy = std::move(edge_copy), grad_src = std::move(grad_src), grad_dst = std::move(grad_dst),
       saved = std::move(saved), temperature, width](const Matrix& g) {
        if (tn->requires_grad) {
          // d/d(tau) of -e^tau d^2 is the log-probability itself.
          double total = 0.0;
          for (std::size_t e = 0; e < saved.size(); ++e) total += g[e] * saved[e];
          tn->grad[0] += total;
        }
        if (fn->requires_grad) {
          for (std::size_t e = 0; e < edge_copy.size(); ++e) {
            const double w = -temperature * g[e];
            auto gs = fn->grad.row(edge_copy[e].src);
            auto gd = fn->grad.row(edge_copy[e].dst);
            for (std::size_t c = 0; c < width; ++c) {
              gs[c] += w * grad_src(e, c);
              gd[c] += w * grad_dst(e, c);
            }
          }
        }
      });
}

Tensor row_log_normalizer(Tape& tape, const Tensor& weighted_features, const Tensor& log_temperature,
                          DistanceMetric metric) {
  if (log_temperature.shape() != Shape{1, 1}) {
    throw ShapeError("row_log_normalizer: log temperature must be [1x1], got " + log_temperature.shape().to_string());
  }
  const Matrix& f = weighted_features.value();
  const std::size_t n = f.rows();
  if (n < 2) throw ShapeError("row_log_normalizer: need at least 2 rows");
  const double scale = metric == DistanceMetric::hyperbolic ? poincare_scale(f) : 1.0;
  const double temperature = std::exp(log_temperature.value()[0]);

  // Row-wise softmax weights over off-diagonal logP, kept for backward.
  Matrix logp = edge_log_probabilities(pairwise_distance(f, metric), temperature);
  Matrix out(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) hi = std::max(hi, logp(i, j));
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) total += std::exp(logp(i, j) - hi);
    }
    out[i] = hi + std::log(total);
  }

  auto fn = weighted_features.shared_node();
  auto tn = log_temperature.shared_node();
  Matrix features = f;
  Matrix lse = out;
  const Tensor inputs[] = {weighted_features, log_temperature};
  return tape.custom(
      "row_log_normalizer", std::move(out), inputs,
      [fn, tn, features = std::move(features), logp = std::move(logp), lse = std::move(lse), metric, scale,
       temperature](const Matrix& g) {
        const std::size_t n = features.rows();
        const std::size_t width = features.cols();
        std::vector<double> gu(width), gv(width);
        double tau_total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (g[i] == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            const double w = g[i] * std::exp(logp(i, j) - lse[i]);
            tau_total += w * logp(i, j);
            if (!fn->requires_grad) continue;
            sq_distance_with_grad(features.row(i), features.row(j), metric, scale, gu, gv);
            auto gi = fn->grad.row(i);
            auto gj = fn->grad.row(j);
            for (std::size_t c = 0; c < width; ++c) {
              gi[c] += -temperature * w * gu[c];
              gj[c] += -temperature * w * gv[c];
            }
          }
        }
        if (tn->requires_grad) tn->grad[0] += tau_total;
      });
}

SampledGraph gumbel_topk_select(const Matrix& log_prob, std::size_t k, Matrix noise) {
  const std::size_t n = log_prob.rows();
  if (log_prob.cols() != n) throw ShapeError("gumbel_topk: log-probability matrix must be square");
  if (noise.shape() != log_prob.shape()) throw ShapeError("gumbel_topk: noise shape differs from log-probabilities");
  check_k(k, n, "gumbel_topk");

  SampledGraph graph;
  graph.nodes = n;
  graph.k = k;
  graph.edges.reserve(n * k);
  graph.log_prob.reserve(n * k);
  std::vector<std::size_t> candidates(n - 1);
  std::vector<double> score(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0, m = 0; j < n; ++j) {
      if (j == i) continue;
      candidates[m++] = j;
      score[j] = log_prob(i, j) + noise(i, j);
    }
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k), candidates.end(),
                      [&](std::size_t a, std::size_t b) { return score[a] > score[b] || (score[a] == score[b] && a < b); });
    for (std::size_t r = 0; r < k; ++r) {
      graph.edges.push_back({i, candidates[r]});
      graph.log_prob.push_back(log_prob(i, candidates[r]));
    }
  }
  graph.noise = std::move(noise);
  return graph;
}

SampledGraph gumbel_topk_sample(const Matrix& log_prob, std::size_t k, Rng& rng) {
  const std::size_t n = log_prob.rows();
  check_k(k, n, "gumbel_topk");
  Matrix noise(n, log_prob.cols());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < noise.cols(); ++j) {
      if (j != i) noise(i, j) = rng.gumbel();
    }
  }
  return gumbel_topk_select(log_prob, k, std::move(noise));
}

EdgeList knn_static_graph(const Matrix& features, std::size_t k, DistanceMetric metric) {
  const std::size_t n = features.rows();
  check_k(k, n, "knn_static_graph");
  const Matrix dist = pairwise_distance(features, metric);
  EdgeList edges;
  edges.reserve(n * k);
  std::vector<std::size_t> candidates(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0, m = 0; j < n; ++j) {
      if (j != i) candidates[m++] = j;
    }
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k), candidates.end(),
                      [&](std::size_t a, std::size_t b) {
                        return dist(i, a) < dist(i, b) || (dist(i, a) == dist(i, b) && a < b);
                      });
    for (std::size_t r = 0; r < k; ++r) edges.push_back({i, candidates[r]});
  }
  return edges;
}

EdgeList random_graph(std::size_t nodes, std::size_t k, Rng& rng) {
  check_k(k, nodes, "random_graph");
  EdgeList edges;
  edges.reserve(nodes * k);
  std::vector<std::size_t> chosen;
  for (std::size_t i = 0; i < nodes; ++i) {
    // Floyd's subset sampling over the n-1 non-self targets.
    chosen.clear();
    const std::size_t pool = nodes - 1;
    for (std::size_t j = pool - k; j < pool; ++j) {
      const auto t = static_cast<std::size_t>(rng.index(j + 1));
      chosen.push_back(std::find(chosen.begin(), chosen.end(), t) == chosen.end() ? t : j);
    }
    for (std::size_t t : chosen) edges.push_back({i, t >= i ? t + 1 : t});
  }
  return edges;
}

SparseMatrix symmetrize(std::span<const Edge> edges, std::size_t nodes) {
  std::vector<Edge> pairs;
  pairs.reserve(2 * edges.size() + nodes);
  for (const auto& e : edges) {
    if (e.src >= nodes || e.dst >= nodes) throw std::invalid_argument("symmetrize: edge endpoint out of range");
    if (e.src == e.dst) throw std::invalid_argument("symmetrize: self-edge in input");
    pairs.push_back({e.src, e.dst});
    pairs.push_back({e.dst, e.src});
  }
  for (std::size_t i = 0; i < nodes; ++i) pairs.push_back({i, i});
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());

  std::vector<double> degree(nodes, 0.0);
  for (const auto& p : pairs) degree[p.src] += 1.0;

  SparseMatrix adj;
  adj.rows = adj.cols = nodes;
  adj.row_offsets.assign(nodes + 1, 0);
  adj.col_indices.reserve(pairs.size());
  adj.values.reserve(pairs.size());
  for (const auto& p : pairs) {
    ++adj.row_offsets[p.src + 1];
    adj.col_indices.push_back(p.dst);
    adj.values.push_back(1.0 / std::sqrt(degree[p.src] * degree[p.dst]));
  }
  std::partial_sum(adj.row_offsets.begin(), adj.row_offsets.end(), adj.row_offsets.begin());
  return adj;
}

double homophily_score(std::span<const Edge> edges, std::span<const double> labels, HomophilyMode mode) {
  std::vector<Edge> undirected;
  undirected.reserve(edges.size());
  for (const auto& e : edges) {
    if (e.src >= labels.size() || e.dst >= labels.size()) {
      throw std::invalid_argument("homophily_score: edge endpoint beyond label count");
    }
    if (e.src == e.dst) continue;
    undirected.push_back({std::min(e.src, e.dst), std::max(e.src, e.dst)});
  }
  std::sort(undirected.begin(), undirected.end());
  undirected.erase(std::unique(undirected.begin(), undirected.end()), undirected.end());
  if (undirected.empty()) throw std::invalid_argument("homophily_score: empty edge set");

  double total = 0.0;
  for (const auto& e : undirected) {
    if (mode == HomophilyMode::regression) {
      total += std::abs(labels[e.src] - labels[e.dst]);
    } else {
      total += labels[e.src] == labels[e.dst] ? 1.0 : 0.0;
    }
  }
  return total / static_cast<double>(undirected.size());
}

std::string age_color(double age, double lo, double hi) {
  const double f = hi > lo ? std::clamp((age - lo) / (hi - lo), 0.0, 1.0) : 0.0;
  const int red = static_cast<int>(std::lround(255.0 * f));
  const int blue = 255 - red;
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x00%02x", red, blue);
  return buf;
}

std::string graph_to_dot(std::span<const Edge> edges, std::span<const double> labels) {
  const auto [lo, hi] = label_range(labels);
  std::ostringstream out;
  out << "digraph population {\n";
  out << "  node [shape=circle, style=filled];\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    char age[32];
    std::snprintf(age, sizeof age, "%.2f", labels[i]);
    out << "  " << i << " [label=\"" << i << "\", age=\"" << age << "\", fillcolor=\"" << age_color(labels[i], lo, hi)
        << "\"];\n";
  }
  for (const auto& e : edges) out << "  " << e.src << " -> " << e.dst << ";\n";
  out << "}\n";
  return out.str();
}

std::string graph_to_json(std::span<const Edge> edges, std::span<const double> labels,
                          std::optional<std::span<const double>> log_prob) {
  if (log_prob && log_prob->size() != edges.size()) {
    throw std::invalid_argument("graph_to_json: one log-probability per edge required");
  }
  nlohmann::json doc;
  doc["nodes"] = nlohmann::json::array();
  for (std::size_t i = 0; i < labels.size(); ++i) doc["nodes"].push_back({{"id", i}, {"age", labels[i]}});
  doc["edges"] = nlohmann::json::array();
  for (std::size_t e = 0; e < edges.size(); ++e) {
    nlohmann::json edge = {{"src", edges[e].src}, {"dst", edges[e].dst}};
    if (log_prob) edge["logp"] = (*log_prob)[e];
    doc["edges"].push_back(std::move(edge));
  }
  return doc.dump(1) + "\n";
}

void export_graph(const SampledGraph& graph, std::span<const double> labels, const std::string& path,
                  GraphFormat format) {
  write_file(path, format == GraphFormat::dot
                       ? graph_to_dot(graph.edges, labels)
                       : graph_to_json(graph.edges, labels, std::span<const double>(graph.log_prob)));
}

void export_graph(std::span<const Edge> edges, std::span<const double> labels, const std::string& path,
                  GraphFormat format) {
  write_file(path, format == GraphFormat::dot ? graph_to_dot(edges, labels) : graph_to_json(edges, labels));
}

ParsedGraph parse_graph_json(const std::string& text) {
  const auto doc = nlohmann::json::parse(text);
  ParsedGraph g;
  for (const auto& node : doc.at("nodes")) g.ages.push_back(node.at("age").get<double>());
  bool any_logp = false;
  std::vector<double> logp;
  for (const auto& edge : doc.at("edges")) {
    g.edges.push_back({edge.at("src").get<std::size_t>(), edge.at("dst").get<std::size_t>()});
    if (edge.contains("logp")) {
      any_logp = true;
      logp.push_back(edge.at("logp").get<double>());
    }
  }
  if (any_logp) g.log_prob = std::move(logp);
  return g;
}

}  // namespace popgraph
