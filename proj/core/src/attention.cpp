#include "popgraph/attention.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace popgraph {
namespace {

Tensor uniform_parameter(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(-bound, bound);
  return Tensor::parameter(std::move(m));
}

}  // namespace

AttentionMlp AttentionMlp::init(std::size_t inputs, std::size_t hidden, Rng& rng) {
  if (inputs == 0) throw std::invalid_argument("AttentionMlp: zero input columns");
  if (hidden == 0) hidden = 2 * inputs;
  AttentionMlp mlp;
  mlp.w1 = uniform_parameter(inputs, hidden, inputs, rng);
  mlp.b1 = uniform_parameter(1, hidden, inputs, rng);
  mlp.w2 = uniform_parameter(hidden, inputs, hidden, rng);
  mlp.b2 = uniform_parameter(1, inputs, hidden, rng);
  return mlp;
}

Tensor attention_forward(Tape& tape, const Tensor& phenotypes, const AttentionMlp& mlp) {
  if (phenotypes.cols() != mlp.inputs()) {
    throw ShapeError("attention_forward: phenotype matrix has " + std::to_string(phenotypes.cols()) +
                     " columns, attention MLP expects " + std::to_string(mlp.inputs()));
  }
  Tensor hidden = tape.relu(tape.add_row(tape.matmul(phenotypes, mlp.w1), mlp.b1));
  return tape.sigmoid(tape.add_row(tape.matmul(hidden, mlp.w2), mlp.b2));
}

Tensor aggregate_attention(Tape& tape, const Tensor& raw_scores, ScaleGradient mode, AttentionScale* used) {
  Tensor means = tape.mean_rows(raw_scores);
  const auto values = means.value().values();
  const auto lo_it = std::min_element(values.begin(), values.end());
  const auto hi_it = std::max_element(values.begin(), values.end());
  const AttentionScale scale{*lo_it, *hi_it};
  if (used) *used = scale;
  const double range = scale.max - scale.min;
  if (range <= 0.0) return Tensor::constant(Matrix(1, means.cols(), 0.5));
  if (mode == ScaleGradient::constant) return tape.affine(means, scale.min, 1.0 / range);

  // a_c = (m_c - m_lo) / (m_hi - m_lo), differentiated through m_lo and m_hi
  // as well. First occurrences win on ties.
  const std::size_t lo = static_cast<std::size_t>(lo_it - values.begin());
  const std::size_t hi = static_cast<std::size_t>(hi_it - values.begin());
  Matrix out(1, values.size());
  for (std::size_t c = 0; c < values.size(); ++c) out[c] = (values[c] - scale.min) / range;
  Matrix saved = out;
  auto node = means.shared_node();
  const Tensor inputs[] = {means};
  return tape.custom("minmax", std::move(out), inputs, [node, saved = std::move(saved), lo, hi, range](const Matrix& g) {
    if (!node->requires_grad) return;
    double to_lo = 0.0, to_hi = 0.0;
    for (std::size_t c = 0; c < saved.size(); ++c) {
      node->grad[c] += g[c] / range;
      to_lo -= g[c] * (1.0 - saved[c]) / range;
      to_hi -= g[c] * saved[c] / range;
    }
    node->grad[lo] += to_lo;
    node->grad[hi] += to_hi;
  });
}

Tensor weight_phenotypes(Tape& tape, const Tensor& attention, const Tensor& phenotypes) {
  if (attention.rows() != 1 || attention.cols() != phenotypes.cols()) {
    throw ShapeError("weight_phenotypes: attention " + attention.shape().to_string() + " does not match phenotypes " +
                     phenotypes.shape().to_string());
  }
  return tape.mul_row(phenotypes, attention);
}

std::vector<RankedPhenotype> rank_phenotypes(const AttentionVector& attention) {
  std::vector<std::size_t> order(attention.weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return attention.weights[a] > attention.weights[b]; });
  std::vector<RankedPhenotype> ranked;
  ranked.reserve(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) {
    const std::size_t c = order[r];
    RankedPhenotype entry{r + 1, c, "col_" + std::to_string(c), ColumnKind::non_imaging, attention.weights[c]};
    if (c < attention.columns.size()) {
      entry.name = attention.columns[c].name;
      entry.kind = attention.columns[c].kind;
    }
    ranked.push_back(std::move(entry));
  }
  return ranked;
}

double precision_at_relevant(const AttentionVector& attention) {
  const auto relevant = static_cast<std::size_t>(std::count_if(
      attention.columns.begin(), attention.columns.end(),
      [](const PhenotypeInfo& c) { return c.relevance == Relevance::relevant; }));
  if (relevant == 0) throw std::invalid_argument("precision_at_relevant: no planted-relevant columns");
  const auto ranked = rank_phenotypes(attention);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < relevant && r < ranked.size(); ++r) {
    if (attention.columns[ranked[r].column].relevance == Relevance::relevant) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(relevant);
}

std::string attention_to_csv(const AttentionVector& attention) {
  std::ostringstream out;
  out << "rank,name,kind,weight\n";
  for (const auto& r : rank_phenotypes(attention)) {
    char w[40];
    std::snprintf(w, sizeof w, "%.17g", r.weight);
    out << r.rank << ',' << r.name << ',' << to_string(r.kind) << ',' << w << '\n';
  }
  return out.str();
}

std::string attention_to_json(const AttentionVector& attention) {
  nlohmann::json doc;
  doc["weights"] = attention.weights;
  doc["columns"] = nlohmann::json::array();
  for (std::size_t c = 0; c < attention.columns.size(); ++c) {
    const auto& col = attention.columns[c];
    nlohmann::json entry = {{"index", c}, {"name", col.name}, {"kind", to_string(col.kind)}};
    if (col.relevance != Relevance::unknown) entry["planted_relevant"] = col.relevance == Relevance::relevant;
    doc["columns"].push_back(std::move(entry));
  }
  doc["ranking"] = nlohmann::json::array();
  for (const auto& r : rank_phenotypes(attention)) {
    doc["ranking"].push_back({{"rank", r.rank}, {"column", r.column}, {"name", r.name}, {"weight", r.weight}});
  }
  return doc.dump(1) + "\n";
}

}  // namespace popgraph
