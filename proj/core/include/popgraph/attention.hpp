#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "popgraph/dataset.hpp"
#include "popgraph/rng.hpp"
#include "popgraph/tape.hpp"

namespace popgraph {

/// Per-subject phenotype scorer: sigmoid(relu(P W1 + b1) W2 + b2).
struct AttentionMlp {
  Tensor w1;  // P x H
  Tensor b1;  // 1 x H
  Tensor w2;  // H x P
  Tensor b2;  // 1 x P

  /// Uniform(+-1/sqrt(fan_in)) initialisation. hidden = 0 selects 2 * inputs.
  static AttentionMlp init(std::size_t inputs, std::size_t hidden, Rng& rng);

  std::size_t inputs() const { return w1.rows(); }
  std::size_t hidden() const { return w1.cols(); }
  std::vector<Tensor> parameters() const { return {w1, b1, w2, b2}; }
};

/// Raw per-subject scores in (0,1), N x (Q+S).
Tensor attention_forward(Tape& tape, const Tensor& phenotypes, const AttentionMlp& mlp);

/// Min and max of the column means used by the min-max rescaling.
struct AttentionScale {
  double min = 0.0;
  double max = 1.0;
};

/// How the min-max rescaling is differentiated.
enum class ScaleGradient {
  through_min_max,  // exact gradient almost everywhere
  constant,         // min and max treated as constants of the current iterate
};

/// Column means of `raw_scores`, min-max rescaled to [0, 1] as a 1 x P
/// tensor. If all means are equal every weight is 0.5. `used` receives the
/// min and max that were applied.
Tensor aggregate_attention(Tape& tape, const Tensor& raw_scores,
                           ScaleGradient mode = ScaleGradient::through_min_max, AttentionScale* used = nullptr);

/// Row-wise Hadamard product a (.) p_i.
Tensor weight_phenotypes(Tape& tape, const Tensor& attention, const Tensor& phenotypes);

/// Global attention weights with the column metadata they belong to.
struct AttentionVector {
  std::vector<double> weights;
  std::vector<PhenotypeInfo> columns;
};

struct RankedPhenotype {
  std::size_t rank = 0;  // 1-based
  std::size_t column = 0;
  std::string name;
  ColumnKind kind = ColumnKind::non_imaging;
  double weight = 0.0;
};

/// Descending by weight; equal weights keep column order.
std::vector<RankedPhenotype> rank_phenotypes(const AttentionVector& attention);

/// Fraction of the top-|relevant| ranked columns that carry a planted signal.
double precision_at_relevant(const AttentionVector& attention);

std::string attention_to_csv(const AttentionVector& attention);
std::string attention_to_json(const AttentionVector& attention);

}  // namespace popgraph
