#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "popgraph/dataset.hpp"
#include "popgraph/rng.hpp"
#include "popgraph/tensor.hpp"
#include "popgraph/trainer.hpp"

namespace testutil {

inline popgraph::Matrix random_matrix(std::size_t rows, std::size_t cols, popgraph::Rng& rng, double lo = -1.0,
                                      double hi = 1.0) {
  popgraph::Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

inline double max_abs_diff(const popgraph::Matrix& a, const popgraph::Matrix& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// Small synthetic population, normalized and ready for training.
inline popgraph::PopulationDataset small_dataset(std::uint64_t seed = 1, std::size_t subjects = 80) {
  popgraph::SyntheticConfig sc;
  sc.subjects = subjects;
  sc.non_imaging = 4;
  sc.imaging = 4;
  sc.features = 6;
  sc.relevant_non_imaging = 2;
  sc.relevant_imaging = 2;
  auto ds = popgraph::generate_synthetic(sc, seed);
  popgraph::normalize_minmax(ds);
  return ds;
}

// Cheap training configuration for behavioural tests.
inline popgraph::TrainConfig small_config() {
  popgraph::TrainConfig cfg;
  cfg.gcn = {16, 8};
  cfg.k = 3;
  cfg.epochs = 10;
  cfg.patience = 0;
  cfg.inference_samples = 2;
  return cfg;
}

}  // namespace testutil
