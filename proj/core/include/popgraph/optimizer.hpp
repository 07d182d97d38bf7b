#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "popgraph/tensor.hpp"

namespace popgraph {

struct AdamWHyper {
  double learning_rate = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay:
///   p <- p * (1 - lr * wd)
///   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
class AdamW {
 public:
  explicit AdamW(AdamWHyper hyper = {}) : hyper_(hyper) {}

  /// Updates every tensor in `params` from its accumulated gradient.
  void step(std::span<Tensor> params);

  std::size_t steps() const { return step_; }
  const AdamWHyper& hyper() const { return hyper_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }

 private:
  AdamWHyper hyper_;
  std::size_t step_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

}  // namespace popgraph
