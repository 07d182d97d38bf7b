#include "popgraph/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace popgraph {

void AdamW::step(std::span<Tensor> params) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.rows(), p.cols());
      v_.emplace_back(p.rows(), p.cols());
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("AdamW: parameter list changed between steps");

  ++step_;
  const double lr = hyper_.learning_rate;
  const double correction1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(step_));
  const double correction2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(step_));
  const double decay = 1.0 - lr * hyper_.weight_decay;

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    if (!p.requires_grad()) continue;
    if (p.shape() != m_[pi].shape()) throw ShapeError("AdamW: parameter " + std::to_string(pi) + " changed shape");
    auto values = p.mutable_value().values();
    const auto grads = p.grad().values();
    auto m = m_[pi].values();
    auto v = v_[pi].values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grads[i];
      m[i] = hyper_.beta1 * m[i] + (1.0 - hyper_.beta1) * g;
      v[i] = hyper_.beta2 * v[i] + (1.0 - hyper_.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      values[i] = values[i] * decay - lr * m_hat / (std::sqrt(v_hat) + hyper_.epsilon);
    }
  }
}

}  // namespace popgraph
