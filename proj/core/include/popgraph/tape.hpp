#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "popgraph/tensor.hpp"

namespace popgraph {

/// Records primitive operations during a forward pass and replays them in
/// reverse to accumulate gradients into every requires-grad operand.
///
/// A tape is single-use: after backward() it is consumed and must be reset()
/// before recording again. Broadcasting is limited to explicit primitives
/// (mul_scalar, add_row, mul_row); everything else demands equal shapes.
class Tape {
 public:
  using BackwardFn = std::function<void(const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Linear algebra.
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor spmm(const SparseMatrix& a, const Tensor& b);

  // Elementwise, equal shapes.
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);

  // Scalar and row broadcasts.
  Tensor scale(const Tensor& a, double factor);
  Tensor affine(const Tensor& a, double shift, double factor);  // (a - shift) * factor
  Tensor mul_scalar(const Tensor& a, const Tensor& s);          // s is 1x1
  Tensor add_row(const Tensor& a, const Tensor& row);           // row is 1 x cols
  Tensor mul_row(const Tensor& a, const Tensor& row);           // row is 1 x cols

  // Structural.
  Tensor concat_cols(const Tensor& a, const Tensor& b);
  Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
  Tensor masked_select(const Tensor& a, const std::vector<bool>& mask);
  Tensor pick(const Tensor& a, std::span<const std::size_t> cols);  // one per row -> N x 1

  // Nonlinearities.
  Tensor relu(const Tensor& a);
  Tensor sigmoid(const Tensor& a);
  Tensor log(const Tensor& a);
  Tensor exp(const Tensor& a);
  Tensor square(const Tensor& a);
  Tensor huber(const Tensor& a, double delta);
  Tensor log_softmax_rows(const Tensor& a);

  // Reductions.
  Tensor sum(const Tensor& a);
  Tensor mean(const Tensor& a);
  Tensor mean_rows(const Tensor& a);  // column means, N x C -> 1 x C

  /// One-hot argmax per row. Has no derivative; recorded so gradient checks
  /// can flag expressions that depend on it.
  Tensor argmax_rows(const Tensor& a);

  /// Extension point for fused primitives. `backward` receives the output
  /// gradient and must accumulate into the inputs it captured.
  Tensor custom(const char* name, Matrix value, std::span<const Tensor> inputs,
                BackwardFn backward, bool differentiable = true);

  void backward(const Tensor& loss);
  void reset();

  std::size_t size() const { return ops_.size(); }
  bool consumed() const { return consumed_; }
  bool has_non_differentiable() const { return non_differentiable_; }
  std::vector<std::string> op_names() const;
  /// Names of the operations visited by the most recent backward(), in visit order.
  const std::vector<std::string>& last_backward_trace() const { return trace_; }

 private:
  struct Op {
    const char* name;
    std::shared_ptr<detail::TensorNode> output;
    BackwardFn backward;
  };

  Tensor record(const char* name, Matrix value, bool needs_grad, BackwardFn backward,
                bool differentiable = true);
  void ensure_recording(const char* name) const;

  std::vector<Op> ops_;
  std::vector<std::string> trace_;
  bool consumed_ = false;
  bool non_differentiable_ = false;
};

}  // namespace popgraph
