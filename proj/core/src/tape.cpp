#include "popgraph/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace popgraph {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

MapMat map(Matrix& m) { return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())}; }
ConstMapMat map(const Matrix& m) {
  return {m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}

using NodePtr = std::shared_ptr<detail::TensorNode>;

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().to_string() + " vs " +
                     b.shape().to_string());
  }
}

void require_defined(const char* op, const Tensor& a) {
  if (!a.defined()) throw std::invalid_argument(std::string(op) + ": undefined operand");
}

template <typename F>
Matrix map_values(const Matrix& in, F f) {
  Matrix out(in.rows(), in.cols());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return out;
}

// Adds `f(i)` into node->grad[i] for every element when the node tracks grads.
template <typename F>
void accumulate(const NodePtr& node, F f) {
  if (!node->requires_grad) return;
  auto& g = node->grad;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += f(i);
}

}  // namespace

void Tape::ensure_recording(const char* name) const {
  if (consumed_) {
    throw std::logic_error(std::string(name) + ": tape already consumed by backward(); call reset()");
  }
}

Tensor Tape::record(const char* name, Matrix value, bool needs_grad, BackwardFn backward,
                    bool differentiable) {
  ensure_recording(name);
  if (!value.all_finite()) {
    throw NumericError(std::string("numeric overflow in ") + name + ": non-finite result of shape " +
                       value.shape().to_string());
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->value = std::move(value);
  if (needs_grad) {
    node->grad = Matrix(node->value.rows(), node->value.cols());
    node->requires_grad = true;
  }
  if (!differentiable) non_differentiable_ = true;
  ops_.push_back({name, node, needs_grad ? std::move(backward) : BackwardFn{}});
  return Tensor(node);
}

Tensor Tape::custom(const char* name, Matrix value, std::span<const Tensor> inputs,
                    BackwardFn backward, bool differentiable) {
  bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  return record(name, std::move(value), needs && differentiable, std::move(backward), differentiable);
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  require_defined("matmul", a);
  require_defined("matmul", b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + a.shape().to_string() + " x " +
                     b.shape().to_string());
  }
  Matrix out(a.rows(), b.cols());
  map(out).noalias() = map(a.value()) * map(b.value());
  NodePtr an = a.shared_node(), bn = b.shared_node();
  return record("matmul", std::move(out), a.requires_grad() || b.requires_grad(),
                [an, bn](const Matrix& g) {
                  if (an->requires_grad) map(an->grad).noalias() += map(g) * map(bn->value).transpose();
                  if (bn->requires_grad) map(bn->grad).noalias() += map(an->value).transpose() * map(g);
                });
}

Tensor Tape::spmm(const SparseMatrix& a, const Tensor& b) {
  require_defined("spmm", b);
  if (a.cols != b.rows()) {
    throw ShapeError("spmm: inner dimensions differ " + Shape{a.rows, a.cols}.to_string() + " x " +
                     b.shape().to_string());
  }
  const std::size_t width = b.cols();
  Matrix out(a.rows, width);
  const Matrix& bv = b.value();
  for (std::size_t r = 0; r < a.rows; ++r) {
    auto dst = out.row(r);
    for (std::size_t e = a.row_offsets[r]; e < a.row_offsets[r + 1]; ++e) {
      const double w = a.values[e];
      auto src = bv.row(a.col_indices[e]);
      for (std::size_t c = 0; c < width; ++c) dst[c] += w * src[c];
    }
  }
  NodePtr bn = b.shared_node();
  // The adjacency is copied so the closure does not dangle if the caller's graph goes away.
  return record("spmm", std::move(out), b.requires_grad(), [bn, a, width](const Matrix& g) {
    auto& bg = bn->grad;
    for (std::size_t r = 0; r < a.rows; ++r) {
      auto src = g.row(r);
      for (std::size_t e = a.row_offsets[r]; e < a.row_offsets[r + 1]; ++e) {
        const double w = a.values[e];
        auto dst = bg.row(a.col_indices[e]);
        for (std::size_t c = 0; c < width; ++c) dst[c] += w * src[c];
      }
    }
  });
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  Matrix out(a.rows(), a.cols());
  map(out) = map(a.value()) + map(b.value());
  NodePtr an = a.shared_node(), bn = b.shared_node();
  return record("add", std::move(out), a.requires_grad() || b.requires_grad(), [an, bn](const Matrix& g) {
    accumulate(an, [&](std::size_t i) { return g[i]; });
    accumulate(bn, [&](std::size_t i) { return g[i]; });
  });
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  Matrix out(a.rows(), a.cols());
  map(out) = map(a.value()) - map(b.value());
  NodePtr an = a.shared_node(), bn = b.shared_node();
  return record("sub", std::move(out), a.requires_grad() || b.requires_grad(), [an, bn](const Matrix& g) {
    accumulate(an, [&](std::size_t i) { return g[i]; });
    accumulate(bn, [&](std::size_t i) { return -g[i]; });
  });
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  Matrix out(a.rows(), a.cols());
  map(out) = map(a.value()).cwiseProduct(map(b.value()));
  NodePtr an = a.shared_node(), bn = b.shared_node();
  return record("mul", std::move(out), a.requires_grad() || b.requires_grad(), [an, bn](const Matrix& g) {
    accumulate(an, [&](std::size_t i) { return g[i] * bn->value[i]; });
    accumulate(bn, [&](std::size_t i) { return g[i] * an->value[i]; });
  });
}

Tensor Tape::scale(const Tensor& a, double factor) {
  require_defined("scale", a);
  NodePtr an = a.shared_node();
  return record("scale", map_values(a.value(), [factor](double v) { return v * factor; }), a.requires_grad(),
                [an, factor](const Matrix& g) { accumulate(an, [&](std::size_t i) { return g[i] * factor; }); });
}

Tensor Tape::affine(const Tensor& a, double shift, double factor) {
  require_defined("affine", a);
  NodePtr an = a.shared_node();
  return record("affine", map_values(a.value(), [=](double v) { return (v - shift) * factor; }),
                a.requires_grad(),
                [an, factor](const Matrix& g) { accumulate(an, [&](std::size_t i) { return g[i] * factor; }); });
}

Tensor Tape::mul_scalar(const Tensor& a, const Tensor& s) {
  require_defined("mul_scalar", a);
  if (s.shape() != Shape{1, 1}) {
    throw ShapeError("mul_scalar: expected [1x1] scalar operand, got " + s.shape().to_string() +
                     " with " + a.shape().to_string());
  }
  const double sv = s.value()[0];
  NodePtr an = a.shared_node(), sn = s.shared_node();
  return record("mul_scalar", map_values(a.value(), [sv](double v) { return v * sv; }),
                a.requires_grad() || s.requires_grad(), [an, sn](const Matrix& g) {
                  const double sv = sn->value[0];
                  accumulate(an, [&](std::size_t i) { return g[i] * sv; });
                  if (sn->requires_grad) {
                    double total = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i) total += g[i] * an->value[i];
                    sn->grad[0] += total;
                  }
                });
}

Tensor Tape::add_row(const Tensor& a, const Tensor& row) {
  require_defined("add_row", a);
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: expected row [1x" + std::to_string(a.cols()) + "], got " +
                     row.shape().to_string() + " with " + a.shape().to_string());
  }
  Matrix out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto dst = out.row(r);
    for (std::size_t c = 0; c < out.cols(); ++c) dst[c] += row.value()[c];
  }
  NodePtr an = a.shared_node(), rn = row.shared_node();
  return record("add_row", std::move(out), a.requires_grad() || row.requires_grad(), [an, rn](const Matrix& g) {
    accumulate(an, [&](std::size_t i) { return g[i]; });
    if (rn->requires_grad) {
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < g.cols(); ++c) rn->grad[c] += g(r, c);
      }
    }
  });
}

Tensor Tape::mul_row(const Tensor& a, const Tensor& row) {
  require_defined("mul_row", a);
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("mul_row: expected row [1x" + std::to_string(a.cols()) + "], got " +
                     row.shape().to_string() + " with " + a.shape().to_string());
  }
  Matrix out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto dst = out.row(r);
    for (std::size_t c = 0; c < out.cols(); ++c) dst[c] *= row.value()[c];
  }
  NodePtr an = a.shared_node(), rn = row.shared_node();
  return record("mul_row", std::move(out), a.requires_grad() || row.requires_grad(), [an, rn](const Matrix& g) {
    const std::size_t cols = g.cols();
    if (an->requires_grad) {
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) an->grad(r, c) += g(r, c) * rn->value[c];
      }
    }
    if (rn->requires_grad) {
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t c = 0; c < cols; ++c) rn->grad[c] += g(r, c) * an->value(r, c);
      }
    }
  });
}

Tensor Tape::concat_cols(const Tensor& a, const Tensor& b) {
  require_defined("concat_cols", a);
  require_defined("concat_cols", b);
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols: row counts differ " + a.shape().to_string() + " vs " +
                     b.shape().to_string());
  }
  const std::size_t ac = a.cols(), bc = b.cols();
  Matrix out(a.rows(), ac + bc);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::copy_n(a.value().row(r).data(), ac, out.row(r).data());
    std::copy_n(b.value().row(r).data(), bc, out.row(r).data() + ac);
  }
  NodePtr an = a.shared_node(), bn = b.shared_node();
  return record("concat", std::move(out), a.requires_grad() || b.requires_grad(), [an, bn, ac, bc](const Matrix& g) {
    for (std::size_t r = 0; r < g.rows(); ++r) {
      if (an->requires_grad) {
        for (std::size_t c = 0; c < ac; ++c) an->grad(r, c) += g(r, c);
      }
      if (bn->requires_grad) {
        for (std::size_t c = 0; c < bc; ++c) bn->grad(r, c) += g(r, ac + c);
      }
    }
  });
}

Tensor Tape::gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_defined("gather_rows", a);
  const std::size_t cols = a.cols();
  Matrix out(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= a.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(rows[i]) + " out of range for " +
                       a.shape().to_string());
    }
    std::copy_n(a.value().row(rows[i]).data(), cols, out.row(i).data());
  }
  NodePtr an = a.shared_node();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return record("gather_rows", std::move(out), a.requires_grad(), [an, idx = std::move(idx)](const Matrix& g) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto dst = an->grad.row(idx[i]);
      auto src = g.row(i);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

Tensor Tape::masked_select(const Tensor& a, const std::vector<bool>& mask) {
  require_defined("masked_select", a);
  if (mask.size() != a.rows()) {
    throw ShapeError("masked_select: mask of length " + std::to_string(mask.size()) + " for " +
                     a.shape().to_string());
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) rows.push_back(i);
  }
  return gather_rows(a, rows);
}

Tensor Tape::pick(const Tensor& a, std::span<const std::size_t> cols) {
  require_defined("pick", a);
  if (cols.size() != a.rows()) {
    throw ShapeError("pick: " + std::to_string(cols.size()) + " indices for " + a.shape().to_string());
  }
  Matrix out(a.rows(), 1);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    if (cols[r] >= a.cols()) {
      throw ShapeError("pick: column " + std::to_string(cols[r]) + " out of range for " + a.shape().to_string());
    }
    out[r] = a.value()(r, cols[r]);
  }
  NodePtr an = a.shared_node();
  std::vector<std::size_t> idx(cols.begin(), cols.end());
  return record("pick", std::move(out), a.requires_grad(), [an, idx = std::move(idx)](const Matrix& g) {
    for (std::size_t r = 0; r < idx.size(); ++r) an->grad(r, idx[r]) += g[r];
  });
}

Tensor Tape::relu(const Tensor& a) {
  require_defined("relu", a);
  NodePtr an = a.shared_node();
  return record("relu", map_values(a.value(), [](double v) { return v > 0.0 ? v : 0.0; }), a.requires_grad(),
                [an](const Matrix& g) {
                  accumulate(an, [&](std::size_t i) { return an->value[i] > 0.0 ? g[i] : 0.0; });
                });
}

Tensor Tape::sigmoid(const Tensor& a) {
  require_defined("sigmoid", a);
  auto out = map_values(a.value(), [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  Matrix saved = out;
  NodePtr an = a.shared_node();
  return record("sigmoid", std::move(out), a.requires_grad(), [an, s = std::move(saved)](const Matrix& g) {
    accumulate(an, [&](std::size_t i) { return g[i] * s[i] * (1.0 - s[i]); });
  });
}

Tensor Tape::log(const Tensor& a) {
  require_defined("log", a);
  NodePtr an = a.shared_node();
  return record("log", map_values(a.value(), [](double v) { return std::log(v); }), a.requires_grad(),
                [an](const Matrix& g) { accumulate(an, [&](std::size_t i) { return g[i] / an->value[i]; }); });
}

Tensor Tape::exp(const Tensor& a) {
  require_defined("exp", a);
  auto out = map_values(a.value(), [](double v) { return std::exp(v); });
  Matrix saved = out;
  NodePtr an = a.shared_node();
  return record("exp", std::move(out), a.requires_grad(), [an, e = std::move(saved)](const Matrix& g) {
    accumulate(an, [&](std::size_t i) { return g[i] * e[i]; });
  });
}

Tensor Tape::square(const Tensor& a) {
  require_defined("square", a);
  NodePtr an = a.shared_node();
  return record("square", map_values(a.value(), [](double v) { return v * v; }), a.requires_grad(),
                [an](const Matrix& g) { accumulate(an, [&](std::size_t i) { return 2.0 * an->value[i] * g[i]; }); });
}

Tensor Tape::huber(const Tensor& a, double delta) {
  require_defined("huber", a);
  if (!(delta > 0.0)) throw std::invalid_argument("huber: delta must be positive");
  NodePtr an = a.shared_node();
  auto f = [delta](double e) {
    const double ae = std::abs(e);
    return ae <= delta ? 0.5 * e * e : delta * (ae - 0.5 * delta);
  };
  return record("huber", map_values(a.value(), f), a.requires_grad(), [an, delta](const Matrix& g) {
    accumulate(an, [&](std::size_t i) {
      const double e = an->value[i];
      return g[i] * std::clamp(e, -delta, delta);
    });
  });
}

Tensor Tape::log_softmax_rows(const Tensor& a) {
  require_defined("log_softmax_rows", a);
  const Matrix& v = a.value();
  Matrix out(v.rows(), v.cols());
  for (std::size_t r = 0; r < v.rows(); ++r) {
    auto row = v.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double x : row) z += std::exp(x - mx);
    const double lz = mx + std::log(z);
    for (std::size_t c = 0; c < v.cols(); ++c) out(r, c) = row[c] - lz;
  }
  Matrix saved = out;
  NodePtr an = a.shared_node();
  return record("log_softmax", std::move(out), a.requires_grad(), [an, ls = std::move(saved)](const Matrix& g) {
    for (std::size_t r = 0; r < g.rows(); ++r) {
      double gsum = 0.0;
      for (std::size_t c = 0; c < g.cols(); ++c) gsum += g(r, c);
      for (std::size_t c = 0; c < g.cols(); ++c) an->grad(r, c) += g(r, c) - std::exp(ls(r, c)) * gsum;
    }
  });
}

Tensor Tape::sum(const Tensor& a) {
  require_defined("sum", a);
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  NodePtr an = a.shared_node();
  return record("sum", Matrix(1, 1, total), a.requires_grad(),
                [an](const Matrix& g) { accumulate(an, [&](std::size_t) { return g[0]; }); });
}

Tensor Tape::mean(const Tensor& a) {
  require_defined("mean", a);
  if (a.value().size() == 0) throw ShapeError("mean: empty tensor " + a.shape().to_string());
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  const double n = static_cast<double>(a.value().size());
  NodePtr an = a.shared_node();
  return record("mean", Matrix(1, 1, total / n), a.requires_grad(),
                [an, n](const Matrix& g) { accumulate(an, [&](std::size_t) { return g[0] / n; }); });
}

Tensor Tape::mean_rows(const Tensor& a) {
  require_defined("mean_rows", a);
  if (a.rows() == 0) throw ShapeError("mean_rows: no rows in " + a.shape().to_string());
  const Matrix& v = a.value();
  Matrix out(1, v.cols());
  for (std::size_t r = 0; r < v.rows(); ++r) {
    for (std::size_t c = 0; c < v.cols(); ++c) out[c] += v(r, c);
  }
  const double n = static_cast<double>(v.rows());
  for (std::size_t c = 0; c < v.cols(); ++c) out[c] /= n;
  NodePtr an = a.shared_node();
  return record("mean_rows", std::move(out), a.requires_grad(), [an, n](const Matrix& g) {
    for (std::size_t r = 0; r < an->grad.rows(); ++r) {
      for (std::size_t c = 0; c < an->grad.cols(); ++c) an->grad(r, c) += g[c] / n;
    }
  });
}

Tensor Tape::argmax_rows(const Tensor& a) {
  require_defined("argmax_rows", a);
  const Matrix& v = a.value();
  Matrix out(v.rows(), v.cols());
  for (std::size_t r = 0; r < v.rows(); ++r) {
    auto row = v.row(r);
    out(r, static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin())) = 1.0;
  }
  return record("argmax", std::move(out), false, {}, false);
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::logic_error("backward: tape already consumed; run a new forward pass first");
  require_defined("backward", loss);
  if (loss.shape() != Shape{1, 1}) {
    throw ShapeError("backward: loss must be a scalar [1x1], got " + loss.shape().to_string());
  }
  consumed_ = true;
  trace_.clear();
  if (!loss.requires_grad()) {
    ops_.clear();
    return;
  }
  loss.node()->grad[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    trace_.emplace_back(it->name);
    if (it->backward && it->output->requires_grad) it->backward(it->output->grad);
  }
  ops_.clear();
}

void Tape::reset() {
  ops_.clear();
  consumed_ = false;
  non_differentiable_ = false;
}

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  names.reserve(ops_.size());
  for (const auto& op : ops_) names.emplace_back(op.name);
  return names;
}

}  // namespace popgraph
