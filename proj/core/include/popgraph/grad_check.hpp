#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "popgraph/tape.hpp"

namespace popgraph {

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  /// Lower bound on the relative-error denominator, multiplied by
  /// max(1, |loss|). Entries whose true gradient is ~0 are then compared
  /// against the round-off level of the central difference instead of
  /// against an absolute constant.
  double denominator_floor = 1e-6;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t parameter_index = 0;  // which tensor in the parameter list
  std::size_t element_index = 0;    // flat index inside that tensor
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t entries_checked = 0;
  bool non_differentiable = false;
  bool passed = false;
  std::string message;
};

/// Builds the scalar expression on a fresh tape. Must be deterministic.
using ExpressionBuilder = std::function<Tensor(Tape&)>;

/// Compares reverse-mode gradients of `build` against central finite
/// differences for every element of every tensor in `params`.
GradCheckReport grad_check(const ExpressionBuilder& build, std::span<Tensor> params,
                           const GradCheckOptions& options = {});

}  // namespace popgraph
