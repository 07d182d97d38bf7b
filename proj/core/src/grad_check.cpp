#include "popgraph/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

namespace popgraph {

GradCheckReport grad_check(const ExpressionBuilder& build, std::span<Tensor> params,
                           const GradCheckOptions& options) {
  GradCheckReport report;

  for (auto& p : params) p.zero_grad();
  Tape tape;
  Tensor loss = build(tape);
  report.non_differentiable = tape.has_non_differentiable();
  const double loss_scale = std::max(1.0, std::abs(loss.item()));
  tape.backward(loss);

  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.requires_grad() ? p.grad() : Matrix(p.rows(), p.cols()));

  auto evaluate = [&]() {
    Tape t;
    return build(t).item();
  };

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Matrix& values = params[pi].mutable_value();
    for (std::size_t e = 0; e < values.size(); ++e) {
      const double original = values[e];
      values[e] = original + options.step;
      const double plus = evaluate();
      values[e] = original - options.step;
      const double minus = evaluate();
      values[e] = original;

      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[pi][e];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor * loss_scale});
      const double rel = std::abs(a - numeric) / denom;
      ++report.entries_checked;
      if (rel > report.max_relative_error || report.entries_checked == 1) {
        report.max_relative_error = rel;
        report.parameter_index = pi;
        report.element_index = e;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }

  std::ostringstream msg;
  if (report.non_differentiable) {
    msg << "expression contains a non-differentiable primitive; gradient undefined at this point";
  } else {
    msg << "max relative error " << report.max_relative_error << " at parameter " << report.parameter_index
        << " element " << report.element_index << " (analytic " << report.analytic << ", numeric "
        << report.numeric << ")";
  }
  report.passed = !report.non_differentiable && report.max_relative_error <= options.tolerance;
  report.message = msg.str();
  return report;
}

}  // namespace popgraph
