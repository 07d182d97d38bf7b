#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "popgraph/grad_check.hpp"
#include "popgraph/tape.hpp"

using namespace popgraph;
using testutil::random_matrix;

TEST_SUITE("numerics") {
  TEST_CASE("matmul of ones gives row sums") {
    Tape tape;
    Tensor a = Tensor::constant(Matrix(2, 3, 1.0));
    Tensor b = Tensor::constant(Matrix(3, 1, 1.0));
    Tensor c = tape.matmul(a, b);
    CHECK(c.shape() == Shape{2, 1});
    CHECK(c.value()[0] == 3.0);
    CHECK(c.value()[1] == 3.0);
  }

  TEST_CASE("relu and sigmoid values") {
    Tape tape;
    Tensor x = Tensor::constant(Matrix(1, 3, {-2.0, 0.0, 5.0}));
    Tensor r = tape.relu(x);
    CHECK(r.value()[0] == 0.0);
    CHECK(r.value()[1] == 0.0);
    CHECK(r.value()[2] == 5.0);
    CHECK(tape.sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  }

  TEST_CASE("shape mismatch names the primitive and both shapes") {
    Tape tape;
    Tensor a = Tensor::constant(Matrix(2, 3));
    Tensor b = Tensor::constant(Matrix(2, 3));
    try {
      tape.matmul(a, b);
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("matmul") != std::string::npos);
      CHECK(msg.find("[2x3]") != std::string::npos);
    }
    CHECK_THROWS_AS(tape.add(a, Tensor::constant(Matrix(3, 2))), ShapeError);
  }

  TEST_CASE("non-finite results raise NumericError") {
    Tape tape;
    CHECK_THROWS_AS(tape.log(Tensor::constant(Matrix(1, 1, 0.0))), NumericError);
    CHECK_THROWS_AS(tape.exp(Tensor::constant(Matrix(1, 1, 1000.0))), NumericError);
    CHECK_THROWS_AS(Tensor::constant(Matrix(1, 1, std::nan(""))), NumericError);
  }

  TEST_CASE("x squared at 3 has gradient 6") {
    Tensor x = Tensor::parameter(Matrix(1, 1, 3.0));
    Tape tape;
    tape.backward(tape.square(x));
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-15));
  }

  TEST_CASE("mean of four elements spreads 0.25") {
    Tensor x = Tensor::parameter(Matrix(1, 4, {1.0, -2.0, 3.0, 7.0}));
    Tape tape;
    tape.backward(tape.mean(x));
    for (double g : x.grad().values()) CHECK(g == 0.25);
  }

  TEST_CASE("backward contract errors") {
    Tensor x = Tensor::parameter(Matrix(2, 1, 1.0));
    Tape tape;
    Tensor y = tape.scale(x, 2.0);
    CHECK_THROWS_AS(tape.backward(y), ShapeError);
    Tensor s = tape.sum(y);
    tape.backward(s);
    CHECK_THROWS_AS(tape.backward(s), std::logic_error);
    CHECK_THROWS_AS(tape.relu(x), std::logic_error);
    tape.reset();
    CHECK_NOTHROW(tape.relu(x));
  }

  TEST_CASE("backward visits ops in reverse forward order") {
    Tensor x = Tensor::parameter(Matrix(1, 2, {0.3, -0.4}));
    Tape tape;
    Tensor a = tape.sigmoid(x);
    Tensor b = tape.square(a);
    Tensor c = tape.sum(b);
    const auto forward = tape.op_names();
    tape.backward(c);
    std::vector<std::string> reversed(forward.rbegin(), forward.rend());
    CHECK(tape.last_backward_trace() == reversed);
  }

  TEST_CASE("gradient accumulation is additive") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor x = Tensor::parameter(random_matrix(3, 2, rng));
      auto grad_of = [&](const std::function<Tensor(Tape&)>& f) {
        x.zero_grad();
        Tape t;
        t.backward(f(t));
        return x.grad();
      };
      auto g = [&](Tape& t) { return t.sum(t.sigmoid(x)); };
      auto h = [&](Tape& t) { return t.sum(t.square(x)); };
      const Matrix gg = grad_of(g), gh = grad_of(h);
      const Matrix gf = grad_of([&](Tape& t) { return t.add(g(t), h(t)); });
      for (std::size_t i = 0; i < gf.size(); ++i) CHECK(gf[i] == gg[i] + gh[i]);
    }
  }

  TEST_CASE("identical inputs give bit-identical values and gradients") {
    Rng rng(5);
    const Matrix w0 = random_matrix(4, 3, rng), x0 = random_matrix(5, 4, rng);
    auto run = [&]() {
      Tensor w = Tensor::parameter(w0);
      Tape t;
      Tensor loss = t.mean(t.sigmoid(t.matmul(Tensor::constant(x0), w)));
      const double v = loss.item();
      t.backward(loss);
      return std::make_pair(v, w.grad());
    };
    const auto a = run(), b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
  }

  // Each primitive, randomized shapes and values, against central differences.
  TEST_CASE("every primitive matches finite differences on 100 random instances") {
    Rng rng(2024);
    const GradCheckOptions opts{.tolerance = 1e-4, .step = 1e-5};
    using Builder = std::function<Tensor(Tape&, Tensor&, Tensor&, Rng&)>;
    struct Case {
      const char* name;
      bool same_shape;  // second operand shares the first's shape
      Builder f;
    };
    const std::vector<Case> cases = {
        {"matmul", false, [](Tape& t, Tensor& a, Tensor& b, Rng&) { return t.sum(t.matmul(a, b)); }},
        {"add", true, [](Tape& t, Tensor& a, Tensor& b, Rng&) { return t.sum(t.square(t.add(a, b))); }},
        {"sub", true, [](Tape& t, Tensor& a, Tensor& b, Rng&) { return t.sum(t.square(t.sub(a, b))); }},
        {"mul", true, [](Tape& t, Tensor& a, Tensor& b, Rng&) { return t.sum(t.mul(a, b)); }},
        {"scale", true, [](Tape& t, Tensor& a, Tensor&, Rng&) { return t.sum(t.square(t.scale(a, -1.7))); }},
        {"affine", true, [](Tape& t, Tensor& a, Tensor&, Rng&) { return t.sum(t.square(t.affine(a, 0.3, 2.5))); }},
        {"relu", true, [](Tape& t, Tensor& a, Tensor&, Rng&) { return t.sum(t.square(t.relu(a))); }},
        {"sigmoid", true, [](Tape& t, Tensor& a, Tensor&, Rng&) { return t.sum(t.sigmoid(a)); }},
        {"exp", true, [](Tape& t, Tensor& a, Tensor&, Rng&) { return t.sum(t.exp(a)); }},
        {"log", true, [](Tape& t, Tensor& a, Tensor&, Rng&) { return t.sum(t.log(t.exp(a))); }},
        {"huber", true, [](Tape& t, Tensor& a, Tensor&, Rng&) { return t.sum(t.huber(t.scale(a, 3.0), 1.0)); }},
        {"log_softmax", true,
         [](Tape& t, Tensor& a, Tensor& b, Rng&) { return t.sum(t.mul(t.log_softmax_rows(a), b)); }},
        {"mean_rows", true, [](Tape& t, Tensor& a, Tensor&, Rng&) { return t.sum(t.square(t.mean_rows(a))); }},
        {"mean", true, [](Tape& t, Tensor& a, Tensor&, Rng&) { return t.square(t.mean(a)); }},
        {"concat", true,
         [](Tape& t, Tensor& a, Tensor& b, Rng&) { return t.sum(t.square(t.concat_cols(a, b))); }},
        {"gather_rows", true,
         [](Tape& t, Tensor& a, Tensor&, Rng&) {
           std::vector<std::size_t> rows{0, a.rows() - 1, 0};
           return t.sum(t.square(t.gather_rows(a, rows)));
         }},
        {"masked_select", true,
         [](Tape& t, Tensor& a, Tensor&, Rng&) {
           std::vector<bool> mask(a.rows(), false);
           mask[0] = true;
           return t.sum(t.square(t.masked_select(a, mask)));
         }},
        {"pick", true,
         [](Tape& t, Tensor& a, Tensor&, Rng&) {
           std::vector<std::size_t> cols(a.rows(), a.cols() - 1);
           return t.sum(t.square(t.pick(a, cols)));
         }},
    };
    int instances = 0;
    for (int trial = 0; trial < 100; ++trial) {
      for (const auto& c : cases) {
        const std::size_t r = 1 + rng.index(4), k = 1 + rng.index(4), m = 1 + rng.index(3);
        Tensor a = Tensor::parameter(random_matrix(r, k, rng));
        Tensor b = Tensor::parameter(c.same_shape ? random_matrix(r, k, rng) : random_matrix(k, m, rng));
        std::vector<Tensor> params{a, b};
        const auto report = grad_check([&](Tape& t) { return c.f(t, a, b, rng); }, params, opts);
        INFO(c.name << ": " << report.message);
        CHECK(report.passed);
        ++instances;
      }
    }
    CHECK(instances >= 100);
  }

  TEST_CASE("row broadcasts and scalar multiply match finite differences") {
    Rng rng(77);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t r = 1 + rng.index(4), k = 1 + rng.index(4);
      Tensor a = Tensor::parameter(random_matrix(r, k, rng));
      Tensor row = Tensor::parameter(random_matrix(1, k, rng));
      Tensor s = Tensor::parameter(random_matrix(1, 1, rng));
      std::vector<Tensor> params{a, row, s};
      const auto report = grad_check(
          [&](Tape& t) {
            Tensor x = t.mul_row(t.add_row(a, row), row);
            return t.sum(t.square(t.mul_scalar(x, s)));
          },
          params);
      CHECK(report.passed);
    }
  }

  TEST_CASE("spmm gradient matches finite differences") {
    SparseMatrix s;
    s.rows = 3;
    s.cols = 3;
    s.row_offsets = {0, 2, 3, 5};
    s.col_indices = {0, 2, 1, 0, 2};
    s.values = {0.5, 0.25, 1.0, 0.25, 0.75};
    Rng rng(1);
    Tensor x = Tensor::parameter(random_matrix(3, 2, rng));
    std::vector<Tensor> params{x};
    CHECK(grad_check([&](Tape& t) { return t.sum(t.square(t.spmm(s, x))); }, params).passed);
    CHECK(s.at(0, 2) == 0.25);
    CHECK(s.at(1, 0) == 0.0);
  }

  TEST_CASE("two-layer sigmoid MLP matches finite differences") {
    Rng rng(9);
    Tensor x = Tensor::constant(random_matrix(6, 4, rng));
    Tensor w1 = Tensor::parameter(random_matrix(4, 5, rng)), b1 = Tensor::parameter(random_matrix(1, 5, rng));
    Tensor w2 = Tensor::parameter(random_matrix(5, 2, rng)), b2 = Tensor::parameter(random_matrix(1, 2, rng));
    std::vector<Tensor> params{w1, b1, w2, b2};
    const auto report = grad_check(
        [&](Tape& t) {
          Tensor h = t.relu(t.add_row(t.matmul(x, w1), b1));
          return t.mean(t.sigmoid(t.add_row(t.matmul(h, w2), b2)));
        },
        params);
    CHECK(report.passed);
    CHECK(report.max_relative_error <= 1e-4);
  }

  TEST_CASE("grad_check on a linear map is exact") {
    Rng rng(4);
    Tensor w = Tensor::parameter(random_matrix(3, 4, rng));
    Tensor x = Tensor::constant(random_matrix(4, 1, rng));
    std::vector<Tensor> params{w};
    const auto report = grad_check([&](Tape& t) { return t.sum(t.matmul(w, x)); }, params);
    CHECK(report.passed);
    CHECK(std::abs(report.analytic - report.numeric) <= 1e-8);
  }

  TEST_CASE("grad_check flags a hard argmax") {
    Tensor w = Tensor::parameter(Matrix(1, 3, {0.1, 0.5, 0.2}));
    std::vector<Tensor> params{w};
    const auto report = grad_check([&](Tape& t) { return t.sum(t.mul(t.argmax_rows(w), w)); }, params);
    CHECK(report.non_differentiable);
    CHECK_FALSE(report.passed);
  }

  TEST_CASE("grad_check reports failure instead of passing silently") {
    Tensor w = Tensor::parameter(Matrix(1, 2, {0.3, 0.7}));
    std::vector<Tensor> params{w};
    // A custom op with a deliberately wrong derivative.
    const auto report = grad_check(
        [&](Tape& t) {
          Matrix v(1, 1, w.value()[0] * w.value()[0]);
          auto node = w.shared_node();
          const Tensor in[] = {w};
          return t.custom("wrong", v, in, [node](const Matrix& g) { node->grad[0] += g[0]; });
        },
        params);
    CHECK_FALSE(report.passed);
    CHECK(report.parameter_index == 0);
    CHECK(report.element_index == 0);
  }

  TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1.0, 2.0, 3.0}), ShapeError);
    Tensor p = Tensor::parameter(Matrix(2, 3, 1.0));
    CHECK(p.grad().shape() == p.shape());
    Tensor c = Tensor::constant(Matrix(2, 3));
    CHECK_THROWS_AS(c.grad(), std::logic_error);
    Tensor copy = p.clone();
    copy.mutable_value()[0] = 5.0;
    CHECK(p.value()[0] == 1.0);
    CHECK(copy.requires_grad());
  }

  TEST_CASE("rng streams are seed xor index and reproducible") {
    Rng a = Rng::stream(10, 3), b(10 ^ 3);
    for (int i = 0; i < 5; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng u(1);
    for (int i = 0; i < 1000; ++i) {
      const double v = u.uniform();
      CHECK(v > 0.0);
      CHECK(v < 1.0);
      CHECK(u.index(7) < 7);
    }
  }

  TEST_CASE("gumbel draws have the standard mean") {
    Rng rng(8);
    double sum = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) sum += rng.gumbel();
    // Euler-Mascheroni constant; standard error ~ 1.28 / sqrt(n).
    CHECK(sum / n == doctest::Approx(0.5772156649).epsilon(0.02));
  }
}
