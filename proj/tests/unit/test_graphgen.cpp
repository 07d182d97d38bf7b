#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "popgraph/grad_check.hpp"
#include "popgraph/graph.hpp"

using namespace popgraph;
using testutil::random_matrix;

namespace {

std::vector<double> row(std::initializer_list<double> v) { return v; }

std::set<std::size_t> targets_of(const EdgeList& edges, std::size_t src) {
  std::set<std::size_t> out;
  for (const auto& e : edges) {
    if (e.src == src) out.insert(e.dst);
  }
  return out;
}

std::vector<std::size_t> out_degrees(const EdgeList& edges, std::size_t n) {
  std::vector<std::size_t> d(n, 0);
  for (const auto& e : edges) ++d[e.src];
  return d;
}

// Minimal DOT grammar: header, one statement per line, closing brace.
struct DotSummary {
  bool valid = true;
  std::size_t nodes = 0;
  std::size_t edges = 0;
};

DotSummary check_dot(const std::string& text) {
  static const std::regex header(R"(^digraph [A-Za-z_][A-Za-z0-9_]* \{$)");
  static const std::regex defaults(R"(^  node \[[^\]]*\];$)");
  static const std::regex node(R"(^  (\d+) \[label="\d+", age="-?[0-9.]+", fillcolor="#[0-9a-f]{6}"\];$)");
  static const std::regex edge(R"(^  (\d+) -> (\d+);$)");
  DotSummary s;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  s.valid = std::regex_match(line, header);
  bool closed = false;
  while (std::getline(in, line)) {
    if (closed) {
      s.valid = false;
    } else if (line == "}") {
      closed = true;
    } else if (std::regex_match(line, node)) {
      ++s.nodes;
    } else if (std::regex_match(line, edge)) {
      ++s.edges;
    } else if (!std::regex_match(line, defaults)) {
      s.valid = false;
    }
  }
  s.valid = s.valid && closed;
  return s;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("popgraph_graphgen_" + name)).string();
}

}  // namespace

TEST_SUITE("graphgen") {

TEST_CASE("distance examples") {
  CHECK(distance(row({0, 0}), row({3, 4}), DistanceMetric::euclidean) == 5.0);
  CHECK(distance(row({1, 0}), row({0, 1}), DistanceMetric::cosine) == 1.0);
  CHECK(distance(row({2, 2}), row({1, 1}), DistanceMetric::cosine) == doctest::Approx(0.0));
  CHECK(distance(row({0.3, 0.1}), row({0.3, 0.1}), DistanceMetric::hyperbolic) == 0.0);
  // From the origin the Poincare distance is 2 artanh |v|.
  CHECK(distance(row({0, 0}), row({0.5, 0}), DistanceMetric::hyperbolic) ==
        doctest::Approx(2.0 * std::atanh(0.5)));
  CHECK_THROWS_AS(distance(row({0, 0}), row({1.0, 0}), DistanceMetric::hyperbolic), NumericError);
  CHECK(distance_metric_from_string("cosine") == DistanceMetric::cosine);
  CHECK_THROWS(distance_metric_from_string("manhattan"));
}

TEST_CASE("pairwise distances are symmetric, finite, zero on the diagonal") {
  Rng rng(1);
  for (auto metric : {DistanceMetric::euclidean, DistanceMetric::cosine, DistanceMetric::hyperbolic}) {
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 2 + rng.index(8);
      const Matrix f = random_matrix(n, 1 + rng.index(5), rng, 0, 1);
      const Matrix d = pairwise_distance(f, metric);
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(d(i, i) == doctest::Approx(0.0));
        for (std::size_t j = 0; j < n; ++j) {
          CHECK(d(i, j) == d(j, i));
          CHECK(d(i, j) >= 0.0);
        }
      }
      if (metric == DistanceMetric::cosine) continue;  // 1 - cos is not a metric
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          for (std::size_t l = 0; l < n; ++l) CHECK(d(i, l) <= d(i, j) + d(j, l) + 1e-9);
        }
      }
    }
  }
  CHECK_THROWS(pairwise_distance(Matrix(1, 3), DistanceMetric::euclidean));
}

TEST_CASE("kernel examples") {
  const Matrix d(1, 2, {0.0, 1.0});
  const Matrix lp = edge_log_probabilities(d, 1.0);
  CHECK(lp[0] == 0.0);
  CHECK(std::exp(lp[1]) == doctest::Approx(0.3679).epsilon(1e-4));
}

TEST_CASE("kernel: doubling t squares p, p decreases with distance, p = 1 iff d = 0") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix d = random_matrix(4, 4, rng, 0, 3);
    d[0] = 0.0;
    const double t = std::exp(rng.uniform(-3, 3));
    const Matrix a = edge_log_probabilities(d, t);
    const Matrix b = edge_log_probabilities(d, 2 * t);
    for (std::size_t i = 0; i < d.size(); ++i) {
      CHECK(std::exp(b[i]) == doctest::Approx(std::exp(a[i]) * std::exp(a[i])).epsilon(1e-12));
      CHECK(a[i] <= 0.0);
      CHECK((a[i] == 0.0) == (d[i] == 0.0));
      for (std::size_t j = 0; j < d.size(); ++j) {
        if (d[i] < d[j]) CHECK(a[i] > a[j]);
      }
    }
  }
}

TEST_CASE("edge log-probability gradient matches finite differences") {
  Rng rng(3);
  for (auto metric : {DistanceMetric::euclidean, DistanceMetric::cosine}) {
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 3 + rng.index(5);
      Tensor f = Tensor::parameter(random_matrix(n, 2 + rng.index(3), rng, 0.1, 1));
      Tensor tau = Tensor::parameter(Matrix(1, 1, rng.uniform(-1, 1)));
      const auto sample = gumbel_topk_sample(
          edge_log_probabilities(pairwise_distance(f.value(), metric), 1.0), 1 + rng.index(n - 2), rng);
      const Tensor w = Tensor::constant(random_matrix(sample.edges.size(), 1, rng));
      std::vector<Tensor> params{f, tau};
      const auto report = grad_check(
          [&](Tape& t) {
            return t.sum(t.mul(edge_log_probability(t, f, tau, sample.edges, metric), w));
          },
          params);
      CHECK_MESSAGE(report.passed, report.message);
    }
  }
}

TEST_CASE("edge log-probability matches the dense kernel") {
  Rng rng(4);
  const Matrix f = random_matrix(6, 3, rng);
  const EdgeList edges{{0, 1}, {2, 5}, {4, 3}};
  Tape tape;
  const Tensor lp = edge_log_probability(tape, Tensor::constant(f), Tensor::constant(Matrix(1, 1, 0.7)), edges,
                                         DistanceMetric::euclidean);
  const Matrix dense = edge_log_probabilities(pairwise_distance(f, DistanceMetric::euclidean), std::exp(0.7));
  for (std::size_t e = 0; e < edges.size(); ++e) {
    CHECK(lp.value()[e] == doctest::Approx(dense(edges[e].src, edges[e].dst)));
  }
  CHECK_THROWS_AS(edge_log_probability(tape, Tensor::constant(f), Tensor::constant(Matrix(1, 1)), EdgeList{{0, 9}},
                                       DistanceMetric::euclidean),
                  ShapeError);
}

TEST_CASE("row log-normalizer: brute force value and finite differences") {
  Rng rng(5);
  for (auto metric : {DistanceMetric::euclidean, DistanceMetric::cosine}) {
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 2 + rng.index(6);
      Tensor f = Tensor::parameter(random_matrix(n, 1 + rng.index(4), rng, 0.1, 1));
      Tensor tau = Tensor::parameter(Matrix(1, 1, rng.uniform(-1, 2)));
      Tape tape;
      const Tensor lse = row_log_normalizer(tape, f, tau, metric);
      const Matrix d = pairwise_distance(f.value(), metric);
      const double t = std::exp(tau.item());
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          if (j != i) s += std::exp(-t * d(i, j) * d(i, j));
        }
        CHECK(lse.value()[i] == doctest::Approx(std::log(s)).epsilon(1e-10));
      }
      const Tensor w = Tensor::constant(random_matrix(n, 1, rng));
      std::vector<Tensor> params{f, tau};
      const auto report =
          grad_check([&](Tape& tp) { return tp.sum(tp.mul(row_log_normalizer(tp, f, tau, metric), w)); }, params);
      CHECK_MESSAGE(report.passed, report.message);
    }
  }
}

TEST_CASE("Gumbel-Top-k: forced choice and bad k") {
  Rng rng(6);
  const Matrix lp = edge_log_probabilities(pairwise_distance(random_matrix(3, 2, rng), DistanceMetric::euclidean), 1);
  for (int i = 0; i < 50; ++i) {
    const auto g = gumbel_topk_sample(lp, 2, rng);
    for (std::size_t s = 0; s < 3; ++s) {
      std::set<std::size_t> expected;
      for (std::size_t d = 0; d < 3; ++d) {
        if (d != s) expected.insert(d);
      }
      CHECK(targets_of(g.edges, s) == expected);
    }
  }
  CHECK_THROWS(gumbel_topk_sample(lp, 3, rng));
  CHECK_THROWS(gumbel_topk_sample(lp, 0, rng));
}

TEST_CASE("Gumbel-Top-k with k = 1 picks neighbours uniformly when probabilities are equal") {
  Rng rng(7);
  const Matrix lp(4, 4, 0.0);
  std::array<double, 4> hits{};
  const int draws = 200000;
  for (int i = 0; i < draws; ++i) {
    for (const auto& e : gumbel_topk_sample(lp, 1, rng).edges) {
      if (e.src == 0) hits[e.dst] += 1.0;
    }
  }
  CHECK(hits[0] == 0.0);
  for (std::size_t j = 1; j < 4; ++j) CHECK(std::abs(hits[j] / draws - 1.0 / 3.0) <= 0.01);
}

TEST_CASE("Gumbel-Top-k with k = 1 follows the row softmax") {
  Rng rng(8);
  const std::size_t n = 5;
  const Matrix lp = edge_log_probabilities(pairwise_distance(random_matrix(n, 2, rng), DistanceMetric::euclidean), 2);
  std::vector<double> softmax(n, 0.0);
  double z = 0.0;
  for (std::size_t j = 1; j < n; ++j) z += softmax[j] = std::exp(lp(0, j));
  for (double& v : softmax) v /= z;
  std::vector<double> freq(n, 0.0);
  const int draws = 200000;
  for (int i = 0; i < draws; ++i) {
    freq[gumbel_topk_sample(lp, 1, rng).edges[0].dst] += 1.0 / draws;
  }
  double tv = 0.0;
  for (std::size_t j = 0; j < n; ++j) tv += 0.5 * std::abs(freq[j] - softmax[j]);
  CHECK(tv <= 0.01);
}

TEST_CASE("Gumbel-Top-k invariants over random inputs") {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.index(12);
    const std::size_t k = 1 + rng.index(n - 1);
    const Matrix f = random_matrix(n, 3, rng);
    const Matrix lp = edge_log_probabilities(pairwise_distance(f, DistanceMetric::euclidean), rng.uniform(0.1, 5));
    const auto g = gumbel_topk_sample(lp, k, rng);
    CHECK(g.edges.size() == n * k);
    CHECK(g.log_prob.size() == g.edges.size());
    for (std::size_t d : out_degrees(g.edges, n)) CHECK(d == k);
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
      CHECK(g.edges[e].src != g.edges[e].dst);
      CHECK(g.log_prob[e] == lp(g.edges[e].src, g.edges[e].dst));
      if (e > 0) CHECK(g.edges[e - 1].src <= g.edges[e].src);
    }
    for (std::size_t s = 0; s < n; ++s) CHECK(targets_of(g.edges, s).size() == k);
    // Replaying the stored noise reproduces the draw.
    CHECK(gumbel_topk_select(lp, k, g.noise).edges == g.edges);
    // Zero noise is plain kNN on the distances.
    CHECK(gumbel_topk_select(lp, k, Matrix(n, n)).edges == knn_static_graph(f, k, DistanceMetric::euclidean));
  }
}

TEST_CASE("kNN examples") {
  const Matrix line(3, 1, {0.0, 0.4, 1.0});
  auto g = knn_static_graph(line, 1, DistanceMetric::euclidean);
  CHECK(targets_of(g, 1) == std::set<std::size_t>{0});
  const Matrix mid(3, 1, {0.0, 1.0, 2.0});
  g = knn_static_graph(mid, 1, DistanceMetric::euclidean);
  CHECK(targets_of(g, 1) == std::set<std::size_t>{0});

  Rng rng(10);
  const Matrix f = random_matrix(5, 2, rng);
  g = knn_static_graph(f, 4, DistanceMetric::euclidean);
  CHECK(g.size() == 20);
  for (std::size_t s = 0; s < 5; ++s) CHECK(targets_of(g, s).size() == 4);

  Matrix dup = random_matrix(4, 2, rng);
  dup(3, 0) = dup(1, 0);
  dup(3, 1) = dup(1, 1);
  g = knn_static_graph(dup, 1, DistanceMetric::euclidean);
  CHECK(targets_of(g, 1) == std::set<std::size_t>{3});
  CHECK(targets_of(g, 3) == std::set<std::size_t>{1});
  CHECK_THROWS(knn_static_graph(f, 5, DistanceMetric::euclidean));
}

TEST_CASE("random graph: degrees, exhaustion, seeds") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.index(20);
    const std::size_t k = 1 + rng.index(n - 1);
    const auto g = random_graph(n, k, rng);
    for (std::size_t d : out_degrees(g, n)) CHECK(d == k);
    for (std::size_t s = 0; s < n; ++s) {
      const auto t = targets_of(g, s);
      CHECK(t.size() == k);
      CHECK(t.count(s) == 0);
    }
  }
  const auto full = random_graph(3, 2, rng);
  for (std::size_t s = 0; s < 3; ++s) CHECK(targets_of(full, s).size() == 2);
  // Two independent 10-node, k = 2 graphs coincide with probability 36^-10.
  Rng a(1), b(2);
  CHECK(random_graph(10, 2, a) != random_graph(10, 2, b));
  CHECK_THROWS(random_graph(4, 4, rng));
}

TEST_CASE("symmetrize examples") {
  const Matrix eye = symmetrize(EdgeList{}, 3).to_dense();
  CHECK(eye == Matrix::identity(3));
  const Matrix pair = symmetrize(EdgeList{{0, 1}}, 2).to_dense();
  for (double v : pair.values()) CHECK(v == doctest::Approx(0.5));
  CHECK_THROWS(symmetrize(EdgeList{{1, 1}}, 2));
  CHECK_THROWS(symmetrize(EdgeList{{0, 2}}, 2));
}

TEST_CASE("symmetrize: symmetric, direction-blind, and sqrt(degree) is its unit eigenvector") {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.index(12);
    const auto edges = random_graph(n, 1 + rng.index(n - 1), rng);
    const Matrix a = symmetrize(edges, n).to_dense();
    EdgeList flipped;
    for (const auto& e : edges) {
      if (rng.uniform() < 0.5) {
        flipped.push_back({e.dst, e.src});
      } else {
        flipped.push_back(e);
      }
    }
    CHECK(symmetrize(flipped, n).to_dense() == a);

    std::vector<double> degree(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(a(i, j) == a(j, i));
        if (a(i, j) != 0.0) degree[i] += 1.0;
      }
    }
    bool regular = true;
    for (std::size_t i = 0; i < n; ++i) {
      double row_sum = 0.0, eig = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        row_sum += a(i, j);
        eig += a(i, j) * std::sqrt(degree[j]);
      }
      CHECK(row_sum > 0.0);
      CHECK(eig == doctest::Approx(std::sqrt(degree[i])));
      regular = regular && degree[i] == degree[0];
    }
    if (regular) {
      for (std::size_t i = 0; i < n; ++i) {
        double row_sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) row_sum += a(i, j);
        CHECK(row_sum == doctest::Approx(1.0));
      }
    }
  }
}

TEST_CASE("symmetrize: a hub's row sum exceeds one") {
  // Row sums are not bounded by one: the centre of a 5-star sums to
  // 1/5 + 4/sqrt(10).
  const Matrix a = symmetrize(EdgeList{{0, 1}, {0, 2}, {0, 3}, {0, 4}}, 5).to_dense();
  double centre = 0.0;
  for (std::size_t j = 0; j < 5; ++j) centre += a(0, j);
  CHECK(centre == doctest::Approx(0.2 + 4.0 / std::sqrt(10.0)));
  CHECK(centre > 1.0);
}

TEST_CASE("homophily examples") {
  const std::vector<double> same{3, 3, 3};
  const EdgeList tri{{0, 1}, {1, 2}, {2, 0}};
  CHECK(homophily_score(tri, same, HomophilyMode::regression) == 0.0);
  CHECK(homophily_score(tri, same, HomophilyMode::classification) == 1.0);
  CHECK(homophily_score(EdgeList{{0, 1}}, std::vector<double>{50, 60}, HomophilyMode::regression) == 10.0);
  // Both directions count once.
  CHECK(homophily_score(EdgeList{{0, 1}, {1, 0}, {1, 2}}, std::vector<double>{0, 2, 8},
                        HomophilyMode::regression) == 4.0);
  CHECK(homophily_score(EdgeList{{0, 1}, {1, 2}}, std::vector<double>{0, 0, 1},
                        HomophilyMode::classification) == 0.5);
  CHECK_THROWS(homophily_score(EdgeList{}, same, HomophilyMode::regression));
}

TEST_CASE("label-sorted ring is more homophilous than a random graph") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 20 + rng.index(50);
    std::vector<double> ages(n);
    for (double& a : ages) a = rng.uniform(47, 81);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto x, auto y) { return ages[x] < ages[y]; });
    EdgeList ring;
    for (std::size_t i = 0; i < n; ++i) ring.push_back({order[i], order[(i + 1) % n]});
    CHECK(homophily_score(ring, ages, HomophilyMode::regression) <
          homophily_score(random_graph(n, 2, rng), ages, HomophilyMode::regression));
  }
}

TEST_CASE("DOT export is well formed") {
  const std::string dot = graph_to_dot(EdgeList{{0, 1}}, std::vector<double>{50, 60});
  const auto s = check_dot(dot);
  CHECK(s.valid);
  CHECK(s.nodes == 2);
  CHECK(s.edges == 1);
  CHECK(dot.find("#0000ff") != std::string::npos);
  CHECK(dot.find("#ff0000") != std::string::npos);
  CHECK(age_color(64.0, 47.0, 81.0) == "#80007f");

  Rng rng(14);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.index(15);
    std::vector<double> ages(n);
    for (double& a : ages) a = rng.uniform(47, 81);
    const auto g = random_graph(n, 1 + rng.index(n - 1), rng);
    const auto summary = check_dot(graph_to_dot(g, ages));
    CHECK(summary.valid);
    CHECK(summary.nodes == n);
    CHECK(summary.edges == g.size());
  }
}

TEST_CASE("JSON export round trip and logp contract") {
  Rng rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3 + rng.index(10);
    std::vector<double> ages(n);
    for (double& a : ages) a = rng.uniform(47, 81);
    const Matrix lp = edge_log_probabilities(pairwise_distance(random_matrix(n, 2, rng), DistanceMetric::euclidean), 1);
    const auto sample = gumbel_topk_sample(lp, 1 + rng.index(n - 1), rng);
    const auto parsed = parse_graph_json(
        graph_to_json(sample.edges, ages, std::span<const double>(sample.log_prob)));
    CHECK(parsed.edges == sample.edges);
    CHECK(parsed.ages == ages);
    REQUIRE(parsed.log_prob.has_value());
    CHECK(*parsed.log_prob == sample.log_prob);
    CHECK_FALSE(parse_graph_json(graph_to_json(sample.edges, ages)).log_prob.has_value());
  }
}

TEST_CASE("file export writes both formats and reports bad paths") {
  Rng rng(16);
  const std::vector<double> ages{50, 55, 60, 65};
  const auto sample = gumbel_topk_sample(Matrix(4, 4), 2, rng);
  const std::string json_path = temp_path("sample.json");
  const std::string dot_path = temp_path("edges.dot");
  export_graph(sample, ages, json_path, GraphFormat::json);
  export_graph(sample.edges, ages, dot_path, GraphFormat::dot);
  std::ifstream j(json_path);
  std::stringstream buf;
  buf << j.rdbuf();
  CHECK(parse_graph_json(buf.str()).log_prob.has_value());
  std::ifstream d(dot_path);
  std::stringstream dbuf;
  dbuf << d.rdbuf();
  CHECK(check_dot(dbuf.str()).edges == 8);
  std::filesystem::remove(json_path);
  std::filesystem::remove(dot_path);
  try {
    export_graph(sample.edges, ages, "/nonexistent_dir/x.dot", GraphFormat::dot);
    FAIL("expected an I/O error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("/nonexistent_dir/x.dot") != std::string::npos);
  }
}

}  // TEST_SUITE
