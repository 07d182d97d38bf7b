#pragma once

#include <cstdint>
#include <random>

namespace popgraph {

/// Seedable generator with distribution code owned here, so sampled values
/// do not depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Independent stream for run `index` of a master seed: seed ^ index.
  static Rng stream(std::uint64_t master_seed, std::uint64_t index) { return Rng(master_seed ^ index); }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on the open interval (0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double gumbel();
  /// Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace popgraph
