#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>

namespace ijcov {

/// Pseudo-random stream identified by (seed, stream). Distinct stream indices
/// give independently seeded engines, so replicate b of a bootstrap always
/// sees the same numbers no matter which worker runs it.
///
/// All variate generators are implemented here rather than taken from
/// <random> distributions, whose algorithms are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform();

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  double normal();

  /// Gamma(shape, rate); Marsaglia-Tsang squeeze, with the U^(1/shape)
  /// boost for shape < 1.
  double gamma(double shape, double rate);

  /// Poisson(mean); inversion for mean < 10, PTRS transformed rejection
  /// (Hormann 1993) otherwise.
  std::uint64_t poisson(double mean);

  double laplace(double scale);

  double student_t(double df);

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_normal_;
};

}  // namespace ijcov
