#pragma once

#include "ijcov/core.hpp"

#include <cstdint>
#include <string>

namespace ijcov {

struct SampleMeta {
  std::string model;
  std::string sampler;
  std::uint64_t seed = 0;
  bool unit_weights = true;
  double acceptance_rate = 1.0;
  double step_scale = 0.0;
};

/// M posterior draws with their g values and the M x N log-likelihood
/// matrix. `draws` may be empty for samples ingested without parameters.
struct PosteriorSample {
  Matrix draws;     // M x D
  Matrix g_values;  // M x q
  Matrix loglik;    // M x N
  Vector ess;       // per parameter, may be empty
  SampleMeta meta;

  std::size_t size() const { return static_cast<std::size_t>(g_values.rows()); }
  std::size_t data_size() const { return static_cast<std::size_t>(loglik.cols()); }
  std::size_t g_dim() const { return static_cast<std::size_t>(g_values.cols()); }

  /// Row counts agree and every entry is finite; throws otherwise.
  void validate() const;
};

}  // namespace ijcov
