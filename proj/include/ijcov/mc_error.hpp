#pragma once

#include "ijcov/estimators.hpp"
#include "ijcov/sample.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>

namespace ijcov {

/// Entrywise Monte Carlo standard deviations of a covariance estimate.
struct SEMatrix {
  Matrix xi;
  std::string method;
  std::size_t count = 0;  // blocks for block bootstrap, B for the delta method
};

enum class ChainStatistic { bayes_cov, ij_cov, g_mean };

/// Statistic of a pseudo-chain given as row indices into the original draws.
using RowStatistic = std::function<Matrix(std::span<const std::size_t> rows)>;

struct BlockBootstrapOptions {
  std::optional<std::size_t> blocks;  // default max(20, M / (10 tau))
  std::size_t reps = 200;
  std::uint64_t seed = 0;
  std::size_t threads = 0;
};

/// Default block count for a sample: max(20, M / (10 tau)), with tau the
/// largest integrated autocorrelation time over the g columns.
std::size_t default_block_count(const PosteriorSample& sample);

/// Splits rows [0, M) into `blocks` contiguous blocks, resamples blocks with
/// replacement `reps` times and returns the entrywise SD of the statistic.
/// `tau` (if positive) drives the short-block warning.
SEMatrix block_bootstrap_se(std::size_t m, const RowStatistic& statistic, std::size_t blocks,
                            std::size_t reps, std::uint64_t seed, std::size_t threads = 0,
                            double tau = 0.0);

SEMatrix block_bootstrap_se(const PosteriorSample& sample, ChainStatistic statistic,
                            const BlockBootstrapOptions& options = {});

/// Delta-method SE of the bootstrap covariance from B x q replicate means.
SEMatrix delta_method_boot_se(const Matrix& replicate_means, std::size_t n);

/// Z_ij = (A_ij - B_ij) / sqrt(Xi^A_ij^2 + Xi^B_ij^2).
Matrix z_matrix(const CovEstimate& a, const CovEstimate& b);

/// Delta_ij = (X_ij - Boot_ij) / (|Boot_ij| + Xi^Boot_ij).
Matrix delta_metrics(const CovEstimate& x, const CovEstimate& boot);

}  // namespace ijcov
