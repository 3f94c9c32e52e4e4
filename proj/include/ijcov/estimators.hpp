#pragma once

#include "ijcov/model.hpp"
#include "ijcov/sample.hpp"
#include "ijcov/samplers.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>

namespace ijcov {

/// q x q covariance of sqrt(N) times a posterior mean, with an optional
/// entrywise Monte Carlo standard-error matrix.
struct CovEstimate {
  enum class Method { bayes, ij, boot, sandwich, sim };

  Matrix v;
  Method method = Method::ij;
  std::optional<Matrix> se;
  std::size_t sample_size = 0;  // M for bayes/ij, B for boot, R for sim, N for sandwich
};

std::string method_name(CovEstimate::Method method);
CovEstimate::Method parse_method(const std::string& name);

/// N x q; row n is the influence score of datum n.
using InfluenceMatrix = Matrix;

/// psi_n = N * cov_m(l(x_n | theta^m), g(theta^m)), divisor M - 1.
InfluenceMatrix influence_scores(const PosteriorSample& sample);
InfluenceMatrix influence_scores(const Matrix& loglik, const Matrix& g_values);

/// Covariance over datapoints of the influence scores (divisor N - 1).
CovEstimate ij_covariance(const InfluenceMatrix& psi);

/// N times the posterior covariance of g (divisor M - 1).
CovEstimate bayes_covariance(const PosteriorSample& sample);
CovEstimate bayes_covariance(const Matrix& g_values, std::size_t n);

/// grad g * I^-1 Sigma I^-1 * grad g^T at the MAP.
CovEstimate sandwich_covariance(const MapFit& fit, const Model& model);

/// Sample covariance of the rows of x with the given divisor offset
/// (1 gives the unbiased estimator, 0 the population one).
Matrix sample_covariance(const Matrix& x, int ddof = 1);

/// Counts of N uniform draws with replacement from N units.
WeightVector multinomial_weights(std::size_t n, std::uint64_t seed, std::uint64_t stream);

/// Posterior mean of g under data weights w, for replicate b.
using ReplicateFn = std::function<Vector(const WeightVector& w, std::size_t b)>;

struct BootstrapResult {
  CovEstimate estimate;
  Matrix replicate_means;  // B x q, unscaled
};

/// Covariance over replicates (divisor B - 1) of sqrt(N) times the
/// replicate posterior means. Replicate b uses weights from stream b of
/// `seed`, so results do not depend on the worker count.
BootstrapResult bootstrap_covariance(std::size_t n, std::size_t replicates, std::uint64_t seed,
                                     const ReplicateFn& replicate, std::size_t threads = 0);

/// Bootstrap over sampler runs on the weighted posterior. A Metropolis
/// step scale is adapted once on the original data and then frozen.
BootstrapResult bootstrap_covariance(const Model& model, const Dataset& data,
                                     const ChainConfig& cfg, std::size_t replicates,
                                     std::uint64_t seed, std::size_t threads = 0);

/// Enumerates all N^N equally likely resamples and returns N times the
/// population covariance of the replicate means. Small N only.
CovEstimate exhaustive_bootstrap_covariance(std::size_t n, const ReplicateFn& replicate);

/// Throws unless v is symmetric and min eigenvalue >= -1e-10 * trace.
void check_psd(const Matrix& v, const std::string& label);

}  // namespace ijcov
