#pragma once

#include "ijcov/model.hpp"
#include "ijcov/sample.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ijcov {

enum class SamplerKind {
  automatic,   // exact for conjugate models, Gibbs for Poisson RE, else Metropolis
  exact,       // IID draws from a closed-form posterior
  gibbs,       // Poisson RE conjugate Gibbs sweep
  metropolis,  // random-walk Metropolis on the weighted log posterior
};

struct ChainConfig {
  std::size_t draws = 4000;
  std::optional<std::size_t> burn_in;  // default draws / 2
  std::size_t thin = 1;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  SamplerKind kind = SamplerKind::automatic;
  double mh_step_scale = 0.1;
  bool mh_adapt = true;  // Robbins-Monro during burn-in only
  std::optional<Vector> init;
  /// Exact sampler only: antithetic pairs rescaled to the exact posterior
  /// variance, so the first two sample moments carry no Monte Carlo error.
  bool moment_matched = false;
  bool keep_loglik = true;

  std::size_t burn_in_or_default() const { return burn_in.value_or(draws / 2); }
};

struct ChainStats {
  std::string sampler;
  double acceptance_rate = 1.0;
  double step_scale = 0.0;
  std::size_t iterations = 0;
};

/// Receives retained draw m (0-based) after burn-in and thinning.
using DrawVisitor = std::function<void(std::size_t, const Vector&)>;

SamplerKind resolve_sampler(const Model& model, SamplerKind requested);

/// Runs one chain targeting the w-weighted posterior and streams the
/// retained draws to `visit`. Strictly sequential; deterministic given cfg.
ChainStats run_chain(const Model& model, const Dataset& data, const WeightVector& w,
                     const ChainConfig& cfg, const DrawVisitor& visit);

/// Runs a chain and bundles draws, g values, log-likelihoods and ESS.
PosteriorSample sample_posterior(const Model& model, const Dataset& data, const WeightVector& w,
                                 const ChainConfig& cfg);

/// Posterior mean of g from one chain without retaining the draws.
Vector posterior_mean_g(const Model& model, const Dataset& data, const WeightVector& w,
                        const ChainConfig& cfg, ChainStats* stats = nullptr);

/// Effective sample size by Geyer's initial positive sequence. Constant
/// chains return M by convention; the result is clamped to (0, M].
double ess(std::span<const double> chain);

/// ESS of each column of `chain`.
Vector ess_columns(const Matrix& chain);

/// Integrated autocorrelation time M / ESS.
double autocorr_time(std::span<const double> chain);

struct MapOptions {
  std::size_t max_iters = 200;
  double grad_tol = 1e-8;
  std::optional<Vector> init;
};

struct MapFit {
  Vector theta_hat;
  Matrix info_hat;       // -(1/N) sum_n Hessian of l(x_n | theta_hat), likelihood only
  Matrix score_cov_hat;  // covariance (divisor N) of per-datum scores at theta_hat
  bool converged = false;
  std::size_t newton_iters = 0;
  double objective = 0.0;
  double grad_norm = 0.0;
  std::vector<double> objective_trace;  // after each accepted step, starting at init
};

/// Newton ascent with backtracking on (1/N)[sum_n l(x_n|theta) + log pi(theta)].
/// Throws ErrorKind::numerical ("singular fit") when the likelihood
/// information matrix has min eigenvalue <= 1e-10 * max eigenvalue.
MapFit map_optimize(const Model& model, const Dataset& data, const MapOptions& options = {});

}  // namespace ijcov
