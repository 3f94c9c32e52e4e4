#pragma once

#include "ijcov/model.hpp"
#include "ijcov/rng.hpp"

#include <cmath>
#include <cstdint>
#include <limits>

namespace ijcov {

/// x_n ~ N(mu, known_sd^2) with a conjugate N(prior_mean, prior_sd^2) prior
/// on mu (prior_sd = +inf means a flat prior). g(mu) = mu.
class NormalMeanModel final : public Model {
 public:
  explicit NormalMeanModel(double known_sd = 1.0, double prior_mean = 0.0,
                           double prior_sd = std::numeric_limits<double>::infinity());

  double known_sd() const { return known_sd_; }
  double prior_mean() const { return prior_mean_; }
  double prior_sd() const { return prior_sd_; }
  bool flat_prior() const { return std::isinf(prior_sd_); }

  std::string name() const override { return "normal_mean"; }
  std::size_t dim() const override { return 1; }
  std::size_t g_dim() const override { return 1; }
  std::size_t unit_width() const override { return 1; }

  double log_lik(std::span<const double> unit, const Vector& theta) const override;
  double log_prior(const Vector& theta) const override;
  Vector g(const Vector& theta) const override { return theta; }

  Vector score(std::span<const double> unit, const Vector& theta) const override;
  Matrix hessian(std::span<const double> unit, const Vector& theta) const override;
  Vector prior_gradient(const Vector& theta) const override;
  Matrix prior_hessian(const Vector& theta) const override;
  Matrix g_jacobian(const Vector& theta) const override;
  bool has_analytic_derivatives() const override { return true; }
  Vector initial_point(const Dataset& data) const override;
  std::vector<std::string> parameter_names() const override { return {"mu"}; }

 private:
  double known_sd_;
  double prior_mean_;
  double prior_sd_;
};

/// Poisson random-effects model. Units are (y, group) with 0-based group
/// labels; theta = (gamma, lambda_1..lambda_G);
///   y_n ~ Poisson(exp(gamma + lambda_{a_n})),  exp(lambda_g) ~ Gamma(alpha, beta),
/// flat prior on gamma, g(theta) = gamma. The -log y! term is dropped.
class PoissonGammaREModel final : public Model {
 public:
  PoissonGammaREModel(std::size_t groups, double alpha, double beta);

  std::size_t groups() const { return groups_; }
  double alpha() const { return alpha_; }
  double beta() const { return beta_; }

  std::string name() const override { return "poisson_re"; }
  std::size_t dim() const override { return groups_ + 1; }
  std::size_t global_dim() const override { return 1; }
  std::size_t g_dim() const override { return 1; }
  std::size_t unit_width() const override { return 2; }

  double log_lik(std::span<const double> unit, const Vector& theta) const override;
  double log_prior(const Vector& theta) const override;
  Vector g(const Vector& theta) const override { return theta.head(1); }

  Vector score(std::span<const double> unit, const Vector& theta) const override;
  Matrix hessian(std::span<const double> unit, const Vector& theta) const override;
  Vector prior_gradient(const Vector& theta) const override;
  Matrix prior_hessian(const Vector& theta) const override;
  Matrix g_jacobian(const Vector& theta) const override;
  bool has_analytic_derivatives() const override { return true; }
  Vector initial_point(const Dataset& data) const override;
  std::vector<std::string> parameter_names() const override;
  std::vector<std::string> g_names() const override { return {"gamma"}; }

  /// Group label of a unit, validated against [0, G).
  std::size_t group_of(std::span<const double> unit) const;
  /// Throws unless every unit has a valid group label and a count y >= 0.
  void validate(const Dataset& data) const;

 private:
  std::size_t groups_;
  double alpha_;
  double beta_;
  double prior_const_;
};

/// One-dimensional conjugate Poisson-Gamma model: x_n ~ Poisson(theta),
/// theta ~ Gamma(alpha, beta). alpha = 1, beta = 0 gives a flat prior on
/// theta > 0. g(theta) = theta; -log x! dropped.
class PoissonGammaModel final : public Model {
 public:
  PoissonGammaModel(double alpha, double beta);

  double alpha() const { return alpha_; }
  double beta() const { return beta_; }

  std::string name() const override { return "poisson_gamma"; }
  std::size_t dim() const override { return 1; }
  std::size_t g_dim() const override { return 1; }
  std::size_t unit_width() const override { return 1; }

  double log_lik(std::span<const double> unit, const Vector& theta) const override;
  double log_prior(const Vector& theta) const override;
  Vector g(const Vector& theta) const override { return theta; }

  Vector score(std::span<const double> unit, const Vector& theta) const override;
  Matrix hessian(std::span<const double> unit, const Vector& theta) const override;
  Vector prior_gradient(const Vector& theta) const override;
  Matrix prior_hessian(const Vector& theta) const override;
  Matrix g_jacobian(const Vector& theta) const override;
  bool has_analytic_derivatives() const override { return true; }
  Vector initial_point(const Dataset& data) const override;
  std::vector<std::string> parameter_names() const override { return {"rate"}; }

 private:
  double alpha_;
  double beta_;
};

struct GammaHyper {
  double alpha;
  double beta;
};

/// Shape/rate of the Gamma law with the given mean and variance.
GammaHyper gamma_from_moments(double mean, double variance);

struct SimSpec {
  std::size_t n = 400;
  std::size_t groups = 40;
  double gamma_true = 1.5;
  double alpha = 25.0;
  double beta = 2.5;
  std::uint64_t seed = 0;
};

struct PoissonRESimulation {
  Dataset data;
  Vector truth;  // realized (gamma, lambda_1..lambda_G)
};

/// Draws exp(lambda_g) ~ Gamma(alpha, beta), then N units with uniform group
/// labels and y_n ~ Poisson(exp(gamma + lambda_{a_n})).
PoissonRESimulation simulate_poisson_re(const SimSpec& spec);

/// New labels and responses for a fixed realized `truth`: the conditional
/// resampling scheme used for ground-truth replicates.
Dataset simulate_poisson_re_given(const SimSpec& spec, const Vector& truth, Rng& rng);

enum class TrueDistKind { laplace, student_t, gaussian };

struct TrueDist {
  TrueDistKind kind = TrueDistKind::laplace;
  double param = 1.0;  // laplace scale, student-t df, or gaussian sd
  double location = 0.0;
};

/// IID draws from `dist` for fitting the normal-mean model.
Dataset simulate_misspecified_normal(std::size_t n, const TrueDist& dist, std::uint64_t seed);
Dataset simulate_misspecified_normal(std::size_t n, const TrueDist& dist, Rng& rng);

/// Population variance of `dist` (the sandwich target for the normal mean).
double true_dist_variance(const TrueDist& dist);

struct NormalPosterior {
  double mean;
  double variance;
};

/// Conjugate posterior of the normal-mean model under weights w.
NormalPosterior exact_normal_posterior(const NormalMeanModel& model, const Dataset& data,
                                       const WeightVector& w);
NormalPosterior exact_normal_posterior(const NormalMeanModel& model, const Dataset& data);

struct GammaPosterior {
  double shape;
  double rate;
};

GammaPosterior exact_poisson_gamma_posterior(const PoissonGammaModel& model, const Dataset& data,
                                             const WeightVector& w);

}  // namespace ijcov
