#pragma once

#include "ijcov/model.hpp"
#include "ijcov/models.hpp"
#include "ijcov/rng.hpp"
#include "ijcov/sample.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ijcov {

/// Conditional mean and covariance of eta_g given the global parameters.
struct ConditionalMoments {
  Vector mu;
  Matrix j;
};

/// A global-local model written as l(x_n | gamma, lambda) = y_n^T eta_{a_n}(gamma, lambda).
class GroupedExpFamilyView {
 public:
  virtual ~GroupedExpFamilyView() = default;

  virtual std::size_t groups() const = 0;
  virtual std::size_t ydim() const = 0;
  virtual std::size_t group_of(std::span<const double> unit) const = 0;
  /// Sufficient statistic y_n.
  virtual Vector stat(std::span<const double> unit) const = 0;
  virtual Vector eta(std::size_t g, const Vector& theta) const = 0;

  /// Closed-form moments of eta_g under p(lambda_g | gamma, x) for the
  /// bound dataset x; nullopt if the model has none.
  virtual std::optional<ConditionalMoments> conditional_moments(const Vector& theta,
                                                                std::size_t g) const;

  /// One draw of eta_g from p(lambda_g | gamma, x); nullopt if unsupported.
  virtual std::optional<Vector> conditional_eta_draw(const Vector& theta, std::size_t g,
                                                     Rng& rng) const;
};

/// Poisson random-effects model as a grouped exponential family:
/// y_n = (r_n, 1), eta_g = (gamma + lambda_g, -exp(gamma + lambda_g)).
class PoissonREView final : public GroupedExpFamilyView {
 public:
  /// Binds the model and the dataset whose posterior the chain targets.
  PoissonREView(const PoissonGammaREModel& model, const Dataset& data);

  std::size_t groups() const override { return model_.groups(); }
  std::size_t ydim() const override { return 2; }
  std::size_t group_of(std::span<const double> unit) const override {
    return model_.group_of(unit);
  }
  Vector stat(std::span<const double> unit) const override;
  Vector eta(std::size_t g, const Vector& theta) const override;

  std::optional<ConditionalMoments> conditional_moments(const Vector& theta,
                                                        std::size_t g) const override;
  std::optional<Vector> conditional_eta_draw(const Vector& theta, std::size_t g,
                                             Rng& rng) const override;

  /// Closed forms for lambda_g | gamma ~ log Gamma(a, b) with a = alpha + S_y,
  /// b = beta + exp(gamma) * n_g.
  static ConditionalMoments moments_from_gamma(double gamma, double a, double b);

 private:
  const PoissonGammaREModel& model_;
  std::vector<double> sum_y_;
  std::vector<double> count_;
};

struct GroupMoments {
  std::vector<std::size_t> group;  // original labels of the retained groups
  std::vector<Vector> m;           // within-group means
  std::vector<Matrix> s;           // within-group second moments (divisor n_g)
  std::vector<std::size_t> count;
};

/// Within-group sample moments; empty groups are dropped with a warning.
GroupMoments empirical_group_moments(const Dataset& data, const GroupedExpFamilyView& view);

enum class MlPath { automatic, closed_form, conditional_draws, per_draw };

struct MlOptions {
  MlPath path = MlPath::automatic;
  /// Permit the per-draw estimate N E[gbar etabar etabar^T] when neither
  /// closed forms nor conditional draws exist. It estimates L + M / N.
  bool allow_fallback = false;
  std::size_t conditional_draws = 64;
  std::uint64_t seed = 0;
  bool compute_m = true;
  std::size_t g_column = 0;
};

struct MlBlocks {
  std::vector<Matrix> l;  // L_gg, indexed by group label
  Matrix m;               // M_gh stacked (G*ydim square); empty unless computed
  std::string path;
};

/// L_gg = N E_post[gbar J_gg(gamma)], M_gh = N^2 E_post[gbar mubar_g mubar_h^T].
MlBlocks ml_matrices_from_chain(const PosteriorSample& sample, const Dataset& data,
                                const GroupedExpFamilyView& view, const MlOptions& options = {});

struct GroupedExpFamilyTerms {
  double kappa_hat = 0.0;
  Vector rho_nn;                // length N
  double rho_nn_mean = 0.0;     // (1/N) sum_n rho_nn
  double resid_t1_hat = 0.0;    // (1/N) sum_{n,m} rho_nm
  std::vector<double> trace_contrib;  // per retained group
  std::vector<std::size_t> group;     // labels matching trace_contrib
};

/// kappa, rho_nn and the double-sum residual from group moments and L blocks.
GroupedExpFamilyTerms kappa_and_rho(const Dataset& data, const GroupedExpFamilyView& view,
                                    const GroupMoments& moments, const std::vector<Matrix>& l);

/// Symmetric square root by eigendecomposition, negative eigenvalues clipped.
Matrix psd_sqrt(const Matrix& s);

/// Population version for Poisson RE: group moments and J from the known
/// truth, with the gamma posterior taken from the chain.
struct PoissonAnalytic {
  double alpha;
  double beta;
  double gamma0;
  double n_over_g;
  std::vector<double> rho;  // per-group response mean exp(gamma0 + lambda_g)
  std::vector<double> v;    // per-group response variance
};

PoissonAnalytic poisson_analytic(const PoissonGammaREModel& model, const Vector& truth,
                                 std::size_t n);

/// J_gg of the population version at gamma (exp(gamma) enters b_g).
Matrix poisson_analytic_j(const PoissonAnalytic& pa, std::size_t g, double gamma);

/// kappa of the population version using the chain's gamma draws for gbar.
double poisson_analytic_kappa(const PoissonAnalytic& pa, const Vector& gamma_draws,
                              const Vector& g_draws, std::size_t n);

/// Scalar function with optional analytic derivatives (finite differences otherwise).
struct ScalarFunction {
  std::function<double(double)> f;
  std::function<double(double)> d1;
  std::function<double(double)> d2;
};

ScalarFunction power_function(int k);

struct BcltPoint {
  std::size_t n = 0;
  double theta_hat = 0.0;
  double e_post = 0.0;
  double phi_hat = 0.0;
  double correction = 0.0;
  double residual = 0.0;
};

struct BcltResult {
  std::vector<BcltPoint> points;
  double slope = 0.0;
  double intercept = 0.0;
};

/// Posterior expectation of phi by adaptive trapezoid quadrature.
double quadrature_expectation(const Model& model, const Dataset& data, const ScalarFunction& phi,
                              double center, double scale, double rel_tol = 1e-13);

/// For each dataset: E_post[phi] by quadrature, the MAP, the leading
/// 1/N correction, and r = |E_post[phi] - phi(MAP) - correction|; then
/// the least-squares slope of log r on log N.
BcltResult bclt_expansion_check(const Model& model, const ScalarFunction& phi,
                                const std::vector<Dataset>& datasets);

/// Nested prefixes of one Poisson stream with rate `rate`, one per N.
std::vector<Dataset> nested_poisson_datasets(const std::vector<std::size_t>& ns, double rate,
                                             std::uint64_t seed);

/// Least-squares slope and intercept of log y on log x.
std::pair<double, double> loglog_fit(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace ijcov
