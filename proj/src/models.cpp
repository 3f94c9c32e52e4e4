#include "ijcov/models.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace ijcov {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

}  // namespace

// ---------------------------------------------------------------------------
// NormalMeanModel

NormalMeanModel::NormalMeanModel(double known_sd, double prior_mean, double prior_sd)
    : known_sd_(known_sd), prior_mean_(prior_mean), prior_sd_(prior_sd) {
  require(known_sd_ > 0.0 && std::isfinite(known_sd_), "known_sd must be finite and > 0");
  require(prior_sd_ > 0.0, "prior_sd must be > 0 (use +inf for a flat prior)");
  require(std::isfinite(prior_mean_), "prior_mean must be finite");
}

double NormalMeanModel::log_lik(std::span<const double> unit, const Vector& theta) const {
  const double z = (unit[0] - theta[0]) / known_sd_;
  return -0.5 * z * z - std::log(known_sd_) - kHalfLog2Pi;
}

double NormalMeanModel::log_prior(const Vector& theta) const {
  if (flat_prior()) return 0.0;
  const double z = (theta[0] - prior_mean_) / prior_sd_;
  return -0.5 * z * z - std::log(prior_sd_) - kHalfLog2Pi;
}

Vector NormalMeanModel::score(std::span<const double> unit, const Vector& theta) const {
  return Vector::Constant(1, (unit[0] - theta[0]) / (known_sd_ * known_sd_));
}

Matrix NormalMeanModel::hessian(std::span<const double>, const Vector&) const {
  return Matrix::Constant(1, 1, -1.0 / (known_sd_ * known_sd_));
}

Vector NormalMeanModel::prior_gradient(const Vector& theta) const {
  if (flat_prior()) return Vector::Zero(1);
  return Vector::Constant(1, -(theta[0] - prior_mean_) / (prior_sd_ * prior_sd_));
}

Matrix NormalMeanModel::prior_hessian(const Vector&) const {
  if (flat_prior()) return Matrix::Zero(1, 1);
  return Matrix::Constant(1, 1, -1.0 / (prior_sd_ * prior_sd_));
}

Matrix NormalMeanModel::g_jacobian(const Vector&) const { return Matrix::Identity(1, 1); }

Vector NormalMeanModel::initial_point(const Dataset& data) const {
  double sum = 0.0;
  for (std::size_t n = 0; n < data.size(); ++n) sum += data.at(n, 0);
  return Vector::Constant(1, sum / static_cast<double>(data.size()));
}

// ---------------------------------------------------------------------------
// PoissonGammaREModel

PoissonGammaREModel::PoissonGammaREModel(std::size_t groups, double alpha, double beta)
    : groups_(groups), alpha_(alpha), beta_(beta) {
  require(groups_ >= 1, "Poisson RE model needs G >= 1");
  require(alpha_ > 0.0 && beta_ > 0.0 && std::isfinite(alpha_) && std::isfinite(beta_),
          "Poisson RE hyperparameters must satisfy alpha > 0, beta > 0");
  prior_const_ = alpha_ * std::log(beta_) - std::lgamma(alpha_);
}

std::size_t PoissonGammaREModel::group_of(std::span<const double> unit) const {
  const double a = unit[1];
  if (!(a >= 0.0) || a != std::floor(a) || a >= static_cast<double>(groups_)) {
    std::ostringstream msg;
    msg << "group label " << a << " outside [0, " << groups_ << ")";
    fail(ErrorKind::invalid_argument, msg.str());
  }
  return static_cast<std::size_t>(a);
}

void PoissonGammaREModel::validate(const Dataset& data) const {
  check_compatible(*this, data);
  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto u = data.unit(n);
    group_of(u);
    require(u[0] >= 0.0 && u[0] == std::floor(u[0]),
            "Poisson response must be a nonnegative integer (row " + std::to_string(n) + ")");
  }
}

double PoissonGammaREModel::log_lik(std::span<const double> unit, const Vector& theta) const {
  const double eta = theta[0] + theta[static_cast<Eigen::Index>(group_of(unit)) + 1];
  return unit[0] * eta - std::exp(eta);
}

double PoissonGammaREModel::log_prior(const Vector& theta) const {
  // Density of lambda_g when exp(lambda_g) ~ Gamma(alpha, beta), Jacobian included.
  double total = 0.0;
  for (std::size_t g = 0; g < groups_; ++g) {
    const double lam = theta[static_cast<Eigen::Index>(g) + 1];
    total += alpha_ * lam - beta_ * std::exp(lam) + prior_const_;
  }
  return std::isfinite(total) ? total : kNegInf;
}

Vector PoissonGammaREModel::score(std::span<const double> unit, const Vector& theta) const {
  const auto a = static_cast<Eigen::Index>(group_of(unit)) + 1;
  const double resid = unit[0] - std::exp(theta[0] + theta[a]);
  Vector s = Vector::Zero(theta.size());
  s[0] = resid;
  s[a] = resid;
  return s;
}

Matrix PoissonGammaREModel::hessian(std::span<const double> unit, const Vector& theta) const {
  const auto a = static_cast<Eigen::Index>(group_of(unit)) + 1;
  const double rate = std::exp(theta[0] + theta[a]);
  Matrix h = Matrix::Zero(theta.size(), theta.size());
  h(0, 0) = h(0, a) = h(a, 0) = h(a, a) = -rate;
  return h;
}

Vector PoissonGammaREModel::prior_gradient(const Vector& theta) const {
  Vector grad = Vector::Zero(theta.size());
  for (Eigen::Index i = 1; i < theta.size(); ++i) grad[i] = alpha_ - beta_ * std::exp(theta[i]);
  return grad;
}

Matrix PoissonGammaREModel::prior_hessian(const Vector& theta) const {
  Matrix h = Matrix::Zero(theta.size(), theta.size());
  for (Eigen::Index i = 1; i < theta.size(); ++i) h(i, i) = -beta_ * std::exp(theta[i]);
  return h;
}

Matrix PoissonGammaREModel::g_jacobian(const Vector& theta) const {
  Matrix j = Matrix::Zero(1, theta.size());
  j(0, 0) = 1.0;
  return j;
}

Vector PoissonGammaREModel::initial_point(const Dataset& data) const {
  double total = 0.0;
  for (std::size_t n = 0; n < data.size(); ++n) total += data.at(n, 0);
  const double ybar = std::max(total / static_cast<double>(data.size()), 0.5);
  Vector theta(static_cast<Eigen::Index>(dim()));
  theta[0] = std::log(ybar / (alpha_ / beta_));
  theta.tail(static_cast<Eigen::Index>(groups_)).setConstant(std::log(alpha_ / beta_));
  return theta;
}

std::vector<std::string> PoissonGammaREModel::parameter_names() const {
  std::vector<std::string> names{"gamma"};
  for (std::size_t g = 0; g < groups_; ++g) names.push_back("lambda_" + std::to_string(g + 1));
  return names;
}

// ---------------------------------------------------------------------------
// PoissonGammaModel

PoissonGammaModel::PoissonGammaModel(double alpha, double beta) : alpha_(alpha), beta_(beta) {
  require(alpha_ > 0.0 && beta_ >= 0.0, "Poisson-Gamma prior needs alpha > 0 and beta >= 0");
}

double PoissonGammaModel::log_lik(std::span<const double> unit, const Vector& theta) const {
  const double rate = theta[0];
  if (!(rate > 0.0)) return kNegInf;
  return unit[0] * std::log(rate) - rate;
}

double PoissonGammaModel::log_prior(const Vector& theta) const {
  const double rate = theta[0];
  if (!(rate > 0.0)) return kNegInf;
  return (alpha_ - 1.0) * std::log(rate) - beta_ * rate;
}

Vector PoissonGammaModel::score(std::span<const double> unit, const Vector& theta) const {
  return Vector::Constant(1, unit[0] / theta[0] - 1.0);
}

Matrix PoissonGammaModel::hessian(std::span<const double> unit, const Vector& theta) const {
  return Matrix::Constant(1, 1, -unit[0] / (theta[0] * theta[0]));
}

Vector PoissonGammaModel::prior_gradient(const Vector& theta) const {
  return Vector::Constant(1, (alpha_ - 1.0) / theta[0] - beta_);
}

Matrix PoissonGammaModel::prior_hessian(const Vector& theta) const {
  return Matrix::Constant(1, 1, -(alpha_ - 1.0) / (theta[0] * theta[0]));
}

Matrix PoissonGammaModel::g_jacobian(const Vector&) const { return Matrix::Identity(1, 1); }

Vector PoissonGammaModel::initial_point(const Dataset& data) const {
  double sum = 0.0;
  for (std::size_t n = 0; n < data.size(); ++n) sum += data.at(n, 0);
  return Vector::Constant(1, std::max(sum / static_cast<double>(data.size()), 0.1));
}

// ---------------------------------------------------------------------------
// Simulators and closed forms

GammaHyper gamma_from_moments(double mean, double variance) {
  require(mean > 0.0 && variance > 0.0, "Gamma moments must be positive");
  return {mean * mean / variance, mean / variance};
}

namespace {

void check_sim_spec(const SimSpec& spec) {
  require(spec.alpha > 0.0 && spec.beta > 0.0, "simulation needs alpha > 0 and beta > 0");
  require(spec.groups >= 1 && spec.n >= spec.groups, "simulation needs N >= G >= 1");
  require(std::isfinite(spec.gamma_true), "gamma_true must be finite");
}

}  // namespace

Dataset simulate_poisson_re_given(const SimSpec& spec, const Vector& truth, Rng& rng) {
  check_sim_spec(spec);
  require(static_cast<std::size_t>(truth.size()) == spec.groups + 1,
          "truth vector must hold gamma and G lambdas", ErrorKind::dimension_mismatch);
  std::vector<double> values;
  values.reserve(2 * spec.n);
  for (std::size_t n = 0; n < spec.n; ++n) {
    const std::size_t a = rng.index(spec.groups);
    const double rate = std::exp(truth[0] + truth[static_cast<Eigen::Index>(a) + 1]);
    values.push_back(static_cast<double>(rng.poisson(rate)));
    values.push_back(static_cast<double>(a));
  }
  return Dataset({"y", "group"}, std::move(values));
}

PoissonRESimulation simulate_poisson_re(const SimSpec& spec) {
  check_sim_spec(spec);
  Rng rng(spec.seed, 0);
  Vector truth(static_cast<Eigen::Index>(spec.groups) + 1);
  truth[0] = spec.gamma_true;
  for (std::size_t g = 0; g < spec.groups; ++g) {
    truth[static_cast<Eigen::Index>(g) + 1] = std::log(rng.gamma(spec.alpha, spec.beta));
  }
  Dataset data = simulate_poisson_re_given(spec, truth, rng);
  return {std::move(data), std::move(truth)};
}

Dataset simulate_misspecified_normal(std::size_t n, const TrueDist& dist, Rng& rng) {
  require(n >= 2, "simulate_misspecified_normal needs n >= 2");
  if (dist.kind == TrueDistKind::student_t) {
    require(dist.param > 2.0, "student-t data need df > 2 (finite variance)");
  } else {
    require(dist.param > 0.0, "distribution scale must be > 0");
  }
  std::vector<double> values(n);
  for (double& v : values) {
    switch (dist.kind) {
      case TrueDistKind::laplace: v = rng.laplace(dist.param); break;
      case TrueDistKind::student_t: v = rng.student_t(dist.param); break;
      case TrueDistKind::gaussian: v = dist.param * rng.normal(); break;
    }
    v += dist.location;
  }
  return Dataset({"x"}, std::move(values));
}

Dataset simulate_misspecified_normal(std::size_t n, const TrueDist& dist, std::uint64_t seed) {
  Rng rng(seed, 0);
  return simulate_misspecified_normal(n, dist, rng);
}

double true_dist_variance(const TrueDist& dist) {
  switch (dist.kind) {
    case TrueDistKind::laplace: return 2.0 * dist.param * dist.param;
    case TrueDistKind::student_t: return dist.param / (dist.param - 2.0);
    case TrueDistKind::gaussian: return dist.param * dist.param;
  }
  return 0.0;
}

NormalPosterior exact_normal_posterior(const NormalMeanModel& model, const Dataset& data,
                                       const WeightVector& w) {
  check_compatible(model, data);
  require(static_cast<std::size_t>(w.size()) == data.size(), "weight length differs from N",
          ErrorKind::dimension_mismatch);
  const double lik_prec = 1.0 / (model.known_sd() * model.known_sd());
  double wsum = 0.0;
  double wx = 0.0;
  for (std::size_t n = 0; n < data.size(); ++n) {
    wsum += w[static_cast<Eigen::Index>(n)];
    wx += w[static_cast<Eigen::Index>(n)] * data.at(n, 0);
  }
  const double prior_prec = model.flat_prior() ? 0.0 : 1.0 / (model.prior_sd() * model.prior_sd());
  const double prec = prior_prec + wsum * lik_prec;
  require(prec > 0.0, "flat prior with zero total weight gives an improper posterior",
          ErrorKind::numerical);
  const double mean = (prior_prec * model.prior_mean() + lik_prec * wx) / prec;
  return {mean, 1.0 / prec};
}

NormalPosterior exact_normal_posterior(const NormalMeanModel& model, const Dataset& data) {
  return exact_normal_posterior(model, data, unit_weights(data.size()));
}

GammaPosterior exact_poisson_gamma_posterior(const PoissonGammaModel& model, const Dataset& data,
                                             const WeightVector& w) {
  check_compatible(model, data);
  double wsum = 0.0;
  double wx = 0.0;
  for (std::size_t n = 0; n < data.size(); ++n) {
    wsum += w[static_cast<Eigen::Index>(n)];
    wx += w[static_cast<Eigen::Index>(n)] * data.at(n, 0);
  }
  const GammaPosterior post{model.alpha() + wx, model.beta() + wsum};
  require(post.shape > 0.0 && post.rate > 0.0, "improper Poisson-Gamma posterior",
          ErrorKind::numerical);
  return post;
}

}  // namespace ijcov
