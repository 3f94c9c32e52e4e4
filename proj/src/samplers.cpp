#include "ijcov/samplers.hpp"

#include "ijcov/models.hpp"
#include "ijcov/rng.hpp"

#include <cmath>
#include <sstream>

namespace ijcov {

void PosteriorSample::validate() const {
  require(g_values.rows() >= 2, "posterior sample needs M >= 2 draws");
  require(draws.size() == 0 || draws.rows() == g_values.rows(),
          "draws and g_values row counts differ", ErrorKind::dimension_mismatch);
  require(loglik.size() == 0 || loglik.rows() == g_values.rows(),
          "loglik and g_values row counts differ", ErrorKind::dimension_mismatch);
  require(draws.allFinite(), "posterior draws contain non-finite values");
  require(g_values.allFinite(), "g values contain non-finite values");
  require(loglik.allFinite(), "log-likelihood matrix contains non-finite values");
}

SamplerKind resolve_sampler(const Model& model, SamplerKind requested) {
  if (requested != SamplerKind::automatic) return requested;
  if (dynamic_cast<const NormalMeanModel*>(&model) != nullptr) return SamplerKind::exact;
  if (dynamic_cast<const PoissonGammaModel*>(&model) != nullptr) return SamplerKind::exact;
  if (dynamic_cast<const PoissonGammaREModel*>(&model) != nullptr) return SamplerKind::gibbs;
  return SamplerKind::metropolis;
}

namespace {

void check_chain_inputs(const Model& model, const Dataset& data, const WeightVector& w,
                        const ChainConfig& cfg) {
  check_compatible(model, data);
  require(static_cast<std::size_t>(w.size()) == data.size(), "weight length differs from N",
          ErrorKind::dimension_mismatch);
  require((w.array() >= 0.0).all() && w.allFinite(), "weights must be finite and nonnegative");
  require(cfg.draws >= 2, "chain needs M >= 2 retained draws");
  require(cfg.thin >= 1, "thin must be >= 1");
}

ChainStats run_exact(const Model& model, const Dataset& data, const WeightVector& w,
                     const ChainConfig& cfg, const DrawVisitor& visit) {
  Rng rng(cfg.seed, cfg.stream);
  Vector theta(1);
  if (const auto* normal = dynamic_cast<const NormalMeanModel*>(&model)) {
    const NormalPosterior post = exact_normal_posterior(*normal, data, w);
    const double sd = std::sqrt(post.variance);
    if (!cfg.moment_matched) {
      for (std::size_t m = 0; m < cfg.draws; ++m) {
        theta[0] = post.mean + sd * rng.normal();
        visit(m, theta);
      }
    } else {
      std::vector<double> z(cfg.draws, 0.0);
      for (std::size_t m = 0; m + 1 < cfg.draws; m += 2) {
        z[m] = rng.normal();
        z[m + 1] = -z[m];
      }
      double ss = 0.0;
      for (double v : z) ss += v * v;
      const double scale = 1.0 / std::sqrt(ss / static_cast<double>(cfg.draws - 1));
      for (std::size_t m = 0; m < cfg.draws; ++m) {
        theta[0] = post.mean + sd * scale * z[m];
        visit(m, theta);
      }
    }
    return {"exact", 1.0, 0.0, cfg.draws};
  }
  if (const auto* pg = dynamic_cast<const PoissonGammaModel*>(&model)) {
    require(!cfg.moment_matched, "moment-matched draws are only available for the normal model",
            ErrorKind::unsupported);
    const GammaPosterior post = exact_poisson_gamma_posterior(*pg, data, w);
    for (std::size_t m = 0; m < cfg.draws; ++m) {
      theta[0] = rng.gamma(post.shape, post.rate);
      visit(m, theta);
    }
    return {"exact", 1.0, 0.0, cfg.draws};
  }
  fail(ErrorKind::unsupported, "no exact sampler for model '" + model.name() + "'");
}

// Gibbs sweep on (x, u) = (exp(gamma), exp(lambda)):
//   u_g | x     ~ Gamma(alpha + sum_{a_n=g} w_n y_n, beta + x sum_{a_n=g} w_n)
//   x   | u     ~ Gamma(sum_n w_n y_n, sum_g u_g sum_{a_n=g} w_n)
// followed by an exact draw of gamma given every gamma + lambda_g, which
// leaves the likelihood untouched and breaks the gamma/lambda ridge:
//   exp(-gamma) | eta ~ Gamma(G alpha, beta sum_g exp(eta_g)).
ChainStats run_gibbs(const Model& model, const Dataset& data, const WeightVector& w,
                     const ChainConfig& cfg, const DrawVisitor& visit) {
  const auto* re = dynamic_cast<const PoissonGammaREModel*>(&model);
  require(re != nullptr, "Gibbs sampler requires the Poisson random-effects model",
          ErrorKind::unsupported);
  re->validate(data);
  const std::size_t groups = re->groups();
  std::vector<double> sum_wy(groups, 0.0);
  std::vector<double> sum_w(groups, 0.0);
  double total_wy = 0.0;
  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto unit = data.unit(n);
    const std::size_t a = re->group_of(unit);
    const double wn = w[static_cast<Eigen::Index>(n)];
    sum_wy[a] += wn * unit[0];
    sum_w[a] += wn;
    total_wy += wn * unit[0];
  }
  require(total_wy > 0.0,
          "improper gamma conditional: sum_n w_n y_n = 0 under the flat prior on gamma",
          ErrorKind::numerical);

  Vector theta = cfg.init ? *cfg.init : re->initial_point(data);
  require(static_cast<std::size_t>(theta.size()) == re->dim(), "init has the wrong dimension",
          ErrorKind::dimension_mismatch);
  double x = std::exp(theta[0]);
  std::vector<double> u(groups);
  for (std::size_t g = 0; g < groups; ++g) u[g] = std::exp(theta[static_cast<Eigen::Index>(g) + 1]);

  Rng rng(cfg.seed, cfg.stream);
  const double alpha = re->alpha();
  const double beta = re->beta();
  const std::size_t burn = cfg.burn_in_or_default();
  const std::size_t total = burn + cfg.draws * cfg.thin;
  std::size_t kept = 0;
  for (std::size_t it = 0; it < total; ++it) {
    double rate = 0.0;
    for (std::size_t g = 0; g < groups; ++g) {
      u[g] = rng.gamma(alpha + sum_wy[g], beta + x * sum_w[g]);
      rate += u[g] * sum_w[g];
    }
    x = rng.gamma(total_wy, rate);

    double mass = 0.0;
    for (double ug : u) mass += x * ug;
    const double z = rng.gamma(static_cast<double>(groups) * alpha, beta * mass);
    for (double& ug : u) ug = x * ug * z;
    x = 1.0 / z;

    if (it >= burn && (it - burn) % cfg.thin == 0) {
      theta[0] = std::log(x);
      for (std::size_t g = 0; g < groups; ++g) {
        theta[static_cast<Eigen::Index>(g) + 1] = std::log(u[g]);
      }
      visit(kept++, theta);
    }
  }
  return {"gibbs", 1.0, 0.0, total};
}

ChainStats run_metropolis(const Model& model, const Dataset& data, const WeightVector& w,
                          const ChainConfig& cfg, const DrawVisitor& visit) {
  Vector theta = cfg.init ? *cfg.init : model.initial_point(data);
  require(static_cast<std::size_t>(theta.size()) == model.dim(), "init has the wrong dimension",
          ErrorKind::dimension_mismatch);
  double logp = weighted_log_posterior(model, data, w, theta);
  require(std::isfinite(logp), "Metropolis start point has non-finite log posterior",
          ErrorKind::numerical);
  require(cfg.mh_step_scale > 0.0, "mh_step_scale must be > 0");

  Rng rng(cfg.seed, cfg.stream);
  const double target = model.dim() == 1 ? 0.44 : 0.23;
  double log_step = std::log(cfg.mh_step_scale);
  const std::size_t burn = cfg.burn_in_or_default();
  const std::size_t total = burn + cfg.draws * cfg.thin;
  std::size_t kept = 0;
  std::size_t accepted_after_burn = 0;
  Vector proposal(theta.size());
  for (std::size_t it = 0; it < total; ++it) {
    const double step = std::exp(log_step);
    for (Eigen::Index i = 0; i < theta.size(); ++i) proposal[i] = theta[i] + step * rng.normal();
    const double logp_new = weighted_log_posterior(model, data, w, proposal);
    const double log_u = std::log(rng.uniform());
    const bool accept = std::isfinite(logp_new) && log_u < logp_new - logp;
    if (accept) {
      theta = proposal;
      logp = logp_new;
    }
    if (it < burn) {
      if (cfg.mh_adapt) {
        const double gain = std::pow(static_cast<double>(it) + 1.0, -0.6);
        log_step += gain * ((accept ? 1.0 : 0.0) - target);
      }
    } else {
      if (accept) ++accepted_after_burn;
      if ((it - burn) % cfg.thin == 0) visit(kept++, theta);
    }
  }
  const double rate =
      static_cast<double>(accepted_after_burn) / static_cast<double>(cfg.draws * cfg.thin);
  if (rate < 0.05 || rate > 0.95) {
    std::ostringstream msg;
    msg << "Metropolis acceptance rate " << rate << " outside [0.05, 0.95] after adaptation";
    warn(msg.str());
  }
  return {"metropolis", rate, std::exp(log_step), total};
}

}  // namespace

ChainStats run_chain(const Model& model, const Dataset& data, const WeightVector& w,
                     const ChainConfig& cfg, const DrawVisitor& visit) {
  check_chain_inputs(model, data, w, cfg);
  switch (resolve_sampler(model, cfg.kind)) {
    case SamplerKind::exact: return run_exact(model, data, w, cfg, visit);
    case SamplerKind::gibbs: return run_gibbs(model, data, w, cfg, visit);
    case SamplerKind::metropolis: return run_metropolis(model, data, w, cfg, visit);
    case SamplerKind::automatic: break;
  }
  fail(ErrorKind::unsupported, "unresolved sampler kind");
}

PosteriorSample sample_posterior(const Model& model, const Dataset& data, const WeightVector& w,
                                 const ChainConfig& cfg) {
  PosteriorSample sample;
  const auto m_draws = static_cast<Eigen::Index>(cfg.draws);
  sample.draws.resize(m_draws, static_cast<Eigen::Index>(model.dim()));
  sample.g_values.resize(m_draws, static_cast<Eigen::Index>(model.g_dim()));
  const ChainStats stats = run_chain(model, data, w, cfg, [&](std::size_t m, const Vector& theta) {
    const auto row = static_cast<Eigen::Index>(m);
    sample.draws.row(row) = theta.transpose();
    sample.g_values.row(row) = model.g(theta).transpose();
  });
  if (cfg.keep_loglik) sample.loglik = log_lik_matrix(model, data, sample.draws);
  sample.ess = ess_columns(sample.draws);
  sample.meta.model = model.name();
  sample.meta.sampler = stats.sampler;
  sample.meta.seed = cfg.seed;
  sample.meta.unit_weights = (w.array() == 1.0).all();
  sample.meta.acceptance_rate = stats.acceptance_rate;
  sample.meta.step_scale = stats.step_scale;
  sample.validate();
  return sample;
}

Vector posterior_mean_g(const Model& model, const Dataset& data, const WeightVector& w,
                        const ChainConfig& cfg, ChainStats* stats) {
  Vector sum = Vector::Zero(static_cast<Eigen::Index>(model.g_dim()));
  const ChainStats s = run_chain(model, data, w, cfg,
                                 [&](std::size_t, const Vector& theta) { sum += model.g(theta); });
  if (stats != nullptr) *stats = s;
  Vector mean = sum / static_cast<double>(cfg.draws);
  require(mean.allFinite(), "non-finite posterior mean", ErrorKind::numerical);
  return mean;
}

double ess(std::span<const double> chain) {
  const std::size_t m = chain.size();
  require(m >= 10, "ESS needs a chain of length >= 10");
  double mean = 0.0;
  for (double v : chain) mean += v;
  mean /= static_cast<double>(m);
  auto autocov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < m; ++i) s += (chain[i] - mean) * (chain[i + lag] - mean);
    return s / static_cast<double>(m);
  };
  const double c0 = autocov(0);
  if (!(c0 > 0.0)) return static_cast<double>(m);

  // tau = -1 + 2 * sum_k (rho_{2k} + rho_{2k+1}), truncated at the first
  // non-positive pair sum.
  double pair_total = 0.0;
  for (std::size_t k = 0; 2 * k + 1 < m; ++k) {
    const double pair = (autocov(2 * k) + autocov(2 * k + 1)) / c0;
    if (pair <= 0.0) break;
    pair_total += pair;
  }
  const double tau = -1.0 + 2.0 * pair_total;
  const double value = static_cast<double>(m) / std::max(tau, 1e-12);
  return std::min(value, static_cast<double>(m));
}

Vector ess_columns(const Matrix& chain) {
  Vector out(chain.cols());
  std::vector<double> column(static_cast<std::size_t>(chain.rows()));
  for (Eigen::Index j = 0; j < chain.cols(); ++j) {
    for (Eigen::Index i = 0; i < chain.rows(); ++i) column[static_cast<std::size_t>(i)] = chain(i, j);
    out[j] = chain.rows() >= 10 ? ess(column) : static_cast<double>(chain.rows());
  }
  return out;
}

double autocorr_time(std::span<const double> chain) {
  return static_cast<double>(chain.size()) / ess(chain);
}

MapFit map_optimize(const Model& model, const Dataset& data, const MapOptions& options) {
  check_compatible(model, data);
  const double n_units = static_cast<double>(data.size());
  const Eigen::Index d = static_cast<Eigen::Index>(model.dim());

  auto objective = [&](const Vector& theta) {
    const double lp = model.log_prior(theta);
    if (!std::isfinite(lp)) return -std::numeric_limits<double>::infinity();
    double total = lp;
    for (std::size_t n = 0; n < data.size(); ++n) total += model.log_lik(data.unit(n), theta);
    return std::isfinite(total) ? total / n_units : -std::numeric_limits<double>::infinity();
  };
  auto gradient = [&](const Vector& theta) {
    Vector grad = model.prior_gradient(theta);
    for (std::size_t n = 0; n < data.size(); ++n) grad += model.score(data.unit(n), theta);
    return Vector(grad / n_units);
  };
  auto hessian = [&](const Vector& theta) {
    Matrix hess = model.prior_hessian(theta);
    for (std::size_t n = 0; n < data.size(); ++n) hess += model.hessian(data.unit(n), theta);
    return Matrix(hess / n_units);
  };

  MapFit fit;
  Vector theta = options.init ? *options.init : model.initial_point(data);
  require(theta.size() == d, "init has the wrong dimension", ErrorKind::dimension_mismatch);
  double value = objective(theta);
  require(std::isfinite(value), "MAP objective is not finite at the start point",
          ErrorKind::numerical);
  fit.objective_trace.push_back(value);

  Vector grad = gradient(theta);
  for (std::size_t iter = 0; iter < options.max_iters; ++iter) {
    if (grad.norm() <= options.grad_tol * (1.0 + std::fabs(value))) {
      fit.converged = true;
      break;
    }
    const Matrix neg_hess = -hessian(theta);
    // Newton direction; shift toward steepest ascent when -H is not PD.
    Vector direction;
    double shift = 0.0;
    for (int attempt = 0; attempt < 60; ++attempt) {
      Eigen::LLT<Matrix> llt(neg_hess + shift * Matrix::Identity(d, d));
      if (llt.info() == Eigen::Success) {
        direction = llt.solve(grad);
        if (direction.allFinite()) break;
      }
      shift = shift == 0.0 ? 1e-8 * std::max(1.0, neg_hess.diagonal().cwiseAbs().maxCoeff())
                           : shift * 10.0;
      direction.resize(0);
    }
    if (direction.size() == 0) break;

    const double slope = grad.dot(direction);
    double t = 1.0;
    double candidate_value = -std::numeric_limits<double>::infinity();
    Vector candidate;
    while (t > 1e-14) {
      candidate = theta + t * direction;
      candidate_value = objective(candidate);
      if (std::isfinite(candidate_value) && candidate_value >= value + 1e-4 * t * slope) break;
      t *= 0.5;
    }
    if (!(t > 1e-14) || candidate_value < value) break;
    theta = candidate;
    value = candidate_value;
    grad = gradient(theta);
    fit.objective_trace.push_back(value);
    ++fit.newton_iters;
  }
  if (!fit.converged && grad.norm() <= options.grad_tol * (1.0 + std::fabs(value))) {
    fit.converged = true;
  }

  fit.theta_hat = theta;
  fit.objective = value;
  fit.grad_norm = grad.norm();

  Matrix info = Matrix::Zero(d, d);
  Matrix scores(static_cast<Eigen::Index>(data.size()), d);
  for (std::size_t n = 0; n < data.size(); ++n) {
    info -= model.hessian(data.unit(n), theta);
    scores.row(static_cast<Eigen::Index>(n)) = model.score(data.unit(n), theta).transpose();
  }
  info /= n_units;
  info = 0.5 * (info + info.transpose());
  const Matrix centered = scores.rowwise() - scores.colwise().mean();
  fit.score_cov_hat = centered.transpose() * centered / n_units;
  fit.info_hat = info;

  Eigen::SelfAdjointEigenSolver<Matrix> eig(info, Eigen::EigenvaluesOnly);
  const double max_ev = eig.eigenvalues().maxCoeff();
  const double min_ev = eig.eigenvalues().minCoeff();
  if (!(max_ev > 0.0) || min_ev <= 1e-10 * max_ev) {
    fail(ErrorKind::numerical,
         "singular fit: information matrix min eigenvalue <= 1e-10 x max eigenvalue");
  }
  return fit;
}

}  // namespace ijcov
