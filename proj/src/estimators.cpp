#include "ijcov/estimators.hpp"

#include "ijcov/parallel.hpp"
#include "ijcov/rng.hpp"

#include <cmath>
#include <vector>

namespace ijcov {

std::string method_name(CovEstimate::Method method) {
  switch (method) {
    case CovEstimate::Method::bayes: return "bayes";
    case CovEstimate::Method::ij: return "ij";
    case CovEstimate::Method::boot: return "boot";
    case CovEstimate::Method::sandwich: return "sandwich";
    case CovEstimate::Method::sim: return "sim";
  }
  return "unknown";
}

CovEstimate::Method parse_method(const std::string& name) {
  for (auto m : {CovEstimate::Method::bayes, CovEstimate::Method::ij, CovEstimate::Method::boot,
                 CovEstimate::Method::sandwich, CovEstimate::Method::sim}) {
    if (method_name(m) == name) return m;
  }
  fail(ErrorKind::parse, "unknown estimate method '" + name + "'");
}

Matrix sample_covariance(const Matrix& x, int ddof) {
  const double denom = static_cast<double>(x.rows() - ddof);
  require(denom > 0.0, "too few rows for a sample covariance");
  const Matrix centered = x.rowwise() - x.colwise().mean();
  Matrix cov = centered.transpose() * centered / denom;
  return 0.5 * (cov + cov.transpose());
}

InfluenceMatrix influence_scores(const Matrix& loglik, const Matrix& g_values) {
  require(loglik.rows() == g_values.rows(), "loglik and g_values row counts differ",
          ErrorKind::dimension_mismatch);
  require(loglik.rows() >= 2, "influence scores need M >= 2 draws");
  const double n = static_cast<double>(loglik.cols());
  const double m = static_cast<double>(loglik.rows());
  const Matrix l_centered = loglik.rowwise() - loglik.colwise().mean();
  const Matrix g_centered = g_values.rowwise() - g_values.colwise().mean();
  return n * (l_centered.transpose() * g_centered) / (m - 1.0);
}

InfluenceMatrix influence_scores(const PosteriorSample& sample) {
  require(sample.loglik.size() > 0, "posterior sample has no log-likelihood matrix");
  return influence_scores(sample.loglik, sample.g_values);
}

void check_psd(const Matrix& v, const std::string& label) {
  require(v.rows() == v.cols(), label + ": covariance is not square", ErrorKind::numerical);
  require(v.allFinite(), label + ": covariance has non-finite entries", ErrorKind::numerical);
  const double scale = std::max(1.0, v.cwiseAbs().maxCoeff());
  require((v - v.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale,
          label + ": covariance is not symmetric", ErrorKind::numerical);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(v, Eigen::EigenvaluesOnly);
  require(eig.eigenvalues().minCoeff() >= -1e-10 * std::max(v.trace(), 1e-300),
          label + ": covariance is not positive semidefinite", ErrorKind::numerical);
}

CovEstimate ij_covariance(const InfluenceMatrix& psi) {
  require(psi.rows() >= 2, "IJ covariance needs N >= 2");
  CovEstimate out;
  out.v = sample_covariance(psi, 1);
  out.method = CovEstimate::Method::ij;
  check_psd(out.v, "ij");
  return out;
}

CovEstimate bayes_covariance(const Matrix& g_values, std::size_t n) {
  require(g_values.rows() >= 2, "Bayes covariance needs M >= 2 draws");
  CovEstimate out;
  out.v = static_cast<double>(n) * sample_covariance(g_values, 1);
  out.method = CovEstimate::Method::bayes;
  out.sample_size = static_cast<std::size_t>(g_values.rows());
  check_psd(out.v, "bayes");
  return out;
}

CovEstimate bayes_covariance(const PosteriorSample& sample) {
  require(sample.loglik.size() > 0, "posterior sample has no log-likelihood matrix (N unknown)");
  return bayes_covariance(sample.g_values, sample.data_size());
}

CovEstimate sandwich_covariance(const MapFit& fit, const Model& model) {
  require(fit.converged, "sandwich covariance needs a converged MAP fit", ErrorKind::numerical);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(fit.info_hat);
  const Vector ev = eig.eigenvalues();
  require(ev.maxCoeff() > 0.0 && ev.minCoeff() > 1e-10 * ev.maxCoeff(),
          "singular fit: information matrix is not invertible", ErrorKind::numerical);
  const Matrix info_inv = eig.eigenvectors() * ev.cwiseInverse().asDiagonal() *
                          eig.eigenvectors().transpose();
  const Matrix jac = model.g_jacobian(fit.theta_hat);
  const Matrix v = jac * info_inv * fit.score_cov_hat * info_inv * jac.transpose();
  CovEstimate out;
  out.v = 0.5 * (v + v.transpose());
  out.method = CovEstimate::Method::sandwich;
  out.sample_size = 0;
  return out;
}

WeightVector multinomial_weights(std::size_t n, std::uint64_t seed, std::uint64_t stream) {
  Rng rng(seed, stream);
  WeightVector w = Vector::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) w[static_cast<Eigen::Index>(rng.index(n))] += 1.0;
  return w;
}

namespace {

// Weights use even streams and chains odd ones, so the two never collide.
std::uint64_t weight_stream(std::size_t b) { return 2 * static_cast<std::uint64_t>(b) + 2; }
std::uint64_t chain_stream(std::size_t b) { return 2 * static_cast<std::uint64_t>(b) + 3; }

}  // namespace

BootstrapResult bootstrap_covariance(std::size_t n, std::size_t replicates, std::uint64_t seed,
                                     const ReplicateFn& replicate, std::size_t threads) {
  require(replicates >= 2, "bootstrap needs B >= 2 replicates");
  require(n >= 2, "bootstrap needs N >= 2");
  std::vector<Vector> means(replicates);
  parallel_for(replicates, threads, [&](std::size_t b) {
    try {
      const WeightVector w = multinomial_weights(n, seed, weight_stream(b));
      means[b] = replicate(w, b);
      require(means[b].allFinite(), "non-finite posterior mean", ErrorKind::numerical);
    } catch (const Error& e) {
      fail(e.kind(), "bootstrap replicate " + std::to_string(b) + ": " + e.what());
    }
  });
  const auto q = means.front().size();
  BootstrapResult out;
  out.replicate_means.resize(static_cast<Eigen::Index>(replicates), q);
  for (std::size_t b = 0; b < replicates; ++b) {
    require(means[b].size() == q, "replicate means differ in length",
            ErrorKind::dimension_mismatch);
    out.replicate_means.row(static_cast<Eigen::Index>(b)) = means[b].transpose();
  }
  const double root_n = std::sqrt(static_cast<double>(n));
  out.estimate.v = sample_covariance(root_n * out.replicate_means, 1);
  out.estimate.method = CovEstimate::Method::boot;
  out.estimate.sample_size = replicates;
  check_psd(out.estimate.v, "boot");
  return out;
}

BootstrapResult bootstrap_covariance(const Model& model, const Dataset& data,
                                     const ChainConfig& cfg, std::size_t replicates,
                                     std::uint64_t seed, std::size_t threads) {
  ChainConfig rep_cfg = cfg;
  rep_cfg.keep_loglik = false;
  rep_cfg.seed = seed;
  if (resolve_sampler(model, cfg.kind) == SamplerKind::metropolis && cfg.mh_adapt) {
    ChainStats stats;
    posterior_mean_g(model, data, unit_weights(data.size()), cfg, &stats);
    rep_cfg.mh_step_scale = stats.step_scale;
    rep_cfg.mh_adapt = false;
  }
  return bootstrap_covariance(
      data.size(), replicates, seed,
      [&](const WeightVector& w, std::size_t b) {
        ChainConfig local = rep_cfg;
        local.stream = chain_stream(b);
        return posterior_mean_g(model, data, w, local);
      },
      threads);
}

CovEstimate exhaustive_bootstrap_covariance(std::size_t n, const ReplicateFn& replicate) {
  require(n >= 2 && n <= 8, "exhaustive bootstrap supports 2 <= N <= 8");
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= n;
  std::vector<std::size_t> digits(n, 0);
  Matrix means;
  for (std::size_t r = 0; r < total; ++r) {
    WeightVector w = Vector::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t d : digits) w[static_cast<Eigen::Index>(d)] += 1.0;
    const Vector mean = replicate(w, r);
    if (r == 0) means.resize(static_cast<Eigen::Index>(total), mean.size());
    means.row(static_cast<Eigen::Index>(r)) = mean.transpose();
    for (std::size_t i = 0; i < n; ++i) {
      if (++digits[i] < n) break;
      digits[i] = 0;
    }
  }
  CovEstimate out;
  out.v = static_cast<double>(n) * sample_covariance(means, 0);
  out.method = CovEstimate::Method::boot;
  out.sample_size = total;
  return out;
}

}  // namespace ijcov
