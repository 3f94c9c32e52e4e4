#include "ijcov/mc_error.hpp"

#include "ijcov/parallel.hpp"
#include "ijcov/rng.hpp"
#include "ijcov/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

namespace ijcov {

namespace {

Matrix select_rows(const Matrix& x, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

double max_autocorr_time(const Matrix& columns) {
  double tau = 1.0;
  std::vector<double> col(static_cast<std::size_t>(columns.rows()));
  for (Eigen::Index j = 0; j < columns.cols(); ++j) {
    for (Eigen::Index i = 0; i < columns.rows(); ++i) col[static_cast<std::size_t>(i)] = columns(i, j);
    tau = std::max(tau, autocorr_time(col));
  }
  return tau;
}

double signed_ratio(double num, double denom, const char* what) {
  if (denom > 0.0) return num / denom;
  if (num == 0.0) return 0.0;
  warn(std::string(what) + ": zero denominator with nonzero difference; reporting infinity");
  return num > 0.0 ? std::numeric_limits<double>::infinity()
                   : -std::numeric_limits<double>::infinity();
}

}  // namespace

std::size_t default_block_count(const PosteriorSample& sample) {
  const std::size_t m = sample.size();
  const double tau = m >= 10 ? max_autocorr_time(sample.g_values) : 1.0;
  const auto by_tau = static_cast<std::size_t>(static_cast<double>(m) / (10.0 * tau));
  return std::min(std::max<std::size_t>(20, by_tau), m / 2);
}

SEMatrix block_bootstrap_se(std::size_t m, const RowStatistic& statistic, std::size_t blocks,
                            std::size_t reps, std::uint64_t seed, std::size_t threads,
                            double tau) {
  require(blocks >= 2, "block bootstrap needs at least 2 blocks");
  require(blocks <= m / 2, "block bootstrap: blocks > M/2 (" + std::to_string(blocks) + " > " +
                               std::to_string(m / 2) + ")");
  require(reps >= 50, "block bootstrap needs reps >= 50");
  const double block_len = static_cast<double>(m) / static_cast<double>(blocks);
  if (tau > 0.0 && block_len < 5.0 * tau) {
    std::ostringstream msg;
    msg << "block length " << block_len << " is below 5x the autocorrelation time " << tau;
    warn(msg.str());
  }
  std::vector<std::size_t> bounds(blocks + 1);
  for (std::size_t k = 0; k <= blocks; ++k) bounds[k] = k * m / blocks;

  std::vector<Matrix> stats(reps);
  parallel_for(reps, threads, [&](std::size_t r) {
    Rng rng(seed, r);
    std::vector<std::size_t> rows;
    rows.reserve(m + m / blocks + 1);
    for (std::size_t k = 0; k < blocks; ++k) {
      const std::size_t pick = rng.index(blocks);
      for (std::size_t i = bounds[pick]; i < bounds[pick + 1]; ++i) rows.push_back(i);
    }
    stats[r] = statistic(rows);
  });

  const Matrix& first = stats.front();
  Matrix sum = Matrix::Zero(first.rows(), first.cols());
  for (const Matrix& s : stats) sum += s;
  const Matrix mean = sum / static_cast<double>(reps);
  Matrix sq = Matrix::Zero(first.rows(), first.cols());
  for (const Matrix& s : stats) sq += (s - mean).cwiseAbs2();
  SEMatrix out;
  out.xi = (sq / static_cast<double>(reps - 1)).cwiseSqrt();
  out.method = "block_bootstrap";
  out.count = blocks;
  return out;
}

SEMatrix block_bootstrap_se(const PosteriorSample& sample, ChainStatistic statistic,
                            const BlockBootstrapOptions& options) {
  const std::size_t m = sample.size();
  require(m >= 4, "block bootstrap needs M >= 4 draws");
  const std::size_t blocks = options.blocks.value_or(default_block_count(sample));
  const double tau = m >= 10 ? max_autocorr_time(sample.g_values) : 0.0;
  const std::size_t n = sample.data_size();

  RowStatistic fn;
  std::string label;
  switch (statistic) {
    case ChainStatistic::bayes_cov:
      require(n > 0, "bayes_cov statistic needs the log-likelihood matrix (N unknown)");
      label = "bayes";
      fn = [&](std::span<const std::size_t> rows) {
        return Matrix(static_cast<double>(n) * sample_covariance(select_rows(sample.g_values, rows)));
      };
      break;
    case ChainStatistic::ij_cov:
      require(n > 0, "ij_cov statistic needs the log-likelihood matrix");
      label = "ij";
      fn = [&](std::span<const std::size_t> rows) {
        const Matrix psi =
            influence_scores(select_rows(sample.loglik, rows), select_rows(sample.g_values, rows));
        return sample_covariance(psi);
      };
      break;
    case ChainStatistic::g_mean:
      label = "g_mean";
      fn = [&](std::span<const std::size_t> rows) {
        return Matrix(select_rows(sample.g_values, rows).colwise().mean().transpose());
      };
      break;
  }
  SEMatrix out = block_bootstrap_se(m, fn, blocks, options.reps, options.seed, options.threads, tau);
  out.method = label + "_block_bootstrap";
  return out;
}

SEMatrix delta_method_boot_se(const Matrix& replicate_means, std::size_t n) {
  const Eigen::Index b = replicate_means.rows();
  require(b >= 10, "delta-method bootstrap SE needs B >= 10 replicates");
  const Eigen::Index q = replicate_means.cols();
  const Matrix t = std::sqrt(static_cast<double>(n)) * replicate_means;
  SEMatrix out;
  out.xi = Matrix::Zero(q, q);
  Matrix u(b, 3);
  for (Eigen::Index i = 0; i < q; ++i) {
    for (Eigen::Index j = i; j < q; ++j) {
      u.col(0) = t.col(i).cwiseProduct(t.col(j));
      u.col(1) = t.col(i);
      u.col(2) = t.col(j);
      const Matrix c = sample_covariance(u, 1);
      const Eigen::Vector3d grad(1.0, -t.col(j).mean(), -t.col(i).mean());
      const double var = std::max(0.0, grad.dot(c * grad)) / static_cast<double>(b);
      out.xi(i, j) = out.xi(j, i) = std::sqrt(var);
    }
  }
  out.method = "delta_method";
  out.count = static_cast<std::size_t>(b);
  return out;
}

Matrix z_matrix(const CovEstimate& a, const CovEstimate& b) {
  require(a.se.has_value() && b.se.has_value(), "Z matrix needs standard errors on both inputs");
  require(a.v.rows() == b.v.rows() && a.v.cols() == b.v.cols(), "Z matrix: shape mismatch",
          ErrorKind::dimension_mismatch);
  Matrix z(a.v.rows(), a.v.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const double sa = (*a.se)(i, j);
      const double sb = (*b.se)(i, j);
      z(i, j) = signed_ratio(a.v(i, j) - b.v(i, j), std::sqrt(sa * sa + sb * sb), "Z");
    }
  }
  return z;
}

Matrix delta_metrics(const CovEstimate& x, const CovEstimate& boot) {
  require(boot.se.has_value(), "delta metrics need the bootstrap standard errors");
  require(x.v.rows() == boot.v.rows() && x.v.cols() == boot.v.cols(),
          "delta metrics: shape mismatch", ErrorKind::dimension_mismatch);
  Matrix d(x.v.rows(), x.v.cols());
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    for (Eigen::Index j = 0; j < d.cols(); ++j) {
      d(i, j) = signed_ratio(x.v(i, j) - boot.v(i, j), std::abs(boot.v(i, j)) + (*boot.se)(i, j),
                             "Delta");
    }
  }
  return d;
}

}  // namespace ijcov
