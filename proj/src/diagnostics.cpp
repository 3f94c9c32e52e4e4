#include "ijcov/diagnostics.hpp"

#include "ijcov/samplers.hpp"
#include "ijcov/special.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace ijcov {

std::optional<ConditionalMoments> GroupedExpFamilyView::conditional_moments(const Vector&,
                                                                            std::size_t) const {
  return std::nullopt;
}

std::optional<Vector> GroupedExpFamilyView::conditional_eta_draw(const Vector&, std::size_t,
                                                                 Rng&) const {
  return std::nullopt;
}

PoissonREView::PoissonREView(const PoissonGammaREModel& model, const Dataset& data)
    : model_(model), sum_y_(model.groups(), 0.0), count_(model.groups(), 0.0) {
  model.validate(data);
  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto unit = data.unit(n);
    const std::size_t g = model.group_of(unit);
    sum_y_[g] += unit[0];
    count_[g] += 1.0;
  }
}

Vector PoissonREView::stat(std::span<const double> unit) const {
  Vector y(2);
  y << unit[0], 1.0;
  return y;
}

Vector PoissonREView::eta(std::size_t g, const Vector& theta) const {
  const double s = theta[0] + theta[static_cast<Eigen::Index>(g) + 1];
  Vector e(2);
  e << s, -std::exp(s);
  return e;
}

ConditionalMoments PoissonREView::moments_from_gamma(double gamma, double a, double b) {
  const double x = std::exp(gamma);
  ConditionalMoments out;
  out.mu.resize(2);
  out.mu << gamma + digamma(a) - std::log(b), -x * a / b;
  out.j.resize(2, 2);
  out.j << trigamma(a), -x / b, -x / b, x * x * a / (b * b);
  return out;
}

std::optional<ConditionalMoments> PoissonREView::conditional_moments(const Vector& theta,
                                                                    std::size_t g) const {
  const double a = model_.alpha() + sum_y_[g];
  const double b = model_.beta() + std::exp(theta[0]) * count_[g];
  return moments_from_gamma(theta[0], a, b);
}

std::optional<Vector> PoissonREView::conditional_eta_draw(const Vector& theta, std::size_t g,
                                                          Rng& rng) const {
  const double a = model_.alpha() + sum_y_[g];
  const double b = model_.beta() + std::exp(theta[0]) * count_[g];
  Vector local = theta;
  local[static_cast<Eigen::Index>(g) + 1] = std::log(rng.gamma(a, b));
  return eta(g, local);
}

GroupMoments empirical_group_moments(const Dataset& data, const GroupedExpFamilyView& view) {
  const std::size_t groups = view.groups();
  const auto d = static_cast<Eigen::Index>(view.ydim());
  std::vector<Vector> sum(groups, Vector::Zero(d));
  std::vector<Matrix> sum_sq(groups, Matrix::Zero(d, d));
  std::vector<std::size_t> count(groups, 0);
  for (std::size_t n = 0; n < data.size(); ++n) {
    const auto unit = data.unit(n);
    const std::size_t g = view.group_of(unit);
    const Vector y = view.stat(unit);
    sum[g] += y;
    sum_sq[g] += y * y.transpose();
    ++count[g];
  }
  GroupMoments out;
  std::size_t empty = 0;
  for (std::size_t g = 0; g < groups; ++g) {
    if (count[g] == 0) {
      ++empty;
      continue;
    }
    const double c = static_cast<double>(count[g]);
    out.group.push_back(g);
    out.m.push_back(sum[g] / c);
    out.s.push_back(sum_sq[g] / c);
    out.count.push_back(count[g]);
  }
  require(!out.group.empty(), "all groups are empty");
  if (empty > 0) warn(std::to_string(empty) + " empty group(s) dropped from the diagnostics");
  return out;
}

MlBlocks ml_matrices_from_chain(const PosteriorSample& sample, const Dataset& data,
                                const GroupedExpFamilyView& view, const MlOptions& options) {
  require(sample.draws.rows() >= 2 && sample.draws.rows() == sample.g_values.rows(),
          "diagnostics need the parameter draws of the chain");
  require(options.g_column < sample.g_dim(), "g column out of range");
  const Eigen::Index m_draws = sample.draws.rows();
  const std::size_t groups = view.groups();
  const auto d = static_cast<Eigen::Index>(view.ydim());
  const double n = static_cast<double>(data.size());
  const Vector gcol = sample.g_values.col(static_cast<Eigen::Index>(options.g_column));
  const Vector gbar = gcol.array() - gcol.mean();

  const Vector first = sample.draws.row(0).transpose();
  MlPath path = options.path;
  if (path == MlPath::automatic) {
    Rng probe(options.seed, 0);
    if (view.conditional_moments(first, 0)) {
      path = MlPath::closed_form;
    } else if (view.conditional_eta_draw(first, 0, probe)) {
      path = MlPath::conditional_draws;
    } else if (options.allow_fallback) {
      path = MlPath::per_draw;
    } else {
      fail(ErrorKind::unsupported,
           "unsupported model: no closed-form conditionals, no conditional draws, and the "
           "per-draw fallback is not enabled");
    }
  }

  MlBlocks out;
  out.l.assign(groups, Matrix::Zero(d, d));
  const bool want_m = options.compute_m && path != MlPath::per_draw;
  Matrix mu_draws;
  if (want_m) mu_draws.resize(m_draws, static_cast<Eigen::Index>(groups) * d);

  switch (path) {
    case MlPath::closed_form: {
      out.path = "closed_form";
      for (Eigen::Index m = 0; m < m_draws; ++m) {
        const Vector theta = sample.draws.row(m).transpose();
        for (std::size_t g = 0; g < groups; ++g) {
          const auto cm = view.conditional_moments(theta, g);
          require(cm.has_value(), "closed-form conditional moments unavailable",
                  ErrorKind::unsupported);
          out.l[g] += gbar[m] * cm->j;
          if (want_m) mu_draws.row(m).segment(static_cast<Eigen::Index>(g) * d, d) = cm->mu.transpose();
        }
      }
      break;
    }
    case MlPath::conditional_draws: {
      out.path = "conditional_draws";
      const std::size_t k = options.conditional_draws;
      require(k >= 2, "conditional draws need at least 2 draws per chain state");
      Matrix etas(static_cast<Eigen::Index>(k), d);
      for (Eigen::Index m = 0; m < m_draws; ++m) {
        const Vector theta = sample.draws.row(m).transpose();
        Rng rng(options.seed, static_cast<std::uint64_t>(m));
        for (std::size_t g = 0; g < groups; ++g) {
          for (std::size_t i = 0; i < k; ++i) {
            const auto e = view.conditional_eta_draw(theta, g, rng);
            require(e.has_value(), "conditional draws unavailable", ErrorKind::unsupported);
            etas.row(static_cast<Eigen::Index>(i)) = e->transpose();
          }
          const Vector mean = etas.colwise().mean().transpose();
          const Matrix centered = etas.rowwise() - mean.transpose();
          out.l[g] += gbar[m] * (centered.transpose() * centered) / static_cast<double>(k - 1);
          if (want_m) mu_draws.row(m).segment(static_cast<Eigen::Index>(g) * d, d) = mean.transpose();
        }
      }
      break;
    }
    case MlPath::per_draw: {
      out.path = "per_draw";
      Matrix eta_draws(m_draws, static_cast<Eigen::Index>(groups) * d);
      for (Eigen::Index m = 0; m < m_draws; ++m) {
        const Vector theta = sample.draws.row(m).transpose();
        for (std::size_t g = 0; g < groups; ++g) {
          eta_draws.row(m).segment(static_cast<Eigen::Index>(g) * d, d) =
              view.eta(g, theta).transpose();
        }
      }
      const Matrix centered = eta_draws.rowwise() - eta_draws.colwise().mean();
      for (std::size_t g = 0; g < groups; ++g) {
        const auto block = centered.middleCols(static_cast<Eigen::Index>(g) * d, d);
        out.l[g] = block.transpose() * gbar.asDiagonal() * block;
      }
      break;
    }
    case MlPath::automatic: break;
  }
  for (Matrix& l : out.l) {
    l *= n / static_cast<double>(m_draws);
    l = 0.5 * (l + l.transpose());
  }
  if (want_m) {
    const Matrix centered = mu_draws.rowwise() - mu_draws.colwise().mean();
    out.m = (n * n / static_cast<double>(m_draws)) *
            (centered.transpose() * gbar.asDiagonal() * centered);
  }
  return out;
}

Matrix psd_sqrt(const Matrix& s) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (s + s.transpose()));
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

GroupedExpFamilyTerms kappa_and_rho(const Dataset& data, const GroupedExpFamilyView& view,
                                    const GroupMoments& moments, const std::vector<Matrix>& l) {
  require(l.size() == view.groups(), "need one L block per group", ErrorKind::dimension_mismatch);
  const std::size_t kept = moments.group.size();
  require(kept > 0, "no groups to summarise");
  const double g_count = static_cast<double>(kept);
  const double root_g = std::sqrt(g_count);
  const double n = static_cast<double>(data.size());

  std::vector<std::ptrdiff_t> slot(view.groups(), -1);
  GroupedExpFamilyTerms out;
  std::vector<double> quad(kept);
  double quad_total = 0.0;
  for (std::size_t k = 0; k < kept; ++k) {
    const std::size_t g = moments.group[k];
    slot[g] = static_cast<std::ptrdiff_t>(k);
    const Matrix& s = moments.s[k];
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-8) {
      std::ostringstream msg;
      msg << "second-moment matrix of group " << g << " is not positive semidefinite";
      fail(ErrorKind::numerical, msg.str());
    }
    const Matrix root = psd_sqrt(s);
    const double tr = (root * l[g] * root).trace();
    out.trace_contrib.push_back(tr);
    out.group.push_back(g);
    out.kappa_hat += tr / g_count;
    quad[k] = moments.m[k].dot(l[g] * moments.m[k]);
    quad_total += quad[k];
    const double c = root_g * static_cast<double>(moments.count[k]) - n / root_g;
    out.resid_t1_hat += c * c * quad[k];
  }
  out.resid_t1_hat /= n * g_count;

  // rho_nn: the datum's own group contributes (sqrt(G) y_n - m/sqrt(G)),
  // every other group contributes -m_g/sqrt(G).
  out.rho_nn.resize(static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto unit = data.unit(i);
    const std::size_t g = view.group_of(unit);
    const auto k = static_cast<std::size_t>(slot[g]);
    const Vector ytilde = root_g * view.stat(unit) - moments.m[k] / root_g;
    const double own = ytilde.dot(l[g] * ytilde);
    const double others = (quad_total - quad[k]) / g_count;
    out.rho_nn[static_cast<Eigen::Index>(i)] = (own + others) / g_count;
  }
  out.rho_nn_mean = out.rho_nn.mean();
  return out;
}

PoissonAnalytic poisson_analytic(const PoissonGammaREModel& model, const Vector& truth,
                                 std::size_t n) {
  require(static_cast<std::size_t>(truth.size()) == model.dim(), "truth has the wrong length",
          ErrorKind::dimension_mismatch);
  PoissonAnalytic pa{model.alpha(), model.beta(), truth[0],
                     static_cast<double>(n) / static_cast<double>(model.groups()), {}, {}};
  for (std::size_t g = 0; g < model.groups(); ++g) {
    const double rate = std::exp(truth[0] + truth[static_cast<Eigen::Index>(g) + 1]);
    pa.rho.push_back(rate);
    pa.v.push_back(rate);
  }
  return pa;
}

Matrix poisson_analytic_j(const PoissonAnalytic& pa, std::size_t g, double gamma) {
  const double a = pa.alpha + pa.n_over_g * pa.rho[g];
  const double b = pa.beta + pa.n_over_g * std::exp(gamma);
  return PoissonREView::moments_from_gamma(gamma, a, b).j;
}

double poisson_analytic_kappa(const PoissonAnalytic& pa, const Vector& gamma_draws,
                              const Vector& g_draws, std::size_t n) {
  require(gamma_draws.size() == g_draws.size() && gamma_draws.size() >= 2,
          "gamma and g draws must have equal length >= 2", ErrorKind::dimension_mismatch);
  const Vector gbar = g_draws.array() - g_draws.mean();
  const double scale = static_cast<double>(n) / static_cast<double>(gamma_draws.size());
  double kappa = 0.0;
  for (std::size_t g = 0; g < pa.rho.size(); ++g) {
    Matrix l = Matrix::Zero(2, 2);
    for (Eigen::Index m = 0; m < gamma_draws.size(); ++m) {
      l += gbar[m] * poisson_analytic_j(pa, g, gamma_draws[m]);
    }
    l *= scale;
    Matrix s(2, 2);
    s << pa.v[g] + pa.rho[g] * pa.rho[g], pa.rho[g], pa.rho[g], 1.0;
    const Matrix root = psd_sqrt(s);
    kappa += (root * l * root).trace();
  }
  return kappa / static_cast<double>(pa.rho.size());
}

ScalarFunction power_function(int k) {
  return {[k](double x) { return std::pow(x, k); },
          [k](double x) { return k * std::pow(x, k - 1); },
          [k](double x) { return k * (k - 1) * std::pow(x, k - 2); }};
}

namespace {

double derivative1(const ScalarFunction& phi, double x) {
  if (phi.d1) return phi.d1(x);
  const double h = 1e-5 * std::max(1.0, std::fabs(x));
  return (phi.f(x + h) - phi.f(x - h)) / (2.0 * h);
}

double derivative2(const ScalarFunction& phi, double x) {
  if (phi.d2) return phi.d2(x);
  const double h = 1e-4 * std::max(1.0, std::fabs(x));
  return (phi.f(x + h) - 2.0 * phi.f(x) + phi.f(x - h)) / (h * h);
}

double log_joint(const Model& model, const Dataset& data, double t) {
  const Vector theta = Vector::Constant(1, t);
  double total = model.log_prior(theta);
  if (!std::isfinite(total)) return -std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < data.size(); ++n) total += model.log_lik(data.unit(n), theta);
  return total;
}

// Second derivative of (1/N)[sum_n l + log prior].
double objective_d2(const Model& model, const Dataset& data, double t) {
  const Vector theta = Vector::Constant(1, t);
  double h = model.prior_hessian(theta)(0, 0);
  for (std::size_t n = 0; n < data.size(); ++n) h += model.hessian(data.unit(n), theta)(0, 0);
  return h / static_cast<double>(data.size());
}

double objective_d1(const Model& model, const Dataset& data, double t) {
  const Vector theta = Vector::Constant(1, t);
  double g = model.prior_gradient(theta)[0];
  for (std::size_t n = 0; n < data.size(); ++n) g += model.score(data.unit(n), theta)[0];
  return g / static_cast<double>(data.size());
}

}  // namespace

double quadrature_expectation(const Model& model, const Dataset& data, const ScalarFunction& phi,
                              double center, double scale, double rel_tol) {
  require(model.dim() == 1, "quadrature needs a one-dimensional model");
  require(scale > 0.0 && std::isfinite(center), "quadrature needs a finite center and scale > 0");
  const double lo = center - 14.0 * scale;
  const double hi = center + 14.0 * scale;
  const double ref = log_joint(model, data, center);
  require(std::isfinite(ref), "log posterior is not finite at the quadrature center",
          ErrorKind::numerical);
  auto weight = [&](double t) {
    const double lp = log_joint(model, data, t);
    return std::isfinite(lp) ? std::exp(lp - ref) : 0.0;
  };

  std::size_t intervals = 64;
  double h = (hi - lo) / static_cast<double>(intervals);
  double z_sum = 0.5 * (weight(lo) + weight(hi));
  double f_sum = 0.5 * (weight(lo) * phi.f(lo) + weight(hi) * phi.f(hi));
  for (std::size_t i = 1; i < intervals; ++i) {
    const double t = lo + static_cast<double>(i) * h;
    const double w = weight(t);
    z_sum += w;
    f_sum += w * phi.f(t);
  }
  double previous = f_sum / z_sum;
  for (int level = 0; level < 16; ++level) {
    for (std::size_t i = 0; i < intervals; ++i) {
      const double t = lo + (static_cast<double>(i) + 0.5) * h;
      const double w = weight(t);
      z_sum += w;
      f_sum += w * phi.f(t);
    }
    intervals *= 2;
    h *= 0.5;
    const double current = f_sum / z_sum;
    if (std::fabs(current - previous) <= rel_tol * std::max(std::fabs(current), 1e-300)) {
      return current;
    }
    previous = current;
  }
  fail(ErrorKind::numerical, "quadrature did not converge");
}

BcltResult bclt_expansion_check(const Model& model, const ScalarFunction& phi,
                                const std::vector<Dataset>& datasets) {
  require(model.dim() == 1, "expansion check needs a one-dimensional model");
  require(datasets.size() >= 2, "expansion check needs at least two sample sizes");
  BcltResult out;
  std::vector<double> ns;
  std::vector<double> rs;
  for (const Dataset& data : datasets) {
    const MapFit fit = map_optimize(model, data);
    double t = fit.theta_hat[0];
    for (int i = 0; i < 30; ++i) {
      const double step = objective_d1(model, data, t) / objective_d2(model, data, t);
      t -= step;
      if (std::fabs(step) <= 4e-16 * std::max(1.0, std::fabs(t))) break;
    }
    const double n = static_cast<double>(data.size());
    const double info = -objective_d2(model, data, t);
    require(info > 0.0, "non-positive curvature at the MAP", ErrorKind::numerical);
    const double h = 1e-3 * std::max(1.0, std::fabs(t)) / std::sqrt(n);
    const double l3 = (objective_d2(model, data, t + h) - objective_d2(model, data, t - h)) / (2 * h);
    const double fourth = 3.0 / (info * info);

    BcltPoint p;
    p.n = data.size();
    p.theta_hat = t;
    p.e_post = quadrature_expectation(model, data, phi, t, 1.0 / std::sqrt(n * info));
    p.phi_hat = phi.f(t);
    p.correction =
        (0.5 * derivative2(phi, t) / info + derivative1(phi, t) * l3 * fourth / 6.0) / n;
    p.residual = std::fabs(p.e_post - p.phi_hat - p.correction);
    require(p.residual > 0.0, "zero residual; slope undefined", ErrorKind::numerical);
    out.points.push_back(p);
    ns.push_back(n);
    rs.push_back(p.residual);
  }
  std::tie(out.slope, out.intercept) = loglog_fit(ns, rs);
  return out;
}

std::vector<Dataset> nested_poisson_datasets(const std::vector<std::size_t>& ns, double rate,
                                             std::uint64_t seed) {
  require(!ns.empty(), "need at least one sample size");
  std::size_t largest = 0;
  for (std::size_t n : ns) largest = std::max(largest, n);
  Rng rng(seed, 0);
  std::vector<double> stream(largest);
  for (double& x : stream) x = static_cast<double>(rng.poisson(rate));
  std::vector<Dataset> out;
  for (std::size_t n : ns) {
    out.emplace_back(std::vector<std::string>{"x"},
                     std::vector<double>(stream.begin(), stream.begin() + static_cast<std::ptrdiff_t>(n)));
  }
  return out;
}

std::pair<double, double> loglog_fit(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "log-log fit needs >= 2 paired points");
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const double k = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(x[i] > 0.0 && y[i] > 0.0, "log-log fit needs positive values");
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double denom = k * sxx - sx * sx;
  require(denom > 0.0, "log-log fit needs distinct x values");
  const double slope = (k * sxy - sx * sy) / denom;
  return {slope, (sy - slope * sx) / k};
}

}  // namespace ijcov
