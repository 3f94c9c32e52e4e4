#include "ijcov/model.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace ijcov {

Dataset::Dataset(std::vector<std::string> columns, std::vector<double> values)
    : columns_(std::move(columns)), values_(std::move(values)) {
  require(!columns_.empty(), "dataset needs at least one column");
  require(values_.size() % columns_.size() == 0,
          "dataset values are not a whole number of rows", ErrorKind::dimension_mismatch);
  require(size() >= 2, "dataset needs N >= 2 units");
}

Dataset Dataset::select(std::span<const std::size_t> rows) const {
  std::vector<double> out;
  out.reserve(rows.size() * width());
  for (std::size_t r : rows) {
    require(r < size(), "row index out of range");
    auto u = unit(r);
    out.insert(out.end(), u.begin(), u.end());
  }
  return Dataset(columns_, std::move(out));
}

namespace fd {
namespace {

double step_for(double x, double rel) { return rel * std::max(1.0, std::fabs(x)); }

}  // namespace

Vector gradient(const std::function<double(const Vector&)>& f, const Vector& x) {
  Vector grad(x.size());
  Vector xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = step_for(x[i], 1e-6);
    xp[i] = x[i] + h;
    const double fp = f(xp);
    xp[i] = x[i] - h;
    const double fm = f(xp);
    xp[i] = x[i];
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

Matrix hessian(const std::function<double(const Vector&)>& f, const Vector& x) {
  const Eigen::Index d = x.size();
  Matrix hess(d, d);
  Vector xp = x;
  const double f0 = f(x);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double hi = step_for(x[i], 1e-4);
    xp[i] = x[i] + hi;
    const double fp = f(xp);
    xp[i] = x[i] - hi;
    const double fm = f(xp);
    xp[i] = x[i];
    hess(i, i) = (fp - 2.0 * f0 + fm) / (hi * hi);
    for (Eigen::Index j = 0; j < i; ++j) {
      const double hj = step_for(x[j], 1e-4);
      auto eval = [&](double si, double sj) {
        xp[i] = x[i] + si * hi;
        xp[j] = x[j] + sj * hj;
        const double v = f(xp);
        xp[i] = x[i];
        xp[j] = x[j];
        return v;
      };
      const double v = (eval(1, 1) - eval(1, -1) - eval(-1, 1) + eval(-1, -1)) / (4.0 * hi * hj);
      hess(i, j) = v;
      hess(j, i) = v;
    }
  }
  return hess;
}

Matrix jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x) {
  const Vector f0 = f(x);
  Matrix jac(f0.size(), x.size());
  Vector xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = step_for(x[i], 1e-6);
    xp[i] = x[i] + h;
    const Vector fp = f(xp);
    xp[i] = x[i] - h;
    const Vector fm = f(xp);
    xp[i] = x[i];
    jac.col(i) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

}  // namespace fd

Vector Model::score(std::span<const double> unit, const Vector& theta) const {
  return fd::gradient([&](const Vector& t) { return log_lik(unit, t); }, theta);
}

Matrix Model::hessian(std::span<const double> unit, const Vector& theta) const {
  return fd::hessian([&](const Vector& t) { return log_lik(unit, t); }, theta);
}

Vector Model::prior_gradient(const Vector& theta) const {
  return fd::gradient([&](const Vector& t) { return log_prior(t); }, theta);
}

Matrix Model::prior_hessian(const Vector& theta) const {
  return fd::hessian([&](const Vector& t) { return log_prior(t); }, theta);
}

Matrix Model::g_jacobian(const Vector& theta) const {
  return fd::jacobian([&](const Vector& t) { return g(t); }, theta);
}

Vector Model::initial_point(const Dataset&) const {
  return Vector::Zero(static_cast<Eigen::Index>(dim()));
}

std::vector<std::string> Model::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < dim(); ++i) names.push_back("theta_" + std::to_string(i + 1));
  return names;
}

std::vector<std::string> Model::g_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < g_dim(); ++i) names.push_back("g_" + std::to_string(i + 1));
  return names;
}

FunctionModel::FunctionModel(Spec spec) : spec_(std::move(spec)) {
  require(static_cast<bool>(spec_.log_lik), "FunctionModel needs a log_lik callable");
  require(spec_.dim > 0 && spec_.g_dim > 0 && spec_.unit_width > 0,
          "FunctionModel dimensions must be positive");
  require(spec_.g || spec_.g_dim == spec_.dim, "identity g requires g_dim == dim");
}

double FunctionModel::log_lik(std::span<const double> unit, const Vector& theta) const {
  return spec_.log_lik(unit, theta);
}

double FunctionModel::log_prior(const Vector& theta) const {
  return spec_.log_prior ? spec_.log_prior(theta) : 0.0;
}

Vector FunctionModel::g(const Vector& theta) const { return spec_.g ? spec_.g(theta) : theta; }

Vector FunctionModel::initial_point(const Dataset& data) const {
  if (spec_.init.size() == static_cast<Eigen::Index>(spec_.dim)) return spec_.init;
  return Model::initial_point(data);
}

void check_compatible(const Model& model, const Dataset& data) {
  if (data.width() != model.unit_width()) {
    std::ostringstream msg;
    msg << "model '" << model.name() << "' expects " << model.unit_width()
        << " column(s) per unit, dataset has " << data.width();
    fail(ErrorKind::dimension_mismatch, msg.str());
  }
}

double weighted_log_posterior(const Model& model, const Dataset& data, const WeightVector& w,
                              const Vector& theta) {
  check_compatible(model, data);
  require(static_cast<std::size_t>(w.size()) == data.size(),
          "weight vector length differs from N", ErrorKind::dimension_mismatch);
  require(static_cast<std::size_t>(theta.size()) == model.dim(),
          "parameter vector length differs from model dimension", ErrorKind::dimension_mismatch);
  const double prior = model.log_prior(theta);
  if (prior == -std::numeric_limits<double>::infinity()) return prior;
  double total = prior;
  for (std::size_t n = 0; n < data.size(); ++n) {
    const double wn = w[static_cast<Eigen::Index>(n)];
    if (wn == 0.0) continue;
    const double ll = model.log_lik(data.unit(n), theta);
    if (ll == -std::numeric_limits<double>::infinity()) return ll;
    total += wn * ll;
  }
  return total;
}

Matrix log_lik_matrix(const Model& model, const Dataset& data, const Matrix& draws) {
  check_compatible(model, data);
  require(draws.rows() >= 2, "log_lik_matrix needs M >= 2 draws");
  require(static_cast<std::size_t>(draws.cols()) == model.dim(),
          "draw width differs from model dimension", ErrorKind::dimension_mismatch);
  const Eigen::Index n_units = static_cast<Eigen::Index>(data.size());
  Matrix out(draws.rows(), n_units);
  Vector theta(draws.cols());
  for (Eigen::Index m = 0; m < draws.rows(); ++m) {
    theta = draws.row(m).transpose();
    for (Eigen::Index n = 0; n < n_units; ++n) {
      const double v = model.log_lik(data.unit(static_cast<std::size_t>(n)), theta);
      if (!std::isfinite(v)) {
        std::ostringstream msg;
        msg << "non-finite log-likelihood at draw m=" << m << ", datum n=" << n;
        fail(ErrorKind::numerical, msg.str());
      }
      out(m, n) = v;
    }
  }
  return out;
}

}  // namespace ijcov
