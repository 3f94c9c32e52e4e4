#pragma once

#include "ijcov/core.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ijcov {

/// N exchangeable units, each a fixed-width row of reals whose meaning is
/// owned by the model (e.g. `x` for the normal-mean model, `y,group` for the
/// Poisson random-effects model).
class Dataset {
 public:
  Dataset(std::vector<std::string> columns, std::vector<double> values);

  std::size_t size() const { return values_.size() / columns_.size(); }
  std::size_t width() const { return columns_.size(); }
  const std::vector<std::string>& columns() const { return columns_; }
  const std::vector<double>& values() const { return values_; }

  std::span<const double> unit(std::size_t n) const {
    return {values_.data() + n * width(), width()};
  }
  double at(std::size_t n, std::size_t column) const { return values_[n * width() + column]; }

  /// Units reordered (or repeated) by `rows`; the result must still hold N >= 2.
  Dataset select(std::span<const std::size_t> rows) const;

 private:
  std::vector<std::string> columns_;
  std::vector<double> values_;
};

/// Per-datum weights of the weighted posterior; all-ones reproduces the
/// ordinary posterior, multinomial counts give a bootstrap replicate.
using WeightVector = Vector;

inline WeightVector unit_weights(std::size_t n) { return Vector::Ones(static_cast<Eigen::Index>(n)); }

/// A parametric model: per-datum log-likelihood, log prior and the quantity
/// of interest g. Evaluations must be pure so they can run concurrently.
///
/// Derivatives default to central finite differences; models with closed
/// forms override them and report `has_analytic_derivatives()`.
/// Parameter domains are encoded by returning -infinity outside them.
class Model {
 public:
  virtual ~Model() = default;

  virtual std::string name() const = 0;
  virtual std::size_t dim() const = 0;
  /// Leading entries of theta that are global (fixed-dimension) parameters.
  virtual std::size_t global_dim() const { return dim(); }
  virtual std::size_t g_dim() const = 0;
  /// Number of dataset columns one unit occupies.
  virtual std::size_t unit_width() const = 0;

  virtual double log_lik(std::span<const double> unit, const Vector& theta) const = 0;
  virtual double log_prior(const Vector& theta) const = 0;
  virtual Vector g(const Vector& theta) const = 0;

  virtual Vector score(std::span<const double> unit, const Vector& theta) const;
  virtual Matrix hessian(std::span<const double> unit, const Vector& theta) const;
  virtual Vector prior_gradient(const Vector& theta) const;
  virtual Matrix prior_hessian(const Vector& theta) const;
  virtual Matrix g_jacobian(const Vector& theta) const;
  virtual bool has_analytic_derivatives() const { return false; }

  /// Starting point for optimizers and samplers when the caller gives none.
  virtual Vector initial_point(const Dataset& data) const;

  virtual std::vector<std::string> parameter_names() const;
  virtual std::vector<std::string> g_names() const;
};

/// Model assembled from callables; handy for custom likelihoods and tests.
class FunctionModel final : public Model {
 public:
  struct Spec {
    std::string name = "function";
    std::size_t dim = 1;
    std::size_t g_dim = 1;
    std::size_t unit_width = 1;
    std::function<double(std::span<const double>, const Vector&)> log_lik;
    std::function<double(const Vector&)> log_prior;  // empty = flat
    std::function<Vector(const Vector&)> g;          // empty = identity
    Vector init;                                     // empty = zeros
  };

  explicit FunctionModel(Spec spec);

  std::string name() const override { return spec_.name; }
  std::size_t dim() const override { return spec_.dim; }
  std::size_t g_dim() const override { return spec_.g_dim; }
  std::size_t unit_width() const override { return spec_.unit_width; }
  double log_lik(std::span<const double> unit, const Vector& theta) const override;
  double log_prior(const Vector& theta) const override;
  Vector g(const Vector& theta) const override;
  Vector initial_point(const Dataset& data) const override;

 private:
  Spec spec_;
};

/// Sum_n w_n l(x_n | theta) + log pi(theta).
double weighted_log_posterior(const Model& model, const Dataset& data, const WeightVector& w,
                              const Vector& theta);

/// M x N matrix with entry (m, n) = l(x_n | draws.row(m)).
/// Throws naming (m, n) when an entry is not finite.
Matrix log_lik_matrix(const Model& model, const Dataset& data, const Matrix& draws);

/// Checks that `data` and `theta` have the widths `model` expects.
void check_compatible(const Model& model, const Dataset& data);

namespace fd {

Vector gradient(const std::function<double(const Vector&)>& f, const Vector& x);
Matrix hessian(const std::function<double(const Vector&)>& f, const Vector& x);
Matrix jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x);

}  // namespace fd

}  // namespace ijcov
