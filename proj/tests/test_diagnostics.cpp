#include "ijcov/diagnostics.hpp"
#include "ijcov/models.hpp"
#include "ijcov/samplers.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

using namespace ijcov;

namespace {

PosteriorSample gibbs_chain(const PoissonGammaREModel& model, const Dataset& data,
                            std::size_t draws, std::uint64_t seed) {
  ChainConfig cfg;
  cfg.draws = draws;
  cfg.seed = seed;
  cfg.keep_loglik = false;
  return sample_posterior(model, data, unit_weights(data.size()), cfg);
}

Dataset poisson_data(std::vector<std::pair<double, double>> rows) {
  std::vector<double> v;
  for (auto [y, g] : rows) {
    v.push_back(y);
    v.push_back(g);
  }
  return Dataset({"y", "group"}, std::move(v));
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

// A view with neither closed-form conditionals nor conditional draws.
class BareView final : public GroupedExpFamilyView {
 public:
  explicit BareView(const PoissonGammaREModel& model) : model_(model) {}
  std::size_t groups() const override { return model_.groups(); }
  std::size_t ydim() const override { return 2; }
  std::size_t group_of(std::span<const double> unit) const override { return model_.group_of(unit); }
  Vector stat(std::span<const double> unit) const override {
    Vector y(2);
    y << unit[0], 1.0;
    return y;
  }
  Vector eta(std::size_t g, const Vector& theta) const override {
    const double s = theta[0] + theta[static_cast<Eigen::Index>(g) + 1];
    Vector e(2);
    e << s, -std::exp(s);
    return e;
  }

 private:
  const PoissonGammaREModel& model_;
};

}  // namespace

TEST_CASE("poisson view reproduces the log-likelihood") {
  SimSpec spec;
  spec.n = 80;
  spec.groups = 6;
  spec.seed = 3;
  const auto sim = simulate_poisson_re(spec);
  PoissonGammaREModel model(6, 25.0, 2.5);
  PoissonREView view(model, sim.data);
  Rng rng(4);
  for (int rep = 0; rep < 5; ++rep) {
    Vector theta(7);
    for (Eigen::Index i = 0; i < 7; ++i) theta[i] = 0.5 * rng.normal() + 1.0;
    for (std::size_t n = 0; n < sim.data.size(); ++n) {
      const auto unit = sim.data.unit(n);
      const double via_view = view.stat(unit).dot(view.eta(view.group_of(unit), theta));
      CHECK(std::abs(via_view - model.log_lik(unit, theta)) < 1e-12);
    }
  }
}

TEST_CASE("closed-form conditional moments") {
  const ConditionalMoments cm = PoissonREView::moments_from_gamma(0.0, 1.0, 1.0);
  CHECK(cm.mu[0] == doctest::Approx(-0.5772156649015329).epsilon(1e-13));
  CHECK(cm.mu[1] == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(cm.j(0, 0) == doctest::Approx(std::numbers::pi * std::numbers::pi / 6.0).epsilon(1e-13));
  CHECK(cm.j(0, 1) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(cm.j(1, 1) == doctest::Approx(1.0).epsilon(1e-14));

  // Monte Carlo check of the log-gamma moments.
  Rng rng(8);
  const double gamma = 0.4, a = 7.0, b = 3.0;
  const int k = 400000;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  Eigen::Matrix2d sq = Eigen::Matrix2d::Zero();
  for (int i = 0; i < k; ++i) {
    const double lam = std::log(rng.gamma(a, b));
    const Eigen::Vector2d e(gamma + lam, -std::exp(gamma + lam));
    mean += e;
    sq += e * e.transpose();
  }
  mean /= k;
  const Eigen::Matrix2d cov = sq / k - mean * mean.transpose();
  const ConditionalMoments c = PoissonREView::moments_from_gamma(gamma, a, b);
  CHECK(std::abs(mean[0] - c.mu[0]) < 4.0 * std::sqrt(c.j(0, 0) / k));
  CHECK(std::abs(mean[1] - c.mu[1]) < 4.0 * std::sqrt(c.j(1, 1) / k));
  CHECK(cov(0, 0) == doctest::Approx(c.j(0, 0)).epsilon(0.02));
  CHECK(cov(0, 1) == doctest::Approx(c.j(0, 1)).epsilon(0.02));
  CHECK(cov(1, 1) == doctest::Approx(c.j(1, 1)).epsilon(0.02));
}

TEST_CASE("empirical group moments") {
  PoissonGammaREModel model(3, 25.0, 2.5);
  SUBCASE("one datum per group") {
    const Dataset data = poisson_data({{4, 0}, {0, 1}, {7, 2}});
    const GroupMoments gm = empirical_group_moments(data, PoissonREView(model, data));
    REQUIRE(gm.group.size() == 3);
    CHECK(gm.m[2] == Eigen::Vector2d(7.0, 1.0));
    CHECK(gm.s[2] == Eigen::Vector2d(7.0, 1.0) * Eigen::RowVector2d(7.0, 1.0));
  }
  SUBCASE("poisson statistic layout") {
    const Dataset data = poisson_data({{1, 0}, {3, 0}, {8, 0}, {2, 1}, {5, 2}, {5, 2}});
    const GroupMoments gm = empirical_group_moments(data, PoissonREView(model, data));
    const double rho = 4.0, v = (9.0 + 1.0 + 16.0) / 3.0;
    Eigen::Matrix2d s;
    s << v + rho * rho, rho, rho, 1.0;
    CHECK((gm.s[0] - s).norm() < 1e-12);
    CHECK(gm.m[0] == Eigen::Vector2d(rho, 1.0));
  }
  SUBCASE("duplicated data give identical moments") {
    const Dataset data = poisson_data({{1, 0}, {3, 1}, {8, 2}, {2, 1}});
    const std::vector<std::size_t> twice{0, 1, 2, 3, 0, 1, 2, 3};
    const Dataset doubled = data.select(twice);
    const GroupMoments a = empirical_group_moments(data, PoissonREView(model, data));
    const GroupMoments b = empirical_group_moments(doubled, PoissonREView(model, doubled));
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK((a.m[k] - b.m[k]).norm() < 1e-14);
      CHECK((a.s[k] - b.s[k]).norm() < 1e-12);
    }
  }
  SUBCASE("empty groups are dropped with a warning") {
    const Dataset data = poisson_data({{1, 0}, {3, 2}});
    std::vector<std::string> warnings;
    auto old = set_warning_sink([&](std::string_view m) { warnings.emplace_back(m); });
    const GroupMoments gm = empirical_group_moments(data, PoissonREView(model, data));
    set_warning_sink(old);
    CHECK(gm.group == std::vector<std::size_t>{0, 2});
    CHECK(warnings.size() == 1);
  }
}

TEST_CASE("centred statistics have the stated moments") {
  SimSpec spec;
  spec.n = 40000;
  spec.groups = 8;
  spec.seed = 6;
  const auto sim = simulate_poisson_re(spec);
  PoissonGammaREModel model(8, 25.0, 2.5);
  PoissonREView view(model, sim.data);
  const GroupMoments gm = empirical_group_moments(sim.data, view);
  const double root_g = std::sqrt(8.0);
  const double n = static_cast<double>(spec.n);
  for (std::size_t k = 0; k < gm.group.size(); ++k) {
    Eigen::Vector2d sum = Eigen::Vector2d::Zero();
    Eigen::Matrix2d sq = Eigen::Matrix2d::Zero();
    for (std::size_t i = 0; i < spec.n; ++i) {
      const auto unit = sim.data.unit(i);
      const double a = view.group_of(unit) == gm.group[k] ? 1.0 : 0.0;
      const Eigen::Vector2d yt = root_g * a * view.stat(unit) - gm.m[k] / root_g;
      sum += yt;
      sq += yt * yt.transpose();
    }
    const Eigen::Vector2d mean = sum / n;
    const Eigen::Matrix2d second = sq / n;
    const Eigen::Matrix2d expected = gm.s[k] - gm.m[k] * gm.m[k].transpose() / 8.0;
    for (int r = 0; r < 2; ++r) {
      const double sd = std::sqrt(second(r, r) - mean[r] * mean[r]);
      CHECK(std::abs(mean[r]) < 4.0 * sd / std::sqrt(n));
      // fourth moment of the centred statistic bounds the SE of the second moment
      CHECK(std::abs(second(r, r) - expected(r, r)) < 4.0 * 3.0 * second(r, r) * std::sqrt(8.0 / n));
    }
  }
}

TEST_CASE("L blocks match the trigamma formula on a matched design") {
  // Four groups, one datum each, responses equal to the group rates, so the
  // data-posterior and population formulas coincide.
  PoissonGammaREModel model(4, 25.0, 2.5);
  const std::vector<double> rates{3.0, 8.0, 12.0, 6.0};
  const Dataset data = poisson_data({{3, 0}, {8, 1}, {12, 2}, {6, 3}});
  const auto chain = gibbs_chain(model, data, 20000, 17);
  PoissonREView view(model, data);

  MlOptions opt;
  opt.path = MlPath::closed_form;
  const MlBlocks closed = ml_matrices_from_chain(chain, data, view, opt);
  CHECK(closed.path == "closed_form");

  const Vector gamma = chain.draws.col(0);
  const Vector gbar = gamma.array() - gamma.mean();
  const double n = 4.0;
  for (std::size_t g = 0; g < 4; ++g) {
    Eigen::Matrix2d oracle = Eigen::Matrix2d::Zero();
    for (Eigen::Index m = 0; m < gamma.size(); ++m) {
      const double x = std::exp(gamma[m]);
      const double a = 25.0 + rates[g];
      const double b = 2.5 + x;
      Eigen::Matrix2d j;
      j << boost::math::trigamma(a), -x / b, -x / b, x * x * a / (b * b);
      oracle += gbar[m] * j;
    }
    oracle *= n / static_cast<double>(gamma.size());
    CHECK((closed.l[g] - oracle).cwiseAbs().maxCoeff() < 1e-10 * (1.0 + oracle.cwiseAbs().maxCoeff()));
  }

  // Same truth through the population formulas.
  Vector truth(5);
  truth[0] = 0.0;
  for (std::size_t g = 0; g < 4; ++g) truth[static_cast<Eigen::Index>(g) + 1] = std::log(rates[g]);
  const PoissonAnalytic pa = poisson_analytic(model, truth, 4);
  for (std::size_t g = 0; g < 4; ++g) {
    Eigen::Matrix2d l = Eigen::Matrix2d::Zero();
    for (Eigen::Index m = 0; m < gamma.size(); ++m) l += gbar[m] * poisson_analytic_j(pa, g, gamma[m]);
    l *= n / static_cast<double>(gamma.size());
    CHECK((closed.l[g] - l).cwiseAbs().maxCoeff() < 1e-10 * (1.0 + l.cwiseAbs().maxCoeff()));
  }

  // Conditional draws: unbiased around the closed form; spread from independent seeds.
  std::vector<MlBlocks> reps;
  for (std::uint64_t s = 0; s < 8; ++s) {
    MlOptions o;
    o.path = MlPath::conditional_draws;
    o.conditional_draws = 32;
    o.seed = 100 + s;
    o.compute_m = false;
    reps.push_back(ml_matrices_from_chain(chain, data, view, o));
  }
  for (std::size_t g = 0; g < 4; ++g) {
    for (int r = 0; r < 2; ++r) {
      for (int c = r; c < 2; ++c) {
        double mean = 0.0, sq = 0.0;
        for (const auto& rep : reps) mean += rep.l[g](r, c) / 8.0;
        for (const auto& rep : reps) sq += std::pow(rep.l[g](r, c) - mean, 2) / 7.0;
        const double se = std::sqrt(sq / 8.0);
        CHECK(std::abs(mean - closed.l[g](r, c)) <= 4.0 * se + 1e-12);
      }
    }
  }
}

TEST_CASE("ml matrices edge cases") {
  PoissonGammaREModel model(2, 25.0, 2.5);
  const Dataset data = poisson_data({{3, 0}, {9, 1}, {4, 0}});
  PoissonREView view(model, data);
  auto chain = gibbs_chain(model, data, 500, 2);

  SUBCASE("constant g gives zero blocks") {
    PosteriorSample flat = chain;
    flat.g_values.setConstant(1.0);
    const MlBlocks b = ml_matrices_from_chain(flat, data, view);
    for (const Matrix& l : b.l) CHECK(l.isZero());
    CHECK(b.m.isZero());
  }
  SUBCASE("models without conditionals are unsupported unless the fallback is enabled") {
    BareView bare(model);
    try {
      ml_matrices_from_chain(chain, data, bare);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::unsupported);
      CHECK(std::string(e.what()).find("unsupported model") != std::string::npos);
    }
    MlOptions opt;
    opt.allow_fallback = true;
    CHECK(ml_matrices_from_chain(chain, data, bare, opt).path == "per_draw");
  }
}

TEST_CASE("per-draw fallback estimates L + M/N") {
  PoissonGammaREModel model(3, 25.0, 2.5);
  const Dataset data = poisson_data({{3, 0}, {8, 1}, {12, 2}, {5, 0}, {9, 1}, {14, 2}});
  PoissonREView view(model, data);
  const auto chain = gibbs_chain(model, data, 60000, 5);
  const MlBlocks closed = ml_matrices_from_chain(chain, data, view);
  MlOptions opt;
  opt.path = MlPath::per_draw;
  const MlBlocks per = ml_matrices_from_chain(chain, data, view, opt);
  const double n = 6.0;
  for (std::size_t g = 0; g < 3; ++g) {
    const Matrix target = closed.l[g] + closed.m.block(2 * g, 2 * g, 2, 2) / n;
    const double scale = target.cwiseAbs().maxCoeff();
    CHECK((per.l[g] - target).cwiseAbs().maxCoeff() < 0.1 * scale);
  }
}

TEST_CASE("kappa and rho") {
  SimSpec spec;
  spec.n = 60;
  spec.groups = 5;
  spec.seed = 11;
  const auto sim = simulate_poisson_re(spec);
  PoissonGammaREModel model(5, 25.0, 2.5);
  PoissonREView view(model, sim.data);
  const GroupMoments gm = empirical_group_moments(sim.data, view);
  Rng rng(3);
  std::vector<Matrix> l(5);
  for (Matrix& b : l) {
    Matrix a(2, 2);
    a << rng.normal(), rng.normal(), rng.normal(), rng.normal();
    b = a + a.transpose();
  }
  const GroupedExpFamilyTerms t = kappa_and_rho(sim.data, view, gm, l);

  SUBCASE("zero L") {
    const GroupedExpFamilyTerms z =
        kappa_and_rho(sim.data, view, gm, std::vector<Matrix>(5, Matrix::Zero(2, 2)));
    CHECK(z.kappa_hat == 0.0);
    CHECK(z.rho_nn.isZero());
    CHECK(z.resid_t1_hat == 0.0);
  }
  SUBCASE("linear in L") {
    std::vector<Matrix> scaled = l;
    for (Matrix& b : scaled) b *= -2.5;
    const GroupedExpFamilyTerms s = kappa_and_rho(sim.data, view, gm, scaled);
    CHECK(s.kappa_hat == doctest::Approx(-2.5 * t.kappa_hat).epsilon(1e-12));
    CHECK((s.rho_nn + 2.5 * t.rho_nn).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(s.resid_t1_hat == doctest::Approx(-2.5 * t.resid_t1_hat).epsilon(1e-12));
  }
  SUBCASE("double sum by brute force") {
    const double g_count = 5.0;
    const double root_g = std::sqrt(g_count);
    const std::size_t n = sim.data.size();
    std::vector<std::vector<Vector>> yt(n, std::vector<Vector>(5));
    for (std::size_t i = 0; i < n; ++i) {
      const auto unit = sim.data.unit(i);
      for (std::size_t k = 0; k < 5; ++k) {
        const double a = view.group_of(unit) == gm.group[k] ? 1.0 : 0.0;
        yt[i][k] = root_g * a * view.stat(unit) - gm.m[k] / root_g;
      }
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double rho = 0.0;
        for (std::size_t k = 0; k < 5; ++k) rho += yt[i][k].dot(l[gm.group[k]] * yt[j][k]) / g_count;
        total += rho;
        if (i == j) CHECK(rho == doctest::Approx(t.rho_nn[static_cast<Eigen::Index>(i)]).epsilon(1e-10));
      }
    }
    CHECK(total / static_cast<double>(n) == doctest::Approx(t.resid_t1_hat).epsilon(1e-10));
    double kappa = 0.0;
    for (std::size_t k = 0; k < 5; ++k) {
      const Matrix root = psd_sqrt(gm.s[k]);
      kappa += (root * l[gm.group[k]] * root).trace() / g_count;
    }
    CHECK(kappa == doctest::Approx(t.kappa_hat).epsilon(1e-12));
  }
  SUBCASE("relabelling groups") {
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    std::vector<double> values = sim.data.values();
    for (std::size_t i = 0; i < sim.data.size(); ++i) {
      values[2 * i + 1] = static_cast<double>(perm[static_cast<std::size_t>(values[2 * i + 1])]);
    }
    const Dataset relabelled({"y", "group"}, values);
    std::vector<Matrix> l2(5);
    for (std::size_t g = 0; g < 5; ++g) l2[perm[g]] = l[g];
    PoissonREView view2(model, relabelled);
    const GroupMoments gm2 = empirical_group_moments(relabelled, view2);
    const GroupedExpFamilyTerms t2 = kappa_and_rho(relabelled, view2, gm2, l2);
    CHECK(t2.kappa_hat == doctest::Approx(t.kappa_hat).epsilon(1e-12));
    CHECK((t2.rho_nn - t.rho_nn).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(t2.resid_t1_hat == doctest::Approx(t.resid_t1_hat).epsilon(1e-10));
  }
  SUBCASE("indefinite second moments are rejected") {
    GroupMoments bad = gm;
    bad.s[0] << -1.0, 0.0, 0.0, 1.0;
    CHECK_THROWS_AS(kappa_and_rho(sim.data, view, bad, l), Error);
  }
}

TEST_CASE("double-sum cross term shrinks with G at fixed N/G") {
  std::vector<double> medians;
  for (std::size_t groups : {10, 40, 160}) {
    std::vector<double> cross;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      SimSpec spec;
      spec.groups = groups;
      spec.n = 10 * groups;
      spec.seed = seed;
      const auto sim = simulate_poisson_re(spec);
      PoissonGammaREModel model(groups, 25.0, 2.5);
      PoissonREView view(model, sim.data);
      const auto chain = gibbs_chain(model, sim.data, 4000, seed);
      MlOptions opt;
      opt.compute_m = false;
      const MlBlocks ml = ml_matrices_from_chain(chain, sim.data, view, opt);
      const GroupMoments gm = empirical_group_moments(sim.data, view);
      const GroupedExpFamilyTerms t = kappa_and_rho(sim.data, view, gm, ml.l);
      cross.push_back(std::abs(t.resid_t1_hat - t.rho_nn_mean));
    }
    medians.push_back(median(cross));
  }
  MESSAGE("cross-term medians: " << medians[0] << " " << medians[1] << " " << medians[2]);
  CHECK(medians[1] < medians[0]);
  CHECK(medians[2] < medians[1]);
}

TEST_CASE("expansion check") {
  SUBCASE("quadrature reproduces conjugate moments") {
    NormalMeanModel model(1.0, 0.5, 2.0);
    const Dataset data({"x"}, {0.3, 1.2, -0.4, 2.0, 0.9});
    const NormalPosterior post = exact_normal_posterior(model, data);
    const double sd = std::sqrt(post.variance);
    CHECK(quadrature_expectation(model, data, power_function(1), post.mean, sd) ==
          doctest::Approx(post.mean).epsilon(1e-12));
    CHECK(quadrature_expectation(model, data, power_function(2), post.mean, sd) ==
          doctest::Approx(post.mean * post.mean + post.variance).epsilon(1e-12));
  }
  SUBCASE("squared mean of a normal model has no residual") {
    NormalMeanModel model(1.0);
    auto datasets = nested_poisson_datasets({20, 40, 80}, 3.0, 2);
    for (const Dataset& data : datasets) {
      const NormalPosterior post = exact_normal_posterior(model, data);
      const double e = quadrature_expectation(model, data, power_function(2), post.mean,
                                              std::sqrt(post.variance));
      // correction = 1 / (N * I) with I = 1, equal to the posterior variance
      CHECK(e - post.mean * post.mean == doctest::Approx(1.0 / data.size()).epsilon(1e-10));
    }
  }
  SUBCASE("poisson gamma cube converges at the second-order rate") {
    PoissonGammaModel model(2.0, 0.2);
    const auto datasets = nested_poisson_datasets({50, 100, 200, 400, 800, 1600, 3200}, 10.0, 1);
    const BcltResult r = bclt_expansion_check(model, power_function(3), datasets);
    CHECK(r.slope >= -2.3);
    CHECK(r.slope <= -1.7);
    CHECK(r.points.size() == 7);
  }
  SUBCASE("log-log fit") {
    const auto [slope, intercept] = loglog_fit({1.0, 10.0, 100.0}, {5.0, 0.05, 0.0005});
    CHECK(slope == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK(intercept == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  }
}
