#include "ijcov/estimators.hpp"
#include "ijcov/models.hpp"
#include "ijcov/samplers.hpp"

#include <doctest.h>

#include <cmath>
#include <string>

using namespace ijcov;

namespace {

Dataset xs(std::vector<double> v) { return Dataset({"x"}, std::move(v)); }

double column_mean(const Matrix& m, Eigen::Index j = 0) { return m.col(j).mean(); }

double mc_se(const Matrix& draws, Eigen::Index j = 0) {
  std::vector<double> c(draws.col(j).data(), draws.col(j).data() + draws.rows());
  const double sd = std::sqrt(sample_covariance(draws.col(j), 1)(0, 0));
  return sd / std::sqrt(ess(c));
}

struct WarningCapture {
  std::vector<std::string> messages;
  WarningSink old;
  WarningCapture() {
    old = set_warning_sink([this](std::string_view m) { messages.emplace_back(m); });
  }
  ~WarningCapture() { set_warning_sink(old); }
};

}  // namespace

TEST_CASE("sampler resolution") {
  CHECK(resolve_sampler(NormalMeanModel(), SamplerKind::automatic) == SamplerKind::exact);
  CHECK(resolve_sampler(PoissonGammaModel(1.0, 0.0), SamplerKind::automatic) ==
        SamplerKind::exact);
  CHECK(resolve_sampler(PoissonGammaREModel(2, 1.0, 1.0), SamplerKind::automatic) ==
        SamplerKind::gibbs);
  CHECK(resolve_sampler(NormalMeanModel(), SamplerKind::metropolis) == SamplerKind::metropolis);
  PoissonGammaREModel re(2, 1.0, 1.0);
  const Dataset data({"y", "group"}, {1.0, 0.0, 2.0, 1.0});
  ChainConfig cfg;
  cfg.draws = 10;
  cfg.kind = SamplerKind::exact;
  CHECK_THROWS_AS(sample_posterior(re, data, unit_weights(2), cfg), Error);
}

TEST_CASE("exact normal draws have the posterior moments") {
  NormalMeanModel model(1.0, 0.0, 2.0);
  const Dataset data = xs({0.5, 1.5, 2.0, -0.3});
  ChainConfig cfg;
  cfg.draws = 40000;
  cfg.seed = 3;
  const PosteriorSample s = sample_posterior(model, data, unit_weights(4), cfg);
  const NormalPosterior post = exact_normal_posterior(model, data);
  const double sd = std::sqrt(post.variance);
  CHECK(std::abs(column_mean(s.draws) - post.mean) < 4.0 * sd / std::sqrt(40000.0));
  CHECK(sample_covariance(s.draws, 1)(0, 0) ==
        doctest::Approx(post.variance).epsilon(4.0 * std::sqrt(2.0 / 40000.0)));
  CHECK(s.loglik.rows() == 40000);
  CHECK(s.loglik.cols() == 4);

  cfg.moment_matched = true;
  cfg.draws = 100;
  const PosteriorSample mm = sample_posterior(model, data, unit_weights(4), cfg);
  CHECK(column_mean(mm.draws) == doctest::Approx(post.mean).epsilon(1e-12));
  CHECK(sample_covariance(mm.draws, 1)(0, 0) == doctest::Approx(post.variance).epsilon(1e-12));
}

TEST_CASE("chains replay and are invariant to permuting integer data") {
  SimSpec spec;
  spec.n = 60;
  spec.groups = 5;
  spec.seed = 2;
  const auto sim = simulate_poisson_re(spec);
  PoissonGammaREModel model(5, 25.0, 2.5);
  ChainConfig cfg;
  cfg.draws = 300;
  cfg.seed = 8;
  const auto a = sample_posterior(model, sim.data, unit_weights(60), cfg);
  const auto b = sample_posterior(model, sim.data, unit_weights(60), cfg);
  CHECK(a.draws == b.draws);
  std::vector<std::size_t> rows(60);
  for (std::size_t i = 0; i < 60; ++i) rows[i] = (i * 7) % 60;
  const auto c = sample_posterior(model, sim.data.select(rows), unit_weights(60), cfg);
  CHECK(a.draws == c.draws);
}

TEST_CASE("single group with many units pins down gamma plus lambda") {
  SimSpec spec;
  spec.n = 5000;
  spec.groups = 1;
  spec.seed = 4;
  const auto sim = simulate_poisson_re(spec);
  PoissonGammaREModel model(1, 25.0, 2.5);
  ChainConfig cfg;
  cfg.draws = 2000;
  cfg.seed = 1;
  const auto s = sample_posterior(model, sim.data, unit_weights(spec.n), cfg);
  double ybar = 0.0;
  for (std::size_t n = 0; n < spec.n; ++n) ybar += sim.data.at(n, 0);
  ybar /= static_cast<double>(spec.n);
  const Vector total = s.draws.col(0) + s.draws.col(1);
  CHECK(std::abs(total.mean() - std::log(ybar)) < 0.01);
}

TEST_CASE("gibbs and metropolis agree on the posterior mean of gamma") {
  SimSpec spec;
  spec.n = 30;
  spec.groups = 3;
  spec.seed = 12;
  const auto sim = simulate_poisson_re(spec);
  PoissonGammaREModel model(3, 25.0, 2.5);
  ChainConfig gibbs;
  gibbs.draws = 40000;
  gibbs.seed = 5;
  gibbs.kind = SamplerKind::gibbs;
  const auto sg = sample_posterior(model, sim.data, unit_weights(30), gibbs);
  ChainConfig mh = gibbs;
  mh.kind = SamplerKind::metropolis;
  mh.draws = 200000;
  mh.keep_loglik = false;
  const auto sm = sample_posterior(model, sim.data, unit_weights(30), mh);
  CHECK(sm.meta.acceptance_rate > 0.15);
  CHECK(sm.meta.acceptance_rate < 0.35);
  const double diff = column_mean(sg.draws) - column_mean(sm.draws);
  const double se = std::hypot(mc_se(sg.draws), mc_se(sm.draws));
  CHECK(std::abs(diff) < 4.0 * se);
}

TEST_CASE("gibbs rejects an all-zero weighted response") {
  PoissonGammaREModel model(2, 25.0, 2.5);
  const Dataset data({"y", "group"}, {0.0, 0.0, 0.0, 1.0, 0.0, 1.0});
  ChainConfig cfg;
  cfg.draws = 50;
  try {
    sample_posterior(model, data, unit_weights(3), cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numerical);
  }
}

TEST_CASE("metropolis warns about extreme acceptance") {
  NormalMeanModel model(1.0);
  const Dataset data = xs({0.1, 0.2, 0.3});
  ChainConfig cfg;
  cfg.draws = 500;
  cfg.kind = SamplerKind::metropolis;
  cfg.mh_adapt = false;
  cfg.mh_step_scale = 1000.0;
  WarningCapture capture;
  const auto s = sample_posterior(model, data, unit_weights(3), cfg);
  CHECK(s.meta.acceptance_rate < 0.05);
  REQUIRE(capture.messages.size() == 1);
  CHECK(capture.messages[0].find("acceptance") != std::string::npos);
}

TEST_CASE("effective sample size") {
  Rng rng(10);
  const std::size_t m = 10000;
  std::vector<double> iid(m);
  for (double& v : iid) v = rng.normal();
  const double e = ess(iid);
  CHECK(e >= 0.8 * m);
  CHECK(e <= 1.2 * m);

  std::vector<double> ar(m);
  ar[0] = rng.normal() / std::sqrt(1.0 - 0.81);
  for (std::size_t i = 1; i < m; ++i) ar[i] = 0.9 * ar[i - 1] + rng.normal();
  const double expected = m * 0.1 / 1.9;
  CHECK(ess(ar) == doctest::Approx(expected).epsilon(0.3));

  std::vector<double> flat(m, 2.5);
  CHECK(ess(flat) == static_cast<double>(m));
  std::vector<double> tiny(5, 1.0);
  CHECK_THROWS_AS(ess(tiny), Error);
}

TEST_CASE("MAP fits") {
  SUBCASE("quadratic objective converges in one Newton step") {
    NormalMeanModel model(2.0);
    const Dataset data = xs({1.0, 2.0, 6.0, 3.0});
    MapOptions opt;
    opt.init = Vector::Constant(1, -40.0);
    const MapFit fit = map_optimize(model, data, opt);
    CHECK(fit.converged);
    CHECK(fit.newton_iters <= 2);
    CHECK(fit.theta_hat[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(fit.info_hat(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    // scores (x - 3) / 4, population variance 3.5 / 16
    CHECK(fit.score_cov_hat(0, 0) == doctest::Approx(3.5 / 16.0).epsilon(1e-12));
  }
  SUBCASE("objective trace never decreases") {
    PoissonGammaModel model(2.0, 0.5);
    const Dataset data = xs({0.0, 4.0, 9.0, 1.0, 2.0});
    MapOptions opt;
    opt.init = Vector::Constant(1, 40.0);
    const MapFit fit = map_optimize(model, data, opt);
    CHECK(fit.converged);
    for (std::size_t i = 1; i < fit.objective_trace.size(); ++i) {
      CHECK(fit.objective_trace[i] >= fit.objective_trace[i - 1] - 1e-14);
    }
    // mode of Gamma(2 + 16, 0.5 + 5)
    CHECK(fit.theta_hat[0] == doctest::Approx(17.0 / 5.5).epsilon(1e-9));
  }
  SUBCASE("poisson random effects information is singular") {
    SimSpec spec;
    spec.n = 40;
    spec.groups = 4;
    spec.seed = 1;
    const auto sim = simulate_poisson_re(spec);
    PoissonGammaREModel model(4, 25.0, 2.5);
    try {
      map_optimize(model, sim.data);
      FAIL("expected a singular fit");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::numerical);
      CHECK(std::string(e.what()).find("singular fit") != std::string::npos);
    }
  }
}
