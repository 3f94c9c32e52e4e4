#include "ijcov/experiment.hpp"

#include "ijcov/diagnostics.hpp"
#include "ijcov/mc_error.hpp"
#include "ijcov/parallel.hpp"
#include "ijcov/samplers.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>

namespace ijcov {

using nlohmann::json;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void ExperimentConfig::validate() const {
  require(model == "poisson_re" || model == "normal_misspec",
          "model must be poisson_re or normal_misspec, got '" + model + "'");
  require(n >= 2, "n must be >= 2");
  if (model == "poisson_re") {
    require(groups >= 1 && n >= groups, "poisson_re needs 1 <= groups <= n");
    require(alpha > 0.0 && beta > 0.0, "alpha and beta must be > 0");
  } else {
    require(true_dist == "laplace" || true_dist == "student_t" || true_dist == "gaussian",
            "true_dist must be laplace, student_t or gaussian");
    require(dist_param > 0.0 && known_sd > 0.0, "dist_param and known_sd must be > 0");
  }
  require(draws >= 40, "draws must be >= 40");
  require(boot_reps >= 10, "boot_reps must be >= 10");
  require(sim_reps >= 10, "sim_reps must be >= 10");
  require(se_reps >= 50, "se_reps must be >= 50");
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["model"] = c.model;
  j["n"] = c.n;
  j["groups"] = c.groups;
  j["gamma_true"] = c.gamma_true;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["true_dist"] = c.true_dist;
  j["dist_param"] = c.dist_param;
  j["known_sd"] = c.known_sd;
  j["draws"] = c.draws;
  j["burn_in"] = c.burn_in ? json(*c.burn_in) : json(nullptr);
  j["boot_reps"] = c.boot_reps;
  j["sim_reps"] = c.sim_reps;
  j["blocks"] = c.blocks ? json(*c.blocks) : json(nullptr);
  j["se_reps"] = c.se_reps;
  j["seed"] = c.seed;
  j["diagnostics"] = c.diagnostics;
  return j;
}

ExperimentConfig config_from_json(const json& j, ExperimentConfig c) {
  require(j.is_object(), "experiment config must be a JSON object", ErrorKind::parse);
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "model") c.model = value.get<std::string>();
      else if (key == "n") c.n = value.get<std::size_t>();
      else if (key == "groups") c.groups = value.get<std::size_t>();
      else if (key == "gamma_true") c.gamma_true = value.get<double>();
      else if (key == "alpha") c.alpha = value.get<double>();
      else if (key == "beta") c.beta = value.get<double>();
      else if (key == "true_dist") c.true_dist = value.get<std::string>();
      else if (key == "dist_param") c.dist_param = value.get<double>();
      else if (key == "known_sd") c.known_sd = value.get<double>();
      else if (key == "draws") c.draws = value.get<std::size_t>();
      else if (key == "burn_in") c.burn_in = value.is_null() ? std::nullopt : std::optional(value.get<std::size_t>());
      else if (key == "boot_reps") c.boot_reps = value.get<std::size_t>();
      else if (key == "sim_reps") c.sim_reps = value.get<std::size_t>();
      else if (key == "blocks") c.blocks = value.is_null() ? std::nullopt : std::optional(value.get<std::size_t>());
      else if (key == "se_reps") c.se_reps = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "threads") c.threads = value.get<std::size_t>();
      else if (key == "diagnostics") c.diagnostics = value.get<bool>();
      else fail(ErrorKind::parse, "unknown experiment config key '" + key + "'");
    } catch (const json::exception& e) {
      fail(ErrorKind::parse, "experiment config key '" + key + "': " + e.what());
    }
  }
  return c;
}

namespace {

template <class F>
auto run_stage(ExperimentResult& result, const std::string& stage, F&& fn) {
  const auto start = std::chrono::steady_clock::now();
  try {
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      result.timing[stage] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    } else {
      auto value = fn();
      result.timing[stage] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      return value;
    }
  } catch (const Error& e) {
    fail(e.kind(), "stage '" + stage + "': " + e.what());
  }
}

TrueDist make_dist(const ExperimentConfig& cfg) {
  TrueDist d;
  d.param = cfg.dist_param;
  if (cfg.true_dist == "laplace") d.kind = TrueDistKind::laplace;
  else if (cfg.true_dist == "student_t") d.kind = TrueDistKind::student_t;
  else d.kind = TrueDistKind::gaussian;
  return d;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult result;
  result.config = cfg;

  const bool poisson = cfg.model == "poisson_re";
  const SimSpec spec{cfg.n, cfg.groups, cfg.gamma_true, cfg.alpha, cfg.beta, cfg.seed};
  const TrueDist dist = make_dist(cfg);
  std::unique_ptr<Model> model;
  std::optional<Dataset> data;
  Vector truth;

  run_stage(result, "simulate", [&] {
    if (poisson) {
      auto sim = simulate_poisson_re(spec);
      data.emplace(std::move(sim.data));
      truth = sim.truth;
      model = std::make_unique<PoissonGammaREModel>(cfg.groups, cfg.alpha, cfg.beta);
    } else {
      data.emplace(simulate_misspecified_normal(cfg.n, dist, derive_seed(cfg.seed, 1)));
      model = std::make_unique<NormalMeanModel>(cfg.known_sd);
    }
  });
  result.g_names = model->g_names();

  ChainConfig chain;
  chain.draws = cfg.draws;
  chain.burn_in = cfg.burn_in;
  chain.seed = derive_seed(cfg.seed, 2);

  const PosteriorSample sample = run_stage(result, "sample", [&] {
    return sample_posterior(*model, *data, unit_weights(cfg.n), chain);
  });
  {
    std::vector<double> g0(sample.g_values.col(0).data(),
                           sample.g_values.col(0).data() + sample.g_values.rows());
    result.ess_g = ess(g0);
  }

  run_stage(result, "ij_bayes", [&] {
    BlockBootstrapOptions opt;
    opt.blocks = cfg.blocks;
    opt.reps = cfg.se_reps;
    opt.seed = derive_seed(cfg.seed, 6);
    opt.threads = cfg.threads;
    result.blocks_used = cfg.blocks.value_or(default_block_count(sample));
    result.v_bayes = bayes_covariance(sample);
    result.v_bayes.se = block_bootstrap_se(sample, ChainStatistic::bayes_cov, opt).xi;
    result.v_ij = ij_covariance(influence_scores(sample));
    result.v_ij.sample_size = sample.size();
    result.v_ij.se = block_bootstrap_se(sample, ChainStatistic::ij_cov, opt).xi;
  });

  run_stage(result, "bootstrap", [&] {
    ChainConfig boot_chain = chain;
    boot_chain.keep_loglik = false;
    BootstrapResult boot =
        bootstrap_covariance(*model, *data, boot_chain, cfg.boot_reps, derive_seed(cfg.seed, 3), cfg.threads);
    boot.estimate.se = delta_method_boot_se(boot.replicate_means, cfg.n).xi;
    result.v_boot = std::move(boot.estimate);
  });

  run_stage(result, "sandwich", [&] {
    try {
      const MapFit fit = map_optimize(*model, *data);
      result.v_map = sandwich_covariance(fit, *model);
      result.v_map->sample_size = cfg.n;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numerical) throw;
      result.map_status = e.what();
      result.v_map.reset();
    }
  });

  run_stage(result, "ground_truth", [&] {
    const std::uint64_t data_seed = derive_seed(cfg.seed, 4);
    ChainConfig rep_chain = chain;
    rep_chain.keep_loglik = false;
    rep_chain.seed = derive_seed(cfg.seed, 5);
    std::vector<Vector> means(cfg.sim_reps);
    parallel_for(cfg.sim_reps, cfg.threads, [&](std::size_t r) {
      try {
        Rng rng(data_seed, r);
        const Dataset rep = poisson ? simulate_poisson_re_given(spec, truth, rng)
                                    : simulate_misspecified_normal(cfg.n, dist, rng);
        ChainConfig local = rep_chain;
        local.stream = r;
        means[r] = posterior_mean_g(*model, rep, unit_weights(cfg.n), local);
      } catch (const Error& e) {
        fail(e.kind(), "replicate " + std::to_string(r) + ": " + e.what());
      }
    });
    Matrix stacked(static_cast<Eigen::Index>(cfg.sim_reps), means.front().size());
    for (std::size_t r = 0; r < cfg.sim_reps; ++r) stacked.row(static_cast<Eigen::Index>(r)) = means[r].transpose();
    result.v_sim.v = static_cast<double>(cfg.n) * sample_covariance(stacked);
    result.v_sim.method = CovEstimate::Method::sim;
    result.v_sim.sample_size = cfg.sim_reps;
    result.v_sim.se = delta_method_boot_se(stacked, cfg.n).xi;
  });

  run_stage(result, "compare", [&] {
    result.z = z_matrix(result.v_ij, result.v_boot);
    result.z_sim = z_matrix(result.v_ij, result.v_sim);
    result.delta_ij = delta_metrics(result.v_ij, result.v_boot);
    result.delta_bayes = delta_metrics(result.v_bayes, result.v_boot);
  });

  if (poisson && cfg.diagnostics) {
    run_stage(result, "diagnostics", [&] {
      const auto& re = static_cast<const PoissonGammaREModel&>(*model);
      const PoissonREView view(re, *data);
      const GroupMoments moments = empirical_group_moments(*data, view);
      MlOptions opt;
      opt.compute_m = false;
      const MlBlocks ml = ml_matrices_from_chain(sample, *data, view, opt);
      const GroupedExpFamilyTerms terms = kappa_and_rho(*data, view, moments, ml.l);
      result.kappa_hat = terms.kappa_hat;
      result.rho_nn_mean = terms.rho_nn_mean;
      result.resid_t1_hat = terms.resid_t1_hat;
      const PoissonAnalytic pa = poisson_analytic(re, truth, cfg.n);
      result.kappa_population =
          poisson_analytic_kappa(pa, sample.draws.col(0), sample.g_values.col(0), cfg.n);
    });
  }
  return result;
}

EstimateSet result_estimates(const ExperimentResult& r) {
  EstimateSet set;
  set.n = r.config.n;
  set.g_names = r.g_names;
  set.estimates = {r.v_sim, r.v_ij, r.v_bayes, r.v_boot};
  if (r.v_map) set.estimates.push_back(*r.v_map);
  return set;
}

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json result_to_json(const ExperimentResult& r) {
  json j = estimate_set_to_json(result_estimates(r));
  j["config"] = config_to_json(r.config);
  j["map_status"] = r.map_status;
  j["z"] = matrix_to_json(r.z);
  j["z_sim"] = matrix_to_json(r.z_sim);
  j["delta_ij"] = matrix_to_json(r.delta_ij);
  j["delta_bayes"] = matrix_to_json(r.delta_bayes);
  j["ess_g"] = r.ess_g;
  j["blocks"] = r.blocks_used;
  json diag;
  diag["kappa_hat"] = optional_number(r.kappa_hat);
  diag["rho_nn_mean"] = optional_number(r.rho_nn_mean);
  diag["resid_t1_hat"] = optional_number(r.resid_t1_hat);
  diag["kappa_population"] = optional_number(r.kappa_population);
  j["diagnostics"] = diag;
  return j;
}

namespace {

std::string fmt(double v, bool& flagged) {
  if (std::isinf(v)) {
    flagged = true;
    return v > 0 ? "inf*" : "-inf*";
  }
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

void render_matrix(std::string& out, const std::string& title, const Matrix& m, bool& flagged) {
  out += title + "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out += " ";
    for (Eigen::Index j = 0; j < m.cols(); ++j) out += " " + pad(fmt(m(i, j), flagged), 12);
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += "\n";
  }
}

}  // namespace

std::string render_report(const EstimateSet& set, const std::optional<json>& extras) {
  bool flagged = false;
  std::string out;
  out += "covariance of sqrt(N) x posterior mean, N = " + std::to_string(set.n) + "\n";
  if (!set.g_names.empty()) {
    out += "g:";
    for (const auto& g : set.g_names) out += " " + g;
    out += "\n";
  }
  out += "\n" + pad("method", 10) + pad("entry", 8) + pad("estimate", 14) + "se\n";
  for (const auto& e : set.estimates) {
    for (Eigen::Index i = 0; i < e.v.rows(); ++i) {
      for (Eigen::Index j = i; j < e.v.cols(); ++j) {
        const std::string entry = "(" + std::to_string(i) + "," + std::to_string(j) + ")";
        std::string line = pad(method_name(e.method), 10) + pad(entry, 8) + pad(fmt(e.v(i, j), flagged), 14) +
                           (e.se ? fmt((*e.se)(i, j), flagged) : "-");
        out += line + "\n";
      }
    }
  }
  if (!set.find(CovEstimate::Method::sandwich) && extras && extras->contains("map_status") &&
      extras->at("map_status") != "ok") {
    out += pad("sandwich", 10) + "unavailable: " + extras->at("map_status").get<std::string>() + "\n";
  }

  const CovEstimate* ij = set.find(CovEstimate::Method::ij);
  const CovEstimate* boot = set.find(CovEstimate::Method::boot);
  const CovEstimate* bayes = set.find(CovEstimate::Method::bayes);
  const CovEstimate* sim = set.find(CovEstimate::Method::sim);
  out += "\n";
  if (ij && boot && ij->se && boot->se) {
    render_matrix(out, "Z (ij vs boot)", z_matrix(*ij, *boot), flagged);
  }
  if (ij && sim && ij->se && sim->se) {
    render_matrix(out, "Z (ij vs sim)", z_matrix(*ij, *sim), flagged);
  }
  if (boot && boot->se) {
    if (ij) render_matrix(out, "Delta ij", delta_metrics(*ij, *boot), flagged);
    if (bayes) render_matrix(out, "Delta bayes", delta_metrics(*bayes, *boot), flagged);
  }
  if (ij && ij->se && bayes && bayes->se) {
    out += "note: se of ij and bayes come from the same chain and are combined as if independent "
           "(conservative)\n";
  }

  if (extras && extras->contains("diagnostics")) {
    const json& d = extras->at("diagnostics");
    if (d.contains("kappa_hat") && d.at("kappa_hat").is_number()) {
      const double kappa = d.at("kappa_hat").get<double>();
      const double scaled = std::fabs(kappa) * std::sqrt(static_cast<double>(set.n));
      out += "\nkappa_hat = " + fmt(kappa, flagged);
      if (d.contains("rho_nn_mean") && d.at("rho_nn_mean").is_number()) {
        out += ", mean rho_nn = " + fmt(d.at("rho_nn_mean").get<double>(), flagged);
      }
      if (d.contains("resid_t1_hat") && d.at("resid_t1_hat").is_number()) {
        out += ", residual = " + fmt(d.at("resid_t1_hat").get<double>(), flagged);
      }
      out += "\n";
      if (ij && ij->se) {
        const double xi = (*ij->se)(0, 0);
        out += "|kappa_hat| sqrt(N) = " + fmt(scaled, flagged) + " vs se(ij) = " + fmt(xi, flagged) +
               (scaled > xi ? ": large relative to the IJ Monte Carlo error, expect IJ bias\n"
                            : ": small relative to the IJ Monte Carlo error, no IJ bias indicated\n");
      }
    }
  }
  if (flagged) out += "\n* infinite: zero denominator with a nonzero difference\n";
  return out;
}

std::string estimates_csv(const EstimateSet& set) {
  std::string out = "method,i,j,estimate,se,lower,upper,se_width\n";
  const double root_n = std::sqrt(static_cast<double>(set.n));
  for (const auto& e : set.estimates) {
    for (Eigen::Index i = 0; i < e.v.rows(); ++i) {
      for (Eigen::Index j = i; j < e.v.cols(); ++j) {
        const double v = e.v(i, j);
        out += method_name(e.method) + "," + std::to_string(i) + "," + std::to_string(j) + "," +
               format_double(v) + ",";
        if (e.se) {
          const double s = (*e.se)(i, j);
          out += format_double(s) + "," + format_double(v - 2 * s) + "," + format_double(v + 2 * s);
        } else {
          out += ",,";
        }
        out += ",";
        if (i == j && v >= 0.0 && set.n > 0) out += format_double(std::sqrt(v) / root_n);
        out += "\n";
      }
    }
  }
  return out;
}

void emit_report(const ExperimentResult& result, const std::filesystem::path& dir) {
  const json j = result_to_json(result);
  const EstimateSet set = result_estimates(result);
  write_text(dir / "result.json", j.dump(2) + "\n");
  json timing(result.timing);
  write_text(dir / "timing.json", timing.dump(2) + "\n");
  write_text(dir / "estimates.json", estimate_set_to_json(set).dump(2) + "\n");
  write_text(dir / "estimates.csv", estimates_csv(set));

  std::string metrics = "i,j,z,z_sim,delta_ij,delta_bayes\n";
  for (Eigen::Index i = 0; i < result.z.rows(); ++i) {
    for (Eigen::Index k = 0; k < result.z.cols(); ++k) {
      metrics += std::to_string(i) + "," + std::to_string(k) + "," + format_double(result.z(i, k)) + "," +
                 format_double(result.z_sim(i, k)) + "," + format_double(result.delta_ij(i, k)) + "," +
                 format_double(result.delta_bayes(i, k)) + "\n";
    }
  }
  write_text(dir / "metrics.csv", metrics);
  write_text(dir / "report.txt", render_report(set, j));
}

}  // namespace ijcov
