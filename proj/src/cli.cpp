#include "ijcov/cli.hpp"

#include "ijcov/diagnostics.hpp"
#include "ijcov/estimators.hpp"
#include "ijcov/experiment.hpp"
#include "ijcov/io.hpp"
#include "ijcov/mc_error.hpp"
#include "ijcov/models.hpp"
#include "ijcov/samplers.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>

namespace ijcov {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string config;
  std::string out;
  std::size_t threads = 0;
  std::string format = "csv";
};

struct ModelOptions {
  std::string model;  // empty: infer from the dataset columns
  std::size_t groups = 0;  // 0: infer from the data
  double alpha = 25.0;
  double beta = 2.5;
  double known_sd = 1.0;
  double prior_mean = 0.0;
  double prior_sd = std::numeric_limits<double>::infinity();
};

struct ChainOptions {
  std::size_t draws = 4000;
  std::optional<std::size_t> burn_in;
  std::size_t thin = 1;
  std::string sampler = "auto";
  double step_scale = 0.1;
};

struct SampleFiles {
  std::string draws;
  std::string loglik;
  std::optional<std::size_t> g_cols;
  std::string g_expr;
};

void add_model_options(CLI::App* sub, ModelOptions& m) {
  sub->add_option("--model", m.model,
                  "normal_mean, poisson_re or poisson_gamma (default: poisson_re for y,group "
                  "data, else normal_mean)")
      ->check(CLI::IsMember({"normal_mean", "poisson_re", "poisson_gamma"}));
  sub->add_option("--groups", m.groups, "Poisson RE group count (default: max label + 1)");
  sub->add_option("--alpha", m.alpha, "Gamma shape")->capture_default_str();
  sub->add_option("--beta", m.beta, "Gamma rate")->capture_default_str();
  sub->add_option("--known-sd", m.known_sd, "normal model sd")->capture_default_str();
  sub->add_option("--prior-mean", m.prior_mean, "normal prior mean")->capture_default_str();
  sub->add_option("--prior-sd", m.prior_sd, "normal prior sd (inf = flat)");
}

void add_chain_options(CLI::App* sub, ChainOptions& c) {
  sub->add_option("--draws", c.draws, "retained draws M")->capture_default_str();
  sub->add_option("--burn-in", c.burn_in, "burn-in (default M/2)");
  sub->add_option("--thin", c.thin, "thinning")->capture_default_str();
  sub->add_option("--sampler", c.sampler, "auto, exact, gibbs or metropolis")
      ->check(CLI::IsMember({"auto", "exact", "gibbs", "metropolis"}))
      ->capture_default_str();
  sub->add_option("--step-scale", c.step_scale, "initial Metropolis step")->capture_default_str();
}

void add_sample_files(CLI::App* sub, SampleFiles& f) {
  sub->add_option("--draws", f.draws, "draws CSV (draw,<params>[,g_*])")->required();
  sub->add_option("--loglik", f.loglik, "log-likelihood CSV (draw,ll_1..ll_N)")->required();
  sub->add_option("--g-cols", f.g_cols, "treat the last k columns of the draws file as g");
  sub->add_option("--g-expr", f.g_expr, "comma-separated parameter names or indices to use as g");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

PosteriorSample load_sample(const SampleFiles& f, std::vector<std::string>* g_names = nullptr) {
  GSelector sel;
  sel.last_k = f.g_cols;
  if (!f.g_expr.empty()) sel.names_or_indices = split_list(f.g_expr);
  require(!(sel.last_k && !sel.names_or_indices.empty()), "use either --g-cols or --g-expr, not both");
  if (g_names) *g_names = read_draws(f.draws, sel).g_names;
  return read_sample(f.draws, f.loglik, sel);
}

std::unique_ptr<Model> make_model(const ModelOptions& m, const Dataset& data) {
  std::string name = m.model;
  if (name.empty()) {
    name = data.columns() == std::vector<std::string>{"y", "group"} ? "poisson_re" : "normal_mean";
  }
  if (name == "normal_mean") {
    return std::make_unique<NormalMeanModel>(m.known_sd, m.prior_mean, m.prior_sd);
  }
  if (name == "poisson_gamma") return std::make_unique<PoissonGammaModel>(m.alpha, m.beta);
  std::size_t groups = m.groups;
  if (groups == 0) {
    require(data.width() == 2, "poisson_re data needs columns y,group");
    double top = 0.0;
    for (std::size_t n = 0; n < data.size(); ++n) top = std::max(top, data.at(n, 1));
    groups = static_cast<std::size_t>(top) + 1;
  }
  auto model = std::make_unique<PoissonGammaREModel>(groups, m.alpha, m.beta);
  model->validate(data);
  return model;
}

ChainConfig make_chain(const ChainOptions& c, std::uint64_t seed) {
  ChainConfig cfg;
  cfg.draws = c.draws;
  cfg.burn_in = c.burn_in;
  cfg.thin = c.thin;
  cfg.seed = seed;
  cfg.mh_step_scale = c.step_scale;
  if (c.sampler == "exact") cfg.kind = SamplerKind::exact;
  else if (c.sampler == "gibbs") cfg.kind = SamplerKind::gibbs;
  else if (c.sampler == "metropolis") cfg.kind = SamplerKind::metropolis;
  return cfg;
}

std::vector<std::string> default_names(std::size_t q, const std::vector<std::string>& given) {
  if (given.size() == q) return given;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < q; ++i) out.push_back("g_" + std::to_string(i + 1));
  return out;
}

void print_matrix_csv(std::ostream& out, const std::string& label, const Matrix& m,
                      const std::vector<std::string>& names) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out << label << ',' << names[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << ',' << format_double(m(i, j));
    out << '\n';
  }
}

void print_estimates(std::ostream& out, const Globals& g, const EstimateSet& set) {
  if (g.format == "json") {
    out << estimate_set_to_json(set).dump(2) << '\n';
    return;
  }
  if (set.estimates.empty()) return;
  const auto names = default_names(static_cast<std::size_t>(set.estimates.front().v.rows()), set.g_names);
  out << "method,row";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (const auto& e : set.estimates) {
    print_matrix_csv(out, method_name(e.method), e.v, names);
    if (e.se) print_matrix_csv(out, method_name(e.method) + "_se", *e.se, names);
  }
}

fs::path out_dir(const Globals& g) { return g.out.empty() ? fs::path(".") : fs::path(g.out); }

void save_estimates(const Globals& g, const std::string& file, const EstimateSet& set) {
  if (g.out.empty()) return;
  write_text(out_dir(g) / file, estimate_set_to_json(set).dump(2) + "\n");
}

std::string config_value(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_float()) return format_double(v.get<double>());
  fail(ErrorKind::parse, "config values must be scalars or arrays of scalars");
}

// Config keys become defaults for the options of the same name
// (underscores read as dashes); explicit command-line values win.
void apply_config(CLI::App& app, CLI::App* sub, const std::string& path) {
  const json cfg = read_json(path);
  require(cfg.is_object(), path + ": config must be a JSON object", ErrorKind::parse);
  for (const auto& [key, value] : cfg.items()) {
    std::string name = "--" + key;
    std::replace(name.begin(), name.end(), '_', '-');
    if (name == "--config") continue;
    CLI::Option* opt = sub->get_option_no_throw(name);
    if (opt == nullptr) opt = app.get_option_no_throw(name);
    require(opt != nullptr, path + ": unknown config key '" + key + "' for '" + sub->get_name() + "'");
    if (opt->count() > 0 || value.is_null()) continue;
    if (value.is_array()) {
      for (const auto& v : value) opt->add_result(config_value(v));
    } else {
      opt->add_result(config_value(value));
    }
    opt->run_callback();
  }
}

int map_exit(const Error& e) { return e.kind() == ErrorKind::numerical ? 2 : 1; }

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ijcov: frequentist covariance of posterior means", "ijcov"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  Globals g;
  app.add_option("--seed", g.seed, "random seed")->capture_default_str();
  app.add_option("--config", g.config, "JSON file with option defaults");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--threads", g.threads, "worker threads (0: IJCOV_THREADS or all cores)");
  app.add_option("--format", g.format, "stdout format")
      ->check(CLI::IsMember({"csv", "json"}))
      ->capture_default_str();

  auto sub = [&](const char* name, const char* desc) {
    CLI::App* s = app.add_subcommand(name, desc);
    s->fallthrough();
    return s;
  };

  // simulate
  ExperimentConfig sim_cfg;
  CLI::App* simulate = sub("simulate", "simulate a dataset");
  simulate->add_option("--model", sim_cfg.model, "poisson_re or normal_misspec")
      ->check(CLI::IsMember({"poisson_re", "normal_misspec"}))
      ->capture_default_str();
  simulate->add_option("--n", sim_cfg.n, "datapoints N")->capture_default_str();
  simulate->add_option("--groups", sim_cfg.groups, "groups G")->capture_default_str();
  simulate->add_option("--gamma-true", sim_cfg.gamma_true, "gamma")->capture_default_str();
  simulate->add_option("--alpha", sim_cfg.alpha, "Gamma shape")->capture_default_str();
  simulate->add_option("--beta", sim_cfg.beta, "Gamma rate")->capture_default_str();
  simulate->add_option("--true-dist", sim_cfg.true_dist, "laplace, student_t or gaussian")
      ->capture_default_str();
  simulate->add_option("--dist-param", sim_cfg.dist_param, "scale, df or sd")->capture_default_str();

  // sample
  ModelOptions sample_model;
  ChainOptions sample_chain;
  std::string sample_data;
  CLI::App* sample = sub("sample", "run a posterior sampler");
  sample->add_option("--data", sample_data, "dataset CSV")->required();
  add_model_options(sample, sample_model);
  add_chain_options(sample, sample_chain);

  // ij
  SampleFiles ij_files;
  bool ij_se = false;
  std::optional<std::size_t> ij_blocks;
  std::size_t ij_reps = 200;
  CLI::App* ij = sub("ij", "infinitesimal jackknife covariance from draws and log-likelihoods");
  add_sample_files(ij, ij_files);
  ij->add_flag("--se", ij_se, "attach block-bootstrap standard errors");
  ij->add_option("--blocks", ij_blocks, "block count (default max(20, M/(10 tau)))");
  ij->add_option("--reps", ij_reps, "block-bootstrap replicates")->capture_default_str();

  // bootstrap
  ModelOptions boot_model;
  ChainOptions boot_chain;
  std::string boot_data;
  std::size_t boot_reps = 50;
  CLI::App* bootstrap = sub("bootstrap", "nonparametric bootstrap covariance");
  bootstrap->add_option("--data", boot_data, "dataset CSV")->required();
  bootstrap->add_option("--reps", boot_reps, "bootstrap replicates B")->capture_default_str();
  add_model_options(bootstrap, boot_model);
  add_chain_options(bootstrap, boot_chain);

  // sandwich
  ModelOptions sw_model;
  std::string sw_data;
  CLI::App* sandwich = sub("sandwich", "MAP sandwich covariance");
  sandwich->add_option("--data", sw_data, "dataset CSV")->required();
  add_model_options(sandwich, sw_model);

  // mcse
  SampleFiles mc_files;
  std::string mc_stat = "ij";
  std::optional<std::size_t> mc_blocks;
  std::size_t mc_reps = 200;
  bool mc_robust = false;
  CLI::App* mcse = sub("mcse", "block-bootstrap Monte Carlo standard errors");
  add_sample_files(mcse, mc_files);
  mcse->add_option("--statistic", mc_stat, "ij, bayes or g_mean")
      ->check(CLI::IsMember({"ij", "bayes", "g_mean"}))
      ->capture_default_str();
  mcse->add_option("--blocks", mc_blocks, "block count");
  mcse->add_option("--reps", mc_reps, "replicates")->capture_default_str();
  mcse->add_flag("--robustness", mc_robust, "also report 2x and 4x the block count");

  // diagnose
  ModelOptions dg_model;
  dg_model.model = "poisson_re";
  ChainOptions dg_chain;
  std::string dg_data;
  std::string dg_truth;
  CLI::App* diagnose = sub("diagnose", "kappa and rho diagnostics for the Poisson RE model");
  diagnose->add_option("--data", dg_data, "dataset CSV (y,group)")->required();
  diagnose->add_option("--truth", dg_truth, "truth CSV from simulate (adds the population kappa)");
  add_model_options(diagnose, dg_model);
  add_chain_options(diagnose, dg_chain);

  // bclt-check
  std::string bc_ns = "50,100,200,400,800,1600,3200";
  double bc_rate = 10.0;
  double bc_alpha = 2.0;
  double bc_beta = 0.2;
  int bc_power = 3;
  CLI::App* bclt = sub("bclt-check", "posterior expansion rate on the 1-D Poisson-Gamma model");
  bclt->add_option("--ns", bc_ns, "comma-separated sample sizes")->capture_default_str();
  bclt->add_option("--rate", bc_rate, "true Poisson rate")->capture_default_str();
  bclt->add_option("--alpha", bc_alpha, "Gamma prior shape")->capture_default_str();
  bclt->add_option("--beta", bc_beta, "Gamma prior rate")->capture_default_str();
  bclt->add_option("--power", bc_power, "phi(theta) = theta^k")->capture_default_str();

  // experiment
  ExperimentConfig ex;
  CLI::App* experiment = sub("experiment", "full simulation study");
  experiment->add_option("--model", ex.model, "poisson_re or normal_misspec")
      ->check(CLI::IsMember({"poisson_re", "normal_misspec"}))
      ->capture_default_str();
  experiment->add_option("--n", ex.n, "datapoints N")->capture_default_str();
  experiment->add_option("--groups", ex.groups, "groups G")->capture_default_str();
  experiment->add_option("--gamma-true", ex.gamma_true, "gamma")->capture_default_str();
  experiment->add_option("--alpha", ex.alpha, "Gamma shape")->capture_default_str();
  experiment->add_option("--beta", ex.beta, "Gamma rate")->capture_default_str();
  experiment->add_option("--true-dist", ex.true_dist, "laplace, student_t or gaussian")
      ->capture_default_str();
  experiment->add_option("--dist-param", ex.dist_param, "scale, df or sd")->capture_default_str();
  experiment->add_option("--known-sd", ex.known_sd, "normal model sd")->capture_default_str();
  experiment->add_option("--draws", ex.draws, "MCMC draws M")->capture_default_str();
  experiment->add_option("--burn-in", ex.burn_in, "burn-in (default M/2)");
  experiment->add_option("--boot-reps", ex.boot_reps, "bootstrap replicates B")->capture_default_str();
  experiment->add_option("--sim-reps", ex.sim_reps, "ground-truth replicates R")->capture_default_str();
  experiment->add_option("--blocks", ex.blocks, "block count for the chain SEs");
  experiment->add_option("--se-reps", ex.se_reps, "block-bootstrap replicates")->capture_default_str();
  experiment->add_option("--diagnostics", ex.diagnostics, "compute kappa diagnostics")
      ->capture_default_str();

  // report
  std::vector<std::string> rp_files;
  CLI::App* report = sub("report", "Z and Delta tables from saved estimates");
  report->add_option("--estimates", rp_files, "estimates or result JSON files")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    CLI::App* active = app.get_subcommands().front();
    if (!g.config.empty()) apply_config(app, active, g.config);
    const std::size_t threads = g.threads;

    if (active == simulate) {
      sim_cfg.seed = g.seed;
      const fs::path dir = out_dir(g);
      if (sim_cfg.model == "poisson_re") {
        const SimSpec spec{sim_cfg.n, sim_cfg.groups, sim_cfg.gamma_true, sim_cfg.alpha, sim_cfg.beta, g.seed};
        require(spec.n >= spec.groups && spec.groups >= 1, "simulate needs 1 <= groups <= n");
        const auto sim = simulate_poisson_re(spec);
        write_dataset(dir / "data.csv", sim.data);
        PoissonGammaREModel model(spec.groups, spec.alpha, spec.beta);
        write_csv(dir / "truth.csv", model.parameter_names(), sim.truth.transpose());
        out << "wrote " << (dir / "data.csv").string() << " and " << (dir / "truth.csv").string() << '\n';
      } else {
        TrueDist d;
        d.param = sim_cfg.dist_param;
        if (sim_cfg.true_dist == "student_t") d.kind = TrueDistKind::student_t;
        else if (sim_cfg.true_dist == "gaussian") d.kind = TrueDistKind::gaussian;
        else require(sim_cfg.true_dist == "laplace", "unknown --true-dist '" + sim_cfg.true_dist + "'");
        write_dataset(dir / "data.csv", simulate_misspecified_normal(sim_cfg.n, d, g.seed));
        out << "wrote " << (dir / "data.csv").string() << '\n';
      }
      return 0;
    }

    if (active == sample) {
      const Dataset data = read_dataset(sample_data);
      const auto model = make_model(sample_model, data);
      const PosteriorSample s =
          sample_posterior(*model, data, unit_weights(data.size()), make_chain(sample_chain, g.seed));
      const fs::path dir = out_dir(g);
      write_draws(dir / "draws.csv", s, model->parameter_names(), model->g_names());
      write_loglik(dir / "loglik.csv", s.loglik);
      out << "sampler " << s.meta.sampler << ", M = " << s.size() << ", min ESS = "
          << format_double(s.ess.minCoeff()) << ", acceptance = " << format_double(s.meta.acceptance_rate)
          << '\n';
      return 0;
    }

    if (active == ij) {
      std::vector<std::string> names;
      const PosteriorSample s = load_sample(ij_files, &names);
      CovEstimate est = ij_covariance(influence_scores(s));
      est.sample_size = s.size();
      if (ij_se) {
        BlockBootstrapOptions opt;
        opt.blocks = ij_blocks;
        opt.reps = ij_reps;
        opt.seed = g.seed;
        opt.threads = threads;
        est.se = block_bootstrap_se(s, ChainStatistic::ij_cov, opt).xi;
      }
      EstimateSet set{s.data_size(), names, {est}};
      print_estimates(out, g, set);
      save_estimates(g, "ij.json", set);
      if (!g.out.empty()) {
        std::vector<std::string> header;
        for (const auto& n : names) header.push_back("psi_" + n);
        write_csv(out_dir(g) / "psi.csv", header, influence_scores(s));
      }
      return 0;
    }

    if (active == bootstrap) {
      const Dataset data = read_dataset(boot_data);
      const auto model = make_model(boot_model, data);
      ChainConfig chain = make_chain(boot_chain, g.seed);
      BootstrapResult res = bootstrap_covariance(*model, data, chain, boot_reps, g.seed, threads);
      if (boot_reps >= 10) res.estimate.se = delta_method_boot_se(res.replicate_means, data.size()).xi;
      EstimateSet set{data.size(), model->g_names(), {res.estimate}};
      print_estimates(out, g, set);
      save_estimates(g, "boot.json", set);
      if (!g.out.empty()) write_csv(out_dir(g) / "boot_means.csv", model->g_names(), res.replicate_means);
      return 0;
    }

    if (active == sandwich) {
      const Dataset data = read_dataset(sw_data);
      const auto model = make_model(sw_model, data);
      const MapFit fit = map_optimize(*model, data);
      CovEstimate est = sandwich_covariance(fit, *model);
      est.sample_size = data.size();
      EstimateSet set{data.size(), model->g_names(), {est}};
      print_estimates(out, g, set);
      save_estimates(g, "sandwich.json", set);
      return 0;
    }

    if (active == mcse) {
      std::vector<std::string> names;
      const PosteriorSample s = load_sample(mc_files, &names);
      const ChainStatistic stat = mc_stat == "bayes" ? ChainStatistic::bayes_cov
                                  : mc_stat == "g_mean" ? ChainStatistic::g_mean
                                                        : ChainStatistic::ij_cov;
      const std::size_t base = mc_blocks.value_or(default_block_count(s));
      std::vector<std::size_t> counts{base};
      if (mc_robust) {
        counts.push_back(2 * base);
        counts.push_back(4 * base);
      }
      json all = json::array();
      for (std::size_t blocks : counts) {
        BlockBootstrapOptions opt;
        opt.blocks = blocks;
        opt.reps = mc_reps;
        opt.seed = g.seed;
        opt.threads = threads;
        const SEMatrix se = block_bootstrap_se(s, stat, opt);
        if (g.format == "json") {
          all.push_back({{"statistic", mc_stat}, {"blocks", blocks}, {"xi", matrix_to_json(se.xi)}});
        } else {
          const auto labels = default_names(names.size(), names);
          if (blocks == counts.front()) {
            out << "statistic,blocks,row";
            if (stat == ChainStatistic::g_mean) {
              out << ",se";
            } else {
              for (const auto& l : labels) out << ',' << l;
            }
            out << '\n';
          }
          for (Eigen::Index i = 0; i < se.xi.rows(); ++i) {
            out << mc_stat << ',' << blocks << ',' << labels[static_cast<std::size_t>(i)];
            for (Eigen::Index j = 0; j < se.xi.cols(); ++j) out << ',' << format_double(se.xi(i, j));
            out << '\n';
          }
        }
      }
      if (g.format == "json") out << all.dump(2) << '\n';
      return 0;
    }

    if (active == diagnose) {
      require(dg_model.model == "poisson_re", "diagnose supports --model poisson_re only",
              ErrorKind::unsupported);
      const Dataset data = read_dataset(dg_data);
      const auto model = make_model(dg_model, data);
      const auto& re = static_cast<const PoissonGammaREModel&>(*model);
      ChainConfig chain = make_chain(dg_chain, g.seed);
      chain.keep_loglik = false;
      const PosteriorSample s = sample_posterior(re, data, unit_weights(data.size()), chain);
      const PoissonREView view(re, data);
      const GroupMoments moments = empirical_group_moments(data, view);
      MlOptions opt;
      opt.compute_m = false;
      const MlBlocks ml = ml_matrices_from_chain(s, data, view, opt);
      const GroupedExpFamilyTerms terms = kappa_and_rho(data, view, moments, ml.l);
      std::optional<double> kappa_pop;
      if (!dg_truth.empty()) {
        const CsvTable truth = read_csv(dg_truth);
        require(truth.values.rows() == 1 && static_cast<std::size_t>(truth.values.cols()) == re.dim(),
                dg_truth + ": truth needs one row with gamma and every lambda", ErrorKind::parse);
        const PoissonAnalytic pa = poisson_analytic(re, truth.values.row(0).transpose(), data.size());
        kappa_pop = poisson_analytic_kappa(pa, s.draws.col(0), s.g_values.col(0), data.size());
      }
      json j{{"kappa_hat", terms.kappa_hat},
             {"rho_nn_mean", terms.rho_nn_mean},
             {"resid_t1_hat", terms.resid_t1_hat},
             {"groups_used", terms.group.size()},
             {"path", ml.path},
             {"kappa_population", kappa_pop ? json(*kappa_pop) : json(nullptr)}};
      if (g.format == "json") {
        out << j.dump(2) << '\n';
      } else {
        out << "kappa_hat,rho_nn_mean,resid_t1_hat,groups_used,kappa_population\n"
            << format_double(terms.kappa_hat) << ',' << format_double(terms.rho_nn_mean) << ','
            << format_double(terms.resid_t1_hat) << ',' << terms.group.size() << ','
            << (kappa_pop ? format_double(*kappa_pop) : std::string()) << '\n';
      }
      if (!g.out.empty()) {
        Matrix rows(static_cast<Eigen::Index>(terms.group.size()), 3);
        for (std::size_t k = 0; k < terms.group.size(); ++k) {
          rows(static_cast<Eigen::Index>(k), 0) = static_cast<double>(terms.group[k]);
          rows(static_cast<Eigen::Index>(k), 1) = static_cast<double>(moments.count[k]);
          rows(static_cast<Eigen::Index>(k), 2) = terms.trace_contrib[k];
        }
        write_csv(out_dir(g) / "groups.csv", {"group", "count", "trace"}, rows);
        write_text(out_dir(g) / "diagnostics.json", j.dump(2) + "\n");
      }
      return 0;
    }

    if (active == bclt) {
      std::vector<std::size_t> ns;
      for (const auto& item : split_list(bc_ns)) {
        const auto v = parse_double(item);
        require(v && *v >= 2 && *v == std::floor(*v), "--ns entries must be integers >= 2");
        ns.push_back(static_cast<std::size_t>(*v));
      }
      PoissonGammaModel model(bc_alpha, bc_beta);
      const BcltResult r = bclt_expansion_check(model, power_function(bc_power),
                                                nested_poisson_datasets(ns, bc_rate, g.seed));
      if (g.format == "json") {
        json pts = json::array();
        for (const auto& p : r.points) {
          pts.push_back({{"n", p.n}, {"theta_hat", p.theta_hat}, {"e_post", p.e_post},
                         {"phi_hat", p.phi_hat}, {"correction", p.correction}, {"residual", p.residual}});
        }
        out << json{{"points", pts}, {"slope", r.slope}, {"intercept", r.intercept}}.dump(2) << '\n';
      } else {
        out << "n,theta_hat,e_post,phi_hat,correction,residual\n";
        for (const auto& p : r.points) {
          out << p.n << ',' << format_double(p.theta_hat) << ',' << format_double(p.e_post) << ','
              << format_double(p.phi_hat) << ',' << format_double(p.correction) << ','
              << format_double(p.residual) << '\n';
        }
        out << "slope," << format_double(r.slope) << '\n';
      }
      return 0;
    }

    if (active == experiment) {
      ex.seed = g.seed;
      ex.threads = threads;
      const ExperimentResult result = run_experiment(ex);
      const fs::path dir = out_dir(g);
      emit_report(result, dir);
      if (g.format == "json") {
        out << result_to_json(result).dump(2) << '\n';
      } else {
        out << render_report(result_estimates(result), result_to_json(result));
      }
      return 0;
    }

    if (active == report) {
      EstimateSet merged;
      std::optional<json> extras;
      for (const auto& file : rp_files) {
        const json j = read_json(file);
        const EstimateSet set = estimate_set_from_json(j);
        if (!extras) extras = j;
        if (merged.n == 0) merged.n = set.n;
        require(set.n == merged.n || set.n == 0, "estimate files disagree on N");
        if (merged.g_names.empty()) merged.g_names = set.g_names;
        for (const auto& e : set.estimates) {
          if (!merged.find(e.method)) merged.estimates.push_back(e);
        }
      }
      const std::string text = render_report(merged, extras);
      if (g.format == "json") {
        json j;
        const CovEstimate* ij_est = merged.find(CovEstimate::Method::ij);
        const CovEstimate* boot_est = merged.find(CovEstimate::Method::boot);
        const CovEstimate* bayes_est = merged.find(CovEstimate::Method::bayes);
        if (ij_est && boot_est && ij_est->se && boot_est->se) j["z"] = matrix_to_json(z_matrix(*ij_est, *boot_est));
        if (boot_est && boot_est->se) {
          if (ij_est) j["delta_ij"] = matrix_to_json(delta_metrics(*ij_est, *boot_est));
          if (bayes_est) j["delta_bayes"] = matrix_to_json(delta_metrics(*bayes_est, *boot_est));
        }
        out << j.dump(2) << '\n';
      } else {
        out << text;
      }
      if (!g.out.empty()) write_text(out_dir(g) / "report.txt", text);
      return 0;
    }
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return map_exit(e);
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

int cli_dispatch(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_dispatch(args, std::cout, std::cerr);
}

}  // namespace ijcov
