#pragma once

#include "ijcov/estimators.hpp"
#include "ijcov/io.hpp"
#include "ijcov/models.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace ijcov {

struct ExperimentConfig {
  std::string model = "poisson_re";  // or "normal_misspec"
  std::size_t n = 400;
  std::size_t groups = 40;
  double gamma_true = 1.5;
  double alpha = 25.0;
  double beta = 2.5;
  // normal_misspec
  std::string true_dist = "laplace";
  double dist_param = 1.0;
  double known_sd = 1.0;

  std::size_t draws = 4000;
  std::optional<std::size_t> burn_in;
  std::size_t boot_reps = 50;
  std::size_t sim_reps = 100;
  std::optional<std::size_t> blocks;
  std::size_t se_reps = 200;
  std::uint64_t seed = 0;
  std::size_t threads = 0;
  bool diagnostics = true;

  void validate() const;
};

nlohmann::json config_to_json(const ExperimentConfig& cfg);
/// Unknown keys are rejected; missing keys keep their defaults.
ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {});

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<std::string> g_names;
  CovEstimate v_sim;
  CovEstimate v_ij;
  CovEstimate v_boot;
  CovEstimate v_bayes;
  std::optional<CovEstimate> v_map;
  std::string map_status = "ok";
  Matrix z;            // IJ vs bootstrap
  Matrix z_sim;        // IJ vs simulated ground truth
  Matrix delta_ij;
  Matrix delta_bayes;
  std::optional<double> kappa_hat;
  std::optional<double> rho_nn_mean;
  std::optional<double> resid_t1_hat;
  std::optional<double> kappa_population;
  double ess_g = 0.0;
  std::size_t blocks_used = 0;
  std::map<std::string, double> timing;  // seconds per stage; not part of result.json
};

/// Simulate, sample, estimate (IJ, Bayes, bootstrap, sandwich), replicate
/// the ground truth and compare. Stage failures name the stage.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Deterministic JSON (no timing).
nlohmann::json result_to_json(const ExperimentResult& result);

/// Estimates in the file format that `report` consumes.
EstimateSet result_estimates(const ExperimentResult& result);

/// Human-readable report from serialized estimates only.
std::string render_report(const EstimateSet& set, const std::optional<nlohmann::json>& extras = {});

/// Plot-ready rows: method, i, j, estimate, se, lower, upper, se_width.
std::string estimates_csv(const EstimateSet& set);

/// Writes result.json, timing.json, estimates.json, estimates.csv,
/// metrics.csv and report.txt into `dir`.
void emit_report(const ExperimentResult& result, const std::filesystem::path& dir);

/// Splitmix-style derivation of independent sub-seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

}  // namespace ijcov
