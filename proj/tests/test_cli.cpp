#include "ijcov/cli.hpp"
#include "ijcov/estimators.hpp"
#include "ijcov/io.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

using namespace ijcov;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli_dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ijcov_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("ij on a hand-computed toy") {
  const fs::path dir = scratch_dir("toy");
  write_text(dir / "draws.csv", "draw,a,b,c\n0,0,1,0\n1,0,2,1\n2,0,3,5\n");
  write_text(dir / "loglik.csv", "draw,ll_1,ll_2\n0,-1,-2\n1,-2,-2\n2,-3,-5\n");
  // psi = 2 * cov(ll_n, g) = [[-2, -5], [-3, -9]]; covariance of its rows:
  const Run r = run({"ij", "--draws", (dir / "draws.csv").string(), "--loglik",
                     (dir / "loglik.csv").string(), "--g-cols", "2", "--out", (dir / "out").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out == "method,row,b,c\nij,b,0.5,2\nij,c,2,8\n");
  CHECK(slurp(dir / "out" / "psi.csv") == "psi_b,psi_c\n-2,-5\n-3,-9\n");
  const EstimateSet set = estimate_set_from_json(read_json(dir / "out" / "ij.json"));
  CHECK(set.n == 2);
  CHECK(set.estimates.at(0).v(1, 1) == 8.0);
}

TEST_CASE("usage errors exit 1 and name the problem") {
  const Run missing = run({"ij", "--draws", "x.csv"});
  CHECK(missing.code == 1);
  CHECK(missing.err.find("--loglik") != std::string::npos);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"simulate", "--no-such-flag", "1"}).code == 1);
  CHECK(run({}).code == 1);
  CHECK(run({"--format", "xml", "simulate"}).code == 1);
  const Run help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("bclt-check") != std::string::npos);
  const Run nofile = run({"ij", "--draws", "/nonexistent/d.csv", "--loglik", "/nonexistent/l.csv"});
  CHECK(nofile.code == 1);
}

TEST_CASE("simulate and sample are reproducible byte for byte") {
  const fs::path a = scratch_dir("det_a");
  const fs::path b = scratch_dir("det_b");
  for (const fs::path& d : {a, b}) {
    REQUIRE(run({"--seed", "7", "--out", d.string(), "simulate", "--n", "60", "--groups", "6"}).code == 0);
    REQUIRE(run({"--seed", "7", "--out", d.string(), "--threads", d == a ? "1" : "3", "sample",
                 "--data", (d / "data.csv").string(), "--draws", "200"})
                .code == 0);
  }
  for (const char* f : {"data.csv", "truth.csv", "draws.csv", "loglik.csv"}) {
    CHECK(slurp(a / f) == slurp(b / f));
    CHECK(!slurp(a / f).empty());
  }
  CHECK(slurp(a / "data.csv").rfind("y,group\n", 0) == 0);
  const Run ij = run({"--format", "json", "ij", "--draws", (a / "draws.csv").string(), "--loglik",
                      (a / "loglik.csv").string(), "--se", "--reps", "60"});
  REQUIRE(ij.code == 0);
  const EstimateSet set = estimate_set_from_json(nlohmann::json::parse(ij.out));
  CHECK(set.g_names == std::vector<std::string>{"g_gamma"});
  CHECK(set.estimates.at(0).se.has_value());
}

TEST_CASE("singular sandwich fit exits 2") {
  const fs::path dir = scratch_dir("singular");
  REQUIRE(run({"--seed", "1", "--out", dir.string(), "simulate", "--n", "40", "--groups", "4"}).code == 0);
  const Run r = run({"sandwich", "--data", (dir / "data.csv").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("singular fit") != std::string::npos);
}

TEST_CASE("normal-mean pipeline through the CLI") {
  const fs::path dir = scratch_dir("normal");
  REQUIRE(run({"--seed", "3", "--out", dir.string(), "simulate", "--model", "normal_misspec",
               "--n", "200"}).code == 0);
  const std::string data = (dir / "data.csv").string();
  const Run sw = run({"--format", "json", "sandwich", "--data", data, "--model", "normal_mean"});
  REQUIRE(sw.code == 0);
  const double v_map = estimate_set_from_json(nlohmann::json::parse(sw.out)).estimates.at(0).v(0, 0);
  REQUIRE(run({"--seed", "3", "--out", dir.string(), "sample", "--data", data, "--model",
               "normal_mean", "--draws", "4000"}).code == 0);
  const Run ij = run({"--format", "json", "ij", "--draws", (dir / "draws.csv").string(),
                      "--loglik", (dir / "loglik.csv").string()});
  REQUIRE(ij.code == 0);
  const double v_ij = estimate_set_from_json(nlohmann::json::parse(ij.out)).estimates.at(0).v(0, 0);
  CHECK(v_ij == doctest::Approx(v_map).epsilon(0.1));
  const Run boot = run({"--seed", "3", "--out", dir.string(), "bootstrap", "--data", data,
                        "--model", "normal_mean", "--reps", "30", "--draws", "200"});
  CHECK(boot.code == 0);
  const Run mc = run({"--seed", "3", "mcse", "--draws", (dir / "draws.csv").string(), "--loglik",
                      (dir / "loglik.csv").string(), "--blocks", "20", "--reps", "50", "--robustness"});
  CHECK(mc.code == 0);
  const Run rep = run({"report", "--estimates", (dir / "boot.json").string()});
  CHECK(rep.code == 0);
  CHECK(rep.out.find("boot") != std::string::npos);
}

TEST_CASE("config files supply defaults") {
  const fs::path dir = scratch_dir("config");
  write_text(dir / "cfg.json", R"({"n": 30, "groups": 3})");
  REQUIRE(run({"--config", (dir / "cfg.json").string(), "--out", dir.string(), "--seed", "2",
               "simulate"}).code == 0);
  CHECK(read_dataset(dir / "data.csv").size() == 30);
  REQUIRE(run({"--config", (dir / "cfg.json").string(), "--out", dir.string(), "simulate", "--n",
               "45"}).code == 0);
  CHECK(read_dataset(dir / "data.csv").size() == 45);
  write_text(dir / "bad.json", R"({"n": 30, "colour": "red"})");
  const Run bad = run({"--config", (dir / "bad.json").string(), "simulate"});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("colour") != std::string::npos);
}

TEST_CASE("report marks infinite Z entries") {
  const fs::path dir = scratch_dir("report");
  CovEstimate ij, boot;
  ij.method = CovEstimate::Method::ij;
  ij.v = Matrix::Constant(1, 1, 2.0);
  ij.se = Matrix::Zero(1, 1);
  boot.method = CovEstimate::Method::boot;
  boot.v = Matrix::Constant(1, 1, 1.0);
  boot.se = Matrix::Zero(1, 1);
  write_text(dir / "ij.json", estimate_set_to_json({10, {"gamma"}, {ij}}).dump());
  write_text(dir / "boot.json", estimate_set_to_json({10, {"gamma"}, {boot}}).dump());
  const Run r = run({"report", "--estimates", (dir / "ij.json").string(), (dir / "boot.json").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("inf*") != std::string::npos);
  const Run j = run({"--format", "json", "report", "--estimates", (dir / "ij.json").string(),
                     (dir / "boot.json").string()});
  REQUIRE(j.code == 0);
  const auto parsed = nlohmann::json::parse(j.out);
  CHECK(matrix_from_json(parsed.at("z"))(0, 0) == std::numeric_limits<double>::infinity());
}

TEST_CASE("bclt-check and diagnose run") {
  const Run b = run({"bclt-check", "--ns", "50,100,200,400"});
  REQUIRE(b.code == 0);
  CHECK(b.out.find("slope,") != std::string::npos);
  const fs::path dir = scratch_dir("diag");
  REQUIRE(run({"--seed", "4", "--out", dir.string(), "simulate", "--n", "80", "--groups", "8"}).code == 0);
  const Run d = run({"--seed", "4", "--out", dir.string(), "diagnose", "--data",
                     (dir / "data.csv").string(), "--truth", (dir / "truth.csv").string(),
                     "--draws", "400"});
  CHECK(d.code == 0);
  CHECK(fs::exists(dir / "diagnostics.json"));
}
