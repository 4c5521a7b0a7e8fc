#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include <ifepanel.hpp>

#include "oracles.hpp"

using namespace ifepanel;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& scratch() {
  static const fs::path dir = [] {
    fs::path p = fs::temp_directory_path() / ("ifepanel_cli_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string("\"") + IFEPANEL_CLI + "\" " + args + " > \"" +
                          (scratch() / "stdout.txt").string() + "\" 2> \"" + (scratch() / "stderr.txt").string() + "\"";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

fs::path write_panel(const std::string& name, const PanelData& d) {
  const fs::path p = scratch() / name;
  std::ofstream out(p);
  io::write_long_csv(out, d);
  return p;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

PanelData simulated_panel() {
  sim::DgpConfig c;
  c.n_bar = 60;
  c.t_bar = 30;
  c.psi = 0.2;
  return sim::generate(c, 4242).data;
}

}  // namespace

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run("estimate --input /nonexistent/file.csv --output " + q(scratch() / "none")), 2);
  EXPECT_EQ(run("no-such-command"), 2);
  EXPECT_EQ(run("estimate"), 2);  // --input is required
  EXPECT_EQ(run("--version"), 0);

  const fs::path bad = scratch() / "ragged.csv";
  std::ofstream(bad) << "unit,period,y,x\n1,1,2\n";
  EXPECT_EQ(run("estimate --input " + q(bad) + " --output " + q(scratch() / "ragged")), 2);
}

TEST(Cli, EstimateMatchesLibrary) {
  const fs::path csv = write_panel("sim.csv", simulated_panel());
  const fs::path out = scratch() / "est";
  ASSERT_EQ(run("estimate --input " + q(csv) + " --output " + q(out) +
                " --r 2 --vcov homoskedastic --corrections none"),
            0)
      << slurp(scratch() / "stderr.txt");
  const json rep = read_json(out / "report.json");
  const json& coef = rep["coefficients"][0];

  const PanelData d = io::read_long_csv(csv.string());
  IfeOptions opts;
  opts.r = 2;
  const IfeFit f = fit(d, opts);
  InferenceOptions io_opts;
  io_opts.bandwidths.m = default_bandwidth_m(d.t_bar());
  io_opts.vcov = VcovKind::Homoskedastic;
  io_opts.corrections = {false, false, false};
  const InferenceReport inf = infer(f, d, io_opts);

  EXPECT_NEAR(coef["beta_hat"].get<double>(), f.beta(0), 1e-12);
  EXPECT_NEAR(coef["beta_tilde"].get<double>(), inf.beta_tilde(0), 1e-12);
  EXPECT_NEAR(coef["std_error"].get<double>(), inf.std_errors(0), 1e-12);
  EXPECT_LT(std::abs(coef["beta_tilde"].get<double>() - 1.0), 3.0 * coef["std_error"].get<double>());
  EXPECT_EQ(rep["n_obs"].get<Index>(), d.n_obs());
  EXPECT_TRUE(fs::exists(out / "report.txt"));
  EXPECT_TRUE(fs::exists(out / "manifest.ini"));
}

TEST(Cli, TwoWayRankZeroIsWithinOls) {
  std::mt19937_64 rng(101);
  const Mask m = oracle::random_mask(15, 10, 0.2, rng);
  const PanelData d = oracle::random_panel(m, 2, rng);
  const fs::path csv = write_panel("within.csv", d);
  const fs::path out = scratch() / "within";
  ASSERT_EQ(run("estimate --input " + q(csv) + " --output " + q(out) + " --two-way --r 0"), 0)
      << slurp(scratch() / "stderr.txt");
  const json rep = read_json(out / "report.json");
  const Vector expected = detail::within_ols(io::read_long_csv(csv.string())).beta;
  for (Index k = 0; k < 2; ++k) {
    EXPECT_NEAR(rep["coefficients"][k]["beta_hat"].get<double>(), expected(k), 1e-8);
    EXPECT_NEAR(rep["coefficients"][k]["beta_tilde"].get<double>(), expected(k), 1e-8);
  }
}

TEST(Cli, SelectFactorsOnRankThree) {
  std::mt19937_64 rng(102);
  const Index n = 40, t = 30;
  const Matrix x = oracle::gaussian(n, t, rng);
  const Matrix y = 0.5 * x + 2.0 * oracle::gaussian(n, 3, rng) * oracle::gaussian(3, t, rng) +
                   0.01 * oracle::gaussian(n, t, rng);
  const fs::path csv = write_panel("rank3.csv", PanelData(Mask::Constant(n, t, true), y, {x}));
  const fs::path out = scratch() / "select";
  ASSERT_EQ(run("select-factors --input " + q(csv) + " --output " + q(out) + " --r-max 6 --pa-permutations 49"), 0)
      << slurp(scratch() / "stderr.txt");
  const json rep = read_json(out / "report.json");
  for (const char* k : {"ic2", "bic3", "er", "gr", "ed", "pa"}) EXPECT_EQ(rep["estimates"][k].get<int>(), 3) << k;

  std::istringstream spectrum(slurp(out / "spectrum.csv"));
  std::string line;
  std::getline(spectrum, line);
  EXPECT_EQ(line, "rank,singular_value,permuted_max");
  int rows = 0;
  double prev = 1e300;
  while (std::getline(spectrum, line)) {
    ++rows;
    const double s = std::stod(line.substr(line.find(',') + 1));
    EXPECT_LE(s, prev);
    prev = s;
  }
  EXPECT_EQ(rows, 20);
}

TEST(Cli, SimulateIsReproducible) {
  const std::string args = "simulate --nbar 20 --tbar 8 --psi 0,0.2 --pattern 1 --errors i,iv --reps 3 --seed 5";
  ASSERT_EQ(run(args + " --output " + q(scratch() / "sim_a")), 0) << slurp(scratch() / "stderr.txt");
  ASSERT_EQ(run(args + " --threads 2 --output " + q(scratch() / "sim_b")), 0);
  const std::string a = slurp(scratch() / "sim_a" / "table.csv");
  EXPECT_EQ(a, slurp(scratch() / "sim_b" / "table.csv"));
  std::istringstream in(a);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, sim::table_header());
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 4);
}

TEST(Cli, ManifestRerunIsByteIdentical) {
  const fs::path csv = write_panel("rerun.csv", simulated_panel());
  const fs::path first = scratch() / "rerun_a";
  ASSERT_EQ(run("estimate --input " + q(csv) + " --output " + q(first) + " --r 2 --n-starts 3 --seed 17"), 0);
  const fs::path second = scratch() / "rerun_b";
  ASSERT_EQ(run("estimate --config " + q(first / "manifest.ini") + " --output " + q(second)), 0)
      << slurp(scratch() / "stderr.txt");
  EXPECT_EQ(slurp(first / "report.json"), slurp(second / "report.json"));
  EXPECT_EQ(slurp(first / "report.txt"), slurp(second / "report.txt"));
}

TEST(Cli, NuclearNormEstimate) {
  const fs::path csv = write_panel("nn.csv", simulated_panel());
  const fs::path out = scratch() / "nn";
  const int rc = run("nn-estimate --input " + q(csv) + " --output " + q(out) + " --pa-permutations 19");
  ASSERT_TRUE(rc == 0 || rc == 3) << slurp(scratch() / "stderr.txt");
  const json rep = read_json(out / "report.json");
  EXPECT_EQ(rep["command"], "nn-estimate");
  EXPECT_EQ(rep["selection"]["selector"], "pa");
  EXPECT_EQ(rep["r"].get<int>(), rep["selection"]["estimates"]["pa"].get<int>());
  EXPECT_LT(std::abs(rep["coefficients"][0]["beta_hat"].get<double>() - 1.0), 0.2);
}
