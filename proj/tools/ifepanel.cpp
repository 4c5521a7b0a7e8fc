// Command-line front end: estimate, select-factors, simulate, nn-estimate.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <ifepanel.hpp>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace ifepanel;

namespace {

constexpr const char* kVersion = "ifepanel 0.1.0";

// ---------------------------------------------------------------- options

struct DataOptions {
  std::string input;
  std::string output = ".";
  int lags = 0;
  bool two_way = false;
};

struct InferOptions {
  int l = 5;
  int m = -1;  // -1: rule of thumb on the average number of periods
  std::string vcov = "clustered";
  std::string corrections = "b,c1,c2";
  bool dof_adjust = true;
};

struct FitOptions {
  int n_starts = 1;
  double beta_tol = 1e-8;
  int max_outer = 10000;
};

struct EstimateOptions {
  DataOptions data;
  InferOptions inference;
  FitOptions fit;
  int r = 1;
  std::uint64_t seed = 0;
};

struct SelectOptions {
  DataOptions data;
  FitOptions fit;
  int r_max = -1;  // -1: default_rbar
  int pa_permutations = 199;
  std::string pure_factor = "residual";
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct SimulateOptions {
  std::string output = ".";
  std::string nbar = "120";
  std::string tbar = "24";
  std::string psi = "0";
  std::string pattern = "1";
  std::string errors = "i";
  int reps = 100;
  bool select_factors = false;
  int pa_permutations = 199;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct NnOptionsCli {
  DataOptions data;
  InferOptions inference;
  int r = -1;  // -1: chosen by `selector`
  int r_max = -1;
  std::string selector = "pa";
  int pa_permutations = 199;
  int post_iters = 4;
  int max_iter = 5000;
  double tol = 1e-7;
  std::uint64_t seed = 0;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& s) {
  double v = 0.0;
  if (!ifepanel::detail::parse_number(s, v)) throw Error(ErrorKind::InvalidArgument, "not a number: '" + s + "'");
  return v;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string yes_no(bool b) { return b ? "true" : "false"; }

VcovKind parse_vcov(const std::string& s) {
  if (s == "homoskedastic") return VcovKind::Homoskedastic;
  if (s == "heteroskedastic") return VcovKind::HeteroskedasticRobust;
  if (s == "clustered") return VcovKind::ClusteredByUnit;
  throw Error(ErrorKind::InvalidArgument, "unknown covariance kind '" + s + "'");
}

BiasSelection parse_corrections(const std::string& s) {
  BiasSelection b{false, false, false};
  for (const auto& item : split_list(s)) {
    if (item == "b") b.b = true;
    else if (item == "c1") b.c1 = true;
    else if (item == "c2") b.c2 = true;
    else if (item != "none") throw Error(ErrorKind::InvalidArgument, "unknown correction '" + item + "'");
  }
  return b;
}

void add_data_options(CLI::App* app, DataOptions& o) {
  app->add_option("--input", o.input, "long-format CSV: unit,period,y,x1,...")->required();
  app->add_option("--output", o.output, "output directory");
  app->add_option("--lags", o.lags, "number of outcome lags p")->check(CLI::NonNegativeNumber);
  app->add_flag("--two-way", o.two_way, "project out additive unit and period effects");
}

void add_infer_options(CLI::App* app, InferOptions& o) {
  app->add_option("--L", o.l, "weak-exogeneity bandwidth")->check(CLI::NonNegativeNumber);
  app->add_option("--M", o.m, "serial-correlation bandwidth (-1: rule of thumb)");
  app->add_option("--vcov", o.vcov, "homoskedastic | heteroskedastic | clustered");
  app->add_option("--corrections", o.corrections, "comma list of b,c1,c2 or none");
  app->add_option("--dof-adjust", o.dof_adjust, "degrees-of-freedom adjustment (true/false)");
}

void add_fit_options(CLI::App* app, FitOptions& o) {
  app->add_option("--n-starts", o.n_starts, "number of starting values")->check(CLI::PositiveNumber);
  app->add_option("--beta-tol", o.beta_tol, "relative tolerance on beta and the objective");
  app->add_option("--max-outer", o.max_outer, "maximum outer iterations")->check(CLI::PositiveNumber);
}

void data_manifest(io::KeyValues& kv, const DataOptions& o) {
  kv["input"] = o.input;
  kv["output"] = o.output;
  kv["lags"] = std::to_string(o.lags);
  kv["two-way"] = yes_no(o.two_way);
}

void infer_manifest(io::KeyValues& kv, const InferOptions& o) {
  kv["L"] = std::to_string(o.l);
  kv["M"] = std::to_string(o.m);
  kv["vcov"] = o.vcov;
  kv["corrections"] = o.corrections;
  kv["dof-adjust"] = yes_no(o.dof_adjust);
}

void fit_manifest(io::KeyValues& kv, const FitOptions& o) {
  kv["n-starts"] = std::to_string(o.n_starts);
  kv["beta-tol"] = fmt(o.beta_tol);
  kv["max-outer"] = std::to_string(o.max_outer);
}

// ---------------------------------------------------------------- output

fs::path prepare_output(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create output directory '" + dir + "'");
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << text;
}

void write_manifest(const fs::path& dir, const std::string& command, io::KeyValues kv) {
  std::ostringstream os;
  os << "# " << kVersion << "\n# rerun: ifepanel " << command << " --config manifest.ini\n";
  os << "[" << command << "]\n";
  io::write_ini(os, kv);
  write_text(dir / "manifest.ini", os.str());
}

json to_json(const Vector& v) {
  json a = json::array();
  for (Index j = 0; j < v.size(); ++j) a.push_back(v(j));
  return a;
}

json to_json(const Matrix& m) {
  json a = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    a.push_back(row);
  }
  return a;
}

json estimates_json(const FactorEstimates& e) {
  return json{{"ic2", e.ic2}, {"bic3", e.bic3}, {"er", e.er}, {"gr", e.gr}, {"ed", e.ed}, {"pa", e.pa}};
}

// ---------------------------------------------------------------- shared steps

PanelData prepare_panel(const DataOptions& o) {
  PanelData d = io::read_long_csv(o.input);
  d = with_outcome_lags(d, o.lags);
  if (o.two_way) d = two_way_within(d);
  if (d.n_obs() < d.n_regressors() + 1)
    throw Error(ErrorKind::InvalidArgument, "too few observations after lag construction");
  return d;
}

InferenceOptions inference_options(const InferOptions& o, const PanelData& d) {
  InferenceOptions io;
  io.bandwidths.l = o.l;
  io.bandwidths.m = o.m >= 0 ? o.m : default_bandwidth_m(d.t_bar());
  io.vcov = parse_vcov(o.vcov);
  io.corrections = parse_corrections(o.corrections);
  io.dof_adjust = o.dof_adjust;
  return io;
}

struct Estimation {
  IfeFit fit;
  std::optional<InferenceReport> inference;
  std::string inference_error;
};

json coefficient_table(const PanelData& d, const IfeFit& fit, const std::optional<InferenceReport>& rep) {
  json rows = json::array();
  for (Index k = 0; k < d.n_regressors(); ++k) {
    json row{{"name", d.regressor_names()[static_cast<std::size_t>(k)]}, {"beta_hat", fit.beta(k)}};
    if (rep) {
      row["beta_tilde"] = rep->beta_tilde(k);
      row["b"] = rep->b_hat(k);
      row["c1"] = rep->c1_hat(k);
      row["c2"] = rep->c2_hat(k);
      row["std_error"] = rep->std_errors(k);
      row["z"] = rep->z_stats(k);
    }
    rows.push_back(row);
  }
  return rows;
}

std::string human_table(const std::string& title, const PanelData& d, const IfeFit& fit,
                        const std::optional<InferenceReport>& rep) {
  std::ostringstream os;
  os << title << ": N=" << d.n_units() << " T=" << d.n_periods() << " n=" << d.n_obs() << " K=" << d.n_regressors()
     << " R=" << fit.r << " converged=" << yes_no(fit.converged) << "\n";
  os << std::left << std::setw(14) << "coefficient" << std::right;
  for (const char* h : {"beta_hat", "beta_tilde", "B", "C1", "C2", "se", "z"}) os << std::setw(13) << h;
  os << "\n" << std::fixed << std::setprecision(6);
  for (Index k = 0; k < d.n_regressors(); ++k) {
    os << std::left << std::setw(14) << d.regressor_names()[static_cast<std::size_t>(k)] << std::right
       << std::setw(13) << fit.beta(k);
    if (rep) {
      for (double v : {rep->beta_tilde(k), rep->b_hat(k), rep->c1_hat(k), rep->c2_hat(k), rep->std_errors(k),
                       rep->z_stats(k)})
        os << std::setw(13) << v;
    }
    os << "\n";
  }
  if (rep) os << "covariance: " << to_string(rep->vcov_kind) << (rep->dof_adjusted ? " (dof adjusted)" : "") << "\n";
  return os.str();
}

/// Fills the common part of an estimation report and writes report.json,
/// report.txt and prints the table.
void emit_estimation(const fs::path& dir, const std::string& command, const PanelData& d, int lags,
                     const Estimation& est, json extra) {
  json report;
  report["command"] = command;
  report["version"] = kVersion;
  report["n_units"] = d.n_units();
  report["n_periods"] = d.n_periods();
  report["n_obs"] = d.n_obs();
  report["n_regressors"] = d.n_regressors();
  report["r"] = est.fit.r;
  report["converged"] = est.fit.converged;
  report["outer_iterations"] = est.fit.outer_iterations;
  report["objective"] = est.fit.objective;
  report["sigma2"] = est.fit.sigma2;
  report["weak_units"] = est.fit.weak_units.size();
  report["coefficients"] = coefficient_table(d, est.fit, est.inference);
  if (est.inference) {
    const auto& rep = *est.inference;
    report["vcov_kind"] = to_string(rep.vcov_kind);
    report["dof_adjusted"] = rep.dof_adjusted;
    report["bandwidths"] = json{{"L", rep.bandwidths.l}, {"M", rep.bandwidths.m}};
    report["corrections"] = json{{"b", rep.applied.b}, {"c1", rep.applied.c1}, {"c2", rep.applied.c2}};
    report["vcov"] = to_json(rep.vcov);
    if (lags > 0) {
      const Index k_lag0 = d.n_regressors() - lags;
      std::vector<Index> gammas;
      for (Index j = k_lag0; j < d.n_regressors(); ++j) gammas.push_back(j);
      double sum_hat = 0.0, sum_tilde = 0.0;
      for (Index j : gammas) {
        sum_hat += est.fit.beta(j);
        sum_tilde += rep.beta_tilde(j);
      }
      json lr{{"beta_index", 0}, {"sum_gamma_hat", sum_hat}, {"sum_gamma_tilde", sum_tilde}};
      try {
        const LongRunEffect e = long_run_effect(0, gammas, rep);
        lr["estimate"] = e.estimate;
        lr["std_error"] = e.std_error;
      } catch (const Error& e) {
        lr["error"] = e.what();
      }
      report["long_run_effect"] = lr;
    }
  } else {
    report["inference_error"] = est.inference_error;
  }
  report["warnings"] = d.report().warnings;
  for (auto& [k, v] : extra.items()) report[k] = v;
  write_text(dir / "report.json", report.dump(2) + "\n");
  const std::string table = human_table(command, d, est.fit, est.inference);
  write_text(dir / "report.txt", table);
  std::cout << table;
}

Estimation estimate_with_inference(const PanelData& d, const IfeFit& fit, const InferOptions& o) {
  Estimation est{fit, std::nullopt, {}};
  try {
    est.inference = infer(fit, d, inference_options(o, d));
  } catch (const Error& e) {
    if (e.is_data_error()) throw;
    est.inference_error = e.what();
  }
  return est;
}

// ---------------------------------------------------------------- commands

int cmd_estimate(const EstimateOptions& o) {
  const fs::path dir = prepare_output(o.data.output);
  const PanelData d = prepare_panel(o.data);
  IfeOptions opts;
  opts.r = o.r;
  opts.n_starts = o.fit.n_starts;
  opts.beta_tol = opts.obj_tol = o.fit.beta_tol;
  opts.max_outer = o.fit.max_outer;
  opts.rng_seed = o.seed;
  int rc = 0;
  IfeFit fit;
  try {
    fit = ifepanel::fit(d, opts);
  } catch (const NoConvergence<IfeFit>& e) {
    std::cerr << "error: " << e.what() << "\n";
    fit = e.partial();
    rc = 3;
  }
  const Estimation est = estimate_with_inference(d, fit, o.inference);
  if (!est.inference) {
    std::cerr << "error: " << est.inference_error << "\n";
    rc = 3;
  }
  emit_estimation(dir, "estimate", d, o.data.lags, est, json::object());

  io::KeyValues kv;
  data_manifest(kv, o.data);
  infer_manifest(kv, o.inference);
  fit_manifest(kv, o.fit);
  kv["r"] = std::to_string(o.r);
  kv["seed"] = std::to_string(o.seed);
  write_manifest(dir, "estimate", kv);
  return rc;
}

int cmd_select_factors(const SelectOptions& o) {
  const fs::path dir = prepare_output(o.data.output);
  const PanelData d = prepare_panel(o.data);
  const Index r_max = o.r_max >= 0 ? o.r_max : default_rbar(d.n_bar(), d.t_bar());
  IfeOptions opts;
  opts.r = r_max;
  opts.n_starts = o.fit.n_starts;
  opts.beta_tol = opts.obj_tol = o.fit.beta_tol;
  opts.max_outer = o.fit.max_outer;
  opts.rng_seed = o.seed;
  opts.throw_on_failure = false;
  const IfeFit fit = ifepanel::fit(d, opts);

  MaskedMatrix w;
  if (o.pure_factor == "residual") {
    w = d.masked(d.residual_matrix(fit.beta));
  } else if (o.pure_factor == "fitted") {
    Matrix fitted = Matrix::Zero(d.n_units(), d.n_periods());
    for (Index k = 0; k < d.n_regressors(); ++k) fitted += fit.beta(k) * d.x(k);
    w = d.masked(fitted);
  } else {
    throw Error(ErrorKind::InvalidArgument, "--pure-factor must be residual or fitted");
  }

  SelectionInput in;
  in.w = w;
  in.r_max = r_max;
  in.pa_permutations = o.pa_permutations;
  in.pa_seed = o.seed;
  in.threads = o.threads;
  const SelectionResult sel = select(in);

  const double scale = std::sqrt(static_cast<double>(d.n_units()) * static_cast<double>(d.n_periods()));
  const std::vector<double> sv = singular_value_list(w.values);
  const std::vector<double> perm = permuted_spectrum(w, o.pa_permutations, o.seed, o.threads);
  const std::size_t count = std::min<std::size_t>(20, sv.size());
  std::ostringstream csv;
  csv << "rank,singular_value,permuted_max\n" << std::setprecision(17);
  for (std::size_t j = 0; j < count; ++j) csv << (j + 1) << ',' << sv[j] / scale << ',' << perm[j] / scale << '\n';
  write_text(dir / "spectrum.csv", csv.str());

  json report;
  report["command"] = "select-factors";
  report["version"] = kVersion;
  report["n_units"] = d.n_units();
  report["n_periods"] = d.n_periods();
  report["n_obs"] = d.n_obs();
  report["r_max"] = r_max;
  report["first_stage_converged"] = fit.converged;
  report["first_stage_beta"] = to_json(fit.beta);
  report["pure_factor"] = o.pure_factor;
  report["estimates"] = estimates_json(sel.estimates);
  report["eigenvalues"] = sel.eigenvalue_spectrum;
  report["pa_thresholds"] = sel.pa_thresholds;
  write_text(dir / "report.json", report.dump(2) + "\n");

  std::cout << "select-factors: N=" << d.n_units() << " T=" << d.n_periods() << " r_max=" << r_max << "\n";
  const auto& e = sel.estimates;
  std::cout << "IC2=" << e.ic2 << " BIC3=" << e.bic3 << " ER=" << e.er << " GR=" << e.gr << " ED=" << e.ed
            << " PA=" << e.pa << "\n";

  io::KeyValues kv;
  data_manifest(kv, o.data);
  fit_manifest(kv, o.fit);
  kv["r-max"] = std::to_string(o.r_max);
  kv["pa-permutations"] = std::to_string(o.pa_permutations);
  kv["pure-factor"] = o.pure_factor;
  kv["seed"] = std::to_string(o.seed);
  kv["threads"] = std::to_string(o.threads);
  write_manifest(dir, "select-factors", kv);
  return 0;
}

int cmd_simulate(const SimulateOptions& o) {
  const fs::path dir = prepare_output(o.output);
  std::vector<double> nbars, tbars, psis;
  for (const auto& s : split_list(o.nbar)) nbars.push_back(to_double(s));
  for (const auto& s : split_list(o.tbar)) tbars.push_back(to_double(s));
  for (const auto& s : split_list(o.psi)) psis.push_back(to_double(s));
  std::vector<sim::MissingPattern> patterns;
  for (const auto& s : split_list(o.pattern)) patterns.push_back(sim::parse_pattern(s));
  std::vector<sim::ErrorConfig> configs;
  for (const auto& s : split_list(o.errors)) configs.push_back(sim::parse_error_config(s));
  if (nbars.empty() || tbars.empty() || psis.empty() || patterns.empty() || configs.empty())
    throw Error(ErrorKind::InvalidArgument, "every grid dimension needs at least one value");

  sim::StudyOptions study;
  study.n_reps = o.reps;
  study.threads = o.threads;
  study.select_factors = o.select_factors;
  study.pa_permutations = o.pa_permutations;

  std::ostringstream csv;
  csv << sim::table_header() << '\n';
  json cells = json::array();
  bool failed = false;
  for (auto pattern : patterns)
    for (auto config : configs)
      for (double psi : psis)
        for (double nbar : nbars)
          for (double tbar : tbars) {
            sim::DgpConfig c;
            c.n_bar = nbar;
            c.t_bar = tbar;
            c.psi = psi;
            c.pattern = pattern;
            c.error_config = config;
            // the pattern is left out so balanced cells share draws across patterns
            c.seed = derive_seed(o.seed, {static_cast<std::uint64_t>(std::llround(nbar * 1000)),
                                          static_cast<std::uint64_t>(std::llround(tbar * 1000)),
                                          static_cast<std::uint64_t>(std::llround(psi * 1e6)),
                                          static_cast<std::uint64_t>(config)});
            json cell{{"nbar", nbar},   {"tbar", tbar}, {"psi", psi}, {"pattern", sim::to_string(pattern)},
                      {"config", sim::to_string(config)}, {"seed", c.seed}, {"reps", o.reps}};
            try {
              const sim::StudyResult res = sim::run_study(c, study);
              const auto& m = res.metrics;
              csv << sim::table_row(c, m) << '\n';
              cell["bias"] = m.rel_bias_pct;
              cell["ratio"] = m.se_sd_ratio;
              cell["size"] = m.size_at_5pct;
              cell["failed"] = m.n_failed;
              if (m.mean_r_hat) {
                const auto& r = *m.mean_r_hat;
                cell["mean_r_hat"] =
                    json{{"ic2", r[0]}, {"bic3", r[1]}, {"er", r[2]}, {"gr", r[3]}, {"ed", r[4]}, {"pa", r[5]}};
              }
              std::cerr << sim::table_row(c, m) << '\n';
            } catch (const Error& e) {
              if (e.is_data_error()) throw;
              failed = true;
              cell["error"] = e.what();
              std::cerr << "error: " << e.what() << '\n';
            }
            cells.push_back(cell);
          }
  write_text(dir / "table.csv", csv.str());
  json report{{"command", "simulate"}, {"version", kVersion}, {"cells", cells}};
  write_text(dir / "report.json", report.dump(2) + "\n");

  io::KeyValues kv;
  kv["output"] = o.output;
  kv["nbar"] = o.nbar;
  kv["tbar"] = o.tbar;
  kv["psi"] = o.psi;
  kv["pattern"] = o.pattern;
  kv["errors"] = o.errors;
  kv["reps"] = std::to_string(o.reps);
  kv["select-factors"] = yes_no(o.select_factors);
  kv["pa-permutations"] = std::to_string(o.pa_permutations);
  kv["seed"] = std::to_string(o.seed);
  kv["threads"] = std::to_string(o.threads);
  write_manifest(dir, "simulate", kv);
  return failed ? 3 : 0;
}

Index pick_estimate(const FactorEstimates& e, const std::string& name) {
  if (name == "ic2") return e.ic2;
  if (name == "bic3") return e.bic3;
  if (name == "er") return e.er;
  if (name == "gr") return e.gr;
  if (name == "ed") return e.ed;
  if (name == "pa") return e.pa;
  throw Error(ErrorKind::InvalidArgument, "unknown selector '" + name + "'");
}

int cmd_nn_estimate(const NnOptionsCli& o) {
  const fs::path dir = prepare_output(o.data.output);
  const PanelData d = prepare_panel(o.data);
  NnOptions nn_opts;
  nn_opts.max_iter = o.max_iter;
  nn_opts.tol = o.tol;
  const NnFit nn = fit_nuclear(d, nn_opts);

  Index r = o.r;
  json selection;
  if (r < 0) {
    SelectionInput in;
    in.w = d.masked(d.residual_matrix(nn.beta_star));
    in.r_max = o.r_max >= 0 ? o.r_max : default_rbar(d.n_bar(), d.t_bar());
    in.pa_permutations = o.pa_permutations;
    in.pa_seed = o.seed;
    const SelectionResult sel = select(in);
    r = pick_estimate(sel.estimates, o.selector);
    selection = json{{"selector", o.selector}, {"r_max", in.r_max}, {"estimates", estimates_json(sel.estimates)}};
  }
  PostEstimateOptions post;
  post.n_iters = o.post_iters;
  const IfeFit fit = post_estimate(nn, d, r, post);
  const Estimation est = estimate_with_inference(d, fit, o.inference);
  int rc = nn.converged ? 0 : 3;
  if (!nn.converged) std::cerr << "error: nuclear-norm solver did not converge\n";
  if (!est.inference) {
    std::cerr << "error: " << est.inference_error << "\n";
    rc = 3;
  }
  json extra{{"nuclear", json{{"beta_star", to_json(nn.beta_star)},
                              {"objective", nn.nuclear_objective},
                              {"iterations", nn.iterations},
                              {"converged", nn.converged}}},
             {"post_iterations", o.post_iters}};
  if (!selection.is_null()) extra["selection"] = selection;
  emit_estimation(dir, "nn-estimate", d, o.data.lags, est, extra);

  io::KeyValues kv;
  data_manifest(kv, o.data);
  infer_manifest(kv, o.inference);
  kv["r"] = std::to_string(o.r);
  kv["r-max"] = std::to_string(o.r_max);
  kv["selector"] = o.selector;
  kv["pa-permutations"] = std::to_string(o.pa_permutations);
  kv["post-iters"] = std::to_string(o.post_iters);
  kv["max-iter"] = std::to_string(o.max_iter);
  kv["tol"] = fmt(o.tol);
  kv["seed"] = std::to_string(o.seed);
  write_manifest(dir, "nn-estimate", kv);
  return rc;
}

/// Splices `key = value` pairs from a --config file in front of the command
/// line arguments, so explicit flags win.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  std::vector<std::string> out;
  std::string config;
  std::vector<std::string> rest;
  for (std::size_t j = 1; j < args.size(); ++j) {
    if (args[j] == "--config" && j + 1 < args.size()) {
      config = args[++j];
    } else if (args[j].rfind("--config=", 0) == 0) {
      config = args[j].substr(9);
    } else {
      rest.push_back(args[j]);
    }
  }
  out.push_back(args[0]);
  if (config.empty()) {
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
  }
  if (rest.empty()) throw Error(ErrorKind::InvalidArgument, "--config needs a subcommand");
  out.push_back(rest.front());
  for (const auto& [k, v] : io::read_ini(config)) out.push_back("--" + k + "=" + v);
  out.insert(out.end(), rest.begin() + 1, rest.end());
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interactive fixed effects panel estimation"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_version_flag("--version", kVersion);
  app.add_option("--config", "INI file of option = value lines; flags override it");

  EstimateOptions est;
  auto* estimate = app.add_subcommand("estimate", "fit the interactive fixed effects model and report inference");
  add_data_options(estimate, est.data);
  add_infer_options(estimate, est.inference);
  add_fit_options(estimate, est.fit);
  estimate->add_option("--r", est.r, "number of factors")->check(CLI::NonNegativeNumber);
  estimate->add_option("--seed", est.seed, "seed for additional starting values");

  SelectOptions sel;
  auto* select_cmd = app.add_subcommand("select-factors", "estimate the number of factors");
  add_data_options(select_cmd, sel.data);
  add_fit_options(select_cmd, sel.fit);
  select_cmd->add_option("--r-max", sel.r_max, "upper bound (-1: rule of thumb)");
  select_cmd->add_option("--pa-permutations", sel.pa_permutations)->check(CLI::PositiveNumber);
  select_cmd->add_option("--pure-factor", sel.pure_factor, "residual (y - x'b) or fitted (x'b)");
  select_cmd->add_option("--seed", sel.seed);
  select_cmd->add_option("--threads", sel.threads);

  SimulateOptions simo;
  auto* simulate = app.add_subcommand("simulate", "run the Monte Carlo grid");
  simulate->add_option("--output", simo.output);
  simulate->add_option("--nbar", simo.nbar, "comma list of average unit counts");
  simulate->add_option("--tbar", simo.tbar, "comma list of average period counts");
  simulate->add_option("--psi", simo.psi, "comma list of missing fractions");
  simulate->add_option("--pattern", simo.pattern, "comma list of 1,2,3");
  simulate->add_option("--errors", simo.errors, "comma list of i,ii,iii,iv");
  simulate->add_option("--reps", simo.reps)->check(CLI::PositiveNumber);
  simulate->add_option("--select-factors", simo.select_factors, "also estimate the number of factors (true/false)");
  simulate->add_option("--pa-permutations", simo.pa_permutations)->check(CLI::PositiveNumber);
  simulate->add_option("--seed", simo.seed);
  simulate->add_option("--threads", simo.threads, "worker threads (0: all cores)");

  NnOptionsCli nno;
  auto* nn = app.add_subcommand("nn-estimate", "nuclear-norm estimate followed by post-estimation");
  add_data_options(nn, nno.data);
  add_infer_options(nn, nno.inference);
  nn->add_option("--r", nno.r, "factors for post-estimation (-1: choose with --selector)");
  nn->add_option("--r-max", nno.r_max, "upper bound for the selector (-1: rule of thumb)");
  nn->add_option("--selector", nno.selector, "ic2 | bic3 | er | gr | ed | pa");
  nn->add_option("--pa-permutations", nno.pa_permutations)->check(CLI::PositiveNumber);
  nn->add_option("--post-iters", nno.post_iters)->check(CLI::PositiveNumber);
  nn->add_option("--max-iter", nno.max_iter)->check(CLI::PositiveNumber);
  nn->add_option("--tol", nno.tol);
  nn->add_option("--seed", nno.seed);

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::vector<char*> ptrs;
    for (auto& a : args) ptrs.push_back(a.data());
    try {
      app.parse(static_cast<int>(ptrs.size()), ptrs.data());
    } catch (const CLI::ParseError& e) {
      const int rc = app.exit(e);
      return rc == 0 ? 0 : 2;
    }
    if (estimate->parsed()) return cmd_estimate(est);
    if (select_cmd->parsed()) return cmd_select_factors(sel);
    if (simulate->parsed()) return cmd_simulate(simo);
    if (nn->parsed()) return cmd_nn_estimate(nno);
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.is_data_error() ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
