// Simulate an unbalanced panel with two factors, estimate the model, choose
// the number of factors and run bias-corrected inference.

#include <iostream>

#include <ifepanel.hpp>

using namespace ifepanel;

int main() {
  sim::DgpConfig config;
  config.n_bar = 100;
  config.t_bar = 30;
  config.psi = 0.2;
  config.pattern = sim::MissingPattern::P1;
  config.error_config = sim::ErrorConfig::CrossHet;
  const sim::Draw draw = sim::generate(config, derive_seed(2024, {0}));
  const PanelData& d = draw.data;
  std::cout << "panel: N=" << d.n_units() << " T=" << d.n_periods() << " n=" << d.n_obs() << "\n";

  // Rank choice on the residual of an over-specified first stage.
  IfeOptions wide;
  wide.r = default_rbar(d.n_bar(), d.t_bar());
  wide.throw_on_failure = false;
  const IfeFit first = fit(d, wide);
  SelectionInput sel;
  sel.w = d.masked(d.residual_matrix(first.beta));
  sel.r_max = wide.r;
  const FactorEstimates r_hat = select(sel).estimates;
  std::cout << "factor count: IC2=" << r_hat.ic2 << " ED=" << r_hat.ed << " PA=" << r_hat.pa << "\n";

  IfeOptions opts;
  opts.r = r_hat.pa;
  const IfeFit f = fit(d, opts);

  InferenceOptions inf;
  inf.corrections = {true, false, false};
  inf.vcov = VcovKind::HeteroskedasticRobust;
  inf.bandwidths.m = default_bandwidth_m(d.t_bar());
  const InferenceReport rep = infer(f, d, inf);
  const ZTest z = z_test(rep, Vector::Constant(1, config.beta_true)).front();

  std::cout << "beta_hat=" << rep.beta_hat(0) << " beta_tilde=" << rep.beta_tilde(0) << " se=" << rep.std_errors(0)
            << "\n";
  std::cout << "z against the true value: " << z.statistic << (z.reject ? " (rejected)" : " (not rejected)") << "\n";
}
