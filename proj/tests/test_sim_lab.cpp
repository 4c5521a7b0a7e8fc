#include <gtest/gtest.h>

#include <set>

#include <ifepanel.hpp>

using namespace ifepanel;
using namespace ifepanel::sim;

namespace {

double variance(const Matrix& e) {
  const double mean = e.mean();
  return (e.array() - mean).square().sum() / static_cast<double>(e.size() - 1);
}

}  // namespace

TEST(DrawErrors, EveryConfigurationHasVarianceFour) {
  for (ErrorConfig c : {ErrorConfig::Homoskedastic, ErrorConfig::FatTails, ErrorConfig::CrossHet,
                        ErrorConfig::CrossHetSerial}) {
    Rng rng = make_rng(123, {static_cast<std::uint64_t>(c)});
    const double v = variance(draw_errors(c, 1000, 1000, rng));
    EXPECT_GE(v, 3.9) << to_string(c);
    EXPECT_LE(v, 4.1) << to_string(c);
    if (c == ErrorConfig::Homoskedastic) EXPECT_NEAR(v, 4.0, 0.08);
  }
}

TEST(DrawErrors, CrossSectionalHeteroskedasticity) {
  Rng rng = make_rng(7, {});
  const Matrix e = draw_errors(ErrorConfig::CrossHet, 2, 200000, rng);
  EXPECT_NEAR(variance(e.row(0)), 2.0, 0.05);  // first unit counts as odd
  EXPECT_NEAR(variance(e.row(1)), 6.0, 0.15);
}

TEST(DrawErrors, SerialCorrelationIsOneHalf) {
  Rng rng = make_rng(8, {});
  const Index n = 10, t = 10000;
  const Matrix e = draw_errors(ErrorConfig::CrossHetSerial, n, t, rng);
  double num = 0.0, den = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Vector row = e.row(i).transpose().array() - e.row(i).mean();
    num += row.head(t - 1).dot(row.tail(t - 1));
    den += row.squaredNorm();
  }
  EXPECT_NEAR(num / den, 0.5, 0.02);
}

TEST(ApplyPattern, BalancedDropsNothing) {
  Rng rng = make_rng(1, {});
  for (MissingPattern p : {MissingPattern::P1, MissingPattern::P2, MissingPattern::P3})
    EXPECT_TRUE(apply_pattern(p, 0.0, 10, 10, rng).empty());
}

TEST(ApplyPattern, BlockPatternSmallExample) {
  Rng rng = make_rng(2, {});
  const auto drop = apply_pattern(MissingPattern::P2, 0.2, 10, 4, rng);
  ASSERT_EQ(drop.size(), 8u);
  std::set<Index> units;
  for (const auto& c : drop) {
    units.insert(c.unit);
    EXPECT_GE(c.period, 2);  // the last two periods go
  }
  EXPECT_EQ(units.size(), 4u);
}

TEST(ApplyPattern, RandomCellsKeepEveryRowAndColumn) {
  Rng rng = make_rng(3, {});
  for (int rep = 0; rep < 50; ++rep) {
    const auto drop = apply_pattern(MissingPattern::P1, 0.4, 10, 10, rng);
    ASSERT_EQ(drop.size(), 40u);
    Mask m = Mask::Constant(10, 10, true);
    for (const auto& c : drop) {
      EXPECT_TRUE(m(c.unit, c.period));  // no duplicates
      m(c.unit, c.period) = false;
    }
    for (Index i = 0; i < 10; ++i) EXPECT_TRUE(m.row(i).any() && m.col(i).any());
  }
}

TEST(ApplyPattern, DropCountIsExact) {
  Rng rng = make_rng(4, {});
  for (MissingPattern p : {MissingPattern::P1, MissingPattern::P2, MissingPattern::P3})
    for (double psi : {0.2, 0.4})
      for (auto [n, t] : {std::pair<Index, Index>{150, 30}, {300, 40}, {50, 60}}) {
        const auto drop = apply_pattern(p, psi, n, t, rng);
        EXPECT_EQ(static_cast<long long>(drop.size()), std::llround(static_cast<double>(n * t) * psi))
            << to_string(p) << " psi=" << psi << " " << n << "x" << t;
      }
}

TEST(ApplyPattern, WindowPatternIsContiguousHalf) {
  Rng rng = make_rng(5, {});
  const Index n = 20, t = 10;
  const auto drop = apply_pattern(MissingPattern::P3, 0.4, n, t, rng);
  Mask m = Mask::Constant(n, t, true);
  for (const auto& c : drop) m(c.unit, c.period) = false;
  int short_units = 0;
  for (Index i = 0; i < n; ++i) {
    if (m.row(i).count() == t) continue;
    ++short_units;
    EXPECT_EQ(m.row(i).count(), t / 2);
    Index first = 0;
    while (!m(i, first)) ++first;
    for (Index s = first; s < first + t / 2; ++s) EXPECT_TRUE(m(i, s));
  }
  EXPECT_EQ(short_units, 16);
}

TEST(ApplyPattern, Infeasible) {
  Rng rng = make_rng(6, {});
  try {
    apply_pattern(MissingPattern::P2, 0.6, 10, 4, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::PatternInfeasible);
  }
  EXPECT_THROW(apply_pattern(MissingPattern::P1, 1.0, 10, 4, rng), Error);
}

TEST(Generate, FrameSizesAndCounts) {
  DgpConfig c;
  c.n_bar = 120;
  c.t_bar = 24;
  c.psi = 0.2;
  EXPECT_EQ(c.frame_units(), 150);
  EXPECT_EQ(c.frame_periods(), 30);
  for (MissingPattern p : {MissingPattern::P1, MissingPattern::P2, MissingPattern::P3}) {
    c.pattern = p;
    const Draw draw = generate(c, 9);
    EXPECT_EQ(draw.data.n_obs(), 150 * 30 - 900);
    EXPECT_EQ(draw.truth.dropped.size(), 900u);
  }
  c.psi = 0.0;
  const Draw full = generate(c, 9);
  EXPECT_TRUE(full.data.balanced());
  EXPECT_EQ(full.data.n_obs(), 120 * 24);
}

TEST(Generate, ModelHoldsExactly) {
  DgpConfig c;
  c.n_bar = 30;
  c.t_bar = 10;
  c.beta_true = 1.0;
  const Draw draw = generate(c, 10);
  const Matrix implied = draw.data.x(0) + draw.truth.loadings * draw.truth.factors.transpose() + draw.truth.errors;
  EXPECT_LT((draw.data.y() - implied).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Generate, BalancedDrawsDoNotDependOnPattern) {
  DgpConfig c;
  c.n_bar = 40;
  c.t_bar = 12;
  c.error_config = ErrorConfig::CrossHetSerial;
  c.pattern = MissingPattern::P1;
  const Draw a = generate(c, 11);
  c.pattern = MissingPattern::P2;
  const Draw b = generate(c, 11);
  c.pattern = MissingPattern::P3;
  const Draw d = generate(c, 11);
  EXPECT_EQ(a.data.y(), b.data.y());
  EXPECT_EQ(a.data.y(), d.data.y());
  EXPECT_EQ(a.data.x(0), d.data.x(0));
}

TEST(Generate, SameSeedSameDraw) {
  DgpConfig c;
  c.n_bar = 20;
  c.t_bar = 8;
  c.psi = 0.4;
  c.pattern = MissingPattern::P3;
  EXPECT_EQ(generate(c, 12).data.y(), generate(c, 12).data.y());
  EXPECT_NE(generate(c, 12).data.y(), generate(c, 13).data.y());
}

TEST(Parsing, PatternsAndConfigs) {
  EXPECT_EQ(parse_pattern("2"), MissingPattern::P2);
  EXPECT_EQ(parse_error_config("iv"), ErrorConfig::CrossHetSerial);
  EXPECT_THROW(parse_pattern("4"), Error);
  EXPECT_THROW(parse_error_config("v"), Error);
}

TEST(InferenceFor, MatchesConfiguration) {
  const InferenceOptions i = inference_for(ErrorConfig::Homoskedastic, 3, false);
  EXPECT_EQ(i.vcov, VcovKind::Homoskedastic);
  EXPECT_FALSE(i.corrections.b || i.corrections.c1 || i.corrections.c2);
  const InferenceOptions iii = inference_for(ErrorConfig::CrossHet, 3, false);
  EXPECT_EQ(iii.vcov, VcovKind::HeteroskedasticRobust);
  EXPECT_TRUE(iii.corrections.b && !iii.corrections.c2);
  const InferenceOptions iv = inference_for(ErrorConfig::CrossHetSerial, 3, false);
  EXPECT_EQ(iv.vcov, VcovKind::ClusteredByUnit);
  EXPECT_TRUE(iv.corrections.b && iv.corrections.c2 && !iv.corrections.c1);
}

TEST(Aggregate, MetricsFromOutcomes) {
  std::vector<RepOutcome> reps(4);
  const double betas[] = {0.9, 1.1, 1.0, 1.2};
  for (int j = 0; j < 4; ++j) {
    reps[j].ok = true;
    reps[j].beta_tilde = betas[j];
    reps[j].se = 0.1;
    reps[j].reject = j == 3;
  }
  reps.push_back(RepOutcome{});
  const SimMetrics m = aggregate(reps, 1.0, false);
  EXPECT_EQ(m.n_reps, 5);
  EXPECT_EQ(m.n_failed, 1);
  EXPECT_NEAR(m.rel_bias_pct, 5.0, 1e-12);
  const double sd = std::sqrt((0.15 * 0.15 + 0.05 * 0.05 + 0.05 * 0.05 + 0.15 * 0.15) / 3.0);
  EXPECT_NEAR(m.se_sd_ratio, 0.1 / sd, 1e-12);
  EXPECT_DOUBLE_EQ(m.size_at_5pct, 0.25);
  EXPECT_FALSE(m.mean_r_hat.has_value());
}

TEST(RunStudy, DeterministicAcrossWorkerCounts) {
  DgpConfig c;
  c.n_bar = 30;
  c.t_bar = 12;
  c.psi = 0.2;
  c.pattern = MissingPattern::P1;
  c.error_config = ErrorConfig::CrossHetSerial;
  c.seed = 314;
  StudyOptions opts;
  opts.n_reps = 6;
  opts.select_factors = true;
  opts.pa_permutations = 9;
  opts.r_bar = 4;
  const StudyResult serial = run_study(c, opts);
  opts.threads = 3;
  const StudyResult parallel = run_study(c, opts);
  EXPECT_EQ(table_row(c, serial.metrics), table_row(c, parallel.metrics));
  for (std::size_t r = 0; r < serial.replications.size(); ++r) {
    EXPECT_EQ(serial.replications[r].beta_tilde, parallel.replications[r].beta_tilde);
    EXPECT_EQ(serial.replications[r].se, parallel.replications[r].se);
    EXPECT_EQ(serial.replications[r].r_hat, parallel.replications[r].r_hat);
  }
  EXPECT_EQ(serial.metrics.rel_bias_pct, parallel.metrics.rel_bias_pct);
  EXPECT_TRUE(serial.metrics.mean_r_hat.has_value());
}

TEST(RunStudy, TableSchema) {
  EXPECT_EQ(table_header(), "nbar,tbar,psi,pattern,config,bias,ratio,size,ic2,bic3,er,gr,ed,pa,reps");
  DgpConfig c;
  c.n_bar = 20;
  c.t_bar = 8;
  StudyOptions opts;
  opts.n_reps = 2;
  const StudyResult res = run_study(c, opts);
  const std::string row = table_row(c, res.metrics);
  EXPECT_EQ(std::count(row.begin(), row.end(), ','), 14);
  EXPECT_EQ(row.substr(0, 11), "20,8,0,1,i,");
}

TEST(RunStudy, InvalidArguments) {
  DgpConfig c;
  StudyOptions opts;
  opts.n_reps = 0;
  EXPECT_THROW(run_study(c, opts), Error);
  opts.n_reps = 1;
  c.pattern = MissingPattern::P2;
  c.psi = 0.6;
  EXPECT_THROW(run_study(c, opts), Error);
}
