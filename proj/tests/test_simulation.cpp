#include <metareg/simulation.hpp>

#include <boost/math/distributions/students_t.hpp>
#include <gtest/gtest.h>

using namespace metareg;

TEST(GroupSizes, SixStudies) {
  EXPECT_EQ(group_size_vector(6, 15), (std::vector<int>{6, 8, 9, 10, 42, 15}));
  EXPECT_EQ(group_size_vector(6, 50), (std::vector<int>{41, 43, 44, 45, 77, 50}));
}

TEST(GroupSizes, RepeatedBase) {
  EXPECT_EQ(group_size_vector(10, 25),
            (std::vector<int>{16, 18, 19, 20, 52, 16, 18, 19, 20, 52}));
  EXPECT_EQ(group_size_vector(50, 15).size(), 50u);
}

TEST(GroupSizes, BaseMeanMatchesLabel) {
  for (int nbar : {15, 25, 50}) {
    const auto sizes = group_size_vector(10, nbar);
    EXPECT_EQ(std::accumulate(sizes.begin(), sizes.end(), 0) / 10, nbar);
  }
}

TEST(GroupSizes, Unsupported) {
  EXPECT_THROW(group_size_vector(7, 25), ValidationError);
  EXPECT_THROW(group_size_vector(10, 30), ValidationError);
}

TEST(GenerateStudy, CorrectionAndVariance) {
  EXPECT_NEAR(hedges_correction(30), 1.0 - 3.0 / 111.0, 1e-15);
  EXPECT_NEAR(hedges_correction(30), 0.972973, 1e-6);
  ReplicationRng rng(RandomStream(4));
  for (int i = 0; i < 1000; ++i) {
    const auto d = generate_study(rng, 0.3, 25);
    EXPECT_NEAR(d.v, 2.0 / 25 + d.y * d.y / 100.0, 1e-15);
    EXPECT_GE(d.v, 0.08);
  }
}

TEST(GenerateStudy, ZeroEffectIsUnbiased) {
  ReplicationRng rng(RandomStream(8));
  const int n = 1'000'000;
  double s = 0.0, ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double y = generate_study(rng, 0.0, 10).y;
    s += y;
    ss += y * y;
  }
  const double mean = s / n;
  const double se = std::sqrt((ss / n - mean * mean) / n);
  EXPECT_LT(std::abs(mean), 4.0 * se);
}

TEST(ScenarioSpec, IdAndHashAreStable) {
  ScenarioSpec spec;
  EXPECT_EQ(spec.id(), "k=6;nbar=25;tau2=0.5;beta1=0.2;beta2=0.2;beta12=0;"
                       "rho=0.2;re=normal;fit=0+x1+x2+x1:x2");
  EXPECT_EQ(spec.hash(), fnv1a64(spec.id()));
  ScenarioSpec other = spec;
  other.re_dist = RandomEffectDist::T3;
  EXPECT_NE(other.hash(), spec.hash());
  other = spec;
  other.seed = 99; // the seed is not part of the scenario identity
  EXPECT_EQ(other.id(), spec.id());
}

TEST(ScenarioSpec, Validation) {
  ScenarioSpec spec;
  EXPECT_NO_THROW(spec.validate());
  spec.rho = 1.0;
  EXPECT_THROW(spec.validate(), ValidationError);
  spec = {};
  spec.k = 7;
  EXPECT_THROW(spec.validate(), ValidationError);
  spec = {};
  spec.fit.moderators = {0, 1, 0, 1, 0, 1};
  EXPECT_THROW(spec.validate(), ValidationError); // p = 7 > k = 6
}

TEST(Grid, FullExperimentCellCount) {
  EXPECT_EQ(scenario_grid(GridConfig::full_experiment()).size(), 77760u);
}

TEST(Grid, SingleCell) {
  const auto grid = scenario_grid(GridConfig{});
  ASSERT_EQ(grid.size(), 1u);
  EXPECT_EQ(grid[0].id(), ScenarioSpec{}.id());
}

TEST(Grid, OrderIsLexicographic) {
  GridConfig cfg;
  cfg.k = {6, 10};
  cfg.tau2 = {0.1, 0.2, 0.3};
  const auto grid = scenario_grid(cfg);
  ASSERT_EQ(grid.size(), 6u);
  const std::vector<std::pair<int, double>> expected{
      {6, 0.1}, {6, 0.2}, {6, 0.3}, {10, 0.1}, {10, 0.2}, {10, 0.3}};
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(grid[i].k, expected[i].first);
    EXPECT_EQ(grid[i].tau2, expected[i].second);
  }
  cfg.rho.clear();
  EXPECT_THROW(scenario_grid(cfg), ValidationError);
}

TEST(Aggregation, McStandardError) {
  EXPECT_NEAR(mc_standard_error(0.95, 10000), 0.00218, 1e-5);
  EXPECT_EQ(mc_standard_error(1.0, 50), 0.0);
}

TEST(Aggregation, Median) {
  EXPECT_EQ(median_of({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median_of({4.0, 1.0, 3.0, 2.0}), 2.5);
  EXPECT_TRUE(std::isnan(median_of({})));
}

TEST(Simulation, TrueInteractionIsZeroByDefault) {
  ScenarioSpec spec;
  const auto sim = simulate_dataset(spec, 0);
  const auto truth = true_coefficients(spec, sim.design);
  EXPECT_EQ(truth, (std::vector<double>{0.2, 0.2, 0.0}));
  spec.fit.intercept = true;
  EXPECT_EQ(true_coefficients(spec, simulate_dataset(spec, 0).design),
            (std::vector<double>{0.0, 0.2, 0.2, 0.0}));
}

TEST(Simulation, ReplicationsAreReproducible) {
  ScenarioSpec spec;
  const auto a = simulate_dataset(spec, 17);
  const auto b = simulate_dataset(spec, 17);
  const auto c = simulate_dataset(spec, 18);
  EXPECT_EQ(a.data.effects(), b.data.effects());
  EXPECT_EQ(a.data.variances(), b.data.variances());
  EXPECT_NE(a.data.effects(), c.data.effects());
}

TEST(Simulation, IdenticalAcrossWorkerCounts) {
  ScenarioSpec spec;
  spec.reps = 300;
  const auto one = run_scenario(spec, 1);
  for (int workers : {4, 16}) {
    const auto many = run_scenario(spec, workers);
    for (std::size_t e = 0; e < kAllVariants.size(); ++e)
      for (std::size_t j = 0; j < 3; ++j) {
        const auto &x = one.summary[e][j];
        const auto &y = many.summary[e][j];
        EXPECT_EQ(x.n, y.n);
        EXPECT_EQ(x.coverage, y.coverage);
        EXPECT_EQ(x.mean_length, y.mean_length);
        EXPECT_EQ(x.median_length, y.median_length);
      }
  }
}

TEST(Simulation, Hc1OverHc0LengthRatio) {
  ScenarioSpec spec;
  const double multiplier = t_multiplier(3, 0.95);
  const double ratio = std::sqrt(6.0 / 3.0);
  for (std::int64_t r = 0; r < 50; ++r) {
    const auto rec = run_replication(spec, r, multiplier);
    ASSERT_FALSE(rec.failed);
    const auto &hc0 = rec.intervals[static_cast<std::size_t>(CovVariant::HC0)];
    const auto &hc1 = rec.intervals[static_cast<std::size_t>(CovVariant::HC1)];
    for (std::size_t j = 0; j < 3; ++j)
      EXPECT_NEAR(hc1[j].length(), ratio * hc0[j].length(),
                  1e-12 * hc1[j].length());
  }
}

TEST(Simulation, KhCoverageMatchesDirectComputation) {
  ScenarioSpec spec;
  spec.reps = 100;
  const auto metrics = run_scenario(spec, 1);

  const boost::math::students_t_distribution<double> t3(3.0);
  const double q = boost::math::quantile(t3, 0.975);
  int covered = 0;
  for (std::int64_t r = 0; r < spec.reps; ++r) {
    const auto sim = simulate_dataset(spec, r);
    const Matrix &X = sim.design.X;
    const Vector y = sim.data.effects(), v = sim.data.variances();
    const double tau2 = reml_tau2(X, y, v).tau2;
    const Vector w = (v.array() + tau2).inverse().matrix();
    const Matrix gram_inv =
        (X.transpose() * w.asDiagonal() * X).inverse();
    const Vector beta = gram_inv * X.transpose() * w.asDiagonal() * y;
    const Vector e = y - X * beta;
    const double s2 = e.dot(w.asDiagonal() * e) / 3.0;
    const double se = std::sqrt(s2 * gram_inv(0, 0));
    covered += std::abs(beta[0] - spec.beta1) <= q * se ? 1 : 0;
  }
  const auto &kh = metrics.at(CovVariant::KH, 0);
  EXPECT_EQ(kh.n, 100);
  EXPECT_DOUBLE_EQ(kh.coverage, covered / 100.0);
}

TEST(Simulation, PersistentRankDeficiencyFailsReplication) {
  ScenarioSpec spec;
  spec.reps = 3;
  spec.fit.interactions.clear();
  spec.fit.moderators = {0, 0}; // duplicated column
  const auto metrics = run_scenario(spec, 1);
  EXPECT_EQ(metrics.diagnostics.failed_replications, 3);
  EXPECT_EQ(metrics.diagnostics.rank_regenerations, 3 * kMaxDesignAttempts);
  EXPECT_EQ(metrics.at(CovVariant::HC0, 0).n, 0);
  EXPECT_TRUE(std::isnan(metrics.at(CovVariant::HC0, 0).coverage));
}

TEST(Simulation, CoefficientLookup) {
  ScenarioSpec spec;
  spec.reps = 2;
  const auto metrics = run_scenario(spec, 1);
  EXPECT_EQ(metrics.coefficient("x1"), 0);
  EXPECT_EQ(metrics.coefficient("x1:x2"), 2);
  EXPECT_EQ(metrics.coefficient("intercept"), -1);
}
