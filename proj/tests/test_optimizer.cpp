#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "qkdsim/optimizer.hpp"
#include "qkdsim/presets.hpp"

using namespace qkdsim;

TEST(GoldenSection, FindsMaximumOfConcaveFunction) {
  const auto r = golden_section_maximize([](double x) { return -(x - 2.0) * (x - 2.0); }, -5.0, 7.0, 1e-9);
  EXPECT_NEAR(r.x, 2.0, 1e-8);
  EXPECT_LT(r.evaluations, 80);
}

TEST(GoldenSection, PlateauResolvesToSmallerArgument) {
  const auto r = golden_section_maximize([](double x) { return std::min(1.0, x); }, 0.0, 3.0, 1e-9);
  EXPECT_NEAR(r.x, 1.0, 1e-6);
}

TEST(OptimizeMu, QuadraticInLogMuHasAnalyticOptimumAndBand) {
  const double u0 = std::log(0.03);
  auto f = [&](double mu) { return 100.0 * (1.0 - (std::log(mu) - u0) * (std::log(mu) - u0)); };
  const auto o = optimize_mu(f, {}, 1e-9, 40.0);
  EXPECT_NEAR(std::log(o.mu_opt), u0, 1e-4);
  EXPECT_NEAR(o.skr_max, 100.0, 1e-6);
  EXPECT_NEAR(std::log(o.band_lo), u0 - std::sqrt(0.1), 1e-6);
  EXPECT_NEAR(std::log(o.band_hi), u0 + std::sqrt(0.1), 1e-6);
  EXPECT_NEAR(o.pair_rate_opt, o.mu_opt / 1e-9, 1e-3);
}

TEST(OptimizeMu, BandClampsToBounds) {
  const auto o = optimize_mu([](double mu) { return 1.0 + 0.01 * mu; }, {1e-3, 1.0}, 1e-9, 0.0);
  EXPECT_NEAR(o.mu_opt, 1.0, 1e-12);
  EXPECT_EQ(o.band_lo, 1e-3);
  EXPECT_EQ(o.band_hi, 1.0);
}

TEST(OptimizeMu, NoKeyCarriesLoss) {
  try {
    optimize_mu([](double) { return 0.0; }, {}, 1e-9, 77.0);
    FAIL();
  } catch (const NoKeyError& e) {
    EXPECT_EQ(e.loss_db(), 77.0);
  }
  EXPECT_THROW(optimize_mu([](double) { return 1.0; }, {1.0, 0.5}, 1e-9, 0.0), UsageError);
}

TEST(OptimizePairRate, BeatsDenseScan) {
  for (double loss : {40.0, 45.0, 50.0}) {
    const auto link = presets::terrestrial_free_space().with_total_loss(loss);
    const auto o = optimize_pair_rate(link);
    double best = 0.0;
    for (int i = 0; i <= 4000; ++i) {
      const double mu = std::exp(std::log(1e-5) + (std::log(1.0) - std::log(1e-5)) * i / 4000.0);
      best = std::max(best, predict(link.with_mu(mu)).skr);
    }
    EXPECT_GE(o.skr_max, best * (1.0 - 1e-6)) << loss;
    EXPECT_NEAR(o.skr_max, predict(link.with_mu(o.mu_opt)).skr, 1e-9 * o.skr_max);
    EXPECT_LE(o.band_lo, o.mu_opt);
    EXPECT_GE(o.band_hi, o.mu_opt);
    EXPECT_NEAR(predict(link.with_mu(o.band_lo)).skr / o.skr_max, 0.9, 1e-6);
    EXPECT_NEAR(predict(link.with_mu(o.band_hi)).skr / o.skr_max, 0.9, 1e-6);
  }
}

TEST(OptimizePairRate, OptimumFallsWithLossOnSingleLink) {
  const auto link = presets::terrestrial_free_space();
  double previous = INFINITY;
  for (double loss : {40.0, 44.0, 47.0, 48.0, 50.0}) {
    const auto o = optimize_pair_rate(link.with_total_loss(loss));
    EXPECT_LT(o.mu_opt, previous) << loss;
    previous = o.mu_opt;
  }
}

TEST(OptimumVsLoss, MarksUnreachableLossesAndWritesCsv) {
  const auto rows = optimum_vs_loss(presets::terrestrial_free_space(), {44.0, 120.0});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_TRUE(rows[0].optimum.has_value());
  EXPECT_FALSE(rows[1].optimum.has_value());
  EXPECT_FALSE(rows[1].error.empty());
  std::ostringstream os;
  write_optimum_csv(os, rows);
  const auto s = os.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "loss_db_total,mu_opt,pair_rate_opt_pps,skr_max_bps,band_lo_mu,band_hi_mu");
  EXPECT_NE(s.find("120,nan,nan,0,nan,nan"), std::string::npos);
  EXPECT_THROW(optimum_vs_loss(presets::terrestrial_free_space(), {50.0, 40.0}), UsageError);
}

TEST(OptimumVsLoss, IndependentOfWorkerCount) {
  const auto link = presets::micius_dual_downlink();
  const std::vector<double> grid{60, 65, 70, 75, 80};
  setenv("QKDSIM_THREADS", "1", 1);
  const auto one = optimum_vs_loss(link, grid);
  setenv("QKDSIM_THREADS", "4", 1);
  const auto four = optimum_vs_loss(link, grid);
  unsetenv("QKDSIM_THREADS");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    ASSERT_TRUE(one[i].optimum && four[i].optimum);
    EXPECT_EQ(one[i].optimum->mu_opt, four[i].optimum->mu_opt);
    EXPECT_EQ(one[i].optimum->skr_max, four[i].optimum->skr_max);
  }
}
