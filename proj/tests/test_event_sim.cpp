#include <gtest/gtest.h>

#include <cmath>

#include "qkdsim/event_sim.hpp"
#include "qkdsim/presets.hpp"

using namespace qkdsim;

namespace {

LinkModel fast_dual_link() {
  auto l = presets::micius_dual_downlink(20.0, 0.05);
  for (ArmParams* arm : {&l.arm_a, &l.arm_b}) {
    arm->detector.dead_time = 50e-9;
    arm->detector.afterpulse_prob = 0.05;
    arm->detector.afterpulse_delay_mean = 100e-9;
  }
  return l;
}

bool sorted(const TagStream& s) { return std::is_sorted(s.times.begin(), s.times.end()); }

}  // namespace

TEST(Synthesize, SameSeedSameStreamsOtherSeedDiffers) {
  const auto l = fast_dual_link();
  const ClockSpec clock{1e-6, 2e-6};
  const auto r1 = synthesize(l, clock, 0.05, 11, 0.01);
  const auto r2 = synthesize(l, clock, 0.05, 11, 0.01);
  const auto r3 = synthesize(l, clock, 0.05, 12, 0.01);
  EXPECT_TRUE(r1.a == r2.a);
  EXPECT_TRUE(r1.b == r2.b);
  EXPECT_EQ(r1.truth.emitted_pairs, r2.truth.emitted_pairs);
  EXPECT_FALSE(r1.a == r3.a);
  EXPECT_EQ(r1.b.nominal_offset_s, 1e-6);
  EXPECT_EQ(r1.b.nominal_drift, 2e-6);
}

TEST(Synthesize, StreamsAreSortedAndRespectDeadTimePerDetector) {
  const auto l = fast_dual_link();
  const auto r = synthesize(l, {}, 0.05, 3, 0.01);
  ASSERT_GT(r.a.size(), 10000u);
  for (const TagStream* s : {&r.a, &r.b}) {
    EXPECT_TRUE(sorted(*s));
    std::int64_t last[4] = {-1'000'000'000, -1'000'000'000, -1'000'000'000, -1'000'000'000};
    std::int64_t min_gap = INT64_MAX;
    for (std::size_t i = 0; i < s->size(); ++i) {
      const auto t = static_cast<std::int64_t>(s->times[i]);
      min_gap = std::min(min_gap, t - last[s->channels[i]]);
      last[s->channels[i]] = t;
    }
    EXPECT_GE(min_gap, 50'000);
  }
}

TEST(Synthesize, RatesAgreeWithPrediction) {
  const auto l = fast_dual_link();
  const double T = 0.5;
  const auto r = synthesize(l, {}, T, 5);
  const auto p = predict(l);
  auto within = [](double observed, double expected) {
    // Poisson spread plus a small allowance for dead-time correlations
    return std::abs(observed - expected) <= 4.0 * std::sqrt(expected) + 2e-3 * expected;
  };
  EXPECT_TRUE(within(static_cast<double>(r.a.size()), p.singles_a * T)) << r.a.size() << " vs " << p.singles_a * T;
  EXPECT_TRUE(within(static_cast<double>(r.b.size()), p.singles_b * T)) << r.b.size() << " vs " << p.singles_b * T;
  const double pairs = l.source.pair_rate * T;
  EXPECT_TRUE(within(static_cast<double>(r.truth.emitted_pairs), pairs));
  const double both = pairs * l.arm_a.channel.transmission() * l.arm_b.channel.transmission();
  EXPECT_TRUE(within(static_cast<double>(r.truth.survived_both), both));
  EXPECT_EQ(r.truth.pairs.size(), r.truth.survived_both);
  EXPECT_NEAR(static_cast<double>(r.truth.error_flags) / static_cast<double>(r.truth.survived_both),
              l.source.misalignment_error, 0.005);
}

TEST(Synthesize, ZeroJitterPairsLandOnTheClockLine) {
  auto l = presets::terrestrial_free_space(0.0402, 20.0);
  const ClockSpec clock{5e-6, 1e-5};
  const auto r = synthesize(l, clock, 0.02, 9);
  std::size_t checked = 0;
  for (const auto& pt : r.truth.pairs) {
    if (!pt.registered_a || !pt.registered_b) continue;
    const auto tb = static_cast<double>(pt.emission_ps) * (1 + clock.drift) + clock.offset_s * 1e12;
    const auto it = std::lower_bound(r.b.times.begin(), r.b.times.end(), static_cast<std::uint64_t>(tb - 2));
    ASSERT_NE(it, r.b.times.end());
    EXPECT_LE(std::abs(static_cast<double>(*it) - tb), 1.0);
    if (++checked > 200) break;
  }
  EXPECT_GT(checked, 100u);
}

TEST(Synthesize, RejectsBadArguments) {
  const auto l = fast_dual_link();
  EXPECT_THROW(synthesize(l, {}, -1.0, 1), DomainError);
  EXPECT_THROW(synthesize(l, {}, 1.0, 1, 0.0), DomainError);
  EXPECT_THROW(synthesize(l, {0.0, -2.0}, 1.0, 1), DomainError);
  const auto empty = synthesize(l, {}, 0.0, 1);
  EXPECT_TRUE(empty.a.empty());
  EXPECT_TRUE(empty.b.empty());
}

TEST(PassProfileSynthesis, FollowsLossAndRequiresCoverage) {
  const auto l = presets::micius_dual_downlink(20.0, 0.05);
  PassProfile p;
  p.bin_width_s = 0.02;
  p.bins = {{0.0, 20.0}, {0.02, 40.0}};
  const auto r = apply_pass_profile(l, p, 0.04, 1);
  std::size_t first = 0, second = 0;
  for (auto t : r.a.times) (t < 20'000'000'000ULL ? first : second)++;
  const double ratio = static_cast<double>(second) / static_cast<double>(first);
  // each arm carries half the loss: 10 dB more per arm
  EXPECT_NEAR(ratio, predict(l.with_total_loss(40.0)).singles_a / predict(l).singles_a, 0.05);
  EXPECT_THROW(apply_pass_profile(l, p, 0.05, 1), CoverageError);
}
