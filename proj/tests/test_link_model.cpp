#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "qkdsim/link_model.hpp"
#include "qkdsim/presets.hpp"

using namespace qkdsim;

namespace {

struct DetectorMc {
  double registered = 0.0;
  double live = 0.0;
};

// Event-driven single detector: Poisson arrivals, non-paralyzable dead time,
// signal registrations arm an afterpulse that fires dead + Exp(mean) later
// unless another registration comes first.
DetectorMc simulate_detector(double signal, double noise, const DetectorParams& d, double duration,
                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double lambda = signal + noise;
  std::exponential_distribution<double> gap(lambda), ap(1.0 / d.afterpulse_delay_mean);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double t = 0.0, blind_until = -1.0, pending = INFINITY;
  std::uint64_t arrivals = 0, photon_regs = 0, regs = 0;
  double next = gap(rng);
  while (true) {
    if (pending < next && pending < duration) {
      // afterpulse fires; the detector is live by construction
      t = pending;
      ++regs;
      blind_until = t + d.dead_time;
      pending = INFINITY;
      continue;
    }
    t = next;
    if (t >= duration) break;
    next = t + gap(rng);
    ++arrivals;
    if (t < blind_until) continue;
    ++regs;
    ++photon_regs;
    blind_until = t + d.dead_time;
    pending = INFINITY;
    const bool is_signal = u(rng) * lambda < signal;
    if (is_signal && u(rng) < d.afterpulse_prob) pending = t + d.dead_time + ap(rng);
  }
  return {static_cast<double>(regs) / duration, static_cast<double>(photon_regs) / static_cast<double>(arrivals)};
}

double capture_oracle(double window, double sa, double sb) {
  // Simpson integration of the N(0, sa^2 + sb^2) density over [-window/2, window/2]
  const double s = std::sqrt(sa * sa + sb * sb);
  const int n = 2000;
  const double h = window / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = -0.5 * window + i * h;
    const double f = std::exp(-0.5 * x * x / (s * s)) / (s * std::sqrt(2 * M_PI));
    acc += f * (i == 0 || i == n ? 1 : (i % 2 ? 4 : 2));
  }
  return acc * h / 3.0;
}

LinkModel noiseless_link(double mu, double loss_b) {
  LinkModel l;
  l.protocol.coincidence_window = 1e-9;
  l.source.pair_rate = mu / 1e-9;
  l.source.heralding_eff_a = 0.5;
  l.source.heralding_eff_b = 0.8;
  l.source.misalignment_error = 0.02;
  l.arm_b.channel.loss_db = loss_b;
  l.basis_split = {0.5, 0.5};
  return l;
}

}  // namespace

TEST(DetectorResponse, IdealDetectorPassesEverything) {
  const auto r = detector_response(1e5, 1e3, DetectorParams{});
  EXPECT_DOUBLE_EQ(r.registered, 1.01e5);
  EXPECT_DOUBLE_EQ(r.live, 1.0);
  EXPECT_DOUBLE_EQ(r.afterpulses, 0.0);
  EXPECT_EQ(detector_response(0, 0, DetectorParams{}).registered, 0.0);
}

TEST(DetectorResponse, DeadTimeOnlyIsNonParalyzable) {
  DetectorParams d;
  d.dead_time = 50e-9;
  for (double lambda : {1e4, 1e6, 1e7, 5e7}) {
    const auto r = detector_response(lambda, 0, d);
    EXPECT_NEAR(r.registered / (lambda / (1 + lambda * d.dead_time)), 1.0, 1e-12);
    EXPECT_NEAR(r.live, 1.0 / (1 + lambda * d.dead_time), 1e-12);
  }
}

TEST(DetectorResponse, MatchesEventDrivenSimulation) {
  DetectorParams d;
  d.dead_time = 50e-9;
  d.afterpulse_prob = 0.1;
  d.afterpulse_delay_mean = 100e-9;
  for (auto [s, n] : {std::pair{4e6, 1e6}, std::pair{1e7, 0.0}, std::pair{2e5, 2e5}}) {
    const auto mc = simulate_detector(s, n, d, 4e6 / (s + n), 7);
    const auto r = detector_response(s, n, d);
    EXPECT_NEAR(r.registered / mc.registered, 1.0, 0.005) << s;
    EXPECT_NEAR(r.live / mc.live, 1.0, 0.005) << s;
  }
}

TEST(WindowCapture, MatchesNumericIntegral) {
  EXPECT_EQ(window_capture(1e-9, 0, 0), 1.0);
  for (auto [w, sa, sb] : {std::tuple{1e-9, 300e-12, 400e-12}, std::tuple{2.5e-9, 770e-12, 770e-12},
                           std::tuple{66.6e-12, 20e-12, 20e-12}}) {
    EXPECT_NEAR(window_capture(w, sa, sb), capture_oracle(w, sa, sb), 1e-9);
  }
}

TEST(Predict, NoiselessLowRateLimit) {
  const auto l = noiseless_link(1e-6, 10.0);
  const auto p = predict(l);
  const double pairs = 1e-6 / 1e-9;
  EXPECT_NEAR(p.singles_a / (pairs * 0.5), 1.0, 1e-12);
  EXPECT_NEAR(p.singles_b / (pairs * 0.8 * 0.1), 1.0, 1e-12);
  EXPECT_NEAR(p.true_coinc / (pairs * 0.5 * 0.8 * 0.1), 1.0, 1e-12);
  EXPECT_LT(p.accidental_coinc / p.true_coinc, 1e-5);
  EXPECT_NEAR(p.qber_z, 0.02, 1e-5);
  EXPECT_NEAR(p.qber_x, 0.02, 1e-5);
  EXPECT_NEAR(p.sifted_rate_z + p.sifted_rate_x, 0.5 * p.coincidence_total, 1e-9 * p.coincidence_total);
}

TEST(Predict, AccidentalsUseUnpairedSingles) {
  const auto l = noiseless_link(0.05, 20.0);
  const auto p = predict(l);
  const double ra = p.singles_a, rb = p.singles_b, c = p.true_coinc;
  // four basis/outcome blocks share the unpaired singles evenly here
  EXPECT_NEAR(p.accidental_coinc, (ra - c) * (rb - c) * 1e-9, 1e-9 * p.accidental_coinc);
}

TEST(Predict, RoundTripsThroughAttenuationFormula) {
  for (double loss : {20.0, 30.0, 40.0}) {
    auto l = noiseless_link(0.001, loss);
    l.source.heralding_eff_b = 1.0;
    const auto p = predict(l);
    const double att = channel_attenuation_db(p.coincidence_total, p.singles_a, p.singles_b, 1e-9);
    EXPECT_NEAR(att, loss, 0.1) << loss;
  }
}

TEST(Predict, QberBoundsAndMonotoneKeyRateInLoss) {
  const auto base = presets::terrestrial_free_space();
  double previous = INFINITY;
  for (double loss = 30.0; loss <= 70.0; loss += 0.5) {
    const auto p = predict(base.with_total_loss(loss));
    EXPECT_GE(p.qber_z, base.source.misalignment_error - 1e-12);
    EXPECT_LE(p.qber_z, 0.5);
    EXPECT_GE(p.skr, 0.0);
    EXPECT_LE(p.skr, previous + 1e-9);
    previous = p.skr;
  }
  EXPECT_EQ(previous, 0.0);
}

TEST(Predict, FirstMeasuredPointQberAndRate) {
  const auto p = predict(presets::terrestrial_free_space(0.0402, 38.72));
  EXPECT_NEAR(p.qber_z, 0.0577, 0.005);
  EXPECT_NEAR(p.skr / 300.865, 1.0, 0.25);
}

TEST(Predict, DualLinkIsSymmetricUnderArmSwap) {
  auto l = presets::micius_dual_downlink(70.0);
  l.arm_a.channel.loss_db = 30.0;
  l.arm_b.channel.loss_db = 42.0;
  l.arm_a.detector.dark_rate = 100.0;
  auto swapped = l;
  std::swap(swapped.arm_a, swapped.arm_b);
  const auto p = predict(l), q = predict(swapped);
  EXPECT_NEAR(p.skr, q.skr, 1e-9 * p.skr);
  EXPECT_NEAR(p.coincidence_total, q.coincidence_total, 1e-9 * p.coincidence_total);
  EXPECT_NEAR(p.qber_z, q.qber_z, 1e-12);
}

TEST(LinkModel, LossConventions) {
  auto single = presets::terrestrial_free_space();
  EXPECT_NEAR(single.total_loss_db(), 38.72 + 4.8, 1e-12);
  EXPECT_NEAR(single.with_total_loss(50.0).arm_b.channel.loss_db, 45.2, 1e-12);
  EXPECT_THROW(single.with_total_loss(3.0), DomainError);
  auto dual = presets::micius_dual_downlink(64.0);
  EXPECT_NEAR(dual.arm_a.channel.loss_db, 32.0, 1e-12);
  EXPECT_NEAR(dual.arm_b.channel.loss_db, 32.0, 1e-12);
  EXPECT_NEAR(dual.total_loss_db(), 64.0, 1e-12);
}

TEST(LinkModel, MuAndPairRateAreConsistent) {
  const auto l = presets::micius_dual_downlink(70.0, 0.0492);
  EXPECT_NEAR(l.mu(), 0.0492, 1e-15);
  EXPECT_NEAR(l.with_mu(0.1).source.pair_rate, 0.1 / 2.5e-9, 1e-3);
}

TEST(LinkModel, ValidationNamesTheField) {
  auto l = presets::terrestrial_free_space();
  l.arm_b.channel.loss_db = -1.0;
  try {
    l.validate();
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("arm_b.loss_db"), std::string::npos) << e.what();
  }
  l = presets::terrestrial_free_space();
  l.protocol.coincidence_window = 0.0;
  EXPECT_THROW(l.validate(), DomainError);
  l = presets::terrestrial_free_space();
  l.basis_split = {0.7, 0.7};
  EXPECT_THROW(l.validate(), DomainError);
}

TEST(Sweep, CsvHasHeaderAndOneRowPerPoint) {
  const auto l = presets::terrestrial_free_space();
  const std::vector<double> grid{40, 45, 50};
  const auto s = sweep(l, SweepVariable::LossDbTotal, grid);
  ASSERT_EQ(s.size(), 3u);
  std::ostringstream os;
  write_sweep_csv(os, SweepVariable::LossDbTotal, s);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "loss_db_total,skr_bps,qber_z,qber_x,singles_a_cps,singles_b_cps,coinc_total_cps");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 3);
  const auto m = sweep(l, SweepVariable::PairRate, {0.01, 0.02});
  EXPECT_NEAR(m[1].prediction.skr, predict(l.with_mu(0.02)).skr, 1e-12);
}
