#pragma once

// Analytic forward model of a two-arm entangled-photon link: singles,
// true and accidental coincidences, per-basis sifted rates, QBER and the
// asymptotic secure key rate.
//
// Composition (continuous-wave pair source, window of full width tau_cw):
//   * pairs are emitted as a Poisson process of rate mu / tau_cw;
//   * each arm transmits with heralding * 10^(-loss/10) and splits the photon
//     onto four detectors (basis bit, outcome bit). Arm A chooses bases
//     50/50, arm B chooses z with probability p_z, so the sifted fraction is
//     1/2 and the sifted events divide p_z : p_x between the bases;
//   * dark and background counts land on every detector at the configured
//     per-detector rate, uniformly across outcomes;
//   * detectors are non-paralyzable with an afterpulse that follows a
//     registered photon with probability P_a after the dead time plus an
//     exponential delay (see detector_response());
//   * true pairs are captured when their jittered time difference falls in
//     [-tau_cw/2, tau_cw/2];
//   * tags without a true partner pair up accidentally at rate
//     (R_A - C)(R_B - C) tau_cw.

#include <cmath>
#include <cstddef>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "qkdsim/core_model.hpp"
#include "qkdsim/parallel.hpp"

namespace qkdsim {

struct ArmParams {
  ChannelParams channel;
  DetectorParams detector;
};

struct BasisSplit {
  double p_z = 0.4;
  double p_x = 0.6;
};

/// How a "total loss" figure maps onto the two arms.
enum class LossConvention {
  SingleLink,    ///< arm A is local; arm B takes total - alice_loss_offset_db
  SymmetricDual  ///< both arms take total / 2
};

struct LinkModel {
  SourceParams source;
  ArmParams arm_a;
  ArmParams arm_b;
  ProtocolParams protocol;
  BasisSplit basis_split;
  LossConvention loss_convention = LossConvention::SingleLink;
  double alice_loss_offset_db = 4.8;

  double mu() const { return source.pair_rate * protocol.coincidence_window; }

  LinkModel with_mu(double mu) const {
    LinkModel copy = *this;
    copy.source.pair_rate = mu / protocol.coincidence_window;
    return copy;
  }

  double total_loss_db() const {
    return loss_convention == LossConvention::SingleLink ? arm_b.channel.loss_db + alice_loss_offset_db
                                                         : arm_a.channel.loss_db + arm_b.channel.loss_db;
  }

  LinkModel with_total_loss(double total_db) const {
    LinkModel copy = *this;
    if (loss_convention == LossConvention::SingleLink) {
      const double bob = total_db - alice_loss_offset_db;
      if (!(bob >= 0.0)) {
        throw DomainError(detail::concat("total loss ", total_db, " dB is below the arm-A offset of ",
                                         alice_loss_offset_db, " dB"));
      }
      copy.arm_b.channel.loss_db = bob;
    } else {
      if (!(total_db >= 0.0)) throw DomainError("total loss must be >= 0");
      copy.arm_a.channel.loss_db = total_db / 2.0;
      copy.arm_b.channel.loss_db = total_db / 2.0;
    }
    return copy;
  }

  void validate() const {
    source.validate();
    arm_a.channel.validate("arm_a");
    arm_a.detector.validate("arm_a");
    arm_b.channel.validate("arm_b");
    arm_b.detector.validate("arm_b");
    protocol.validate();
    detail::require(basis_split.p_z >= 0.0 && basis_split.p_x >= 0.0 &&
                        std::abs(basis_split.p_z + basis_split.p_x - 1.0) < 1e-12,
                    "basis_split must be nonnegative and sum to 1");
    detail::require(std::isfinite(alice_loss_offset_db) && alice_loss_offset_db >= 0.0,
                    "alice_loss_offset_db must be >= 0");
  }
};

struct RatePrediction {
  double singles_a = 0.0;
  double singles_b = 0.0;
  double true_coinc = 0.0;
  double accidental_coinc = 0.0;
  double coincidence_total = 0.0;
  double sifted_rate_z = 0.0;
  double sifted_rate_x = 0.0;
  double qber_z = 0.5;
  double qber_x = 0.5;
  double skr = 0.0;
};

/// Stationary response of one non-paralyzable detector fed by Poisson
/// arrivals (signal + noise). Registered photons leave a pending afterpulse
/// with probability P_a, firing dead_time + Exp(delay_mean) later unless
/// another registration happens first (which replaces it). The registration
/// sequence is then a two-state Markov renewal process, solved here exactly.
struct DetectorResponse {
  double registered = 0.0;  ///< all registrations per second (incl. afterpulses)
  double live = 1.0;        ///< probability that an arriving photon is registered
  double afterpulses = 0.0; ///< afterpulse registrations per second
};

inline DetectorResponse detector_response(double signal_rate, double noise_rate, const DetectorParams& det) {
  DetectorResponse out;
  const double lambda = signal_rate + noise_rate;
  if (!(lambda > 0.0)) return out;
  const double p = det.afterpulse_prob * signal_rate / lambda;
  const double tau = det.dead_time;
  // Afterpulse clock runs at rate a once the dead time has elapsed.
  double q = 1.0, wait_pending = 0.0;
  if (det.afterpulse_delay_mean > 0.0) {
    const double a = 1.0 / det.afterpulse_delay_mean;
    q = a / (lambda + a);
    wait_pending = 1.0 / (lambda + a);
  }
  const double pi_p = 1.0 / (1.0 + p * q);
  const double pi_a = p * q * pi_p;
  const double cycle_p = tau + p * wait_pending + (1.0 - p) / lambda;
  const double cycle_a = tau + 1.0 / lambda;
  const double rate = 1.0 / (pi_p * cycle_p + pi_a * cycle_a);
  out.registered = rate;
  out.live = pi_p * rate / lambda;
  out.afterpulses = pi_a * rate;
  return out;
}

/// Probability that a true pair lands inside the coincidence window.
inline double window_capture(double window, double jitter_a, double jitter_b) {
  const double sigma = std::sqrt(jitter_a * jitter_a + jitter_b * jitter_b);
  if (sigma <= 0.0) return 1.0;
  return std::erf(0.5 * window / (sigma * std::sqrt(2.0)));
}

namespace detail {

struct ArmResponse {
  // indexed by basis (0 = z, 1 = x); one entry per detector of that basis
  double basis_prob[2];
  DetectorResponse det[2];
};

inline ArmResponse arm_response(double photon_rate, double basis_z_prob, const ArmParams& arm) {
  ArmResponse r;
  r.basis_prob[0] = basis_z_prob;
  r.basis_prob[1] = 1.0 - basis_z_prob;
  const double noise = arm.detector.dark_rate + arm.channel.background_rate_per_detector;
  for (int b = 0; b < 2; ++b) {
    const double signal = photon_rate * r.basis_prob[b] * 0.5;
    r.det[b] = detector_response(signal, noise, arm.detector);
  }
  return r;
}

}  // namespace detail

inline RatePrediction predict(const LinkModel& link) {
  link.validate();
  const double window = link.protocol.coincidence_window;
  const double pairs = link.source.pair_rate;
  const double eta_a = link.source.heralding_eff_a * link.arm_a.channel.transmission();
  const double eta_b = link.source.heralding_eff_b * link.arm_b.channel.transmission();

  const auto a = detail::arm_response(pairs * eta_a, 0.5, link.arm_a);
  const auto b = detail::arm_response(pairs * eta_b, link.basis_split.p_z, link.arm_b);
  const double capture = window_capture(window, link.arm_a.detector.jitter_sigma, link.arm_b.detector.jitter_sigma);

  RatePrediction out;
  double singles_a[2], singles_b[2];
  for (int k = 0; k < 2; ++k) {
    singles_a[k] = 2.0 * a.det[k].registered;
    singles_b[k] = 2.0 * b.det[k].registered;
  }
  out.singles_a = singles_a[0] + singles_a[1];
  out.singles_b = singles_b[0] + singles_b[1];

  double truth[2][2];
  double c_a[2] = {0.0, 0.0}, c_b[2] = {0.0, 0.0};
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      truth[i][j] = pairs * eta_a * eta_b * a.basis_prob[i] * b.basis_prob[j] * a.det[i].live * b.det[j].live *
                    capture;
      c_a[i] += truth[i][j];
      c_b[j] += truth[i][j];
      out.true_coinc += truth[i][j];
    }
  }
  double acc[2][2];
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      acc[i][j] = std::max(0.0, singles_a[i] - c_a[i]) * std::max(0.0, singles_b[j] - c_b[j]) * window;
      out.accidental_coinc += acc[i][j];
    }
  }
  out.coincidence_total = out.true_coinc + out.accidental_coinc;

  const double e_d = link.source.misalignment_error;
  double sifted[2], qber[2];
  for (int k = 0; k < 2; ++k) {
    sifted[k] = truth[k][k] + acc[k][k];
    qber[k] = sifted[k] > 0.0 ? (e_d * truth[k][k] + 0.5 * acc[k][k]) / sifted[k] : 0.5;
  }
  out.sifted_rate_z = sifted[0];
  out.sifted_rate_x = sifted[1];
  out.qber_z = qber[0];
  out.qber_x = qber[1];

  BasisStats stats{sifted[0], sifted[1], qber[0], qber[1], 1.0};
  try {
    out.skr = secure_key_length(stats, link.protocol).rate_bps;
  } catch (const DegenerateSampleError&) {
    out.skr = 0.0;
  }
  return out;
}

enum class SweepVariable { LossDbTotal, PairRate };

inline std::string_view to_string(SweepVariable v) {
  return v == SweepVariable::LossDbTotal ? "loss_db_total" : "mu";
}

struct SweepPoint {
  double value = 0.0;
  RatePrediction prediction;
};

inline LinkModel apply_sweep_value(const LinkModel& link, SweepVariable variable, double value) {
  return variable == SweepVariable::LossDbTotal ? link.with_total_loss(value) : link.with_mu(value);
}

/// One prediction per grid point, in grid order. Points are evaluated
/// concurrently when more than one worker is available.
inline std::vector<SweepPoint> sweep(const LinkModel& link, SweepVariable variable, const std::vector<double>& grid) {
  if (grid.empty()) throw UsageError("sweep: empty grid");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) throw UsageError("sweep: grid must be strictly increasing");
  }
  std::vector<SweepPoint> out(grid.size());
  parallel_for(grid.size(), [&](std::size_t i) {
    out[i].value = grid[i];
    out[i].prediction = predict(apply_sweep_value(link, variable, grid[i]));
  });
  return out;
}

inline void write_sweep_csv(std::ostream& os, SweepVariable variable, const std::vector<SweepPoint>& series) {
  os << to_string(variable) << ",skr_bps,qber_z,qber_x,singles_a_cps,singles_b_cps,coinc_total_cps\n";
  os.precision(10);
  for (const auto& p : series) {
    const auto& r = p.prediction;
    os << p.value << ',' << r.skr << ',' << r.qber_z << ',' << r.qber_x << ',' << r.singles_a << ','
       << r.singles_b << ',' << r.coincidence_total << '\n';
  }
}

}  // namespace qkdsim
