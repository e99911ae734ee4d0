#pragma once

// Parameter sets for the three reference scenarios.

#include "qkdsim/link_model.hpp"

namespace qkdsim::presets {

/// 143 km terrestrial free-space link: fiber-coupled arm A next to the
/// source, free-space arm B. Heralding, misalignment, window and noise
/// figures are the characterized link values; detector dead time is folded
/// into the measured heralding efficiency and pair rate, so it is zero here.
inline LinkModel terrestrial_free_space(double mu = 0.0402, double bob_loss_db = 38.72) {
  LinkModel link;
  link.protocol.coincidence_window = 1e-9;
  link.protocol.ec_efficiency = 1.2;
  link.protocol.phase_error_failure_prob = 1e-5;
  link.source.heralding_eff_a = 0.3142;
  link.source.heralding_eff_b = 1.0;
  link.source.misalignment_error = 0.033;
  link.source.pair_rate = mu / link.protocol.coincidence_window;

  link.arm_a.channel.loss_db = 0.0;
  link.arm_a.detector.dark_rate = 250.0;  // 1000 cps over four detectors
  link.arm_a.detector.afterpulse_prob = 0.03;

  link.arm_b.channel.loss_db = bob_loss_db;
  link.arm_b.channel.background_rate_per_detector = 450.0;

  link.basis_split = {0.4, 0.6};
  link.loss_convention = LossConvention::SingleLink;
  link.alice_loss_offset_db = 4.8;
  return link;
}

/// Symmetric dual downlink with the satellite source and ground receivers
/// of the Micius mission. `total_loss_db` is split evenly over both arms and
/// already contains detection efficiency.
inline LinkModel micius_dual_downlink(double total_loss_db = 70.0, double mu = 0.0492) {
  LinkModel link;
  link.protocol.coincidence_window = 2.5e-9;
  link.protocol.ec_efficiency = 1.2;
  link.source.heralding_eff_a = 1.0;
  link.source.heralding_eff_b = 1.0;
  link.source.misalignment_error = 0.015;
  link.source.pair_rate = mu / link.protocol.coincidence_window;
  for (ArmParams* arm : {&link.arm_a, &link.arm_b}) {
    arm->detector.dark_rate = 250.0;  // R_DC = 1000 cps per receiver
    arm->detector.afterpulse_prob = 0.03;
    arm->detector.jitter_sigma = 770e-12;
  }
  link.basis_split = {0.5, 0.5};
  link.loss_convention = LossConvention::SymmetricDual;
  return link.with_total_loss(total_loss_db);
}

/// Same dual downlink with superconducting nanowire detectors.
inline LinkModel snspd_dual_downlink(double total_loss_db = 70.0, double mu = 0.05) {
  LinkModel link = micius_dual_downlink(total_loss_db);
  link.protocol.coincidence_window = 66.6e-12;
  link.source.pair_rate = mu / link.protocol.coincidence_window;
  const double noise_yield = 3.3e-9;
  for (ArmParams* arm : {&link.arm_a, &link.arm_b}) {
    arm->detector.dark_rate = noise_yield / link.protocol.coincidence_window / 4.0;
    arm->detector.afterpulse_prob = 0.0;
    arm->detector.dead_time = 25e-9;
    arm->detector.jitter_sigma = 20e-12;
  }
  return link;
}

}  // namespace qkdsim::presets
