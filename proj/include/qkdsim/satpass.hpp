#pragma once

// Satellite-pass evaluation: key rate per profile bin under a fixed or
// continuously optimized pair rate, and the symmetric dual downlink.

#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "qkdsim/event_sim.hpp"
#include "qkdsim/optimizer.hpp"
#include "qkdsim/profile.hpp"

namespace qkdsim {

/// One source feeding two ground arms. Total loss is split evenly when set
/// through with_total_loss(); arms may also be set individually.
struct DualLinkModel {
  LinkModel link;

  explicit DualLinkModel(LinkModel base) : link(std::move(base)) {
    link.loss_convention = LossConvention::SymmetricDual;
  }
  DualLinkModel swapped() const {
    DualLinkModel out = *this;
    std::swap(out.link.arm_a, out.link.arm_b);
    std::swap(out.link.source.heralding_eff_a, out.link.source.heralding_eff_b);
    return out;
  }
  void validate() const {
    link.validate();
    detail::require(link.basis_split.p_z == 0.5,
                    "dual downlink: both receivers choose bases 50/50 (basis_split.p_z must be 0.5)");
  }
};

inline RatePrediction dual_predict(const DualLinkModel& model) {
  model.validate();
  return predict(model.link);
}

struct MuPolicy {
  enum class Kind { Fixed, TrackOptimum } kind = Kind::TrackOptimum;
  double mu = 0.0;  ///< used by Fixed
  MuBounds bounds;  ///< used by TrackOptimum

  static MuPolicy fixed(double mu) { return {Kind::Fixed, mu, {}}; }
  static MuPolicy track(MuBounds b = {}) { return {Kind::TrackOptimum, 0.0, b}; }
};

struct PassBin {
  double t_s = 0.0;
  double duration_s = 0.0;
  double loss_db = 0.0;
  double background_cps = 0.0;
  double mu_used = 0.0;  ///< 0 when no key is reachable under TrackOptimum
  double skr_bps = 0.0;
};

struct PassResult {
  std::vector<PassBin> bins;
  double total_bits = 0.0;
  double duration_s = 0.0;
};

/// Evaluates each profile bin independently; bins run concurrently and are
/// assembled in order.
inline PassResult pass_skr(const PassProfile& profile, const LinkModel& link, const MuPolicy& policy) {
  profile.validate();
  link.validate();
  if (policy.kind == MuPolicy::Kind::Fixed && !(policy.mu >= 0.0 && std::isfinite(policy.mu))) {
    throw UsageError("pass_skr: fixed mu must be >= 0");
  }
  PassResult out;
  out.bins.resize(profile.bins.size());
  parallel_for(profile.bins.size(), [&](std::size_t i) {
    const LinkModel bin_link = link_for_bin(link, profile.bins[i]);
    PassBin& b = out.bins[i];
    b.t_s = profile.bins[i].t_s;
    b.duration_s = profile.bin_duration(i);
    b.loss_db = profile.bins[i].loss_db;
    b.background_cps = bin_link.arm_b.channel.background_rate_per_detector;
    if (policy.kind == MuPolicy::Kind::Fixed) {
      b.mu_used = policy.mu;
      b.skr_bps = predict(bin_link.with_mu(policy.mu)).skr;
    } else {
      try {
        const auto opt = optimize_pair_rate(bin_link, policy.bounds);
        b.mu_used = opt.mu_opt;
        b.skr_bps = opt.skr_max;
      } catch (const NoKeyError&) {
        b.mu_used = 0.0;
        b.skr_bps = 0.0;
      }
    }
  });
  for (const auto& b : out.bins) {
    out.total_bits += b.skr_bps * b.duration_s;
    out.duration_s += b.duration_s;
  }
  return out;
}

inline void write_pass_csv(std::ostream& os, const PassResult& r) {
  os << "t_s,loss_db,mu_used,skr_bps\n";
  os.precision(10);
  for (const auto& b : r.bins) os << b.t_s << ',' << b.loss_db << ',' << b.mu_used << ',' << b.skr_bps << '\n';
}

}  // namespace qkdsim
