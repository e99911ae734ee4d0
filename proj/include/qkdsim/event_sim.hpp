#pragma once

// Monte Carlo synthesis of two time-tag streams from a LinkModel.
//
// The timeline is cut into fixed segments, each drawn from its own RNG
// stream derived from the master seed, so the output depends only on the
// seed and the segment grid. Per segment:
//   * emitted pairs split into four independent Poisson classes by arm
//     survival (both, A only, B only, neither);
//   * surviving photons get basis and outcome, Gaussian jitter (truncated at
//     8 sigma), and arm B's times are mapped t -> t (1 + drift) + offset;
//   * dark and background counts are Poisson per detector;
//   * each detector then applies non-paralyzable dead time and afterpulsing
//     (see detector_response() for the process being sampled).
// A detector finalizes events up to the segment end minus the jitter guard,
// so events straddling a boundary are merged with the next segment.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "qkdsim/link_model.hpp"
#include "qkdsim/profile.hpp"
#include "qkdsim/tags.hpp"

namespace qkdsim {

struct ClockSpec {
  double offset_s = 0.0;  ///< added to arm B times
  double drift = 0.0;     ///< fractional rate error of clock B
};

/// One pair whose photons both survived their channels.
struct PairTruth {
  std::uint64_t emission_ps = 0;
  std::uint8_t channel_a = 0;
  std::uint8_t channel_b = 0;
  bool error_flag = false;
  bool registered_a = false;  ///< false when lost to dead time
  bool registered_b = false;
};

struct TruthRecord {
  std::uint64_t emitted_pairs = 0;
  std::uint64_t survived_a = 0;  ///< photons reaching arm A detectors
  std::uint64_t survived_b = 0;
  std::uint64_t survived_both = 0;
  std::uint64_t error_flags = 0;  ///< among survived_both
  std::vector<PairTruth> pairs;   ///< every survived_both pair, in emission order
};

struct SimulationResult {
  TagStream a;
  TagStream b;
  TruthRecord truth;
};

inline constexpr double kDefaultSegmentSeconds = 0.1;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(splitmix64(master) ^ a) ^ (b * 0xd1342543de82ef95ULL));
}

struct SegmentSpec {
  double t0 = 0.0;  ///< seconds
  double t1 = 0.0;
  LinkModel link;
};

class Synthesizer {
 public:
  Synthesizer(const LinkModel& reference, const ClockSpec& clock, double duration_s, std::uint64_t seed)
      : clock_(clock), duration_ps_(duration_s * 1e12), seed_(seed) {
    if (!(1.0 + clock.drift > 0.0)) throw DomainError("clock drift must exceed -1");
    init_arm(arms_[0], reference.arm_a.detector, 0);
    init_arm(arms_[1], reference.arm_b.detector, 1);
  }

  void reserve(double expected_a, double expected_b) {
    out_.a.reserve(static_cast<std::size_t>(expected_a * 1.02 + 1024));
    out_.b.reserve(static_cast<std::size_t>(expected_b * 1.02 + 1024));
  }

  void run_segment(std::size_t index, const SegmentSpec& seg, bool last) {
    std::mt19937_64 rng(derive_seed(seed_, 1, index));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const LinkModel& link = seg.link;
    const double t0 = seg.t0 * 1e12, t1 = seg.t1 * 1e12;
    const double len = t1 - t0;

    for (auto& arm : arms_) {
      for (auto& d : arm.det) {
        d.runs.clear();
        d.runs.push_back(0);
      }
    }

    const double pairs = link.source.pair_rate * 1e-12;  // per ps
    const double eta_a = link.source.heralding_eff_a * link.arm_a.channel.transmission();
    const double eta_b = link.source.heralding_eff_b * link.arm_b.channel.transmission();
    const double p_z_b = link.basis_split.p_z;
    const double e_d = link.source.misalignment_error;

    // pairs reaching both arms
    new_runs();
    for_each_arrival(rng, pairs * eta_a * eta_b, t0, t1, [&](double t) {
      const int basis_a = unit(rng) < 0.5 ? 0 : 1;
      const int basis_b = unit(rng) < p_z_b ? 0 : 1;
      const int out_a = unit(rng) < 0.5 ? 0 : 1;
      const bool flag = unit(rng) < e_d;
      const int out_b = basis_a == basis_b ? ((1 - out_a) ^ static_cast<int>(flag)) : (unit(rng) < 0.5 ? 0 : 1);
      const auto idx = static_cast<std::int64_t>(out_.truth.pairs.size());
      PairTruth pt;
      pt.emission_ps = static_cast<std::uint64_t>(std::max(0.0, std::round(t)));
      pt.channel_a = channel_of(basis_a, out_a);
      pt.channel_b = channel_of(basis_b, out_b);
      pt.error_flag = flag;
      out_.truth.pairs.push_back(pt);
      out_.truth.error_flags += flag;
      push_photon(0, rng, t, pt.channel_a, idx);
      push_photon(1, rng, t, pt.channel_b, idx);
    });
    const std::uint64_t n_both = out_.truth.pairs.size() - pairs_before_;
    pairs_before_ = out_.truth.pairs.size();

    // pairs reaching arm A only
    new_runs();
    std::uint64_t n_a_only = 0;
    for_each_arrival(rng, pairs * eta_a * (1.0 - eta_b), t0, t1, [&](double t) {
      const int basis = unit(rng) < 0.5 ? 0 : 1;
      const int out = unit(rng) < 0.5 ? 0 : 1;
      push_photon(0, rng, t, channel_of(basis, out), -1);
      ++n_a_only;
    });

    // pairs reaching arm B only
    std::uint64_t n_b_only = 0;
    for_each_arrival(rng, pairs * (1.0 - eta_a) * eta_b, t0, t1, [&](double t) {
      const int basis = unit(rng) < p_z_b ? 0 : 1;
      const int out = unit(rng) < 0.5 ? 0 : 1;
      push_photon(1, rng, t, channel_of(basis, out), -1);
      ++n_b_only;
    });

    const double lost_mean = pairs * (1.0 - eta_a) * (1.0 - eta_b) * len;
    std::uint64_t n_none = 0;
    if (lost_mean > 0.0) n_none = std::poisson_distribution<std::uint64_t>(lost_mean)(rng);

    out_.truth.survived_both += n_both;
    out_.truth.survived_a += n_both + n_a_only;
    out_.truth.survived_b += n_both + n_b_only;
    out_.truth.emitted_pairs += n_both + n_a_only + n_b_only + n_none;

    // dark and background counts
    new_runs();
    const ArmParams* arm_params[2] = {&link.arm_a, &link.arm_b};
    for (int side = 0; side < 2; ++side) {
      const double noise =
          (arm_params[side]->detector.dark_rate + arm_params[side]->channel.background_rate_per_detector) * 1e-12;
      for (int ch = 0; ch < 4; ++ch) {
        for_each_arrival(rng, noise, t0, t1, [&](double t) {
          push_event(side, side == 1 ? to_b(t) : t, static_cast<std::uint8_t>(ch), -1, false);
        });
      }
    }

    const std::int64_t no_limit = std::numeric_limits<std::int64_t>::max();
    finalize(0, last ? no_limit : static_cast<std::int64_t>(std::floor(t1)) - arms_[0].guard_ps, last,
             static_cast<std::int64_t>(std::ceil(duration_ps_)));
    finalize(1, last ? no_limit : static_cast<std::int64_t>(std::floor(to_b(t1))) - arms_[1].guard_ps, last,
             static_cast<std::int64_t>(std::ceil(to_b(duration_ps_))));
  }

  SimulationResult take() {
    out_.a.party = "A";
    out_.b.party = "B";
    out_.b.nominal_offset_s = clock_.offset_s;
    out_.b.nominal_drift = clock_.drift;
    return std::move(out_);
  }

 private:
  struct Event {
    std::int64_t t;
    std::int64_t truth;
    std::uint8_t channel;
    bool signal;
  };

  struct Detector {
    std::vector<Event> pending;
    std::vector<std::size_t> runs;
    std::int64_t live_at = std::numeric_limits<std::int64_t>::min();
    bool has_afterpulse = false;
    std::int64_t afterpulse_at = 0;
    std::mt19937_64 rng;
    std::vector<std::int64_t> registered;
  };

  struct Arm {
    Detector det[4];
    double sigma_ps = 0.0;
    std::int64_t dead_ps = 0;
    std::int64_t guard_ps = 1;
    double afterpulse_prob = 0.0;
    double afterpulse_mean_ps = 0.0;
  };

  void init_arm(Arm& arm, const DetectorParams& d, int side) {
    arm.sigma_ps = d.jitter_sigma * 1e12;
    arm.dead_ps = std::llround(d.dead_time * 1e12);
    arm.guard_ps = static_cast<std::int64_t>(std::ceil(8.0 * arm.sigma_ps * (side == 1 ? 1.0 + clock_.drift : 1.0))) + 1;
    arm.afterpulse_prob = d.afterpulse_prob;
    arm.afterpulse_mean_ps = d.afterpulse_delay_mean * 1e12;
    for (int ch = 0; ch < 4; ++ch) arm.det[ch].rng.seed(derive_seed(seed_, 2, static_cast<std::uint64_t>(side * 4 + ch)));
  }

  double to_b(double t_ps) const { return t_ps * (1.0 + clock_.drift) + clock_.offset_s * 1e12; }

  template <typename F>
  static void for_each_arrival(std::mt19937_64& rng, double rate_per_ps, double t0, double t1, F&& f) {
    if (!(rate_per_ps > 0.0)) return;
    std::exponential_distribution<double> gap(rate_per_ps);
    for (double t = t0 + gap(rng); t < t1; t += gap(rng)) f(t);
  }

  void new_runs() {
    for (auto& arm : arms_) {
      for (auto& d : arm.det) {
        if (d.runs.back() != d.pending.size()) d.runs.push_back(d.pending.size());
      }
    }
  }

  void push_photon(int side, std::mt19937_64& rng, double t, std::uint8_t ch, std::int64_t truth) {
    const Arm& arm = arms_[side];
    if (arm.sigma_ps > 0.0) {
      std::normal_distribution<double> normal(0.0, 1.0);
      double z;
      do z = normal(rng); while (std::abs(z) > 8.0);
      t += z * arm.sigma_ps;
    }
    push_event(side, side == 1 ? to_b(t) : t, ch, truth, true);
  }

  void push_event(int side, double t, std::uint8_t ch, std::int64_t truth, bool signal) {
    if (t < 0.0) return;
    arms_[side].det[ch].pending.push_back({std::llround(t), truth, ch, signal});
  }

  void finalize(int side, std::int64_t limit, bool last, std::int64_t end_ps) {
    Arm& arm = arms_[side];
    auto by_time = [](const Event& x, const Event& y) { return x.t < y.t; };
    for (auto& d : arm.det) {
      d.runs.push_back(d.pending.size());
      if (arm.sigma_ps > 0.0) {
        // runs are time-ordered unless jitter was added
        for (std::size_t r = 1; r + 1 < d.runs.size(); ++r) {
          std::stable_sort(d.pending.begin() + d.runs[r], d.pending.begin() + d.runs[r + 1], by_time);
        }
      }
      for (std::size_t r = 1; r + 1 < d.runs.size(); ++r) {
        std::inplace_merge(d.pending.begin(), d.pending.begin() + d.runs[r], d.pending.begin() + d.runs[r + 1], by_time);
      }
      d.registered.clear();
      std::size_t i = 0;
      for (; i < d.pending.size() && d.pending[i].t < limit; ++i) {
        const Event& e = d.pending[i];
        if (d.has_afterpulse && d.afterpulse_at <= e.t) fire_afterpulse(arm, d);
        if (e.t < d.live_at) continue;
        d.registered.push_back(e.t);
        d.live_at = e.t + arm.dead_ps;
        d.has_afterpulse = false;
        if (e.truth >= 0) {
          auto& pt = out_.truth.pairs[static_cast<std::size_t>(e.truth)];
          (side == 0 ? pt.registered_a : pt.registered_b) = true;
        }
        if (e.signal && arm.afterpulse_prob > 0.0 &&
            std::uniform_real_distribution<double>(0.0, 1.0)(d.rng) < arm.afterpulse_prob) {
          double delay = 0.0;
          if (arm.afterpulse_mean_ps > 0.0) delay = std::exponential_distribution<double>(1.0 / arm.afterpulse_mean_ps)(d.rng);
          d.has_afterpulse = true;
          d.afterpulse_at = e.t + arm.dead_ps + std::llround(delay);
        }
      }
      if (d.has_afterpulse && (last ? d.afterpulse_at < end_ps : d.afterpulse_at < limit)) fire_afterpulse(arm, d);
      if (last) d.has_afterpulse = false;
      d.pending.erase(d.pending.begin(), d.pending.begin() + static_cast<std::ptrdiff_t>(i));
    }
    merge_into(side == 0 ? out_.a : out_.b, arm);
  }

  static void fire_afterpulse(const Arm& arm, Detector& d) {
    d.registered.push_back(d.afterpulse_at);
    d.live_at = d.afterpulse_at + arm.dead_ps;
    d.has_afterpulse = false;
  }

  static void merge_into(TagStream& out, const Arm& arm) {
    std::size_t pos[4] = {0, 0, 0, 0};
    while (true) {
      int best = -1;
      for (int ch = 0; ch < 4; ++ch) {
        if (pos[ch] < arm.det[ch].registered.size() &&
            (best < 0 || arm.det[ch].registered[pos[ch]] < arm.det[best].registered[pos[best]])) {
          best = ch;
        }
      }
      if (best < 0) break;
      out.times.push_back(static_cast<std::uint64_t>(arm.det[best].registered[pos[best]++]));
      out.channels.push_back(static_cast<std::uint8_t>(best));
    }
  }

  ClockSpec clock_;
  double duration_ps_;
  std::uint64_t seed_;
  Arm arms_[2];
  SimulationResult out_;
  std::size_t pairs_before_ = 0;
};

inline SimulationResult run_segments(const LinkModel& reference, const std::vector<SegmentSpec>& segments,
                                     const ClockSpec& clock, double duration_s, std::uint64_t seed) {
  Synthesizer synth(reference, clock, duration_s, seed);
  double expected_a = 0.0, expected_b = 0.0;
  for (const auto& s : segments) {
    const auto r = predict(s.link);
    expected_a += r.singles_a * (s.t1 - s.t0);
    expected_b += r.singles_b * (s.t1 - s.t0);
  }
  synth.reserve(expected_a, expected_b);
  for (std::size_t i = 0; i < segments.size(); ++i) synth.run_segment(i, segments[i], i + 1 == segments.size());
  return synth.take();
}

}  // namespace detail

/// Synthesizes `duration_s` seconds of tags for both arms. Detector dead
/// time, jitter and afterpulse parameters are taken from the link's arms.
inline SimulationResult synthesize(const LinkModel& link, const ClockSpec& clock, double duration_s, std::uint64_t seed,
                                   double segment_s = kDefaultSegmentSeconds) {
  link.validate();
  if (!(duration_s >= 0.0) || !std::isfinite(duration_s)) throw DomainError("duration must be >= 0");
  if (!(segment_s > 0.0)) throw DomainError("segment length must be > 0");
  std::vector<detail::SegmentSpec> segments;
  for (std::size_t k = 0; k * segment_s < duration_s; ++k) {
    segments.push_back({k * segment_s, std::min(duration_s, (k + 1) * segment_s), link});
  }
  if (segments.empty()) {
    SimulationResult empty;
    empty.a.party = "A";
    empty.b.party = "B";
    empty.b.nominal_offset_s = clock.offset_s;
    empty.b.nominal_drift = clock.drift;
    return empty;
  }
  return detail::run_segments(link, segments, clock, duration_s, seed);
}

/// Applies the link conditions of one profile bin: total loss through the
/// loss convention, background on every arm exposed to the sky (arm B for a
/// single link, both arms for a dual downlink).
inline LinkModel link_for_bin(const LinkModel& link, const ProfileBin& bin) {
  LinkModel out = link.with_total_loss(bin.loss_db);
  if (!std::isnan(bin.background_cps)) {
    out.arm_b.channel.background_rate_per_detector = bin.background_cps;
    if (link.loss_convention == LossConvention::SymmetricDual) {
      out.arm_a.channel.background_rate_per_detector = bin.background_cps;
    }
  }
  return out;
}

/// As synthesize(), with loss and background held piecewise constant over
/// the profile's bins.
inline SimulationResult apply_pass_profile(const LinkModel& link, const PassProfile& profile, double duration_s,
                                           std::uint64_t seed, const ClockSpec& clock = {}) {
  link.validate();
  if (!(duration_s >= 0.0) || !std::isfinite(duration_s)) throw DomainError("duration must be >= 0");
  profile.require_coverage(0.0, duration_s);
  std::vector<detail::SegmentSpec> segments;
  for (std::size_t i = 0; i < profile.bins.size(); ++i) {
    const double t0 = std::max(0.0, profile.bins[i].t_s);
    const double t1 = std::min(duration_s, profile.bin_end(i));
    if (t1 <= t0) continue;
    segments.push_back({t0, t1, link_for_bin(link, profile.bins[i])});
  }
  if (segments.empty()) return synthesize(link, clock, 0.0, seed);
  return detail::run_segments(link, segments, clock, duration_s, seed);
}

}  // namespace qkdsim
