#pragma once

// BBM92 post-processing: sifting, QBER estimation, error-correction leakage
// accounting and privacy amplification.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qkdsim/core_model.hpp"
#include "qkdsim/sync.hpp"
#include "qkdsim/tags.hpp"
#include "qkdsim/toeplitz.hpp"

namespace qkdsim {

struct DetectionPair {
  std::uint8_t channel_a = 0;
  std::uint8_t channel_b = 0;
};

inline std::vector<DetectionPair> detection_pairs(const TagStream& a, const TagStream& b,
                                                  const std::vector<Coincidence>& coincidences) {
  std::vector<DetectionPair> out;
  out.reserve(coincidences.size());
  for (const auto& c : coincidences) out.push_back({a.channels[c.index_a], b.channels[c.index_b]});
  return out;
}

/// Index i on both sides refers to the same coincidence.
struct SiftedKey {
  std::vector<std::uint8_t> bits_a;
  std::vector<std::uint8_t> bits_b;
  std::vector<std::uint8_t> basis;  ///< 0 = z, 1 = x

  std::size_t size() const { return basis.size(); }
  std::size_t count(int b) const {
    return static_cast<std::size_t>(std::count(basis.begin(), basis.end(), static_cast<std::uint8_t>(b)));
  }
  void push(int b, int bit_a, int bit_b) {
    basis.push_back(static_cast<std::uint8_t>(b));
    bits_a.push_back(static_cast<std::uint8_t>(bit_a));
    bits_b.push_back(static_cast<std::uint8_t>(bit_b));
  }
  /// Bits of one basis, in order.
  std::vector<std::uint8_t> select(const std::vector<std::uint8_t>& bits, int b) const {
    std::vector<std::uint8_t> out;
    for (std::size_t i = 0; i < size(); ++i) {
      if (basis[i] == b) out.push_back(bits[i]);
    }
    return out;
  }
};

struct SiftPolicy {
  bool flip_b = true;  ///< the source state is anticorrelated in both bases
};

struct SiftResult {
  SiftedKey key;
  std::size_t discarded = 0;
};

inline SiftResult sift(const std::vector<DetectionPair>& pairs, SiftPolicy policy = {}) {
  SiftResult r;
  for (const auto& p : pairs) {
    const int ba = basis_of(p.channel_a), bb = basis_of(p.channel_b);
    if (ba != bb) {
      ++r.discarded;
      continue;
    }
    const int bit_b = outcome_of(p.channel_b) ^ (policy.flip_b ? 1 : 0);
    r.key.push(ba, outcome_of(p.channel_a), bit_b);
  }
  return r;
}

enum class QberMode { OracleFull, DisclosedSample };

struct QberOptions {
  QberMode mode = QberMode::OracleFull;
  double fraction = 0.1;  ///< disclosed share per basis
  std::uint64_t seed = 1;
};

struct QberEstimate {
  BasisStats stats;  ///< counts left for key, QBER clamped to [0, 0.5]
  double raw_qber_z = 0.0;
  double raw_qber_x = 0.0;
  bool convention_error = false;  ///< some basis above 0.5: outcome convention is inverted
  std::size_t disclosed_z = 0;
  std::size_t disclosed_x = 0;
  SiftedKey remaining;  ///< key after removing disclosed positions
};

/// OracleFull compares the complete strings and keeps them; DisclosedSample
/// reveals a random share of each basis, estimates from it, and drops it.
inline QberEstimate estimate_qber(const SiftedKey& key, QberOptions opt = {}, double duration_s = 1.0) {
  if (opt.mode == QberMode::DisclosedSample && !(opt.fraction > 0.0 && opt.fraction <= 1.0)) {
    throw UsageError("estimate_qber: sample fraction must lie in (0, 1]");
  }
  QberEstimate est;
  std::vector<bool> disclosed(key.size(), false);
  double qber[2];
  std::mt19937_64 rng(opt.seed);
  for (int b = 0; b < 2; ++b) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < key.size(); ++i) {
      if (key.basis[i] == b) idx.push_back(i);
    }
    if (idx.empty()) {
      throw EstimationError(std::string("estimate_qber: no sifted bits in the ") + (b == 0 ? "z" : "x") + " basis");
    }
    std::size_t errors = 0, used = idx.size();
    if (opt.mode == QberMode::OracleFull) {
      for (auto i : idx) errors += key.bits_a[i] != key.bits_b[i];
    } else {
      used = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(opt.fraction * static_cast<double>(idx.size()))),
                                     1, idx.size());
      // partial Fisher-Yates: the first `used` entries form the sample
      for (std::size_t k = 0; k < used; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
        std::swap(idx[k], idx[pick(rng)]);
        disclosed[idx[k]] = true;
        errors += key.bits_a[idx[k]] != key.bits_b[idx[k]];
      }
      (b == 0 ? est.disclosed_z : est.disclosed_x) = used;
    }
    qber[b] = static_cast<double>(errors) / static_cast<double>(used);
  }
  for (std::size_t i = 0; i < key.size(); ++i) {
    if (!disclosed[i]) est.remaining.push(key.basis[i], key.bits_a[i], key.bits_b[i]);
  }
  est.raw_qber_z = qber[0];
  est.raw_qber_x = qber[1];
  est.convention_error = qber[0] > 0.5 || qber[1] > 0.5;
  est.stats.n_sift_z = static_cast<double>(est.remaining.count(0));
  est.stats.n_sift_x = static_cast<double>(est.remaining.count(1));
  est.stats.qber_z = std::min(qber[0], 0.5);
  est.stats.qber_x = std::min(qber[1], 0.5);
  est.stats.duration = duration_s;
  return est;
}

struct Reconciliation {
  std::vector<std::uint8_t> corrected;  ///< key_b corrected to key_a
  std::uint64_t leakage_bits = 0;
  std::size_t errors = 0;
  double error_rate = 0.0;
};

/// Stand-in for error correction: copies key_a and charges
/// ceil(f H2(E) n) bits of leakage.
inline Reconciliation reconcile_oracle(const std::vector<std::uint8_t>& key_a, const std::vector<std::uint8_t>& key_b,
                                       double f) {
  if (key_a.size() != key_b.size()) throw UsageError("reconcile_oracle: keys differ in length");
  if (!(f >= 1.0)) throw DomainError("reconcile_oracle: efficiency must be >= 1");
  Reconciliation r;
  r.corrected = key_a;
  const std::size_t n = key_a.size();
  if (n == 0) return r;
  for (std::size_t i = 0; i < n; ++i) r.errors += key_a[i] != key_b[i];
  r.error_rate = static_cast<double>(r.errors) / static_cast<double>(n);
  if (r.error_rate >= 0.5) {
    throw AbortError(detail::concat("error correction aborted: error rate ", r.error_rate, " >= 0.5"));
  }
  r.leakage_bits = static_cast<std::uint64_t>(std::ceil(f * binary_entropy(r.error_rate) * static_cast<double>(n)));
  return r;
}

struct PipelineOptions {
  ProtocolParams protocol;
  std::optional<ClockModel> clock;  ///< skip synchronization when known
  SyncOptions sync;
  bool track_drift = true;
  DriftOptions drift;
  QberOptions qber;
  std::uint64_t pa_seed = 42;
  double duration_s = 0.0;  ///< 0 takes the span of arm A
};

struct KeyReport {
  BasisStats stats;
  std::uint64_t leakage_bits = 0;
  std::uint64_t final_length = 0;
  double skr = 0.0;
  bool aborted = false;

  double secure_bits = 0.0;
  PhaseErrorEstimate phase_error;
  ProtocolParams protocol;
  ClockModel clock;
  double sync_significance = 0.0;
  std::size_t tags_a = 0;
  std::size_t tags_b = 0;
  std::size_t coincidences = 0;
  std::size_t sifted_z = 0;  ///< before disclosure
  std::size_t sifted_x = 0;
  std::size_t discarded = 0;
  std::size_t disclosed = 0;
  double actual_qber_z = 0.0;  ///< of the kept key, from reconciliation
  double actual_qber_x = 0.0;
  bool convention_error = false;
  std::string final_key_hex;
};

namespace detail {

template <typename F>
auto run_stage(const char* stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what(), std::current_exception());
  }
}

}  // namespace detail

/// Builds the key report from sifted statistics: QBER estimate, oracle
/// reconciliation per basis, the secure length bound, privacy amplification.
inline KeyReport process_sifted(const SiftedKey& sifted, double duration_s, const PipelineOptions& opt,
                                KeyReport report = {}) {
  report.protocol = opt.protocol;
  report.sifted_z = sifted.count(0);
  report.sifted_x = sifted.count(1);
  const auto est = detail::run_stage("qber", [&] { return estimate_qber(sifted, opt.qber, duration_s); });
  report.stats = est.stats;
  report.disclosed = est.disclosed_z + est.disclosed_x;
  report.convention_error = est.convention_error;
  if (est.convention_error) {
    throw StageError("qber", "QBER above 0.5: outcome convention inverted",
                     std::make_exception_ptr(AbortError("QBER above 0.5")));
  }

  const auto& key = est.remaining;
  const auto rec_z = detail::run_stage("reconcile", [&] {
    return reconcile_oracle(key.select(key.bits_a, 0), key.select(key.bits_b, 0), opt.protocol.ec_efficiency);
  });
  const auto rec_x = detail::run_stage("reconcile", [&] {
    return reconcile_oracle(key.select(key.bits_a, 1), key.select(key.bits_b, 1), opt.protocol.ec_efficiency);
  });
  report.leakage_bits = rec_z.leakage_bits + rec_x.leakage_bits;
  report.actual_qber_z = rec_z.error_rate;
  report.actual_qber_x = rec_x.error_rate;

  const auto len = detail::run_stage("key_length", [&] { return secure_key_length(report.stats, opt.protocol); });
  report.secure_bits = len.bits;
  report.phase_error = len.phase_error;
  const std::uint64_t kept = key.size();
  const std::uint64_t budget = kept > report.leakage_bits ? kept - report.leakage_bits : 0;
  report.final_length = std::min<std::uint64_t>(len.final_bits, budget);
  report.aborted = len.aborted || report.final_length == 0;
  report.skr = static_cast<double>(report.final_length) / duration_s;

  std::vector<std::uint8_t> reconciled = rec_z.corrected;
  reconciled.insert(reconciled.end(), rec_x.corrected.begin(), rec_x.corrected.end());
  const auto final_key = detail::run_stage("privacy_amplification", [&] {
    return privacy_amplify(BitString::from_bits(reconciled), report.final_length, opt.pa_seed);
  });
  report.final_key_hex = final_key.to_hex();
  return report;
}

/// sync -> coincidences -> sift -> QBER -> reconcile -> key length -> privacy
/// amplification. Failures are rethrown as StageError naming the stage.
inline KeyReport full_pipeline(const TagStream& a, const TagStream& b, const PipelineOptions& opt) {
  KeyReport report;
  report.tags_a = a.size();
  report.tags_b = b.size();
  detail::run_stage("config", [&] { opt.protocol.validate(); });

  report.clock = detail::run_stage("sync", [&] {
    if (opt.clock) return *opt.clock;
    const auto coarse = coarse_offset_search(a, b, opt.sync);
    report.sync_significance = coarse.significance;
    if (!opt.track_drift) return coarse.clock();
    return track_drift(a, b, coarse.clock(), opt.drift);
  });

  const auto pairs = detail::run_stage("coincidences", [&] {
    return find_coincidences(a, b, report.clock, opt.protocol.coincidence_window);
  });
  report.coincidences = pairs.size();
  const auto sifted = detail::run_stage("sift", [&] { return sift(detection_pairs(a, b, pairs)); });
  report.discarded = sifted.discarded;

  double duration = opt.duration_s;
  if (!(duration > 0.0)) {
    duration = a.size() > 1 ? static_cast<double>(a.times.back() - a.times.front()) * 1e-12 : 0.0;
  }
  if (!(duration > 0.0)) {
    throw StageError("config", "acquisition duration must be > 0",
                     std::make_exception_ptr(UsageError("duration must be > 0")));
  }
  return process_sifted(sifted.key, duration, opt, std::move(report));
}

/// Report for externally supplied basis statistics (no tags, no key bits).
inline KeyReport analyze_stats(const BasisStats& stats, const ProtocolParams& protocol) {
  KeyReport r;
  r.protocol = protocol;
  r.stats = stats;
  const auto len = secure_key_length(stats, protocol);
  r.secure_bits = len.bits;
  r.phase_error = len.phase_error;
  r.final_length = len.final_bits;
  r.aborted = len.aborted;
  r.skr = len.rate_bps;
  r.sifted_z = static_cast<std::size_t>(stats.n_sift_z);
  r.sifted_x = static_cast<std::size_t>(stats.n_sift_x);
  const double f = protocol.ec_efficiency;
  r.leakage_bits = static_cast<std::uint64_t>(std::ceil(f * binary_entropy(stats.qber_z) * stats.n_sift_z)) +
                   static_cast<std::uint64_t>(std::ceil(f * binary_entropy(stats.qber_x) * stats.n_sift_x));
  r.actual_qber_z = stats.qber_z;
  r.actual_qber_x = stats.qber_x;
  return r;
}

inline nlohmann::ordered_json clock_to_json(const ClockModel& c) {
  nlohmann::ordered_json j;
  j["offset_ps"] = c.offset_ps;
  j["reference_ps"] = c.reference_ps;
  j["segments"] = nlohmann::ordered_json::array();
  for (const auto& s : c.segments) j["segments"].push_back({{"t_start_ps", s.t_start_ps}, {"slope", s.slope}});
  j["residual_rms_ps"] = c.residual_rms_ps;
  j["gaps_ps"] = c.gaps_ps;
  return j;
}

inline nlohmann::ordered_json to_json(const KeyReport& r) {
  nlohmann::ordered_json j;
  j["stats"] = {{"n_sift_z", r.stats.n_sift_z},
                {"n_sift_x", r.stats.n_sift_x},
                {"qber_z", r.stats.qber_z},
                {"qber_x", r.stats.qber_x},
                {"duration_s", r.stats.duration}};
  j["leakage_bits"] = r.leakage_bits;
  j["final_length"] = r.final_length;
  j["skr_bps"] = r.skr;
  j["aborted"] = r.aborted;
  j["secure_bits"] = r.secure_bits;
  j["phase_error"] = {{"e_ph_z", r.phase_error.e_ph_z},
                      {"e_ph_x", r.phase_error.e_ph_x},
                      {"deviation_z", r.phase_error.deviation_z},
                      {"deviation_x", r.phase_error.deviation_x}};
  j["protocol"] = {{"coincidence_window_s", r.protocol.coincidence_window},
                   {"ec_efficiency", r.protocol.ec_efficiency},
                   {"phase_error_failure_prob", r.protocol.phase_error_failure_prob},
                   {"phase_error_mode", std::string(to_string(r.protocol.phase_error_mode))}};
  j["clock"] = clock_to_json(r.clock);
  j["sync_significance"] = r.sync_significance;
  j["tags_a"] = r.tags_a;
  j["tags_b"] = r.tags_b;
  j["coincidences"] = r.coincidences;
  j["sifted_z"] = r.sifted_z;
  j["sifted_x"] = r.sifted_x;
  j["discarded"] = r.discarded;
  j["disclosed"] = r.disclosed;
  j["actual_qber_z"] = r.actual_qber_z;
  j["actual_qber_x"] = r.actual_qber_x;
  j["convention_error"] = r.convention_error;
  j["final_key_hex"] = r.final_key_hex;
  return j;
}

}  // namespace qkdsim
