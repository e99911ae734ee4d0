#pragma once

// Closed-form quantities of an entanglement-based (BBM92) link: the secure
// key bound, channel attenuation from measured rates, pair-rate
// normalization, detector noise yields and the entropy helpers they use.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>

#include "qkdsim/errors.hpp"

namespace qkdsim {

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  oss.precision(10);
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DomainError(what);
}

inline bool finite_nonneg(double v) { return std::isfinite(v) && v >= 0.0; }

}  // namespace detail

enum class PhaseErrorMode {
  SameBasisAsymptotic,     // E_ph,b = E_b
  SameBasisWithDeviation,  // E_ph,b = E_b + theta(E_b)
  CrossBasisWithDeviation  // E_ph,z = E_x + theta(E_x), and vice versa
};

inline std::string_view to_string(PhaseErrorMode m) {
  switch (m) {
    case PhaseErrorMode::SameBasisAsymptotic: return "same_basis_asymptotic";
    case PhaseErrorMode::SameBasisWithDeviation: return "same_basis_with_deviation";
    case PhaseErrorMode::CrossBasisWithDeviation: return "cross_basis_with_deviation";
  }
  return "?";
}

inline PhaseErrorMode phase_error_mode_from_string(std::string_view s) {
  if (s == "same_basis_asymptotic") return PhaseErrorMode::SameBasisAsymptotic;
  if (s == "same_basis_with_deviation") return PhaseErrorMode::SameBasisWithDeviation;
  if (s == "cross_basis_with_deviation") return PhaseErrorMode::CrossBasisWithDeviation;
  throw DomainError(detail::concat("unknown phase error mode '", s, "'"));
}

struct ProtocolParams {
  double coincidence_window = 1e-9;  ///< tau_cw [s], full width of the window
  double ec_efficiency = 1.2;        ///< f >= 1
  double phase_error_failure_prob = 1e-5;
  PhaseErrorMode phase_error_mode = PhaseErrorMode::SameBasisAsymptotic;

  void validate() const {
    detail::require(std::isfinite(coincidence_window) && coincidence_window > 0.0,
                    "protocol.coincidence_window must be > 0");
    detail::require(std::isfinite(ec_efficiency) && ec_efficiency >= 1.0,
                    "protocol.ec_efficiency must be >= 1");
    detail::require(phase_error_failure_prob > 0.0 && phase_error_failure_prob < 1.0,
                    "protocol.phase_error_failure_prob must lie in (0, 1)");
  }
};

/// Sifted counts and error rates per basis over an acquisition of `duration`
/// seconds.
struct BasisStats {
  double n_sift_z = 0.0;
  double n_sift_x = 0.0;
  double qber_z = 0.0;
  double qber_x = 0.0;
  double duration = 1.0;

  void validate() const {
    detail::require(detail::finite_nonneg(n_sift_z) && detail::finite_nonneg(n_sift_x),
                    "sifted counts must be >= 0");
    detail::require(qber_z >= 0.0 && qber_z <= 0.5 && qber_x >= 0.0 && qber_x <= 0.5,
                    detail::concat("QBER must lie in [0, 0.5] (got z=", qber_z, ", x=", qber_x, ")"));
    detail::require(std::isfinite(duration) && duration > 0.0, "duration must be > 0");
  }
};

struct PhaseErrorEstimate {
  double e_ph_z = 0.0;
  double e_ph_x = 0.0;
  double deviation_z = 0.0;  ///< theta added to the z-basis phase error
  double deviation_x = 0.0;
};

struct SourceParams {
  double pair_rate = 0.0;          ///< emitted pairs per second (mu / tau_cw)
  double heralding_eff_a = 1.0;    ///< eta_A
  double heralding_eff_b = 1.0;    ///< eta_B before the channel
  double misalignment_error = 0.0; ///< e_d

  void validate() const {
    detail::require(detail::finite_nonneg(pair_rate), "source.pair_rate must be >= 0");
    detail::require(heralding_eff_a > 0.0 && heralding_eff_a <= 1.0,
                    "source.heralding_eff_a must lie in (0, 1]");
    detail::require(heralding_eff_b > 0.0 && heralding_eff_b <= 1.0,
                    "source.heralding_eff_b must lie in (0, 1]");
    detail::require(misalignment_error >= 0.0 && misalignment_error <= 0.5,
                    "source.misalignment_error must lie in [0, 0.5]");
  }
};

/// Per-detector figures; every arm carries four identical detectors.
struct DetectorParams {
  double dark_rate = 0.0;        ///< dark counts per second, per detector
  double dead_time = 0.0;        ///< [s], non-paralyzable
  double afterpulse_prob = 0.0;  ///< P_a per registered photon
  double jitter_sigma = 0.0;     ///< [s], Gaussian timing jitter
  double afterpulse_delay_mean = 100e-9;  ///< [s], exponential, counted from the end of the dead time

  void validate(std::string_view arm = "arm") const {
    detail::require(detail::finite_nonneg(dark_rate), detail::concat(arm, ".dark_rate must be >= 0"));
    detail::require(detail::finite_nonneg(dead_time), detail::concat(arm, ".dead_time must be >= 0"));
    detail::require(afterpulse_prob >= 0.0 && afterpulse_prob < 1.0,
                    detail::concat(arm, ".afterpulse_prob must lie in [0, 1)"));
    detail::require(detail::finite_nonneg(jitter_sigma), detail::concat(arm, ".jitter_sigma must be >= 0"));
    detail::require(detail::finite_nonneg(afterpulse_delay_mean),
                    detail::concat(arm, ".afterpulse_delay_mean must be >= 0"));
  }
};

struct ChannelParams {
  double loss_db = 0.0;
  double background_rate_per_detector = 0.0;  ///< counts/s reaching each detector

  void validate(std::string_view arm = "arm") const {
    detail::require(loss_db >= 0.0 && !std::isnan(loss_db), detail::concat(arm, ".loss_db must be >= 0"));
    detail::require(detail::finite_nonneg(background_rate_per_detector),
                    detail::concat(arm, ".background_rate_per_detector must be >= 0"));
  }

  double transmission() const { return std::pow(10.0, -loss_db / 10.0); }
};

/// Binary Shannon entropy in bits. H2(0) = H2(1) = 0.
inline double binary_entropy(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError(detail::concat("binary_entropy: p=", p, " outside [0, 1]"));
  if (p == 0.0 || p == 1.0) return 0.0;
  return -p * std::log2(p) - (1.0 - p) * std::log2(1.0 - p);
}

/// z such that P(N(0,1) > z) = eps.
inline double normal_upper_quantile(double eps) {
  if (!(eps > 0.0 && eps < 1.0)) throw DomainError(detail::concat("normal quantile: eps=", eps, " outside (0, 1)"));
  const double sqrt2 = std::sqrt(2.0);
  auto tail = [&](double z) { return 0.5 * std::erfc(z / sqrt2); };
  // Bracket then polish with Newton; the tail is monotone so bisection never fails.
  double lo = -40.0, hi = 40.0;
  double z = 0.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    z = 0.5 * (lo + hi);
    if (tail(z) > eps) lo = z; else hi = z;
  }
  for (int i = 0; i < 3; ++i) {
    const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI);
    if (pdf <= 0.0) break;
    z += (tail(z) - eps) / pdf;
  }
  return z;
}

/// One-sided normal-quantile deviation of the phase error from the bit error:
/// theta = z(eps) * sqrt(e(1-e) (n_x + n_z) / (n_x n_z)).
inline double phase_error_deviation(double base_qber, double n_z, double n_x, double eps) {
  if (!(base_qber >= 0.0 && base_qber <= 0.5)) throw DomainError("phase_error_deviation: base QBER outside [0, 0.5]");
  if (!(n_z > 0.0 && n_x > 0.0)) {
    throw DegenerateSampleError(detail::concat("phase error deviation needs both bases populated (n_z=", n_z,
                                               ", n_x=", n_x, ")"));
  }
  const double z = normal_upper_quantile(eps);
  return z * std::sqrt(base_qber * (1.0 - base_qber) * (n_x + n_z) / (n_x * n_z));
}

inline PhaseErrorEstimate phase_error_estimate(const BasisStats& stats, double eps, PhaseErrorMode mode) {
  PhaseErrorEstimate est;
  switch (mode) {
    case PhaseErrorMode::SameBasisAsymptotic:
      est.e_ph_z = stats.qber_z;
      est.e_ph_x = stats.qber_x;
      return est;
    case PhaseErrorMode::SameBasisWithDeviation:
      est.deviation_z = phase_error_deviation(stats.qber_z, stats.n_sift_z, stats.n_sift_x, eps);
      est.deviation_x = phase_error_deviation(stats.qber_x, stats.n_sift_z, stats.n_sift_x, eps);
      est.e_ph_z = std::min(0.5, stats.qber_z + est.deviation_z);
      est.e_ph_x = std::min(0.5, stats.qber_x + est.deviation_x);
      return est;
    case PhaseErrorMode::CrossBasisWithDeviation:
      est.deviation_z = phase_error_deviation(stats.qber_x, stats.n_sift_z, stats.n_sift_x, eps);
      est.deviation_x = phase_error_deviation(stats.qber_z, stats.n_sift_z, stats.n_sift_x, eps);
      est.e_ph_z = std::min(0.5, stats.qber_x + est.deviation_z);
      est.e_ph_x = std::min(0.5, stats.qber_z + est.deviation_x);
      return est;
  }
  return est;
}

struct SecureKeyLength {
  double bits = 0.0;          ///< N_f, real-valued bound
  std::uint64_t final_bits = 0;  ///< floor(N_f): length handed to privacy amplification
  double rate_bps = 0.0;      ///< bits / duration
  double term_z = 0.0;        ///< per-basis contributions, each floored at zero
  double term_x = 0.0;
  bool aborted = false;       ///< neither basis yields key
  PhaseErrorEstimate phase_error;
};

/// N_f = sum_b N_b [1 - H2(E_ph,b) - f H2(E_b)], each basis floored at zero.
inline SecureKeyLength secure_key_length(const BasisStats& stats, const ProtocolParams& protocol) {
  stats.validate();
  protocol.validate();
  SecureKeyLength out;
  if (protocol.phase_error_mode == PhaseErrorMode::SameBasisAsymptotic) {
    out.phase_error = phase_error_estimate(stats, protocol.phase_error_failure_prob, protocol.phase_error_mode);
  } else if (stats.n_sift_z <= 0.0 || stats.n_sift_x <= 0.0) {
    if (stats.n_sift_z <= 0.0 && stats.n_sift_x <= 0.0) {
      out.aborted = true;
      return out;
    }
    throw DegenerateSampleError("secure_key_length: deviation modes need both bases populated");
  } else {
    out.phase_error = phase_error_estimate(stats, protocol.phase_error_failure_prob, protocol.phase_error_mode);
  }
  const double f = protocol.ec_efficiency;
  const double bracket_z = 1.0 - binary_entropy(out.phase_error.e_ph_z) - f * binary_entropy(stats.qber_z);
  const double bracket_x = 1.0 - binary_entropy(out.phase_error.e_ph_x) - f * binary_entropy(stats.qber_x);
  out.term_z = std::max(0.0, stats.n_sift_z * bracket_z);
  out.term_x = std::max(0.0, stats.n_sift_x * bracket_x);
  out.bits = out.term_z + out.term_x;
  out.aborted = out.bits <= 0.0;
  out.final_bits = static_cast<std::uint64_t>(std::floor(out.bits));
  out.rate_bps = out.bits / stats.duration;
  return out;
}

struct PairRate {
  double mu = 0.0;                ///< pairs per coincidence window
  double pairs_per_second = 0.0;  ///< mu / tau_cw
};

/// mu = (R_A - Y_0A / tau_cw) tau_cw / eta_A
inline PairRate pair_rate_per_window(double singles_a, double noise_yield_a, double window, double heralding_a) {
  detail::require(window > 0.0 && std::isfinite(window), "pair_rate_per_window: window must be > 0");
  detail::require(heralding_a > 0.0 && heralding_a <= 1.0, "pair_rate_per_window: heralding must lie in (0, 1]");
  detail::require(detail::finite_nonneg(singles_a) && detail::finite_nonneg(noise_yield_a),
                  "pair_rate_per_window: rates must be >= 0");
  const double signal_per_window = singles_a * window - noise_yield_a;
  if (signal_per_window < 0.0) {
    throw NegativeSignalError(detail::concat("singles per window ", singles_a * window,
                                             " below the noise yield ", noise_yield_a));
  }
  PairRate out;
  out.mu = signal_per_window / heralding_a;
  out.pairs_per_second = out.mu / window;
  return out;
}

/// Attenuation of the B channel relative to A's singles,
/// alpha = -10 log10((R_CC - R_A R_B tau_cw) / R_A).
inline double channel_attenuation_db(double coinc_rate, double singles_a, double singles_b, double window) {
  detail::require(singles_a > 0.0 && std::isfinite(singles_a), "channel_attenuation_db: R_A must be > 0");
  detail::require(window > 0.0 && std::isfinite(window), "channel_attenuation_db: window must be > 0");
  detail::require(detail::finite_nonneg(coinc_rate) && detail::finite_nonneg(singles_b),
                  "channel_attenuation_db: rates must be >= 0");
  const double excess = coinc_rate - singles_a * singles_b * window;
  if (!(excess > 0.0)) {
    throw AccidentalDominatedError(detail::concat("coincidence rate ", coinc_rate,
                                                  " does not exceed the accidental rate ",
                                                  singles_a * singles_b * window));
  }
  return -10.0 * std::log10(excess / singles_a);
}

/// Noise per coincidence window, Y_0 = mu eta P_a + tau_cw R_DC. `dark_rate`
/// is the summed rate of all detectors of the arm.
inline double effective_noise_yield(double mu, double overall_eff, double afterpulse, double window,
                                    double dark_rate) {
  detail::require(detail::finite_nonneg(mu) && detail::finite_nonneg(overall_eff) &&
                      detail::finite_nonneg(afterpulse) && detail::finite_nonneg(window) &&
                      detail::finite_nonneg(dark_rate),
                  "effective_noise_yield: inputs must be >= 0");
  return mu * overall_eff * afterpulse + window * dark_rate;
}

/// Two-photon interference visibility to the equivalent misalignment error.
inline double visibility_to_error(double visibility) {
  if (!(visibility >= 0.0 && visibility <= 1.0)) {
    throw DomainError(detail::concat("visibility ", visibility, " outside [0, 1]"));
  }
  return (1.0 - visibility) / 2.0;
}

}  // namespace qkdsim
