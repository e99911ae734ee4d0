#pragma once

// Clock recovery between two tag streams and coincidence pairing.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <vector>

#include "qkdsim/core_model.hpp"
#include "qkdsim/tags.hpp"

namespace qkdsim {

struct DriftSegment {
  double t_start_ps = 0.0;  ///< A-clock time where this slope begins
  double slope = 0.0;       ///< d(t_B - t_A)/dt_A
};

/// t_B = t_A + delta(t_A), delta continuous and piecewise linear with
/// delta(reference_ps) = offset_ps. The first segment's slope also applies
/// before its start.
struct ClockModel {
  double offset_ps = 0.0;
  double reference_ps = 0.0;
  std::vector<DriftSegment> segments;
  double residual_rms_ps = 0.0;
  std::vector<double> gaps_ps;  ///< starts of tracking segments without a peak

  static ClockModel linear(double offset_ps, double slope = 0.0) {
    ClockModel m;
    m.offset_ps = offset_ps;
    m.segments.push_back({0.0, slope});
    return m;
  }

  void validate() const {
    for (std::size_t k = 0; k < segments.size(); ++k) {
      if (!(segments[k].slope > -1.0)) throw DomainError("clock model: slope must exceed -1");
      if (k > 0 && !(segments[k].t_start_ps > segments[k - 1].t_start_ps)) {
        throw DomainError("clock model: segments must be time-ordered");
      }
    }
  }

  double delta(double t) const {
    if (segments.empty()) return offset_ps;
    return offset_ps + integral(t) - integral(reference_ps);
  }
  double to_b(double t_a) const { return t_a + delta(t_a); }

  double to_a(double t_b) const {
    if (segments.empty()) return t_b - offset_ps;
    std::size_t k = 0;
    while (k + 1 < segments.size() && to_b(segments[k + 1].t_start_ps) <= t_b) ++k;
    const double anchor = k > 0 ? segments[k].t_start_ps : (segments.size() > 1 ? segments[1].t_start_ps : reference_ps);
    return anchor + (t_b - to_b(anchor)) / (1.0 + segments[k].slope);
  }

  /// Mean slope weighted over [t0, t1].
  double mean_slope(double t0, double t1) const { return (delta(t1) - delta(t0)) / (t1 - t0); }

 private:
  double integral(double x) const {
    const double anchor = segments.front().t_start_ps;
    double acc = 0.0;
    for (std::size_t k = 0; k < segments.size(); ++k) {
      const double lo = k == 0 ? -std::numeric_limits<double>::infinity() : segments[k].t_start_ps;
      const double hi = k + 1 < segments.size() ? segments[k + 1].t_start_ps : std::numeric_limits<double>::infinity();
      acc += segments[k].slope * (std::clamp(x, lo, hi) - std::clamp(anchor, lo, hi));
    }
    return acc;
  }
};

namespace detail {

/// Calls f(dt) for every pair with dt = t_b' - t_a in [lo, hi], where t_b'
/// are arm B times already mapped to the A clock (sorted).
template <typename F>
void for_each_difference(const std::vector<std::uint64_t>& a, const std::vector<double>& b_corrected, double lo,
                         double hi, F&& f) {
  std::size_t start = 0;
  const std::size_t n = a.size();
  for (double tb : b_corrected) {
    const double first = tb - hi;
    while (start < n && static_cast<double>(a[start]) < first) ++start;
    for (std::size_t i = start; i < n; ++i) {
      const double dt = tb - static_cast<double>(a[i]);
      if (dt < lo) break;
      f(dt, i);
    }
  }
}

inline std::vector<double> corrected_times(const TagStream& b, const ClockModel& clock, double t_max_ps) {
  std::vector<double> out;
  out.reserve(b.size());
  for (auto t : b.times) {
    const double c = clock.to_a(static_cast<double>(t));
    if (c > t_max_ps) break;
    out.push_back(c);
  }
  return out;
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

/// Counts of values in bins of width w centered on center + k w, |k| <= half_bins.
inline std::vector<double> centered_histogram(const std::vector<double>& values, double center, double w,
                                              long half_bins) {
  std::vector<double> counts(static_cast<std::size_t>(2 * half_bins + 1), 0.0);
  for (double v : values) {
    const long k = std::lround(std::floor((v - center) / w + 0.5));
    if (k >= -half_bins && k <= half_bins) counts[static_cast<std::size_t>(k + half_bins)] += 1.0;
  }
  return counts;
}

inline std::size_t argmax_first(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace detail

struct SyncOptions {
  double search_window_s = 1e-3;   ///< offsets in [-w, w] are searched
  double max_drift = 1e-5;         ///< fractional drifts in [-d, d] are searched
  double acquisition_bin_s = 100e-9;
  double finest_bin_s = 200e-12;
  double significance_threshold = 8.0;  ///< acquisition peak excess in Poisson sigmas
  double refine_z_threshold = 5.0;      ///< halving stops when the peak drops below this
  double max_span_s = 1.0;  ///< only the first span of arm A is correlated
  double max_differences = 2e8;  ///< the span shrinks at high rates to bound this work
};

struct OffsetEstimate {
  double offset_ps = 0.0;  ///< t_B - t_A extrapolated to A time 0
  double drift = 0.0;      ///< d(t_B - t_A)/dt_A
  double significance = 0.0;
  double bin_ps = 0.0;     ///< finest bin width reached
  ClockModel clock() const { return ClockModel::linear(offset_ps, drift); }
};

/// Joint offset and drift acquisition. Arm A's first span is cut into short
/// sub-spans whose delay histograms are summed along trial drift lines; the
/// strongest line, in Poisson sigmas over the mean background, wins. The
/// offset is then refined by halving the bin while the peak stays significant.
inline OffsetEstimate coarse_offset_search(const TagStream& a, const TagStream& b, const SyncOptions& opt = {}) {
  if (a.empty() || b.empty()) throw SyncError("coarse_offset_search: empty tag stream", 0.0);
  if (!(opt.acquisition_bin_s > 0.0 && opt.search_window_s >= opt.acquisition_bin_s && opt.finest_bin_s > 0.0 &&
        opt.max_drift >= 0.0 && opt.max_span_s > 0.0)) {
    throw UsageError("coarse_offset_search: need 0 < acquisition_bin <= search_window, finest_bin > 0, "
                     "max_drift >= 0 and max_span > 0");
  }
  const double window = opt.search_window_s * 1e12, w1 = opt.acquisition_bin_s * 1e12;
  const double t_s = static_cast<double>(a.times.front());
  double t_end = std::min(static_cast<double>(a.times.back()) + 1.0, t_s + opt.max_span_s * 1e12);
  {
    // expected differences = rate_a rate_b 2 reach span; cut the span to the budget
    const double s0 = std::max(t_end - t_s, 1.0);
    const auto count_in = [&](const TagStream& s, double lo, double hi) {
      return static_cast<double>(
          std::lower_bound(s.times.begin(), s.times.end(), static_cast<std::uint64_t>(std::max(0.0, hi))) -
          std::lower_bound(s.times.begin(), s.times.end(), static_cast<std::uint64_t>(std::max(0.0, lo))));
    };
    const double rate_a = count_in(a, t_s, t_end) / s0;
    const double rate_b = std::max(count_in(b, 0.0, static_cast<double>(b.times.front()) + s0),
                                   count_in(b, t_s, t_end)) / s0;
    const double reach0 = window + opt.max_drift * s0;
    const double per_ps = rate_a * rate_b * 2.0 * reach0;
    const double min_span = opt.max_drift > 0.0 ? std::min(s0, 0.5 * w1 / opt.max_drift) : s0;
    if (per_ps * s0 > opt.max_differences) t_end = t_s + std::max(min_span, opt.max_differences / per_ps);
  }
  const double span = std::max(t_end - t_s, 1.0);
  // a sub-span is short enough that the largest drift moves the peak by half a bin
  const double sub = opt.max_drift > 0.0 ? std::min(span, 0.5 * w1 / opt.max_drift) : span;
  const auto n_sub = static_cast<std::size_t>(std::ceil(span / sub));
  const long half = static_cast<long>(std::ceil(window / w1));
  const auto n_bins = static_cast<std::size_t>(2 * half + 1);
  if (static_cast<double>(n_sub) * static_cast<double>(n_bins) > 1e8) {
    throw UsageError("coarse_offset_search: search too large; reduce max_span, max_drift or search_window");
  }

  const std::vector<std::uint64_t> a_span(a.times.begin(),
                                          std::lower_bound(a.times.begin(), a.times.end(),
                                                           static_cast<std::uint64_t>(t_end)));
  const double b_limit = t_end + window + opt.max_drift * span;
  std::vector<double> b_span;
  for (auto t : b.times) {
    if (static_cast<double>(t) > b_limit) break;
    b_span.push_back(static_cast<double>(t));
  }
  const double reach = window + opt.max_drift * span;
  std::vector<std::uint32_t> hist(n_sub * n_bins, 0);
  detail::for_each_difference(a_span, b_span, -reach, reach, [&](double dt, std::size_t i) {
    const double ta = static_cast<double>(a_span[i]);
    const auto k = std::min(n_sub - 1, static_cast<std::size_t>((ta - t_s) / sub));
    // delays are histogrammed relative to the drift-free line through t_s
    const long m = std::lround(std::floor(dt / w1 + 0.5));
    if (m >= -half && m <= half) ++hist[k * n_bins + static_cast<std::size_t>(m + half)];
  });

  // trial drifts: one acquisition bin of walk across the span per step
  const double step = w1 / span;
  const long n_steps = static_cast<long>(std::floor(opt.max_drift / step));
  struct Best {
    double z = -std::numeric_limits<double>::infinity();
    long m = 0;
    double drift = 0.0;
  } best;
  std::vector<double> summed(n_bins);
  std::vector<long> order;
  for (long s = 0; s <= n_steps; ++s) {
    order.push_back(s);
    if (s > 0) order.push_back(-s);
  }
  for (long s : order) {
    const double d = static_cast<double>(s) * step;
    std::fill(summed.begin(), summed.end(), 0.0);
    for (std::size_t k = 0; k < n_sub; ++k) {
      const double t_mid = (static_cast<double>(k) + 0.5) * sub;
      const long shift = std::lround(d * t_mid / w1);
      const std::uint32_t* row = &hist[k * n_bins];
      const long lo = std::max(0L, -shift), hi = std::min(static_cast<long>(n_bins), static_cast<long>(n_bins) - shift);
      for (long m = lo; m < hi; ++m) summed[static_cast<std::size_t>(m)] += row[m + shift];
    }
    const double mean = std::accumulate(summed.begin(), summed.end(), 0.0) / static_cast<double>(n_bins);
    const std::size_t k = detail::argmax_first(summed);
    const double z = (summed[k] - mean) / std::sqrt(std::max(mean, 1.0));
    if (z > best.z) best = {z, static_cast<long>(k) - half, d};
  }
  if (!(best.z >= opt.significance_threshold)) {
    throw SyncError(detail::concat("no significant correlation peak (best significance ", std::max(0.0, best.z),
                                   " sigma, threshold ", opt.significance_threshold, ")"),
                    std::max(0.0, best.z));
  }

  // residuals against the acquired line, refined by halving
  ClockModel line = ClockModel::linear(static_cast<double>(best.m) * w1 - best.drift * t_s, best.drift);
  std::vector<double> b_corr;
  b_corr.reserve(b_span.size());
  for (double t : b_span) b_corr.push_back(line.to_a(t));
  std::vector<double> r;
  detail::for_each_difference(a_span, b_corr, -1.5 * w1, 1.5 * w1, [&](double dt, std::size_t) { r.push_back(dt); });
  const double density = static_cast<double>(std::accumulate(hist.begin(), hist.end(), std::uint64_t{0})) /
                         (static_cast<double>(n_bins) * w1);
  auto z_of = [&](double peak, double width) {
    const double bg = density * width;
    return (peak - bg) / std::sqrt(std::max(bg, 1.0));
  };
  double center = 0.0, w = w1;
  while (w / 2.0 >= opt.finest_bin_s * 1e12 * (1.0 - 1e-9)) {
    const double w_new = w / 2.0;
    const long hb = static_cast<long>(std::ceil(1.5 * w / w_new));
    const auto h = detail::centered_histogram(r, center, w_new, hb);
    const std::size_t k = detail::argmax_first(h);
    if (z_of(h[k], w_new) < opt.refine_z_threshold) break;
    center += (static_cast<double>(k) - static_cast<double>(hb)) * w_new;
    w = w_new;
  }
  OffsetEstimate out;
  out.drift = best.drift;
  out.offset_ps = line.delta(0.0) + center * (1.0 + best.drift);
  out.significance = best.z;
  out.bin_ps = w;
  return out;
}

struct DriftOptions {
  double segment_length_s = 1.0;
  double search_half_width_s = 2e-6;  ///< residual window around the predicted offset
  double coarse_bin_s = 100e-9;
  double finest_bin_s = 50e-12;
  double peak_z_threshold = 5.0;  ///< peak excess over background, in Poisson sigmas
  int passes = 4;
  int max_knots = 4;
  double knot_min_rms_ps = 50.0;   ///< below this residual no knot is added
  double knot_min_gain = 4.0;      ///< required SSE reduction factor per knot
};

namespace detail {

struct SegmentPeak {
  bool found = false;
  double t_mid = 0.0;     ///< A-clock time of the segment center
  double residual = 0.0;  ///< peak position relative to the model used
  double signal = 0.0;    ///< estimated true pairs in the peak
};

/// Peak of residuals r = to_a(t_B) - t_A within one segment.
inline SegmentPeak segment_peak(const TagStream& a, const TagStream& b, const ClockModel& model, double t0,
                                double t1, const DriftOptions& opt) {
  SegmentPeak out;
  out.t_mid = 0.5 * (t0 + t1);
  const double W = opt.search_half_width_s * 1e12;
  const auto a_lo = std::lower_bound(a.times.begin(), a.times.end(), static_cast<std::uint64_t>(std::max(0.0, t0)));
  const auto a_hi = std::lower_bound(a.times.begin(), a.times.end(), static_cast<std::uint64_t>(std::max(0.0, t1)));
  if (a_lo == a_hi) return out;
  const std::vector<std::uint64_t> a_seg(a_lo, a_hi);
  std::vector<double> b_seg;
  const double b_lo = model.to_b(t0) - W, b_hi = model.to_b(t1) + W;
  auto it = std::lower_bound(b.times.begin(), b.times.end(), static_cast<std::uint64_t>(std::max(0.0, b_lo)));
  for (; it != b.times.end() && static_cast<double>(*it) <= b_hi; ++it) b_seg.push_back(model.to_a(static_cast<double>(*it)));
  std::vector<double> r;
  for_each_difference(a_seg, b_seg, -W, W, [&](double dt, std::size_t) { r.push_back(dt); });
  if (r.empty()) return out;

  double w = opt.coarse_bin_s * 1e12;
  long hb = static_cast<long>(std::ceil(W / w));
  auto h = centered_histogram(r, 0.0, w, hb);
  std::size_t k = argmax_first(h);
  const double density = median_of(h) / w;  // background counts per ps
  auto z_of = [&](double peak, double width) {
    const double bg = density * width;
    return (peak - bg) / std::sqrt(std::max(bg, 1.0));
  };
  if (z_of(h[k], w) < opt.peak_z_threshold) return out;
  double center = (static_cast<double>(k) - static_cast<double>(hb)) * w;

  while (w / 2.0 >= opt.finest_bin_s * 1e12) {
    const double w_new = w / 2.0;
    std::vector<double> kept;
    for (double v : r) {
      if (std::abs(v - center) <= 2.0 * w) kept.push_back(v);
    }
    hb = static_cast<long>(std::ceil(1.5 * w / w_new));
    h = centered_histogram(kept, center, w_new, hb);
    k = argmax_first(h);
    if (z_of(h[k], w_new) < opt.peak_z_threshold) break;
    center += (static_cast<double>(k) - static_cast<double>(hb)) * w_new;
    w = w_new;
    r.swap(kept);
  }

  // background-subtracted centroid, window adapted to the peak width
  double half = 2.0 * w, mean = center;
  for (int it2 = 0; it2 < 4; ++it2) {
    double n = 0.0, s = 0.0, s2 = 0.0;
    for (double v : r) {
      if (std::abs(v - mean) <= half) {
        n += 1.0;
        s += v - mean;
        s2 += (v - mean) * (v - mean);
      }
    }
    const double n_bg = density * 2.0 * half;
    const double n_sig = n - n_bg;
    if (n_sig <= 0.0) break;
    const double shift = s / n_sig;
    const double var = std::max(0.0, (s2 - n_bg * half * half / 3.0) / n_sig - shift * shift);
    mean += shift;
    out.signal = n_sig;
    half = std::max(2.0 * w, 4.0 * std::sqrt(var));
  }
  // a smeared or spurious peak leaves almost nothing after background subtraction
  if (out.signal < opt.peak_z_threshold * std::sqrt(std::max(density * 2.0 * half, 1.0))) return out;
  out.found = true;
  out.residual = mean;
  return out;
}

struct HingeFit {
  std::vector<double> knots;
  Eigen::VectorXd coef;  // [c0, c1, hinge coefficients...]
  double sse = 0.0;
};

inline HingeFit fit_hinges(const std::vector<double>& t, const std::vector<double>& y, std::vector<double> knots) {
  const auto n = static_cast<Eigen::Index>(t.size());
  const auto p = static_cast<Eigen::Index>(2 + knots.size());
  // center and scale time for conditioning
  const double t0 = t.front(), scale = std::max(1.0, t.back() - t.front());
  Eigen::MatrixXd X(n, p);
  Eigen::VectorXd Y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = (t[static_cast<std::size_t>(i)] - t0) / scale;
    X(i, 0) = 1.0;
    X(i, 1) = u;
    for (std::size_t k = 0; k < knots.size(); ++k) {
      X(i, static_cast<Eigen::Index>(2 + k)) = std::max(0.0, u - (knots[k] - t0) / scale);
    }
    Y(i) = y[static_cast<std::size_t>(i)];
  }
  HingeFit fit;
  fit.knots = std::move(knots);
  fit.coef = X.colPivHouseholderQr().solve(Y);
  fit.sse = (X * fit.coef - Y).squaredNorm();
  // back to ps units: delta(t) = c0 + c1 (t - t0)/scale + sum c_k (t - knot_k)+/scale
  fit.coef(0) -= fit.coef(1) * t0 / scale;
  for (Eigen::Index k = 1; k < p; ++k) fit.coef(k) /= scale;
  return fit;
}

inline ClockModel model_from_fit(const HingeFit& fit) {
  ClockModel m;
  m.reference_ps = 0.0;
  m.offset_ps = fit.coef(0);  // hinges vanish at t = 0 for knots > 0
  double slope = fit.coef(1);
  m.segments.push_back({0.0, slope});
  for (std::size_t k = 0; k < fit.knots.size(); ++k) {
    slope += fit.coef(static_cast<Eigen::Index>(2 + k));
    m.segments.push_back({fit.knots[k], slope});
  }
  return m;
}

/// Continuous piecewise-linear fit; knots are added greedily at segment
/// boundaries while each one cuts the squared error by knot_min_gain.
inline ClockModel fit_clock(const std::vector<double>& t, const std::vector<double>& y,
                            const std::vector<double>& candidates, const DriftOptions& opt) {
  if (t.size() == 1) {
    ClockModel m = ClockModel::linear(y[0]);
    return m;
  }
  HingeFit best = fit_hinges(t, y, {});
  for (int k = 0; k < opt.max_knots; ++k) {
    const double rms = std::sqrt(best.sse / static_cast<double>(t.size()));
    if (rms < opt.knot_min_rms_ps || t.size() < best.knots.size() + 4) break;
    HingeFit trial_best;
    trial_best.sse = std::numeric_limits<double>::infinity();
    for (double c : candidates) {
      if (std::find(best.knots.begin(), best.knots.end(), c) != best.knots.end()) continue;
      auto knots = best.knots;
      knots.push_back(c);
      std::sort(knots.begin(), knots.end());
      auto f = fit_hinges(t, y, knots);
      if (f.sse < trial_best.sse) trial_best = std::move(f);
    }
    if (!(trial_best.sse * opt.knot_min_gain < best.sse)) break;
    best = std::move(trial_best);
  }
  ClockModel m = model_from_fit(best);
  m.residual_rms_ps = std::sqrt(best.sse / static_cast<double>(t.size()));
  return m;
}

}  // namespace detail

/// Re-estimates the correlation peak per segment and fits a continuous
/// piecewise-linear clock model through the peak positions. The first pass
/// acquires segments in order, extrapolating from the last two peaks; later
/// passes re-measure every segment against the previous fit.
inline ClockModel track_drift(const TagStream& a, const TagStream& b, const ClockModel& initial,
                              const DriftOptions& opt = {}) {
  if (a.empty() || b.empty()) throw SyncError("track_drift: empty tag stream", 0.0);
  if (!(opt.segment_length_s > 0.0)) throw UsageError("track_drift: segment length must be > 0");
  const double L = opt.segment_length_s * 1e12;
  const double start = static_cast<double>(a.times.front());
  const double stop = static_cast<double>(a.times.back()) + 1.0;
  const auto n_seg = static_cast<std::size_t>(std::max(1.0, std::ceil((stop - start) / L)));
  auto seg_lo = [&](std::size_t k) { return start + static_cast<double>(k) * L; };
  auto seg_hi = [&](std::size_t k) { return std::min(stop, start + static_cast<double>(k + 1) * L); };
  std::vector<double> candidates;
  for (std::size_t k = 1; k < n_seg; ++k) candidates.push_back(seg_lo(k));

  std::vector<double> pt, py, gaps;
  ClockModel model = initial;
  for (std::size_t k = 0; k < n_seg; ++k) {
    ClockModel local = initial;
    if (pt.size() >= 2) {
      const std::size_t m = pt.size();
      const double slope = (py[m - 1] - py[m - 2]) / (pt[m - 1] - pt[m - 2]);
      local = ClockModel::linear(py[m - 1] - slope * pt[m - 1], slope);
    } else if (pt.size() == 1) {
      local = ClockModel::linear(py[0] - initial.mean_slope(pt[0], pt[0] + 1.0) * pt[0],
                                 initial.mean_slope(pt[0], pt[0] + 1.0));
    }
    const auto peak = detail::segment_peak(a, b, local, seg_lo(k), seg_hi(k), opt);
    if (!peak.found) continue;
    pt.push_back(peak.t_mid);
    py.push_back(local.delta(peak.t_mid) + peak.residual);
  }
  if (pt.empty()) throw SyncError("track_drift: no segment shows a correlation peak", 0.0);
  model = detail::fit_clock(pt, py, candidates, opt);

  for (int pass = 1; pass < opt.passes; ++pass) {
    pt.clear();
    py.clear();
    gaps.clear();
    for (std::size_t k = 0; k < n_seg; ++k) {
      const auto peak = detail::segment_peak(a, b, model, seg_lo(k), seg_hi(k), opt);
      if (!peak.found) {
        gaps.push_back(seg_lo(k));
        continue;
      }
      pt.push_back(peak.t_mid);
      py.push_back(model.delta(peak.t_mid) + peak.residual);
    }
    if (pt.empty()) throw SyncError("track_drift: tracking lost every segment", 0.0);
    model = detail::fit_clock(pt, py, candidates, opt);
  }
  model.gaps_ps = gaps;
  return model;
}

inline ClockModel track_drift(const TagStream& a, const TagStream& b, double initial_offset_ps,
                              const DriftOptions& opt = {}) {
  return track_drift(a, b, ClockModel::linear(initial_offset_ps), opt);
}

struct Coincidence {
  std::size_t index_a = 0;
  std::size_t index_b = 0;
  std::int64_t dt_ps = 0;  ///< corrected t_B - t_A
};

/// Greedy one-to-one pairing in corrected time: all candidate pairs with
/// |dt| <= window/2 are ranked by |dt| (then indices) and accepted while
/// neither tag is taken. Output is ordered by arm A time.
inline std::vector<Coincidence> find_coincidences(const TagStream& a, const TagStream& b, const ClockModel& clock,
                                                  double window_s) {
  if (!(window_s >= 0.0)) throw UsageError("find_coincidences: window must be >= 0");
  clock.validate();
  const std::int64_t window_ps = std::llround(window_s * 1e12);
  std::vector<Coincidence> cand;
  std::size_t start = 0;
  const std::size_t na = a.size();
  for (std::size_t j = 0; j < b.size(); ++j) {
    const auto tb = std::llround(clock.to_a(static_cast<double>(b.times[j])));
    while (start < na && 2 * (tb - static_cast<std::int64_t>(a.times[start])) > window_ps) ++start;
    for (std::size_t i = start; i < na; ++i) {
      const std::int64_t dt = tb - static_cast<std::int64_t>(a.times[i]);
      if (-2 * dt > window_ps) break;
      cand.push_back({i, j, dt});
    }
  }
  std::sort(cand.begin(), cand.end(), [](const Coincidence& x, const Coincidence& y) {
    const auto ax = x.dt_ps < 0 ? -x.dt_ps : x.dt_ps, ay = y.dt_ps < 0 ? -y.dt_ps : y.dt_ps;
    if (ax != ay) return ax < ay;
    if (x.index_a != y.index_a) return x.index_a < y.index_a;
    return x.index_b < y.index_b;
  });
  std::vector<bool> used_a(na, false), used_b(b.size(), false);
  std::vector<Coincidence> out;
  for (const auto& c : cand) {
    if (used_a[c.index_a] || used_b[c.index_b]) continue;
    used_a[c.index_a] = used_b[c.index_b] = true;
    out.push_back(c);
  }
  std::sort(out.begin(), out.end(), [](const Coincidence& x, const Coincidence& y) {
    return x.index_a != y.index_a ? x.index_a < y.index_a : x.index_b < y.index_b;
  });
  return out;
}

struct CorrelationHistogram {
  double bin_width_ps = 0.0;
  double origin_ps = 0.0;  ///< center of bin 0
  std::vector<std::uint64_t> counts;
  std::size_t peak_index = 0;
  double peak_significance = 1.0;  ///< peak / max(median, 1)

  double bin_center(std::size_t i) const { return origin_ps + static_cast<double>(i) * bin_width_ps; }
};

/// Histogram of corrected t_B - t_A over [-span/2, span/2], bins centered on zero.
inline CorrelationHistogram correlation_histogram(const TagStream& a, const TagStream& b, const ClockModel& clock,
                                                  double span_s, double bin_s) {
  if (!(bin_s > 0.0 && span_s >= bin_s)) throw UsageError("correlation_histogram: need 0 < bin <= span");
  CorrelationHistogram h;
  h.bin_width_ps = bin_s * 1e12;
  const long half = static_cast<long>(std::floor(span_s / (2.0 * bin_s) + 1e-9));
  h.origin_ps = -static_cast<double>(half) * h.bin_width_ps;
  h.counts.assign(static_cast<std::size_t>(2 * half + 1), 0);
  const double reach = (static_cast<double>(half) + 0.5) * h.bin_width_ps;
  const auto b_corr = detail::corrected_times(b, clock, std::numeric_limits<double>::infinity());
  detail::for_each_difference(a.times, b_corr, -reach, reach, [&](double dt, std::size_t) {
    const long k = std::lround(std::floor(dt / h.bin_width_ps + 0.5));
    if (k >= -half && k <= half) ++h.counts[static_cast<std::size_t>(k + half)];
  });
  h.peak_index = static_cast<std::size_t>(std::max_element(h.counts.begin(), h.counts.end()) - h.counts.begin());
  std::vector<double> as_double(h.counts.begin(), h.counts.end());
  h.peak_significance =
      std::max(1.0, static_cast<double>(h.counts[h.peak_index]) / std::max(detail::median_of(as_double), 1.0));
  return h;
}

/// Standard deviation of the background-subtracted peak, from its second
/// moment over a window grown to four sigma.
inline double peak_sigma_ps(const CorrelationHistogram& h) {
  std::vector<double> c(h.counts.begin(), h.counts.end());
  const double bg = detail::median_of(c);
  const double center0 = h.bin_center(h.peak_index);
  double half = 3.0 * h.bin_width_ps, mean = center0, sigma = h.bin_width_ps;
  for (int it = 0; it < 20; ++it) {
    double n = 0.0, s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      const double x = h.bin_center(i) - mean;
      if (std::abs(x) > half) continue;
      const double w = c[i] - bg;
      n += w;
      s += w * x;
      s2 += w * x * x;
    }
    if (n <= 0.0) break;
    const double shift = s / n;
    const double var = s2 / n - shift * shift - h.bin_width_ps * h.bin_width_ps / 12.0;
    sigma = std::sqrt(std::max(var, 0.0));
    mean += shift;
    const double next = std::max(3.0 * h.bin_width_ps, 4.0 * sigma);
    if (std::abs(next - half) < 0.01 * h.bin_width_ps) break;
    half = next;
  }
  return sigma;
}

inline void write_pairs_csv(std::ostream& os, const TagStream& a, const TagStream& b,
                            const std::vector<Coincidence>& pairs) {
  os << "t_a_ps,channel_a,channel_b,dt_ps\n";
  for (const auto& p : pairs) {
    os << a.times[p.index_a] << ',' << int{a.channels[p.index_a]} << ',' << int{b.channels[p.index_b]} << ','
       << p.dt_ps << '\n';
  }
}

inline void write_histogram_csv(std::ostream& os, const CorrelationHistogram& h) {
  os << "bin_center_ps,count\n";
  os.precision(12);
  for (std::size_t i = 0; i < h.counts.size(); ++i) os << h.bin_center(i) << ',' << h.counts[i] << '\n';
}

}  // namespace qkdsim
