#pragma once

// Time-dependent link conditions: loss and background per time bin.

#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "qkdsim/errors.hpp"

namespace qkdsim {

struct ProfileBin {
  double t_s = 0.0;      ///< bin start
  double loss_db = 0.0;  ///< total loss, mapped onto arms by the link's loss convention
  double background_cps = std::numeric_limits<double>::quiet_NaN();  ///< per detector; NaN keeps the link value
};

/// Bin i covers [t_i, min(t_i + bin_width, t_{i+1})). A later bin starting
/// after the end of its predecessor leaves a gap.
struct PassProfile {
  std::string label;
  double bin_width_s = 1.0;
  std::vector<ProfileBin> bins;

  double bin_end(std::size_t i) const {
    const double end = bins[i].t_s + bin_width_s;
    return i + 1 < bins.size() ? std::min(end, bins[i + 1].t_s) : end;
  }
  double bin_duration(std::size_t i) const { return bin_end(i) - bins[i].t_s; }
  double start_time() const { return bins.empty() ? 0.0 : bins.front().t_s; }
  double end_time() const { return bins.empty() ? 0.0 : bin_end(bins.size() - 1); }

  void validate() const {
    if (bins.empty()) throw FormatError("profile '" + label + "': no bins");
    if (!(bin_width_s > 0.0 && std::isfinite(bin_width_s))) throw FormatError("profile: bin width must be > 0");
    for (std::size_t i = 0; i < bins.size(); ++i) {
      const auto& b = bins[i];
      const std::string where = "profile bin " + std::to_string(i);
      if (!std::isfinite(b.t_s)) throw FormatError(where + ": time must be finite");
      if (i > 0 && !(b.t_s > bins[i - 1].t_s)) throw FormatError(where + ": time must be strictly increasing");
      if (!std::isfinite(b.loss_db) || b.loss_db < 0.0) throw FormatError(where + ": loss must be finite and >= 0");
      if (!std::isnan(b.background_cps) && !(b.background_cps >= 0.0 && std::isfinite(b.background_cps))) {
        throw FormatError(where + ": background must be >= 0");
      }
    }
  }

  /// Throws CoverageError unless [t0, t1] is covered without gaps.
  void require_coverage(double t0, double t1) const {
    validate();
    if (bins.front().t_s > t0) {
      throw CoverageError("profile starts at " + std::to_string(bins.front().t_s) + " s, after " + std::to_string(t0));
    }
    for (std::size_t i = 0; i + 1 < bins.size(); ++i) {
      if (bins[i].t_s + bin_width_s >= t1) break;  // any later gap lies past t1
      if (bins[i].t_s + bin_width_s < bins[i + 1].t_s) {
        throw CoverageError("profile gap between " + std::to_string(bins[i].t_s + bin_width_s) + " s and " +
                            std::to_string(bins[i + 1].t_s) + " s");
      }
    }
    if (end_time() < t1) {
      throw CoverageError("profile ends at " + std::to_string(end_time()) + " s, before " + std::to_string(t1));
    }
  }
};

inline PassProfile constant_profile(double loss_db, double duration_s, double bin_width_s = 0.1) {
  PassProfile p;
  p.label = "constant";
  p.bin_width_s = bin_width_s;
  const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil(duration_s / bin_width_s - 1e-9)));
  for (std::size_t i = 0; i < n; ++i) p.bins.push_back({i * bin_width_s, loss_db});
  return p;
}

/// Linear from edge_db to mid_db at half the duration and back.
inline PassProfile triangular_profile(double edge_db, double mid_db, double duration_s, double bin_width_s = 1.0) {
  PassProfile p;
  p.label = "triangular";
  p.bin_width_s = bin_width_s;
  const auto n = static_cast<std::size_t>(std::ceil(duration_s / bin_width_s - 1e-9));
  for (std::size_t i = 0; i < n; ++i) {
    const double t = (i + 0.5) * bin_width_s;
    const double u = 1.0 - std::abs(2.0 * t / duration_s - 1.0);
    p.bins.push_back({i * bin_width_s, edge_db + (mid_db - edge_db) * u});
  }
  return p;
}

/// Highest loss at both ends, lowest at culmination, following sin of the pass phase.
inline PassProfile elevation_profile(double min_db, double max_db, double duration_s, double bin_width_s = 1.0) {
  PassProfile p;
  p.label = "elevation";
  p.bin_width_s = bin_width_s;
  const auto n = static_cast<std::size_t>(std::ceil(duration_s / bin_width_s - 1e-9));
  for (std::size_t i = 0; i < n; ++i) {
    const double t = (i + 0.5) * bin_width_s;
    p.bins.push_back({i * bin_width_s, max_db - (max_db - min_db) * std::sin(std::numbers::pi * t / duration_s)});
  }
  return p;
}

/// Concatenates b after a, shifting b's times to start where a ends.
inline PassProfile concatenate(const PassProfile& a, const PassProfile& b) {
  if (a.bin_width_s != b.bin_width_s) throw UsageError("concatenate: bin widths differ");
  PassProfile out = a;
  const double shift = a.end_time() - b.start_time();
  for (auto bin : b.bins) {
    bin.t_s += shift;
    out.bins.push_back(bin);
  }
  return out;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\r')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  return out;
}

inline double parse_number(const std::string& cell, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw FormatError(where + ": not a number: '" + cell + "'");
  }
}

}  // namespace detail

/// Reads "t_s,loss_db[,background_cps]". Bin width is the first spacing
/// unless given.
inline PassProfile read_profile_csv(std::istream& is, double bin_width_s = 0.0, const std::string& label = "profile") {
  std::string line;
  if (!std::getline(is, line)) throw FormatError(label + ": empty file");
  const auto header = detail::split_csv_line(line);
  const bool has_bg = header.size() == 3 && header[2] == "background_cps";
  if (header.size() < 2 || header[0] != "t_s" || header[1] != "loss_db" || (header.size() == 3 && !has_bg) ||
      header.size() > 3) {
    throw FormatError(label + ": expected header 't_s,loss_db[,background_cps]'");
  }
  PassProfile p;
  p.label = label;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    const std::string where = label + " line " + std::to_string(lineno);
    if (cells.size() != header.size()) throw FormatError(where + ": expected " + std::to_string(header.size()) + " fields");
    ProfileBin b;
    b.t_s = detail::parse_number(cells[0], where);
    b.loss_db = detail::parse_number(cells[1], where);
    if (has_bg) b.background_cps = detail::parse_number(cells[2], where);
    p.bins.push_back(b);
  }
  if (p.bins.empty()) throw FormatError(label + ": no data rows");
  if (bin_width_s > 0.0) p.bin_width_s = bin_width_s;
  else if (p.bins.size() > 1) p.bin_width_s = p.bins[1].t_s - p.bins[0].t_s;
  p.validate();
  return p;
}

inline PassProfile read_profile_file(const std::string& path, double bin_width_s = 0.0) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open profile '" + path + "'");
  return read_profile_csv(in, bin_width_s, path);
}

/// Background counts per second per detector over time.
struct NoiseSample {
  double t_s = 0.0;
  double counts_per_s = 0.0;
};

struct NoiseProfile {
  std::vector<NoiseSample> samples;

  /// Sample-and-hold value at time t (first sample before its start).
  double at(double t) const {
    std::size_t lo = 0, hi = samples.size();
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      if (samples[mid].t_s <= t) lo = mid; else hi = mid;
    }
    return samples[lo].counts_per_s;
  }
};

inline NoiseProfile read_noise_profile_csv(std::istream& is, const std::string& label = "noise profile") {
  std::string line;
  if (!std::getline(is, line)) throw FormatError(label + ": empty file");
  const auto header = detail::split_csv_line(line);
  if (header.size() != 2 || header[0] != "t_s" || header[1] != "counts_per_s") {
    throw FormatError(label + ": expected header 't_s,counts_per_s'");
  }
  NoiseProfile out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    const std::string where = label + " line " + std::to_string(lineno);
    if (cells.size() != 2) throw FormatError(where + ": expected 2 fields");
    NoiseSample s{detail::parse_number(cells[0], where), detail::parse_number(cells[1], where)};
    if (!std::isfinite(s.t_s)) throw FormatError(where + ": time must be finite");
    if (!out.samples.empty() && !(s.t_s > out.samples.back().t_s)) throw FormatError(where + ": time must increase");
    if (!(s.counts_per_s >= 0.0) || !std::isfinite(s.counts_per_s)) throw FormatError(where + ": negative counts");
    out.samples.push_back(s);
  }
  if (out.samples.empty()) throw FormatError(label + ": no data rows");
  return out;
}

inline NoiseProfile load_noise_profile(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open noise profile '" + path + "'");
  return read_noise_profile_csv(in, path);
}

/// Copies the noise series into the profile's background column, sampled at
/// each bin start.
inline PassProfile with_background(PassProfile profile, const NoiseProfile& noise) {
  for (auto& b : profile.bins) b.background_cps = noise.at(b.t_s);
  return profile;
}

}  // namespace qkdsim
