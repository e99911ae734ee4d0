#pragma once

// Scenario configuration: strict JSON schema, every violation reported with
// its JSON path.
//
// {
//   "scenario": "single" | "dual" | "pass",
//   "preset": "terrestrial" | "micius_dual" | "snspd_dual",        (optional base)
//   "source":   {"mu" | "pair_rate", "heralding_eff_a", "heralding_eff_b", "misalignment_error"},
//   "arm_a", "arm_b": {"loss_db", "background_rate_per_detector", "dark_rate", "dead_time",
//                      "afterpulse_prob", "afterpulse_delay_mean", "jitter_sigma"},
//   "protocol": {"coincidence_window", "ec_efficiency", "phase_error_failure_prob", "phase_error_mode"},
//   "basis_split": {"p_z", "p_x"},
//   "alice_loss_offset_db": number,
//   "clocks":   {"offset_s", "drift"},
//   "simulate": {"duration_s", "segment_s"},
//   "sweep":    {"variable": "loss_db_total" | "mu", "grid": GRID},
//   "optimize": {"mu_bounds": [lo, hi], "loss_grid": GRID},
//   "pass":     {"link": "single" | "dual", "profile_csv", "bin_width_s", "noise_csv",
//                "template": {"kind": "constant" | "triangular" | "elevation",
//                             "loss_db", "edge_db", "mid_db", "min_db", "max_db", "duration_s"},
//                "policy": "fixed" | "track", "mu"},
//   "sync":     {"search_window_s", "max_drift", "acquisition_bin_s", "max_span_s", "finest_bin_s", "significance_threshold",
//                "max_differences", "track_drift", "segment_length_s", "histogram_span_s", "histogram_bin_s"},
//   "keygen":   {"qber_mode": "oracle_full" | "disclosed_sample", "sample_fraction", "duration_s"},
//   "seeds":    {"simulation", "qber_sample", "privacy_amplification"},
//   "outputs":  {"directory"}
// }
// GRID is an array of numbers or {"start", "stop", "points", "spacing": "linear" | "log"}.
// Units are SI (seconds, counts per second) unless the key says otherwise.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qkdsim/event_sim.hpp"
#include "qkdsim/keyproc.hpp"
#include "qkdsim/link_model.hpp"
#include "qkdsim/optimizer.hpp"
#include "qkdsim/presets.hpp"
#include "qkdsim/satpass.hpp"

namespace qkdsim {

enum class ScenarioKind { Single, Dual, Pass };

struct SweepSpec {
  SweepVariable variable = SweepVariable::LossDbTotal;
  std::vector<double> grid;
};

struct OptimizeSpec {
  MuBounds bounds;
  std::vector<double> loss_grid;  ///< empty: only the configured loss
};

struct PassSpec {
  bool dual = true;
  std::string profile_csv;
  double bin_width_s = 0.0;
  std::string noise_csv;
  std::string template_kind;  ///< used when no profile_csv
  double loss_db = 0.0, edge_db = 0.0, mid_db = 0.0, min_db = 0.0, max_db = 0.0, duration_s = 0.0;
  MuPolicy policy = MuPolicy::track();
};

struct SimulateSpec {
  double duration_s = 1.0;
  double segment_s = kDefaultSegmentSeconds;
};

struct SyncSpec {
  SyncOptions coarse;
  bool track_drift = true;
  DriftOptions drift;
  double histogram_span_s = 20e-9;
  double histogram_bin_s = 156e-12;
};

struct Seeds {
  std::uint64_t simulation = 1;
  std::uint64_t qber_sample = 1;
  std::uint64_t privacy_amplification = 42;
};

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::Single;
  LinkModel link;
  ClockSpec clocks;
  SimulateSpec simulate;
  std::optional<SweepSpec> sweep;
  OptimizeSpec optimize;
  PassSpec pass;
  SyncSpec sync;
  QberOptions qber;
  double keygen_duration_s = 0.0;
  Seeds seeds;
  std::string output_directory = ".";

  PipelineOptions pipeline_options() const {
    PipelineOptions p;
    p.protocol = link.protocol;
    p.sync = sync.coarse;
    p.track_drift = sync.track_drift;
    p.drift = sync.drift;
    p.qber = qber;
    p.qber.seed = seeds.qber_sample;
    p.pa_seed = seeds.privacy_amplification;
    p.duration_s = keygen_duration_s;
    return p;
  }
};

struct Diagnostic {
  std::string path;
  std::string message;
};

/// Thrown when a configuration has any violation; carries all of them.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<Diagnostic> diags) : Error(format(diags)), diags_(std::move(diags)) {}
  const std::vector<Diagnostic>& diagnostics() const noexcept { return diags_; }

 private:
  static std::string format(const std::vector<Diagnostic>& d) {
    std::string s;
    for (const auto& x : d) s += (s.empty() ? "" : "\n") + x.path + ": " + x.message;
    return s;
  }
  std::vector<Diagnostic> diags_;
};

namespace detail {

using json = nlohmann::json;

class ConfigReader {
 public:
  std::vector<Diagnostic> diags;

  void error(const std::string& path, const std::string& msg) { diags.push_back({path, msg}); }

  static std::string join(const std::string& base, const std::string& key) {
    return base.empty() ? key : base + "." + key;
  }

  /// Returns the object at j[key] if present and an object; reports unknown keys.
  const json* section(const json& j, const std::string& key, const std::string& path,
                      const std::set<std::string>& allowed) {
    if (!j.contains(key)) return nullptr;
    const json& s = j.at(key);
    if (!s.is_object()) {
      error(path, "must be an object");
      return nullptr;
    }
    check_keys(s, path, allowed);
    return &s;
  }

  void check_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
      if (!allowed.count(it.key())) error(join(path, it.key()), "unknown key");
    }
  }

  using Check = std::function<bool(double)>;

  void number(const json* obj, const std::string& key, const std::string& base, double& target, const Check& ok,
              const std::string& requirement) {
    if (!obj || !obj->contains(key)) return;
    const std::string path = join(base, key);
    const json& v = obj->at(key);
    if (!v.is_number()) {
      error(path, "must be a number");
      return;
    }
    const double x = v.get<double>();
    if (!std::isfinite(x) || !ok(x)) {
      error(path, "must be " + requirement + " (got " + v.dump() + ")");
      return;
    }
    target = x;
  }

  void integer(const json* obj, const std::string& key, const std::string& base, std::uint64_t& target) {
    if (!obj || !obj->contains(key)) return;
    const json& v = obj->at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      error(join(base, key), "must be a nonnegative integer");
      return;
    }
    target = v.get<std::uint64_t>();
  }

  void boolean(const json* obj, const std::string& key, const std::string& base, bool& target) {
    if (!obj || !obj->contains(key)) return;
    if (!obj->at(key).is_boolean()) {
      error(join(base, key), "must be true or false");
      return;
    }
    target = obj->at(key).get<bool>();
  }

  void string(const json* obj, const std::string& key, const std::string& base, std::string& target,
              const std::set<std::string>& choices = {}) {
    if (!obj || !obj->contains(key)) return;
    const json& v = obj->at(key);
    if (!v.is_string()) {
      error(join(base, key), "must be a string");
      return;
    }
    const auto s = v.get<std::string>();
    if (!choices.empty() && !choices.count(s)) {
      std::string list;
      for (const auto& c : choices) list += (list.empty() ? "" : ", ") + c;
      error(join(base, key), "must be one of: " + list);
      return;
    }
    target = s;
  }

  std::vector<double> grid(const json& v, const std::string& path) {
    std::vector<double> out;
    if (v.is_array()) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) {
          error(path + "[" + std::to_string(i) + "]", "must be a number");
          return {};
        }
        out.push_back(v[i].get<double>());
      }
    } else if (v.is_object()) {
      check_keys(v, path, {"start", "stop", "points", "spacing"});
      double start = NAN, stop = NAN, points = NAN;
      std::string spacing = "linear";
      number(&v, "start", path, start, [](double) { return true; }, "a number");
      number(&v, "stop", path, stop, [](double) { return true; }, "a number");
      number(&v, "points", path, points, [](double x) { return x >= 1 && x == std::floor(x); }, "an integer >= 1");
      string(&v, "spacing", path, spacing, {"linear", "log"});
      if (std::isnan(start) || std::isnan(stop) || std::isnan(points)) {
        error(path, "needs start, stop and points");
        return {};
      }
      if (spacing == "log" && !(start > 0.0 && stop > 0.0)) {
        error(path, "log spacing needs positive start and stop");
        return {};
      }
      const auto n = static_cast<std::size_t>(points);
      for (std::size_t i = 0; i < n; ++i) {
        const double u = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
        out.push_back(spacing == "log" ? start * std::pow(stop / start, u) : start + (stop - start) * u);
      }
    } else {
      error(path, "must be an array of numbers or a {start, stop, points} object");
      return {};
    }
    if (out.empty()) error(path, "must not be empty");
    for (std::size_t i = 1; i < out.size(); ++i) {
      if (!(out[i] > out[i - 1])) {
        error(path, "must be strictly increasing");
        break;
      }
    }
    return out;
  }
};

inline bool nonneg(double x) { return x >= 0.0; }
inline bool positive(double x) { return x > 0.0; }

inline void read_arm(ConfigReader& r, const json& root, const std::string& name, ArmParams& arm) {
  const json* s = r.section(root, name, name,
                            {"loss_db", "background_rate_per_detector", "dark_rate", "dead_time", "afterpulse_prob",
                             "afterpulse_delay_mean", "jitter_sigma"});
  r.number(s, "loss_db", name, arm.channel.loss_db, nonneg, ">= 0");
  r.number(s, "background_rate_per_detector", name, arm.channel.background_rate_per_detector, nonneg, ">= 0");
  r.number(s, "dark_rate", name, arm.detector.dark_rate, nonneg, ">= 0");
  r.number(s, "dead_time", name, arm.detector.dead_time, nonneg, ">= 0");
  r.number(s, "afterpulse_prob", name, arm.detector.afterpulse_prob, [](double x) { return x >= 0.0 && x < 1.0; },
           "in [0, 1)");
  r.number(s, "afterpulse_delay_mean", name, arm.detector.afterpulse_delay_mean, nonneg, ">= 0");
  r.number(s, "jitter_sigma", name, arm.detector.jitter_sigma, nonneg, ">= 0");
}

}  // namespace detail

inline ScenarioConfig parse_config(const nlohmann::json& root) {
  using detail::nonneg;
  using detail::positive;
  using json = nlohmann::json;
  detail::ConfigReader r;
  ScenarioConfig cfg;
  if (!root.is_object()) throw ConfigError(std::vector<Diagnostic>{{"$", "configuration must be a JSON object"}});
  r.check_keys(root, "",
               {"scenario", "preset", "source", "arm_a", "arm_b", "protocol", "basis_split", "alice_loss_offset_db",
                "clocks", "simulate", "sweep", "optimize", "pass", "sync", "keygen", "seeds", "outputs"});

  std::string kind = "single";
  r.string(&root, "scenario", "", kind, {"single", "dual", "pass"});
  cfg.kind = kind == "dual" ? ScenarioKind::Dual : kind == "pass" ? ScenarioKind::Pass : ScenarioKind::Single;

  std::string preset;
  r.string(&root, "preset", "", preset, {"terrestrial", "micius_dual", "snspd_dual"});
  if (preset == "terrestrial") cfg.link = presets::terrestrial_free_space();
  else if (preset == "micius_dual") cfg.link = presets::micius_dual_downlink();
  else if (preset == "snspd_dual") cfg.link = presets::snspd_dual_downlink();

  const json* pass = r.section(root, "pass", "pass",
                               {"link", "profile_csv", "bin_width_s", "noise_csv", "template", "policy", "mu"});
  std::string pass_link = "dual";
  r.string(pass, "link", "pass", pass_link, {"single", "dual"});
  cfg.pass.dual = pass_link == "dual";
  const bool dual = cfg.kind == ScenarioKind::Dual || (cfg.kind == ScenarioKind::Pass && cfg.pass.dual);
  cfg.link.loss_convention = dual ? LossConvention::SymmetricDual : LossConvention::SingleLink;
  if (dual && !root.contains("basis_split")) cfg.link.basis_split = {0.5, 0.5};

  const json* source =
      r.section(root, "source", "source", {"mu", "pair_rate", "heralding_eff_a", "heralding_eff_b", "misalignment_error"});
  auto in_unit = [](double x) { return x > 0.0 && x <= 1.0; };
  r.number(source, "heralding_eff_a", "source", cfg.link.source.heralding_eff_a, in_unit, "in (0, 1]");
  r.number(source, "heralding_eff_b", "source", cfg.link.source.heralding_eff_b, in_unit, "in (0, 1]");
  r.number(source, "misalignment_error", "source", cfg.link.source.misalignment_error,
           [](double x) { return x >= 0.0 && x <= 0.5; }, "in [0, 0.5]");

  detail::read_arm(r, root, "arm_a", cfg.link.arm_a);
  detail::read_arm(r, root, "arm_b", cfg.link.arm_b);

  const json* protocol = r.section(root, "protocol", "protocol",
                                   {"coincidence_window", "ec_efficiency", "phase_error_failure_prob", "phase_error_mode"});
  const double old_window = cfg.link.protocol.coincidence_window;
  const double old_mu = cfg.link.mu();
  r.number(protocol, "coincidence_window", "protocol", cfg.link.protocol.coincidence_window, positive,
           "> 0 (the coincidence window must be positive)");
  r.number(protocol, "ec_efficiency", "protocol", cfg.link.protocol.ec_efficiency, [](double x) { return x >= 1.0; },
           ">= 1");
  r.number(protocol, "phase_error_failure_prob", "protocol", cfg.link.protocol.phase_error_failure_prob,
           [](double x) { return x > 0.0 && x < 1.0; }, "in (0, 1)");
  std::string mode;
  r.string(protocol, "phase_error_mode", "protocol", mode,
           {"same_basis_asymptotic", "same_basis_with_deviation", "cross_basis_with_deviation"});
  if (!mode.empty()) cfg.link.protocol.phase_error_mode = phase_error_mode_from_string(mode);
  // a preset's pair rate is defined per window, so keep mu when only the window changes
  if (cfg.link.protocol.coincidence_window != old_window) cfg.link = cfg.link.with_mu(old_mu);

  if (source) {
    const bool has_mu = source->contains("mu"), has_rate = source->contains("pair_rate");
    if (has_mu && has_rate) r.error("source", "give either mu or pair_rate, not both");
    double mu = cfg.link.mu(), rate = cfg.link.source.pair_rate;
    r.number(source, "mu", "source", mu, nonneg, ">= 0");
    r.number(source, "pair_rate", "source", rate, nonneg, ">= 0");
    if (has_mu) cfg.link = cfg.link.with_mu(mu);
    else if (has_rate) cfg.link.source.pair_rate = rate;
  }

  const json* split = r.section(root, "basis_split", "basis_split", {"p_z", "p_x"});
  if (split) {
    double pz = cfg.link.basis_split.p_z, px = cfg.link.basis_split.p_x;
    auto prob = [](double x) { return x >= 0.0 && x <= 1.0; };
    r.number(split, "p_z", "basis_split", pz, prob, "in [0, 1]");
    r.number(split, "p_x", "basis_split", px, prob, "in [0, 1]");
    if (!split->contains("p_x")) px = 1.0 - pz;
    if (!split->contains("p_z")) pz = 1.0 - px;
    if (std::abs(pz + px - 1.0) > 1e-12) r.error("basis_split", "p_z + p_x must equal 1");
    cfg.link.basis_split = {pz, px};
  }
  r.number(&root, "alice_loss_offset_db", "", cfg.link.alice_loss_offset_db, nonneg, ">= 0");
  if (dual && cfg.link.basis_split.p_z != 0.5) r.error("basis_split.p_z", "must be 0.5 for a dual downlink");

  const json* clocks = r.section(root, "clocks", "clocks", {"offset_s", "drift"});
  r.number(clocks, "offset_s", "clocks", cfg.clocks.offset_s, [](double) { return true; }, "a number");
  r.number(clocks, "drift", "clocks", cfg.clocks.drift, [](double x) { return x > -1.0; }, "> -1");

  const json* sim = r.section(root, "simulate", "simulate", {"duration_s", "segment_s"});
  r.number(sim, "duration_s", "simulate", cfg.simulate.duration_s, nonneg, ">= 0");
  r.number(sim, "segment_s", "simulate", cfg.simulate.segment_s, positive, "> 0");

  if (const json* sweep = r.section(root, "sweep", "sweep", {"variable", "grid"})) {
    SweepSpec s;
    std::string var = "loss_db_total";
    r.string(sweep, "variable", "sweep", var, {"loss_db_total", "mu"});
    s.variable = var == "mu" ? SweepVariable::PairRate : SweepVariable::LossDbTotal;
    if (sweep->contains("grid")) s.grid = r.grid(sweep->at("grid"), "sweep.grid");
    else r.error("sweep.grid", "is required");
    cfg.sweep = s;
  }

  if (const json* opt = r.section(root, "optimize", "optimize", {"mu_bounds", "loss_grid"})) {
    if (opt->contains("mu_bounds")) {
      const auto& b = opt->at("mu_bounds");
      if (!b.is_array() || b.size() != 2 || !b[0].is_number() || !b[1].is_number()) {
        r.error("optimize.mu_bounds", "must be [lo, hi]");
      } else if (!(b[0].get<double>() > 0.0 && b[1].get<double>() > b[0].get<double>())) {
        r.error("optimize.mu_bounds", "must satisfy 0 < lo < hi");
      } else {
        cfg.optimize.bounds = {b[0].get<double>(), b[1].get<double>()};
      }
    }
    if (opt->contains("loss_grid")) cfg.optimize.loss_grid = r.grid(opt->at("loss_grid"), "optimize.loss_grid");
  }

  if (pass) {
    r.string(pass, "profile_csv", "pass", cfg.pass.profile_csv);
    r.number(pass, "bin_width_s", "pass", cfg.pass.bin_width_s, positive, "> 0");
    r.string(pass, "noise_csv", "pass", cfg.pass.noise_csv);
    if (const json* t = r.section(*pass, "template", "pass.template",
                                  {"kind", "loss_db", "edge_db", "mid_db", "min_db", "max_db", "duration_s"})) {
      r.string(t, "kind", "pass.template", cfg.pass.template_kind, {"constant", "triangular", "elevation"});
      if (cfg.pass.template_kind.empty()) r.error("pass.template.kind", "is required");
      for (auto [key, target] : {std::pair{"loss_db", &cfg.pass.loss_db}, std::pair{"edge_db", &cfg.pass.edge_db},
                                 std::pair{"mid_db", &cfg.pass.mid_db}, std::pair{"min_db", &cfg.pass.min_db},
                                 std::pair{"max_db", &cfg.pass.max_db}}) {
        r.number(t, key, "pass.template", *target, nonneg, ">= 0");
      }
      r.number(t, "duration_s", "pass.template", cfg.pass.duration_s, positive, "> 0");
      if (!t->contains("duration_s")) r.error("pass.template.duration_s", "is required");
    }
    std::string policy = "track";
    r.string(pass, "policy", "pass", policy, {"fixed", "track"});
    if (policy == "fixed") {
      double mu = cfg.link.mu();
      r.number(pass, "mu", "pass", mu, nonneg, ">= 0");
      cfg.pass.policy = MuPolicy::fixed(mu);
    } else {
      if (pass->contains("mu")) r.error("pass.mu", "only valid with policy \"fixed\"");
      cfg.pass.policy = MuPolicy::track(cfg.optimize.bounds);
    }
    if (cfg.pass.profile_csv.empty() && cfg.pass.template_kind.empty() && cfg.kind == ScenarioKind::Pass) {
      r.error("pass", "needs profile_csv or template");
    }
  } else if (cfg.kind == ScenarioKind::Pass) {
    r.error("pass", "section is required for scenario \"pass\"");
  }

  if (const json* s = r.section(root, "sync", "sync",
                                {"search_window_s", "max_drift", "acquisition_bin_s", "max_span_s", "finest_bin_s", "significance_threshold",
                                 "max_differences", "track_drift", "segment_length_s", "histogram_span_s", "histogram_bin_s"})) {
    r.number(s, "search_window_s", "sync", cfg.sync.coarse.search_window_s, positive, "> 0");
    r.number(s, "max_drift", "sync", cfg.sync.coarse.max_drift, nonneg, ">= 0");
    r.number(s, "acquisition_bin_s", "sync", cfg.sync.coarse.acquisition_bin_s, positive, "> 0");
    r.number(s, "max_span_s", "sync", cfg.sync.coarse.max_span_s, positive, "> 0");
    r.number(s, "finest_bin_s", "sync", cfg.sync.coarse.finest_bin_s, positive, "> 0");
    r.number(s, "significance_threshold", "sync", cfg.sync.coarse.significance_threshold, positive, "> 0");
    r.number(s, "max_differences", "sync", cfg.sync.coarse.max_differences, positive, "> 0");
    r.boolean(s, "track_drift", "sync", cfg.sync.track_drift);
    r.number(s, "segment_length_s", "sync", cfg.sync.drift.segment_length_s, positive, "> 0");
    r.number(s, "histogram_span_s", "sync", cfg.sync.histogram_span_s, positive, "> 0");
    r.number(s, "histogram_bin_s", "sync", cfg.sync.histogram_bin_s, positive, "> 0");
    if (cfg.sync.coarse.acquisition_bin_s > cfg.sync.coarse.search_window_s) {
      r.error("sync.acquisition_bin_s", "must not exceed sync.search_window_s");
    }
    if (cfg.sync.histogram_bin_s > cfg.sync.histogram_span_s) {
      r.error("sync.histogram_bin_s", "must not exceed sync.histogram_span_s");
    }
  }

  if (const json* k = r.section(root, "keygen", "keygen", {"qber_mode", "sample_fraction", "duration_s"})) {
    std::string m = "oracle_full";
    r.string(k, "qber_mode", "keygen", m, {"oracle_full", "disclosed_sample"});
    cfg.qber.mode = m == "disclosed_sample" ? QberMode::DisclosedSample : QberMode::OracleFull;
    r.number(k, "sample_fraction", "keygen", cfg.qber.fraction, [](double x) { return x > 0.0 && x <= 1.0; },
             "in (0, 1]");
    r.number(k, "duration_s", "keygen", cfg.keygen_duration_s, nonneg, ">= 0");
  }

  if (const json* s = r.section(root, "seeds", "seeds", {"simulation", "qber_sample", "privacy_amplification"})) {
    r.integer(s, "simulation", "seeds", cfg.seeds.simulation);
    r.integer(s, "qber_sample", "seeds", cfg.seeds.qber_sample);
    r.integer(s, "privacy_amplification", "seeds", cfg.seeds.privacy_amplification);
  }
  if (const json* o = r.section(root, "outputs", "outputs", {"directory"})) {
    r.string(o, "directory", "outputs", cfg.output_directory);
  }

  if (r.diags.empty()) {
    try {
      cfg.link.validate();
    } catch (const DomainError& e) {
      const std::string msg = e.what();
      const auto space = msg.find(' ');
      r.error(space == std::string::npos ? "$" : msg.substr(0, space), msg);
    }
  }
  if (!r.diags.empty()) throw ConfigError(r.diags);
  return cfg;
}

struct AnalyzeInput {
  BasisStats stats;
  ProtocolParams protocol;
};

/// Basis statistics document: {"n_sift_z", "n_sift_x", "qber_z", "qber_x",
/// "duration_s", optional "protocol": {...}}. `base` supplies protocol defaults.
inline AnalyzeInput parse_basis_stats(const nlohmann::json& root, ProtocolParams base) {
  using detail::nonneg;
  detail::ConfigReader r;
  AnalyzeInput in;
  in.protocol = base;
  if (!root.is_object()) throw ConfigError(std::vector<Diagnostic>{{"$", "stats must be a JSON object"}});
  r.check_keys(root, "", {"n_sift_z", "n_sift_x", "qber_z", "qber_x", "duration_s", "protocol"});
  for (const char* key : {"n_sift_z", "n_sift_x", "qber_z", "qber_x"}) {
    if (!root.contains(key)) r.error(key, "is required");
  }
  auto qber = [](double x) { return x >= 0.0 && x <= 0.5; };
  r.number(&root, "n_sift_z", "", in.stats.n_sift_z, nonneg, ">= 0");
  r.number(&root, "n_sift_x", "", in.stats.n_sift_x, nonneg, ">= 0");
  r.number(&root, "qber_z", "", in.stats.qber_z, qber, "in [0, 0.5]");
  r.number(&root, "qber_x", "", in.stats.qber_x, qber, "in [0, 0.5]");
  r.number(&root, "duration_s", "", in.stats.duration, detail::positive, "> 0");
  const nlohmann::json* protocol = r.section(
      root, "protocol", "protocol", {"coincidence_window", "ec_efficiency", "phase_error_failure_prob", "phase_error_mode"});
  r.number(protocol, "coincidence_window", "protocol", in.protocol.coincidence_window, detail::positive, "> 0");
  r.number(protocol, "ec_efficiency", "protocol", in.protocol.ec_efficiency, [](double x) { return x >= 1.0; }, ">= 1");
  r.number(protocol, "phase_error_failure_prob", "protocol", in.protocol.phase_error_failure_prob,
           [](double x) { return x > 0.0 && x < 1.0; }, "in (0, 1)");
  std::string mode;
  r.string(protocol, "phase_error_mode", "protocol", mode,
           {"same_basis_asymptotic", "same_basis_with_deviation", "cross_basis_with_deviation"});
  if (!mode.empty()) in.protocol.phase_error_mode = phase_error_mode_from_string(mode);
  if (!r.diags.empty()) throw ConfigError(r.diags);
  return in;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(std::vector<Diagnostic>{{"$", "cannot open '" + path + "'"}});
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::vector<Diagnostic>{{"$", std::string("invalid JSON in '") + path + "': " + e.what()}});
  }
}

inline ScenarioConfig load_config(const std::string& path) { return parse_config(read_json_file(path)); }

/// Profile named by the pass section: a CSV file or a generated template,
/// optionally with a background series from a noise CSV.
inline PassProfile build_pass_profile(const PassSpec& spec) {
  PassProfile p;
  if (!spec.profile_csv.empty()) {
    p = read_profile_file(spec.profile_csv, spec.bin_width_s);
  } else {
    const double w = spec.bin_width_s > 0.0 ? spec.bin_width_s : 1.0;
    if (spec.template_kind == "constant") p = constant_profile(spec.loss_db, spec.duration_s, w);
    else if (spec.template_kind == "triangular") p = triangular_profile(spec.edge_db, spec.mid_db, spec.duration_s, w);
    else p = elevation_profile(spec.min_db, spec.max_db, spec.duration_s, w);
  }
  if (!spec.noise_csv.empty()) p = with_background(p, load_noise_profile(spec.noise_csv));
  return p;
}

}  // namespace qkdsim
