// qkdsim command-line tool: scenario configs in, CSV/JSON artifacts out.
//
// Exit status: 0 ok, 2 configuration or usage error, 3 no key or abort,
// 4 synchronization failure, 1 anything else.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "qkdsim/qkdsim.hpp"

namespace {

using namespace qkdsim;
using ordered_json = nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNoKey = 3;
constexpr int kExitSync = 4;

/// Grid on the command line: "a,b,c" or "start:stop:points[:log]".
std::vector<double> parse_grid(const std::string& spec) {
  nlohmann::json j;
  if (spec.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.size() < 3 || parts.size() > 4) throw UsageError("grid '" + spec + "': expected start:stop:points[:log]");
    try {
      j = {{"start", std::stod(parts[0])}, {"stop", std::stod(parts[1])}, {"points", std::stod(parts[2])}};
    } catch (const std::exception&) {
      throw UsageError("grid '" + spec + "': not a number");
    }
    if (parts.size() == 4) j["spacing"] = parts[3];
  } else {
    j = nlohmann::json::array();
    std::stringstream ss(spec);
    for (std::string p; std::getline(ss, p, ',');) {
      try {
        j.push_back(std::stod(p));
      } catch (const std::exception&) {
        throw UsageError("grid '" + spec + "': '" + p + "' is not a number");
      }
    }
  }
  detail::ConfigReader r;
  auto out = r.grid(j, "--grid");
  if (!r.diags.empty()) throw ConfigError(r.diags);
  return out;
}

/// Writes through `body` to `path`, or to standard output when path is empty or "-".
void emit(const std::string& path, const std::function<void(std::ostream&)>& body, bool binary = false) {
  if (path.empty() || path == "-") {
    body(std::cout);
    std::cout.flush();
  } else {
    write_file_atomic(path, body, binary);
  }
}

void emit_json(const std::string& path, const ordered_json& j) {
  emit(path, [&](std::ostream& os) { os << j.dump(2) << '\n'; });
}

ScenarioConfig config_or_default(const std::string& path) {
  return path.empty() ? ScenarioConfig{} : load_config(path);
}

ordered_json optimum_json(const std::vector<OptimumAtLoss>& rows) {
  ordered_json arr = ordered_json::array();
  for (const auto& r : rows) {
    ordered_json j;
    j["loss_db_total"] = r.loss_db;
    if (r.optimum) {
      j["mu_opt"] = r.optimum->mu_opt;
      j["pair_rate_opt_pps"] = r.optimum->pair_rate_opt;
      j["skr_max_bps"] = r.optimum->skr_max;
      j["band_lo_mu"] = r.optimum->band_lo;
      j["band_hi_mu"] = r.optimum->band_hi;
    } else {
      j["no_key"] = r.error;
    }
    arr.push_back(j);
  }
  return arr;
}

ordered_json truth_json(const TruthRecord& t, const ClockSpec& clock, std::uint64_t seed, double duration) {
  ordered_json j;
  j["seed"] = seed;
  j["duration_s"] = duration;
  j["clock"] = {{"offset_s", clock.offset_s}, {"drift", clock.drift}};
  j["emitted_pairs"] = t.emitted_pairs;
  j["survived_a"] = t.survived_a;
  j["survived_b"] = t.survived_b;
  j["survived_both"] = t.survived_both;
  j["error_flags"] = t.error_flags;
  std::uint64_t both = 0;
  for (const auto& p : t.pairs) both += p.registered_a && p.registered_b;
  j["registered_both"] = both;
  return j;
}

int report_exit(const KeyReport& r) { return r.aborted || r.final_length == 0 ? kExitNoKey : kExitOk; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qkdsim: entanglement-based QKD link simulator and analytics"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Secure key report from per-basis sifted statistics (JSON)");
  std::string a_stats, a_out, a_mode = "same_basis_with_deviation";
  double a_eps = 1e-5, a_f = 1.2;
  analyze->add_option("--stats", a_stats, "Stats JSON: n_sift_z, n_sift_x, qber_z, qber_x, duration_s")
      ->required();
  analyze->add_option("--mode", a_mode, "Phase-error mode")
      ->check(CLI::IsMember({"same_basis_asymptotic", "same_basis_with_deviation", "cross_basis_with_deviation"}));
  analyze->add_option("--epsilon", a_eps, "Phase-error failure probability")->capture_default_str();
  analyze->add_option("--ec-efficiency", a_f, "Error-correction efficiency f")->capture_default_str();
  analyze->add_option("--out", a_out, "Report JSON path (default: stdout)");

  // model
  auto* model = app.add_subcommand("model", "Analytic rate sweep to CSV");
  std::string m_config, m_sweep, m_grid, m_out;
  std::optional<double> m_loss, m_mu;
  model->add_option("--config", m_config, "Scenario JSON")->required();
  model->add_option("--sweep", m_sweep, "Swept variable")->check(CLI::IsMember({"loss_db_total", "mu"}));
  model->add_option("--grid", m_grid, "Grid: a,b,c or start:stop:points[:log]");
  model->add_option("--loss-db", m_loss, "Total link loss [dB] held fixed");
  model->add_option("--mu", m_mu, "Pair rate per window held fixed");
  model->add_option("--out", m_out, "CSV path (default: stdout)");

  // optimize
  auto* optimize = app.add_subcommand("optimize", "Key-rate-maximizing pair rate per loss");
  std::string o_config, o_grid, o_csv, o_json;
  std::optional<double> o_loss;
  optimize->add_option("--config", o_config, "Scenario JSON")->required();
  optimize->add_option("--loss-db", o_loss, "Single total loss [dB]");
  optimize->add_option("--loss-grid", o_grid, "Loss grid: a,b,c or start:stop:points");
  optimize->add_option("--out-csv", o_csv, "Optimum CSV path (default: stdout)");
  optimize->add_option("--out-json", o_json, "Optimum JSON path");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Synthesize time-tag streams for both arms");
  std::string s_config, s_dir, s_format = "binary";
  std::optional<double> s_duration;
  std::optional<std::uint64_t> s_seed;
  simulate->add_option("--config", s_config, "Scenario JSON")->required();
  simulate->add_option("--duration", s_duration, "Acquisition length [s]");
  simulate->add_option("--seed", s_seed, "Simulation seed");
  simulate->add_option("--format", s_format, "Tag file format")->check(CLI::IsMember({"binary", "csv"}))
      ->capture_default_str();
  simulate->add_option("--out-dir", s_dir, "Directory for alice/bob tag files and truth.json");

  // sync
  auto* sync = app.add_subcommand("sync", "Recover the clock model and list coincidences");
  std::string y_a, y_b, y_config, y_clock, y_pairs, y_hist;
  bool y_no_drift = false;
  sync->add_option("--a", y_a, "Arm A tag file (binary or CSV)")->required();
  sync->add_option("--b", y_b, "Arm B tag file (binary or CSV)")->required();
  sync->add_option("--config", y_config, "Scenario JSON for sync and protocol settings");
  sync->add_flag("--no-drift", y_no_drift, "Fit a constant offset only");
  sync->add_option("--out-clock", y_clock, "Clock model JSON path (default: stdout)");
  sync->add_option("--out-pairs", y_pairs, "Coincidence pairs CSV path");
  sync->add_option("--out-hist", y_hist, "Correlation histogram CSV path");

  // keygen
  auto* keygen = app.add_subcommand("keygen", "Full pipeline from tag files to a secret key");
  std::string k_a, k_b, k_config, k_out, k_key, k_qber;
  std::optional<double> k_duration, k_fraction;
  std::optional<std::uint64_t> k_pa_seed, k_sample_seed;
  bool k_no_drift = false;
  keygen->add_option("--a", k_a, "Arm A tag file")->required();
  keygen->add_option("--b", k_b, "Arm B tag file")->required();
  keygen->add_option("--config", k_config, "Scenario JSON for protocol, sync and keygen settings");
  keygen->add_option("--duration", k_duration, "Acquisition length [s] (default: span of arm A)");
  keygen->add_option("--qber-mode", k_qber, "QBER estimation")->check(CLI::IsMember({"oracle_full", "disclosed_sample"}));
  keygen->add_option("--sample-fraction", k_fraction, "Disclosed fraction per basis");
  keygen->add_option("--sample-seed", k_sample_seed, "Seed for the disclosed sample");
  keygen->add_option("--pa-seed", k_pa_seed, "Seed for the Toeplitz matrix");
  keygen->add_flag("--no-drift", k_no_drift, "Fit a constant offset only");
  keygen->add_option("--out", k_out, "Report JSON path (default: stdout)");
  keygen->add_option("--key-out", k_key, "Final key hex path");

  // pass
  auto* pass = app.add_subcommand("pass", "Key rate over a satellite pass profile");
  std::string p_config, p_profile, p_noise, p_policy, p_csv, p_json;
  std::optional<double> p_mu, p_bin;
  pass->add_option("--config", p_config, "Scenario JSON")->required();
  pass->add_option("--profile", p_profile, "Profile CSV (t_s,loss_db[,background_cps])");
  pass->add_option("--noise", p_noise, "Background CSV (t_s,counts_per_s)");
  pass->add_option("--bin-width", p_bin, "Profile bin width [s]");
  pass->add_option("--policy", p_policy, "Pair-rate policy")->check(CLI::IsMember({"fixed", "track"}));
  pass->add_option("--mu", p_mu, "Pair rate per window for the fixed policy");
  pass->add_option("--out-csv", p_csv, "Per-bin CSV path (default: stdout)");
  pass->add_option("--out-json", p_json, "Totals JSON path");

  // validate
  auto* validate = app.add_subcommand("validate", "Check a scenario config without running it");
  std::string v_config;
  validate->add_option("--config", v_config, "Scenario JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  auto run = [&]() -> int {
    if (*analyze) {
      ProtocolParams base;
      base.phase_error_mode = phase_error_mode_from_string(a_mode);
      base.phase_error_failure_prob = a_eps;
      base.ec_efficiency = a_f;
      base.validate();
      const auto in = parse_basis_stats(read_json_file(a_stats), base);
      const auto report = analyze_stats(in.stats, in.protocol);
      auto j = to_json(report);
      j.erase("clock");
      j.erase("final_key_hex");
      emit_json(a_out, j);
      return report_exit(report);
    }

    if (*model) {
      auto cfg = load_config(m_config);
      if (m_loss) cfg.link = cfg.link.with_total_loss(*m_loss);
      if (m_mu) cfg.link = cfg.link.with_mu(*m_mu);
      SweepSpec spec = cfg.sweep.value_or(SweepSpec{});
      if (!m_sweep.empty()) {
        const auto v = m_sweep == "mu" ? SweepVariable::PairRate : SweepVariable::LossDbTotal;
        if (v != spec.variable) spec.grid.clear();
        spec.variable = v;
      }
      if (!m_grid.empty()) spec.grid = parse_grid(m_grid);
      if (spec.grid.empty()) {
        spec.grid = spec.variable == SweepVariable::PairRate ? parse_grid("1e-4:1:81:log") : parse_grid("20:70:101");
      }
      const auto series = sweep(cfg.link, spec.variable, spec.grid);
      emit(m_out, [&](std::ostream& os) { write_sweep_csv(os, spec.variable, series); });
      return kExitOk;
    }

    if (*optimize) {
      const auto cfg = load_config(o_config);
      std::vector<double> grid = cfg.optimize.loss_grid;
      if (o_loss) grid = {*o_loss};
      if (!o_grid.empty()) grid = parse_grid(o_grid);
      if (grid.empty()) grid = {cfg.link.total_loss_db()};
      const auto rows = optimum_vs_loss(cfg.link, grid, cfg.optimize.bounds);
      emit(o_csv, [&](std::ostream& os) { write_optimum_csv(os, rows); });
      if (!o_json.empty()) emit_json(o_json, optimum_json(rows));
      bool any = false;
      for (const auto& r : rows) any = any || r.optimum.has_value();
      if (!any) {
        std::cerr << "no secure key at any requested loss\n";
        return kExitNoKey;
      }
      return kExitOk;
    }

    if (*simulate) {
      const auto cfg = load_config(s_config);
      const std::uint64_t seed = s_seed.value_or(cfg.seeds.simulation);
      const std::string dir = s_dir.empty() ? cfg.output_directory : s_dir;
      SimulationResult sim;
      double duration = s_duration.value_or(cfg.simulate.duration_s);
      if (cfg.kind == ScenarioKind::Pass) {
        const auto profile = build_pass_profile(cfg.pass);
        if (!s_duration) duration = profile.end_time();
        sim = apply_pass_profile(cfg.link, profile, duration, seed, cfg.clocks);
      } else {
        sim = synthesize(cfg.link, cfg.clocks, duration, seed, cfg.simulate.segment_s);
      }
      const bool binary = s_format == "binary";
      const std::string ext = binary ? ".qtag" : ".csv";
      for (const auto* s : {&sim.a, &sim.b}) {
        const std::string path = dir + "/" + (s == &sim.a ? "alice" : "bob") + ext;
        emit(path, [&](std::ostream& os) { binary ? write_tags_binary(os, *s) : write_tags_csv(os, *s); }, binary);
      }
      emit_json(dir + "/truth.json", truth_json(sim.truth, cfg.clocks, seed, duration));
      std::cerr << "wrote " << sim.a.size() << " + " << sim.b.size() << " tags to " << dir << "\n";
      return kExitOk;
    }

    if (*sync) {
      const auto cfg = config_or_default(y_config);
      const auto a = read_tags_file(y_a);
      const auto b = read_tags_file(y_b);
      const auto coarse = coarse_offset_search(a, b, cfg.sync.coarse);
      const bool drift = cfg.sync.track_drift && !y_no_drift;
      const ClockModel clock = drift ? track_drift(a, b, coarse.clock(), cfg.sync.drift) : coarse.clock();
      auto j = clock_to_json(clock);
      j["coarse_offset_ps"] = coarse.offset_ps;
      j["coarse_drift"] = coarse.drift;
      j["significance"] = coarse.significance;
      emit_json(y_clock, j);
      if (!y_pairs.empty()) {
        const auto pairs = find_coincidences(a, b, clock, cfg.link.protocol.coincidence_window);
        emit(y_pairs, [&](std::ostream& os) { write_pairs_csv(os, a, b, pairs); });
      }
      if (!y_hist.empty()) {
        const auto h = correlation_histogram(a, b, clock, cfg.sync.histogram_span_s, cfg.sync.histogram_bin_s);
        emit(y_hist, [&](std::ostream& os) { write_histogram_csv(os, h); });
      }
      return kExitOk;
    }

    if (*keygen) {
      auto cfg = config_or_default(k_config);
      if (!k_qber.empty()) cfg.qber.mode = k_qber == "disclosed_sample" ? QberMode::DisclosedSample : QberMode::OracleFull;
      if (k_fraction) cfg.qber.fraction = *k_fraction;
      if (k_sample_seed) cfg.seeds.qber_sample = *k_sample_seed;
      if (k_pa_seed) cfg.seeds.privacy_amplification = *k_pa_seed;
      if (k_duration) cfg.keygen_duration_s = *k_duration;
      if (k_no_drift) cfg.sync.track_drift = false;
      const auto a = read_tags_file(k_a);
      const auto b = read_tags_file(k_b);
      const auto report = full_pipeline(a, b, cfg.pipeline_options());
      emit_json(k_out, to_json(report));
      if (!k_key.empty()) emit(k_key, [&](std::ostream& os) { os << report.final_key_hex << '\n'; });
      return report_exit(report);
    }

    if (*pass) {
      auto cfg = load_config(p_config);
      if (!p_profile.empty()) cfg.pass.profile_csv = p_profile;
      if (!p_noise.empty()) cfg.pass.noise_csv = p_noise;
      if (p_bin) cfg.pass.bin_width_s = *p_bin;
      if (p_policy == "fixed") cfg.pass.policy = MuPolicy::fixed(p_mu.value_or(cfg.link.mu()));
      else if (p_policy == "track") cfg.pass.policy = MuPolicy::track(cfg.optimize.bounds);
      else if (p_mu) cfg.pass.policy = MuPolicy::fixed(*p_mu);
      if (cfg.pass.profile_csv.empty() && cfg.pass.template_kind.empty()) {
        throw ConfigError(std::vector<Diagnostic>{{"pass", "needs --profile, pass.profile_csv or pass.template"}});
      }
      const auto profile = build_pass_profile(cfg.pass);
      const auto result = pass_skr(profile, cfg.link, cfg.pass.policy);
      emit(p_csv, [&](std::ostream& os) { write_pass_csv(os, result); });
      if (!p_json.empty()) {
        ordered_json j;
        j["bins"] = result.bins.size();
        j["duration_s"] = result.duration_s;
        j["total_bits"] = result.total_bits;
        j["mean_skr_bps"] = result.duration_s > 0.0 ? result.total_bits / result.duration_s : 0.0;
        j["policy"] = cfg.pass.policy.kind == MuPolicy::Kind::Fixed ? "fixed" : "track";
        emit_json(p_json, j);
      }
      return result.total_bits > 0.0 ? kExitOk : kExitNoKey;
    }

    if (*validate) {
      load_config(v_config);
      std::cout << "ok\n";
      return kExitOk;
    }
    return kExitOther;
  };

  // Maps a library exception to the exit status and prints the diagnostic.
  std::function<int(std::exception_ptr, const std::string&)> classify = [&](std::exception_ptr ep,
                                                                          const std::string& prefix) -> int {
    try {
      std::rethrow_exception(ep);
    } catch (const ConfigError& e) {
      for (const auto& d : e.diagnostics()) std::cerr << prefix << "config error: " << d.path << ": " << d.message << "\n";
      return kExitConfig;
    } catch (const StageError& e) {
      std::cerr << prefix << "stage '" << e.stage() << "' failed: " << e.what() << "\n";
      try {
        e.rethrow_cause();
      } catch (...) {
        return classify(std::current_exception(), "  ");
      }
    } catch (const SyncError& e) {
      std::cerr << prefix << "sync failed: " << e.what() << " (best significance " << e.best_significance() << ")\n";
      return kExitSync;
    } catch (const NoKeyError& e) {
      std::cerr << prefix << "no key: " << e.what() << "\n";
      return kExitNoKey;
    } catch (const AbortError& e) {
      std::cerr << prefix << "aborted: " << e.what() << "\n";
      return kExitNoKey;
    } catch (const UsageError& e) {
      std::cerr << prefix << "usage error: " << e.what() << "\n";
      return kExitConfig;
    } catch (const DomainError& e) {
      std::cerr << prefix << "invalid parameter: " << e.what() << "\n";
      return kExitConfig;
    } catch (const FormatError& e) {
      std::cerr << prefix << "input format error: " << e.what() << "\n";
      return kExitConfig;
    } catch (const CoverageError& e) {
      std::cerr << prefix << "profile coverage error: " << e.what() << "\n";
      return kExitConfig;
    } catch (const std::exception& e) {
      std::cerr << prefix << "error: " << e.what() << "\n";
      return kExitOther;
    }
    return kExitOther;
  };

  try {
    return run();
  } catch (...) {
    return classify(std::current_exception(), "");
  }
}
