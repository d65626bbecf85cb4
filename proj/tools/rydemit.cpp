// Command-line front end: wires the sampling, excitation, decay, and
// optimization stages together and leaves plot-ready CSVs plus a manifest
// behind for every run.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rydemit/optimize.hpp"
#include "rydemit/pipeline.hpp"

namespace fs = std::filesystem;
using namespace rydemit;

namespace {

// Options shared by every subcommand. Anything left at its sentinel keeps
// the value from the config file (or the built-in defaults).
struct RunFlags {
  std::string config_path;
  std::string out = "out";
  std::uint64_t seed = 0;
  int threads = 0;
  int samples = 0;
  int n_atoms = 0;
  int group = 0;
  int theta_points = 0;
  double profile_dt = 0.0;
  double window = 0.0;
  double tolerance = 0.0;
  double t_w = 0.0;
  std::string dist;
  std::string weighting;
};

void add_run_options(CLI::App* sub, RunFlags& f, bool with_scale = true) {
  sub->add_option("--config", f.config_path, "INI config file");
  sub->add_option("--out", f.out, "output directory, created if missing");
  sub->add_option("--seed", f.seed, "master seed");
  sub->add_option("--threads", f.threads, "worker thread cap");
  sub->add_option("--tolerance", f.tolerance, "integrator tolerance");
  sub->add_option("--tw", f.t_w, "target phase-matching time [ns]");
  sub->add_option("--dist", f.dist, "velocity distribution")
      ->check(CLI::IsMember({"boltzmann", "liad"}));
  sub->add_option("--weighting", f.weighting, "target state weighting")
      ->check(CLI::IsMember({"uniform", "rabi"}));
  if (!with_scale) return;
  sub->add_option("--samples", f.samples, "number of independent samples");
  sub->add_option("--n", f.n_atoms, "atoms per sample");
  sub->add_option("--group", f.group, "samples merged per ensemble");
  sub->add_option("--theta-points", f.theta_points,
                  "angular grid resolution");
  sub->add_option("--profile-dt", f.profile_dt,
                  "trajectory sampling step [ns]");
  sub->add_option("--window", f.window, "decay window past pulse end [ns]");
}

bool given(const CLI::App* sub, const std::string& name) {
  const CLI::Option* o = sub->get_option_no_throw(name);
  return o != nullptr && o->count() > 0;
}

Config resolve_config(const CLI::App* sub, const RunFlags& f,
                      bool scale_opts = true) {
  Config cfg =
      f.config_path.empty() ? Config{} : load_config(f.config_path);
  if (given(sub, "--seed")) cfg.run.seed = f.seed;
  if (given(sub, "--threads")) cfg.run.threads = f.threads;
  if (given(sub, "--tolerance")) cfg.run.tolerance = f.tolerance;
  if (given(sub, "--tw")) cfg.run.t_w = f.t_w;
  if (given(sub, "--dist")) cfg.run.distribution = f.dist;
  if (given(sub, "--weighting")) cfg.run.weighting = f.weighting;
  if (scale_opts) {
    if (given(sub, "--samples")) {
      cfg.run.samples = f.samples;
      // A sample count set on the command line wins over a stale grouping.
      if (!given(sub, "--group") && cfg.run.samples > 0 &&
          cfg.run.samples % cfg.run.group_size != 0)
        cfg.run.group_size = 1;
    }
    if (given(sub, "--n")) cfg.run.atoms_per_sample = f.n_atoms;
    if (given(sub, "--group")) cfg.run.group_size = f.group;
    if (given(sub, "--theta-points")) cfg.run.theta_points = f.theta_points;
    if (given(sub, "--profile-dt")) cfg.run.profile_dt = f.profile_dt;
    if (given(sub, "--window")) cfg.run.decay_window = f.window;
  }
  cfg.validate();
  return cfg;
}

std::string make_out_dir(const std::string& out) {
  fs::create_directories(out);
  return out;
}

// --- sample --------------------------------------------------------------

void cmd_sample(const CLI::App* sub, const RunFlags& flags, double n_raw,
                bool write_atoms) {
  long long n = std::llround(n_raw);
  if (n < 1) throw UsageError("sample: --n must be >= 1");
  if (n > 100'000'000) throw UsageError("sample: --n is implausibly large");
  Config cfg = resolve_config(sub, flags, /*scale_opts=*/false);
  std::string out = make_out_dir(flags.out);

  std::uint64_t seed =
      derive_seed(pipeline::stage_seed(cfg.run.seed, pipeline::Stage::sample), 0);
  ensemble::AtomSet atoms = pipeline::draw_atoms(
      cfg.run.distribution, static_cast<int>(n), cfg.physical, seed);

  long long alive = 0;
  for (double tw : atoms.t_wall)
    if (tw >= ensemble::kFilterWindow) ++alive;
  ensemble::AtomSet kept =
      ensemble::filter_by_rabi(atoms, cfg.physical, cfg.pulses);

  io::Manifest manifest = io::make_manifest(cfg, cfg.run.seed);
  manifest["stage_seeds"]["sample"] = seed;

  double survivor_fraction = static_cast<double>(alive) / static_cast<double>(n);
  double analytic = cfg.run.distribution == "liad"
                        ? ensemble::liad_survival(ensemble::kFilterWindow,
                                                  cfg.physical)
                        : std::nan("");
  {
    std::ofstream f = io::open_out(out + "/sample_stats.csv");
    f << "n_drawn,survivor_fraction_2ns,analytic_survival_2ns,"
         "filter_kept_fraction\n";
    f << n << ',' << io::fmt(survivor_fraction) << ',' << io::fmt(analytic)
      << ',' << io::fmt(static_cast<double>(kept.size()) / static_cast<double>(n))
      << '\n';
  }
  io::manifest_add_output(manifest, out + "/sample_stats.csv");
  if (write_atoms) {
    io::write_atoms_csv(out + "/atoms.csv", atoms);
    io::write_atoms_csv(out + "/filtered_atoms.csv", kept);
    io::manifest_add_output(manifest, out + "/atoms.csv");
    io::manifest_add_output(manifest, out + "/filtered_atoms.csv");
  }
  io::write_manifest(out + "/manifest.json", manifest);
  std::cout << "drew " << n << " atoms (" << cfg.run.distribution
            << "), survivor fraction at 2 ns " << survivor_fraction
            << ", drive filter kept " << kept.size() << "\n";
}

// --- excite --------------------------------------------------------------

void write_excite_csvs(const std::string& out,
                       const std::vector<ensemble::AtomSet>& atoms,
                       const std::vector<pipeline::ExciteOutput>& runs,
                       io::Manifest& manifest) {
  int S = static_cast<int>(runs.size());
  for (int s = 0; s < S; ++s)
    io::write_atoms_csv(out + "/atoms.csv", atoms[static_cast<std::size_t>(s)],
                        s, s > 0);
  {
    std::ofstream f = io::open_out(out + "/sectors.csv");
    f << "sample_id,ground,single_e,double_ee,other,norm\n";
    for (int s = 0; s < S; ++s) {
      const auto& e = runs[static_cast<std::size_t>(s)];
      f << s << ',' << io::fmt(e.sectors.ground) << ','
        << io::fmt(e.sectors.single_e) << ',' << io::fmt(e.sectors.double_ee)
        << ',' << io::fmt(e.sectors.other) << ',' << io::fmt(e.norm) << '\n';
    }
  }
  {
    std::ofstream f = io::open_out(out + "/phase_times.csv");
    f << "sample_id,t_phi_pulse_ns,t_phi_fit_ns,fit_ok\n";
    for (int s = 0; s < S; ++s) {
      const auto& e = runs[static_cast<std::size_t>(s)];
      f << s << ',' << io::fmt(e.t_phi_pulse) << ',' << io::fmt(e.t_phi_fit)
        << ',' << (e.t_phi_fit_ok ? 1 : 0) << '\n';
    }
  }
  for (const char* name : {"atoms.csv", "sectors.csv", "phase_times.csv"})
    io::manifest_add_output(manifest, out + "/" + std::string(name));
}

void cmd_excite(const CLI::App* sub, const RunFlags& flags) {
  Config cfg = resolve_config(sub, flags);
  std::string out = make_out_dir(flags.out);
  int S = cfg.run.samples;
  std::uint64_t seed_sample =
      pipeline::stage_seed(cfg.run.seed, pipeline::Stage::sample);

  std::vector<ensemble::AtomSet> atoms(static_cast<std::size_t>(S));
  std::vector<pipeline::ExciteOutput> runs(static_cast<std::size_t>(S));
  pipeline::parallel_for(S, cfg.run.threads, [&](int s) {
    auto su = static_cast<std::size_t>(s);
    atoms[su] = pipeline::draw_survivors(
        cfg, derive_seed(seed_sample, static_cast<std::uint64_t>(s)));
    runs[su] = pipeline::run_excitation(atoms[su], cfg);
  });

  io::Manifest manifest = io::make_manifest(cfg, cfg.run.seed);
  manifest["stage_seeds"]["sample"] = seed_sample;
  write_excite_csvs(out, atoms, runs, manifest);
  for (int s = 0; s < S; ++s) {
    std::string path = out + "/state_" + std::to_string(s) + ".bin";
    io::write_excite_state(path, runs[static_cast<std::size_t>(s)].state);
    io::manifest_add_output(manifest, path);
  }
  io::write_manifest(out + "/manifest.json", manifest);
  std::cout << "excited " << S << " samples of " << cfg.run.atoms_per_sample
            << " atoms into " << out << "\n";
}

// --- decay ---------------------------------------------------------------

void write_decay_csvs(const std::string& out,
                      const std::vector<pipeline::EnsembleReport>& reports,
                      const std::vector<pipeline::PairReport>& pair_reports,
                      io::Manifest& manifest) {
  int G = static_cast<int>(reports.size());
  for (int g = 0; g < G; ++g) {
    const auto& r = reports[static_cast<std::size_t>(g)];
    io::write_profile_csv(out + "/profile_single.csv", r.profile, g, g > 0);
    io::write_rate_csv(out + "/rate_single.csv", r.rate, g, g > 0);
  }
  {
    std::ofstream f = io::open_out(out + "/summary_single.csv");
    f << "ensemble_id,emitted,remaining,lost_to_walls,conservation_defect,"
         "cone_population_30deg\n";
    for (int g = 0; g < G; ++g) {
      const auto& r = reports[static_cast<std::size_t>(g)];
      f << g << ',' << io::fmt(r.emitted) << ',' << io::fmt(r.remaining)
        << ',' << io::fmt(r.lost_to_walls) << ','
        << io::fmt(r.conservation_defect) << ',' << io::fmt(r.cone_pop)
        << '\n';
    }
  }
  int S = static_cast<int>(pair_reports.size());
  for (int s = 0; s < S; ++s) {
    const auto& r = pair_reports[static_cast<std::size_t>(s)];
    io::write_profile_csv(out + "/profile_first_photon.csv", r.profile, s,
                          s > 0);
    io::write_rate_csv(out + "/rate_second_photon.csv", r.second_rate, s,
                       s > 0);
  }
  for (const char* name :
       {"profile_single.csv", "rate_single.csv", "summary_single.csv",
        "profile_first_photon.csv", "rate_second_photon.csv"})
    io::manifest_add_output(manifest, out + "/" + std::string(name));
}

void cmd_decay(const CLI::App* sub, const RunFlags& flags,
               const std::string& in_dir) {
  Config cfg = resolve_config(sub, flags);
  std::string out = make_out_dir(flags.out);

  std::vector<io::ExciteState> states;
  for (int s = 0;; ++s) {
    std::string path = in_dir + "/state_" + std::to_string(s) + ".bin";
    if (!fs::exists(path)) break;
    states.push_back(io::read_excite_state(path));
  }
  if (states.empty())
    throw UsageError("decay: no state_*.bin files under " + in_dir);

  std::vector<decay::SingleSample> singles;
  singles.reserve(states.size());
  for (const auto& st : states)
    singles.push_back({st.atoms, st.alpha_e, st.t0});
  std::vector<decay::SingleSample> grouped =
      decay::group_samples(singles, cfg.run.group_size);

  int G = static_cast<int>(grouped.size());
  int S = static_cast<int>(states.size());
  std::vector<pipeline::EnsembleReport> reports(static_cast<std::size_t>(G));
  pipeline::parallel_for(G, cfg.run.threads, [&](int g) {
    auto gu = static_cast<std::size_t>(g);
    reports[gu] = pipeline::analyze_single(grouped[gu], cfg);
  });
  std::vector<pipeline::PairReport> pair_reports(static_cast<std::size_t>(S));
  pipeline::parallel_for(S, cfg.run.threads, [&](int s) {
    auto su = static_cast<std::size_t>(s);
    pair_reports[su] = pipeline::analyze_double(states[su], cfg);
  });

  io::Manifest manifest = io::make_manifest(cfg, cfg.run.seed);
  write_decay_csvs(out, reports, pair_reports, manifest);
  io::write_manifest(out + "/manifest.json", manifest);
  std::cout << "decayed " << G << " grouped ensembles and " << S
            << " pair channels into " << out << "\n";
}

// --- analyze -------------------------------------------------------------

void cmd_analyze(const CLI::App* sub, const RunFlags& flags,
                 const std::string& profile_path, double cone_deg) {
  Config cfg = resolve_config(sub, flags);
  (void)cfg;
  std::string out = make_out_dir(flags.out);
  double theta_max = cone_deg * units::pi / 180.0;

  std::ifstream f = io::open_in(profile_path);
  std::string line;
  if (!std::getline(f, line))
    throw UsageError("analyze: empty profile file " + profile_path);
  std::map<int, std::pair<std::vector<double>, std::vector<double>>> rows;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    double theta, value;
    int id;
    char c1, c2;
    if (!(ss >> theta >> c1 >> value >> c2 >> id) || c1 != ',' || c2 != ',')
      throw UsageError("analyze: bad row at " + profile_path + ":" +
                       std::to_string(lineno));
    rows[id].first.push_back(theta);
    rows[id].second.push_back(value);
  }

  std::ofstream o = io::open_out(out + "/cone_populations.csv");
  o << "ensemble_id,theta_max_rad,population\n";
  for (const auto& [id, tv] : rows) {
    decay::AngularProfile prof;
    prof.theta = tv.first;
    prof.times = {0.0};
    prof.density = {tv.second};
    prof.cumulative = {tv.second};
    double pop = decay::cone_population(prof, theta_max);
    o << id << ',' << io::fmt(theta_max) << ',' << io::fmt(pop) << '\n';
    std::cout << "ensemble " << id << ": cone population " << pop << "\n";
  }
  io::Manifest manifest = io::make_manifest(cfg, cfg.run.seed);
  io::manifest_add_output(manifest, out + "/cone_populations.csv");
  io::write_manifest(out + "/manifest.json", manifest);
}

// --- optimize ------------------------------------------------------------

void cmd_optimize(const CLI::App* sub, const RunFlags& flags, int max_evals) {
  Config cfg = resolve_config(sub, flags);
  std::string out = make_out_dir(flags.out);

  optimize::OptimizationProblem prob;
  prob.physical = cfg.physical;
  prob.t_w = cfg.run.t_w;
  prob.weighting = cfg.run.weighting;
  prob.tied12 = cfg.pulses.tied12;
  prob.tolerance = cfg.run.tolerance;
  std::uint64_t seed_sample =
      pipeline::stage_seed(cfg.run.seed, pipeline::Stage::optimize);
  for (int s = 0; s < cfg.run.samples; ++s)
    prob.samples.push_back(pipeline::draw_survivors(
        cfg, derive_seed(seed_sample, static_cast<std::uint64_t>(s))));

  optimize::NelderMeadOptions opt;
  opt.max_evals = max_evals;
  optimize::OptimizationResult res =
      optimize::run_optimization(prob, cfg.pulses, opt);

  Config best = cfg;
  best.pulses = res.pulses;
  {
    std::ofstream f = io::open_out(out + "/best_pulses.ini");
    f << dump_config(best);
  }
  {
    std::ofstream f = io::open_out(out + "/trace.csv");
    f << "evals,best_fidelity,worst_fidelity\n";
    for (const auto& rec : res.trace.records)
      f << rec.evals << ',' << io::fmt(-rec.best) << ','
        << io::fmt(-rec.worst) << '\n';
  }
  io::Manifest manifest = io::make_manifest(cfg, cfg.run.seed);
  manifest["stage_seeds"]["optimize"] = seed_sample;
  manifest["terminal_reason"] = res.trace.terminal_reason;
  manifest["best_fidelity"] = res.fidelity;
  io::manifest_add_output(manifest, out + "/best_pulses.ini");
  io::manifest_add_output(manifest, out + "/trace.csv");
  io::write_manifest(out + "/manifest.json", manifest);
  std::cout << "best target fidelity " << res.fidelity << " after "
            << res.trace.evals << " evaluations ("
            << res.trace.terminal_reason << ")\n";
}

// --- pipeline ------------------------------------------------------------

void cmd_pipeline(const CLI::App* sub, const RunFlags& flags,
                  const std::string& manifest_path, bool no_third_delay) {
  Config cfg;
  if (!manifest_path.empty()) {
    io::Manifest m = io::load_manifest(manifest_path);
    if (m.contains("config")) {
      // Exact-value path: the JSON snapshot round-trips every double
      // bit-for-bit, which the unit-converted INI text does not.
      cfg = io::config_from_json(m["config"]);
    } else {
      std::istringstream ini(m["config_ini"].get<std::string>());
      cfg = parse_config(ini);
    }
    cfg.run.seed = m["master_seed"].get<std::uint64_t>();
  } else {
    cfg = resolve_config(sub, flags);
  }
  if (no_third_delay) {
    cfg.pulses.start[2] = cfg.pulses.dt12();
    cfg.validate();
  }
  std::string out = make_out_dir(flags.out);
  pipeline::run_pipeline(cfg, out);
  std::cout << "pipeline finished, results under " << out << "\n";
}

// --- tw-scan -------------------------------------------------------------

void cmd_tw_scan(const CLI::App* sub, const RunFlags& flags, double tw_min,
                 double tw_max, int steps, int seeds, double t_start) {
  if (steps < 2) throw UsageError("tw-scan: --tw-steps must be >= 2");
  if (!(tw_max > tw_min)) throw UsageError("tw-scan: empty scan range");
  Config cfg = resolve_config(sub, flags);
  std::string out = make_out_dir(flags.out);

  std::vector<double> grid(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i)
    grid[static_cast<std::size_t>(i)] =
        tw_min + (tw_max - tw_min) * i / (steps - 1);
  std::vector<std::vector<double>> cone =
      pipeline::scan_cone_populations(cfg, grid, seeds, t_start);

  {
    std::ofstream f = io::open_out(out + "/tw_scan.csv");
    f << "t_w_ns,seed,cone_population_30deg\n";
    for (int i = 0; i < steps; ++i)
      for (int s = 0; s < seeds; ++s)
        f << io::fmt(grid[static_cast<std::size_t>(i)]) << ',' << s << ','
          << io::fmt(cone[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)])
          << '\n';
  }
  {
    std::ofstream f = io::open_out(out + "/tw_scan_mean.csv");
    f << "t_w_ns,mean_cone_population_30deg\n";
    for (int i = 0; i < steps; ++i) {
      double acc = 0.0;
      for (double v : cone[static_cast<std::size_t>(i)]) acc += v;
      f << io::fmt(grid[static_cast<std::size_t>(i)]) << ','
        << io::fmt(acc / seeds) << '\n';
    }
  }
  io::Manifest manifest = io::make_manifest(cfg, cfg.run.seed);
  io::manifest_add_output(manifest, out + "/tw_scan.csv");
  io::manifest_add_output(manifest, out + "/tw_scan_mean.csv");
  io::write_manifest(out + "/manifest.json", manifest);
  std::cout << "scanned " << steps << " preparation times x " << seeds
            << " seeds into " << out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"timed collective emission simulator"};
  app.require_subcommand(1);

  RunFlags f_sample, f_excite, f_decay, f_analyze, f_opt, f_pipe, f_scan;

  auto* sample = app.add_subcommand("sample", "draw an atom ensemble");
  add_run_options(sample, f_sample, /*with_scale=*/false);
  double sample_n = 0.0;
  bool sample_atoms_csv = true;
  sample->add_option("--n", sample_n, "atoms to draw (accepts 1e6 notation)")
      ->required();
  sample->add_flag("!--no-atoms", sample_atoms_csv,
                   "skip the per-atom CSVs, keep only statistics");

  auto* excite = app.add_subcommand("excite", "sample and drive ensembles");
  add_run_options(excite, f_excite);

  auto* decay_cmd =
      app.add_subcommand("decay", "decay previously excited states");
  add_run_options(decay_cmd, f_decay);
  std::string decay_in;
  decay_cmd->add_option("--in", decay_in, "directory with state_*.bin files")
      ->required();

  auto* analyze =
      app.add_subcommand("analyze", "post-process an angular profile CSV");
  add_run_options(analyze, f_analyze);
  std::string analyze_profile;
  double analyze_cone_deg = 30.0;
  analyze->add_option("--profile", analyze_profile, "profile CSV to read")
      ->required();
  analyze->add_option("--cone-deg", analyze_cone_deg,
                      "cone half-angle [degrees]");

  auto* optimize_cmd =
      app.add_subcommand("optimize", "tune pulse parameters");
  add_run_options(optimize_cmd, f_opt);
  int opt_max_evals = 400;
  optimize_cmd->add_option("--max-evals", opt_max_evals,
                           "objective evaluation budget");

  auto* pipe = app.add_subcommand("pipeline", "full sample-to-photon chain");
  add_run_options(pipe, f_pipe);
  std::string pipe_manifest;
  bool pipe_no_delay = false;
  pipe->add_option("--manifest", pipe_manifest,
                   "rerun the configuration recorded in this manifest");
  pipe->add_flag("--no-third-delay", pipe_no_delay,
                 "start the third laser right as the first two end");

  auto* scan = app.add_subcommand(
      "tw-scan", "cone population of ideal timed states vs preparation time");
  add_run_options(scan, f_scan);
  double tw_min = 1.25, tw_max = 2.75, scan_t_start = 1.5;
  int tw_steps = 11, scan_seeds = 5;
  scan->add_option("--tw-min", tw_min, "scan start [ns]");
  scan->add_option("--tw-max", tw_max, "scan end [ns]");
  scan->add_option("--tw-steps", tw_steps, "grid points");
  scan->add_option("--scan-seeds", scan_seeds, "ensembles per grid point");
  scan->add_option("--t-start", scan_t_start, "decay start time [ns]");

  sample->callback(
      [&] { cmd_sample(sample, f_sample, sample_n, sample_atoms_csv); });
  excite->callback([&] { cmd_excite(excite, f_excite); });
  decay_cmd->callback([&] { cmd_decay(decay_cmd, f_decay, decay_in); });
  analyze->callback([&] {
    cmd_analyze(analyze, f_analyze, analyze_profile, analyze_cone_deg);
  });
  optimize_cmd->callback(
      [&] { cmd_optimize(optimize_cmd, f_opt, opt_max_evals); });
  pipe->callback(
      [&] { cmd_pipeline(pipe, f_pipe, pipe_manifest, pipe_no_delay); });
  scan->callback([&] {
    cmd_tw_scan(scan, f_scan, tw_min, tw_max, tw_steps, scan_seeds,
                scan_t_start);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
