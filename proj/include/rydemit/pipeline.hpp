#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "rydemit/config.hpp"
#include "rydemit/decay.hpp"
#include "rydemit/ensemble.hpp"
#include "rydemit/error.hpp"
#include "rydemit/excitation.hpp"
#include "rydemit/io.hpp"
#include "rydemit/rng.hpp"

// Stage orchestration shared by the command-line tool and the test suites:
// deterministic seed splitting, survivor sampling, one-shot excitation runs,
// decay analysis per ensemble, and the full sample -> excite -> group ->
// decay -> analyze chain with manifest bookkeeping.

namespace rydemit::pipeline {

constexpr double kForwardCone = units::pi / 6.0;  // 30 degree reporting cone

// Stable stage indices for counter-based seed splitting. Appending is fine,
// reordering would silently change every derived stream.
enum class Stage : std::uint64_t {
  sample = 1,
  excite = 2,
  decay = 3,
  optimize = 4,
  scan = 5,
};

inline std::uint64_t stage_seed(std::uint64_t master, Stage s) {
  return derive_seed(master, static_cast<std::uint64_t>(s));
}

// Index-slotted parallel loop. Each work item must be self-contained; the
// caller keeps results in per-index slots so the schedule cannot leak into
// the output. Exceptions are replayed in index order.
inline void parallel_for(int count, int threads,
                         const std::function<void(int)>& fn) {
  if (count <= 0) return;
  if (threads < 1) throw UsageError("parallel_for: threads must be >= 1");
  if (threads == 1 || count == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errs(static_cast<std::size_t>(count));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        errs[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  int n_threads = std::min(threads, count);
  pool.reserve(static_cast<std::size_t>(n_threads));
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

// --- sampling stage ------------------------------------------------------

struct SampleStats {
  long long drawn = 0;     // raw draws before the drive filter
  long long kept = 0;      // survivors of the drive filter
  long long attempts = 0;  // batches needed to reach the target count
};

inline ensemble::AtomSet draw_atoms(const std::string& distribution, int n,
                                    const PhysicalConfig& cfg,
                                    std::uint64_t seed) {
  if (distribution == "boltzmann") return ensemble::sample_boltzmann(n, cfg, seed);
  if (distribution == "liad") return ensemble::sample_liad(n, cfg, seed);
  throw ConfigError("unknown distribution: " + distribution);
}

// Draw until `atoms_per_sample` atoms pass the drive filter, then keep the
// first that many. Batch seeds come off a counter so the result depends only
// on (seed, config), not on how many batches happened to be needed.
inline ensemble::AtomSet draw_survivors(const Config& cfg, std::uint64_t seed,
                                        SampleStats* stats = nullptr) {
  int target = cfg.run.atoms_per_sample;
  ensemble::AtomSet pool;
  SampleStats st;
  for (std::uint64_t attempt = 0;; ++attempt) {
    if (attempt >= 1000)
      throw Error("draw_survivors: drive filter rejects nearly everything");
    int batch = std::max(target, 32);
    ensemble::AtomSet raw = draw_atoms(cfg.run.distribution, batch,
                                       cfg.physical,
                                       derive_seed(seed, attempt));
    ensemble::AtomSet kept =
        ensemble::filter_by_rabi(raw, cfg.physical, cfg.pulses);
    st.drawn += raw.size();
    st.kept += kept.size();
    st.attempts = static_cast<long long>(attempt) + 1;
    pool.append(kept);
    if (pool.size() >= target) break;
  }
  if (stats) *stats = st;
  std::vector<int> idx(static_cast<std::size_t>(target));
  for (int i = 0; i < target; ++i) idx[static_cast<std::size_t>(i)] = i;
  ensemble::AtomSet out = pool.select(idx);
  out.rng_seed = seed;
  return out;
}

// --- excitation stage ----------------------------------------------------

struct ExciteOutput {
  io::ExciteState state;
  excite::SectorPopulations sectors;
  double norm = 0.0;          // total norm after propagation
  double t_phi_pulse = 0.0;   // from the pulse timings
  double t_phi_fit = 0.0;     // from the state's velocity-phase slope
  bool t_phi_fit_ok = false;  // fit can fail for degenerate ensembles
};

inline ExciteOutput run_excitation(const ensemble::AtomSet& atoms,
                                   const Config& cfg) {
  double t0 = cfg.pulses.t0();
  hilbert::TruncatedBasis basis(atoms.size());
  ensemble::ChannelFits fits =
      ensemble::polyfit_channels(atoms, cfg.physical, 0.0, t0);
  excite::Hamiltonian H = excite::assemble_hamiltonian(
      atoms, cfg.physical, cfg.pulses, basis, fits);
  excite::StateVector psi = excite::propagate(
      H, excite::ground_state(basis), 0.0, t0, cfg.run.tolerance);
  psi = excite::to_lab_frame(psi, H);

  ExciteOutput out;
  out.state.atoms = atoms;
  out.state.alpha_e = excite::e_amplitudes(psi);
  out.state.alpha_ee = excite::ee_amplitudes(psi);
  out.state.t0 = t0;
  out.sectors = excite::sector_populations(psi);
  out.norm = psi.norm2();
  out.t_phi_pulse = excite::phase_time(cfg.pulses, cfg.physical);
  try {
    out.t_phi_fit = excite::phase_time_from_state(psi, atoms, cfg.physical);
    out.t_phi_fit_ok = true;
  } catch (const FitError&) {
    out.t_phi_fit = 0.0;
    out.t_phi_fit_ok = false;
  }
  return out;
}

// --- decay stage ---------------------------------------------------------

struct EnsembleReport {
  decay::AngularProfile profile;
  decay::RateSeries rate;
  double cone_pop = 0.0;       // emitted into theta <= 30 degrees
  double emitted = 0.0;        // integral of the final profile
  double remaining = 0.0;      // population still excited at the end
  double lost_to_walls = 0.0;  // frozen amplitude magnitude
  double conservation_defect = 0.0;
};

inline EnsembleReport analyze_single(const decay::SingleSample& s,
                                     const Config& cfg) {
  decay::SingleTrajectory traj = decay::decay_single(
      s.alpha0, s.atoms, cfg.physical, s.t0, s.t0 + cfg.run.decay_window,
      cfg.run.tolerance, cfg.run.profile_dt);
  EnsembleReport r;
  r.profile = decay::angular_density(traj, cfg.physical, cfg.run.theta_points);
  r.rate = decay::emission_rate(traj, cfg.physical);
  r.cone_pop = decay::cone_population(r.profile, kForwardCone);
  r.emitted = r.profile.final_integral();
  int last = traj.n_rows() - 1;
  r.remaining = traj.active_population(last);
  r.lost_to_walls = traj.lost_to_walls(last);
  r.conservation_defect =
      std::abs(r.emitted + traj.population(last) - traj.population(0));
  return r;
}

struct PairReport {
  decay::AngularProfile profile;  // first-photon angular density
  decay::RateSeries second_rate;
  double emitted = 0.0;
};

inline PairReport analyze_double(const io::ExciteState& s, const Config& cfg) {
  decay::DoubleTrajectory traj = decay::decay_double(
      s.alpha_ee, s.atoms, cfg.physical, s.t0, s.t0 + cfg.run.decay_window,
      cfg.run.tolerance, cfg.run.profile_dt);
  PairReport r;
  r.profile =
      decay::first_photon_density(traj, cfg.physical, cfg.run.theta_points);
  r.second_rate = decay::second_photon_rate(traj, cfg.physical);
  r.emitted = r.profile.final_integral();
  return r;
}

// --- full chain ----------------------------------------------------------

namespace detail {

class StageTimer {
 public:
  explicit StageTimer(io::Manifest& m) : m_(m) {}
  void start() { t0_ = std::chrono::steady_clock::now(); }
  void stop(const std::string& stage) {
    std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0_;
    m_["stage_seconds"][stage] = dt.count();
  }

 private:
  io::Manifest& m_;
  std::chrono::steady_clock::time_point t0_;
};

}  // namespace detail

// Runs the desk pipeline into `out_dir` (which must already exist) and
// returns the manifest that was written alongside the CSVs. Rerunning with
// the config and master seed recorded in a manifest reproduces every CSV
// byte for byte.
inline io::Manifest run_pipeline(const Config& cfg, const std::string& out_dir) {
  cfg.validate();
  std::uint64_t master = cfg.run.seed;
  io::Manifest manifest = io::make_manifest(cfg, master);
  detail::StageTimer timer(manifest);

  std::uint64_t seed_sample = stage_seed(master, Stage::sample);
  manifest["stage_seeds"]["sample"] = seed_sample;
  manifest["stage_seeds"]["excite"] = stage_seed(master, Stage::excite);
  manifest["stage_seeds"]["decay"] = stage_seed(master, Stage::decay);

  int S = cfg.run.samples;

  // Sample and excite, one independent work item per sample.
  timer.start();
  std::vector<ensemble::AtomSet> atoms(static_cast<std::size_t>(S));
  std::vector<ExciteOutput> excite_out(static_cast<std::size_t>(S));
  parallel_for(S, cfg.run.threads, [&](int s) {
    auto su = static_cast<std::size_t>(s);
    atoms[su] = draw_survivors(
        cfg, derive_seed(seed_sample, static_cast<std::uint64_t>(s)));
    excite_out[su] = run_excitation(atoms[su], cfg);
  });
  timer.stop("sample_excite");

  std::string atoms_csv = out_dir + "/atoms.csv";
  for (int s = 0; s < S; ++s)
    io::write_atoms_csv(atoms_csv, atoms[static_cast<std::size_t>(s)], s,
                        /*append=*/s > 0);

  {
    std::ofstream f = io::open_out(out_dir + "/sectors.csv");
    f << "sample_id,ground,single_e,double_ee,other,norm\n";
    for (int s = 0; s < S; ++s) {
      const ExciteOutput& e = excite_out[static_cast<std::size_t>(s)];
      f << s << ',' << io::fmt(e.sectors.ground) << ','
        << io::fmt(e.sectors.single_e) << ',' << io::fmt(e.sectors.double_ee)
        << ',' << io::fmt(e.sectors.other) << ',' << io::fmt(e.norm) << '\n';
    }
  }
  {
    std::ofstream f = io::open_out(out_dir + "/phase_times.csv");
    f << "sample_id,t_phi_pulse_ns,t_phi_fit_ns,fit_ok\n";
    for (int s = 0; s < S; ++s) {
      const ExciteOutput& e = excite_out[static_cast<std::size_t>(s)];
      f << s << ',' << io::fmt(e.t_phi_pulse) << ',' << io::fmt(e.t_phi_fit)
        << ',' << (e.t_phi_fit_ok ? 1 : 0) << '\n';
    }
  }

  // Group the single-excitation channels and decay each merged ensemble.
  timer.start();
  std::vector<decay::SingleSample> singles;
  singles.reserve(static_cast<std::size_t>(S));
  for (const ExciteOutput& e : excite_out)
    singles.push_back({e.state.atoms, e.state.alpha_e, e.state.t0});
  std::vector<decay::SingleSample> grouped =
      decay::group_samples(singles, cfg.run.group_size);
  int G = static_cast<int>(grouped.size());

  std::vector<EnsembleReport> reports(static_cast<std::size_t>(G));
  parallel_for(G, cfg.run.threads, [&](int g) {
    auto gu = static_cast<std::size_t>(g);
    reports[gu] = analyze_single(grouped[gu], cfg);
  });

  // Pair channels stay per sample; the grouping step never merges them.
  std::vector<PairReport> pair_reports(static_cast<std::size_t>(S));
  parallel_for(S, cfg.run.threads, [&](int s) {
    auto su = static_cast<std::size_t>(s);
    pair_reports[su] = analyze_double(excite_out[su].state, cfg);
  });
  timer.stop("decay");

  for (int g = 0; g < G; ++g) {
    const EnsembleReport& r = reports[static_cast<std::size_t>(g)];
    io::write_profile_csv(out_dir + "/profile_single.csv", r.profile, g,
                          /*append=*/g > 0);
    io::write_rate_csv(out_dir + "/rate_single.csv", r.rate, g,
                       /*append=*/g > 0);
  }
  {
    std::ofstream f = io::open_out(out_dir + "/summary_single.csv");
    f << "ensemble_id,emitted,remaining,lost_to_walls,conservation_defect,"
         "cone_population_30deg\n";
    for (int g = 0; g < G; ++g) {
      const EnsembleReport& r = reports[static_cast<std::size_t>(g)];
      f << g << ',' << io::fmt(r.emitted) << ',' << io::fmt(r.remaining)
        << ',' << io::fmt(r.lost_to_walls) << ','
        << io::fmt(r.conservation_defect) << ',' << io::fmt(r.cone_pop)
        << '\n';
    }
  }
  for (int s = 0; s < S; ++s) {
    const PairReport& r = pair_reports[static_cast<std::size_t>(s)];
    io::write_profile_csv(out_dir + "/profile_first_photon.csv", r.profile, s,
                          /*append=*/s > 0);
    io::write_rate_csv(out_dir + "/rate_second_photon.csv", r.second_rate, s,
                       /*append=*/s > 0);
  }

  for (const char* name :
       {"atoms.csv", "sectors.csv", "phase_times.csv", "profile_single.csv",
        "rate_single.csv", "summary_single.csv", "profile_first_photon.csv",
        "rate_second_photon.csv"})
    io::manifest_add_output(manifest, out_dir + "/" + std::string(name));
  io::write_manifest(out_dir + "/manifest.json", manifest);
  return manifest;
}

// --- ideal-state scans ---------------------------------------------------

// Cone population of an ideal timed collective state decayed from t_start,
// for each (t_w, seed) pair. Atoms pass the same survivor filter as the
// excitation stage: only wall-survivors inside the drive beam are ever
// simulated, and padding the set with atoms the lasers cannot reach would
// just dilute the collective enhancement.
inline std::vector<std::vector<double>> scan_cone_populations(
    const Config& cfg, const std::vector<double>& tw_grid, int n_seeds,
    double t_start) {
  if (tw_grid.empty()) throw UsageError("scan_cone_populations: empty grid");
  if (n_seeds < 1) throw UsageError("scan_cone_populations: need >= 1 seed");
  std::uint64_t seed0 = stage_seed(cfg.run.seed, Stage::scan);
  int W = static_cast<int>(tw_grid.size());
  std::vector<std::vector<double>> cone(
      static_cast<std::size_t>(W),
      std::vector<double>(static_cast<std::size_t>(n_seeds)));

  int total = W * n_seeds;
  parallel_for(total, cfg.run.threads, [&](int item) {
    int iw = item / n_seeds;
    int is = item % n_seeds;
    ensemble::AtomSet atoms = draw_survivors(
        cfg, derive_seed(seed0, static_cast<std::uint64_t>(is)));
    cvec alpha0 = decay::ideal_w_amplitudes(
        atoms, cfg.physical, tw_grid[static_cast<std::size_t>(iw)]);
    decay::SingleTrajectory traj = decay::decay_single(
        alpha0, atoms, cfg.physical, t_start, t_start + cfg.run.decay_window,
        cfg.run.tolerance, cfg.run.profile_dt);
    // Only the emission inside the cone matters here, and the theta columns
    // are independent, so a grid restricted to [0, 30 deg] is exact and cuts
    // the kernel cost by a factor 6.
    decay::AngularProfile prof = decay::angular_density(
        traj, cfg.physical, 31, kForwardCone);
    cone[static_cast<std::size_t>(iw)][static_cast<std::size_t>(is)] =
        decay::cone_population(prof, kForwardCone);
  });
  return cone;
}

// Peak total emission rate (units of the single-atom rate) of an ideal timed
// collective state over `ensemble_size` atoms, built by merging samples of
// `atoms_per_sample` so the construction matches the grouping step. Samples
// are drawn through the same survivor filter as everywhere else.
inline double peak_rate_ideal(const Config& cfg, int ensemble_size,
                              double t_w, double t_start,
                              std::uint64_t seed) {
  if (ensemble_size % cfg.run.atoms_per_sample != 0)
    throw UsageError("peak_rate_ideal: ensemble size must be a multiple of "
                     "atoms_per_sample");
  int g = ensemble_size / cfg.run.atoms_per_sample;
  std::vector<decay::SingleSample> parts;
  parts.reserve(static_cast<std::size_t>(g));
  for (int i = 0; i < g; ++i) {
    ensemble::AtomSet atoms = draw_survivors(
        cfg, derive_seed(seed, static_cast<std::uint64_t>(i)));
    parts.push_back(
        {atoms, decay::ideal_w_amplitudes(atoms, cfg.physical, t_w), t_start});
  }
  std::vector<decay::SingleSample> merged = decay::group_samples(parts, g);
  decay::SingleTrajectory traj = decay::decay_single(
      merged[0].alpha0, merged[0].atoms, cfg.physical, t_start,
      t_start + cfg.run.decay_window, cfg.run.tolerance, cfg.run.profile_dt);
  decay::RateSeries rate = decay::emission_rate(traj, cfg.physical);
  double peak = 0.0;
  for (double v : rate.values) peak = std::max(peak, v);
  return peak;
}

}  // namespace rydemit::pipeline
