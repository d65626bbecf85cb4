#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "rydemit/error.hpp"
#include "rydemit/units.hpp"

namespace rydemit {

// Cell, atom and beam constants.  Everything is stored in the internal unit
// system (um, ns, rad/ns); SI conversion happens once, either in the field
// initializers below or in load_config().
struct PhysicalConfig {
  double cell_thickness = 1.0;  // um, slab extent along the beam axis
  double temperature = 473.15;  // K (200 C)
  double atom_mass_kg = 84.911789738 * units::amu_SI;  // 85Rb
  double lifetime_tau = 26.2;   // ns, e -> g radiative lifetime

  // Van-der-Waals coefficient between two Rydberg atoms, h * 642.1 MHz um^6
  // expressed as angular frequency: 2*pi * 0.6421 rad/ns um^6.
  double c6 = units::ghz(0.6421);

  // Saturation scale for the pair shift.  C6/d^6 diverges as sampled atoms
  // approach each other, and an amplitude-level integrator would chase that
  // frequency with vanishing steps.  Beyond ~40x the strongest drive scale
  // the pair is fully blockaded either way, so the shift is rolled off
  // smoothly toward this ceiling (quartic blend, < 2e-6 relative distortion
  // below cap/20).  Default sits a factor 3 above the bare detunings and
  // caps the stiffness at ~2000 rad/ns.
  double interaction_cap = 2000.0;

  // Transition wavelengths (um).  Defaults are the 85Rb values for the
  // g->i (D1), i->r, e->r and e->g (D2) transitions.
  double lambda1 = 0.794979;
  double lambda2 = 0.475390;
  double lambda3 = 0.480885;
  double lambda_e = 0.780241;

  // Laser detunings, rad/ns.  delta3 = 0 keeps the full three-photon chain
  // resonant for an atom at rest (delta1 + delta2 - delta3 = 0).
  double delta1 = -units::ghz(100.0);
  double delta2 = units::ghz(100.0);
  double delta3 = 0.0;

  // 1/e^2-intensity beam waists (um).
  double waist1 = 0.5;
  double waist2 = 2.0;
  double waist3 = 2.0;

  // Desorption velocity law P(v, theta) = a v^2 exp(-v^2/b^2) cos(theta).
  // liad_a is the published normalization in SI (s^3/m^3); the sampler only
  // needs b since normalization is handled analytically.
  double liad_a_si = 1.1e-7;
  double liad_b = 271.0 * units::m_per_s;  // um/ns
  bool liad_both_walls = true;

  // Transverse sampling window: uniform disk of this radius about the axis.
  // 0 means "use 2 * waist2".
  double sample_disk_radius = 0.0;

  double gamma() const { return 1.0 / lifetime_tau; }

  // Signed axial wave numbers (1/um).  Lasers 2 and 3 run antiparallel to
  // laser 1, so their signed components are negative.
  double k1() const { return units::two_pi / lambda1; }
  double k2() const { return -units::two_pi / lambda2; }
  double k3() const { return -units::two_pi / lambda3; }
  // Four-wave-mixing wave number of the emitted photon's preferred mode.
  double k0() const { return k1() + k2() - k3(); }
  double ke() const { return units::two_pi / lambda_e; }

  // Per-component thermal velocity spread, um/ns.
  double sigma_v() const {
    return std::sqrt(units::kB_SI * temperature / atom_mass_kg) *
           units::m_per_s;
  }

  double disk_radius() const {
    return sample_disk_radius > 0.0 ? sample_disk_radius : 2.0 * waist2;
  }

  // Regularized pair shift for a squared distance d2, rad/ns.
  double interaction_energy(double d2) const {
    double u = c6 / (d2 * d2 * d2);
    double q = u / interaction_cap;
    double q2 = q * q;
    return u / std::sqrt(std::sqrt(1.0 + q2 * q2));
  }

  void validate() const {
    if (cell_thickness <= 0 || temperature <= 0 || atom_mass_kg <= 0 ||
        lifetime_tau <= 0)
      throw ConfigError("physical config: non-positive length/T/mass/tau");
    if (lambda1 <= 0 || lambda2 <= 0 || lambda3 <= 0 || lambda_e <= 0)
      throw ConfigError("physical config: wavelengths must be positive");
    if (waist1 <= 0 || waist2 <= 0 || waist3 <= 0)
      throw ConfigError("physical config: waists must be positive");
    if (liad_b <= 0) throw ConfigError("physical config: liad_b must be positive");
    if (interaction_cap <= 0)
      throw ConfigError("physical config: interaction_cap must be positive");
  }
};

// Rectangular three-pulse sequence.  Laser j is on during
// [start[j], start[j] + duration[j]) with constant amplitude omega[j].
struct PulseSequence {
  double start[3] = {0.0, 0.0, 0.95};     // ns
  double duration[3] = {0.5, 0.5, 0.55};  // ns
  double omega[3] = {units::ghz(8.0), units::ghz(8.0), units::ghz(1.5)};
  double delta[3] = {-units::ghz(100.0), units::ghz(100.0), 0.0};
  bool tied12 = true;  // lasers 1 and 2 switch as one event

  double end(int j) const { return start[j] + duration[j]; }
  // Total pulse duration: the last switch-off.
  double t0() const { return std::max(end(0), std::max(end(1), end(2))); }
  // Shared end of lasers 1-2 (their common duration when tied).
  double dt12() const { return duration[0]; }

  bool on(int j, double t) const { return t >= start[j] && t < end(j); }

  void validate() const {
    for (int j = 0; j < 3; ++j) {
      if (duration[j] <= 0)
        throw ConfigError("pulse " + std::to_string(j + 1) +
                          ": duration must be positive");
      if (start[j] < 0)
        throw ConfigError("pulse " + std::to_string(j + 1) +
                          ": start must be >= 0");
      if (omega[j] < 0)
        throw ConfigError("pulse " + std::to_string(j + 1) +
                          ": amplitude must be >= 0");
    }
    if (tied12 &&
        (start[0] != start[1] || duration[0] != duration[1]))
      throw ConfigError("pulses: tie12 set but lasers 1/2 timings differ");
  }
};

// Scale and orchestration knobs for the pipeline commands.
struct RunSettings {
  int samples = 10;
  int atoms_per_sample = 20;
  int group_size = 5;
  double t_w = 2.0;                  // ns, target phase-matching time
  std::string weighting = "rabi";    // uniform | rabi
  std::string distribution = "boltzmann";  // boltzmann | liad
  std::uint64_t seed = 12345;
  int theta_points = 181;
  double profile_dt = 0.01;          // ns, trajectory sampling for quadrature
  double decay_window = 10.0;        // ns past pulse end
  double tolerance = 1e-8;           // integrator local error per step
  int threads = 1;

  void validate() const {
    if (samples < 1 || atoms_per_sample < 1)
      throw ConfigError("run: samples and atoms_per_sample must be >= 1");
    if (group_size < 1 || samples % group_size != 0)
      throw ConfigError("run: group_size must divide samples");
    if (weighting != "uniform" && weighting != "rabi")
      throw ConfigError("run: weighting must be uniform|rabi");
    if (distribution != "boltzmann" && distribution != "liad")
      throw ConfigError("run: distribution must be boltzmann|liad");
    if (theta_points < 2) throw ConfigError("run: theta_points must be >= 2");
    if (profile_dt <= 0 || decay_window <= 0 || tolerance <= 0)
      throw ConfigError("run: profile_dt/decay_window/tolerance must be > 0");
    if (threads < 1) throw ConfigError("run: threads must be >= 1");
  }
};

struct Config {
  PhysicalConfig physical;
  PulseSequence pulses;
  RunSettings run;

  void validate() const {
    physical.validate();
    pulses.validate();
    run.validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "': bad number '" + v + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: key '" + key + "': bad bool '" + v + "'");
}

}  // namespace detail

// Flat sectioned key/value text ("[section]" headers, '#' or ';' comments).
// Unknown keys are errors: a typo silently falling back to a default is the
// kind of bug that costs a day.
inline Config parse_config(std::istream& in) {
  Config c;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string val = detail::trim(line.substr(eq + 1));
    std::string full = section + "." + key;
    using detail::to_bool;
    using detail::to_double;

    auto& phys = c.physical;
    auto& pul = c.pulses;
    auto& run = c.run;
    if (section == "physical") {
      if (key == "cell_thickness_um") phys.cell_thickness = to_double(full, val);
      else if (key == "temperature_K") phys.temperature = to_double(full, val);
      else if (key == "atom_mass_amu")
        phys.atom_mass_kg = to_double(full, val) * units::amu_SI;
      else if (key == "lifetime_tau_ns") phys.lifetime_tau = to_double(full, val);
      else if (key == "c6_h_mhz_um6")
        phys.c6 = units::ghz(to_double(full, val) * 1e-3);
      else if (key == "interaction_cap_rad_ns")
        phys.interaction_cap = to_double(full, val);
      else if (key == "lambda1_nm") phys.lambda1 = to_double(full, val) * 1e-3;
      else if (key == "lambda2_nm") phys.lambda2 = to_double(full, val) * 1e-3;
      else if (key == "lambda3_nm") phys.lambda3 = to_double(full, val) * 1e-3;
      else if (key == "lambda_e_nm") phys.lambda_e = to_double(full, val) * 1e-3;
      else if (key == "delta1_ghz") phys.delta1 = units::ghz(to_double(full, val));
      else if (key == "delta2_ghz") phys.delta2 = units::ghz(to_double(full, val));
      else if (key == "delta3_ghz") phys.delta3 = units::ghz(to_double(full, val));
      else if (key == "waist1_um") phys.waist1 = to_double(full, val);
      else if (key == "waist2_um") phys.waist2 = to_double(full, val);
      else if (key == "waist3_um") phys.waist3 = to_double(full, val);
      else if (key == "liad_a_si") phys.liad_a_si = to_double(full, val);
      else if (key == "liad_b_m_s")
        phys.liad_b = to_double(full, val) * units::m_per_s;
      else if (key == "liad_both_walls") phys.liad_both_walls = to_bool(full, val);
      else if (key == "sample_disk_radius_um")
        phys.sample_disk_radius = to_double(full, val);
      else throw ConfigError("config: unknown key '" + full + "'");
    } else if (section == "pulses") {
      if (key == "ts1_ns") pul.start[0] = to_double(full, val);
      else if (key == "ts2_ns") pul.start[1] = to_double(full, val);
      else if (key == "ts3_ns") pul.start[2] = to_double(full, val);
      else if (key == "dt1_ns") pul.duration[0] = to_double(full, val);
      else if (key == "dt2_ns") pul.duration[1] = to_double(full, val);
      else if (key == "dt3_ns") pul.duration[2] = to_double(full, val);
      else if (key == "omega1_ghz") pul.omega[0] = units::ghz(to_double(full, val));
      else if (key == "omega2_ghz") pul.omega[1] = units::ghz(to_double(full, val));
      else if (key == "omega3_ghz") pul.omega[2] = units::ghz(to_double(full, val));
      else if (key == "tie12") pul.tied12 = to_bool(full, val);
      else throw ConfigError("config: unknown key '" + full + "'");
    } else if (section == "run") {
      if (key == "samples") run.samples = static_cast<int>(to_double(full, val));
      else if (key == "atoms_per_sample")
        run.atoms_per_sample = static_cast<int>(to_double(full, val));
      else if (key == "group_size")
        run.group_size = static_cast<int>(to_double(full, val));
      else if (key == "t_w_ns") run.t_w = to_double(full, val);
      else if (key == "weighting") run.weighting = val;
      else if (key == "distribution") run.distribution = val;
      else if (key == "seed")
        run.seed = static_cast<std::uint64_t>(to_double(full, val));
      else if (key == "theta_points")
        run.theta_points = static_cast<int>(to_double(full, val));
      else if (key == "profile_dt_ns") run.profile_dt = to_double(full, val);
      else if (key == "decay_window_ns") run.decay_window = to_double(full, val);
      else if (key == "tolerance") run.tolerance = to_double(full, val);
      else if (key == "threads") run.threads = static_cast<int>(to_double(full, val));
      else throw ConfigError("config: unknown key '" + full + "'");
    } else {
      throw ConfigError("config: unknown section '" + section + "'");
    }
  }
  // Mirror tied pulse timings before validation so a file that only sets
  // laser 1 stays consistent.
  if (c.pulses.tied12) {
    c.pulses.start[1] = c.pulses.start[0];
    c.pulses.duration[1] = c.pulses.duration[0];
  }
  // Detunings are authored once in [physical]; the per-pulse copies exist so
  // a PulseSequence is self-describing downstream.
  c.pulses.delta[0] = c.physical.delta1;
  c.pulses.delta[1] = c.physical.delta2;
  c.pulses.delta[2] = c.physical.delta3;
  c.validate();
  return c;
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  return parse_config(in);
}

// Round-trip serialization, used for the manifest snapshot and for writing
// optimized pulses back out in the same format the CLI consumes.
inline std::string dump_config(const Config& c) {
  std::ostringstream o;
  o.precision(17);
  const auto& p = c.physical;
  o << "[physical]\n";
  o << "cell_thickness_um = " << p.cell_thickness << "\n";
  o << "temperature_K = " << p.temperature << "\n";
  o << "atom_mass_amu = " << p.atom_mass_kg / units::amu_SI << "\n";
  o << "lifetime_tau_ns = " << p.lifetime_tau << "\n";
  o << "c6_h_mhz_um6 = " << p.c6 / units::ghz(1e-3) << "\n";
  o << "interaction_cap_rad_ns = " << p.interaction_cap << "\n";
  o << "lambda1_nm = " << p.lambda1 * 1e3 << "\n";
  o << "lambda2_nm = " << p.lambda2 * 1e3 << "\n";
  o << "lambda3_nm = " << p.lambda3 * 1e3 << "\n";
  o << "lambda_e_nm = " << p.lambda_e * 1e3 << "\n";
  o << "delta1_ghz = " << p.delta1 / units::ghz(1.0) << "\n";
  o << "delta2_ghz = " << p.delta2 / units::ghz(1.0) << "\n";
  o << "delta3_ghz = " << p.delta3 / units::ghz(1.0) << "\n";
  o << "waist1_um = " << p.waist1 << "\n";
  o << "waist2_um = " << p.waist2 << "\n";
  o << "waist3_um = " << p.waist3 << "\n";
  o << "liad_a_si = " << p.liad_a_si << "\n";
  o << "liad_b_m_s = " << p.liad_b / units::m_per_s << "\n";
  o << "liad_both_walls = " << (p.liad_both_walls ? "true" : "false") << "\n";
  o << "sample_disk_radius_um = " << p.sample_disk_radius << "\n";
  const auto& q = c.pulses;
  o << "\n[pulses]\n";
  o << "ts1_ns = " << q.start[0] << "\n";
  o << "ts2_ns = " << q.start[1] << "\n";
  o << "ts3_ns = " << q.start[2] << "\n";
  o << "dt1_ns = " << q.duration[0] << "\n";
  o << "dt2_ns = " << q.duration[1] << "\n";
  o << "dt3_ns = " << q.duration[2] << "\n";
  o << "omega1_ghz = " << q.omega[0] / units::ghz(1.0) << "\n";
  o << "omega2_ghz = " << q.omega[1] / units::ghz(1.0) << "\n";
  o << "omega3_ghz = " << q.omega[2] / units::ghz(1.0) << "\n";
  o << "tie12 = " << (q.tied12 ? "true" : "false") << "\n";
  const auto& r = c.run;
  o << "\n[run]\n";
  o << "samples = " << r.samples << "\n";
  o << "atoms_per_sample = " << r.atoms_per_sample << "\n";
  o << "group_size = " << r.group_size << "\n";
  o << "t_w_ns = " << r.t_w << "\n";
  o << "weighting = " << r.weighting << "\n";
  o << "distribution = " << r.distribution << "\n";
  o << "seed = " << r.seed << "\n";
  o << "theta_points = " << r.theta_points << "\n";
  o << "profile_dt_ns = " << r.profile_dt << "\n";
  o << "decay_window_ns = " << r.decay_window << "\n";
  o << "tolerance = " << r.tolerance << "\n";
  o << "threads = " << r.threads << "\n";
  return o.str();
}

}  // namespace rydemit
