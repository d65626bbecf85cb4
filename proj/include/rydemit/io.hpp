#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rydemit/config.hpp"
#include "rydemit/decay.hpp"
#include "rydemit/ensemble.hpp"
#include "rydemit/error.hpp"

// Result files: CSV for anything plot-shaped (17 significant digits, so a
// rerun is comparable byte for byte), a small binary container for state
// hand-off between pipeline stages, FNV-1a checksums, and the run manifest.

namespace rydemit::io {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);  // binary: no CRLF surprises
  if (!f) throw Error("cannot open for writing: " + path);
  return f;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open for reading: " + path);
  return f;
}

// --- checksums -----------------------------------------------------------

inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string checksum_file(const std::string& path) {
  std::ifstream f = open_in(path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (f.read(buf, sizeof buf) || f.gcount() > 0)
    h = fnv1a64(buf, static_cast<std::size_t>(f.gcount()), h);
  char out[20];
  std::snprintf(out, sizeof out, "%016llx",
                static_cast<unsigned long long>(h));
  return out;
}

// --- CSV writers ---------------------------------------------------------

inline void write_atoms_csv(const std::string& path,
                            const ensemble::AtomSet& atoms,
                            int sample_id = 0, bool append = false) {
  std::ofstream f;
  if (append) {
    f.open(path, std::ios::binary | std::ios::app);
    if (!f) throw Error("cannot open for appending: " + path);
  } else {
    f = open_out(path);
    f << "sample_id,atom,x_um,y_um,z_um,vx_um_per_ns,vy_um_per_ns,"
         "vz_um_per_ns,t_wall_ns\n";
  }
  for (int n = 0; n < atoms.size(); ++n)
    f << sample_id << ',' << n << ',' << fmt(atoms.x[n]) << ','
      << fmt(atoms.y[n]) << ',' << fmt(atoms.z[n]) << ','
      << fmt(atoms.vx[n]) << ',' << fmt(atoms.vy[n]) << ','
      << fmt(atoms.vz[n]) << ',' << fmt(atoms.t_wall[n]) << '\n';
}

// Final cumulative angular profile, one row per grid point.
inline void write_profile_csv(const std::string& path,
                              const decay::AngularProfile& prof,
                              int ensemble_id, bool append = false) {
  std::ofstream f;
  if (append) {
    f.open(path, std::ios::binary | std::ios::app);
    if (!f) throw Error("cannot open for appending: " + path);
  } else {
    f = open_out(path);
    f << "theta_rad,emitted_density_per_rad,ensemble_id\n";
  }
  const auto& c = prof.cumulative.back();
  for (std::size_t i = 0; i < prof.theta.size(); ++i)
    f << fmt(prof.theta[i]) << ',' << fmt(c[i]) << ',' << ensemble_id
      << '\n';
}

inline void write_rate_csv(const std::string& path,
                           const decay::RateSeries& rs, int ensemble_id,
                           bool append = false) {
  std::ofstream f;
  if (append) {
    f.open(path, std::ios::binary | std::ios::app);
    if (!f) throw Error("cannot open for appending: " + path);
  } else {
    f = open_out(path);
    f << "t_ns,rate_per_gamma,ensemble_id\n";
  }
  for (std::size_t i = 0; i < rs.times.size(); ++i)
    f << fmt(rs.times[i]) << ',' << fmt(rs.values[i]) << ',' << ensemble_id
      << '\n';
}

// --- binary stage hand-off ----------------------------------------------

namespace detail {

inline void put_u64(std::ofstream& f, std::uint64_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline std::uint64_t get_u64(std::ifstream& f) {
  std::uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
inline void put_doubles(std::ofstream& f, const std::vector<double>& v) {
  put_u64(f, v.size());
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
}
inline std::vector<double> get_doubles(std::ifstream& f) {
  std::vector<double> v(get_u64(f));
  f.read(reinterpret_cast<char*>(v.data()),
         static_cast<std::streamsize>(v.size() * sizeof(double)));
  return v;
}
inline void put_cvec(std::ofstream& f, const cvec& v) {
  put_u64(f, v.size());
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(v[0])));
}
inline cvec get_cvec(std::ifstream& f) {
  cvec v(get_u64(f));
  f.read(reinterpret_cast<char*>(v.data()),
         static_cast<std::streamsize>(v.size() * sizeof(v[0])));
  return v;
}
inline void put_string(std::ofstream& f, const std::string& s) {
  put_u64(f, s.size());
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_string(std::ifstream& f) {
  std::string s(get_u64(f), '\0');
  f.read(s.data(), static_cast<std::streamsize>(s.size()));
  return s;
}

}  // namespace detail

inline void write_atoms_binary(const std::string& path,
                               const ensemble::AtomSet& atoms) {
  std::ofstream f = open_out(path);
  f.write("RYAT", 4);
  detail::put_u64(f, 1);  // format version
  detail::put_string(f, atoms.distribution_tag);
  detail::put_u64(f, atoms.rng_seed);
  detail::put_doubles(f, atoms.x);
  detail::put_doubles(f, atoms.y);
  detail::put_doubles(f, atoms.z);
  detail::put_doubles(f, atoms.vx);
  detail::put_doubles(f, atoms.vy);
  detail::put_doubles(f, atoms.vz);
  detail::put_doubles(f, atoms.t_wall);
  if (!f) throw Error("write failed: " + path);
}

inline ensemble::AtomSet read_atoms_binary(const std::string& path) {
  std::ifstream f = open_in(path);
  char magic[4];
  f.read(magic, 4);
  if (std::memcmp(magic, "RYAT", 4) != 0)
    throw Error("not an atom snapshot: " + path);
  if (detail::get_u64(f) != 1)
    throw Error("unsupported atom snapshot version: " + path);
  ensemble::AtomSet a;
  a.distribution_tag = detail::get_string(f);
  a.rng_seed = detail::get_u64(f);
  a.x = detail::get_doubles(f);
  a.y = detail::get_doubles(f);
  a.z = detail::get_doubles(f);
  a.vx = detail::get_doubles(f);
  a.vy = detail::get_doubles(f);
  a.vz = detail::get_doubles(f);
  a.t_wall = detail::get_doubles(f);
  if (!f) throw Error("truncated atom snapshot: " + path);
  return a;
}

// Everything the decay stage needs from one excitation run.
struct ExciteState {
  ensemble::AtomSet atoms;
  cvec alpha_e;   // per atom, lab frame
  cvec alpha_ee;  // per pair n<m, lab frame
  double t0 = 0.0;
};

inline void write_excite_state(const std::string& path,
                               const ExciteState& s) {
  std::ofstream f = open_out(path);
  f.write("RYST", 4);
  detail::put_u64(f, 1);
  detail::put_string(f, s.atoms.distribution_tag);
  detail::put_u64(f, s.atoms.rng_seed);
  detail::put_doubles(f, s.atoms.x);
  detail::put_doubles(f, s.atoms.y);
  detail::put_doubles(f, s.atoms.z);
  detail::put_doubles(f, s.atoms.vx);
  detail::put_doubles(f, s.atoms.vy);
  detail::put_doubles(f, s.atoms.vz);
  detail::put_doubles(f, s.atoms.t_wall);
  detail::put_cvec(f, s.alpha_e);
  detail::put_cvec(f, s.alpha_ee);
  detail::put_doubles(f, {s.t0});
  if (!f) throw Error("write failed: " + path);
}

inline ExciteState read_excite_state(const std::string& path) {
  std::ifstream f = open_in(path);
  char magic[4];
  f.read(magic, 4);
  if (std::memcmp(magic, "RYST", 4) != 0)
    throw Error("not an excitation state file: " + path);
  if (detail::get_u64(f) != 1)
    throw Error("unsupported excitation state version: " + path);
  ExciteState s;
  s.atoms.distribution_tag = detail::get_string(f);
  s.atoms.rng_seed = detail::get_u64(f);
  s.atoms.x = detail::get_doubles(f);
  s.atoms.y = detail::get_doubles(f);
  s.atoms.z = detail::get_doubles(f);
  s.atoms.vx = detail::get_doubles(f);
  s.atoms.vy = detail::get_doubles(f);
  s.atoms.vz = detail::get_doubles(f);
  s.atoms.t_wall = detail::get_doubles(f);
  s.alpha_e = detail::get_cvec(f);
  s.alpha_ee = detail::get_cvec(f);
  s.t0 = detail::get_doubles(f).at(0);
  if (!f) throw Error("truncated excitation state: " + path);
  return s;
}

// --- manifest ------------------------------------------------------------

using Manifest = nlohmann::json;

// Exact snapshot of the resolved configuration in internal units. The INI
// dump stays alongside for human eyes, but its values go through decimal
// unit conversions that cost an ulp here and there; a rerun that must be
// bit-identical reads this block instead.
inline Manifest config_to_json(const Config& c) {
  const auto& p = c.physical;
  const auto& q = c.pulses;
  const auto& r = c.run;
  return Manifest{
      {"physical",
       {{"cell_thickness", p.cell_thickness},
        {"temperature", p.temperature},
        {"atom_mass_kg", p.atom_mass_kg},
        {"lifetime_tau", p.lifetime_tau},
        {"c6", p.c6},
        {"interaction_cap", p.interaction_cap},
        {"lambda1", p.lambda1},
        {"lambda2", p.lambda2},
        {"lambda3", p.lambda3},
        {"lambda_e", p.lambda_e},
        {"delta1", p.delta1},
        {"delta2", p.delta2},
        {"delta3", p.delta3},
        {"waist1", p.waist1},
        {"waist2", p.waist2},
        {"waist3", p.waist3},
        {"liad_a_si", p.liad_a_si},
        {"liad_b", p.liad_b},
        {"liad_both_walls", p.liad_both_walls},
        {"sample_disk_radius", p.sample_disk_radius}}},
      {"pulses",
       {{"start", {q.start[0], q.start[1], q.start[2]}},
        {"duration", {q.duration[0], q.duration[1], q.duration[2]}},
        {"omega", {q.omega[0], q.omega[1], q.omega[2]}},
        {"delta", {q.delta[0], q.delta[1], q.delta[2]}},
        {"tied12", q.tied12}}},
      {"run",
       {{"samples", r.samples},
        {"atoms_per_sample", r.atoms_per_sample},
        {"group_size", r.group_size},
        {"t_w", r.t_w},
        {"weighting", r.weighting},
        {"distribution", r.distribution},
        {"seed", r.seed},
        {"theta_points", r.theta_points},
        {"profile_dt", r.profile_dt},
        {"decay_window", r.decay_window},
        {"tolerance", r.tolerance},
        {"threads", r.threads}}}};
}

inline Config config_from_json(const Manifest& j) {
  Config c;
  auto& p = c.physical;
  auto& q = c.pulses;
  auto& r = c.run;
  const Manifest& jp = j.at("physical");
  p.cell_thickness = jp.at("cell_thickness").get<double>();
  p.temperature = jp.at("temperature").get<double>();
  p.atom_mass_kg = jp.at("atom_mass_kg").get<double>();
  p.lifetime_tau = jp.at("lifetime_tau").get<double>();
  p.c6 = jp.at("c6").get<double>();
  p.interaction_cap = jp.at("interaction_cap").get<double>();
  p.lambda1 = jp.at("lambda1").get<double>();
  p.lambda2 = jp.at("lambda2").get<double>();
  p.lambda3 = jp.at("lambda3").get<double>();
  p.lambda_e = jp.at("lambda_e").get<double>();
  p.delta1 = jp.at("delta1").get<double>();
  p.delta2 = jp.at("delta2").get<double>();
  p.delta3 = jp.at("delta3").get<double>();
  p.waist1 = jp.at("waist1").get<double>();
  p.waist2 = jp.at("waist2").get<double>();
  p.waist3 = jp.at("waist3").get<double>();
  p.liad_a_si = jp.at("liad_a_si").get<double>();
  p.liad_b = jp.at("liad_b").get<double>();
  p.liad_both_walls = jp.at("liad_both_walls").get<bool>();
  p.sample_disk_radius = jp.at("sample_disk_radius").get<double>();
  const Manifest& jq = j.at("pulses");
  for (int i = 0; i < 3; ++i) {
    q.start[i] = jq.at("start").at(i).get<double>();
    q.duration[i] = jq.at("duration").at(i).get<double>();
    q.omega[i] = jq.at("omega").at(i).get<double>();
    q.delta[i] = jq.at("delta").at(i).get<double>();
  }
  q.tied12 = jq.at("tied12").get<bool>();
  const Manifest& jr = j.at("run");
  r.samples = jr.at("samples").get<int>();
  r.atoms_per_sample = jr.at("atoms_per_sample").get<int>();
  r.group_size = jr.at("group_size").get<int>();
  r.t_w = jr.at("t_w").get<double>();
  r.weighting = jr.at("weighting").get<std::string>();
  r.distribution = jr.at("distribution").get<std::string>();
  r.seed = jr.at("seed").get<std::uint64_t>();
  r.theta_points = jr.at("theta_points").get<int>();
  r.profile_dt = jr.at("profile_dt").get<double>();
  r.decay_window = jr.at("decay_window").get<double>();
  r.tolerance = jr.at("tolerance").get<double>();
  r.threads = jr.at("threads").get<int>();
  c.validate();
  return c;
}

inline Manifest make_manifest(const Config& cfg, std::uint64_t master_seed) {
  Manifest m;
  m["format_version"] = 1;
  m["config_ini"] = dump_config(cfg);
  m["config"] = config_to_json(cfg);
  m["master_seed"] = master_seed;
  m["stage_seeds"] = Manifest::object();
  m["outputs"] = Manifest::array();
  m["stage_seconds"] = Manifest::object();
  return m;
}

inline void manifest_add_output(Manifest& m, const std::string& path) {
  m["outputs"].push_back(
      {{"path", path}, {"fnv1a64", checksum_file(path)}});
}

inline void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream f = open_out(path);
  f << m.dump(2) << '\n';
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream f = open_in(path);
  Manifest m;
  try {
    f >> m;
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad manifest " + path + ": " + e.what());
  }
  return m;
}

}  // namespace rydemit::io
