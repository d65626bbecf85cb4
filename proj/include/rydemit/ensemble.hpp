#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "rydemit/config.hpp"
#include "rydemit/error.hpp"
#include "rydemit/linalg.hpp"
#include "rydemit/rng.hpp"

// Atom ensembles: Maxwell-Boltzmann and wall-desorption sampling, ballistic
// trajectories with wall-collision times, the beam-overlap filter, and the
// polynomial time-fits of every Hamiltonian coefficient that moves.

namespace rydemit::ensemble {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Structure-of-arrays over atoms.  Axis convention: x is the beam axis with
// the cell walls at x = 0 and x = cell_thickness; (y, z) is transverse.
// Trajectories are ballistic: R_n(t) = R_n(0) + v_n t.
struct AtomSet {
  std::vector<double> x, y, z;     // um, at t = 0
  std::vector<double> vx, vy, vz;  // um/ns
  std::vector<double> t_wall;      // ns; +inf if the axial ray never exits
  std::string distribution_tag;    // "boltzmann" | "liad"
  std::uint64_t rng_seed = 0;

  int size() const { return static_cast<int>(x.size()); }

  void push(double px, double py, double pz, double wx, double wy, double wz,
            double tw) {
    x.push_back(px);
    y.push_back(py);
    z.push_back(pz);
    vx.push_back(wx);
    vy.push_back(wy);
    vz.push_back(wz);
    t_wall.push_back(tw);
  }

  // Position at time t (valid for any t; callers handle wall semantics).
  double x_at(int n, double t) const { return x[n] + vx[n] * t; }
  double y_at(int n, double t) const { return y[n] + vy[n] * t; }
  double z_at(int n, double t) const { return z[n] + vz[n] * t; }

  // Squared transverse distance from the beam axis.
  double rho2_at(int n, double t) const {
    double py = y_at(n, t), pz = z_at(n, t);
    return py * py + pz * pz;
  }

  AtomSet select(const std::vector<int>& idx) const {
    AtomSet out;
    out.distribution_tag = distribution_tag;
    out.rng_seed = rng_seed;
    for (int n : idx)
      out.push(x[n], y[n], z[n], vx[n], vy[n], vz[n], t_wall[n]);
    return out;
  }

  void append(const AtomSet& other) {
    for (int n = 0; n < other.size(); ++n)
      push(other.x[n], other.y[n], other.z[n], other.vx[n], other.vy[n],
           other.vz[n], other.t_wall[n]);
  }
};

// First time the axial ray leaves the slab [0, L].
inline double wall_time(double x0, double vx, double L) {
  if (vx > 0.0) return (L - x0) / vx;
  if (vx < 0.0) return -x0 / vx;
  return kInf;
}

inline AtomSet sample_boltzmann(int n, const PhysicalConfig& cfg,
                                std::uint64_t seed) {
  if (n < 1) throw ConfigError("sample_boltzmann: n must be >= 1");
  cfg.validate();
  Rng rng(seed);
  AtomSet set;
  set.distribution_tag = "boltzmann";
  set.rng_seed = seed;
  double sv = cfg.sigma_v();
  double R = cfg.disk_radius(), L = cfg.cell_thickness;
  for (int i = 0; i < n; ++i) {
    double px = rng.uniform(0.0, L);
    // Uniform over a disk via the inverse-CDF radius.
    double r = R * std::sqrt(rng.uniform());
    double phi = units::two_pi * rng.uniform();
    double py = r * std::cos(phi), pz = r * std::sin(phi);
    double wx = sv * rng.normal();
    double wy = sv * rng.normal();
    double wz = sv * rng.normal();
    set.push(px, py, pz, wx, wy, wz, wall_time(px, wx, L));
  }
  return set;
}

namespace detail {

// Speed CDF of the desorption law P(v) ~ v^2 exp(-v^2/b^2):
// F(x) = erf(x) - (2/sqrt(pi)) x exp(-x^2), x = v/b.
inline double liad_speed_cdf(double x) {
  return std::erf(x) - 2.0 / std::sqrt(units::pi) * x * std::exp(-x * x);
}

// Invert the speed CDF by bisection refined with Newton; the density
// 4/sqrt(pi) x^2 exp(-x^2) is the derivative.
inline double liad_speed_quantile(double u) {
  double lo = 0.0, hi = 8.0;  // CDF(8) = 1 - 3e-27, exhaustive
  double x = 1.0;
  for (int it = 0; it < 80; ++it) {
    double f = liad_speed_cdf(x) - u;
    double d = 4.0 / std::sqrt(units::pi) * x * x * std::exp(-x * x);
    if (f > 0)
      hi = x;
    else
      lo = x;
    double step = d > 1e-300 ? f / d : 0.0;
    double xn = x - step;
    if (!(xn > lo && xn < hi)) xn = 0.5 * (lo + hi);
    if (std::fabs(xn - x) < 1e-15 * (1.0 + x)) return xn;
    x = xn;
  }
  return x;
}

}  // namespace detail

// Atoms released from the cell walls by desorption, with the directional
// law P(v, theta) = a v^2 exp(-v^2/b^2) cos(theta); theta is measured from
// the inward wall normal, azimuth is uniform.
inline AtomSet sample_liad(int n, const PhysicalConfig& cfg,
                           std::uint64_t seed) {
  if (n < 1) throw ConfigError("sample_liad: n must be >= 1");
  cfg.validate();
  Rng rng(seed);
  AtomSet set;
  set.distribution_tag = "liad";
  set.rng_seed = seed;
  double R = cfg.disk_radius(), L = cfg.cell_thickness, b = cfg.liad_b;
  for (int i = 0; i < n; ++i) {
    bool from_far_wall = cfg.liad_both_walls && rng.uniform() < 0.5;
    double r = R * std::sqrt(rng.uniform());
    double phip = units::two_pi * rng.uniform();
    double py = r * std::cos(phip), pz = r * std::sin(phip);
    double v = b * detail::liad_speed_quantile(rng.uniform());
    // cos(theta)-weighted polar angle: CDF sin(theta) on [0, pi/2].
    double theta = std::asin(rng.uniform());
    double phiv = units::two_pi * rng.uniform();
    double vpar = v * std::cos(theta);                // inward
    double vperp = v * std::sin(theta);
    double wy = vperp * std::cos(phiv), wz = vperp * std::sin(phiv);
    double px = from_far_wall ? L : 0.0;
    double wx = from_far_wall ? -vpar : vpar;
    double tw = vpar > 0.0 ? L / vpar : kInf;
    set.push(px, py, pz, wx, wy, wz, tw);
  }
  return set;
}

// Fraction of desorbed atoms still inside the cell at time t.  The slowest
// atoms dominate late times: an atom released at speed v with polar angle
// theta is gone once v*cos(theta)*t exceeds the thickness, and integrating
// the speed law against the cos(theta) release profile collapses to a
// single exponential.
inline double liad_survival(double t, const PhysicalConfig& cfg) {
  if (t <= 0.0) return 1.0;
  double z = cfg.cell_thickness / (cfg.liad_b * t);
  return 1.0 - std::exp(-z * z);
}

// Excitation epoch over which beam overlap and wall survival are judged.
inline constexpr double kFilterWindow = 2.0;  // ns

// Time-averaged first-laser beam factor exp(-rho(t)^2 / w01^2) over the
// 2 ns excitation epoch; 201-point trapezoid.  The on-axis maximum is 1, so
// the threshold is absolute.
inline double mean_beam_factor(const AtomSet& atoms, int n,
                               const PhysicalConfig& cfg) {
  const int kSamples = 201;
  double inv_w2 = 1.0 / (cfg.waist1 * cfg.waist1);
  double dt = kFilterWindow / (kSamples - 1);
  double acc = 0.0;
  for (int k = 0; k < kSamples; ++k) {
    double t = k * dt;
    double f = std::exp(-atoms.rho2_at(n, t) * inv_w2);
    acc += (k == 0 || k == kSamples - 1) ? 0.5 * f : f;
  }
  return acc * dt / kFilterWindow;
}

// Keep atoms that both stay coupled to the tightly focused first beam and
// survive inside the cell through the excitation epoch.
inline AtomSet filter_by_rabi(const AtomSet& atoms, const PhysicalConfig& cfg,
                              const PulseSequence& pulses,
                              double threshold = 0.1) {
  (void)pulses;  // window pinned to the excitation epoch, see mean_beam_factor
  std::vector<int> keep;
  for (int n = 0; n < atoms.size(); ++n) {
    if (atoms.t_wall[n] < kFilterWindow) continue;
    if (mean_beam_factor(atoms, n, cfg) >= threshold) keep.push_back(n);
  }
  return atoms.select(keep);
}

// Fit orders per channel.
struct FitOrders {
  int laser1 = 3;
  int laser23 = 2;
  int interaction = 10;
};

// Per-atom beam envelopes and per-pair interaction energies, fitted over the
// pulse window so the Hamiltonian becomes a sum of (operator) * t^a terms.
struct ChannelFits {
  double t_lo = 0.0, t_hi = 0.0;
  // envelope[j][n]: Gaussian beam factor of laser j at atom n, in [0, 1].
  std::vector<std::vector<Poly>> envelope;
  // interaction[p]: c6 / d^6 for pair p (ordered n<m, row-major upper
  // triangle), rad/ns.
  std::vector<Poly> interaction;
  double max_envelope_residual = 0.0;
  double max_interaction_residual = 0.0;

  int pair_index(int n, int m, int n_atoms) const {
    return n * n_atoms - n * (n + 1) / 2 + (m - n - 1);
  }
};

inline ChannelFits polyfit_channels(const AtomSet& atoms,
                                    const PhysicalConfig& cfg, double t_lo,
                                    double t_hi,
                                    const FitOrders& orders = FitOrders{}) {
  if (!(t_hi > t_lo)) throw FitError("polyfit_channels: empty window");
  const int kSamples = 64;  // >= 6x the highest order
  int N = atoms.size();
  ChannelFits fits;
  fits.t_lo = t_lo;
  fits.t_hi = t_hi;
  std::vector<double> ts(kSamples);
  for (int k = 0; k < kSamples; ++k)
    ts[k] = t_lo + (t_hi - t_lo) * k / (kSamples - 1);

  double waists[3] = {cfg.waist1, cfg.waist2, cfg.waist3};
  int orders_j[3] = {orders.laser1, orders.laser23, orders.laser23};
  fits.envelope.resize(3);
  std::vector<double> ys(kSamples);
  for (int j = 0; j < 3; ++j) {
    fits.envelope[j].reserve(N);
    double inv_w2 = 1.0 / (waists[j] * waists[j]);
    for (int n = 0; n < N; ++n) {
      for (int k = 0; k < kSamples; ++k)
        ys[k] = std::exp(-atoms.rho2_at(n, ts[k]) * inv_w2);
      double res = 0.0;
      fits.envelope[j].push_back(polyfit(ts, ys, orders_j[j], t_lo, t_hi, &res));
      fits.max_envelope_residual = std::max(fits.max_envelope_residual, res);
    }
  }

  fits.interaction.reserve(static_cast<std::size_t>(N) * (N - 1) / 2);
  for (int n = 0; n < N; ++n) {
    for (int m = n + 1; m < N; ++m) {
      for (int k = 0; k < kSamples; ++k) {
        double dx = atoms.x_at(n, ts[k]) - atoms.x_at(m, ts[k]);
        double dy = atoms.y_at(n, ts[k]) - atoms.y_at(m, ts[k]);
        double dz = atoms.z_at(n, ts[k]) - atoms.z_at(m, ts[k]);
        double d2 = dx * dx + dy * dy + dz * dz;
        ys[k] = cfg.interaction_energy(d2);
      }
      double res = 0.0;
      fits.interaction.push_back(
          polyfit(ts, ys, orders.interaction, t_lo, t_hi, &res));
      fits.max_interaction_residual =
          std::max(fits.max_interaction_residual, res);
    }
  }
  return fits;
}

}  // namespace rydemit::ensemble
