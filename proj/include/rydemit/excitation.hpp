#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "rydemit/config.hpp"
#include "rydemit/ensemble.hpp"
#include "rydemit/error.hpp"
#include "rydemit/hilbert.hpp"
#include "rydemit/ode.hpp"

// Rotating-frame three-pulse dynamics: Hamiltonian assembly over the
// truncated basis, Schroedinger propagation, lab-frame conversion, and the
// W-state diagnostics (target construction, fidelity, sector populations,
// phase time).

namespace rydemit::excite {

using std::complex;
using hilbert::Level;
using hilbert::TruncatedBasis;

enum class Frame { rotating, lab };

struct StateVector {
  const TruncatedBasis* basis = nullptr;
  cvec amp;
  Frame frame = Frame::rotating;
  double time = 0.0;

  double norm2() const {
    double s = 0.0;
    for (auto& a : amp) s += std::norm(a);
    return s;
  }
};

inline StateVector ground_state(const TruncatedBasis& basis) {
  StateVector s;
  s.basis = &basis;
  s.amp.assign(basis.dim(), 0.0);
  s.amp[basis.ground()] = 1.0;
  return s;
}

// H(t) = diag + sum over groups of poly(t) * (sparse pattern + h.c.).
// Every group is gated by its on-window; polynomials are only ever
// evaluated inside the fit window they were built on.
struct Hamiltonian {
  struct Entry {
    int row, col;
    complex<double> coeff;
  };
  struct Group {
    double t_on, t_off;
    Poly poly;
    std::vector<Entry> entries;
  };

  int dim = 0;
  double valid_lo = 0.0, valid_hi = 0.0;  // fit window
  std::vector<double> diag;               // constant drift part, rad/ns
  std::vector<Group> groups;

  // y = H(t) x
  void apply(double t, const cvec& x, cvec& y) const {
    for (int i = 0; i < dim; ++i) y[i] = diag[i] * x[i];
    for (const auto& g : groups) {
      if (t < g.t_on || t >= g.t_off) continue;
      double p = g.poly.eval(t);
      for (const auto& e : g.entries) {
        if (e.row == e.col) {
          y[e.row] += p * e.coeff * x[e.row];
        } else {
          complex<double> c = p * e.coeff;
          y[e.row] += c * x[e.col];
          y[e.col] += std::conj(c) * x[e.row];
        }
      }
    }
  }

  // Switch times where the operator is discontinuous.
  std::vector<double> breakpoints() const {
    std::vector<double> b;
    for (const auto& g : groups) {
      b.push_back(g.t_on);
      b.push_back(g.t_off);
    }
    return b;
  }
};

// Doppler-shifted drift sum for one excited level of one atom; the diagonal
// of the rotating-frame Hamiltonian is minus these, summed over excited
// atoms.
inline double level_delta(Level s, const ensemble::AtomSet& atoms, int n,
                          const PhysicalConfig& cfg) {
  double d1 = hilbert::doppler_delta(0, atoms, n, cfg);
  if (s == Level::i) return d1;
  double d2 = hilbert::doppler_delta(1, atoms, n, cfg);
  if (s == Level::r) return d1 + d2;
  return d1 + d2 - hilbert::doppler_delta(2, atoms, n, cfg);
}

inline Hamiltonian assemble_hamiltonian(const ensemble::AtomSet& atoms,
                                        const PhysicalConfig& cfg,
                                        const PulseSequence& pulses,
                                        const TruncatedBasis& basis,
                                        const ensemble::ChannelFits& fits) {
  int N = atoms.size();
  if (basis.n_atoms() != N)
    throw UsageError("assemble: basis built for a different atom count");
  if (fits.envelope.size() != 3 ||
      static_cast<int>(fits.envelope[0].size()) != N)
    throw UsageError("assemble: fit channels missing or mismatched");
  pulses.validate();

  Hamiltonian H;
  H.dim = basis.dim();
  H.valid_lo = fits.t_lo;
  H.valid_hi = fits.t_hi;
  H.diag.assign(H.dim, 0.0);

  // Drift diagonal.
  for (int n = 0; n < N; ++n)
    for (int s = 0; s < 3; ++s)
      H.diag[basis.single(n, static_cast<Level>(s))] =
          -level_delta(static_cast<Level>(s), atoms, n, cfg);
  for (int a = 0; a < N; ++a)
    for (int b = a + 1; b < N; ++b)
      for (int sa = 0; sa < 3; ++sa)
        for (int sb = 0; sb < 3; ++sb)
          H.diag[basis.dbl(a, static_cast<Level>(sa), b,
                           static_cast<Level>(sb))] =
              -level_delta(static_cast<Level>(sa), atoms, a, cfg) -
              level_delta(static_cast<Level>(sb), atoms, b, cfg);

  // Laser couplings: one group per (laser, atom) sharing the fitted beam
  // envelope scaled by half the Rabi amplitude; the plane-wave phase at the
  // initial position sits in the entry coefficients.
  for (int j = 0; j < 3; ++j) {
    if (pulses.omega[j] == 0.0) continue;
    double kj = j == 0 ? cfg.k1() : j == 1 ? cfg.k2() : cfg.k3();
    for (int n = 0; n < N; ++n) {
      Hamiltonian::Group g;
      g.t_on = pulses.start[j];
      g.t_off = pulses.end(j);
      g.poly = fits.envelope[j][n];
      for (double& c : g.poly.c) c *= 0.5 * pulses.omega[j];
      complex<double> phase =
          std::exp(complex<double>(0.0, kj * atoms.x[n]));
      auto couple = [&](int row, int col) {
        g.entries.push_back({row, col, phase});
      };
      if (j == 0) {
        // g -> i on atom n, in the ground and single sectors.
        couple(basis.single(n, Level::i), basis.ground());
        for (int m = 0; m < N; ++m) {
          if (m == n) continue;
          for (int s = 0; s < 3; ++s)
            couple(basis.dbl(n, Level::i, m, static_cast<Level>(s)),
                   basis.single(m, static_cast<Level>(s)));
        }
      } else {
        // i -> r (laser 2) or e -> r (laser 3) on atom n.
        Level from = j == 1 ? Level::i : Level::e;
        couple(basis.single(n, Level::r), basis.single(n, from));
        for (int m = 0; m < N; ++m) {
          if (m == n) continue;
          for (int s = 0; s < 3; ++s)
            couple(basis.dbl(n, Level::r, m, static_cast<Level>(s)),
                   basis.dbl(n, from, m, static_cast<Level>(s)));
        }
      }
      H.groups.push_back(std::move(g));
    }
  }

  // Rydberg-Rydberg interaction: time-polynomial diagonal on |r r> pairs
  // (and their effective triples, which inherit the pair geometry).
  for (int a = 0; a < N; ++a) {
    for (int b = a + 1; b < N; ++b) {
      Hamiltonian::Group g;
      g.t_on = fits.t_lo;
      g.t_off = fits.t_hi;
      g.poly = fits.interaction[fits.pair_index(a, b, N)];
      int rr = basis.dbl(a, Level::r, b, Level::r);
      g.entries.push_back({rr, rr, 1.0});
      if (basis.with_triples()) {
        int rre = basis.eff(a, Level::r, b, Level::r);
        g.entries.push_back({rre, rre, 1.0});
      }
      H.groups.push_back(std::move(g));
    }
  }

  // Effective third-excitation sector: collective detuning on the diagonal,
  // time-averaged collective Rabi to the parent during the first pulse, and
  // the adiabatic-elimination hops between doubles sharing a Rydberg atom.
  if (basis.with_triples()) {
    std::vector<complex<double>> avg1(N);
    std::vector<double> d1(N);
    for (int l = 0; l < N; ++l) {
      avg1[l] = hilbert::mean_rabi(0, atoms, l, cfg, pulses);
      d1[l] = hilbert::doppler_delta(0, atoms, l, cfg);
    }
    for (int a = 0; a < N; ++a) {
      for (int b = a + 1; b < N; ++b) {
        auto ec = hilbert::effective_coupling(a, b, avg1, d1);
        Hamiltonian::Group g;
        g.t_on = pulses.start[0];
        g.t_off = pulses.end(0);
        g.poly = Poly{fits.t_lo, fits.t_hi, {0.5 * ec.omega_eff}};
        for (int sa = 0; sa < 3; ++sa)
          for (int sb = 0; sb < 3; ++sb) {
            int parent =
                basis.dbl(a, static_cast<Level>(sa), b, static_cast<Level>(sb));
            int trip =
                basis.eff(a, static_cast<Level>(sa), b, static_cast<Level>(sb));
            H.diag[trip] = H.diag[parent] - ec.delta_eff;
            g.entries.push_back({trip, parent, 1.0});
          }
        H.groups.push_back(std::move(g));
      }
    }

    auto indirect =
        hilbert::indirect_hamiltonian_terms(atoms, cfg, pulses, basis, fits);
    // Terms with the same spectator pair share one envelope product; group
    // them so the polynomial is evaluated once per step.
    std::vector<int> group_of(static_cast<std::size_t>(N) * N, -1);
    for (auto& t : indirect) {
      int key = t.atom_m * N + t.atom_l;
      if (group_of[key] < 0) {
        group_of[key] = static_cast<int>(H.groups.size());
        Hamiltonian::Group g;
        g.t_on = pulses.start[0];
        g.t_off = pulses.end(0);
        g.poly = t.envelope_product;
        H.groups.push_back(std::move(g));
      }
      H.groups[group_of[key]].entries.push_back(
          {t.row, t.col, t.static_coeff});
    }
  }
  return H;
}

// Schroedinger propagation i d/dt psi = H(t) psi in the rotating frame.
// Pulse switch times act as hard integration stops.  sample_times (if any)
// are reported through sink with the rotating-frame amplitudes.
inline StateVector propagate(
    const Hamiltonian& H, const StateVector& psi0, double t_start,
    double t_end, double tol, const std::vector<double>& sample_times = {},
    const std::function<void(double, const cvec&)>& sink = nullptr) {
  if (psi0.frame != Frame::rotating)
    throw FrameError("propagate: initial state must be in the rotating frame");
  if (t_start < H.valid_lo - 1e-12 || t_end > H.valid_hi + 1e-12)
    throw UsageError("propagate: window leaves the operator's fit range");
  StateVector psi = psi0;
  cvec scratch(H.dim);
  OdeOptions opt;
  opt.rtol = tol;
  opt.atol = tol * 1e-2;
  auto rhs = [&H, &scratch](double t, const cvec& y, cvec& dy) {
    H.apply(t, y, scratch);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      // dy = -i H y
      dy[i] = complex<double>(scratch[i].imag(), -scratch[i].real());
    }
  };
  integrate_dopri5(rhs, t_start, t_end, psi.amp, opt, H.breakpoints(),
                   sample_times, sink);
  psi.time = t_end;
  return psi;
}

// Undo the rotating-frame transformation at the state's own time: each
// basis state picks up exp(-i * (sum of its laser detunings) * t), which is
// exp(+i * drift_diag * t) in the sign convention used here.  The
// interaction part of the energy is frame-independent and contributes no
// phase.
inline StateVector to_lab_frame(const StateVector& psi, const Hamiltonian& H) {
  if (psi.frame == Frame::lab)
    throw FrameError("to_lab_frame: state already in the lab frame");
  StateVector out = psi;
  for (int s = 0; s < H.dim; ++s)
    out.amp[s] *= std::exp(complex<double>(0.0, H.diag[s] * psi.time));
  out.frame = Frame::lab;
  return out;
}

// Per-atom target weights, unnormalized. "uniform" gives every atom the
// same pull; "rabi" weights by the time-averaged two-photon drive to |r>
// times the transfer drive |r> -> |e>, so atoms near the beam axis dominate.
inline std::vector<double> w_state_weights(const ensemble::AtomSet& atoms,
                                           const PhysicalConfig& cfg,
                                           const PulseSequence& pulses,
                                           const std::string& weighting) {
  int N = atoms.size();
  std::vector<double> w(N, 1.0);
  if (weighting == "rabi") {
    double on = std::max(pulses.start[0], pulses.start[1]);
    double off = std::min(pulses.end(0), pulses.end(1));
    if (off <= on)
      throw ConfigError("w_state_weights: rabi weighting needs overlapping "
                        "laser-1/2 windows");
    for (int n = 0; n < N; ++n) {
      double inv_w1 = 1.0 / (cfg.waist1 * cfg.waist1);
      double inv_w2 = 1.0 / (cfg.waist2 * cfg.waist2);
      double mean12 = hilbert::simpson([&](double t) {
                        return std::exp(-atoms.rho2_at(n, t) *
                                        (inv_w1 + inv_w2));
                      }, on, off) / (off - on);
      double om12 = pulses.omega[0] * pulses.omega[1] * mean12 /
                    (2.0 * std::fabs(hilbert::doppler_delta(0, atoms, n, cfg)));
      double om3 = std::abs(hilbert::mean_rabi(2, atoms, n, cfg, pulses));
      w[n] = om12 * om3;
    }
  } else if (weighting != "uniform") {
    throw ConfigError("w_state_weights: weighting must be uniform|rabi");
  }
  return w;
}

// Collective single-photon target: amplitudes on |e_n> with phases matched
// to a photon absorbed at the four-wave-mixing wavevector at time t_W.
inline StateVector w_state_target(const ensemble::AtomSet& atoms,
                                  const PhysicalConfig& cfg,
                                  const PulseSequence& pulses,
                                  const TruncatedBasis& basis, double t_w,
                                  const std::string& weighting) {
  int N = atoms.size();
  if (N < 1) throw UsageError("w_state_target: empty atom set");
  std::vector<double> w = w_state_weights(atoms, cfg, pulses, weighting);
  double norm = 0.0;
  for (double wn : w) norm += wn * wn;
  if (norm <= 0.0)
    throw UsageError("w_state_target: all weights vanished");
  norm = std::sqrt(norm);

  StateVector s;
  s.basis = &basis;
  s.amp.assign(basis.dim(), 0.0);
  s.frame = Frame::lab;
  s.time = t_w;
  for (int n = 0; n < N; ++n) {
    double phase = cfg.k0() * (atoms.x[n] + atoms.vx[n] * t_w);
    s.amp[basis.single(n, Level::e)] =
        (w[n] / norm) * std::exp(complex<double>(0.0, phase));
  }
  return s;
}

inline double fidelity(const StateVector& psi, const StateVector& target) {
  if (psi.frame != Frame::lab || target.frame != Frame::lab)
    throw FrameError("fidelity: both states must be in the lab frame");
  if (psi.amp.size() != target.amp.size())
    throw UsageError("fidelity: dimension mismatch");
  complex<double> ip = 0.0;
  for (std::size_t i = 0; i < psi.amp.size(); ++i)
    ip += std::conj(target.amp[i]) * psi.amp[i];
  return std::norm(ip);
}

struct SectorPopulations {
  double ground = 0.0;
  double single_e = 0.0;
  double double_ee = 0.0;
  double other = 0.0;
};

inline SectorPopulations sector_populations(const StateVector& psi) {
  const TruncatedBasis& b = *psi.basis;
  SectorPopulations p;
  p.ground = std::norm(psi.amp[b.ground()]);
  for (int n = 0; n < b.n_atoms(); ++n)
    p.single_e += std::norm(psi.amp[b.single(n, Level::e)]);
  for (int a = 0; a < b.n_atoms(); ++a)
    for (int bb = a + 1; bb < b.n_atoms(); ++bb)
      p.double_ee += std::norm(psi.amp[b.dbl(a, Level::e, bb, Level::e)]);
  double total = psi.norm2();
  p.other = total - p.ground - p.single_e - p.double_ee;
  return p;
}

// Per-atom |e> amplitudes of a lab-frame state, the input to the
// single-excitation decay stage.
inline cvec e_amplitudes(const StateVector& psi) {
  if (psi.frame != Frame::lab)
    throw FrameError("e_amplitudes: lab frame required");
  const TruncatedBasis& b = *psi.basis;
  cvec out(b.n_atoms());
  for (int n = 0; n < b.n_atoms(); ++n)
    out[n] = psi.amp[b.single(n, Level::e)];
  return out;
}

// Per-pair |e e> amplitudes (pairs ordered a<b lexicographically), the
// input to the double-excitation decay stage.
inline cvec ee_amplitudes(const StateVector& psi) {
  if (psi.frame != Frame::lab)
    throw FrameError("ee_amplitudes: lab frame required");
  const TruncatedBasis& b = *psi.basis;
  int N = b.n_atoms();
  cvec out;
  out.reserve(static_cast<std::size_t>(N) * (N - 1) / 2);
  for (int a = 0; a < N; ++a)
    for (int c = a + 1; c < N; ++c)
      out.push_back(psi.amp[b.dbl(a, Level::e, c, Level::e)]);
  return out;
}

// Emission-pattern timestamp encoded in the excited state's velocity phase,
// from pulse timing alone: each laser stamps its wavevector times the pulse
// midpoint, and the four-wave-mixing combination divides out the velocity.
inline double phase_time(const PulseSequence& pulses,
                         const PhysicalConfig& cfg) {
  double k[3] = {cfg.k1(), cfg.k2(), cfg.k3()};
  double sgn[3] = {1.0, 1.0, -1.0};
  double acc = 0.0;
  for (int j = 0; j < 3; ++j) {
    if (pulses.omega[j] == 0.0) continue;
    acc += sgn[j] * k[j] * (pulses.start[j] + 0.5 * pulses.duration[j]);
  }
  double k0 = 0.0;
  for (int j = 0; j < 3; ++j)
    if (pulses.omega[j] != 0.0) k0 += sgn[j] * k[j];
  if (k0 == 0.0)
    throw ConfigError("phase_time: net wavevector vanishes");
  return acc / k0;
}

// Extract the same timestamp from an actual lab-frame state: slope of the
// unwrapped per-atom phase arg(alpha_n) - k0 x_n against k0 vx_n.
inline double phase_time_from_state(const StateVector& psi,
                                    const ensemble::AtomSet& atoms,
                                    const PhysicalConfig& cfg) {
  if (psi.frame != Frame::lab)
    throw FrameError("phase_time_from_state: lab frame required");
  const TruncatedBasis& b = *psi.basis;
  int N = b.n_atoms();
  double amax = 0.0;
  for (int n = 0; n < N; ++n)
    amax = std::max(amax, std::abs(psi.amp[b.single(n, Level::e)]));
  if (amax == 0.0)
    throw FitError("phase_time_from_state: no single-e amplitude");
  struct Pt {
    double v, phi;
  };
  std::vector<Pt> pts;
  for (int n = 0; n < N; ++n) {
    complex<double> a = psi.amp[b.single(n, Level::e)];
    if (std::abs(a) < 1e-3 * amax) continue;  // phase is noise down there
    pts.push_back({atoms.vx[n], std::arg(a) - cfg.k0() * atoms.x[n]});
  }
  std::sort(pts.begin(), pts.end(), [](const Pt& p, const Pt& q) {
    return p.v < q.v;
  });
  if (pts.size() < 2 || pts.front().v == pts.back().v)
    throw FitError("phase_time_from_state: need two distinct velocities");
  // Unwrap along increasing velocity.
  for (std::size_t i = 1; i < pts.size(); ++i) {
    double d = pts[i].phi - pts[i - 1].phi;
    d -= units::two_pi * std::round(d / units::two_pi);
    pts[i].phi = pts[i - 1].phi + d;
  }
  std::vector<double> xs, ys;
  xs.reserve(pts.size());
  ys.reserve(pts.size());
  for (auto& p : pts) {
    xs.push_back(cfg.k0() * p.v);
    ys.push_back(p.phi);
  }
  return line_fit(xs, ys).slope;
}

}  // namespace rydemit::excite
