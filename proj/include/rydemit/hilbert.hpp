#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <string>
#include <vector>

#include "rydemit/config.hpp"
#include "rydemit/ensemble.hpp"
#include "rydemit/error.hpp"
#include "rydemit/linalg.hpp"

// Truncated many-body basis and the effective third-excitation sector.
//
// The basis keeps the ground state, all single and double excitations over
// the three ladder levels i, r, e, and one collective "effective triple"
// per double state which stands in for the N-2 spectator states
// |X_n Y_m i_l>.  Anything with three real excitations is excluded by
// construction; the blockade makes those states unreachable anyway.

namespace rydemit::hilbert {

using std::complex;

enum class Level : int { i = 0, r = 1, e = 2 };

inline char level_char(Level s) { return s == Level::i ? 'i' : s == Level::r ? 'r' : 'e'; }

struct StateLabel {
  enum Kind { Ground, Single, Double, EffTriple } kind = Ground;
  int a = -1, b = -1;  // atoms, a < b for pair states
  Level la = Level::i, lb = Level::i;

  std::string str() const {
    switch (kind) {
      case Ground: return "G";
      case Single: return std::string("S:") + std::to_string(a) + ":" + level_char(la);
      case Double:
        return std::string("D:") + std::to_string(a) + ":" + level_char(la) +
               ":" + std::to_string(b) + ":" + level_char(lb);
      default:
        return std::string("T:") + std::to_string(a) + ":" + level_char(la) +
               ":" + std::to_string(b) + ":" + level_char(lb);
    }
  }
};

class TruncatedBasis {
 public:
  explicit TruncatedBasis(int n_atoms) : n_(n_atoms) {
    if (n_atoms < 1) throw ConfigError("basis: need at least one atom");
    pairs_ = n_ * (n_ - 1) / 2;
    with_triples_ = n_ >= 3;
    labels_.reserve(dim());
    labels_.push_back(StateLabel{});  // ground
    for (int a = 0; a < n_; ++a)
      for (int s = 0; s < 3; ++s)
        labels_.push_back(
            StateLabel{StateLabel::Single, a, -1, static_cast<Level>(s), Level::i});
    for (int a = 0; a < n_; ++a)
      for (int b = a + 1; b < n_; ++b)
        for (int sa = 0; sa < 3; ++sa)
          for (int sb = 0; sb < 3; ++sb)
            labels_.push_back(StateLabel{StateLabel::Double, a, b,
                                         static_cast<Level>(sa),
                                         static_cast<Level>(sb)});
    if (with_triples_)
      for (int a = 0; a < n_; ++a)
        for (int b = a + 1; b < n_; ++b)
          for (int sa = 0; sa < 3; ++sa)
            for (int sb = 0; sb < 3; ++sb)
              labels_.push_back(StateLabel{StateLabel::EffTriple, a, b,
                                           static_cast<Level>(sa),
                                           static_cast<Level>(sb)});
  }

  int n_atoms() const { return n_; }
  int n_pairs() const { return pairs_; }
  bool with_triples() const { return with_triples_; }
  int dim() const { return 1 + 3 * n_ + 9 * pairs_ * (with_triples_ ? 2 : 1); }

  int ground() const { return 0; }
  int single(int atom, Level s) const {
    return 1 + 3 * atom + static_cast<int>(s);
  }
  int pair_index(int a, int b) const {  // requires a < b
    return a * n_ - a * (a + 1) / 2 + (b - a - 1);
  }
  int dbl(int a, Level sa, int b, Level sb) const {
    if (a > b) return dbl(b, sb, a, sa);
    return 1 + 3 * n_ + 9 * pair_index(a, b) + 3 * static_cast<int>(sa) +
           static_cast<int>(sb);
  }
  int eff(int a, Level sa, int b, Level sb) const {
    if (a > b) return eff(b, sb, a, sa);
    return 1 + 3 * n_ + 9 * pairs_ + 9 * pair_index(a, b) +
           3 * static_cast<int>(sa) + static_cast<int>(sb);
  }

  const StateLabel& label(int idx) const { return labels_[idx]; }
  const std::vector<StateLabel>& labels() const { return labels_; }

 private:
  int n_;
  int pairs_;
  bool with_triples_;
  std::vector<StateLabel> labels_;
};

// Composite Simpson quadrature (n must become odd internally).
inline double simpson(const std::function<double(double)>& f, double a,
                      double b, int n = 257) {
  if (n % 2 == 0) ++n;
  double h = (b - a) / (n - 1), acc = f(a) + f(b);
  for (int k = 1; k < n - 1; ++k) acc += f(a + k * h) * (k % 2 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

// Doppler-shifted detuning of laser j (0-based) for atom n.
inline double doppler_delta(int j, const ensemble::AtomSet& atoms, int n,
                            const PhysicalConfig& cfg) {
  double k = j == 0 ? cfg.k1() : j == 1 ? cfg.k2() : cfg.k3();
  double d = j == 0 ? cfg.delta1 : j == 1 ? cfg.delta2 : cfg.delta3;
  return d - k * atoms.vx[n];  // beams run along x
}

// Time-averaged complex Rabi frequency of laser j at atom n over the
// laser's on-window: amplitude * static plane-wave phase * mean Gaussian
// envelope.  Quadrature on the exact envelope, not the polynomial fit, so
// oracle comparisons are fit-independent.
inline complex<double> mean_rabi(int j, const ensemble::AtomSet& atoms, int n,
                                 const PhysicalConfig& cfg,
                                 const PulseSequence& pulses) {
  double w = j == 0 ? cfg.waist1 : j == 1 ? cfg.waist2 : cfg.waist3;
  double k = j == 0 ? cfg.k1() : j == 1 ? cfg.k2() : cfg.k3();
  double inv_w2 = 1.0 / (w * w);
  double t_on = pulses.start[j], t_off = pulses.end(j);
  double mean_env = simpson([&](double t) {
                      return std::exp(-atoms.rho2_at(n, t) * inv_w2);
                    }, t_on, t_off) / (t_off - t_on);
  return pulses.omega[j] * mean_env *
         std::exp(complex<double>(0.0, k * atoms.x[n]));
}

struct EffectiveCoupling {
  int atom_a = -1, atom_b = -1;  // the parent double's pair
  double delta_eff = 0.0;        // corrected collective detuning, rad/ns
  double omega_eff = 0.0;        // corrected collective Rabi, rad/ns
  double e_plus = 0.0, e_minus = 0.0;      // corrected dressed energies
  double e_plus0 = 0.0, e_minus0 = 0.0;    // uncorrected (degenerate model)
};

// Collapse the N-2 spectator triple states attached to the double (a, b)
// into one collective level.  The degenerate model (all spectators at the
// mean detuning) gives a bright state with the quadrature-sum Rabi; the
// spread of the individual Doppler detunings is treated as a perturbation
// through third order, and the corrected pair of dressed energies is folded
// back into an equivalent two-level (detuning, Rabi) pair.  Dark spectator
// combinations carry no coupling and are dropped.
//
// avg_rabi1 / delta1 are per-atom arrays over the WHOLE ensemble (first
// laser, time-averaged Rabi and Doppler-shifted detuning); entries a and b
// are ignored.  Callers that evaluate many pairs precompute them once.
inline EffectiveCoupling effective_coupling(
    int a, int b, const std::vector<complex<double>>& avg_rabi1,
    const std::vector<double>& delta1) {
  int N = static_cast<int>(avg_rabi1.size());
  if (N < 3) throw ConfigError("effective_coupling: needs at least 3 atoms");
  std::vector<complex<double>> g;   // half Rabi per spectator
  std::vector<double> u;            // detuning offsets (perturbation diagonal)
  g.reserve(N - 2);
  u.reserve(N - 2);
  double dbar = 0.0;
  for (int l = 0; l < N; ++l) {
    if (l == a || l == b) continue;
    g.push_back(0.5 * avg_rabi1[l]);
    u.push_back(delta1[l]);
    dbar += delta1[l];
  }
  int M = static_cast<int>(g.size());
  dbar /= M;
  for (double& ul : u) ul = dbar - ul;

  double G2 = 0.0;
  for (auto& gl : g) G2 += std::norm(gl);
  double G = std::sqrt(G2);
  if (2.0 * G < 1e-12)
    throw DegenerateError(
        "effective_coupling: vanishing collective Rabi, bright/dark "
        "splitting undefined");

  EffectiveCoupling out;
  out.atom_a = a;
  out.atom_b = b;
  double disc0 = std::sqrt(dbar * dbar + 4.0 * G2);
  out.e_plus0 = 0.5 * (-dbar + disc0);
  out.e_minus0 = 0.5 * (-dbar - disc0);
  if (disc0 < 1e-6)
    throw DegenerateError(
        "effective_coupling: dressed levels closer than 1e-6 rad/ns, "
        "nondegenerate perturbation theory invalid");

  // Perturbation-theory workspace in the (M+1)-dimensional block spanned by
  // the parent-with-no-third-excitation state D and the spectator states.
  // Component 0 is D, components 1..M follow g's ordering.
  using vec = std::vector<complex<double>>;
  auto dot = [&](const vec& p, const vec& q) {
    complex<double> s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += std::conj(p[i]) * q[i];
    return s;
  };
  auto eigvec = [&](double E) {
    // (G, E * ghat) in (D, bright) coordinates, expanded over spectators.
    vec v(M + 1);
    double norm = std::sqrt(G2 + E * E);
    v[0] = G / norm;
    for (int l = 0; l < M; ++l) v[l + 1] = E * (g[l] / G) / norm;
    return v;
  };
  auto applyV = [&](const vec& p) {
    vec q(M + 1);
    q[0] = 0.0;
    for (int l = 0; l < M; ++l) q[l + 1] = u[l] * p[l + 1];
    return q;
  };

  vec plus = eigvec(out.e_plus0), minus = eigvec(out.e_minus0);
  auto correct = [&](const vec& self, const vec& other, double E_self,
                     double E_other) {
    auto resolvent = [&](const vec& p, int power) {
      // R^power applied to p; spectrum: other eigenvector at E_other and the
      // dark space at -dbar (everything orthogonal to both bright vectors).
      vec q(M + 1);
      complex<double> co = dot(other, p);
      complex<double> cs = dot(self, p);
      double wo = 1.0, wd = 1.0;
      for (int k = 0; k < power; ++k) {
        wo /= (E_self - E_other);
        wd /= (E_self + dbar);
      }
      for (int i = 0; i <= M; ++i)
        q[i] = wo * co * other[i] +
               wd * (p[i] - co * other[i] - cs * self[i]);
      return q;
    };
    vec v1 = applyV(self);
    double E1 = std::real(dot(self, v1));
    vec rv = resolvent(v1, 1);
    double E2 = std::real(dot(v1, rv));
    vec vrv = applyV(rv);
    double E3 = std::real(dot(rv, vrv)) - E1 * std::real(dot(v1, resolvent(v1, 2)));
    return E_self + E1 + E2 + E3;
  };
  out.e_plus = correct(plus, minus, out.e_plus0, out.e_minus0);
  out.e_minus = correct(minus, plus, out.e_minus0, out.e_plus0);

  if (std::fabs(out.e_plus - out.e_minus) < 1e-6)
    throw DegenerateError(
        "effective_coupling: corrected levels degenerate within 1e-6 rad/ns");
  out.delta_eff = -(out.e_plus + out.e_minus);
  double disc = (out.e_plus - out.e_minus) * (out.e_plus - out.e_minus) -
                (out.e_plus + out.e_minus) * (out.e_plus + out.e_minus);
  if (disc < 0.0)
    throw DegenerateError(
        "effective_coupling: corrected splitting below the detuning, no "
        "real equivalent Rabi frequency");
  out.omega_eff = std::sqrt(disc);
  return out;
}

// Convenience overload deriving the per-atom arrays from the ensemble.
inline EffectiveCoupling effective_coupling(int a, int b,
                                            const ensemble::AtomSet& atoms,
                                            const PhysicalConfig& cfg,
                                            const PulseSequence& pulses) {
  int N = atoms.size();
  std::vector<complex<double>> avg(N);
  std::vector<double> d1(N);
  for (int l = 0; l < N; ++l) {
    avg[l] = mean_rabi(0, atoms, l, cfg, pulses);
    d1[l] = doppler_delta(0, atoms, l, cfg);
  }
  return effective_coupling(a, b, avg, d1);
}

// One off-diagonal coupling produced by adiabatically eliminating the
// second-step excitation of a spectator: a Rydberg atom n stays put while
// the single i excitation hops between spectators m and l (m < l).
struct IndirectTerm {
  int row = 0, col = 0;                    // row carries i on atom l
  complex<double> static_coeff;            // phase and 1/denominator part
  Poly envelope_product;                   // env1_l(t) * env1_m(t) on the fit window
  int atom_n = -1, atom_m = -1, atom_l = -1;
};

// All |r_n, i_l><r_n, i_m| couplings with m < l, both distinct from n.
// Element: (1/4) Omega1_l(t) Omega1_m*(t) / (d1_n + d2_n + d1_m + d1_l).
inline std::vector<IndirectTerm> indirect_hamiltonian_terms(
    const ensemble::AtomSet& atoms, const PhysicalConfig& cfg,
    const PulseSequence& pulses, const TruncatedBasis& basis,
    const ensemble::ChannelFits& fits) {
  int N = atoms.size();
  if (N < 3) return {};
  std::vector<IndirectTerm> terms;
  double om1 = pulses.omega[0];
  for (int n = 0; n < N; ++n) {
    double dn = doppler_delta(0, atoms, n, cfg) + doppler_delta(1, atoms, n, cfg);
    for (int m = 0; m < N; ++m) {
      if (m == n) continue;
      for (int l = m + 1; l < N; ++l) {
        if (l == n) continue;
        double den = dn + doppler_delta(0, atoms, m, cfg) +
                     doppler_delta(0, atoms, l, cfg);
        if (std::fabs(den) < 1e-6)
          throw SingularError(
              "indirect coupling: vanishing denominator for atoms (n,m,l) = (" +
              std::to_string(n) + "," + std::to_string(m) + "," +
              std::to_string(l) + ")");
        IndirectTerm t;
        t.atom_n = n;
        t.atom_m = m;
        t.atom_l = l;
        t.row = basis.dbl(n, Level::r, l, Level::i);
        t.col = basis.dbl(n, Level::r, m, Level::i);
        double phase = cfg.k1() * (atoms.x[l] - atoms.x[m]);
        t.static_coeff = 0.25 * om1 * om1 / den *
                         std::exp(complex<double>(0.0, phase));
        t.envelope_product =
            poly_mul(fits.envelope[0][l], fits.envelope[0][m]);
        terms.push_back(std::move(t));
      }
    }
  }
  return terms;
}

}  // namespace rydemit::hilbert
