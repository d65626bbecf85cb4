#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "rydemit/config.hpp"
#include "rydemit/ensemble.hpp"
#include "rydemit/error.hpp"
#include "rydemit/ode.hpp"
#include "rydemit/units.hpp"

// Collective spontaneous emission of the excited state: coupled amplitude
// equations for single and double excitations with ballistic atom motion,
// wall freezing, angular photon densities, emission rates, and the
// approximate second-photon rate.
//
// Wall semantics: when an atom reaches a cell wall its amplitude freezes at
// the collision value and the atom leaves every coupling sum and every
// later emission integrand.  The frozen population is then reported as
// "lost to walls" instead of being emitted or silently dropped.

namespace rydemit::decay {

using std::complex;

inline double sinc(double x) {
  double ax = std::fabs(x);
  if (ax < 1e-4) {
    double x2 = x * x;
    return 1.0 - x2 / 6.0 + x2 * x2 / 120.0;
  }
  return std::sin(x) / x;
}

// J0 accurate to ~1e-12 over the distances a micro-cell can produce.  The
// series below 12 loses a few digits to cancellation right where the
// Hankel expansion bottoms out, so both branches meet at comparable error.
inline double bessel_j0(double x) {
  double ax = std::fabs(x);
  if (ax < 12.0) {
    double q = 0.25 * ax * ax;
    double term = 1.0, sum = 1.0;
    for (int k = 1; k <= 40; ++k) {
      term *= -q / static_cast<double>(k * k);
      sum += term;
      if (std::fabs(term) < 1e-17 * std::fabs(sum)) break;
    }
    return sum;
  }
  // Hankel asymptotic form J0 = sqrt(2/(pi x)) (P cos w + Q sin w),
  // w = x - pi/4, with coefficients s_k = ((2k-1)!!)^2 / (k! 8^k).
  double inv = 1.0 / ax;
  double s = 1.0, xpow = 1.0;
  double p = 1.0, qsum = 0.0;
  double prev = 1.0;
  int parity = 0;  // cycles 0,1,2,3 -> signs (+P, +Q, -P, -Q)
  for (int k = 1; k <= 24; ++k) {
    double odd = 2.0 * k - 1.0;
    s *= odd * odd / (8.0 * k);
    xpow *= inv;
    double term = s * xpow;
    if (term > prev) break;  // divergent tail reached
    prev = term;
    parity = k & 3;
    if (parity == 1)
      qsum += term;
    else if (parity == 2)
      p -= term;
    else if (parity == 3)
      qsum -= term;
    else
      p += term;
  }
  double w = ax - 0.25 * units::pi;
  return std::sqrt(2.0 / (units::pi * ax)) *
         (p * std::cos(w) + qsum * std::sin(w));
}

namespace detail {

inline int pair_count(int n) { return n * (n - 1) / 2; }

// Index of the unordered pair (n, m), n < m, in lexicographic order.
inline int pair_index(int n, int m, int n_atoms) {
  return n * n_atoms - n * (n + 1) / 2 + (m - n - 1);
}

// Sample rows for a decay window: a uniform grid plus wall-collision
// times, the latter duplicated so integrands that jump at a collision keep
// both one-sided values and time quadrature stays exact across the jump.
struct Segmentation {
  std::vector<double> seg_edges;  // t_start, walls inside, t_end
  std::vector<double> row_times;
  std::vector<int> row_segment;
  std::vector<std::vector<char>> segment_active;  // [segment][atom]
};

inline Segmentation segment_window(const ensemble::AtomSet& atoms, double t0,
                                   double t1, double sample_dt) {
  if (t1 < t0) throw UsageError("decay: window ends before it starts");
  if (sample_dt <= 0.0) throw UsageError("decay: sample step must be > 0");
  Segmentation s;
  s.seg_edges.push_back(t0);
  std::vector<double> walls;
  for (int n = 0; n < atoms.size(); ++n) {
    double tw = atoms.t_wall[n];
    if (tw > t0 && tw < t1) walls.push_back(tw);
  }
  std::sort(walls.begin(), walls.end());
  walls.erase(std::unique(walls.begin(), walls.end()), walls.end());
  for (double w : walls) s.seg_edges.push_back(w);
  s.seg_edges.push_back(t1);

  long n_int = std::max(1L, std::lround((t1 - t0) / sample_dt));
  double dt = (t1 - t0) / static_cast<double>(n_int);

  for (std::size_t seg = 0; seg + 1 < s.seg_edges.size(); ++seg) {
    double a = s.seg_edges[seg], b = s.seg_edges[seg + 1];
    std::vector<char> active(atoms.size());
    for (int n = 0; n < atoms.size(); ++n)
      active[n] = atoms.t_wall[n] > a ? 1 : 0;
    s.segment_active.push_back(std::move(active));

    s.row_times.push_back(a);
    s.row_segment.push_back(static_cast<int>(seg));
    long j_lo = static_cast<long>(std::floor((a - t0) / dt)) - 1;
    for (long j = std::max(1L, j_lo); j < n_int; ++j) {
      double tj = t0 + dt * static_cast<double>(j);
      if (tj > a && tj < b) {
        s.row_times.push_back(tj);
        s.row_segment.push_back(static_cast<int>(seg));
      }
      if (tj >= b) break;
    }
    s.row_times.push_back(b);
    s.row_segment.push_back(static_cast<int>(seg));
  }
  return s;
}

inline long long n3_budget() {
  if (const char* env = std::getenv("RYDEMIT_N3_BUDGET")) {
    char* end = nullptr;
    double v = std::strtod(env, &end);
    if (end != env && v > 0) return static_cast<long long>(v);
  }
  return 5'000'000'000LL;
}

}  // namespace detail

struct SingleTrajectory {
  const ensemble::AtomSet* atoms = nullptr;
  double t_start = 0.0, t_end = 0.0;
  std::vector<double> times;  // wall times appear twice (both-sided rows)
  std::vector<int> row_segment;
  std::vector<std::vector<char>> segment_active;
  std::vector<cvec> alpha;  // [row][atom]

  int n_atoms() const { return atoms->size(); }
  int n_rows() const { return static_cast<int>(times.size()); }
  bool is_active(int row, int n) const {
    return segment_active[row_segment[row]][n] != 0;
  }
  double population(int row) const {
    double s = 0.0;
    for (const auto& a : alpha[row]) s += std::norm(a);
    return s;
  }
  double active_population(int row) const {
    double s = 0.0;
    for (int n = 0; n < n_atoms(); ++n)
      if (is_active(row, n)) s += std::norm(alpha[row][n]);
    return s;
  }
  double lost_to_walls(int row) const {
    return population(row) - active_population(row);
  }
};

// Eq.-of-motion integration of the single-excitation amplitudes,
// amplitude-per-atom, with the sinc couplings evaluated from exact
// ballistic distances at every stage.
inline SingleTrajectory decay_single(const cvec& alpha0,
                                     const ensemble::AtomSet& atoms,
                                     const PhysicalConfig& cfg, double t0,
                                     double t1, double tol,
                                     double sample_dt = 0.01) {
  int N = atoms.size();
  if (static_cast<int>(alpha0.size()) != N)
    throw UsageError("decay_single: one amplitude per atom required");
  auto seg = detail::segment_window(atoms, t0, t1, sample_dt);

  SingleTrajectory traj;
  traj.atoms = &atoms;
  traj.t_start = t0;
  traj.t_end = t1;
  traj.times = seg.row_times;
  traj.row_segment = seg.row_segment;
  traj.segment_active = seg.segment_active;
  traj.alpha.reserve(traj.times.size());

  double half_gamma = 0.5 * cfg.gamma();
  double ke = cfg.ke();
  cvec y = alpha0;
  std::vector<double> xs(N), ys(N), zs(N);
  std::vector<int> act;

  OdeOptions opt;
  opt.rtol = tol;
  opt.atol = tol * 1e-2;

  std::size_t row = 0;
  for (std::size_t si = 0; si + 1 < seg.seg_edges.size(); ++si) {
    double a = seg.seg_edges[si], b = seg.seg_edges[si + 1];
    const auto& mask = seg.segment_active[si];
    act.clear();
    for (int n = 0; n < N; ++n)
      if (mask[n]) act.push_back(n);

    auto rhs = [&](double t, const cvec& v, cvec& dv) {
      for (int n : act) {
        xs[n] = atoms.x[n] + atoms.vx[n] * t;
        ys[n] = atoms.y[n] + atoms.vy[n] * t;
        zs[n] = atoms.z[n] + atoms.vz[n] * t;
      }
      std::fill(dv.begin(), dv.end(), complex<double>(0.0, 0.0));
      for (std::size_t i = 0; i < act.size(); ++i) {
        int n = act[i];
        dv[n] += v[n];  // self term, sinc(0) = 1
        for (std::size_t j = i + 1; j < act.size(); ++j) {
          int m = act[j];
          double dx = xs[n] - xs[m], dy = ys[n] - ys[m], dz = zs[n] - zs[m];
          double c = sinc(ke * std::sqrt(dx * dx + dy * dy + dz * dz));
          dv[n] += c * v[m];
          dv[m] += c * v[n];
        }
      }
      for (int n : act) dv[n] *= -half_gamma;
    };

    std::vector<double> samples;
    while (row < traj.times.size() &&
           seg.row_segment[row] == static_cast<int>(si)) {
      samples.push_back(traj.times[row]);
      ++row;
    }
    integrate_dopri5(rhs, a, b, y, opt, {}, samples,
                     [&](double, const cvec& v) { traj.alpha.push_back(v); });
  }
  return traj;
}

struct AngularProfile {
  std::vector<double> theta;  // uniform grid
  std::vector<double> times;  // row times of the source trajectory
  std::vector<std::vector<double>> density;     // emission density [row][theta]
  std::vector<std::vector<double>> cumulative;  // time integral up to row

  // Plain trapezoid over the theta grid of the emitted-population density.
  double integral(int row) const {
    const auto& c = cumulative[row];
    double h = theta[1] - theta[0];
    double s = 0.5 * (c.front() + c.back());
    for (std::size_t i = 1; i + 1 < c.size(); ++i) s += c[i];
    return s * h;
  }
  double final_integral() const {
    return integral(static_cast<int>(times.size()) - 1);
  }
};

namespace detail {

inline void accumulate_cumulative(AngularProfile& p) {
  p.cumulative.assign(p.density.size(),
                      std::vector<double>(p.theta.size(), 0.0));
  for (std::size_t r = 1; r < p.density.size(); ++r) {
    double w = 0.5 * (p.times[r] - p.times[r - 1]);
    for (std::size_t i = 0; i < p.theta.size(); ++i)
      p.cumulative[r][i] = p.cumulative[r - 1][i] +
                           w * (p.density[r][i] + p.density[r - 1][i]);
  }
}

}  // namespace detail

// Angular photon density of the single excitation: the azimuth-averaged
// plane-wave kernel per atom pair, accumulated in time by trapezoid over
// the trajectory rows.  theta_max below pi restricts the grid to a cone
// (the columns are independent, so a partial grid is exact there).
inline AngularProfile angular_density(const SingleTrajectory& traj,
                                      const PhysicalConfig& cfg,
                                      int theta_points,
                                      double theta_max = units::pi) {
  if (theta_points < 2) throw UsageError("angular_density: need >= 2 points");
  if (theta_max <= 0.0 || theta_max > units::pi + 1e-12)
    throw UsageError("angular_density: theta_max outside (0, pi]");
  const ensemble::AtomSet& atoms = *traj.atoms;
  int N = traj.n_atoms();
  double ke = cfg.ke();
  double half_gamma = 0.5 * cfg.gamma();

  AngularProfile prof;
  prof.theta.resize(theta_points);
  std::vector<double> cth(theta_points), sth(theta_points);
  for (int i = 0; i < theta_points; ++i) {
    prof.theta[i] = theta_max * i / (theta_points - 1.0);
    cth[i] = std::cos(prof.theta[i]);
    sth[i] = std::sin(prof.theta[i]);
  }
  prof.times = traj.times;
  prof.density.assign(traj.times.size(),
                      std::vector<double>(theta_points, 0.0));

  std::vector<int> act;
  std::vector<double> xs(N), ys(N), zs(N);
  for (int r = 0; r < traj.n_rows(); ++r) {
    double t = traj.times[r];
    act.clear();
    for (int n = 0; n < N; ++n)
      if (traj.is_active(r, n)) act.push_back(n);
    for (int n : act) {
      xs[n] = atoms.x[n] + atoms.vx[n] * t;
      ys[n] = atoms.y[n] + atoms.vy[n] * t;
      zs[n] = atoms.z[n] + atoms.vz[n] * t;
    }
    const cvec& al = traj.alpha[r];
    auto& out = prof.density[r];

    double diag = 0.0;
    for (int n : act) diag += std::norm(al[n]);
    for (int i = 0; i < theta_points; ++i) out[i] = diag;

    for (std::size_t i = 0; i < act.size(); ++i) {
      int n = act[i];
      for (std::size_t j = i + 1; j < act.size(); ++j) {
        int m = act[j];
        complex<double> a = al[n] * std::conj(al[m]);
        double dpar = xs[n] - xs[m];
        double dy = ys[n] - ys[m], dz = zs[n] - zs[m];
        double dperp = std::sqrt(dy * dy + dz * dz);
        double kp = ke * dpar, kq = ke * dperp;
        for (int q = 0; q < theta_points; ++q) {
          double phi = kp * cth[q];
          double re2 = 2.0 * (a.real() * std::cos(phi) +
                              a.imag() * std::sin(phi));
          out[q] += re2 * bessel_j0(kq * sth[q]);
        }
      }
    }
    for (int q = 0; q < theta_points; ++q) out[q] *= half_gamma * sth[q];
  }
  detail::accumulate_cumulative(prof);
  return prof;
}

struct RateSeries {
  std::vector<double> times;
  std::vector<double> values;
};

// Instantaneous collective decay rate in units of the single-atom rate,
// from the equations of motion directly (no numerical differentiation),
// normalized to the initial excited population.
inline RateSeries emission_rate(const SingleTrajectory& traj,
                                const PhysicalConfig& cfg) {
  const ensemble::AtomSet& atoms = *traj.atoms;
  int N = traj.n_atoms();
  double ke = cfg.ke();
  double p0 = traj.population(0);
  if (p0 <= 0.0) throw UsageError("emission_rate: empty initial state");

  RateSeries rs;
  rs.times = traj.times;
  rs.values.assign(traj.times.size(), 0.0);
  std::vector<int> act;
  std::vector<double> xs(N), ys(N), zs(N);
  for (int r = 0; r < traj.n_rows(); ++r) {
    double t = traj.times[r];
    act.clear();
    for (int n = 0; n < N; ++n)
      if (traj.is_active(r, n)) act.push_back(n);
    for (int n : act) {
      xs[n] = atoms.x[n] + atoms.vx[n] * t;
      ys[n] = atoms.y[n] + atoms.vy[n] * t;
      zs[n] = atoms.z[n] + atoms.vz[n] * t;
    }
    const cvec& al = traj.alpha[r];
    double s = 0.0;
    for (std::size_t i = 0; i < act.size(); ++i) {
      int n = act[i];
      s += std::norm(al[n]);
      for (std::size_t j = i + 1; j < act.size(); ++j) {
        int m = act[j];
        double dx = xs[n] - xs[m], dy = ys[n] - ys[m], dz = zs[n] - zs[m];
        double d = std::sqrt(dx * dx + dy * dy + dz * dz);
        s += 2.0 * (al[n] * std::conj(al[m])).real() * sinc(ke * d);
      }
    }
    rs.values[r] = s / p0;
  }
  return rs;
}

struct DoubleTrajectory {
  const ensemble::AtomSet* atoms = nullptr;
  double t_start = 0.0, t_end = 0.0;
  std::vector<double> times;
  std::vector<int> row_segment;
  std::vector<std::vector<char>> segment_active;
  std::vector<cvec> alpha2;  // [row][pair n<m]

  int n_atoms() const { return atoms->size(); }
  int n_rows() const { return static_cast<int>(times.size()); }
  bool is_active(int row, int n) const {
    return segment_active[row_segment[row]][n] != 0;
  }
  double population(int row) const {
    double s = 0.0;
    for (const auto& a : alpha2[row]) s += std::norm(a);
    return s;
  }
};

// Pair-amplitude decay: each amplitude is damped by the other amplitudes
// that share one of its atoms, weighted by the sinc coupling seen from the
// non-shared atom.  Pairs are stored n<m and extended symmetrically.
inline DoubleTrajectory decay_double(const cvec& alpha20,
                                     const ensemble::AtomSet& atoms,
                                     const PhysicalConfig& cfg, double t0,
                                     double t1, double tol,
                                     double sample_dt = 0.01) {
  int N = atoms.size();
  int P = detail::pair_count(N);
  if (static_cast<int>(alpha20.size()) != P)
    throw UsageError("decay_double: pair amplitude count does not match "
                     "the atom count");
  auto seg = detail::segment_window(atoms, t0, t1, sample_dt);

  DoubleTrajectory traj;
  traj.atoms = &atoms;
  traj.t_start = t0;
  traj.t_end = t1;
  traj.times = seg.row_times;
  traj.row_segment = seg.row_segment;
  traj.segment_active = seg.segment_active;
  traj.alpha2.reserve(traj.times.size());

  double half_gamma = 0.5 * cfg.gamma();
  double ke = cfg.ke();
  cvec y = alpha20;
  std::vector<double> xs(N), ys(N), zs(N);
  std::vector<double> S(static_cast<std::size_t>(N) * N);
  std::vector<int> act;

  OdeOptions opt;
  opt.rtol = tol;
  opt.atol = tol * 1e-2;

  auto pair_amp = [&](const cvec& v, int a, int b) -> complex<double> {
    if (a == b) return complex<double>(0.0, 0.0);
    return a < b ? v[detail::pair_index(a, b, N)]
                 : v[detail::pair_index(b, a, N)];
  };

  std::size_t row = 0;
  for (std::size_t si = 0; si + 1 < seg.seg_edges.size(); ++si) {
    double a = seg.seg_edges[si], b = seg.seg_edges[si + 1];
    const auto& mask = seg.segment_active[si];
    act.clear();
    for (int n = 0; n < N; ++n)
      if (mask[n]) act.push_back(n);

    auto rhs = [&](double t, const cvec& v, cvec& dv) {
      for (int n : act) {
        xs[n] = atoms.x[n] + atoms.vx[n] * t;
        ys[n] = atoms.y[n] + atoms.vy[n] * t;
        zs[n] = atoms.z[n] + atoms.vz[n] * t;
      }
      for (std::size_t i = 0; i < act.size(); ++i) {
        int n = act[i];
        S[static_cast<std::size_t>(n) * N + n] = 1.0;
        for (std::size_t j = i + 1; j < act.size(); ++j) {
          int m = act[j];
          double dx = xs[n] - xs[m], dy = ys[n] - ys[m], dz = zs[n] - zs[m];
          double c = sinc(ke * std::sqrt(dx * dx + dy * dy + dz * dz));
          S[static_cast<std::size_t>(n) * N + m] = c;
          S[static_cast<std::size_t>(m) * N + n] = c;
        }
      }
      std::fill(dv.begin(), dv.end(), complex<double>(0.0, 0.0));
      for (std::size_t i = 0; i < act.size(); ++i) {
        int n = act[i];
        for (std::size_t j = i + 1; j < act.size(); ++j) {
          int m = act[j];
          complex<double> acc(0.0, 0.0);
          for (int l : act) {
            if (l != n)
              acc += pair_amp(v, n, l) * S[static_cast<std::size_t>(m) * N + l];
            if (l != m)
              acc += pair_amp(v, m, l) * S[static_cast<std::size_t>(n) * N + l];
          }
          dv[detail::pair_index(n, m, N)] = -half_gamma * acc;
        }
      }
    };

    std::vector<double> samples;
    while (row < traj.times.size() &&
           seg.row_segment[row] == static_cast<int>(si)) {
      samples.push_back(traj.times[row]);
      ++row;
    }
    integrate_dopri5(rhs, a, b, y, opt, {}, samples,
                     [&](double, const cvec& v) { traj.alpha2.push_back(v); });
  }
  return traj;
}

namespace detail {

// Per-row correlation of pair amplitudes sharing an atom:
//   D[m]    = sum_{n != m} |alpha_{n,m}|^2
//   C[m][l] = sum_{n != m,l} alpha_{n,m} alpha*_{n,l}   (m < l)
// Only rows over active atoms contribute.  This is the O(N^3) step.
struct PairCorrelation {
  std::vector<double> D;           // [atom]
  std::vector<complex<double>> C;  // [pair m<l]
};

inline void pair_correlation(const DoubleTrajectory& traj, int row,
                             PairCorrelation& out) {
  int N = traj.n_atoms();
  out.D.assign(N, 0.0);
  out.C.assign(pair_count(N), complex<double>(0.0, 0.0));
  const cvec& v = traj.alpha2[row];
  auto amp = [&](int a, int b) -> complex<double> {
    return a < b ? v[pair_index(a, b, N)] : v[pair_index(b, a, N)];
  };
  std::vector<int> act;
  for (int n = 0; n < N; ++n)
    if (traj.is_active(row, n)) act.push_back(n);
  for (int n : act) {
    for (std::size_t i = 0; i < act.size(); ++i) {
      int m = act[i];
      if (m == n) continue;
      complex<double> anm = amp(n, m);
      out.D[m] += std::norm(anm);
      for (std::size_t j = i + 1; j < act.size(); ++j) {
        int l = act[j];
        if (l == n) continue;
        out.C[pair_index(m, l, N)] += anm * std::conj(amp(n, l));
      }
    }
  }
}

inline void check_n3_budget(const DoubleTrajectory& traj, const char* who) {
  long long n = traj.n_atoms();
  long long work = n * n * n * static_cast<long long>(traj.n_rows());
  if (work > n3_budget())
    throw UsageError(std::string(who) +
                     ": N^3 x timesteps = " + std::to_string(work) +
                     " exceeds the budget; raise RYDEMIT_N3_BUDGET to allow");
}

}  // namespace detail

// Angular density of the first photon out of a double excitation.  Same
// kernel as the single-photon case, applied to the two partner atoms the
// amplitudes share.
inline AngularProfile first_photon_density(const DoubleTrajectory& traj,
                                           const PhysicalConfig& cfg,
                                           int theta_points,
                                           double theta_max = units::pi) {
  if (theta_points < 2)
    throw UsageError("first_photon_density: need >= 2 points");
  if (theta_max <= 0.0 || theta_max > units::pi + 1e-12)
    throw UsageError("first_photon_density: theta_max outside (0, pi]");
  detail::check_n3_budget(traj, "first_photon_density");

  const ensemble::AtomSet& atoms = *traj.atoms;
  int N = traj.n_atoms();
  double ke = cfg.ke();
  double half_gamma = 0.5 * cfg.gamma();

  AngularProfile prof;
  prof.theta.resize(theta_points);
  std::vector<double> cth(theta_points), sth(theta_points);
  for (int i = 0; i < theta_points; ++i) {
    prof.theta[i] = theta_max * i / (theta_points - 1.0);
    cth[i] = std::cos(prof.theta[i]);
    sth[i] = std::sin(prof.theta[i]);
  }
  prof.times = traj.times;
  prof.density.assign(traj.times.size(),
                      std::vector<double>(theta_points, 0.0));

  detail::PairCorrelation corr;
  std::vector<double> xs(N), ys(N), zs(N);
  std::vector<int> act;
  for (int r = 0; r < traj.n_rows(); ++r) {
    double t = traj.times[r];
    detail::pair_correlation(traj, r, corr);
    act.clear();
    for (int n = 0; n < N; ++n)
      if (traj.is_active(r, n)) act.push_back(n);
    for (int n : act) {
      xs[n] = atoms.x[n] + atoms.vx[n] * t;
      ys[n] = atoms.y[n] + atoms.vy[n] * t;
      zs[n] = atoms.z[n] + atoms.vz[n] * t;
    }
    auto& out = prof.density[r];
    double diag = 0.0;
    for (int m : act) diag += corr.D[m];
    for (int q = 0; q < theta_points; ++q) out[q] = diag;

    for (std::size_t i = 0; i < act.size(); ++i) {
      int m = act[i];
      for (std::size_t j = i + 1; j < act.size(); ++j) {
        int l = act[j];
        complex<double> c = corr.C[detail::pair_index(m, l, N)];
        if (c == complex<double>(0.0, 0.0)) continue;
        double dpar = xs[m] - xs[l];
        double dy = ys[m] - ys[l], dz = zs[m] - zs[l];
        double dperp = std::sqrt(dy * dy + dz * dz);
        double kp = ke * dpar, kq = ke * dperp;
        for (int q = 0; q < theta_points; ++q) {
          double phi = kp * cth[q];
          double re2 = 2.0 * (c.real() * std::cos(phi) +
                              c.imag() * std::sin(phi));
          out[q] += re2 * bessel_j0(kq * sth[q]);
        }
      }
    }
    for (int q = 0; q < theta_points; ++q) out[q] *= half_gamma * sth[q];
  }
  detail::accumulate_cumulative(prof);
  return prof;
}

// Ratio model for the first photon's mode population entering the
// second-photon rate: maps t - t' to d|beta(t)|^2/dt / |beta(t')|^2.
using BetaRatioModel = std::function<double(double)>;

inline BetaRatioModel exponential_beta_model(const PhysicalConfig& cfg) {
  double gamma = cfg.gamma();
  return [gamma](double dt) { return gamma * std::exp(-gamma * dt); };
}

// Emission rate of the second photon, in units of the single-atom rate:
// the pair correlations are folded with the sinc coupling and convolved
// with the beta ratio model over the elapsed time.
inline RateSeries second_photon_rate(const DoubleTrajectory& traj,
                                     const PhysicalConfig& cfg,
                                     const BetaRatioModel& model = nullptr) {
  detail::check_n3_budget(traj, "second_photon_rate");
  BetaRatioModel ratio = model ? model : exponential_beta_model(cfg);
  const ensemble::AtomSet& atoms = *traj.atoms;
  int N = traj.n_atoms();
  double ke = cfg.ke();
  int R = traj.n_rows();

  // Source term per row: sum_m D_m + cross terms against the pair sinc.
  std::vector<double> source(R, 0.0);
  detail::PairCorrelation corr;
  std::vector<double> xs(N), ys(N), zs(N);
  std::vector<int> act;
  for (int r = 0; r < R; ++r) {
    double t = traj.times[r];
    detail::pair_correlation(traj, r, corr);
    act.clear();
    for (int n = 0; n < N; ++n)
      if (traj.is_active(r, n)) act.push_back(n);
    for (int n : act) {
      xs[n] = atoms.x[n] + atoms.vx[n] * t;
      ys[n] = atoms.y[n] + atoms.vy[n] * t;
      zs[n] = atoms.z[n] + atoms.vz[n] * t;
    }
    double s = 0.0;
    for (int m : act) s += corr.D[m];
    for (std::size_t i = 0; i < act.size(); ++i) {
      int m = act[i];
      for (std::size_t j = i + 1; j < act.size(); ++j) {
        int l = act[j];
        double dx = xs[m] - xs[l], dy = ys[m] - ys[l], dz = zs[m] - zs[l];
        double d = std::sqrt(dx * dx + dy * dy + dz * dz);
        s += 2.0 * corr.C[detail::pair_index(m, l, N)].real() * sinc(ke * d);
      }
    }
    source[r] = s;
  }

  RateSeries rs;
  rs.times = traj.times;
  rs.values.assign(R, 0.0);
  for (int k = 1; k < R; ++k) {
    double acc = 0.0;
    for (int j = 1; j <= k; ++j) {
      double w = 0.5 * (traj.times[j] - traj.times[j - 1]);
      acc += w * (source[j] * ratio(traj.times[k] - traj.times[j]) +
                  source[j - 1] * ratio(traj.times[k] - traj.times[j - 1]));
    }
    rs.values[k] = acc;
  }
  return rs;
}

// One excitation run's hand-off to the decay stage: the atoms it was
// propagated with and the lab-frame amplitude per atom.
struct SingleSample {
  ensemble::AtomSet atoms;
  cvec alpha0;
  double t0 = 0.0;
};

// Concatenate samples in groups, rescaling every amplitude by
// 1/sqrt(group) so the grouped population is the mean of its members'.
inline std::vector<SingleSample> group_samples(
    const std::vector<SingleSample>& samples, int group_size) {
  if (group_size < 1) throw UsageError("group_samples: group size must be >= 1");
  if (samples.empty()) return {};
  if (static_cast<int>(samples.size()) % group_size != 0)
    throw UsageError("group_samples: group size " +
                     std::to_string(group_size) + " does not divide " +
                     std::to_string(samples.size()) + " samples");
  double scale = 1.0 / std::sqrt(static_cast<double>(group_size));
  std::vector<SingleSample> out;
  for (std::size_t i = 0; i < samples.size(); i += group_size) {
    SingleSample g;
    g.t0 = samples[i].t0;
    for (int j = 0; j < group_size; ++j) {
      const SingleSample& s = samples[i + j];
      if (s.t0 != g.t0)
        throw UsageError("group_samples: samples end at different times");
      g.atoms.append(s.atoms);
      for (const auto& a : s.alpha0) g.alpha0.push_back(a * scale);
    }
    out.push_back(std::move(g));
  }
  return out;
}

// Emitted population inside a cone, from the final cumulative profile.
inline double cone_population(const AngularProfile& prof, double theta_max) {
  if (theta_max < 0.0 || theta_max > units::pi + 1e-12)
    throw UsageError("cone_population: angle outside [0, pi]");
  const auto& c = prof.cumulative.back();
  double span = prof.theta.back();
  if (theta_max > span + 1e-9)
    throw UsageError("cone_population: profile only spans up to theta = " +
                     std::to_string(span));
  double h = prof.theta[1] - prof.theta[0];
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < prof.theta.size(); ++i) {
    if (prof.theta[i + 1] <= theta_max) {
      s += 0.5 * (c[i] + c[i + 1]) * h;
      continue;
    }
    if (prof.theta[i] < theta_max) {
      double frac = (theta_max - prof.theta[i]) / h;
      double c_end = c[i] + (c[i + 1] - c[i]) * frac;
      s += 0.5 * (c[i] + c_end) * (theta_max - prof.theta[i]);
    }
    break;
  }
  return s;
}

// Reference collective state: equal weights with the phase each atom would
// imprint on a photon along the net wavevector at time t_w.
inline cvec ideal_w_amplitudes(const ensemble::AtomSet& atoms,
                               const PhysicalConfig& cfg, double t_w) {
  int N = atoms.size();
  if (N < 1) throw UsageError("ideal_w_amplitudes: empty atom set");
  cvec a(N);
  double norm = 1.0 / std::sqrt(static_cast<double>(N));
  for (int n = 0; n < N; ++n) {
    double phase = cfg.k0() * (atoms.x[n] + atoms.vx[n] * t_w);
    a[n] = norm * std::exp(complex<double>(0.0, phase));
  }
  return a;
}

// Same timed phases with caller-supplied weights (any scale; normalized
// here). Keeps this header ignorant of where the weights come from.
inline cvec ideal_w_amplitudes(const ensemble::AtomSet& atoms,
                               const PhysicalConfig& cfg, double t_w,
                               const std::vector<double>& weights) {
  int N = atoms.size();
  if (N < 1) throw UsageError("ideal_w_amplitudes: empty atom set");
  if (static_cast<int>(weights.size()) != N)
    throw UsageError("ideal_w_amplitudes: one weight per atom required");
  double norm = 0.0;
  for (double w : weights) norm += w * w;
  if (norm <= 0.0) throw UsageError("ideal_w_amplitudes: weights vanish");
  norm = std::sqrt(norm);
  cvec a(N);
  for (int n = 0; n < N; ++n) {
    double phase = cfg.k0() * (atoms.x[n] + atoms.vx[n] * t_w);
    a[n] = (weights[n] / norm) * std::exp(complex<double>(0.0, phase));
  }
  return a;
}

// Theta integral of the emission kernel at one pair geometry, against
// which the closed-form sinc coupling can be checked.  Endpoint-corrected
// trapezoid: the Euler-Maclaurin h^2 term only involves the endpoint
// derivatives, which reduce to -cos(k d_par) analytically.
inline double kernel_theta_integral(double k, double dpar, double dperp,
                                    int points = 2881) {
  double h = units::pi / (points - 1.0);
  double s = 0.0;
  for (int i = 0; i < points; ++i) {
    double th = h * i;
    double f = 0.5 * std::sin(th) * std::cos(k * dpar * std::cos(th)) *
               bessel_j0(k * dperp * std::sin(th));
    s += (i == 0 || i == points - 1) ? 0.5 * f : f;
  }
  return s * h + h * h / 12.0 * std::cos(k * dpar);
}

}  // namespace rydemit::decay
