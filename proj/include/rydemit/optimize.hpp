#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "rydemit/config.hpp"
#include "rydemit/ensemble.hpp"
#include "rydemit/error.hpp"
#include "rydemit/excitation.hpp"
#include "rydemit/hilbert.hpp"

// Derivative-free pulse optimization: a box-bounded Nelder-Mead simplex
// over the pulse timing/amplitude parameters, maximizing the mean overlap
// with the collective target state across a fixed set of atom samples.

namespace rydemit::optimize {

struct NelderMeadOptions {
  int max_evals = 2000;
  double xtol = 1e-6;   // simplex extent per coordinate
  double ftol = 1e-9;   // function value spread
};

struct TraceRecord {
  int evals;
  double best;
  double worst;
  std::vector<double> x;  // best vertex
};

struct OptimizationTrace {
  std::vector<TraceRecord> records;
  std::string terminal_reason;
  int evals = 0;
};

struct NelderMeadResult {
  std::vector<double> x;
  double value = 0.0;
  OptimizationTrace trace;
};

namespace detail {

inline std::vector<double> project(std::vector<double> x,
                                   const std::vector<double>& lo,
                                   const std::vector<double>& hi) {
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = std::clamp(x[i], lo[i], hi[i]);
  return x;
}

}  // namespace detail

// Standard simplex minimization (reflection 1, expansion 2, contraction
// 0.5, shrink 0.5) with bound handling by projection: every vertex is
// clamped into the box before it is evaluated, so no out-of-bounds point
// is ever seen by the objective.  Deterministic for fixed inputs.
template <typename F>
NelderMeadResult nelder_mead(F&& f, const std::vector<double>& x0,
                             const std::vector<double>& lo,
                             const std::vector<double>& hi,
                             const NelderMeadOptions& opt = {}) {
  std::size_t dim = x0.size();
  if (lo.size() != dim || hi.size() != dim)
    throw UsageError("nelder_mead: bounds do not match the parameter count");
  for (std::size_t i = 0; i < dim; ++i)
    if (lo[i] > hi[i]) throw UsageError("nelder_mead: empty bound interval");

  NelderMeadResult res;
  auto& trace = res.trace;
  bool bad_value = false;
  auto eval = [&](const std::vector<double>& x) {
    double v = f(x);
    ++trace.evals;
    if (!std::isfinite(v)) bad_value = true;
    return v;
  };

  // Initial simplex: per-coordinate steps of 5% of each bound interval,
  // flipped where the step would leave the box.
  std::vector<std::vector<double>> vx;
  std::vector<double> vf;
  vx.push_back(detail::project(x0, lo, hi));
  for (std::size_t i = 0; i < dim; ++i) {
    std::vector<double> p = vx[0];
    double step = 0.05 * (hi[i] - lo[i]);
    if (step == 0.0) step = 0.05 * std::max(1.0, std::fabs(p[i]));
    p[i] = p[i] + step <= hi[i] ? p[i] + step : p[i] - step;
    vx.push_back(detail::project(std::move(p), lo, hi));
  }
  for (auto& p : vx) vf.push_back(eval(p));

  std::vector<std::size_t> order(vx.size());
  auto sort_simplex = [&] {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return vf[a] < vf[b]; });
  };
  auto record = [&] {
    sort_simplex();
    trace.records.push_back(
        {trace.evals, vf[order[0]], vf[order.back()], vx[order[0]]});
  };
  record();

  while (true) {
    if (bad_value) {
      trace.terminal_reason = "non-finite objective value";
      break;
    }
    if (trace.evals >= opt.max_evals) {
      trace.terminal_reason = "evaluation budget exhausted";
      break;
    }
    std::size_t best = order[0], worst = order.back(),
                second = order[order.size() - 2];
    double extent = 0.0, spread = vf[worst] - vf[best];
    for (std::size_t v = 1; v < order.size(); ++v)
      for (std::size_t i = 0; i < dim; ++i)
        extent = std::max(extent,
                          std::fabs(vx[order[v]][i] - vx[best][i]));
    if (extent <= opt.xtol) {
      trace.terminal_reason = "simplex collapsed below xtol";
      break;
    }
    if (spread <= opt.ftol) {
      trace.terminal_reason = "function spread below ftol";
      break;
    }

    std::vector<double> centroid(dim, 0.0);
    for (std::size_t v = 0; v < order.size(); ++v) {
      if (order[v] == worst) continue;
      for (std::size_t i = 0; i < dim; ++i) centroid[i] += vx[order[v]][i];
    }
    for (double& c : centroid) c /= static_cast<double>(dim);

    auto blend = [&](double coeff) {
      std::vector<double> p(dim);
      for (std::size_t i = 0; i < dim; ++i)
        p[i] = centroid[i] + coeff * (centroid[i] - vx[worst][i]);
      return detail::project(std::move(p), lo, hi);
    };

    std::vector<double> xr = blend(1.0);
    double fr = eval(xr);
    if (fr < vf[best]) {
      std::vector<double> xe = blend(2.0);
      double fe = eval(xe);
      if (fe < fr) {
        vx[worst] = std::move(xe);
        vf[worst] = fe;
      } else {
        vx[worst] = std::move(xr);
        vf[worst] = fr;
      }
    } else if (fr < vf[second]) {
      vx[worst] = std::move(xr);
      vf[worst] = fr;
    } else {
      bool outside = fr < vf[worst];
      std::vector<double> xc = blend(outside ? 0.5 : -0.5);
      double fc = eval(xc);
      if (fc < (outside ? fr : vf[worst])) {
        vx[worst] = std::move(xc);
        vf[worst] = fc;
      } else {
        // Shrink everything toward the best vertex.
        for (std::size_t v = 0; v < order.size(); ++v) {
          if (order[v] == best) continue;
          auto& p = vx[order[v]];
          for (std::size_t i = 0; i < dim; ++i)
            p[i] = vx[best][i] + 0.5 * (p[i] - vx[best][i]);
          p = detail::project(std::move(p), lo, hi);
          vf[order[v]] = eval(p);
          if (bad_value) break;
        }
      }
    }
    record();
  }

  sort_simplex();
  res.x = vx[order[0]];
  res.value = vf[order[0]];
  if (trace.terminal_reason.empty())
    trace.terminal_reason = "internal loop exit";  // unreachable
  return res;
}

// Parameter layout for pulse optimization: the nine entries
//   [ts1, ts2, ts3, dt1, dt2, dt3, om1, om2, om3]
// with the end of the latest pulse as the derived total duration.  When
// lasers 1 and 2 are tied, entries 1 and 4 are slaved to 0 and 3.
inline constexpr int kParamCount = 9;

struct OptimizationProblem {
  PhysicalConfig physical;
  std::vector<ensemble::AtomSet> samples;
  double t_w = 2.0;
  std::string weighting = "rabi";
  bool tied12 = true;
  double t0_min = 1.25, t0_max = 1.75;
  double tolerance = 1e-8;
  std::vector<double> lower, upper;  // 9-entry box

  OptimizationProblem() {
    double om_lo = units::ghz(0.5), om_hi = units::ghz(16.0);
    lower = {0.0, 0.0, 0.0, 0.05, 0.05, 0.05, om_lo, om_lo, om_lo};
    upper = {1.7, 1.7, 1.7, 1.75, 1.75, 1.75, om_hi, om_hi, om_hi};
  }

  // Per-sample structures that do not depend on the pulse parameters.
  struct SampleContext {
    hilbert::TruncatedBasis basis;
    ensemble::ChannelFits fits;
  };
  std::vector<SampleContext> cache;

  void build_cache() {
    if (!cache.empty()) return;
    for (const auto& atoms : samples) {
      SampleContext ctx{hilbert::TruncatedBasis(atoms.size()),
                        ensemble::polyfit_channels(atoms, physical, 0.0,
                                                   t0_max)};
      cache.push_back(std::move(ctx));
    }
  }

  std::vector<int> active_indices() const {
    if (tied12) return {0, 2, 3, 5, 6, 7, 8};
    return {0, 1, 2, 3, 4, 5, 6, 7, 8};
  }
};

inline std::vector<double> encode_pulses(const PulseSequence& p) {
  return {p.start[0],    p.start[1],    p.start[2],
          p.duration[0], p.duration[1], p.duration[2],
          p.omega[0],    p.omega[1],    p.omega[2]};
}

// Decode a parameter vector into a pulse sequence, repairing the derived
// total-duration constraint: box-clamp, then rescale all six time entries
// uniformly when the latest pulse end leaves [t0_min, t0_max], then clamp
// once more.  Total and deterministic.
inline PulseSequence decode_pulses(const std::vector<double>& params,
                                   const OptimizationProblem& prob) {
  if (params.size() != kParamCount)
    throw UsageError("decode_pulses: expected a 9-entry parameter vector");
  std::vector<double> p =
      detail::project(params, prob.lower, prob.upper);
  if (prob.tied12) {
    p[1] = p[0];
    p[4] = p[3];
  }
  double t_end = 0.0;
  for (int j = 0; j < 3; ++j) t_end = std::max(t_end, p[j] + p[3 + j]);
  if (t_end < prob.t0_min || t_end > prob.t0_max) {
    double scale = std::clamp(t_end, prob.t0_min, prob.t0_max) / t_end;
    for (int j = 0; j < 6; ++j)
      p[j] = std::clamp(p[j] * scale, prob.lower[j], prob.upper[j]);
  }
  PulseSequence out;
  out.tied12 = prob.tied12;
  for (int j = 0; j < 3; ++j) {
    out.start[j] = p[j];
    out.duration[j] = p[3 + j];
    out.omega[j] = p[6 + j];
    out.delta[j] = j == 0   ? prob.physical.delta1
                   : j == 1 ? prob.physical.delta2
                            : prob.physical.delta3;
  }
  return out;
}

// Mean overlap with the weighted collective target over all samples, for
// one parameter vector.  Deterministic: fixed sample order, serial mean.
inline double objective_fw(const std::vector<double>& params,
                           OptimizationProblem& prob) {
  prob.build_cache();
  PulseSequence pulses = decode_pulses(params, prob);
  double window_end = std::clamp(pulses.t0(), prob.t0_min, prob.t0_max);
  double acc = 0.0;
  for (std::size_t s = 0; s < prob.samples.size(); ++s) {
    try {
      const auto& atoms = prob.samples[s];
      const auto& ctx = prob.cache[s];
      auto H = excite::assemble_hamiltonian(atoms, prob.physical, pulses,
                                            ctx.basis, ctx.fits);
      auto psi0 = excite::ground_state(ctx.basis);
      auto psi = excite::propagate(H, psi0, 0.0, window_end, prob.tolerance);
      auto lab = excite::to_lab_frame(psi, H);
      auto target = excite::w_state_target(atoms, prob.physical, pulses,
                                           ctx.basis, prob.t_w,
                                           prob.weighting);
      acc += excite::fidelity(lab, target);
    } catch (const Error& e) {
      throw Error("objective: sample " + std::to_string(s) + ": " +
                  e.what());
    }
  }
  return acc / static_cast<double>(prob.samples.size());
}

struct OptimizationResult {
  PulseSequence pulses;
  double fidelity = 0.0;
  OptimizationTrace trace;
};

// Drive the simplex on the active (untied) parameters, negating the
// objective so the minimizer maximizes the mean fidelity.
inline OptimizationResult run_optimization(OptimizationProblem& prob,
                                           const PulseSequence& initial,
                                           const NelderMeadOptions& opt = {}) {
  if (prob.samples.empty())
    throw UsageError("run_optimization: no atom samples supplied");
  std::vector<double> full0 = encode_pulses(initial);
  std::vector<int> act = prob.active_indices();
  std::vector<double> x0, lo, hi;
  for (int i : act) {
    x0.push_back(full0[i]);
    lo.push_back(prob.lower[i]);
    hi.push_back(prob.upper[i]);
  }
  auto expand = [&](const std::vector<double>& x) {
    std::vector<double> full = full0;
    for (std::size_t i = 0; i < act.size(); ++i) full[act[i]] = x[i];
    return full;
  };
  auto wrapped = [&](const std::vector<double>& x) {
    return -objective_fw(expand(x), prob);
  };
  NelderMeadResult nm = nelder_mead(wrapped, x0, lo, hi, opt);
  OptimizationResult res;
  res.pulses = decode_pulses(expand(nm.x), prob);
  res.fidelity = -nm.value;
  res.trace = std::move(nm.trace);
  return res;
}

}  // namespace rydemit::optimize
