#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <vector>

#include "rydemit/error.hpp"

// Adaptive embedded Runge-Kutta for complex amplitude vectors: the
// Dormand-Prince 5(4) pair with a PI-free standard step controller.  Hard
// stops at caller-supplied breakpoints (pulse edges, wall collisions) keep
// the right-hand side smooth inside every accepted step, and the integrator
// lands exactly on each requested sample time, so no dense-output
// interpolation is ever needed.

namespace rydemit {

using cvec = std::vector<std::complex<double>>;

// dy/dt = f(t, y, dy)
using OdeRhs = std::function<void(double, const cvec&, cvec&)>;

struct OdeOptions {
  double rtol = 1e-8;
  double atol = 1e-10;
  double h_max = 0.0;           // 0: no cap
  long max_steps = 50'000'000;  // guard against a silently stuck run
};

namespace detail {

// Dormand-Prince coefficients (the classic 5(4) tableau).
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5,
                        c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                        a53 = 64448.0 / 6561, a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33,
                        a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                        a65 = -5103.0 / 18656;
// 5th-order solution weights (also the a7* row: first-same-as-last).
inline constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                        b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// Error weights: b - b_hat of the embedded 4th-order solution.
inline constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695,
                        e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                        e6 = 22.0 / 525, e7 = -1.0 / 40;

}  // namespace detail

// Integrate from t0 to t1.  `events` are hard stop times (sorted or not;
// duplicates fine): the step size is clamped so each event is hit exactly
// and the RK stages never straddle it.  `sample_times` (must be within
// [t0, t1]) are also landed on exactly and reported through `sink`.
// The final state is left in y.
inline void integrate_dopri5(const OdeRhs& f, double t0, double t1, cvec& y,
                             const OdeOptions& opt,
                             std::vector<double> events = {},
                             std::vector<double> sample_times = {},
                             const std::function<void(double, const cvec&)>&
                                 sink = nullptr) {
  if (t1 < t0) throw UsageError("integrate: window end before start");
  // Distances below this are one rounding error in this window's time
  // coordinate.  A stop that close to an edge (or to the current time)
  // would force a sub-epsilon step, so such stops are folded together.
  auto eps_at = [](double x) { return 1e-13 * (1.0 + std::fabs(x)); };
  std::vector<double> stops;
  for (double e : events)
    if (e > t0 + eps_at(t0) && e < t1 - eps_at(t1)) stops.push_back(e);
  for (double s : sample_times) {
    if (s < t0 - 1e-12 || s > t1 + 1e-12)
      throw UsageError("integrate: sample time outside window");
    if (s > t0 + eps_at(t0) && s < t1 - eps_at(t1)) stops.push_back(s);
  }
  stops.push_back(t1);
  std::sort(stops.begin(), stops.end());
  std::sort(sample_times.begin(), sample_times.end());

  std::size_t n = y.size();
  cvec k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), ynew(n);
  std::size_t next_sample = 0;
  auto emit_samples_at = [&](double t) {
    while (next_sample < sample_times.size() &&
           std::fabs(sample_times[next_sample] - t) <= 1e-12 + eps_at(t)) {
      if (sink) sink(t, y);
      ++next_sample;
    }
  };
  emit_samples_at(t0);

  double t = t0;
  double span = t1 - t0;
  if (span == 0.0) return;

  using namespace detail;
  f(t, y, k1);
  bool fsal_valid = true;

  // Initial step: conservative estimate from the first derivative scale.
  double ynorm = 0.0, fnorm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ynorm = std::max(ynorm, std::abs(y[i]));
    fnorm = std::max(fnorm, std::abs(k1[i]));
  }
  double h = fnorm > 0 ? 0.01 * (ynorm + opt.atol) / fnorm : 0.01 * span;
  h = std::min(h, span);
  if (opt.h_max > 0) h = std::min(h, opt.h_max);

  std::size_t next_stop = 0;
  long steps = 0;
  while (t1 - t > eps_at(t1)) {
    while (next_stop < stops.size() && stops[next_stop] <= t + eps_at(t))
      ++next_stop;
    double t_stop = next_stop < stops.size() ? stops[next_stop] : t1;
    bool clipped = t + h >= t_stop;
    double h_try = clipped ? t_stop - t : h;
    if (h_try < 1e-14 * (1.0 + std::fabs(t)))
      throw StiffnessError("integrate: step size underflow at t = " +
                           std::to_string(t));
    if (++steps > opt.max_steps)
      throw StiffnessError("integrate: step budget exhausted at t = " +
                           std::to_string(t));
    if (!fsal_valid) {
      f(t, y, k1);
      fsal_valid = true;
    }

    for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h_try * (a21 * k1[i]);
    f(t + c2 * h_try, ytmp, k2);
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + h_try * (a31 * k1[i] + a32 * k2[i]);
    f(t + c3 * h_try, ytmp, k3);
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + h_try * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
    f(t + c4 * h_try, ytmp, k4);
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + h_try * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] +
                                a54 * k4[i]);
    f(t + c5 * h_try, ytmp, k5);
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + h_try * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] +
                                a64 * k4[i] + a65 * k5[i]);
    f(t + h_try, ytmp, k6);
    for (std::size_t i = 0; i < n; ++i)
      ynew[i] = y[i] + h_try * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] +
                                b5 * k5[i] + b6 * k6[i]);
    f(t + h_try, ynew, k7);

    // Weighted RMS of the embedded error.
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::complex<double> e = h_try * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] +
                                        e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
      double scale =
          opt.atol + opt.rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
      double q = std::abs(e) / scale;
      err += q * q;
    }
    err = std::sqrt(err / static_cast<double>(n));

    if (err <= 1.0) {
      t = clipped ? t_stop : t + h_try;
      y.swap(ynew);
      k1.swap(k7);  // first-same-as-last
      emit_samples_at(t);
      // A stop may be a discontinuity of f; stale slopes must not leak.
      if (clipped) fsal_valid = false;
    } else {
      fsal_valid = true;  // k1 still matches (t, y)
    }
    double fac = 0.9 * std::pow(std::max(err, 1e-10), -0.2);
    double h_prop = h_try * std::clamp(fac, 0.2, 5.0);
    // A step clamped onto a stop says nothing about the natural scale, so
    // keep the unclipped proposal alive rather than shrink-locking behind
    // dense sample grids.
    h = (clipped && err <= 1.0) ? std::max(h, h_prop) : h_prop;
    if (opt.h_max > 0) h = std::min(h, opt.h_max);
  }
  // If the loop ended a rounding error short of t1, the edge samples are
  // still owed to the sink.
  emit_samples_at(t1);
}

}  // namespace rydemit
