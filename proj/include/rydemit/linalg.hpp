#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

#include "rydemit/error.hpp"

// Small dense linear algebra: just enough for least-squares polynomial fits
// and line fits.  Everything is column-major double; sizes here are tiny
// (order <= 10, 64 sample rows), so clarity beats blocking.

namespace rydemit {

// Polynomial in t over a fixed window, monomial coefficients c[0] + c[1] t + ...
// Fits never extrapolate; evaluation outside the window is a programming
// error, checked in debug builds.
struct Poly {
  double t_lo = 0.0;
  double t_hi = 0.0;
  std::vector<double> c;

  double eval(double t) const {
    assert(t >= t_lo - 1e-9 * (1.0 + std::fabs(t_lo)) &&
           t <= t_hi + 1e-9 * (1.0 + std::fabs(t_hi)) &&
           "polynomial evaluated outside its fit window");
    double y = 0.0;
    for (std::size_t k = c.size(); k-- > 0;) y = y * t + c[k];
    return y;
  }

  int order() const { return static_cast<int>(c.size()) - 1; }
};

// Product of two polynomials sharing a window (used for two-envelope
// coupling coefficients).
inline Poly poly_mul(const Poly& a, const Poly& b) {
  assert(a.t_lo == b.t_lo && a.t_hi == b.t_hi);
  Poly r;
  r.t_lo = a.t_lo;
  r.t_hi = a.t_hi;
  r.c.assign(a.c.size() + b.c.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.c.size(); ++i)
    for (std::size_t j = 0; j < b.c.size(); ++j) r.c[i + j] += a.c[i] * b.c[j];
  return r;
}

namespace detail {

// Householder QR least squares: minimizes |A x - b|, A is m x n column-major
// with m >= n.  A and b are destroyed.  Returns x (size n).
inline std::vector<double> qr_solve(std::vector<double>& A,
                                    std::vector<double>& b, std::size_t m,
                                    std::size_t n) {
  if (m < n) throw FitError("least squares: fewer samples than coefficients");
  auto a = [&](std::size_t i, std::size_t j) -> double& { return A[j * m + i]; };
  for (std::size_t k = 0; k < n; ++k) {
    double norm = 0.0;
    for (std::size_t i = k; i < m; ++i) norm += a(i, k) * a(i, k);
    norm = std::sqrt(norm);
    if (norm == 0.0) throw FitError("least squares: rank-deficient system");
    if (a(k, k) > 0) norm = -norm;  // choose sign to avoid cancellation
    for (std::size_t i = k; i < m; ++i) a(i, k) /= norm;
    a(k, k) -= 1.0;
    // Apply the reflector (I - v v^T / v_k) to trailing columns and to b.
    for (std::size_t j = k + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = k; i < m; ++i) s += a(i, k) * a(i, j);
      s /= a(k, k);
      for (std::size_t i = k; i < m; ++i) a(i, j) += s * a(i, k);
    }
    double s = 0.0;
    for (std::size_t i = k; i < m; ++i) s += a(i, k) * b[i];
    s /= a(k, k);
    for (std::size_t i = k; i < m; ++i) b[i] += s * a(i, k);
    a(k, k) = norm;  // stash R's diagonal
  }
  std::vector<double> x(n);
  for (std::size_t k = n; k-- > 0;) {
    double s = b[k];
    for (std::size_t j = k + 1; j < n; ++j) s -= x[j] * a(k, j);
    if (a(k, k) == 0.0) throw FitError("least squares: singular R");
    x[k] = s / a(k, k);
  }
  return x;
}

}  // namespace detail

// Least-squares polynomial fit of (ts, ys) with the given order.  The fit is
// performed in the scaled variable s in [-1, 1] for conditioning, then the
// coefficients are rebased to plain powers of t so the caller can group
// operators by time power.  max_residual gets the worst absolute misfit.
inline Poly polyfit(const std::vector<double>& ts, const std::vector<double>& ys,
                    int order, double t_lo, double t_hi,
                    double* max_residual = nullptr) {
  if (ts.size() != ys.size() || ts.empty())
    throw FitError("polyfit: empty or mismatched sample arrays");
  if (order < 0) throw FitError("polyfit: negative order");
  std::size_t m = ts.size(), n = static_cast<std::size_t>(order) + 1;
  double mid = 0.5 * (t_lo + t_hi), half = 0.5 * (t_hi - t_lo);
  if (half <= 0) throw FitError("polyfit: empty fit window");
  std::vector<double> A(m * n), b(ys);
  for (std::size_t i = 0; i < m; ++i) {
    double s = (ts[i] - mid) / half, p = 1.0;
    for (std::size_t j = 0; j < n; ++j) {
      A[j * m + i] = p;
      p *= s;
    }
  }
  std::vector<double> coef_s = detail::qr_solve(A, b, m, n);

  // Rebase from s = (t - mid)/half to monomials in t by Horner with
  // polynomial coefficients: p(t) = (...((a_n * L(t)) + a_{n-1}) * L(t) ...)
  // where L(t) = alpha t + beta.
  double alpha = 1.0 / half, beta = -mid / half;
  std::vector<double> ct{0.0};
  for (std::size_t k = n; k-- > 0;) {
    std::vector<double> next(ct.size() + 1, 0.0);
    for (std::size_t i = 0; i < ct.size(); ++i) {
      next[i + 1] += ct[i] * alpha;
      next[i] += ct[i] * beta;
    }
    next.resize(n);  // degree never exceeds order
    next[0] += coef_s[k];
    ct = next;
  }
  Poly p{t_lo, t_hi, ct};
  if (max_residual) {
    double worst = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      worst = std::max(worst, std::fabs(p.eval(ts[i]) - ys[i]));
    *max_residual = worst;
  }
  return p;
}

// Ordinary least-squares line y = a + b x, with R^2.
struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double r2 = 1.0;
};

inline LineFit line_fit(const std::vector<double>& x,
                        const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw FitError("line_fit: need at least two points");
  std::size_t n = x.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw FitError("line_fit: degenerate abscissae");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return f;
}

}  // namespace rydemit
