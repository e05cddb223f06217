#pragma once

#include <cmath>
#include <utility>

namespace bimap::optim {

struct ScalarMinimum {
  double x = 0.0;
  double value = 0.0;
  int evaluations = 0;
};

/// Golden-section search for the minimizer of `f` on [lo, hi] until the
/// bracket is narrower than `tol`. Only interior points are evaluated, so the
/// endpoints may be excluded from the domain of f. Unimodality is assumed;
/// on multimodal f a local minimum is returned. Ties shrink towards `lo`.
template <class F>
ScalarMinimum golden_section_minimize(F&& f, double lo, double hi, double tol, int max_evaluations = 500) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  int evals = 2;
  while (std::abs(b - a) > tol && evals < max_evaluations) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
    ++evals;
  }
  const double mid = 0.5 * (a + b);
  const double fm = f(mid);
  ++evals;
  // The midpoint is the textbook answer; keep the best probe if it is lower.
  if (fc <= fm && fc <= fd) return {c, fc, evals};
  if (fd < fm) return {d, fd, evals};
  return {mid, fm, evals};
}

}  // namespace bimap::optim
