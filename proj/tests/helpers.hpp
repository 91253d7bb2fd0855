#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "hsbnn/tensor.hpp"

namespace testutil {

// Adaptive Simpson quadrature on a finite interval.
inline double simpson_step(const std::function<double(double)>& f, double a, double b, double fa,
                           double fm, double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol) {
    return left + right + delta / 15.0;
  }
  return simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double tol = 1e-12, int depth = 60) {
  const double fa = f(a);
  const double fb = f(b);
  const double fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_step(f, a, b, fa, fm, fb, whole, tol, depth);
}

// Composite form: fixed uniform panels with adaptive refinement inside each,
// so an isolated bump cannot slip between the first coarse sample points.
inline double integrate_panels(const std::function<double(double)>& f, double a, double b,
                               int panels, double tol = 1e-12) {
  double total = 0.0;
  const double w = (b - a) / panels;
  for (int i = 0; i < panels; ++i) {
    total += integrate(f, a + i * w, a + (i + 1) * w, tol / panels);
  }
  return total;
}

// Integral over (0, inf) via x = scale*t/(1-t); scale should sit near the
// integrand's mass so the transformed function is well resolved.
inline double integrate_positive(const std::function<double(double)>& f, double tol = 1e-12,
                                 double scale = 1.0) {
  auto g = [&](double t) {
    const double one_minus = 1.0 - t;
    const double x = scale * t / one_minus;
    return f(x) * scale / (one_minus * one_minus);
  };
  return integrate(g, 1e-14, 1.0 - 1e-14, tol);
}

// Central-difference gradient of a scalar function of a flat parameter vector.
inline std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double rel_err(double got, double want) {
  const double denom = std::max(std::abs(want), 1e-12);
  return std::abs(got - want) / denom;
}

// Worst relative error between two gradients, with an absolute floor to keep
// near-zero components from blowing up the ratio.
inline double max_grad_rel_err(const std::vector<double>& got, const std::vector<double>& want,
                               double abs_floor = 1e-8) {
  if (got.size() != want.size()) throw std::runtime_error("gradient size mismatch");
  double worst = 0.0;
  for (size_t i = 0; i < got.size(); ++i) {
    const double scale = std::max({std::abs(got[i]), std::abs(want[i]), abs_floor});
    worst = std::max(worst, std::abs(got[i] - want[i]) / scale);
  }
  return worst;
}

struct RunningStats {
  int64_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;
  void push(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
  double stddev() const { return std::sqrt(variance()); }
  double sem() const { return stddev() / std::sqrt(static_cast<double>(n)); }
};

}  // namespace testutil
