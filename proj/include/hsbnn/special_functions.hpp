#pragma once

#include <cmath>

#include "hsbnn/errors.hpp"

namespace hsbnn {

inline constexpr double kLn2Pi = 1.8378770664093454836;   // ln(2*pi)
inline constexpr double kLnPi = 1.1447298858494001741;    // ln(pi)
inline constexpr double kLn2PiE = 2.8378770664093454836;  // ln(2*pi*e)
inline constexpr double kEulerGamma = 0.5772156649015328606;

inline double log_gamma(double x) {
  if (x <= 0.0) throw DomainError("log_gamma requires x > 0");
  return std::lgamma(x);
}

// Digamma via argument-shift recurrence into the asymptotic Stirling regime.
// Relative accuracy ~1e-13 for x >= 1e-3.
inline double digamma(double x) {
  if (x <= 0.0) throw DomainError("digamma requires x > 0");
  double result = 0.0;
  while (x < 14.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // ln x - 1/(2x) - sum B_{2n} / (2n x^{2n})
  double series = inv2 * (1.0 / 12.0 +
                  inv2 * (-1.0 / 120.0 +
                  inv2 * (1.0 / 252.0 +
                  inv2 * (-1.0 / 240.0 +
                  inv2 * (1.0 / 132.0 +
                  inv2 * (-691.0 / 32760.0 +
                  inv2 * (1.0 / 12.0)))))));
  return result + std::log(x) - 0.5 * inv - series;
}

// Trigamma, same scheme: psi1(x) = psi1(x+1) + 1/x^2, then asymptotic series.
inline double trigamma(double x) {
  if (x <= 0.0) throw DomainError("trigamma requires x > 0");
  double result = 0.0;
  while (x < 14.0) {
    result += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // 1/x + 1/(2x^2) + sum B_{2n} / x^{2n+1}
  double series = inv * inv2 * (1.0 / 6.0 +
                  inv2 * (-1.0 / 30.0 +
                  inv2 * (1.0 / 42.0 +
                  inv2 * (-1.0 / 30.0 +
                  inv2 * (5.0 / 66.0 +
                  inv2 * (-691.0 / 2730.0 +
                  inv2 * (7.0 / 6.0)))))));
  return result + inv + 0.5 * inv2 + series;
}

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Inverse of softplus; defined for y > 0.
inline double softplus_inv(double y) {
  if (y <= 0.0) throw DomainError("softplus_inv requires y > 0");
  // ln(e^y - 1) = y + ln(1 - e^-y)
  return y > 1.0 ? y + std::log(-std::expm1(-y)) : std::log(std::expm1(y));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace hsbnn
