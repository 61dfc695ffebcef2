#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "planforge/error.hpp"

namespace planforge::diffmath {

namespace detail {

inline void require_positive(double x, const char* fn) {
  if (!(x > 0.0)) throw DomainError(std::string(fn) + ": argument must be > 0, got " + std::to_string(x));
}

// Lanczos approximation, g = 7, n = 9.
inline constexpr double kLanczosG = 7.0;
inline constexpr std::array<double, 9> kLanczosCoef = {
    0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
    771.32342877765313,   -176.61502916214059,   12.507343278686905,
    -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};

}  // namespace detail

/// Natural log of the Gamma function for x > 0.
inline double lgamma(double x) {
  detail::require_positive(x, "lgamma");
  if (x < 0.5) {
    // Shift upward; Lanczos is accurate for Re(z) >= 0.5.
    return lgamma(x + 1.0) - std::log(x);
  }
  const double z = x - 1.0;
  double series = detail::kLanczosCoef[0];
  for (std::size_t i = 1; i < detail::kLanczosCoef.size(); ++i) {
    series += detail::kLanczosCoef[i] / (z + static_cast<double>(i));
  }
  const double t = z + detail::kLanczosG + 0.5;
  return 0.5 * std::log(2.0 * std::numbers::pi) + (z + 0.5) * std::log(t) - t + std::log(series);
}

/// Digamma psi(x) = d/dx lgamma(x), x > 0.
inline double digamma(double x) {
  detail::require_positive(x, "digamma");
  double acc = 0.0;
  while (x < 10.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Asymptotic series with Bernoulli numbers B2..B12.
  const double tail =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 -
                              inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0))))));
  return acc + std::log(x) - 0.5 * inv - tail;
}

/// Trigamma psi'(x), x > 0. Needed for gradients of entropies.
inline double trigamma(double x) {
  detail::require_positive(x, "trigamma");
  double acc = 0.0;
  while (x < 10.0) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double tail =
      inv * (1.0 + inv * (0.5 + inv * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * (5.0 / 66.0)))))));
  return acc + tail;
}

/// log(1 + e^x) without overflow.
inline double softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace planforge::diffmath
