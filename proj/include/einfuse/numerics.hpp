#pragma once

#include <cmath>

namespace einfuse {

// numerically careful forms of the nonlinear ops

inline double softplus(double x) {
  // log(1+e^x) without overflow for large x or cancellation for negative x
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double silu(double x) { return x * sigmoid(x); }

inline double rsqrt(double x) { return 1.0 / std::sqrt(x); }

} // namespace einfuse
