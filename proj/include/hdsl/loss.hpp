#pragma once

namespace hdsl {

// Smoothed hinge: zero above margin 1, linear below 0, quadratic between.
inline double smoothed_hinge(double s) {
  if (s >= 1.0) return 0.0;
  if (s <= 0.0) return 0.5 - s;
  double r = 1.0 - s;
  return 0.5 * r * r;
}

// Derivative; continuous at both breakpoints.
inline double smoothed_hinge_deriv(double s) {
  if (s >= 1.0) return 0.0;
  if (s <= 0.0) return -1.0;
  return s - 1.0;
}

}  // namespace hdsl
