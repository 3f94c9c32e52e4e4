#pragma once

namespace ijcov {

/// Digamma Psi(x) for x > 0; absolute error <= 1e-12.
double digamma(double x);

/// Trigamma Psi_1(x) for x > 0; absolute error <= 1e-12.
double trigamma(double x);

}  // namespace ijcov
