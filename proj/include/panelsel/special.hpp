#pragma once

#include <cmath>

namespace panelsel {

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

/// Regularized lower incomplete gamma P(a, x).
double gammp(double a, double x);

/// Chi-square CDF with `dof` degrees of freedom.
inline double chi2_cdf(double x, double dof) {
    if (x <= 0.0) return 0.0;
    return gammp(0.5 * dof, 0.5 * x);
}

}  // namespace panelsel
