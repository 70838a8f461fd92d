#include "panelsel/special.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace panelsel {

namespace {

// Series representation, converges fast for x < a + 1.
double gammp_series(double a, double x) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 0; n < 500; ++n) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::fabs(del) < std::fabs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Continued fraction for the upper tail Q(a, x), Lentz's method.
double gammq_cf(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-16) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double gammp(double a, double x) {
    if (!(a > 0.0) || x < 0.0) throw std::invalid_argument("gammp: bad arguments");
    if (x == 0.0) return 0.0;
    if (x < a + 1.0) return gammp_series(a, x);
    return 1.0 - gammq_cf(a, x);
}

}  // namespace panelsel
