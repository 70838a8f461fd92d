#include "panelsel/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "panelsel/special.hpp"

namespace panelsel {

namespace {

constexpr double kPi = 3.14159265358979323846;

void validate(const WeightedChiSq& law) {
    bool any_positive = false;
    for (double l : law.lambdas) {
        if (!(l >= 0.0) || !std::isfinite(l))
            throw InvalidSpec("weighted chi-square weights must be finite and nonnegative");
        if (l > 0.0) any_positive = true;
    }
    if (!any_positive)
        throw InvalidSpec("weighted chi-square needs at least one positive weight");
}

// Imhof integrand for P(Q > x):
//   1/2 + (1/pi) * Int_0^inf sin(theta(u)) / (u * rho(u)) du
// with theta(u) = (1/2) sum atan(lambda_j u) - x u / 2 and
// rho(u) = prod (1 + lambda_j^2 u^2)^(1/4).
struct ImhofIntegrand {
    const std::vector<double>& lambdas;
    double x;

    double theta(double u) const {
        double s = 0.0;
        for (double l : lambdas) s += std::atan(l * u);
        return 0.5 * s - 0.5 * x * u;
    }

    double theta_deriv(double u) const {
        double s = 0.0;
        for (double l : lambdas) s += l / (1.0 + l * l * u * u);
        return 0.5 * s - 0.5 * x;
    }

    double operator()(double u) const {
        if (u <= 0.0) return theta_deriv(0.0);
        double log_rho = 0.0;
        for (double l : lambdas) log_rho += 0.25 * std::log1p(l * l * u * u);
        return std::sin(theta(u)) / (u * std::exp(log_rho));
    }
};

// Adaptive Gauss-Kronrod (G7, K15) on [a, b].
struct GkResult {
    double value;
    double error;
};

GkResult gk15(const ImhofIntegrand& f, double a, double b) {
    static const double xk[8] = {0.0,
                                 0.2077849550078985,
                                 0.4058451513773972,
                                 0.5860872354676911,
                                 0.7415311855993945,
                                 0.8648644233597691,
                                 0.9491079123427585,
                                 0.9914553711208126};
    static const double wk[8] = {0.2094821410847278, 0.2044329400752989,
                                 0.1903505780647854, 0.1690047266392679,
                                 0.1406532597155259, 0.1047900103222502,
                                 0.0630920926299786, 0.0229353220105292};
    static const double wg[4] = {0.4179591836734694, 0.3818300505051189,
                                 0.2797053914892767, 0.1294849661688697};

    double mid = 0.5 * (a + b);
    double half = 0.5 * (b - a);
    double fc = f(mid);
    double kron = wk[0] * fc;
    double gauss = wg[0] * fc;
    for (int j = 1; j < 8; ++j) {
        double lo = f(mid - half * xk[j]);
        double hi = f(mid + half * xk[j]);
        kron += wk[j] * (lo + hi);
        if (j % 2 == 0) gauss += wg[j / 2] * (lo + hi);
    }
    kron *= half;
    gauss *= half;
    return {kron, std::fabs(kron - gauss)};
}

double integrate_adaptive(const ImhofIntegrand& f, double a, double b, double tol,
                          int depth = 0) {
    GkResult r = gk15(f, a, b);
    if (r.error <= tol || depth >= 24) return r.value;
    double mid = 0.5 * (a + b);
    return integrate_adaptive(f, a, mid, 0.5 * tol, depth + 1) +
           integrate_adaptive(f, mid, b, 0.5 * tol, depth + 1);
}

// Solve theta(u) = level by bisection on an interval where theta is monotone.
double solve_phase(const ImhofIntegrand& f, double lo, double hi, double level) {
    double flo = f.theta(lo) - level;
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        double fm = f.theta(mid) - level;
        if ((fm > 0) == (flo > 0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if (hi - lo <= 1e-14 * std::max(1.0, hi)) break;
    }
    return 0.5 * (lo + hi);
}

// Estimate the limit of an alternating sequence of partial sums by repeated
// adjacent averaging of the most recent sums.
double accelerate(const std::vector<double>& partial_sums) {
    std::size_t n = std::min<std::size_t>(partial_sums.size(), 40);
    std::vector<double> v(partial_sums.end() - n, partial_sums.end());
    while (v.size() > 1) {
        for (std::size_t i = 0; i + 1 < v.size(); ++i) v[i] = 0.5 * (v[i] + v[i + 1]);
        v.pop_back();
    }
    return v[0];
}

// Integral of the Imhof integrand over [0, inf). theta is concave with
// theta(0) = 0 and slope tending to -x/2, so past its single peak the phase
// decreases without bound and the integral becomes an alternating series over
// half-periods, which is summed with acceleration.
double imhof_integral(const ImhofIntegrand& f, bool& ok) {
    constexpr double kAbsTol = 1e-11;
    ok = true;

    // Locate the phase peak.
    double u_peak = 0.0;
    if (f.theta_deriv(0.0) > 0.0) {
        double hi = 1.0;
        while (f.theta_deriv(hi) > 0.0 && hi < 1e18) hi *= 2.0;
        double lo = 0.0;
        for (int it = 0; it < 200; ++it) {
            double mid = 0.5 * (lo + hi);
            (f.theta_deriv(mid) > 0.0 ? lo : hi) = mid;
            if (hi - lo <= 1e-14 * std::max(1.0, hi)) break;
        }
        u_peak = 0.5 * (lo + hi);
    }

    double head = 0.0;
    double peak_phase = f.theta(u_peak);

    // Ascending stretch: crossings of successive multiples of pi up to the peak.
    double prev_u = 0.0;
    if (u_peak > 0.0) {
        int top = static_cast<int>(std::floor(peak_phase / kPi));
        for (int m = 1; m <= top; ++m) {
            double u = solve_phase(f, prev_u, u_peak, m * kPi);
            head += integrate_adaptive(f, prev_u, u, kAbsTol);
            prev_u = u;
        }
        head += integrate_adaptive(f, prev_u, u_peak, kAbsTol);
        prev_u = u_peak;
    }

    // Descending stretch. Bracket each crossing by marching with the step the
    // local slope implies, expanding when the slope is still shallow near the
    // peak. Terms over consecutive half-periods alternate in sign; successive
    // accelerated estimates stabilizing is the convergence criterion.
    double level = std::floor(f.theta(prev_u) / kPi) * kPi;
    if (f.theta(prev_u) - level < 1e-9) level -= kPi;
    double sum = 0.0;
    std::vector<double> partials;
    partials.reserve(256);
    double last_u = prev_u;
    double prev_est = std::numeric_limits<double>::quiet_NaN();
    int stable = 0;

    for (long m = 0; m < 20000; ++m) {
        double step = 1.0;
        double slope = f.theta_deriv(last_u);
        if (slope < -1e-12) step = std::max((f.theta(last_u) - level) / -slope, 1e-12);
        double hi = last_u + step;
        int guard = 0;
        while (f.theta(hi) > level && guard++ < 400) hi = last_u + (hi - last_u) * 2.0;
        if (guard >= 400) {
            ok = false;
            return 0.0;
        }
        double u = solve_phase(f, last_u, hi, level);
        double term = integrate_adaptive(f, last_u, u, kAbsTol);
        sum += term;
        partials.push_back(sum);
        last_u = u;
        level -= kPi;

        if (std::fabs(term) < 1e-16 && m > 4) return head + sum;
        if (partials.size() >= 12) {
            double est = accelerate(partials);
            if (std::fabs(est - prev_est) < 1e-13) {
                if (++stable >= 3) return head + est;
            } else {
                stable = 0;
            }
            prev_est = est;
        }
    }
    ok = false;
    return 0.0;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

WchisqCdfResult wchisq_cdf_ex(double x, const WeightedChiSq& law) {
    validate(law);
    if (!std::isfinite(x)) {
        if (std::isnan(x)) throw InvalidSpec("wchisq_cdf: x is NaN");
        return {x > 0 ? 1.0 : 0.0, false};
    }
    if (x <= 0.0) return {0.0, false};

    std::vector<double> lambdas;
    for (double l : law.lambdas)
        if (l > 0.0) lambdas.push_back(l);

    ImhofIntegrand f{lambdas, x};
    bool ok = true;
    double integral = imhof_integral(f, ok);
    if (ok) {
        double upper = 0.5 + integral / kPi;  // P(Q > x)
        return {std::clamp(1.0 - upper, 0.0, 1.0), false};
    }
    WeightedChiSq positive{lambdas};
    return {wchisq_cdf_mc(x, positive, 1000000, splitmix64(0x5eedf00dULL)), true};
}

double wchisq_cdf(double x, const WeightedChiSq& law) {
    return wchisq_cdf_ex(x, law).value;
}

double wchisq_cdf_mc(double x, const WeightedChiSq& law, std::int64_t draws,
                     std::uint64_t seed) {
    validate(law);
    if (draws < 10000) throw InvalidSpec("wchisq_cdf_mc: need at least 1e4 draws");
    if (x <= 0.0) return 0.0;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::int64_t hits = 0;
    for (std::int64_t d = 0; d < draws; ++d) {
        double q = 0.0;
        for (double l : law.lambdas) {
            double z = normal(rng);
            q += l * z * z;
        }
        if (q <= x) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(draws);
}

TruncatedLaw TruncatedLaw::sqrt_wchisq(WeightedChiSq law, IntervalUnion support) {
    validate(law);
    TruncatedLaw t;
    t.kind = Kind::SqrtWeightedChiSq;
    t.wchisq = std::move(law);
    t.support = std::move(support);
    return t;
}

TruncatedLaw TruncatedLaw::folded_normal(double variance, IntervalUnion support) {
    if (!(variance > 0.0))
        throw InvalidSpec("folded normal needs a positive variance");
    TruncatedLaw t;
    t.kind = Kind::FoldedNormal;
    t.variance = variance;
    t.support = std::move(support);
    return t;
}

double TruncatedLaw::base_cdf(double t) const {
    if (t <= 0.0) return 0.0;
    if (!std::isfinite(t)) return 1.0;
    if (kind == Kind::FoldedNormal)
        return std::erf(t / std::sqrt(2.0 * variance));
    return wchisq_cdf(t * t, wchisq);
}

TruncatedSurvivalResult truncated_survival_ex(double stat, const TruncatedLaw& law) {
    if (!law.support.contains(stat))
        throw StatOutsideSupport("observed statistic lies outside its truncation set");

    bool fallback = false;
    auto cdf = [&](double t) {
        if (law.kind == TruncatedLaw::Kind::FoldedNormal) return law.base_cdf(t);
        if (t <= 0.0) return 0.0;
        if (!std::isfinite(t)) return 1.0;
        WchisqCdfResult r = wchisq_cdf_ex(t * t, law.wchisq);
        fallback = fallback || r.mc_fallback;
        return r.value;
    };

    double mass = 0.0;
    double upper = 0.0;
    for (const Interval& iv : law.support.parts()) {
        double lo_cdf = cdf(iv.lo);
        double hi_cdf = cdf(iv.hi);
        mass += hi_cdf - lo_cdf;
        if (iv.hi >= stat) upper += hi_cdf - cdf(std::max(iv.lo, stat));
    }
    if (mass < 1e-12)
        throw ZeroMassSupport("truncation set carries numerically zero probability mass");
    return {std::clamp(upper / mass, 0.0, 1.0), fallback};
}

double truncated_survival(double stat, const TruncatedLaw& law) {
    return truncated_survival_ex(stat, law).value;
}

}  // namespace panelsel
