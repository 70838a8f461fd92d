#pragma once

#include <cstdint>
#include <vector>

#include "panelsel/interval.hpp"
#include "panelsel/types.hpp"

namespace panelsel {

/// Law of sum_j lambda_j * chi^2_1 with independent one-degree terms.
struct WeightedChiSq {
    std::vector<double> lambdas;  // all >= 0, at least one > 0
};

struct WchisqCdfResult {
    double value;
    bool mc_fallback;  // quadrature failed, value comes from the seeded MC oracle
};

/// P(sum lambda_j chi^2_1 <= x) by numerical inversion of the characteristic
/// function (Imhof's integral), absolute error target 1e-8. Falls back to a
/// fixed-seed Monte Carlo estimate if the quadrature does not converge.
WchisqCdfResult wchisq_cdf_ex(double x, const WeightedChiSq& law);
double wchisq_cdf(double x, const WeightedChiSq& law);

/// Empirical CDF from seeded draws; the independent oracle for wchisq_cdf.
double wchisq_cdf_mc(double x, const WeightedChiSq& law, std::int64_t draws,
                     std::uint64_t seed);

/// A nonnegative base law restricted to a union of intervals.
struct TruncatedLaw {
    enum class Kind { SqrtWeightedChiSq, FoldedNormal };

    Kind kind = Kind::FoldedNormal;
    WeightedChiSq wchisq;   // SqrtWeightedChiSq only
    double variance = 0.0;  // FoldedNormal only
    IntervalUnion support;

    static TruncatedLaw sqrt_wchisq(WeightedChiSq law, IntervalUnion support);
    static TruncatedLaw folded_normal(double variance, IntervalUnion support);

    /// CDF of the untruncated base law on the statistic scale.
    double base_cdf(double t) const;
};

struct TruncatedSurvivalResult {
    double value;
    bool mc_fallback;
};

/// P(W >= stat, W in support) / P(W in support). The observed statistic must
/// itself lie in the support.
TruncatedSurvivalResult truncated_survival_ex(double stat, const TruncatedLaw& law);
double truncated_survival(double stat, const TruncatedLaw& law);

}  // namespace panelsel
