#pragma once

#include <cstddef>
#include <vector>

namespace panelsel {

struct Interval {
    double lo;
    double hi;  // may be +infinity
};

/// Finite union of disjoint closed intervals, kept sorted with strictly
/// positive gaps (touching intervals are merged on construction).
class IntervalUnion {
  public:
    IntervalUnion() = default;

    static IntervalUnion empty_set();
    static IntervalUnion all_reals();
    static IntervalUnion segment(double lo, double hi);
    static IntervalUnion from_intervals(std::vector<Interval> parts);

    bool is_empty() const { return parts_.empty(); }
    std::size_t size() const { return parts_.size(); }
    const Interval& operator[](std::size_t i) const { return parts_[i]; }
    const std::vector<Interval>& parts() const { return parts_; }

    /// Closed-endpoint membership with absolute boundary slack.
    bool contains(double x, double tol = 1e-9) const;

    IntervalUnion clip_nonnegative() const;

    /// Infimum of the set; NaN when empty.
    double lower() const;

    bool operator==(const IntervalUnion& other) const;

  private:
    std::vector<Interval> parts_;
};

IntervalUnion intersect(const IntervalUnion& a, const IntervalUnion& b);

/// Exact solution set of a*x^2 + b*x + c <= 0 over the reals. Coefficients
/// within tol, relative to max(|a|, |b|, |c|, 1), of zero are treated as zero
/// so the quadratic degrades gracefully to the linear and constant cases.
IntervalUnion solve_quadratic_leq(double a, double b, double c, double tol = 1e-10);

}  // namespace panelsel
