#include "panelsel/interval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace panelsel {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

IntervalUnion IntervalUnion::empty_set() { return IntervalUnion{}; }

IntervalUnion IntervalUnion::all_reals() { return segment(-kInf, kInf); }

IntervalUnion IntervalUnion::segment(double lo, double hi) {
    return from_intervals({Interval{lo, hi}});
}

IntervalUnion IntervalUnion::from_intervals(std::vector<Interval> parts) {
    std::vector<Interval> keep;
    keep.reserve(parts.size());
    for (const Interval& iv : parts) {
        if (std::isnan(iv.lo) || std::isnan(iv.hi)) continue;
        if (iv.hi < iv.lo) continue;
        keep.push_back(iv);
    }
    std::sort(keep.begin(), keep.end(),
              [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
    IntervalUnion out;
    for (const Interval& iv : keep) {
        if (!out.parts_.empty() && iv.lo <= out.parts_.back().hi) {
            out.parts_.back().hi = std::max(out.parts_.back().hi, iv.hi);
        } else {
            out.parts_.push_back(iv);
        }
    }
    return out;
}

bool IntervalUnion::contains(double x, double tol) const {
    for (const Interval& iv : parts_) {
        if (x >= iv.lo - tol && x <= iv.hi + tol) return true;
        if (iv.lo - tol > x) break;
    }
    return false;
}

IntervalUnion IntervalUnion::clip_nonnegative() const {
    return intersect(*this, segment(0.0, kInf));
}

double IntervalUnion::lower() const {
    if (parts_.empty()) return std::numeric_limits<double>::quiet_NaN();
    return parts_.front().lo;
}

bool IntervalUnion::operator==(const IntervalUnion& other) const {
    if (parts_.size() != other.parts_.size()) return false;
    for (std::size_t i = 0; i < parts_.size(); ++i) {
        if (parts_[i].lo != other.parts_[i].lo || parts_[i].hi != other.parts_[i].hi)
            return false;
    }
    return true;
}

IntervalUnion intersect(const IntervalUnion& a, const IntervalUnion& b) {
    std::vector<Interval> out;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        double lo = std::max(a[i].lo, b[j].lo);
        double hi = std::min(a[i].hi, b[j].hi);
        if (lo <= hi) out.push_back(Interval{lo, hi});
        if (a[i].hi < b[j].hi) {
            ++i;
        } else {
            ++j;
        }
    }
    return IntervalUnion::from_intervals(std::move(out));
}

IntervalUnion solve_quadratic_leq(double a, double b, double c, double tol) {
    const double scale =
        std::max({std::fabs(a), std::fabs(b), std::fabs(c), 1.0});
    const double eps = tol * scale;

    if (std::fabs(a) <= eps) {
        if (std::fabs(b) <= eps) {
            // Constant. A value within noise of zero counts as satisfied so
            // that identically-equal comparisons never produce an empty set.
            return c <= eps ? IntervalUnion::all_reals() : IntervalUnion::empty_set();
        }
        double root = -c / b;
        return b > 0 ? IntervalUnion::segment(-kInf, root)
                     : IntervalUnion::segment(root, kInf);
    }

    const double disc = b * b - 4.0 * a * c;
    if (a > 0) {
        if (disc < 0) return IntervalUnion::empty_set();
        if (disc == 0) {
            double r = -b / (2.0 * a);
            return IntervalUnion::segment(r, r);
        }
        double sq = std::sqrt(disc);
        double q = -0.5 * (b + std::copysign(sq, b));
        double r1 = q / a;
        double r2 = (q != 0.0) ? c / q : -b / (2.0 * a);
        if (r1 > r2) std::swap(r1, r2);
        return IntervalUnion::segment(r1, r2);
    }

    // Downward parabola: <= 0 outside the root interval.
    if (disc <= 0) return IntervalUnion::all_reals();
    double sq = std::sqrt(disc);
    double q = -0.5 * (b + std::copysign(sq, b));
    double r1 = q / a;
    double r2 = (q != 0.0) ? c / q : -b / (2.0 * a);
    if (r1 > r2) std::swap(r1, r2);
    return IntervalUnion::from_intervals(
        {Interval{-kInf, r1}, Interval{r2, kInf}});
}

}  // namespace panelsel
