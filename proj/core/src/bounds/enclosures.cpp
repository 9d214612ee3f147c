#include "opfcert/bounds/enclosures.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace opfcert::bounds {

namespace ad = nn::ad;

namespace {
constexpr double kBeta = std::numbers::sqrt2 - 1.0;
}

double l_over(double a, double b) {
    a = std::abs(a);
    b = std::abs(b);
    return std::max(a, b) + kBeta * std::min(a, b);
}

double l_under(double a, double b) {
    a = std::abs(a);
    b = std::abs(b);
    return std::max(std::max(a, b), (a + b) / std::numbers::sqrt2);
}

double max_abs(Interval x) { return std::max(std::abs(x.lo), std::abs(x.hi)); }

double min_abs(Interval x) { return std::max(x.lo, 0.0) + std::max(-x.hi, 0.0); }

double norm_enclosure(Interval xr, Interval xi, Enclosure mode) {
    // Both formulas are nondecreasing in each component magnitude.
    return mode == Enclosure::Over ? l_over(max_abs(xr), max_abs(xi)) : l_under(min_abs(xr), min_abs(xi));
}

Interval magnitude_bounds(Interval xr, Interval xi, NormMode mode) {
    if (mode == NormMode::Enclosure)
        return {norm_enclosure(xr, xi, Enclosure::Under), norm_enclosure(xr, xi, Enclosure::Over)};
    return {std::hypot(min_abs(xr), min_abs(xi)), std::hypot(max_abs(xr), max_abs(xi))};
}

Interval mccormick_at(Interval xb, Interval yb, double x, double y) {
    const double under1 = xb.lo * y + x * yb.lo - xb.lo * yb.lo;
    const double under2 = xb.hi * y + x * yb.hi - xb.hi * yb.hi;
    const double over1 = xb.hi * y + x * yb.lo - xb.hi * yb.lo;
    const double over2 = xb.lo * y + x * yb.hi - xb.lo * yb.hi;
    return {std::max(under1, under2), std::min(over1, over2)};
}

Interval mccormick_bilinear(Interval x, Interval y) {
    // The hull estimators are affine, so their extremes over the box sit at corners.
    Interval out{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (double cx : {x.lo, x.hi})
        for (double cy : {y.lo, y.hi}) {
            const Interval h = mccormick_at(x, y, cx, cy);
            out.lo = std::min(out.lo, h.lo);
            out.hi = std::max(out.hi, h.hi);
        }
    return out;
}

namespace ad_ops {

ad::Var max_abs(const ad::Var& lo, const ad::Var& hi) { return ad::max(ad::abs(lo), ad::abs(hi)); }

ad::Var min_abs(const ad::Var& lo, const ad::Var& hi) { return ad::add(ad::relu(lo), ad::relu(ad::neg(hi))); }

ad::Var l_over(const ad::Var& a, const ad::Var& b) {
    return ad::add(ad::max(a, b), ad::scale(ad::min(a, b), kBeta));
}

ad::Var l_under(const ad::Var& a, const ad::Var& b) {
    return ad::max(ad::max(a, b), ad::scale(ad::add(a, b), 1.0 / std::numbers::sqrt2));
}

std::pair<ad::Var, ad::Var> product(const ad::Var& xl, const ad::Var& xu, const ad::Var& yl, const ad::Var& yu) {
    const ad::Var a = ad::mul(xl, yl), b = ad::mul(xl, yu), c = ad::mul(xu, yl), d = ad::mul(xu, yu);
    return {ad::min(ad::min(a, b), ad::min(c, d)), ad::max(ad::max(a, b), ad::max(c, d))};
}

}  // namespace ad_ops

}  // namespace opfcert::bounds
