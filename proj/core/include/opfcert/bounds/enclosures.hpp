#pragma once

#include "opfcert/nn/autodiff.hpp"

namespace opfcert::bounds {

struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    double width() const { return hi - lo; }
    bool contains(double x, double tol = 0.0) const { return x >= lo - tol && x <= hi + tol; }
};

/// max(|a|, |b|) + (sqrt(2) - 1) min(|a|, |b|) >= |(a, b)|.
double l_over(double a, double b);
/// max(max(|a|, |b|), (|a| + |b|) / sqrt(2)) <= |(a, b)|.
double l_under(double a, double b);

/// Largest and smallest |x| over x in [lo, hi].
double max_abs(Interval x);
double min_abs(Interval x);

enum class Enclosure { Over, Under };

/// Over: an upper bound on |x| over the component box via l_over at the largest component
/// magnitudes. Under: a lower bound via l_under at the smallest ones.
double norm_enclosure(Interval xr, Interval xi, Enclosure mode);

/// How magnitude bounds are formed from component intervals: the piecewise-linear
/// enclosures, or the exact range of sqrt(xr^2 + xi^2) over the component box.
enum class NormMode { Enclosure, Exact };

Interval magnitude_bounds(Interval xr, Interval xi, NormMode mode);

/// McCormick hull of z = x y over the box at the point (x, y): the two under-estimators
/// maximized, the two over-estimators minimized.
Interval mccormick_at(Interval xb, Interval yb, double x, double y);
/// Range of the hull over the box, which is the exact range of x y.
Interval mccormick_bilinear(Interval x, Interval y);

// Elementwise versions on tape columns, differentiable almost everywhere.
namespace ad_ops {

nn::ad::Var max_abs(const nn::ad::Var& lo, const nn::ad::Var& hi);
nn::ad::Var min_abs(const nn::ad::Var& lo, const nn::ad::Var& hi);
nn::ad::Var l_over(const nn::ad::Var& a, const nn::ad::Var& b);
nn::ad::Var l_under(const nn::ad::Var& a, const nn::ad::Var& b);
/// Interval product [lo, hi] of x in [xl, xu] and y in [yl, yu].
std::pair<nn::ad::Var, nn::ad::Var> product(const nn::ad::Var& xl, const nn::ad::Var& xu, const nn::ad::Var& yl,
                                            const nn::ad::Var& yu);

}  // namespace ad_ops

}  // namespace opfcert::bounds
