#pragma once

#include <utility>

#include <Eigen/Dense>

#include "opfcert/grid/grid_model.hpp"

namespace opfcert::bounds {

/// Axis-aligned input box in physical units (pu), lower <= upper.
struct Box {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
    double delta = 0.0;  ///< reduction the box was built with, 0 for hand-made boxes

    Box() = default;
    /// Throws ValidationError unless lower <= upper entrywise.
    Box(Eigen::VectorXd lower, Eigen::VectorXd upper, double delta = 0.0);

    /// Loads between (0.6 + delta) and (1 - delta) of nominal, p_d then q_d, for delta in
    /// [0, 0.2]. Negative nominal values give the mirrored interval.
    static Box load_domain(const grid::GridModel& model, double delta = 0.0);

    Eigen::Index dim() const { return lower.size(); }
    Eigen::VectorXd center() const { return 0.5 * (lower + upper); }
    Eigen::VectorXd radius() const { return 0.5 * (upper - lower); }
    Eigen::VectorXd width() const { return upper - lower; }
    bool contains(const Eigen::VectorXd& x, double tol = 0.0) const;
    /// Nearest point of the box.
    Eigen::VectorXd clamp(const Eigen::VectorXd& x) const;
    /// Halves along coordinate d.
    std::pair<Box, Box> split(Eigen::Index d) const;

    bool operator==(const Box&) const = default;
};

}  // namespace opfcert::bounds
