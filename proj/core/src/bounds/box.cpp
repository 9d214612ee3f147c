#include "opfcert/bounds/box.hpp"

#include "opfcert/common/errors.hpp"

namespace opfcert::bounds {

using Eigen::Index;
using Eigen::VectorXd;

Box::Box(VectorXd lo, VectorXd hi, double d) : lower(std::move(lo)), upper(std::move(hi)), delta(d) {
    if (lower.size() != upper.size()) throw ValidationError("box bounds differ in length");
    if (!(lower.array() <= upper.array()).all()) throw ValidationError("box lower bound exceeds upper bound");
}

Box Box::load_domain(const grid::GridModel& model, double delta) {
    if (!(delta >= 0.0 && delta <= 0.2)) throw ValidationError("delta must lie in [0, 0.2]");
    const auto nd = static_cast<Index>(model.num_loads());
    VectorXd nominal(2 * nd);
    for (Index d = 0; d < nd; ++d) {
        nominal(d) = model.loads()[static_cast<std::size_t>(d)].p_nominal;
        nominal(nd + d) = model.loads()[static_cast<std::size_t>(d)].q_nominal;
    }
    const VectorXd a = (0.6 + delta) * nominal;
    const VectorXd b = (1.0 - delta) * nominal;
    return Box(a.cwiseMin(b), a.cwiseMax(b), delta);
}

bool Box::contains(const VectorXd& x, double tol) const {
    return x.size() == dim() && (x.array() >= lower.array() - tol).all() && (x.array() <= upper.array() + tol).all();
}

VectorXd Box::clamp(const VectorXd& x) const { return x.cwiseMax(lower).cwiseMin(upper); }

std::pair<Box, Box> Box::split(Index d) const {
    const double mid = 0.5 * (lower(d) + upper(d));
    Box left = *this, right = *this;
    left.upper(d) = mid;
    right.lower(d) = mid;
    return {std::move(left), std::move(right)};
}

}  // namespace opfcert::bounds
