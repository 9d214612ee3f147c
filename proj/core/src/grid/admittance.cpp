#include "opfcert/grid/admittance.hpp"

#include <complex>

#include "opfcert/common/errors.hpp"

namespace opfcert::grid {

Eigen::MatrixXd rectangular(const Eigen::MatrixXcd& m) {
    const auto r = m.rows();
    const auto c = m.cols();
    Eigen::MatrixXd out(2 * r, 2 * c);
    out.topLeftCorner(r, c) = m.real();
    out.topRightCorner(r, c) = -m.imag();
    out.bottomLeftCorner(r, c) = m.imag();
    out.bottomRightCorner(r, c) = m.real();
    return out;
}

AdmittanceSet build_admittances(const GridModel& model) {
    using cd = std::complex<double>;
    const auto nb = static_cast<Eigen::Index>(model.num_buses());
    const auto nl = static_cast<Eigen::Index>(model.num_branches());

    AdmittanceSet adm;
    adm.y_f = Eigen::MatrixXcd::Zero(nl, nb);
    adm.y_t = Eigen::MatrixXcd::Zero(nl, nb);
    adm.y_shunt.resize(nb);
    adm.branches_at_bus.resize(static_cast<std::size_t>(nb));

    for (Eigen::Index n = 0; n < nb; ++n) {
        const auto& bus = model.buses()[static_cast<std::size_t>(n)];
        adm.y_shunt(n) = cd(bus.g_shunt, bus.b_shunt);
    }

    for (Eigen::Index l = 0; l < nl; ++l) {
        const auto li = static_cast<std::size_t>(l);
        const auto& br = model.branches()[li];
        const cd z(br.r, br.x);
        if (std::abs(z) == 0.0) throw SingularBranch(li);
        const cd ys = 1.0 / z;
        const cd charging(0.0, br.b_charging / 2.0);
        const double tap = br.tap;
        const cd ytt = ys + charging;
        const cd yff = ytt / (tap * tap);
        const cd yft = -ys / tap;
        const cd ytf = -ys / tap;

        const auto f = static_cast<Eigen::Index>(model.branch_from(li));
        const auto t = static_cast<Eigen::Index>(model.branch_to(li));
        adm.y_f(l, f) = yff;
        adm.y_f(l, t) = yft;
        adm.y_t(l, f) = ytf;
        adm.y_t(l, t) = ytt;
        adm.branch_from.push_back(static_cast<std::size_t>(f));
        adm.branch_to.push_back(static_cast<std::size_t>(t));
        adm.branches_at_bus[static_cast<std::size_t>(f)].push_back(li);
        adm.branches_at_bus[static_cast<std::size_t>(t)].push_back(li);
    }

    // Y_bus = C_f^T Y_f + C_t^T Y_t + diag(y_shunt)
    adm.y_bus = adm.y_shunt.asDiagonal();
    for (Eigen::Index l = 0; l < nl; ++l) {
        const auto f = static_cast<Eigen::Index>(adm.branch_from[static_cast<std::size_t>(l)]);
        const auto t = static_cast<Eigen::Index>(adm.branch_to[static_cast<std::size_t>(l)]);
        adm.y_bus.row(f) += adm.y_f.row(l);
        adm.y_bus.row(t) += adm.y_t.row(l);
    }

    adm.y_bus_rect = rectangular(adm.y_bus);
    adm.y_f_rect = rectangular(adm.y_f);
    adm.y_t_rect = rectangular(adm.y_t);
    adm.y_l_rect.resize(4 * nl, 2 * nb);
    adm.y_l_rect.topRows(2 * nl) = adm.y_f_rect;
    adm.y_l_rect.bottomRows(2 * nl) = adm.y_t_rect;
    return adm;
}

}  // namespace opfcert::grid
