#pragma once

#include <vector>

#include <Eigen/Dense>

#include "opfcert/grid/grid_model.hpp"

namespace opfcert::grid {

/// Rectangular admittance operators of a network.
///
/// With v = [v^r; v^i] (length 2N_b), bus currents are y_bus_rect * v and branch currents
/// are y_l_rect * v = [i_f^r; i_f^i; i_t^r; i_t^i]. Every rectangular matrix has the block
/// form [[G, -B], [B, G]] of its complex counterpart G + jB.
struct AdmittanceSet {
    Eigen::MatrixXcd y_bus;  ///< N_b x N_b
    Eigen::MatrixXcd y_f;    ///< N_l x N_b, from-end branch currents
    Eigen::MatrixXcd y_t;    ///< N_l x N_b, to-end branch currents
    Eigen::VectorXcd y_shunt;  ///< per-bus shunt admittance

    Eigen::MatrixXd y_bus_rect;  ///< 2N_b x 2N_b
    Eigen::MatrixXd y_f_rect;    ///< 2N_l x 2N_b
    Eigen::MatrixXd y_t_rect;    ///< 2N_l x 2N_b
    Eigen::MatrixXd y_l_rect;    ///< 4N_l x 2N_b, y_f_rect stacked over y_t_rect

    std::vector<std::size_t> branch_from;  ///< bus position of each branch's from end
    std::vector<std::size_t> branch_to;
    std::vector<std::vector<std::size_t>> branches_at_bus;  ///< incident branches per bus

    std::size_t num_buses() const { return static_cast<std::size_t>(y_bus.rows()); }
    std::size_t num_branches() const { return static_cast<std::size_t>(y_f.rows()); }
};

/// [[Re, -Im], [Im, Re]] embedding of a complex matrix.
Eigen::MatrixXd rectangular(const Eigen::MatrixXcd& m);

/// Builds the pi-model admittances (series impedance, total charging split evenly between
/// the ends, off-nominal tap at the from end) plus bus shunts.
/// Throws SingularBranch for a branch with zero series impedance.
AdmittanceSet build_admittances(const GridModel& model);

}  // namespace opfcert::grid
