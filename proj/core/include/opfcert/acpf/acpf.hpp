#pragma once

#include <optional>

#include <Eigen/Dense>

#include "opfcert/grid/admittance.hpp"
#include "opfcert/grid/grid_model.hpp"

namespace opfcert::acpf {

/// Bus voltages in rectangular form, v = [v^r; v^i], length 2N_b.
struct VoltageState {
    Eigen::VectorXd v;

    VoltageState() = default;
    explicit VoltageState(Eigen::VectorXd values) : v(std::move(values)) {}

    Eigen::Index num_buses() const { return v.size() / 2; }
    auto real() const { return v.head(num_buses()); }
    auto imag() const { return v.tail(num_buses()); }
    Eigen::VectorXd magnitudes() const;

    /// All buses at 1.0 pu, angle 0.
    static VoltageState flat(std::size_t num_buses);
    static VoltageState from_polar(const Eigen::VectorXd& magnitude, const Eigen::VectorXd& angle);
};

/// Per-load demand in pu. The NN input vector is [p_d; q_d].
struct LoadScenario {
    Eigen::VectorXd p_d;
    Eigen::VectorXd q_d;

    static LoadScenario nominal(const grid::GridModel& model);
    static LoadScenario from_input(const Eigen::VectorXd& x);
    static LoadScenario zero(const grid::GridModel& model);
    Eigen::VectorXd to_input() const;
};

/// Demand aggregated per bus position.
Eigen::VectorXd bus_demand_p(const grid::GridModel& model, const LoadScenario& s);
Eigen::VectorXd bus_demand_q(const grid::GridModel& model, const LoadScenario& s);

/// i = Y_bus^rect v, ordered [i^r; i^i].
Eigen::VectorXd bus_currents(const grid::AdmittanceSet& adm, const VoltageState& v);
/// i_l = Y_l^rect v, ordered [i_f^r; i_f^i; i_t^r; i_t^i].
Eigen::VectorXd branch_currents(const grid::AdmittanceSet& adm, const VoltageState& v);
/// Per-branch max(|i_f|, |i_t|).
Eigen::VectorXd branch_current_magnitudes(const grid::AdmittanceSet& adm, const VoltageState& v);

struct Injections {
    Eigen::VectorXd p;
    Eigen::VectorXd q;
};

/// p = v^r .* i^r + v^i .* i^i, q = v^i .* i^r - v^r .* i^i.
Injections bus_injections(const grid::AdmittanceSet& adm, const VoltageState& v);

struct GeneratorDispatch {
    Eigen::VectorXd p_g;
    Eigen::VectorXd q_g;
};

/// Generator injections implied by nodal balance, p^g = p(v) + p^d at each generator bus.
GeneratorDispatch generator_dispatch(const grid::GridModel& model, const grid::AdmittanceSet& adm,
                                     const VoltageState& v, const LoadScenario& s);

/// Constraint residuals of a state. Violations are ReLU-clipped distances to the bounds
/// (pu); balance entries are signed power mismatches at buses without a generator, in the
/// order of GridModel::non_generator_buses().
struct ResidualSet {
    Eigen::VectorXd pg_violation;
    Eigen::VectorXd qg_violation;
    Eigen::VectorXd vm_violation;
    Eigen::VectorXd flow_violation;
    Eigen::VectorXd balance_p;
    Eigen::VectorXd balance_q;

    /// Largest entry over all groups (absolute value for the balance terms).
    double max_violation() const;
};

ResidualSet constraint_residuals(const grid::GridModel& model, const grid::AdmittanceSet& adm,
                                 const VoltageState& v, const LoadScenario& s);

/// Generator setpoints driving a power flow. p_g of the slack generator is ignored.
struct Setpoints {
    Eigen::VectorXd p_g;
    Eigen::VectorXd v_g;
};

struct PowerFlowOptions {
    int max_iterations = 30;
    double tolerance = 1e-8;
    std::optional<VoltageState> init;
};

struct PowerFlowResult {
    VoltageState state;
    int iterations = 0;  ///< mismatch evaluations, including the final converged one
    double mismatch = 0.0;
};

/// Newton-Raphson power flow in polar coordinates with fixed PV/PQ/slack roles. Reactive
/// limits are not enforced. Throws NonConvergence when the mismatch infinity-norm is not
/// below the tolerance within max_iterations.
PowerFlowResult newton_pf(const grid::GridModel& model, const grid::AdmittanceSet& adm, const LoadScenario& s,
                          const Setpoints& setpoints, const PowerFlowOptions& options = {});

/// Infinity norm of the power flow mismatch for the given setpoints (P at non-slack buses,
/// Q at buses without a generator, |V| at generator buses).
double power_flow_mismatch(const grid::GridModel& model, const grid::AdmittanceSet& adm, const LoadScenario& s,
                           const Setpoints& setpoints, const VoltageState& v);

}  // namespace opfcert::acpf
