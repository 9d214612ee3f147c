#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "opfcert/acpf/acpf.hpp"

namespace opfcert::opt {

/// One assignment of the OPF variables x = [v^r; v^i; p_g; q_g].
struct OpfPoint {
    acpf::VoltageState v;
    Eigen::VectorXd p_g;
    Eigen::VectorXd q_g;

    Eigen::VectorXd to_vector() const;
    static OpfPoint from_vector(const Eigen::VectorXd& x, std::size_t num_buses, std::size_t num_generators);
};

/// Completes a voltage prediction with the generator injections implied by nodal balance.
OpfPoint point_from_voltages(const grid::GridModel& model, const grid::AdmittanceSet& adm,
                             const acpf::LoadScenario& s, const acpf::VoltageState& v);

/// Case voltage setpoints (clamped to bus limits, 1.0 elsewhere), zero angles, generator
/// outputs at the middle of their ranges.
OpfPoint cold_start_point(const grid::GridModel& model);

struct SolverOptions {
    double initial_penalty = 10.0;
    double penalty_growth = 10.0;
    int max_outer_iterations = 8;
    int max_inner_iterations = 100;
    double feasibility_tolerance = 1e-8;  ///< on constraint values (squared magnitudes for |v|, |i|)
    double kkt_tolerance = 1e-5;
    double min_inner_tolerance = 1e-6;    ///< inner gradient tolerance is max(this, 1/penalty)
};

struct OPFSolution {
    acpf::VoltageState v;
    Eigen::VectorXd p_g;
    Eigen::VectorXd q_g;
    double objective = 0.0;  ///< c^T p_g, $
    double kkt_residual = 0.0;
    double feasibility = 0.0;
    int iterations = 0;        ///< Newton steps summed over all outer iterations
    int outer_iterations = 0;  ///< 0 when a warm start is already a KKT point
    bool converged = false;

    OpfPoint point() const { return {v, p_g, q_g}; }
};

/// Local AC-OPF solution (linear generation cost) by augmented Lagrangian with a
/// damped-Newton inner loop. Without init the solver cold-starts at cold_start_point(model);
/// with init it also seeds the multipliers by least squares on the active set.
/// Throws NoConvergence when the outer budget is exhausted.
OPFSolution solve_opf(const grid::GridModel& model, const grid::AdmittanceSet& adm, const acpf::LoadScenario& s,
                      const std::optional<OpfPoint>& init = std::nullopt, const SolverOptions& options = {});

struct Restoration {
    OPFSolution solution;
    double distance_v = 0.0;   ///< squared Euclidean distance moved, voltage coordinates
    double distance_pg = 0.0;
    double distance_qg = 0.0;

    double distance() const { return distance_v + distance_pg + distance_qg; }
};

/// Nearest feasible point (locally) to a prediction in squared Euclidean distance over all
/// of x, with every coordinate weighted equally. solution.objective still reports c^T p_g.
Restoration restore_feasible(const grid::GridModel& model, const grid::AdmittanceSet& adm,
                             const acpf::LoadScenario& s, const OpfPoint& prediction,
                             const SolverOptions& options = {});

struct WarmStartRow {
    std::size_t index = 0;
    bool ok = false;
    std::string error;
    int cold_iterations = 0;
    int warm_iterations = 0;
    int cold_outer = 0;
    int warm_outer = 0;
    double cold_objective = 0.0;
    double warm_objective = 0.0;
    double cold_ms = 0.0;
    double warm_ms = 0.0;

    double cost_change_pct() const;
    double iteration_change_pct() const;
    double time_change_pct() const;
};

struct WarmStartSummary {
    std::size_t scenarios = 0;
    std::size_t failed = 0;
    std::size_t trimmed = 0;     ///< rows dropped by the outlier rule
    std::size_t aggregated = 0;  ///< rows entering the averages
    double mean_cold_iterations = 0.0;
    double mean_warm_iterations = 0.0;
    double mean_iteration_change_pct = 0.0;
    double mean_cost_change_pct = 0.0;
    double mean_time_change_pct = 0.0;
    double matching_fraction = 0.0;  ///< share of aggregated rows with |cost change| <= 0.1%
};

struct WarmStartReport {
    std::vector<WarmStartRow> rows;
    WarmStartSummary summary;
};

using Predictor = std::function<OpfPoint(const acpf::LoadScenario&)>;

/// Cold versus predictor-initialized solves per scenario. With at least 100 successful rows
/// the 10 fastest and 10 slowest warm runs (by iterations, then cold iterations, then index)
/// are excluded from the aggregates.
WarmStartReport warm_start_report(const grid::GridModel& model, const grid::AdmittanceSet& adm,
                                  const std::vector<acpf::LoadScenario>& scenarios, const Predictor& predictor,
                                  const SolverOptions& options = {}, unsigned workers = 1);

void write_csv(std::ostream& out, const WarmStartReport& report);
nlohmann::json to_json(const WarmStartSummary& summary);

}  // namespace opfcert::opt
