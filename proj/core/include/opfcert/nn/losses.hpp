#pragma once

#include <vector>

#include <Eigen/Dense>

#include "opfcert/data/dataset.hpp"
#include "opfcert/grid/admittance.hpp"
#include "opfcert/grid/grid_model.hpp"
#include "opfcert/nn/mlp.hpp"

namespace opfcert::nn {

/// Network data the losses and bounds need, as dense vectors and operators.
struct GridContext {
    Eigen::Index num_buses = 0;
    Eigen::Index num_generators = 0;
    Eigen::Index num_loads = 0;
    Eigen::Index num_branches = 0;
    std::vector<Eigen::Index> gen_bus;   ///< bus position per generator
    std::vector<Eigen::Index> non_gen_bus;
    Eigen::MatrixXd load_to_bus;         ///< N_b x N_d incidence
    Eigen::VectorXd p_min, p_max, q_min, q_max;  ///< per generator
    Eigen::VectorXd v_min, v_max;                ///< per bus
    Eigen::VectorXd flow_limit;                  ///< per branch
    Eigen::MatrixXd y_bus_rect;
    Eigen::MatrixXd y_l_rect;

    GridContext(const grid::GridModel& model, const grid::AdmittanceSet& adm);

    Eigen::Index input_dim() const { return 2 * num_loads; }
    Eigen::Index output_dim(Head h) const { return h == Head::Power ? 2 * num_generators : 2 * num_buses; }
};

struct LossWeights {
    double mse = 1.0;
    double pg = 1.0;
    double qg = 1.0;
    double vm = 1.0;  ///< V_g box for the power head, |V| box for the voltage head
    double flow = 1.0;
    double bal = 1.0;
    double wc = 0.0;

    /// Throws ValidationError for a negative weight.
    void validate() const;
};

/// Unweighted loss terms, each averaged over the batch. Terms a head does not produce are 0.
struct LossTerms {
    double mse = 0.0;
    double pg = 0.0;
    double qg = 0.0;
    double vm = 0.0;
    double flow = 0.0;
    double bal = 0.0;
    double wc = 0.0;

    double weighted(const LossWeights& w) const;
};

/// Samples as columns, physical units: inputs [p_d; q_d], targets in head layout.
struct Batch {
    Eigen::MatrixXd inputs;
    Eigen::MatrixXd targets;

    Eigen::Index size() const { return inputs.cols(); }
};

Batch make_batch(const data::LabeledDataset& data, Head head, const std::vector<std::size_t>& indices);
Batch split_batch(const data::LabeledDataset& data, Head head, data::Split split);

/// Sum of squared bound excesses, sigma(z - hi)^2 + sigma(lo - z)^2.
double penalty_relu(const Eigen::VectorXd& z, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi);
double penalty_relu(const Eigen::VectorXd& z, double lo, double hi);
/// Same, summed over every column of z; lo and hi are per row.
ad::Var penalty_relu(const ad::Var& z, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi);

struct LossResult {
    ad::Var total;  ///< weighted sum, excluding the worst-case term
    LossTerms terms;
};

/// MSE on normalized targets plus generator-box penalties on the direct outputs.
/// Throws HeadMismatch unless the model has a power head matching ctx.
LossResult loss_power(ad::Tape& tape, const MlpVars& vars, const MlpModel& model, const GridContext& ctx,
                      const Batch& batch, const LossWeights& weights);
/// MSE plus penalties on |V|, branch current magnitudes, generator injections implied by the
/// predicted voltages, and the power balance at buses without a generator.
/// Throws HeadMismatch unless the model has a voltage head matching ctx.
LossResult loss_voltage(ad::Tape& tape, const MlpVars& vars, const MlpModel& model, const GridContext& ctx,
                        const Batch& batch, const LossWeights& weights);
/// Dispatches on model.head.
LossResult loss(ad::Tape& tape, const MlpVars& vars, const MlpModel& model, const GridContext& ctx,
                const Batch& batch, const LossWeights& weights);

/// Loss value without gradients.
LossTerms evaluate_loss(const MlpModel& model, const GridContext& ctx, const Batch& batch,
                        const LossWeights& weights);

}  // namespace opfcert::nn
