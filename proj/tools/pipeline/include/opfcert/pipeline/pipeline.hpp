#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "opfcert/data/dataset.hpp"
#include "opfcert/grid/admittance.hpp"
#include "opfcert/grid/grid_model.hpp"
#include "opfcert/nn/train.hpp"
#include "opfcert/opt/opf.hpp"
#include "opfcert/pipeline/config.hpp"
#include "opfcert/verify/certify.hpp"

namespace opfcert::pipeline {

/// Case model with its admittances and the network view used by training and bounds.
struct Network {
    grid::GridModel grid;
    grid::AdmittanceSet adm;
    nn::GridContext ctx;

    explicit Network(const std::string& case_path);
    explicit Network(grid::GridModel model);
};

/// Artifact locations inside config.out_dir. Model-specific files carry `<head>_<variant>`.
struct Paths {
    explicit Paths(const RunConfig& config);

    std::string dataset, model, checkpoint, history, verification, sweep, restore_json, restore_csv, report_json,
        report_txt;

    static std::string stem(nn::Head head, Variant variant);
};

/// Labeled scenarios for the config's sampling settings and seed.
data::LabeledDataset make_dataset(const RunConfig& config, const Network& net);

/// Table I defaults filled in for zero settings; the worst-case hook is attached for the
/// crown variant only, over load_domain(wc_delta).
nn::TrainConfig train_config(const RunConfig& config, const Network& net, const nn::MlpModel& model);
nn::MlpModel initial_model(const RunConfig& config, const Network& net, const data::LabeledDataset& data);
nn::TrainState train_network(const RunConfig& config, const Network& net, const data::LabeledDataset& data);

verify::CertifyOptions certify_options(const RunConfig& config, const Network& net);

struct Verification {
    std::vector<verify::Certificate> certificates;  ///< over load_domain(0)
    std::vector<verify::SweepRow> sweep;
};

Verification verify_network(const RunConfig& config, const Network& net, const nn::MlpModel& model);

/// Root-mean-square error of the physical outputs on the test split.
double test_rmse(const nn::MlpModel& model, const data::LabeledDataset& data);

/// Largest violation of each constraint kind over the test-split inputs.
std::vector<std::pair<bounds::ConstraintKind, double>> sampled_maxima(const nn::MlpModel& model,
                                                                      const nn::GridContext& ctx,
                                                                      const data::LabeledDataset& data);

struct RestoreRow {
    std::size_t index = 0;
    bool ok = false;
    std::string error;
    double objective = 0.0;
    double distance = 0.0;
    double max_violation = 0.0;  ///< constraint_residuals of the restored point
    int iterations = 0;
};

struct RestoreResult {
    opt::WarmStartReport warm;
    std::vector<RestoreRow> restoration;
    std::size_t restored = 0;
    std::size_t feasible = 0;           ///< restored rows with max_violation <= 1e-6
    double mean_cost_change_pct = 0.0;  ///< restored objective against the cold solve
    double max_violation = 0.0;
};

/// Warm start and feasibility restoration from a voltage-head model on the first
/// restore_scenarios test scenarios.
RestoreResult restore_network(const RunConfig& config, const Network& net, const nn::MlpModel& model,
                              const data::LabeledDataset& data);

nlohmann::json to_json(const RestoreResult& r);

/// File-level commands. Each reads its inputs from and writes its outputs to the run
/// directory, stamping the config hash and version into every artifact.
data::LabeledDataset cmd_gen_data(const RunConfig& config);
nn::TrainState cmd_train(const RunConfig& config, bool resume = false);
Verification cmd_verify(const RunConfig& config, const std::string& model_path = "");
RestoreResult cmd_restore(const RunConfig& config, const std::string& model_path = "");
/// Base versus crown statistical and verified violations for every head found in the run.
nlohmann::json cmd_report(const RunConfig& config);

std::string report_text(const nlohmann::json& report);

}  // namespace opfcert::pipeline
