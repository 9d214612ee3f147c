#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "opfcert/data/sampling.hpp"
#include "opfcert/opt/opf.hpp"

namespace opfcert::data {

struct LabeledSample {
    acpf::LoadScenario load;
    Eigen::VectorXd p_g;  ///< per generator, pu
    Eigen::VectorXd v_g;  ///< voltage magnitude at each generator bus
    acpf::VoltageState v;
    double objective = 0.0;
    Split split = Split::Train;

    bool operator==(const LabeledSample& o) const;
};

/// Load scenarios with their OPF solutions. Column identities are bus ids: loads and
/// generators by the bus they sit on.
struct LabeledDataset {
    std::vector<int> load_bus_ids;
    std::vector<int> gen_bus_ids;
    std::vector<int> bus_ids;
    std::vector<std::pair<std::string, std::string>> metadata;  ///< written as `# key=value` lines
    std::vector<LabeledSample> samples;

    std::size_t size() const { return samples.size(); }
    std::vector<std::size_t> indices(Split split) const;
    /// Rows [p_d, q_d] of the samples in split.
    Eigen::MatrixXd inputs(Split split) const;
    /// Rows [p_g, v_g].
    Eigen::MatrixXd power_targets(Split split) const;
    /// Rows [v^r, v^i].
    Eigen::MatrixXd voltage_targets(Split split) const;

    bool operator==(const LabeledDataset&) const = default;
};

/// An empty dataset with the column layout of model.
LabeledDataset empty_dataset(const grid::GridModel& model);

/// Throws ValidationError when the dataset columns do not match the network.
void check_compatible(const LabeledDataset& data, const grid::GridModel& model);

struct LabelingOptions {
    unsigned workers = 1;
    opt::SolverOptions solver;
    double max_failure_fraction = 0.05;
};

struct LabelingStats {
    std::size_t attempted = 0;
    std::size_t failed = 0;
};

/// Solves the OPF of every scenario. Scenarios whose solve fails are replaced by further
/// draws of the same sampling stream until set.size() labels exist; splits are then assigned
/// to the labeled scenarios in order with split_sizes(). Throws LabelingFailed once more than
/// max_failure_fraction of the attempted scenarios have failed.
LabeledDataset generate_labels(const grid::GridModel& model, const grid::AdmittanceSet& adm, const ScenarioSet& set,
                               const LabelingOptions& options = {}, LabelingStats* stats = nullptr);

/// CSV with `#` metadata lines, a header of pd_<bus>, qd_<bus>, pg_<bus>, vg_<bus>,
/// vr_<bus>, vi_<bus>, objective, split, and values at 12 significant digits.
/// write(read(write(d))) reproduces the first file byte for byte.
void write_dataset(std::ostream& out, const LabeledDataset& data);
void write_dataset(const std::string& path, const LabeledDataset& data);
/// Throws FormatError for a malformed header or row.
LabeledDataset read_dataset(std::istream& in);
LabeledDataset read_dataset(const std::string& path);

}  // namespace opfcert::data
