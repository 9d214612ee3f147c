#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "opfcert/nn/autodiff.hpp"

namespace opfcert::nn {

/// Power head outputs [p_g; V_g] (2N_g); voltage head outputs [v^r; v^i] (2N_b).
enum class Head { Power, Voltage };

const char* head_name(Head h);
Head parse_head(std::string_view name);

/// Affine map between physical and normalized coordinates:
/// normalized = (physical - shift) ./ scale. Scales are nonzero.
struct Normalization {
    Eigen::VectorXd shift;
    Eigen::VectorXd scale;

    static Normalization identity(Eigen::Index n);
    /// Column mean and standard deviation of the rows of samples; deviations below 1e-6 become 1.
    static Normalization fit(const Eigen::MatrixXd& samples);

    Eigen::VectorXd normalize(const Eigen::VectorXd& x) const;
    Eigen::VectorXd denormalize(const Eigen::VectorXd& y) const;

    bool operator==(const Normalization&) const = default;
};

struct Layer {
    Eigen::MatrixXd weight;  ///< out x in
    Eigen::VectorXd bias;

    bool operator==(const Layer&) const = default;
};

/// ReLU MLP with identity output layer.
///
/// Invariants: layer shapes chain; prune_masks is empty or holds one 0/1 matrix per hidden
/// layer (every layer but the last) shaped like its weight, and masked weights are zero.
struct MlpModel {
    Head head = Head::Voltage;
    std::vector<Layer> layers;
    Normalization input_norm;
    Normalization output_norm;
    std::vector<Eigen::MatrixXd> prune_masks;
    std::string config_hash;

    Eigen::Index input_dim() const { return layers.front().weight.cols(); }
    Eigen::Index output_dim() const { return layers.back().weight.rows(); }
    std::size_t num_hidden() const { return layers.size() - 1; }
    /// Number of scalar parameters.
    std::size_t num_parameters() const;
    /// Throws ValidationError when an invariant does not hold.
    void validate() const;

    bool operator==(const MlpModel&) const = default;
};

/// Weights and biases drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with the "init" stream of
/// seed; identity normalizations.
MlpModel init_mlp(Head head, Eigen::Index input_dim, Eigen::Index output_dim, Eigen::Index hidden_width,
                  std::size_t hidden_layers, std::uint64_t seed);

/// Raw network output for a normalized input.
Eigen::VectorXd forward(const MlpModel& model, const Eigen::VectorXd& x_normalized);
/// Physical output for a physical input (normalization maps applied on both sides).
Eigen::VectorXd predict(const MlpModel& model, const Eigen::VectorXd& x);
/// Physical outputs for physical inputs, one per column.
Eigen::MatrixXd predict_columns(const MlpModel& model, const Eigen::MatrixXd& x);

/// Parameters of a model placed on a tape.
struct MlpVars {
    std::vector<ad::Var> weights;
    std::vector<ad::Var> biases;
};

/// Places the parameters on the tape, as variables when trainable, else as constants.
MlpVars bind(const MlpModel& model, ad::Tape& tape, bool trainable);
/// Raw outputs for normalized inputs, one sample per column.
ad::Var forward(const MlpVars& vars, const ad::Var& x_normalized);

/// Zeroes the ceil(fraction * count) smallest-magnitude weights of each hidden layer and
/// installs the masks. Ties are broken by storage order.
void prune_smallest(MlpModel& model, double fraction);
void apply_masks(MlpModel& model);

nlohmann::json to_json(const MlpModel& model);
MlpModel mlp_from_json(const nlohmann::json& doc);
void save_model(const std::string& path, const MlpModel& model);
MlpModel load_model(const std::string& path);

}  // namespace opfcert::nn
