#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "opfcert/nn/losses.hpp"

namespace opfcert::nn {

/// Hidden width, batch size and learning rate for a network size.
struct Hyperparameters {
    Eigen::Index hidden = 25;
    std::size_t batch = 25;
    double learning_rate = 5e-4;
};

/// Published settings for the 57/118/300/793-bus systems; smaller networks use the 57-bus
/// row, sizes in between the next larger row.
Hyperparameters default_hyperparameters(std::size_t num_buses);

/// Returns the unweighted worst-case penalty (1x1) of the parameters on the tape.
using WorstCaseHook = std::function<ad::Var(ad::Tape&, const MlpVars&)>;

struct TrainConfig {
    std::size_t epochs = 1000;
    std::size_t batch_size = 25;
    double learning_rate = 5e-4;
    LossWeights weights;
    std::uint64_t seed = 0;
    std::size_t prune_epoch = 500;  ///< pruning happens before this epoch starts
    double prune_fraction = 0.5;
    WorstCaseHook worst_case;       ///< added with weight weights.wc on every step when set
};

struct HistoryRow {
    std::size_t epoch = 0;  ///< 1-based
    double train_loss = 0.0;  ///< mean step loss over the epoch, worst-case term excluded
    double val_loss = 0.0;
    double worst_case = std::numeric_limits<double>::quiet_NaN();  ///< mean over steps

    bool operator==(const HistoryRow&) const = default;
};

struct AdamState {
    std::uint64_t step = 0;
    std::vector<Eigen::MatrixXd> m;  ///< per layer: weight then bias
    std::vector<Eigen::MatrixXd> v;

    bool operator==(const AdamState&) const = default;
};

struct TrainState {
    MlpModel model;
    AdamState adam;
    std::size_t epochs_done = 0;
    std::vector<HistoryRow> history;

    bool operator==(const TrainState&) const = default;
};

/// Model with the given head sized for ctx, initialized from the "init" stream of seed and
/// normalized on the training split of data.
MlpModel make_model(Head head, const GridContext& ctx, const data::LabeledDataset& data, Eigen::Index hidden,
                    std::uint64_t seed);

using EpochCallback = std::function<void(const TrainState&)>;

/// Adam on the head's loss over the training split, minibatches reshuffled every epoch from
/// the "shuffle" stream of config.seed. Throws Divergence when a loss becomes non-finite.
TrainState train(MlpModel model, const GridContext& ctx, const data::LabeledDataset& data,
                 const TrainConfig& config, const EpochCallback& on_epoch = {});
/// Continues a run from a checkpointed state up to config.epochs.
TrainState resume(TrainState state, const GridContext& ctx, const data::LabeledDataset& data,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

void write_history(std::ostream& out, const std::vector<HistoryRow>& history);

nlohmann::json to_json(const TrainState& state);
TrainState train_state_from_json(const nlohmann::json& doc);
void save_checkpoint(const std::string& path, const TrainState& state);
TrainState load_checkpoint(const std::string& path);

}  // namespace opfcert::nn
