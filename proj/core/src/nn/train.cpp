#include "opfcert/nn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>

#include "opfcert/common/errors.hpp"
#include "opfcert/common/random.hpp"

namespace opfcert::nn {

using Eigen::Index;
using Eigen::MatrixXd;
using nlohmann::json;

Hyperparameters default_hyperparameters(std::size_t num_buses) {
    if (num_buses <= 57) return {25, 25, 5e-4};
    if (num_buses <= 118) return {50, 50, 1e-3};
    if (num_buses <= 300) return {75, 75, 1e-3};
    return {100, 100, 2e-3};
}

MlpModel make_model(Head head, const GridContext& ctx, const data::LabeledDataset& data, Index hidden,
                    std::uint64_t seed) {
    MlpModel m = init_mlp(head, ctx.input_dim(), ctx.output_dim(head), hidden, 3, seed);
    const Batch train = split_batch(data, head, data::Split::Train);
    if (train.size() == 0) throw ValidationError("dataset has no training samples");
    m.input_norm = Normalization::fit(train.inputs.transpose());
    m.output_norm = Normalization::fit(train.targets.transpose());
    return m;
}

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-8;

void adam_step(MlpModel& model, AdamState& adam, const std::vector<MatrixXd>& grads, double lr) {
    if (adam.m.empty()) {
        for (const auto& g : grads) {
            adam.m.push_back(MatrixXd::Zero(g.rows(), g.cols()));
            adam.v.push_back(MatrixXd::Zero(g.rows(), g.cols()));
        }
    }
    ++adam.step;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(adam.step));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(adam.step));
    for (std::size_t k = 0; k < grads.size(); ++k) {
        adam.m[k] = kBeta1 * adam.m[k] + (1.0 - kBeta1) * grads[k];
        adam.v[k] = kBeta2 * adam.v[k] + (1.0 - kBeta2) * grads[k].cwiseAbs2();
        const MatrixXd update =
            lr * (adam.m[k] / c1).array() / ((adam.v[k] / c2).array().sqrt() + kEps);
        Layer& layer = model.layers[k / 2];
        if (k % 2 == 0)
            layer.weight -= update;
        else
            layer.bias -= update.col(0);
    }
    apply_masks(model);
}

}  // namespace

TrainState train(MlpModel model, const GridContext& ctx, const data::LabeledDataset& data,
                 const TrainConfig& config, const EpochCallback& on_epoch) {
    TrainState state;
    state.model = std::move(model);
    return resume(std::move(state), ctx, data, config, on_epoch);
}

TrainState resume(TrainState state, const GridContext& ctx, const data::LabeledDataset& data,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
    config.weights.validate();
    if (config.batch_size == 0) throw ValidationError("batch_size must be at least 1");
    if (!(config.learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
    state.model.validate();
    const std::vector<std::size_t> train_idx = data.indices(data::Split::Train);
    if (train_idx.empty() && state.epochs_done < config.epochs) throw ValidationError("dataset has no training split");
    const Batch val = split_batch(data, state.model.head, data::Split::Val);

    for (std::size_t epoch = state.epochs_done; epoch < config.epochs; ++epoch) {
        if (epoch == config.prune_epoch && config.prune_fraction > 0.0 && state.model.prune_masks.empty())
            prune_smallest(state.model, config.prune_fraction);

        std::vector<std::size_t> order = train_idx;
        Rng rng(derive_seed(config.seed, "shuffle", epoch));
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0, wc_sum = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(
                                                                   std::min(order.size(), start + config.batch_size)));
            const Batch batch = make_batch(data, state.model.head, idx);
            ad::Tape tape;
            const MlpVars vars = bind(state.model, tape, true);
            const LossResult lr = loss(tape, vars, state.model, ctx, batch, config.weights);
            ad::Var total = lr.total;
            if (config.worst_case) {
                const ad::Var wc = config.worst_case(tape, vars);
                wc_sum += wc.scalar();
                if (config.weights.wc != 0.0) total = ad::add(total, ad::scale(wc, config.weights.wc));
            }
            if (!std::isfinite(total.scalar())) throw Divergence(static_cast<int>(epoch + 1));
            loss_sum += lr.total.scalar();
            ++steps;
            tape.backward(total);
            std::vector<MatrixXd> grads;
            for (std::size_t k = 0; k < vars.weights.size(); ++k) {
                grads.push_back(tape.grad(vars.weights[k]));
                grads.push_back(tape.grad(vars.biases[k]));
            }
            adam_step(state.model, state.adam, grads, config.learning_rate);
        }

        HistoryRow row;
        row.epoch = epoch + 1;
        row.train_loss = loss_sum / static_cast<double>(steps);
        row.val_loss = val.size() > 0 ? evaluate_loss(state.model, ctx, val, config.weights).weighted(config.weights)
                                      : std::numeric_limits<double>::quiet_NaN();
        if (config.worst_case) row.worst_case = wc_sum / static_cast<double>(steps);
        if (!std::isfinite(row.train_loss)) throw Divergence(static_cast<int>(epoch + 1));
        state.history.push_back(row);
        state.epochs_done = epoch + 1;
        if (on_epoch) on_epoch(state);
    }
    return state;
}

void write_history(std::ostream& out, const std::vector<HistoryRow>& history) {
    out << "epoch,train_loss,val_loss,worst_case\n";
    char buf[96];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof buf, "%zu,%.12g,%.12g,%.12g\n", r.epoch, r.train_loss, r.val_loss, r.worst_case);
        out << buf;
    }
}

namespace {

json matrix_json(const MatrixXd& m) {
    json data = json::array();
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

MatrixXd matrix_from_json(const json& j) {
    const auto rows = j.at("rows").get<Index>();
    const auto cols = j.at("cols").get<Index>();
    const auto& data = j.at("data");
    if (static_cast<Index>(data.size()) != rows * cols) throw FormatError("checkpoint matrix has the wrong size");
    MatrixXd m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index c = 0; c < cols; ++c) m(i, c) = data[static_cast<std::size_t>(i * cols + c)].get<double>();
    return m;
}

json number_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }
double number_from(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

}  // namespace

json to_json(const TrainState& state) {
    json doc;
    doc["format"] = "opfcert-checkpoint";
    doc["model"] = to_json(state.model);
    doc["epochs_done"] = state.epochs_done;
    doc["adam_step"] = state.adam.step;
    json m = json::array(), v = json::array();
    for (const auto& x : state.adam.m) m.push_back(matrix_json(x));
    for (const auto& x : state.adam.v) v.push_back(matrix_json(x));
    doc["adam_m"] = std::move(m);
    doc["adam_v"] = std::move(v);
    json hist = json::array();
    for (const auto& r : state.history)
        hist.push_back({r.epoch, number_or_null(r.train_loss), number_or_null(r.val_loss),
                        number_or_null(r.worst_case)});
    doc["history"] = std::move(hist);
    return doc;
}

TrainState train_state_from_json(const json& doc) {
    try {
        if (doc.at("format") != "opfcert-checkpoint") throw FormatError("not an opfcert checkpoint");
        TrainState s;
        s.model = mlp_from_json(doc.at("model"));
        s.epochs_done = doc.at("epochs_done").get<std::size_t>();
        s.adam.step = doc.at("adam_step").get<std::uint64_t>();
        for (const auto& x : doc.at("adam_m")) s.adam.m.push_back(matrix_from_json(x));
        for (const auto& x : doc.at("adam_v")) s.adam.v.push_back(matrix_from_json(x));
        if (s.adam.m.size() != s.adam.v.size()) throw FormatError("checkpoint optimizer state is inconsistent");
        for (const auto& r : doc.at("history"))
            s.history.push_back({r.at(0).get<std::size_t>(), number_from(r.at(1)), number_from(r.at(2)),
                                 number_from(r.at(3))});
        return s;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed checkpoint: ") + e.what());
    }
}

void save_checkpoint(const std::string& path, const TrainState& state) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write checkpoint '" + path + "'");
    out << to_json(state).dump() << '\n';
    if (!out) throw InputError("failed writing checkpoint '" + path + "'");
}

TrainState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open checkpoint '" + path + "'");
    try {
        return train_state_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw FormatError("checkpoint '" + path + "': " + e.what());
    }
}

}  // namespace opfcert::nn
