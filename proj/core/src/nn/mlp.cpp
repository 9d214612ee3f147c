#include "opfcert/nn/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "opfcert/common/errors.hpp"
#include "opfcert/common/random.hpp"
#include "opfcert/version.hpp"

namespace opfcert::nn {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

const char* head_name(Head h) { return h == Head::Power ? "power" : "voltage"; }

Head parse_head(std::string_view name) {
    if (name == "power") return Head::Power;
    if (name == "voltage") return Head::Voltage;
    throw ValidationError("unknown head '" + std::string(name) + "'");
}

Normalization Normalization::identity(Index n) { return {VectorXd::Zero(n), VectorXd::Ones(n)}; }

Normalization Normalization::fit(const MatrixXd& samples) {
    if (samples.rows() == 0) throw ValidationError("cannot fit a normalization to zero samples");
    Normalization n;
    n.shift = samples.colwise().mean().transpose();
    n.scale.resize(samples.cols());
    for (Index j = 0; j < samples.cols(); ++j) {
        const double var = (samples.col(j).array() - n.shift(j)).square().mean();
        const double sd = std::sqrt(var);
        // Columns that are constant up to solver noise (slack angle, generator voltages
        // pinned at a limit) keep unit scale.
        n.scale(j) = sd > 1e-6 ? sd : 1.0;
    }
    return n;
}

VectorXd Normalization::normalize(const VectorXd& x) const { return (x - shift).cwiseQuotient(scale); }
VectorXd Normalization::denormalize(const VectorXd& y) const { return shift + scale.cwiseProduct(y); }

std::size_t MlpModel::num_parameters() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
}

void MlpModel::validate() const {
    if (layers.empty()) throw ValidationError("model has no layers");
    for (std::size_t k = 0; k < layers.size(); ++k) {
        if (layers[k].bias.size() != layers[k].weight.rows())
            throw ValidationError("layer " + std::to_string(k) + ": bias does not match weight rows");
        if (k > 0 && layers[k].weight.cols() != layers[k - 1].weight.rows())
            throw ValidationError("layer " + std::to_string(k) + ": input width does not match previous layer");
    }
    if (input_norm.shift.size() != input_dim() || input_norm.scale.size() != input_dim())
        throw ValidationError("input normalization does not match the input width");
    if (output_norm.shift.size() != output_dim() || output_norm.scale.size() != output_dim())
        throw ValidationError("output normalization does not match the output width");
    if ((input_norm.scale.array() == 0.0).any() || (output_norm.scale.array() == 0.0).any())
        throw ValidationError("normalization scales must be nonzero");
    if (!prune_masks.empty()) {
        if (prune_masks.size() != num_hidden()) throw ValidationError("one prune mask per hidden layer expected");
        for (std::size_t k = 0; k < prune_masks.size(); ++k) {
            const auto& m = prune_masks[k];
            if (m.rows() != layers[k].weight.rows() || m.cols() != layers[k].weight.cols())
                throw ValidationError("prune mask " + std::to_string(k) + " has the wrong shape");
            if (((m.array() != 0.0) && (m.array() != 1.0)).any())
                throw ValidationError("prune mask " + std::to_string(k) + " must be 0/1");
        }
    }
}

MlpModel init_mlp(Head head, Index input_dim, Index output_dim, Index hidden_width, std::size_t hidden_layers,
                  std::uint64_t seed) {
    if (input_dim <= 0 || output_dim <= 0 || hidden_width <= 0)
        throw ValidationError("layer widths must be positive");
    MlpModel m;
    m.head = head;
    Rng rng = make_rng(seed, "init");
    Index fan_in = input_dim;
    for (std::size_t k = 0; k <= hidden_layers; ++k) {
        const Index out = k == hidden_layers ? output_dim : hidden_width;
        const double r = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-r, r);
        Layer l{MatrixXd(out, fan_in), VectorXd(out)};
        // Row-major draw order so the stream maps onto the serialized layout.
        for (Index i = 0; i < out; ++i)
            for (Index j = 0; j < fan_in; ++j) l.weight(i, j) = u(rng);
        for (Index i = 0; i < out; ++i) l.bias(i) = u(rng);
        m.layers.push_back(std::move(l));
        fan_in = out;
    }
    m.input_norm = Normalization::identity(input_dim);
    m.output_norm = Normalization::identity(output_dim);
    return m;
}

VectorXd forward(const MlpModel& model, const VectorXd& x_normalized) {
    if (x_normalized.size() != model.input_dim())
        throw ValidationError("input has " + std::to_string(x_normalized.size()) + " entries, model expects " +
                              std::to_string(model.input_dim()));
    VectorXd h = x_normalized;
    for (std::size_t k = 0; k < model.layers.size(); ++k) {
        h = model.layers[k].weight * h + model.layers[k].bias;
        if (k + 1 < model.layers.size()) h = h.cwiseMax(0.0);
    }
    return h;
}

VectorXd predict(const MlpModel& model, const VectorXd& x) {
    return model.output_norm.denormalize(forward(model, model.input_norm.normalize(x)));
}

MatrixXd predict_columns(const MlpModel& model, const MatrixXd& x) {
    MatrixXd h = (x.colwise() - model.input_norm.shift).array().colwise() / model.input_norm.scale.array();
    for (std::size_t k = 0; k < model.layers.size(); ++k) {
        h = (model.layers[k].weight * h).colwise() + model.layers[k].bias;
        if (k + 1 < model.layers.size()) h = h.cwiseMax(0.0);
    }
    return (h.array().colwise() * model.output_norm.scale.array()).matrix().colwise() + model.output_norm.shift;
}

MlpVars bind(const MlpModel& model, ad::Tape& tape, bool trainable) {
    MlpVars v;
    for (const auto& l : model.layers) {
        v.weights.push_back(trainable ? tape.variable(l.weight) : tape.constant(l.weight));
        v.biases.push_back(trainable ? tape.variable(l.bias) : tape.constant(l.bias));
    }
    return v;
}

ad::Var forward(const MlpVars& vars, const ad::Var& x_normalized) {
    ad::Var h = x_normalized;
    for (std::size_t k = 0; k < vars.weights.size(); ++k) {
        h = ad::add_col(ad::matmul(vars.weights[k], h), vars.biases[k]);
        if (k + 1 < vars.weights.size()) h = ad::relu(h);
    }
    return h;
}

void prune_smallest(MlpModel& model, double fraction) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) throw ValidationError("prune fraction must lie in [0, 1]");
    model.prune_masks.clear();
    for (std::size_t k = 0; k < model.num_hidden(); ++k) {
        const MatrixXd& w = model.layers[k].weight;
        const auto count = static_cast<std::size_t>(w.size());
        const auto n_zero = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(count)));
        std::vector<Index> order(count);
        std::iota(order.begin(), order.end(), Index{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](Index a, Index b) { return std::abs(w.data()[a]) < std::abs(w.data()[b]); });
        MatrixXd mask = MatrixXd::Ones(w.rows(), w.cols());
        for (std::size_t r = 0; r < n_zero; ++r) mask.data()[order[r]] = 0.0;
        model.prune_masks.push_back(std::move(mask));
    }
    apply_masks(model);
}

void apply_masks(MlpModel& model) {
    for (std::size_t k = 0; k < model.prune_masks.size(); ++k)
        model.layers[k].weight = model.layers[k].weight.cwiseProduct(model.prune_masks[k]);
}

namespace {

json row_major(const MatrixXd& m) {
    json a = json::array();
    for (Index i = 0; i < m.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) a.push_back(m(i, j));
    return a;
}

json vec(const VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

MatrixXd matrix_from(const json& a, Index rows, Index cols, const std::string& what) {
    if (!a.is_array() || static_cast<Index>(a.size()) != rows * cols)
        throw FormatError(what + ": expected " + std::to_string(rows * cols) + " values");
    MatrixXd m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = a[static_cast<std::size_t>(i * cols + j)].get<double>();
    return m;
}

VectorXd vector_from(const json& a, const std::string& what) {
    if (!a.is_array()) throw FormatError(what + ": expected an array");
    const auto v = a.get<std::vector<double>>();
    return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

}  // namespace

json to_json(const MlpModel& model) {
    json doc;
    doc["format"] = "opfcert-mlp";
    doc["version"] = kVersion;
    doc["head"] = head_name(model.head);
    doc["activation"] = "relu";
    doc["config_hash"] = model.config_hash;
    json layers = json::array();
    for (const auto& l : model.layers)
        layers.push_back({{"rows", l.weight.rows()}, {"cols", l.weight.cols()}, {"weight", row_major(l.weight)},
                          {"bias", vec(l.bias)}});
    doc["layers"] = std::move(layers);
    doc["input_norm"] = {{"shift", vec(model.input_norm.shift)}, {"scale", vec(model.input_norm.scale)}};
    doc["output_norm"] = {{"shift", vec(model.output_norm.shift)}, {"scale", vec(model.output_norm.scale)}};
    json masks = json::array();
    for (const auto& m : model.prune_masks) masks.push_back(row_major(m));
    doc["prune_masks"] = std::move(masks);
    return doc;
}

MlpModel mlp_from_json(const json& doc) {
    try {
        if (doc.at("format") != "opfcert-mlp") throw FormatError("not an opfcert model document");
        MlpModel m;
        m.head = parse_head(doc.at("head").get<std::string>());
        m.config_hash = doc.value("config_hash", "");
        for (const auto& l : doc.at("layers")) {
            const auto rows = l.at("rows").get<Index>();
            const auto cols = l.at("cols").get<Index>();
            m.layers.push_back({matrix_from(l.at("weight"), rows, cols, "layer weight"),
                                vector_from(l.at("bias"), "layer bias")});
        }
        m.input_norm = {vector_from(doc.at("input_norm").at("shift"), "input shift"),
                        vector_from(doc.at("input_norm").at("scale"), "input scale")};
        m.output_norm = {vector_from(doc.at("output_norm").at("shift"), "output shift"),
                         vector_from(doc.at("output_norm").at("scale"), "output scale")};
        const auto& masks = doc.at("prune_masks");
        for (std::size_t k = 0; k < masks.size(); ++k) {
            if (k >= m.layers.size()) throw FormatError("more prune masks than layers");
            m.prune_masks.push_back(
                matrix_from(masks[k], m.layers[k].weight.rows(), m.layers[k].weight.cols(), "prune mask"));
        }
        m.validate();
        return m;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed model document: ") + e.what());
    } catch (const ValidationError& e) {
        throw FormatError(std::string("invalid model: ") + e.what());
    }
}

void save_model(const std::string& path, const MlpModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write model '" + path + "'");
    out << to_json(model).dump(1) << '\n';
    if (!out) throw InputError("failed writing model '" + path + "'");
}

MlpModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open model '" + path + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError("model '" + path + "': " + e.what());
    }
    return mlp_from_json(doc);
}

}  // namespace opfcert::nn
