#include "opfcert/pipeline/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "opfcert/acpf/acpf.hpp"
#include "opfcert/common/errors.hpp"
#include "opfcert/common/parallel.hpp"
#include "opfcert/version.hpp"

namespace opfcert::pipeline {

namespace fs = std::filesystem;
using bounds::ConstraintKind;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

Network::Network(const std::string& case_path) : Network(grid::load_case_file(case_path)) {}

Network::Network(grid::GridModel model)
    : grid(std::move(model)), adm(grid::build_admittances(grid)), ctx(grid, adm) {}

std::string Paths::stem(nn::Head head, Variant variant) {
    return std::string(nn::head_name(head)) + "_" + variant_name(variant);
}

Paths::Paths(const RunConfig& config) {
    const fs::path dir(config.out_dir);
    const std::string s = stem(config.head, config.variant);
    auto at = [&](const std::string& name) { return (dir / name).string(); };
    dataset = at("dataset.csv");
    model = at("model_" + s + ".json");
    checkpoint = at("checkpoint_" + s + ".json");
    history = at("history_" + s + ".csv");
    verification = at("verify_" + s + ".json");
    sweep = at("sweep_" + s + ".csv");
    restore_json = at("restore_" + s + ".json");
    restore_csv = at("restore_" + s + ".csv");
    report_json = at("report.json");
    report_txt = at("report.txt");
}

data::LabeledDataset make_dataset(const RunConfig& config, const Network& net) {
    data::SamplingConfig sampling = config.sampling;
    sampling.seed = config.seed;
    data::LabelingOptions options;
    options.workers = config.workers;
    return data::generate_labels(net.grid, net.adm, data::sample_scenarios(net.grid, sampling), options);
}

namespace {

nn::Hyperparameters hyperparameters(const RunConfig& config, const Network& net) {
    nn::Hyperparameters hp = nn::default_hyperparameters(net.grid.num_buses());
    if (config.hidden > 0) hp.hidden = config.hidden;
    if (config.batch > 0) hp.batch = config.batch;
    if (config.learning_rate > 0.0) hp.learning_rate = config.learning_rate;
    return hp;
}

}  // namespace

nn::MlpModel initial_model(const RunConfig& config, const Network& net, const data::LabeledDataset& data) {
    nn::MlpModel m = nn::make_model(config.head, net.ctx, data, hyperparameters(config, net).hidden, config.seed);
    m.config_hash = config_hash(config);
    return m;
}

nn::TrainConfig train_config(const RunConfig& config, const Network& net, const nn::MlpModel& model) {
    const nn::Hyperparameters hp = hyperparameters(config, net);
    nn::TrainConfig tc;
    tc.epochs = config.epochs;
    tc.batch_size = hp.batch;
    tc.learning_rate = hp.learning_rate;
    tc.weights = config.weights;
    tc.seed = config.seed;
    tc.prune_epoch = config.prune_epoch;
    tc.prune_fraction = config.prune_fraction;
    if (config.variant == Variant::Crown && config.weights.wc > 0.0)
        tc.worst_case = bounds::make_worst_case_hook(model, net.ctx, bounds::Box::load_domain(net.grid, config.wc_delta));
    else
        tc.weights.wc = 0.0;
    return tc;
}

nn::TrainState train_network(const RunConfig& config, const Network& net, const data::LabeledDataset& data) {
    const nn::MlpModel m = initial_model(config, net, data);
    return nn::train(m, net.ctx, data, train_config(config, net, m));
}

verify::CertifyOptions certify_options(const RunConfig& config, const Network& net) {
    verify::CertifyOptions o;
    o.budget.max_subdomains = config.max_subdomains;
    o.budget.timeout_seconds = config.timeout_seconds < 0.0
                                   ? verify::default_budget(static_cast<Index>(net.grid.num_buses())).timeout_seconds
                                   : config.timeout_seconds;
    o.gap_tolerance = config.gap_tolerance;
    o.bounds = config.certify_bounds;
    o.attack.restarts = config.attack_restarts;
    o.attack.steps = config.attack_steps;
    o.attack.seed = config.seed;
    o.workers = config.workers;
    return o;
}

Verification verify_network(const RunConfig& config, const Network& net, const nn::MlpModel& model) {
    const verify::CertifyOptions options = certify_options(config, net);
    const auto ids = bounds::constraint_set(model.head, net.ctx);
    Verification v;
    v.certificates = verify::certify_all(model, net.ctx, bounds::Box::load_domain(net.grid), ids, options);
    v.sweep = verify::delta_sweep(model, net.ctx, net.grid, ids, config.deltas, options);
    return v;
}

double test_rmse(const nn::MlpModel& model, const data::LabeledDataset& data) {
    const nn::Batch test = nn::split_batch(data, model.head, data::Split::Test);
    const MatrixXd pred = nn::predict_columns(model, test.inputs);
    return std::sqrt((pred - test.targets).squaredNorm() / static_cast<double>(pred.size()));
}

std::vector<std::pair<ConstraintKind, double>> sampled_maxima(const nn::MlpModel& model, const nn::GridContext& ctx,
                                                              const data::LabeledDataset& data) {
    const auto ids = bounds::constraint_set(model.head, ctx);
    const nn::Batch test = nn::split_batch(data, model.head, data::Split::Test);
    VectorXd worst = VectorXd::Zero(static_cast<Index>(ids.size()));
    for (Index s = 0; s < test.inputs.cols(); ++s)
        worst = worst.cwiseMax(bounds::violations(model, ctx, test.inputs.col(s)));
    std::vector<std::pair<ConstraintKind, double>> out;
    for (std::size_t k = 0; k < ids.size(); ++k) {
        auto it = std::find_if(out.begin(), out.end(), [&](const auto& e) { return e.first == ids[k].kind; });
        if (it == out.end())
            out.emplace_back(ids[k].kind, worst(static_cast<Index>(k)));
        else
            it->second = std::max(it->second, worst(static_cast<Index>(k)));
    }
    return out;
}

namespace {

opt::OpfPoint predicted_point(const Network& net, const nn::MlpModel& model, const acpf::LoadScenario& s) {
    return opt::point_from_voltages(net.grid, net.adm, s, acpf::VoltageState(nn::predict(model, s.to_input())));
}

}  // namespace

RestoreResult restore_network(const RunConfig& config, const Network& net, const nn::MlpModel& model,
                              const data::LabeledDataset& data) {
    if (model.head != nn::Head::Voltage) throw HeadMismatch("restore needs a voltage-head model");
    data::check_compatible(data, net.grid);
    std::vector<acpf::LoadScenario> scenarios;
    for (std::size_t i : data.indices(data::Split::Test)) {
        if (scenarios.size() == config.restore_scenarios) break;
        scenarios.push_back(data.samples[i].load);
    }
    RestoreResult r;
    r.warm = opt::warm_start_report(
        net.grid, net.adm, scenarios, [&](const acpf::LoadScenario& s) { return predicted_point(net, model, s); }, {},
        config.workers);
    r.restoration.resize(scenarios.size());
    parallel_for(scenarios.size(), config.workers, [&](std::size_t i) {
        RestoreRow& row = r.restoration[i];
        row.index = i;
        try {
            const opt::Restoration res =
                opt::restore_feasible(net.grid, net.adm, scenarios[i], predicted_point(net, model, scenarios[i]));
            row.ok = true;
            row.objective = res.solution.objective;
            row.distance = res.distance();
            row.iterations = res.solution.iterations;
            row.max_violation =
                acpf::constraint_residuals(net.grid, net.adm, res.solution.v, scenarios[i]).max_violation();
        } catch (const NumericalError& e) {
            row.error = e.what();
        }
    });
    double cost = 0.0;
    for (std::size_t i = 0; i < r.restoration.size(); ++i) {
        const RestoreRow& row = r.restoration[i];
        if (!row.ok) continue;
        ++r.restored;
        if (row.max_violation <= 1e-6) ++r.feasible;
        r.max_violation = std::max(r.max_violation, row.max_violation);
        const opt::WarmStartRow& w = r.warm.rows[i];
        if (w.ok) cost += 100.0 * (row.objective - w.cold_objective) / std::abs(w.cold_objective);
    }
    std::size_t both = 0;
    for (std::size_t i = 0; i < r.restoration.size(); ++i) both += r.restoration[i].ok && r.warm.rows[i].ok;
    r.mean_cost_change_pct = both > 0 ? cost / static_cast<double>(both) : 0.0;
    return r;
}

json to_json(const RestoreResult& r) {
    const opt::WarmStartSummary& s = r.warm.summary;
    json rows = json::array();
    for (std::size_t i = 0; i < r.restoration.size(); ++i) {
        const RestoreRow& x = r.restoration[i];
        const opt::WarmStartRow& w = r.warm.rows[i];
        rows.push_back({{"index", x.index},
                        {"warm_ok", w.ok},
                        {"cold_objective", w.cold_objective},
                        {"warm_objective", w.warm_objective},
                        {"cold_iterations", w.cold_iterations},
                        {"warm_iterations", w.warm_iterations},
                        {"restore_ok", x.ok},
                        {"restored_objective", x.objective},
                        {"restore_distance", x.distance},
                        {"restore_max_violation", x.max_violation}});
    }
    return {{"warm_start",
             {{"scenarios", s.scenarios},
              {"failed", s.failed},
              {"trimmed", s.trimmed},
              {"aggregated", s.aggregated},
              {"mean_cold_iterations", s.mean_cold_iterations},
              {"mean_warm_iterations", s.mean_warm_iterations},
              {"mean_iteration_change_pct", s.mean_iteration_change_pct},
              {"mean_cost_change_pct", s.mean_cost_change_pct},
              {"matching_fraction", s.matching_fraction}}},
            {"restoration",
             {{"restored", r.restored},
              {"feasible", r.feasible},
              {"mean_cost_change_pct", r.mean_cost_change_pct},
              {"max_violation", r.max_violation}}},
            {"rows", std::move(rows)}};
}

namespace {

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ValidationError("cannot create output directory " + dir + ": " + ec.message());
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path);
    return out;
}

void stamp(std::ostream& out, const std::string& hash) {
    out << "# config_hash=" << hash << "\n# version=" << kVersion << '\n';
}

data::LabeledDataset load_dataset(const Paths& paths, const Network& net) {
    if (!fs::exists(paths.dataset))
        throw ValidationError("dataset " + paths.dataset + " not found; run gen-data first");
    data::LabeledDataset data = data::read_dataset(paths.dataset);
    data::check_compatible(data, net.grid);
    return data;
}

nn::MlpModel load_trained(const Paths& paths, const std::string& model_path) {
    const std::string path = model_path.empty() ? paths.model : model_path;
    if (!fs::exists(path)) throw ValidationError("model " + path + " not found; run train first");
    return nn::load_model(path);
}

void write_json(const std::string& path, const json& doc) { open_out(path) << doc.dump(1) << '\n'; }

json kinds_json(const std::vector<std::pair<ConstraintKind, double>>& kinds) {
    json j = json::object();
    for (const auto& [k, v] : kinds) j[bounds::kind_name(k)] = v;
    return j;
}

}  // namespace

data::LabeledDataset cmd_gen_data(const RunConfig& config) {
    config.validate();
    const Network net(config.case_path);
    data::LabeledDataset data = make_dataset(config, net);
    data.metadata.emplace_back("config_hash", config_hash(config));
    ensure_dir(config.out_dir);
    data::write_dataset(Paths(config).dataset, data);
    return data;
}

nn::TrainState cmd_train(const RunConfig& config, bool resume) {
    config.validate();
    const Network net(config.case_path);
    const Paths paths(config);
    const data::LabeledDataset data = load_dataset(paths, net);
    const std::string hash = config_hash(config);
    nn::TrainState state;
    if (resume) {
        if (!fs::exists(paths.checkpoint)) throw ValidationError("checkpoint " + paths.checkpoint + " not found");
        state = nn::load_checkpoint(paths.checkpoint);
        if (state.model.config_hash != hash)
            throw ValidationError("checkpoint was written by a different configuration (" + state.model.config_hash + ")");
        state = nn::resume(std::move(state), net.ctx, data, train_config(config, net, state.model),
                           [&](const nn::TrainState& s) { nn::save_checkpoint(paths.checkpoint, s); });
    } else {
        const nn::MlpModel m = initial_model(config, net, data);
        state = nn::train(m, net.ctx, data, train_config(config, net, m),
                          [&](const nn::TrainState& s) { nn::save_checkpoint(paths.checkpoint, s); });
    }
    ensure_dir(config.out_dir);
    nn::save_model(paths.model, state.model);
    nn::save_checkpoint(paths.checkpoint, state);
    std::ofstream hist = open_out(paths.history);
    stamp(hist, hash);
    nn::write_history(hist, state.history);
    return state;
}

Verification cmd_verify(const RunConfig& config, const std::string& model_path) {
    config.validate();
    const Network net(config.case_path);
    const Paths paths(config);
    const nn::MlpModel model = load_trained(paths, model_path);
    const Verification v = verify_network(config, net, model);
    const std::string hash = config_hash(config);
    ensure_dir(config.out_dir);
    json doc = verify::report_json(v.certificates, hash);
    doc["model_config_hash"] = model.config_hash;
    write_json(paths.verification, doc);
    std::ofstream sweep = open_out(paths.sweep);
    stamp(sweep, hash);
    verify::write_sweep(sweep, v.sweep);
    return v;
}

RestoreResult cmd_restore(const RunConfig& config, const std::string& model_path) {
    config.validate();
    const Network net(config.case_path);
    const Paths paths(config);
    const nn::MlpModel model = load_trained(paths, model_path);
    const data::LabeledDataset data = load_dataset(paths, net);
    const RestoreResult r = restore_network(config, net, model, data);
    const std::string hash = config_hash(config);
    ensure_dir(config.out_dir);
    json doc = to_json(r);
    doc["format"] = "opfcert-restore";
    doc["version"] = kVersion;
    doc["config_hash"] = hash;
    doc["model_config_hash"] = model.config_hash;
    write_json(paths.restore_json, doc);
    std::ofstream csv = open_out(paths.restore_csv);
    stamp(csv, hash);
    opt::write_csv(csv, r.warm);
    return r;
}

json cmd_report(const RunConfig& config) {
    config.validate();
    const Network net(config.case_path);
    const Paths base_paths(config);
    const bool have_data = fs::exists(base_paths.dataset);
    data::LabeledDataset data;
    if (have_data) data = load_dataset(base_paths, net);

    json heads = json::object();
    for (nn::Head head : {nn::Head::Voltage, nn::Head::Power}) {
        json variants = json::object();
        for (Variant variant : {Variant::Base, Variant::Crown}) {
            RunConfig c = config;
            c.head = head;
            c.variant = variant;
            const Paths p(c);
            if (!fs::exists(p.model)) continue;
            const nn::MlpModel model = nn::load_model(p.model);
            json entry = {{"model", fs::path(p.model).filename().string()}, {"model_config_hash", model.config_hash}};
            if (have_data) {
                entry["test_rmse"] = test_rmse(model, data);
                entry["statistical"] = kinds_json(sampled_maxima(model, net.ctx, data));
            }
            // Results computed from another model than the one on disk are left out.
            auto same_model = [&](const json& doc) { return doc.value("model_config_hash", "") == model.config_hash; };
            auto read_json = [](const std::string& path) {
                std::ifstream in(path);
                return json::parse(in);
            };
            if (fs::exists(p.verification)) {
                if (same_model(read_json(p.verification)))
                    entry["verified"] = kinds_json(verify::kind_maxima(verify::read_report(p.verification)));
                else
                    entry["stale"].push_back(fs::path(p.verification).filename().string());
            }
            if (fs::exists(p.restore_json)) {
                const json r = read_json(p.restore_json);
                if (same_model(r))
                    entry["restore"] = {{"warm_start", r.at("warm_start")}, {"restoration", r.at("restoration")}};
                else
                    entry["stale"].push_back(fs::path(p.restore_json).filename().string());
            }
            variants[variant_name(variant)] = std::move(entry);
        }
        if (!variants.empty()) heads[nn::head_name(head)] = std::move(variants);
    }
    if (heads.empty()) throw ValidationError("no trained models found in " + config.out_dir);
    json report = {{"format", "opfcert-report"},
                   {"version", kVersion},
                   {"config_hash", config_hash(config)},
                   {"heads", std::move(heads)}};
    ensure_dir(config.out_dir);
    write_json(base_paths.report_json, report);
    open_out(base_paths.report_txt) << report_text(report);
    return report;
}

std::string report_text(const json& report) {
    std::ostringstream out;
    char buf[160];
    out << "opfcert report (config " << report.value("config_hash", "") << ", version "
        << report.value("version", "") << ")\n";
    for (const auto& [head, variants] : report.at("heads").items()) {
        out << "\n" << head << " head\n";
        std::snprintf(buf, sizeof buf, "  %-22s %14s %14s\n", "", "base", "crown");
        out << buf;
        auto cell = [&](const char* variant, const std::string& section, const std::string& key) -> std::string {
            if (!variants.contains(variant) || !variants[variant].contains(section)) return "-";
            const json& s = variants[variant][section];
            const json& v = key.empty() ? s : (s.contains(key) ? s[key] : json());
            if (!v.is_number()) return "-";
            char num[32];
            std::snprintf(num, sizeof num, "%.4g", v.get<double>());
            return num;
        };
        auto line = [&](const std::string& label, const std::string& section, const std::string& key) {
            std::snprintf(buf, sizeof buf, "  %-22s %14s %14s\n", label.c_str(), cell("base", section, key).c_str(),
                          cell("crown", section, key).c_str());
            out << buf;
        };
        line("test rmse", "test_rmse", "");
        std::vector<std::string> kinds;
        for (const char* variant : {"base", "crown"})
            for (const char* section : {"statistical", "verified"})
                if (variants.contains(variant) && variants[variant].contains(section))
                    for (const auto& [k, v] : variants[variant][section].items())
                        if (std::find(kinds.begin(), kinds.end(), k) == kinds.end()) kinds.push_back(k);
        std::sort(kinds.begin(), kinds.end(), [](const std::string& a, const std::string& b) {
            return bounds::parse_kind(a) < bounds::parse_kind(b);
        });
        for (const auto& k : kinds) line("sampled max " + k, "statistical", k);
        for (const auto& k : kinds) line("verified max " + k, "verified", k);
    }
    return out.str();
}

}  // namespace opfcert::pipeline
