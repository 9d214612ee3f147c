#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "opfcert/common/errors.hpp"
#include "opfcert/pipeline/config.hpp"
#include "opfcert/pipeline/pipeline.hpp"
#include "opfcert/version.hpp"

namespace {

using namespace opfcert;

enum ExitCode { kOk = 0, kValidation = 1, kNumerical = 2 };

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> head;
    std::optional<std::string> variant;
    std::optional<unsigned> workers;
    std::vector<std::string> set;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "run configuration (INI)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", f.seed, "master seed");
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--head", f.head, "voltage or power");
    cmd->add_option("--variant", f.variant, "base or crown");
    cmd->add_option("--workers", f.workers, "worker threads");
    cmd->add_option("--set", f.set, "override section.key=value")->take_all();
}

pipeline::RunConfig resolve(const CommonFlags& f) {
    pipeline::RunConfig c = pipeline::load_config(f.config);
    for (const auto& kv : f.set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ValidationError("--set expects section.key=value, got '" + kv + "'");
        pipeline::set_value(c, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (f.seed) c.seed = *f.seed;
    if (f.out) c.out_dir = *f.out;
    if (f.head) pipeline::set_value(c, "train.head", *f.head);
    if (f.variant) pipeline::set_value(c, "train.variant", *f.variant);
    if (f.workers) c.workers = *f.workers;
    c.validate();
    spdlog::info("config {} -> {}", pipeline::config_hash(c), c.out_dir);
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Train, certify and evaluate neural AC-OPF proxies"};
    app.set_version_flag("--version", std::string(opfcert::kVersion));
    app.require_subcommand(1);
    spdlog::set_pattern("[%H:%M:%S] %v");

    CommonFlags flags;
    bool resume = false;
    std::string model_path;

    auto* gen = app.add_subcommand("gen-data", "sample load scenarios and solve their OPF labels");
    add_common(gen, flags);
    auto* train = app.add_subcommand("train", "train a base or crown network");
    add_common(train, flags);
    train->add_flag("--resume", resume, "continue from the run's checkpoint");
    auto* verify = app.add_subcommand("verify", "certify worst-case violations and run the delta sweep");
    add_common(verify, flags);
    verify->add_option("--model", model_path, "model file (default: the run's model)");
    auto* restore = app.add_subcommand("restore", "warm start and feasibility restoration from a voltage network");
    add_common(restore, flags);
    restore->add_option("--model", model_path, "model file (default: the run's model)");
    auto* report = app.add_subcommand("report", "consolidate base and crown results of a run directory");
    add_common(report, flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kValidation;
    }

    try {
        const pipeline::RunConfig config = resolve(flags);
        if (gen->parsed()) {
            const auto data = pipeline::cmd_gen_data(config);
            spdlog::info("wrote {} labeled scenarios to {}", data.size(), pipeline::Paths(config).dataset);
        } else if (train->parsed()) {
            const auto state = pipeline::cmd_train(config, resume);
            const auto& last = state.history.back();
            spdlog::info("trained {} epochs, train loss {:.6g}, val loss {:.6g} -> {}", state.epochs_done,
                         last.train_loss, last.val_loss, pipeline::Paths(config).model);
        } else if (verify->parsed()) {
            const auto v = pipeline::cmd_verify(config, model_path);
            for (const auto& [kind, nu] : verify::kind_maxima(v.certificates))
                spdlog::info("certified max {:<8} {:.6g}", bounds::kind_name(kind), nu);
            spdlog::info("report -> {}", pipeline::Paths(config).verification);
        } else if (restore->parsed()) {
            const auto r = pipeline::cmd_restore(config, model_path);
            spdlog::info("warm start: {} rows, iterations {:+.2f}%, cost {:+.4f}%", r.warm.summary.aggregated,
                         r.warm.summary.mean_iteration_change_pct, r.warm.summary.mean_cost_change_pct);
            spdlog::info("restoration: {}/{} feasible, cost {:+.4f}%", r.feasible, r.restoration.size(),
                         r.mean_cost_change_pct);
        } else if (report->parsed()) {
            std::cout << pipeline::report_text(pipeline::cmd_report(config));
        }
    } catch (const NumericalError& e) {
        spdlog::error("{}", e.what());
        return kNumerical;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kValidation;
    }
    return kOk;
}
