#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <vector>

#include <unistd.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "opfcert/common/errors.hpp"
#include "opfcert/pipeline/config.hpp"
#include "opfcert/pipeline/pipeline.hpp"
#include "test_cases.hpp"

namespace opfcert::pipeline {
namespace {

namespace fs = std::filesystem;

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

// Per-process scratch directories, removed when the process exits.
struct ScratchDirs {
    std::vector<fs::path> dirs;
    ~ScratchDirs() {
        std::error_code ec;
        for (const auto& d : dirs) fs::remove_all(d, ec);
    }
};

fs::path scratch(const std::string& name) {
    static ScratchDirs created;
    const fs::path dir =
        fs::temp_directory_path() / ("opfcert_pipeline_" + std::to_string(::getpid()) + "_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    created.dirs.push_back(dir);
    return dir;
}

// Small case9 run: enough for every command to execute in a few seconds.
RunConfig small_config(const fs::path& out) {
    RunConfig c;
    c.case_path = testing::data_path("cases/case9.m");
    c.out_dir = out.string();
    c.sampling.n_samples = 40;
    c.hidden = 8;
    c.epochs = 4;
    c.prune_epoch = 2;
    c.max_subdomains = 4;
    c.timeout_seconds = 0.0;
    c.attack_restarts = 1;
    c.attack_steps = 5;
    c.deltas = {0.0, 0.1};
    c.restore_scenarios = 4;
    return c;
}

TEST(PipelineConfig, ParsesSectionsAndResolvesCasePath) {
    std::istringstream in(
        "[run]\nseed = 7\nout = somewhere\n[case]\npath = cases/x.m\n[data]\nsamples = 55\n"
        "[train]\nhead = power\nvariant = crown\nepochs = 3\n[weights]\nwc = 0.5\n"
        "[verify]\nnorm = enclosure\nintermediate = interval\ndeltas = 0, 0.1,0.2\n");
    const RunConfig c = parse_config(in, "/base");
    EXPECT_EQ(c.seed, 7u);
    EXPECT_EQ(c.out_dir, "somewhere");
    EXPECT_EQ(c.case_path, "/base/cases/x.m");
    EXPECT_EQ(c.sampling.n_samples, 55u);
    EXPECT_EQ(c.head, nn::Head::Power);
    EXPECT_EQ(c.variant, Variant::Crown);
    EXPECT_EQ(c.epochs, 3u);
    EXPECT_DOUBLE_EQ(c.weights.wc, 0.5);
    EXPECT_EQ(c.certify_bounds.norm, bounds::NormMode::Enclosure);
    EXPECT_EQ(c.certify_bounds.intermediate, bounds::IntermediateMode::Interval);
    EXPECT_EQ(c.deltas, (std::vector<double>{0.0, 0.1, 0.2}));
}

TEST(PipelineConfig, RejectsUnknownKeysAndMalformedValues) {
    auto parse = [](const std::string& text) {
        std::istringstream in(text);
        return parse_config(in);
    };
    EXPECT_THROW(parse("[train]\nbogus = 1\n"), ValidationError);
    EXPECT_THROW(parse("[nope]\nseed = 1\n"), ValidationError);
    EXPECT_THROW(parse("seed = 1\n"), ValidationError);
    EXPECT_THROW(parse("[run]\nseed = -3\n"), ValidationError);
    EXPECT_THROW(parse("[train]\nlearning_rate = fast\n"), ValidationError);
    EXPECT_THROW(parse("[train]\nhead = current\n"), InputError);
    EXPECT_THROW(parse("[verify]\nnorm = l2\n"), ValidationError);
    EXPECT_THROW(parse("[run\nseed = 1\n"), ParseError);
}

TEST(PipelineConfig, ValidateRejectsInconsistentSettings) {
    RunConfig c = small_config("unused");
    EXPECT_NO_THROW(c.validate());
    auto expect_invalid = [&](auto mutate) {
        RunConfig bad = c;
        mutate(bad);
        EXPECT_THROW(bad.validate(), ValidationError);
    };
    expect_invalid([](RunConfig& r) { r.sampling.load_high = r.sampling.load_low; });
    expect_invalid([](RunConfig& r) { r.case_path.clear(); });
    expect_invalid([](RunConfig& r) { r.sampling.n_samples = 5; });
    expect_invalid([](RunConfig& r) { r.epochs = 0; });
    expect_invalid([](RunConfig& r) { r.prune_fraction = 1.0; });
    expect_invalid([](RunConfig& r) { r.wc_delta = 0.3; });
    expect_invalid([](RunConfig& r) { r.deltas = {0.1, 0.0}; });
    expect_invalid([](RunConfig& r) { r.deltas.clear(); });
    expect_invalid([](RunConfig& r) { r.max_subdomains = 0; });
}

TEST(PipelineConfig, HashCoversArtifactSettingsOnly) {
    const RunConfig c = small_config("a");
    const std::string h = config_hash(c);
    EXPECT_EQ(h.size(), 16u);
    EXPECT_EQ(h, config_hash(c));

    RunConfig moved = c;
    moved.out_dir = "b";
    moved.workers = 4;
    EXPECT_EQ(config_hash(moved), h);

    const fs::path copy = scratch("hash") / "case9.m";
    fs::copy_file(c.case_path, copy);
    moved.case_path = copy.string();
    EXPECT_EQ(config_hash(moved), h);

    for (const auto& [key, value] : std::vector<std::pair<std::string, std::string>>{
             {"run.seed", "1"}, {"data.samples", "41"}, {"train.variant", "crown"}, {"weights.wc", "0.01"},
             {"verify.gap", "0.001"}}) {
        RunConfig changed = c;
        set_value(changed, key, value);
        EXPECT_NE(config_hash(changed), h) << key;
    }
    std::ofstream(copy, std::ios::app) << "\n% edited\n";
    EXPECT_NE(config_hash(moved), h);
}

TEST(PipelineConfig, CanonicalTextRoundTripsThroughSetValue) {
    RunConfig c = small_config("x");
    c.seed = 11;
    c.weights.flow = 0.25;
    RunConfig copy;
    copy.case_path = c.case_path;
    std::istringstream lines(canonical_text(c));
    for (std::string line; std::getline(lines, line);) {
        const auto eq = line.find('=');
        if (line.substr(0, eq) != "case.path") set_value(copy, line.substr(0, eq), line.substr(eq + 1));
    }
    EXPECT_EQ(canonical_text(copy), canonical_text(c));
}

class PipelineRun : public ::testing::Test {
  protected:
    static void SetUpTestSuite() {
        dir_ = new fs::path(scratch("run"));
        config_ = new RunConfig(small_config(*dir_));
        cmd_gen_data(*config_);
    }
    static void TearDownTestSuite() {
        delete config_;
        delete dir_;
    }
    static fs::path* dir_;
    static RunConfig* config_;
};

fs::path* PipelineRun::dir_ = nullptr;
RunConfig* PipelineRun::config_ = nullptr;

TEST_F(PipelineRun, DatasetIsStampedAndSeedDeterministic) {
    const Paths paths(*config_);
    const auto data = data::read_dataset(paths.dataset);
    EXPECT_EQ(data.size(), 40u);
    bool stamped = false;
    for (const auto& [k, v] : data.metadata) stamped |= k == "config_hash" && v == config_hash(*config_);
    EXPECT_TRUE(stamped);

    RunConfig again = *config_;
    again.out_dir = scratch("run_again").string();
    cmd_gen_data(again);
    EXPECT_EQ(slurp(Paths(again).dataset), slurp(paths.dataset));

    again.seed = 1;
    cmd_gen_data(again);
    EXPECT_NE(slurp(Paths(again).dataset), slurp(paths.dataset));
}

TEST_F(PipelineRun, CommandsNeedTheirInputs) {
    RunConfig empty = *config_;
    empty.out_dir = scratch("empty").string();
    EXPECT_THROW(cmd_train(empty), ValidationError);
    EXPECT_THROW(cmd_verify(empty), ValidationError);
    EXPECT_THROW(cmd_restore(empty), ValidationError);
}

TEST_F(PipelineRun, OnlyTheCrownVariantGetsTheWorstCaseHook) {
    const Network net(config_->case_path);
    const auto data = data::read_dataset(Paths(*config_).dataset);
    const nn::MlpModel m = initial_model(*config_, net, data);
    EXPECT_EQ(m.config_hash, config_hash(*config_));

    const nn::TrainConfig base = train_config(*config_, net, m);
    EXPECT_FALSE(base.worst_case);
    EXPECT_EQ(base.weights.wc, 0.0);

    RunConfig crown = *config_;
    crown.variant = Variant::Crown;
    const nn::TrainConfig tc = train_config(crown, net, m);
    EXPECT_TRUE(tc.worst_case);
    EXPECT_DOUBLE_EQ(tc.weights.wc, crown.weights.wc);

    crown.weights.wc = 0.0;
    EXPECT_FALSE(train_config(crown, net, m).worst_case);
}

TEST_F(PipelineRun, ResumeReproducesUninterruptedTraining) {
    RunConfig full = *config_;
    full.out_dir = scratch("full").string();
    fs::copy_file(Paths(*config_).dataset, Paths(full).dataset);
    EXPECT_EQ(cmd_train(full).epochs_done, full.epochs);

    RunConfig c = *config_;
    c.out_dir = scratch("resume").string();
    const Paths paths(c);
    fs::copy_file(Paths(*config_).dataset, paths.dataset);
    const Network net(c.case_path);
    const auto data = data::read_dataset(paths.dataset);
    struct Interrupted {};
    const nn::MlpModel m = initial_model(c, net, data);
    EXPECT_THROW(nn::train(m, net.ctx, data, train_config(c, net, m),
                           [&](const nn::TrainState& s) {
                               nn::save_checkpoint(paths.checkpoint, s);
                               if (s.epochs_done == 2) throw Interrupted{};
                           }),
                 Interrupted);
    EXPECT_EQ(nn::load_checkpoint(paths.checkpoint).epochs_done, 2u);

    EXPECT_EQ(cmd_train(c, true).epochs_done, c.epochs);
    for (const std::string& file : {Paths(c).model, Paths(c).checkpoint, Paths(c).history}) {
        const std::string name = fs::path(file).filename().string();
        EXPECT_EQ(slurp(file), slurp((fs::path(full.out_dir) / name).string())) << name;
    }

    RunConfig other = c;
    other.seed = 3;
    EXPECT_THROW(cmd_train(other, true), ValidationError);
}

TEST_F(PipelineRun, RestoreCountsRowsAndChecksFeasibility) {
    RunConfig c = *config_;
    c.out_dir = scratch("restore").string();
    fs::copy_file(Paths(*config_).dataset, Paths(c).dataset);
    cmd_train(c);
    const RestoreResult r = cmd_restore(c);
    EXPECT_EQ(r.warm.rows.size(), c.restore_scenarios);
    EXPECT_EQ(r.restoration.size(), c.restore_scenarios);
    EXPECT_LE(r.feasible, r.restored);
    std::size_t ok = 0;
    for (const RestoreRow& row : r.restoration) {
        if (!row.ok) continue;
        ++ok;
        EXPECT_GE(row.distance, 0.0);
    }
    EXPECT_EQ(ok, r.restored);

    const nlohmann::json doc = nlohmann::json::parse(slurp(Paths(c).restore_json));
    EXPECT_EQ(doc.at("config_hash"), config_hash(c));
    EXPECT_EQ(doc.at("restoration").at("feasible"), r.feasible);
    EXPECT_EQ(slurp(Paths(c).restore_csv).rfind("# config_hash=" + config_hash(c), 0), 0u);

    RunConfig power = c;
    power.head = nn::Head::Power;
    cmd_train(power);
    EXPECT_THROW(cmd_restore(power), HeadMismatch);
}

TEST_F(PipelineRun, RerunIsByteIdenticalAndReportSkipsStaleResults) {
    std::vector<std::string> runs;
    for (const char* name : {"twin_a", "twin_b"}) {
        RunConfig c = *config_;
        c.out_dir = scratch(name).string();
        cmd_gen_data(c);
        cmd_train(c);
        cmd_verify(c);
        runs.push_back(c.out_dir);
    }
    for (const char* file : {"dataset.csv", "model_voltage_base.json", "checkpoint_voltage_base.json",
                             "history_voltage_base.csv", "sweep_voltage_base.csv"})
        EXPECT_EQ(slurp(runs[0] + "/" + file), slurp(runs[1] + "/" + file)) << file;
    // Wall-clock timing is the only section allowed to differ.
    auto certified = [](const std::string& dir) {
        nlohmann::json doc = nlohmann::json::parse(slurp(dir + "/verify_voltage_base.json"));
        EXPECT_TRUE(doc.contains("timing"));
        doc.erase("timing");
        return doc.dump();
    };
    EXPECT_EQ(certified(runs[0]), certified(runs[1]));

    RunConfig c = *config_;
    c.out_dir = runs[0];
    nlohmann::json report = cmd_report(c);
    const auto& entry = report.at("heads").at("voltage").at("base");
    EXPECT_TRUE(entry.contains("verified"));
    EXPECT_TRUE(entry.contains("statistical"));

    c.epochs = 3;
    cmd_train(c);
    report = cmd_report(c);
    const auto& retrained = report.at("heads").at("voltage").at("base");
    EXPECT_FALSE(retrained.contains("verified"));
    EXPECT_EQ(retrained.at("stale").size(), 1u);
    EXPECT_FALSE(report_text(report).empty());
}

}  // namespace
}  // namespace opfcert::pipeline
